//! Word classification training with cross-entropy, Nesterov SGD, the
//! loss-plateau learning-rate rule and dev-AP model selection.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::dataset::{Corpus, FeatureNormalizer};
use crate::error::{AweError, Result};
use crate::eval::{embed_segments, frames_as, same_different_ap};
use crate::network::{backward, forward, init_params, EmbeddingOutput, Head, NetworkConfig, NetworkParams};
use crate::numeric::{Mat2, Real, Vec1};
use crate::optim::{nesterov_update, OptimizerState, PlateauSchedule};
use crate::random::RandomSource;
use crate::rnn::Mode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierTrainConfig {
    pub lr_init: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub plateau_window: usize,
    pub plateau_factor: f64,
    /// Consecutive plateau epochs that trigger a learning-rate drop.
    pub plateau_count: usize,
    /// Epochs allowed after a drop for dev AP to improve before stopping.
    pub plateau_patience: usize,
    pub lr_decay: f64,
    pub max_epochs: usize,
    pub seed: u64,
    pub normalize_features: bool,
    pub embedding_output: EmbeddingOutput,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        ClassifierTrainConfig {
            lr_init: 0.1,
            momentum: 0.9,
            batch_size: 32,
            plateau_window: 3,
            plateau_factor: 0.99,
            plateau_count: 3,
            plateau_patience: 3,
            lr_decay: 10.0,
            max_epochs: 30,
            seed: 1,
            normalize_features: true,
            embedding_output: EmbeddingOutput::HeadOutput,
        }
    }
}

impl ClassifierTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(AweError::InvalidConfig(m.into()));
        if !(self.lr_init > 0.0 && self.lr_init.is_finite()) {
            return bad("lr_init must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch_size and max_epochs must be at least 1");
        }
        if self.plateau_count == 0 || self.plateau_patience == 0 {
            return bad("plateau_count and plateau_patience must be at least 1");
        }
        if !(self.lr_decay > 1.0) {
            return bad("lr_decay must exceed 1");
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_batch_loss: f64,
    pub dev_ap: f64,
    pub lr: f64,
    pub plateau_flag: bool,
}

impl EpochLog {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("plain struct serializes")
    }
}

/// `-log_probs[label]` and its gradient with respect to the logits,
/// `softmax - one_hot(label)`.
pub fn cross_entropy_loss<F: Real>(log_probs: &Vec1<F>, label: usize) -> Result<(F, Vec1<F>)> {
    let lp = log_probs.as_slice();
    if label >= lp.len() {
        return Err(AweError::InvalidInput(format!(
            "label index {label} out of range for {} classes",
            lp.len()
        )));
    }
    let mut grad: Vec<F> = lp.iter().map(|v| v.exp()).collect();
    grad[label] -= F::one();
    Ok((-lp[label], Vec1::from_vec_unchecked(grad)))
}

/// Mean cross-entropy over `batch` and its gradient, accumulated into
/// `grads` (which is cleared first).
pub fn classifier_batch_gradient<F: Real>(
    params: &NetworkParams<F>,
    config: &NetworkConfig,
    batch: &[(&Mat2<F>, usize)],
    mode: Mode,
    rng: &mut RandomSource,
    grads: &mut NetworkParams<F>,
) -> Result<F> {
    grads.fill_zero();
    let mut total = F::zero();
    for &(frames, label) in batch {
        let pass = forward(params, config, frames, mode, rng)?;
        let (loss, d_logits) = cross_entropy_loss(&Vec1::from_vec_unchecked(pass.output.clone()), label)?;
        backward(params, &pass, d_logits.as_slice(), grads)?;
        total += loss;
    }
    let scale = F::one() / F::lit(batch.len() as f64);
    for t in grads.tensors_mut() {
        for v in t {
            *v *= scale;
        }
    }
    Ok(total * scale)
}

/// Keeps the candidate with the highest score; ties keep the earliest.
#[derive(Debug, Clone)]
pub struct BestEpoch<T> {
    pub best: Option<(usize, f64, T)>,
}

impl<T> Default for BestEpoch<T> {
    fn default() -> Self {
        BestEpoch { best: None }
    }
}

impl<T> BestEpoch<T> {
    /// Returns whether `score` improved on the best so far.
    pub fn offer(&mut self, epoch: usize, score: f64, make: impl FnOnce() -> T) -> bool {
        let better = self.best.as_ref().is_none_or(|b| score > b.1);
        if better {
            self.best = Some((epoch, score, make()));
        }
        better
    }

    pub fn score(&self) -> f64 {
        self.best.as_ref().map_or(f64::NEG_INFINITY, |b| b.1)
    }
}

/// Result of a training run: the selected checkpoint and the epoch log.
#[derive(Debug, Clone)]
pub struct TrainOutcome<F, L> {
    pub checkpoint: Checkpoint<F>,
    pub log: Vec<L>,
}

pub(crate) fn dev_ap<F: Real>(
    params: &NetworkParams<F>,
    config: &NetworkConfig,
    dev: &Corpus,
    which: EmbeddingOutput,
) -> Result<f64> {
    let e = embed_segments(params, config, dev.segments(), which)?;
    Ok(same_different_ap(&e, &dev.labels())?.ap)
}

pub(crate) fn prepare<F: Real>(corpus: &Corpus) -> Vec<Mat2<F>> {
    corpus.segments().iter().map(|s| frames_as::<F>(&s.frames)).collect()
}

/// Trains a log-softmax classifier over the labels of `train`.
///
/// `network` supplies the architecture; its input dimension, output
/// dimension and head are set from the corpus. Returns the checkpoint of
/// the epoch with the best dev AP.
pub fn train_classifier<F: Real>(
    train: &Corpus,
    dev: &Corpus,
    network: &NetworkConfig,
    cfg: &ClassifierTrainConfig,
) -> Result<TrainOutcome<F, EpochLog>> {
    cfg.validate()?;
    let input_dim = train
        .feature_dim()
        .ok_or_else(|| AweError::InvalidConfig("training corpus is empty".into()))?;
    let vocabulary: Vec<String> = train.vocabulary().keys().cloned().collect();
    if vocabulary.len() < 2 {
        return Err(AweError::InvalidConfig(format!(
            "classifier needs at least two word types, found {}",
            vocabulary.len()
        )));
    }
    let config = NetworkConfig {
        input_dim,
        output_dim: vocabulary.len(),
        head: Head::LogSoftmax,
        ..network.clone()
    };
    config.validate()?;
    let normalizer = if cfg.normalize_features { Some(FeatureNormalizer::fit(train)?) } else { None };
    let (train, dev) = match &normalizer {
        Some(n) => (n.apply(train)?, n.apply(dev)?),
        None => (train.clone(), dev.clone()),
    };
    let frames = prepare::<F>(&train);
    let labels: Vec<usize> = train
        .segments()
        .iter()
        .map(|s| vocabulary.binary_search(&s.label).expect("label in vocabulary"))
        .collect();

    let root = RandomSource::new(cfg.seed);
    let mut params: NetworkParams<F> = init_params(&config, &mut root.split("init"))?;
    let mut opt = OptimizerState::new(&params, cfg.lr_init);
    let mut grads = params.zeros_like();
    let mut schedule = PlateauSchedule::new(
        cfg.lr_init,
        cfg.plateau_window,
        cfg.plateau_factor,
        cfg.plateau_count,
        cfg.lr_decay,
    );
    let mut history = Vec::new();
    let mut log = Vec::new();
    let mut best = BestEpoch::default();
    let mut watch: Option<(f64, usize)> = None;
    let mut order: Vec<usize> = (0..frames.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        let lr = schedule.lr;
        order.shuffle(&mut root.split_indexed("shuffle", epoch as u64));
        let mut dropout = root.split_indexed("dropout", epoch as u64);
        let mut batch_losses = Vec::new();
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(&Mat2<F>, usize)> = chunk.iter().map(|&i| (&frames[i], labels[i])).collect();
            let loss = classifier_batch_gradient(&params, &config, &batch, Mode::Train, &mut dropout, &mut grads)?;
            if !loss.is_finite() {
                return Err(AweError::NonFinite(format!("batch loss diverged in epoch {epoch}")));
            }
            nesterov_update(&mut params, &mut opt, &grads, lr, cfg.momentum)?;
            batch_losses.push(loss.as_f64());
        }
        let mean_loss = batch_losses.iter().sum::<f64>() / batch_losses.len() as f64;
        let ap = dev_ap(&params, &config, &dev, cfg.embedding_output)?;
        history.push(mean_loss);
        let step = schedule.step(&history);
        log::info!("classifier epoch {epoch}: loss {mean_loss:.5} dev AP {ap:.4} lr {lr}");
        log.push(EpochLog {
            epoch,
            mean_batch_loss: mean_loss,
            dev_ap: ap,
            lr,
            plateau_flag: step.plateau,
        });
        best.offer(epoch, ap, || params.clone());

        if let Some((reference, waited)) = watch.as_mut() {
            if ap > *reference {
                watch = None;
            } else {
                *waited += 1;
                if *waited >= cfg.plateau_patience {
                    log::info!("no dev AP improvement within {waited} epochs of a learning-rate drop, stopping");
                    break;
                }
            }
        }
        if step.dropped {
            watch = Some((best.score(), 0));
        }
    }

    let (epoch, ap, params) = best.best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            config,
            params,
            epoch: epoch as u32,
            dev_ap: ap,
            vocabulary,
            normalizer,
        },
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synthesize_corpus, SynthConfig};
    use crate::gradcheck::grad_check;
    use crate::rnn::CellKind;

    #[test]
    fn cross_entropy_values() {
        let uniform: Vec1<f64> = Vec1::from_f64(&[-(4.0f64.ln()); 4]).unwrap();
        assert!((cross_entropy_loss(&uniform, 2).unwrap().0 - 4.0f64.ln()).abs() < 1e-15);
        let certain: Vec1<f64> = Vec1::from_f64(&[0.0, -800.0]).unwrap();
        assert_eq!(cross_entropy_loss(&certain, 0).unwrap().0, 0.0);
        assert!(cross_entropy_loss(&uniform, 4).is_err());
    }

    fn ce_of_logits(z: &[f64], label: usize) -> f64 {
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        lse - z[label]
    }

    #[test]
    fn cross_entropy_three_class_gradient() {
        let logits = [1.0, 0.0, 0.0];
        let lp = crate::numeric::log_softmax(&Vec1::<f64>::from_f64(&logits).unwrap());
        let (loss, grad) = cross_entropy_loss(&lp, 0).unwrap();
        assert!((loss - ((2.0 + 1f64.exp()).ln() - 1.0)).abs() < 1e-12);
        assert!((loss - 0.5514).abs() < 1e-4);
        let r = grad_check(|z| ce_of_logits(z, 0), &logits, grad.as_slice(), 1e-4).unwrap();
        assert!(r.max_rel_error <= 1e-6, "{r:?}");

        let lp = crate::numeric::log_softmax(&Vec1::<f64>::from_f64(&[1.0, 1.0, 0.0]).unwrap());
        assert!((cross_entropy_loss(&lp, 0).unwrap().0 - 0.8620).abs() < 1e-4);
    }

    fn tiny_corpus(types: usize, per: usize, seed: u64) -> (Corpus, Corpus) {
        synthesize_corpus(&SynthConfig {
            num_word_types: types,
            examples_per_type: per,
            feature_dim: 4,
            prototype_anchors: 4,
            length_min: 8,
            length_max: 14,
            dev_word_types: types.min(4),
            dev_unseen_fraction: 0.0,
            dev_examples_per_type: 3,
            seed,
            ..SynthConfig::default()
        })
        .unwrap()
    }

    fn tiny_net() -> NetworkConfig {
        NetworkConfig {
            hidden_dim: 16,
            fc_dim: 16,
            dropout_fc: 0.0,
            dropout_recurrent: 0.0,
            ..NetworkConfig::new(CellKind::Lstm, 1, 2, 0, 0, Head::LogSoftmax)
        }
    }

    #[test]
    fn batch_gradient_matches_finite_differences() {
        let (train, _) = tiny_corpus(3, 2, 5);
        let mut cfg = tiny_net();
        cfg.hidden_dim = 4;
        cfg.fc_dim = 5;
        cfg.input_dim = 4;
        cfg.output_dim = 3;
        cfg.stacked_layers = 2;
        let p: NetworkParams<f64> = init_params(&cfg, &mut RandomSource::new(1)).unwrap();
        let frames: Vec<Mat2<f64>> = train.segments()[..3].iter().map(|s| {
            let t = s.len().min(5);
            Mat2::new(t, 4, s.frames.as_slice()[..t * 4].iter().map(|&v| v as f64).collect()).unwrap()
        }).collect();
        let batch: Vec<(&Mat2<f64>, usize)> = frames.iter().zip([0, 1, 2]).collect();
        let mut g = p.zeros_like();
        classifier_batch_gradient(&p, &cfg, &batch, Mode::Eval, &mut RandomSource::new(0), &mut g).unwrap();
        let mut scratch = p.clone();
        let mut sink = p.zeros_like();
        let loss = |t: &[f64]| {
            scratch.assign_flat(t).unwrap();
            classifier_batch_gradient(&scratch, &cfg, &batch, Mode::Eval, &mut RandomSource::new(0), &mut sink).unwrap()
        };
        let r = crate::gradcheck::grad_check_with_floor(loss, &p.flatten(), &g.flatten(), 1e-5, 1e-6).unwrap();
        assert!(r.max_rel_error <= 1e-4, "{r:?}");
    }

    #[test]
    fn single_batch_epoch_equals_plain_step() {
        let (train, dev) = tiny_corpus(3, 3, 2);
        let net = tiny_net();
        let cfg = ClassifierTrainConfig {
            momentum: 0.0,
            batch_size: 1000,
            max_epochs: 1,
            normalize_features: false,
            ..ClassifierTrainConfig::default()
        };
        let out = train_classifier::<f64>(&train, &dev, &net, &cfg).unwrap();

        let config = out.checkpoint.config.clone();
        let root = RandomSource::new(cfg.seed);
        let mut p: NetworkParams<f64> = init_params(&config, &mut root.split("init")).unwrap();
        let frames = prepare::<f64>(&train);
        let vocab: Vec<&String> = train.vocabulary().keys().collect();
        let batch: Vec<(&Mat2<f64>, usize)> = frames
            .iter()
            .zip(train.segments())
            .map(|(f, s)| (f, vocab.iter().position(|l| **l == s.label).unwrap()))
            .collect();
        let mut g = p.zeros_like();
        classifier_batch_gradient(&p, &config, &batch, Mode::Eval, &mut RandomSource::new(0), &mut g).unwrap();
        p.add_scaled(-cfg.lr_init, &g);
        let a = p.flatten();
        let b = out.checkpoint.params.flatten();
        let worst = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        // the batch order differs from the shuffled one, so sums differ in rounding only
        assert!(worst < 1e-12, "{worst}");
    }

    #[test]
    fn toy_separable_corpus_is_learned() {
        let (train, dev) = tiny_corpus(5, 6, 11);
        let cfg = ClassifierTrainConfig {
            batch_size: 8,
            max_epochs: 50,
            lr_init: 0.1,
            ..ClassifierTrainConfig::default()
        };
        let out = train_classifier::<f32>(&train, &dev, &tiny_net(), &cfg).unwrap();
        let min_loss = out.log.iter().map(|l| l.mean_batch_loss).fold(f64::INFINITY, f64::min);
        assert!(min_loss < 0.1, "min loss {min_loss}");
        let lrs: Vec<f64> = out.log.iter().map(|l| l.lr).collect();
        for w in lrs.windows(2) {
            assert!(w[1] == w[0] || (w[1] - w[0] / 10.0).abs() < 1e-12 * w[0]);
        }
        let best = out.log.iter().map(|l| l.dev_ap).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(out.checkpoint.dev_ap, best);
        let first = out.log.iter().find(|l| l.dev_ap == best).unwrap();
        assert_eq!(out.checkpoint.epoch as usize, first.epoch);
    }

    #[test]
    fn training_is_deterministic() {
        let (train, dev) = tiny_corpus(3, 4, 3);
        let cfg = ClassifierTrainConfig {
            max_epochs: 3,
            batch_size: 4,
            ..ClassifierTrainConfig::default()
        };
        let net = NetworkConfig { dropout_fc: 0.5, dropout_recurrent: 0.3, stacked_layers: 2, ..tiny_net() };
        let a = train_classifier::<f32>(&train, &dev, &net, &cfg).unwrap();
        let b = train_classifier::<f32>(&train, &dev, &net, &cfg).unwrap();
        assert_eq!(a.checkpoint.to_bytes().unwrap(), b.checkpoint.to_bytes().unwrap());
        let la: Vec<String> = a.log.iter().map(EpochLog::to_json_line).collect();
        let lb: Vec<String> = b.log.iter().map(EpochLog::to_json_line).collect();
        assert_eq!(la, lb);
    }

    #[test]
    fn best_epoch_selection() {
        let mut best = BestEpoch::default();
        for (epoch, ap) in [(1, 0.3), (2, 0.5), (3, 0.4), (4, 0.5)] {
            best.offer(epoch, ap, || epoch);
        }
        assert_eq!(best.best.map(|b| (b.0, b.2)), Some((2, 2)));
    }

    #[test]
    fn degenerate_corpora_rejected() {
        let (train, dev) = tiny_corpus(3, 2, 1);
        let one = crate::dataset::Corpus::new(
            train.segments().iter().filter(|s| s.label == train.segments()[0].label).cloned().collect(),
            crate::dataset::Split::Train,
        )
        .unwrap();
        let cfg = ClassifierTrainConfig::default();
        assert!(matches!(train_classifier::<f32>(&one, &dev, &tiny_net(), &cfg), Err(AweError::InvalidConfig(_))));
        let empty = crate::dataset::Corpus::new(vec![], crate::dataset::Split::Train).unwrap();
        assert!(matches!(train_classifier::<f32>(&empty, &dev, &tiny_net(), &cfg), Err(AweError::InvalidConfig(_))));
    }
}
