//! Siamese training with the cos-hinge triplet loss: warm start from a
//! classifier, mirrored minibatches and similarity-driven negative sampling.

use std::collections::HashMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::classifier::{dev_ap, prepare, BestEpoch, TrainOutcome};
use crate::dataset::{enumerate_same_pairs, Corpus, FeatureNormalizer};
use crate::error::{check_dim, AweError, Result};
use crate::network::{
    backward, forward, fresh_fc_layer, init_params, EmbeddingOutput, Head, NetworkConfig, NetworkParams,
};
use crate::numeric::{dot, Mat2, Real, Vec1};
use crate::optim::{nesterov_update, OptimizerState};
use crate::random::RandomSource;
use crate::rnn::Mode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampling {
    Uniform,
    Nonuniform,
}

impl std::str::FromStr for Sampling {
    type Err = AweError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Sampling::Uniform),
            "nonuniform" => Ok(Sampling::Nonuniform),
            other => Err(AweError::InvalidConfig(format!("unknown sampling mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiameseTrainConfig {
    pub margin: f64,
    pub m_star: f64,
    /// Same-word pairs per minibatch; each batch holds twice as many triplets.
    pub pairs_per_batch: usize,
    pub embed_dim: usize,
    pub lr_init: f64,
    pub momentum: f64,
    pub lr_drop_epochs: usize,
    pub lr_decay: f64,
    pub max_epochs: usize,
    pub sampling: Sampling,
    pub seed: u64,
    /// Used only for cold starts; warm starts reuse the checkpoint's normalizer.
    pub normalize_features: bool,
}

impl Default for SiameseTrainConfig {
    fn default() -> Self {
        SiameseTrainConfig {
            margin: 0.4,
            m_star: 0.6,
            pairs_per_batch: 32,
            embed_dim: 1024,
            lr_init: 0.001,
            momentum: 0.9,
            lr_drop_epochs: 3,
            lr_decay: 10.0,
            max_epochs: 15,
            sampling: Sampling::Nonuniform,
            seed: 1,
            normalize_features: true,
        }
    }
}

impl SiameseTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(AweError::InvalidConfig(m.into()));
        if !(self.margin > 0.0 && self.margin < 2.0) {
            return bad("margin must lie in (0, 2)");
        }
        if !(self.m_star >= self.margin) {
            return bad("m_star must be at least the margin");
        }
        if self.pairs_per_batch == 0 || self.embed_dim == 0 || self.max_epochs == 0 || self.lr_drop_epochs == 0 {
            return bad("pairs_per_batch, embed_dim, max_epochs and lr_drop_epochs must be positive");
        }
        if !(self.lr_init > 0.0 && self.lr_init.is_finite()) {
            return bad("lr_init must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.lr_decay > 1.0) {
            return bad("lr_decay must exceed 1");
        }
        Ok(())
    }
}

/// Segment indices of an anchor, a same-word segment and a different-word segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub anchor: usize,
    pub same: usize,
    pub diff: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiameseEpochLog {
    pub epoch: usize,
    pub mean_batch_loss: f64,
    pub dev_ap: f64,
    pub lr: f64,
    pub lr_dropped: bool,
    pub zero_loss_fraction: f64,
    pub s_row_entropy_mean: f64,
    pub s_row_entropy_min: f64,
}

impl SiameseEpochLog {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("plain struct serializes")
    }
}

struct CosParts<F> {
    cos: F,
    /// d cos / d x
    dx: Vec<F>,
    /// d cos / d y
    dy: Vec<F>,
}

fn cos_parts<F: Real>(x: &[F], y: &[F]) -> Result<CosParts<F>> {
    check_dim("cosine operand", x.len(), y.len())?;
    let nx = dot(x, x).sqrt();
    let ny = dot(y, y).sqrt();
    if !(nx > F::zero()) || !(ny > F::zero()) {
        return Err(AweError::DegenerateVector("zero-norm embedding in cos-hinge loss".into()));
    }
    let cos = dot(x, y) / (nx * ny);
    let inv = F::one() / (nx * ny);
    let dx = x.iter().zip(y).map(|(&a, &b)| b * inv - cos * a / (nx * nx)).collect();
    let dy = x.iter().zip(y).map(|(&a, &b)| a * inv - cos * b / (ny * ny)).collect();
    Ok(CosParts { cos, dx, dy })
}

/// Cos-hinge loss and its gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct HingeResult<F> {
    pub loss: F,
    pub d_as: F,
    pub d_ad: F,
    pub grad_anchor: Vec1<F>,
    pub grad_same: Vec1<F>,
    pub grad_diff: Vec1<F>,
}

/// `max(0, m + d_cos(a, s) - d_cos(a, d))` with exact gradients; all
/// gradients are zero when the hinge is inactive, including at the kink.
pub fn cos_hinge_loss<F: Real>(e_a: &Vec1<F>, e_s: &Vec1<F>, e_d: &Vec1<F>, margin: F) -> Result<HingeResult<F>> {
    let (a, s, d) = (e_a.as_slice(), e_s.as_slice(), e_d.as_slice());
    let as_ = cos_parts(a, s)?;
    let ad = cos_parts(a, d)?;
    let one = F::one();
    let clamp = |c: F| c.max(-one).min(one);
    let d_as = one - clamp(as_.cos);
    let d_ad = one - clamp(ad.cos);
    let raw = margin + d_as - d_ad;
    let dim = a.len();
    if raw <= F::zero() {
        return Ok(HingeResult {
            loss: F::zero(),
            d_as,
            d_ad,
            grad_anchor: Vec1::zeros(dim),
            grad_same: Vec1::zeros(dim),
            grad_diff: Vec1::zeros(dim),
        });
    }
    // loss = m - cos(a, s) + cos(a, d)
    let grad_anchor = (0..dim).map(|k| ad.dx[k] - as_.dx[k]).collect();
    let grad_same = as_.dy.iter().map(|&v| -v).collect();
    Ok(HingeResult {
        loss: raw,
        d_as,
        d_ad,
        grad_anchor: Vec1::from_vec_unchecked(grad_anchor),
        grad_same: Vec1::from_vec_unchecked(grad_same),
        grad_diff: Vec1::from_vec_unchecked(ad.dy),
    })
}

/// Label bookkeeping for negative sampling.
#[derive(Debug, Clone)]
pub struct CorpusIndex {
    pub labels: Vec<String>,
    /// Label index of each segment.
    pub segment_label: Vec<usize>,
    /// Segments of each label, ascending.
    pub by_label: Vec<Vec<usize>>,
}

impl CorpusIndex {
    pub fn new(corpus: &Corpus) -> Self {
        let labels: Vec<String> = corpus.vocabulary().keys().cloned().collect();
        let pos: HashMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
        let segment_label: Vec<usize> = corpus.segments().iter().map(|s| pos[s.label.as_str()]).collect();
        let mut by_label = vec![Vec::new(); labels.len()];
        for (i, &l) in segment_label.iter().enumerate() {
            by_label[l].push(i);
        }
        CorpusIndex {
            labels,
            segment_label,
            by_label,
        }
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn label_of(&self, segment: usize) -> usize {
        self.segment_label[segment]
    }
}

/// The `n x n` label similarity accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    s: Vec<f64>,
}

impl SimilarityMatrix {
    /// Zero diagonal, one elsewhere.
    pub fn new(n: usize) -> Self {
        let mut m = SimilarityMatrix { n, s: vec![0.0; n * n] };
        m.reset();
        m
    }

    pub fn reset(&mut self) {
        for i in 0..self.n {
            for j in 0..self.n {
                self.s[i * self.n + j] = if i == j { 0.0 } else { 1.0 };
            }
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut s = Vec::with_capacity(n * n);
        for (i, r) in rows.iter().enumerate() {
            check_dim("similarity row", n, r.len())?;
            if r[i] != 0.0 || r.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                return Err(AweError::InvalidInput(format!(
                    "similarity row {i} must be non-negative with a zero diagonal"
                )));
            }
            s.extend_from_slice(r);
        }
        Ok(SimilarityMatrix { n, s })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.s[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.s[i * self.n..(i + 1) * self.n]
    }

    /// Row `i` normalized to a probability mass function, or `None` if it
    /// sums to zero.
    pub fn row_pmf(&self, i: usize) -> Option<Vec<f64>> {
        let row = self.row(i);
        let total: f64 = row.iter().sum();
        (total > 0.0).then(|| row.iter().map(|v| v / total).collect())
    }

    /// Shannon entropy (nats) of each row's PMF; zero rows report 0.
    pub fn row_entropies(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                self.row_pmf(i)
                    .map_or(0.0, |p| -p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>())
            })
            .collect()
    }
}

/// Applies one triplet's update: if `d_ad <= d_as + m_star`, both
/// `S[i][j]` and `S[j][i]` grow by `max(0, 1 - d_ad)`.
pub fn update_similarity_matrix(
    sim: &mut SimilarityMatrix,
    anchor_label: usize,
    diff_label: usize,
    d_as: f64,
    d_ad: f64,
    m_star: f64,
) {
    if anchor_label == diff_label || d_ad > d_as + m_star {
        return;
    }
    let inc = (1.0 - d_ad).max(0.0);
    let n = sim.n;
    sim.s[anchor_label * n + diff_label] += inc;
    sim.s[diff_label * n + anchor_label] += inc;
}

fn sample_uniform_other(anchor_label: usize, index: &CorpusIndex, rng: &mut RandomSource) -> Result<usize> {
    let total = index.segment_label.len() - index.by_label[anchor_label].len();
    if total == 0 {
        return Err(AweError::InvalidConfig("negative sampling needs at least two labels".into()));
    }
    let mut k = rng.random_range(0..total);
    for (l, segs) in index.by_label.iter().enumerate() {
        if l == anchor_label {
            continue;
        }
        if k < segs.len() {
            return Ok(segs[k]);
        }
        k -= segs.len();
    }
    unreachable!("index within other-label population")
}

/// Draws a segment whose label differs from `anchor_label`.
///
/// Without a matrix the draw is uniform over all other-label segments.
/// With one, a label is drawn from the normalized matrix row and then a
/// segment uniformly within it.
pub fn sample_negative(
    anchor_label: usize,
    index: &CorpusIndex,
    sim: Option<&SimilarityMatrix>,
    rng: &mut RandomSource,
) -> Result<usize> {
    if index.num_labels() < 2 {
        return Err(AweError::InvalidConfig("negative sampling needs at least two labels".into()));
    }
    let Some(sim) = sim else {
        return sample_uniform_other(anchor_label, index, rng);
    };
    check_dim("similarity matrix size", index.num_labels(), sim.size())?;
    let row = sim.row(anchor_label);
    let mut weights: Vec<f64> = row.to_vec();
    weights[anchor_label] = 0.0;
    for (l, w) in weights.iter_mut().enumerate() {
        if index.by_label[l].is_empty() {
            *w = 0.0;
        }
    }
    match WeightedIndex::new(&weights) {
        Ok(dist) => {
            let label = dist.sample(rng);
            let segs = &index.by_label[label];
            Ok(segs[rng.random_range(0..segs.len())])
        }
        Err(_) => {
            log::warn!(
                "similarity row for label '{}' sums to zero, sampling uniformly",
                index.labels[anchor_label]
            );
            sample_uniform_other(anchor_label, index, rng)
        }
    }
}

/// Emits `(a, s, d)` and its mirror `(s, a, d)` for every pair, sharing one
/// sampled negative per pair.
pub fn build_minibatch(
    pairs: &[(usize, usize)],
    index: &CorpusIndex,
    sim: Option<&SimilarityMatrix>,
    rng: &mut RandomSource,
) -> Result<Vec<Triplet>> {
    let mut out = Vec::with_capacity(2 * pairs.len());
    for &(a, s) in pairs {
        let d = sample_negative(index.label_of(a), index, sim, rng)?;
        out.push(Triplet { anchor: a, same: s, diff: d });
        out.push(Triplet { anchor: s, same: a, diff: d });
    }
    Ok(out)
}

/// Per-triplet distances from a batch, kept for the similarity update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripletStats {
    pub loss: f64,
    pub d_as: f64,
    pub d_ad: f64,
}

/// Mean cos-hinge loss over `triplets` and its gradient in `grads`
/// (cleared first). Each distinct segment runs forward and backward once
/// and collects the gradient from every triplet that uses it.
///
/// A triplet touching a zero-norm embedding contributes nothing and gets
/// `None` in the returned statistics.
#[allow(clippy::too_many_arguments)]
pub fn siamese_batch_gradient<F: Real>(
    params: &NetworkParams<F>,
    config: &NetworkConfig,
    frames: &[Mat2<F>],
    triplets: &[Triplet],
    margin: f64,
    mode: Mode,
    rng: &mut RandomSource,
    grads: &mut NetworkParams<F>,
) -> Result<(F, Vec<Option<TripletStats>>)> {
    grads.fill_zero();
    let mut slot: HashMap<usize, usize> = HashMap::new();
    let mut order = Vec::new();
    for t in triplets {
        for i in [t.anchor, t.same, t.diff] {
            slot.entry(i).or_insert_with(|| {
                order.push(i);
                order.len() - 1
            });
        }
    }
    let passes = order
        .iter()
        .map(|&i| forward(params, config, &frames[i], mode, rng))
        .collect::<Result<Vec<_>>>()?;
    let outputs: Vec<Vec1<F>> = passes.iter().map(|p| Vec1::from_vec_unchecked(p.output.clone())).collect();
    let mut d_out: Vec<Vec<F>> = outputs.iter().map(|o| vec![F::zero(); o.dim()]).collect();
    let scale = F::one() / F::lit(triplets.len() as f64);
    let mut total = F::zero();
    let mut stats = Vec::with_capacity(triplets.len());
    for t in triplets {
        let (a, s, d) = (slot[&t.anchor], slot[&t.same], slot[&t.diff]);
        let h = match cos_hinge_loss(&outputs[a], &outputs[s], &outputs[d], F::lit(margin)) {
            Ok(h) => h,
            Err(AweError::DegenerateVector(_)) => {
                log::debug!("skipping triplet {t:?} with a zero-norm embedding");
                stats.push(None);
                continue;
            }
            Err(e) => return Err(e),
        };
        total += h.loss;
        stats.push(Some(TripletStats {
            loss: h.loss.as_f64(),
            d_as: h.d_as.as_f64(),
            d_ad: h.d_ad.as_f64(),
        }));
        for (k, g) in [(a, &h.grad_anchor), (s, &h.grad_same), (d, &h.grad_diff)] {
            for (acc, &v) in d_out[k].iter_mut().zip(g.as_slice()) {
                *acc += v * scale;
            }
        }
    }
    for (pass, d) in passes.iter().zip(&d_out) {
        if d.iter().any(|&v| v != F::zero()) {
            backward(params, pass, d, grads)?;
        }
    }
    Ok((total * scale, stats))
}

/// Converts a classifier into a Siamese starting point: the recurrent
/// stack and all but the last fully connected layer are kept, and the last
/// layer is replaced by a fresh linear map to `embed_dim`.
pub fn warm_start<F: Real>(
    ckpt: &Checkpoint<F>,
    embed_dim: usize,
    rng: &mut RandomSource,
) -> Result<(NetworkConfig, NetworkParams<F>)> {
    ckpt.validate()?;
    let config = NetworkConfig {
        output_dim: embed_dim,
        head: Head::Linear,
        ..ckpt.config.clone()
    };
    config.validate()?;
    let mut params = ckpt.params.clone();
    let last = params.fc.last_mut().expect("at least one fully connected layer");
    *last = fresh_fc_layer(last.w.cols(), embed_dim, rng);
    params.check_against(&config)?;
    Ok((config, params))
}

/// Initial network for [`train_siamese`].
#[derive(Debug, Clone)]
pub enum SiameseInit<'a, F> {
    /// Trunk taken from a trained classifier.
    Warm(&'a Checkpoint<F>),
    /// Random trunk with the given architecture (input and output widths
    /// and head are overridden).
    Cold(NetworkConfig),
}

/// Trains with the cos-hinge loss over every same-word pair of `train`.
/// Returns the checkpoint of the best dev-AP epoch.
pub fn train_siamese<F: Real>(
    train: &Corpus,
    dev: &Corpus,
    init: SiameseInit<'_, F>,
    cfg: &SiameseTrainConfig,
) -> Result<TrainOutcome<F, SiameseEpochLog>> {
    cfg.validate()?;
    let input_dim = train
        .feature_dim()
        .ok_or_else(|| AweError::InvalidConfig("training corpus is empty".into()))?;
    let root = RandomSource::new(cfg.seed);
    let (config, mut params, normalizer) = match init {
        SiameseInit::Warm(ckpt) => {
            if ckpt.config.input_dim != input_dim {
                return Err(AweError::InvalidConfig(format!(
                    "warm-start checkpoint expects {} input features, corpus has {input_dim}",
                    ckpt.config.input_dim
                )));
            }
            let (c, p) = warm_start(ckpt, cfg.embed_dim, &mut root.split("head"))?;
            (c, p, ckpt.normalizer.clone())
        }
        SiameseInit::Cold(net) => {
            let c = NetworkConfig {
                input_dim,
                output_dim: cfg.embed_dim,
                head: Head::Linear,
                ..net
            };
            let p = init_params(&c, &mut root.split("init"))?;
            let n = if cfg.normalize_features { Some(FeatureNormalizer::fit(train)?) } else { None };
            (c, p, n)
        }
    };
    let (train, dev) = match &normalizer {
        Some(n) => (n.apply(train)?, n.apply(dev)?),
        None => (train.clone(), dev.clone()),
    };
    let index = CorpusIndex::new(&train);
    if index.num_labels() < 2 {
        return Err(AweError::InvalidConfig("Siamese training needs at least two word types".into()));
    }
    let mut pairs = enumerate_same_pairs(&train);
    if pairs.is_empty() {
        return Err(AweError::InvalidConfig("training corpus has no same-word pairs".into()));
    }
    let frames = prepare::<F>(&train);
    let mut opt = OptimizerState::new(&params, cfg.lr_init);
    let mut grads = params.zeros_like();
    let mut sim = SimilarityMatrix::new(index.num_labels());
    let mut lr = cfg.lr_init;
    let mut best = BestEpoch::default();
    let mut window_start_best = f64::NEG_INFINITY;
    let mut dropped_last_window = false;
    let mut log = Vec::new();

    for epoch in 1..=cfg.max_epochs {
        sim.reset();
        pairs.shuffle(&mut root.split_indexed("pairs", epoch as u64));
        let mut neg_rng = root.split_indexed("negatives", epoch as u64);
        let mut dropout = root.split_indexed("dropout", epoch as u64);
        let mut batch_losses = Vec::new();
        let (mut zero, mut count) = (0usize, 0usize);
        for chunk in pairs.chunks(cfg.pairs_per_batch) {
            let sampler = (cfg.sampling == Sampling::Nonuniform).then_some(&sim);
            let triplets = build_minibatch(chunk, &index, sampler, &mut neg_rng)?;
            let (loss, stats) =
                siamese_batch_gradient(&params, &config, &frames, &triplets, cfg.margin, Mode::Train, &mut dropout, &mut grads)?;
            if !loss.is_finite() {
                return Err(AweError::NonFinite(format!("batch loss diverged in epoch {epoch}")));
            }
            nesterov_update(&mut params, &mut opt, &grads, lr, cfg.momentum)?;
            for (t, s) in triplets.iter().zip(&stats) {
                let Some(s) = s else { continue };
                update_similarity_matrix(
                    &mut sim,
                    index.label_of(t.anchor),
                    index.label_of(t.diff),
                    s.d_as,
                    s.d_ad,
                    cfg.m_star,
                );
                zero += usize::from(s.loss == 0.0);
            }
            count += stats.len();
            batch_losses.push(loss.as_f64());
        }
        let mean_loss = batch_losses.iter().sum::<f64>() / batch_losses.len() as f64;
        let ap = dev_ap(&params, &config, &dev, EmbeddingOutput::HeadOutput)?;
        best.offer(epoch, ap, || params.clone());
        let entropies = sim.row_entropies();
        let epoch_lr = lr;
        let mut lr_dropped = false;
        let mut stop = false;
        if epoch % cfg.lr_drop_epochs == 0 {
            if best.score() > window_start_best {
                dropped_last_window = false;
            } else if dropped_last_window {
                stop = true;
            } else {
                lr /= cfg.lr_decay;
                lr_dropped = true;
                dropped_last_window = true;
            }
            window_start_best = best.score();
        }
        log::info!("siamese epoch {epoch}: loss {mean_loss:.5} dev AP {ap:.4} lr {epoch_lr}");
        log.push(SiameseEpochLog {
            epoch,
            mean_batch_loss: mean_loss,
            dev_ap: ap,
            lr: epoch_lr,
            lr_dropped,
            zero_loss_fraction: zero as f64 / count as f64,
            s_row_entropy_mean: entropies.iter().sum::<f64>() / entropies.len() as f64,
            s_row_entropy_min: entropies.iter().cloned().fold(f64::INFINITY, f64::min),
        });
        if stop {
            log::info!("no dev AP improvement after a learning-rate drop, stopping");
            break;
        }
    }

    let (epoch, ap, params) = best.best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            config,
            params,
            epoch: epoch as u32,
            dev_ap: ap,
            vocabulary: Vec::new(),
            normalizer,
        },
        log,
    })
}
