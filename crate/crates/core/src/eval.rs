//! Same-different word discrimination: all-pairs cosine scoring and
//! average precision, with breakdowns by training-set word frequency.

use std::collections::BTreeMap;
use std::io::Write;

use crate::checkpoint::Checkpoint;
use crate::dataset::Segment;
use crate::error::{check_dim, AweError, Result};
use crate::network::{forward, EmbeddingOutput, NetworkConfig, NetworkParams};
use crate::numeric::{Mat2, Real, Vec1};
use crate::random::RandomSource;
use crate::rnn::Mode;

pub const DEFAULT_THRESHOLDS: [usize; 7] = [0, 1, 3, 5, 7, 10, 15];

/// Average precision over all `C(n, 2)` pairs, with one precision-recall
/// point per positive pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ApResult {
    pub ap: f64,
    pub num_positive: usize,
    pub num_total: usize,
    /// `(precision, recall)` at the rank of each positive, in rank order.
    pub pr_curve: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyBucketReport {
    pub thresholds: Vec<usize>,
    /// `None` when the bucket has no same-word pair.
    pub ap_per_bucket: Vec<Option<f64>>,
    pub segments_per_bucket: Vec<usize>,
}

pub(crate) fn frames_as<F: Real>(frames: &Mat2<f32>) -> Mat2<F> {
    let values = frames.as_slice().iter().map(|&v| F::lit(v as f64)).collect();
    Mat2::new(frames.rows(), frames.cols(), values).expect("shape preserved")
}

/// Eval-mode embeddings of already-normalized segments, in input order.
pub fn embed_segments<F: Real>(
    params: &NetworkParams<F>,
    config: &NetworkConfig,
    segments: &[Segment],
    which: EmbeddingOutput,
) -> Result<Vec<Vec1<F>>> {
    let mut rng = RandomSource::new(0);
    segments
        .iter()
        .map(|s| {
            check_dim("segment feature dimension", config.input_dim, s.dim())?;
            let pass = forward(params, config, &frames_as::<F>(&s.frames), Mode::Eval, &mut rng)?;
            Ok(Vec1::from_vec_unchecked(pass.embedding(which).to_vec()))
        })
        .collect()
}

/// Applies the checkpoint's feature normalizer, then embeds.
pub fn compute_embeddings<F: Real>(
    ckpt: &Checkpoint<F>,
    segments: &[Segment],
    which: EmbeddingOutput,
) -> Result<Vec<Vec1<F>>> {
    match &ckpt.normalizer {
        None => embed_segments(&ckpt.params, &ckpt.config, segments, which),
        Some(n) => {
            let normalized = segments.iter().map(|s| n.apply_segment(s)).collect::<Result<Vec<_>>>()?;
            embed_segments(&ckpt.params, &ckpt.config, &normalized, which)
        }
    }
}

fn unit_rows<F: Real>(embeddings: &[Vec1<F>]) -> Result<Vec<Vec<f64>>> {
    let dim = embeddings.first().map(Vec1::dim).unwrap_or(0);
    embeddings
        .iter()
        .enumerate()
        .map(|(i, e)| {
            check_dim("embedding dimension", dim, e.dim())?;
            let v: Vec<f64> = e.as_slice().iter().map(|x| x.as_f64()).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !(norm > 0.0) || !norm.is_finite() {
                return Err(AweError::DegenerateVector(format!("embedding {i} has norm {norm}")));
            }
            Ok(v.into_iter().map(|x| x / norm).collect())
        })
        .collect()
}

/// Scores every pair `i < j` by cosine similarity, sorts descending with
/// ties kept in lexicographic pair order, and averages the precision at
/// each positive's rank.
pub fn same_different_ap<F: Real, L: AsRef<str>>(embeddings: &[Vec1<F>], labels: &[L]) -> Result<ApResult> {
    check_dim("labels per embedding", embeddings.len(), labels.len())?;
    let units = unit_rows(embeddings)?;
    let n = units.len();
    let mut scored: Vec<(f64, bool)> = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let s: f64 = units[i].iter().zip(&units[j]).map(|(a, b)| a * b).sum();
            scored.push((s.clamp(-1.0, 1.0), labels[i].as_ref() == labels[j].as_ref()));
        }
    }
    let num_positive = scored.iter().filter(|p| p.1).count();
    if num_positive == 0 {
        return Err(AweError::UndefinedAp(format!("no same-word pair among {n} segments")));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut hits = 0usize;
    let mut sum = DoubleDouble::default();
    let mut pr_curve = Vec::with_capacity(num_positive);
    for (rank, &(_, same)) in scored.iter().enumerate() {
        if same {
            hits += 1;
            let precision = hits as f64 / (rank + 1) as f64;
            sum.add_quotient(hits as f64, (rank + 1) as f64);
            pr_curve.push((precision, hits as f64 / num_positive as f64));
        }
    }
    Ok(ApResult {
        ap: sum.div_round(num_positive as f64),
        num_positive,
        num_total: scored.len(),
        pr_curve,
    })
}

/// Running sum kept as an unevaluated pair `hi + lo`, so that the mean of
/// the precision terms comes out correctly rounded.
#[derive(Debug, Default, Clone, Copy)]
struct DoubleDouble {
    hi: f64,
    lo: f64,
}

impl DoubleDouble {
    fn add(&mut self, x: f64) {
        let s = self.hi + x;
        let v = s - self.hi;
        let err = (self.hi - (s - v)) + (x - v);
        let lo = self.lo + err;
        self.hi = s + lo;
        self.lo = lo - (self.hi - s);
    }

    /// Adds `a / b` including the rounding residual of the division.
    fn add_quotient(&mut self, a: f64, b: f64) {
        let q = a / b;
        let residual = (-q).mul_add(b, a) / b;
        self.add(q);
        self.add(residual);
    }

    fn div_round(self, d: f64) -> f64 {
        let q = self.hi / d;
        let rem = (-q).mul_add(d, self.hi);
        q + (rem + self.lo) / d
    }
}

/// AP over the segments selected by `keep`.
pub fn subset_ap<F: Real, L: AsRef<str>>(
    embeddings: &[Vec1<F>],
    labels: &[L],
    keep: impl Fn(usize) -> bool,
) -> Result<ApResult> {
    check_dim("labels per embedding", embeddings.len(), labels.len())?;
    let idx: Vec<usize> = (0..embeddings.len()).filter(|&i| keep(i)).collect();
    let e: Vec<Vec1<F>> = idx.iter().map(|&i| embeddings[i].clone()).collect();
    let l: Vec<&str> = idx.iter().map(|&i| labels[i].as_ref()).collect();
    same_different_ap(&e, &l)
}

/// AP restricted, for each threshold `k`, to dev segments whose word occurs
/// at least `k` times in training.
pub fn ap_by_frequency<F: Real, L: AsRef<str>>(
    embeddings: &[Vec1<F>],
    labels: &[L],
    train_counts: &BTreeMap<String, usize>,
    thresholds: &[usize],
) -> Result<FrequencyBucketReport> {
    check_dim("labels per embedding", embeddings.len(), labels.len())?;
    let counts: Vec<usize> = labels.iter().map(|l| train_counts.get(l.as_ref()).copied().unwrap_or(0)).collect();
    let mut ap_per_bucket = Vec::with_capacity(thresholds.len());
    let mut segments_per_bucket = Vec::with_capacity(thresholds.len());
    for &k in thresholds {
        segments_per_bucket.push(counts.iter().filter(|&&c| c >= k).count());
        match subset_ap(embeddings, labels, |i| counts[i] >= k) {
            Ok(r) => ap_per_bucket.push(Some(r.ap)),
            Err(AweError::UndefinedAp(_)) => ap_per_bucket.push(None),
            Err(e) => return Err(e),
        }
    }
    Ok(FrequencyBucketReport {
        thresholds: thresholds.to_vec(),
        ap_per_bucket,
        segments_per_bucket,
    })
}

/// Two tab-separated columns, `precision` and `recall`.
pub fn write_pr_curve(result: &ApResult, mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "precision\trecall")?;
    for (p, r) in &result.pr_curve {
        writeln!(out, "{p}\t{r}")?;
    }
    Ok(())
}

/// One line per segment: label, then the vector components, tab-separated.
pub fn write_embeddings<F: Real, L: AsRef<str>>(
    embeddings: &[Vec1<F>],
    labels: &[L],
    mut out: impl Write,
) -> std::io::Result<()> {
    for (e, l) in embeddings.iter().zip(labels) {
        write!(out, "{}", l.as_ref())?;
        for v in e.as_slice() {
            write!(out, "\t{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Parses the format written by [`write_embeddings`].
pub fn read_embeddings(text: &str) -> Result<(Vec<String>, Vec<Vec1<f64>>)> {
    let mut labels = Vec::new();
    let mut vectors = Vec::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let mut fields = line.split('\t');
        let label = fields.next().unwrap_or_default().to_string();
        let values = fields
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| AweError::InvalidInput(format!("line {}: bad number '{f}'", n + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        let v = Vec1::new(values).map_err(|e| AweError::InvalidInput(format!("line {}: {e}", n + 1)))?;
        labels.push(label);
        vectors.push(v);
    }
    Ok((labels, vectors))
}
