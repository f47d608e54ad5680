//! Word-segment corpora: the binary archive format, vocabulary filtering,
//! same-word pair enumeration, feature normalization and a synthetic
//! corpus generator.
//!
//! Archive layout (all integers little-endian):
//!
//! ```text
//! "AWE1"  u16 version  u32 segment_count
//! per segment: u16 label_len, label (UTF-8), u32 T, u32 D, T*D f32 row-major
//! u64 FNV-1a checksum of every preceding byte
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{AweError, Result};
use crate::numeric::Mat2;
use crate::random::{fnv1a, RandomSource};

pub const ARCHIVE_MAGIC: &[u8; 4] = b"AWE1";
pub const ARCHIVE_VERSION: u16 = 1;

/// One spoken word: its label and a `T x D` feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub label: String,
    pub frames: Mat2<f32>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl std::str::FromStr for Split {
    type Err = AweError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(AweError::InvalidConfig(format!("unknown split '{other}'"))),
        }
    }
}

/// A list of segments plus the label counts derived from them.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    segments: Vec<Segment>,
    split: Split,
    vocabulary: BTreeMap<String, usize>,
}

impl Corpus {
    pub fn new(segments: Vec<Segment>, split: Split) -> Result<Self> {
        if let Some(first) = segments.first() {
            let d = first.dim();
            if let Some(i) = segments.iter().position(|s| s.dim() != d) {
                return Err(AweError::InvalidInput(format!(
                    "segment {i} has feature dimension {} but the corpus uses {d}",
                    segments[i].dim()
                )));
            }
        }
        let mut vocabulary = BTreeMap::new();
        for s in &segments {
            *vocabulary.entry(s.label.clone()).or_insert(0) += 1;
        }
        Ok(Corpus {
            segments,
            split,
            vocabulary,
        })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn split(&self) -> Split {
        self.split
    }

    /// Label -> occurrence count, sorted by label.
    pub fn vocabulary(&self) -> &BTreeMap<String, usize> {
        &self.vocabulary
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Feature dimension, if the corpus is non-empty.
    pub fn feature_dim(&self) -> Option<usize> {
        self.segments.first().map(Segment::dim)
    }

    pub fn labels(&self) -> Vec<&str> {
        self.segments.iter().map(|s| s.label.as_str()).collect()
    }

    pub fn count(&self, label: &str) -> usize {
        self.vocabulary.get(label).copied().unwrap_or(0)
    }
}

pub fn encode_archive(corpus: &Corpus) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(ARCHIVE_MAGIC);
    out.extend_from_slice(&ARCHIVE_VERSION.to_le_bytes());
    let count = u32::try_from(corpus.len())
        .map_err(|_| AweError::InvalidInput("too many segments for archive".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for s in corpus.segments() {
        let label = s.label.as_bytes();
        let len = u16::try_from(label.len())
            .map_err(|_| AweError::InvalidInput(format!("label '{}' too long", s.label)))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(label);
        out.extend_from_slice(&(s.len() as u32).to_le_bytes());
        out.extend_from_slice(&(s.dim() as u32).to_le_bytes());
        for v in s.frames.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let sum = fnv1a(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    Ok(out)
}

/// Little-endian cursor that reports byte offsets in its errors.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    pub(crate) fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(AweError::format(
                self.pos as u64,
                format!("truncated while reading {what}"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub(crate) fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub(crate) fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u16(what)? as usize;
        let at = self.offset();
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| AweError::format(at, format!("{what} is not valid UTF-8")))
    }
}

/// Splits `bytes` into body and trailing checksum and verifies it.
pub(crate) fn verify_checksum(bytes: &[u8]) -> Result<&[u8]> {
    if bytes.len() < 8 {
        return Err(AweError::format(0, "file too short for checksum"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().unwrap());
    if stored != fnv1a(body) {
        return Err(AweError::format(
            body.len() as u64,
            "checksum mismatch (file truncated or corrupted)",
        ));
    }
    Ok(body)
}

pub fn decode_archive(bytes: &[u8], split: Split) -> Result<Corpus> {
    let mut r = Reader::new(bytes);
    if r.take(4, "magic").ok() != Some(ARCHIVE_MAGIC.as_slice()) {
        return Err(AweError::format(0, "bad magic, not a segment archive"));
    }
    let version = r.u16("version")?;
    if version != ARCHIVE_VERSION {
        return Err(AweError::format(4, format!("unsupported archive version {version}")));
    }
    let body = verify_checksum(bytes)?;
    let mut r = Reader::new(body);
    r.take(6, "header")?;
    let count = r.u32("segment count")? as usize;
    let mut segments = Vec::with_capacity(count.min(1 << 20));
    for i in 0..count {
        let label = r.string("label")?;
        let t = r.u32("frame count")? as usize;
        let d = r.u32("feature dimension")? as usize;
        if t == 0 || d == 0 {
            return Err(AweError::format(
                r.offset(),
                format!("segment {i} has empty shape {t}x{d}"),
            ));
        }
        let start = r.offset();
        let raw = r.take(t * d * 4, "frames")?;
        let mut values = Vec::with_capacity(t * d);
        for (k, c) in raw.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(c.try_into().unwrap());
            if !v.is_finite() {
                return Err(AweError::format(
                    start + 4 * k as u64,
                    format!("segment {i} contains a non-finite feature value"),
                ));
            }
            values.push(v);
        }
        segments.push(Segment {
            label,
            frames: Mat2::new(t, d, values)?,
        });
    }
    if r.offset() != body.len() as u64 {
        return Err(AweError::format(r.offset(), "trailing bytes after last segment"));
    }
    Corpus::new(segments, split)
}

pub fn read_archive(path: impl AsRef<Path>, split: Split) -> Result<Corpus> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| AweError::io(path, e))?;
    decode_archive(&bytes, split)
}

pub fn write_archive(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_archive(corpus)?).map_err(|e| AweError::io(path, e))
}

/// Keeps the segments whose label occurs at least `min_count` times.
pub fn filter_min_count(corpus: &Corpus, min_count: usize) -> Result<Corpus> {
    if min_count == 0 {
        return Err(AweError::InvalidConfig("min_count must be at least 1".into()));
    }
    let kept: Vec<Segment> = corpus
        .segments()
        .iter()
        .filter(|s| corpus.count(&s.label) >= min_count)
        .cloned()
        .collect();
    if kept.is_empty() {
        return Err(AweError::InvalidConfig(format!(
            "no word type has at least {min_count} occurrences ({} segments, {} types)",
            corpus.len(),
            corpus.vocabulary().len()
        )));
    }
    Corpus::new(kept, corpus.split())
}

/// Every unordered pair `(i, j)`, `i < j`, of segments sharing a label.
pub fn enumerate_same_pairs(corpus: &Corpus) -> Vec<(usize, usize)> {
    let mut by_label: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in corpus.segments().iter().enumerate() {
        by_label.entry(&s.label).or_default().push(i);
    }
    let mut pairs = Vec::new();
    for idx in by_label.values() {
        for a in 0..idx.len() {
            for b in a + 1..idx.len() {
                pairs.push((idx[a], idx[b]));
            }
        }
    }
    pairs.sort_unstable();
    pairs
}

/// Per-dimension mean and standard deviation, fitted on training frames.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureNormalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureNormalizer {
    pub fn fit(corpus: &Corpus) -> Result<Self> {
        let d = corpus
            .feature_dim()
            .ok_or_else(|| AweError::InvalidInput("cannot fit normalizer on empty corpus".into()))?;
        let mut sum = vec![0.0f64; d];
        let mut sq = vec![0.0f64; d];
        let mut n = 0usize;
        for s in corpus.segments() {
            for row in s.frames.as_slice().chunks_exact(d) {
                for k in 0..d {
                    let v = row[k] as f64;
                    sum[k] += v;
                    sq[k] += v * v;
                }
                n += 1;
            }
        }
        let nf = n as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let var = (q / nf - m * m).max(0.0);
                if var > 1e-16 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Ok(FeatureNormalizer { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply_segment(&self, s: &Segment) -> Result<Segment> {
        crate::error::check_dim("normalizer dimension", self.dim(), s.dim())?;
        let d = self.dim();
        let values = s
            .frames
            .as_slice()
            .iter()
            .enumerate()
            .map(|(i, &v)| ((v as f64 - self.mean[i % d]) / self.std[i % d]) as f32)
            .collect();
        Ok(Segment {
            label: s.label.clone(),
            frames: Mat2::new(s.len(), d, values)?,
        })
    }

    pub fn apply(&self, corpus: &Corpus) -> Result<Corpus> {
        let segments = corpus
            .segments()
            .iter()
            .map(|s| self.apply_segment(s))
            .collect::<Result<Vec<_>>>()?;
        Corpus::new(segments, corpus.split())
    }
}

/// Parameters of the synthetic corpus generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_word_types: usize,
    pub examples_per_type: usize,
    pub feature_dim: usize,
    pub prototype_anchors: usize,
    pub length_min: usize,
    pub length_max: usize,
    pub noise_sigma: f64,
    pub warp_jitter: f64,
    pub speaker_offset_sigma: f64,
    /// Word types in the dev split, seen and unseen together.
    pub dev_word_types: usize,
    /// Fraction of dev word types that never occur in train.
    pub dev_unseen_fraction: f64,
    pub dev_examples_per_type: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_word_types: 30,
            examples_per_type: 12,
            feature_dim: 13,
            prototype_anchors: 8,
            length_min: 50,
            length_max: 200,
            noise_sigma: 0.3,
            warp_jitter: 0.2,
            speaker_offset_sigma: 0.5,
            dev_word_types: 20,
            dev_unseen_fraction: 0.5,
            dev_examples_per_type: 12,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn dev_unseen_types(&self) -> usize {
        (self.dev_word_types as f64 * self.dev_unseen_fraction).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(AweError::InvalidConfig(m));
        if self.num_word_types == 0 || self.examples_per_type == 0 {
            return bad("synthetic corpus needs at least one type and example".into());
        }
        if self.feature_dim == 0 || self.prototype_anchors == 0 {
            return bad("feature_dim and prototype_anchors must be positive".into());
        }
        if self.length_min == 0 || self.length_min > self.length_max {
            return bad(format!(
                "length range {}..{} must satisfy 1 <= min <= max",
                self.length_min, self.length_max
            ));
        }
        for (name, v) in [
            ("noise_sigma", self.noise_sigma),
            ("speaker_offset_sigma", self.speaker_offset_sigma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a non-negative number"));
            }
        }
        if !(0.0..1.0).contains(&self.warp_jitter) {
            return bad("warp_jitter must lie in [0, 1)".into());
        }
        if !(0.0..=1.0).contains(&self.dev_unseen_fraction) {
            return bad("dev_unseen_fraction must lie in [0, 1]".into());
        }
        if self.dev_word_types - self.dev_unseen_types() > self.num_word_types {
            return bad("more seen dev word types than training word types".into());
        }
        Ok(())
    }
}

/// Positions in `[0, anchors-1]` at which the prototype is sampled for a
/// `frames`-long example. Segment durations between consecutive anchors
/// are scaled by independent factors in `1 ± jitter`, so the warp is
/// monotone and strictly increasing whenever `frames > 1` and `anchors > 1`.
pub fn warp_positions(frames: usize, anchors: usize, jitter: f64, rng: &mut RandomSource) -> Vec<f64> {
    let spans = anchors.saturating_sub(1);
    if spans == 0 {
        return vec![0.0; frames];
    }
    let weights: Vec<f64> = (0..spans)
        .map(|_| 1.0 + jitter * rng.random_range(-1.0..=1.0))
        .collect();
    let total: f64 = weights.iter().sum();
    let mut bounds = Vec::with_capacity(spans + 1);
    bounds.push(0.0);
    let mut acc = 0.0;
    for w in &weights {
        acc += w / total;
        bounds.push(acc);
    }
    bounds[spans] = 1.0;
    (0..frames)
        .map(|t| {
            let tau = if frames == 1 { 0.5 } else { t as f64 / (frames - 1) as f64 };
            let k = bounds[1..].iter().position(|&b| tau <= b).unwrap_or(spans - 1);
            let within = (tau - bounds[k]) / (bounds[k + 1] - bounds[k]);
            k as f64 + within.clamp(0.0, 1.0)
        })
        .collect()
}

struct Prototype {
    anchors: Vec<Vec<f64>>,
}

impl Prototype {
    fn draw(cfg: &SynthConfig, rng: &mut RandomSource) -> Self {
        let anchors = (0..cfg.prototype_anchors)
            .map(|_| (0..cfg.feature_dim).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect())
            .collect();
        Prototype { anchors }
    }

    fn at(&self, u: f64, k: usize) -> f64 {
        let lo = (u.floor() as usize).min(self.anchors.len() - 1);
        let hi = (lo + 1).min(self.anchors.len() - 1);
        let frac = u - lo as f64;
        self.anchors[lo][k] * (1.0 - frac) + self.anchors[hi][k] * frac
    }

    fn example(&self, label: &str, cfg: &SynthConfig, rng: &mut RandomSource) -> Segment {
        let t_len = rng.random_range(cfg.length_min..=cfg.length_max);
        let positions = warp_positions(t_len, cfg.prototype_anchors, cfg.warp_jitter, rng);
        let offset_dist = Normal::new(0.0, cfg.speaker_offset_sigma).expect("validated sigma");
        let noise_dist = Normal::new(0.0, cfg.noise_sigma).expect("validated sigma");
        let offset: Vec<f64> = (0..cfg.feature_dim).map(|_| offset_dist.sample(rng)).collect();
        let mut values = Vec::with_capacity(t_len * cfg.feature_dim);
        for &u in &positions {
            for (k, off) in offset.iter().enumerate() {
                values.push((self.at(u, k) + off + noise_dist.sample(rng)) as f32);
            }
        }
        Segment {
            label: label.to_string(),
            frames: Mat2::new(t_len, cfg.feature_dim, values).expect("finite synthetic frames"),
        }
    }
}

/// Generates `(train, dev)` corpora. Train holds `num_word_types` types;
/// dev mixes a random subset of them with types that never occur in train.
pub fn synthesize_corpus(cfg: &SynthConfig) -> Result<(Corpus, Corpus)> {
    cfg.validate()?;
    let root = RandomSource::new(cfg.seed);
    let unseen = cfg.dev_unseen_types();
    let seen_dev = cfg.dev_word_types - unseen;
    let total_types = cfg.num_word_types + unseen;
    let mut proto_rng = root.split("prototypes");
    let prototypes: Vec<Prototype> = (0..total_types).map(|_| Prototype::draw(cfg, &mut proto_rng)).collect();
    let name = |i: usize| format!("w{i:03}");

    let mut train_rng = root.split("train");
    let mut train = Vec::with_capacity(cfg.num_word_types * cfg.examples_per_type);
    for (i, p) in prototypes.iter().enumerate().take(cfg.num_word_types) {
        for _ in 0..cfg.examples_per_type {
            train.push(p.example(&name(i), cfg, &mut train_rng));
        }
    }

    let mut seen: Vec<usize> = (0..cfg.num_word_types).collect();
    seen.shuffle(&mut root.split("dev-types"));
    let mut dev_types: Vec<usize> = seen[..seen_dev].to_vec();
    dev_types.sort_unstable();
    dev_types.extend(cfg.num_word_types..total_types);
    let mut dev_rng = root.split("dev");
    let mut dev = Vec::with_capacity(dev_types.len() * cfg.dev_examples_per_type);
    for &i in &dev_types {
        for _ in 0..cfg.dev_examples_per_type {
            dev.push(prototypes[i].example(&name(i), cfg, &mut dev_rng));
        }
    }
    Ok((Corpus::new(train, Split::Train)?, Corpus::new(dev, Split::Dev)?))
}
