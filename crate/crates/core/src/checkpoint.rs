//! Versioned binary checkpoints.
//!
//! ```text
//! "AWEC"  u16 version  u8 precision (4 or 8)
//! config:     u8 cell, u8 head, u32 S, F, D, H, fc_dim, output_dim, f64 dropout_recurrent, dropout_fc
//! training:   u32 epoch, f64 dev_ap
//! vocabulary: u32 count, then u16 length + UTF-8 per label
//! normalizer: u8 present; if 1: u32 dim, dim f64 means, dim f64 stds
//! params:     u64 value count, values little-endian in `tensors()` order
//! u64 FNV-1a checksum of every preceding byte
//! ```

use std::path::Path;

use crate::dataset::{verify_checksum, FeatureNormalizer, Reader};
use crate::error::{AweError, Result};
use crate::network::{Head, NetworkConfig, NetworkParams};
use crate::numeric::{Precision, Real};
use crate::random::fnv1a;
use crate::rnn::CellKind;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"AWEC";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<F> {
    pub config: NetworkConfig,
    pub params: NetworkParams<F>,
    pub epoch: u32,
    pub dev_ap: f64,
    /// Training labels in class-index order. Empty for linear heads.
    pub vocabulary: Vec<String>,
    pub normalizer: Option<FeatureNormalizer>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| AweError::InvalidInput(format!("{v} does not fit in a checkpoint field")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    let len = u16::try_from(s.len()).map_err(|_| AweError::InvalidInput(format!("label '{s}' too long")))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

impl<F: Real> Checkpoint<F> {
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        self.params.check_against(&self.config)?;
        if self.config.head == Head::LogSoftmax && self.vocabulary.len() != self.config.output_dim {
            return Err(AweError::InvalidConfig(format!(
                "log-softmax head has {} outputs but the vocabulary has {} labels",
                self.config.output_dim,
                self.vocabulary.len()
            )));
        }
        if let Some(n) = &self.normalizer {
            crate::error::check_dim("normalizer dimension", self.config.input_dim, n.dim())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let c = &self.config;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.push(F::PRECISION.byte_width() as u8);
        out.push(match c.cell_kind {
            CellKind::Lstm => 0,
            CellKind::Gru => 1,
        });
        out.push(match c.head {
            Head::LogSoftmax => 0,
            Head::Linear => 1,
        });
        for v in [c.stacked_layers, c.fc_layers, c.input_dim, c.hidden_dim, c.fc_dim, c.output_dim] {
            put_u32(&mut out, v)?;
        }
        out.extend_from_slice(&c.dropout_recurrent.to_le_bytes());
        out.extend_from_slice(&c.dropout_fc.to_le_bytes());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.dev_ap.to_le_bytes());
        put_u32(&mut out, self.vocabulary.len())?;
        for label in &self.vocabulary {
            put_str(&mut out, label)?;
        }
        match &self.normalizer {
            None => out.push(0),
            Some(n) => {
                out.push(1);
                put_u32(&mut out, n.dim())?;
                for v in n.mean.iter().chain(&n.std) {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out.extend_from_slice(&(self.params.parameter_count() as u64).to_le_bytes());
        for t in self.params.tensors() {
            for &v in t {
                v.write_le(&mut out);
            }
        }
        let sum = fnv1a(&out);
        out.extend_from_slice(&sum.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4, "magic").ok() != Some(CHECKPOINT_MAGIC.as_slice()) {
            return Err(AweError::format(0, "bad magic, not a checkpoint"));
        }
        let version = r.u16("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(AweError::format(4, format!("unsupported checkpoint version {version}")));
        }
        let body = verify_checksum(bytes)?;
        let mut r = Reader::new(body);
        r.take(6, "header")?;
        let width = r.u8("precision")? as usize;
        if width != F::PRECISION.byte_width() {
            let found = if width == 4 { Precision::Single } else { Precision::Double };
            return Err(AweError::format(
                6,
                format!("checkpoint stores {found:?} precision, expected {:?}", F::PRECISION),
            ));
        }
        let cell_kind = match r.u8("cell kind")? {
            0 => CellKind::Lstm,
            1 => CellKind::Gru,
            k => return Err(AweError::format(7, format!("unknown cell kind tag {k}"))),
        };
        let head = match r.u8("head")? {
            0 => Head::LogSoftmax,
            1 => Head::Linear,
            k => return Err(AweError::format(8, format!("unknown head tag {k}"))),
        };
        let mut dims = [0usize; 6];
        for d in &mut dims {
            *d = r.u32("config")? as usize;
        }
        let config = NetworkConfig {
            cell_kind,
            stacked_layers: dims[0],
            fc_layers: dims[1],
            input_dim: dims[2],
            hidden_dim: dims[3],
            fc_dim: dims[4],
            output_dim: dims[5],
            head,
            dropout_recurrent: r.f64("config")?,
            dropout_fc: r.f64("config")?,
        };
        let at = r.offset();
        config.validate().map_err(|e| AweError::format(at, format!("invalid stored config: {e}")))?;
        let epoch = r.u32("epoch")?;
        let dev_ap = r.f64("dev AP")?;
        let n_vocab = r.u32("vocabulary size")? as usize;
        let mut vocabulary = Vec::with_capacity(n_vocab.min(1 << 16));
        for _ in 0..n_vocab {
            vocabulary.push(r.string("vocabulary label")?);
        }
        let normalizer = match r.u8("normalizer flag")? {
            0 => None,
            1 => {
                let d = r.u32("normalizer dimension")? as usize;
                let mut vals = Vec::with_capacity(2 * d);
                for _ in 0..2 * d {
                    vals.push(r.f64("normalizer")?);
                }
                let std = vals.split_off(d);
                Some(FeatureNormalizer { mean: vals, std })
            }
            k => return Err(AweError::format(r.offset() - 1, format!("bad normalizer flag {k}"))),
        };
        let count = r.u64("parameter count")? as usize;
        let mut params = NetworkParams::<F>::zeros(&config);
        if count != params.parameter_count() {
            return Err(AweError::format(
                r.offset() - 8,
                format!("payload holds {count} values but config implies {}", params.parameter_count()),
            ));
        }
        let w = F::PRECISION.byte_width();
        let start = r.offset();
        let raw = r.take(count * w, "parameters")?;
        let mut chunks = raw.chunks_exact(w);
        for t in params.tensors_mut() {
            for v in t.iter_mut() {
                *v = F::read_le(chunks.next().expect("length checked"));
            }
        }
        if let Some(i) = params.flatten().iter().position(|v| !v.is_finite()) {
            return Err(AweError::format(start + (i * w) as u64, "non-finite parameter value"));
        }
        if r.offset() != body.len() as u64 {
            return Err(AweError::format(r.offset(), "trailing bytes after parameters"));
        }
        let ckpt = Checkpoint {
            config,
            params,
            epoch,
            dev_ap,
            vocabulary,
            normalizer,
        };
        ckpt.validate()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| AweError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| AweError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Reads only the precision tag, so callers can pick the matching type.
pub fn peek_precision(bytes: &[u8]) -> Result<Precision> {
    if bytes.len() < 7 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(AweError::format(0, "bad magic, not a checkpoint"));
    }
    match bytes[6] {
        4 => Ok(Precision::Single),
        8 => Ok(Precision::Double),
        k => Err(AweError::format(6, format!("unknown precision tag {k}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::init_params;
    use crate::random::RandomSource;

    fn sample(head: Head) -> Checkpoint<f32> {
        let mut config = NetworkConfig::new(CellKind::Gru, 2, 2, 3, 4, head);
        config.hidden_dim = 6;
        config.fc_dim = 5;
        let params = init_params(&config, &mut RandomSource::new(11)).unwrap();
        Checkpoint {
            config,
            params,
            epoch: 7,
            dev_ap: 0.4321,
            vocabulary: if head == Head::LogSoftmax { vec!["a".into(), "bé".into(), "c".into(), "d".into()] } else { vec![] },
            normalizer: Some(FeatureNormalizer {
                mean: vec![0.1, -0.2, 0.3],
                std: vec![1.5, 0.5, 2.0],
            }),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for head in [Head::LogSoftmax, Head::Linear] {
            let c = sample(head);
            let bytes = c.to_bytes().unwrap();
            let back = Checkpoint::<f32>::from_bytes(&bytes).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.to_bytes().unwrap(), bytes);
        }
    }

    #[test]
    fn truncation_and_corruption_rejected() {
        let bytes = sample(Head::LogSoftmax).to_bytes().unwrap();
        for cut in [bytes.len() - 1, bytes.len() / 2, 10] {
            assert!(matches!(Checkpoint::<f32>::from_bytes(&bytes[..cut]), Err(AweError::Format { .. })));
        }
        let mut flipped = bytes.clone();
        let n = flipped.len();
        flipped[n - 20] ^= 1;
        match Checkpoint::<f32>::from_bytes(&flipped) {
            Err(AweError::Format { message, .. }) => assert!(message.contains("checksum")),
            other => panic!("{other:?}"),
        }
        let mut version = bytes;
        version[4] = 2;
        assert!(matches!(Checkpoint::<f32>::from_bytes(&version), Err(AweError::Format { offset: 4, .. })));
    }

    #[test]
    fn precision_mismatch_rejected() {
        let bytes = sample(Head::Linear).to_bytes().unwrap();
        assert_eq!(peek_precision(&bytes).unwrap(), Precision::Single);
        assert!(Checkpoint::<f64>::from_bytes(&bytes).is_err());
    }

    #[test]
    fn vocabulary_must_match_log_softmax_head() {
        let mut c = sample(Head::LogSoftmax);
        c.vocabulary.pop();
        assert!(matches!(c.to_bytes(), Err(AweError::InvalidConfig(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let c = sample(Head::LogSoftmax);
        c.save(&path).unwrap();
        assert_eq!(Checkpoint::<f32>::load(&path).unwrap(), c);
    }
}
