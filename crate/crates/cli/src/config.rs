//! Flat `key = value` run configuration.
//!
//! Values come from three layers, later ones winning: built-in defaults,
//! the `--config` file, then `--key value` flags on the command line.
//! Every key must appear in [`SCHEMA`].

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use awe::classifier::ClassifierTrainConfig;
use awe::dataset::SynthConfig;
use awe::network::{EmbeddingOutput, Head, NetworkConfig};
use awe::rnn::CellKind;
use awe::siamese::{Sampling, SiameseTrainConfig};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Int,
    Real,
    Bool,
    Text,
    Path,
    /// Comma-separated list of text values.
    List,
}

/// Every accepted key, its type, and a one-line description.
pub const SCHEMA: &[(&str, Kind, &str)] = &[
    ("seed", Kind::Int, "root seed; fills synth/classifier/siamese seeds not given explicitly"),
    ("precision", Kind::Text, "f32 or f64 for training"),
    ("out", Kind::Path, "output directory"),
    ("train", Kind::Path, "train archive"),
    ("dev", Kind::Path, "dev archive"),
    ("segments", Kind::Path, "archive to embed"),
    ("checkpoint", Kind::Path, "checkpoint to read"),
    ("warm_start", Kind::Path, "classifier checkpoint for Siamese warm start"),
    ("embeddings", Kind::Path, "embedding TSV for eval-ap"),
    ("output", Kind::Text, "head_output or logits"),
    ("thresholds", Kind::List, "training-count thresholds for frequency buckets"),
    ("pr_curve", Kind::Bool, "also write the precision-recall curve"),
    ("cell", Kind::Text, "lstm or gru"),
    ("stacked_layers", Kind::Int, "recurrent layers S"),
    ("fc_layers", Kind::Int, "fully connected layers F"),
    ("hidden_dim", Kind::Int, "recurrent hidden width"),
    ("fc_dim", Kind::Int, "fully connected hidden width"),
    ("dropout_recurrent", Kind::Real, "dropout between recurrent layers"),
    ("dropout_fc", Kind::Real, "dropout between fully connected layers"),
    ("classifier.lr_init", Kind::Real, ""),
    ("classifier.momentum", Kind::Real, ""),
    ("classifier.batch_size", Kind::Int, ""),
    ("classifier.plateau_window", Kind::Int, ""),
    ("classifier.plateau_factor", Kind::Real, ""),
    ("classifier.plateau_count", Kind::Int, ""),
    ("classifier.plateau_patience", Kind::Int, ""),
    ("classifier.lr_decay", Kind::Real, ""),
    ("classifier.max_epochs", Kind::Int, ""),
    ("classifier.seed", Kind::Int, ""),
    ("classifier.normalize_features", Kind::Bool, ""),
    ("classifier.output", Kind::Text, "embedding used for dev AP: head_output or logits"),
    ("siamese.margin", Kind::Real, ""),
    ("siamese.m_star", Kind::Real, ""),
    ("siamese.pairs_per_batch", Kind::Int, ""),
    ("siamese.embed_dim", Kind::Int, ""),
    ("siamese.lr_init", Kind::Real, ""),
    ("siamese.momentum", Kind::Real, ""),
    ("siamese.lr_drop_epochs", Kind::Int, ""),
    ("siamese.lr_decay", Kind::Real, ""),
    ("siamese.max_epochs", Kind::Int, ""),
    ("siamese.sampling", Kind::Text, "uniform or nonuniform"),
    ("siamese.seed", Kind::Int, ""),
    ("siamese.normalize_features", Kind::Bool, "cold start only"),
    ("synth.num_word_types", Kind::Int, ""),
    ("synth.examples_per_type", Kind::Int, ""),
    ("synth.feature_dim", Kind::Int, ""),
    ("synth.prototype_anchors", Kind::Int, ""),
    ("synth.length_min", Kind::Int, ""),
    ("synth.length_max", Kind::Int, ""),
    ("synth.noise_sigma", Kind::Real, ""),
    ("synth.warp_jitter", Kind::Real, ""),
    ("synth.speaker_offset_sigma", Kind::Real, ""),
    ("synth.dev_word_types", Kind::Int, ""),
    ("synth.dev_unseen_fraction", Kind::Real, ""),
    ("synth.dev_examples_per_type", Kind::Int, ""),
    ("synth.seed", Kind::Int, ""),
    ("grad_check.step", Kind::Real, "finite-difference step"),
    ("grad_check.tolerance", Kind::Real, "maximum accepted relative error"),
    ("sweep.cell", Kind::List, ""),
    ("sweep.stacked_layers", Kind::List, ""),
    ("sweep.fc_layers", Kind::List, ""),
    ("sweep.embed_dim", Kind::List, "Siamese embedding sizes; empty sweeps the classifier only"),
];

fn kind_of(key: &str) -> Option<Kind> {
    SCHEMA.iter().find(|(k, _, _)| *k == key).map(|&(_, kind, _)| kind)
}

/// Validated key/value settings for one run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

fn config_error(msg: impl Into<String>) -> CliError {
    CliError::config(msg)
}

fn check_value(key: &str, value: &str) -> Result<(), CliError> {
    let kind = kind_of(key).ok_or_else(|| config_error(format!("unknown key `{key}`")))?;
    let ok = match kind {
        Kind::Int => value.parse::<u64>().is_ok(),
        Kind::Real => value.parse::<f64>().map(f64::is_finite).unwrap_or(false),
        Kind::Bool => matches!(value, "true" | "false"),
        Kind::Text | Kind::List => true,
        Kind::Path => !value.is_empty(),
    };
    if ok {
        Ok(())
    } else {
        Err(config_error(format!("key `{key}`: cannot parse `{value}` as {kind:?}")))
    }
}

impl RunConfig {
    /// Parses config file text. Blank lines and `#` comments are ignored;
    /// repeated keys are errors.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| config_error(format!("line {}: expected `key = value`", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            check_value(key, value).map_err(|e| config_error(format!("line {}: {}", n + 1, e.message)))?;
            if cfg.values.insert(key.to_string(), value.to_string()).is_some() {
                return Err(config_error(format!("line {}: key `{key}` repeated", n + 1)));
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Applies `--key value` pairs on top of the current values.
    pub fn apply_flags(&mut self, flags: &[String]) -> Result<(), CliError> {
        let mut it = flags.iter();
        while let Some(flag) = it.next() {
            let key = flag
                .strip_prefix("--")
                .ok_or_else(|| config_error(format!("expected `--key value`, found `{flag}`")))?;
            let (key, value) = match key.split_once('=') {
                Some((k, v)) => (k.to_string(), v.to_string()),
                None => {
                    let value = it.next().ok_or_else(|| config_error(format!("flag `--{key}` needs a value")))?;
                    (key.to_string(), value.clone())
                }
            };
            let key = key.replace('-', "_");
            check_value(&key, &value)?;
            self.values.insert(key, value);
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// Canonical `key = value` lines, sorted by key.
    pub fn canonical(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    fn typed<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        self.get(key)
            .map(|v| v.parse::<T>().map_err(|_| config_error(format!("key `{key}`: invalid value `{v}`"))))
            .transpose()
    }

    fn or<T: FromStr>(&self, key: &str, default: T) -> Result<T, CliError> {
        Ok(self.typed(key)?.unwrap_or(default))
    }

    pub fn path(&self, key: &str) -> Result<PathBuf, CliError> {
        self.get(key)
            .map(PathBuf::from)
            .ok_or_else(|| config_error(format!("missing required key `{key}`")))
    }

    pub fn optional_path(&self, key: &str) -> Option<PathBuf> {
        self.get(key).map(PathBuf::from)
    }

    pub fn flag(&self, key: &str) -> Result<bool, CliError> {
        self.or(key, false)
    }

    pub fn root_seed(&self) -> Result<u64, CliError> {
        self.or("seed", 1)
    }

    fn seed_for(&self, key: &str, fallback: u64) -> Result<u64, CliError> {
        match self.typed(key)? {
            Some(s) => Ok(s),
            None => Ok(self.typed("seed")?.unwrap_or(fallback)),
        }
    }

    pub fn double_precision(&self) -> Result<bool, CliError> {
        match self.get("precision").unwrap_or("f32") {
            "f32" => Ok(false),
            "f64" => Ok(true),
            other => Err(config_error(format!("key `precision`: expected f32 or f64, got `{other}`"))),
        }
    }

    pub fn embedding_output(&self, key: &str) -> Result<EmbeddingOutput, CliError> {
        parse_output(self.get(key).unwrap_or("head_output"), key)
    }

    pub fn list(&self, key: &str) -> Vec<String> {
        self.get(key)
            .map(|v| v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect())
            .unwrap_or_default()
    }

    pub fn thresholds(&self) -> Result<Vec<usize>, CliError> {
        let raw = self.list("thresholds");
        if raw.is_empty() {
            return Ok(awe::eval::DEFAULT_THRESHOLDS.to_vec());
        }
        raw.iter()
            .map(|t| t.parse().map_err(|_| config_error(format!("key `thresholds`: `{t}` is not a count"))))
            .collect()
    }

    /// Network architecture. Input and output widths and the head are
    /// filled in by the trainers.
    pub fn network(&self) -> Result<NetworkConfig, CliError> {
        let cell: CellKind = self.or("cell", CellKind::Lstm)?;
        let mut net = NetworkConfig::new(
            cell,
            self.or("stacked_layers", 2)?,
            self.or("fc_layers", 2)?,
            1,
            1,
            Head::LogSoftmax,
        );
        net.hidden_dim = self.or("hidden_dim", net.hidden_dim)?;
        net.fc_dim = self.or("fc_dim", net.fc_dim)?;
        net.dropout_recurrent = self.or("dropout_recurrent", net.dropout_recurrent)?;
        net.dropout_fc = self.or("dropout_fc", net.dropout_fc)?;
        Ok(net)
    }

    pub fn classifier(&self) -> Result<ClassifierTrainConfig, CliError> {
        let d = ClassifierTrainConfig::default();
        let cfg = ClassifierTrainConfig {
            lr_init: self.or("classifier.lr_init", d.lr_init)?,
            momentum: self.or("classifier.momentum", d.momentum)?,
            batch_size: self.or("classifier.batch_size", d.batch_size)?,
            plateau_window: self.or("classifier.plateau_window", d.plateau_window)?,
            plateau_factor: self.or("classifier.plateau_factor", d.plateau_factor)?,
            plateau_count: self.or("classifier.plateau_count", d.plateau_count)?,
            plateau_patience: self.or("classifier.plateau_patience", d.plateau_patience)?,
            lr_decay: self.or("classifier.lr_decay", d.lr_decay)?,
            max_epochs: self.or("classifier.max_epochs", d.max_epochs)?,
            seed: self.seed_for("classifier.seed", d.seed)?,
            normalize_features: self.or("classifier.normalize_features", d.normalize_features)?,
            embedding_output: self.embedding_output("classifier.output")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn siamese(&self) -> Result<SiameseTrainConfig, CliError> {
        let d = SiameseTrainConfig::default();
        let cfg = SiameseTrainConfig {
            margin: self.or("siamese.margin", d.margin)?,
            m_star: self.or("siamese.m_star", d.m_star)?,
            pairs_per_batch: self.or("siamese.pairs_per_batch", d.pairs_per_batch)?,
            embed_dim: self.or("siamese.embed_dim", d.embed_dim)?,
            lr_init: self.or("siamese.lr_init", d.lr_init)?,
            momentum: self.or("siamese.momentum", d.momentum)?,
            lr_drop_epochs: self.or("siamese.lr_drop_epochs", d.lr_drop_epochs)?,
            lr_decay: self.or("siamese.lr_decay", d.lr_decay)?,
            max_epochs: self.or("siamese.max_epochs", d.max_epochs)?,
            sampling: self.or::<Sampling>("siamese.sampling", d.sampling)?,
            seed: self.seed_for("siamese.seed", d.seed)?,
            normalize_features: self.or("siamese.normalize_features", d.normalize_features)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn synth(&self) -> Result<SynthConfig, CliError> {
        let d = SynthConfig::default();
        let cfg = SynthConfig {
            num_word_types: self.or("synth.num_word_types", d.num_word_types)?,
            examples_per_type: self.or("synth.examples_per_type", d.examples_per_type)?,
            feature_dim: self.or("synth.feature_dim", d.feature_dim)?,
            prototype_anchors: self.or("synth.prototype_anchors", d.prototype_anchors)?,
            length_min: self.or("synth.length_min", d.length_min)?,
            length_max: self.or("synth.length_max", d.length_max)?,
            noise_sigma: self.or("synth.noise_sigma", d.noise_sigma)?,
            warp_jitter: self.or("synth.warp_jitter", d.warp_jitter)?,
            speaker_offset_sigma: self.or("synth.speaker_offset_sigma", d.speaker_offset_sigma)?,
            dev_word_types: self.or("synth.dev_word_types", d.dev_word_types)?,
            dev_unseen_fraction: self.or("synth.dev_unseen_fraction", d.dev_unseen_fraction)?,
            dev_examples_per_type: self.or("synth.dev_examples_per_type", d.dev_examples_per_type)?,
            seed: self.seed_for("synth.seed", d.seed)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn grad_check_step(&self) -> Result<f64, CliError> {
        self.or("grad_check.step", 1e-3)
    }

    pub fn grad_check_tolerance(&self) -> Result<f64, CliError> {
        self.or("grad_check.tolerance", 1e-4)
    }
}

pub fn parse_output(value: &str, key: &str) -> Result<EmbeddingOutput, CliError> {
    match value {
        "head_output" => Ok(EmbeddingOutput::HeadOutput),
        "logits" => Ok(EmbeddingOutput::Logits),
        other => Err(config_error(format!("key `{key}`: expected head_output or logits, got `{other}`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_whitespace() {
        let cfg = RunConfig::parse("# pipeline\nseed = 3\n\n  cell=gru  # recurrent cell\n").unwrap();
        assert_eq!(cfg.get("seed"), Some("3"));
        assert_eq!(cfg.get("cell"), Some("gru"));
        assert_eq!(cfg.network().unwrap().cell_kind, CellKind::Gru);
    }

    #[test]
    fn unknown_and_repeated_keys_are_errors() {
        let e = RunConfig::parse("sead = 3").unwrap_err();
        assert!(e.message.contains("unknown key `sead`"), "{}", e.message);
        assert!(RunConfig::parse("seed = 1\nseed = 2").is_err());
        assert!(RunConfig::parse("seed").is_err());
        let mut cfg = RunConfig::default();
        assert!(cfg.apply_flags(&["--bogus".into(), "1".into()]).is_err());
    }

    #[test]
    fn type_errors_are_reported() {
        assert!(RunConfig::parse("stacked_layers = two").is_err());
        assert!(RunConfig::parse("classifier.lr_init = nan").is_err());
        assert!(RunConfig::parse("pr_curve = yes").is_err());
    }

    #[test]
    fn flags_override_file_values() {
        let mut cfg = RunConfig::parse("seed = 3\nhidden_dim = 64").unwrap();
        cfg.apply_flags(&["--seed".into(), "9".into(), "--fc-dim=32".into()]).unwrap();
        assert_eq!(cfg.root_seed().unwrap(), 9);
        let net = cfg.network().unwrap();
        assert_eq!((net.hidden_dim, net.fc_dim), (64, 32));
    }

    #[test]
    fn root_seed_fills_unset_stream_seeds() {
        let cfg = RunConfig::parse("seed = 11\nsiamese.seed = 4").unwrap();
        assert_eq!(cfg.synth().unwrap().seed, 11);
        assert_eq!(cfg.classifier().unwrap().seed, 11);
        assert_eq!(cfg.siamese().unwrap().seed, 4);
        let d = RunConfig::default();
        assert_eq!(d.synth().unwrap().seed, SynthConfig::default().seed);
    }

    #[test]
    fn trainer_configs_are_validated() {
        assert!(RunConfig::parse("classifier.batch_size = 0").unwrap().classifier().is_err());
        assert!(RunConfig::parse("siamese.sampling = hardest").unwrap().siamese().is_err());
        assert!(RunConfig::parse("synth.length_min = 90\nsynth.length_max = 10").unwrap().synth().is_err());
    }

    #[test]
    fn canonical_form_is_order_independent() {
        let a = RunConfig::parse("seed = 1\ncell = gru").unwrap();
        let b = RunConfig::parse("cell = gru\nseed = 1").unwrap();
        assert_eq!(a.canonical(), b.canonical());
    }

    #[test]
    fn every_schema_key_is_unique() {
        let mut keys: Vec<&str> = SCHEMA.iter().map(|k| k.0).collect();
        keys.sort_unstable();
        keys.dedup();
        assert_eq!(keys.len(), SCHEMA.len());
    }
}
