//! One function per subcommand. Each reads its inputs, stages outputs, and
//! commits them together with a manifest only once everything succeeded.

use std::path::Path;

use awe::checkpoint::{peek_precision, Checkpoint};
use awe::classifier::{classifier_batch_gradient, train_classifier};
use awe::dataset::{decode_archive, encode_archive, synthesize_corpus, Corpus, Split};
use awe::eval::{ap_by_frequency, compute_embeddings, read_embeddings, same_different_ap, write_embeddings, write_pr_curve};
use awe::gradcheck::grad_check;
use awe::network::{clear_relu_kinks, init_params, Head, NetworkConfig, NetworkParams};
use awe::numeric::{Mat2, Precision, Real, Vec1};
use awe::rnn::{CellKind, Mode};
use awe::siamese::{siamese_batch_gradient, train_siamese, SiameseInit, Triplet};
use awe::RandomSource;
use log::{info, warn};
use rand::Rng;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::output::{Manifest, Outputs};

fn finish(cfg: &RunConfig, mut manifest: Manifest, mut outputs: Outputs) -> Result<(), CliError> {
    let dir = cfg.path("out")?;
    manifest.outputs = outputs.names().map(str::to_string).collect();
    outputs.add(format!("{}.manifest.tsv", manifest.command), manifest.render().into_bytes());
    for path in outputs.commit(&dir)? {
        info!("wrote {}", path.display());
    }
    Ok(())
}

fn read_corpus(manifest: &mut Manifest, path: &Path, split: Split) -> Result<Corpus, CliError> {
    let bytes = manifest.read_input(path)?;
    decode_archive(&bytes, split).map_err(|e| CliError::from(e).with_context(path))
}

fn read_checkpoint<F: Real>(bytes: &[u8], path: &Path) -> Result<Checkpoint<F>, CliError> {
    Checkpoint::from_bytes(bytes).map_err(|e| CliError::from(e).with_context(path))
}

fn is_double(bytes: &[u8], path: &Path) -> Result<bool, CliError> {
    match peek_precision(bytes).map_err(|e| CliError::from(e).with_context(path))? {
        Precision::Single => Ok(false),
        Precision::Double => Ok(true),
    }
}

fn json_lines<L>(log: &[L], line: impl Fn(&L) -> String) -> Vec<u8> {
    log.iter().map(|l| line(l) + "\n").collect::<String>().into_bytes()
}

pub fn synth(cfg: &RunConfig) -> Result<(), CliError> {
    let synth = cfg.synth()?;
    let manifest = Manifest::new("synth", cfg)?;
    let (train, dev) = synthesize_corpus(&synth)?;
    println!(
        "train\t{} segments\t{} words\ndev\t{} segments\t{} words",
        train.len(),
        train.vocabulary().len(),
        dev.len(),
        dev.vocabulary().len()
    );
    let mut out = Outputs::default();
    out.add("train.awe", encode_archive(&train)?);
    out.add("dev.awe", encode_archive(&dev)?);
    finish(cfg, manifest, out)
}

fn classifier_run<F: Real>(cfg: &RunConfig, train: &Corpus, dev: &Corpus, net: &NetworkConfig) -> Result<(Checkpoint<F>, Vec<u8>), CliError> {
    let outcome = train_classifier::<F>(train, dev, net, &cfg.classifier()?)?;
    Ok((outcome.checkpoint, json_lines(&outcome.log, |l| l.to_json_line())))
}

pub fn train_classifier_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let mut manifest = Manifest::new("train-classifier", cfg)?;
    let train = read_corpus(&mut manifest, &cfg.path("train")?, Split::Train)?;
    let dev = read_corpus(&mut manifest, &cfg.path("dev")?, Split::Dev)?;
    let net = cfg.network()?;
    let (ckpt_bytes, log, epoch, ap) = if cfg.double_precision()? {
        let (c, log) = classifier_run::<f64>(cfg, &train, &dev, &net)?;
        (c.to_bytes()?, log, c.epoch, c.dev_ap)
    } else {
        let (c, log) = classifier_run::<f32>(cfg, &train, &dev, &net)?;
        (c.to_bytes()?, log, c.epoch, c.dev_ap)
    };
    println!("best_epoch\t{epoch}\ndev_ap\t{ap:.6}");
    let mut out = Outputs::default();
    out.add("classifier.ckpt", ckpt_bytes);
    out.add("classifier.log.jsonl", log);
    finish(cfg, manifest, out)
}

fn siamese_run<F: Real>(
    cfg: &RunConfig,
    train: &Corpus,
    dev: &Corpus,
    warm: Option<(&[u8], &Path)>,
) -> Result<(Vec<u8>, Vec<u8>, u32, f64), CliError> {
    let scfg = cfg.siamese()?;
    let outcome = match warm {
        Some((bytes, path)) => {
            let ckpt = read_checkpoint::<F>(bytes, path)?;
            train_siamese(train, dev, SiameseInit::Warm(&ckpt), &scfg)?
        }
        None => train_siamese::<F>(train, dev, SiameseInit::Cold(cfg.network()?), &scfg)?,
    };
    let c = outcome.checkpoint;
    Ok((c.to_bytes()?, json_lines(&outcome.log, |l| l.to_json_line()), c.epoch, c.dev_ap))
}

pub fn train_siamese_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let mut manifest = Manifest::new("train-siamese", cfg)?;
    let train = read_corpus(&mut manifest, &cfg.path("train")?, Split::Train)?;
    let dev = read_corpus(&mut manifest, &cfg.path("dev")?, Split::Dev)?;
    let warm_path = cfg.optional_path("warm_start");
    let warm_bytes = warm_path.as_deref().map(|p| manifest.read_input(p)).transpose()?;
    let warm = warm_bytes.as_deref().zip(warm_path.as_deref());
    let double = match warm {
        Some((bytes, path)) => {
            let double = is_double(bytes, path)?;
            if cfg.get("precision").is_some() && double != cfg.double_precision()? {
                return Err(CliError::config("`precision` disagrees with the warm-start checkpoint"));
            }
            double
        }
        None => cfg.double_precision()?,
    };
    let (ckpt, log, epoch, ap) = if double {
        siamese_run::<f64>(cfg, &train, &dev, warm)?
    } else {
        siamese_run::<f32>(cfg, &train, &dev, warm)?
    };
    println!("best_epoch\t{epoch}\ndev_ap\t{ap:.6}");
    let mut out = Outputs::default();
    out.add("siamese.ckpt", ckpt);
    out.add("siamese.log.jsonl", log);
    finish(cfg, manifest, out)
}

/// Embeds `segments` with the checkpoint in `bytes`, widening to f64.
fn embed_with(bytes: &[u8], path: &Path, corpus: &Corpus, cfg: &RunConfig, key: &str) -> Result<Vec<Vec1<f64>>, CliError> {
    let which = cfg.embedding_output(key)?;
    fn widen<F: Real>(v: Vec<Vec1<F>>) -> awe::Result<Vec<Vec1<f64>>> {
        v.into_iter().map(|e| Vec1::new(e.as_slice().iter().map(|x| x.as_f64()).collect())).collect()
    }
    if is_double(bytes, path)? {
        Ok(compute_embeddings(&read_checkpoint::<f64>(bytes, path)?, corpus.segments(), which)?)
    } else {
        Ok(widen(compute_embeddings(&read_checkpoint::<f32>(bytes, path)?, corpus.segments(), which)?)?)
    }
}

pub fn embed(cfg: &RunConfig) -> Result<(), CliError> {
    let mut manifest = Manifest::new("embed", cfg)?;
    let ckpt_path = cfg.path("checkpoint")?;
    let bytes = manifest.read_input(&ckpt_path)?;
    let corpus = read_corpus(&mut manifest, &cfg.path("segments")?, Split::Test)?;
    let emb = embed_with(&bytes, &ckpt_path, &corpus, cfg, "output")?;
    let mut tsv = Vec::new();
    write_embeddings(&emb, &corpus.labels(), &mut tsv).map_err(|e| CliError::data(e.to_string()))?;
    println!("embedded\t{}\tdim\t{}", emb.len(), emb.first().map(Vec1::dim).unwrap_or(0));
    let mut out = Outputs::default();
    out.add("embeddings.tsv", tsv);
    finish(cfg, manifest, out)
}

pub fn eval_ap(cfg: &RunConfig) -> Result<(), CliError> {
    let mut manifest = Manifest::new("eval-ap", cfg)?;
    let (labels, emb) = match cfg.optional_path("embeddings") {
        Some(path) => {
            let bytes = manifest.read_input(&path)?;
            let text = String::from_utf8(bytes).map_err(|_| CliError::data(format!("{}: not UTF-8", path.display())))?;
            read_embeddings(&text).map_err(|e| CliError::from(e).with_context(&path))?
        }
        None => {
            let ckpt_path = cfg.path("checkpoint")?;
            let bytes = manifest.read_input(&ckpt_path)?;
            let dev = read_corpus(&mut manifest, &cfg.path("dev")?, Split::Dev)?;
            let emb = embed_with(&bytes, &ckpt_path, &dev, cfg, "output")?;
            (dev.labels().into_iter().map(str::to_string).collect(), emb)
        }
    };
    let result = same_different_ap(&emb, &labels)?;
    println!("ap\t{:.6}", result.ap);
    let mut report = format!(
        "ap\t{}\nnum_positive\t{}\nnum_total\t{}\n",
        result.ap, result.num_positive, result.num_total
    );
    let mut out = Outputs::default();
    if let Some(train_path) = cfg.optional_path("train") {
        let train = read_corpus(&mut manifest, &train_path, Split::Train)?;
        let buckets = ap_by_frequency(&emb, &labels, train.vocabulary(), &cfg.thresholds()?)?;
        let mut table = String::from("min_train_count\tap\tsegments\n");
        for ((k, ap), n) in buckets.thresholds.iter().zip(&buckets.ap_per_bucket).zip(&buckets.segments_per_bucket) {
            let ap = ap.map(|a| a.to_string()).unwrap_or_else(|| "NA".into());
            table.push_str(&format!("{k}\t{ap}\t{n}\n"));
        }
        report.push_str(&table.lines().skip(1).map(|l| format!("bucket\t{l}\n")).collect::<String>());
        out.add("buckets.tsv", table.into_bytes());
    }
    if cfg.flag("pr_curve")? {
        let mut curve = Vec::new();
        write_pr_curve(&result, &mut curve).map_err(|e| CliError::data(e.to_string()))?;
        out.add("pr_curve.tsv", curve);
    }
    out.add("ap.tsv", report.into_bytes());
    finish(cfg, manifest, out)
}

/// Largest relative error of each loss on a small random f64 network.
pub fn grad_check_report(cfg: &RunConfig) -> Result<Vec<(String, f64)>, CliError> {
    let (d, t, classes) = (5, 5, 4);
    let mut net = cfg.network()?;
    net.input_dim = d;
    net.output_dim = classes;
    net.dropout_recurrent = 0.0;
    net.dropout_fc = 0.0;
    if cfg.get("hidden_dim").is_none() {
        net.hidden_dim = 8;
    }
    if cfg.get("fc_dim").is_none() {
        net.fc_dim = 8;
    }
    let step = cfg.grad_check_step()?;
    let root = RandomSource::new(cfg.root_seed()?);
    let mut data_rng = root.split("frames");
    let frames: Vec<Mat2<f64>> = (0..3)
        .map(|i| Mat2::new(t + i, d, (0..(t + i) * d).map(|_| data_rng.random_range(-1.0..1.0)).collect()))
        .collect::<awe::Result<_>>()?;
    let mut rows = Vec::new();
    for head in [Head::LogSoftmax, Head::Linear] {
        let cfg_h = NetworkConfig { head, ..net.clone() };
        let mut p: NetworkParams<f64> = init_params(&cfg_h, &mut root.split("init"))?;
        clear_relu_kinks(&mut p, &cfg_h, &frames, 10.0 * step)?;
        let batch: Vec<(&Mat2<f64>, usize)> = frames.iter().enumerate().map(|(i, f)| (f, i % classes)).collect();
        let triplets = [Triplet { anchor: 0, same: 1, diff: 2 }, Triplet { anchor: 1, same: 0, diff: 2 }];
        let mut rng = RandomSource::new(0);
        let mut loss = |q: &NetworkParams<f64>, g: &mut NetworkParams<f64>| -> awe::Result<f64> {
            match head {
                Head::LogSoftmax => classifier_batch_gradient(q, &cfg_h, &batch, Mode::Eval, &mut rng, g),
                Head::Linear => siamese_batch_gradient(q, &cfg_h, &frames, &triplets, 0.4, Mode::Eval, &mut rng, g).map(|r| r.0),
            }
        };
        let mut grads = p.zeros_like();
        loss(&p, &mut grads)?;
        let mut scratch = p.clone();
        let mut sink = p.zeros_like();
        let report = grad_check(
            |theta| {
                scratch.assign_flat(theta).expect("parameter vector length is fixed");
                loss(&scratch, &mut sink).unwrap_or(f64::NAN)
            },
            &p.flatten(),
            &grads.flatten(),
            step,
        )?;
        let loss_name = if head == Head::LogSoftmax { "cross_entropy" } else { "cos_hinge" };
        rows.push((format!("{}\tS={}\tF={}\t{loss_name}", net.cell_kind.name(), net.stacked_layers, net.fc_layers), report.max_rel_error));
    }
    Ok(rows)
}

pub fn grad_check_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let tolerance = cfg.grad_check_tolerance()?;
    let rows = grad_check_report(cfg)?;
    let mut worst = 0.0f64;
    for (name, err) in &rows {
        println!("{name}\t{err:.3e}");
        worst = worst.max(*err);
    }
    if worst > tolerance {
        return Err(CliError::numeric(format!("max relative error {worst:.3e} exceeds tolerance {tolerance:.1e}")));
    }
    Ok(())
}

pub fn inspect(cfg: &RunConfig) -> Result<(), CliError> {
    let mut any = false;
    if let Some(path) = cfg.optional_path("checkpoint") {
        any = true;
        let bytes = std::fs::read(&path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        if is_double(&bytes, &path)? {
            print_checkpoint(&read_checkpoint::<f64>(&bytes, &path)?, "f64");
        } else {
            print_checkpoint(&read_checkpoint::<f32>(&bytes, &path)?, "f32");
        }
    }
    for key in ["train", "dev", "segments"] {
        if let Some(path) = cfg.optional_path(key) {
            any = true;
            let bytes = std::fs::read(&path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
            let corpus = decode_archive(&bytes, Split::Test).map_err(|e| CliError::from(e).with_context(&path))?;
            print_archive(&corpus, &path);
        }
    }
    if any {
        Ok(())
    } else {
        Err(CliError::config("inspect needs at least one of checkpoint, train, dev, segments"))
    }
}

fn print_checkpoint<F: Real>(c: &Checkpoint<F>, precision: &str) {
    let n = &c.config;
    println!("kind\tcheckpoint");
    println!("precision\t{precision}");
    println!("cell\t{}", n.cell_kind.name());
    println!("head\t{}", n.head.name());
    println!("stacked_layers\t{}\nfc_layers\t{}", n.stacked_layers, n.fc_layers);
    println!("input_dim\t{}\nhidden_dim\t{}\nfc_dim\t{}\noutput_dim\t{}", n.input_dim, n.hidden_dim, n.fc_dim, n.output_dim);
    println!("dropout_recurrent\t{}\ndropout_fc\t{}", n.dropout_recurrent, n.dropout_fc);
    println!("parameters\t{}", c.params.parameter_count());
    println!("epoch\t{}\ndev_ap\t{}", c.epoch, c.dev_ap);
    println!("vocabulary\t{}", c.vocabulary.len());
    println!("normalizer\t{}", c.normalizer.is_some());
}

fn print_archive(c: &Corpus, path: &Path) {
    let lengths: Vec<usize> = c.segments().iter().map(|s| s.frames.rows()).collect();
    println!("kind\tarchive\npath\t{}", path.display());
    println!("segments\t{}\nwords\t{}", c.len(), c.vocabulary().len());
    println!("feature_dim\t{}", c.feature_dim().unwrap_or(0));
    if let (Some(lo), Some(hi)) = (lengths.iter().min(), lengths.iter().max()) {
        println!("frames_min\t{lo}\nframes_max\t{hi}");
    }
}

fn parse_list<T: std::str::FromStr>(cfg: &RunConfig, key: &str, fallback: T) -> Result<Vec<T>, CliError> {
    let raw = cfg.list(key);
    if raw.is_empty() {
        return Ok(vec![fallback]);
    }
    raw.iter()
        .map(|v| v.parse().map_err(|_| CliError::config(format!("key `{key}`: invalid entry `{v}`"))))
        .collect()
}

/// One row of the sweep table.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub cell: CellKind,
    pub stacked_layers: usize,
    pub fc_layers: usize,
    pub stage: &'static str,
    pub embed_dim: Option<usize>,
    pub result: Result<f64, String>,
}

impl SweepRow {
    pub fn to_tsv(&self) -> String {
        let dim = self.embed_dim.map(|d| d.to_string()).unwrap_or_else(|| "-".into());
        let (ap, status) = match &self.result {
            Ok(ap) => (ap.to_string(), "ok".to_string()),
            Err(e) => ("NA".into(), format!("failed: {}", e.replace(['\t', '\n'], " "))),
        };
        format!("{}\t{}\t{}\t{}\t{dim}\t{ap}\t{status}", self.cell.name(), self.stacked_layers, self.fc_layers, self.stage)
    }
}

pub fn sweep(cfg: &RunConfig) -> Result<(), CliError> {
    let mut manifest = Manifest::new("sweep", cfg)?;
    let train = read_corpus(&mut manifest, &cfg.path("train")?, Split::Train)?;
    let dev = read_corpus(&mut manifest, &cfg.path("dev")?, Split::Dev)?;
    let base = cfg.network()?;
    let cells: Vec<CellKind> = parse_list(cfg, "sweep.cell", base.cell_kind)?;
    let stacks: Vec<usize> = parse_list(cfg, "sweep.stacked_layers", base.stacked_layers)?;
    let fcs: Vec<usize> = parse_list(cfg, "sweep.fc_layers", base.fc_layers)?;
    let dims: Vec<usize> = if cfg.list("sweep.embed_dim").is_empty() { Vec::new() } else { parse_list(cfg, "sweep.embed_dim", 0)? };
    let ccfg = cfg.classifier()?;
    let scfg = cfg.siamese()?;
    let mut rows = Vec::new();
    for &cell in &cells {
        for &s in &stacks {
            for &f in &fcs {
                let net = NetworkConfig { cell_kind: cell, stacked_layers: s, fc_layers: f, ..base.clone() };
                info!("sweep: {} S={s} F={f} classifier", cell.name());
                let classifier = train_classifier::<f32>(&train, &dev, &net, &ccfg).map(|o| o.checkpoint);
                let row = |stage, embed_dim, result| SweepRow { cell, stacked_layers: s, fc_layers: f, stage, embed_dim, result };
                match &classifier {
                    Ok(c) => rows.push(row("classifier", None, Ok(c.dev_ap))),
                    Err(e) => {
                        warn!("sweep cell failed: {e}");
                        rows.push(row("classifier", None, Err(e.to_string())));
                    }
                }
                for &dim in &dims {
                    info!("sweep: {} S={s} F={f} siamese dim {dim}", cell.name());
                    let result = match &classifier {
                        Ok(c) => {
                            let sc = awe::siamese::SiameseTrainConfig { embed_dim: dim, ..scfg.clone() };
                            train_siamese(&train, &dev, SiameseInit::Warm(c), &sc).map(|o| o.checkpoint.dev_ap).map_err(|e| e.to_string())
                        }
                        Err(_) => Err("classifier stage failed".into()),
                    };
                    if let Err(e) = &result {
                        warn!("sweep cell failed: {e}");
                    }
                    rows.push(row("siamese", Some(dim), result));
                }
            }
        }
    }
    let mut table = String::from("cell\tS\tF\tstage\tembed_dim\tdev_ap\tstatus\n");
    for r in &rows {
        let line = r.to_tsv();
        println!("{line}");
        table.push_str(&line);
        table.push('\n');
    }
    let mut out = Outputs::default();
    out.add("sweep.tsv", table.into_bytes());
    finish(cfg, manifest, out)
}
