//! Command-line driver: data generation, pretraining, and evaluation.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use evfield::config::ExperimentConfig;
use evfield::container::{atomic_write, read_corpus, write_corpus};
use evfield::eval::{
    ablate, boundary_alignment, embed_fields, extract_embedding, linear_probe,
    retrieval, robustness_eval, split_fields, standard_suite,
};
use evfield::rng::stream;
use evfield::synthgen::{generate_corpus, Corpus};
use evfield::trainer::{load_checkpoint, modalities_of, pretrain, resume, Model, TrainConfig};
use evfield::Error;

const EXIT_USAGE: u8 = 2;
const EXIT_CORRUPT: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

#[derive(Parser)]
#[command(
    name = "evfield",
    about = "Self-supervised event-field models for multichannel waveforms",
    after_help = "Environment:\n  EVFIELD_DETERMINISTIC  set to 0 to allow nondeterministic thread scheduling\n                         (default 1: sequential, bit-reproducible runs)"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct CheckpointData {
    /// Checkpoint file written by pretrain/resume.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset directory (data.evfd + sidecar.jsonl).
    #[arg(long)]
    data: PathBuf,
    /// Output report path (line-delimited JSON).
    #[arg(long)]
    out: PathBuf,
    /// Experiment config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic corpus.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain a model on a dataset.
    Pretrain {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Resume pretraining from a checkpoint.
    Resume {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Embed every recording; emits embeddings plus per-recording variance.
    Encode {
        #[command(flatten)]
        common: CheckpointData,
        /// Segmentations averaged per embedding.
        #[arg(long, default_value_t = 4)]
        seg_samples: usize,
    },
    /// Train and score a linear probe on frozen embeddings.
    Probe {
        #[command(flatten)]
        common: CheckpointData,
    },
    /// Retrieval evaluation: test queries against the train gallery.
    Retrieve {
        #[command(flatten)]
        common: CheckpointData,
    },
    /// Probe AUROC under test-time perturbations.
    Robustness {
        #[command(flatten)]
        common: CheckpointData,
        /// Suite severity in [0, 1].
        #[arg(long)]
        severity: Option<f64>,
    },
    /// Train the standard ablation variants and report probe AUROC.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Seeds per variant.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
    },
    /// Segmentation-variance uncertainty per recording.
    Uncertainty {
        #[command(flatten)]
        common: CheckpointData,
        #[arg(long, default_value_t = 8)]
        seg_samples: usize,
    },
}

fn load_config(path: &Option<PathBuf>) -> Result<ExperimentConfig, Error> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

/// Load a checkpoint and verify it matches the dataset shape.
fn load_model(ckpt: &Path, corpus: &Corpus) -> Result<(TrainConfig, Model), Error> {
    let (cfg, model, _, _) = load_checkpoint(ckpt)?;
    let first = &corpus.recordings[0];
    if cfg.encoder.input_channels != first.channels {
        return Err(Error::Invalid(format!(
            "checkpoint expects {} channels, dataset has {}",
            cfg.encoder.input_channels, first.channels
        )));
    }
    if first.len % cfg.encoder.downsample() != 0 {
        return Err(Error::Invalid(format!(
            "dataset length {} incompatible with model downsample factor {}",
            first.len,
            cfg.encoder.downsample()
        )));
    }
    Ok((cfg, model))
}

fn write_report_lines(path: &Path, lines: &[String]) -> Result<(), Error> {
    atomic_write(path, (lines.join("\n") + "\n").as_bytes())
}

fn json<T: serde::Serialize>(v: &T) -> Result<String, Error> {
    serde_json::to_string(v).map_err(|e| Error::Invalid(format!("unserializable report: {e}")))
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Cmd::GenData { config, out } => {
            let cfg = load_config(&config)?;
            let corpus = generate_corpus(&cfg.generator)?;
            let (data_path, side_path) = write_corpus(&out, &corpus)?;
            let bytes = std::fs::metadata(&data_path).map_err(|e| Error::io(&data_path, e))?.len();
            println!(
                "wrote {} recordings ({} classes, {} bytes) to {} + {}",
                corpus.recordings.len(),
                cfg.generator.classes.len(),
                bytes,
                data_path.display(),
                side_path.display()
            );
        }
        Cmd::Pretrain { config, data, out } => {
            let cfg = load_config(&config)?;
            let corpus = read_corpus(&data)?;
            let summary = pretrain(&corpus, &cfg.train, &out)?;
            println!(
                "trained {} steps; final checkpoint {}",
                summary.final_step,
                summary.final_checkpoint.display()
            );
        }
        Cmd::Resume { checkpoint, data, out } => {
            let corpus = read_corpus(&data)?;
            let summary = resume(&corpus, &checkpoint, &out)?;
            println!(
                "resumed to step {}; final checkpoint {}",
                summary.final_step,
                summary.final_checkpoint.display()
            );
        }
        Cmd::Encode { common, seg_samples } => {
            let cfg = load_config(&common.config)?;
            let corpus = read_corpus(&common.data)?;
            let (tcfg, model) = load_model(&common.checkpoint, &corpus)?;
            let n_mod = modalities_of(&corpus);
            let mut lines = Vec::new();
            for (i, rec) in corpus.recordings.iter().enumerate() {
                let enc = &model.encoders[(rec.modality_id as usize).min(model.encoders.len() - 1)];
                let mut rng = stream(cfg.eval.seed, "encode-cli", i as u64);
                let (z, var) = extract_embedding(rec, enc, &tcfg.seg, seg_samples, &mut rng)?;
                lines.push(json(&serde_json::json!({
                    "recording": i,
                    "field": i / n_mod,
                    "subject": rec.subject_id,
                    "modality": rec.modality_id,
                    "label": rec.label,
                    "variance": var,
                    "embedding": z,
                }))?);
            }
            write_report_lines(&common.out, &lines)?;
            println!("encoded {} recordings -> {}", lines.len(), common.out.display());
        }
        Cmd::Probe { common } => {
            let cfg = load_config(&common.config)?;
            let corpus = read_corpus(&common.data)?;
            let (tcfg, model) = load_model(&common.checkpoint, &corpus)?;
            let (tr_f, te_f) = split_fields(&corpus, cfg.eval.train_frac);
            let tr = embed_fields(&model, &corpus, &tr_f, &tcfg.seg, cfg.eval.seg_samples, cfg.eval.seed)?;
            let te = embed_fields(&model, &corpus, &te_f, &tcfg.seg, cfg.eval.seg_samples, cfg.eval.seed)?;
            let (_, report) = linear_probe(&tr, &te, &cfg.probe)?;
            let bnd = boundary_alignment(&model.encoders[0], &corpus, 0.5, cfg.eval.seed)?;
            write_report_lines(
                &common.out,
                &[json(&serde_json::json!({
                    "auroc": report.auroc,
                    "f1": report.f1,
                    "boundary_score": bnd.score,
                    "boundary_baseline": bnd.baseline,
                }))?],
            )?;
            println!("metric      value");
            println!("auroc       {:.4}", report.auroc);
            println!("f1          {:.4}", report.f1);
            println!("boundary    {:.2} (random {:.2})", bnd.score, bnd.baseline);
        }
        Cmd::Retrieve { common } => {
            let cfg = load_config(&common.config)?;
            let corpus = read_corpus(&common.data)?;
            let (tcfg, model) = load_model(&common.checkpoint, &corpus)?;
            let (tr_f, te_f) = split_fields(&corpus, cfg.eval.train_frac);
            let gallery = embed_fields(&model, &corpus, &tr_f, &tcfg.seg, cfg.eval.seg_samples, cfg.eval.seed)?;
            let queries = embed_fields(&model, &corpus, &te_f, &tcfg.seg, cfg.eval.seg_samples, cfg.eval.seed)?;
            let report = retrieval(&queries, &gallery)?;
            write_report_lines(&common.out, &[json(&report)?])?;
            println!("metric   value");
            println!("map      {:.4}", report.map);
            println!("ndcg     {:.4}", report.ndcg);
            println!("queries  {} ({} excluded)", report.queries, report.excluded);
        }
        Cmd::Robustness { common, severity } => {
            let cfg = load_config(&common.config)?;
            let corpus = read_corpus(&common.data)?;
            let (tcfg, model) = load_model(&common.checkpoint, &corpus)?;
            let (tr_f, te_f) = split_fields(&corpus, cfg.eval.train_frac);
            let tr = embed_fields(&model, &corpus, &tr_f, &tcfg.seg, cfg.eval.seg_samples, cfg.eval.seed)?;
            let te = embed_fields(&model, &corpus, &te_f, &tcfg.seg, cfg.eval.seg_samples, cfg.eval.seed)?;
            let (probe, clean) = linear_probe(&tr, &te, &cfg.probe)?;
            let sev = severity.unwrap_or(cfg.eval.severity);
            let suite = standard_suite(sev, corpus.recordings[0].len);
            let rows = robustness_eval(
                &model, &corpus, &te_f, &probe, &suite, &tcfg.seg,
                cfg.eval.seg_samples, cfg.eval.seed,
            )?;
            let mut lines = vec![json(&serde_json::json!({
                "perturbation": "clean", "severity": 0.0, "auroc": clean.auroc, "f1": clean.f1,
            }))?];
            println!("perturbation  auroc");
            println!("clean         {:.4}", clean.auroc);
            for (name, r) in &rows {
                lines.push(json(&serde_json::json!({
                    "perturbation": name, "severity": sev, "auroc": r.auroc, "f1": r.f1,
                }))?);
                println!("{name:<13} {:.4}", r.auroc);
            }
            write_report_lines(&common.out, &lines)?;
        }
        Cmd::Ablate { config, data, out, seeds } => {
            let cfg = load_config(&config)?;
            let corpus = read_corpus(&data)?;
            let seed_list: Vec<u64> = (0..seeds).map(|s| cfg.train.seed + s).collect();
            let rows = ablate(&corpus, &cfg.train, &seed_list, &cfg.probe, cfg.eval.seg_samples)?;
            let mut lines = Vec::new();
            println!("variant        auroc (mean +/- std)");
            for row in &rows {
                lines.push(json(row)?);
                println!("{:<14} {:.4} +/- {:.4}", row.name, row.mean, row.std);
            }
            write_report_lines(&out, &lines)?;
        }
        Cmd::Uncertainty { common, seg_samples } => {
            let cfg = load_config(&common.config)?;
            let corpus = read_corpus(&common.data)?;
            let (tcfg, model) = load_model(&common.checkpoint, &corpus)?;
            let mut lines = Vec::new();
            let mut mean_var = 0.0;
            for (i, rec) in corpus.recordings.iter().enumerate() {
                let enc = &model.encoders[(rec.modality_id as usize).min(model.encoders.len() - 1)];
                let mut rng = stream(cfg.eval.seed, "uncert-cli", i as u64);
                let (_, var) = extract_embedding(rec, enc, &tcfg.seg, seg_samples, &mut rng)?;
                mean_var += var / corpus.recordings.len() as f64;
                lines.push(json(&serde_json::json!({
                    "recording": i, "variance": var,
                }))?);
            }
            write_report_lines(&common.out, &lines)?;
            println!(
                "mean segmentation variance over {} recordings: {:.6}",
                corpus.recordings.len(),
                mean_var
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match &e {
                Error::Corrupt { .. } => EXIT_CORRUPT,
                Error::Numeric(_) => EXIT_NUMERIC,
                Error::Io { .. } => EXIT_CORRUPT,
                _ => EXIT_USAGE,
            };
            ExitCode::from(code)
        }
    }
}
