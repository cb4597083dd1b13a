use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use seqsleep::diffcore::checkpoint;
use seqsleep::eval::{compute_metrics, sliding_predict, transition_split, ConfusionMatrix, Metrics};
use seqsleep::harness::gradsuite::{run_suite, SUITE_TOLERANCE};
use seqsleep::harness::{
    list_recordings, load_prepared, prepare_images, read_recording, split_dataset, write_corpus, RunConfig,
    SyntheticConfig,
};
use seqsleep::model::{train, Model};
use seqsleep::{Error, Result, Stage};

#[derive(Parser)]
#[command(name = "seqsleep", version, about = "Sequence-to-sequence sleep staging")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labelled corpus.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the config file.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model on the training split of a data directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seq_len: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write the hypnogram of one recording.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        recording: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score the test split of a data directory.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        cm: PathBuf,
        /// Score every recording instead of the test split.
        #[arg(long)]
        all: bool,
    },
    /// Compare analytic gradients with finite differences.
    Gradcheck {
        /// Only the small layers and the micro model.
        #[arg(long)]
        micro: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write the effective filterbank weights of every channel.
    ExportFilters {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the attention weights of one epoch.
    ExportAttention {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        recording: PathBuf,
        #[arg(long)]
        epoch: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))
}

fn load_model(dir: &Path) -> Result<(Model, RunConfig)> {
    let (store, manifest) = checkpoint::load(dir)?;
    let run: RunConfig = serde_json::from_value(manifest.config)?;
    Ok((Model::from_store(run.model.clone(), &store)?, run))
}

fn synth(config: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut cfg = SyntheticConfig::from_json(&read_to_string(config)?)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let paths = write_corpus(&cfg, out)?;
    println!("wrote {} recordings to {}", paths.len(), out.display());
    Ok(())
}

fn run_train(data: &Path, config: &Path, out: &Path, seq_len: Option<usize>, seed: Option<u64>) -> Result<()> {
    let mut run = RunConfig::from_json(&read_to_string(config)?)?;
    if let Some(l) = seq_len {
        run.model.seq_len = l;
    }
    if let Some(s) = seed {
        run.model.seed = s;
    }
    run.model.validate()?;
    let paths = list_recordings(data)?;
    let split = split_dataset(&paths, run.split.fractions, run.split.seed)?;
    let train_set = load_prepared(&split.train, &run.stft)?;
    let valid_set = load_prepared(&split.valid, &run.stft)?;
    log::info!(
        "training on {} recordings, validating on {}",
        train_set.len(),
        valid_set.len()
    );
    let outcome = train(&run.model, &train_set, &valid_set)?;
    checkpoint::save(out, &outcome.model.params, &run)?;
    fs::write(out.join("training_log.csv"), outcome.log.to_csv())?;
    match outcome.best_valid_accuracy {
        Some(acc) => println!(
            "best validation accuracy {acc:.4} at step {}; checkpoint in {}",
            outcome.best_step,
            out.display()
        ),
        None => println!("no validation data; final checkpoint in {}", out.display()),
    }
    Ok(())
}

fn predict(ckpt: &Path, recording: &Path, out: &Path) -> Result<()> {
    let (model, run) = load_model(ckpt)?;
    let rec = read_recording(recording)?;
    let images = prepare_images(&rec, &run.stft)?;
    let pred = sliding_predict(&images, &model)?;
    let mut csv = String::from("epoch_index,reference_label,predicted_label");
    for s in Stage::ALL {
        let _ = write!(csv, ",log_score_{s}");
    }
    csv.push('\n');
    for (i, label) in pred.hypnogram.iter().enumerate() {
        let reference = rec
            .labels
            .as_ref()
            .map(|l| l[i].name().to_string())
            .unwrap_or_default();
        let _ = write!(csv, "{i},{reference},{label}");
        for v in pred.log_scores.row(i) {
            let _ = write!(csv, ",{v:.17e}");
        }
        csv.push('\n');
    }
    fs::write(out, csv)?;
    println!("wrote {} epochs to {}", pred.hypnogram.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct TransitionSummary {
    transitioning: usize,
    non_transitioning: usize,
    transitioning_accuracy: Option<f64>,
    non_transitioning_accuracy: Option<f64>,
}

#[derive(Serialize)]
struct EvaluationReport {
    #[serde(flatten)]
    metrics: Metrics,
    recordings: Vec<String>,
    transitions: TransitionSummary,
}

fn evaluate(ckpt: &Path, data: &Path, out: &Path, cm_path: &Path, all: bool) -> Result<()> {
    let (model, run) = load_model(ckpt)?;
    let paths = list_recordings(data)?;
    let chosen = if all {
        paths
    } else {
        split_dataset(&paths, run.split.fractions, run.split.seed)?.test
    };
    if chosen.is_empty() {
        return Err(Error::Data("the test split is empty".into()));
    }
    let recordings = load_prepared(&chosen, &run.stft)?;
    let mut cm = ConfusionMatrix::default();
    let mut count = [0usize; 2];
    let mut hits = [0usize; 2];
    for rec in &recordings {
        let pred = sliding_predict(&rec.images, &model)?;
        cm.add(&ConfusionMatrix::from_pairs(&rec.labels, &pred.hypnogram)?);
        for ((flag, r), p) in transition_split(&rec.labels).iter().zip(&rec.labels).zip(&pred.hypnogram) {
            let g = usize::from(*flag);
            count[g] += 1;
            hits[g] += usize::from(r == p);
        }
    }
    let acc = |g: usize| (count[g] > 0).then(|| hits[g] as f64 / count[g] as f64);
    let report = EvaluationReport {
        metrics: compute_metrics(&cm)?,
        recordings: recordings.iter().map(|r| r.name.clone()).collect(),
        transitions: TransitionSummary {
            transitioning: count[1],
            non_transitioning: count[0],
            transitioning_accuracy: acc(1),
            non_transitioning_accuracy: acc(0),
        },
    };
    fs::write(out, serde_json::to_string_pretty(&report)?)?;
    fs::write(cm_path, cm.to_csv())?;
    println!(
        "accuracy {:.4}, macro F1 {:.4}, kappa {:.4} over {} epochs",
        report.metrics.accuracy, report.metrics.macro_f1, report.metrics.kappa, report.metrics.total
    );
    Ok(())
}

fn gradcheck(micro: bool, seed: u64) -> Result<bool> {
    let mut ok = true;
    for entry in run_suite(micro, seed)? {
        let pass = entry.report.max_rel_error < SUITE_TOLERANCE;
        ok &= pass;
        println!(
            "{:<34} max relative error {:.3e} over {} coordinates {}",
            entry.name,
            entry.report.max_rel_error,
            entry.report.coords_checked,
            if pass { "ok" } else { "FAILED" }
        );
    }
    Ok(ok)
}

fn export_filters(ckpt: &Path, out: &Path) -> Result<()> {
    let (model, _) = load_model(ckpt)?;
    let m = model.config.num_filters;
    let mut csv = String::from("channel,bin");
    for j in 1..=m {
        let _ = write!(csv, ",f{j}");
    }
    csv.push('\n');
    for layer in &model.arch.filterbanks {
        let w = layer.effective_weights(&model.params);
        for (k, row) in w.rows().into_iter().enumerate() {
            let _ = write!(csv, "{},{k}", layer.channel_index);
            for v in row {
                let _ = write!(csv, ",{v:.17e}");
            }
            csv.push('\n');
        }
    }
    fs::write(out, csv)?;
    Ok(())
}

fn export_attention(ckpt: &Path, recording: &Path, epoch: usize, out: &Path) -> Result<()> {
    let (model, run) = load_model(ckpt)?;
    let rec = read_recording(recording)?;
    if epoch >= rec.epoch_count() {
        return Err(Error::Data(format!(
            "epoch {epoch} out of range for a recording of {} epochs",
            rec.epoch_count()
        )));
    }
    let image = seqsleep::tfr::epoch_to_image(&rec.epoch(epoch), &run.stft)?;
    let alpha = model.attention_weights(&image)?;
    let mut csv = String::from("time_index,weight\n");
    for (t, a) in alpha.iter().enumerate() {
        let _ = writeln!(csv, "{t},{a:.17e}");
    }
    fs::write(out, csv)?;
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Synth { config, out, seed } => synth(&config, &out, seed)?,
        Command::Train {
            data,
            config,
            out,
            seq_len,
            seed,
        } => run_train(&data, &config, &out, seq_len, seed)?,
        Command::Predict { ckpt, recording, out } => predict(&ckpt, &recording, &out)?,
        Command::Evaluate {
            ckpt,
            data,
            out,
            cm,
            all,
        } => evaluate(&ckpt, &data, &out, &cm, all)?,
        Command::Gradcheck { micro, seed } => {
            if !gradcheck(micro, seed)? {
                return Ok(ExitCode::from(3));
            }
        }
        Command::ExportFilters { ckpt, out } => export_filters(&ckpt, &out)?,
        Command::ExportAttention {
            ckpt,
            recording,
            epoch,
            out,
        } => export_attention(&ckpt, &recording, epoch, &out)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
