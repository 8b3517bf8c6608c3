use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lgfusion::annotool::{
    count_table, cross_check_sets, fleiss_kappa, inter_consistency, intra_consistency, mos_report, read_records,
    resolve_label, sample_variants, CheckStage, DatasetManifest, ManifestRecord, MosEntry, VariantConfig,
    CORPUS_COUNTS,
};
use lgfusion::harness::{
    evaluate, gen_synthetic, load_model, load_trainer, model_grad_check, save_trainer, Dataset, RunConfig, Trainer,
    SYNTHETIC_CLASSES,
};
use lgfusion::lgf::LgfModel;
use lgfusion::numcore::{blob, GradCheckConfig, Precision, Real, Tensor};
use lgfusion::objective::Emotion;
use lgfusion::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde_json::{json, Value};

#[derive(Parser)]
#[command(
    name = "lgfusion",
    version,
    about = "Audio-visual fusion training and annotation tooling"
)]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// JSON configuration file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override every seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train on the synthetic task and report train and test metrics.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from a checkpoint directory written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a saved model on the synthetic test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Compare model gradients against central differences.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Samples in the checked batch.
        #[arg(long, default_value_t = 2)]
        samples: usize,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Write the synthetic train and test splits as tensor files.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Intra- and inter-group consistency of cross-check records.
    Consistency {
        #[arg(long)]
        records: PathBuf,
        #[arg(long, value_parser = parse_stage, default_value = "sA")]
        stage: CheckStage,
        #[arg(long, default_value_t = 6)]
        categories: usize,
    },
    /// Resolve final labels of annotation records.
    Resolve {
        #[arg(long)]
        records: PathBuf,
    },
    /// Fleiss' kappa over member votes or an explicit count table.
    Kappa {
        /// Annotation records; each item contributes its three member votes.
        #[arg(long, conflicts_with = "table", required_unless_present = "table")]
        records: Option<PathBuf>,
        /// JSON array of per-item category counts.
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Mean opinion scores per dataset.
    Mos {
        /// JSON array of `{"dataset": ..., "ratings": [...]}`.
        #[arg(long)]
        input: PathBuf,
    },
    /// Draw the balanced and test dataset variants.
    Sample {
        #[command(flatten)]
        common: Common,
        /// Manifest as a JSON array or CSV with `id,category,duration`; the corpus
        /// category counts are used when omitted.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
}

fn parse_stage(s: &str) -> std::result::Result<CheckStage, String> {
    match s {
        "sA" | "A" | "a" => Ok(CheckStage::A),
        "sB" | "B" | "b" => Ok(CheckStage::B),
        _ => Err(format!("unknown stage {s:?}; expected sA or sB")),
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn run_config(common: &Common) -> Result<RunConfig> {
    let cfg = match &common.config {
        Some(path) => RunConfig::from_json(&std::fs::read_to_string(path)?)?,
        None => RunConfig::default(),
    };
    let cfg = match common.seed {
        Some(seed) => cfg.with_seed(seed),
        None => cfg,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn train<T: Real>(cfg: &RunConfig, resume: Option<&Path>, out: Option<&Path>) -> Result<Value> {
    let task = gen_synthetic(&cfg.data)?;
    let (train, test): (Dataset<T>, Dataset<T>) = (task.train.cast(), task.test.cast());
    let mut trainer = match resume {
        Some(dir) => load_trainer::<T>(dir)?,
        None => Trainer::<T>::new(cfg.train.clone())?,
    };
    let remaining = cfg.train.epochs.saturating_sub(trainer.epochs_done());
    for _ in 0..remaining {
        let rec = trainer.run_epoch(&train)?;
        log::info!(
            "epoch {} loss {:.5} train acc {:.2}",
            rec.epoch,
            rec.loss,
            rec.train_acc
        );
    }
    if let Some(dir) = out {
        save_trainer(&trainer, dir)?;
    }
    let last = trainer.history().last();
    Ok(json!({
        "precision": T::PRECISION.tag(),
        "epochs": trainer.epochs_done(),
        "steps": trainer.steps(),
        "final_loss": last.map(|r| r.loss),
        "telemetry": last.map(|r| r.telemetry),
        "train": trainer.evaluate(&train)?,
        "test": trainer.evaluate(&test)?,
        "checkpoint": out.map(|d| d.display().to_string()),
    }))
}

fn eval<T: Real>(cfg: &RunConfig, checkpoint: &Path) -> Result<Value> {
    let model = load_model::<T>(checkpoint)?;
    if model.config() != &cfg.train.model {
        log::warn!("checkpoint architecture differs from the configured one; using the checkpoint");
    }
    let task = gen_synthetic(&cfg.data)?;
    let test: Dataset<T> = task.test.cast();
    Ok(json!({
        "precision": T::PRECISION.tag(),
        "samples": test.len(),
        "test": evaluate(&model, &test, model.config().classes)?,
    }))
}

fn gradcheck(cfg: &RunConfig, samples: usize, tolerance: f64) -> Result<Value> {
    if samples == 0 {
        return Err(Error::Config("gradcheck needs at least one sample".into()));
    }
    let data = lgfusion::harness::SyntheticTaskConfig {
        train_samples: samples,
        test_samples: 0,
        ..cfg.data.clone()
    };
    let task = gen_synthetic(&data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let model = LgfModel::<f64>::new(cfg.train.model.clone(), &mut rng)?;
    let gc = GradCheckConfig {
        tolerance,
        ..GradCheckConfig::default()
    };
    let report = model_grad_check(&model, &task.train, &cfg.train.loss, &cfg.train.polarity, gc)?;
    let failed: Vec<&str> = report.failures().map(|p| p.name.as_str()).collect();
    if !report.passed {
        return Err(Error::Numerical(format!(
            "gradient check failed (max relative error {:.3e}) for {}",
            report.max_rel_err,
            failed.join(", ")
        )));
    }
    Ok(json!({
        "passed": report.passed,
        "max_rel_err": report.max_rel_err,
        "tensors": report.params.len(),
        "elements": report.params.iter().map(|p| p.elements).sum::<usize>(),
    }))
}

fn stack(data: &Dataset<f64>) -> Result<[Tensor<f64>; 3]> {
    let n = data.len();
    let shape = data
        .samples
        .first()
        .map(|s| s.audio.shape().to_vec())
        .unwrap_or_else(|| vec![0, 0]);
    let mut dims = vec![n];
    dims.extend(&shape);
    let audio = data
        .samples
        .iter()
        .flat_map(|s| s.audio.data().iter().copied())
        .collect();
    let visual = data
        .samples
        .iter()
        .flat_map(|s| s.visual.data().iter().copied())
        .collect();
    let labels = data.samples.iter().map(|s| s.label as f64).collect();
    Ok([
        Tensor::new(dims.clone(), audio)?,
        Tensor::new(dims, visual)?,
        Tensor::new(vec![n], labels)?,
    ])
}

fn gen_data(cfg: &RunConfig, out: &Path) -> Result<Value> {
    let task = gen_synthetic(&cfg.data)?;
    std::fs::create_dir_all(out)?;
    let mut files = Vec::new();
    for (name, split) in [("train", &task.train), ("test", &task.test)] {
        let [a, v, l] = stack(split)?;
        let path = out.join(format!("{name}.safetensors"));
        blob::write_file(&path, &[("audio", &a), ("visual", &v), ("labels", &l)])?;
        files.push(json!({ "split": name, "samples": split.len(), "path": path.display().to_string() }));
    }
    Ok(json!({ "classes": SYNTHETIC_CLASSES, "files": files, "data": cfg.data }))
}

fn consistency(records: &Path, stage: CheckStage, categories: usize) -> Result<Value> {
    let recs = read_records(records)?;
    let sets = cross_check_sets(&recs, stage)?;
    let tallies = sets.iter().map(|s| s.tally()).collect::<Result<Vec<_>>>()?;
    Ok(json!({
        "stage": stage,
        "sets": sets.len(),
        "s_a": intra_consistency(&sets)?,
        "s_r": inter_consistency(&sets, categories)?,
        "tallies": tallies,
    }))
}

fn resolve(records: &Path) -> Result<Value> {
    let recs = read_records(records)?;
    let mut by_stage = [0usize; 4];
    let mut confidences = Vec::new();
    let mut labels = Vec::with_capacity(recs.len());
    for r in &recs {
        let v = r.to_vote_record()?;
        let res = resolve_label(&v)?;
        by_stage[usize::from(res.stage) - 1] += 1;
        confidences.extend(&v.confidences);
        labels.push(json!({ "sample_id": v.sample_id, "label": res.label, "stage": res.stage }));
    }
    let mean_conf = (!confidences.is_empty()).then(|| confidences.iter().sum::<f64>() / confidences.len() as f64);
    Ok(json!({
        "records": recs.len(),
        "resolved_by_stage": by_stage,
        "mean_confidence": mean_conf,
        "labels": labels,
    }))
}

fn kappa(records: Option<&Path>, table: Option<&Path>) -> Result<Value> {
    let table: Vec<Vec<usize>> = match (records, table) {
        (_, Some(path)) => read_json(path)?,
        (Some(path), None) => {
            let ratings: Vec<Vec<usize>> = read_records(path)?
                .iter()
                .map(|r| r.votes.iter().map(|e| e.index()).collect())
                .collect();
            count_table(&ratings, Emotion::ALL.len())?
        }
        (None, None) => return Err(Error::Config("kappa needs --records or --table".into())),
    };
    Ok(json!({ "items": table.len(), "kappa": fleiss_kappa(&table)? }))
}

fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
        let records = rdr
            .deserialize::<ManifestRecord>()
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(DatasetManifest { records })
    } else {
        let records: Vec<ManifestRecord> = read_json(path)?;
        Ok(DatasetManifest { records })
    }
}

fn sample(common: &Common, manifest: Option<&Path>) -> Result<Value> {
    let mut cfg: VariantConfig = match &common.config {
        Some(path) => read_json(path)?,
        None => VariantConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let manifest = match manifest {
        Some(path) => read_manifest(path)?,
        None => DatasetManifest::from_counts(&CORPUS_COUNTS),
    };
    let split = sample_variants(&manifest, &cfg)?;
    if let Some(dir) = &common.out {
        std::fs::create_dir_all(dir)?;
        for (name, m) in [("balanced", &split.balanced), ("test", &split.test)] {
            std::fs::write(dir.join(format!("{name}.json")), serde_json::to_vec_pretty(&m.records)?)?;
        }
    }
    Ok(json!({
        "seed": cfg.seed,
        "balanced": { "total": split.balanced.len(), "counts": split.balanced.counts() },
        "test": { "total": split.test.len(), "counts": split.test_allocation },
    }))
}

fn dispatch(command: Command) -> Result<Value> {
    match command {
        Command::Train { common, resume } => {
            let cfg = run_config(&common)?;
            match cfg.train.precision {
                Precision::F64 => train::<f64>(&cfg, resume.as_deref(), common.out.as_deref()),
                Precision::F32 => train::<f32>(&cfg, resume.as_deref(), common.out.as_deref()),
            }
        }
        Command::Eval { common, checkpoint } => {
            let cfg = run_config(&common)?;
            let bytes = std::fs::read(checkpoint.join("params.safetensors"))?;
            match blob::peek_precision(&bytes)?.unwrap_or(cfg.train.precision) {
                Precision::F64 => eval::<f64>(&cfg, &checkpoint),
                Precision::F32 => eval::<f32>(&cfg, &checkpoint),
            }
        }
        Command::Gradcheck {
            common,
            samples,
            tolerance,
        } => gradcheck(&run_config(&common)?, samples, tolerance),
        Command::GenData { common } => {
            let out = common
                .out
                .clone()
                .ok_or_else(|| Error::Config("gen-data needs --out".into()))?;
            gen_data(&run_config(&common)?, &out)
        }
        Command::Consistency {
            records,
            stage,
            categories,
        } => consistency(&records, stage, categories),
        Command::Resolve { records } => resolve(&records),
        Command::Kappa { records, table } => kappa(records.as_deref(), table.as_deref()),
        Command::Mos { input } => {
            let entries: Vec<MosEntry> = read_json(&input)?;
            Ok(json!({ "reports": mos_report(&entries)? }))
        }
        Command::Sample { common, manifest } => sample(&common, manifest.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli.command) {
        Ok(value) => {
            let mut stdout = std::io::stdout().lock();
            let written = serde_json::to_writer_pretty(&mut stdout, &value)
                .map_err(std::io::Error::from)
                .and_then(|()| writeln!(stdout));
            match written {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
                    eprintln!("error: {e}");
                    ExitCode::from(2)
                }
                _ => ExitCode::SUCCESS,
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}
