use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gliopath::dataio::synth::{synth_corpus, CorpusSpec};
use gliopath::dataio::load_manifest;
use gliopath::harness::{
    emit_report, evaluate, run_experiment, stratified_split, summarize_reports, write_metrics_csv, ExperimentConfig,
    ExperimentReport, GradeFilter, Task,
};
use gliopath::heads::{bce_loss, BinaryBatch};
use gliopath::nncore::gradcheck::{grad_check_with, GradCheckOptions};
use gliopath::nncore::{default_architecture, Network, Tensor4};
use gliopath::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "gliopath", version, about = "Patch-based CNN for glioma subtype and survival prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic slide corpus with known ground truth.
    Synth(SynthArgs),
    /// Write the train/val/test assignment of every configured repeat.
    Split(RunArgs),
    /// Train one model per repeat and report on its test split.
    Train(RunArgs),
    /// Apply a saved model to a manifest.
    Eval(EvalArgs),
    /// Collect `*.report.json` files into one metrics table.
    Report(ReportArgs),
    /// Finite-difference check of the network gradients.
    Gradcheck(GradArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    slides_per_class: Option<usize>,
    #[arg(long)]
    image_size: Option<usize>,
    #[arg(long)]
    censor_prob: Option<f64>,
}

/// Every field overrides the key of the same name in `--config`.
#[derive(Args, Default)]
struct ConfigFlags {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    grade: Option<String>,
    /// `train,val,test`, e.g. `0.5,0.25,0.25`.
    #[arg(long)]
    ratios: Option<String>,
    #[arg(long)]
    repeats: Option<String>,
    #[arg(long)]
    only_repeat: Option<String>,
    #[arg(long)]
    patches_per_slide: Option<String>,
    #[arg(long)]
    patch_size: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    patience: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    momentum: Option<String>,
    #[arg(long)]
    weight_decay: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    bootstrap: Option<String>,
    #[arg(long)]
    widths: Option<String>,
    #[arg(long)]
    white_thresh: Option<String>,
    #[arg(long)]
    var_thresh: Option<String>,
    #[arg(long)]
    workers: Option<String>,
    #[arg(long)]
    cache_dir: Option<String>,
}

impl ConfigFlags {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::from_file(p)?,
            None => ExperimentConfig::default(),
        };
        let flags = [
            ("task", &self.task),
            ("grade", &self.grade),
            ("ratios", &self.ratios),
            ("repeats", &self.repeats),
            ("only_repeat", &self.only_repeat),
            ("patches_per_slide", &self.patches_per_slide),
            ("patch_size", &self.patch_size),
            ("epochs", &self.epochs),
            ("patience", &self.patience),
            ("batch_size", &self.batch_size),
            ("lr", &self.lr),
            ("momentum", &self.momentum),
            ("weight_decay", &self.weight_decay),
            ("seed", &self.seed),
            ("bootstrap", &self.bootstrap),
            ("widths", &self.widths),
            ("white_thresh", &self.white_thresh),
            ("var_thresh", &self.var_thresh),
            ("workers", &self.workers),
            ("cache_dir", &self.cache_dir),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    cfg: ConfigFlags,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    task: Task,
    #[arg(long, default_value = "all")]
    grade: GradeFilter,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory holding `*.report.json` files.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also emit one row per grade for each report.
    #[arg(long)]
    by_grade: bool,
}

#[derive(Args)]
struct GradArgs {
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, default_value_t = 16)]
    size: usize,
    #[arg(long, default_value = "16,32,64")]
    widths: String,
    #[arg(long, default_value_t = 1e-5)]
    epsilon: f64,
    #[arg(long, default_value_t = 32)]
    coords: usize,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn synth(a: &SynthArgs) -> Result<()> {
    let mut spec = CorpusSpec::default();
    if let Some(n) = a.slides_per_class {
        spec.slides_per_class = n;
    }
    if let Some(s) = a.image_size {
        spec.image_size = s;
    }
    if let Some(p) = a.censor_prob {
        spec.censor_prob = p;
    }
    let slides = synth_corpus(&spec, a.seed, &a.out)?;
    println!("wrote {} slides to {}", slides.len(), a.out.display());
    Ok(())
}

fn split(a: &RunArgs) -> Result<()> {
    let cfg = a.cfg.resolve()?;
    let records = load_manifest(&a.manifest)?;
    create_dir(&a.out)?;
    for r in cfg.repeat_indices() {
        let s = stratified_split(&records, &cfg, r)?;
        let path = a.out.join(format!("{}.split.csv", cfg.stem(&r.to_string())));
        s.write_csv(&path, &records)?;
        println!("{}", path.display());
    }
    Ok(())
}

fn train(a: &RunArgs) -> Result<()> {
    let cfg = a.cfg.resolve()?;
    for r in run_experiment(&cfg, &a.manifest, &a.out)? {
        let row = r.report.recompute();
        println!(
            "repeat {}: epoch {} selected (val {:.4}); test {}",
            r.repeat,
            r.meta.selected_epoch,
            r.meta.val_metric,
            row.to_csv_line()
        );
    }
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<()> {
    let report = evaluate(&a.model, &a.manifest, a.task, a.grade, a.workers)?;
    create_dir(&a.out)?;
    emit_report(&report, &a.out, "eval.")?;
    println!("{}", report.recompute().to_csv_line());
    Ok(())
}

fn report(a: &ReportArgs) -> Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(&a.input)
        .map_err(|e| Error::Io {
            path: a.input.clone(),
            source: e,
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(".report.json"))
        .collect();
    entries.sort();
    let mut reports = Vec::new();
    for p in &entries {
        let text = std::fs::read_to_string(p).map_err(|e| Error::Io {
            path: p.clone(),
            source: e,
        })?;
        let r: ExperimentReport = serde_json::from_str(&text)?;
        if a.by_grade {
            let mut grades: Vec<_> = r.predictions.iter().map(|p| p.grade).collect();
            grades.sort();
            grades.dedup();
            reports.extend(grades.into_iter().map(|g| r.for_grade(g)));
        }
        reports.push(r);
    }
    if reports.is_empty() {
        return Err(Error::InsufficientData(format!("no report files in {}", a.input.display())));
    }
    let (mut rows, means) = summarize_reports(&reports);
    rows.extend(means);
    create_dir(&a.out)?;
    let path = a.out.join("summary.metrics.csv");
    write_metrics_csv(&path, &rows)?;
    println!("{} rows -> {}", rows.len(), path.display());
    Ok(())
}

fn gradcheck(a: &GradArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.set("widths", &a.widths)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let net = Network::init(default_architecture(3, cfg.widths), [3, a.size, a.size], &mut rng)?;
    let x = Tensor4::random_uniform([a.batch, 3, a.size, a.size], -1.0, 1.0, &mut rng);
    let labels: Vec<u8> = (0..a.batch).map(|i| (i % 2) as u8).collect();
    let loss = |out: &Tensor4| -> Result<(f64, Tensor4)> {
        let (l, g) = bce_loss(&BinaryBatch {
            logits: out.data(),
            labels: &labels,
        })?;
        Ok((l, Tensor4::from_vec(out.shape(), g)?))
    };
    let opts = GradCheckOptions {
        epsilon: a.epsilon,
        coords_per_block: a.coords,
        seed: a.seed,
        ..GradCheckOptions::default()
    };
    let rep = grad_check_with(&net, &x, &loss, &opts)?;
    println!("{}", serde_json::to_string_pretty(&rep)?);
    if rep.global_max > a.tolerance {
        return Err(Error::Numeric {
            context: format!("max relative gradient error {:.3e} exceeds {:.1e}", rep.global_max, a.tolerance),
        });
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    gliopath::tune_allocator();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Split(a) => split(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Report(a) => report(a),
        Command::Gradcheck(a) => gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
