use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use comet_core::data;
use comet_core::meta::BackboneKind;
use comet_harness::config::{ExperimentConfig, Overrides, Variant};
use comet_harness::error::{HarnessError, Result, EXIT_DIVERGED, EXIT_OK};
use comet_harness::experiment::{self, ModelFile, RunStatus};
use comet_harness::suite;

#[derive(Parser)]
#[command(
    name = "comet",
    version,
    about = "Train and evaluate confidence-weighted meta-learned anomaly detectors"
)]
struct Cli {
    /// Flat TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed (and COMET_SEED).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    backbone: Option<BackboneArg>,
    /// Training-set contamination rate in [0, 0.5].
    #[arg(long, global = true)]
    noise: Option<f64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Parallel runs for sweep and ablate.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackboneArg {
    Nf,
    Sn,
}

#[derive(Subcommand)]
enum Command {
    /// Write the train and test splits as .cmft files.
    Gen,
    /// Train one model and write report.json and model.json.
    Train,
    /// Score a saved model.
    Eval {
        /// Model file; defaults to <out>/model.json.
        #[arg(long)]
        model: Option<PathBuf>,
        /// .cmft dataset; defaults to the test split described by the model.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Noise-robustness sweep over contamination levels, variants and seeds.
    Sweep,
    /// The five-configuration ablation suite.
    Ablate,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load(cli: &Cli) -> Result<ExperimentConfig> {
    let overrides = Overrides {
        seed: cli.seed,
        backbone: cli.backbone.map(|b| match b {
            BackboneArg::Nf => BackboneKind::Nf,
            BackboneArg::Sn => BackboneKind::Sn,
        }),
        noise: cli.noise,
        workers: cli.workers,
    };
    ExperimentConfig::load(cli.config.as_deref(), &overrides)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(HarnessError::io(dir))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

fn dispatch(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Gen => {
            let cfg = load(cli)?;
            ensure_dir(&cli.out)?;
            let (train, test) = data::generate(&cfg.generator())?;
            for (name, ds) in [("train.cmft", &train), ("test.cmft", &test)] {
                data::save_features(ds, &cli.out.join(name))?;
                println!("{name}: {} samples x {} features", ds.len(), ds.dim());
            }
            Ok(EXIT_OK)
        }
        Command::Train => {
            let cfg = load(cli)?;
            ensure_dir(&cli.out)?;
            let out = experiment::run(&cfg)?;
            experiment::write_json(&cli.out.join("report.json"), &out.report)?;
            if let Some(model) = &out.model {
                experiment::write_json(&cli.out.join("model.json"), model)?;
            }
            match (&out.report.status, &out.report.eval) {
                (RunStatus::Diverged, _) => {
                    eprintln!(
                        "error: {}; partial report written",
                        out.report.error.as_deref().unwrap_or("training diverged")
                    );
                    return Ok(EXIT_DIVERGED);
                }
                (RunStatus::Ok, Some(e)) => println!(
                    "I-AUROC {:.4}  F1 {:.4}  precision {:.4}  recall {:.4}  ({:.1}s)",
                    e.i_auroc, e.f1, e.precision, e.recall, out.report.wall_clock_seconds
                ),
                (RunStatus::Ok, None) => println!("trained; test labels unavailable, no metrics"),
            }
            Ok(EXIT_OK)
        }
        Command::Eval { model, data } => {
            let path = model.clone().unwrap_or_else(|| cli.out.join("model.json"));
            let model: ModelFile = experiment::read_json(&path)?;
            let eval = experiment::evaluate_model(&model, data.as_deref())?;
            ensure_dir(&cli.out)?;
            experiment::write_json(&cli.out.join("eval.json"), &eval)?;
            println!("{}", serde_json::to_string_pretty(&eval).expect("serializable"));
            Ok(EXIT_OK)
        }
        Command::Sweep => {
            let cfg = load(cli)?;
            let out = suite::sweep_noise(&cfg, &cli.out)?;
            println!("{} cells ({} reused)", out.rows.len(), out.reused);
            println!("{:<20} {:>7} {:>18} {:>6}", "config", "noise", "I-AUROC", "ok");
            for r in &out.summary {
                println!(
                    "{:<20} {:>6.1}% {:>8} +- {:<7} {:>3}/{}",
                    r.config.key(),
                    r.noise * 100.0,
                    fmt_opt(r.mean_i_auroc),
                    fmt_opt(r.std_i_auroc),
                    r.n_ok,
                    r.n_ok + r.n_failed
                );
            }
            for v in &cfg.sweep_variants {
                println!("degradation {:<20} {}", v.key(), fmt_opt(out.degradation(*v)));
            }
            Ok(EXIT_OK)
        }
        Command::Ablate => {
            let cfg = load(cli)?;
            let out = suite::ablate(&cfg, &cli.out)?;
            println!("{} runs ({} reused)", out.runs.len(), out.reused);
            for r in &out.table {
                println!(
                    "{}. {:<34} {} +- {}  F1 {}  ({} ok)",
                    r.rank,
                    r.configuration,
                    fmt_opt(r.mean_i_auroc),
                    fmt_opt(r.std_i_auroc),
                    fmt_opt(r.mean_f1),
                    r.n_ok
                );
            }
            if let (Some(full), Some(base)) = (out.mean(Variant::Full), out.mean(Variant::Baseline)) {
                println!("full - baseline: {:+.4}", full - base);
            }
            Ok(EXIT_OK)
        }
    }
}
