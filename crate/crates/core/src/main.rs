use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use attnloc::dataset_io::save_checkpoint;
use attnloc::experiment::{
    datasets, evaluate, load_model, run_experiment, save_loss_history, train_model, write_reports, Datasets,
    ExperimentConfig, ExperimentReport, Method, CHECKPOINT_FILE,
};
use attnloc::training::EpochStats;
use attnloc::{Error, Result};

#[derive(Parser)]
#[command(name = "attnloc", about = "Attention-based landmark localization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration (JSON); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for all artifacts.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum InferMode {
    Gps,
    Filter,
}

#[derive(Subcommand)]
enum Command {
    /// Generate training and evaluation scenes (and the drive map).
    Simulate(Common),
    /// Train the network and write a checkpoint.
    Train(Common),
    /// Run network inference on the evaluation scenes.
    Infer {
        #[arg(long, value_enum)]
        mode: InferMode,
        #[command(flatten)]
        common: Common,
    },
    /// Run the configured experiment end to end.
    Eval(Common),
    /// Evaluate the ICP baseline.
    Icp(Common),
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn progress(s: &EpochStats) {
    eprintln!(
        "epoch {:>4}  loss {:>9.4}  l_tran {:.4}  l_rot {:.6}  s_tran {:.3}  s_rot {:.3}",
        s.epoch, s.mean_loss, s.mean_tran, s.mean_rot, s.s_tran, s.s_rot
    );
}

fn print_report(report: &ExperimentReport) {
    for r in &report.results {
        println!(
            "{:<8} n={:<5} rmse x {:.3} m  y {:.3} m  phi {:.3} deg  |  max x {:.3} m  y {:.3} m  phi {:.3} deg",
            r.method, r.samples, r.rmse.x, r.rmse.y, r.rmse.phi, r.max_error.x, r.max_error.y, r.max_error.phi
        );
    }
}

fn single_method(cfg: &ExperimentConfig, out: &Path, method: Method) -> Result<ExperimentReport> {
    let data: Datasets = datasets(cfg).map_err(|e| e.in_stage("simulate"))?;
    let model = if method.needs_network() {
        let path = cfg.checkpoint.clone().unwrap_or_else(|| out.join(CHECKPOINT_FILE));
        if !path.exists() {
            let msg = format!(
                "checkpoint {} not found; run `train` first or set `checkpoint`",
                path.display()
            );
            return Err(Error::Config(msg).in_stage("infer"));
        }
        Some(load_model(&path).map_err(|e| e.in_stage("infer"))?)
    } else {
        None
    };
    let (result, trace) = evaluate(cfg, method, model.as_ref(), &data).map_err(|e| e.in_stage("infer"))?;
    let report = ExperimentReport {
        name: cfg.name.clone(),
        seed: cfg.seed,
        parameter_count: model.as_ref().map(|m| m.params.count()),
        results: vec![result],
    };
    write_reports(out, &report, &[(method, trace)], cfg.svg).map_err(|e| e.in_stage("eval"))?;
    Ok(report)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(c) => {
            let cfg = load_config(&c)?;
            let data = datasets(&cfg).map_err(|e| e.in_stage("simulate"))?;
            data.save(&c.out).map_err(|e| e.in_stage("simulate"))?;
            println!(
                "{} training scenes, {} evaluation scenes{} written to {}",
                data.train.len(),
                data.eval.len(),
                data.map
                    .as_ref()
                    .map_or(String::new(), |m| format!(", map of {} landmarks", m.len())),
                c.out.display()
            );
        }
        Command::Train(c) => {
            let cfg = load_config(&c)?;
            let data = datasets(&cfg).map_err(|e| e.in_stage("simulate"))?;
            let (model, epochs) = train_model(&cfg, &data, progress).map_err(|e| e.in_stage("train"))?;
            save_checkpoint(&c.out.join(CHECKPOINT_FILE), &model.params, model.net.config())
                .and_then(|_| save_loss_history(&c.out.join("loss.csv"), &epochs))
                .map_err(|e| e.in_stage("train"))?;
            println!(
                "{} parameters, checkpoint written to {}",
                model.params.count(),
                c.out.join(CHECKPOINT_FILE).display()
            );
        }
        Command::Infer { mode, common } => {
            let cfg = load_config(&common)?;
            let method = match mode {
                InferMode::Gps => Method::Gps,
                InferMode::Filter => Method::Filter,
            };
            print_report(&single_method(&cfg, &common.out, method)?);
        }
        Command::Eval(c) => {
            let cfg = load_config(&c)?;
            print_report(&run_experiment(&cfg, &c.out, progress)?);
        }
        Command::Icp(c) => {
            let cfg = load_config(&c)?;
            print_report(&single_method(&cfg, &c.out, Method::Icp)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let e: Error = e;
            eprintln!("error: {}: {}", e.category(), e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
