use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use stagerec::commands::{self, SweepPoint};
use stagerec::config::{parse_duration, parse_list, RunConfig};
use stagerec_core::model::Ablation;
use stagerec_core::training::Precision;

#[derive(Parser)]
#[command(name = "stagerec", version, about = "Stage-wise evolving-interest news recommender")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; fields left out take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "runs/out")]
    out: PathBuf,
    #[arg(long)]
    ablation: Option<Ablation>,
    /// Stage window, e.g. `1w`, `3d`, `12h` or seconds.
    #[arg(long)]
    window: Option<String>,
    /// Floating-point precision: 32 or 64.
    #[arg(long, value_parser = parse_precision)]
    precision: Option<Precision>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
}

fn parse_precision(s: &str) -> Result<Precision, String> {
    match s {
        "32" | "f32" => Ok(Precision::F32),
        "64" | "f64" => Ok(Precision::F64),
        _ => Err(format!("precision must be 32 or 64, got {s:?}")),
    }
}

impl Common {
    fn config(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(a) = self.ablation {
            c.train.model.ablation = a;
        }
        if let Some(w) = &self.window {
            c.window_seconds = parse_duration(w)?;
        }
        if let Some(p) = self.precision {
            c.train.precision = p;
        }
        if let Some(lr) = self.learning_rate {
            c.train.learning_rate = lr;
        }
        if let Some(e) = self.max_epochs {
            c.train.max_epochs = e;
        }
        if let Some(d) = self.dim {
            c.train.model.dim = d;
        }
        c.resolve()
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic drifting-interest dataset.
    GenData(Common),
    /// Train one model and evaluate it on the test stage.
    Train(Common),
    /// Evaluate a saved checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "runs/eval")]
        out: PathBuf,
    },
    /// Train the full model and every ablation.
    Ablate(Common),
    /// Vary the stage window or a loss weight.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated windows, e.g. `1d,3d,1w`.
        #[arg(long = "windows")]
        windows: Option<String>,
        #[arg(long)]
        lambda_t: Option<String>,
        #[arg(long)]
        lambda_cl: Option<String>,
        #[arg(long)]
        lambda_sl: Option<String>,
    },
    /// Aggregate metrics, ablation or sweep CSVs.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "runs/report")]
        out: PathBuf,
    },
}

fn sweep_points(
    windows: &Option<String>,
    lt: &Option<String>,
    lcl: &Option<String>,
    lsl: &Option<String>,
) -> Result<Vec<SweepPoint>> {
    let mut points = Vec::new();
    if let Some(w) = windows {
        for t in w.split(',') {
            let t = t.trim();
            points.push(SweepPoint::Window(t.to_string(), parse_duration(t)?));
        }
    }
    for (list, make) in [
        (lt, SweepPoint::LambdaT as fn(f64) -> SweepPoint),
        (lcl, SweepPoint::LambdaCl),
        (lsl, SweepPoint::LambdaSl),
    ] {
        if let Some(l) = list {
            points.extend(parse_list(l)?.into_iter().map(make));
        }
    }
    Ok(points)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(c) => commands::gen_data(&c.config()?, &c.out),
        Command::Train(c) => {
            let r = commands::train(&c.config()?, &c.out)?;
            println!(
                "{} test auc {:.4} mrr {:.4} ndcg@5 {:.4} ndcg@10 {:.4}",
                r.run_id, r.test.auc, r.test.mrr, r.test.ndcg5, r.test.ndcg10
            );
            Ok(())
        }
        Command::Eval { checkpoint, out } => {
            let r = commands::eval(&checkpoint, &out)?;
            println!("{} test auc {:.4} mrr {:.4}", r.run_id, r.test.auc, r.test.mrr);
            Ok(())
        }
        Command::Ablate(c) => {
            for r in commands::ablate(&c.config()?, &c.out)? {
                println!("{:<7} test auc {:.4} mrr {:.4}", r.ablation, r.test.auc, r.test.mrr);
            }
            Ok(())
        }
        Command::Sweep {
            common,
            windows,
            lambda_t,
            lambda_cl,
            lambda_sl,
        } => {
            let points = sweep_points(&windows, &lambda_t, &lambda_cl, &lambda_sl)?;
            for r in commands::sweep(&common.config()?, &points, &common.out)? {
                println!("{}={} {}", r.param, r.value, r.status);
            }
            Ok(())
        }
        Command::Report { inputs, out } => commands::report_summary(&inputs, &out).map(|_| ()),
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    run(Cli::parse()).context("stagerec failed")
}
