//! The subcommands. Every file is written under the run's output directory.

use std::fs;
use std::path::{Component, Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use stagerec_core::data::{synth_generate, SynthConfig};
use stagerec_core::eval::{evaluate_split, EvalSummary, FreshnessReport, RankingMetrics};
use stagerec_core::model::{Ablation, ModelParams};
use stagerec_core::numerics::{Real, Tensor};
use stagerec_core::training::{run_training, EpochLog, Precision, Prepared};
use stagerec_core::Error as CoreError;

use crate::checkpoint::Checkpoint;
use crate::config::{DataSource, FileSource, RunConfig};
use crate::dataset::{self, Dataset};

/// Everything needed to reproduce a run, written before training starts.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub command: String,
    pub config: RunConfig,
    pub config_hash: String,
    pub source_revision: String,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    pub wall_seconds: Option<f64>,
}

impl RunManifest {
    fn start(command: &str, cfg: &RunConfig, out: &Path) -> Self {
        RunManifest {
            run_id: cfg.run_id(),
            command: command.into(),
            config: cfg.clone(),
            config_hash: cfg.hash(),
            source_revision: source_revision(),
            seed: cfg.seed,
            output_dir: out.to_path_buf(),
            started_unix: unix_now(),
            finished_unix: None,
            wall_seconds: None,
        }
    }

    fn finish(&mut self, started: Instant) {
        self.finished_unix = Some(unix_now());
        self.wall_seconds = Some(started.elapsed().as_secs_f64());
    }
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn source_revision() -> String {
    let git = std::process::Command::new("git")
        .args(["rev-parse", "--short", "HEAD"])
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string());
    match git {
        Some(rev) if !rev.is_empty() => format!("{} ({rev})", env!("CARGO_PKG_VERSION")),
        _ => env!("CARGO_PKG_VERSION").to_string(),
    }
}

/// Output directory handle; refuses names that would escape it.
pub struct OutDir(PathBuf);

impl OutDir {
    pub fn create(path: &Path) -> Result<Self> {
        fs::create_dir_all(path).with_context(|| format!("creating output directory {}", path.display()))?;
        Ok(OutDir(path.to_path_buf()))
    }

    pub fn path(&self, name: &str) -> Result<PathBuf> {
        let p = Path::new(name);
        let mut parts = p.components();
        match (parts.next(), parts.next()) {
            (Some(Component::Normal(_)), None) if !name.contains('/') => Ok(self.0.join(p)),
            _ => bail!("output name {name:?} must be a plain file name"),
        }
    }

    pub fn write(&self, name: &str, contents: &[u8]) -> Result<PathBuf> {
        let path = self.path(name)?;
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    pub fn write_json<S: Serialize>(&self, name: &str, value: &S) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn write_csv<S: Serialize>(&self, name: &str, rows: &[S]) -> Result<PathBuf> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r)?;
        }
        self.write(name, &w.into_inner()?)
    }

    pub fn dir(&self) -> &Path {
        &self.0
    }
}

/// Full evaluation record of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub run_id: String,
    pub config_hash: String,
    pub ablation: Ablation,
    pub seed: u64,
    pub precision: Precision,
    pub n_stages: usize,
    pub best_epoch: usize,
    pub best_val_auc: f64,
    pub validation: RankingMetrics,
    pub test: RankingMetrics,
    pub freshness: FreshnessReport,
    /// Whether freshness uses known publication stages or first clicks.
    pub known_publication: bool,
    pub evolution_distance: f64,
}

/// Flat CSV row of a [`MetricsReport`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub run_id: String,
    pub config_hash: String,
    pub ablation: String,
    pub seed: u64,
    pub auc: f64,
    pub mrr: f64,
    pub ndcg5: f64,
    pub ndcg10: f64,
    pub new_pct: f64,
    pub historical_pct: f64,
    pub nrank: Option<f64>,
    pub orank: Option<f64>,
    pub val_auc: f64,
    pub evolution_distance: f64,
}

impl MetricsReport {
    pub fn row(&self) -> MetricsRow {
        MetricsRow {
            run_id: self.run_id.clone(),
            config_hash: self.config_hash.clone(),
            ablation: self.ablation.to_string(),
            seed: self.seed,
            auc: self.test.auc,
            mrr: self.test.mrr,
            ndcg5: self.test.ndcg5,
            ndcg10: self.test.ndcg10,
            new_pct: self.freshness.new_pct,
            historical_pct: self.freshness.historical_pct,
            nrank: self.freshness.nrank,
            orank: self.freshness.orank,
            val_auc: self.best_val_auc,
            evolution_distance: self.evolution_distance,
        }
    }
}

pub struct RunResult {
    pub report: MetricsReport,
    pub log: Vec<EpochLog>,
    pub checkpoint: Checkpoint,
}

fn report(cfg: &RunConfig, data: &Dataset, best_epoch: usize, best_val_auc: f64, eval: EvalSummary) -> MetricsReport {
    MetricsReport {
        run_id: cfg.run_id(),
        config_hash: cfg.hash(),
        ablation: cfg.train.model.ablation,
        seed: cfg.seed,
        precision: cfg.train.precision,
        n_stages: data.split.n_stages(),
        best_epoch,
        best_val_auc,
        validation: eval.validation,
        test: eval.test,
        freshness: eval.freshness,
        known_publication: data.known_publication,
        evolution_distance: eval.evolution_distance,
    }
}

fn train_with<T: Real>(cfg: &RunConfig, data: &Dataset) -> Result<RunResult> {
    let features: Option<Tensor<T>> = data.features.as_ref().map(|f| f.cast());
    let outcome = run_training::<T>(&cfg.train, &data.split, features.as_ref())?;
    let prepared = Prepared::new(&data.split, features.as_ref())?;
    let inputs = prepared.inputs(&cfg.train.model);
    let eval = evaluate_split(&outcome.params, &inputs, &data.split, &cfg.freshness)?;
    Ok(RunResult {
        report: report(cfg, data, outcome.best_epoch, outcome.best_val_auc, eval),
        log: outcome.log,
        checkpoint: Checkpoint::new(cfg, &outcome.params, outcome.best_epoch, outcome.best_val_auc),
    })
}

/// Trains on `data` and evaluates the best-validation parameters.
pub fn train_and_evaluate(cfg: &RunConfig, data: &Dataset) -> Result<RunResult> {
    match cfg.train.precision {
        Precision::F32 => train_with::<f32>(cfg, data),
        Precision::F64 => train_with::<f64>(cfg, data),
    }
}

fn eval_with<T: Real>(ckpt: &Checkpoint, data: &Dataset) -> Result<MetricsReport> {
    let cfg = &ckpt.config;
    let features: Option<Tensor<T>> = data.features.as_ref().map(|f| f.cast());
    let p = &data.split.partition;
    let mut params = ModelParams::<T>::init(
        &cfg.train.model,
        p.n_users,
        p.n_items,
        features.as_ref().map(|f| f.cols()),
        &mut stagerec_core::seeds::rng(0, "restore"),
    )?;
    ckpt.restore(&mut params)?;
    let prepared = Prepared::new(&data.split, features.as_ref())?;
    let inputs = prepared.inputs(&cfg.train.model);
    let eval = evaluate_split(&params, &inputs, &data.split, &cfg.freshness)?;
    Ok(report(cfg, data, ckpt.best_epoch, ckpt.best_val_auc, eval))
}

pub fn evaluate_checkpoint(ckpt: &Checkpoint) -> Result<MetricsReport> {
    let data = dataset::load(&ckpt.config)?;
    match ckpt.config.train.precision {
        Precision::F32 => eval_with::<f32>(ckpt, &data),
        Precision::F64 => eval_with::<f64>(ckpt, &data),
    }
}

/// `gen-data`: writes the log, the ground-truth sidecar and a config that reads them back.
pub fn gen_data(cfg: &RunConfig, out: &Path) -> Result<()> {
    let started = Instant::now();
    let out = OutDir::create(out)?;
    let mut manifest = RunManifest::start("gen-data", cfg, out.dir());
    out.write_json("manifest.json", &manifest)?;
    let DataSource::Synthetic(s) = &cfg.data else {
        bail!("gen-data needs a synthetic data source in the config");
    };
    let data = synth_generate(s)?;
    let interactions = out.write("interactions.tsv", data.log.to_tsv().as_bytes())?;
    let truth = out.write_json("ground_truth.json", &data.truth)?;
    let files = RunConfig {
        data: DataSource::Files(FileSource {
            interactions: absolute(&interactions)?,
            item_features: None,
            feature_dim: None,
            ground_truth: Some(absolute(&truth)?),
        }),
        window_seconds: s.stage_seconds,
        ..cfg.clone()
    };
    out.write_json("config.json", &files)?;
    manifest.finish(started);
    out.write_json("manifest.json", &manifest)?;
    Ok(())
}

fn absolute(p: &Path) -> Result<PathBuf> {
    fs::canonicalize(p).with_context(|| format!("resolving {}", p.display()))
}

/// `train`: checkpoint, per-epoch log and test metrics.
pub fn train(cfg: &RunConfig, out: &Path) -> Result<MetricsReport> {
    let started = Instant::now();
    let out = OutDir::create(out)?;
    let mut manifest = RunManifest::start("train", cfg, out.dir());
    out.write_json("manifest.json", &manifest)?;
    let data = dataset::load(cfg)?;
    let result = train_and_evaluate(cfg, &data)?;
    out.write_csv("train_log.csv", &result.log)?;
    out.write_json("checkpoint.json", &result.checkpoint)?;
    write_metrics(&out, &result.report)?;
    manifest.finish(started);
    out.write_json("manifest.json", &manifest)?;
    Ok(result.report)
}

fn write_metrics(out: &OutDir, report: &MetricsReport) -> Result<()> {
    out.write_json("metrics.json", report)?;
    out.write_csv("metrics.csv", &[report.row()])?;
    Ok(())
}

/// `eval`: metrics of a saved checkpoint on the split its config describes.
pub fn eval(checkpoint: &Path, out: &Path) -> Result<MetricsReport> {
    let ckpt = Checkpoint::parse(&dataset::read_text(checkpoint)?)
        .with_context(|| format!("loading {}", checkpoint.display()))?;
    let out = OutDir::create(out)?;
    let report = evaluate_checkpoint(&ckpt)?;
    write_metrics(&out, &report)?;
    Ok(report)
}

/// `ablate`: the full model and the four ablations on the same data and seed.
pub fn ablate(cfg: &RunConfig, out: &Path) -> Result<Vec<MetricsReport>> {
    let started = Instant::now();
    let out = OutDir::create(out)?;
    let mut manifest = RunManifest::start("ablate", cfg, out.dir());
    out.write_json("manifest.json", &manifest)?;
    let data = dataset::load(cfg)?;
    let mut reports = Vec::new();
    for a in Ablation::ALL {
        let mut c = cfg.clone();
        c.train.model.ablation = a;
        log::info!("ablation {a}");
        reports.push(train_and_evaluate(&c, &data)?.report);
    }
    let rows: Vec<MetricsRow> = reports.iter().map(MetricsReport::row).collect();
    out.write_csv("ablation.csv", &rows)?;
    manifest.finish(started);
    out.write_json("manifest.json", &manifest)?;
    Ok(reports)
}

/// One setting of a sweep.
#[derive(Clone, Debug, PartialEq)]
pub enum SweepPoint {
    Window(String, u64),
    LambdaT(f64),
    LambdaCl(f64),
    LambdaSl(f64),
}

impl SweepPoint {
    fn label(&self) -> (&'static str, String) {
        match self {
            SweepPoint::Window(text, _) => ("window", text.clone()),
            SweepPoint::LambdaT(x) => ("lambda_t", x.to_string()),
            SweepPoint::LambdaCl(x) => ("lambda_cl", x.to_string()),
            SweepPoint::LambdaSl(x) => ("lambda_sl", x.to_string()),
        }
    }

    fn apply(&self, cfg: &mut RunConfig) {
        match *self {
            SweepPoint::Window(_, w) => cfg.window_seconds = w,
            SweepPoint::LambdaT(x) => cfg.train.weights.lambda_t = x,
            SweepPoint::LambdaCl(x) => cfg.train.weights.lambda_cl = x,
            SweepPoint::LambdaSl(x) => cfg.train.weights.lambda_sl = x,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: String,
    pub value: String,
    pub n_stages: Option<usize>,
    pub auc: Option<f64>,
    pub mrr: Option<f64>,
    pub ndcg5: Option<f64>,
    pub ndcg10: Option<f64>,
    pub evolution_distance: Option<f64>,
    /// `ok`, or the reason the setting could not run.
    pub status: String,
}

/// `sweep`: one training run per window size or loss weight.
pub fn sweep(cfg: &RunConfig, points: &[SweepPoint], out: &Path) -> Result<Vec<SweepRow>> {
    if points.is_empty() {
        bail!("sweep needs at least one of --window, --lambda-t, --lambda-cl, --lambda-sl");
    }
    let started = Instant::now();
    let out = OutDir::create(out)?;
    let mut manifest = RunManifest::start("sweep", cfg, out.dir());
    out.write_json("manifest.json", &manifest)?;
    let mut rows = Vec::new();
    for p in points {
        let mut c = cfg.clone();
        p.apply(&mut c);
        let (param, value) = p.label();
        let mut row = SweepRow {
            param: param.into(),
            value,
            n_stages: None,
            auc: None,
            mrr: None,
            ndcg5: None,
            ndcg10: None,
            evolution_distance: None,
            status: "ok".into(),
        };
        let outcome = c.clone().resolve().and_then(|c| {
            let data = dataset::load(&c)?;
            train_and_evaluate(&c, &data)
        });
        match outcome {
            Ok(r) => {
                row.n_stages = Some(r.report.n_stages);
                row.auc = Some(r.report.test.auc);
                row.mrr = Some(r.report.test.mrr);
                row.ndcg5 = Some(r.report.test.ndcg5);
                row.ndcg10 = Some(r.report.test.ndcg10);
                row.evolution_distance = Some(r.report.evolution_distance);
            }
            Err(e) => match e.downcast_ref::<CoreError>() {
                Some(CoreError::TooFewStages { found, .. }) => {
                    row.n_stages = Some(*found);
                    row.status = format!("error: {e}");
                }
                _ => return Err(e),
            },
        }
        rows.push(row);
    }
    out.write_csv("sweep.csv", &rows)?;
    manifest.finish(started);
    out.write_json("manifest.json", &manifest)?;
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub group: String,
    pub runs: usize,
    pub auc_mean: f64,
    pub auc_std: f64,
    pub mrr_mean: f64,
    pub ndcg5_mean: f64,
    pub ndcg10_mean: f64,
    pub nrank_mean: Option<f64>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = if xs.len() > 1 {
        xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, v.sqrt())
}

/// `report`: groups rows of metrics, ablation or sweep CSVs and averages them.
pub fn report_summary(inputs: &[PathBuf], out: &Path) -> Result<Vec<SummaryRow>> {
    if inputs.is_empty() {
        bail!("report needs at least one CSV input");
    }
    let mut groups: Vec<(String, Vec<csv::StringRecord>)> = Vec::new();
    let mut header: Option<csv::StringRecord> = None;
    for path in inputs {
        let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
        let h = r.headers()?.clone();
        if let Some(prev) = &header {
            if *prev != h {
                bail!("{} has different columns from the other inputs", path.display());
            }
        }
        header = Some(h.clone());
        let col = |name: &str| h.iter().position(|c| c == name);
        let key_cols: Vec<usize> = match (col("param"), col("value"), col("ablation")) {
            (Some(p), Some(v), _) => vec![p, v],
            (_, _, Some(a)) => vec![a],
            _ => Vec::new(),
        };
        for rec in r.records() {
            let rec = rec.with_context(|| format!("reading {}", path.display()))?;
            let key = if key_cols.is_empty() {
                "all".to_string()
            } else {
                key_cols.iter().map(|&k| rec.get(k).unwrap_or("")).collect::<Vec<_>>().join("=")
            };
            match groups.iter_mut().find(|(k, _)| *k == key) {
                Some((_, v)) => v.push(rec),
                None => groups.push((key, vec![rec])),
            }
        }
    }
    let header = header.expect("at least one input");
    let col = |name: &str| header.iter().position(|c| c == name);
    let values = |recs: &[csv::StringRecord], name: &str| -> Vec<f64> {
        col(name)
            .map(|k| {
                recs.iter()
                    .filter_map(|r| r.get(k).and_then(|s| s.parse::<f64>().ok()))
                    .collect()
            })
            .unwrap_or_default()
    };
    let rows: Vec<SummaryRow> = groups
        .iter()
        .map(|(key, recs)| {
            let (auc_mean, auc_std) = mean_std(&values(recs, "auc"));
            let nrank = values(recs, "nrank");
            SummaryRow {
                group: key.clone(),
                runs: recs.len(),
                auc_mean,
                auc_std,
                mrr_mean: mean_std(&values(recs, "mrr")).0,
                ndcg5_mean: mean_std(&values(recs, "ndcg5")).0,
                ndcg10_mean: mean_std(&values(recs, "ndcg10")).0,
                nrank_mean: if nrank.is_empty() { None } else { Some(mean_std(&nrank).0) },
            }
        })
        .collect();
    let out = OutDir::create(out)?;
    out.write_csv("summary.csv", &rows)?;
    let mut md = String::from("| group | runs | AUC | MRR | nDCG@5 | nDCG@10 | NRank |\n|---|---|---|---|---|---|---|\n");
    for r in &rows {
        md.push_str(&format!(
            "| {} | {} | {:.4} ± {:.4} | {:.4} | {:.4} | {:.4} | {} |\n",
            r.group,
            r.runs,
            r.auc_mean,
            r.auc_std,
            r.mrr_mean,
            r.ndcg5_mean,
            r.ndcg10_mean,
            r.nrank_mean.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into())
        ));
    }
    out.write("summary.md", md.as_bytes())?;
    print!("{md}");
    Ok(rows)
}

/// Default synthetic config, for documentation and `--config`-less runs.
pub fn default_synthetic() -> SynthConfig {
    SynthConfig::default()
}

/// Downcasts a core error out of an anyhow chain, if that is the root.
pub fn core_error(e: &anyhow::Error) -> Option<&CoreError> {
    e.downcast_ref::<CoreError>()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn out_dir_rejects_escapes() {
        let tmp = tempfile::tempdir().unwrap();
        let out = OutDir::create(tmp.path()).unwrap();
        assert!(out.path("../x.csv").is_err());
        assert!(out.path("/etc/passwd").is_err());
        assert!(out.path("a/b.csv").is_err());
        assert_eq!(out.path("metrics.csv").unwrap(), tmp.path().join("metrics.csv"));
    }

    #[test]
    fn sample_std() {
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
    }
}
