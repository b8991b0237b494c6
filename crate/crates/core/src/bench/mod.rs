//! Metrics, reference baselines, the manifest-driven benchmark runner and
//! report/plot output.

pub mod baselines;
pub mod metrics;
pub mod plot;

use crate::data::{load_csv, Dataset, MaskMode, Split, SplitSpec, ETT_HOURLY_ROWS};
use crate::error::{Error, Result};
use crate::model::{AdaWaveNet, KvConfig, ModelConfig, Task};
use crate::synth::{Family, SynthSpec};
use crate::train::{evaluate, train, TrainConfig, Trainable};
use baselines::{LinearBaseline, Persistence};
use serde::Deserialize;
use std::collections::BTreeMap;
use std::fmt::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum ModelKind {
    AdaWaveNet,
    Linear,
    Persistence,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::AdaWaveNet => "adawavenet",
            ModelKind::Linear => "linear",
            ModelKind::Persistence => "persistence",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adawavenet" => Ok(ModelKind::AdaWaveNet),
            "linear" => Ok(ModelKind::Linear),
            "persistence" => Ok(ModelKind::Persistence),
            other => Err(Error::Config(format!("unknown model `{other}`"))),
        }
    }
}

/// Rows of the synthetic case study: 384 train and 128 validation rows make
/// up the first half, the second half is the test span.
pub fn synthetic_split(n_points: usize) -> SplitSpec {
    let half = n_points / 2;
    let train = half * 3 / 4;
    SplitSpec::Rows(train, half - train, n_points - half)
}

/// A one-channel dataset of `spec` whose test targets are the denoised signal.
pub fn synthetic_dataset(spec: &SynthSpec) -> Result<Dataset> {
    Dataset::with_reference(
        vec![spec.family.to_string()],
        spec.generate()?,
        Some(spec.denoised_target()?),
        synthetic_split(spec.n_points),
    )
}

/// Outcome of training and testing one model.
#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub task: Task,
    pub dataset: String,
    pub model: ModelKind,
    /// Horizon, mask ratio or super-resolution ratio.
    pub setting: f64,
    pub seed: u64,
    pub mse: f64,
    pub mae: f64,
    pub seconds: f64,
    pub config_hash: String,
}

/// FNV-1a of the configuration text, as 16 hex digits.
pub fn config_hash(text: &str) -> String {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in text.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100000001b3);
    }
    format!("{h:016x}")
}

/// Train (when applicable) and test one model; returns test metrics.
pub fn run_model(
    kind: ModelKind,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    data: &Dataset,
) -> Result<metrics::Metrics> {
    fn go<M: Trainable>(mut m: M, cfg: &TrainConfig, data: &Dataset, fit: bool) -> Result<metrics::Metrics> {
        if fit {
            train(&mut m, data, cfg)?;
        }
        evaluate(&m, data, Split::Test, cfg)
    }
    match kind {
        ModelKind::AdaWaveNet => go(AdaWaveNet::new(model_cfg.clone())?, train_cfg, data, true),
        ModelKind::Linear => go(LinearBaseline::new(model_cfg.clone()), train_cfg, data, true),
        ModelKind::Persistence => go(
            Persistence {
                config: model_cfg.clone(),
            },
            train_cfg,
            data,
            false,
        ),
    }
}

fn default_model() -> String {
    "adawavenet".into()
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

/// One `[[cell]]` of a benchmark manifest.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSpec {
    pub task: String,
    /// `synthetic:<family>` or a CSV path (relative to the manifest).
    pub dataset: String,
    #[serde(default = "default_model")]
    pub model: String,
    /// Horizons (forecast), mask ratios (impute) or ratios (superres).
    #[serde(default)]
    pub settings: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// `ett` or `train,val,test` fractions.
    #[serde(default)]
    pub split: Option<String>,
    /// Extra `key = value` configuration, as in a config file.
    #[serde(default)]
    pub config: BTreeMap<String, toml::Value>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    #[serde(default)]
    pub cell: Vec<CellSpec>,
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("manifest: {e}")))
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BenchOutcome {
    pub results: Vec<RunResult>,
    /// Cells that could not run, with the reason.
    pub skipped: Vec<String>,
}

impl BenchOutcome {
    pub fn is_partial(&self) -> bool {
        !self.skipped.is_empty()
    }
}

/// `None` or `"ett"` gives the ETT hourly borders; otherwise three comma-separated fractions.
pub fn parse_split(s: Option<&str>) -> Result<SplitSpec> {
    match s {
        None => Ok(SplitSpec::default()),
        Some("ett") => Ok(SplitSpec::Rows(ETT_HOURLY_ROWS.0, ETT_HOURLY_ROWS.1, ETT_HOURLY_ROWS.2)),
        Some(f) => {
            let v: Vec<f64> = f
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Config(format!("split `{f}`: {e}")))?;
            match v[..] {
                [a, b, c] => Ok(SplitSpec::Fractions(a, b, c)),
                _ => Err(Error::Config(format!("split `{f}` needs three fractions"))),
            }
        }
    }
}

fn toml_scalar(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Read synthetic-signal keys (`synth_*`) from `kv`.
pub fn synth_from_kv(family: Family, kv: &mut KvConfig) -> Result<SynthSpec> {
    let d = SynthSpec::family(family);
    Ok(SynthSpec {
        noise_std: kv.take_or("synth_noise_std", d.noise_std)?,
        variance_shift: kv.take_or("synth_variance_shift", d.variance_shift)?,
        step: kv.take_or("synth_step", d.step)?,
        onset: kv.take_opt("synth_onset")?,
        n_points: kv.take_or("synth_points", d.n_points)?,
        seed: kv.take_or("synth_seed", d.seed)?,
        ..d
    })
}

fn apply_setting(task: Task, setting: f64, kv: &mut KvConfig) {
    match task {
        Task::Forecast => {
            let n = setting as usize;
            kv.set("input_len", n);
            kv.set("horizon", n);
        }
        Task::Impute => {
            kv.set("mask_ratio", setting);
            if kv.get("mask_mode").is_none() {
                kv.set("mask_mode", MaskMode::Random);
            }
        }
        Task::SuperRes => kv.set("sr_ratio", setting as usize),
    }
}

fn run_cell(cell: &CellSpec, base_dir: &Path, out: &mut BenchOutcome) -> Result<()> {
    let task: Task = cell.task.parse()?;
    let kind: ModelKind = cell.model.parse()?;
    let settings = if cell.settings.is_empty() {
        vec![f64::NAN]
    } else {
        cell.settings.clone()
    };
    for &setting in &settings {
        for &seed in &cell.seeds {
            let mut kv = KvConfig::from_pairs(cell.config.iter().map(|(k, v)| (k.clone(), toml_scalar(v))));
            kv.set("task", task);
            if setting.is_finite() {
                apply_setting(task, setting, &mut kv);
            }
            kv.set("seed", seed);
            if kv.get("train_seed").is_none() {
                kv.set("train_seed", seed);
            }
            let config_text = kv.to_text();
            let data = if let Some(family) = cell.dataset.strip_prefix("synthetic:") {
                let spec = synth_from_kv(family.parse()?, &mut kv)?;
                synthetic_dataset(&spec)?
            } else {
                let path = base_dir.join(&cell.dataset);
                if !path.exists() {
                    out.skipped.push(format!("{}: dataset not found", path.display()));
                    return Ok(());
                }
                load_csv(&path, parse_split(cell.split.as_deref())?)?
            };
            if kv.get("channels").is_none() {
                kv.set("channels", data.num_channels());
            }
            let model_cfg = ModelConfig::from_kv(&mut kv)?;
            let train_cfg = TrainConfig::from_kv(&mut kv)?;
            kv.finish()?;
            let start = Instant::now();
            let m = run_model(kind, &model_cfg, &train_cfg, &data)?;
            let r = RunResult {
                task,
                dataset: cell.dataset.clone(),
                model: kind,
                setting,
                seed,
                mse: m.mse,
                mae: m.mae,
                seconds: start.elapsed().as_secs_f64(),
                config_hash: config_hash(&config_text),
            };
            if r.mae > r.mse.sqrt() * (1.0 + 1e-12) + 1e-15 {
                return Err(Error::NonFinite(format!("MAE {} exceeds sqrt(MSE) {}", r.mae, r.mse.sqrt())));
            }
            log::info!("{} {} {} setting {} seed {}: mse {:.4} mae {:.4}", r.task, r.dataset, r.model, setting, seed, r.mse, r.mae);
            out.results.push(r);
        }
    }
    Ok(())
}

/// Run every cell. Missing dataset files are skipped and reported.
pub fn run_benchmark(manifest: &Manifest, base_dir: &Path) -> Result<BenchOutcome> {
    let mut out = BenchOutcome::default();
    for cell in &manifest.cell {
        run_cell(cell, base_dir, &mut out)?;
    }
    Ok(out)
}

/// Mean and sample standard deviation over seeds for one cell/setting.
#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub task: Task,
    pub dataset: String,
    pub model: ModelKind,
    pub setting: f64,
    pub runs: usize,
    pub mse_mean: f64,
    pub mse_std: f64,
    pub mae_mean: f64,
    pub mae_std: f64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

/// Group results by (task, dataset, setting, model), in first-seen order.
pub fn summarize(results: &[RunResult]) -> Vec<Summary> {
    let mut keys: Vec<(Task, String, u64, ModelKind)> = Vec::new();
    let mut groups: Vec<Vec<&RunResult>> = Vec::new();
    for r in results {
        let key = (r.task, r.dataset.clone(), r.setting.to_bits(), r.model);
        match keys.iter().position(|k| *k == key) {
            Some(i) => groups[i].push(r),
            None => {
                keys.push(key);
                groups.push(vec![r]);
            }
        }
    }
    groups
        .into_iter()
        .map(|g| {
            let (mse_mean, mse_std) = mean_std(&g.iter().map(|r| r.mse).collect::<Vec<_>>());
            let (mae_mean, mae_std) = mean_std(&g.iter().map(|r| r.mae).collect::<Vec<_>>());
            Summary {
                task: g[0].task,
                dataset: g[0].dataset.clone(),
                model: g[0].model,
                setting: g[0].setting,
                runs: g.len(),
                mse_mean,
                mse_std,
                mae_mean,
                mae_std,
            }
        })
        .collect()
}

fn fmt_setting(task: Task, s: f64) -> String {
    if !s.is_finite() {
        return "-".into();
    }
    match task {
        Task::Impute => format!("{:.1}%", s * 100.0),
        _ => format!("{s}"),
    }
}

/// Markdown table: one row per dataset/setting, MSE and MAE columns per model.
pub fn render_markdown(results: &[RunResult]) -> String {
    let summaries = summarize(results);
    let mut models: Vec<ModelKind> = summaries.iter().map(|s| s.model).collect();
    models.sort();
    models.dedup();
    let mut rows: Vec<(Task, String, u64)> = Vec::new();
    for s in &summaries {
        let key = (s.task, s.dataset.clone(), s.setting.to_bits());
        if !rows.contains(&key) {
            rows.push(key);
        }
    }
    let mut md = String::new();
    let _ = write!(md, "| Task | Dataset | Setting |");
    for m in &models {
        let _ = write!(md, " {m} MSE | {m} MAE |");
    }
    md.push('\n');
    md.push_str("|---|---|---|");
    for _ in &models {
        md.push_str("---|---|");
    }
    md.push('\n');
    for (task, dataset, bits) in rows {
        let setting = f64::from_bits(bits);
        let _ = write!(md, "| {task} | {dataset} | {} |", fmt_setting(task, setting));
        for m in &models {
            match summaries
                .iter()
                .find(|s| s.task == task && s.dataset == dataset && s.setting.to_bits() == bits && s.model == *m)
            {
                Some(s) if s.runs > 1 => {
                    let _ = write!(
                        md,
                        " {:.3} ± {:.3} | {:.3} ± {:.3} |",
                        s.mse_mean, s.mse_std, s.mae_mean, s.mae_std
                    );
                }
                Some(s) => {
                    let _ = write!(md, " {:.3} | {:.3} |", s.mse_mean, s.mae_mean);
                }
                None => md.push_str(" - | - |"),
            }
        }
        md.push('\n');
    }
    md
}

/// One line per run.
pub fn results_csv(results: &[RunResult]) -> String {
    let mut s = String::from("task,dataset,model,setting,seed,mse,mae,seconds,config_hash\n");
    for r in results {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{:.3},{}",
            r.task, r.dataset, r.model, r.setting, r.seed, r.mse, r.mae, r.seconds, r.config_hash
        );
    }
    s
}

/// Default location of the manifest-relative data directory.
pub fn manifest_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(model: ModelKind, seed: u64, mse: f64) -> RunResult {
        RunResult {
            task: Task::Forecast,
            dataset: "d".into(),
            model,
            setting: 96.0,
            seed,
            mse,
            mae: mse.sqrt() * 0.8,
            seconds: 0.0,
            config_hash: String::new(),
        }
    }

    #[test]
    fn empty_manifest_gives_empty_table() {
        let m = Manifest::parse("").unwrap();
        let out = run_benchmark(&m, Path::new(".")).unwrap();
        assert!(out.results.is_empty() && !out.is_partial());
        assert_eq!(render_markdown(&out.results).lines().count(), 2);
    }

    #[test]
    fn unknown_manifest_fields_rejected() {
        assert!(Manifest::parse("[[cell]]\ntask='forecast'\ndataset='x'\nbogus=1").is_err());
    }

    #[test]
    fn missing_dataset_is_skipped() {
        let m = Manifest::parse("[[cell]]\ntask = 'forecast'\ndataset = 'nope.csv'\nsettings = [96]").unwrap();
        let out = run_benchmark(&m, Path::new("/nonexistent")).unwrap();
        assert!(out.is_partial());
        assert!(out.results.is_empty());
    }

    #[test]
    fn aggregation_over_seeds() {
        let rs = [result(ModelKind::Linear, 0, 1.0), result(ModelKind::Linear, 1, 3.0)];
        let s = &summarize(&rs)[0];
        assert_eq!((s.runs, s.mse_mean), (2, 2.0));
        assert!((s.mse_std - 2f64.sqrt()).abs() < 1e-12);
        assert!(render_markdown(&rs).contains("2.000 ± 1.414"));
    }

    #[test]
    fn hash_is_stable() {
        assert_eq!(config_hash(""), "cbf29ce484222325");
        assert_ne!(config_hash("a=1"), config_hash("a=2"));
    }

    #[test]
    fn split_parsing() {
        assert_eq!(parse_split(Some("ett")).unwrap(), SplitSpec::Rows(8640, 2880, 2880));
        assert_eq!(parse_split(Some("0.6,0.2,0.2")).unwrap(), SplitSpec::Fractions(0.6, 0.2, 0.2));
        assert!(parse_split(Some("0.5")).is_err());
    }
}
