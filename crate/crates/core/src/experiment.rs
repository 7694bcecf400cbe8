//! Config-driven k-fold experiments: train every (optimizer, seed, fold)
//! job, save held-out predictions, then build stand-alone and ensemble
//! reports from the saved files.
//!
//! Output layout under the output directory:
//!
//! ```text
//! predictions/<run_id>.fold<f>.pred
//! checkpoints/<run_id>.fold<f>.ckpt   (when save_checkpoints = true)
//! traces/<run_id>.fold<f>.json        (when trace = true)
//! manifest.json
//! runs.csv  summary.csv  ensembles.csv  report.txt
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::ensemble::{
    fuse, summarize, EvalReport, FusionRule, PredictionMeta, PredictionSet, Summary,
};
use crate::error::{Error, Result};
use crate::formats::{self, MetricRow};
use crate::model::{Activation, ModelParams, ModelSpec};
use crate::optim::{OptimConfig, Optimizer};
use crate::tensor::Tensor;
use crate::train::{predict, train, TrainConfig};

pub const BUNDLED_DIGITS: &str = "bundled:digits";
pub const WORKERS_ENV: &str = "GRADKIT_WORKERS";

/// Mixed into the run seed to get the minibatch/augmentation stream, so it
/// is not the same stream that initialized the weights.
const SHUFFLE_SEED_MIX: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// A text file path (relative to the config file), or `bundled:digits`.
    pub path: String,
    /// `[height, width]` when samples are images.
    pub image: Option<[usize; 2]>,
    pub feature_scale: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            path: BUNDLED_DIGITS.into(),
            image: Some([8, 8]),
            feature_scale: 1.0 / 16.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64],
            activation: Activation::Relu,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerEntry {
    /// Prefix of the run ids; defaults to the variant name.
    #[serde(default)]
    pub name: Option<String>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub optim: OptimConfig,
}

impl OptimizerEntry {
    pub fn label(&self) -> String {
        self.name
            .clone()
            .unwrap_or_else(|| self.optim.variant.name().to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleEntry {
    pub name: String,
    /// `"<entry>"` for every seed of an optimizer entry, `"<entry>:<n>"`
    /// for its first `n` seeds.
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub folds: usize,
    pub fold_seed: u64,
    /// 0 uses every available core.
    pub workers: usize,
    pub fusion_rule: FusionRule,
    pub save_checkpoints: bool,
    /// Write each job's training history as JSON.
    pub trace: bool,
    pub optimizers: Vec<OptimizerEntry>,
    pub ensembles: Vec<EnsembleEntry>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            folds: 5,
            fold_seed: 0,
            workers: 0,
            fusion_rule: FusionRule::Probabilities,
            save_checkpoints: false,
            trace: false,
            optimizers: Vec::new(),
            ensembles: Vec::new(),
        }
    }
}

/// One trained network: an optimizer entry at one seed, over every fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunSpec {
    pub run_id: String,
    pub entry: usize,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg: Self =
            toml::from_str(text).map_err(|e| Error::parse(origin, e.to_string()))?;
        if cfg.dataset.path != BUNDLED_DIGITS {
            let p = Path::new(&cfg.dataset.path);
            if p.is_relative() {
                if let Some(dir) = origin.parent() {
                    cfg.dataset.path = dir.join(p).to_string_lossy().into_owned();
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        if self.optimizers.is_empty() {
            return Err(Error::Config(
                "at least one [[optimizers]] entry is required".into(),
            ));
        }
        if self.folds < 2 {
            return Err(Error::Config(format!(
                "folds must be >= 2 (got {})",
                self.folds
            )));
        }
        if self.model.hidden.is_empty() || self.model.hidden.contains(&0) {
            return Err(Error::Config(
                "model.hidden needs at least one non-zero width".into(),
            ));
        }
        if !(self.dataset.feature_scale > 0.0 && self.dataset.feature_scale.is_finite()) {
            return Err(Error::Config("dataset.feature_scale must be > 0".into()));
        }
        self.train.validate()?;
        let mut labels: Vec<String> = Vec::new();
        for entry in &self.optimizers {
            let label = entry.label();
            formats::validate_token("optimizer name", &label)?;
            if labels.contains(&label) {
                return Err(Error::Config(format!("duplicate optimizer name `{label}`")));
            }
            if entry.seeds.is_empty() {
                return Err(Error::Config(format!("`{label}` has no seeds")));
            }
            let mut seen = entry.seeds.clone();
            seen.sort_unstable();
            if let Some(w) = seen.windows(2).find(|w| w[0] == w[1]) {
                return Err(Error::Config(format!(
                    "`{label}` lists seed {} twice",
                    w[0]
                )));
            }
            entry
                .optim
                .validate()
                .map_err(|e| Error::Config(format!("`{label}`: {e}")))?;
            labels.push(label);
        }
        let mut names: Vec<&str> = Vec::new();
        for ens in &self.ensembles {
            if names.contains(&ens.name.as_str()) {
                return Err(Error::Config(format!(
                    "duplicate ensemble name `{}`",
                    ens.name
                )));
            }
            names.push(&ens.name);
            self.ensemble_runs(ens)?;
        }
        Ok(())
    }

    /// Every run in config order.
    pub fn runs(&self) -> Vec<RunSpec> {
        self.optimizers
            .iter()
            .enumerate()
            .flat_map(|(entry, e)| {
                let label = e.label();
                e.seeds.iter().map(move |&seed| RunSpec {
                    run_id: format!("{label}-s{seed}"),
                    entry,
                    seed,
                })
            })
            .collect()
    }

    /// Run ids that make up `ens`.
    pub fn ensemble_runs(&self, ens: &EnsembleEntry) -> Result<Vec<String>> {
        if ens.members.is_empty() {
            return Err(Error::Config(format!(
                "ensemble `{}` has no members",
                ens.name
            )));
        }
        let mut ids = Vec::new();
        for item in &ens.members {
            let (label, count) = match item.split_once(':') {
                Some((l, n)) => {
                    let n: usize = n.parse().map_err(|_| {
                        Error::Config(format!(
                            "ensemble `{}`: bad member count in `{item}`",
                            ens.name
                        ))
                    })?;
                    (l, Some(n))
                }
                None => (item.as_str(), None),
            };
            let entry = self
                .optimizers
                .iter()
                .find(|e| e.label() == label)
                .ok_or_else(|| {
                    Error::Config(format!(
                        "ensemble `{}`: unknown optimizer `{label}`",
                        ens.name
                    ))
                })?;
            let n = count.unwrap_or(entry.seeds.len());
            if n == 0 || n > entry.seeds.len() {
                return Err(Error::Config(format!(
                    "ensemble `{}` asks for {n} runs of `{label}`, which has {}",
                    ens.name,
                    entry.seeds.len()
                )));
            }
            ids.extend(entry.seeds[..n].iter().map(|s| format!("{label}-s{s}")));
        }
        Ok(ids)
    }

    /// Keeps only the optimizer entries of `variant`, and the ensembles
    /// built purely from them. Returns the names of dropped ensembles.
    pub fn retain_variant(&mut self, variant: crate::optim::Variant) -> Result<Vec<String>> {
        self.optimizers.retain(|e| e.optim.variant == variant);
        if self.optimizers.is_empty() {
            return Err(Error::Config(format!(
                "no optimizer entry uses `{variant}`"
            )));
        }
        let (kept, dropped): (Vec<EnsembleEntry>, Vec<EnsembleEntry>) =
            std::mem::take(&mut self.ensembles)
                .into_iter()
                .partition(|ens| self.ensemble_runs(ens).is_ok());
        self.ensembles = kept;
        Ok(dropped.into_iter().map(|e| e.name).collect())
    }

    /// Shifts every seed by `offset`.
    pub fn offset_seeds(&mut self, offset: u64) {
        for e in &mut self.optimizers {
            e.seeds.iter_mut().for_each(|s| *s = s.wrapping_add(offset));
        }
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        let mut data = if self.dataset.path == BUNDLED_DIGITS {
            Dataset::bundled_digits()
        } else {
            let image = self.dataset.image.map(|[h, w]| (h, w));
            Dataset::load(
                Path::new(&self.dataset.path),
                image,
                self.dataset.feature_scale,
            )?
        };
        data.assign_folds(self.folds, self.fold_seed)?;
        Ok(data)
    }

    pub fn model_spec(&self, dataset: &Dataset, seed: u64) -> Result<ModelSpec> {
        let mut layers = vec![dataset.feature_len()];
        layers.extend(&self.model.hidden);
        layers.push(dataset.class_count);
        ModelSpec::new(layers, self.model.activation, seed)
    }

    /// Training settings for the run with `seed`.
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed: seed ^ SHUFFLE_SEED_MIX,
            ..self.train.clone()
        }
    }

    /// `GRADKIT_WORKERS` wins over the config value; 0 means all cores.
    pub fn worker_count(&self) -> Result<usize> {
        let n = match std::env::var(WORKERS_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{WORKERS_ENV}=`{v}` is not a count")))?,
            Err(_) => self.workers,
        };
        Ok(if n == 0 {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        } else {
            n
        })
    }
}

pub fn prediction_path(out: &Path, run_id: &str, fold: usize) -> PathBuf {
    out.join("predictions")
        .join(format!("{run_id}.fold{fold}.pred"))
}

pub fn trace_path(out: &Path, run_id: &str, fold: usize) -> PathBuf {
    out.join("traces").join(format!("{run_id}.fold{fold}.json"))
}

pub fn checkpoint_path(out: &Path, run_id: &str, fold: usize) -> PathBuf {
    out.join("checkpoints")
        .join(format!("{run_id}.fold{fold}.ckpt"))
}

/// Named tensors for a trained model and its optimizer state.
pub fn checkpoint_entries(params: &ModelParams, optimizer: &Optimizer) -> Vec<(String, Tensor)> {
    let mut entries: Vec<(String, Tensor)> = params
        .tensors
        .iter()
        .enumerate()
        .map(|(i, t)| (format!("param.{i}"), t.clone()))
        .collect();
    for (i, state) in optimizer.states().iter().enumerate() {
        entries.extend(state.to_named(&format!("optim.{i}")));
    }
    entries
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run_id: String,
    pub optimizer: String,
    pub variant: String,
    pub seed: u64,
    pub report: Option<EvalReport>,
    /// Why the run was excluded.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntrySummary {
    pub optimizer: String,
    pub runs: usize,
    pub accuracy: Summary,
    pub f_measure: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub name: String,
    pub requested: Vec<String>,
    pub used: Vec<String>,
    pub report: Option<EvalReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub runs: Vec<RunResult>,
    pub summaries: Vec<EntrySummary>,
    pub ensembles: Vec<EnsembleResult>,
    /// Some run or ensemble failed and was left out.
    pub partial: bool,
}

impl ExperimentReport {
    pub fn run(&self, run_id: &str) -> Option<&RunResult> {
        self.runs.iter().find(|r| r.run_id == run_id)
    }

    pub fn ensemble(&self, name: &str) -> Option<&EnsembleResult> {
        self.ensembles.iter().find(|e| e.name == name)
    }

    pub fn run_rows(&self) -> Vec<MetricRow> {
        self.runs
            .iter()
            .filter_map(|r| {
                r.report
                    .as_ref()
                    .map(|rep| MetricRow::from_report(&r.run_id, rep))
            })
            .flatten()
            .collect()
    }

    pub fn ensemble_rows(&self) -> Vec<MetricRow> {
        self.ensembles
            .iter()
            .filter_map(|e| {
                e.report
                    .as_ref()
                    .map(|rep| MetricRow::from_report(&e.name, rep))
            })
            .flatten()
            .collect()
    }

    pub fn summary_csv(&self) -> String {
        let mut out =
            String::from("method,runs,accuracy_mean,accuracy_std,f_measure_mean,f_measure_std\n");
        for s in &self.summaries {
            writeln!(
                out,
                "{},{},{:.6},{:.6},{:.6},{:.6}",
                s.optimizer,
                s.runs,
                s.accuracy.mean,
                s.accuracy.std,
                s.f_measure.mean,
                s.f_measure.std
            )
            .unwrap();
        }
        out
    }

    /// Stand-alone avg/std per optimizer, then ensembles, as aligned text.
    pub fn text(&self) -> String {
        let width = self
            .summaries
            .iter()
            .map(|s| s.optimizer.len())
            .max()
            .unwrap_or(0)
            .max(9);
        let mut out = String::from("stand-alone (percent, mean / std over seeds)\n");
        writeln!(
            out,
            "{:<width$}  {:>4}  {:>8}  {:>6}  {:>9}  {:>6}",
            "optimizer", "runs", "accuracy", "std", "f-measure", "std"
        )
        .unwrap();
        for s in &self.summaries {
            writeln!(
                out,
                "{:<width$}  {:>4}  {:>8.2}  {:>6.2}  {:>9.2}  {:>6.2}",
                s.optimizer,
                s.runs,
                100.0 * s.accuracy.mean,
                100.0 * s.accuracy.std,
                100.0 * s.f_measure.mean,
                100.0 * s.f_measure.std
            )
            .unwrap();
        }
        let rows = self.ensemble_rows();
        if !rows.is_empty() {
            out.push_str("\nensembles (percent, pooled over folds)\n");
            out.push_str(&formats::metrics_table(&rows));
        }
        let failed: Vec<String> = self
            .runs
            .iter()
            .filter_map(|r| r.error.as_ref().map(|e| format!("{}: {e}", r.run_id)))
            .chain(
                self.ensembles
                    .iter()
                    .filter_map(|e| e.error.as_ref().map(|m| format!("{}: {m}", e.name))),
            )
            .collect();
        if !failed.is_empty() {
            out.push_str("\nPARTIAL REPORT, excluded:\n");
            for f in failed {
                writeln!(out, "  {f}").unwrap();
            }
        }
        out
    }

    /// Writes manifest.json, runs.csv, summary.csv, ensembles.csv and
    /// report.txt into `out`.
    pub fn write(&self, out: &Path) -> Result<()> {
        let write = |name: &str, text: String| {
            let p = out.join(name);
            fs::write(&p, text).map_err(|e| Error::io(&p, e))
        };
        let manifest = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("cannot encode manifest: {e}")))?;
        write("manifest.json", manifest + "\n")?;
        write("runs.csv", formats::metrics_csv(&self.run_rows()))?;
        write("summary.csv", self.summary_csv())?;
        write("ensembles.csv", formats::metrics_csv(&self.ensemble_rows()))?;
        write("report.txt", self.text())
    }
}

fn train_job(
    cfg: &ExperimentConfig,
    dataset: &Dataset,
    run: &RunSpec,
    fold: usize,
    out: &Path,
) -> Result<()> {
    let entry = &cfg.optimizers[run.entry];
    let spec = cfg.model_spec(dataset, run.seed)?;
    let outcome = train(
        &spec,
        dataset,
        Some(fold),
        &entry.optim,
        &cfg.train_config(run.seed),
    )?;
    let meta = PredictionMeta {
        run_id: run.run_id.clone(),
        variant: entry.optim.variant.name().to_string(),
        seed: run.seed,
        fold: Some(fold),
        members: Vec::new(),
    };
    let set = predict(&outcome.params, dataset, Some(fold))?.with_meta(meta);
    formats::write_predictions(&prediction_path(out, &run.run_id, fold), &set)?;
    if cfg.save_checkpoints {
        formats::write_checkpoint(
            &checkpoint_path(out, &run.run_id, fold),
            &checkpoint_entries(&outcome.params, &outcome.optimizer),
        )?;
    }
    if cfg.trace {
        let path = trace_path(out, &run.run_id, fold);
        let json = serde_json::to_string(&outcome.history)
            .map_err(|e| Error::Config(format!("cannot encode history: {e}")))?;
        fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

/// Trains every job, writes predictions (and checkpoints), then builds and
/// writes the report. A failed job excludes its run from the report; the
/// failure is listed in the manifest.
pub fn experiment_run(cfg: &ExperimentConfig, out: &Path) -> Result<ExperimentReport> {
    cfg.validate()?;
    let dataset = cfg.load_dataset()?;
    if let Some(fold) = dataset.fold_sizes().iter().position(|&n| n == 0) {
        return Err(Error::EmptyFold { fold });
    }
    create_dir(&out.join("predictions"))?;
    if cfg.save_checkpoints {
        create_dir(&out.join("checkpoints"))?;
    }
    if cfg.trace {
        create_dir(&out.join("traces"))?;
    }
    let runs = cfg.runs();
    let jobs: Vec<(usize, usize)> = (0..runs.len())
        .flat_map(|r| (0..cfg.folds).map(move |f| (r, f)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.worker_count()?)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let results: Vec<Result<()>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(r, f)| train_job(cfg, &dataset, &runs[r], f, out))
            .collect()
    });

    let mut failures: HashMap<String, String> = HashMap::new();
    for (&(r, f), res) in jobs.iter().zip(results) {
        if let Err(e) = res {
            let _ = fs::remove_file(prediction_path(out, &runs[r].run_id, f));
            failures
                .entry(runs[r].run_id.clone())
                .or_insert_with(|| format!("fold {f}: {e}"));
        }
    }
    let report = build_report(cfg, out, &failures)?;
    report.write(out)?;
    Ok(report)
}

/// Rebuilds the report from the prediction files under `out`, as the
/// `report` subcommand does.
pub fn report_from_dir(cfg: &ExperimentConfig, out: &Path) -> Result<ExperimentReport> {
    cfg.validate()?;
    let report = build_report(cfg, out, &HashMap::new())?;
    report.write(out)?;
    Ok(report)
}

fn load_run(cfg: &ExperimentConfig, out: &Path, run: &RunSpec) -> Result<Vec<PredictionSet>> {
    (0..cfg.folds)
        .map(|fold| {
            let path = prediction_path(out, &run.run_id, fold);
            let set = formats::read_predictions(&path)?;
            if set.meta.run_id != run.run_id || set.meta.fold != Some(fold) {
                return Err(Error::parse(
                    &path,
                    format!(
                        "holds run `{}` fold {:?}, expected `{}` fold {fold}",
                        set.meta.run_id, set.meta.fold, run.run_id
                    ),
                ));
            }
            Ok(set)
        })
        .collect()
}

fn build_report(
    cfg: &ExperimentConfig,
    out: &Path,
    failures: &HashMap<String, String>,
) -> Result<ExperimentReport> {
    let runs = cfg.runs();
    let mut loaded: BTreeMap<String, Vec<PredictionSet>> = BTreeMap::new();
    let mut results = Vec::new();
    for run in &runs {
        let entry = &cfg.optimizers[run.entry];
        let outcome = match failures.get(&run.run_id) {
            Some(msg) => Err(msg.clone()),
            None => load_run(cfg, out, run)
                .and_then(|sets| {
                    let report = EvalReport::from_folds(&sets)?;
                    loaded.insert(run.run_id.clone(), sets);
                    Ok(report)
                })
                .map_err(|e| e.to_string()),
        };
        results.push(RunResult {
            run_id: run.run_id.clone(),
            optimizer: entry.label(),
            variant: entry.optim.variant.name().to_string(),
            seed: run.seed,
            error: outcome.as_ref().err().cloned(),
            report: outcome.ok(),
        });
    }

    let summaries = cfg
        .optimizers
        .iter()
        .map(|entry| {
            let label = entry.label();
            let reports: Vec<&EvalReport> = results
                .iter()
                .filter(|r| r.optimizer == label)
                .filter_map(|r| r.report.as_ref())
                .collect();
            EntrySummary {
                runs: reports.len(),
                accuracy: summarize(&reports.iter().map(|r| r.accuracy).collect::<Vec<_>>()),
                f_measure: summarize(&reports.iter().map(|r| r.f_measure).collect::<Vec<_>>()),
                optimizer: label,
            }
        })
        .collect();

    let mut ensembles = Vec::new();
    for ens in &cfg.ensembles {
        let requested = cfg.ensemble_runs(ens)?;
        let used: Vec<String> = requested
            .iter()
            .filter(|id| loaded.contains_key(*id))
            .cloned()
            .collect();
        let outcome = if used.is_empty() {
            Err("every member run failed".to_string())
        } else {
            fuse_folds(&used, &loaded, cfg.folds, cfg.fusion_rule).map_err(|e| e.to_string())
        };
        let mut error = outcome.as_ref().err().cloned();
        if error.is_none() && used.len() < requested.len() {
            error = Some(format!(
                "fused {} of {} members; failed runs excluded",
                used.len(),
                requested.len()
            ));
        }
        ensembles.push(EnsembleResult {
            name: ens.name.clone(),
            requested,
            used,
            report: outcome.ok(),
            error,
        });
    }
    let partial =
        results.iter().any(|r| r.error.is_some()) || ensembles.iter().any(|e| e.error.is_some());
    Ok(ExperimentReport {
        runs: results,
        summaries,
        ensembles,
        partial,
    })
}

fn fuse_folds(
    ids: &[String],
    loaded: &BTreeMap<String, Vec<PredictionSet>>,
    folds: usize,
    rule: FusionRule,
) -> Result<EvalReport> {
    let per_fold = (0..folds)
        .map(|f| {
            let members: Vec<PredictionSet> = ids.iter().map(|id| loaded[id][f].clone()).collect();
            fuse(&members, rule)
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_folds(&per_fold)
}

/// A named group of run ids for [`fuse_files`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FuseGroup {
    pub name: String,
    pub members: Vec<String>,
}

impl std::str::FromStr for FuseGroup {
    type Err = Error;

    /// `name=run_a,run_b`
    fn from_str(s: &str) -> Result<Self> {
        let (name, list) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("group `{s}` is not of the form name=run,run")))?;
        let members: Vec<String> = list
            .split(',')
            .map(str::trim)
            .filter(|m| !m.is_empty())
            .map(str::to_string)
            .collect();
        if name.is_empty() || members.is_empty() {
            return Err(Error::Config(format!(
                "group `{s}` needs a name and members"
            )));
        }
        Ok(Self {
            name: name.to_string(),
            members,
        })
    }
}

/// Fuses saved prediction files per group and per fold. Without groups,
/// every run becomes its own group. Files are indexed by the run id and
/// fold in their headers.
pub fn fuse_files(
    files: &[PathBuf],
    groups: &[FuseGroup],
    rule: FusionRule,
) -> Result<Vec<(String, EvalReport)>> {
    if files.is_empty() {
        return Err(Error::EmptyPredictions);
    }
    // run id -> fold -> (path, set)
    let mut runs: BTreeMap<String, BTreeMap<Option<usize>, (PathBuf, PredictionSet)>> =
        BTreeMap::new();
    for path in files {
        let set = formats::read_predictions(path)?;
        let folds = runs.entry(set.meta.run_id.clone()).or_default();
        if let Some((other, _)) = folds.get(&set.meta.fold) {
            return Err(Error::parse(
                path,
                format!(
                    "duplicates run `{}` fold {:?} already read from {}",
                    set.meta.run_id,
                    set.meta.fold,
                    other.display()
                ),
            ));
        }
        folds.insert(set.meta.fold, (path.clone(), set));
    }
    let groups: Vec<FuseGroup> = if groups.is_empty() {
        runs.keys()
            .map(|id| FuseGroup {
                name: id.clone(),
                members: vec![id.clone()],
            })
            .collect()
    } else {
        groups.to_vec()
    };

    let mut reports = Vec::new();
    for group in &groups {
        let mut fold_keys: Option<(&String, Vec<Option<usize>>)> = None;
        for id in &group.members {
            let folds = runs.get(id).ok_or_else(|| {
                Error::Config(format!("group `{}`: no file holds run `{id}`", group.name))
            })?;
            let keys: Vec<Option<usize>> = folds.keys().copied().collect();
            match &fold_keys {
                None => fold_keys = Some((id, keys)),
                Some((first, expected)) if *expected != keys => {
                    let (path, _) = folds.values().next().expect("run has a file");
                    return Err(Error::parse(
                        path,
                        format!(
                            "run `{id}` covers folds {keys:?} but `{first}` covers {expected:?}"
                        ),
                    ));
                }
                Some(_) => {}
            }
        }
        let (_, keys) = fold_keys.expect("group has members");
        let per_fold = keys
            .iter()
            .map(|k| {
                let members: Vec<PredictionSet> = group
                    .members
                    .iter()
                    .map(|id| runs[id][k].1.clone())
                    .collect();
                fuse(&members, rule).map_err(|e| match e {
                    Error::IncompatibleMember { member, reason } => {
                        let path = &runs[&member][k].0;
                        Error::parse(path, reason)
                    }
                    other => other,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        reports.push((group.name.clone(), EvalReport::from_folds(&per_fold)?));
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(text: &str) -> Result<ExperimentConfig> {
        ExperimentConfig::from_toml(text, Path::new("exp.toml"))
    }

    const SMALL: &str = r#"
        folds = 3
        [[optimizers]]
        seeds = [1, 2, 3]
        optim = { variant = "sgd", lr = 0.1 }
        [[optimizers]]
        name = "dg"
        seeds = [5]
        optim = { variant = "dgrad" }
        [[ensembles]]
        name = "mix"
        members = ["sgd:2", "dg"]
    "#;

    #[test]
    fn parses_and_expands_runs() {
        let cfg = config(SMALL).unwrap();
        let ids: Vec<String> = cfg.runs().into_iter().map(|r| r.run_id).collect();
        assert_eq!(ids, ["sgd-s1", "sgd-s2", "sgd-s3", "dg-s5"]);
        assert_eq!(
            cfg.ensemble_runs(&cfg.ensembles[0]).unwrap(),
            ["sgd-s1", "sgd-s2", "dg-s5"]
        );
        assert_eq!(cfg.optimizers[1].optim.lr, 0.001);
        assert_eq!(cfg.train.batch_size, 30);
    }

    #[test]
    fn rejects_bad_configs() {
        let dup = "[[optimizers]]\nseeds = [1, 1]\n";
        let e = config(dup).unwrap_err();
        assert!(e.to_string().contains("seed 1 twice"), "{e}");
        assert!(config("folds = 3\n").is_err());
        assert!(config("[[optimizers]]\nseeds = [1]\nbogus = 2\n").is_err());
        let too_many =
            "[[optimizers]]\nseeds = [1]\n[[ensembles]]\nname = \"e\"\nmembers = [\"adam:2\"]\n";
        assert!(config(too_many).is_err());
        let unknown =
            "[[optimizers]]\nseeds = [1]\n[[ensembles]]\nname = \"e\"\nmembers = [\"sgd\"]\n";
        assert!(config(unknown).is_err());
        let twice = "[[optimizers]]\nseeds = [1]\n[[optimizers]]\nseeds = [2]\n";
        assert!(config(twice).is_err());
    }

    #[test]
    fn relative_dataset_path_follows_config() {
        let cfg = ExperimentConfig::from_toml(
            "[dataset]\npath = \"d.txt\"\n[[optimizers]]\nseeds = [1]\n",
            Path::new("/some/dir/exp.toml"),
        )
        .unwrap();
        assert_eq!(cfg.dataset.path, "/some/dir/d.txt");
    }

    #[test]
    fn seed_offset() {
        let mut cfg = config(SMALL).unwrap();
        cfg.offset_seeds(10);
        assert_eq!(cfg.optimizers[0].seeds, [11, 12, 13]);
        assert_eq!(cfg.runs()[3].run_id, "dg-s15");
    }

    #[test]
    fn group_syntax() {
        let g: FuseGroup = "SGD(7)+DGrad(7)=a-s1, b-s2".parse().unwrap();
        assert_eq!(g.name, "SGD(7)+DGrad(7)");
        assert_eq!(g.members, ["a-s1", "b-s2"]);
        assert!("nogroup".parse::<FuseGroup>().is_err());
        assert!("x=".parse::<FuseGroup>().is_err());
    }
}
