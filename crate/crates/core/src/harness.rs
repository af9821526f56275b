//! Experiment runner: sweeps ablation arms over missing rates and folds,
//! aggregates per-fold metrics, runs the paired comparison protocol and
//! writes every artifact under one output directory.
//!
//! Layout of `output_dir`:
//!
//! ```text
//! config.json        resolved scenario
//! dataset.csv        complete dataset (before missingness)
//! folds.csv          fold,id,split
//! metrics.csv        method,scenario,fold,mcc,auc,sen,spe
//! summary.csv        method,scenario,metric,mean,std,n
//! comparisons.csv    method_a,method_b,metric,t,p,significant,alpha_corrected
//! report.md
//! runs/<arm>/rate_<r>/fold_<k>/{teacher.ckpt,student.ckpt,trace.csv,ams_trace.csv,predictions.csv[,prototypes.csv]}
//! ```
//!
//! The `scenario` column holds the missing rate.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ams::{write_ams_trace, AmsMode};
use crate::error::{PgadError, Result};
use crate::eval::{binary_metrics, bonferroni, paired_ttest, ComparisonResult, MetricsRecord, METRIC_NAMES};
use crate::losses::LossWeights;
use crate::nets::{read_checkpoint, CheckpointHeader, StudentNet};
use crate::prototypes::write_prototypes_csv;
use crate::rng::derive_seed;
use crate::synthdata::{
    apply_missingness, generate_dataset, select, stratified_kfold, write_dataset_csv, write_folds_csv, DatasetConfig,
    FoldSplit, Sample,
};
use crate::trainer::{fit_from_scratch, predict_proba, write_epoch_traces_csv, PrototypeStrategy, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmConfig {
    pub name: String,
    pub pcm: bool,
    pub ams: AmsMode,
    pub prototype_strategy: PrototypeStrategy,
    /// Overrides the scenario's loss weights.
    #[serde(default)]
    pub loss_weights: Option<LossWeights>,
    /// Overrides the scenario's fixed AMS ratio.
    #[serde(default)]
    pub fixed_ratio: Option<f64>,
    /// Runs this arm at these rates instead of the scenario's sweep, e.g.
    /// `[0.0]` for a full-modality reference row.
    #[serde(default)]
    pub missing_rates: Option<Vec<f64>>,
}

impl ArmConfig {
    pub fn new(name: &str, pcm: bool, ams: AmsMode, prototype_strategy: PrototypeStrategy) -> Self {
        ArmConfig {
            name: name.into(),
            pcm,
            ams,
            prototype_strategy,
            loss_weights: None,
            fixed_ratio: None,
            missing_rates: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let field = |f: &str| format!("arms[{}].{f}", self.name);
        if self.name.is_empty()
            || !self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '+' | '.'))
        {
            return Err(PgadError::config(
                "arms.name",
                format!("`{}` must be non-empty and use only [A-Za-z0-9_+.-]", self.name),
            ));
        }
        if self.pcm && self.prototype_strategy == PrototypeStrategy::None {
            return Err(PgadError::config(field("prototype_strategy"), "`none` requires pcm = false"));
        }
        if let Some(w) = &self.loss_weights {
            w.validate()?;
        }
        if let Some(r) = self.fixed_ratio {
            if !(0.0..=1.0).contains(&r) {
                return Err(PgadError::config(field("fixed_ratio"), "must lie in [0, 1]"));
            }
        }
        if let Some(rates) = &self.missing_rates {
            validate_rates(&field("missing_rates"), rates)?;
        }
        Ok(())
    }

    /// The scenario's training config with this arm's switches applied.
    pub fn train_config(&self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        cfg.pcm_enabled = self.pcm;
        cfg.ams_mode = self.ams;
        cfg.prototype_strategy = self.prototype_strategy;
        if let Some(w) = self.loss_weights {
            cfg.loss_weights = w;
        }
        if let Some(r) = self.fixed_ratio {
            cfg.fixed_ratio = r;
        }
        cfg
    }
}

fn validate_rates(field: &str, rates: &[f64]) -> Result<()> {
    if rates.is_empty() {
        return Err(PgadError::config(field, "must not be empty"));
    }
    if rates.iter().any(|r| !(0.0..1.0).contains(r)) {
        return Err(PgadError::config(field, "rates must lie in [0, 1)"));
    }
    Ok(())
}

fn default_rates() -> Vec<f64> {
    vec![0.2, 0.5, 0.7]
}

fn default_k() -> usize {
    5
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("pgad-out")
}

fn default_alpha() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_rates")]
    pub missing_rates: Vec<f64>,
    pub arms: Vec<ArmConfig>,
    #[serde(default = "default_k")]
    pub k_folds: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Root of every derived seed (dataset, folds, masks, training).
    #[serde(default)]
    pub seed: u64,
    /// Reference arm for `comparisons.csv`; defaults to the first arm.
    #[serde(default)]
    pub baseline_arm: Option<String>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Also write the final prototype set of every run.
    #[serde(default)]
    pub export_prototypes: bool,
}

impl ScenarioConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| PgadError::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        if self.dataset.missing_rate != 0.0 {
            return Err(PgadError::config(
                "dataset.missing_rate",
                "must be 0 in a scenario; the sweep is set by missing_rates",
            ));
        }
        if self.dataset.num_classes != 2 {
            return Err(PgadError::config("dataset.num_classes", "metrics are binary; must be 2"));
        }
        self.train.loss_weights.validate()?;
        validate_rates("missing_rates", &self.missing_rates)?;
        if self.k_folds < 2 {
            return Err(PgadError::config("k_folds", "must be >= 2"));
        }
        if self.arms.is_empty() {
            return Err(PgadError::config("arms", "must list at least one arm"));
        }
        let mut seen = std::collections::HashSet::new();
        for arm in &self.arms {
            arm.validate()?;
            if !seen.insert(arm.name.as_str()) {
                return Err(PgadError::config("arms", format!("duplicate arm name `{}`", arm.name)));
            }
            arm.train_config(&self.train).validate()?;
        }
        if let Some(b) = &self.baseline_arm {
            if !seen.contains(b.as_str()) {
                return Err(PgadError::config("baseline_arm", format!("no arm named `{b}`")));
            }
        }
        bonferroni(self.alpha, 1)?;
        Ok(())
    }

    pub fn rates_for(&self, arm: &ArmConfig) -> Vec<f64> {
        arm.missing_rates.clone().unwrap_or_else(|| self.missing_rates.clone())
    }

    /// Number of (arm, rate, fold) training runs.
    pub fn run_count(&self) -> usize {
        self.arms.iter().map(|a| self.rates_for(a).len()).sum::<usize>() * self.k_folds
    }
}

/// Seed of the training run for `(rate, fold)`. Shared by every arm so arms
/// differ only in method, never in initialisation or batch order.
pub fn run_seed(scenario_seed: u64, rate: f64, fold: usize) -> u64 {
    derive_seed(scenario_seed, &format!("train/{}/{fold}", rate_tag(rate)))
}

pub fn mask_seed(scenario_seed: u64, rate: f64) -> u64 {
    derive_seed(scenario_seed, &format!("mask/{}", rate_tag(rate)))
}

/// Canonical text form of a rate (shortest round-trip decimal).
pub fn rate_tag(rate: f64) -> String {
    format!("{rate}")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub method: String,
    pub rate: f64,
    pub metrics: MetricsRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricSummary {
    pub mean: f64,
    /// Sample standard deviation (`k - 1` denominator).
    pub std: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryCell {
    pub method: String,
    pub rate: f64,
    pub metrics: BTreeMap<String, MetricSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub records: Vec<RunRecord>,
    pub cells: Vec<SummaryCell>,
}

impl RunSummary {
    pub fn cell(&self, method: &str, rate: f64) -> Option<&SummaryCell> {
        self.cells.iter().find(|c| c.method == method && c.rate == rate)
    }

    pub fn mean(&self, method: &str, rate: f64, metric: &str) -> Option<f64> {
        self.cell(method, rate)?.metrics.get(metric).map(|m| m.mean)
    }

    /// Per-fold values of one metric, sorted by fold.
    pub fn fold_values(&self, method: &str, rate: f64, metric: &str) -> Vec<(usize, f64)> {
        let mut v: Vec<(usize, f64)> = self
            .records
            .iter()
            .filter(|r| r.method == method && r.rate == rate)
            .filter_map(|r| r.metrics.get(metric).map(|x| (r.metrics.fold, x)))
            .collect();
        v.sort_by_key(|&(f, _)| f);
        v
    }
}

pub fn mean_std(values: &[f64]) -> MetricSummary {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    MetricSummary { mean, std, n }
}

/// Groups records by (method, rate) in first-appearance order.
pub fn summarize(records: Vec<RunRecord>) -> RunSummary {
    let mut keys: Vec<(String, f64)> = Vec::new();
    for r in &records {
        if !keys.iter().any(|(m, x)| *m == r.method && *x == r.rate) {
            keys.push((r.method.clone(), r.rate));
        }
    }
    let cells = keys
        .into_iter()
        .map(|(method, rate)| {
            let rows: Vec<&MetricsRecord> = records
                .iter()
                .filter(|r| r.method == method && r.rate == rate)
                .map(|r| &r.metrics)
                .collect();
            let metrics = METRIC_NAMES
                .iter()
                .map(|&name| {
                    let vals: Vec<f64> = rows.iter().filter_map(|m| m.get(name)).collect();
                    (name.to_string(), mean_std(&vals))
                })
                .collect();
            SummaryCell { method, rate, metrics }
        })
        .collect();
    RunSummary { records, cells }
}

/// Paired t-tests of every other arm against `baseline`, per rate and
/// metric, at the Bonferroni threshold `alpha / m`. `m` defaults to
/// (number of compared arms) x (number of metrics).
pub fn compare_arms(summary: &RunSummary, baseline: &str, alpha: f64, m: Option<usize>) -> Result<Vec<ComparisonResult>> {
    if !summary.records.iter().any(|r| r.method == baseline) {
        return Err(PgadError::Usage(format!("baseline arm `{baseline}` not in summary")));
    }
    let mut methods: Vec<&str> = Vec::new();
    for c in &summary.cells {
        if c.method != baseline && !methods.contains(&c.method.as_str()) {
            methods.push(&c.method);
        }
    }
    let m = m.unwrap_or((methods.len() * METRIC_NAMES.len()).max(1));
    let threshold = bonferroni(alpha, m)?;
    let mut out = Vec::new();
    for cell in summary.cells.iter().filter(|c| c.method != baseline) {
        if summary.cell(baseline, cell.rate).is_none() {
            continue;
        }
        for metric in METRIC_NAMES {
            let a = summary.fold_values(&cell.method, cell.rate, metric);
            let b = summary.fold_values(baseline, cell.rate, metric);
            let folds_a: Vec<usize> = a.iter().map(|x| x.0).collect();
            let folds_b: Vec<usize> = b.iter().map(|x| x.0).collect();
            if folds_a != folds_b {
                return Err(PgadError::Protocol(format!(
                    "fold mismatch between `{}` and `{baseline}` at rate {}",
                    cell.method, cell.rate
                )));
            }
            let va: Vec<f64> = a.iter().map(|x| x.1).collect();
            let vb: Vec<f64> = b.iter().map(|x| x.1).collect();
            let test = paired_ttest(&va, &vb)?;
            let mut result = ComparisonResult::new(&cell.method, baseline, metric, test, threshold);
            result.metric = format!("{metric}@{}", rate_tag(cell.rate));
            out.push(result);
        }
    }
    Ok(out)
}

pub fn write_metrics_csv(path: &Path, records: &[RunRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["method", "scenario", "fold", "mcc", "auc", "sen", "spe"])?;
    for r in records {
        let m = &r.metrics;
        w.write_record([
            r.method.clone(),
            rate_tag(r.rate),
            m.fold.to_string(),
            m.mcc.to_string(),
            m.auc.to_string(),
            m.sen.to_string(),
            m.spe.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<RunRecord>> {
    let bad = |message: String| PgadError::Format {
        path: path.to_path_buf(),
        message,
    };
    let mut r = csv::Reader::from_path(path)?;
    if r.headers()? != vec!["method", "scenario", "fold", "mcc", "auc", "sen", "spe"] {
        return Err(bad("header must be method,scenario,fold,mcc,auc,sen,spe".into()));
    }
    let mut out = Vec::new();
    for (line, row) in r.records().enumerate() {
        let row = row?;
        let num = |i: usize| -> Result<f64> {
            row[i]
                .parse::<f64>()
                .map_err(|_| bad(format!("row {}: cannot parse `{}`", line + 1, &row[i])))
        };
        let fold = row[2]
            .parse::<usize>()
            .map_err(|_| bad(format!("row {}: bad fold `{}`", line + 1, &row[2])))?;
        out.push(RunRecord {
            method: row[0].to_string(),
            rate: num(1)?,
            metrics: MetricsRecord {
                fold,
                mcc: num(3)?,
                auc: num(4)?,
                sen: num(5)?,
                spe: num(6)?,
            },
        });
    }
    Ok(out)
}

pub fn write_summary_csv(path: &Path, summary: &RunSummary) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["method", "scenario", "metric", "mean", "std", "n"])?;
    for c in &summary.cells {
        for name in METRIC_NAMES {
            let s = &c.metrics[name];
            w.write_record([
                c.method.clone(),
                rate_tag(c.rate),
                name.to_string(),
                s.mean.to_string(),
                s.std.to_string(),
                s.n.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_comparisons_csv(path: &Path, results: &[ComparisonResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["method_a", "method_b", "metric", "t", "p", "significant", "alpha_corrected"])?;
    for c in results {
        w.write_record([
            c.method_a.clone(),
            c.method_b.clone(),
            c.metric.clone(),
            c.t_statistic.to_string(),
            c.p_value.to_string(),
            c.significant.to_string(),
            c.alpha_corrected.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Markdown tables: one per missing rate with every metric, then an
/// arms-by-rates MCC grid. Percent metrics are scaled by 100.
pub fn render_report(summary: &RunSummary) -> String {
    let mut rates: Vec<f64> = summary.cells.iter().map(|c| c.rate).collect();
    rates.sort_by(f64::total_cmp);
    rates.dedup();
    let mut methods: Vec<&str> = Vec::new();
    for c in &summary.cells {
        if !methods.contains(&c.method.as_str()) {
            methods.push(&c.method);
        }
    }
    let pm = |s: &MetricSummary, scale: f64| format!("{:.1} ± {:.1}", s.mean * scale, s.std * scale);
    let mut out = String::from("# Results\n\nMean ± sample std over folds.\n");
    for &rate in &rates {
        let _ = write!(
            out,
            "\n## Missing rate {}\n\n| Method | AUC (%) | MCC | SEN (%) | SPE (%) |\n|---|---|---|---|---|\n",
            rate_tag(rate)
        );
        for &m in &methods {
            if let Some(c) = summary.cell(m, rate) {
                let _ = writeln!(
                    out,
                    "| {m} | {} | {} | {} | {} |",
                    pm(&c.metrics["auc"], 100.0),
                    pm(&c.metrics["mcc"], 100.0),
                    pm(&c.metrics["sen"], 100.0),
                    pm(&c.metrics["spe"], 100.0),
                );
            }
        }
    }
    out.push_str("\n## MCC (x100) by missing rate\n\n| Method |");
    for &rate in &rates {
        let _ = write!(out, " {} |", rate_tag(rate));
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(rates.len()));
    out.push('\n');
    for &m in &methods {
        let _ = write!(out, "| {m} |");
        for &rate in &rates {
            match summary.cell(m, rate) {
                Some(c) => {
                    let _ = write!(out, " {} |", pm(&c.metrics["mcc"], 100.0));
                }
                None => out.push_str(" - |"),
            }
        }
        out.push('\n');
    }
    out
}

/// Columns `id,label,paired,h_0..h_{H-1}`: student features of modality A.
pub fn export_embeddings(student: &StudentNet, samples: &[Sample], path: &Path) -> Result<()> {
    let h = student.arch().feature_dim();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["id".to_string(), "label".into(), "paired".into()];
    header.extend((0..h).map(|i| format!("h_{i}")));
    w.write_record(&header)?;
    for s in samples {
        let pass = student.forward(&s.feat_a)?;
        let mut row = vec![s.id.to_string(), s.label.to_string(), s.paired().to_string()];
        row.extend(pass.feat.iter().map(|x| x.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Loads a student checkpoint, reporting a missing file or a teacher
/// checkpoint as a usage error.
pub fn load_student_checkpoint(path: &Path) -> Result<StudentNet> {
    if !path.is_file() {
        return Err(PgadError::Usage(format!("checkpoint {} does not exist", path.display())));
    }
    match read_checkpoint(path)? {
        (CheckpointHeader::Student(arch), params) => StudentNet::from_params(arch, params),
        (CheckpointHeader::Teacher(_), _) => Err(PgadError::Usage(format!(
            "{} is a teacher checkpoint; embeddings come from the student",
            path.display()
        ))),
    }
}

/// Data shared by every run of a scenario.
pub struct ScenarioData {
    pub complete: Vec<Sample>,
    pub folds: Vec<FoldSplit>,
    /// Masked dataset per missing rate (same mask for every arm).
    pub masked: Vec<(f64, Vec<Sample>)>,
}

pub fn prepare_data(cfg: &ScenarioConfig) -> Result<ScenarioData> {
    let mut dcfg = cfg.dataset.clone();
    dcfg.seed = derive_seed(cfg.seed, "dataset");
    let complete = generate_dataset(&dcfg)?;
    let folds = stratified_kfold(&complete, cfg.k_folds, derive_seed(cfg.seed, "folds"))?;
    let mut rates: Vec<f64> = cfg.arms.iter().flat_map(|a| cfg.rates_for(a)).collect();
    rates.sort_by(f64::total_cmp);
    rates.dedup();
    let masked = rates
        .into_iter()
        .map(|r| Ok((r, apply_missingness(&complete, r, mask_seed(cfg.seed, r))?)))
        .collect::<Result<_>>()?;
    Ok(ScenarioData {
        complete,
        folds,
        masked,
    })
}

#[derive(Debug, Clone, Copy)]
struct Job<'a> {
    arm: &'a ArmConfig,
    rate: f64,
    fold: usize,
}

fn run_dir(out: &Path, arm: &str, rate: f64, fold: usize) -> PathBuf {
    out.join("runs")
        .join(arm)
        .join(format!("rate_{}", rate_tag(rate)))
        .join(format!("fold_{fold}"))
}

fn run_one(cfg: &ScenarioConfig, data: &ScenarioData, job: Job<'_>) -> Result<RunRecord> {
    let samples = &data
        .masked
        .iter()
        .find(|(r, _)| *r == job.rate)
        .ok_or_else(|| PgadError::Protocol(format!("no mask for rate {}", job.rate)))?
        .1;
    let split = &data.folds[job.fold];
    let train: Vec<Sample> = select(samples, &split.train_ids)?.into_iter().cloned().collect();
    let test: Vec<Sample> = select(samples, &split.test_ids)?.into_iter().cloned().collect();
    let mut tcfg = job.arm.train_config(&cfg.train);
    tcfg.seed = run_seed(cfg.seed, job.rate, job.fold);
    let fitted = fit_from_scratch(&train, cfg.dataset.num_classes, &tcfg)?;

    // The student sees modality A only, whatever the test pairing.
    let probs = predict_proba(&fitted.student, &test)?;
    let scores: Vec<f64> = probs.iter().map(|p| p[1]).collect();
    let labels: Vec<usize> = test.iter().map(|s| s.label).collect();
    let metrics = binary_metrics(job.fold, &labels, &scores)?;

    let dir = run_dir(&cfg.output_dir, &job.arm.name, job.rate, job.fold);
    std::fs::create_dir_all(&dir)?;
    fitted.teacher.save(&dir.join("teacher.ckpt"))?;
    fitted.student.save(&dir.join("student.ckpt"))?;
    write_epoch_traces_csv(&dir.join("trace.csv"), &fitted.epochs)?;
    let ams_rows: Vec<(usize, f64, f64)> = fitted.epochs.iter().map(|e| (e.epoch, e.theta, e.ratio)).collect();
    write_ams_trace(&dir.join("ams_trace.csv"), &ams_rows)?;
    let mut w = csv::Writer::from_path(dir.join("predictions.csv"))?;
    w.write_record(["id", "label", "score"])?;
    for (s, score) in test.iter().zip(&scores) {
        w.write_record([s.id.to_string(), s.label.to_string(), score.to_string()])?;
    }
    w.flush()?;
    if cfg.export_prototypes {
        if let Some(last) = fitted.prototype_snapshots.last() {
            write_prototypes_csv(&dir.join("prototypes.csv"), last)?;
        }
    }
    Ok(RunRecord {
        method: job.arm.name.clone(),
        rate: job.rate,
        metrics,
    })
}

/// Runs every (arm, rate, fold) job on `jobs` worker threads, then
/// aggregates and writes the scenario-level artifacts. Results are
/// collected in job order, so output does not depend on `jobs`.
pub fn run_scenario(cfg: &ScenarioConfig, jobs: usize) -> Result<RunSummary> {
    cfg.validate()?;
    let out = &cfg.output_dir;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("config.json"), serde_json::to_string_pretty(cfg)?)?;
    let data = prepare_data(cfg)?;
    write_dataset_csv(
        &out.join("dataset.csv"),
        &data.complete,
        cfg.dataset.dim_a,
        cfg.dataset.dim_b,
    )?;
    write_folds_csv(&out.join("folds.csv"), &data.folds)?;

    let mut job_list = Vec::with_capacity(cfg.run_count());
    for arm in &cfg.arms {
        for rate in cfg.rates_for(arm) {
            for fold in 0..cfg.k_folds {
                job_list.push(Job { arm, rate, fold });
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| PgadError::Usage(format!("thread pool: {e}")))?;
    let results: Vec<Result<RunRecord>> =
        pool.install(|| job_list.par_iter().map(|&job| run_one(cfg, &data, job)).collect());
    let mut records = Vec::with_capacity(results.len());
    for (job, result) in job_list.iter().zip(results) {
        match result {
            Ok(r) => records.push(r),
            Err(source) => {
                return Err(PgadError::Run {
                    arm: job.arm.name.clone(),
                    rate: job.rate,
                    fold: job.fold,
                    source: Box::new(source),
                })
            }
        }
    }

    let summary = summarize(records);
    write_metrics_csv(&out.join("metrics.csv"), &summary.records)?;
    write_summary_csv(&out.join("summary.csv"), &summary)?;
    let baseline = cfg.baseline_arm.clone().unwrap_or_else(|| cfg.arms[0].name.clone());
    let comparisons = compare_arms(&summary, &baseline, cfg.alpha, None)?;
    write_comparisons_csv(&out.join("comparisons.csv"), &comparisons)?;
    std::fs::write(out.join("report.md"), render_report(&summary))?;
    Ok(summary)
}

/// `compare` over an existing output directory: reads `metrics.csv`,
/// writes `comparisons.csv` next to it and returns the results.
pub fn compare_from_dir(dir: &Path, baseline: &str, alpha: f64, m: Option<usize>) -> Result<Vec<ComparisonResult>> {
    let metrics = dir.join("metrics.csv");
    if !metrics.is_file() {
        return Err(PgadError::Usage(format!("{} has no metrics.csv", dir.display())));
    }
    let summary = summarize(read_metrics_csv(&metrics)?);
    let results = compare_arms(&summary, baseline, alpha, m)?;
    write_comparisons_csv(&dir.join("comparisons.csv"), &results)?;
    Ok(results)
}
