//! End-to-end runs, configuration, reports and the benchmark harness used
//! by the `adapt` binary.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::alm_solver::{run_algorithm_1b, AlmConfig, ConvergenceTrace, TraceRow};
use crate::classify_eval::{accuracy, nn_classify};
use crate::data_model::{
    load_dataset, load_labels, make_synthetic_pair, normalize, Dataset, DomainPair, Format, NormalizeMode,
};
use crate::error::{Error, Result};
use crate::linalg_kernels::numerical_rank_psd;
use crate::mmd_matrices::Skip;
use crate::subspace_init::{run_algorithm_1a, scatter_matrix, InitTraceRow};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptationConfig {
    pub k_init: usize,
    pub lambda: f64,
    #[serde(rename = "iterations_T")]
    pub iterations_t: usize,
    pub alm: AlmConfig,
    pub normalize_mode: NormalizeMode,
    pub normalize_mmd: bool,
    pub seed: u64,
}

impl Default for AdaptationConfig {
    fn default() -> Self {
        AdaptationConfig {
            k_init: 100,
            lambda: 0.1,
            iterations_t: 10,
            alm: AlmConfig::default(),
            normalize_mode: NormalizeMode::default(),
            normalize_mmd: false,
            seed: 0,
        }
    }
}

impl AdaptationConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: AdaptationConfig = serde_json::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_init == 0 {
            return Err(Error::config("k_init must be >= 1"));
        }
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::config(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if self.iterations_t == 0 {
            return Err(Error::config("iterations_T must be >= 1"));
        }
        self.alm_resolved().validate()
    }

    /// ALM settings with `lambda_ridge` defaulted to `lambda`.
    pub fn alm_resolved(&self) -> AlmConfig {
        AlmConfig {
            lambda_ridge: Some(self.alm.lambda_ridge.unwrap_or(self.lambda)),
            ..self.alm.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlmSummary {
    pub iterations: usize,
    pub converged: bool,
    pub final_r1: f64,
    pub final_r2: f64,
    pub final_r3: f64,
    pub final_residual: f64,
    pub final_energy: f64,
    pub final_mu: f64,
}

impl AlmSummary {
    fn from_trace(trace: &ConvergenceTrace) -> Self {
        let last = trace.last().copied().unwrap_or(TraceRow {
            iteration: 0,
            r1: 0.0,
            r2: 0.0,
            r3: 0.0,
            energy: 0.0,
            mu: 0.0,
        });
        AlmSummary {
            iterations: last.iteration,
            converged: trace.converged,
            final_r1: last.r1,
            final_r2: last.r2,
            final_r3: last.r3,
            final_residual: last.max_residual(),
            final_energy: last.energy,
            final_mu: last.mu,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationReport {
    pub method: String,
    pub config: AdaptationConfig,
    pub k_init_used: Option<usize>,
    pub k_final_used: Option<usize>,
    pub stages: Vec<StageTiming>,
    pub init_trace: Vec<InitTraceRow>,
    pub alm: Option<AlmSummary>,
    #[serde(skip)]
    pub alm_trace: ConvergenceTrace,
    pub predictions: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    pub skipped: Vec<Skip>,
    pub warnings: Vec<String>,
}

impl AdaptationReport {
    pub fn total_ms(&self) -> f64 {
        self.stages.iter().map(|s| s.wall_ms).sum()
    }
}

struct Clock {
    stages: Vec<StageTiming>,
}

impl Clock {
    fn time<T>(&mut self, stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f().map_err(|e| e.in_stage(stage));
        self.stages.push(StageTiming {
            stage: stage.to_string(),
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        out
    }
}

fn normalize_pair(pair: &DomainPair, mode: NormalizeMode) -> Result<DomainPair> {
    DomainPair::new(normalize(&pair.source, mode)?, normalize(&pair.target, mode)?)
}

/// normalize, Rayleigh initialization, ALM, then 1-NN in the learned
/// `k_final`-dimensional embedding.
pub fn run_rsa_cdda(pair: &DomainPair, cfg: &AdaptationConfig) -> Result<AdaptationReport> {
    cfg.validate()?;
    let mut clock = Clock { stages: Vec::new() };
    let mut warnings = Vec::new();
    let pair = clock.time("normalize", || normalize_pair(pair, cfg.normalize_mode))?;

    let (m, n) = (pair.source.dim(), pair.ns() + pair.nt());
    let rank = numerical_rank_psd(&scatter_matrix(&pair.joint_features()));
    if rank == 0 {
        return Err(Error::data("data has zero variance after normalization").in_stage("init"));
    }
    let k_init = cfg.k_init.min(m).min(n - 1).min(rank);
    if k_init < cfg.k_init {
        warnings.push(format!(
            "k_init clipped from {} to {k_init} (m = {m}, n - 1 = {}, scatter rank = {rank})",
            cfg.k_init,
            n - 1
        ));
    }
    let mut alm_cfg = cfg.alm_resolved();
    let k_final = alm_cfg.k_final.min(m).min(rank);
    if k_final < alm_cfg.k_final {
        warnings.push(format!("k_final clipped from {} to {k_final} (scatter rank = {rank})", alm_cfg.k_final));
    }
    alm_cfg.k_final = k_final;

    let init_cfg = AdaptationConfig {
        k_init,
        ..cfg.clone()
    };
    let init = clock.time("init", || run_algorithm_1a(&pair, &init_cfg))?;
    let (state, trace) = clock.time("alm", || run_algorithm_1b(&pair, &init.m_rsa, &init.pseudo_labels, &alm_cfg))?;
    if !trace.converged {
        warnings.push(format!(
            "ALM stopped after {} iterations without reaching epsilon = {:e}",
            trace.rows.len(),
            alm_cfg.epsilon
        ));
    }
    let predictions = clock.time("classify", || {
        let zs = state.a.transpose() * pair.source.features();
        let zt = state.a.transpose() * pair.target.features();
        Ok(nn_classify(&zs, pair.source_labels(), &zt)?.labels)
    })?;
    let acc = match pair.target.labels() {
        Some(t) => Some(accuracy(&predictions, t)?),
        None => None,
    };
    let mut skipped = init.skipped.clone();
    skipped.extend_from_slice(state.m_rsa.skipped());
    Ok(AdaptationReport {
        method: METHOD_RSA.to_string(),
        config: cfg.clone(),
        k_init_used: Some(k_init),
        k_final_used: Some(k_final),
        stages: clock.stages,
        init_trace: init.per_iteration_trace,
        alm: Some(AlmSummary::from_trace(&trace)),
        alm_trace: trace,
        predictions,
        accuracy: acc,
        skipped,
        warnings,
    })
}

/// 1-NN from normalized source to normalized target.
pub fn run_baseline_nn(pair: &DomainPair, cfg: &AdaptationConfig) -> Result<AdaptationReport> {
    let mut clock = Clock { stages: Vec::new() };
    let pair = clock.time("normalize", || normalize_pair(pair, cfg.normalize_mode))?;
    let predictions = clock.time("classify", || {
        Ok(nn_classify(pair.source.features(), pair.source_labels(), pair.target.features())?.labels)
    })?;
    let acc = match pair.target.labels() {
        Some(t) => Some(accuracy(&predictions, t)?),
        None => None,
    };
    Ok(AdaptationReport {
        method: METHOD_NN.to_string(),
        config: cfg.clone(),
        k_init_used: None,
        k_final_used: None,
        stages: clock.stages,
        init_trace: Vec::new(),
        alm: None,
        alm_trace: ConvergenceTrace::default(),
        predictions,
        accuracy: acc,
        skipped: Vec::new(),
        warnings: Vec::new(),
    })
}

pub const METHOD_RSA: &str = "rsa-cdda";
pub const METHOD_NN: &str = "nn";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub seed: u64,
    #[serde(default = "default_npc")]
    pub n_per_class: usize,
    #[serde(default = "default_classes")]
    pub class_count: usize,
    pub rotation_deg: f64,
    #[serde(default = "default_noise")]
    pub noise_sd: f64,
}

fn default_npc() -> usize {
    100
}
fn default_classes() -> usize {
    2
}
fn default_noise() -> f64 {
    0.3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub name: String,
    #[serde(default)]
    pub source: Option<PathBuf>,
    #[serde(default)]
    pub target: Option<PathBuf>,
    #[serde(default)]
    pub target_labels: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: Option<SyntheticSpec>,
    /// Partial config merged over the defaults.
    #[serde(default)]
    pub config: Option<Value>,
    #[serde(default = "default_methods")]
    pub methods: Vec<String>,
}

fn default_methods() -> Vec<String> {
    vec![METHOD_RSA.to_string(), METHOD_NN.to_string()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    #[serde(default)]
    pub tasks: Vec<TaskSpec>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| Error::config(format!("manifest {}: {e}", path.display())))
    }
}

fn merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, p) => *b = p.clone(),
    }
}

/// Default config with a JSON object merged over it.
pub fn config_with_overrides(patch: Option<&Value>) -> Result<AdaptationConfig> {
    let mut base = serde_json::to_value(AdaptationConfig::default()).expect("config serializes");
    if let Some(p) = patch {
        if !p.is_object() {
            return Err(Error::config("task config must be a JSON object"));
        }
        merge(&mut base, p);
    }
    let cfg: AdaptationConfig = serde_json::from_value(base).map_err(|e| Error::config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Loads source/target with an optional separate target label file.
pub fn load_pair(source: &Path, target: &Path, target_labels: Option<&Path>) -> Result<DomainPair> {
    let s = load_dataset(source, Format::from_path(source))?;
    let mut t = load_dataset(target, Format::from_path(target))?;
    if let Some(lp) = target_labels {
        t = t.without_labels().with_labels(load_labels(lp)?)?;
    }
    DomainPair::new(s, t)
}

fn task_pair(task: &TaskSpec, base: &Path) -> Result<DomainPair> {
    if let Some(sy) = &task.synthetic {
        return make_synthetic_pair(sy.seed, sy.n_per_class, sy.class_count, sy.rotation_deg, sy.noise_sd);
    }
    let resolve = |p: &PathBuf| if p.is_absolute() { p.clone() } else { base.join(p) };
    match (&task.source, &task.target) {
        (Some(s), Some(t)) => load_pair(&resolve(s), &resolve(t), task.target_labels.as_ref().map(resolve).as_deref()),
        _ => Err(Error::config(format!("task {} needs source and target, or synthetic", task.name))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub task: String,
    pub method: String,
    pub accuracy: Option<f64>,
    pub alm_iterations: Option<usize>,
    pub final_residual: Option<f64>,
    pub wall_ms: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub const SUMMARY_HEADER: &str = "task,method,accuracy,alm_iterations,final_residual,wall_ms";

fn opt<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map(|x| x.to_string()).unwrap_or_default()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{:.3}\n",
            csv_field(&r.task),
            csv_field(&r.method),
            opt(&r.accuracy),
            opt(&r.alm_iterations),
            opt(&r.final_residual),
            r.wall_ms
        ));
    }
    out
}

/// Per-method mean accuracy over tasks that produced one.
fn average_rows(rows: &[SummaryRow]) -> Vec<SummaryRow> {
    let mut by_method: BTreeMap<&str, (f64, usize, f64)> = BTreeMap::new();
    for r in rows {
        let entry = by_method.entry(&r.method).or_insert((0.0, 0, 0.0));
        if let Some(a) = r.accuracy {
            entry.0 += a;
            entry.1 += 1;
        }
        entry.2 += r.wall_ms;
    }
    by_method
        .into_iter()
        .map(|(method, (sum, count, ms))| SummaryRow {
            task: "average".to_string(),
            method: method.to_string(),
            accuracy: (count > 0).then(|| sum / count as f64),
            alm_iterations: None,
            final_residual: None,
            wall_ms: ms,
            error: None,
        })
        .collect()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_report(dir: &Path, stem: &str, report: &AdaptationReport, trace: bool) -> Result<()> {
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    write_text(&dir.join(format!("{stem}.json")), &json)?;
    if trace && report.alm.is_some() {
        report.alm_trace.write_csv(&dir.join(format!("{stem}.alm_trace.csv")))?;
    }
    Ok(())
}

fn run_method(method: &str, pair: &DomainPair, cfg: &AdaptationConfig) -> Result<AdaptationReport> {
    match method {
        METHOD_RSA => run_rsa_cdda(pair, cfg),
        METHOD_NN => run_baseline_nn(pair, cfg),
        other => Err(Error::config(format!("unknown method `{other}`"))),
    }
}

/// Runs every task and method, writes one report per run plus
/// `summary.csv`. Task failures are recorded and do not stop the suite.
pub fn run_benchmark_suite(manifest_path: &Path, out_dir: &Path, trace: bool) -> Result<Vec<SummaryRow>> {
    let manifest = Manifest::load(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(out_dir).map_err(|source| Error::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let mut rows = Vec::new();
    for task in &manifest.tasks {
        let prepared = config_with_overrides(task.config.as_ref()).and_then(|cfg| Ok((cfg, task_pair(task, base)?)));
        for method in &task.methods {
            let stem = format!("{}__{}", task.name, method);
            let start = Instant::now();
            let outcome = prepared
                .as_ref()
                .map_err(|e| Error::config(e.to_string()))
                .and_then(|(cfg, pair)| run_method(method, pair, cfg));
            let wall_ms = start.elapsed().as_secs_f64() * 1e3;
            match outcome {
                Ok(report) => {
                    write_report(out_dir, &stem, &report, trace)?;
                    rows.push(SummaryRow {
                        task: task.name.clone(),
                        method: method.clone(),
                        accuracy: report.accuracy,
                        alm_iterations: report.alm.as_ref().map(|a| a.iterations),
                        final_residual: report.alm.as_ref().map(|a| a.final_residual),
                        wall_ms,
                        error: None,
                    });
                }
                Err(e) => {
                    write_text(&out_dir.join(format!("{stem}.error.txt")), &format!("{e}\n"))?;
                    rows.push(SummaryRow {
                        task: task.name.clone(),
                        method: method.clone(),
                        accuracy: None,
                        alm_iterations: None,
                        final_residual: None,
                        wall_ms,
                        error: Some(e.to_string()),
                    });
                }
            }
        }
    }
    let mut all = rows.clone();
    if !rows.is_empty() {
        all.extend(average_rows(&rows));
    }
    write_text(&out_dir.join("summary.csv"), &summary_csv(&all))?;
    Ok(all)
}

/// Drops the `wall_ms` column.
pub fn strip_timing(summary: &str) -> String {
    summary
        .lines()
        .map(|l| match l.rfind(',') {
            Some(i) => &l[..i],
            None => l,
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Writes a synthetic pair as `source.sdam` and `target.sdam`.
pub fn write_synthetic(spec: &SyntheticSpec, out_dir: &Path) -> Result<DomainPair> {
    let pair = make_synthetic_pair(spec.seed, spec.n_per_class, spec.class_count, spec.rotation_deg, spec.noise_sd)?;
    std::fs::create_dir_all(out_dir).map_err(|source| Error::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    crate::data_model::write_dataset(&out_dir.join("source.sdam"), &pair.source, Format::BinaryMatrix)?;
    crate::data_model::write_dataset(&out_dir.join("target.sdam"), &pair.target, Format::BinaryMatrix)?;
    Ok(pair)
}

/// Single run writing `report.json` and optionally `alm_trace.csv`.
pub fn run_single(pair: &DomainPair, cfg: &AdaptationConfig, out_dir: &Path, trace: bool) -> Result<AdaptationReport> {
    let report = run_rsa_cdda(pair, cfg)?;
    std::fs::create_dir_all(out_dir).map_err(|source| Error::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    write_text(&out_dir.join("report.json"), &serde_json::to_string_pretty(&report).expect("report serializes"))?;
    if trace {
        report.alm_trace.write_csv(&out_dir.join("alm_trace.csv"))?;
    }
    Ok(report)
}

/// Identical source and target domains built from one labeled dataset.
pub fn zero_gap_pair(d: &Dataset) -> Result<DomainPair> {
    DomainPair::new(d.clone(), d.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_absent_fields() {
        let cfg = AdaptationConfig::from_json("{}").unwrap();
        assert_eq!(cfg, AdaptationConfig::default());
        assert_eq!(cfg.k_init, 100);
        assert_eq!(cfg.alm.k_final, 10);
        assert_eq!(cfg.alm.mu0, 0.18);
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(matches!(AdaptationConfig::from_json(r#"{"k": 3}"#), Err(Error::Config(_))));
        assert!(AdaptationConfig::from_json(r#"{"alm": {"mu": 3}}"#).is_err());
    }

    #[test]
    fn iterations_field_name() {
        let cfg = AdaptationConfig::from_json(r#"{"iterations_T": 4, "normalize_mode": "unit_l2"}"#).unwrap();
        assert_eq!(cfg.iterations_t, 4);
        assert_eq!(cfg.normalize_mode, NormalizeMode::UnitL2);
    }

    #[test]
    fn ridge_follows_lambda() {
        let cfg = AdaptationConfig::from_json(r#"{"lambda": 1.0}"#).unwrap();
        assert_eq!(cfg.alm_resolved().ridge(), 1.0);
        let cfg = AdaptationConfig::from_json(r#"{"lambda": 1.0, "alm": {"lambda_ridge": 0.5}}"#).unwrap();
        assert_eq!(cfg.alm_resolved().ridge(), 0.5);
    }

    #[test]
    fn overrides_merge_nested() {
        let patch: Value = serde_json::json!({"alm": {"k_final": 3}, "seed": 9});
        let cfg = config_with_overrides(Some(&patch)).unwrap();
        assert_eq!((cfg.alm.k_final, cfg.seed, cfg.alm.lambda1), (3, 9, 1.0));
    }

    #[test]
    fn strip_timing_drops_last_column() {
        assert_eq!(strip_timing("a,b,c\n1,2,3"), "a,b\n1,2");
    }

    #[test]
    fn empty_summary_is_header() {
        assert_eq!(summary_csv(&[]), format!("{SUMMARY_HEADER}\n"));
    }
}
