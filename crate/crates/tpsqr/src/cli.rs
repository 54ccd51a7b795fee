//! Batch command-line surface: configuration, run manifests, and the
//! `aggregate` / `fit` / `path` / `select` / `simulate` / `evaluate`
//! commands. All outputs are deterministic functions of config + seed.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::design::{build_design, lambda_max, DesignProblem, DiscountConfig};
use crate::error::{Result, TpsqrError};
use crate::evaluation::{
    auc, fit_to_template, score_pairs, sparsistency_experiment, SparsistencyConfig,
};
use crate::event_data::{
    aggregate, read_events_csv, write_aggregated_csv, DatasetHeader, LagWindows, SubjectSequence,
};
use crate::psqr_oracle::{
    autocorrelation, generate_sparse_model, gibbs_sample, write_samples_csv, TruncationConfig,
};
use crate::solver::{fit, fit_path, select_aic, FitConfig, FitResult, PathResult};
use crate::template::{Template, TemplateJson};

fn default_thresholds() -> Vec<f64> {
    vec![0.0, 500.0, 1000.0, 1500.0]
}

fn default_n_lambdas() -> usize {
    50
}

fn default_lambda_min_ratio() -> f64 {
    1e-3
}

fn default_include_self_pairs() -> bool {
    true
}

/// Resolved run configuration. CLI flags override individual keys; the
/// resolved document is echoed into the run manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default)]
    pub input: Option<PathBuf>,
    #[serde(default)]
    pub header: Option<PathBuf>,
    #[serde(default = "default_thresholds")]
    pub thresholds: Vec<f64>,
    #[serde(default)]
    pub t_ambiguity: f64,
    #[serde(default)]
    pub discount: DiscountConfig,
    #[serde(default)]
    pub fixed_effects: bool,
    #[serde(default = "default_include_self_pairs")]
    pub include_self_pairs: bool,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default = "default_n_lambdas")]
    pub n_lambdas: usize,
    #[serde(default = "default_lambda_min_ratio")]
    pub lambda_min_ratio: f64,
    #[serde(default)]
    pub min_duration: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub simulate: Option<SimulateConfig>,
    #[serde(default)]
    pub evaluate: Option<EvaluateConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").unwrap()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulateConfig {
    pub p: usize,
    pub edge_count: usize,
    pub n_samples: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default = "default_thin")]
    pub thin: usize,
    #[serde(default = "default_x_max")]
    pub x_max: usize,
}

fn default_burn_in() -> usize {
    500
}

fn default_thin() -> usize {
    2
}

fn default_x_max() -> usize {
    30
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluateConfig {
    /// Fitted template JSON to score (AUC mode, with `labels`).
    #[serde(default)]
    pub template: Option<PathBuf>,
    /// Labels CSV `source,target,label` naming the evaluated pairs.
    #[serde(default)]
    pub labels: Option<PathBuf>,
    /// Recovery-experiment settings (sparsistency mode).
    #[serde(default)]
    pub sparsistency: Option<SparsistencyConfig>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let config: RunConfig = serde_json::from_str(&text)?;
        Ok(config)
    }

    pub fn windows(&self) -> Result<LagWindows> {
        LagWindows::new(self.thresholds.clone())
    }

    fn out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from("."))
    }

    fn input(&self) -> Result<&Path> {
        self.input
            .as_deref()
            .ok_or_else(|| TpsqrError::Validation("config is missing `input`".into()))
    }

    fn header(&self) -> Result<DatasetHeader> {
        let path = self
            .header
            .as_deref()
            .ok_or_else(|| TpsqrError::Validation("config is missing `header`".into()))?;
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// FNV-1a over the resolved config document, for the run manifest.
fn config_hash(config: &RunConfig) -> String {
    let text = serde_json::to_string(config).expect("config serializes");
    let mut hash: u64 = 0xcbf29ce484222325;
    for byte in text.bytes() {
        hash ^= byte as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    format!("{hash:016x}")
}

#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    config_hash: String,
    seed: u64,
    version: &'a str,
    config: &'a RunConfig,
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(dir.join(name), text)?;
    Ok(())
}

fn write_manifest(config: &RunConfig, command: &str, dir: &Path) -> Result<()> {
    let manifest = RunManifest {
        command,
        config_hash: config_hash(config),
        seed: config.seed,
        version: env!("CARGO_PKG_VERSION"),
        config,
    };
    write_json(dir, "manifest.json", &manifest)
}

#[derive(Debug, Serialize)]
pub struct AggregateSummary {
    pub n_subjects: usize,
    pub n_subjects_excluded: usize,
    pub total_spans: usize,
    pub p: usize,
}

/// Load raw events, aggregate per subject, and apply the minimum-duration
/// admission rule.
fn load_and_aggregate(config: &RunConfig) -> Result<(Vec<SubjectSequence>, usize, usize)> {
    let header = config.header()?;
    let file = fs::File::open(config.input()?)?;
    let by_subject = read_events_csv(file, header.p)?;
    let mut sequences = Vec::new();
    let mut excluded = 0;
    for events in &by_subject {
        let seq = aggregate(events, config.t_ambiguity)?;
        if seq.duration() < config.min_duration {
            excluded += 1;
            continue;
        }
        sequences.push(seq);
    }
    Ok((sequences, header.p, excluded))
}

pub fn cmd_aggregate(config: &RunConfig) -> Result<AggregateSummary> {
    let (sequences, p, excluded) = load_and_aggregate(config)?;
    let dir = config.out_dir();
    fs::create_dir_all(&dir)?;
    let file = fs::File::create(dir.join("aggregated.csv"))?;
    write_aggregated_csv(file, &sequences)?;
    let summary = AggregateSummary {
        n_subjects: sequences.len(),
        n_subjects_excluded: excluded,
        total_spans: sequences.iter().map(|s| s.len()).sum(),
        p,
    };
    write_json(&dir, "aggregate_summary.json", &summary)?;
    write_manifest(config, "aggregate", &dir)?;
    Ok(summary)
}

fn build_problem(config: &RunConfig) -> Result<(DesignProblem, usize, LagWindows)> {
    let (sequences, p, _) = load_and_aggregate(config)?;
    let windows = config.windows()?;
    let problem = build_design(
        p,
        &sequences,
        &windows,
        &config.discount,
        config.fixed_effects,
        config.include_self_pairs,
    )?;
    Ok((problem, p, windows))
}

#[derive(Debug, Serialize)]
pub struct FitReport {
    pub lambda: f64,
    pub loglik: f64,
    pub aic: f64,
    pub active_set_size: usize,
    pub iterations: usize,
    pub converged: bool,
    pub kkt_residual: f64,
}

impl FitReport {
    fn from_fit(fit: &FitResult) -> Self {
        FitReport {
            lambda: fit.lambda,
            loglik: fit.loglik,
            aic: fit.aic(),
            active_set_size: fit.active_set.len(),
            iterations: fit.iterations,
            converged: fit.converged,
            kkt_residual: fit.kkt_residual,
        }
    }
}

fn emit_fit(
    config: &RunConfig,
    command: &str,
    fit: &FitResult,
    p: usize,
    windows: &LagWindows,
    problem: &DesignProblem,
) -> Result<Template> {
    let dir = config.out_dir();
    let template = fit_to_template(fit, p, windows, problem)?;
    write_json(&dir, "fit_report.json", &FitReport::from_fit(fit))?;
    write_json(&dir, "template.json", &template.to_json())?;
    write_manifest(config, command, &dir)?;
    Ok(template)
}

pub fn cmd_fit(config: &RunConfig) -> Result<FitReport> {
    let (problem, p, windows) = build_problem(config)?;
    let lambda = config
        .lambda
        .ok_or_else(|| TpsqrError::Validation("`fit` requires a `lambda` in the config".into()))?;
    if lambda_max(&problem) == 0.0 {
        eprintln!("warning: all null-model residuals vanish; lambda_max is 0");
    }
    let result = fit(&problem, &FitConfig::with_lambda(lambda), None)?;
    emit_fit(config, "fit", &result, p, &windows, &problem)?;
    Ok(FitReport::from_fit(&result))
}

#[derive(Debug, Serialize)]
pub struct PathReport {
    pub lambdas: Vec<f64>,
    pub points: Vec<FitReport>,
}

fn path_report(path: &PathResult) -> PathReport {
    PathReport {
        lambdas: path.lambdas.clone(),
        points: path.fits.iter().map(FitReport::from_fit).collect(),
    }
}

pub fn cmd_path(config: &RunConfig) -> Result<PathReport> {
    let (problem, _, _) = build_problem(config)?;
    let path = fit_path(
        &problem,
        config.n_lambdas,
        config.lambda_min_ratio,
        &FitConfig::default(),
    )?;
    let report = path_report(&path);
    let dir = config.out_dir();
    write_json(&dir, "path_report.json", &report)?;
    write_manifest(config, "path", &dir)?;
    Ok(report)
}

pub fn cmd_select(config: &RunConfig) -> Result<FitReport> {
    let (problem, p, windows) = build_problem(config)?;
    let path = fit_path(
        &problem,
        config.n_lambdas,
        config.lambda_min_ratio,
        &FitConfig::default(),
    )?;
    let selected = select_aic(&path)?;
    let dir = config.out_dir();
    write_json(&dir, "path_report.json", &path_report(&path))?;
    emit_fit(config, "select", selected, p, &windows, &problem)?;
    Ok(FitReport::from_fit(selected))
}

#[derive(Debug, Serialize)]
pub struct SimulateSummary {
    pub p: usize,
    pub n_samples: usize,
    pub edges: Vec<(usize, usize)>,
    /// Lag-1..10 autocorrelation per coordinate: mixing diagnostics,
    /// reported rather than asserted.
    pub autocorrelation: Vec<Vec<f64>>,
}

pub fn cmd_simulate(config: &RunConfig) -> Result<SimulateSummary> {
    let sim = config
        .simulate
        .as_ref()
        .ok_or_else(|| TpsqrError::Validation("config is missing `simulate`".into()))?;
    let trunc = TruncationConfig::new(sim.x_max)?;
    let model = generate_sparse_model(sim.p, sim.edge_count, &trunc, config.seed)?;
    let samples = gibbs_sample(
        &model,
        sim.n_samples,
        sim.burn_in,
        sim.thin,
        &trunc,
        config.seed,
    )?;
    let dir = config.out_dir();
    fs::create_dir_all(&dir)?;
    let file = fs::File::create(dir.join("samples.csv"))?;
    write_samples_csv(file, &samples, sim.p)?;
    write_json(&dir, "model.json", &model)?;
    let summary = SimulateSummary {
        p: sim.p,
        n_samples: samples.len(),
        edges: model.edges(),
        autocorrelation: (0..sim.p)
            .map(|j| autocorrelation(&samples, j, 10))
            .collect(),
    };
    write_json(&dir, "simulate_summary.json", &summary)?;
    write_manifest(config, "simulate", &dir)?;
    Ok(summary)
}

#[derive(Debug, Serialize)]
pub struct AucReport {
    pub auc: f64,
    pub n_pairs: usize,
    pub n_positive: usize,
}

#[derive(Debug, Serialize)]
pub enum EvaluateReport {
    Auc(AucReport),
    Sparsistency(crate::evaluation::SparsistencyReport),
}

fn read_labels_csv(path: &Path) -> Result<Vec<(usize, usize, bool)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    let mut labels = Vec::new();
    for row in reader.records() {
        let row = row?;
        let source: usize = row[0]
            .parse()
            .map_err(|_| TpsqrError::Validation(format!("bad source {:?}", &row[0])))?;
        let target: usize = row[1]
            .parse()
            .map_err(|_| TpsqrError::Validation(format!("bad target {:?}", &row[1])))?;
        let label = matches!(&row[2], "1" | "true");
        labels.push((source, target, label));
    }
    Ok(labels)
}

pub fn cmd_evaluate(config: &RunConfig) -> Result<EvaluateReport> {
    let eval = config
        .evaluate
        .as_ref()
        .ok_or_else(|| TpsqrError::Validation("config is missing `evaluate`".into()))?;
    let dir = config.out_dir();

    if let Some(sparsistency) = &eval.sparsistency {
        let mut experiment = sparsistency.clone();
        experiment.seed = config.seed;
        let report = sparsistency_experiment(&experiment)?;
        write_json(&dir, "sparsistency_report.json", &report)?;
        let mut csv_out = csv::Writer::from_path(dir.join("sparsistency_trials.csv"))?;
        csv_out.write_record(["n", "trial", "precision", "recall", "f1", "exact"])?;
        for t in &report.trials {
            csv_out.write_record([
                t.n.to_string(),
                t.trial.to_string(),
                format!("{}", t.precision),
                format!("{}", t.recall),
                format!("{}", t.f1),
                t.exact.to_string(),
            ])?;
        }
        csv_out.flush()?;
        write_manifest(config, "evaluate", &dir)?;
        return Ok(EvaluateReport::Sparsistency(report));
    }

    let template_path = eval.template.as_deref().ok_or_else(|| {
        TpsqrError::Validation("evaluate needs `template` + `labels` or `sparsistency`".into())
    })?;
    let labels_path = eval
        .labels
        .as_deref()
        .ok_or_else(|| TpsqrError::Validation("evaluate is missing `labels`".into()))?;
    let text = fs::read_to_string(template_path)?;
    let json: TemplateJson = serde_json::from_str(&text)?;
    let template = Template::from_json(&json)?;
    let table = score_pairs(&template);
    let labeled = read_labels_csv(labels_path)?;
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (source, target, label) in &labeled {
        let score = table.score(*source, *target).ok_or_else(|| {
            TpsqrError::Validation(format!("pair ({source},{target}) not scoreable"))
        })?;
        scores.push(score);
        labels.push(*label);
    }
    let value = auc(&scores, &labels)?;
    let report = AucReport {
        auc: value,
        n_pairs: labels.len(),
        n_positive: labels.iter().filter(|&&l| l).count(),
    };
    write_json(&dir, "auc_report.json", &report)?;
    write_manifest(config, "evaluate", &dir)?;
    Ok(EvaluateReport::Auc(report))
}
