//! Declarative experiments: config parsing, validation, the pipeline runner
//! and catalog descriptions. The `osl-lab` binary is a thin shell over this
//! module.
//!
//! Tables are written with Rust's shortest round-trip float formatting, and
//! every stage reduces over phases in a fixed order, so a config and seed
//! determine the output bytes regardless of the worker count.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cocycle::{Cocycle, CocycleSpec, CATALOG};
use crate::dynamics::{BaseSpec, BaseSystem, Phase, Sampling};
use crate::error::Error;
use crate::grassmann::Signature;
use crate::ldtlab::{continuity_experiment, fiber_deviation_profile, ContinuityOptions, Family, Target};
use crate::linalg::Matrix;
use crate::lyapunov::{detect_gap_pattern, estimate_spectrum_at, SpectrumEstimate};
use crate::oseledets::{
    ap_check, avalanche_times, convergence_rate, direction_from, invariance_residual, random_ap_chain,
    InvariantObject,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    Spectrum,
    Oseledets,
    Ap,
    Deviation,
    Continuity,
}

impl Pipeline {
    pub const ALL: [Pipeline; 5] =
        [Pipeline::Spectrum, Pipeline::Oseledets, Pipeline::Ap, Pipeline::Deviation, Pipeline::Continuity];

    pub fn name(self) -> &'static str {
        match self {
            Pipeline::Spectrum => "spectrum",
            Pipeline::Oseledets => "oseledets",
            Pipeline::Ap => "ap",
            Pipeline::Deviation => "deviation",
            Pipeline::Continuity => "continuity",
        }
    }
}

/// Scales `1..=24` are compared with the largest scale in the convergence fit.
const CONVERGENCE_SCALES: usize = 24;

fn default_pipelines() -> Vec<Pipeline> {
    vec![Pipeline::Spectrum]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Strictly increasing scales `n`.
    pub scales: Vec<usize>,
    pub samples: usize,
    #[serde(default = "default_pipelines")]
    pub pipelines: Vec<Pipeline>,
    /// Pins the signature instead of detecting it.
    #[serde(default)]
    pub tau: Option<Vec<usize>>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub sampling: Sampling,
    pub base: BaseSpec,
    pub cocycle: CocycleSpec,
    #[serde(default)]
    pub oseledets: OseledetsSection,
    #[serde(default)]
    pub ap: ApSection,
    #[serde(default)]
    pub deviation: DeviationSection,
    #[serde(default)]
    pub continuity: Option<ContinuitySection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OseledetsSection {
    /// Phases to report on; defaults to `min(samples, 32)`.
    #[serde(default)]
    pub phases: Option<usize>,
    /// Avalanche-time `ε`; defaults to a tenth of the detected top gap.
    #[serde(default)]
    pub eps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApSection {
    pub chains: usize,
    pub length: usize,
    pub kappa: f64,
    pub eps: f64,
    pub min_gap: f64,
    pub max_angle: f64,
}

impl Default for ApSection {
    fn default() -> Self {
        Self { chains: 100, length: 50, kappa: 1e-4, eps: 0.1, min_gap: 2e4, max_angle: 0.3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviationSection {
    pub epsilons: Vec<f64>,
}

impl Default for DeviationSection {
    fn default() -> Self {
        Self { epsilons: vec![0.05, 0.1] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    /// Schrödinger energy `E + h`; needs a Schrödinger cocycle.
    EnergyShift,
    /// `A + h Δ` with `delta` given row by row.
    Additive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuitySection {
    pub family: FamilyKind,
    #[serde(default)]
    pub delta: Option<Vec<Vec<f64>>>,
    /// Strictly decreasing parameters.
    pub h: Vec<f64>,
    pub target: Target,
    /// Scale; defaults to the largest configured scale.
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default = "half")]
    pub alpha_trial: f64,
}

fn half() -> f64 {
    0.5
}

/// A config problem with the path of the offending field.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() || self.path == "." {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

fn config_error(path: &str, message: impl Into<String>) -> ConfigError {
    ConfigError { path: path.into(), message: message.into() }
}

/// Failure classes of a run, each with its exit code.
#[derive(Debug)]
pub enum RunError {
    Config(ConfigError),
    Degenerate(String),
    Io(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Degenerate(_) => 3,
            RunError::Io(_) => 4,
        }
    }
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunError::Config(e) => write!(f, "config error: {e}"),
            RunError::Degenerate(m) => write!(f, "degenerate pipeline: {m}"),
            RunError::Io(m) => write!(f, "I/O error: {m}"),
        }
    }
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e)
    }
}

fn io_err(path: &Path, e: std::io::Error) -> RunError {
    RunError::Io(format!("{}: {e}", path.display()))
}

/// Parses TOML (or JSON, by extension or leading `{`) into a config,
/// reporting the path of the first bad field.
pub fn parse_config(text: &str, path_hint: Option<&Path>) -> Result<ExperimentConfig, ConfigError> {
    let is_json = path_hint.and_then(|p| p.extension()).is_some_and(|e| e == "json")
        || text.trim_start().starts_with('{');
    let value: serde_json::Value = if is_json {
        serde_json::from_str(text).map_err(|e| config_error("", format!("invalid JSON: {e}")))?
    } else {
        let t: toml::Value = toml::from_str(text).map_err(|e| config_error("", format!("invalid TOML: {e}")))?;
        serde_json::to_value(t).map_err(|e| config_error("", e.to_string()))?
    };
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        config_error(&path, e.into_inner().to_string())
    })
}

/// Everything a run needs, resolved and cross-checked.
#[derive(Debug, Clone)]
pub struct Validated {
    pub config: ExperimentConfig,
    pub base: BaseSystem,
    pub cocycle: Cocycle,
    pub tau: Option<Signature>,
    pub warnings: Vec<String>,
}

/// Schema and cross-field checks; no numerics beyond building the objects.
pub fn validate(config: &ExperimentConfig) -> Result<Validated, ConfigError> {
    if config.scales.is_empty() {
        return Err(config_error("scales", "must not be empty"));
    }
    if config.scales[0] == 0 || config.scales.windows(2).any(|w| w[0] >= w[1]) {
        return Err(config_error("scales", "must be positive and strictly increasing"));
    }
    if config.samples == 0 {
        return Err(config_error("samples", "must be at least 1"));
    }
    if config.pipelines.is_empty() {
        return Err(config_error("pipelines", "select at least one pipeline"));
    }
    let base = BaseSystem::from_spec(&config.base).map_err(|e| config_error("base", e.to_string()))?;
    let cocycle = Cocycle::from_spec(&config.cocycle).map_err(|e| match e {
        Error::UnknownName(n) => config_error("cocycle.name", format!("unknown catalog entry `{n}`")),
        other => config_error("cocycle", other.to_string()),
    })?;
    cocycle.check_base(&base).map_err(|e| config_error("cocycle", e.to_string()))?;
    let tau = match &config.tau {
        None => None,
        Some(d) => Some(Signature::new(cocycle.dim(), d.clone()).map_err(|e| config_error("tau", e.to_string()))?),
    };
    let mut warnings = Vec::new();
    if base.is_symbolic() {
        let cap = base.max_scale();
        let needs_double = config.pipelines.iter().any(|p| matches!(p, Pipeline::Oseledets | Pipeline::Continuity));
        let worst = config.scales.last().copied().unwrap_or(0) * if needs_double { 2 } else { 1 };
        if worst > cap {
            warnings.push(format!(
                "scales reach {worst} orbit steps but the symbolic window of {} holds two-sided orbits up to {cap}; suggested n_max = {}",
                base.window_capacity(),
                if needs_double { cap / 2 } else { cap }
            ));
        }
    }
    if config.pipelines.contains(&Pipeline::Oseledets) && cocycle.dim() < 2 {
        return Err(config_error("pipelines", "oseledets needs a cocycle of dimension ≥ 2"));
    }
    if config.pipelines.contains(&Pipeline::Ap) {
        let ap = &config.ap;
        if ap.chains == 0 || ap.length == 0 {
            return Err(config_error("ap", "chains and length must be positive"));
        }
        if !(ap.kappa > 0.0 && ap.eps > 0.0 && ap.kappa <= crate::oseledets::AP_ADMISSION * ap.eps * ap.eps) {
            return Err(config_error("ap.kappa", "need 0 < kappa ≤ 0.01·eps²"));
        }
        if !(ap.min_gap > 1.0 / ap.kappa) {
            return Err(config_error("ap.min_gap", "must exceed 1/kappa"));
        }
    }
    if config.pipelines.contains(&Pipeline::Deviation)
        && (config.deviation.epsilons.is_empty() || config.deviation.epsilons.iter().any(|e| !(*e >= 0.0)))
    {
        return Err(config_error("deviation.epsilons", "need a nonempty list of nonnegative values"));
    }
    if config.pipelines.contains(&Pipeline::Continuity) {
        let c = config
            .continuity
            .as_ref()
            .ok_or_else(|| config_error("continuity", "section required by the continuity pipeline"))?;
        if c.h.is_empty() || c.h.iter().any(|h| !(*h >= 0.0)) || c.h.windows(2).any(|w| w[0] <= w[1]) {
            return Err(config_error("continuity.h", "must be nonnegative and strictly decreasing"));
        }
        match c.family {
            FamilyKind::EnergyShift => {
                if !matches!(config.cocycle, CocycleSpec::Schrodinger { .. }) {
                    return Err(config_error("continuity.family", "energy_shift needs a schrodinger cocycle"));
                }
            }
            FamilyKind::Additive => {
                let d = c.delta.as_ref().ok_or_else(|| config_error("continuity.delta", "required for additive"))?;
                let m = cocycle.dim();
                if d.len() != m || d.iter().any(|r| r.len() != m) {
                    return Err(config_error("continuity.delta", format!("must be {m}x{m}")));
                }
            }
        }
        if c.n == Some(0) {
            return Err(config_error("continuity.n", "must be positive"));
        }
    }
    Ok(Validated { config: config.clone(), base, cocycle, tau, warnings })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq)]
enum Cell {
    Int(u64),
    Num(f64),
    Text(String),
    Flag(bool),
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            Cell::Num(x) => x.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Flag(b) => b.to_string(),
        }
    }

    fn json(&self) -> serde_json::Value {
        match self {
            Cell::Int(i) => (*i).into(),
            Cell::Num(x) if x.is_finite() => (*x).into(),
            Cell::Num(x) => x.to_string().into(),
            Cell::Text(s) => s.clone().into(),
            Cell::Flag(b) => (*b).into(),
        }
    }
}

struct Table {
    name: &'static str,
    header: Vec<&'static str>,
    rows: Vec<Vec<Cell>>,
}

impl Table {
    fn new(name: &'static str, header: &[&'static str]) -> Self {
        Self { name, header: header.to_vec(), rows: Vec::new() }
    }

    fn render(&self, format: OutputFormat) -> (String, String) {
        match format {
            OutputFormat::Csv => {
                let mut s = self.header.join(",");
                s.push('\n');
                for r in &self.rows {
                    s.push_str(&r.iter().map(Cell::csv).collect::<Vec<_>>().join(","));
                    s.push('\n');
                }
                (format!("{}.csv", self.name), s)
            }
            OutputFormat::Json => {
                let rows: Vec<serde_json::Value> = self
                    .rows
                    .iter()
                    .map(|r| {
                        let obj: serde_json::Map<String, serde_json::Value> =
                            self.header.iter().map(|h| h.to_string()).zip(r.iter().map(Cell::json)).collect();
                        serde_json::Value::Object(obj)
                    })
                    .collect();
                let mut s = serde_json::to_string_pretty(&rows).expect("plain values");
                s.push('\n');
                (format!("{}.json", self.name), s)
            }
        }
    }
}

/// Two-column whitespace-delimited plot data.
fn plot_data(comment: &str, points: impl Iterator<Item = (f64, f64)>) -> String {
    let mut s = format!("# {comment}\n");
    for (x, y) in points {
        s.push_str(&format!("{x} {y}\n"));
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageStatus {
    pub stage: String,
    pub status: String,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub config_sha256: String,
    pub config: ExperimentConfig,
    pub seeds: BTreeMap<String, u64>,
    pub version: String,
    pub threads: usize,
    pub wall_clock_seconds: f64,
    pub stages: Vec<StageStatus>,
    pub outputs: Vec<String>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub format: OutputFormat,
}

/// Reads, validates and runs a config file.
pub fn run_file(path: &Path, opts: &RunOptions) -> Result<RunManifest, RunError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    run_text(&text, Some(path), opts)
}

pub fn run_text(text: &str, path_hint: Option<&Path>, opts: &RunOptions) -> Result<RunManifest, RunError> {
    let mut config = parse_config(text, path_hint)?;
    if let Some(seed) = opts.seed {
        config.seed = seed;
    }
    let out_dir = opts
        .out_dir
        .clone()
        .or_else(|| config.out_dir.clone())
        .ok_or_else(|| config_error("out_dir", "no output directory (set out_dir or pass --out-dir)"))?;
    let validated = validate(&config)?;
    let hash = hex(&Sha256::digest(text.as_bytes()));
    let threads = opts.threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| RunError::Io(format!("thread pool: {e}")))?;
    fs::create_dir_all(&out_dir).map_err(|e| io_err(&out_dir, e))?;
    let start = Instant::now();
    let mut runner = Runner { v: &validated, out_dir: &out_dir, format: opts.format, outputs: Vec::new(), stages: Vec::new() };
    pool.install(|| runner.run_all())?;
    let Runner { outputs, stages, .. } = runner;
    let seeds = stage_seeds(validated.config.seed).into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    let manifest = RunManifest {
        config_sha256: hash,
        config: validated.config.clone(),
        seeds,
        version: env!("CARGO_PKG_VERSION").to_string(),
        threads,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        stages,
        outputs,
        warnings: validated.warnings.clone(),
    };
    let path = out_dir.join("manifest.json");
    let body = serde_json::to_string_pretty(&manifest).map_err(|e| RunError::Io(e.to_string()))?;
    fs::write(&path, body + "\n").map_err(|e| io_err(&path, e))?;
    Ok(manifest)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Per-stage seeds derived from the run seed.
pub fn stage_seeds(seed: u64) -> BTreeMap<&'static str, u64> {
    Pipeline::ALL
        .iter()
        .enumerate()
        .map(|(i, p)| (p.name(), seed.wrapping_add((i as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15))))
        .collect()
}

struct Runner<'a> {
    v: &'a Validated,
    out_dir: &'a Path,
    format: OutputFormat,
    outputs: Vec<String>,
    stages: Vec<StageStatus>,
}

impl Runner<'_> {
    fn seed(&self, p: Pipeline) -> u64 {
        stage_seeds(self.v.config.seed)[p.name()]
    }

    fn phases(&self, p: Pipeline, count: usize) -> Vec<Phase> {
        self.v.base.sample_phases_with(count, self.seed(p), self.v.config.sampling)
    }

    fn write(&mut self, name: String, body: String) -> Result<(), RunError> {
        let path = self.out_dir.join(&name);
        fs::write(&path, body).map_err(|e| io_err(&path, e))?;
        self.outputs.push(name);
        Ok(())
    }

    fn write_table(&mut self, t: &Table) -> Result<(), RunError> {
        let (name, body) = t.render(self.format);
        self.write(name, body)
    }

    fn run_all(&mut self) -> Result<(), RunError> {
        let mut pipelines = self.v.config.pipelines.clone();
        pipelines.sort();
        pipelines.dedup();
        let mut spectrum: Option<SpectrumEstimate> = None;
        for p in pipelines {
            let t0 = Instant::now();
            let detail = match p {
                Pipeline::Spectrum => {
                    let (est, d) = self.spectrum()?;
                    spectrum = Some(est);
                    d
                }
                Pipeline::Oseledets => self.oseledets(&mut spectrum)?,
                Pipeline::Ap => self.ap()?,
                Pipeline::Deviation => self.deviation()?,
                Pipeline::Continuity => self.continuity(&mut spectrum)?,
            };
            self.stages.push(StageStatus {
                stage: p.name().into(),
                status: "ok".into(),
                detail,
                seconds: t0.elapsed().as_secs_f64(),
            });
        }
        Ok(())
    }

    fn numerics(e: Error) -> RunError {
        RunError::Degenerate(e.to_string())
    }

    /// Spectrum at every scale; returns the estimate at the largest one.
    fn spectrum(&mut self) -> Result<(SpectrumEstimate, String), RunError> {
        let phases = self.phases(Pipeline::Spectrum, self.v.config.samples);
        let mut table = Table::new("spectrum", &["n", "i", "L_i_nats_per_step", "std_error_nats_per_step"]);
        let mut last = None;
        let mut per_i: Vec<Vec<(f64, f64)>> = vec![Vec::new(); self.v.cocycle.dim()];
        for &n in &self.v.config.scales {
            let est = estimate_spectrum_at(&self.v.cocycle, &self.v.base, n, &phases).map_err(Self::numerics)?;
            for (i, (l, se)) in est.values.iter().zip(&est.std_errors).enumerate() {
                table.rows.push(vec![Cell::Int(n as u64), Cell::Int(i as u64 + 1), Cell::Num(*l), Cell::Num(*se)]);
                per_i[i].push((n as f64, *l));
            }
            last = Some(est);
        }
        self.write_table(&table)?;
        for (i, pts) in per_i.into_iter().enumerate() {
            let body = plot_data(&format!("n L_{} (nats per step)", i + 1), pts.into_iter());
            self.write(format!("spectrum_L{}.dat", i + 1), body)?;
        }
        let est = last.expect("scales nonempty");
        let gp = detect_gap_pattern(&est, None);
        let detail = format!("n={} tau={} exact={}", est.n, gp.signature, gp.exact);
        Ok((est, detail))
    }

    fn largest_spectrum(&self, spectrum: &mut Option<SpectrumEstimate>) -> Result<SpectrumEstimate, RunError> {
        if let Some(s) = spectrum {
            return Ok(s.clone());
        }
        let n = *self.v.config.scales.last().unwrap();
        let phases = self.phases(Pipeline::Spectrum, self.v.config.samples);
        let est = estimate_spectrum_at(&self.v.cocycle, &self.v.base, n, &phases).map_err(Self::numerics)?;
        *spectrum = Some(est.clone());
        Ok(est)
    }

    fn signature(&self, spectrum: &mut Option<SpectrumEstimate>) -> Result<Signature, RunError> {
        match &self.v.tau {
            Some(t) => Ok(t.clone()),
            None => Ok(detect_gap_pattern(&self.largest_spectrum(spectrum)?, None).signature),
        }
    }

    fn oseledets(&mut self, spectrum: &mut Option<SpectrumEstimate>) -> Result<String, RunError> {
        let tau = self.signature(spectrum)?;
        if tau.is_empty() {
            return Err(RunError::Degenerate("no gap detected; the Oseledets objects are trivial".into()));
        }
        let est = self.largest_spectrum(spectrum)?;
        let kappa = est.values[0] - est.values[1];
        let (a, base) = (&self.v.cocycle, &self.v.base);
        let scales = &self.v.config.scales;
        let n = *scales.last().unwrap();
        let count = self.v.config.oseledets.phases.unwrap_or(self.v.config.samples.min(32));
        let eps = self.v.config.oseledets.eps.unwrap_or(kappa / 10.0);
        let phases = self.phases(Pipeline::Oseledets, count);
        let records: Vec<serde_json::Value> = {
            use rayon::prelude::*;
            phases
                .par_iter()
                .enumerate()
                .map(|(id, x)| -> Result<serde_json::Value, Error> {
                    let ex = crate::cocycle::ExteriorIterates::compute(a, base, x, n)?;
                    let fwd = direction_from(&ex, &tau)?;
                    let adj = crate::oseledets::adjoint_direction(a, base, x, n, &tau)?;
                    let mut rec = serde_json::json!({
                        "phase": id,
                        "n": n,
                        "tau": tau.dims(),
                        "defined": fwd.defined(),
                        "adjoint_defined": adj.defined(),
                        "log_gap": num(fwd.log_gap),
                    });
                    if let (Some(f), Some(g)) = (&fwd.value, &adj.value) {
                        match crate::oseledets::decomposition_from(g, f) {
                            Ok(d) => {
                                rec["theta"] = num(d.theta);
                                let fr = invariance_residual(a, base, x, n, &tau, InvariantObject::Filtration)?;
                                let dr = invariance_residual(a, base, x, n, &tau, InvariantObject::Decomposition)?;
                                rec["filtration_residuals"] = fr.residuals.iter().map(|r| num(*r)).collect();
                                rec["decomposition_residuals"] = dr.residuals.iter().map(|r| num(*r)).collect();
                            }
                            Err(e) => rec["decomposition_error"] = e.to_string().into(),
                        }
                        if n > 1 {
                            let ns: Vec<usize> = (1..n.min(CONVERGENCE_SCALES + 1)).chain([n]).collect();
                            match convergence_rate(a, base, x, &tau, &ns) {
                                Ok(c) => rec["convergence_slopes"] = c.slopes.iter().map(|s| num(*s)).collect(),
                                Err(e) => rec["convergence_error"] = e.to_string().into(),
                            }
                        }
                    }
                    if kappa > 0.0 && kappa.is_finite() && a.dim() >= 2 && fwd.defined() {
                        match avalanche_times(a, base, x, eps, kappa, scales[0], n) {
                            Ok(s) => rec["avalanche_times"] = s.times().into(),
                            Err(e) => rec["avalanche_error"] = e.to_string().into(),
                        }
                    }
                    Ok(rec)
                })
                .collect::<Result<_, Error>>()
                .map_err(Self::numerics)?
        };
        let defined = records.iter().filter(|r| r["defined"] == true).count();
        if defined == 0 {
            return Err(RunError::Degenerate(format!("finite-scale direction undefined at all {count} phases (tau={tau})")));
        }
        let mut body = String::new();
        for r in &records {
            body.push_str(&serde_json::to_string(r).expect("json"));
            body.push('\n');
        }
        self.write("oseledets.jsonl".into(), body)?;
        Ok(format!("tau={tau} defined at {defined}/{count} phases, n={n}"))
    }

    fn ap(&mut self) -> Result<String, RunError> {
        let ap = self.v.config.ap.clone();
        let seed = self.seed(Pipeline::Ap);
        let mut table = Table::new(
            "ap",
            &["chain", "length", "adjoint_distance", "forward_distance", "bound", "measured_constant", "within_bound"],
        );
        let mut ok = 0;
        for c in 0..ap.chains {
            let chain = random_ap_chain(seed.wrapping_add(c as u64), ap.length, ap.min_gap, ap.max_angle);
            match ap_check(&chain, ap.kappa, ap.eps) {
                Ok(r) => {
                    ok += r.within_bound as usize;
                    table.rows.push(vec![
                        Cell::Int(c as u64),
                        Cell::Int(r.len as u64),
                        Cell::Num(r.adjoint_distance),
                        Cell::Num(r.forward_distance),
                        Cell::Num(r.bound),
                        Cell::Num(r.measured_constant),
                        Cell::Flag(r.within_bound),
                    ]);
                }
                Err(e) => table.rows.push(vec![
                    Cell::Int(c as u64),
                    Cell::Int(chain.len() as u64),
                    Cell::Text(format!("\"{e}\"").replace(',', ";")),
                    Cell::Text(String::new()),
                    Cell::Text(String::new()),
                    Cell::Text(String::new()),
                    Cell::Flag(false),
                ]),
            }
        }
        self.write_table(&table)?;
        Ok(format!("{ok}/{} chains within the conclusion bound", ap.chains))
    }

    fn deviation(&mut self) -> Result<String, RunError> {
        let eps = self.v.config.deviation.epsilons.clone();
        let p = fiber_deviation_profile(
            &self.v.cocycle,
            &self.v.base,
            &self.v.config.scales,
            &eps,
            self.v.config.samples,
            self.seed(Pipeline::Deviation),
            None,
        )
        .map_err(Self::numerics)?;
        let mut table = Table::new(
            "deviation",
            &["n", "eps_nats_per_step", "reference_nats_per_step", "measure", "wilson_lower", "wilson_upper"],
        );
        for row in &p.measures {
            for d in row {
                table.rows.push(vec![
                    Cell::Int(d.n as u64),
                    Cell::Num(d.eps),
                    Cell::Num(d.reference),
                    Cell::Num(d.frequency.value),
                    Cell::Num(d.frequency.lower),
                    Cell::Num(d.frequency.upper),
                ]);
            }
        }
        self.write_table(&table)?;
        for (j, e) in eps.iter().enumerate() {
            let pts = p.measures.iter().map(|row| (row[j].n as f64, row[j].frequency.value));
            self.write(format!("deviation_eps{j}.dat"), plot_data(&format!("n measure (eps={e})"), pts))?;
        }
        Ok(format!("{} scales x {} epsilons", p.scales.len(), eps.len()))
    }

    fn continuity(&mut self, spectrum: &mut Option<SpectrumEstimate>) -> Result<String, RunError> {
        let c = self.v.config.continuity.clone().expect("validated");
        let tau = self.signature(spectrum)?;
        if tau.is_empty() {
            return Err(RunError::Degenerate("no gap detected; nothing to compare".into()));
        }
        let family = match c.family {
            FamilyKind::EnergyShift => match self.v.config.cocycle {
                CocycleSpec::Schrodinger { energy, coupling } => Family::EnergyShift { energy, coupling },
                _ => unreachable!("validated"),
            },
            FamilyKind::Additive => {
                let d = c.delta.as_ref().expect("validated");
                let m = d.len();
                Family::Additive { cocycle: self.v.cocycle.clone(), delta: Matrix::from_fn(m, m, |i, j| d[i][j]) }
            }
        };
        let opts = ContinuityOptions {
            n: c.n.unwrap_or(*self.v.config.scales.last().unwrap()),
            samples: self.v.config.samples,
            seed: self.seed(Pipeline::Continuity),
            target: c.target,
            tau: tau.clone(),
            restrict_to: None,
            alpha_trial: c.alpha_trial,
        };
        let (records, fit) = continuity_experiment(&family, &c.h, &self.v.base, &opts).map_err(Self::numerics)?;
        if records.iter().all(|r| r.pointwise.is_empty()) {
            return Err(RunError::Degenerate("target undefined at every phase".into()));
        }
        let alpha = fit.as_ref().map_or(f64::NAN, |f| f.alpha);
        let mut table = Table::new(
            "continuity",
            &["h", "mean_dist", "q90_dist", "alpha", "sup_distance", "exceed_fraction", "undefined"],
        );
        for r in &records {
            table.rows.push(vec![
                Cell::Num(r.h),
                Cell::Num(r.mean_dist),
                Cell::Num(r.q90_dist),
                Cell::Num(alpha),
                Cell::Num(r.distance),
                Cell::Num(r.exceed_fraction),
                Cell::Int(r.undefined as u64),
            ]);
        }
        self.write_table(&table)?;
        let pts = records.iter().map(|r| (r.h, r.mean_dist));
        self.write("continuity.dat".into(), plot_data("h mean_dist (dimensionless)", pts))?;
        Ok(format!("tau={tau} target={:?} alpha={alpha}", c.target))
    }
}

fn num(x: f64) -> serde_json::Value {
    if x.is_finite() {
        x.into()
    } else {
        x.to_string().into()
    }
}

/// Bases accepted by the `base.kind` field.
pub const BASES: &[&str] = &["rotation", "bernoulli", "markov"];

/// Human-readable description of a catalog cocycle, base system or pipeline.
pub fn describe(name: &str) -> Option<String> {
    let text = match name {
        "pipelines" => {
            let mut s = String::from("pipelines (run in this order when selected):\n");
            for p in Pipeline::ALL {
                s.push_str(&format!("  {:<11} {}\n", p.name(), describe_pipeline(p).lines().next().unwrap_or("")));
            }
            s
        }
        "catalog" | "cocycles" => format!("cocycles: {}\nbases: {}\n", CATALOG.join(", "), BASES.join(", ")),
        "constant" => "constant: A(x) = M for every phase.\n  matrix  square array of rows (any base)\n".into(),
        "diagonal_random" => "diagonal_random: A(x) = diag(d_s) where s is the symbol at index 0.\n  diagonals  one list per symbol, all of length m (bernoulli or markov base)\n  closed-form spectrum: sorted E log|d_i| under the symbol law\n".into(),
        "schrodinger" => "schrodinger: A(x) = [[E - 2λ cos 2πx, -1], [1, 0]] over a circle rotation.\n  energy    E, any real number\n  coupling  λ, any real number; λ > 1 gives L_1 ≥ log λ > 0\n  determinant 1, so L_2 = -L_1\n".into(),
        "random_glm" => "random_glm: independent Gaussian m x m matrices, one per symbol.\n  dim      m ≥ 1\n  symbols  alphabet size of the base\n  seed     generator seed\n  scale    entry standard deviation (default 1)\n".into(),
        "custom_table" => "custom_table: matrices read from a CSV block, one matrix per line in row-major order.\n  dim        m\n  partition  symbol (line s = symbol s) or torus (line i = cell i of the first coordinate)\n  cuts       torus cell boundaries 0 = c_0 < ... < c_K = 1 (default: K equal cells)\n  csv        the matrix lines\n".into(),
        "rotation" => "rotation: x ↦ x + α on the torus with Lebesgue measure.\n  alpha  optional list, one frequency per coordinate (default: golden mean on the circle)\n".into(),
        "bernoulli" => "bernoulli: two-sided shift with i.i.d. symbols.\n  weights  symbol probabilities (positive, summing to 1)\n  window   orbit window capacity (default 65536)\n".into(),
        "markov" => "markov: two-sided shift of a stationary Markov chain.\n  transition  row-stochastic matrix with a unique positive stationary law\n  window      orbit window capacity (default 65536)\n".into(),
        other => {
            let p = Pipeline::ALL.into_iter().find(|p| p.name() == other)?;
            describe_pipeline(p)
        }
    };
    Some(text)
}

fn describe_pipeline(p: Pipeline) -> String {
    match p {
        Pipeline::Spectrum => "finite-scale Lyapunov spectrum L_i^(n) at every scale, from exterior-power norms; detects the gap pattern at the largest scale.\n  writes spectrum.csv (n, i, L_i in nats per step, std_error) and spectrum_L<i>.dat\n".into(),
        Pipeline::Oseledets => "most expanding flags, Oseledets filtration and decomposition at the largest scale, invariance residuals, convergence slopes of scales 1..24 against the largest scale and avalanche times.\n  writes oseledets.jsonl, one record per phase\n  [oseledets] phases (default min(samples, 32)), eps (default gap/10)\n".into(),
        Pipeline::Ap => "avalanche-principle check on generated chains g_0, ..., g_{n-1}.\n  gap:        gr(g_i) = s_1/s_2 > 1/kappa for every i\n  angle:      ‖g_i g_{i-1}‖ / (‖g_i‖ ‖g_{i-1}‖) > eps for every i ≥ 1\n  admission:  kappa ≤ 0.01·eps²\n  conclusion: d(v(g^(n)*), v(g_{n-1}*)) and d(v(g^(n)), v(g_0)) are each ≤ 100·kappa/eps; the measured constant is reported\n  writes ap.csv\n  [ap] chains, length, kappa, eps, min_gap, max_angle\n".into(),
        Pipeline::Deviation => "fiber deviation measures μ{|(1/n) log‖A^(n)‖ - L_1^(n)| > ε} with 95% Wilson intervals; the centre comes from an independent sample.\n  writes deviation.csv and deviation_eps<j>.dat\n  [deviation] epsilons\n".into(),
        Pipeline::Continuity => "distance between the Oseledets data of A and of a perturbed family B(h), per h, with a log-log modulus fit.\n  writes continuity.csv (h, mean_dist, q90_dist, alpha, ...) and continuity.dat\n  [continuity] family (energy_shift | additive), delta, h (decreasing), target (direction | filtration | decomposition), n, alpha_trial\n".into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 1
scales = [10, 20]
samples = 2
pipelines = ["spectrum"]

[base]
kind = "rotation"

[cocycle]
name = "constant"
matrix = [[4.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 1.0]]
"#;

    #[test]
    fn parses_and_validates_minimal() {
        let c = parse_config(MINIMAL, None).unwrap();
        let v = validate(&c).unwrap();
        assert_eq!(v.cocycle.dim(), 3);
        assert!(v.warnings.is_empty());
    }

    #[test]
    fn json_config_is_accepted() {
        let c = parse_config(MINIMAL, None).unwrap();
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(parse_config(&json, None).unwrap(), c);
    }

    #[test]
    fn bad_tau_names_field() {
        let text = MINIMAL.replace("samples = 2", "samples = 2\ntau = [2, 1]");
        let e = validate(&parse_config(&text, None).unwrap()).unwrap_err();
        assert_eq!(e.path, "tau");
    }

    #[test]
    fn unknown_cocycle_names_field() {
        let text = MINIMAL.replace("name = \"constant\"", "name = \"mystery\"");
        let e = parse_config(&text, None).unwrap_err();
        assert!(e.path.starts_with("cocycle"), "{e}");
    }

    #[test]
    fn symbolic_window_warning() {
        let text = r#"
seed = 1
scales = [100, 40000]
samples = 2
[base]
kind = "bernoulli"
weights = [0.5, 0.5]
[cocycle]
name = "diagonal_random"
diagonals = [[2.0, 0.25], [0.5, 0.25]]
"#;
        let v = validate(&parse_config(text, None).unwrap()).unwrap();
        assert_eq!(v.warnings.len(), 1);
        assert!(v.warnings[0].contains("suggested n_max = 32768"), "{}", v.warnings[0]);
    }

    #[test]
    fn describe_entries() {
        assert!(describe("schrodinger").unwrap().contains("E - 2λ cos 2πx"));
        let p = describe("pipelines").unwrap();
        for q in Pipeline::ALL {
            assert!(p.contains(q.name()));
        }
        let ap = describe("ap").unwrap();
        assert!(ap.contains("gap:") && ap.contains("angle:") && ap.contains("conclusion:"));
        assert!(describe("nothing").is_none());
    }

    #[test]
    fn stage_seeds_are_distinct() {
        let s = stage_seeds(7);
        let mut v: Vec<u64> = s.values().copied().collect();
        v.sort();
        v.dedup();
        assert_eq!(v.len(), Pipeline::ALL.len());
    }
}
