//! Experiment configuration, benchmark presets and end-to-end runs.
//!
//! A run is a pure function of its [`ExperimentConfig`] apart from wall time.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::bounds::{self, BoundError};
use crate::certificate::{CertificateNet, NetworkSpec, SavedCertificate};
use crate::dynamics::{self, DynamicsError, SamplingDistribution, System};
use crate::loss::{GridDensities, LossError, LossModel, PropertyKind, PropertySpec, DEFAULT_DELTA, DEFAULT_TAU};
use crate::regions::Region;
use crate::synthesis::{self, HyperParams, SynthesisError};
use crate::validation::{self, ValidationReport};

/// Environment variable naming the default output root.
pub const OUTPUT_DIR_ENV: &str = "CERTSYNTH_OUTPUT_DIR";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown preset `{0}`; available: {list}", list = PRESETS.join(", "))]
    UnknownPreset(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Bound(#[from] BoundError),
    #[error(transparent)]
    Region(#[from] crate::regions::RegionError),
    #[error("surface export needs a 2-dimensional system, got dimension {0}")]
    NotPlanar(usize),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemConfig {
    Builtin(String),
    Expressions(Vec<String>),
}

impl SystemConfig {
    pub fn build(&self) -> Result<System, DynamicsError> {
        match self {
            SystemConfig::Builtin(name) => System::builtin(name),
            SystemConfig::Expressions(e) => System::from_expressions(e),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyConfig {
    pub kind: PropertyKind,
    pub domain: Region,
    pub initial: Region,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal: Option<Region>,
    #[serde(default, rename = "unsafe", skip_serializing_if = "Option::is_none")]
    pub unsafe_set: Option<Region>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
}

fn default_delta() -> f64 {
    DEFAULT_DELTA
}

fn default_tau() -> f64 {
    DEFAULT_TAU
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleConfig {
    #[serde(rename = "N")]
    pub n: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub hidden: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    #[serde(flatten)]
    pub hyper: HyperParams,
    /// Seed of the sample-independent initial parameters.
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationConfig {
    pub m: usize,
    pub seed: u64,
}

/// Complete input of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub system: SystemConfig,
    pub property: PropertyConfig,
    pub horizon: usize,
    pub samples: SampleConfig,
    pub network: NetworkConfig,
    /// Lattice densities; defaults depend on the state dimension.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grids: Option<GridDensities>,
    pub synth: SynthConfig,
    pub beta: f64,
    pub validation: ValidationConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
}

pub const PRESETS: [&str; 6] = [
    "spiral-reach",
    "spiral-safe",
    "spiral-rwa",
    "spiral-unsafe",
    "highdim8-safe",
    "nonlinear4-safe",
];

fn boxed(low: &[f64], high: &[f64]) -> Region {
    Region::new_box(low.to_vec(), high.to_vec()).expect("preset box")
}

fn spiral(name: &str, kind: PropertyKind, unsafe_low_x2: f64) -> ExperimentConfig {
    let needs_goal = kind.needs_goal();
    let needs_unsafe = kind.needs_unsafe();
    ExperimentConfig {
        name: name.to_string(),
        system: SystemConfig::Builtin("spiral2d".into()),
        property: PropertyConfig {
            kind,
            domain: boxed(&[-3.0, -3.0], &[3.0, 3.0]),
            initial: boxed(&[1.5, -0.5], &[2.5, 0.5]),
            goal: needs_goal.then(|| Region::new_ball(vec![0.0, 0.0], 0.5).expect("preset ball")),
            unsafe_set: needs_unsafe.then(|| boxed(&[-0.5, unsafe_low_x2], &[1.5, 2.5])),
            delta: DEFAULT_DELTA,
            tau: DEFAULT_TAU,
        },
        horizon: 100,
        samples: SampleConfig { n: 1000, seed: 1 },
        network: NetworkConfig { hidden: vec![5, 5] },
        grids: None,
        synth: SynthConfig { hyper: HyperParams::default(), seed: 0 },
        beta: 1e-5,
        validation: ValidationConfig { m: 1000, seed: 7919 },
        output_dir: None,
    }
}

/// Named benchmark configuration.
pub fn preset(name: &str) -> Result<ExperimentConfig, ExperimentError> {
    let cfg = match name {
        "spiral-reach" => spiral(name, PropertyKind::Reach, 2.0),
        "spiral-safe" => spiral(name, PropertyKind::Safe, 2.0),
        "spiral-rwa" => spiral(name, PropertyKind::Rwa, 2.0),
        "spiral-unsafe" => spiral(name, PropertyKind::Safe, 1.4125),
        "highdim8-safe" => ExperimentConfig {
            name: name.to_string(),
            system: SystemConfig::Builtin("highdim8".into()),
            property: PropertyConfig {
                kind: PropertyKind::Safe,
                domain: boxed(&[-2.2; 8], &[2.2; 8]),
                initial: boxed(&[0.9; 8], &[1.1; 8]),
                goal: None,
                unsafe_set: Some(boxed(&[-2.2; 8], &[-1.8; 8])),
                delta: DEFAULT_DELTA,
                tau: DEFAULT_TAU,
            },
            network: NetworkConfig { hidden: vec![10, 10] },
            ..spiral(name, PropertyKind::Safe, 2.0)
        },
        "nonlinear4-safe" => ExperimentConfig {
            name: name.to_string(),
            system: SystemConfig::Builtin("nonlinear4".into()),
            property: PropertyConfig {
                kind: PropertyKind::Safe,
                domain: boxed(&[-4.0; 4], &[4.0; 4]),
                initial: boxed(&[-0.5; 4], &[0.5; 4]),
                goal: None,
                unsafe_set: Some(boxed(&[-4.0, 2.5, -4.0, -4.0], &[4.0, 3.5, 4.0, 4.0])),
                delta: DEFAULT_DELTA,
                tau: DEFAULT_TAU,
            },
            horizon: 20,
            ..spiral(name, PropertyKind::Safe, 2.0)
        },
        other => return Err(ExperimentError::UnknownPreset(other.to_string())),
    };
    Ok(cfg)
}

/// Parses an override value: JSON if it parses, otherwise a plain string.
fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Applies `key.path=value` overrides to a JSON document.
pub fn apply_overrides(doc: &mut Value, overrides: &[String]) -> Result<(), ExperimentError> {
    for item in overrides {
        let (path, raw) = item
            .split_once('=')
            .ok_or_else(|| ExperimentError::Config(format!("override `{item}` is not key=value")))?;
        let keys: Vec<&str> = path.split('.').collect();
        if keys.iter().any(|k| k.is_empty()) {
            return Err(ExperimentError::Config(format!("bad override path `{path}`")));
        }
        let mut node = &mut *doc;
        for key in &keys[..keys.len() - 1] {
            let obj = node
                .as_object_mut()
                .ok_or_else(|| ExperimentError::Config(format!("`{path}` descends into a non-object")))?;
            node = obj.entry(key.to_string()).or_insert_with(|| Value::Object(Default::default()));
        }
        let obj = node
            .as_object_mut()
            .ok_or_else(|| ExperimentError::Config(format!("`{path}` descends into a non-object")))?;
        obj.insert(keys[keys.len() - 1].to_string(), parse_value(raw));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_json_str(s: &str) -> Result<Self, ExperimentError> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_json_str(&text)
    }

    /// Returns a copy with dotted-path overrides applied.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self, ExperimentError> {
        let mut doc = serde_json::to_value(self)?;
        apply_overrides(&mut doc, overrides)?;
        Ok(serde_json::from_value(doc)?)
    }

    pub fn hyper(&self) -> HyperParams {
        self.synth.hyper
    }

    /// Output root: the configured directory, else the environment variable, else `runs`.
    pub fn output_root(&self) -> PathBuf {
        self.output_dir
            .clone()
            .or_else(|| std::env::var(OUTPUT_DIR_ENV).ok())
            .unwrap_or_else(|| "runs".to_string())
            .into()
    }

    pub fn property_spec(&self, dim: usize) -> PropertySpec {
        let p = &self.property;
        PropertySpec {
            kind: p.kind,
            domain: p.domain.clone(),
            initial: p.initial.clone(),
            goal: p.goal.clone(),
            unsafe_set: p.unsafe_set.clone(),
            horizon: self.horizon,
            delta: p.delta,
            tau: p.tau,
            grids: self.grids.unwrap_or_else(|| GridDensities::for_dim(dim)),
        }
    }

    /// System, loss model and sampling distribution for this configuration.
    pub fn build(&self) -> Result<Setup, ExperimentError> {
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(BoundError::InvalidBeta(self.beta).into());
        }
        if self.samples.n == 0 {
            return Err(ExperimentError::Config("samples.N must be positive".into()));
        }
        let system = self.system.build()?;
        let dim = system.dim();
        if self.property.domain.dim() != dim {
            return Err(ExperimentError::Config(format!(
                "system has dimension {dim} but the domain has dimension {}",
                self.property.domain.dim()
            )));
        }
        if self.network.hidden.contains(&0) {
            return Err(ExperimentError::Config("hidden widths must be positive".into()));
        }
        let spec = self.property_spec(dim);
        let net = CertificateNet::new(NetworkSpec::new(dim, self.network.hidden.clone()));
        let model = LossModel::new(spec, net)?;
        let dist = SamplingDistribution::new(self.property.initial.clone(), self.samples.seed);
        Ok(Setup { system, model, dist })
    }
}

pub struct Setup {
    pub system: System,
    pub model: LossModel,
    pub dist: SamplingDistribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectBound {
    pub violations: usize,
    pub epsilon: f64,
}

/// Everything a run produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub certified: bool,
    pub theta: Vec<f64>,
    pub compression_indices: Vec<usize>,
    #[serde(rename = "R_N")]
    pub r_n: usize,
    pub epsilon: f64,
    pub final_max_loss: f64,
    /// Concatenated running-loss traces, decimated to at most `TRACE_POINTS` per call.
    pub loss_trace: Vec<Vec<f64>>,
    pub iterations: usize,
    pub warm_start_iterations: usize,
    pub calls: usize,
    pub wall_time_s: f64,
    pub validation: ValidationReport,
    pub direct: DirectBound,
    pub warnings: Vec<String>,
    pub config: ExperimentConfig,
}

pub const TRACE_POINTS: usize = 500;

/// Keeps roughly `max` evenly spaced points, always including the last.
pub fn decimate(trace: &[f64], max: usize) -> Vec<f64> {
    if trace.len() <= max || max < 2 {
        return trace.to_vec();
    }
    let stride = trace.len().div_ceil(max - 1);
    let mut out: Vec<f64> = trace.iter().step_by(stride).copied().collect();
    if (trace.len() - 1) % stride != 0 {
        out.push(trace[trace.len() - 1]);
    }
    out
}

/// Samples, synthesizes with discarding, bounds the risk and validates.
pub fn run(cfg: &ExperimentConfig) -> Result<RunReport, ExperimentError> {
    let setup = cfg.build()?;
    let model = &setup.model;
    let samples = dynamics::sample_trajectories(&setup.system, &setup.dist, cfg.samples.n, cfg.horizon)?;
    let ids: Vec<usize> = (0..samples.len()).collect();
    let theta0 = model.net().init_params(cfg.synth.seed);
    let result = synthesis::algorithm2(model, &samples, &ids, &theta0, &cfg.hyper())?;

    let r_n = result.compression.len();
    let epsilon = bounds::epsilon_compression(r_n, cfg.beta, cfg.samples.n)?;
    let violations = validation::direct_discard_count(model.spec(), &samples);
    let direct = DirectBound {
        violations,
        epsilon: bounds::epsilon_direct(violations, cfg.beta, cfg.samples.n)?,
    };
    let report = validation::empirical_risks(
        model,
        &result.theta,
        &setup.system,
        &cfg.property.initial,
        cfg.validation.m,
        cfg.validation.seed,
    )?;

    let mut warnings = Vec::new();
    if !result.certified {
        warnings.push(format!(
            "not certified: final max loss {:.3e} after {} calls",
            result.final_max_loss, result.calls
        ));
    }
    if cfg.validation.seed == cfg.samples.seed {
        warnings.push("validation seed equals training seed (streams are still disjoint)".into());
    }

    Ok(RunReport {
        name: cfg.name.clone(),
        certified: result.certified,
        theta: result.theta,
        compression_indices: result.compression,
        r_n,
        epsilon,
        final_max_loss: result.final_max_loss,
        loss_trace: result.loss_traces.iter().map(|t| decimate(t, TRACE_POINTS)).collect(),
        iterations: result.iterations,
        warm_start_iterations: result.warm_start_iterations,
        calls: result.calls,
        wall_time_s: result.wall_time_s,
        validation: report,
        direct,
        warnings,
        config: cfg.clone(),
    })
}

impl RunReport {
    pub fn certificate(&self) -> SavedCertificate {
        SavedCertificate {
            network: NetworkSpec::new(self.theta_dim(), self.config.network.hidden.clone()),
            theta: self.theta.clone(),
        }
    }

    fn theta_dim(&self) -> usize {
        self.config.property.domain.dim()
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Writes `report.json` and `theta.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), ExperimentError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let report = dir.join("report.json");
        fs::write(&report, serde_json::to_string_pretty(self)?).map_err(io_err(&report))?;
        let theta = dir.join("theta.json");
        fs::write(&theta, serde_json::to_string_pretty(&self.certificate())?).map_err(io_err(&theta))?;
        Ok(())
    }

    /// Re-runs validation for the stored certificate with a new sample budget and seed.
    pub fn revalidate(&self, m: usize, seed: u64) -> Result<ValidationReport, ExperimentError> {
        let setup = self.config.build()?;
        if self.theta.len() != setup.model.param_count() {
            return Err(ExperimentError::Config(format!(
                "report has {} parameters but its network needs {}",
                self.theta.len(),
                setup.model.param_count()
            )));
        }
        Ok(validation::empirical_risks(
            &setup.model,
            &self.theta,
            &setup.system,
            &self.config.property.initial,
            m,
            seed,
        )?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Sample mean and (n-1) standard deviation; std is 0 for a single value.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        MeanStd { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatSummary {
    pub name: String,
    pub repeats: usize,
    pub sample_seeds: Vec<u64>,
    pub certified: usize,
    pub epsilon: MeanStd,
    #[serde(rename = "R_N")]
    pub r_n: MeanStd,
    pub certificate_risk: MeanStd,
    pub property_risk: MeanStd,
    pub epsilon_direct: MeanStd,
    pub wall_time_s: MeanStd,
}

/// Configuration of repeat `r`: sample and validation seeds shifted by `r`.
pub fn repeat_config(cfg: &ExperimentConfig, r: usize) -> ExperimentConfig {
    let mut c = cfg.clone();
    c.samples.seed = cfg.samples.seed.wrapping_add(r as u64);
    c.validation.seed = cfg.validation.seed.wrapping_add(r as u64);
    c
}

pub fn summarize(reports: &[RunReport]) -> RepeatSummary {
    let col = |f: &dyn Fn(&RunReport) -> f64| MeanStd::of(&reports.iter().map(f).collect::<Vec<_>>());
    RepeatSummary {
        name: reports.first().map(|r| r.name.clone()).unwrap_or_default(),
        repeats: reports.len(),
        sample_seeds: reports.iter().map(|r| r.config.samples.seed).collect(),
        certified: reports.iter().filter(|r| r.certified).count(),
        epsilon: col(&|r| r.epsilon),
        r_n: col(&|r| r.r_n as f64),
        certificate_risk: col(&|r| r.validation.certificate_risk),
        property_risk: col(&|r| r.validation.property_risk),
        epsilon_direct: col(&|r| r.direct.epsilon),
        wall_time_s: col(&|r| r.wall_time_s),
    }
}

/// `x1,x2,V,sub0,sub_delta` over an `r x r` grid of the domain's bounding box.
pub fn surface_csv(cfg: &ExperimentConfig, cert: &SavedCertificate, resolution: usize) -> Result<String, ExperimentError> {
    let dim = cfg.property.domain.dim();
    if dim != 2 || cert.network.input_dim != 2 {
        return Err(ExperimentError::NotPlanar(if dim != 2 { dim } else { cert.network.input_dim }));
    }
    if resolution < 2 {
        return Err(ExperimentError::Config("surface resolution must be at least 2".into()));
    }
    let net = CertificateNet::new(cert.network.clone());
    if cert.theta.len() != net.param_count() {
        return Err(ExperimentError::Config(format!(
            "certificate has {} parameters but its network needs {}",
            cert.theta.len(),
            net.param_count()
        )));
    }
    let (low, high) = cfg.property.domain.bounding_box();
    let delta = cfg.property.delta;
    let mut ws = net.workspace();
    let mut out = String::from("x1,x2,V,sub0,sub_delta\n");
    let pts = crate::regions::grid(&Region::new_box(low, high)?, crate::regions::GridRole::Full, resolution)?;
    for x in pts {
        let v = net.eval_with(&cert.theta, &x, &mut ws);
        out.push_str(&format!("{},{},{},{},{}\n", x[0], x[1], v, (v <= 0.0) as u8, (v <= -delta) as u8));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "R_N")]
    pub r_n: usize,
    pub eps_compression: f64,
    pub direct_violations: usize,
    pub eps_direct: f64,
    pub certified: bool,
}

/// Synthesizes at every `N` and tabulates both risk bounds.
pub fn compare_bounds(cfg: &ExperimentConfig, ns: &[usize]) -> Result<Vec<ComparisonRow>, ExperimentError> {
    ns.iter()
        .map(|&n| {
            let mut c = cfg.clone();
            c.samples.n = n;
            let setup = c.build()?;
            let samples = dynamics::sample_trajectories(&setup.system, &setup.dist, n, c.horizon)?;
            let ids: Vec<usize> = (0..n).collect();
            let theta0 = setup.model.net().init_params(c.synth.seed);
            let res = synthesis::algorithm2(&setup.model, &samples, &ids, &theta0, &c.hyper())?;
            let violations = validation::direct_discard_count(setup.model.spec(), &samples);
            Ok(ComparisonRow {
                n,
                r_n: res.compression.len(),
                eps_compression: bounds::epsilon_compression(res.compression.len(), c.beta, n)?,
                direct_violations: violations,
                eps_direct: bounds::epsilon_direct(violations, c.beta, n)?,
                certified: res.certified,
            })
        })
        .collect()
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut out = String::from("N,R_N,eps_compression,direct_violations,eps_direct\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.n, r.r_n, r.eps_compression, r.direct_violations, r.eps_direct
        ));
    }
    out
}

/// Rolls out trajectories as CSV `traj,k,x1..xn`: from `x0` if given,
/// otherwise `count` draws from the initial set.
pub fn simulate_csv(cfg: &ExperimentConfig, x0: Option<&[f64]>, count: usize, steps: usize) -> Result<String, ExperimentError> {
    let system = cfg.system.build()?;
    let trajs = match x0 {
        Some(x) => vec![system.unroll(x, steps)?],
        None => {
            let dist = SamplingDistribution::new(cfg.property.initial.clone(), cfg.samples.seed);
            dynamics::sample_trajectories(&system, &dist, count, steps)?
        }
    };
    let dim = system.dim();
    let mut out = String::from("traj,k");
    for i in 1..=dim {
        out.push_str(&format!(",x{i}"));
    }
    out.push('\n');
    for (t, xi) in trajs.iter().enumerate() {
        for (k, x) in xi.states().enumerate() {
            out.push_str(&format!("{t},{k}"));
            for v in x {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
    }
    Ok(out)
}
