//! Discrete-time systems `x(k+1) = f(x(k))`, trajectory unrolling and
//! reproducible sampling of initial states.
//!
//! Sampling uses ChaCha8 as a counter-based generator: sample `i` of a run
//! with seed `s` is drawn from the ChaCha8 stream `i` keyed by `s`, so it
//! does not depend on how many samples are requested. Validation draws use
//! streams with the top bit set, which training never touches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynexpr::{self, Expr, ExprError};
use crate::regions::Region;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("state has dimension {got}, system expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite state at step {step}")]
    NonFinite { step: usize },
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("at least one sample is required")]
    NoSamples,
    #[error("unknown built-in system `{0}` (expected spiral2d, highdim8 or nonlinear4)")]
    UnknownBuiltin(String),
    #[error("coordinate {coord}: {source}")]
    Expression { coord: usize, source: ExprError },
    #[error("sampling region has dimension {got}, system expects {expected}")]
    RegionDimension { expected: usize, got: usize },
}

/// Offset added to the stream index of fresh validation samples.
pub const VALIDATION_STREAM_OFFSET: u64 = 1 << 63;

const HIGHDIM8_GAINS: [f64; 8] = [576.0, 2400.0, 4180.0, 3980.0, 2273.0, 800.0, 170.0, 20.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Builtin {
    /// Damped planar spiral, sampling period 0.1.
    Spiral2d,
    /// Eight-state chain of integrators closed by linear feedback.
    Highdim8,
    /// Four-state nonlinear system with trigonometric and square-root terms.
    Nonlinear4,
}

impl Builtin {
    pub fn from_name(name: &str) -> Result<Self, DynamicsError> {
        match name {
            "spiral2d" => Ok(Builtin::Spiral2d),
            "highdim8" => Ok(Builtin::Highdim8),
            "nonlinear4" => Ok(Builtin::Nonlinear4),
            other => Err(DynamicsError::UnknownBuiltin(other.to_string())),
        }
    }

    pub fn dim(self) -> usize {
        match self {
            Builtin::Spiral2d => 2,
            Builtin::Highdim8 => 8,
            Builtin::Nonlinear4 => 4,
        }
    }

    fn apply(self, x: &[f64], out: &mut [f64]) {
        match self {
            Builtin::Spiral2d => {
                let h = 0.1 / 2.0;
                out[0] = x[0] - h * x[1];
                out[1] = x[1] + h * (x[0] - x[1]);
            }
            Builtin::Highdim8 => {
                for i in 0..7 {
                    out[i] = x[i] + 0.1 * x[i + 1];
                }
                let feedback: f64 = HIGHDIM8_GAINS.iter().zip(x).map(|(g, v)| g * v).sum();
                out[7] = x[7] - 0.1 * feedback;
            }
            Builtin::Nonlinear4 => {
                out[0] = x[0] + 0.1 * (x[0] * x[1] / 5.0 - x[2] * x[3] / 2.0);
                out[1] = x[1] + 0.1 * x[3].cos();
                out[2] = x[2] + 0.001 * x[0].abs().sqrt();
                out[3] = x[3] + 0.1 * (-x[0] - x[1] * x[1] + x[3].sin());
            }
        }
    }
}

/// Deterministic update map.
#[derive(Debug, Clone, PartialEq)]
pub enum System {
    Builtin(Builtin),
    /// One expression per coordinate; the state dimension is the number of expressions.
    Expressions(Vec<Expr>),
}

impl System {
    pub fn builtin(name: &str) -> Result<Self, DynamicsError> {
        Builtin::from_name(name).map(System::Builtin)
    }

    pub fn from_expressions<S: AsRef<str>>(sources: &[S]) -> Result<Self, DynamicsError> {
        let dim = sources.len();
        let exprs = sources
            .iter()
            .enumerate()
            .map(|(coord, s)| {
                let e = dynexpr::parse(s.as_ref())
                    .map_err(|source| DynamicsError::Expression { coord: coord + 1, source })?;
                if e.max_var() > dim {
                    return Err(DynamicsError::Expression {
                        coord: coord + 1,
                        source: ExprError::VariableOutOfRange { index: e.max_var(), dim },
                    });
                }
                Ok(e)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(System::Expressions(exprs))
    }

    pub fn dim(&self) -> usize {
        match self {
            System::Builtin(b) => b.dim(),
            System::Expressions(e) => e.len(),
        }
    }

    /// One application of the update map.
    pub fn step(&self, x: &[f64]) -> Result<Vec<f64>, DynamicsError> {
        let mut out = vec![0.0; self.dim()];
        self.step_into(x, &mut out, 0)?;
        Ok(out)
    }

    fn step_into(&self, x: &[f64], out: &mut [f64], step: usize) -> Result<(), DynamicsError> {
        if x.len() != self.dim() {
            return Err(DynamicsError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        match self {
            System::Builtin(b) => b.apply(x, out),
            System::Expressions(exprs) => {
                for (o, e) in out.iter_mut().zip(exprs) {
                    *o = e.eval(x).map_err(|_| DynamicsError::NonFinite { step })?;
                }
            }
        }
        if out.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(DynamicsError::NonFinite { step })
        }
    }

    /// States `x(0..=horizon)` starting from `x0`.
    pub fn unroll(&self, x0: &[f64], horizon: usize) -> Result<Trajectory, DynamicsError> {
        if horizon == 0 {
            return Err(DynamicsError::ZeroHorizon);
        }
        let n = self.dim();
        if x0.len() != n {
            return Err(DynamicsError::DimensionMismatch { expected: n, got: x0.len() });
        }
        let mut states = vec![0.0; n * (horizon + 1)];
        states[..n].copy_from_slice(x0);
        for k in 0..horizon {
            let (done, rest) = states.split_at_mut((k + 1) * n);
            self.step_into(&done[k * n..], &mut rest[..n], k + 1)?;
        }
        Ok(Trajectory { dim: n, states })
    }
}

/// A finite state sequence `x(0), ..., x(T)` stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    dim: usize,
    states: Vec<f64>,
}

impl Trajectory {
    pub fn from_states(states: &[Vec<f64>]) -> Self {
        let dim = states.first().map_or(0, |s| s.len());
        assert!(states.len() >= 2, "a trajectory needs at least two states");
        assert!(states.iter().all(|s| s.len() == dim), "ragged trajectory");
        Trajectory {
            dim,
            states: states.concat(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of steps `T`; there are `T + 1` states.
    pub fn horizon(&self) -> usize {
        self.states.len() / self.dim - 1
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn initial(&self) -> &[f64] {
        self.state(0)
    }

    pub fn states(&self) -> impl Iterator<Item = &[f64]> {
        self.states.chunks_exact(self.dim)
    }

    /// Prefix `x(0..=k)` as its own trajectory.
    pub fn truncate(&self, k: usize) -> Trajectory {
        Trajectory {
            dim: self.dim,
            states: self.states[..(k + 1) * self.dim].to_vec(),
        }
    }
}

/// Uniform distribution over a box or ball of initial states.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingDistribution {
    pub region: Region,
    pub seed: u64,
}

impl SamplingDistribution {
    pub fn new(region: Region, seed: u64) -> Self {
        SamplingDistribution { region, seed }
    }

    /// Initial state on stream `stream`. Pure in `(seed, stream)`.
    pub fn draw(&self, stream: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        match &self.region {
            Region::Box { low, high } => low
                .iter()
                .zip(high)
                .map(|(l, h)| l + (h - l) * rng.random::<f64>())
                .collect(),
            Region::Ball { center, radius } => {
                let n = center.len();
                let dir: Vec<f64> = loop {
                    let g: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
                    let norm = g.iter().map(|v: &f64| v * v).sum::<f64>().sqrt();
                    if norm > 0.0 {
                        break g.into_iter().map(|v| v / norm).collect();
                    }
                };
                let r = radius * rng.random::<f64>().powf(1.0 / n as f64);
                center.iter().zip(dir).map(|(c, d)| c + r * d).collect()
            }
        }
    }
}

fn sample_streams(
    system: &System,
    dist: &SamplingDistribution,
    streams: impl IntoParallelIterator<Item = u64>,
    horizon: usize,
) -> Result<Vec<Trajectory>, DynamicsError> {
    if dist.region.dim() != system.dim() {
        return Err(DynamicsError::RegionDimension {
            expected: system.dim(),
            got: dist.region.dim(),
        });
    }
    streams
        .into_par_iter()
        .map(|s| system.unroll(&dist.draw(s), horizon))
        .collect()
}

/// `n` i.i.d. trajectories of length `horizon`; sample `i` uses stream `i`.
pub fn sample_trajectories(
    system: &System,
    dist: &SamplingDistribution,
    n: usize,
    horizon: usize,
) -> Result<Vec<Trajectory>, DynamicsError> {
    if n == 0 {
        return Err(DynamicsError::NoSamples);
    }
    sample_streams(system, dist, 0..n as u64, horizon)
}

/// Fresh trajectories from the validation stream space, disjoint from training draws.
pub fn sample_validation_trajectories(
    system: &System,
    dist: &SamplingDistribution,
    m: usize,
    horizon: usize,
) -> Result<Vec<Trajectory>, DynamicsError> {
    if m == 0 {
        return Err(DynamicsError::NoSamples);
    }
    sample_streams(
        system,
        dist,
        (0..m as u64).into_par_iter().map(|j| VALIDATION_STREAM_OFFSET | j),
        horizon,
    )
}
