//! Certificate synthesis by subgradient descent with compression-set
//! construction, and the outer discarding loop.
//!
//! Sample identity is the index into the caller's trajectory slice. Every
//! selection (worst sample, misaligned sample, compression argmax) breaks ties
//! by the lowest index, so running either algorithm on its own returned
//! compression set replays the original iterates bit for bit.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::Trajectory;
use crate::loss::{LossError, LossModel, StateTerms};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthesisError {
    #[error("state loss still {loss:.3e} after {iters} warm-start iterations; try a larger network or more iterations")]
    WarmStart { iters: usize, loss: f64 },
    #[error("no samples to learn from")]
    NoSamples,
    #[error("sample index {0} out of range")]
    BadIndex(usize),
    #[error("invalid hyperparameter: {0}")]
    InvalidHyper(&'static str),
    #[error("initial parameter vector has length {got}, network needs {expected}")]
    ThetaLength { expected: usize, got: usize },
    #[error(transparent)]
    Loss(#[from] LossError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperParams {
    pub alpha: f64,
    pub eta: f64,
    pub max_iters: usize,
    pub warm_start_max_iters: usize,
    /// Window `P` of the stopping test `|L_k - L_{k-P}| <= η`.
    pub patience: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            alpha: 1e-2,
            eta: 1e-6,
            max_iters: 200_000,
            warm_start_max_iters: 50_000,
            patience: 100,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<(), SynthesisError> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !pos(self.alpha) {
            return Err(SynthesisError::InvalidHyper("alpha must be positive"));
        }
        if !pos(self.eta) {
            return Err(SynthesisError::InvalidHyper("eta must be positive"));
        }
        if self.max_iters == 0 || self.warm_start_max_iters == 0 || self.patience == 0 {
            return Err(SynthesisError::InvalidHyper("iteration caps must be at least 1"));
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return Err(SynthesisError::InvalidHyper("momentum parameters must lie in (0, 1)"));
        }
        if !pos(self.adam_eps) {
            return Err(SynthesisError::InvalidHyper("adam_eps must be positive"));
        }
        Ok(())
    }
}

/// Deterministic Adam update with constant step size.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    alpha: f64,
    b1: f64,
    b2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(n: usize, h: &HyperParams) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            alpha: h.alpha,
            b1: h.beta1,
            b2: h.beta2,
            eps: h.adam_eps,
        }
    }

    pub fn step(&mut self, theta: &mut [f64], g: &[f64]) {
        self.t = self.t.saturating_add(1);
        let c1 = 1.0 - self.b1.powi(self.t);
        let c2 = 1.0 - self.b2.powi(self.t);
        for i in 0..theta.len() {
            self.m[i] = self.b1 * self.m[i] + (1.0 - self.b1) * g[i];
            self.v[i] = self.b2 * self.v[i] + (1.0 - self.b2) * g[i] * g[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            theta[i] -= self.alpha * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Output of one call of the compression-set algorithm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Algorithm1Output {
    pub theta: Vec<f64>,
    /// Compression set in order of insertion, final worst-case sample last.
    pub compression: Vec<usize>,
    /// Running loss `L_1, L_2, ...`.
    pub loss_trace: Vec<f64>,
    pub iterations: usize,
    pub warm_start_iterations: usize,
    /// Terminated by the tolerance test rather than the iteration cap.
    pub converged: bool,
    /// Largest total loss over the input samples at the returned `θ`.
    pub final_max_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisResult {
    pub theta: Vec<f64>,
    /// Discarded samples `R_N` in discard order.
    pub compression: Vec<usize>,
    /// One running-loss trace per inner call.
    pub loss_traces: Vec<Vec<f64>>,
    pub iterations: usize,
    pub warm_start_iterations: usize,
    pub calls: usize,
    /// Largest total loss over the samples that were not discarded.
    pub final_max_loss: f64,
    /// Zero loss on a non-empty remainder without hitting an iteration cap.
    pub certified: bool,
    pub wall_time_s: f64,
}

impl SynthesisResult {
    pub fn compression_size(&self) -> usize {
        self.compression.len()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Total losses of `ids` at `θ`, in `ids` order.
fn sweep(model: &LossModel, theta: &[f64], st: &StateTerms, samples: &[Trajectory], ids: &[usize]) -> Vec<f64> {
    let net = model.net();
    ids.par_iter()
        .map_init(
            || net.workspace(),
            |ws, &i| st.loss + model.traj_terms(theta, st, &samples[i], ws).loss,
        )
        .collect()
}

/// Position of the largest value; lowest sample id on ties.
fn worst(losses: &[f64], ids: &[usize], among: impl Iterator<Item = usize>) -> Option<usize> {
    let mut best: Option<usize> = None;
    for p in among {
        best = match best {
            None => Some(p),
            Some(b) if losses[p] > losses[b] || (losses[p] == losses[b] && ids[p] < ids[b]) => Some(p),
            keep => keep,
        };
    }
    best
}

fn check_inputs(model: &LossModel, samples: &[Trajectory], ids: &[usize], theta0: &[f64], hyper: &HyperParams) -> Result<(), SynthesisError> {
    hyper.validate()?;
    if ids.is_empty() {
        return Err(SynthesisError::NoSamples);
    }
    if theta0.len() != model.param_count() {
        return Err(SynthesisError::ThetaLength {
            expected: model.param_count(),
            got: theta0.len(),
        });
    }
    for &i in ids {
        let xi = samples.get(i).ok_or(SynthesisError::BadIndex(i))?;
        model.check_trajectory(xi)?;
    }
    Ok(())
}

/// Descends the state loss until it is exactly zero. Returns the iteration count.
pub fn warm_start(model: &LossModel, theta: &mut [f64], hyper: &HyperParams) -> Result<usize, SynthesisError> {
    let mut adam = Adam::new(theta.len(), hyper);
    let mut ws = model.net().workspace();
    let mut g = vec![0.0; theta.len()];
    for it in 0..=hyper.warm_start_max_iters {
        let st = model.state_terms(theta);
        if st.loss == 0.0 {
            return Ok(it);
        }
        if it == hyper.warm_start_max_iters {
            return Err(SynthesisError::WarmStart { iters: it, loss: st.loss });
        }
        g.iter_mut().for_each(|v| *v = 0.0);
        model.accumulate_state_grad(theta, &st, &mut g, &mut ws);
        adam.step(theta, &g);
    }
    unreachable!()
}

/// Subgradient descent with misaligned-subgradient jumps over the samples
/// `ids` (indices into `samples`), starting from `θ0`.
pub fn algorithm1(
    model: &LossModel,
    samples: &[Trajectory],
    ids: &[usize],
    theta0: &[f64],
    hyper: &HyperParams,
) -> Result<Algorithm1Output, SynthesisError> {
    check_inputs(model, samples, ids, theta0, hyper)?;
    let mut theta = theta0.to_vec();
    let warm = warm_start(model, &mut theta, hyper)?;

    let n = theta.len();
    let net = model.net();
    let mut ws = net.workspace();
    let mut adam = Adam::new(n, hyper);
    // Positions into `ids`.
    let mut comp: Vec<usize> = Vec::new();
    let mut in_comp = vec![false; ids.len()];
    let mut trace = Vec::new();
    let mut prev = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;

    let mut st = model.state_terms(&theta);
    let mut losses = sweep(model, &theta, &st, samples, ids);
    let mut g_state = vec![0.0; n];
    let mut g_c = vec![0.0; n];
    let mut g = vec![0.0; n];

    let sample_grad = |theta: &[f64], st: &StateTerms, g_state: &[f64], i: usize, out: &mut [f64], ws: &mut _| {
        out.copy_from_slice(g_state);
        let xi = &samples[i];
        let terms = model.traj_terms(theta, st, xi, ws);
        model.accumulate_traj_grad(theta, st, xi, &terms, out, ws);
    };

    while iterations < hyper.max_iters {
        iterations += 1;
        g_state.iter_mut().for_each(|v| *v = 0.0);
        model.accumulate_state_grad(&theta, &st, &mut g_state, &mut ws);

        let c_best = worst(&losses, ids, comp.iter().copied());
        let threshold = c_best.map_or(f64::NEG_INFINITY, |p| losses[p]);
        match c_best {
            Some(p) => sample_grad(&theta, &st, &g_state, ids[p], &mut g_c, &mut ws),
            None => g_c.iter_mut().for_each(|v| *v = 0.0),
        }

        let mut candidates: Vec<usize> = (0..ids.len()).filter(|&p| losses[p] >= threshold).collect();
        candidates.sort_by(|&a, &b| losses[b].total_cmp(&losses[a]).then(ids[a].cmp(&ids[b])));
        let mut jump = None;
        for p in candidates {
            sample_grad(&theta, &st, &g_state, ids[p], &mut g, &mut ws);
            if dot(&g, &g_c) <= 0.0 && g.iter().any(|&v| v != 0.0) {
                jump = Some(p);
                break;
            }
        }

        match jump {
            Some(p) => {
                adam.step(&mut theta, &g);
                if !in_comp[p] {
                    in_comp[p] = true;
                    comp.push(p);
                }
            }
            None if comp.is_empty() => {
                // Nothing to follow: every sample has a zero subgradient.
                converged = true;
                break;
            }
            None => adam.step(&mut theta, &g_c),
        }

        st = model.state_terms(&theta);
        losses = sweep(model, &theta, &st, samples, ids);
        let c_max = comp.iter().map(|&p| losses[p]).fold(f64::NEG_INFINITY, f64::max);
        let current = prev.min(c_max);
        trace.push(current);
        // Compare with L_{k-P}; entries before the trace start are the +inf sentinel.
        let reference = if trace.len() > hyper.patience {
            trace[trace.len() - 1 - hyper.patience]
        } else {
            f64::INFINITY
        };
        if (current - reference).abs() <= hyper.eta {
            converged = true;
            break;
        }
        prev = current;
    }

    let last = worst(&losses, ids, 0..ids.len()).expect("ids non-empty");
    if !in_comp[last] {
        comp.push(last);
    }
    Ok(Algorithm1Output {
        final_max_loss: losses[last],
        theta,
        compression: comp.into_iter().map(|p| ids[p]).collect(),
        loss_trace: trace,
        iterations,
        warm_start_iterations: warm,
        converged,
    })
}

/// Repeatedly runs [`algorithm1`] and discards its compression set until the
/// worst remaining loss is zero or no samples remain.
pub fn algorithm2(
    model: &LossModel,
    samples: &[Trajectory],
    ids: &[usize],
    theta0: &[f64],
    hyper: &HyperParams,
) -> Result<SynthesisResult, SynthesisError> {
    check_inputs(model, samples, ids, theta0, hyper)?;
    let start = Instant::now();
    let mut theta = theta0.to_vec();
    let mut remaining: Vec<usize> = ids.to_vec();
    let mut discarded = Vec::new();
    let mut traces = Vec::new();
    let (mut iterations, mut warm, mut calls) = (0, 0, 0);
    let mut capped = false;

    let max_loss = |theta: &[f64], remaining: &[usize]| -> f64 {
        if remaining.is_empty() {
            return 0.0;
        }
        let st = model.state_terms(theta);
        sweep(model, theta, &st, samples, remaining)
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max)
    };

    let mut current = max_loss(&theta, &remaining);
    while current > 0.0 {
        let out = algorithm1(model, samples, &remaining, &theta, hyper)?;
        calls += 1;
        iterations += out.iterations;
        warm += out.warm_start_iterations;
        traces.push(out.loss_trace);
        theta = out.theta;
        remaining.retain(|i| !out.compression.contains(i));
        discarded.extend(out.compression);
        if !out.converged {
            capped = true;
            current = max_loss(&theta, &remaining);
            break;
        }
        current = max_loss(&theta, &remaining);
    }

    Ok(SynthesisResult {
        theta,
        compression: discarded,
        loss_traces: traces,
        iterations,
        warm_start_iterations: warm,
        calls,
        final_max_loss: current,
        certified: !capped && current == 0.0 && !remaining.is_empty(),
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}
