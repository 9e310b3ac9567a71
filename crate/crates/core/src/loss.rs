//! Certificate losses.
//!
//! The loss of a parameter vector on a trajectory is
//! `L(θ, ξ) = l_s(θ) + l_Δ(θ, ξ)`: a sample-independent hinge loss over
//! fixed lattices of the relevant sets, plus a hinge on the worst one-step
//! difference of `V_θ` along the trajectory. Both are zero exactly when the
//! certificate conditions hold on the lattices and the trajectory.
//!
//! Suprema and infima over continuous sets are replaced by maxima and minima
//! over the lattices. The supremum over the initial set additionally takes
//! the trajectory's own initial state into account, since it is a member of
//! that set; this keeps the telescoped decrease bound exact along training
//! trajectories.
//!
//! Subgradients differentiate through a deterministic selection of every
//! `max`/`min`: the lowest index wins ties.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::certificate::{CertificateNet, Workspace};
use crate::dynamics::Trajectory;
use crate::regions::{self, GridRole, Region, RegionError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error(transparent)]
    Region(#[from] RegionError),
    #[error("property kind `{kind}` requires the `{region}` region")]
    MissingRegion { kind: PropertyKind, region: &'static str },
    #[error("region `{0}` has a different dimension from the domain")]
    RegionDimension(&'static str),
    #[error("goal region must be contained in the domain")]
    GoalOutsideDomain,
    #[error("{0} must not intersect the unsafe set")]
    Overlap(&'static str),
    #[error("invalid margin: delta must be > 0 and tau >= 0 (delta = {delta}, tau = {tau})")]
    InvalidMargin { delta: f64, tau: f64 },
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("trajectory horizon {got} does not match property horizon {expected}")]
    HorizonMismatch { expected: usize, got: usize },
    #[error("network input dimension {net} does not match state dimension {state}")]
    NetworkDimension { net: usize, state: usize },
    #[error("lattice for `{0}` is empty; increase its density")]
    EmptyGrid(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PropertyKind {
    Reach,
    Safe,
    Rwa,
}

impl std::fmt::Display for PropertyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PropertyKind::Reach => "reach",
            PropertyKind::Safe => "safe",
            PropertyKind::Rwa => "rwa",
        })
    }
}

impl PropertyKind {
    pub fn needs_goal(self) -> bool {
        matches!(self, PropertyKind::Reach | PropertyKind::Rwa)
    }

    pub fn needs_unsafe(self) -> bool {
        matches!(self, PropertyKind::Safe | PropertyKind::Rwa)
    }
}

/// Points per axis for each lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridDensities {
    pub initial: usize,
    pub domain_minus_goal: usize,
    pub boundary: usize,
    #[serde(rename = "unsafe")]
    pub unsafe_set: usize,
}

impl GridDensities {
    /// 10 / 30 / 30 / 10 points per axis up to four dimensions, halved for
    /// every dimension above four, never below 3.
    pub fn for_dim(n: usize) -> Self {
        let scale = |base: usize| {
            let shift = n.saturating_sub(4).min(16) as u32;
            (base >> shift).max(3)
        };
        GridDensities {
            initial: scale(10),
            domain_minus_goal: scale(30),
            boundary: scale(30),
            unsafe_set: scale(10),
        }
    }
}

pub const DEFAULT_DELTA: f64 = 0.1;
pub const DEFAULT_TAU: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertySpec {
    pub kind: PropertyKind,
    pub domain: Region,
    pub initial: Region,
    #[serde(default)]
    pub goal: Option<Region>,
    #[serde(default, rename = "unsafe")]
    pub unsafe_set: Option<Region>,
    pub horizon: usize,
    pub delta: f64,
    pub tau: f64,
    pub grids: GridDensities,
}

impl PropertySpec {
    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn validate(&self) -> Result<(), LossError> {
        self.domain.validate()?;
        self.initial.validate()?;
        if self.initial.dim() != self.dim() {
            return Err(LossError::RegionDimension("initial"));
        }
        if !(self.delta > 0.0) || !(self.tau >= 0.0) || !self.delta.is_finite() || !self.tau.is_finite() {
            return Err(LossError::InvalidMargin { delta: self.delta, tau: self.tau });
        }
        if self.horizon == 0 {
            return Err(LossError::ZeroHorizon);
        }
        let goal = match (&self.goal, self.kind.needs_goal()) {
            (Some(g), true) => {
                g.validate()?;
                if g.dim() != self.dim() {
                    return Err(LossError::RegionDimension("goal"));
                }
                if !self.domain.contains_region(g) {
                    return Err(LossError::GoalOutsideDomain);
                }
                Some(g)
            }
            (None, true) => return Err(LossError::MissingRegion { kind: self.kind, region: "goal" }),
            _ => None,
        };
        if self.kind.needs_unsafe() {
            let Some(u) = &self.unsafe_set else {
                return Err(LossError::MissingRegion { kind: self.kind, region: "unsafe" });
            };
            u.validate()?;
            if u.dim() != self.dim() {
                return Err(LossError::RegionDimension("unsafe"));
            }
            let p = self.grids.initial.max(self.grids.unsafe_set);
            let disjoint = |a: &Region| -> Result<bool, LossError> {
                Ok(regions::disjoint_on_probe(a, u, p)? && regions::disjoint_on_probe(u, a, p)?)
            };
            if !disjoint(&self.initial)? {
                return Err(LossError::Overlap("initial set"));
            }
            if let Some(g) = goal {
                if self.kind == PropertyKind::Rwa && !disjoint(g)? {
                    return Err(LossError::Overlap("goal set"));
                }
            }
        }
        Ok(())
    }
}

/// Flat list of lattice points.
#[derive(Debug, Clone)]
struct PointSet {
    dim: usize,
    pts: Vec<f64>,
}

impl PointSet {
    fn build(region: &Region, role: GridRole<'_>, p: usize, name: &'static str) -> Result<Self, LossError> {
        let pts = regions::grid(region, role, p)?;
        if pts.is_empty() {
            return Err(LossError::EmptyGrid(name));
        }
        Ok(PointSet {
            dim: region.dim(),
            pts: pts.concat(),
        })
    }

    fn len(&self) -> usize {
        self.pts.len() / self.dim
    }

    fn point(&self, i: usize) -> &[f64] {
        &self.pts[i * self.dim..(i + 1) * self.dim]
    }

    fn values(&self, net: &CertificateNet, theta: &[f64]) -> Vec<f64> {
        let mut ws = net.workspace();
        self.pts
            .chunks_exact(self.dim)
            .map(|x| net.eval_with(theta, x, &mut ws))
            .collect()
    }
}

/// Argmax with lowest-index tie-breaking.
fn argmax(values: &[f64]) -> (usize, f64) {
    let mut best = (0, values[0]);
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

fn argmin(values: &[f64]) -> (usize, f64) {
    let mut best = (0, values[0]);
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v < best.1 {
            best = (i, v);
        }
    }
    best
}

/// Sample-independent quantities at one parameter vector.
#[derive(Debug, Clone)]
pub struct StateTerms {
    /// `l_s(θ)`.
    pub loss: f64,
    /// Maximum of `V` over the initial lattice and its index.
    pub sup_initial: (usize, f64),
    /// Minimum of `V` over the unsafe lattice and its index.
    pub inf_unsafe: Option<(usize, f64)>,
    initial_values: Vec<f64>,
    goal_free_values: Vec<f64>,
    boundary_values: Vec<f64>,
    unsafe_values: Vec<f64>,
}

/// Which difference condition a selected step belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DifferenceTerm {
    /// Decrease until the goal level is reached.
    Reach,
    /// Bounded increase over the whole horizon.
    Safe,
    /// Bounded increase after the goal level is reached.
    AvoidTail,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActiveTerm {
    pub term: DifferenceTerm,
    /// Step `k` of the selected difference `V(x(k+1)) - V(x(k))`.
    pub step: usize,
    pub excess: f64,
}

/// Trajectory loss and the selections needed for its subgradient.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajTerms {
    pub loss: f64,
    pub k_goal: Option<usize>,
    pub active: Vec<ActiveTerm>,
    /// The initial-set supremum came from `x(0)` rather than the lattice.
    pub sup_from_initial_state: bool,
    /// Step of the largest difference in the first condition, if any.
    pub worst_step: Option<usize>,
}

/// First `k` with `V(x(k)) <= -delta`, else `T`.
pub fn k_goal(values: &[f64], delta: f64) -> usize {
    let horizon = values.len() - 1;
    values.iter().position(|&v| v <= -delta).unwrap_or(horizon)
}

/// Largest one-step difference over `k in range`, lowest `k` on ties.
fn max_difference(values: &[f64], range: std::ops::Range<usize>) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for k in range {
        let d = values[k + 1] - values[k];
        if best.is_none_or(|(_, b)| d > b) {
            best = Some((k, d));
        }
    }
    best
}

/// Trajectory loss from the values `V(x(0)), ..., V(x(T))`.
///
/// `sup_initial` stands in for the supremum of `V` over the initial set and
/// `inf_unsafe` for the infimum over the unsafe set (ignored for reach).
pub fn difference_loss(
    kind: PropertyKind,
    values: &[f64],
    sup_initial: f64,
    inf_unsafe: f64,
    delta: f64,
) -> TrajTerms {
    let horizon = values.len() - 1;
    let t = horizon as f64;
    let mut out = TrajTerms {
        loss: 0.0,
        k_goal: None,
        active: Vec::new(),
        sup_from_initial_state: false,
        worst_step: None,
    };
    let hinge = |term, best: Option<(usize, f64)>, threshold: f64, out: &mut TrajTerms| {
        if let Some((step, d)) = best {
            let excess = d - threshold;
            if excess > 0.0 {
                out.loss += excess;
                out.active.push(ActiveTerm { term, step, excess });
            }
        }
    };
    match kind {
        PropertyKind::Reach | PropertyKind::Rwa => {
            let kg = k_goal(values, delta);
            out.k_goal = Some(kg);
            let best = max_difference(values, 0..kg);
            out.worst_step = best.map(|b| b.0);
            hinge(DifferenceTerm::Reach, best, -(sup_initial + delta) / t, &mut out);
            if kind == PropertyKind::Rwa {
                let tail = max_difference(values, kg..horizon);
                hinge(DifferenceTerm::AvoidTail, tail, (inf_unsafe + delta) / t, &mut out);
            }
        }
        PropertyKind::Safe => {
            let best = max_difference(values, 0..horizon);
            out.worst_step = best.map(|b| b.0);
            hinge(DifferenceTerm::Safe, best, (inf_unsafe - sup_initial) / t, &mut out);
        }
    }
    out
}

/// Per-sample loss summary with its subgradient.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub state_loss: f64,
    pub traj_loss: f64,
    pub total: f64,
    /// Step of the worst one-step difference along the trajectory.
    pub worst_step: Option<usize>,
    /// Index of the initial-lattice point attaining the supremum.
    pub worst_grid_point: usize,
    pub subgradient: Vec<f64>,
}

/// Precomputed lattices plus the network template for one property.
#[derive(Debug, Clone)]
pub struct LossModel {
    spec: PropertySpec,
    net: CertificateNet,
    initial: PointSet,
    goal_free: Option<PointSet>,
    boundary: Option<PointSet>,
    unsafe_pts: Option<PointSet>,
}

impl LossModel {
    pub fn new(spec: PropertySpec, net: CertificateNet) -> Result<Self, LossError> {
        spec.validate()?;
        if net.input_dim() != spec.dim() {
            return Err(LossError::NetworkDimension { net: net.input_dim(), state: spec.dim() });
        }
        let g = spec.grids;
        let initial = PointSet::build(&spec.initial, GridRole::Full, g.initial, "initial")?;
        let (goal_free, boundary) = if spec.kind.needs_goal() {
            let goal = spec.goal.as_ref().expect("validated");
            (
                Some(PointSet::build(
                    &spec.domain,
                    GridRole::ExcludingGoal(goal),
                    g.domain_minus_goal,
                    "domain_minus_goal",
                )?),
                Some(PointSet::build(&spec.domain, GridRole::Boundary, g.boundary, "boundary")?),
            )
        } else {
            (None, None)
        };
        let unsafe_pts = if spec.kind.needs_unsafe() {
            let u = spec.unsafe_set.as_ref().expect("validated");
            Some(PointSet::build(u, GridRole::Full, g.unsafe_set, "unsafe")?)
        } else {
            None
        };
        Ok(LossModel {
            spec,
            net,
            initial,
            goal_free,
            boundary,
            unsafe_pts,
        })
    }

    pub fn spec(&self) -> &PropertySpec {
        &self.spec
    }

    pub fn net(&self) -> &CertificateNet {
        &self.net
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count()
    }

    /// Lattice sizes `(initial, domain_minus_goal, boundary, unsafe)`.
    pub fn grid_sizes(&self) -> [usize; 4] {
        [
            self.initial.len(),
            self.goal_free.as_ref().map_or(0, PointSet::len),
            self.boundary.as_ref().map_or(0, PointSet::len),
            self.unsafe_pts.as_ref().map_or(0, PointSet::len),
        ]
    }

    pub fn check_trajectory(&self, xi: &Trajectory) -> Result<(), LossError> {
        if xi.horizon() != self.spec.horizon {
            return Err(LossError::HorizonMismatch { expected: self.spec.horizon, got: xi.horizon() });
        }
        if xi.dim() != self.spec.dim() {
            return Err(LossError::NetworkDimension { net: self.net.input_dim(), state: xi.dim() });
        }
        Ok(())
    }

    /// `l_s(θ)` together with the lattice extrema used by `l_Δ`.
    pub fn state_terms(&self, theta: &[f64]) -> StateTerms {
        let (delta, tau) = (self.spec.delta, self.spec.tau);
        let values = |s: &Option<PointSet>| s.as_ref().map_or_else(Vec::new, |s| s.values(&self.net, theta));
        let initial_values = self.initial.values(&self.net, theta);
        let goal_free_values = values(&self.goal_free);
        let boundary_values = values(&self.boundary);
        let unsafe_values = values(&self.unsafe_pts);
        let mean_hinge = |vals: &[f64], f: &dyn Fn(f64) -> f64| -> f64 {
            if vals.is_empty() {
                0.0
            } else {
                vals.iter().map(|&v| f(v).max(0.0)).sum::<f64>() / vals.len() as f64
            }
        };
        let mut loss = mean_hinge(&initial_values, &|v| v);
        loss += mean_hinge(&goal_free_values, &|v| -delta - v);
        loss += mean_hinge(&boundary_values, &|v| tau - v);
        loss += mean_hinge(&unsafe_values, &|v| tau - v);
        StateTerms {
            loss,
            sup_initial: argmax(&initial_values),
            inf_unsafe: (!unsafe_values.is_empty()).then(|| argmin(&unsafe_values)),
            initial_values,
            goal_free_values,
            boundary_values,
            unsafe_values,
        }
    }

    /// Adds `∇ l_s(θ)` into `grad`.
    pub fn accumulate_state_grad(&self, theta: &[f64], st: &StateTerms, grad: &mut [f64], ws: &mut Workspace) {
        let (delta, tau) = (self.spec.delta, self.spec.tau);
        let mut add = |set: &Option<&PointSet>, vals: &[f64], active: &dyn Fn(f64) -> bool, sign: f64| {
            let Some(set) = set else { return };
            let scale = sign / set.len() as f64;
            for (i, &v) in vals.iter().enumerate() {
                if active(v) {
                    self.net.accumulate_grad(theta, set.point(i), scale, grad, ws);
                }
            }
        };
        add(&Some(&self.initial), &st.initial_values, &|v| v > 0.0, 1.0);
        add(&self.goal_free.as_ref(), &st.goal_free_values, &|v| -delta - v > 0.0, -1.0);
        add(&self.boundary.as_ref(), &st.boundary_values, &|v| tau - v > 0.0, -1.0);
        add(&self.unsafe_pts.as_ref(), &st.unsafe_values, &|v| tau - v > 0.0, -1.0);
    }

    /// `V_θ` along the trajectory.
    pub fn values_along(&self, theta: &[f64], xi: &Trajectory, ws: &mut Workspace) -> Vec<f64> {
        xi.states().map(|x| self.net.eval_with(theta, x, ws)).collect()
    }

    /// `l_Δ(θ, ξ)` with its selections. The trajectory must have the property's horizon.
    pub fn traj_terms(&self, theta: &[f64], st: &StateTerms, xi: &Trajectory, ws: &mut Workspace) -> TrajTerms {
        debug_assert_eq!(xi.horizon(), self.spec.horizon);
        let values = self.values_along(theta, xi, ws);
        let (sup, from_x0) = if values[0] > st.sup_initial.1 {
            (values[0], true)
        } else {
            (st.sup_initial.1, false)
        };
        let inf_u = st.inf_unsafe.map_or(0.0, |u| u.1);
        let mut terms = difference_loss(self.spec.kind, &values, sup, inf_u, self.spec.delta);
        terms.sup_from_initial_state = from_x0;
        terms
    }

    /// Adds `∇ l_Δ(θ, ξ)` (for the selections in `terms`) into `grad`.
    pub fn accumulate_traj_grad(
        &self,
        theta: &[f64],
        st: &StateTerms,
        xi: &Trajectory,
        terms: &TrajTerms,
        grad: &mut [f64],
        ws: &mut Workspace,
    ) {
        let inv_t = 1.0 / self.spec.horizon as f64;
        for a in &terms.active {
            self.net.accumulate_grad(theta, xi.state(a.step + 1), 1.0, grad, ws);
            self.net.accumulate_grad(theta, xi.state(a.step), -1.0, grad, ws);
            let uses_sup = matches!(a.term, DifferenceTerm::Reach | DifferenceTerm::Safe);
            let uses_inf = matches!(a.term, DifferenceTerm::Safe | DifferenceTerm::AvoidTail);
            if uses_sup {
                let x = if terms.sup_from_initial_state {
                    xi.initial()
                } else {
                    self.initial.point(st.sup_initial.0)
                };
                self.net.accumulate_grad(theta, x, inv_t, grad, ws);
            }
            if uses_inf {
                let (idx, _) = st.inf_unsafe.expect("unsafe lattice present");
                let pts = self.unsafe_pts.as_ref().expect("unsafe lattice present");
                self.net.accumulate_grad(theta, pts.point(idx), -inv_t, grad, ws);
            }
        }
    }

    /// `(l_s, ∇ l_s)`.
    pub fn state_loss(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let st = self.state_terms(theta);
        let mut g = vec![0.0; self.param_count()];
        self.accumulate_state_grad(theta, &st, &mut g, &mut self.net.workspace());
        (st.loss, g)
    }

    /// `(l_Δ, ∇ l_Δ)` for one trajectory.
    pub fn traj_loss(&self, theta: &[f64], xi: &Trajectory) -> Result<(f64, Vec<f64>), LossError> {
        self.check_trajectory(xi)?;
        let st = self.state_terms(theta);
        let mut ws = self.net.workspace();
        let terms = self.traj_terms(theta, &st, xi, &mut ws);
        let mut g = vec![0.0; self.param_count()];
        self.accumulate_traj_grad(theta, &st, xi, &terms, &mut g, &mut ws);
        Ok((terms.loss, g))
    }

    /// First step at which `V` reaches `-δ` (reach and RWA only).
    pub fn k_goal(&self, theta: &[f64], xi: &Trajectory) -> Result<usize, LossError> {
        self.check_trajectory(xi)?;
        let values = self.values_along(theta, xi, &mut self.net.workspace());
        Ok(k_goal(&values, self.spec.delta))
    }

    pub fn total_loss(&self, theta: &[f64], xi: &Trajectory) -> Result<LossBreakdown, LossError> {
        self.check_trajectory(xi)?;
        let st = self.state_terms(theta);
        let mut ws = self.net.workspace();
        let terms = self.traj_terms(theta, &st, xi, &mut ws);
        let mut g = vec![0.0; self.param_count()];
        self.accumulate_state_grad(theta, &st, &mut g, &mut ws);
        self.accumulate_traj_grad(theta, &st, xi, &terms, &mut g, &mut ws);
        Ok(LossBreakdown {
            state_loss: st.loss,
            traj_loss: terms.loss,
            total: st.loss + terms.loss,
            worst_step: terms.worst_step,
            worst_grid_point: st.sup_initial.0,
            subgradient: g,
        })
    }

    /// Whether every certificate condition holds on the lattices and on `ξ`.
    pub fn check_conditions(&self, theta: &[f64], xi: &Trajectory) -> Result<bool, LossError> {
        self.check_trajectory(xi)?;
        let st = self.state_terms(theta);
        Ok(st.loss == 0.0 && self.traj_terms(theta, &st, xi, &mut self.net.workspace()).loss == 0.0)
    }

    /// Total loss of every trajectory at `θ`, in input order.
    pub fn losses(&self, theta: &[f64], samples: &[Trajectory]) -> Vec<f64> {
        let st = self.state_terms(theta);
        samples
            .par_iter()
            .map_init(
                || self.net.workspace(),
                |ws, xi| st.loss + self.traj_terms(theta, &st, xi, ws).loss,
            )
            .collect()
    }
}
