//! State-space sets and the deterministic point lattices used by the
//! sample-independent part of the loss.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegionError {
    #[error("dimension mismatch: region has dimension {expected}, point has {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid box: need low[i] < high[i] for every axis (axis {axis}: {low} vs {high})")]
    InvalidBox { axis: usize, low: f64, high: f64 },
    #[error("invalid box: corner dimensions differ ({low} vs {high})")]
    CornerMismatch { low: usize, high: usize },
    #[error("invalid ball: radius must be positive, got {0}")]
    InvalidRadius(f64),
    #[error("region must have dimension at least 1")]
    Empty,
    #[error("lattice needs at least 2 points per axis, got {0}")]
    TooFewPoints(usize),
    #[error("goal region is not contained in the domain")]
    GoalOutsideDomain,
    #[error("boundary lattices are only defined for boxes")]
    BoundaryOfBall,
}

/// A closed axis-aligned box or Euclidean ball.
///
/// Deserializes from `{"type": "box", "low": [..], "high": [..]}` or
/// `{"type": "ball", "center": [..], "radius": r}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Region {
    Box { low: Vec<f64>, high: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
}

/// Which lattice to lay over a region.
#[derive(Debug, Clone, Copy)]
pub enum GridRole<'a> {
    /// Full lattice over the region (initial and unsafe sets).
    Full,
    /// Lattice over the domain with points inside the goal removed.
    ExcludingGoal(&'a Region),
    /// Lattice restricted to the faces of a box.
    Boundary,
}

impl Region {
    pub fn new_box(low: Vec<f64>, high: Vec<f64>) -> Result<Self, RegionError> {
        let r = Region::Box { low, high };
        r.validate()?;
        Ok(r)
    }

    pub fn new_ball(center: Vec<f64>, radius: f64) -> Result<Self, RegionError> {
        let r = Region::Ball { center, radius };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<(), RegionError> {
        match self {
            Region::Box { low, high } => {
                if low.len() != high.len() {
                    return Err(RegionError::CornerMismatch {
                        low: low.len(),
                        high: high.len(),
                    });
                }
                if low.is_empty() {
                    return Err(RegionError::Empty);
                }
                for (axis, (&l, &h)) in low.iter().zip(high).enumerate() {
                    if !(l < h) || !l.is_finite() || !h.is_finite() {
                        return Err(RegionError::InvalidBox { axis, low: l, high: h });
                    }
                }
                Ok(())
            }
            Region::Ball { center, radius } => {
                if center.is_empty() {
                    return Err(RegionError::Empty);
                }
                if !(*radius > 0.0) || !radius.is_finite() {
                    return Err(RegionError::InvalidRadius(*radius));
                }
                Ok(())
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Region::Box { low, .. } => low.len(),
            Region::Ball { center, .. } => center.len(),
        }
    }

    /// Closed-set membership, no tolerance.
    pub fn contains(&self, x: &[f64]) -> Result<bool, RegionError> {
        if x.len() != self.dim() {
            return Err(RegionError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(self.contains_unchecked(x))
    }

    /// Membership without the dimension check. Callers guarantee `x.len() == dim()`.
    pub(crate) fn contains_unchecked(&self, x: &[f64]) -> bool {
        match self {
            Region::Box { low, high } => x
                .iter()
                .zip(low.iter().zip(high))
                .all(|(&v, (&l, &h))| l <= v && v <= h),
            Region::Ball { center, radius } => {
                let d2: f64 = x.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum();
                d2 <= radius * radius
            }
        }
    }

    /// Axis-aligned bounding box as `(low, high)`.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            Region::Box { low, high } => (low.clone(), high.clone()),
            Region::Ball { center, radius } => (
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            ),
        }
    }

    /// Whether `other` lies entirely inside `self`.
    pub fn contains_region(&self, other: &Region) -> bool {
        if self.dim() != other.dim() {
            return false;
        }
        match (self, other) {
            (Region::Box { .. }, _) => {
                let (ol, oh) = other.bounding_box();
                self.contains_unchecked(&ol) && self.contains_unchecked(&oh)
            }
            (Region::Ball { center, radius }, Region::Ball { center: c2, radius: r2 }) => {
                let d: f64 = center
                    .iter()
                    .zip(c2)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                d + r2 <= *radius
            }
            (Region::Ball { .. }, Region::Box { low, high }) => {
                // A box is inside a ball iff every corner is.
                let n = low.len();
                (0..(1usize << n)).all(|mask| {
                    let corner: Vec<f64> = (0..n)
                        .map(|i| if mask >> i & 1 == 1 { high[i] } else { low[i] })
                        .collect();
                    self.contains_unchecked(&corner)
                })
            }
        }
    }
}

/// Uniform lattice coordinate `i` of `p` between `lo` and `hi`, hitting both ends exactly.
fn lattice_coord(lo: f64, hi: f64, i: usize, p: usize) -> f64 {
    if i + 1 == p {
        hi
    } else {
        lo + (hi - lo) * (i as f64) / ((p - 1) as f64)
    }
}

/// Visits every lattice point of the box `[low, high]` in lexicographic order
/// (first coordinate most significant).
fn for_each_lattice_point(low: &[f64], high: &[f64], p: usize, mut f: impl FnMut(&[usize], &[f64])) {
    let n = low.len();
    let mut idx = vec![0usize; n];
    let mut point: Vec<f64> = low.to_vec();
    loop {
        for d in 0..n {
            point[d] = lattice_coord(low[d], high[d], idx[d], p);
        }
        f(&idx, &point);
        let mut d = n;
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < p {
                break;
            }
            idx[d] = 0;
        }
    }
}

/// Deterministic lattice over `region` for the given role.
///
/// Balls are gridded through their bounding box with outside points dropped.
pub fn grid(region: &Region, role: GridRole<'_>, points_per_axis: usize) -> Result<Vec<Vec<f64>>, RegionError> {
    if points_per_axis < 2 {
        return Err(RegionError::TooFewPoints(points_per_axis));
    }
    region.validate()?;
    let p = points_per_axis;
    let (low, high) = region.bounding_box();
    let mut out = Vec::new();
    match role {
        GridRole::Full => {
            for_each_lattice_point(&low, &high, p, |_, x| {
                if region.contains_unchecked(x) {
                    out.push(x.to_vec());
                }
            });
        }
        GridRole::ExcludingGoal(goal) => {
            if goal.dim() != region.dim() {
                return Err(RegionError::DimensionMismatch {
                    expected: region.dim(),
                    got: goal.dim(),
                });
            }
            if !region.contains_region(goal) {
                return Err(RegionError::GoalOutsideDomain);
            }
            for_each_lattice_point(&low, &high, p, |_, x| {
                if region.contains_unchecked(x) && !goal.contains_unchecked(x) {
                    out.push(x.to_vec());
                }
            });
        }
        GridRole::Boundary => {
            if matches!(region, Region::Ball { .. }) {
                return Err(RegionError::BoundaryOfBall);
            }
            for_each_lattice_point(&low, &high, p, |idx, x| {
                if idx.iter().any(|&i| i == 0 || i + 1 == p) {
                    out.push(x.to_vec());
                }
            });
        }
    }
    Ok(out)
}

/// True iff no lattice point of `a` (at `points_per_axis`) lies in `b`.
pub fn disjoint_on_probe(a: &Region, b: &Region, points_per_axis: usize) -> Result<bool, RegionError> {
    if a.dim() != b.dim() {
        return Err(RegionError::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let probe = grid(a, GridRole::Full, points_per_axis)?;
    Ok(!probe.iter().any(|x| b.contains_unchecked(x)))
}
