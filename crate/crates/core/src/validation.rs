//! Empirical risk on fresh trajectories and direct property checks.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{self, DynamicsError, SamplingDistribution, System, Trajectory};
use crate::loss::{LossModel, PropertyKind, PropertySpec};

/// Whether the trajectory satisfies the temporal property itself.
pub fn check_property(spec: &PropertySpec, xi: &Trajectory) -> bool {
    let hits = |r: &Option<crate::regions::Region>| {
        let r = r.as_ref().expect("validated spec");
        xi.states().any(|x| r.contains_unchecked(x))
    };
    match spec.kind {
        PropertyKind::Reach => hits(&spec.goal),
        PropertyKind::Safe => !hits(&spec.unsafe_set),
        PropertyKind::Rwa => {
            let u = spec.unsafe_set.as_ref().expect("validated spec");
            let stays = xi
                .states()
                .all(|x| spec.domain.contains_unchecked(x) && !u.contains_unchecked(x));
            stays && hits(&spec.goal)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub m: usize,
    pub seed: u64,
    pub certificate_violations: usize,
    pub certificate_risk: f64,
    pub property_violations: usize,
    pub property_risk: f64,
    /// Stream indices of samples failing the certificate conditions.
    pub certificate_violation_indices: Vec<usize>,
    /// Stream indices of samples violating the property.
    pub property_violation_indices: Vec<usize>,
}

/// Certificate and property verdicts on already drawn trajectories.
pub fn evaluate(model: &LossModel, theta: &[f64], trajectories: &[Trajectory], seed: u64) -> ValidationReport {
    let st = model.state_terms(theta);
    let verdicts: Vec<(bool, bool)> = trajectories
        .par_iter()
        .map_init(
            || model.net().workspace(),
            |ws, xi| {
                let cert = st.loss == 0.0 && model.traj_terms(theta, &st, xi, ws).loss == 0.0;
                (cert, check_property(model.spec(), xi))
            },
        )
        .collect();
    let m = trajectories.len();
    let cert_bad: Vec<usize> = (0..m).filter(|&i| !verdicts[i].0).collect();
    let prop_bad: Vec<usize> = (0..m).filter(|&i| !verdicts[i].1).collect();
    let rate = |c: usize| if m == 0 { 0.0 } else { c as f64 / m as f64 };
    ValidationReport {
        m,
        seed,
        certificate_violations: cert_bad.len(),
        certificate_risk: rate(cert_bad.len()),
        property_violations: prop_bad.len(),
        property_risk: rate(prop_bad.len()),
        certificate_violation_indices: cert_bad,
        property_violation_indices: prop_bad,
    }
}

/// Draws `m` fresh trajectories from the validation streams of `seed` and
/// reports both empirical risks.
pub fn empirical_risks(
    model: &LossModel,
    theta: &[f64],
    system: &System,
    initial: &crate::regions::Region,
    m: usize,
    seed: u64,
) -> Result<ValidationReport, DynamicsError> {
    let dist = SamplingDistribution::new(initial.clone(), seed);
    let trajs = dynamics::sample_validation_trajectories(system, &dist, m, model.spec().horizon)?;
    Ok(evaluate(model, theta, &trajs, seed))
}

/// Number of training trajectories that violate the property.
pub fn direct_discard_count(spec: &PropertySpec, samples: &[Trajectory]) -> usize {
    samples.par_iter().filter(|xi| !check_property(spec, xi)).count()
}
