use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::mechanisms::{laplace_mechanism, ReleaseMechanism};
use crate::population::{MembershipPrior, Population};
use crate::scalar::Scalar;
use crate::stats::{child_rng, Estimate};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedDp {
    pub epsilon: f64,
    pub scale: f64,
    /// E[Σ κ_j|δ_j|] of the mechanism being matched.
    pub target: Estimate,
    /// The same quantity for Laplace at `epsilon`, on the matching draws.
    pub achieved: Estimate,
    pub iterations: usize,
}

const REL_TOL: f64 = 1e-4;
const MAX_ITER: usize = 200;
/// Streams reserved for matching so it never shares draws with training.
const MATCH_STREAM: u64 = 20;

/// Bisects ε of a Laplace(sensitivity/ε) mechanism until its κ-weighted
/// utility loss matches that of `mech`. Every Laplace evaluation reuses
/// the same random stream, so the loss is monotone in ε.
pub fn matched_utility_dp<T: Scalar>(
    mech: &ReleaseMechanism<T>,
    pop: &Population<T>,
    prior: &MembershipPrior,
    kappa: &[f64],
    sensitivity: f64,
    n_samples: usize,
    seed: u64,
) -> Result<MatchedDp> {
    if n_samples == 0 {
        return Err(invalid("n_samples", "must be positive"));
    }
    if !(sensitivity > 0.0 && sensitivity.is_finite()) {
        return Err(invalid("sensitivity", format!("{sensitivity} must be positive")));
    }
    let target = mech.expected_utility_loss(pop, prior, kappa, n_samples, &mut child_rng(seed, MATCH_STREAM))?;
    if !(target.mean > 0.0) {
        return Err(Error::Unmatched(format!("the {} mechanism has zero κ-weighted utility loss; ε would be infinite", mech.name())));
    }
    let loss = |eps: f64| -> Result<Estimate> {
        laplace_mechanism::<T>(eps, sensitivity)?.expected_utility_loss(pop, prior, kappa, n_samples, &mut child_rng(seed, MATCH_STREAM + 1))
    };
    // E|δ_j| = scale gives the starting guess.
    let guess = sensitivity * kappa.iter().sum::<f64>() / target.mean;
    let (mut lo, mut hi) = (guess / 2.0, guess * 2.0);
    let mut iterations = 0;
    while loss(lo)?.mean < target.mean {
        lo /= 2.0;
        iterations += 1;
        if iterations > MAX_ITER {
            return Err(Error::Unmatched("no ε reaches the target loss".into()));
        }
    }
    while loss(hi)?.mean > target.mean {
        hi *= 2.0;
        iterations += 1;
        if iterations > MAX_ITER {
            return Err(Error::Unmatched("no ε is small enough".into()));
        }
    }
    loop {
        let mid = (lo * hi).sqrt();
        let achieved = loss(mid)?;
        iterations += 1;
        if (achieved.mean - target.mean).abs() <= REL_TOL * target.mean || iterations >= MAX_ITER {
            return Ok(MatchedDp { epsilon: mid, scale: sensitivity / mid, target, achieved, iterations });
        }
        if achieved.mean > target.mean {
            lo = mid;
        } else {
            hi = mid;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanisms::MeanMap;
    use crate::population::{generate_population, AafDistribution};
    use crate::stats::rng;

    fn pop() -> Population<f64> {
        generate_population(12, 20, &AafDistribution::default(), 1).unwrap()
    }

    #[test]
    fn zero_noise_is_unmatched() {
        let p = pop();
        let q = MembershipPrior::bernoulli(12, 0.5);
        let r = matched_utility_dp(&ReleaseMechanism::zero_noise(), &p, &q, &[1.0; 20], 2.0, 100, 0);
        assert!(matches!(r, Err(Error::Unmatched(_))));
    }

    #[test]
    fn laplace_is_a_fixed_point() {
        let p = pop();
        let q = MembershipPrior::bernoulli(12, 0.5);
        let kappa: Vec<f64> = (0..20).map(|j| (j % 3) as f64).collect();
        let own = laplace_mechanism::<f64>(40.0, 2.0).unwrap();
        let m = matched_utility_dp(&own, &p, &q, &kappa, 2.0, 4000, 3).unwrap();
        let tol = 0.01 + 3.0 * m.target.se.hypot(m.achieved.se) / m.target.mean;
        assert!((m.epsilon / 40.0 - 1.0).abs() <= tol, "{m:?}");
    }

    #[test]
    fn closed_form_scale() {
        // Zero-mean Gaussian with sd s·√(π/2) has E|δ_j| = s, so ε = sens/s.
        let p = pop();
        let q = MembershipPrior::bernoulli(12, 0.5);
        let s = 0.03;
        let sd = s * (std::f64::consts::PI / 2.0).sqrt();
        let g = ReleaseMechanism::gaussian(MeanMap::Zero, vec![sd * sd; 20]).unwrap();
        let m = matched_utility_dp(&g, &p, &q, &[1.0; 20], 2.0, 5000, 4).unwrap();
        assert!((m.scale / s - 1.0).abs() <= 0.01 + 3.0 * m.target.se / m.target.mean, "{m:?}");
        assert!((m.epsilon - 2.0 / s).abs() / (2.0 / s) < 0.02);
    }

    #[test]
    fn round_trip_through_expected_loss() {
        let p = pop();
        let q = MembershipPrior::bernoulli(12, 0.3);
        let g = ReleaseMechanism::gaussian(MeanMap::blind(vec![0.01; 20]), vec![0.002; 20]).unwrap();
        let kappa: Vec<f64> = (0..20).map(|j| if j % 10 == 0 { 50.0 } else { 0.0 }).collect();
        let m = matched_utility_dp(&g, &p, &q, &kappa, 20.0, 3000, 5).unwrap();
        let back = laplace_mechanism::<f64>(m.epsilon, 20.0).unwrap().expected_utility_loss(&p, &q, &kappa, 3000, &mut rng(99)).unwrap();
        let slack = 0.01 * m.target.mean + 3.0 * back.se.hypot(m.target.se);
        assert!((back.mean - m.target.mean).abs() <= slack, "{back} vs {}", m.target);
    }
}
