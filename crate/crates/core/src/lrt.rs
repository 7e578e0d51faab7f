//! Likelihood-ratio membership tests.
//!
//! Convention: individual k is claimed a member iff ℓ_k ≤ τ (ties claim),
//! α is the false-positive rate on non-members and power the true-positive
//! rate on members. Confidences are −ℓ so that larger means "member".

use ndarray::{Array1, ArrayView1, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attack::{AttackDecision, Attacker, Observation};
use crate::error::{invalid, Error, Result};
use crate::mechanisms::{MechanismKind, ReleaseMechanism};
use crate::population::{MembershipPrior, MembershipVector, Population};
use crate::scalar::Scalar;
use crate::stats::{lower_quantile, norm_cdf, norm_ppf, Rng as StreamRng};

/// Stand-in for an infinite confidence; keeps decisions serializable.
pub const CERTAIN: f64 = 1e300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrtConfig {
    pub alpha: f64,
    #[serde(default)]
    pub threshold: Option<f64>,
    /// Defaults to 5% of the reference pool.
    #[serde(default)]
    pub adaptive_n: Option<usize>,
    pub calibration_samples: usize,
}

impl Default for LrtConfig {
    fn default() -> Self {
        Self { alpha: 0.05, threshold: None, adaptive_n: None, calibration_samples: 20_000 }
    }
}

pub fn default_adaptive_n(pool: usize) -> usize {
    ((pool as f64 * 0.05).round() as usize).clamp(1, pool.max(1))
}

/// Half-count clamp 1/(2|B|) applied to released values.
pub fn clamp_bound(beacon_size: usize) -> f64 {
    1.0 / (2.0 * beacon_size.max(1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lrs {
    pub value: f64,
    /// Coordinates moved by the clamp.
    pub clamped: usize,
}

fn clamp_release<T: Scalar>(released: ArrayView1<'_, T>, x_min: f64) -> (Array1<T>, usize) {
    let (lo, hi) = (T::lit(x_min), T::lit(1.0 - x_min));
    let mut clamped = 0;
    let r = released.mapv(|v| {
        if v < lo || v > hi {
            clamped += 1;
        }
        v.max(lo).min(hi)
    });
    (r, clamped)
}

/// Σ_j d_j log(p̄_j/x_j) + (1 − d_j) log((1 − p̄_j)/(1 − x_j)) with x
/// clamped to [x_min, 1 − x_min].
pub fn lrs<T: Scalar>(row: ArrayView1<'_, T>, aafs: ArrayView1<'_, T>, released: ArrayView1<'_, T>, x_min: f64) -> Lrs {
    let (x, clamped) = clamp_release(released, x_min);
    let mut value = 0.0;
    Zip::from(&row).and(&aafs).and(&x).for_each(|&d, &p, &x| {
        let (p, x) = (p.as_f64(), x.as_f64());
        value += if d == T::one() { (p / x).ln() } else { ((1.0 - p) / (1.0 - x)).ln() };
    });
    Lrs { value, clamped }
}

/// LRS weights (c, w) so that ℓ_k = c + d_k · w.
pub fn lrs_weights<T: Scalar>(aafs: ArrayView1<'_, T>, released: ArrayView1<'_, T>, x_min: f64) -> (T, Array1<T>, usize) {
    let (x, clamped) = clamp_release(released, x_min);
    let mut c = T::zero();
    let mut w = Array1::<T>::zeros(x.len());
    Zip::from(&mut w).and(&aafs).and(&x).for_each(|w, &p, &x| {
        let absent = ((T::one() - p) / (T::one() - x)).ln();
        *w = (p / x).ln() - absent;
        c += absent;
    });
    (c, w, clamped)
}

/// ℓ for every individual of `pop`.
pub fn lrs_all<T: Scalar>(pop: &Population<T>, released: ArrayView1<'_, T>, x_min: f64) -> (Array1<f64>, usize) {
    let (c, w, clamped) = lrs_weights(pop.reference_aafs(), released, x_min);
    let l = pop.genotypes().dot(&w).mapv(|v| (v + c).as_f64());
    (l, clamped)
}

pub fn fixed_threshold_attack<T: Scalar>(pop: &Population<T>, released: ArrayView1<'_, T>, tau: f64, x_min: f64) -> AttackDecision {
    let (l, _) = lrs_all(pop, released, x_min);
    AttackDecision::new(l.iter().map(|&v| -v).collect(), l.iter().map(|&v| v <= tau).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub tau: f64,
    pub samples: usize,
    /// Fraction of calibration samples with ℓ ≤ τ.
    pub achieved_fpr: f64,
}

/// Non-member LRS values from simulated beacons.
pub fn simulate_null_lrs<T: Scalar, R: Rng + ?Sized>(
    pop: &Population<T>,
    mech: &ReleaseMechanism<T>,
    prior: &MembershipPrior,
    n_samples: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n_samples);
    let mut empty_draws = 0;
    while out.len() < n_samples {
        let b = prior.sample(rng);
        if b.count() == b.len() {
            empty_draws += 1;
            if empty_draws > 10_000 && out.is_empty() {
                return Err(Error::Calibration("the prior never leaves anyone out of the beacon".into()));
            }
            continue;
        }
        let r = mech.sample_release(pop, &b, rng)?;
        let (l, _) = lrs_all(pop, r.values.view(), clamp_bound(b.count()));
        out.extend(l.iter().zip(b.bits()).filter(|(_, &m)| !m).map(|(&v, _)| v).take(n_samples - out.len()));
    }
    Ok(out)
}

/// α-quantile of the non-member LRS distribution, so that claiming at
/// ℓ ≤ τ has false-positive rate ≈ α.
pub fn calibrate_threshold<T: Scalar, R: Rng + ?Sized>(
    pop: &Population<T>,
    mech: &ReleaseMechanism<T>,
    prior: &MembershipPrior,
    alpha: f64,
    n_samples: usize,
    rng: &mut R,
) -> Result<Calibration> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(invalid("alpha", format!("{alpha} outside (0,1]")));
    }
    if n_samples < 1000 {
        return Err(invalid("n_samples", format!("{n_samples} < 1000")));
    }
    let mut v = simulate_null_lrs(pop, mech, prior, n_samples, rng)?;
    v.sort_by(f64::total_cmp);
    if v[0] == v[v.len() - 1] {
        return Err(Error::Calibration(format!("all {} simulated LRS values equal {}", v.len(), v[0])));
    }
    let tau = lower_quantile(&v, alpha);
    let achieved_fpr = v.partition_point(|&x| x <= tau) as f64 / v.len() as f64;
    Ok(Calibration { tau, samples: v.len(), achieved_fpr })
}

/// Mean of the `n` smallest values.
pub fn adaptive_threshold(values: &[f64], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(invalid("N", "must be at least 1"));
    }
    if n > values.len() {
        return Err(invalid("N", format!("{n} exceeds the {} reference values", values.len())));
    }
    let mut v = values.to_vec();
    if n < v.len() {
        v.select_nth_unstable_by(n - 1, f64::total_cmp);
    }
    Ok(v[..n].iter().sum::<f64>() / n as f64)
}

/// Claims k iff ℓ_k ≤ τ^(N)(r) + offset; confidence τ^(N)(r) + offset − ℓ_k.
pub fn adaptive_attack_with_offset<T: Scalar>(
    pop: &Population<T>,
    released: ArrayView1<'_, T>,
    reference: &Population<T>,
    n: usize,
    offset: f64,
    x_min: f64,
) -> Result<AttackDecision> {
    let (ref_l, _) = lrs_all(reference, released, x_min);
    let tau = adaptive_threshold(ref_l.as_slice().expect("contiguous"), n)? + offset;
    let (l, _) = lrs_all(pop, released, x_min);
    Ok(AttackDecision::new(l.iter().map(|&v| tau - v).collect(), l.iter().map(|&v| v <= tau).collect()))
}

pub fn adaptive_attack<T: Scalar>(pop: &Population<T>, released: ArrayView1<'_, T>, reference: &Population<T>, n: usize, x_min: f64) -> Result<AttackDecision> {
    adaptive_attack_with_offset(pop, released, reference, n, 0.0, x_min)
}

/// Power Φ(M_eq − z_α) of the exact α-level test between two Gaussians
/// whose means are `m_eq` apart in Mahalanobis distance.
pub fn optimal_lrt_power(m_eq: f64, alpha: f64) -> f64 {
    norm_cdf(m_eq + norm_ppf(alpha))
}

/// Exact log ρ(r|b⁰)/ρ(r|b¹) and M_eq for one target; `None` when b⁰ is
/// empty and the claim is certain.
fn gaussian_llr<T: Scalar>(
    pop: &Population<T>,
    mech: &ReleaseMechanism<T>,
    variances: &[f64],
    r: &Array1<f64>,
    truth: &MembershipVector,
    k: usize,
) -> Result<Option<(f64, f64)>> {
    let b0 = truth.with(k, false);
    if b0.count() == 0 {
        return Ok(None);
    }
    let mu0 = mech.mean_release(pop, &b0)?;
    let mu1 = mech.mean_release(pop, &truth.with(k, true))?;
    let (mut llr, mut m2) = (0.0, 0.0);
    for j in 0..r.len() {
        let (a, b, v) = (r[j] - mu1[j], r[j] - mu0[j], variances[j]);
        llr += (a * a - b * b) / (2.0 * v);
        m2 += (mu1[j] - mu0[j]).powi(2) / v;
    }
    Ok(Some((llr, m2.sqrt())))
}

/// Neyman–Pearson test of b_k = 0 against b_k = 1 given b_{-k}.
///
/// Gaussian mechanisms use the closed form ℓ ~ N(M²/2, M²) under the null,
/// with τ = M²/2 + M·Φ⁻¹(α). When M = 0 the test is blind and claims with
/// probability α. Other density-supported mechanisms fall back to a
/// simulated null quantile with `fallback_samples` draws per target,
/// randomized on ties.
pub fn optimal_lrt_attack<T: Scalar>(
    pop: &Population<T>,
    released: ArrayView1<'_, T>,
    mech: &ReleaseMechanism<T>,
    alpha: f64,
    conditioning: &MembershipVector,
    fallback_samples: usize,
    rng: &mut StreamRng,
) -> Result<AttackDecision> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid("alpha", format!("{alpha} outside (0,1)")));
    }
    pop.check_len(conditioning)?;
    let r = released.mapv(|v| v.as_f64());
    let k_all = pop.num_individuals();
    let (mut conf, mut claims) = (vec![0.0; k_all], vec![false; k_all]);
    if let MechanismKind::Gaussian { variances, .. } = &mech.kind {
        if mech.clip {
            return Err(Error::Unsupported("the closed-form test assumes unclipped releases".into()));
        }
        for k in 0..k_all {
            match gaussian_llr(pop, mech, variances, &r, conditioning, k)? {
                None => (conf[k], claims[k]) = (CERTAIN, true),
                Some((_, 0.0)) => claims[k] = rng.random::<f64>() < alpha,
                Some((llr, m)) => {
                    let tau = m * m / 2.0 + m * norm_ppf(alpha);
                    conf[k] = (tau - llr) / m;
                    claims[k] = llr <= tau;
                }
            }
        }
        return Ok(AttackDecision::new(conf, claims));
    }
    if !mech.has_density() || matches!(mech.kind, MechanismKind::ZeroNoise) {
        return Err(Error::Unsupported(format!("no likelihood-ratio test for the {} mechanism", mech.name())));
    }
    if fallback_samples == 0 {
        return Err(invalid("fallback_samples", "must be positive for non-Gaussian mechanisms"));
    }
    for k in 0..k_all {
        let b0 = conditioning.with(k, false);
        if b0.count() == 0 {
            (conf[k], claims[k]) = (CERTAIN, true);
            continue;
        }
        let b1 = conditioning.with(k, true);
        let (mu0, mu1) = (mech.mean_release(pop, &b0)?, mech.mean_release(pop, &b1)?);
        let llr = |y: &Array1<f64>| -> Result<f64> { Ok(mech.log_density_at_mean(y.view(), mu0.view())? - mech.log_density_at_mean(y.view(), mu1.view())?) };
        let mut null = Vec::with_capacity(fallback_samples);
        for _ in 0..fallback_samples {
            let y = mech.sample_release(pop, &b0, rng)?.values.mapv(|v| v.as_f64());
            null.push(llr(&y)?);
        }
        null.sort_by(f64::total_cmp);
        let tau = lower_quantile(&null, alpha);
        let l = llr(&r)?;
        conf[k] = tau - l;
        // Laplace log ratios have atoms; randomize on the boundary so the
        // size is exactly α.
        let n = null.len() as f64;
        let below = null.partition_point(|&v| v < tau) as f64;
        let at = null.partition_point(|&v| v <= tau) as f64 - below;
        claims[k] = l < tau || (l == tau && rng.random::<f64>() * at < alpha * n - below);
    }
    Ok(AttackDecision::new(conf, claims))
}

/// [`optimal_lrt_attack`] for Gaussian mechanisms.
pub fn optimal_lrt_attack_gaussian<T: Scalar>(
    pop: &Population<T>,
    released: ArrayView1<'_, T>,
    mech: &ReleaseMechanism<T>,
    alpha: f64,
    conditioning: &MembershipVector,
    rng: &mut StreamRng,
) -> Result<AttackDecision> {
    optimal_lrt_attack(pop, released, mech, alpha, conditioning, 0, rng)
}

/// Fixed threshold τ° on the LRS.
pub struct FixedThresholdLrt<'a, T: Scalar> {
    pub pop: &'a Population<T>,
    pub tau: f64,
}

impl<T: Scalar> Attacker<T> for FixedThresholdLrt<'_, T> {
    fn name(&self) -> String {
        "fixed-lrt".into()
    }

    fn attack(&mut self, obs: &Observation<'_, T>, _: &mut StreamRng) -> Result<AttackDecision> {
        Ok(fixed_threshold_attack(self.pop, obs.release, self.tau, clamp_bound(obs.beacon_size)))
    }
}

/// Adaptive threshold τ^(N)(r) from a reference pool, plus an offset.
pub struct AdaptiveLrt<'a, T: Scalar> {
    pub pop: &'a Population<T>,
    pub reference: &'a Population<T>,
    pub n: usize,
    pub offset: f64,
}

impl<T: Scalar> Attacker<T> for AdaptiveLrt<'_, T> {
    fn name(&self) -> String {
        "adaptive-lrt".into()
    }

    fn attack(&mut self, obs: &Observation<'_, T>, _: &mut StreamRng) -> Result<AttackDecision> {
        adaptive_attack_with_offset(self.pop, obs.release, self.reference, self.n, self.offset, clamp_bound(obs.beacon_size))
    }
}

/// Neyman–Pearson attacker handed b_{-k}.
pub struct OptimalLrt<'a, T: Scalar> {
    pub pop: &'a Population<T>,
    pub mech: &'a ReleaseMechanism<T>,
    pub alpha: f64,
    pub fallback_samples: usize,
}

impl<T: Scalar> Attacker<T> for OptimalLrt<'_, T> {
    fn name(&self) -> String {
        "optimal-lrt".into()
    }

    fn attack(&mut self, obs: &Observation<'_, T>, rng: &mut StreamRng) -> Result<AttackDecision> {
        optimal_lrt_attack(self.pop, obs.release, self.mech, self.alpha, obs.truth, self.fallback_samples, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanisms::{gaussian_mechanism_theorem2, MeanMap};
    use crate::population::{generate_population, AafDistribution};
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn lrs_hand_values() {
        let two = 2f64.ln();
        assert_abs_diff_eq!(lrs(array![1.0].view(), array![0.5].view(), array![0.25].view(), 0.0).value, two, epsilon = 1e-12);
        assert_abs_diff_eq!(lrs(array![0.0].view(), array![0.5].view(), array![0.75].view(), 0.0).value, two, epsilon = 1e-12);
        let p = array![0.2, 0.7, 0.4];
        assert_abs_diff_eq!(lrs(array![1.0, 0.0, 1.0].view(), p.view(), p.view(), 0.0).value, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn lrs_clamps_extremes() {
        let l = lrs(array![1.0, 0.0].view(), array![0.5, 0.5].view(), array![0.0, 1.0].view(), 0.125);
        assert_eq!(l.clamped, 2);
        assert!(l.value.is_finite());
        assert_abs_diff_eq!(l.value, 2.0 * 4f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn lrs_all_matches_rowwise() {
        let p: Population = generate_population(9, 12, &AafDistribution::default(), 2).unwrap();
        let b = MembershipVector::from_members(9, &[1, 2, 7]);
        let x = p.summary_stats(&b).unwrap();
        let (all, _) = lrs_all(&p, x.view(), clamp_bound(3));
        for k in 0..9 {
            let one = lrs(p.genotype_row(k), p.reference_aafs(), x.view(), clamp_bound(3));
            assert_abs_diff_eq!(all[k], one.value, epsilon = 1e-10);
        }
    }

    #[test]
    fn infinite_thresholds() {
        let p: Population = generate_population(5, 8, &AafDistribution::default(), 3).unwrap();
        let x = p.summary_stats(&MembershipVector::from_members(5, &[0, 3])).unwrap();
        assert_eq!(fixed_threshold_attack(&p, x.view(), f64::INFINITY, 0.25).num_claims(), 5);
        assert_eq!(fixed_threshold_attack(&p, x.view(), f64::NEG_INFINITY, 0.25).num_claims(), 0);
    }

    #[test]
    fn claims_monotone_in_tau() {
        let p: Population = generate_population(20, 30, &AafDistribution::default(), 4).unwrap();
        let x = p.summary_stats(&MembershipVector::from_members(20, &[0, 3, 5, 9])).unwrap();
        let mut prev = 0;
        for i in -50..50 {
            let n = fixed_threshold_attack(&p, x.view(), i as f64, 0.125).num_claims();
            assert!(n >= prev);
            prev = n;
        }
    }

    #[test]
    fn adaptive_threshold_examples() {
        assert_abs_diff_eq!(adaptive_threshold(&[3.0, 1.0, 2.0], 2).unwrap(), 1.5);
        assert_abs_diff_eq!(adaptive_threshold(&[3.0, 1.0, 2.0], 3).unwrap(), 2.0);
        assert_abs_diff_eq!(adaptive_threshold(&[-1.2, 0.4, 0.9, 5.0], 3).unwrap(), 0.1 / 3.0, epsilon = 1e-12);
        assert!(adaptive_threshold(&[1.0], 0).is_err());
        assert!(adaptive_threshold(&[1.0], 2).is_err());
    }

    #[test]
    fn adaptive_identical_reference_ties_claim() {
        let p: Population = generate_population(4, 10, &AafDistribution::default(), 5).unwrap();
        let reference = Population::new(p.genotype_row(2).to_owned().insert_axis(ndarray::Axis(0)), p.reference_aafs().to_owned()).unwrap();
        let x = p.summary_stats(&MembershipVector::from_members(4, &[0, 1])).unwrap();
        let d = adaptive_attack(&p, x.view(), &reference, 1, 0.25).unwrap();
        assert!(d.claims[2]);
        assert_eq!(d.confidences[2], 0.0);
    }

    #[test]
    fn blind_optimal_test_has_power_alpha() {
        let p: Population = generate_population(4, 3, &AafDistribution::default(), 6).unwrap();
        let mech: ReleaseMechanism = gaussian_mechanism_theorem2(&[1.0; 3], 3, 1, MeanMap::blind(vec![0.3; 3])).unwrap();
        let b = MembershipVector::from_members(4, &[0, 1, 2]);
        let mut rng = crate::stats::rng(7);
        let mut hits = 0;
        for _ in 0..20_000 {
            let r = mech.sample_release(&p, &b, &mut rng).unwrap();
            hits += optimal_lrt_attack_gaussian(&p, r.values.view(), &mech, 0.2, &b, &mut rng).unwrap().claims[0] as usize;
        }
        let rate = hits as f64 / 20_000.0;
        assert!((rate - 0.2).abs() < 4.0 * (0.2f64 * 0.8 / 20_000.0).sqrt(), "{rate}");
    }

    #[test]
    fn power_closed_form() {
        assert_abs_diff_eq!(optimal_lrt_power(1.0, 0.05), 0.259511, epsilon = 1e-6);
        assert_abs_diff_eq!(optimal_lrt_power(0.0, 0.05), 0.05, epsilon = 1e-10);
        assert_abs_diff_eq!(optimal_lrt_power(0.0, 0.5), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn sole_member_is_claimed_with_certainty() {
        let p: Population = generate_population(3, 4, &AafDistribution::default(), 8).unwrap();
        let mech: ReleaseMechanism = gaussian_mechanism_theorem2(&[1.0; 4], 4, 1, MeanMap::Zero).unwrap();
        let b = MembershipVector::from_members(3, &[1]);
        let r = mech.sample_release_seeded(&p, &b, 1).unwrap();
        let d = optimal_lrt_attack_gaussian(&p, r.values.view(), &mech, 0.05, &b, &mut crate::stats::rng(0)).unwrap();
        assert!(d.claims[1]);
    }

    #[test]
    fn calibration_endpoint_and_errors() {
        let p: Population = generate_population(30, 40, &AafDistribution::default(), 9).unwrap();
        let prior = MembershipPrior::bernoulli(30, 0.5);
        let zero = ReleaseMechanism::zero_noise();
        let mut rng = crate::stats::rng(1);
        let cal = calibrate_threshold(&p, &zero, &prior, 1.0, 2000, &mut rng).unwrap();
        let v = simulate_null_lrs(&p, &zero, &prior, 2000, &mut crate::stats::rng(1)).unwrap();
        assert_eq!(cal.tau, v.iter().copied().fold(f64::MIN, f64::max));
        assert!(calibrate_threshold(&p, &zero, &prior, 0.05, 10, &mut rng).is_err());
        let all = MembershipPrior::point_mass(MembershipVector::full(30));
        assert!(calibrate_threshold(&p, &zero, &all, 0.05, 1000, &mut rng).is_err());
    }

    #[test]
    fn laplace_fallback_keeps_size() {
        let p: Population = generate_population(3, 2, &AafDistribution::default(), 10).unwrap();
        let mech: ReleaseMechanism = ReleaseMechanism::laplace(0.5).unwrap();
        let b = MembershipVector::from_members(3, &[0, 2]);
        let mut rng = crate::stats::rng(3);
        let mut hits = 0;
        let n = 600;
        for _ in 0..n {
            let r = mech.sample_release(&p, &b.with(1, false), &mut rng).unwrap();
            hits += optimal_lrt_attack(&p, r.values.view(), &mech, 0.1, &b, 400, &mut rng).unwrap().claims[1] as usize;
        }
        let rate = hits as f64 / n as f64;
        assert!((rate - 0.1).abs() < 0.05, "{rate}");
    }
}
