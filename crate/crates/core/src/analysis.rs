//! Gaussian trade-off functions, their composition, the sufficient
//! conditions for the Bayesian attacker to dominate the LRT, and GDP to
//! (ε, δ) conversion.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bayes::PosteriorEngine;
use crate::error::{invalid, Error, Result};
use crate::mechanisms::{MechanismKind, ReleaseMechanism};
use crate::population::{MembershipPrior, Population};
use crate::scalar::Scalar;
use crate::stats::{lower_quantile, norm_cdf, z_upper, Estimate, Rng as StreamRng, Welford};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradeoffPoint {
    pub alpha: f64,
    pub beta: f64,
}

/// The pair (N(0,1), N(μ,1)).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianPair {
    pub mu: f64,
}

impl GaussianPair {
    pub fn new(mu: f64) -> Result<Self> {
        if !(mu >= 0.0 && mu.is_finite()) {
            return Err(invalid("mu", format!("{mu} must be finite and nonnegative")));
        }
        Ok(Self { mu })
    }

    pub fn beta(&self, alpha: f64) -> f64 {
        gaussian_tradeoff(self.mu, alpha)
    }

    /// `n + 1` evenly spaced α in [0, 1].
    pub fn curve(&self, n: usize) -> Vec<TradeoffPoint> {
        let n = n.max(1);
        (0..=n)
            .map(|i| {
                let alpha = i as f64 / n as f64;
                TradeoffPoint { alpha, beta: self.beta(alpha) }
            })
            .collect()
    }
}

/// β = Φ(Φ⁻¹(1 − α) − μ), the smallest type-II error at type-I error α.
pub fn gaussian_tradeoff(mu: f64, alpha: f64) -> f64 {
    if alpha <= 0.0 {
        return 1.0;
    }
    if alpha >= 1.0 {
        return 0.0;
    }
    norm_cdf(z_upper(alpha) - mu)
}

pub fn tradeoff_csv(points: &[TradeoffPoint]) -> String {
    let mut s = String::from("alpha,beta\n");
    for p in points {
        s.push_str(&format!("{},{}\n", p.alpha, p.beta));
    }
    s
}

/// Mahalanobis length sqrt(Σ_j shift_j² / V_j) of a mean shift between
/// product Gaussians.
pub fn compose_effective_mu(shifts: &[f64], variances: &[f64]) -> Result<f64> {
    if shifts.len() != variances.len() {
        return Err(Error::DimensionMismatch { expected: shifts.len(), actual: variances.len(), context: "variances" });
    }
    if let Some(v) = variances.iter().find(|&&v| !(v > 0.0)) {
        return Err(invalid("variances", format!("{v} must be positive")));
    }
    Ok(shifts.iter().zip(variances).map(|(s, v)| s * s / v).sum::<f64>().sqrt())
}

/// √(Σ M̂_j²).
pub fn composed_gdp_mu(m_hat: &[f64]) -> Result<f64> {
    if let Some(v) = m_hat.iter().find(|&&v| !(v > 0.0)) {
        return Err(invalid("m_hat", format!("{v} must be positive")));
    }
    Ok(m_hat.iter().map(|h| h * h).sum::<f64>().sqrt())
}

fn percentile_pair(alpha: f64, beta: f64) -> Result<(f64, f64)> {
    for (name, v) in [("alpha", alpha), ("beta", beta)] {
        if !(v > 0.0 && v < 1.0) {
            return Err(invalid(name, format!("{v} outside (0,1)")));
        }
    }
    Ok((z_upper(alpha), z_upper(beta)))
}

/// F(α, β) = (z_α + z_β)² V̄ / (4 M̄²) with M̄ = ½ Σ M̂², V̄ = Σ M̂², and z_a
/// the upper a-percentile.
pub fn lemma1_f(alpha: f64, beta: f64, m_hat: &[f64]) -> Result<f64> {
    let (za, zb) = percentile_pair(alpha, beta)?;
    composed_gdp_mu(m_hat)?;
    let v_bar: f64 = m_hat.iter().map(|h| h * h).sum();
    let m_bar = 0.5 * v_bar;
    Ok((za + zb).powi(2) * v_bar / (4.0 * m_bar * m_bar))
}

/// F with (z_α + z_β) replaced by the composed shift √(Σ M̂²). Identically
/// one; kept so reports show the two conventions side by side.
pub fn lemma1_f_composed(m_hat: &[f64]) -> Result<f64> {
    let mu = composed_gdp_mu(m_hat)?;
    let v_bar = mu * mu;
    Ok(mu * mu * v_bar / (4.0 * (0.5 * v_bar).powi(2)))
}

/// F(α, μ_{0|1}) ≥ m, taken verbatim.
pub fn theorem2_condition(alpha: f64, mu_0_given_1: f64, m: usize, m_hat: &[f64]) -> Result<bool> {
    Ok(lemma1_f(alpha, mu_0_given_1, m_hat)? >= m as f64)
}

/// z_α + z_{μ_{0|1}} ≥ √(Σ M̂²): the Bayesian miss rate is no larger than
/// the best miss rate at level α against the composed Gaussian pair.
pub fn theorem2_condition_composed(alpha: f64, mu_0_given_1: f64, m_hat: &[f64]) -> Result<bool> {
    let (za, zb) = percentile_pair(alpha, mu_0_given_1)?;
    Ok(za + zb >= composed_gdp_mu(m_hat)?)
}

/// δ(ε) = Φ(−ε/μ + μ/2) − e^ε Φ(−ε/μ − μ/2) for a μ-GDP mechanism.
pub fn gdp_to_dp(mu: f64, epsilon: f64) -> Result<f64> {
    if !(mu > 0.0) {
        return Err(invalid("mu", format!("{mu} must be positive")));
    }
    if !(epsilon >= 0.0) {
        return Err(invalid("epsilon", format!("{epsilon} must be nonnegative")));
    }
    let a = norm_cdf(-epsilon / mu + mu / 2.0);
    // e^ε Φ(x) in log space so large ε does not overflow.
    let x = -epsilon / mu - mu / 2.0;
    let b = if x > -30.0 { (epsilon + norm_cdf(x).ln()).exp() } else { (epsilon + log_norm_cdf_tail(x)).exp() };
    Ok((a - b).max(0.0))
}

/// log Φ(x) for very negative x via the asymptotic series.
fn log_norm_cdf_tail(x: f64) -> f64 {
    let x2 = x * x;
    -0.5 * x2 - (-x).ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() + (1.0 - 1.0 / x2 + 3.0 / (x2 * x2)).ln()
}

/// Monte Carlo β of the exact LRT between N(0, V) and N(shift, V) product
/// distributions at level α: the threshold is the simulated null
/// (1 − α)-quantile of the log ratio.
pub fn monte_carlo_tradeoff<R: Rng + ?Sized>(shifts: &[f64], variances: &[f64], alpha: f64, n: usize, rng: &mut R) -> Result<Estimate> {
    compose_effective_mu(shifts, variances)?;
    if n < 2 {
        return Err(invalid("n", "need at least two samples"));
    }
    // The log ratio is a linear statistic Σ shift_j y_j / V_j.
    let stat = |y: &[f64]| -> f64 { y.iter().zip(shifts).zip(variances).map(|((y, s), v)| y * s / v).sum() };
    let draw = |offset: f64, rng: &mut R| -> Vec<f64> {
        shifts
            .iter()
            .zip(variances)
            .map(|(s, v)| {
                let z: f64 = StandardNormal.sample(rng);
                offset * s + v.sqrt() * z
            })
            .collect()
    };
    let mut null: Vec<f64> = (0..n).map(|_| stat(&draw(0.0, rng))).collect();
    null.sort_by(f64::total_cmp);
    let tau = lower_quantile(&null, 1.0 - alpha);
    let mut w = Welford::default();
    for _ in 0..n {
        w.push(if stat(&draw(1.0, rng)) <= tau { 1.0 } else { 0.0 });
    }
    Ok(w.estimate())
}

/// Per-individual miss probabilities of the posterior-marginal rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissReport {
    /// max_k of the per-individual estimates.
    pub max: Estimate,
    pub argmax: usize,
    pub per_individual: Vec<Estimate>,
}

fn gaussian_only<T: Scalar>(mech: &ReleaseMechanism<T>) -> Result<&[f64]> {
    match &mech.kind {
        MechanismKind::Gaussian { variances, .. } if !mech.clip => Ok(variances),
        _ => Err(Error::Unsupported(format!("needs an unclipped Gaussian mechanism, got {} (clip={})", mech.name(), mech.clip))),
    }
}

/// μ_{0|1} = max_k E[1 − μ_σ(b_k = 1 | r)] over b with b_k = 1 and b_{-k}
/// drawn from `conditioning`, stratified per k with `n_samples` draws each.
pub fn mu_0_given_1<T: Scalar>(
    mech: &ReleaseMechanism<T>,
    pop: &Population<T>,
    sigma: &MembershipPrior,
    conditioning: &MembershipPrior,
    n_samples: usize,
    rng: &mut StreamRng,
) -> Result<MissReport> {
    let engine = PosteriorEngine::enumerate(mech, pop, sigma)?;
    let mut per = Vec::with_capacity(pop.num_individuals());
    for k in 0..pop.num_individuals() {
        let mut w = Welford::default();
        for _ in 0..n_samples {
            let b = conditioning.sample_given(k, true, rng)?;
            let r = mech.sample_release(pop, &b, rng)?.values.mapv(|v| v.as_f64());
            w.push(1.0 - engine.marginals(r.view())?[k]);
        }
        per.push(w.estimate());
    }
    let argmax = (0..per.len()).max_by(|&a, &b| per[a].mean.total_cmp(&per[b].mean)).ok_or(Error::EmptyReference)?;
    Ok(MissReport { max: per[argmax], argmax, per_individual: per })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaTerm {
    /// P(b_k = 1 | b ≠ 0) under q.
    pub q_k: f64,
    pub mu_0_given_1: Estimate,
    /// E[β of the optimal level-α test for b_k], over b_{-k} ~ q.
    pub beta: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    /// Σ_k q_k (μ_{0|1,k} − β_k).
    pub delta: Estimate,
    /// Z − L_opt = −Δ, so the Bayesian loss is at least the optimal LRT
    /// loss exactly when Δ ≤ 0.
    pub bayes_dominates: bool,
    pub terms: Vec<DeltaTerm>,
}

/// Δ(α, σ, q) for a Gaussian mechanism, stratified over b_k = 1.
pub fn delta_criterion<T: Scalar>(
    mech: &ReleaseMechanism<T>,
    pop: &Population<T>,
    sigma: &MembershipPrior,
    q: &MembershipPrior,
    alpha: f64,
    n_samples: usize,
    rng: &mut StreamRng,
) -> Result<DeltaReport> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid("alpha", format!("{alpha} outside (0,1)")));
    }
    let variances = gaussian_only(mech)?;
    let engine = PosteriorEngine::enumerate(mech, pop, sigma)?;
    let mut terms = Vec::with_capacity(pop.num_individuals());
    let (mut delta, mut var) = (0.0, 0.0);
    for k in 0..pop.num_individuals() {
        let q_k = q.conditional_marginal(k);
        let (mut miss, mut beta, mut diff) = (Welford::default(), Welford::default(), Welford::default());
        if q_k > 0.0 {
            for _ in 0..n_samples {
                let b1 = q.sample_given(k, true, rng)?;
                let b0 = b1.with(k, false);
                let bk = if b0.count() == 0 {
                    0.0
                } else {
                    let (mu0, mu1) = (mech.mean_release(pop, &b0)?, mech.mean_release(pop, &b1)?);
                    let shift: Vec<f64> = mu1.iter().zip(mu0.iter()).map(|(a, b)| a - b).collect();
                    gaussian_tradeoff(compose_effective_mu(&shift, variances)?, alpha)
                };
                let r = mech.sample_release(pop, &b1, rng)?.values.mapv(|v| v.as_f64());
                let m = 1.0 - engine.marginals(r.view())?[k];
                miss.push(m);
                beta.push(bk);
                diff.push(m - bk);
            }
        }
        let d = diff.estimate();
        delta += q_k * d.mean;
        var += (q_k * d.se).powi(2);
        terms.push(DeltaTerm { q_k, mu_0_given_1: miss.estimate(), beta: beta.estimate() });
    }
    let delta = Estimate { mean: delta, se: var.sqrt(), n: n_samples };
    Ok(DeltaReport { bayes_dominates: delta.mean <= 0.0, delta, terms })
}
