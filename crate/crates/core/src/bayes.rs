//! The σ-Bayesian attacker: posterior over membership vectors, the mirror
//! and threshold strategies, and the loss ordering against LRT attackers.

use ndarray::{Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attack::{AttackDecision, Attacker, Observation};
use crate::error::{invalid, Error, Result};
use crate::lrt::{adaptive_attack_with_offset, adaptive_threshold, clamp_bound, fixed_threshold_attack, lrs_all, optimal_lrt_attack};
use crate::mechanisms::ReleaseMechanism;
use crate::population::{MembershipPrior, MembershipVector, Population};
use crate::scalar::Scalar;
use crate::stats::{log_sum_exp, weighted_lower_quantile, Estimate, Rng as StreamRng, Welford};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PosteriorMethod {
    /// Exact, over all 2^K − 1 non-empty vectors (K ≤ 20).
    Enumerate,
    /// Self-normalized importance sampling with σ as the proposal.
    ImportanceSampling { samples: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BayesStrategy {
    /// Claim k with probability μ_k.
    Mirror,
    /// Claim k iff μ_k > γ.
    ThresholdBestResponse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BayesAttackerConfig {
    pub gamma: f64,
    pub strategy: BayesStrategy,
    pub posterior_method: PosteriorMethod,
}

impl Default for BayesAttackerConfig {
    fn default() -> Self {
        Self { gamma: 0.5, strategy: BayesStrategy::ThresholdBestResponse, posterior_method: PosteriorMethod::Enumerate }
    }
}

impl BayesAttackerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(invalid("gamma", format!("{} outside (0,1)", self.gamma)));
        }
        if let PosteriorMethod::ImportanceSampling { samples: 0 } = self.posterior_method {
            return Err(invalid("samples", "importance sampling needs at least one draw"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorTable {
    /// Vectors with positive posterior weight.
    pub support: Vec<MembershipVector>,
    /// Normalized log posterior, aligned with `support`.
    pub log_weights: Vec<f64>,
    /// μ_k = P(b_k = 1 | r).
    pub marginals: Vec<f64>,
    /// Effective sample size 1/Σw².
    pub ess: f64,
}

impl PosteriorTable {
    pub fn weights(&self) -> impl Iterator<Item = f64> + '_ {
        self.log_weights.iter().map(|w| w.exp())
    }
}

/// Posterior computations against one mechanism and prior, with the prior
/// support and the mean release of each supported vector cached.
pub struct PosteriorEngine<'a, T: Scalar> {
    mech: &'a ReleaseMechanism<T>,
    support: Vec<MembershipVector>,
    log_prior: Vec<f64>,
    means: Array2<f64>,
}

impl<'a, T: Scalar> PosteriorEngine<'a, T> {
    pub fn new(mech: &'a ReleaseMechanism<T>, pop: &Population<T>, sigma: &MembershipPrior, method: PosteriorMethod, rng: &mut StreamRng) -> Result<Self> {
        if !mech.has_density() {
            return Err(Error::Unsupported(format!("the {} mechanism (clip={}) has no density", mech.name(), mech.clip)));
        }
        sigma.validate()?;
        if sigma.num_individuals() != pop.num_individuals() {
            return Err(Error::DimensionMismatch { expected: pop.num_individuals(), actual: sigma.num_individuals(), context: "prior" });
        }
        let (support, log_prior): (Vec<_>, Vec<_>) = match method {
            PosteriorMethod::Enumerate => sigma.enumerate()?.into_iter().unzip(),
            PosteriorMethod::ImportanceSampling { samples } => {
                if samples == 0 {
                    return Err(invalid("samples", "importance sampling needs at least one draw"));
                }
                (0..samples).map(|_| (sigma.sample(rng), 0.0)).unzip()
            }
        };
        let m = pop.num_snvs();
        let mut means = Array2::zeros((support.len(), m));
        for (b, mut row) in support.iter().zip(means.rows_mut()) {
            row.assign(&mech.mean_release(pop, b)?);
        }
        Ok(Self { mech, support, log_prior, means })
    }

    pub fn enumerate(mech: &'a ReleaseMechanism<T>, pop: &Population<T>, sigma: &MembershipPrior) -> Result<Self> {
        Self::new(mech, pop, sigma, PosteriorMethod::Enumerate, &mut crate::stats::rng(0))
    }

    pub fn support_size(&self) -> usize {
        self.support.len()
    }

    pub fn posterior(&self, r: ArrayView1<'_, f64>) -> Result<PosteriorTable> {
        let mut lw = Vec::with_capacity(self.support.len());
        for (lp, mean) in self.log_prior.iter().zip(self.means.rows()) {
            lw.push(lp + self.mech.log_density_at_mean(r, mean)?);
        }
        let norm = log_sum_exp(&lw);
        if !norm.is_finite() {
            return Err(Error::PosteriorUnderflow);
        }
        let mut marginals = vec![0.0; self.support.first().map_or(0, |b| b.len())];
        let (mut support, mut log_weights) = (Vec::new(), Vec::new());
        let mut sum_sq = 0.0;
        for (b, w) in self.support.iter().zip(&lw) {
            let lw = w - norm;
            if lw == f64::NEG_INFINITY {
                continue;
            }
            let p = lw.exp();
            sum_sq += p * p;
            for i in b.members() {
                marginals[i] += p;
            }
            support.push(b.clone());
            log_weights.push(lw);
        }
        for m in &mut marginals {
            *m = m.min(1.0);
        }
        Ok(PosteriorTable { support, log_weights, marginals, ess: 1.0 / sum_sq })
    }

    pub fn marginals(&self, r: ArrayView1<'_, f64>) -> Result<Vec<f64>> {
        Ok(self.posterior(r)?.marginals)
    }
}

/// Exact posterior by enumeration.
pub fn posterior<T: Scalar>(mech: &ReleaseMechanism<T>, pop: &Population<T>, sigma: &MembershipPrior, r: ArrayView1<'_, f64>) -> Result<PosteriorTable> {
    PosteriorEngine::enumerate(mech, pop, sigma)?.posterior(r)
}

/// s_k = 1 iff μ_k > γ, which minimizes Σ_k s_k(γ − μ_k). Ties do not claim.
pub fn threshold_best_response(post: &PosteriorTable, gamma: f64) -> AttackDecision {
    AttackDecision::new(post.marginals.clone(), post.marginals.iter().map(|&m| m > gamma).collect())
}

/// Interim expected cost E[−Σ s_k b_k + γ Σ s_k | r] of a (possibly mixed)
/// strategy given as claim probabilities.
pub fn interim_cost(marginals: &[f64], claim_probs: &[f64], gamma: f64) -> f64 {
    marginals.iter().zip(claim_probs).map(|(m, s)| s * (gamma - m)).sum()
}

/// Posterior-based attacker.
pub struct BayesAttacker<'a, T: Scalar> {
    pub engine: PosteriorEngine<'a, T>,
    pub gamma: f64,
    pub strategy: BayesStrategy,
}

impl<'a, T: Scalar> BayesAttacker<'a, T> {
    pub fn new(mech: &'a ReleaseMechanism<T>, pop: &Population<T>, sigma: &MembershipPrior, cfg: &BayesAttackerConfig, rng: &mut StreamRng) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { engine: PosteriorEngine::new(mech, pop, sigma, cfg.posterior_method, rng)?, gamma: cfg.gamma, strategy: cfg.strategy })
    }
}

impl<T: Scalar> Attacker<T> for BayesAttacker<'_, T> {
    fn name(&self) -> String {
        match self.strategy {
            BayesStrategy::Mirror => "bayes-mirror".into(),
            BayesStrategy::ThresholdBestResponse => "bayes-threshold".into(),
        }
    }

    fn attack(&mut self, obs: &Observation<'_, T>, rng: &mut StreamRng) -> Result<AttackDecision> {
        let r = obs.release.mapv(|v| v.as_f64());
        let post = self.engine.posterior(r.view())?;
        Ok(match self.strategy {
            BayesStrategy::ThresholdBestResponse => threshold_best_response(&post, self.gamma),
            BayesStrategy::Mirror => {
                let claims = post.marginals.iter().map(|&m| rng.random::<f64>() < m).collect();
                AttackDecision::new(post.marginals, claims)
            }
        })
    }
}

/// Z(g, σ) = E_q E_r[Σ_k μ_σ(b_k = 1 | r) b_k]: the mirror strategy's
/// expected number of correctly claimed members.
pub fn mirror_strategy_loss<T: Scalar>(
    mech: &ReleaseMechanism<T>,
    pop: &Population<T>,
    sigma: &MembershipPrior,
    q: &MembershipPrior,
    n_samples: usize,
    rng: &mut StreamRng,
) -> Result<Estimate> {
    let engine = PosteriorEngine::enumerate(mech, pop, sigma)?;
    mirror_loss_with(&engine, pop, q, n_samples, rng)
}

pub fn mirror_loss_with<T: Scalar>(
    engine: &PosteriorEngine<'_, T>,
    pop: &Population<T>,
    q: &MembershipPrior,
    n_samples: usize,
    rng: &mut StreamRng,
) -> Result<Estimate> {
    let mut w = Welford::default();
    for _ in 0..n_samples {
        let b = q.sample(rng);
        let r = engine.mech.sample_release(pop, &b, rng)?.values.mapv(|v| v.as_f64());
        let mu = engine.marginals(r.view())?;
        w.push(b.members().map(|k| mu[k]).sum());
    }
    Ok(w.estimate())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    /// E[Σ_k s_k b_k].
    pub loss: Estimate,
    /// Claimed members over all members.
    pub tpr: f64,
    /// Claimed non-members over all non-members.
    pub fpr: f64,
}

#[derive(Default)]
struct Tally {
    loss: Welford,
    tp: usize,
    pos: usize,
    fp: usize,
    neg: usize,
}

impl Tally {
    fn push(&mut self, d: &AttackDecision, b: &MembershipVector) {
        let hits = d.hits(b);
        self.loss.push(hits as f64);
        self.tp += hits;
        self.pos += b.count();
        self.fp += d.num_claims() - hits;
        self.neg += b.len() - b.count();
    }

    fn report(&self) -> LossReport {
        let rate = |a: usize, n: usize| if n == 0 { 0.0 } else { a as f64 / n as f64 };
        LossReport { loss: self.loss.estimate(), tpr: rate(self.tp, self.pos), fpr: rate(self.fp, self.neg) }
    }
}

/// L(g, h) = E_q E_r[Σ_k s_k b_k] for any attacker.
pub fn privacy_loss<T: Scalar>(
    mech: &ReleaseMechanism<T>,
    pop: &Population<T>,
    attacker: &mut dyn Attacker<T>,
    q: &MembershipPrior,
    n_samples: usize,
    rng: &mut StreamRng,
) -> Result<LossReport> {
    let mut t = Tally::default();
    for _ in 0..n_samples {
        let b = q.sample(rng);
        let r = mech.sample_release(pop, &b, rng)?;
        let obs = Observation { release: r.values.view(), beacon_size: b.count(), truth: &b };
        let d = attacker.attack(&obs, rng)?;
        t.push(&d, &b);
    }
    Ok(t.report())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderingOptions {
    pub alpha: f64,
    pub n_samples: usize,
    /// Draws used to match the adaptive and fixed thresholds to a mean
    /// significance of α; independent of the evaluation draws.
    pub calibration_samples: usize,
    /// Bottom-N size for the adaptive threshold.
    pub adaptive_n: usize,
    /// Slack, in combined standard errors, for each inequality.
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingReport {
    /// L^σ, estimated as Z.
    pub mirror: Estimate,
    pub optimal: LossReport,
    pub adaptive: LossReport,
    pub naive: LossReport,
    /// Mirror loss with the posterior under q instead of σ, when they differ.
    pub mirror_under_q: Option<Estimate>,
    pub adaptive_offset: f64,
    pub naive_tau: f64,
    /// Mean per-beacon false-positive rate of each LRT attacker.
    pub optimal_alpha: f64,
    pub adaptive_alpha: f64,
    pub naive_alpha: f64,
    /// L^σ ≥ L_opt, L_opt ≥ L_adaptive, L_adaptive ≥ L_naive within slack.
    pub holds: [bool; 3],
}

impl OrderingReport {
    pub fn all_hold(&self) -> bool {
        self.holds.iter().all(|&h| h)
    }
}

fn non_member_weights(b: &MembershipVector) -> Option<f64> {
    let n = b.len() - b.count();
    (n > 0).then(|| 1.0 / n as f64)
}

/// Estimates L^σ ≥ L_opt ≥ L_adaptive ≥ L_naive on shared draws.
///
/// The adaptive attacker claims ℓ_k ≤ τ^(N)(r) + c and the naive attacker
/// ℓ_k ≤ τ°, with c and τ° set on separate draws so that the mean
/// per-beacon false-positive rate is α. The optimal attacker is handed
/// b_{-k}.
pub fn verify_theorem1_ordering<T: Scalar>(
    mech: &ReleaseMechanism<T>,
    pop: &Population<T>,
    reference: &Population<T>,
    q: &MembershipPrior,
    sigma: &MembershipPrior,
    opts: &OrderingOptions,
    rng: &mut StreamRng,
) -> Result<OrderingReport> {
    let alpha = opts.alpha;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid("alpha", format!("{alpha} outside (0,1)")));
    }
    if opts.n_samples < 2 || opts.calibration_samples == 0 {
        return Err(invalid("n_samples", "need at least two evaluation draws and one calibration draw"));
    }
    let engine = PosteriorEngine::enumerate(mech, pop, sigma)?;
    let engine_q = if q != sigma { Some(PosteriorEngine::enumerate(mech, pop, q)?) } else { None };

    let (mut adaptive_pairs, mut naive_pairs) = (Vec::new(), Vec::new());
    for _ in 0..opts.calibration_samples {
        let b = q.sample(rng);
        let Some(w) = non_member_weights(&b) else { continue };
        let r = mech.sample_release(pop, &b, rng)?.values;
        let x_min = clamp_bound(b.count());
        let (l, _) = lrs_all(pop, r.view(), x_min);
        let (rl, _) = lrs_all(reference, r.view(), x_min);
        let t = adaptive_threshold(rl.as_slice().expect("contiguous"), opts.adaptive_n)?;
        for k in (0..b.len()).filter(|&k| !b.get(k)) {
            adaptive_pairs.push((l[k] - t, w));
            naive_pairs.push((l[k], w));
        }
    }
    if adaptive_pairs.is_empty() {
        return Err(Error::Calibration("no calibration draw had a non-member".into()));
    }
    let offset = weighted_lower_quantile(&mut adaptive_pairs, alpha);
    let naive_tau = weighted_lower_quantile(&mut naive_pairs, alpha);

    let (mut z, mut zq) = (Welford::default(), Welford::default());
    let (mut opt, mut ada, mut nai) = (Tally::default(), Tally::default(), Tally::default());
    let mut fprs = [Welford::default(), Welford::default(), Welford::default()];
    for _ in 0..opts.n_samples {
        let b = q.sample(rng);
        let r = mech.sample_release(pop, &b, rng)?.values;
        let rf = r.mapv(|v| v.as_f64());
        let mu = engine.marginals(rf.view())?;
        z.push(b.members().map(|k| mu[k]).sum());
        if let Some(e) = &engine_q {
            let mu = e.marginals(rf.view())?;
            zq.push(b.members().map(|k| mu[k]).sum());
        }
        let x_min = clamp_bound(b.count());
        let d_opt = optimal_lrt_attack(pop, r.view(), mech, alpha, &b, 2000, rng)?;
        let d_ada = adaptive_attack_with_offset(pop, r.view(), reference, opts.adaptive_n, offset, x_min)?;
        let d_nai = fixed_threshold_attack(pop, r.view(), naive_tau, x_min);
        for ((t, d), f) in [(&mut opt, &d_opt), (&mut ada, &d_ada), (&mut nai, &d_nai)].into_iter().zip(fprs.iter_mut()) {
            t.push(d, &b);
            if let Some(w) = non_member_weights(&b) {
                f.push((d.num_claims() - d.hits(&b)) as f64 * w);
            }
        }
    }
    let mirror = z.estimate();
    let (o, a, n) = (opt.report(), ada.report(), nai.report());
    let s = opts.slack;
    let holds = [mirror.ge_within(&o.loss, s), o.loss.ge_within(&a.loss, s), a.loss.ge_within(&n.loss, s)];
    Ok(OrderingReport {
        mirror,
        optimal: o,
        adaptive: a,
        naive: n,
        mirror_under_q: engine_q.map(|_| zq.estimate()),
        adaptive_offset: offset,
        naive_tau,
        optimal_alpha: fprs[0].mean(),
        adaptive_alpha: fprs[1].mean(),
        naive_alpha: fprs[2].mean(),
        holds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::{AlwaysClaim, NeverClaim};
    use crate::mechanisms::MeanMap;
    use crate::population::{generate_population, AafDistribution};
    use crate::stats::rng;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn gaussian(map: MeanMap, v: f64, m: usize) -> ReleaseMechanism<f64> {
        ReleaseMechanism::gaussian(map, vec![v; m]).unwrap()
    }

    #[test]
    fn blind_mechanism_posterior_is_prior() {
        let pop: Population = generate_population(5, 4, &AafDistribution::default(), 1).unwrap();
        let mech = gaussian(MeanMap::blind(vec![0.5; 4]), 0.3, 4);
        let sigma = MembershipPrior::IndependentBernoulli { rates: vec![0.2, 0.4, 0.5, 0.7, 0.9] };
        let post = posterior(&mech, &pop, &sigma, array![0.1, 0.9, 0.4, 0.6].view()).unwrap();
        for (k, &m) in post.marginals.iter().enumerate() {
            assert_abs_diff_eq!(m, sigma.conditional_marginal(k), epsilon = 1e-12);
        }
        assert_abs_diff_eq!(post.weights().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert_eq!(post.support.len(), 31);
    }

    #[test]
    fn two_point_posterior() {
        // Individual 0 always present; the release separates b = (1,0)
        // (x = 1) from b = (1,1) (x = 0.5) on one SNV.
        let pop = Population::new(array![[1.0], [0.0]], array![0.5]).unwrap();
        let mech = gaussian(MeanMap::Zero, 0.25, 1);
        let a = MembershipVector::from_members(2, &[0]);
        let both = MembershipVector::full(2);
        let sigma = MembershipPrior::Table { support: vec![a, both], probs: vec![0.3, 0.7] };
        let r = 0.6;
        let la = 0.3 * (-(r - 1.0f64).powi(2) / 0.5).exp();
        let lb = 0.7 * (-(r - 0.5f64).powi(2) / 0.5).exp();
        let post = posterior(&mech, &pop, &sigma, array![r].view()).unwrap();
        assert_abs_diff_eq!(post.marginals[1], lb / (la + lb), epsilon = 1e-12);
        assert_abs_diff_eq!(post.marginals[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn point_mass_prior_gives_point_mass_posterior() {
        let pop: Population = generate_population(4, 3, &AafDistribution::default(), 2).unwrap();
        let b = MembershipVector::from_members(4, &[1, 3]);
        let post = posterior(&gaussian(MeanMap::Zero, 0.1, 3), &pop, &MembershipPrior::point_mass(b.clone()), array![0.2, 0.3, 0.9].view()).unwrap();
        assert_eq!(post.support, vec![b]);
        assert_eq!(post.marginals, vec![0.0, 1.0, 0.0, 1.0]);
        assert_abs_diff_eq!(post.ess, 1.0);
    }

    #[test]
    fn posterior_needs_density() {
        let pop: Population = generate_population(3, 2, &AafDistribution::default(), 3).unwrap();
        let q = MembershipPrior::bernoulli(3, 0.5);
        let clipped = gaussian(MeanMap::Zero, 0.1, 2).with_clip(true);
        assert!(PosteriorEngine::enumerate(&clipped, &pop, &q).is_err());
        // A zero-noise release that matches no mean underflows loudly.
        let zero = ReleaseMechanism::zero_noise();
        assert!(matches!(posterior(&zero, &pop, &q, array![7.0, 7.0].view()), Err(Error::PosteriorUnderflow)));
    }

    #[test]
    fn threshold_rule_examples() {
        let post = |m: Vec<f64>| PosteriorTable { support: vec![], log_weights: vec![], marginals: m, ess: 1.0 };
        assert_eq!(threshold_best_response(&post(vec![0.8, 0.3]), 0.5).claims, vec![true, false]);
        assert_eq!(threshold_best_response(&post(vec![0.5, 0.51]), 0.5).claims, vec![false, true]);
        assert_eq!(threshold_best_response(&post(vec![0.99, 0.2]), 0.999_999).claims, vec![false, false]);
        assert_eq!(threshold_best_response(&post(vec![0.01, 0.2]), 1e-9).claims, vec![true, true]);
    }

    #[test]
    fn threshold_rule_beats_random_mixed_strategies() {
        let mut r = rng(4);
        for _ in 0..20 {
            let mu: Vec<f64> = (0..6).map(|_| r.random()).collect();
            let gamma: f64 = r.random_range(0.05..0.95);
            let br: Vec<f64> = mu.iter().map(|&m| if m > gamma { 1.0 } else { 0.0 }).collect();
            let best = interim_cost(&mu, &br, gamma);
            for _ in 0..1000 {
                let s: Vec<f64> = (0..6).map(|_| r.random()).collect();
                assert!(best <= interim_cost(&mu, &s, gamma) + 1e-15);
            }
        }
    }

    #[test]
    fn mirror_loss_closed_forms() {
        let pop: Population = generate_population(6, 3, &AafDistribution::default(), 5).unwrap();
        let q = MembershipPrior::bernoulli(6, 0.5);
        let blind = gaussian(MeanMap::blind(vec![0.4; 3]), 0.2, 3);
        let z = mirror_strategy_loss(&blind, &pop, &q, &q, 200, &mut rng(6)).unwrap();
        let qk = q.conditional_marginal(0);
        // Posterior equals the prior, so Z is deterministic: Σ_k q̃_k² with
        // E[b_k] = q̃_k.
        let expected = 6.0 * qk * qk;
        assert!((z.mean - expected).abs() <= 3.0 * z.se.max(0.02), "{z} vs {expected}");

        // Distinct genotype rows and almost no noise reveal b.
        let eye = Population::new(Array2::eye(4), array![0.5, 0.5, 0.5, 0.5]).unwrap();
        let sharp = gaussian(MeanMap::Zero, 1e-6, 4);
        let q4 = MembershipPrior::bernoulli(4, 0.5);
        let z = mirror_strategy_loss(&sharp, &eye, &q4, &q4, 300, &mut rng(7)).unwrap();
        let mean_size = 4.0 * q4.conditional_marginal(0);
        assert!((z.mean - mean_size).abs() <= 3.0 * z.se + 1e-9, "{z} vs {mean_size}");
    }

    #[test]
    fn privacy_loss_trivial_attackers() {
        let pop: Population = generate_population(5, 3, &AafDistribution::default(), 8).unwrap();
        let q = MembershipPrior::bernoulli(5, 0.3);
        let mech = gaussian(MeanMap::Zero, 0.05, 3);
        let always = privacy_loss(&mech, &pop, &mut AlwaysClaim, &q, 2000, &mut rng(9)).unwrap();
        let never = privacy_loss(&mech, &pop, &mut NeverClaim, &q, 2000, &mut rng(9)).unwrap();
        let size = 5.0 * q.conditional_marginal(0);
        assert!((always.loss.mean - size).abs() <= 3.0 * always.loss.se);
        assert_eq!((always.tpr, always.fpr), (1.0, 1.0));
        assert_eq!(never.loss.mean, 0.0);
        let mut bayes = BayesAttacker::new(&mech, &pop, &q, &BayesAttackerConfig::default(), &mut rng(0)).unwrap();
        let b = privacy_loss(&mech, &pop, &mut bayes, &q, 2000, &mut rng(9)).unwrap();
        // Same draws as the always-claim run.
        assert!(always.loss.mean - b.loss.mean >= 0.0);
    }

    #[test]
    fn importance_sampling_tracks_enumeration() {
        let pop: Population = generate_population(8, 6, &AafDistribution::default(), 10).unwrap();
        let q = MembershipPrior::bernoulli(8, 0.5);
        let mech = gaussian(MeanMap::Zero, 0.02, 6);
        let r = mech.sample_release(&pop, &MembershipVector::from_members(8, &[0, 2, 5]), &mut rng(11)).unwrap().values;
        let exact = PosteriorEngine::enumerate(&mech, &pop, &q).unwrap().posterior(r.view()).unwrap();
        let is =
            PosteriorEngine::new(&mech, &pop, &q, PosteriorMethod::ImportanceSampling { samples: 20_000 }, &mut rng(12)).unwrap().posterior(r.view()).unwrap();
        assert!(is.ess > 50.0);
        for (a, b) in exact.marginals.iter().zip(&is.marginals) {
            assert!((a - b).abs() < 0.05, "{a} vs {b}");
        }
    }

    #[test]
    fn blind_ordering_closed_forms() {
        let pop: Population = generate_population(6, 4, &AafDistribution::default(), 13).unwrap();
        let reference: Population = generate_population(40, 4, &AafDistribution::default(), 14).unwrap();
        let q = MembershipPrior::bernoulli(6, 0.5);
        let mech = gaussian(MeanMap::blind(vec![0.5; 4]), 0.1, 4);
        let opts = OrderingOptions { alpha: 0.1, n_samples: 3000, calibration_samples: 2000, adaptive_n: 2, slack: 3.0 };
        let rep = verify_theorem1_ordering(&mech, &pop, &reference, &q, &q, &opts, &mut rng(15)).unwrap();
        let qk = q.conditional_marginal(0);
        assert!((rep.mirror.mean - 6.0 * qk * qk).abs() <= 3.0 * rep.mirror.se);
        // Blind tests claim with probability α, except that a sole member
        // (b_{-k} empty) is certain: P(|B| = 1) = 6/63.
        let opt_expected = 0.1 * 6.0 * qk + 0.9 * 6.0 / 63.0;
        assert!((rep.optimal.loss.mean - opt_expected).abs() <= 3.0 * rep.optimal.loss.se);
        assert!((rep.optimal_alpha - 0.1).abs() < 0.02);
        assert!((rep.adaptive_alpha - 0.1).abs() < 0.03, "{}", rep.adaptive_alpha);
        assert!((rep.naive_alpha - 0.1).abs() < 0.03, "{}", rep.naive_alpha);
        assert!(rep.holds[0]);
    }
}
