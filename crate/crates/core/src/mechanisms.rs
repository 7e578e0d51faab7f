//! Release mechanisms r = R(x(b) + δ) with δ ~ g(·|b).

use ndarray::{Array1, ArrayView1};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::learn::generator::GeneratorMechanism;
use crate::population::{MembershipPrior, MembershipVector, Population, MAX_ENUMERABLE};
use crate::scalar::Scalar;
use crate::stats::{Estimate, Welford};

/// Noise mean M_b as a function of the membership vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MeanMap {
    Zero,
    /// M_b = slope · x(b) + intercept. An empty intercept means zero.
    Affine {
        slope: f64,
        #[serde(default)]
        intercept: Vec<f64>,
    },
    /// Explicit per-b means; only for small universes.
    Table {
        entries: Vec<(MembershipVector, Vec<f64>)>,
    },
}

impl MeanMap {
    /// The mean map that cancels x(b), so r carries no information on b.
    pub fn blind(intercept: Vec<f64>) -> Self {
        MeanMap::Affine { slope: -1.0, intercept }
    }

    fn eval(&self, b: &MembershipVector, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        let m = x.len();
        match self {
            MeanMap::Zero => Ok(Array1::zeros(m)),
            MeanMap::Affine { slope, intercept } => {
                let mut out = x.mapv(|v| slope * v);
                if !intercept.is_empty() {
                    out += &ArrayView1::from(intercept.as_slice());
                }
                Ok(out)
            }
            MeanMap::Table { entries } => entries
                .iter()
                .find(|(k, _)| k == b)
                .map(|(_, v)| Array1::from(v.clone()))
                .ok_or_else(|| invalid("mean_map", "membership vector missing from table")),
        }
    }

    fn check(&self, m: usize, k_min: usize) -> Result<()> {
        let bound = m as f64 / k_min as f64;
        match self {
            MeanMap::Zero => Ok(()),
            MeanMap::Affine { slope, intercept } => {
                if !intercept.is_empty() && intercept.len() != m {
                    return Err(Error::DimensionMismatch { expected: m, actual: intercept.len(), context: "mean-map intercept" });
                }
                // Adjacent x(b) differ by at most 1/k_min per SNV.
                let gap = slope.abs() / k_min as f64;
                if gap > bound {
                    return Err(Error::AdjacencyBound { snv: 0, gap, bound });
                }
                Ok(())
            }
            MeanMap::Table { entries } => {
                if entries.first().is_some_and(|(b, _)| b.len() > MAX_ENUMERABLE) {
                    return Err(invalid("mean_map", format!("tables are limited to K ≤ {MAX_ENUMERABLE}")));
                }
                for (i, (b, mb)) in entries.iter().enumerate() {
                    if mb.len() != m {
                        return Err(Error::DimensionMismatch { expected: m, actual: mb.len(), context: "mean-map table row" });
                    }
                    for (c, mc) in &entries[i + 1..] {
                        if b.bits().iter().zip(c.bits()).filter(|(u, v)| u != v).count() != 1 {
                            continue;
                        }
                        for (j, (u, v)) in mb.iter().zip(mc).enumerate() {
                            if (u - v).abs() > bound {
                                return Err(Error::AdjacencyBound { snv: j, gap: (u - v).abs(), bound });
                            }
                        }
                    }
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MechanismKind<T: Scalar> {
    ZeroNoise,
    Laplace { scale: f64 },
    Gaussian { mean_map: MeanMap, variances: Vec<f64> },
    Generator(Box<GeneratorMechanism<T>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReleaseMechanism<T: Scalar = f64> {
    pub kind: MechanismKind<T>,
    /// Apply R = Clip[0,1] to the released values.
    pub clip: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Release<T: Scalar = f64> {
    pub values: Array1<T>,
    /// Pre-clip noise, kept for utility accounting.
    pub noise: Array1<T>,
}

pub fn sample_laplace<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.random::<f64>() - 0.5;
    -scale * u.signum() * (-2.0 * u.abs()).ln_1p()
}

impl<T: Scalar> ReleaseMechanism<T> {
    pub fn zero_noise() -> Self {
        Self { kind: MechanismKind::ZeroNoise, clip: false }
    }

    pub fn laplace(scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(invalid("scale", format!("{scale} must be positive and finite")));
        }
        Ok(Self { kind: MechanismKind::Laplace { scale }, clip: false })
    }

    pub fn gaussian(mean_map: MeanMap, variances: Vec<f64>) -> Result<Self> {
        if let Some(v) = variances.iter().find(|&&v| !(v > 0.0 && v.is_finite())) {
            return Err(invalid("variances", format!("{v} must be positive and finite")));
        }
        Ok(Self { kind: MechanismKind::Gaussian { mean_map, variances }, clip: false })
    }

    pub fn generator(g: GeneratorMechanism<T>) -> Self {
        Self { kind: MechanismKind::Generator(Box::new(g)), clip: true }
    }

    pub fn with_clip(mut self, clip: bool) -> Self {
        self.clip = clip;
        self
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            MechanismKind::ZeroNoise => "zero-noise",
            MechanismKind::Laplace { .. } => "laplace",
            MechanismKind::Gaussian { .. } => "gaussian",
            MechanismKind::Generator(_) => "generator",
        }
    }

    pub fn has_density(&self) -> bool {
        !self.clip && !matches!(self.kind, MechanismKind::Generator(_))
    }

    /// Gaussian per-SNV variances, if any.
    pub fn variances(&self) -> Option<&[f64]> {
        match &self.kind {
            MechanismKind::Gaussian { variances, .. } => Some(variances),
            _ => None,
        }
    }

    /// E[r | b] before clipping for mechanisms whose noise mean is known.
    pub fn mean_release(&self, pop: &Population<T>, b: &MembershipVector) -> Result<Array1<f64>> {
        let x = pop.summary_stats(b)?.mapv(|v| v.as_f64());
        match &self.kind {
            MechanismKind::ZeroNoise | MechanismKind::Laplace { .. } => Ok(x),
            MechanismKind::Gaussian { mean_map, .. } => Ok(&x + &mean_map.eval(b, x.view())?),
            MechanismKind::Generator(_) => Err(Error::Unsupported("generator mechanisms have no closed-form mean".into())),
        }
    }

    pub fn sample_noise<R: Rng + ?Sized>(&self, pop: &Population<T>, b: &MembershipVector, rng: &mut R) -> Result<Array1<T>> {
        let m = pop.num_snvs();
        Ok(match &self.kind {
            MechanismKind::ZeroNoise => Array1::zeros(m),
            MechanismKind::Laplace { scale } => (0..m).map(|_| T::lit(sample_laplace(*scale, rng))).collect(),
            MechanismKind::Gaussian { mean_map, variances } => {
                check_width(variances.len(), m)?;
                let x = pop.summary_stats(b)?.mapv(|v| v.as_f64());
                let mu = mean_map.eval(b, x.view())?;
                mu.iter()
                    .zip(variances)
                    .map(|(&mj, &vj)| {
                        let z: f64 = StandardNormal.sample(rng);
                        T::lit(mj + vj.sqrt() * z)
                    })
                    .collect()
            }
            MechanismKind::Generator(g) => {
                check_width(g.num_snvs(), m)?;
                g.noise(b, rng)?
            }
        })
    }

    pub fn sample_release<R: Rng + ?Sized>(&self, pop: &Population<T>, b: &MembershipVector, rng: &mut R) -> Result<Release<T>> {
        let x = pop.summary_stats(b)?;
        let noise = self.sample_noise(pop, b, rng)?;
        let mut values = &x + &noise;
        if self.clip {
            values.mapv_inplace(|v| v.max(T::zero()).min(T::one()));
        }
        Ok(Release { values, noise })
    }

    pub fn sample_release_seeded(&self, pop: &Population<T>, b: &MembershipVector, seed: u64) -> Result<Release<T>> {
        self.sample_release(pop, b, &mut crate::stats::rng(seed))
    }

    /// log ρ(r | μ) for a release with pre-clip mean `mean`. Zero-noise
    /// mechanisms are point masses: 0 on the mean and −∞ elsewhere.
    pub fn log_density_at_mean(&self, r: ArrayView1<'_, f64>, mean: ArrayView1<'_, f64>) -> Result<f64> {
        if self.clip {
            return Err(Error::Unsupported("densities of clipped releases have atoms at 0 and 1".into()));
        }
        match &self.kind {
            MechanismKind::ZeroNoise => {
                let hit = r.iter().zip(mean).all(|(a, b)| (a - b).abs() <= 1e-12);
                Ok(if hit { 0.0 } else { f64::NEG_INFINITY })
            }
            MechanismKind::Laplace { scale } => {
                let norm = -(2.0 * scale).ln();
                Ok(r.iter().zip(mean).map(|(a, b)| norm - (a - b).abs() / scale).sum())
            }
            MechanismKind::Gaussian { variances, .. } => Ok(r
                .iter()
                .zip(mean)
                .zip(variances)
                .map(|((a, b), v)| {
                    let d = a - b;
                    -0.5 * (d * d / v + (2.0 * std::f64::consts::PI * v).ln())
                })
                .sum()),
            MechanismKind::Generator(_) => Err(Error::Unsupported("generator mechanisms are density-free".into())),
        }
    }

    /// Exact log ρ(r | b), computed pre-clip.
    pub fn log_density(&self, pop: &Population<T>, b: &MembershipVector, r: &Release<T>) -> Result<f64> {
        if !self.has_density() {
            return Err(Error::Unsupported(format!("{} mechanism with clip={} has no density", self.name(), self.clip)));
        }
        let mean = self.mean_release(pop, b)?;
        let rv = r.values.mapv(|v| v.as_f64());
        self.log_density_at_mean(rv.view(), mean.view())
    }

    /// Monte Carlo E[Σ_j κ_j |δ_j|] with b drawn from `prior`.
    pub fn expected_utility_loss<R: Rng + ?Sized>(
        &self,
        pop: &Population<T>,
        prior: &MembershipPrior,
        kappa: &[f64],
        n_samples: usize,
        rng: &mut R,
    ) -> Result<Estimate> {
        check_width(kappa.len(), pop.num_snvs())?;
        if let Some(k) = kappa.iter().find(|&&k| !(k >= 0.0)) {
            return Err(invalid("kappa", format!("{k} must be nonnegative")));
        }
        if matches!(self.kind, MechanismKind::ZeroNoise) || kappa.iter().all(|&k| k == 0.0) {
            return Ok(Estimate { mean: 0.0, se: 0.0, n: n_samples });
        }
        let mut w = Welford::default();
        for _ in 0..n_samples {
            let b = prior.sample(rng);
            let d = self.sample_noise(pop, &b, rng)?;
            w.push(d.iter().zip(kappa).map(|(v, k)| k * v.as_f64().abs()).sum());
        }
        Ok(w.estimate())
    }

    /// Samples adjacent pairs and checks |M_b − M_b'| ≤ m/k_min per SNV.
    pub fn validate_adjacency<R: Rng + ?Sized>(&self, pop: &Population<T>, prior: &MembershipPrior, k_min: usize, n_pairs: usize, rng: &mut R) -> Result<()> {
        let MechanismKind::Gaussian { mean_map, .. } = &self.kind else {
            return Ok(());
        };
        let bound = pop.num_snvs() as f64 / k_min as f64;
        for _ in 0..n_pairs {
            let b = prior.sample(rng);
            let k = rng.random_range(0..b.len());
            let c = b.with(k, !b.get(k));
            if c.count() == 0 {
                continue;
            }
            let xb = pop.summary_stats(&b)?.mapv(|v| v.as_f64());
            let xc = pop.summary_stats(&c)?.mapv(|v| v.as_f64());
            let (mb, mc) = (mean_map.eval(&b, xb.view())?, mean_map.eval(&c, xc.view())?);
            for (j, (u, v)) in mb.iter().zip(mc.iter()).enumerate() {
                if (u - v).abs() > bound + 1e-12 {
                    return Err(Error::AdjacencyBound { snv: j, gap: (u - v).abs(), bound });
                }
            }
        }
        Ok(())
    }
}

fn check_width(actual: usize, expected: usize) -> Result<()> {
    if actual != expected {
        return Err(Error::DimensionMismatch { expected, actual, context: "mechanism width" });
    }
    Ok(())
}

/// Laplace(0, sensitivity/ε) noise on every coordinate.
pub fn laplace_mechanism<T: Scalar>(epsilon: f64, sensitivity: f64) -> Result<ReleaseMechanism<T>> {
    if !(epsilon > 0.0) {
        return Err(invalid("epsilon", format!("{epsilon} must be positive")));
    }
    if !(sensitivity > 0.0) {
        return Err(invalid("sensitivity", format!("{sensitivity} must be positive")));
    }
    ReleaseMechanism::laplace(sensitivity / epsilon)
}

/// Gaussian noise with V_j = (m / (k_min · M̂_j))².
pub fn gaussian_mechanism_theorem2<T: Scalar>(m_hat: &[f64], m: usize, k_min: usize, mean_map: MeanMap) -> Result<ReleaseMechanism<T>> {
    if k_min == 0 {
        return Err(invalid("k_min", "must be at least 1"));
    }
    check_width(m_hat.len(), m)?;
    if let Some(v) = m_hat.iter().find(|&&v| !(v > 0.0)) {
        return Err(invalid("m_hat", format!("{v} must be positive")));
    }
    mean_map.check(m, k_min)?;
    let variances = m_hat.iter().map(|&h| (m as f64 / (k_min as f64 * h)).powi(2)).collect();
    ReleaseMechanism::gaussian(mean_map, variances)
}
