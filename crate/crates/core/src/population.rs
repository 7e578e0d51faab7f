//! Universe of individuals, membership vectors, priors and summary statistics.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;

/// Largest universe for which priors are enumerated exhaustively.
pub const MAX_ENUMERABLE: usize = 20;

/// Genotypes and reference alternate-allele frequencies.
///
/// `genotypes[[k, j]]` is 1 when individual `k` carries the alternate allele
/// at SNV `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Population<T: Scalar = f64> {
    genotypes: Array2<T>,
    reference_aafs: Array1<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AafDistribution {
    /// Beta(a, b) conditioned on [lo, hi] by rejection.
    Beta {
        a: f64,
        b: f64,
        lo: f64,
        hi: f64,
    },
    PointMass {
        p: f64,
    },
    Uniform {
        lo: f64,
        hi: f64,
    },
}

impl Default for AafDistribution {
    fn default() -> Self {
        AafDistribution::Beta { a: 0.5, b: 2.0, lo: 0.01, hi: 0.99 }
    }
}

impl AafDistribution {
    fn validate(&self) -> Result<()> {
        let inside = |p: f64| p > 0.0 && p < 1.0;
        match *self {
            AafDistribution::Beta { a, b, lo, hi } => {
                if !(a > 0.0 && b > 0.0) {
                    return Err(invalid("aaf_distribution", format!("Beta shape ({a}, {b}) must be positive")));
                }
                if !(inside(lo) && inside(hi) && lo < hi) {
                    return Err(invalid("aaf_distribution", format!("truncation [{lo}, {hi}] must lie strictly inside (0,1)")));
                }
            }
            AafDistribution::PointMass { p } if !inside(p) => {
                return Err(invalid("aaf_distribution", format!("point mass {p} outside (0,1)")));
            }
            AafDistribution::Uniform { lo, hi } if !(inside(lo) && inside(hi) && lo <= hi) => {
                return Err(invalid("aaf_distribution", format!("uniform range [{lo}, {hi}] invalid")));
            }
            _ => {}
        }
        Ok(())
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            AafDistribution::Beta { a, b, lo, hi } => {
                let beta = Beta::new(a, b).expect("validated");
                loop {
                    let p = beta.sample(rng);
                    if (lo..=hi).contains(&p) {
                        return p;
                    }
                }
            }
            AafDistribution::PointMass { p } => p,
            AafDistribution::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
        }
    }
}

impl<T: Scalar> Population<T> {
    pub fn new(genotypes: Array2<T>, reference_aafs: Array1<T>) -> Result<Self> {
        let (k, m) = genotypes.dim();
        if k == 0 || m == 0 {
            return Err(invalid("genotypes", "need at least one individual and one SNV"));
        }
        if reference_aafs.len() != m {
            return Err(Error::DimensionMismatch { expected: m, actual: reference_aafs.len(), context: "reference AAFs" });
        }
        if let Some(j) = reference_aafs.iter().position(|&p| !(p > T::zero() && p < T::one())) {
            return Err(invalid("reference_aafs", format!("p̄_{j} = {} is not strictly inside (0,1)", reference_aafs[j])));
        }
        if genotypes.iter().any(|&d| d != T::zero() && d != T::one()) {
            return Err(invalid("genotypes", "entries must be 0 or 1"));
        }
        Ok(Self { genotypes, reference_aafs })
    }

    pub fn num_individuals(&self) -> usize {
        self.genotypes.nrows()
    }

    pub fn num_snvs(&self) -> usize {
        self.genotypes.ncols()
    }

    pub fn genotypes(&self) -> ArrayView2<'_, T> {
        self.genotypes.view()
    }

    pub fn genotype_row(&self, k: usize) -> ArrayView1<'_, T> {
        self.genotypes.row(k)
    }

    pub fn reference_aafs(&self) -> ArrayView1<'_, T> {
        self.reference_aafs.view()
    }

    /// Draws `k` fresh individuals from the reference frequencies, e.g. an
    /// attacker's reference pool disjoint from this universe.
    pub fn sample_reference<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<Population<T>> {
        if k == 0 {
            return Err(Error::EmptyReference);
        }
        let aafs = self.reference_aafs.clone();
        let g = sample_genotypes(&aafs, k, rng);
        Population::new(g, aafs)
    }

    /// Mean genotype row over the members of `b`.
    pub fn summary_stats(&self, b: &MembershipVector) -> Result<Array1<T>> {
        self.check_len(b)?;
        let n = b.count();
        if n == 0 {
            return Err(Error::EmptyBeacon);
        }
        let mut x = Array1::<T>::zeros(self.num_snvs());
        for k in b.members() {
            x += &self.genotypes.row(k);
        }
        x /= T::from_usize_lossy(n);
        Ok(x)
    }

    /// Summary statistics for a batch of membership rows (0/1 entries).
    /// Rows with no members yield NaN.
    pub fn summary_stats_batch(&self, b: ArrayView2<'_, T>) -> Array2<T> {
        let counts = b.sum_axis(Axis(1));
        let mut x = b.dot(&self.genotypes);
        for (mut row, &c) in x.axis_iter_mut(Axis(0)).zip(counts.iter()) {
            row /= c;
        }
        x
    }

    pub fn cast<U: Scalar>(&self) -> Population<U> {
        Population { genotypes: self.genotypes.mapv(|v| U::lit(v.as_f64())), reference_aafs: self.reference_aafs.mapv(|v| U::lit(v.as_f64())) }
    }

    pub(crate) fn check_len(&self, b: &MembershipVector) -> Result<()> {
        if b.len() != self.num_individuals() {
            return Err(Error::DimensionMismatch { expected: self.num_individuals(), actual: b.len(), context: "membership vector" });
        }
        Ok(())
    }

    /// Writes the plain-text matrix format read by [`load_population`].
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut s = String::new();
        writeln!(s, "{} {}", self.num_individuals(), self.num_snvs()).unwrap();
        let aafs: Vec<String> = self.reference_aafs.iter().map(|p| format!("{:e}", p.as_f64())).collect();
        s.push_str(&aafs.join(" "));
        s.push('\n');
        for row in self.genotypes.rows() {
            let cells: Vec<&str> = row.iter().map(|&d| if d == T::one() { "1" } else { "0" }).collect();
            s.push_str(&cells.join(" "));
            s.push('\n');
        }
        write_atomic(path.as_ref(), s.as_bytes())
    }
}

fn sample_genotypes<T: Scalar, R: Rng + ?Sized>(aafs: &Array1<T>, k: usize, rng: &mut R) -> Array2<T> {
    let m = aafs.len();
    let mut g = Array2::<T>::zeros((k, m));
    for mut row in g.rows_mut() {
        for (d, &p) in row.iter_mut().zip(aafs.iter()) {
            if rng.random::<f64>() < p.as_f64() {
                *d = T::one();
            }
        }
    }
    g
}

/// Synthetic population under linkage equilibrium: p̄_j i.i.d. from
/// `aafs`, then d_kj ~ Bernoulli(p̄_j).
pub fn generate_population<T: Scalar>(k: usize, m: usize, aafs: &AafDistribution, seed: u64) -> Result<Population<T>> {
    if k == 0 || m == 0 {
        return Err(invalid("K, m", "must both be at least 1"));
    }
    aafs.validate()?;
    let mut rng = crate::stats::rng(seed);
    let p: Array1<T> = (0..m).map(|_| T::lit(aafs.sample(&mut rng))).collect();
    let g = sample_genotypes(&p, k, &mut rng);
    Population::new(g, p)
}

/// L1 sensitivity m/k_min of the full statistics vector.
pub fn sensitivity(m: usize, k_min: usize) -> Result<f64> {
    if k_min == 0 {
        return Err(invalid("k_min", "must be at least 1"));
    }
    Ok(m as f64 / k_min as f64)
}

/// Per-SNV sensitivity 1/k_min.
pub fn per_snv_sensitivity(k_min: usize) -> Result<f64> {
    sensitivity(1, k_min)
}

pub fn load_population<T: Scalar>(path: impl AsRef<Path>) -> Result<Population<T>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let perr = |line: usize, reason: String| Error::Parse { path: path.to_path_buf(), line, reason };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());

    let (ln, header) = lines.next().ok_or_else(|| perr(1, "empty file".into()))?;
    let dims: Vec<usize> =
        header.split_whitespace().map(|t| t.parse::<usize>().map_err(|e| perr(ln + 1, format!("bad dimension `{t}`: {e}")))).collect::<Result<_>>()?;
    let [k, m] = dims[..] else {
        return Err(perr(ln + 1, "header must be `K m`".into()));
    };

    let (ln, aaf_line) = lines.next().ok_or_else(|| perr(2, "missing reference AAF line".into()))?;
    let aafs: Vec<f64> =
        aaf_line.split_whitespace().map(|t| t.parse::<f64>().map_err(|e| perr(ln + 1, format!("bad frequency `{t}`: {e}")))).collect::<Result<_>>()?;
    if aafs.len() != m {
        return Err(perr(ln + 1, format!("expected {m} frequencies, found {}", aafs.len())));
    }
    if let Some(p) = aafs.iter().find(|&&p| !(p > 0.0 && p < 1.0)) {
        return Err(perr(ln + 1, format!("frequency {p} not strictly inside (0,1)")));
    }

    let mut g = Array2::<T>::zeros((k, m));
    let mut rows = 0;
    for (ln, line) in lines {
        if rows == k {
            return Err(perr(ln + 1, format!("more than {k} genotype rows")));
        }
        let mut n = 0;
        for t in line.split_whitespace() {
            if n == m {
                return Err(perr(ln + 1, format!("more than {m} genotypes")));
            }
            g[[rows, n]] = match t {
                "0" => T::zero(),
                "1" => T::one(),
                _ => return Err(perr(ln + 1, format!("genotype `{t}` is not 0 or 1"))),
            };
            n += 1;
        }
        if n != m {
            return Err(perr(ln + 1, format!("expected {m} genotypes, found {n}")));
        }
        rows += 1;
    }
    if rows != k {
        return Err(perr(text.lines().count(), format!("expected {k} genotype rows, found {rows}")));
    }
    Population::new(g, aafs.into_iter().map(T::lit).collect())
}

/// Write-temp-then-rename in the target directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Membership vector b; the beacon is {k : b_k = 1}.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MembershipVector {
    bits: Vec<bool>,
}

impl MembershipVector {
    pub fn new(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn empty(k: usize) -> Self {
        Self { bits: vec![false; k] }
    }

    pub fn full(k: usize) -> Self {
        Self { bits: vec![true; k] }
    }

    pub fn from_members(k: usize, members: &[usize]) -> Self {
        let mut b = Self::empty(k);
        members.iter().for_each(|&i| b.bits[i] = true);
        b
    }

    /// Low `k` bits of `code`; bit i is individual i.
    pub fn from_code(k: usize, code: u64) -> Self {
        Self { bits: (0..k).map(|i| code >> i & 1 == 1).collect() }
    }

    pub fn code(&self) -> u64 {
        self.bits.iter().enumerate().fold(0, |c, (i, &b)| c | (b as u64) << i)
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn get(&self, k: usize) -> bool {
        self.bits[k]
    }

    pub fn set(&mut self, k: usize, v: bool) {
        self.bits[k] = v;
    }

    pub fn with(&self, k: usize, v: bool) -> Self {
        let mut b = self.clone();
        b.bits[k] = v;
        b
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn members(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)
    }

    pub fn to_array<T: Scalar>(&self) -> Array1<T> {
        self.bits.iter().map(|&b| if b { T::one() } else { T::zero() }).collect()
    }
}

/// Prior over membership vectors, always conditioned on a non-empty beacon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MembershipPrior {
    IndependentBernoulli { rates: Vec<f64> },
    Uniform { k: usize },
    Table { support: Vec<MembershipVector>, probs: Vec<f64> },
}

impl MembershipPrior {
    pub fn bernoulli(k: usize, rate: f64) -> Self {
        MembershipPrior::IndependentBernoulli { rates: vec![rate; k] }
    }

    pub fn point_mass(b: MembershipVector) -> Self {
        MembershipPrior::Table { support: vec![b], probs: vec![1.0] }
    }

    pub fn num_individuals(&self) -> usize {
        match self {
            MembershipPrior::IndependentBernoulli { rates } => rates.len(),
            MembershipPrior::Uniform { k } => *k,
            MembershipPrior::Table { support, .. } => support.first().map_or(0, |b| b.len()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            MembershipPrior::IndependentBernoulli { rates } => {
                if rates.is_empty() {
                    return Err(invalid("prior", "no individuals"));
                }
                if let Some(r) = rates.iter().find(|r| !(0.0..=1.0).contains(*r)) {
                    return Err(invalid("prior", format!("rate {r} outside [0,1]")));
                }
                if rates.iter().all(|&r| r == 0.0) {
                    return Err(invalid("prior", "all rates zero: beacon is always empty"));
                }
            }
            MembershipPrior::Uniform { k } => {
                if *k == 0 {
                    return Err(invalid("prior", "no individuals"));
                }
            }
            MembershipPrior::Table { support, probs } => {
                if support.is_empty() || support.len() != probs.len() {
                    return Err(invalid("prior", "support and probabilities must be non-empty and equally long"));
                }
                let k = support[0].len();
                if support.iter().any(|b| b.len() != k || b.count() == 0) {
                    return Err(invalid("prior", "support vectors must share a length and be non-empty"));
                }
                if probs.iter().any(|&p| !(p >= 0.0)) || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                    return Err(invalid("prior", "probabilities must be nonnegative and sum to 1"));
                }
            }
        }
        Ok(())
    }

    /// Marginal P(b_k = 1) before conditioning on a non-empty beacon.
    pub fn marginal(&self, k: usize) -> f64 {
        match self {
            MembershipPrior::IndependentBernoulli { rates } => rates[k],
            MembershipPrior::Uniform { .. } => 0.5,
            MembershipPrior::Table { support, probs } => support.iter().zip(probs).filter(|(b, _)| b.get(k)).map(|(_, p)| p).sum(),
        }
    }

    fn log_empty_mass(&self) -> f64 {
        match self {
            MembershipPrior::IndependentBernoulli { rates } => rates.iter().map(|&r| (1.0 - r).ln()).sum(),
            MembershipPrior::Uniform { k } => -(*k as f64) * std::f64::consts::LN_2,
            MembershipPrior::Table { .. } => f64::NEG_INFINITY,
        }
    }

    /// log P(b | b ≠ 0). Returns −∞ for the empty vector.
    pub fn log_prob(&self, b: &MembershipVector) -> f64 {
        if b.count() == 0 {
            return f64::NEG_INFINITY;
        }
        let norm = (-self.log_empty_mass().exp()).ln_1p();
        let raw = match self {
            MembershipPrior::IndependentBernoulli { rates } => rates.iter().zip(b.bits()).map(|(&r, &bit)| if bit { r.ln() } else { (1.0 - r).ln() }).sum(),
            MembershipPrior::Uniform { k } => -(*k as f64) * std::f64::consts::LN_2,
            MembershipPrior::Table { support, probs } => support.iter().zip(probs).filter(|(s, _)| *s == b).map(|(_, p)| p).sum::<f64>().ln(),
        };
        raw - norm
    }

    /// Draws b conditioned on a non-empty beacon (rejection).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> MembershipVector {
        loop {
            let b = match self {
                MembershipPrior::IndependentBernoulli { rates } => MembershipVector::new(rates.iter().map(|&r| rng.random::<f64>() < r).collect()),
                MembershipPrior::Uniform { k } => MembershipVector::new((0..*k).map(|_| rng.random::<bool>()).collect()),
                MembershipPrior::Table { support, probs } => {
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    let mut pick = support.len() - 1;
                    for (i, p) in probs.iter().enumerate() {
                        acc += p;
                        if u < acc {
                            pick = i;
                            break;
                        }
                    }
                    support[pick].clone()
                }
            };
            if b.count() > 0 {
                return b;
            }
        }
    }

    /// P(b_k = 1 | b ≠ 0).
    pub fn conditional_marginal(&self, k: usize) -> f64 {
        match self {
            MembershipPrior::Table { .. } => self.marginal(k),
            _ => self.marginal(k) / -(self.log_empty_mass().exp_m1()),
        }
    }

    /// Draws b conditioned on b_k = `value` (and b ≠ 0).
    pub fn sample_given<R: Rng + ?Sized>(&self, k: usize, value: bool, rng: &mut R) -> Result<MembershipVector> {
        if let MembershipPrior::IndependentBernoulli { rates } = self {
            let p = if value { rates[k] } else { 1.0 - rates[k] };
            if p == 0.0 {
                return Err(invalid("prior", format!("b_{k} = {value} has probability zero")));
            }
            loop {
                let b = MembershipVector::new(rates.iter().enumerate().map(|(j, &r)| if j == k { value } else { rng.random::<f64>() < r }).collect());
                if b.count() > 0 {
                    return Ok(b);
                }
            }
        }
        for _ in 0..1_000_000 {
            let b = self.sample(rng);
            if b.get(k) == value {
                return Ok(b);
            }
        }
        Err(invalid("prior", format!("b_{k} = {value} is too unlikely to sample")))
    }

    /// Every non-empty vector with positive probability and its log
    /// probability. Requires K ≤ [`MAX_ENUMERABLE`] for product priors.
    pub fn enumerate(&self) -> Result<Vec<(MembershipVector, f64)>> {
        match self {
            MembershipPrior::Table { support, .. } => Ok(support.iter().map(|b| (b.clone(), self.log_prob(b))).filter(|(_, lp)| lp.is_finite()).collect()),
            _ => {
                let k = self.num_individuals();
                if k > MAX_ENUMERABLE {
                    return Err(invalid("prior", format!("cannot enumerate 2^{k} membership vectors")));
                }
                Ok((1..1u64 << k)
                    .map(|c| MembershipVector::from_code(k, c))
                    .map(|b| {
                        let lp = self.log_prob(&b);
                        (b, lp)
                    })
                    .filter(|(_, lp)| lp.is_finite())
                    .collect())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn full_scale_dimensions() {
        let p: Population<f32> = generate_population(800, 5000, &AafDistribution::default(), 1).unwrap();
        assert_eq!((p.num_individuals(), p.num_snvs()), (800, 5000));
        assert!(p.reference_aafs().iter().all(|&a| (0.01..=0.99).contains(&a)));
    }

    #[test]
    fn point_mass_aafs() {
        let p: Population = generate_population(5, 7, &AafDistribution::PointMass { p: 0.5 }, 3).unwrap();
        assert!(p.reference_aafs().iter().all(|&a| a == 0.5));
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let d = AafDistribution::default();
        let a: Population = generate_population(30, 40, &d, 9).unwrap();
        assert_eq!(a, generate_population(30, 40, &d, 9).unwrap());
        assert_ne!(a, generate_population(30, 40, &d, 10).unwrap());
    }

    #[test]
    fn rejects_bad_distribution() {
        let bad = AafDistribution::Beta { a: -1.0, b: 2.0, lo: 0.01, hi: 0.99 };
        assert!(generate_population::<f64>(2, 2, &bad, 0).is_err());
        assert!(generate_population::<f64>(2, 2, &AafDistribution::PointMass { p: 1.0 }, 0).is_err());
    }

    #[test]
    fn summary_stats_examples() {
        let p = Population::new(array![[1.0, 0.0], [1.0, 1.0], [0.0, 0.0]], array![0.3, 0.3]).unwrap();
        let b = MembershipVector::from_members(3, &[0, 1]);
        assert_eq!(p.summary_stats(&b).unwrap(), array![1.0, 0.5]);
        let single = MembershipVector::from_members(3, &[1]);
        assert_eq!(p.summary_stats(&single).unwrap(), p.genotype_row(1));
        assert!(matches!(p.summary_stats(&MembershipVector::empty(3)), Err(Error::EmptyBeacon)));
    }

    #[test]
    fn batch_stats_match_single() {
        let p: Population = generate_population(6, 9, &AafDistribution::default(), 4).unwrap();
        let bs = [MembershipVector::from_members(6, &[0, 3]), MembershipVector::from_members(6, &[1, 2, 5])];
        let mut rows = Array2::zeros((2, 6));
        for (i, b) in bs.iter().enumerate() {
            rows.row_mut(i).assign(&b.to_array());
        }
        let x = p.summary_stats_batch(rows.view());
        for (i, b) in bs.iter().enumerate() {
            assert_eq!(x.row(i), p.summary_stats(b).unwrap());
        }
    }

    #[test]
    fn sensitivity_examples() {
        assert_abs_diff_eq!(sensitivity(5000, 400).unwrap(), 12.5);
        assert_abs_diff_eq!(sensitivity(1, 1).unwrap(), 1.0);
        assert_abs_diff_eq!(per_snv_sensitivity(400).unwrap(), 0.0025);
        assert!(sensitivity(3, 0).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pop.txt");
        let p: Population = generate_population(12, 8, &AafDistribution::default(), 5).unwrap();
        p.save(&path).unwrap();
        assert_eq!(load_population::<f64>(&path).unwrap(), p);
    }

    #[test]
    fn toy_file_and_rejections() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.txt");
        std::fs::write(&path, "2 3\n0.1 0.5 0.9\n1 0 1\n0 0 1\n").unwrap();
        let p: Population = load_population(&path).unwrap();
        assert_eq!((p.num_individuals(), p.num_snvs()), (2, 3));

        std::fs::write(&path, "2 3\n0 0.5 0.9\n1 0 1\n0 0 1\n").unwrap();
        assert!(matches!(load_population::<f64>(&path), Err(Error::Parse { line: 2, .. })));
        std::fs::write(&path, "2 3\n0.1 0.5 0.9\n1 0 2\n0 0 1\n").unwrap();
        assert!(matches!(load_population::<f64>(&path), Err(Error::Parse { line: 3, .. })));
        std::fs::write(&path, "2 3\n0.1 0.5 0.9\n1 0 1\n").unwrap();
        assert!(load_population::<f64>(&path).is_err());
    }

    #[test]
    fn column_means_track_reference() {
        let p: Population = generate_population(800, 2000, &AafDistribution::default(), 11).unwrap();
        let means = p.genotypes().mean_axis(Axis(0)).unwrap();
        let ok = means.iter().zip(p.reference_aafs()).filter(|(&x, &a)| (x - a).abs() <= 4.0 * (a * (1.0 - a) / 800.0).sqrt()).count();
        assert!(ok as f64 >= 0.99 * 2000.0, "{ok}");
    }

    #[test]
    fn prior_log_probs_normalize() {
        for prior in [MembershipPrior::IndependentBernoulli { rates: vec![0.2, 0.7, 0.5, 0.9] }, MembershipPrior::Uniform { k: 4 }] {
            let total: f64 = prior.enumerate().unwrap().iter().map(|(_, lp)| lp.exp()).sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn prior_samples_are_nonempty() {
        let prior = MembershipPrior::bernoulli(3, 0.05);
        let mut rng = crate::stats::rng(0);
        assert!((0..2000).all(|_| prior.sample(&mut rng).count() > 0));
    }

    proptest! {
        #[test]
        fn summary_stats_ignore_non_members(seed in 0u64..1000, mask in 1u64..255) {
            let p: Population = generate_population(8, 5, &AafDistribution::default(), seed).unwrap();
            let b = MembershipVector::from_code(8, mask);
            let x = p.summary_stats(&b).unwrap();
            let mut g = p.genotypes().to_owned();
            for k in 0..8 {
                if !b.get(k) {
                    g.row_mut(k).fill(1.0);
                }
            }
            let q = Population::new(g, p.reference_aafs().to_owned()).unwrap();
            prop_assert_eq!(q.summary_stats(&b).unwrap(), x);
        }

        #[test]
        fn summary_stats_permutation_equivariant(seed in 0u64..1000, mask in 1u64..255, shift in 1usize..8) {
            let p: Population = generate_population(8, 5, &AafDistribution::default(), seed).unwrap();
            let b = MembershipVector::from_code(8, mask);
            let perm: Vec<usize> = (0..8).map(|i| (i + shift) % 8).collect();
            let mut g = Array2::zeros((8, 5));
            let mut bits = vec![false; 8];
            for (new, &old) in perm.iter().enumerate() {
                g.row_mut(new).assign(&p.genotype_row(old));
                bits[new] = b.get(old);
            }
            let q = Population::new(g, p.reference_aafs().to_owned()).unwrap();
            let a = p.summary_stats(&b).unwrap();
            let c = q.summary_stats(&MembershipVector::new(bits)).unwrap();
            for (u, v) in a.iter().zip(c.iter()) {
                prop_assert!((u - v).abs() < 1e-12);
            }
        }

        #[test]
        fn removal_moves_stats_by_at_most_one_over_size(seed in 0u64..1000, mask in 3u64..255, pick in 0usize..8) {
            let p: Population = generate_population(8, 6, &AafDistribution::default(), seed).unwrap();
            let b = MembershipVector::from_code(8, mask);
            prop_assume!(b.get(pick) && b.count() >= 2);
            let x = p.summary_stats(&b).unwrap();
            let y = p.summary_stats(&b.with(pick, false)).unwrap();
            let bound = 1.0 / b.count() as f64 + 1e-12;
            prop_assert!(x.iter().zip(y.iter()).all(|(u, v)| (u - v).abs() <= bound));
        }

        #[test]
        fn adding_carrier_moves_toward_one(seed in 0u64..1000, mask in 1u64..255, pick in 0usize..8) {
            let p: Population = generate_population(8, 6, &AafDistribution::default(), seed).unwrap();
            let b = MembershipVector::from_code(8, mask);
            prop_assume!(!b.get(pick));
            let x = p.summary_stats(&b).unwrap();
            let y = p.summary_stats(&b.with(pick, true)).unwrap();
            for j in 0..6 {
                if p.genotype_row(pick)[j] == 1.0 {
                    prop_assert!(y[j] >= x[j]);
                }
            }
        }
    }
}
