//! Experiment configuration, read from TOML.
//!
//! ```toml
//! name = "fig1a"
//! seeds = [0, 1, 2, 3, 4]
//! precision = "f32"
//! attackers = ["bayes", "fixed-lrt", "adaptive-lrt"]
//!
//! [population]
//! k = 200
//! m = 500
//! beacon_rate = 0.5
//! aafs = { kind = "beta", a = 0.5, b = 2.0, lo = 0.01, hi = 0.99 }
//!
//! [mechanism]
//! utility_samples = 2000
//! lrt = { alpha = 0.05, calibration_samples = 20000 }
//!
//! [training]
//! epochs = 100
//! attacker_lr = 1e-3
//!
//! [grid]
//! defenders = ["bayes"]
//! kappa = [0.0, 1.0, { fraction = 0.1, high = 50.0, low = 0.0 }]
//! epsilon = [600.0]
//! ```
//!
//! Keys left out of a file take the desk-scale values of
//! [`ExperimentConfig::default`], table by table.

use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learn::{Kappa, TrainConfig};
use crate::lrt::LrtConfig;
use crate::population::AafDistribution;
use crate::stats::child_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DefenderKind {
    /// Generator trained in the general-sum game.
    Bayes,
    FixedLrt,
    AdaptiveLrt,
    /// Laplace noise at each ε of the grid.
    Laplace,
    /// Laplace at the ε whose κ-weighted utility loss matches the Bayes
    /// defense trained at the same κ.
    MatchedLaplace,
    ZeroNoise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackerKind {
    /// Network attacker: the co-trained one against a Bayes defense,
    /// trained from scratch against anything else.
    Bayes,
    FixedLrt,
    AdaptiveLrt,
}

impl DefenderKind {
    pub fn label(self) -> &'static str {
        match self {
            DefenderKind::Bayes => "bayes",
            DefenderKind::FixedLrt => "fixed-lrt",
            DefenderKind::AdaptiveLrt => "adaptive-lrt",
            DefenderKind::Laplace => "laplace",
            DefenderKind::MatchedLaplace => "matched-laplace",
            DefenderKind::ZeroNoise => "zero-noise",
        }
    }
}

impl AttackerKind {
    pub fn label(self) -> &'static str {
        match self {
            AttackerKind::Bayes => "bayes",
            AttackerKind::FixedLrt => "fixed-lrt",
            AttackerKind::AdaptiveLrt => "adaptive-lrt",
        }
    }
}

/// A κ grid point: one value, an explicit vector, or a random split
/// giving `high` to a `fraction` of SNVs (drawn per seed) and `low` to the
/// rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KappaSpec {
    Scalar(f64),
    Vector(Vec<f64>),
    Split { fraction: f64, high: f64, low: f64 },
}

impl KappaSpec {
    pub fn label(&self) -> String {
        match self {
            KappaSpec::Scalar(k) => format!("k{k}"),
            KappaSpec::Vector(v) => format!("kvec{}", v.len()),
            KappaSpec::Split { fraction, high, low } => format!("ksplit{fraction}-{high}-{low}"),
        }
    }

    pub fn resolve(&self, m: usize, seed: u64) -> Result<Kappa> {
        Ok(match self {
            KappaSpec::Scalar(k) => Kappa::Scalar(*k),
            KappaSpec::Vector(v) => Kappa::Vector(v.clone()),
            KappaSpec::Split { fraction, high, low } => {
                let n_high = (fraction * m as f64).round() as usize;
                let mut w = vec![*low; m];
                for j in sample(&mut child_rng(seed, 11), m, n_high.min(m)) {
                    w[j] = *high;
                }
                Kappa::Vector(w)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopulationConfig {
    /// Load this population file instead of generating one per seed.
    pub path: Option<PathBuf>,
    pub k: usize,
    pub m: usize,
    pub aafs: AafDistribution,
    /// Membership rate of the independent-Bernoulli q = σ.
    pub beacon_rate: f64,
    /// Attacker reference pool size; defaults to K.
    pub reference_size: Option<usize>,
    /// Defaults to the expected beacon size.
    pub k_min: Option<usize>,
    /// Held-out beacons per seed for ROC evaluation.
    pub eval_beacons: usize,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        Self { path: None, k: 200, m: 500, aafs: AafDistribution::default(), beacon_rate: 0.5, reference_size: None, k_min: None, eval_beacons: 200 }
    }
}

impl PopulationConfig {
    pub fn k_min_for(&self, k: usize) -> usize {
        self.k_min.unwrap_or_else(|| ((k as f64 * self.beacon_rate).round() as usize).max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MechanismConfig {
    /// Laplace sensitivity; defaults to m / k_min.
    pub sensitivity: Option<f64>,
    /// Draws for utility-loss estimates and ε matching.
    pub utility_samples: usize,
    /// Size and threshold of the fixed-threshold LRT a defense is trained
    /// against, and the adaptive pool size N.
    pub lrt: LrtConfig,
}

impl Default for MechanismConfig {
    fn default() -> Self {
        Self { sensitivity: None, utility_samples: 2000, lrt: LrtConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub defenders: Vec<DefenderKind>,
    pub kappa: Vec<KappaSpec>,
    pub epsilon: Vec<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { defenders: vec![DefenderKind::Bayes], kappa: vec![KappaSpec::Scalar(0.0)], epsilon: vec![600.0] }
    }
}

/// Small Gaussian-mechanism instance for `analyze`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub k: usize,
    pub m: usize,
    pub m_hat: f64,
    pub k_min: usize,
    pub alpha: f64,
    pub beacon_rate: f64,
    pub samples: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self { k: 10, m: 16, m_hat: 30.0, k_min: 1, alpha: 0.05, beacon_rate: 0.5, samples: 20_000 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seeds: Vec<u64>,
    pub precision: Precision,
    pub attackers: Vec<AttackerKind>,
    pub population: PopulationConfig,
    pub mechanism: MechanismConfig,
    /// `training.kappa` and `training.seed` are overridden per cell.
    pub training: TrainConfig,
    pub grid: GridConfig,
    pub analysis: AnalysisConfig,
}

/// Desk-scale training schedule: 100 epochs of 20 batches with a faster
/// attacker than the library default.
pub fn desk_training() -> TrainConfig {
    TrainConfig { epochs: 100, batches_per_epoch: 20, attacker_lr: 1e-3, ..TrainConfig::default() }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "custom".into(),
            seeds: vec![0, 1, 2, 3, 4],
            precision: Precision::F32,
            attackers: vec![AttackerKind::Bayes, AttackerKind::FixedLrt, AttackerKind::AdaptiveLrt],
            population: PopulationConfig::default(),
            mechanism: MechanismConfig::default(),
            training: desk_training(),
            grid: GridConfig::default(),
            analysis: AnalysisConfig::default(),
        }
    }
}

pub const SCENARIOS: [&str; 7] = ["fig1a", "fig1b", "fig1c", "fig1d", "fig1e", "fig1f", "table5"];

/// Overlays `over` onto `base`, merging tables key by key.
fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn cfg_err(path: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::Config { path: path.into(), reason: reason.into() }
}

impl ExperimentConfig {
    /// Parses TOML over the defaults. Schema errors carry the offending
    /// key and position; range errors the dotted key path.
    pub fn from_toml(text: &str, source: &Path) -> Result<Self> {
        // Strict parse first: unknown keys and type errors with location.
        let over: toml::Value = toml::from_str(text).map_err(|e| cfg_err(source.display().to_string(), e.to_string()))?;
        toml::from_str::<ExperimentConfig>(text).map_err(|e| cfg_err(source.display().to_string(), e.to_string()))?;
        let mut base = toml::Value::try_from(ExperimentConfig::default()).expect("defaults serialize");
        merge(&mut base, over);
        let cfg: ExperimentConfig = base.try_into().map_err(|e: toml::de::Error| cfg_err(source.display().to_string(), e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_toml(&std::fs::read_to_string(path)?, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Replaces name, grid and attackers with a named preset.
    pub fn with_scenario(mut self, name: &str) -> Result<Self> {
        use AttackerKind as A;
        use DefenderKind as D;
        let all = vec![A::Bayes, A::FixedLrt, A::AdaptiveLrt];
        let (defenders, kappa, attackers) = match name {
            "fig1a" => (vec![D::Bayes], vec![KappaSpec::Scalar(0.0)], all),
            "fig1b" => (vec![D::Bayes], vec![KappaSpec::Scalar(1.0)], all),
            "fig1c" => (vec![D::Bayes], vec![KappaSpec::Scalar(50.0)], all),
            "table5" => (vec![D::Bayes], vec![KappaSpec::Scalar(0.0), KappaSpec::Scalar(1.0), KappaSpec::Scalar(50.0)], all),
            "fig1d" => (vec![D::Bayes, D::FixedLrt, D::AdaptiveLrt], vec![KappaSpec::Scalar(1.0)], vec![A::Bayes]),
            "fig1e" => (vec![D::Laplace], vec![KappaSpec::Scalar(1.0)], all),
            "fig1f" => (vec![D::Bayes, D::MatchedLaplace], vec![KappaSpec::Split { fraction: 0.1, high: 50.0, low: 0.0 }], vec![A::Bayes]),
            other => return Err(cfg_err("scenario", format!("unknown scenario `{other}`; expected one of {}", SCENARIOS.join(", ")))),
        };
        self.name = name.into();
        self.grid.defenders = defenders;
        self.grid.kappa = kappa;
        if name == "fig1e" {
            self.grid.epsilon = vec![600.0];
        }
        self.attackers = attackers;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(cfg_err("seeds", "need at least one seed"));
        }
        let p = &self.population;
        if p.path.is_none() && (p.k == 0 || p.m == 0) {
            return Err(cfg_err("population.k", "K and m must be positive"));
        }
        if !(p.beacon_rate > 0.0 && p.beacon_rate <= 1.0) {
            return Err(cfg_err("population.beacon_rate", format!("{} outside (0,1]", p.beacon_rate)));
        }
        if p.eval_beacons == 0 {
            return Err(cfg_err("population.eval_beacons", "must be positive"));
        }
        if p.reference_size == Some(0) {
            return Err(cfg_err("population.reference_size", "must be positive"));
        }
        if p.k_min == Some(0) {
            return Err(cfg_err("population.k_min", "must be positive"));
        }
        let mech = &self.mechanism;
        if let Some(s) = mech.sensitivity.filter(|s| !(*s > 0.0)) {
            return Err(cfg_err("mechanism.sensitivity", format!("{s} must be positive")));
        }
        if mech.utility_samples == 0 {
            return Err(cfg_err("mechanism.utility_samples", "must be positive"));
        }
        if !(mech.lrt.alpha > 0.0 && mech.lrt.alpha < 1.0) {
            return Err(cfg_err("mechanism.lrt.alpha", format!("{} outside (0,1)", mech.lrt.alpha)));
        }
        if mech.lrt.threshold.is_none() && mech.lrt.calibration_samples < 1000 {
            return Err(cfg_err("mechanism.lrt.calibration_samples", "need at least 1000 without an explicit threshold"));
        }
        self.training.validate().map_err(|e| cfg_err("training", e.to_string()))?;
        let g = &self.grid;
        if g.defenders.is_empty() {
            return Err(cfg_err("grid.defenders", "need at least one defender"));
        }
        if g.kappa.is_empty() {
            return Err(cfg_err("grid.kappa", "need at least one value"));
        }
        for (i, k) in g.kappa.iter().enumerate() {
            let bad = match k {
                KappaSpec::Scalar(v) => !(*v >= 0.0 && v.is_finite()),
                KappaSpec::Vector(v) => v.iter().any(|x| !(*x >= 0.0 && x.is_finite())) || (p.path.is_none() && v.len() != p.m),
                KappaSpec::Split { fraction, high, low } => !((0.0..=1.0).contains(fraction) && *high >= 0.0 && *low >= 0.0),
            };
            if bad {
                return Err(cfg_err(format!("grid.kappa[{i}]"), "values must be finite, nonnegative and match m"));
            }
        }
        if g.defenders.contains(&DefenderKind::Laplace) && g.epsilon.is_empty() {
            return Err(cfg_err("grid.epsilon", "a laplace defender needs at least one ε"));
        }
        if let Some(i) = g.epsilon.iter().position(|e| !(*e > 0.0)) {
            return Err(cfg_err(format!("grid.epsilon[{i}]"), "must be positive"));
        }
        let a = &self.analysis;
        if a.k == 0 || a.k > 16 || a.m == 0 || a.k_min == 0 || !(a.m_hat > 0.0) || a.samples == 0 {
            return Err(cfg_err("analysis", "need 1 ≤ k ≤ 16, positive m, m_hat, k_min and samples"));
        }
        if !(a.alpha > 0.0 && a.alpha < 1.0 && a.beacon_rate > 0.0 && a.beacon_rate <= 1.0) {
            return Err(cfg_err("analysis", "alpha and beacon_rate must lie in (0,1)"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml(&cfg.to_toml(), Path::new("mem")).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(ExperimentConfig::from_toml("", Path::new("mem")).unwrap(), cfg);
    }

    #[test]
    fn partial_tables_keep_desk_defaults() {
        let text = "seeds = [7]\n[training]\nepochs = 3\n[grid]\nkappa = [1.5, { fraction = 0.1, high = 50.0, low = 0.0 }]\n";
        let cfg = ExperimentConfig::from_toml(text, Path::new("mem")).unwrap();
        assert_eq!(cfg.seeds, vec![7]);
        assert_eq!(cfg.training.epochs, 3);
        assert_eq!(cfg.training.attacker_lr, 1e-3);
        assert_eq!(cfg.training.batches_per_epoch, 20);
        assert_eq!(cfg.grid.kappa[1], KappaSpec::Split { fraction: 0.1, high: 50.0, low: 0.0 });
    }

    #[test]
    fn errors_name_the_key() {
        let err = |t: &str| ExperimentConfig::from_toml(t, Path::new("c.toml")).unwrap_err().to_string();
        assert!(err("[population]\nkk = 3\n").contains("kk"));
        assert!(err("[grid]\ndefenders = [\"oracle\"]\n").contains("oracle"));
        assert!(err("[grid]\nepsilon = [600.0, -1.0]\n").contains("grid.epsilon[1]"));
        assert!(err("[population]\nbeacon_rate = 1.5\n").contains("population.beacon_rate"));
        assert!(err("[grid]\nkappa = [[1.0, 2.0]]\n").contains("grid.kappa[0]"));
        assert!(err("seeds = []\n").contains("seeds"));
    }

    #[test]
    fn scenarios() {
        for s in SCENARIOS {
            ExperimentConfig::default().with_scenario(s).unwrap().validate().unwrap();
        }
        let f = ExperimentConfig::default().with_scenario("fig1f").unwrap();
        assert_eq!(f.grid.defenders, vec![DefenderKind::Bayes, DefenderKind::MatchedLaplace]);
        assert!(ExperimentConfig::default().with_scenario("fig9").is_err());
    }

    #[test]
    fn split_kappa_is_random_per_seed() {
        let spec = KappaSpec::Split { fraction: 0.1, high: 50.0, low: 0.0 };
        let w = |seed| match spec.resolve(500, seed).unwrap() {
            Kappa::Vector(v) => v,
            Kappa::Scalar(_) => unreachable!(),
        };
        let (a, b) = (w(0), w(1));
        assert_eq!(a.iter().filter(|&&v| v == 50.0).count(), 50);
        assert_eq!(a.iter().filter(|&&v| v == 0.0).count(), 450);
        assert_ne!(a, b);
        assert_eq!(a, w(0));
    }
}
