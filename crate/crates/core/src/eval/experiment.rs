use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{AttackerKind, DefenderKind, ExperimentConfig, KappaSpec, Precision};
use super::matched::matched_utility_dp;
use super::roc::roc_auc;
use crate::error::{Error, Result};
use crate::learn::{
    history_csv, lrt_confidences, train_attacker, train_bne, train_lrt_defense, EpochRecord, GeneratorMechanism, HeldOut, Kappa, LrtTarget, Mlp, NoiseSource,
    TrainConfig,
};
use crate::lrt::{calibrate_threshold, default_adaptive_n};
use crate::mechanisms::{laplace_mechanism, ReleaseMechanism};
use crate::population::{generate_population, load_population, sensitivity, write_atomic, MembershipPrior, Population};
use crate::scalar::Scalar;
use crate::stats::{child_rng, mean_std};

/// Per-seed values with mean and sample standard deviation; the std is
/// absent with a single seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedStats {
    pub per_seed: Vec<f64>,
    pub mean: f64,
    pub std: Option<f64>,
}

impl SeedStats {
    pub fn new(per_seed: Vec<f64>) -> Self {
        let (mean, std) = mean_std(&per_seed);
        let std = (per_seed.len() >= 2).then_some(std);
        Self { per_seed, mean, std }
    }
}

impl std::fmt::Display for SeedStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.std {
            Some(s) => write!(f, "{:.4} ± {:.4}", self.mean, s),
            None => write!(f, "{:.4}", self.mean),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackerReport {
    pub attacker: AttackerKind,
    pub auc: SeedStats,
    /// AUC of per-individual decisions pooled over all seeds.
    pub pooled_auc: f64,
    pub roc_file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub id: String,
    pub defender: DefenderKind,
    pub kappa: KappaSpec,
    /// Laplace ε, given or matched.
    pub epsilon: Option<SeedStats>,
    /// E[Σ κ_j |δ_j|] under q.
    pub utility_loss: SeedStats,
    /// Last-epoch training losses.
    pub defender_loss: Option<SeedStats>,
    pub attacker_loss: Option<SeedStats>,
    pub history_file: Option<String>,
    pub attackers: Vec<AttackerReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub config: ExperimentConfig,
    /// SHA-256 of the canonical TOML form of `config`.
    pub config_hash: String,
    pub cells: Vec<CellReport>,
    pub elapsed_secs: f64,
}

impl ExperimentReport {
    pub fn cell(&self, id: &str) -> Option<&CellReport> {
        self.cells.iter().find(|c| c.id == id)
    }

    pub fn summary(&self) -> String {
        let mut s = format!("{} ({} seeds, config {})\n", self.name, self.config.seeds.len(), &self.config_hash[..12]);
        for c in &self.cells {
            let _ = write!(s, "{:<36} utility loss {}", c.id, c.utility_loss);
            if let Some(e) = &c.epsilon {
                let _ = write!(s, ", ε {e}");
            }
            s.push('\n');
            for a in &c.attackers {
                let _ = writeln!(s, "    {:<14} AUC {}  (pooled {:.4})", a.attacker.label(), a.auc, a.pooled_auc);
            }
        }
        s
    }
}

pub fn config_hash(cfg: &ExperimentConfig) -> String {
    Sha256::digest(cfg.to_toml().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// Everything a seed shares across cells.
pub struct SeedContext<T: Scalar> {
    pub seed: u64,
    pub pop: Population<T>,
    pub reference: Population<T>,
    pub q: MembershipPrior,
    pub sensitivity: f64,
    pub adaptive_n: usize,
    fixed_tau: Option<f64>,
}

impl<T: Scalar> SeedContext<T> {
    pub fn new(cfg: &ExperimentConfig, seed: u64) -> Result<Self> {
        let p = &cfg.population;
        let pop: Population<T> = match &p.path {
            Some(path) => load_population(path)?,
            None => generate_population(p.k, p.m, &p.aafs, seed)?,
        };
        Self::with_population(cfg, seed, pop)
    }

    pub fn with_population(cfg: &ExperimentConfig, seed: u64, pop: Population<T>) -> Result<Self> {
        let p = &cfg.population;
        let (k, m) = (pop.num_individuals(), pop.num_snvs());
        let pool = p.reference_size.unwrap_or(k);
        let reference = pop.sample_reference(pool, &mut child_rng(seed, 10))?;
        let sens = match cfg.mechanism.sensitivity {
            Some(s) => s,
            None => sensitivity(m, p.k_min_for(k))?,
        };
        let adaptive_n = cfg.mechanism.lrt.adaptive_n.unwrap_or_else(|| default_adaptive_n(pool));
        Ok(Self { seed, pop, reference, q: MembershipPrior::bernoulli(k, p.beacon_rate), sensitivity: sens, adaptive_n, fixed_tau: None })
    }

    /// The fixed LRT threshold: configured, or the α-quantile of
    /// non-member LRS values on raw statistics.
    pub fn fixed_tau(&mut self, cfg: &ExperimentConfig) -> Result<f64> {
        if let Some(t) = cfg.mechanism.lrt.threshold.or(self.fixed_tau) {
            return Ok(t);
        }
        let lrt = &cfg.mechanism.lrt;
        let c = calibrate_threshold(&self.pop, &ReleaseMechanism::zero_noise(), &self.q, lrt.alpha, lrt.calibration_samples, &mut child_rng(self.seed, 14))?;
        self.fixed_tau = Some(c.tau);
        Ok(c.tau)
    }

    pub fn train_config(&self, cfg: &ExperimentConfig, kappa: &Kappa) -> TrainConfig {
        TrainConfig { kappa: kappa.clone(), seed: self.seed, ..cfg.training.clone() }
    }
}

pub enum Defense<T: Scalar> {
    Generator { generator: GeneratorMechanism<T>, attacker: Option<Mlp<T>> },
    Mechanism(ReleaseMechanism<T>),
}

impl<T: Scalar> Defense<T> {
    pub fn source(&self) -> NoiseSource<'_, T> {
        match self {
            Defense::Generator { generator, .. } => NoiseSource::Generator(generator),
            Defense::Mechanism(m) => NoiseSource::Mechanism(m),
        }
    }

    pub fn mechanism(&self) -> ReleaseMechanism<T> {
        match self {
            Defense::Generator { generator, .. } => ReleaseMechanism::generator(generator.clone()),
            Defense::Mechanism(m) => m.clone(),
        }
    }
}

pub struct TrainedDefense<T: Scalar> {
    pub defense: Defense<T>,
    pub history: Vec<EpochRecord>,
    pub epsilon: Option<f64>,
}

/// Builds one defense. `MatchedLaplace` needs the Bayes generator trained
/// at the same κ.
pub fn build_defense<T: Scalar>(
    cfg: &ExperimentConfig,
    ctx: &mut SeedContext<T>,
    defender: DefenderKind,
    kappa: &Kappa,
    epsilon: Option<f64>,
    matched_to: Option<&GeneratorMechanism<T>>,
) -> Result<TrainedDefense<T>> {
    let tcfg = ctx.train_config(cfg, kappa);
    let mech = |m: ReleaseMechanism<T>, eps| TrainedDefense { defense: Defense::Mechanism(m), history: vec![], epsilon: eps };
    Ok(match defender {
        DefenderKind::Bayes => {
            let g = train_bne(&ctx.pop, &ctx.q, &ctx.q, &tcfg)?;
            TrainedDefense { defense: Defense::Generator { generator: g.generator, attacker: Some(g.attacker) }, history: g.history, epsilon: None }
        }
        DefenderKind::FixedLrt | DefenderKind::AdaptiveLrt => {
            let target = if defender == DefenderKind::FixedLrt {
                LrtTarget::Fixed { tau: ctx.fixed_tau(cfg)? }
            } else {
                LrtTarget::Adaptive { reference: &ctx.reference, n: ctx.adaptive_n }
            };
            let (generator, history) = train_lrt_defense(&ctx.pop, &ctx.q, &tcfg, target)?;
            TrainedDefense { defense: Defense::Generator { generator, attacker: None }, history, epsilon: None }
        }
        DefenderKind::Laplace => {
            let eps = epsilon.ok_or_else(|| Error::Config { path: "grid.epsilon".into(), reason: "laplace defender without ε".into() })?;
            mech(laplace_mechanism(eps, ctx.sensitivity)?, Some(eps))
        }
        DefenderKind::MatchedLaplace => {
            let g = matched_to.ok_or_else(|| Error::Unmatched("no Bayes defense to match".into()))?;
            let w = kappa.weights(ctx.pop.num_snvs())?;
            let m =
                matched_utility_dp(&ReleaseMechanism::generator(g.clone()), &ctx.pop, &ctx.q, &w, ctx.sensitivity, cfg.mechanism.utility_samples, ctx.seed)?;
            mech(laplace_mechanism(m.epsilon, ctx.sensitivity)?, Some(m.epsilon))
        }
        DefenderKind::ZeroNoise => mech(ReleaseMechanism::zero_noise(), None),
    })
}

pub struct AttackOutcome {
    pub attacker: AttackerKind,
    pub confidences: Vec<f64>,
    pub labels: Vec<bool>,
    pub auc: f64,
    /// Training history of an attacker trained from scratch.
    pub history: Vec<EpochRecord>,
}

/// Scores every attacker on the same held-out beacons.
pub fn evaluate_attackers<T: Scalar>(
    cfg: &ExperimentConfig,
    ctx: &mut SeedContext<T>,
    defense: &Defense<T>,
    kappa: &Kappa,
    attackers: &[AttackerKind],
) -> Result<Vec<AttackOutcome>> {
    let held = HeldOut::sample(defense.source(), &ctx.pop, &ctx.q, cfg.population.eval_beacons, &mut child_rng(ctx.seed, 12))?;
    let labels = held.labels();
    let mut out = Vec::with_capacity(attackers.len());
    for &a in attackers {
        let (confidences, history): (Vec<f64>, Vec<EpochRecord>) = match a {
            AttackerKind::Bayes => match defense {
                Defense::Generator { attacker: Some(net), .. } => (held.network_confidences(net)?, vec![]),
                _ => {
                    let (net, hist) = train_attacker(&ctx.pop, &ctx.q, &ctx.q, defense.source(), &ctx.train_config(cfg, kappa))?;
                    (held.network_confidences(&net)?, hist)
                }
            },
            AttackerKind::FixedLrt => {
                let tau = ctx.fixed_tau(cfg)?;
                (lrt_confidences(&ctx.pop, &held, LrtTarget::Fixed { tau })?, vec![])
            }
            AttackerKind::AdaptiveLrt => (lrt_confidences(&ctx.pop, &held, LrtTarget::Adaptive { reference: &ctx.reference, n: ctx.adaptive_n })?, vec![]),
        };
        let auc = roc_auc(&confidences, &labels)?.auc;
        out.push(AttackOutcome { attacker: a, confidences, labels: labels.clone(), auc, history });
    }
    Ok(out)
}

struct CellSpec {
    id: String,
    defender: DefenderKind,
    kappa_index: usize,
    epsilon: Option<f64>,
}

fn cell_specs(cfg: &ExperimentConfig) -> Vec<CellSpec> {
    let mut cells = Vec::new();
    for (ki, kappa) in cfg.grid.kappa.iter().enumerate() {
        for &d in &cfg.grid.defenders {
            let base = format!("{}-{}", d.label(), kappa.label());
            if d == DefenderKind::Laplace {
                for &e in &cfg.grid.epsilon {
                    cells.push(CellSpec { id: format!("{base}-eps{e}"), defender: d, kappa_index: ki, epsilon: Some(e) });
                }
            } else {
                cells.push(CellSpec { id: base, defender: d, kappa_index: ki, epsilon: None });
            }
        }
    }
    cells
}

#[derive(Default)]
struct CellAcc {
    utility: Vec<f64>,
    epsilon: Vec<f64>,
    defender_loss: Vec<f64>,
    attacker_loss: Vec<f64>,
    history: String,
    attacker_history: String,
    auc: HashMap<AttackerKind, Vec<f64>>,
    pooled: HashMap<AttackerKind, (Vec<f64>, Vec<bool>)>,
}

fn push_history(buf: &mut String, seed: u64, history: &[EpochRecord]) {
    if buf.is_empty() {
        buf.push_str("seed,");
        buf.push_str(history_csv(&[]).trim_end());
        buf.push('\n');
    }
    for line in history_csv(history).lines().skip(1) {
        let _ = writeln!(buf, "{seed},{line}");
    }
}

/// Runs every cell for every seed; writes results.json, roc_<cell>.csv
/// and history_<cell>.csv into `out_dir` when given.
pub fn run_experiment<T: Scalar>(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<ExperimentReport> {
    cfg.validate()?;
    let start = Instant::now();
    let specs = cell_specs(cfg);
    let mut accs: Vec<CellAcc> = specs.iter().map(|_| CellAcc::default()).collect();
    for &seed in &cfg.seeds {
        let mut ctx = SeedContext::<T>::new(cfg, seed)?;
        let m = ctx.pop.num_snvs();
        let kappas: Vec<Kappa> = cfg.grid.kappa.iter().map(|k| k.resolve(m, seed)).collect::<Result<_>>()?;
        // Bayes defenses by κ index, shared with matched-Laplace cells.
        let mut bayes: HashMap<usize, TrainedDefense<T>> = HashMap::new();
        for (spec, acc) in specs.iter().zip(accs.iter_mut()) {
            let kappa = &kappas[spec.kappa_index];
            let needs_bayes = matches!(spec.defender, DefenderKind::Bayes | DefenderKind::MatchedLaplace);
            if needs_bayes && !bayes.contains_key(&spec.kappa_index) {
                bayes.insert(spec.kappa_index, build_defense(cfg, &mut ctx, DefenderKind::Bayes, kappa, None, None)?);
            }
            let owned;
            let trained = match spec.defender {
                DefenderKind::Bayes => &bayes[&spec.kappa_index],
                DefenderKind::MatchedLaplace => {
                    let Defense::Generator { generator, .. } = &bayes[&spec.kappa_index].defense else { unreachable!("bayes defenses are generators") };
                    owned = build_defense(cfg, &mut ctx, spec.defender, kappa, None, Some(generator))?;
                    &owned
                }
                d => {
                    owned = build_defense(cfg, &mut ctx, d, kappa, spec.epsilon, None)?;
                    &owned
                }
            };
            let w = kappa.weights(m)?;
            let util = trained.defense.mechanism().expected_utility_loss(&ctx.pop, &ctx.q, &w, cfg.mechanism.utility_samples, &mut child_rng(seed, 13))?;
            acc.utility.push(util.mean);
            if let Some(e) = trained.epsilon {
                acc.epsilon.push(e);
            }
            if let Some(last) = trained.history.last() {
                if let Some(d) = last.defender_loss {
                    acc.defender_loss.push(d);
                }
                if let Some(a) = last.attacker_loss {
                    acc.attacker_loss.push(a);
                }
                push_history(&mut acc.history, seed, &trained.history);
            }
            for o in evaluate_attackers(cfg, &mut ctx, &trained.defense, kappa, &cfg.attackers)? {
                acc.auc.entry(o.attacker).or_default().push(o.auc);
                let pooled = acc.pooled.entry(o.attacker).or_default();
                pooled.0.extend(o.confidences);
                pooled.1.extend(o.labels);
                if !o.history.is_empty() {
                    push_history(&mut acc.attacker_history, seed, &o.history);
                }
            }
        }
    }

    let mut files: Vec<(String, String)> = Vec::new();
    let mut cells = Vec::with_capacity(specs.len());
    for (spec, acc) in specs.into_iter().zip(accs) {
        let mut attackers = Vec::new();
        for &a in &cfg.attackers {
            let (conf, labels) = &acc.pooled[&a];
            let roc = roc_auc(conf, labels)?;
            let roc_file = format!("roc_{}-{}.csv", spec.id, a.label());
            files.push((roc_file.clone(), roc.to_csv()));
            attackers.push(AttackerReport { attacker: a, auc: SeedStats::new(acc.auc[&a].clone()), pooled_auc: roc.auc, roc_file });
        }
        let history_file = (!acc.history.is_empty()).then(|| format!("history_{}.csv", spec.id));
        if let Some(f) = &history_file {
            files.push((f.clone(), acc.history));
        }
        if !acc.attacker_history.is_empty() {
            files.push((format!("history_{}-attacker.csv", spec.id), acc.attacker_history));
        }
        let opt = |v: Vec<f64>| (!v.is_empty()).then(|| SeedStats::new(v));
        cells.push(CellReport {
            id: spec.id,
            defender: spec.defender,
            kappa: cfg.grid.kappa[spec.kappa_index].clone(),
            epsilon: opt(acc.epsilon),
            utility_loss: SeedStats::new(acc.utility),
            defender_loss: opt(acc.defender_loss),
            attacker_loss: opt(acc.attacker_loss),
            history_file,
            attackers,
        });
    }
    let report =
        ExperimentReport { name: cfg.name.clone(), config: cfg.clone(), config_hash: config_hash(cfg), cells, elapsed_secs: start.elapsed().as_secs_f64() };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        for (name, body) in &files {
            write_atomic(&dir.join(name), body.as_bytes())?;
        }
        write_atomic(&dir.join("results.json"), serde_json::to_string_pretty(&report)?.as_bytes())?;
    }
    Ok(report)
}

/// [`run_experiment`] at the configured precision.
pub fn run_configured(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<ExperimentReport> {
    match cfg.precision {
        Precision::F32 => run_experiment::<f32>(cfg, out_dir),
        Precision::F64 => run_experiment::<f64>(cfg, out_dir),
    }
}
