use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use beacon_game::analysis::{composed_gdp_mu, delta_criterion, lemma1_f_composed, mu_0_given_1, theorem2_condition, tradeoff_csv, GaussianPair};
use beacon_game::bayes::{verify_theorem1_ordering, OrderingOptions};
use beacon_game::eval::{build_defense, evaluate_attackers, run_configured, DefenderKind, Defense, ExperimentConfig, KappaSpec, Precision, SeedContext};
use beacon_game::learn::{history_csv, load_generator, load_mlp, save_generator, save_mlp};
use beacon_game::lrt::default_adaptive_n;
use beacon_game::mechanisms::{gaussian_mechanism_theorem2, laplace_mechanism};
use beacon_game::population::write_atomic;
use beacon_game::stats::child_rng;
use beacon_game::{generate_population, MeanMap, MembershipPrior, Population, ReleaseMechanism, Scalar};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

#[derive(Parser)]
#[command(name = "beacon-game", version, about = "Membership-inference games on genomic beacons")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic population file.
    Generate(Common),
    /// Train one defense and save its checkpoints.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "bayes")]
        defender: Defender,
        /// Index into grid.kappa.
        #[arg(long, default_value_t = 0)]
        kappa_index: usize,
    },
    /// Score the configured attackers against a saved or closed-form defense.
    Attack {
        #[command(flatten)]
        common: Common,
        /// Generator checkpoint written by `train`.
        #[arg(long, conflicts_with_all = ["laplace", "zero_noise"])]
        generator: Option<PathBuf>,
        /// Co-trained attacker checkpoint; without it a fresh attacker is trained.
        #[arg(long, requires = "generator")]
        attacker_net: Option<PathBuf>,
        /// Laplace defense at this ε.
        #[arg(long)]
        laplace: Option<f64>,
        #[arg(long)]
        zero_noise: bool,
        #[arg(long, default_value_t = 0)]
        kappa_index: usize,
    },
    /// Trade-off and ordering diagnostics for the [analysis] instance.
    Analyze(Common),
    /// Run the whole grid and write results.json, roc_*.csv and history_*.csv.
    Report(Common),
}

#[derive(Args)]
struct Common {
    /// TOML config; defaults apply to every key it leaves out.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Built-in scenario applied on top of the config.
    #[arg(long)]
    scenario: Option<String>,
    /// Comma-separated seeds overriding the config.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Population file overriding population.path.
    #[arg(long)]
    population: Option<PathBuf>,
    #[arg(long, short, default_value = "out")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Defender {
    Bayes,
    FixedLrt,
    AdaptiveLrt,
}

impl From<Defender> for DefenderKind {
    fn from(d: Defender) -> Self {
        match d {
            Defender::Bayes => DefenderKind::Bayes,
            Defender::FixedLrt => DefenderKind::FixedLrt,
            Defender::AdaptiveLrt => DefenderKind::AdaptiveLrt,
        }
    }
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = &self.scenario {
            cfg = cfg.with_scenario(s)?;
        }
        if let Some(seeds) = &self.seeds {
            cfg.seeds = seeds.clone();
        }
        if let Some(p) = &self.population {
            cfg.population.path = Some(p.clone());
        }
        cfg.validate()?;
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        Ok(cfg)
    }
}

fn write(dir: &Path, name: &str, body: &str) -> Result<()> {
    write_atomic(&dir.join(name), body.as_bytes())?;
    println!("wrote {}", dir.join(name).display());
    Ok(())
}

fn kappa_at(cfg: &ExperimentConfig, i: usize) -> Result<&KappaSpec> {
    cfg.grid.kappa.get(i).with_context(|| format!("kappa index {i} out of range ({} entries)", cfg.grid.kappa.len()))
}

fn generate(c: &Common) -> Result<()> {
    let cfg = c.load()?;
    let p = &cfg.population;
    let pop: Population = generate_population(p.k, p.m, &p.aafs, cfg.seeds[0])?;
    pop.save(c.out.join("population.txt"))?;
    println!("wrote {} ({} individuals, {} SNVs)", c.out.join("population.txt").display(), p.k, p.m);
    Ok(())
}

fn train<T: Scalar>(c: &Common, cfg: &ExperimentConfig, defender: DefenderKind, ki: usize) -> Result<()> {
    let spec = kappa_at(cfg, ki)?;
    let mut ctx = SeedContext::<T>::new(cfg, cfg.seeds[0])?;
    let kappa = spec.resolve(ctx.pop.num_snvs(), ctx.seed)?;
    let trained = build_defense(cfg, &mut ctx, defender, &kappa, None, None)?;
    let cell = format!("{}-{}", defender.label(), spec.label());
    let Defense::Generator { generator, attacker } = &trained.defense else { bail!("{cell} is not a trained defense") };
    save_generator(generator, c.out.join("generator.ckpt"))?;
    println!("wrote {}", c.out.join("generator.ckpt").display());
    if let Some(a) = attacker {
        save_mlp(a, c.out.join("attacker.ckpt"))?;
        println!("wrote {}", c.out.join("attacker.ckpt").display());
    }
    write(&c.out, &format!("history_{cell}.csv"), &history_csv(&trained.history))?;
    let last = trained.history.last();
    let summary = json!({
        "cell": cell,
        "seed": ctx.seed,
        "epochs": trained.history.len(),
        "defender_loss": last.and_then(|h| h.defender_loss),
        "attacker_loss": last.and_then(|h| h.attacker_loss),
    });
    write(&c.out, "train.json", &serde_json::to_string_pretty(&summary)?)
}

fn attack<T: Scalar>(
    c: &Common,
    cfg: &ExperimentConfig,
    generator: Option<&Path>,
    attacker_net: Option<&Path>,
    laplace: Option<f64>,
    zero_noise: bool,
    ki: usize,
) -> Result<()> {
    let spec = kappa_at(cfg, ki)?;
    let mut ctx = SeedContext::<T>::new(cfg, cfg.seeds[0])?;
    let kappa = spec.resolve(ctx.pop.num_snvs(), ctx.seed)?;
    let (defense, cell) = match (generator, laplace, zero_noise) {
        (Some(g), None, false) => {
            let attacker = attacker_net.map(load_mlp::<T>).transpose()?;
            (Defense::Generator { generator: load_generator::<T>(g)?, attacker }, "generator".to_string())
        }
        (None, Some(eps), false) => (Defense::Mechanism(laplace_mechanism(eps, ctx.sensitivity)?), format!("laplace-eps{eps}")),
        (None, None, true) => (Defense::Mechanism(ReleaseMechanism::zero_noise()), "zero-noise".to_string()),
        _ => bail!("give exactly one of --generator, --laplace, --zero-noise"),
    };
    let mut aucs = serde_json::Map::new();
    for o in evaluate_attackers(cfg, &mut ctx, &defense, &kappa, &cfg.attackers)? {
        let roc = beacon_game::eval::roc_auc(&o.confidences, &o.labels)?;
        write(&c.out, &format!("roc_{cell}-{}.csv", o.attacker.label()), &roc.to_csv())?;
        if !o.history.is_empty() {
            write(&c.out, &format!("history_{cell}-{}.csv", o.attacker.label()), &history_csv(&o.history))?;
        }
        println!("{:<14} AUC {:.4}", o.attacker.label(), o.auc);
        aucs.insert(o.attacker.label().to_string(), json!(o.auc));
    }
    let summary = json!({ "cell": cell, "seed": ctx.seed, "auc": aucs });
    write(&c.out, "attack.json", &serde_json::to_string_pretty(&summary)?)
}

fn analyze(c: &Common) -> Result<()> {
    let cfg = c.load()?;
    let a = &cfg.analysis;
    let m_hat = vec![a.m_hat; a.m];
    let mech = gaussian_mechanism_theorem2::<f64>(&m_hat, a.m, a.k_min, MeanMap::Zero)?;
    let q = MembershipPrior::bernoulli(a.k, a.beacon_rate);
    let gdp_mu = composed_gdp_mu(&m_hat)?;
    write(&c.out, "tradeoff.csv", &tradeoff_csv(&GaussianPair::new(gdp_mu)?.curve(200)))?;
    let pool = cfg.population.reference_size.unwrap_or(6 * a.k);
    let mut seeds = Vec::new();
    for &seed in &cfg.seeds {
        let pop: Population = generate_population(a.k, a.m, &cfg.population.aafs, seed)?;
        let mut rng = child_rng(seed, 30);
        let reference = pop.sample_reference(pool, &mut rng)?;
        let opts = OrderingOptions { alpha: a.alpha, n_samples: a.samples, calibration_samples: a.samples, adaptive_n: default_adaptive_n(pool), slack: 3.0 };
        let ordering = verify_theorem1_ordering(&mech, &pop, &reference, &q, &q, &opts, &mut rng)?;
        let delta = delta_criterion(&mech, &pop, &q, &q, a.alpha, a.samples / a.k.max(1), &mut rng)?;
        let miss = mu_0_given_1(&mech, &pop, &q, &q, a.samples / a.k.max(1), &mut rng)?;
        let condition = theorem2_condition(a.alpha, miss.max.mean.clamp(1e-12, 1.0 - 1e-12), a.m, &m_hat)?;
        println!(
            "seed {seed}: L^σ {} ≥ L_opt {} ≥ L_adapt {} ≥ L_naive {} holds={:?}; Δ {}; condition {condition}",
            ordering.mirror, ordering.optimal.loss, ordering.adaptive.loss, ordering.naive.loss, ordering.holds, delta.delta
        );
        seeds.push(json!({
            "seed": seed,
            "ordering": ordering,
            "delta": delta,
            "mu_0_given_1": miss.max,
            "theorem2_condition": condition,
        }));
    }
    let report = json!({
        "analysis": a,
        "gdp_mu": gdp_mu,
        "lemma1_f_composed": lemma1_f_composed(&m_hat)?,
        "seeds": seeds,
    });
    write(&c.out, "analysis.json", &serde_json::to_string_pretty(&report)?)
}

fn report(c: &Common) -> Result<()> {
    let cfg = c.load()?;
    let r = run_configured(&cfg, Some(&c.out))?;
    print!("{}", r.summary());
    println!("wrote {}", c.out.join("results.json").display());
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Generate(c) => generate(&c),
        Command::Train { common, defender, kappa_index } => {
            let cfg = common.load()?;
            match cfg.precision {
                Precision::F32 => train::<f32>(&common, &cfg, defender.into(), kappa_index),
                Precision::F64 => train::<f64>(&common, &cfg, defender.into(), kappa_index),
            }
        }
        Command::Attack { common, generator, attacker_net, laplace, zero_noise, kappa_index } => {
            let cfg = common.load()?;
            let (g, a) = (generator.as_deref(), attacker_net.as_deref());
            match cfg.precision {
                Precision::F32 => attack::<f32>(&common, &cfg, g, a, laplace, zero_noise, kappa_index),
                Precision::F64 => attack::<f64>(&common, &cfg, g, a, laplace, zero_noise, kappa_index),
            }
        }
        Command::Analyze(c) => analyze(&c),
        Command::Report(c) => report(&c),
    }
}
