//! Training games between a noise generator and membership attackers.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::generator::{default_generator_layers, default_q_aux, GeneratorMechanism};
use super::mlp::{Activation, Gradients, LayerSpec, Mlp, Mode};
use super::optim::{Adam, AdamConfig};
use crate::attack::AttackDecision;
use crate::error::{invalid, Error, Result};
use crate::eval::roc::roc_auc;
use crate::lrt::{adaptive_threshold, clamp_bound};
use crate::mechanisms::ReleaseMechanism;
use crate::population::{MembershipPrior, MembershipVector, Population};
use crate::scalar::Scalar;
use crate::stats::{child_rng, Rng as StreamRng};

/// Utility weights: one κ for every SNV, or one per SNV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Kappa {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl Kappa {
    pub fn weights(&self, m: usize) -> Result<Vec<f64>> {
        let w = match self {
            Kappa::Scalar(k) => vec![*k; m],
            Kappa::Vector(v) if v.len() == m => v.clone(),
            Kappa::Vector(v) => return Err(Error::DimensionMismatch { expected: m, actual: v.len(), context: "kappa vector" }),
        };
        if let Some(k) = w.iter().find(|&&k| !(k >= 0.0 && k.is_finite())) {
            return Err(invalid("kappa", format!("{k} must be finite and nonnegative")));
        }
        Ok(w)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub defender_lr: f64,
    pub attacker_lr: f64,
    pub weight_decay: f64,
    /// Per-epoch learning-rate multiplier.
    pub lr_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub kappa: Kappa,
    pub gamma: f64,
    pub seed: u64,
    /// Weight the privacy term by κ instead of the utility term. Needs a
    /// scalar κ.
    pub kappa_on_privacy: bool,
    pub batch_norm: bool,
    pub q_aux: Option<usize>,
    pub generator_layers: Option<Vec<LayerSpec>>,
    pub attacker_layers: Option<Vec<LayerSpec>>,
    /// Held-out beacons per AUC evaluation; zero disables it.
    pub eval_beacons: usize,
    pub eval_every: usize,
    /// Temperature of the sigmoid standing in for 1{ℓ ≤ τ}.
    pub proxy_temperature: f64,
    /// Initial temperature of the soft bottom-N weights.
    pub soft_min_temperature: f64,
    pub soft_min_anneal: f64,
    pub soft_min_floor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            defender_lr: 1e-3,
            attacker_lr: 1e-4,
            weight_decay: 1e-5,
            lr_decay: 0.988,
            batch_size: 64,
            epochs: 300,
            batches_per_epoch: 10,
            kappa: Kappa::Scalar(1.0),
            gamma: 0.5,
            seed: 0,
            kappa_on_privacy: false,
            batch_norm: true,
            q_aux: None,
            generator_layers: None,
            attacker_layers: None,
            eval_beacons: 20,
            eval_every: 10,
            proxy_temperature: 1.0,
            soft_min_temperature: 0.1,
            soft_min_anneal: 0.99,
            soft_min_floor: 0.01,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |name: &'static str, v: f64| if v > 0.0 && v.is_finite() { Ok(()) } else { Err(invalid(name, format!("{v} must be positive"))) };
        pos("defender_lr", self.defender_lr)?;
        pos("attacker_lr", self.attacker_lr)?;
        pos("proxy_temperature", self.proxy_temperature)?;
        pos("soft_min_temperature", self.soft_min_temperature)?;
        if !(self.weight_decay >= 0.0) {
            return Err(invalid("weight_decay", "must be nonnegative"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(invalid("lr_decay", format!("{} outside (0,1]", self.lr_decay)));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.batches_per_epoch == 0 {
            return Err(invalid("batch_size, epochs, batches_per_epoch", "must be positive"));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(invalid("gamma", format!("{} outside (0,1)", self.gamma)));
        }
        if self.kappa_on_privacy && matches!(self.kappa, Kappa::Vector(_)) {
            return Err(invalid("kappa_on_privacy", "needs a scalar kappa"));
        }
        Ok(())
    }

    fn eval_due(&self, epoch: usize) -> bool {
        self.eval_beacons > 0 && ((epoch + 1).is_multiple_of(self.eval_every.max(1)) || epoch + 1 == self.epochs)
    }

    fn q_aux_for(&self, k: usize) -> usize {
        self.q_aux.unwrap_or_else(|| default_q_aux(k))
    }

    fn generator_specs(&self, k: usize, m: usize) -> Vec<LayerSpec> {
        self.generator_layers.clone().unwrap_or_else(|| default_generator_layers(k, m, self.batch_norm))
    }

    fn attacker_specs(&self, k: usize, m: usize) -> Vec<LayerSpec> {
        self.attacker_layers.clone().unwrap_or_else(|| default_attacker_layers(k, m, self.batch_norm))
    }
}

/// m → 0.68m → 0.4m → K, sigmoid confidences.
pub fn default_attacker_layers(k: usize, m: usize, batch_norm: bool) -> Vec<LayerSpec> {
    let w = |f: f64| ((m as f64 * f).round() as usize).max(4);
    vec![
        LayerSpec::new(w(0.68), Activation::Relu, batch_norm),
        LayerSpec::new(w(0.4), Activation::LeakyRelu, batch_norm),
        LayerSpec::new(k, Activation::Sigmoid, false),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub defender_loss: Option<f64>,
    pub attacker_loss: Option<f64>,
    pub auc: Option<f64>,
    pub mean_abs_noise: f64,
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,defender_loss,attacker_loss,auc,mean_abs_noise\n");
    for h in history {
        let opt = |v: Option<f64>| v.map_or(String::new(), |a| a.to_string());
        s.push_str(&format!("{},{},{},{},{}\n", h.epoch, opt(h.defender_loss), opt(h.attacker_loss), opt(h.auc), h.mean_abs_noise));
    }
    s
}

#[derive(Debug, Clone)]
pub struct TrainedGame<T: Scalar> {
    pub generator: GeneratorMechanism<T>,
    pub attacker: Mlp<T>,
    pub history: Vec<EpochRecord>,
}

/// Membership rows drawn from `prior`.
pub fn sample_membership_batch<T: Scalar, R: Rng + ?Sized>(prior: &MembershipPrior, rows: usize, rng: &mut R) -> Array2<T> {
    let k = prior.num_individuals();
    let mut b = Array2::zeros((rows, k));
    for mut row in b.rows_mut() {
        row.assign(&prior.sample(rng).to_array::<T>());
    }
    b
}

fn row_vector<T: Scalar>(row: ndarray::ArrayView1<'_, T>) -> MembershipVector {
    MembershipVector::new(row.iter().map(|&v| v > T::lit(0.5)).collect())
}

/// r = Clip[0,1](x + δ) and the mask of unclipped coordinates.
fn release_batch<T: Scalar>(x: &Array2<T>, delta: &Array2<T>) -> (Array2<T>, Array2<T>) {
    let mut r = x + delta;
    let mut mask = Array2::ones(r.dim());
    Zip::from(&mut r).and(&mut mask).for_each(|v, mk| {
        if *v < T::zero() || *v > T::one() {
            *mk = T::zero();
            *v = v.max(T::zero()).min(T::one());
        }
    });
    (r, mask)
}

fn utility_term<T: Scalar>(delta: &Array2<T>, kappa: &[f64]) -> (f64, Array2<T>) {
    let rows = delta.nrows() as f64;
    let mut total = 0.0;
    let mut grad = Array2::zeros(delta.dim());
    for (drow, mut grow) in delta.rows().into_iter().zip(grad.rows_mut()) {
        for ((&d, g), &k) in drow.iter().zip(grow.iter_mut()).zip(kappa) {
            total += k * d.as_f64().abs();
            *g = T::lit(k * d.as_f64().signum() / rows);
        }
    }
    (total / rows, grad)
}

fn mean_abs<T: Scalar>(a: &Array2<T>) -> f64 {
    a.iter().map(|v| v.as_f64().abs()).sum::<f64>() / a.len().max(1) as f64
}

fn check_finite(v: f64, epoch: usize, batch: usize, what: &'static str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged { epoch, batch, what })
    }
}

/// Defender objective E[Σ_j κ_j|δ_j| + Σ_k b_k p_k] on a batch, with
/// generator gradients. With `kappa_on_privacy` the weights swap to
/// E[Σ_j|δ_j| + κ Σ_k b_k p_k].
#[allow(clippy::too_many_arguments)]
pub fn defender_loss_and_grads<T: Scalar>(
    generator: &GeneratorMechanism<T>,
    attacker: &Mlp<T>,
    pop: &Population<T>,
    b: ArrayView2<'_, T>,
    nu: ArrayView2<'_, T>,
    kappa: &[f64],
    kappa_on_privacy: bool,
    mode: Mode,
) -> Result<(f64, Gradients<T>, super::mlp::Tape<T>)> {
    let rows = T::from_usize_lossy(b.nrows());
    let gtape = generator.model.forward(generator.inputs(b, nu).view(), mode)?;
    let delta = gtape.output();
    let x = pop.summary_stats_batch(b);
    let (r, mask) = release_batch(&x, delta);
    let atape = attacker.forward(r.view(), mode)?;
    let p = atape.output();
    let (util_w, priv_w) = if kappa_on_privacy { (vec![1.0; kappa.len()], kappa[0]) } else { (kappa.to_vec(), 1.0) };
    let (util, mut d_delta) = utility_term(delta, &util_w);
    let privacy = (&b * p).sum().as_f64() / b.nrows() as f64;
    let dp = b.mapv(|v| v * T::lit(priv_w) / rows);
    let (_, dr) = attacker.backward(&atape, dp.view())?;
    d_delta += &(&dr * &mask);
    let (grads, _) = generator.model.backward(&gtape, d_delta.view())?;
    Ok((util + priv_w * privacy, grads, gtape))
}

pub fn defender_loss<T: Scalar>(
    generator: &GeneratorMechanism<T>,
    attacker: &Mlp<T>,
    pop: &Population<T>,
    b: ArrayView2<'_, T>,
    nu: ArrayView2<'_, T>,
    kappa: &[f64],
) -> Result<f64> {
    Ok(defender_loss_and_grads(generator, attacker, pop, b, nu, kappa, false, Mode::Eval)?.0)
}

/// Attacker objective E[−Σ_k b_k p_k + γ Σ_k p_k] on releases `r`.
pub fn attacker_loss_on_releases<T: Scalar>(
    attacker: &Mlp<T>,
    r: ArrayView2<'_, T>,
    b: ArrayView2<'_, T>,
    gamma: f64,
    mode: Mode,
) -> Result<(f64, Gradients<T>, super::mlp::Tape<T>)> {
    let rows = T::from_usize_lossy(b.nrows());
    let tape = attacker.forward(r, mode)?;
    let p = tape.output();
    let g = T::lit(gamma);
    let loss = Zip::from(p).and(&b).fold(T::zero(), |acc, &pi, &bi| acc + (g - bi) * pi) / rows;
    let dp = b.mapv(|bi| (g - bi) / rows);
    let (grads, _) = attacker.backward(&tape, dp.view())?;
    Ok((loss.as_f64(), grads, tape))
}

pub fn attacker_loss<T: Scalar>(
    generator: &GeneratorMechanism<T>,
    attacker: &Mlp<T>,
    pop: &Population<T>,
    b: ArrayView2<'_, T>,
    nu: ArrayView2<'_, T>,
    gamma: f64,
) -> Result<f64> {
    let delta = generator.model.predict(generator.inputs(b, nu).view())?;
    let (r, _) = release_batch(&pop.summary_stats_batch(b), &delta);
    Ok(attacker_loss_on_releases(attacker, r.view(), b, gamma, Mode::Eval)?.0)
}

/// Confidences are the network outputs; claims at 0.5.
pub fn attack_mechanism<T: Scalar>(attacker: &Mlp<T>, release: ndarray::ArrayView1<'_, T>) -> Result<AttackDecision> {
    let out = attacker.predict(release.insert_axis(Axis(0)))?;
    let conf: Vec<f64> = out.row(0).iter().map(|v| v.as_f64()).collect();
    Ok(AttackDecision::at_least(conf, 0.5))
}

/// Releases from either a trained generator or a fixed mechanism.
#[derive(Clone, Copy)]
pub enum NoiseSource<'a, T: Scalar> {
    Generator(&'a GeneratorMechanism<T>),
    Mechanism(&'a ReleaseMechanism<T>),
}

impl<T: Scalar> NoiseSource<'_, T> {
    /// Releases and pre-clip noise for each membership row.
    pub fn releases<R: Rng + ?Sized>(&self, pop: &Population<T>, b: ArrayView2<'_, T>, rng: &mut R) -> Result<(Array2<T>, Array2<T>)> {
        match self {
            NoiseSource::Generator(g) => {
                let nu = g.sample_aux(b.nrows(), rng);
                let delta = g.model.predict(g.inputs(b, nu.view()).view())?;
                let (r, _) = release_batch(&pop.summary_stats_batch(b), &delta);
                Ok((r, delta))
            }
            NoiseSource::Mechanism(mech) => {
                let m = pop.num_snvs();
                let (mut r, mut d) = (Array2::zeros((b.nrows(), m)), Array2::zeros((b.nrows(), m)));
                for (i, row) in b.rows().into_iter().enumerate() {
                    let rel = mech.sample_release(pop, &row_vector(row), rng)?;
                    r.row_mut(i).assign(&rel.values);
                    d.row_mut(i).assign(&rel.noise);
                }
                Ok((r, d))
            }
        }
    }
}

/// Pooled per-individual confidences and labels over held-out beacons.
pub struct HeldOut<T: Scalar> {
    pub b: Array2<T>,
    pub releases: Array2<T>,
    pub noise: Array2<T>,
}

impl<T: Scalar> HeldOut<T> {
    pub fn sample(source: NoiseSource<'_, T>, pop: &Population<T>, q: &MembershipPrior, beacons: usize, rng: &mut StreamRng) -> Result<Self> {
        let b = sample_membership_batch(q, beacons, rng);
        let (releases, noise) = source.releases(pop, b.view(), rng)?;
        Ok(Self { b, releases, noise })
    }

    pub fn labels(&self) -> Vec<bool> {
        self.b.iter().map(|&v| v > T::lit(0.5)).collect()
    }

    pub fn membership(&self, i: usize) -> MembershipVector {
        row_vector(self.b.row(i))
    }

    /// Network confidences, flattened row-major like [`Self::labels`].
    pub fn network_confidences(&self, attacker: &Mlp<T>) -> Result<Vec<f64>> {
        Ok(attacker.predict(self.releases.view())?.iter().map(|v| v.as_f64()).collect())
    }

    pub fn network_auc(&self, attacker: &Mlp<T>) -> Result<f64> {
        Ok(roc_auc(&self.network_confidences(attacker)?, &self.labels())?.auc)
    }
}

/// Alternating general-sum training: one defender step then one attacker
/// step per batch. The defender samples b from `q`, the attacker from
/// `sigma`.
pub fn train_bne<T: Scalar>(pop: &Population<T>, q: &MembershipPrior, sigma: &MembershipPrior, cfg: &TrainConfig) -> Result<TrainedGame<T>> {
    cfg.validate()?;
    let (k, m) = (pop.num_individuals(), pop.num_snvs());
    check_prior(q, k)?;
    check_prior(sigma, k)?;
    let kappa = cfg.kappa.weights(m)?;
    let mut rng = child_rng(cfg.seed, 0);
    let mut eval_rng = child_rng(cfg.seed, 1);
    let q_aux = cfg.q_aux_for(k);
    let mut generator = GeneratorMechanism::init(k, m, q_aux, &cfg.generator_specs(k, m), &mut rng)?;
    let mut attacker = Mlp::new(m, &cfg.attacker_specs(k, m), &mut rng);
    if attacker.input_width() != m || attacker.output_width() != k {
        return Err(Error::DimensionMismatch { expected: k, actual: attacker.output_width(), context: "attacker output" });
    }
    let mut opt_d = Adam::new(AdamConfig::new(cfg.defender_lr, cfg.weight_decay));
    let mut opt_a = Adam::new(AdamConfig::new(cfg.attacker_lr, cfg.weight_decay));
    let same_prior = q == sigma;
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let (mut dsum, mut asum, mut nsum) = (0.0, 0.0, 0.0);
        for batch in 0..cfg.batches_per_epoch {
            let b: Array2<T> = sample_membership_batch(q, cfg.batch_size, &mut rng);
            let nu = generator.sample_aux(cfg.batch_size, &mut rng);
            let (dl, grads, gtape) = defender_loss_and_grads(&generator, &attacker, pop, b.view(), nu.view(), &kappa, cfg.kappa_on_privacy, Mode::Train)?;
            check_finite(dl, epoch, batch, "defender loss")?;
            nsum += mean_abs(gtape.output());
            opt_d.step(&mut generator.model, &grads);
            generator.model.commit_batch_stats(&gtape);

            let (b_a, nu_a) = if same_prior {
                (b, generator.sample_aux(cfg.batch_size, &mut rng))
            } else {
                (sample_membership_batch(sigma, cfg.batch_size, &mut rng), generator.sample_aux(cfg.batch_size, &mut rng))
            };
            let delta = generator.model.forward(generator.inputs(b_a.view(), nu_a.view()).view(), Mode::Train)?.into_output();
            let (r, _) = release_batch(&pop.summary_stats_batch(b_a.view()), &delta);
            let (al, agrads, atape) = attacker_loss_on_releases(&attacker, r.view(), b_a.view(), cfg.gamma, Mode::Train)?;
            check_finite(al, epoch, batch, "attacker loss")?;
            opt_a.step(&mut attacker, &agrads);
            attacker.commit_batch_stats(&atape);
            dsum += dl;
            asum += al;
        }
        opt_d.decay(cfg.lr_decay);
        opt_a.decay(cfg.lr_decay);
        let auc = if cfg.eval_due(epoch) {
            let held = HeldOut::sample(NoiseSource::Generator(&generator), pop, q, cfg.eval_beacons, &mut eval_rng)?;
            Some(held.network_auc(&attacker)?)
        } else {
            None
        };
        let nb = cfg.batches_per_epoch as f64;
        history.push(EpochRecord { epoch, defender_loss: Some(dsum / nb), attacker_loss: Some(asum / nb), auc, mean_abs_noise: nsum / nb });
    }
    Ok(TrainedGame { generator, attacker, history })
}

/// Trains only an attacker network against a fixed release source.
pub fn train_attacker<T: Scalar>(
    pop: &Population<T>,
    q: &MembershipPrior,
    sigma: &MembershipPrior,
    source: NoiseSource<'_, T>,
    cfg: &TrainConfig,
) -> Result<(Mlp<T>, Vec<EpochRecord>)> {
    cfg.validate()?;
    let (k, m) = (pop.num_individuals(), pop.num_snvs());
    check_prior(sigma, k)?;
    let mut rng = child_rng(cfg.seed, 2);
    let mut eval_rng = child_rng(cfg.seed, 3);
    let mut attacker = Mlp::new(m, &cfg.attacker_specs(k, m), &mut rng);
    let mut opt = Adam::new(AdamConfig::new(cfg.attacker_lr, cfg.weight_decay));
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let (mut asum, mut nsum) = (0.0, 0.0);
        for batch in 0..cfg.batches_per_epoch {
            let b: Array2<T> = sample_membership_batch(sigma, cfg.batch_size, &mut rng);
            let (r, d) = source.releases(pop, b.view(), &mut rng)?;
            let (al, grads, tape) = attacker_loss_on_releases(&attacker, r.view(), b.view(), cfg.gamma, Mode::Train)?;
            check_finite(al, epoch, batch, "attacker loss")?;
            opt.step(&mut attacker, &grads);
            attacker.commit_batch_stats(&tape);
            asum += al;
            nsum += mean_abs(&d);
        }
        opt.decay(cfg.lr_decay);
        let auc = if cfg.eval_due(epoch) { Some(HeldOut::sample(source, pop, q, cfg.eval_beacons, &mut eval_rng)?.network_auc(&attacker)?) } else { None };
        let nb = cfg.batches_per_epoch as f64;
        history.push(EpochRecord { epoch, defender_loss: None, attacker_loss: Some(asum / nb), auc, mean_abs_noise: nsum / nb });
    }
    Ok((attacker, history))
}

fn check_prior(p: &MembershipPrior, k: usize) -> Result<()> {
    p.validate()?;
    if p.num_individuals() != k {
        return Err(Error::DimensionMismatch { expected: k, actual: p.num_individuals(), context: "prior" });
    }
    Ok(())
}

/// The LRT attack a generator is trained against.
#[derive(Debug, Clone, Copy)]
pub enum LrtTarget<'a, T: Scalar> {
    Fixed {
        tau: f64,
    },
    /// Adaptive threshold from a reference pool's N lowest LRS values.
    Adaptive {
        reference: &'a Population<T>,
        n: usize,
    },
}

/// Batched LRS: ℓ[i, k] for release row i and genotype row k, plus what
/// the backward pass needs.
struct LrsBatch<T: Scalar> {
    l: Array2<T>,
    r: Array2<T>,
    mask: Array2<T>,
}

fn lrs_batch<T: Scalar>(aafs: ndarray::ArrayView1<'_, T>, geno: ArrayView2<'_, T>, r: &Array2<T>, x_min: &[f64]) -> LrsBatch<T> {
    let mut rc = r.clone();
    let mut mask = Array2::ones(r.dim());
    for ((mut row, mut mrow), &xm) in rc.rows_mut().into_iter().zip(mask.rows_mut()).zip(x_min) {
        let (lo, hi) = (T::lit(xm), T::lit(1.0 - xm));
        Zip::from(&mut row).and(&mut mrow).for_each(|v, mk| {
            if *v < lo || *v > hi {
                *mk = T::zero();
                *v = v.max(lo).min(hi);
            }
        });
    }
    let mut w = Array2::zeros(rc.dim());
    let mut c = Array1::<T>::zeros(rc.nrows());
    for ((rrow, mut wrow), ci) in rc.rows().into_iter().zip(w.rows_mut()).zip(c.iter_mut()) {
        Zip::from(&mut wrow).and(&rrow).and(&aafs).for_each(|w, &x, &p| {
            let absent = ((T::one() - p) / (T::one() - x)).ln();
            *w = (p / x).ln() - absent;
            *ci += absent;
        });
    }
    let mut l = w.dot(&geno.t());
    for (mut row, &ci) in l.rows_mut().into_iter().zip(c.iter()) {
        row += ci;
    }
    LrsBatch { l, r: rc, mask }
}

/// ∂/∂r of Σ G ⊙ ℓ through the clamp.
fn lrs_batch_backward<T: Scalar>(lb: &LrsBatch<T>, geno: ArrayView2<'_, T>, g: &Array2<T>) -> Array2<T> {
    let gd = g.dot(&geno);
    let gsum = g.sum_axis(Axis(1));
    let mut dr = Array2::zeros(lb.r.dim());
    for (i, mut row) in dr.rows_mut().into_iter().enumerate() {
        let s = gsum[i];
        Zip::from(&mut row).and(gd.row(i)).and(lb.r.row(i)).and(lb.mask.row(i)).for_each(|d, &gdv, &x, &mk| {
            *d = mk * (-gdv / x + (s - gdv) / (T::one() - x));
        });
    }
    dr
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Defender objective against an LRT attacker with 1{ℓ ≤ τ} replaced by
/// σ((τ − ℓ)/T). The adaptive threshold is a soft bottom-N average with
/// weights σ((t − ℓ_i)/T_soft) around the N-th order statistic t; the
/// gradient is exact away from rank changes.
#[allow(clippy::too_many_arguments)]
pub fn lrt_defense_loss_and_grads<T: Scalar>(
    generator: &GeneratorMechanism<T>,
    pop: &Population<T>,
    target: LrtTarget<'_, T>,
    b: ArrayView2<'_, T>,
    nu: ArrayView2<'_, T>,
    kappa: &[f64],
    proxy_temperature: f64,
    soft_min_temperature: f64,
    mode: Mode,
) -> Result<(f64, Gradients<T>, super::mlp::Tape<T>)> {
    let rows = b.nrows();
    let gtape = generator.model.forward(generator.inputs(b, nu).view(), mode)?;
    let delta = gtape.output();
    let (r, clip_mask) = release_batch(&pop.summary_stats_batch(b), delta);
    let x_min: Vec<f64> = b.rows().into_iter().map(|row| clamp_bound(row.iter().filter(|&&v| v > T::lit(0.5)).count())).collect();
    let lb = lrs_batch(pop.reference_aafs(), pop.genotypes(), &r, &x_min);

    let (util, mut d_delta) = utility_term(delta, kappa);
    let tp = proxy_temperature;
    let mut tau = vec![0.0; rows];
    let mut soft = None;
    match target {
        LrtTarget::Fixed { tau: t } => tau.fill(t),
        LrtTarget::Adaptive { reference, n } => {
            let rb = lrs_batch(reference.reference_aafs(), reference.genotypes(), &r, &x_min);
            let mut dtau_dl = Array2::<f64>::zeros(rb.l.dim());
            for (i, row) in rb.l.rows().into_iter().enumerate() {
                let li: Vec<f64> = row.iter().map(|v| v.as_f64()).collect();
                let mut order: Vec<usize> = (0..li.len()).collect();
                order.sort_by(|&a, &c| li[a].total_cmp(&li[c]));
                let nth = order[(n.max(1) - 1).min(order.len() - 1)];
                let t = li[nth];
                let w: Vec<f64> = li.iter().map(|&l| sigmoid((t - l) / soft_min_temperature)).collect();
                let wsum: f64 = w.iter().sum();
                let ti = li.iter().zip(&w).map(|(l, w)| l * w).sum::<f64>() / wsum;
                tau[i] = ti;
                // ∂w_j/∂ℓ_j = −w_j(1−w_j)/T and ∂w_j/∂t = +w_j(1−w_j)/T, where
                // t moves with the ℓ that currently holds rank N.
                let mut dt = 0.0;
                for (j, (&l, &wj)) in li.iter().zip(&w).enumerate() {
                    let dw = wj * (1.0 - wj) / soft_min_temperature;
                    dtau_dl[[i, j]] = (wj - (l - ti) * dw) / wsum;
                    dt += (l - ti) * dw / wsum;
                }
                dtau_dl[[i, nth]] += dt;
            }
            soft = Some((rb, dtau_dl));
        }
    }

    let mut privacy = 0.0;
    let mut g_l = Array2::<T>::zeros(lb.l.dim());
    let mut g_tau = vec![0.0; rows];
    for i in 0..rows {
        for k in 0..lb.l.ncols() {
            let bk = b[[i, k]].as_f64();
            if bk == 0.0 {
                continue;
            }
            let sv = sigmoid((tau[i] - lb.l[[i, k]].as_f64()) / tp);
            privacy += sv;
            let ds = sv * (1.0 - sv) / tp / rows as f64;
            g_l[[i, k]] = T::lit(-ds);
            g_tau[i] += ds;
        }
    }
    let mut dr = lrs_batch_backward(&lb, pop.genotypes(), &g_l);
    if let (Some((rb, dtau_dl)), LrtTarget::Adaptive { reference, .. }) = (&soft, target) {
        let g_ref = Array2::from_shape_fn(rb.l.dim(), |(i, j)| T::lit(g_tau[i] * dtau_dl[[i, j]]));
        dr += &lrs_batch_backward(rb, reference.genotypes(), &g_ref);
    }
    d_delta += &(&dr * &clip_mask);
    let (grads, _) = generator.model.backward(&gtape, d_delta.view())?;
    Ok((util + privacy / rows as f64, grads, gtape))
}

/// Hard LRT confidences (τ − ℓ, larger means member) for every held-out
/// beacon, flattened like [`HeldOut::labels`].
pub fn lrt_confidences<T: Scalar>(pop: &Population<T>, held: &HeldOut<T>, target: LrtTarget<'_, T>) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(held.b.len());
    for i in 0..held.b.nrows() {
        let x_min = clamp_bound(held.membership(i).count());
        let (l, _) = crate::lrt::lrs_all(pop, held.releases.row(i), x_min);
        let tau = match target {
            LrtTarget::Fixed { tau } => tau,
            LrtTarget::Adaptive { reference, n } => {
                let (rl, _) = crate::lrt::lrs_all(reference, held.releases.row(i), x_min);
                adaptive_threshold(rl.as_slice().expect("contiguous"), n)?
            }
        };
        out.extend(l.iter().map(|&v| tau - v));
    }
    Ok(out)
}

/// Trains a generator against a fixed or adaptive LRT attacker.
pub fn train_lrt_defense<T: Scalar>(
    pop: &Population<T>,
    q: &MembershipPrior,
    cfg: &TrainConfig,
    target: LrtTarget<'_, T>,
) -> Result<(GeneratorMechanism<T>, Vec<EpochRecord>)> {
    cfg.validate()?;
    let (k, m) = (pop.num_individuals(), pop.num_snvs());
    check_prior(q, k)?;
    if let LrtTarget::Adaptive { reference, n } = target {
        if n == 0 || n > reference.num_individuals() {
            return Err(invalid("N", format!("{n} not in 1..={}", reference.num_individuals())));
        }
    }
    let kappa = cfg.kappa.weights(m)?;
    let mut rng = child_rng(cfg.seed, 4);
    let mut eval_rng = child_rng(cfg.seed, 5);
    let mut generator = GeneratorMechanism::init(k, m, cfg.q_aux_for(k), &cfg.generator_specs(k, m), &mut rng)?;
    let mut opt = Adam::new(AdamConfig::new(cfg.defender_lr, cfg.weight_decay));
    let mut temp = cfg.soft_min_temperature;
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let (mut dsum, mut nsum) = (0.0, 0.0);
        for batch in 0..cfg.batches_per_epoch {
            let b: Array2<T> = sample_membership_batch(q, cfg.batch_size, &mut rng);
            let nu = generator.sample_aux(cfg.batch_size, &mut rng);
            let (dl, grads, tape) = lrt_defense_loss_and_grads(&generator, pop, target, b.view(), nu.view(), &kappa, cfg.proxy_temperature, temp, Mode::Train)?;
            check_finite(dl, epoch, batch, "defender loss")?;
            nsum += mean_abs(tape.output());
            opt.step(&mut generator.model, &grads);
            generator.model.commit_batch_stats(&tape);
            dsum += dl;
        }
        opt.decay(cfg.lr_decay);
        temp = (temp * cfg.soft_min_anneal).max(cfg.soft_min_floor);
        let auc = if cfg.eval_due(epoch) {
            let held = HeldOut::sample(NoiseSource::Generator(&generator), pop, q, cfg.eval_beacons, &mut eval_rng)?;
            Some(roc_auc(&lrt_confidences(pop, &held, target)?, &held.labels())?.auc)
        } else {
            None
        };
        let nb = cfg.batches_per_epoch as f64;
        history.push(EpochRecord { epoch, defender_loss: Some(dsum / nb), attacker_loss: None, auc, mean_abs_noise: nsum / nb });
    }
    Ok((generator, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learn::mlp::Layer;
    use crate::population::{generate_population, AafDistribution};
    use crate::stats::rng;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn small_pop(k: usize, m: usize, seed: u64) -> Population<f64> {
        generate_population(k, m, &AafDistribution::default(), seed).unwrap()
    }

    fn small_generator(k: usize, m: usize, bn: bool, seed: u64) -> GeneratorMechanism<f64> {
        let specs = [
            LayerSpec::new(7, Activation::Relu, bn),
            LayerSpec::new(5, Activation::LeakyRelu, bn),
            LayerSpec::new(m, Activation::ScaledSigmoid { lo: -0.5, hi: 0.5 }, false),
        ];
        GeneratorMechanism::init(k, m, 2, &specs, &mut rng(seed)).unwrap()
    }

    fn small_attacker(k: usize, m: usize, bn: bool, seed: u64) -> Mlp<f64> {
        let specs = [LayerSpec::new(6, Activation::Relu, bn), LayerSpec::new(k, Activation::Sigmoid, false)];
        Mlp::new(m, &specs, &mut rng(seed))
    }

    /// Affine output net whose every output equals `c`.
    fn constant_net(m: usize, k: usize, c: f64) -> Mlp<f64> {
        let layer = Layer { weight: Array2::zeros((m, k)), bias: Array1::from_elem(k, c), norm: None, activation: Activation::Identity };
        Mlp::from_layers(m, vec![layer]).unwrap()
    }

    /// Central differences on `probes` random parameters against `analytic`.
    fn finite_difference(net: &mut Mlp<f64>, analytic: &Gradients<f64>, probes: usize, seed: u64, loss: impl Fn(&Mlp<f64>) -> f64) {
        let flat: Vec<Vec<f64>> = analytic.slices().iter().map(|s| s.to_vec()).collect();
        let mut r = rng(seed);
        let h = 1e-5;
        for _ in 0..probes {
            let s = r.random_range(0..flat.len());
            let i = r.random_range(0..flat[s].len());
            let orig = net.param_slices_mut()[s][i];
            net.param_slices_mut()[s][i] = orig + h;
            let up = loss(net);
            net.param_slices_mut()[s][i] = orig - h;
            let down = loss(net);
            net.param_slices_mut()[s][i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = flat[s][i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-4);
            assert!(rel <= 1e-4, "slice {s} index {i}: analytic {a} numeric {numeric}");
        }
    }

    fn batch(q: &MembershipPrior, rows: usize, seed: u64) -> Array2<f64> {
        sample_membership_batch(q, rows, &mut rng(seed))
    }

    #[test]
    fn defender_gradient_matches_finite_differences() {
        let (k, m) = (5, 8);
        let pop = small_pop(k, m, 1);
        let att = small_attacker(k, m, true, 2);
        let b = batch(&MembershipPrior::bernoulli(k, 0.5), 6, 3);
        for (bn, on_privacy) in [(false, false), (true, false), (true, true)] {
            let mut gen = small_generator(k, m, bn, 4);
            let nu = gen.sample_aux(6, &mut rng(5));
            let kappa = vec![0.7; m];
            let (_, grads, _) = defender_loss_and_grads(&gen, &att, &pop, b.view(), nu.view(), &kappa, on_privacy, Mode::Train).unwrap();
            let (pop, att, b, nu, kappa) = (&pop, &att, &b, &nu, &kappa);
            finite_difference(&mut gen.model, &grads, 20, 6, |net| {
                let g = GeneratorMechanism::new(net.clone(), k, 2).unwrap();
                defender_loss_and_grads(&g, att, pop, b.view(), nu.view(), kappa, on_privacy, Mode::Train).unwrap().0
            });
        }
    }

    #[test]
    fn attacker_gradient_matches_finite_differences() {
        let (k, m) = (4, 7);
        let r = Array2::from_shape_fn((5, m), |(i, j)| ((i * 7 + j * 3) % 11) as f64 / 11.0);
        let b = batch(&MembershipPrior::bernoulli(k, 0.5), 5, 8);
        for bn in [false, true] {
            let mut att = small_attacker(k, m, bn, 9);
            let (_, grads, _) = attacker_loss_on_releases(&att, r.view(), b.view(), 0.3, Mode::Train).unwrap();
            finite_difference(&mut att, &grads, 20, 10, |net| attacker_loss_on_releases(net, r.view(), b.view(), 0.3, Mode::Train).unwrap().0);
        }
    }

    #[test]
    fn lrt_proxy_gradient_matches_finite_differences() {
        let (k, m) = (6, 10);
        let pop = small_pop(k, m, 11);
        let reference = small_pop(9, m, 12);
        let b = batch(&MembershipPrior::bernoulli(k, 0.5), 4, 13);
        let kappa = vec![0.2; m];
        for target in [LrtTarget::Fixed { tau: 0.5 }, LrtTarget::Adaptive { reference: &reference, n: 3 }] {
            let mut gen = small_generator(k, m, false, 14);
            let nu = gen.sample_aux(4, &mut rng(15));
            let (_, grads, _) = lrt_defense_loss_and_grads(&gen, &pop, target, b.view(), nu.view(), &kappa, 0.7, 0.3, Mode::Train).unwrap();
            finite_difference(&mut gen.model, &grads, 20, 16, |net| {
                let g = GeneratorMechanism::new(net.clone(), k, 2).unwrap();
                lrt_defense_loss_and_grads(&g, &pop, target, b.view(), nu.view(), &kappa, 0.7, 0.3, Mode::Train).unwrap().0
            });
        }
    }

    #[test]
    fn defender_loss_examples() {
        let (k, m) = (2, 3);
        let pop = Population::new(array![[1.0, 0.0, 1.0], [0.0, 1.0, 1.0]], array![0.5, 0.5, 0.5]).unwrap();
        // Generator with constant output δ = (0.1, −0.2, 0.0): identity layer
        // with zero weights.
        let layer = Layer { weight: Array2::zeros((k + 1, m)), bias: array![0.1, -0.2, 0.0], norm: None, activation: Activation::Identity };
        let gen = GeneratorMechanism::new(Mlp::from_layers(k + 1, vec![layer]).unwrap(), k, 1).unwrap();
        let b = array![[1.0, 0.0], [1.0, 1.0]];
        let nu = array![[0.3], [0.9]];
        let kappa = [2.0, 1.0, 5.0];

        // p ≡ 0: pure utility, 2·0.1 + 1·0.2 = 0.4 on every row.
        let zero = constant_net(m, k, 0.0);
        assert_abs_diff_eq!(defender_loss(&gen, &zero, &pop, b.view(), nu.view(), &kappa).unwrap(), 0.4, epsilon = 1e-12);

        // κ = 0: pure privacy proxy. p ≡ 0.25, members 1 and 2 → (0.25 + 0.5)/2.
        let quarter = constant_net(m, k, 0.25);
        assert_abs_diff_eq!(defender_loss(&gen, &quarter, &pop, b.view(), nu.view(), &[0.0; 3]).unwrap(), 0.375, epsilon = 1e-12);

        // Both terms: 0.4 + 0.375.
        assert_abs_diff_eq!(defender_loss(&gen, &quarter, &pop, b.view(), nu.view(), &kappa).unwrap(), 0.775, epsilon = 1e-12);

        // κ on privacy: Σ|δ| = 0.3, plus κ·0.375 with κ = 2.
        let (v, _, _) = defender_loss_and_grads(&gen, &quarter, &pop, b.view(), nu.view(), &[2.0; 3], true, Mode::Eval).unwrap();
        assert_abs_diff_eq!(v, 0.3 + 0.75, epsilon = 1e-12);
    }

    #[test]
    fn attacker_loss_examples() {
        let (k, m) = (3, 4);
        let r = Array2::from_elem((2, m), 0.4);
        let b = array![[1.0, 0.0, 1.0], [0.0, 0.0, 1.0]];
        let loss = |c: f64, b: &Array2<f64>, gamma: f64| attacker_loss_on_releases(&constant_net(m, k, c), r.view(), b.view(), gamma, Mode::Eval).unwrap().0;
        assert_eq!(loss(0.0, &b, 0.5), 0.0);
        // p ≡ 1: −Σb + γK per row, rows have 2 and 1 members.
        assert_abs_diff_eq!(loss(1.0, &b, 0.5), ((-2.0 + 1.5) + (-1.0 + 1.5)) / 2.0, epsilon = 1e-12);
        // γ = 1 with every individual a member cancels for any p.
        assert_abs_diff_eq!(loss(0.37, &Array2::ones((2, k)), 1.0), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn attacker_step_descends_on_its_batch() {
        let (k, m) = (6, 12);
        let pop = small_pop(k, m, 20);
        let gen = small_generator(k, m, true, 21);
        let mut att = small_attacker(k, m, false, 22);
        let b = batch(&MembershipPrior::bernoulli(k, 0.5), 16, 23);
        let nu = gen.sample_aux(16, &mut rng(24));
        let before = attacker_loss(&gen, &att, &pop, b.view(), nu.view(), 0.5).unwrap();
        let delta = gen.model.predict(gen.inputs(b.view(), nu.view()).view()).unwrap();
        let (r, _) = release_batch(&pop.summary_stats_batch(b.view()), &delta);
        let (_, grads, _) = attacker_loss_on_releases(&att, r.view(), b.view(), 0.5, Mode::Eval).unwrap();
        Adam::new(AdamConfig::new(1e-4, 0.0)).step(&mut att, &grads);
        let after = attacker_loss(&gen, &att, &pop, b.view(), nu.view(), 0.5).unwrap();
        assert!(after < before, "{after} ≥ {before}");
    }

    fn tiny_config(seed: u64) -> TrainConfig {
        TrainConfig { epochs: 3, batches_per_epoch: 2, batch_size: 8, eval_beacons: 2, eval_every: 1, seed, ..Default::default() }
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let pop = small_pop(8, 15, 30);
        let q = MembershipPrior::bernoulli(8, 0.5);
        let a = train_bne(&pop, &q, &q, &tiny_config(1)).unwrap();
        let b = train_bne(&pop, &q, &q, &tiny_config(1)).unwrap();
        let c = train_bne(&pop, &q, &q, &tiny_config(2)).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.generator, b.generator);
        assert_ne!(a.history, c.history);
        let lrt_a = train_lrt_defense(&pop, &q, &tiny_config(1), LrtTarget::Fixed { tau: 0.0 }).unwrap();
        let lrt_b = train_lrt_defense(&pop, &q, &tiny_config(1), LrtTarget::Fixed { tau: 0.0 }).unwrap();
        assert_eq!(lrt_a.1, lrt_b.1);
    }

    #[test]
    fn generated_noise_stays_in_range() {
        let pop = small_pop(8, 15, 31);
        let q = MembershipPrior::bernoulli(8, 0.5);
        let game = train_bne(&pop, &q, &q, &TrainConfig { kappa: Kappa::Scalar(0.0), ..tiny_config(3) }).unwrap();
        let held = HeldOut::sample(NoiseSource::Generator(&game.generator), &pop, &q, 30, &mut rng(32)).unwrap();
        assert!(held.noise.iter().all(|d| (-0.5..=0.5).contains(d)));
        assert!(held.releases.iter().all(|r| (0.0..=1.0).contains(r)));
        assert_eq!(history_csv(&game.history).lines().count(), 4);
    }

    #[test]
    fn zero_attacker_is_uninformative() {
        let pop = small_pop(8, 15, 33);
        let q = MembershipPrior::bernoulli(8, 0.5);
        let mech = ReleaseMechanism::zero_noise();
        let held = HeldOut::sample(NoiseSource::Mechanism(&mech), &pop, &q, 10, &mut rng(34)).unwrap();
        let zero: Mlp<f64> = Mlp::zeros(15, &default_attacker_layers(8, 15, false));
        assert_eq!(held.network_auc(&zero).unwrap(), 0.5);
        let d = attack_mechanism(&zero, held.releases.row(0)).unwrap();
        assert!(d.confidences.iter().all(|&c| c == 0.5));
        assert_eq!(d, attack_mechanism(&zero, held.releases.row(0)).unwrap());
    }

    #[test]
    fn attacker_learns_separable_task() {
        // Without noise and with m ≫ K the release determines b.
        let pop = small_pop(6, 60, 35);
        let q = MembershipPrior::bernoulli(6, 0.5);
        let mech = ReleaseMechanism::zero_noise();
        let cfg = TrainConfig { attacker_lr: 3e-3, epochs: 40, batches_per_epoch: 10, eval_beacons: 0, ..tiny_config(5) };
        let (att, _) = train_attacker(&pop, &q, &q, NoiseSource::Mechanism(&mech), &cfg).unwrap();
        let held = HeldOut::sample(NoiseSource::Mechanism(&mech), &pop, &q, 50, &mut rng(36)).unwrap();
        assert!(held.network_auc(&att).unwrap() >= 0.95);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { lr_decay: 1.5, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { gamma: 1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { kappa_on_privacy: true, kappa: Kappa::Vector(vec![1.0]), ..Default::default() }.validate().is_err());
        assert!(Kappa::Vector(vec![1.0, 2.0]).weights(3).is_err());
        assert!(Kappa::Scalar(-1.0).weights(3).is_err());
        let cfg: TrainConfig = toml::from_str("kappa = [0.0, 50.0]\nepochs = 7").unwrap();
        assert_eq!(cfg.kappa, Kappa::Vector(vec![0.0, 50.0]));
        assert_eq!(cfg.epochs, 7);
    }
}
