//! Adam with L2 weight decay and an exponential learning-rate schedule.

use serde::{Deserialize, Serialize};

use super::mlp::{Gradients, Mlp};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Added to the gradient as `weight_decay · θ`.
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay }
    }
}

#[derive(Debug, Clone)]
pub struct Adam<T: Scalar> {
    cfg: AdamConfig,
    lr: f64,
    t: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(cfg: AdamConfig) -> Self {
        Self { cfg, lr: cfg.lr, t: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    /// Multiplies the learning rate by `gamma`; call once per epoch.
    pub fn decay(&mut self, gamma: f64) {
        self.lr *= gamma;
    }

    pub fn step(&mut self, net: &mut Mlp<T>, grads: &Gradients<T>) {
        let gs = grads.slices();
        let mut ps = net.param_slices_mut();
        assert_eq!(gs.len(), ps.len(), "gradient structure does not match network");
        if self.m.is_empty() {
            self.m = gs.iter().map(|g| vec![T::zero(); g.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let c = &self.cfg;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        let step = T::lit(self.lr / bc1);
        let bc2_sqrt = T::lit(bc2.sqrt());
        let eps = T::lit(c.eps);
        let wd = T::lit(c.weight_decay);
        for (((p, g), m), v) in ps.iter_mut().zip(&gs).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                let gi = g[i] + wd * p[i];
                m[i] = b1 * m[i] + one_b1 * gi;
                v[i] = b2 * v[i] + one_b2 * gi * gi;
                p[i] -= step * m[i] / (v[i].sqrt() / bc2_sqrt + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learn::mlp::{Activation, Layer, LayerSpec, Mode};
    use ndarray::array;

    #[test]
    fn first_step_moves_by_lr() {
        // With bias correction the first Adam step is lr · sign(g).
        let layer = Layer { weight: array![[1.0f64, -2.0]], bias: array![0.0, 0.0], norm: None, activation: Activation::Identity };
        let mut net = Mlp::from_layers(1, vec![layer]).unwrap();
        let tape = net.forward(array![[1.0]].view(), Mode::Train).unwrap();
        let (g, _) = net.backward(&tape, array![[3.0, -0.5]].view()).unwrap();
        let mut opt = Adam::new(AdamConfig::new(0.01, 0.0));
        opt.step(&mut net, &g);
        let w = &net.layers()[0].weight;
        assert!((w[[0, 0]] - 0.99).abs() < 1e-9);
        assert!((w[[0, 1]] + 1.99).abs() < 1e-9);
    }

    #[test]
    fn decay_is_geometric() {
        let mut opt = Adam::<f32>::new(AdamConfig::new(1e-3, 1e-5));
        (0..10).for_each(|_| opt.decay(0.988));
        assert!((opt.lr() - 1e-3 * 0.988f64.powi(10)).abs() < 1e-15);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut rng = crate::stats::rng(2);
        let mut net: Mlp = Mlp::new(2, &[LayerSpec::new(1, Activation::Identity, false)], &mut rng);
        let x = array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        let y = array![[2.0], [-1.0], [1.0]];
        let mut opt = Adam::new(AdamConfig::new(0.05, 0.0));
        for _ in 0..2000 {
            let tape = net.forward(x.view(), Mode::Train).unwrap();
            let r = tape.output() - &y;
            let (g, _) = net.backward(&tape, r.view()).unwrap();
            opt.step(&mut net, &g);
        }
        let out = net.predict(x.view()).unwrap();
        assert!((&out - &y).iter().all(|e| e.abs() < 1e-3), "{out}");
    }
}
