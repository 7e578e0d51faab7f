//! Feed-forward networks with hand-written reverse mode.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    /// Negative slope 0.01.
    LeakyRelu,
    Sigmoid,
    /// Sigmoid affinely mapped onto [lo, hi].
    ScaledSigmoid {
        lo: f64,
        hi: f64,
    },
    Identity,
}

const LEAKY_SLOPE: f64 = 0.01;

fn sigmoid<T: Scalar>(a: T) -> T {
    if a >= T::zero() {
        T::one() / (T::one() + (-a).exp())
    } else {
        let e = a.exp();
        e / (T::one() + e)
    }
}

impl Activation {
    pub fn apply<T: Scalar>(self, a: T) -> T {
        match self {
            Activation::Relu => a.max(T::zero()),
            Activation::LeakyRelu => {
                if a > T::zero() {
                    a
                } else {
                    a * T::lit(LEAKY_SLOPE)
                }
            }
            Activation::Sigmoid => sigmoid(a),
            Activation::ScaledSigmoid { lo, hi } => T::lit(lo) + T::lit(hi - lo) * sigmoid(a),
            Activation::Identity => a,
        }
    }

    /// dy/da given the pre-activation `a` and output `y`.
    fn derivative<T: Scalar>(self, a: T, y: T) -> T {
        match self {
            Activation::Relu => {
                if a > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::LeakyRelu => {
                if a > T::zero() {
                    T::one()
                } else {
                    T::lit(LEAKY_SLOPE)
                }
            }
            Activation::Sigmoid => y * (T::one() - y),
            Activation::ScaledSigmoid { lo, hi } => (y - T::lit(lo)) * (T::lit(hi) - y) / T::lit(hi - lo),
            Activation::Identity => T::one(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub width: usize,
    pub activation: Activation,
    #[serde(default)]
    pub batch_norm: bool,
}

impl LayerSpec {
    pub fn new(width: usize, activation: Activation, batch_norm: bool) -> Self {
        Self { width, activation, batch_norm }
    }
}

/// Batch normalization with a learned affine map.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T: Scalar> {
    pub gamma: Array1<T>,
    pub beta: Array1<T>,
    pub running_mean: Array1<T>,
    pub running_var: Array1<T>,
    pub momentum: f64,
    pub eps: f64,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(width: usize) -> Self {
        Self {
            gamma: Array1::ones(width),
            beta: Array1::zeros(width),
            running_mean: Array1::zeros(width),
            running_var: Array1::ones(width),
            momentum: 0.1,
            eps: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T: Scalar> {
    /// `in × out`, so a batch maps as `x · W + b`.
    pub weight: Array2<T>,
    pub bias: Array1<T>,
    pub norm: Option<BatchNorm<T>>,
    pub activation: Activation,
}

impl<T: Scalar> Layer<T> {
    pub fn inputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.ncols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in normalization layers.
    Train,
    /// Running statistics in normalization layers.
    Eval,
}

#[derive(Debug, Clone)]
struct NormTape<T: Scalar> {
    xhat: Array2<T>,
    inv_std: Array1<T>,
    batch_mean: Array1<T>,
    batch_var: Array1<T>,
}

#[derive(Debug, Clone)]
struct LayerTape<T: Scalar> {
    input: Array2<T>,
    norm: Option<NormTape<T>>,
    pre: Array2<T>,
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct Tape<T: Scalar> {
    layers: Vec<LayerTape<T>>,
    output: Array2<T>,
    mode: Mode,
}

impl<T: Scalar> Tape<T> {
    pub fn output(&self) -> &Array2<T> {
        &self.output
    }

    pub fn into_output(self) -> Array2<T> {
        self.output
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads<T: Scalar> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
    pub gamma: Option<Array1<T>>,
    pub beta: Option<Array1<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T: Scalar> {
    pub layers: Vec<LayerGrads<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// Flat views in the same order as [`Mlp::param_slices_mut`].
    pub fn slices(&self) -> Vec<&[T]> {
        let mut out = Vec::new();
        for g in &self.layers {
            out.push(g.weight.as_slice().expect("standard layout"));
            out.push(g.bias.as_slice().expect("standard layout"));
            if let (Some(gm), Some(bt)) = (&g.gamma, &g.beta) {
                out.push(gm.as_slice().expect("standard layout"));
                out.push(bt.as_slice().expect("standard layout"));
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T: Scalar = f64> {
    input: usize,
    layers: Vec<Layer<T>>,
}

impl<T: Scalar> Mlp<T> {
    /// Uniform(±1/√fan_in) initialization for weights and biases.
    pub fn new<R: Rng + ?Sized>(input: usize, specs: &[LayerSpec], rng: &mut R) -> Self {
        let mut layers = Vec::with_capacity(specs.len());
        let mut fan_in = input;
        for s in specs {
            let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
            let mut u = || T::lit(bound * (2.0 * rng.random::<f64>() - 1.0));
            let weight = Array2::from_shape_simple_fn((fan_in, s.width), &mut u);
            let bias = Array1::from_shape_simple_fn(s.width, &mut u);
            layers.push(Layer { weight, bias, norm: s.batch_norm.then(|| BatchNorm::new(s.width)), activation: s.activation });
            fan_in = s.width;
        }
        Self { input, layers }
    }

    /// All weights and biases zero.
    pub fn zeros(input: usize, specs: &[LayerSpec]) -> Self {
        let mut fan_in = input;
        let layers = specs
            .iter()
            .map(|s| {
                let l = Layer {
                    weight: Array2::zeros((fan_in, s.width)),
                    bias: Array1::zeros(s.width),
                    norm: s.batch_norm.then(|| BatchNorm::new(s.width)),
                    activation: s.activation,
                };
                fan_in = s.width;
                l
            })
            .collect();
        Self { input, layers }
    }

    pub fn from_layers(input: usize, layers: Vec<Layer<T>>) -> Result<Self> {
        let mut w = input;
        for l in &layers {
            if l.inputs() != w {
                return Err(Error::DimensionMismatch { expected: w, actual: l.inputs(), context: "layer input width" });
            }
            if l.bias.len() != l.outputs() || l.norm.as_ref().is_some_and(|n| n.gamma.len() != l.outputs()) {
                return Err(Error::DimensionMismatch { expected: l.outputs(), actual: l.bias.len(), context: "layer bias width" });
            }
            w = l.outputs();
        }
        Ok(Self { input, layers })
    }

    pub fn input_width(&self) -> usize {
        self.input
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(self.input, |l| l.outputs())
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| LayerSpec::new(l.outputs(), l.activation, l.norm.is_some())).collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len() + l.norm.as_ref().map_or(0, |n| 2 * n.gamma.len())).sum()
    }

    /// Trainable tensors, flattened, in a fixed order.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(l.weight.as_slice_mut().expect("standard layout"));
            out.push(l.bias.as_slice_mut().expect("standard layout"));
            if let Some(n) = &mut l.norm {
                out.push(n.gamma.as_slice_mut().expect("standard layout"));
                out.push(n.beta.as_slice_mut().expect("standard layout"));
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    pub fn forward(&self, x: ArrayView2<'_, T>, mode: Mode) -> Result<Tape<T>> {
        if x.ncols() != self.input {
            return Err(Error::DimensionMismatch { expected: self.input, actual: x.ncols(), context: "network input" });
        }
        let mut h = x.to_owned();
        let mut tapes = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let mut z = h.dot(&l.weight);
            z += &l.bias;
            let (pre, norm) = match &l.norm {
                None => (z, None),
                Some(bn) => normalize(z, bn, mode),
            };
            let act = l.activation;
            let out = pre.mapv(|a| act.apply(a));
            tapes.push(LayerTape { input: h, norm, pre });
            h = out;
        }
        Ok(Tape { layers: tapes, output: h, mode })
    }

    /// Evaluation-mode output.
    pub fn predict(&self, x: ArrayView2<'_, T>) -> Result<Array2<T>> {
        Ok(self.forward(x, Mode::Eval)?.output)
    }

    /// Folds a training pass's batch statistics into the running averages.
    pub fn commit_batch_stats(&mut self, tape: &Tape<T>) {
        if tape.mode != Mode::Train {
            return;
        }
        for (l, t) in self.layers.iter_mut().zip(&tape.layers) {
            if let (Some(bn), Some(nt)) = (&mut l.norm, &t.norm) {
                let mo = T::lit(bn.momentum);
                let keep = T::one() - mo;
                let n = nt.xhat.nrows();
                // Unbiased variance for the running estimate.
                let corr = if n > 1 { T::from_usize_lossy(n) / T::from_usize_lossy(n - 1) } else { T::one() };
                Zip::from(&mut bn.running_mean).and(&nt.batch_mean).for_each(|r, &m| *r = keep * *r + mo * m);
                Zip::from(&mut bn.running_var).and(&nt.batch_var).for_each(|r, &v| *r = keep * *r + mo * v * corr);
            }
        }
    }

    /// Gradients of Σ dy ⊙ output with respect to parameters and input.
    pub fn backward(&self, tape: &Tape<T>, dy: ArrayView2<'_, T>) -> Result<(Gradients<T>, Array2<T>)> {
        if dy.dim() != tape.output.dim() {
            return Err(Error::DimensionMismatch { expected: tape.output.ncols(), actual: dy.ncols(), context: "upstream gradient" });
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = dy.to_owned();
        for (i, (l, t)) in self.layers.iter().zip(&tape.layers).enumerate().rev() {
            let act = l.activation;
            let y = tape.layers.get(i + 1).map_or(&tape.output, |next| &next.input);
            Zip::from(&mut g).and(&t.pre).and(y).for_each(|gi, &a, &y| *gi *= act.derivative(a, y));
            let (dz, dgamma, dbeta) = match (&l.norm, &t.norm) {
                (Some(bn), Some(nt)) => {
                    let dbeta = g.sum_axis(Axis(0));
                    let dgamma = (&g * &nt.xhat).sum_axis(Axis(0));
                    let dxhat = &g * &bn.gamma;
                    let dz = match tape.mode {
                        Mode::Eval => dxhat * &nt.inv_std,
                        Mode::Train => {
                            let n = T::from_usize_lossy(g.nrows());
                            let sum_d = dxhat.sum_axis(Axis(0));
                            let sum_dx = (&dxhat * &nt.xhat).sum_axis(Axis(0));
                            let mut dz = dxhat * n;
                            dz -= &sum_d;
                            dz -= &(&nt.xhat * &sum_dx);
                            dz *= &(&nt.inv_std / n);
                            dz
                        }
                    };
                    (dz, Some(dgamma), Some(dbeta))
                }
                _ => (g, None, None),
            };
            let dw = t.input.t().dot(&dz);
            let db = dz.sum_axis(Axis(0));
            g = dz.dot(&l.weight.t());
            grads.push(LayerGrads { weight: dw, bias: db, gamma: dgamma, beta: dbeta });
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, g))
    }
}

fn normalize<T: Scalar>(z: Array2<T>, bn: &BatchNorm<T>, mode: Mode) -> (Array2<T>, Option<NormTape<T>>) {
    let eps = T::lit(bn.eps);
    let (mean, var) = match mode {
        Mode::Train => {
            let mean = z.mean_axis(Axis(0)).expect("non-empty batch");
            let var = z.var_axis(Axis(0), T::zero());
            (mean, var)
        }
        Mode::Eval => (bn.running_mean.clone(), bn.running_var.clone()),
    };
    let inv_std = var.mapv(|v| T::one() / (v + eps).sqrt());
    let mut xhat = z;
    xhat -= &mean;
    xhat *= &inv_std;
    let mut out = &xhat * &bn.gamma;
    out += &bn.beta;
    (out, Some(NormTape { xhat, inv_std, batch_mean: mean, batch_var: var }))
}

/// Worst relative errors of backprop against central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_param_rel_err: f64,
    pub max_input_rel_err: f64,
    pub probes: usize,
}

/// Central-difference check of L = Σ U ⊙ f(X) in training mode on
/// `probes` random parameters and `probes` random inputs. Relative errors
/// use max(|analytic|, |numeric|, 1e-4) as the denominator.
pub fn gradient_check<R: Rng + ?Sized>(net: &Mlp<f64>, x: ArrayView2<'_, f64>, upstream: ArrayView2<'_, f64>, probes: usize, rng: &mut R) -> Result<GradCheck> {
    const H: f64 = 1e-5;
    let loss = |n: &Mlp<f64>, x: ArrayView2<'_, f64>| -> Result<f64> { Ok((n.forward(x, Mode::Train)?.into_output() * upstream).sum()) };
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-4);
    let tape = net.forward(x, Mode::Train)?;
    let (grads, dx) = net.backward(&tape, upstream)?;
    let flat: Vec<Vec<f64>> = grads.slices().iter().map(|s| s.to_vec()).collect();
    let mut probe_net = net.clone();
    let mut worst_p: f64 = 0.0;
    for _ in 0..probes {
        let s = rng.random_range(0..flat.len());
        let i = rng.random_range(0..flat[s].len());
        let orig = probe_net.param_slices_mut()[s][i];
        probe_net.param_slices_mut()[s][i] = orig + H;
        let up = loss(&probe_net, x)?;
        probe_net.param_slices_mut()[s][i] = orig - H;
        let down = loss(&probe_net, x)?;
        probe_net.param_slices_mut()[s][i] = orig;
        worst_p = worst_p.max(rel(flat[s][i], (up - down) / (2.0 * H)));
    }
    let mut xp = x.to_owned();
    let mut worst_x: f64 = 0.0;
    for _ in 0..probes {
        let (r, c) = (rng.random_range(0..x.nrows()), rng.random_range(0..x.ncols()));
        let orig = xp[[r, c]];
        xp[[r, c]] = orig + H;
        let up = loss(net, xp.view())?;
        xp[[r, c]] = orig - H;
        let down = loss(net, xp.view())?;
        xp[[r, c]] = orig;
        worst_x = worst_x.max(rel(dx[[r, c]], (up - down) / (2.0 * H)));
    }
    Ok(GradCheck { max_param_rel_err: worst_p, max_input_rel_err: worst_x, probes })
}

/// Every activation, with and without batch norm.
pub fn all_layer_combinations() -> Vec<(Activation, bool)> {
    let acts = [Activation::Relu, Activation::LeakyRelu, Activation::Sigmoid, Activation::ScaledSigmoid { lo: -0.5, hi: 0.5 }, Activation::Identity];
    acts.iter().flat_map(|&a| [(a, false), (a, true)]).collect()
}
