use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use super::mlp::{Activation, LayerSpec, Mlp};
use crate::error::{Error, Result};
use crate::population::MembershipVector;
use crate::scalar::Scalar;

/// Learned noise generator δ = G(b, ν) with ν ~ Uniform[0,1]^q_aux.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorMechanism<T: Scalar = f64> {
    pub model: Mlp<T>,
    pub num_individuals: usize,
    pub q_aux: usize,
}

/// Default auxiliary-noise width, ⌈K/27⌉.
pub fn default_q_aux(k: usize) -> usize {
    k.div_ceil(27).max(1)
}

/// Hidden widths proportional to a 800-individual, 5000-SNV reference
/// design: (K+q) → 1.875K → 1.375K → 0.625K → m.
pub fn default_generator_layers(k: usize, m: usize, batch_norm: bool) -> Vec<LayerSpec> {
    let w = |f: f64| ((k as f64 * f).round() as usize).max(4);
    vec![
        LayerSpec::new(w(1.875), Activation::Relu, batch_norm),
        LayerSpec::new(w(1.375), Activation::LeakyRelu, batch_norm),
        LayerSpec::new(w(0.625), Activation::LeakyRelu, batch_norm),
        LayerSpec::new(m, Activation::ScaledSigmoid { lo: -0.5, hi: 0.5 }, false),
    ]
}

impl<T: Scalar> GeneratorMechanism<T> {
    pub fn new(model: Mlp<T>, num_individuals: usize, q_aux: usize) -> Result<Self> {
        if model.input_width() != num_individuals + q_aux {
            return Err(Error::DimensionMismatch { expected: num_individuals + q_aux, actual: model.input_width(), context: "generator input" });
        }
        Ok(Self { model, num_individuals, q_aux })
    }

    pub fn init<R: Rng + ?Sized>(k: usize, m: usize, q_aux: usize, layers: &[LayerSpec], rng: &mut R) -> Result<Self> {
        if layers.last().map(|l| l.width) != Some(m) {
            return Err(Error::DimensionMismatch { expected: m, actual: layers.last().map_or(0, |l| l.width), context: "generator output" });
        }
        Self::new(Mlp::new(k + q_aux, layers, rng), k, q_aux)
    }

    pub fn num_snvs(&self) -> usize {
        self.model.output_width()
    }

    pub fn sample_aux<R: Rng + ?Sized>(&self, rows: usize, rng: &mut R) -> Array2<T> {
        Array2::from_shape_simple_fn((rows, self.q_aux), || T::lit(rng.random::<f64>()))
    }

    /// Network input rows `[b, ν]`.
    pub fn inputs(&self, b: ArrayView2<'_, T>, nu: ArrayView2<'_, T>) -> Array2<T> {
        concatenate(Axis(1), &[b, nu]).expect("row counts agree")
    }

    pub fn noise<R: Rng + ?Sized>(&self, b: &MembershipVector, rng: &mut R) -> Result<Array1<T>> {
        let bb = b.to_array::<T>().insert_axis(Axis(0));
        let nu = self.sample_aux(1, rng);
        let out = self.model.predict(self.inputs(bb.view(), nu.view()).view())?;
        Ok(out.row(0).to_owned())
    }
}
