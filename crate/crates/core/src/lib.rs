// `!(x > 0.0)` is the validation idiom: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod attack;
pub mod bayes;
pub mod error;
pub mod eval;
pub mod learn;
pub mod lrt;
pub mod mechanisms;
pub mod population;
pub mod scalar;
pub mod stats;

pub use attack::{AttackDecision, Attacker, Observation};
pub use error::{Error, Result};
pub use mechanisms::{MeanMap, Release, ReleaseMechanism};
pub use population::{generate_population, load_population, AafDistribution, MembershipPrior, MembershipVector, Population};
pub use scalar::Scalar;

pub type Population32 = Population<f32>;
pub type Population64 = Population<f64>;
pub type Mlp32 = learn::Mlp<f32>;
pub type Mlp64 = learn::Mlp<f64>;
pub type Generator32 = learn::GeneratorMechanism<f32>;
pub type Generator64 = learn::GeneratorMechanism<f64>;
