//! Networks, optimizer and the training games.

pub mod checkpoint;
pub mod games;
pub mod generator;
pub mod mlp;
pub mod optim;

pub use checkpoint::{load_generator, load_mlp, save_generator, save_mlp};
pub use games::{
    history_csv, lrt_confidences, train_attacker, train_bne, train_lrt_defense, EpochRecord, HeldOut, Kappa, LrtTarget, NoiseSource, TrainConfig, TrainedGame,
};
pub use generator::GeneratorMechanism;
pub use mlp::{all_layer_combinations, gradient_check, Activation, GradCheck, Gradients, Layer, LayerSpec, Mlp, Mode, Tape};
pub use optim::{Adam, AdamConfig};
