//! Convolutional regression networks trained from scratch on the CPU.

mod checkpoint;
mod layers;
mod network;
mod optim;
mod tensor;
mod train;

pub use checkpoint::Checkpoint;
pub use layers::{BatchNorm, Conv2d, Dense, Gap, MaxPool, Relu};
pub use network::{Network, NetworkSpec, StageSpec, TowerSpec};
pub use optim::{Nadam, NadamConfig};
pub use tensor::{Param, Real, Tensor4};
pub use train::{mse_loss, predict, target_mean, train, Batch, EarlyStopping, EpochRecord, History, SampleSource, StopVerdict, TrainConfig, TrainOutcome};
