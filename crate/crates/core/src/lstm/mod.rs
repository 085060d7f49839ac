//! Recurrent next-action model: cells, network, optimiser, training loop
//! and checkpoints.

pub mod cell;
pub mod checkpoint;
pub mod network;
pub mod optim;
pub mod tensor;
pub mod train;

pub use network::{CellKind, LstmNetwork, NetworkShape, Params};
pub use train::{cross_validate, grid, grid_search, train, train_with_holdout, GridPoint, GridRow, TrainConfig, TrainedLstm};
