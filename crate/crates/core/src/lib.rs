//! Rank-(L_r, L_r, 1) block-term decomposition of third-order tensors with joint estimation
//! of the number of blocks and their ranks, by hierarchically reweighted alternating least
//! squares. Also provides an unregularized ALS baseline, evaluation metrics, synthetic data
//! generation, file formats and the experiment drivers used by the `btd` command-line tool.

pub mod als;
pub mod bench;
pub mod error;
pub mod hirls;
pub mod io;
pub mod linalg;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod products;
pub mod rng;
pub mod synth;
pub mod tensor;

pub use error::{BtdError, Result};
pub use hirls::{run_hirls, run_multistart, SolverConfig, SolverOutput, SolverTrace};
pub use matrix::DenseMatrix;
pub use model::{BtdFactors, RankEstimate};
pub use tensor::{DenseTensor3, Dims, Mode};
