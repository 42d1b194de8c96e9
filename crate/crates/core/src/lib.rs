//! Bilinear supervised discrete hashing for matrix-shaped features.
//!
//! Training has two stages. [`bilinear::fit_bilinear`] learns a pair of
//! discriminative projections `Q1`, `Q2` that shrink each `d1 x d2` sample to
//! `c1 x c2`. [`trainer::train`] then learns binary codes `B`, a label
//! regressor `W` and a linear hash function `U` on the projected features by
//! alternating closed-form and coordinate updates. New samples are hashed with
//! [`encoder::encode`] and ranked by Hamming distance in [`retrieval`].

pub mod baselines;
pub mod bilinear;
pub mod data;
pub mod encoder;
pub mod error;
pub mod retrieval;
pub mod trainer;
pub mod types;

pub use baselines::{bpbc_encode, bpbc_shape, lsh_encode, BpbcModel, LshModel};
pub use bilinear::{fit_bilinear, BilinearConfig, BilinearFit};
pub use encoder::encode;
pub use error::{Error, Result};
pub use retrieval::{evaluate, mean_average_precision, Evaluation};
pub use trainer::{train, TrainConfig, TrainOutput};
pub use types::{BilinearModel, CodeMatrix, FeatureTensor, LabelMatrix, ModelHyper, PackedCodes};
