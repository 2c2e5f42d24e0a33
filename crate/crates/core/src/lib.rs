//! Joint view attention for drug-target binding affinity regression.
//!
//! The pipeline runs from raw SMILES strings and amino-acid sequences to a
//! scalar affinity estimate:
//!
//! 1. [`smiles`] parses compounds into molecular graphs.
//! 2. [`features`] turns compounds and targets into segment matrices (views).
//! 3. [`model`] projects every view into a shared latent space, mixes all
//!    segments with multihead self-attention, pools each view and regresses
//!    the concatenated vector.
//! 4. [`data`], [`metrics`] and [`train`] cover ingestion, cross-validation
//!    splits, training and scoring; [`interpret`] ranks influential segments.

pub mod data;
pub mod features;
pub mod hash;
pub mod interpret;
pub mod metrics;
pub mod model;
pub mod smiles;
pub mod tensor;
pub mod train;

use thiserror::Error;

pub use data::{DataError, FeatureCache, FoldSplit, InteractionRecord, SplitScheme};
pub use features::{FeatureError, FeatureSet, FeaturizerConfig, SegmentMatrix, SegmentOrigin, ViewKind};
pub use interpret::{Explanation, InterpretError, ScreenReport};
pub use metrics::{MetricsError, MetricsReport, MetricsRow};
pub use model::{JovaModel, ModelConfig, ModelError, NormKind};
pub use smiles::{parse_smiles, MolecularGraph, SmilesError};
pub use tensor::{Checkpoint, CheckpointError, TensorError};
pub use train::{TrainConfig, TrainSummary};

/// Any error the pipeline can raise.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Smiles(#[from] SmilesError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Interpret(#[from] InterpretError),
}

impl Error {
    /// True for diverging losses, parameters or predictions.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Tensor(TensorError::NumericalOverflow(_))
                | Error::Model(ModelError::Tensor(TensorError::NumericalOverflow(_)))
                | Error::Interpret(InterpretError::Model(ModelError::Tensor(TensorError::NumericalOverflow(_))))
        )
    }
}
