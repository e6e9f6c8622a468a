//! Video representations: the keyframe-conditioned decoder (`dnerv`), the
//! time-only baseline (`nerv`), their shared configuration, parameter storage
//! and checkpoint format.

mod checkpoint;
mod config;
pub mod dnerv;
pub mod nerv;
mod params;
pub mod pe;
mod registry;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use config::ModelConfig;
pub use params::{Bound, ParamStore};
pub use registry::{DNerv, ModelInput, ModelRegistry, Nerv, Representation};

use crate::tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid config `{field}`: {reason}")]
    Config { field: &'static str, reason: String },
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("stage {stage}: {source}")]
    Stage {
        stage: usize,
        #[source]
        source: TensorError,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("time index {0} is outside [0, 1]")]
    TimeOutOfRange(f64),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("unknown model variant `{0}`")]
    UnknownVariant(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

/// Gradient check of a model-level scalar function over every parameter of
/// `store`.
#[cfg(test)]
pub(crate) fn grad_check_params<F>(store: &ParamStore<f64>, f: F) -> f64
where
    F: Fn(&mut crate::tensor::Tape<f64>, &Bound) -> Result<crate::tensor::Var>,
{
    let names: Vec<String> = store.iter().map(|(n, _)| n.to_string()).collect();
    let values: Vec<_> = store.iter().map(|(_, t)| t.clone()).collect();
    crate::tensor::grad_check(
        |tape, vars| {
            let bound = Bound::from_pairs(names.iter().cloned().zip(vars.iter().copied()).collect());
            f(tape, &bound).map_err(|e| TensorError::InvalidArgument {
                op: "model",
                reason: e.to_string(),
            })
        },
        &values,
        1e-6,
    )
    .expect("gradient check")
}
