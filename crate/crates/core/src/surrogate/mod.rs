//! Variational GP surrogate over latent utilities.

mod checkpoint;
mod elbo;
mod fit;
mod kernel;
mod model;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use elbo::{gradient_check, GradientEntry};
pub use fit::{fit, FitOptions, FitTrace, TrainingConfig};
pub use kernel::{kernel_matrix, KernelParams, OUTPUT_SCALE};
pub use model::{
    inv_softplus, softplus, GammaPrior, Posterior, SurrogateModel, VariationalState,
    DEFAULT_JITTER,
};
