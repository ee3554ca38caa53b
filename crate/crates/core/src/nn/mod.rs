//! Dense network stack: MLP with ReLU hidden layers, softmax policy head,
//! first-order optimizers and a binary checkpoint format.

mod checkpoint;
pub mod gradcheck;
mod mlp;
mod optim;
mod softmax;

pub use gradcheck::{gradcheck, GradcheckReport};
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use mlp::{ForwardCache, MlpConfig, MlpParams};
pub use optim::{sgd_step, AdamState};
pub use softmax::{entropy_with_grad, log_softmax, sample_categorical, softmax, softmax_logprob_grad};

pub(crate) fn ensure_finite(xs: &[f64], what: &str) -> crate::Result<()> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(crate::Error::numerical(format!("non-finite {what}")))
    }
}
