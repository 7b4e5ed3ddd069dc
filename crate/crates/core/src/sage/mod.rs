//! GraphSAGE over the dual graph: sampling, layers, losses, gradients and
//! the optimizer, on dense `f64` matrices.

pub mod adam;
pub mod checkpoint;
pub mod config;
pub mod loss;
pub mod model;
pub mod sampling;

pub use adam::{adam_step, AdamConfig, OptimizerState};
pub use checkpoint::{load_model, save_model, Checkpoint};
pub use config::{Activation, Aggregator, SageConfig};
pub use loss::{
    l2_normalize_backward, l2_normalize_rows, supervised_loss, unsupervised_batch_loss,
    unsupervised_loss,
};
pub use model::{aggregate, Dense, ForwardCache, Mode, Output, Parameters, SageLayer, SageModel};
pub use sampling::{
    full_neighborhood, sample_neighborhood, sample_neighborhood_seeded, NeighborSource,
    SampledBlocks,
};

impl SageModel {
    /// Applies one optimizer step with `grads` (same layout as the model).
    pub fn apply_adam(
        &mut self,
        grads: &Parameters,
        state: &mut OptimizerState,
    ) -> crate::Result<()> {
        let g = grads.slices();
        let mut p = self.params_mut().slices_mut();
        adam_step(&mut p, &g, state)
    }
}
