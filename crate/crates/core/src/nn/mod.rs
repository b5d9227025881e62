//! Dense network numerics: layers, forward/backward, Adam, loss and the
//! parameter container used for checkpoints and parameter exchange.

pub mod adam;
pub mod layer;
pub mod loss;
pub mod mlp;
pub mod params;

pub use adam::AdamState;
pub use layer::{Activation, DenseLayer};
pub use loss::mse_loss;
pub use mlp::{LayerGrads, Mlp, MlpGrads, Mode, Tape};
pub use params::{NamedTensor, ParamSet};
