//! Minimal dense-network substrate: parameters, forward/backward, Adam.

mod adam;
mod net;
mod params;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use net::{
    argmax, Activation, HeadInit, HeadKind, Loss, MlpSpec, MultiHeadNet, NetGradients, Targets,
};
pub use params::{Block, Gradients, ParamVector};
