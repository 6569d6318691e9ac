//! Leaky-integrate-and-fire dynamics, surrogate derivatives, network
//! construction and the forward pass shared by every learning rule and
//! attack.

mod lif;
mod network;
mod surrogate;

pub use lif::{lif_step, LayerParams, LayerState, LifParams};
pub use network::{
    forward, forward_soft, forward_with_mode, init_network, LayerSpec, LayerTrace, Network,
    NetworkConfig, ReadoutMode, SpikeMode,
};
pub use surrogate::{surrogate_grad, SurrogateKind, SurrogateSpec};
