//! Differentiable building blocks with explicit forward/backward passes.

pub mod gate;
pub mod geu;
pub mod maxpool;
pub mod netvlad;

pub use gate::GateHead;
pub use geu::{GatedEmbeddingUnit, GeuCache, GeuGrads};
pub use maxpool::{maxpool_backward, maxpool_forward, MaxPoolOutput};
pub use netvlad::{NetVladAggregator, NetVladCache, NetVladGrads};
