//! Double dueling deep Q-network stack: a small tensor/network core with
//! hand-derived gradients, experience replay, the dueling double-Q agent, a
//! frame preprocessing pipeline and a deterministic slingshot environment.

pub mod env;
pub mod nn;
pub mod qnet;
pub mod replay;
pub mod train;
pub mod vision;
