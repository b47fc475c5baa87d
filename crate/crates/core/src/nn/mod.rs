//! Minimal tensor autograd and Transformer layers used by the vision and
//! generator models.

pub mod graph;
pub mod layers;
pub mod optim;
pub mod params;
pub mod positional;

pub use graph::{softmax_rows, Gradients, Graph, Var};
pub use params::{ParamBlob, ParamId, ParamStore};
pub use positional::sinusoidal_positions;
