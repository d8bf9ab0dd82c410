//! A small CPU neural-network engine: tensors, layers, graphs, optimizers.

pub mod gemm;
pub mod graph;
pub mod init;
pub mod io;
pub mod layers;
pub mod optim;
pub mod tensor;

pub use graph::{Graph, GraphBuilder, LayerGroup, LayerInfo, NodeId, StepOutput};
pub use optim::{Optimizer, OptimizerKind};
pub use tensor::Tensor;
