//! Minimal differentiable network core: a reverse-mode tape over dense 2-D
//! tensors, the layer set the generator/discriminator/classifier
//! architectures need, losses, optimizers, and finite-difference gradient
//! verification.

pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod optim;

pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{bce_with_logits, cross_entropy_logits, par_matmul, Graph, NodeId};
pub use layers::{
    batchnorm, dropout, BnState, Bound, ForwardOpts, GumbelVariant, LayerSpec, Mode, Net, NetSpec,
    ParamStore,
};
pub use optim::{OptimKind, OptimState};
