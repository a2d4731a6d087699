//! Dense matrix arithmetic, learnable parameters with reverse-mode gradient
//! accumulation, the Adam optimizer, the step-decay schedule, and the
//! finite-difference gradient-check harness.

mod gradcheck;
mod matrix;
mod optim;
mod param;
mod tape;

pub use gradcheck::{grad_check, GradCheckEntry, GradCheckReport};
pub use matrix::{dot, Matrix};
pub use optim::{adam_step, steplr, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use param::{ParamId, ParamSet, Parameter};
pub use tape::{BackwardCtx, GradTape, NodeId, TapeOp};
