//! Lowering: translate an analyzed program into a serializable, executable
//! task-program artifact — codelets with marshalling plans and kernel IR,
//! embedded device-kernel sources, and the main-procedure op sequence.

pub mod artifact;
pub mod embed;
pub mod expr;
pub mod ir;
pub mod lower;

pub use artifact::*;
pub use lower::lower_program;

