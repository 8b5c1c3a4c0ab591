//! taskc: a compiler and simulation runtime for a C subset with StarPU-style
//! task annotations.
//!
//! The pipeline: [`frontend`] parses annotated C; [`sema`] builds the task /
//! codelet model and diagnoses annotation misuse; [`dataflow`] checks that
//! pointers passed to tasks are registered on every path; [`lowering`]
//! produces a self-contained, serializable program artifact; [`runtime`] and
//! [`sim`] execute that artifact on a simulated heterogeneous machine under
//! a deterministic virtual clock; [`cli`] wires it all into a command-line
//! tool.

pub mod cli;
pub mod dataflow;
pub mod diag;
pub mod driver;
pub mod frontend;
pub mod loc;
pub mod lowering;
pub mod runtime;
pub mod sema;
pub mod sim;
