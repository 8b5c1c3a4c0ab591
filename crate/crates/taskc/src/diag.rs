//! Diagnostics: structured warnings and errors with stable codes.
//!
//! Every diagnostic carries a location, a severity, a stable machine-readable
//! code, and a human-readable message. Output order is deterministic: sorted
//! by (file, line, column), with code and message as tie-breakers so repeated
//! runs on the same input produce byte-identical output.

use crate::loc::Loc;
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Error,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Severity::Warning => write!(f, "warning"),
            Severity::Error => write!(f, "error"),
        }
    }
}

/// Stable diagnostic codes. These are part of the tool's interface: tests and
/// downstream consumers match on them, so existing codes must not be renamed.
#[allow(non_camel_case_types)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Code {
    // Lexing / parsing
    E_LEX,
    E_PARSE,
    // Task and implementation declarations
    E_TASK_ON_NONFUNCTION,
    E_TASK_RETURN_TYPE,
    E_SIG_MISMATCH,
    E_BAD_TARGET,
    E_DUP_IMPL,
    E_NO_IMPL,
    E_AMBIGUOUS_CPU_IMPL,
    E_IMPL_UNDEFINED,
    E_UNKNOWN_TASK,
    E_BAD_KERNEL_BINDING,
    // Parameters and access modes
    E_CONST_OUTPUT,
    E_OUTPUT_ON_SCALAR,
    E_SCALAR_TOO_WIDE,
    E_PARAM_TYPE,
    // Attribute placement
    E_ATTR_CONTEXT,
    E_ATTR_ARGS,
    E_IMPL_CALLED,
    E_REG_TYPE,
    // Registration and scoped variables
    E_UNDECLARED,
    E_REG_NO_SIZE,
    E_SCOPED_NOT_ARRAY,
    E_PRAGMA_POSITION,
    E_DUPLICATE_NAME,
    E_CALL_ARITY,
    E_CALL_ARG,
    E_CALL_CONTEXT,
    W_AUTO_STORAGE,
    // OpenCL interoperability
    W_OPENCL_TYPE,
    // Dataflow registration check
    W_UNREGISTERED,
    // Lowering
    E_LOWER,
    E_KERNEL_FILE,
    E_KERNEL_NOT_FOUND,
    E_KERNEL_SIG,
}

impl fmt::Display for Code {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub code: Code,
    pub file: String,
    pub line: u32,
    pub col: u32,
    pub message: String,
}

impl Diagnostic {
    pub fn error(code: Code, loc: &Loc, message: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Error,
            code,
            file: loc.file.to_string(),
            line: loc.line,
            col: loc.col,
            message: message.into(),
        }
    }

    pub fn warning(code: Code, loc: &Loc, message: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Warning,
            code,
            file: loc.file.to_string(),
            line: loc.line,
            col: loc.col,
            message: message.into(),
        }
    }

    /// The canonical single-line rendering: `file:line:col: severity: message`.
    pub fn render(&self) -> String {
        format!("{}:{}:{}: {}: {}", self.file, self.line, self.col, self.severity, self.message)
    }
}

/// Sort diagnostics into the canonical emission order.
pub fn sort_diagnostics(diags: &mut [Diagnostic]) {
    diags.sort_by(|a, b| {
        (&a.file, a.line, a.col, a.code, &a.message).cmp(&(&b.file, b.line, b.col, b.code, &b.message))
    });
}

/// True when any diagnostic in the batch is an error.
pub fn has_errors(diags: &[Diagnostic]) -> bool {
    diags.iter().any(|d| d.severity == Severity::Error)
}
