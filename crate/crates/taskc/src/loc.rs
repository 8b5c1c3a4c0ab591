//! Source locations attached to tokens, AST nodes, and diagnostics.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;

/// A position in an input file. Lines and columns are 1-based; column 0 and
/// line 0 are reserved for synthesized nodes that have no source position.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Loc {
    pub file: Arc<str>,
    pub line: u32,
    pub col: u32,
}

impl Loc {
    pub fn new(file: &Arc<str>, line: u32, col: u32) -> Self {
        Loc { file: Arc::clone(file), line, col }
    }

    /// Location for nodes created by the compiler rather than read from input.
    pub fn synthesized() -> Self {
        Loc { file: Arc::from(""), line: 0, col: 0 }
    }
}

impl fmt::Display for Loc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.file, self.line, self.col)
    }
}
