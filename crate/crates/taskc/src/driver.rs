//! The compile pipeline: parse, analyze, check registration dataflow, lower.
//!
//! Produces a [`TaskProgram`] artifact plus the full diagnostic batch in
//! canonical order. Lowering is skipped when analysis reported errors, and a
//! failed lowering yields diagnostics instead of an artifact.

use std::path::Path;

use crate::dataflow;
use crate::diag::{self, Code, Diagnostic};
use crate::frontend::{parse, ParseError};
use crate::lowering::artifact::TaskProgram;
use crate::lowering::lower_program;
use crate::sema::{analyze, types::TargetConfig};

/// Knobs that change what the pipeline accepts or checks.
#[derive(Debug, Clone)]
pub struct CompileOptions {
    pub target: TargetConfig,
    /// Run the may-be-unregistered dataflow check (on by default).
    pub registration_check: bool,
}

impl Default for CompileOptions {
    fn default() -> Self {
        CompileOptions { target: TargetConfig::default(), registration_check: true }
    }
}

/// What a compile attempt produced: an artifact when everything error-free,
/// and always the diagnostics, sorted for emission.
#[derive(Debug)]
pub struct CompileOutcome {
    pub program: Option<TaskProgram>,
    pub diagnostics: Vec<Diagnostic>,
}

impl CompileOutcome {
    pub fn has_errors(&self) -> bool {
        diag::has_errors(&self.diagnostics)
    }
}

fn parse_error_to_diag(e: &ParseError) -> Diagnostic {
    Diagnostic::error(
        Code::E_PARSE,
        &e.loc,
        format!("expected {}, found {}", e.expected.join(" or "), e.found),
    )
}

/// Compile source text. `file` names the input in locations and metadata;
/// `src_dir` anchors relative kernel-file references.
pub fn compile_source(
    src: &str,
    file: &str,
    src_dir: &Path,
    opts: &CompileOptions,
) -> CompileOutcome {
    let tu = match parse(src, file) {
        Ok(tu) => tu,
        Err(e) => {
            return CompileOutcome { program: None, diagnostics: vec![parse_error_to_diag(&e)] };
        }
    };
    let (model, mut diagnostics) = analyze(&tu, &opts.target);
    if opts.registration_check {
        diagnostics.extend(dataflow::check_unit(&model));
    }
    let program = if diag::has_errors(&diagnostics) {
        None
    } else {
        match lower_program(&model, file, src_dir) {
            Ok(p) => Some(p),
            Err(mut more) => {
                diagnostics.append(&mut more);
                None
            }
        }
    };
    diag::sort_diagnostics(&mut diagnostics);
    CompileOutcome { program, diagnostics }
}

/// Compile a file from disk. I/O problems are reported as `Err` — they are
/// environment failures, not source diagnostics.
pub fn compile_file(path: &Path, opts: &CompileOptions) -> Result<CompileOutcome, String> {
    let src = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read '{}': {e}", path.display()))?;
    let file = path.to_string_lossy().into_owned();
    let src_dir = path.parent().unwrap_or_else(|| Path::new("."));
    Ok(compile_source(&src, &file, src_dir, opts))
}
