//! Embedding of device-kernel sources into the artifact.
//!
//! A bound kernel file is read at compile time, relative to the directory of
//! the program source. Its full text is captured byte-for-byte in the
//! artifact, the named kernel's signature is checked against the task, and
//! the body is compiled to IR so the program no longer needs the file at run
//! time.

use std::path::Path;

use crate::diag::{Code, Diagnostic};
use crate::frontend::ast::{Item, Param};
use crate::frontend::{self};
use crate::lowering::artifact::EmbeddedKernel;
use crate::lowering::lower::lower_fn_ir;
use crate::sema::types::TargetConfig;
use crate::sema::{KernelBinding, TaskDecl};

/// Read, check, and compile the kernel a binding names.
pub fn embed_kernel(
    binding: &KernelBinding,
    task: &TaskDecl,
    src_dir: &Path,
    cfg: &TargetConfig,
) -> Result<EmbeddedKernel, Diagnostic> {
    let path = src_dir.join(&binding.file);
    let source_text = std::fs::read_to_string(&path).map_err(|_| {
        Diagnostic::error(
            Code::E_KERNEL_FILE,
            &binding.loc,
            format!("kernel file not found: '{}'", binding.file),
        )
    })?;

    let tu = frontend::parse(&source_text, &binding.file).map_err(|e| {
        Diagnostic::error(
            Code::E_PARSE,
            &e.loc,
            format!("expected {}, found {}", e.expected.join(" or "), e.found),
        )
    })?;

    let kfn = tu
        .items
        .iter()
        .find_map(|it| match it {
            Item::Function(f)
                if f.name == binding.kernel && f.is_cl_kernel && f.body.is_some() =>
            {
                Some(f)
            }
            _ => None,
        })
        .ok_or_else(|| {
            Diagnostic::error(
                Code::E_KERNEL_NOT_FOUND,
                &binding.loc,
                format!("kernel '{}' not found in '{}'", binding.kernel, binding.file),
            )
        })?;

    check_signature(&kfn.params, task, binding)?;

    let body = kfn.body.as_ref().expect("kernel body");
    let ir = lower_fn_ir(&kfn.params, body, cfg, true, &binding.loc)?;
    Ok(EmbeddedKernel {
        source_text,
        kernel_name: binding.kernel.clone(),
        group_size: binding.group_size,
        ir,
    })
}

/// Parameter-for-parameter compatibility between the kernel and the task:
/// same count, buffers line up with buffers, and base types match by name.
/// Constness is a host-side access-mode concern and is ignored here.
fn check_signature(
    kparams: &[Param],
    task: &TaskDecl,
    binding: &KernelBinding,
) -> Result<(), Diagnostic> {
    let sig_err = |msg: String| Diagnostic::error(Code::E_KERNEL_SIG, &binding.loc, msg);
    if kparams.len() != task.params.len() {
        return Err(sig_err(format!(
            "kernel '{}' takes {} parameters but task '{}' has {}",
            binding.kernel,
            kparams.len(),
            task.name,
            task.params.len(),
        )));
    }
    for (i, (kp, tp)) in kparams.iter().zip(&task.params).enumerate() {
        let shapes_match = kp.ty.is_pointer_or_array() == tp.ty.is_pointer_or_array();
        let bases_match = kp.ty.base == tp.ty.base;
        if !shapes_match || !bases_match {
            return Err(sig_err(format!(
                "parameter {} of kernel '{}' has type '{}' but task '{}' expects '{}'",
                i + 1,
                binding.kernel,
                kp.ty.c_render(),
                task.name,
                tp.ty.c_render(),
            )));
        }
    }
    Ok(())
}
