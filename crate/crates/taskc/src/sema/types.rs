//! Target configuration, scalar widths, parameter-type normalization, access
//! modes, and signature compatibility.

use crate::diag::{Code, Diagnostic};
use crate::frontend::ast::{ArrayDim, Attribute, BaseType, Param, TypeExpr};
use serde::{Deserialize, Serialize};

/// Widths and signedness of the compilation target. Pointer and `long` width
/// may be 32 or 64 bits; `size_t` follows the pointer width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetConfig {
    pub pointer_width_bits: u32,
    pub long_width_bits: u32,
    pub char_signed: bool,
}

impl Default for TargetConfig {
    fn default() -> Self {
        TargetConfig { pointer_width_bits: 64, long_width_bits: 64, char_signed: true }
    }
}

impl TargetConfig {
    pub fn bits32() -> Self {
        TargetConfig { pointer_width_bits: 32, long_width_bits: 32, char_signed: true }
    }

    /// Byte width of a scalar of the given base type on this target.
    pub fn scalar_width(&self, base: BaseType) -> u32 {
        match base {
            BaseType::Void => 0,
            BaseType::Char | BaseType::SignedChar | BaseType::UnsignedChar => 1,
            BaseType::Short | BaseType::UnsignedShort => 2,
            BaseType::Int | BaseType::UnsignedInt => 4,
            BaseType::Long | BaseType::UnsignedLong => self.long_width_bits / 8,
            BaseType::Float => 4,
            BaseType::Double => 8,
            BaseType::SizeT => self.pointer_width_bits / 8,
        }
    }

    pub fn pointer_width(&self) -> u32 {
        self.pointer_width_bits / 8
    }

    pub fn base_is_signed(&self, base: BaseType) -> bool {
        match base {
            BaseType::Char => self.char_signed,
            BaseType::SignedChar
            | BaseType::Short
            | BaseType::Int
            | BaseType::Long
            | BaseType::Float
            | BaseType::Double => true,
            _ => false,
        }
    }
}

/// How a task accesses one of its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AccessMode {
    /// Passed by value; not a buffer.
    ScalarValue,
    /// Read-only buffer.
    R,
    /// Write-only buffer: contents need not be transferred to the task.
    W,
    /// Read-write buffer.
    RW,
}

impl AccessMode {
    pub fn is_buffer(&self) -> bool {
        !matches!(self, AccessMode::ScalarValue)
    }

    pub fn reads(&self) -> bool {
        matches!(self, AccessMode::R | AccessMode::RW)
    }

    pub fn writes(&self) -> bool {
        matches!(self, AccessMode::W | AccessMode::RW)
    }
}

/// Derive the access mode of a task parameter from its type and attributes:
/// scalars are passed by value, unqualified pointers/arrays are read-write,
/// const-qualified ones are read-only, and `output` marks write-only buffers.
pub fn derive_access_mode(param: &Param, cfg: &TargetConfig) -> Result<AccessMode, Diagnostic> {
    let has_output = param.attrs.iter().any(|a| a.name == crate::frontend::ast::AttrName::Output);
    if param.ty.is_pointer_or_array() {
        if has_output && param.ty.is_const {
            return Err(Diagnostic::error(
                Code::E_CONST_OUTPUT,
                &param.loc,
                format!("parameter '{}' cannot be both const-qualified and 'output'", param.name),
            ));
        }
        if has_output {
            return Ok(AccessMode::W);
        }
        if param.ty.is_const {
            return Ok(AccessMode::R);
        }
        return Ok(AccessMode::RW);
    }
    if has_output {
        return Err(Diagnostic::error(
            Code::E_OUTPUT_ON_SCALAR,
            &param.loc,
            format!("'output' attribute on non-pointer parameter '{}'", param.name),
        ));
    }
    let width = cfg.scalar_width(param.ty.base);
    if width > 8 {
        return Err(Diagnostic::error(
            Code::E_SCALAR_TOO_WIDE,
            &param.loc,
            format!("scalar parameter '{}' is wider than 8 bytes and cannot be packed", param.name),
        ));
    }
    Ok(AccessMode::ScalarValue)
}

/// A parameter type reduced to what matters for compatibility: the base type,
/// const-ness of the element/pointee, and levels of indirection, where the
/// outermost array dimension of a parameter counts as one pointer level
/// (C array-to-pointer decay).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NormalizedParam {
    pub base: BaseType,
    pub is_const: bool,
    pub indirection: u32,
}

pub fn normalize_param(ty: &TypeExpr) -> NormalizedParam {
    let decay = if ty.array_dims.is_empty() { 0 } else { 1 };
    NormalizedParam { base: ty.base, is_const: ty.is_const, indirection: ty.pointer_depth + decay }
}

/// Compare a task signature against an implementation signature. Returns the
/// first mismatch as `(position, task type, impl type)`; position `usize::MAX`
/// flags a parameter-count mismatch and 0-width types a return-type mismatch.
pub fn signature_mismatch(
    task_params: &[Param],
    impl_params: &[Param],
) -> Option<(usize, String, String)> {
    if task_params.len() != impl_params.len() {
        return Some((usize::MAX, task_params.len().to_string(), impl_params.len().to_string()));
    }
    for (i, (tp, ip)) in task_params.iter().zip(impl_params).enumerate() {
        if normalize_param(&tp.ty) != normalize_param(&ip.ty) {
            return Some((i, tp.ty.c_render(), ip.ty.c_render()));
        }
    }
    None
}

/// Total element count of a complete (constant-dimensioned) array type, or
/// None when any dimension is missing or symbolic. Multi-dimensional arrays
/// flatten to their element count.
pub fn complete_array_count(ty: &TypeExpr) -> Option<u64> {
    if ty.array_dims.is_empty() || ty.pointer_depth > 0 {
        return None;
    }
    let mut count: u64 = 1;
    for d in &ty.array_dims {
        match d {
            ArrayDim::Const(n) => count = count.checked_mul(*n)?,
            _ => return None,
        }
    }
    Some(count)
}

pub fn has_attr(attrs: &[Attribute], name: &crate::frontend::ast::AttrName) -> bool {
    attrs.iter().any(|a| &a.name == name)
}
