//! Kernel intermediate representation: a small register machine with typed
//! loads/stores over buffer parameters, arithmetic, structured loops and
//! branches, and a `global_id` intrinsic for device kernels.
//!
//! The IR is the executable form of implementation bodies inside the
//! simulator. Its semantics are deliberately closed and deterministic:
//! integer arithmetic wraps modulo the width of the operation's scalar type,
//! floats use standard IEEE single/double precision, conversions follow C
//! value-preserving/truncating rules, and integer division by zero faults.

use serde::{Deserialize, Serialize};

use crate::frontend::ast::BaseType;
use crate::sema::types::TargetConfig;

// ── Scalar types and values ──────────────────────────────────────────────────

/// Machine-level scalar type: width, signedness, and float-ness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalarTy {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    I64,
    U64,
    F32,
    F64,
}

impl ScalarTy {
    /// Lowercase name matching the serialized form ("i32", "f64", …).
    pub fn name(&self) -> &'static str {
        match self {
            ScalarTy::I8 => "i8",
            ScalarTy::U8 => "u8",
            ScalarTy::I16 => "i16",
            ScalarTy::U16 => "u16",
            ScalarTy::I32 => "i32",
            ScalarTy::U32 => "u32",
            ScalarTy::I64 => "i64",
            ScalarTy::U64 => "u64",
            ScalarTy::F32 => "f32",
            ScalarTy::F64 => "f64",
        }
    }

    pub fn width(&self) -> u32 {
        match self {
            ScalarTy::I8 | ScalarTy::U8 => 1,
            ScalarTy::I16 | ScalarTy::U16 => 2,
            ScalarTy::I32 | ScalarTy::U32 | ScalarTy::F32 => 4,
            ScalarTy::I64 | ScalarTy::U64 | ScalarTy::F64 => 8,
        }
    }

    pub fn is_float(&self) -> bool {
        matches!(self, ScalarTy::F32 | ScalarTy::F64)
    }

    pub fn is_signed(&self) -> bool {
        matches!(self, ScalarTy::I8 | ScalarTy::I16 | ScalarTy::I32 | ScalarTy::I64)
    }

    /// Map a C base type to its machine scalar type under a target
    /// configuration. `Void` has no scalar type.
    pub fn from_base(base: BaseType, cfg: &TargetConfig) -> Option<ScalarTy> {
        let width = cfg.scalar_width(base);
        if width == 0 {
            return None;
        }
        if matches!(base, BaseType::Float) {
            return Some(ScalarTy::F32);
        }
        if matches!(base, BaseType::Double) {
            return Some(ScalarTy::F64);
        }
        let signed = cfg.base_is_signed(base);
        Some(match (width, signed) {
            (1, true) => ScalarTy::I8,
            (1, false) => ScalarTy::U8,
            (2, true) => ScalarTy::I16,
            (2, false) => ScalarTy::U16,
            (4, true) => ScalarTy::I32,
            (4, false) => ScalarTy::U32,
            (8, true) => ScalarTy::I64,
            _ => ScalarTy::U64,
        })
    }

    /// The scalar type that holds a pointer value on this target.
    pub fn pointer(cfg: &TargetConfig) -> ScalarTy {
        if cfg.pointer_width_bits == 32 {
            ScalarTy::U32
        } else {
            ScalarTy::U64
        }
    }
}

/// A runtime scalar value. Integers are carried sign- or zero-extended to
/// 64 bits; the operation's `ScalarTy` decides how they wrap and compare.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IrValue {
    I64(i64),
    U64(u64),
    F32(f32),
    F64(f64),
}

impl IrValue {
    pub fn to_i64(self) -> i64 {
        match self {
            IrValue::I64(v) => v,
            IrValue::U64(v) => v as i64,
            IrValue::F32(v) => v as i64,
            IrValue::F64(v) => v as i64,
        }
    }

    pub fn to_u64(self) -> u64 {
        match self {
            IrValue::I64(v) => v as u64,
            IrValue::U64(v) => v,
            IrValue::F32(v) => v as u64,
            IrValue::F64(v) => v as u64,
        }
    }

    pub fn to_f32(self) -> f32 {
        match self {
            IrValue::I64(v) => v as f32,
            IrValue::U64(v) => v as f32,
            IrValue::F32(v) => v,
            IrValue::F64(v) => v as f32,
        }
    }

    pub fn to_f64(self) -> f64 {
        match self {
            IrValue::I64(v) => v as f64,
            IrValue::U64(v) => v as f64,
            IrValue::F32(v) => v as f64,
            IrValue::F64(v) => v,
        }
    }

    pub fn is_nonzero(self) -> bool {
        match self {
            IrValue::I64(v) => v != 0,
            IrValue::U64(v) => v != 0,
            IrValue::F32(v) => v != 0.0,
            IrValue::F64(v) => v != 0.0,
        }
    }

    /// Convert to another scalar type with C cast semantics. Integer-to-
    /// integer conversions wrap at the target width; float-to-integer
    /// conversions saturate to the target type's range (NaN becomes 0),
    /// matching Rust's `as`.
    pub fn convert(self, to: ScalarTy) -> IrValue {
        match to {
            ScalarTy::F32 => IrValue::F32(self.to_f32()),
            ScalarTy::F64 => IrValue::F64(self.to_f64()),
            _ => match self {
                IrValue::F32(f) => float_to_int(f as f64, to),
                IrValue::F64(f) => float_to_int(f, to),
                _ if to.is_signed() => IrValue::I64(wrap_signed(self.to_i64(), to)),
                _ => IrValue::U64(wrap_unsigned(self.to_u64(), to)),
            },
        }
    }
}

/// Saturating float-to-integer conversion at the target type's exact range.
fn float_to_int(f: f64, to: ScalarTy) -> IrValue {
    if to.is_signed() {
        let n = match to.width() {
            1 => f as i8 as i64,
            2 => f as i16 as i64,
            4 => f as i32 as i64,
            _ => f as i64,
        };
        IrValue::I64(n)
    } else {
        let n = match to.width() {
            1 => f as u8 as u64,
            2 => f as u16 as u64,
            4 => f as u32 as u64,
            _ => f as u64,
        };
        IrValue::U64(n)
    }
}

fn wrap_signed(v: i64, ty: ScalarTy) -> i64 {
    match ty.width() {
        1 => v as i8 as i64,
        2 => v as i16 as i64,
        4 => v as i32 as i64,
        _ => v,
    }
}

fn wrap_unsigned(v: u64, ty: ScalarTy) -> u64 {
    match ty.width() {
        1 => v as u8 as u64,
        2 => v as u16 as u64,
        4 => v as u32 as u64,
        _ => v,
    }
}

/// Read one scalar of type `ty` from little-endian bytes.
pub fn read_scalar(bytes: &[u8], ty: ScalarTy) -> IrValue {
    let w = ty.width() as usize;
    let mut raw = [0u8; 8];
    raw[..w].copy_from_slice(&bytes[..w]);
    let u = u64::from_le_bytes(raw);
    match ty {
        ScalarTy::F32 => IrValue::F32(f32::from_bits(u as u32)),
        ScalarTy::F64 => IrValue::F64(f64::from_bits(u)),
        _ if ty.is_signed() => IrValue::I64(wrap_signed(u as i64, ty)),
        _ => IrValue::U64(u),
    }
}

/// Write one scalar of type `ty` as little-endian bytes.
pub fn write_scalar(bytes: &mut [u8], ty: ScalarTy, v: IrValue) {
    let w = ty.width() as usize;
    let u = match ty {
        ScalarTy::F32 => v.to_f32().to_bits() as u64,
        ScalarTy::F64 => v.to_f64().to_bits(),
        _ if ty.is_signed() => v.to_i64() as u64,
        _ => v.to_u64(),
    };
    bytes[..w].copy_from_slice(&u.to_le_bytes()[..w]);
}

// ── IR structure ─────────────────────────────────────────────────────────────

pub type Reg = u32;

/// Kind of one kernel parameter: a by-value scalar or a typed buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum IrParamKind {
    Scalar { ty: ScalarTy },
    Buffer { elem: ScalarTy },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrParam {
    pub name: String,
    #[serde(flatten)]
    pub kind: IrParamKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CmpKind {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

/// One register-machine operation. Buffers and scalar parameters are named by
/// their parameter index; `Loop` and `Branch` carry structured bodies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum IrOp {
    Const { dst: Reg, v: IrValue },
    /// Read a scalar parameter's value.
    LoadParam { dst: Reg, param: u32 },
    /// Read a buffer parameter's element count.
    ParamNx { dst: Reg, param: u32 },
    LoadElem { dst: Reg, buf: u32, idx: Reg, ty: ScalarTy },
    StoreElem { buf: u32, idx: Reg, src: Reg, ty: ScalarTy },
    Copy { dst: Reg, src: Reg },
    Neg { dst: Reg, src: Reg, ty: ScalarTy },
    Binary { dst: Reg, kind: BinKind, lhs: Reg, rhs: Reg, ty: ScalarTy },
    Compare { dst: Reg, kind: CmpKind, lhs: Reg, rhs: Reg, ty: ScalarTy },
    Convert { dst: Reg, src: Reg, to: ScalarTy },
    /// `counter = init; while counter < bound { body; counter += 1 }`.
    /// The bound is read once, before the first iteration.
    Loop { counter: Reg, init: Reg, bound: Reg, body: Vec<IrOp> },
    Branch { cond: Reg, then: Vec<IrOp>, r#else: Vec<IrOp> },
    GlobalId { dst: Reg, dim: u32 },
    Return,
}

/// A compiled kernel body: parameter list, register count, and op tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelIR {
    pub params: Vec<IrParam>,
    pub regs: u32,
    pub ops: Vec<IrOp>,
}

impl KernelIR {
    /// Indices (into `params`) of buffer parameters, in order.
    pub fn buffer_params(&self) -> Vec<usize> {
        self.params
            .iter()
            .enumerate()
            .filter(|(_, p)| matches!(p.kind, IrParamKind::Buffer { .. }))
            .map(|(i, _)| i)
            .collect()
    }

    /// Indices (into `params`) of scalar parameters, in order.
    pub fn scalar_params(&self) -> Vec<usize> {
        self.params
            .iter()
            .enumerate()
            .filter(|(_, p)| matches!(p.kind, IrParamKind::Scalar { .. }))
            .map(|(i, _)| i)
            .collect()
    }
}

// ── Static validation ────────────────────────────────────────────────────────

/// Check that no op reads a register that has not been written on every path
/// reaching it, that parameter references are in range and of the right kind,
/// and that `global_id` appears only when permitted.
pub fn validate(ir: &KernelIR, allow_global_id: bool) -> Result<(), String> {
    let mut written = vec![false; ir.regs as usize];
    validate_ops(ir, &ir.ops, &mut written, allow_global_id)
}

fn validate_ops(
    ir: &KernelIR,
    ops: &[IrOp],
    written: &mut Vec<bool>,
    allow_global_id: bool,
) -> Result<(), String> {
    let read = |written: &[bool], r: Reg| -> Result<(), String> {
        if (r as usize) < written.len() && written[r as usize] {
            Ok(())
        } else {
            Err(format!("register r{r} read before being written"))
        }
    };
    let write = |written: &mut Vec<bool>, r: Reg| -> Result<(), String> {
        if (r as usize) < written.len() {
            written[r as usize] = true;
            Ok(())
        } else {
            Err(format!("register r{r} out of range"))
        }
    };
    let buffer = |ir: &KernelIR, p: u32| -> Result<(), String> {
        match ir.params.get(p as usize) {
            Some(param) if matches!(param.kind, IrParamKind::Buffer { .. }) => Ok(()),
            Some(_) => Err(format!("parameter {p} is not a buffer")),
            None => Err(format!("parameter {p} out of range")),
        }
    };
    for op in ops {
        match op {
            IrOp::Const { dst, .. } => write(written, *dst)?,
            IrOp::LoadParam { dst, param } => {
                match ir.params.get(*param as usize) {
                    Some(p) if matches!(p.kind, IrParamKind::Scalar { .. }) => {}
                    Some(_) => return Err(format!("parameter {param} is not a scalar")),
                    None => return Err(format!("parameter {param} out of range")),
                }
                write(written, *dst)?;
            }
            IrOp::ParamNx { dst, param } => {
                buffer(ir, *param)?;
                write(written, *dst)?;
            }
            IrOp::LoadElem { dst, buf, idx, .. } => {
                buffer(ir, *buf)?;
                read(written, *idx)?;
                write(written, *dst)?;
            }
            IrOp::StoreElem { buf, idx, src, .. } => {
                buffer(ir, *buf)?;
                read(written, *idx)?;
                read(written, *src)?;
            }
            IrOp::Copy { dst, src } | IrOp::Convert { dst, src, .. } | IrOp::Neg { dst, src, .. } => {
                read(written, *src)?;
                write(written, *dst)?;
            }
            IrOp::Binary { dst, lhs, rhs, .. } | IrOp::Compare { dst, lhs, rhs, .. } => {
                read(written, *lhs)?;
                read(written, *rhs)?;
                write(written, *dst)?;
            }
            IrOp::Loop { counter, init, bound, body } => {
                read(written, *init)?;
                read(written, *bound)?;
                write(written, *counter)?;
                // Body writes may never happen; validate against a copy and
                // keep only the counter as definitely written afterwards.
                let mut inner = written.clone();
                validate_ops(ir, body, &mut inner, allow_global_id)?;
            }
            IrOp::Branch { cond, then, r#else } => {
                read(written, *cond)?;
                let mut then_w = written.clone();
                validate_ops(ir, then, &mut then_w, allow_global_id)?;
                let mut else_w = written.clone();
                validate_ops(ir, r#else, &mut else_w, allow_global_id)?;
                // A register counts as written after the branch only when
                // both arms write it.
                for i in 0..written.len() {
                    written[i] = written[i] || (then_w[i] && else_w[i]);
                }
            }
            IrOp::GlobalId { dst, dim } => {
                if !allow_global_id {
                    return Err("global_id used outside a device kernel".to_string());
                }
                if *dim != 0 {
                    return Err(format!("global_id dimension {dim} is not supported"));
                }
                write(written, *dst)?;
            }
            IrOp::Return => {}
        }
    }
    Ok(())
}

// ── Evaluation ───────────────────────────────────────────────────────────────

/// A runtime fault raised during kernel evaluation. `op_index` is the static
/// pre-order index of the faulting op within the kernel's op tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum KernelFault {
    OutOfBounds { buf: u32, idx: i64, nx: u64, op_index: usize },
    DivByZero { op_index: usize },
    MissingGlobalId { op_index: usize },
}

impl std::fmt::Display for KernelFault {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KernelFault::OutOfBounds { buf, idx, nx, op_index } => write!(
                f,
                "buffer {buf} index {idx} out of bounds (0..{nx}) at op {op_index}"
            ),
            KernelFault::DivByZero { op_index } => {
                write!(f, "integer division by zero at op {op_index}")
            }
            KernelFault::MissingGlobalId { op_index } => {
                write!(f, "global_id evaluated outside a work item at op {op_index}")
            }
        }
    }
}

enum Flow {
    Normal,
    Return,
}

struct Eval<'a, 'b> {
    regs: Vec<IrValue>,
    /// Scalar argument per parameter index (None for buffers).
    scalars: Vec<Option<IrValue>>,
    /// Buffer-arena index per parameter index (None for scalars).
    buf_of_param: Vec<Option<usize>>,
    buffers: &'a mut [&'b mut [u8]],
    nx: &'a [u64],
    global_id: Option<u64>,
}

/// Execute a kernel body. `scalar_args` follow scalar-parameter order;
/// `buffers` and `nx` follow buffer-parameter order. `global_id` is set per
/// work item for device kernels and absent in loop mode.
pub fn eval(
    ir: &KernelIR,
    scalar_args: &[IrValue],
    buffers: &mut [&mut [u8]],
    nx: &[u64],
    global_id: Option<u64>,
) -> Result<(), KernelFault> {
    let mut scalars = vec![None; ir.params.len()];
    let mut buf_of_param = vec![None; ir.params.len()];
    let mut next_scalar = 0;
    let mut next_buffer = 0;
    for (i, p) in ir.params.iter().enumerate() {
        match p.kind {
            IrParamKind::Scalar { .. } => {
                scalars[i] = Some(scalar_args[next_scalar]);
                next_scalar += 1;
            }
            IrParamKind::Buffer { .. } => {
                buf_of_param[i] = Some(next_buffer);
                next_buffer += 1;
            }
        }
    }
    debug_assert_eq!(next_buffer, buffers.len());
    debug_assert_eq!(next_buffer, nx.len());
    let mut ev = Eval {
        regs: vec![IrValue::I64(0); ir.regs as usize],
        scalars,
        buf_of_param,
        buffers,
        nx,
        global_id,
    };
    ev.run(&ir.ops, 0).map(|_| ())
}

impl<'a, 'b> Eval<'a, 'b> {
    fn run(&mut self, ops: &[IrOp], base_index: usize) -> Result<Flow, KernelFault> {
        let mut index = base_index;
        for op in ops {
            let op_index = index;
            index += op_tree_size(op);
            match op {
                IrOp::Const { dst, v } => self.regs[*dst as usize] = *v,
                IrOp::LoadParam { dst, param } => {
                    self.regs[*dst as usize] =
                        self.scalars[*param as usize].expect("scalar parameter");
                }
                IrOp::ParamNx { dst, param } => {
                    let b = self.buf_of_param[*param as usize].expect("buffer parameter");
                    self.regs[*dst as usize] = IrValue::U64(self.nx[b]);
                }
                IrOp::LoadElem { dst, buf, idx, ty } => {
                    let off = self.elem_offset(*buf, *idx, *ty, op_index)?;
                    let b = self.buf_of_param[*buf as usize].expect("buffer parameter");
                    self.regs[*dst as usize] = read_scalar(&self.buffers[b][off..], *ty);
                }
                IrOp::StoreElem { buf, idx, src, ty } => {
                    let off = self.elem_offset(*buf, *idx, *ty, op_index)?;
                    let v = self.regs[*src as usize];
                    let b = self.buf_of_param[*buf as usize].expect("buffer parameter");
                    write_scalar(&mut self.buffers[b][off..], *ty, v);
                }
                IrOp::Copy { dst, src } => self.regs[*dst as usize] = self.regs[*src as usize],
                IrOp::Neg { dst, src, ty } => {
                    let v = self.regs[*src as usize];
                    self.regs[*dst as usize] = match ty {
                        ScalarTy::F32 => IrValue::F32(-v.to_f32()),
                        ScalarTy::F64 => IrValue::F64(-v.to_f64()),
                        t if t.is_signed() => {
                            IrValue::I64(wrap_signed(0i64.wrapping_sub(v.to_i64()), *t))
                        }
                        t => IrValue::U64(wrap_unsigned(0u64.wrapping_sub(v.to_u64()), *t)),
                    };
                }
                IrOp::Binary { dst, kind, lhs, rhs, ty } => {
                    let l = self.regs[*lhs as usize];
                    let r = self.regs[*rhs as usize];
                    self.regs[*dst as usize] = binary(*kind, l, r, *ty, op_index)?;
                }
                IrOp::Compare { dst, kind, lhs, rhs, ty } => {
                    let l = self.regs[*lhs as usize];
                    let r = self.regs[*rhs as usize];
                    self.regs[*dst as usize] = IrValue::I64(compare(*kind, l, r, *ty) as i64);
                }
                IrOp::Convert { dst, src, to } => {
                    self.regs[*dst as usize] = self.regs[*src as usize].convert(*to);
                }
                IrOp::Loop { counter, init, bound, body } => {
                    let mut c = self.regs[*init as usize].to_i64();
                    let bound_v = self.regs[*bound as usize].to_i64();
                    self.regs[*counter as usize] = IrValue::I64(c);
                    while c < bound_v {
                        if let Flow::Return = self.run(body, op_index + 1)? {
                            return Ok(Flow::Return);
                        }
                        c += 1;
                        self.regs[*counter as usize] = IrValue::I64(c);
                    }
                }
                IrOp::Branch { cond, then, r#else } => {
                    let taken = self.regs[*cond as usize].is_nonzero();
                    let arm_base =
                        if taken { op_index + 1 } else { op_index + 1 + ops_tree_size(then) };
                    let arm = if taken { then } else { r#else };
                    if let Flow::Return = self.run(arm, arm_base)? {
                        return Ok(Flow::Return);
                    }
                }
                IrOp::GlobalId { dst, .. } => match self.global_id {
                    Some(id) => self.regs[*dst as usize] = IrValue::U64(id),
                    None => return Err(KernelFault::MissingGlobalId { op_index }),
                },
                IrOp::Return => return Ok(Flow::Return),
            }
        }
        Ok(Flow::Normal)
    }

    fn elem_offset(
        &self,
        buf: u32,
        idx_reg: Reg,
        ty: ScalarTy,
        op_index: usize,
    ) -> Result<usize, KernelFault> {
        let b = self.buf_of_param[buf as usize].expect("buffer parameter");
        let idx = self.regs[idx_reg as usize].to_i64();
        let nx = self.nx[b];
        let w = ty.width() as u64;
        if idx < 0 || (idx as u64) >= nx || (idx as u64 + 1) * w > self.buffers[b].len() as u64 {
            return Err(KernelFault::OutOfBounds { buf, idx, nx, op_index });
        }
        Ok(idx as usize * w as usize)
    }
}

fn binary(
    op: BinKind,
    l: IrValue,
    r: IrValue,
    ty: ScalarTy,
    op_index: usize,
) -> Result<IrValue, KernelFault> {
    if ty == ScalarTy::F32 {
        let (a, b) = (l.to_f32(), r.to_f32());
        return Ok(IrValue::F32(match op {
            BinKind::Add => a + b,
            BinKind::Sub => a - b,
            BinKind::Mul => a * b,
            BinKind::Div => a / b,
        }));
    }
    if ty == ScalarTy::F64 {
        let (a, b) = (l.to_f64(), r.to_f64());
        return Ok(IrValue::F64(match op {
            BinKind::Add => a + b,
            BinKind::Sub => a - b,
            BinKind::Mul => a * b,
            BinKind::Div => a / b,
        }));
    }
    if ty.is_signed() {
        let (a, b) = (l.to_i64(), r.to_i64());
        let v = match op {
            BinKind::Add => a.wrapping_add(b),
            BinKind::Sub => a.wrapping_sub(b),
            BinKind::Mul => a.wrapping_mul(b),
            BinKind::Div => {
                if b == 0 {
                    return Err(KernelFault::DivByZero { op_index });
                }
                a.wrapping_div(b)
            }
        };
        Ok(IrValue::I64(wrap_signed(v, ty)))
    } else {
        let (a, b) = (l.to_u64(), r.to_u64());
        let v = match op {
            BinKind::Add => a.wrapping_add(b),
            BinKind::Sub => a.wrapping_sub(b),
            BinKind::Mul => a.wrapping_mul(b),
            BinKind::Div => {
                if b == 0 {
                    return Err(KernelFault::DivByZero { op_index });
                }
                a / b
            }
        };
        Ok(IrValue::U64(wrap_unsigned(v, ty)))
    }
}

fn compare(op: CmpKind, l: IrValue, r: IrValue, ty: ScalarTy) -> bool {
    use std::cmp::Ordering;
    let ord = if ty == ScalarTy::F32 {
        l.to_f32().partial_cmp(&r.to_f32())
    } else if ty == ScalarTy::F64 {
        l.to_f64().partial_cmp(&r.to_f64())
    } else if ty.is_signed() {
        Some(l.to_i64().cmp(&r.to_i64()))
    } else {
        Some(l.to_u64().cmp(&r.to_u64()))
    };
    match (op, ord) {
        (CmpKind::Ne, None) => true,
        (_, None) => false,
        (CmpKind::Lt, Some(o)) => o == Ordering::Less,
        (CmpKind::Le, Some(o)) => o != Ordering::Greater,
        (CmpKind::Gt, Some(o)) => o == Ordering::Greater,
        (CmpKind::Ge, Some(o)) => o != Ordering::Less,
        (CmpKind::Eq, Some(o)) => o == Ordering::Equal,
        (CmpKind::Ne, Some(o)) => o != Ordering::Equal,
    }
}

/// Number of nodes in one op's subtree (the op itself plus nested bodies);
/// used to assign stable pre-order indices for fault reporting.
fn op_tree_size(op: &IrOp) -> usize {
    match op {
        IrOp::Loop { body, .. } => 1 + ops_tree_size(body),
        IrOp::Branch { then, r#else, .. } => 1 + ops_tree_size(then) + ops_tree_size(r#else),
        _ => 1,
    }
}

fn ops_tree_size(ops: &[IrOp]) -> usize {
    ops.iter().map(op_tree_size).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scale_ir() -> KernelIR {
        // loop i in 0..size: vector[i] = vector[i] * factor
        KernelIR {
            params: vec![
                IrParam { name: "size".into(), kind: IrParamKind::Scalar { ty: ScalarTy::I32 } },
                IrParam { name: "vector".into(), kind: IrParamKind::Buffer { elem: ScalarTy::F32 } },
                IrParam { name: "factor".into(), kind: IrParamKind::Scalar { ty: ScalarTy::F32 } },
            ],
            regs: 6,
            ops: vec![
                IrOp::Const { dst: 0, v: IrValue::I64(0) },
                IrOp::LoadParam { dst: 1, param: 0 },
                IrOp::Loop {
                    counter: 2,
                    init: 0,
                    bound: 1,
                    body: vec![
                        IrOp::LoadElem { dst: 3, buf: 1, idx: 2, ty: ScalarTy::F32 },
                        IrOp::LoadParam { dst: 4, param: 2 },
                        IrOp::Binary {
                            dst: 5,
                            kind: BinKind::Mul,
                            lhs: 3,
                            rhs: 4,
                            ty: ScalarTy::F32,
                        },
                        IrOp::StoreElem { buf: 1, idx: 2, src: 5, ty: ScalarTy::F32 },
                    ],
                },
            ],
        }
    }

    fn f32_buffer(values: &[f32]) -> Vec<u8> {
        values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    fn read_f32s(bytes: &[u8]) -> Vec<f32> {
        bytes.chunks(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect()
    }

    #[test]
    fn scale_loop_multiplies_every_element() {
        let ir = scale_ir();
        validate(&ir, false).unwrap();
        let mut buf = f32_buffer(&[1.0, 2.0, 3.0]);
        let mut bufs: Vec<&mut [u8]> = vec![&mut buf];
        eval(
            &ir,
            &[IrValue::I64(3), IrValue::F32(3.14)],
            &mut bufs,
            &[3],
            None,
        )
        .unwrap();
        let got = read_f32s(&buf);
        assert_eq!(got, vec![1.0f32 * 3.14, 2.0f32 * 3.14, 3.0f32 * 3.14]);
    }

    #[test]
    fn loop_with_zero_trip_count_leaves_buffer_untouched() {
        let ir = scale_ir();
        let mut buf = f32_buffer(&[5.0, 6.0]);
        let mut bufs: Vec<&mut [u8]> = vec![&mut buf];
        eval(&ir, &[IrValue::I64(0), IrValue::F32(2.0)], &mut bufs, &[2], None).unwrap();
        assert_eq!(read_f32s(&buf), vec![5.0, 6.0]);
    }

    #[test]
    fn out_of_bounds_access_faults_with_op_index() {
        let ir = KernelIR {
            params: vec![IrParam {
                name: "a".into(),
                kind: IrParamKind::Buffer { elem: ScalarTy::I32 },
            }],
            regs: 2,
            ops: vec![
                IrOp::Const { dst: 0, v: IrValue::I64(4) },
                IrOp::LoadElem { dst: 1, buf: 0, idx: 0, ty: ScalarTy::I32 },
            ],
        };
        let mut buf = vec![0u8; 8];
        let mut bufs: Vec<&mut [u8]> = vec![&mut buf];
        let err = eval(&ir, &[], &mut bufs, &[2], None).unwrap_err();
        assert_eq!(err, KernelFault::OutOfBounds { buf: 0, idx: 4, nx: 2, op_index: 1 });
        assert!(err.to_string().contains("at op 1"));
    }

    #[test]
    fn integer_division_by_zero_faults() {
        let ir = KernelIR {
            params: vec![],
            regs: 3,
            ops: vec![
                IrOp::Const { dst: 0, v: IrValue::I64(7) },
                IrOp::Const { dst: 1, v: IrValue::I64(0) },
                IrOp::Binary { dst: 2, kind: BinKind::Div, lhs: 0, rhs: 1, ty: ScalarTy::I32 },
            ],
        };
        let mut bufs: Vec<&mut [u8]> = vec![];
        let err = eval(&ir, &[], &mut bufs, &[], None).unwrap_err();
        assert_eq!(err, KernelFault::DivByZero { op_index: 2 });
    }

    #[test]
    fn float_division_by_zero_is_ieee_infinity() {
        let ir = KernelIR {
            params: vec![IrParam {
                name: "a".into(),
                kind: IrParamKind::Buffer { elem: ScalarTy::F64 },
            }],
            regs: 4,
            ops: vec![
                IrOp::Const { dst: 0, v: IrValue::F64(1.0) },
                IrOp::Const { dst: 1, v: IrValue::F64(0.0) },
                IrOp::Binary { dst: 2, kind: BinKind::Div, lhs: 0, rhs: 1, ty: ScalarTy::F64 },
                IrOp::Const { dst: 3, v: IrValue::I64(0) },
                IrOp::StoreElem { buf: 0, idx: 3, src: 2, ty: ScalarTy::F64 },
            ],
        };
        let mut buf = vec![0u8; 8];
        let mut bufs: Vec<&mut [u8]> = vec![&mut buf];
        eval(&ir, &[], &mut bufs, &[1], None).unwrap();
        let v = f64::from_le_bytes(buf[..8].try_into().unwrap());
        assert!(v.is_infinite() && v > 0.0);
    }

    #[test]
    fn branch_selects_arm_by_condition() {
        let mk = |cond_v: i64| KernelIR {
            params: vec![IrParam {
                name: "a".into(),
                kind: IrParamKind::Buffer { elem: ScalarTy::I64 },
            }],
            regs: 4,
            ops: vec![
                IrOp::Const { dst: 0, v: IrValue::I64(cond_v) },
                IrOp::Const { dst: 3, v: IrValue::I64(0) },
                IrOp::Branch {
                    cond: 0,
                    then: vec![
                        IrOp::Const { dst: 1, v: IrValue::I64(10) },
                        IrOp::StoreElem { buf: 0, idx: 3, src: 1, ty: ScalarTy::I64 },
                    ],
                    r#else: vec![
                        IrOp::Const { dst: 2, v: IrValue::I64(20) },
                        IrOp::StoreElem { buf: 0, idx: 3, src: 2, ty: ScalarTy::I64 },
                    ],
                },
            ],
        };
        for (cond, expect) in [(1i64, 10i64), (0, 20)] {
            let mut buf = vec![0u8; 8];
            let mut bufs: Vec<&mut [u8]> = vec![&mut buf];
            eval(&mk(cond), &[], &mut bufs, &[1], None).unwrap();
            assert_eq!(i64::from_le_bytes(buf[..8].try_into().unwrap()), expect);
        }
    }

    #[test]
    fn global_id_yields_work_item_and_faults_without_one() {
        let ir = KernelIR {
            params: vec![IrParam {
                name: "a".into(),
                kind: IrParamKind::Buffer { elem: ScalarTy::U64 },
            }],
            regs: 2,
            ops: vec![
                IrOp::GlobalId { dst: 0, dim: 0 },
                IrOp::StoreElem { buf: 0, idx: 0, src: 0, ty: ScalarTy::U64 },
            ],
        };
        validate(&ir, true).unwrap();
        assert!(validate(&ir, false).is_err());
        let mut buf = vec![0u8; 32];
        {
            let mut bufs: Vec<&mut [u8]> = vec![&mut buf];
            eval(&ir, &[], &mut bufs, &[4], Some(2)).unwrap();
        }
        assert_eq!(u64::from_le_bytes(buf[16..24].try_into().unwrap()), 2);
        let mut bufs: Vec<&mut [u8]> = vec![&mut buf];
        let err = eval(&ir, &[], &mut bufs, &[4], None).unwrap_err();
        assert_eq!(err, KernelFault::MissingGlobalId { op_index: 0 });
    }

    #[test]
    fn return_stops_evaluation() {
        let ir = KernelIR {
            params: vec![IrParam {
                name: "a".into(),
                kind: IrParamKind::Buffer { elem: ScalarTy::I32 },
            }],
            regs: 2,
            ops: vec![
                IrOp::Const { dst: 0, v: IrValue::I64(0) },
                IrOp::Const { dst: 1, v: IrValue::I64(1) },
                IrOp::StoreElem { buf: 0, idx: 0, src: 1, ty: ScalarTy::I32 },
                IrOp::Return,
                IrOp::Const { dst: 1, v: IrValue::I64(9) },
                IrOp::StoreElem { buf: 0, idx: 0, src: 1, ty: ScalarTy::I32 },
            ],
        };
        let mut buf = vec![0u8; 4];
        let mut bufs: Vec<&mut [u8]> = vec![&mut buf];
        eval(&ir, &[], &mut bufs, &[1], None).unwrap();
        assert_eq!(i32::from_le_bytes(buf[..4].try_into().unwrap()), 1);
    }

    #[test]
    fn validator_rejects_read_before_write() {
        let ir = KernelIR {
            params: vec![],
            regs: 2,
            ops: vec![IrOp::Copy { dst: 1, src: 0 }],
        };
        let err = validate(&ir, false).unwrap_err();
        assert!(err.contains("r0"));
    }

    #[test]
    fn validator_requires_both_branch_arms_to_write() {
        // r1 written only in the then-arm, then read after the branch.
        let ir = KernelIR {
            params: vec![],
            regs: 3,
            ops: vec![
                IrOp::Const { dst: 0, v: IrValue::I64(1) },
                IrOp::Branch {
                    cond: 0,
                    then: vec![IrOp::Const { dst: 1, v: IrValue::I64(5) }],
                    r#else: vec![],
                },
                IrOp::Copy { dst: 2, src: 1 },
            ],
        };
        assert!(validate(&ir, false).is_err());
        // Writing in both arms makes the read legal.
        let ok = KernelIR {
            params: vec![],
            regs: 3,
            ops: vec![
                IrOp::Const { dst: 0, v: IrValue::I64(1) },
                IrOp::Branch {
                    cond: 0,
                    then: vec![IrOp::Const { dst: 1, v: IrValue::I64(5) }],
                    r#else: vec![IrOp::Const { dst: 1, v: IrValue::I64(6) }],
                },
                IrOp::Copy { dst: 2, src: 1 },
            ],
        };
        validate(&ok, false).unwrap();
    }

    #[test]
    fn validator_ignores_loop_body_writes_after_the_loop() {
        let ir = KernelIR {
            params: vec![],
            regs: 4,
            ops: vec![
                IrOp::Const { dst: 0, v: IrValue::I64(0) },
                IrOp::Const { dst: 1, v: IrValue::I64(3) },
                IrOp::Loop {
                    counter: 2,
                    init: 0,
                    bound: 1,
                    body: vec![IrOp::Const { dst: 3, v: IrValue::I64(1) }],
                },
                IrOp::Copy { dst: 3, src: 3 },
            ],
        };
        assert!(validate(&ir, false).is_err());
    }

    #[test]
    fn conversions_follow_c_semantics() {
        assert_eq!(IrValue::I64(-1).convert(ScalarTy::U8), IrValue::U64(255));
        assert_eq!(IrValue::I64(300).convert(ScalarTy::I8), IrValue::I64(44));
        assert_eq!(IrValue::F64(3.9).convert(ScalarTy::I32), IrValue::I64(3));
        assert_eq!(IrValue::F64(-3.9).convert(ScalarTy::I32), IrValue::I64(-3));
        assert_eq!(IrValue::I64(-1).convert(ScalarTy::U64), IrValue::U64(u64::MAX));
        assert_eq!(IrValue::I64(3).convert(ScalarTy::F32), IrValue::F32(3.0));
        assert_eq!(IrValue::U64(5).convert(ScalarTy::I64), IrValue::I64(5));
    }

    #[test]
    fn scalar_bytes_round_trip() {
        let cases = [
            (ScalarTy::I8, IrValue::I64(-7)),
            (ScalarTy::U16, IrValue::U64(40000)),
            (ScalarTy::I32, IrValue::I64(-123456)),
            (ScalarTy::U64, IrValue::U64(u64::MAX - 3)),
            (ScalarTy::F32, IrValue::F32(3.14)),
            (ScalarTy::F64, IrValue::F64(-2.718281828)),
        ];
        for (ty, v) in cases {
            let mut bytes = vec![0u8; 8];
            write_scalar(&mut bytes, ty, v);
            assert_eq!(read_scalar(&bytes, ty), v, "{ty:?}");
        }
    }

    #[test]
    fn ir_serialization_round_trips_byte_identically() {
        let ir = KernelIR {
            params: scale_ir().params,
            regs: 8,
            ops: vec![
                IrOp::Const { dst: 0, v: IrValue::F64(2.5) },
                IrOp::Const { dst: 1, v: IrValue::U64(u64::MAX) },
                IrOp::ParamNx { dst: 2, param: 1 },
                IrOp::Convert { dst: 3, src: 2, to: ScalarTy::I64 },
                IrOp::Neg { dst: 4, src: 3, ty: ScalarTy::I64 },
                IrOp::Compare { dst: 5, kind: CmpKind::Le, lhs: 3, rhs: 4, ty: ScalarTy::I64 },
                IrOp::Branch {
                    cond: 5,
                    then: vec![IrOp::Return],
                    r#else: vec![IrOp::GlobalId { dst: 6, dim: 0 }],
                },
                IrOp::Loop { counter: 7, init: 3, bound: 4, body: vec![] },
            ],
        };
        let json = serde_json::to_string(&ir).unwrap();
        let back: KernelIR = serde_json::from_str(&json).unwrap();
        assert_eq!(back, ir);
        assert_eq!(serde_json::to_string(&back).unwrap(), json);
    }

    #[test]
    fn base_type_mapping_tracks_target_config() {
        let cfg64 = TargetConfig::default();
        let cfg32 = TargetConfig::bits32();
        assert_eq!(ScalarTy::from_base(BaseType::Int, &cfg64), Some(ScalarTy::I32));
        assert_eq!(ScalarTy::from_base(BaseType::Long, &cfg64), Some(ScalarTy::I64));
        assert_eq!(ScalarTy::from_base(BaseType::Long, &cfg32), Some(ScalarTy::I32));
        assert_eq!(ScalarTy::from_base(BaseType::SizeT, &cfg64), Some(ScalarTy::U64));
        assert_eq!(ScalarTy::from_base(BaseType::SizeT, &cfg32), Some(ScalarTy::U32));
        assert_eq!(ScalarTy::from_base(BaseType::Char, &cfg64), Some(ScalarTy::I8));
        let unsigned_char = TargetConfig { char_signed: false, ..cfg64 };
        assert_eq!(ScalarTy::from_base(BaseType::Char, &unsigned_char), Some(ScalarTy::U8));
        assert_eq!(ScalarTy::from_base(BaseType::Void, &cfg64), None);
        assert_eq!(ScalarTy::pointer(&cfg64), ScalarTy::U64);
        assert_eq!(ScalarTy::pointer(&cfg32), ScalarTy::U32);
    }
}
