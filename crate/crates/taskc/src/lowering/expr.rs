//! Compilation of expressions and statements into kernel IR.
//!
//! The same compiler serves two environments: task-implementation bodies,
//! where scalar variables live in registers and buffers are kernel
//! parameters, and main-procedure statement fragments, where every program
//! variable is memory-backed (a one-element buffer for scalars, the array or
//! pointee region for aggregates). The environment decides how a name
//! resolves; the compiler handles typing, conversions, control flow, and the
//! canonical counting-loop form.

use crate::diag::{Code, Diagnostic};
use crate::frontend::ast::{
    ArrayDim, AssignOp, BinOp, Block, Expr, ForInit, SizeofArg, Stmt, TypeExpr, UnaryOp, VarDecl,
};
use crate::loc::Loc;
use crate::lowering::ir::{BinKind, CmpKind, IrOp, IrValue, Reg, ScalarTy};
use crate::sema::types::TargetConfig;

// ── Variable environments ────────────────────────────────────────────────────

/// Where a variable's value lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueSlot {
    /// A mutable register (kernel locals, scalar parameters, fragment locals).
    Reg { reg: Reg, ty: ScalarTy },
    /// Element 0 of a one-element buffer parameter (memory-backed scalars).
    Cell { param: u32, ty: ScalarTy },
}

impl ValueSlot {
    pub fn ty(&self) -> ScalarTy {
        match self {
            ValueSlot::Reg { ty, .. } | ValueSlot::Cell { ty, .. } => *ty,
        }
    }
}

/// Name resolution for one compilation environment.
pub trait VarEnv {
    /// Slot holding the variable's scalar value, if it has one.
    fn value_slot(&mut self, name: &str) -> Option<ValueSlot>;

    /// Buffer parameter and element type for indexed access to the variable,
    /// if it denotes a buffer (array, buffer parameter, or pointer target).
    fn elem_slot(&mut self, name: &str) -> Option<(u32, ScalarTy)>;

    /// Bind a new block-scoped scalar local to `reg`. Returns false when the
    /// environment does not support locals.
    fn declare_local(&mut self, name: &str, ty: ScalarTy, reg: Reg) -> bool;

    fn enter_scope(&mut self);
    fn exit_scope(&mut self);
}

// ── Kernel environment ───────────────────────────────────────────────────────

#[derive(Debug, Clone)]
enum KernelBind {
    Value { reg: Reg, ty: ScalarTy },
    Buffer { param: u32, elem: ScalarTy },
}

/// Environment for task-implementation bodies: parameters declared up front,
/// locals in nested scopes, all scalars in registers.
#[derive(Debug, Default)]
pub struct KernelEnv {
    scopes: Vec<std::collections::HashMap<String, KernelBind>>,
}

impl KernelEnv {
    pub fn new() -> KernelEnv {
        KernelEnv { scopes: vec![std::collections::HashMap::new()] }
    }

    /// Bind a scalar parameter's value register.
    pub fn bind_value(&mut self, name: &str, reg: Reg, ty: ScalarTy) {
        self.scopes[0].insert(name.to_string(), KernelBind::Value { reg, ty });
    }

    /// Bind a buffer parameter.
    pub fn bind_buffer(&mut self, name: &str, param: u32, elem: ScalarTy) {
        self.scopes[0].insert(name.to_string(), KernelBind::Buffer { param, elem });
    }

    fn lookup(&self, name: &str) -> Option<&KernelBind> {
        self.scopes.iter().rev().find_map(|s| s.get(name))
    }
}

impl VarEnv for KernelEnv {
    fn value_slot(&mut self, name: &str) -> Option<ValueSlot> {
        match self.lookup(name) {
            Some(KernelBind::Value { reg, ty }) => Some(ValueSlot::Reg { reg: *reg, ty: *ty }),
            _ => None,
        }
    }

    fn elem_slot(&mut self, name: &str) -> Option<(u32, ScalarTy)> {
        match self.lookup(name) {
            Some(KernelBind::Buffer { param, elem }) => Some((*param, *elem)),
            _ => None,
        }
    }

    fn declare_local(&mut self, name: &str, ty: ScalarTy, reg: Reg) -> bool {
        self.scopes
            .last_mut()
            .expect("scope")
            .insert(name.to_string(), KernelBind::Value { reg, ty });
        true
    }

    fn enter_scope(&mut self) {
        self.scopes.push(std::collections::HashMap::new());
    }

    fn exit_scope(&mut self) {
        self.scopes.pop();
    }
}

// ── Main-fragment environment ────────────────────────────────────────────────

/// What the main walker knows about one program variable.
#[derive(Debug, Clone)]
pub struct MainVarInfo {
    pub ty: TypeExpr,
    /// Type of the variable's own cell (element type for arrays, pointer
    /// width for pointers, value type for scalars).
    pub cell: ScalarTy,
    /// Element type behind the pointer, for pointer variables.
    pub pointee: Option<ScalarTy>,
    pub is_array: bool,
}

/// Environment for main-procedure fragments: program variables are buffer
/// parameters discovered on demand; loop/block locals live in registers.
pub struct MainEnv<'a> {
    vars: &'a std::collections::BTreeMap<String, MainVarInfo>,
    /// Fragment parameters in creation order: (variable, deref, element type).
    params: Vec<(String, bool, ScalarTy)>,
    locals: Vec<std::collections::HashMap<String, (Reg, ScalarTy)>>,
}

impl<'a> MainEnv<'a> {
    pub fn new(vars: &'a std::collections::BTreeMap<String, MainVarInfo>) -> MainEnv<'a> {
        MainEnv { vars, params: Vec::new(), locals: vec![std::collections::HashMap::new()] }
    }

    fn param_for(&mut self, name: &str, deref: bool, elem: ScalarTy) -> u32 {
        if let Some(i) = self.params.iter().position(|(n, d, _)| n == name && *d == deref) {
            return i as u32;
        }
        self.params.push((name.to_string(), deref, elem));
        (self.params.len() - 1) as u32
    }

    /// Fragment parameters accumulated during compilation.
    pub fn into_params(self) -> Vec<(String, bool, ScalarTy)> {
        self.params
    }
}

impl VarEnv for MainEnv<'_> {
    fn value_slot(&mut self, name: &str) -> Option<ValueSlot> {
        for scope in self.locals.iter().rev() {
            if let Some((reg, ty)) = scope.get(name) {
                return Some(ValueSlot::Reg { reg: *reg, ty: *ty });
            }
        }
        let info = self.vars.get(name)?;
        if info.is_array {
            return None;
        }
        let ty = info.cell;
        Some(ValueSlot::Cell { param: self.param_for(name, false, ty), ty })
    }

    fn elem_slot(&mut self, name: &str) -> Option<(u32, ScalarTy)> {
        if self.locals.iter().any(|s| s.contains_key(name)) {
            return None;
        }
        let info = self.vars.get(name)?;
        if info.is_array {
            let elem = info.cell;
            return Some((self.param_for(name, false, elem), elem));
        }
        let elem = info.pointee?;
        Some((self.param_for(name, true, elem), elem))
    }

    fn declare_local(&mut self, name: &str, ty: ScalarTy, reg: Reg) -> bool {
        self.locals.last_mut().expect("scope").insert(name.to_string(), (reg, ty));
        true
    }

    fn enter_scope(&mut self) {
        self.locals.push(std::collections::HashMap::new());
    }

    fn exit_scope(&mut self) {
        self.locals.pop();
    }
}

// ── Typing helpers ───────────────────────────────────────────────────────────

/// C integer promotion: sub-int types widen to `int`.
pub fn promote(t: ScalarTy) -> ScalarTy {
    match t {
        ScalarTy::I8 | ScalarTy::U8 | ScalarTy::I16 | ScalarTy::U16 => ScalarTy::I32,
        t => t,
    }
}

fn int_rank(t: ScalarTy) -> u32 {
    match t {
        ScalarTy::I32 => 0,
        ScalarTy::U32 => 1,
        ScalarTy::I64 => 2,
        ScalarTy::U64 => 3,
        _ => unreachable!("rank of promoted integer"),
    }
}

/// Usual arithmetic conversions over the promoted type set.
pub fn usual_arith(a: ScalarTy, b: ScalarTy) -> ScalarTy {
    if a == ScalarTy::F64 || b == ScalarTy::F64 {
        return ScalarTy::F64;
    }
    if a == ScalarTy::F32 || b == ScalarTy::F32 {
        return ScalarTy::F32;
    }
    let (a, b) = (promote(a), promote(b));
    if int_rank(a) >= int_rank(b) {
        a
    } else {
        b
    }
}

fn err(loc: &Loc, msg: impl Into<String>) -> Diagnostic {
    Diagnostic::error(Code::E_LOWER, loc, msg.into())
}

// ── The compiler ─────────────────────────────────────────────────────────────

pub struct FnLower<'a, E: VarEnv> {
    pub cfg: &'a TargetConfig,
    pub env: E,
    regs: u32,
    /// Permit `get_global_id(0)` (device-kernel dialect only).
    allow_global_id: bool,
}

impl<'a, E: VarEnv> FnLower<'a, E> {
    pub fn new(cfg: &'a TargetConfig, env: E, allow_global_id: bool) -> FnLower<'a, E> {
        FnLower { cfg, env, regs: 0, allow_global_id }
    }

    pub fn fresh(&mut self) -> Reg {
        let r = self.regs;
        self.regs += 1;
        r
    }

    pub fn reg_count(&self) -> u32 {
        self.regs
    }

    /// Consume the compiler, returning the environment and register count.
    pub fn finish(self) -> (E, u32) {
        (self.env, self.regs)
    }

    // ── Statements ──────────────────────────────────────────────────────────

    pub fn compile_block(&mut self, block: &Block, ops: &mut Vec<IrOp>) -> Result<(), Diagnostic> {
        self.env.enter_scope();
        let result = self.compile_stmts(&block.stmts, ops);
        self.env.exit_scope();
        result
    }

    pub fn compile_stmts(
        &mut self,
        stmts: &[Stmt],
        ops: &mut Vec<IrOp>,
    ) -> Result<(), Diagnostic> {
        for stmt in stmts {
            self.compile_stmt(stmt, ops)?;
        }
        Ok(())
    }

    pub fn compile_stmt(&mut self, stmt: &Stmt, ops: &mut Vec<IrOp>) -> Result<(), Diagnostic> {
        match stmt {
            Stmt::Var(vd) => self.compile_local_decl(vd, ops),
            Stmt::Expr(e) => {
                self.compile_expr(e, ops)?;
                Ok(())
            }
            Stmt::If { cond, then_branch, else_branch, .. } => {
                let (c, _) = self.compile_expr(cond, ops)?;
                let mut then_ops = Vec::new();
                self.compile_scoped(then_branch, &mut then_ops)?;
                let mut else_ops = Vec::new();
                if let Some(e) = else_branch {
                    self.compile_scoped(e, &mut else_ops)?;
                }
                ops.push(IrOp::Branch { cond: c, then: then_ops, r#else: else_ops });
                Ok(())
            }
            Stmt::For { init, cond, step, body, loc } => {
                self.compile_for(init, cond.as_ref(), step.as_ref(), body, loc, ops)
            }
            Stmt::Return { value, loc } => {
                if value.is_some() {
                    return Err(err(loc, "cannot lower a return with a value here"));
                }
                ops.push(IrOp::Return);
                Ok(())
            }
            Stmt::Block(b) => self.compile_block(b, ops),
            Stmt::Pragma(p) => Err(err(&p.loc, "cannot lower a pragma inside this statement")),
        }
    }

    /// Compile a single statement in its own scope (an `if`/`for` branch).
    fn compile_scoped(&mut self, stmt: &Stmt, ops: &mut Vec<IrOp>) -> Result<(), Diagnostic> {
        self.env.enter_scope();
        let result = self.compile_stmt(stmt, ops);
        self.env.exit_scope();
        result
    }

    fn compile_local_decl(&mut self, vd: &VarDecl, ops: &mut Vec<IrOp>) -> Result<(), Diagnostic> {
        if !vd.attrs.is_empty() {
            return Err(err(
                &vd.loc,
                format!("attributes on variable '{}' cannot be lowered here", vd.name),
            ));
        }
        if vd.ty.is_pointer_or_array() {
            return Err(err(
                &vd.loc,
                format!("variable '{}' must be a plain scalar to be lowered here", vd.name),
            ));
        }
        let ty = ScalarTy::from_base(vd.ty.base, self.cfg)
            .ok_or_else(|| err(&vd.loc, format!("variable '{}' has no storable type", vd.name)))?;
        let reg = self.fresh();
        match &vd.init {
            Some(init) => {
                let (v, _) = self.compile_expr(init, ops)?;
                ops.push(IrOp::Convert { dst: reg, src: v, to: ty });
            }
            None => {
                // Uninitialized locals read as zero, deterministically.
                ops.push(IrOp::Const { dst: reg, v: IrValue::I64(0).convert(ty) });
            }
        }
        self.env.declare_local(&vd.name, ty, reg);
        Ok(())
    }

    // ── The canonical counting loop ─────────────────────────────────────────

    fn compile_for(
        &mut self,
        init: &ForInit,
        cond: Option<&Expr>,
        step: Option<&Expr>,
        body: &Stmt,
        loc: &Loc,
        ops: &mut Vec<IrOp>,
    ) -> Result<(), Diagnostic> {
        self.env.enter_scope();
        let result = self.compile_for_inner(init, cond, step, body, loc, ops);
        self.env.exit_scope();
        result
    }

    fn compile_for_inner(
        &mut self,
        init: &ForInit,
        cond: Option<&Expr>,
        step: Option<&Expr>,
        body: &Stmt,
        loc: &Loc,
        ops: &mut Vec<IrOp>,
    ) -> Result<(), Diagnostic> {
        let unsupported =
            |l: &Loc| err(l, "only counting loops of the form `for (i = a; i < b; i++)` lower");

        // The counter and its initial value.
        let (counter_name, init_reg, counter_slot): (String, Reg, Option<ValueSlot>) = match init {
            ForInit::Decl(vd) => {
                if vd.ty.is_pointer_or_array() || !vd.attrs.is_empty() {
                    return Err(unsupported(&vd.loc));
                }
                let ty = ScalarTy::from_base(vd.ty.base, self.cfg)
                    .ok_or_else(|| unsupported(&vd.loc))?;
                if ty.is_float() {
                    return Err(err(&vd.loc, "loop counters must have integer type"));
                }
                let init_expr = vd.init.as_ref().ok_or_else(|| unsupported(&vd.loc))?;
                let (v, vt) = self.compile_expr(init_expr, ops)?;
                if vt.is_float() {
                    return Err(err(&vd.loc, "loop bounds must have integer type"));
                }
                let reg = self.fresh();
                self.env.declare_local(&vd.name, ty, reg);
                (vd.name.clone(), v, Some(ValueSlot::Reg { reg, ty }))
            }
            ForInit::Expr(Expr::Assign { op: AssignOp::Assign, target, value, loc: aloc }) => {
                let name = match target.as_ref() {
                    Expr::Ident { name, .. } => name.clone(),
                    _ => return Err(unsupported(aloc)),
                };
                let slot = self
                    .env
                    .value_slot(&name)
                    .ok_or_else(|| err(aloc, format!("'{name}' cannot be a loop counter")))?;
                if slot.ty().is_float() {
                    return Err(err(aloc, "loop counters must have integer type"));
                }
                let (v, vt) = self.compile_expr(value, ops)?;
                if vt.is_float() {
                    return Err(err(aloc, "loop bounds must have integer type"));
                }
                (name, v, Some(slot))
            }
            _ => return Err(unsupported(loc)),
        };

        // Condition: `counter < bound` or `counter <= bound`.
        let (bound_expr, inclusive) = match cond {
            Some(Expr::Binary { op: BinOp::Lt, lhs, rhs, .. })
                if matches!(lhs.as_ref(), Expr::Ident { name, .. } if *name == counter_name) =>
            {
                (rhs.as_ref(), false)
            }
            Some(Expr::Binary { op: BinOp::Le, lhs, rhs, .. })
                if matches!(lhs.as_ref(), Expr::Ident { name, .. } if *name == counter_name) =>
            {
                (rhs.as_ref(), true)
            }
            _ => return Err(unsupported(loc)),
        };

        // Step: `i++`, `++i`, `i += 1`, or `i = i + 1`.
        let step_ok = match step {
            Some(Expr::IncDec { inc: true, target, .. }) => {
                matches!(target.as_ref(), Expr::Ident { name, .. } if *name == counter_name)
            }
            Some(Expr::Assign { op: AssignOp::AddAssign, target, value, .. }) => {
                matches!(target.as_ref(), Expr::Ident { name, .. } if *name == counter_name)
                    && matches!(value.as_ref(), Expr::IntLit { value: 1, .. })
            }
            Some(Expr::Assign { op: AssignOp::Assign, target, value, .. }) => {
                matches!(target.as_ref(), Expr::Ident { name, .. } if *name == counter_name)
                    && matches!(value.as_ref(), Expr::Binary { op: BinOp::Add, lhs, rhs, .. }
                        if matches!(lhs.as_ref(), Expr::Ident { name, .. } if *name == counter_name)
                            && matches!(rhs.as_ref(), Expr::IntLit { value: 1, .. }))
            }
            _ => false,
        };
        if !step_ok {
            return Err(unsupported(loc));
        }
        if stmt_writes_var(body, &counter_name) {
            return Err(err(
                loc,
                format!("loop counter '{counter_name}' is modified inside the loop body"),
            ));
        }

        // Bound, evaluated once before the loop.
        let (b, bt) = self.compile_expr(bound_expr, ops)?;
        if bt.is_float() {
            return Err(err(loc, "loop bounds must have integer type"));
        }
        let bound = if inclusive {
            let one = self.fresh();
            ops.push(IrOp::Const { dst: one, v: IrValue::I64(1) });
            let adj = self.fresh();
            ops.push(IrOp::Binary { dst: adj, kind: BinKind::Add, lhs: b, rhs: one, ty: ScalarTy::I64 });
            adj
        } else {
            b
        };

        // The loop itself counts in a register; memory-backed counters are
        // refreshed at the top of each iteration and after the loop.
        let (counter_reg, writeback): (Reg, Option<(u32, ScalarTy)>) = match counter_slot {
            Some(ValueSlot::Reg { reg, .. }) => (reg, None),
            Some(ValueSlot::Cell { param, ty }) => (self.fresh(), Some((param, ty))),
            None => unreachable!("counter slot resolved above"),
        };

        let mut body_ops = Vec::new();
        if let Some((param, ty)) = writeback {
            self.store_cell(param, ty, counter_reg, &mut body_ops);
        }
        self.compile_scoped(body, &mut body_ops)?;
        ops.push(IrOp::Loop { counter: counter_reg, init: init_reg, bound, body: body_ops });
        if let Some((param, ty)) = writeback {
            self.store_cell(param, ty, counter_reg, ops);
        }
        Ok(())
    }

    fn store_cell(&mut self, param: u32, ty: ScalarTy, src: Reg, ops: &mut Vec<IrOp>) {
        let conv = self.fresh();
        ops.push(IrOp::Convert { dst: conv, src, to: ty });
        let idx = self.fresh();
        ops.push(IrOp::Const { dst: idx, v: IrValue::I64(0) });
        ops.push(IrOp::StoreElem { buf: param, idx, src: conv, ty });
    }

    // ── Expressions ─────────────────────────────────────────────────────────

    /// Compile an expression; returns the register holding the value and its
    /// scalar type.
    pub fn compile_expr(
        &mut self,
        e: &Expr,
        ops: &mut Vec<IrOp>,
    ) -> Result<(Reg, ScalarTy), Diagnostic> {
        match e {
            Expr::IntLit { value, loc: _ } => {
                let (ty, v) = if *value <= i32::MAX as u64 {
                    (ScalarTy::I32, IrValue::I64(*value as i64))
                } else if *value <= i64::MAX as u64 {
                    (ScalarTy::I64, IrValue::I64(*value as i64))
                } else {
                    (ScalarTy::U64, IrValue::U64(*value))
                };
                let dst = self.fresh();
                ops.push(IrOp::Const { dst, v });
                Ok((dst, ty))
            }
            Expr::FloatLit { value, single, .. } => {
                let dst = self.fresh();
                let (ty, v) = if *single {
                    (ScalarTy::F32, IrValue::F32(*value as f32))
                } else {
                    (ScalarTy::F64, IrValue::F64(*value))
                };
                ops.push(IrOp::Const { dst, v });
                Ok((dst, ty))
            }
            Expr::StrLit { loc, .. } => Err(err(loc, "string literals cannot be lowered here")),
            Expr::Ident { name, loc } => match self.env.value_slot(name) {
                Some(ValueSlot::Reg { reg, ty }) => Ok((reg, ty)),
                Some(ValueSlot::Cell { param, ty }) => {
                    let idx = self.fresh();
                    ops.push(IrOp::Const { dst: idx, v: IrValue::I64(0) });
                    let dst = self.fresh();
                    ops.push(IrOp::LoadElem { dst, buf: param, idx, ty });
                    Ok((dst, ty))
                }
                None => Err(err(
                    loc,
                    format!("variable '{name}' cannot be used as a value here"),
                )),
            },
            Expr::Unary { op: UnaryOp::Neg, operand, loc: _ } => {
                let (v, ty) = self.compile_expr(operand, ops)?;
                let ty = promote(ty);
                let dst = self.fresh();
                ops.push(IrOp::Neg { dst, src: v, ty });
                Ok((dst, ty))
            }
            Expr::Unary { op: UnaryOp::Deref, operand, loc } => {
                let name = ident_name(operand)
                    .ok_or_else(|| err(loc, "only plain pointer variables can be dereferenced here"))?;
                let (param, elem) = self
                    .elem_slot_or_err(name, loc)?;
                let idx = self.fresh();
                ops.push(IrOp::Const { dst: idx, v: IrValue::I64(0) });
                let dst = self.fresh();
                ops.push(IrOp::LoadElem { dst, buf: param, idx, ty: elem });
                Ok((dst, elem))
            }
            Expr::Unary { op: UnaryOp::AddrOf, operand: _, loc } => {
                Err(err(loc, "address-of expressions cannot be lowered"))
            }
            Expr::Binary { op, lhs, rhs, loc: _ } => self.compile_binary(*op, lhs, rhs, ops),
            Expr::Assign { op, target, value, loc } => {
                self.compile_assign(*op, target, value, loc, ops)
            }
            Expr::IncDec { inc, prefix, target, loc } => {
                self.compile_incdec(*inc, *prefix, target, loc, ops)
            }
            Expr::Call { callee, args, loc } => {
                if self.allow_global_id && callee == "get_global_id" {
                    if args.len() != 1 || !matches!(args[0], Expr::IntLit { value: 0, .. }) {
                        return Err(err(loc, "only get_global_id(0) is supported"));
                    }
                    let dst = self.fresh();
                    ops.push(IrOp::GlobalId { dst, dim: 0 });
                    let ty = ScalarTy::from_base(
                        crate::frontend::ast::BaseType::SizeT,
                        self.cfg,
                    )
                    .expect("size_t");
                    return Ok((dst, ty));
                }
                Err(err(loc, format!("call to '{callee}' cannot be lowered inside an expression")))
            }
            Expr::Subscript { base, index, loc } => {
                let name = ident_name(base)
                    .ok_or_else(|| err(loc, "only plain array or pointer variables can be indexed here"))?;
                let (param, elem) = self.elem_slot_or_err(name, loc)?;
                let idx = self.compile_index(index, ops)?;
                let dst = self.fresh();
                ops.push(IrOp::LoadElem { dst, buf: param, idx, ty: elem });
                Ok((dst, elem))
            }
            Expr::Sizeof { arg, loc } => {
                let bytes = match arg {
                    SizeofArg::Type(ty) => sizeof_type(ty, self.cfg)
                        .ok_or_else(|| err(loc, "cannot compute the size of this type"))?,
                    SizeofArg::Expr(_) => {
                        return Err(err(loc, "sizeof of an expression cannot be lowered here"))
                    }
                };
                let dst = self.fresh();
                ops.push(IrOp::Const { dst, v: IrValue::U64(bytes) });
                let ty = ScalarTy::from_base(crate::frontend::ast::BaseType::SizeT, self.cfg)
                    .expect("size_t");
                Ok((dst, ty))
            }
        }
    }

    fn elem_slot_or_err(&mut self, name: &str, loc: &Loc) -> Result<(u32, ScalarTy), Diagnostic> {
        self.env.elem_slot(name).ok_or_else(|| {
            err(loc, format!("variable '{name}' does not denote a buffer that can be indexed here"))
        })
    }

    /// Compile an index expression, requiring an integer type.
    fn compile_index(&mut self, e: &Expr, ops: &mut Vec<IrOp>) -> Result<Reg, Diagnostic> {
        let (r, ty) = self.compile_expr(e, ops)?;
        if ty.is_float() {
            return Err(err(e.loc(), "array indices must have integer type"));
        }
        Ok(r)
    }

    fn compile_binary(
        &mut self,
        op: BinOp,
        lhs: &Expr,
        rhs: &Expr,
        ops: &mut Vec<IrOp>,
    ) -> Result<(Reg, ScalarTy), Diagnostic> {
        let (l, lt) = self.compile_expr(lhs, ops)?;
        let (r, rt) = self.compile_expr(rhs, ops)?;
        let ty = usual_arith(lt, rt);
        let dst = self.fresh();
        match op {
            BinOp::Add | BinOp::Sub | BinOp::Mul | BinOp::Div => {
                let kind = match op {
                    BinOp::Add => BinKind::Add,
                    BinOp::Sub => BinKind::Sub,
                    BinOp::Mul => BinKind::Mul,
                    _ => BinKind::Div,
                };
                ops.push(IrOp::Binary { dst, kind, lhs: l, rhs: r, ty });
                Ok((dst, ty))
            }
            BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge | BinOp::Eq | BinOp::Ne => {
                let kind = match op {
                    BinOp::Lt => CmpKind::Lt,
                    BinOp::Le => CmpKind::Le,
                    BinOp::Gt => CmpKind::Gt,
                    BinOp::Ge => CmpKind::Ge,
                    BinOp::Eq => CmpKind::Eq,
                    _ => CmpKind::Ne,
                };
                ops.push(IrOp::Compare { dst, kind, lhs: l, rhs: r, ty });
                Ok((dst, ScalarTy::I32))
            }
        }
    }

    fn compile_assign(
        &mut self,
        op: AssignOp,
        target: &Expr,
        value: &Expr,
        loc: &Loc,
        ops: &mut Vec<IrOp>,
    ) -> Result<(Reg, ScalarTy), Diagnostic> {
        let place = self.resolve_place(target, loc, ops)?;
        let (rhs, rhs_ty) = self.compile_expr(value, ops)?;
        let (v, vt) = match op {
            AssignOp::Assign => (rhs, rhs_ty),
            _ => {
                let kind = match op {
                    AssignOp::AddAssign => BinKind::Add,
                    AssignOp::SubAssign => BinKind::Sub,
                    AssignOp::MulAssign => BinKind::Mul,
                    AssignOp::DivAssign => BinKind::Div,
                    AssignOp::Assign => unreachable!(),
                };
                let (cur, cur_ty) = self.read_place(&place, ops);
                let ty = usual_arith(cur_ty, rhs_ty);
                let dst = self.fresh();
                ops.push(IrOp::Binary { dst, kind, lhs: cur, rhs, ty });
                (dst, ty)
            }
        };
        let _ = vt;
        let stored = self.write_place(&place, v, ops);
        Ok((stored, place_ty(&place)))
    }

    fn compile_incdec(
        &mut self,
        inc: bool,
        prefix: bool,
        target: &Expr,
        loc: &Loc,
        ops: &mut Vec<IrOp>,
    ) -> Result<(Reg, ScalarTy), Diagnostic> {
        let place = self.resolve_place(target, loc, ops)?;
        let (cur, cur_ty) = self.read_place(&place, ops);
        let old = if prefix {
            cur
        } else {
            let saved = self.fresh();
            ops.push(IrOp::Copy { dst: saved, src: cur });
            saved
        };
        let one = self.fresh();
        ops.push(IrOp::Const { dst: one, v: IrValue::I64(1) });
        let sum = self.fresh();
        ops.push(IrOp::Binary {
            dst: sum,
            kind: if inc { BinKind::Add } else { BinKind::Sub },
            lhs: cur,
            rhs: one,
            ty: promote(cur_ty),
        });
        let stored = self.write_place(&place, sum, ops);
        if prefix {
            Ok((stored, place_ty(&place)))
        } else {
            Ok((old, cur_ty))
        }
    }

    // ── Places (assignable locations) ───────────────────────────────────────

    /// Resolve an assignable location, compiling its index expression (once)
    /// into `ops`.
    fn resolve_place(
        &mut self,
        target: &Expr,
        loc: &Loc,
        ops: &mut Vec<IrOp>,
    ) -> Result<Place, Diagnostic> {
        match target {
            Expr::Ident { name, loc } => match self.env.value_slot(name) {
                Some(slot) => Ok(Place::Slot(slot)),
                None => Err(err(loc, format!("'{name}' cannot be assigned here"))),
            },
            Expr::Subscript { base, index, loc } => {
                let name = ident_name(base)
                    .ok_or_else(|| err(loc, "only plain array or pointer variables can be indexed here"))?;
                let (param, elem) = self.elem_slot_or_err(name, loc)?;
                let idx = self.compile_index(index, ops)?;
                Ok(Place::Elem { param, elem, idx })
            }
            Expr::Unary { op: UnaryOp::Deref, operand, loc } => {
                let name = ident_name(operand)
                    .ok_or_else(|| err(loc, "only plain pointer variables can be dereferenced here"))?;
                let (param, elem) = self.elem_slot_or_err(name, loc)?;
                let idx = self.fresh();
                ops.push(IrOp::Const { dst: idx, v: IrValue::I64(0) });
                Ok(Place::Elem { param, elem, idx })
            }
            _ => Err(err(loc, "unsupported assignment target")),
        }
    }

    fn read_place(&mut self, place: &Place, ops: &mut Vec<IrOp>) -> (Reg, ScalarTy) {
        match place {
            Place::Slot(ValueSlot::Reg { reg, ty }) => (*reg, *ty),
            Place::Slot(ValueSlot::Cell { param, ty }) => {
                let idx = self.fresh();
                ops.push(IrOp::Const { dst: idx, v: IrValue::I64(0) });
                let dst = self.fresh();
                ops.push(IrOp::LoadElem { dst, buf: *param, idx, ty: *ty });
                (dst, *ty)
            }
            Place::Elem { param, elem, idx } => {
                let dst = self.fresh();
                ops.push(IrOp::LoadElem { dst, buf: *param, idx: *idx, ty: *elem });
                (dst, *elem)
            }
        }
    }

    /// Write `src` (converted) into the place; returns the register holding
    /// the stored value.
    fn write_place(&mut self, place: &Place, src: Reg, ops: &mut Vec<IrOp>) -> Reg {
        match place {
            Place::Slot(ValueSlot::Reg { reg, ty }) => {
                ops.push(IrOp::Convert { dst: *reg, src, to: *ty });
                *reg
            }
            Place::Slot(ValueSlot::Cell { param, ty }) => {
                let conv = self.fresh();
                ops.push(IrOp::Convert { dst: conv, src, to: *ty });
                let idx = self.fresh();
                ops.push(IrOp::Const { dst: idx, v: IrValue::I64(0) });
                ops.push(IrOp::StoreElem { buf: *param, idx, src: conv, ty: *ty });
                conv
            }
            Place::Elem { param, elem, idx } => {
                let conv = self.fresh();
                ops.push(IrOp::Convert { dst: conv, src, to: *elem });
                ops.push(IrOp::StoreElem { buf: *param, idx: *idx, src: conv, ty: *elem });
                conv
            }
        }
    }
}

#[derive(Debug, Clone)]
enum Place {
    Slot(ValueSlot),
    Elem { param: u32, elem: ScalarTy, idx: Reg },
}

fn place_ty(p: &Place) -> ScalarTy {
    match p {
        Place::Slot(s) => s.ty(),
        Place::Elem { elem, .. } => *elem,
    }
}

fn ident_name(e: &Expr) -> Option<&str> {
    match e {
        Expr::Ident { name, .. } => Some(name),
        _ => None,
    }
}

/// Byte size of a complete type: scalars, pointers, and constant-extent
/// arrays. `None` when the size is not a compile-time constant.
pub fn sizeof_type(ty: &TypeExpr, cfg: &TargetConfig) -> Option<u64> {
    if ty.pointer_depth > 0 && ty.array_dims.is_empty() {
        return Some(cfg.pointer_width() as u64);
    }
    let elem = if ty.pointer_depth > 0 {
        cfg.pointer_width() as u64
    } else {
        let w = cfg.scalar_width(ty.base) as u64;
        if w == 0 {
            return None;
        }
        w
    };
    let mut total = elem;
    for d in &ty.array_dims {
        match d {
            ArrayDim::Const(n) => total = total.checked_mul(*n)?,
            _ => return None,
        }
    }
    Some(total)
}

/// Does any statement in the block assign to or increment `name`?
pub fn block_writes_var(block: &Block, name: &str) -> bool {
    block.stmts.iter().any(|s| stmt_writes_var(s, name))
}

/// Does the statement (or anything nested in it) assign to or increment `name`?
pub fn stmt_writes_var(stmt: &Stmt, name: &str) -> bool {
    match stmt {
        Stmt::Var(vd) => vd.init.as_ref().is_some_and(|e| expr_writes_var(e, name)),
        Stmt::Expr(e) => expr_writes_var(e, name),
        Stmt::For { init, cond, step, body, .. } => {
            let init_writes = match init {
                ForInit::Decl(vd) => vd.init.as_ref().is_some_and(|e| expr_writes_var(e, name)),
                ForInit::Expr(e) => expr_writes_var(e, name),
                ForInit::None => false,
            };
            init_writes
                || cond.as_ref().is_some_and(|e| expr_writes_var(e, name))
                || step.as_ref().is_some_and(|e| expr_writes_var(e, name))
                || stmt_writes_var(body, name)
        }
        Stmt::If { cond, then_branch, else_branch, .. } => {
            expr_writes_var(cond, name)
                || stmt_writes_var(then_branch, name)
                || else_branch.as_ref().is_some_and(|b| stmt_writes_var(b, name))
        }
        Stmt::Return { value, .. } => value.as_ref().is_some_and(|e| expr_writes_var(e, name)),
        Stmt::Block(b) => block_writes_var(b, name),
        Stmt::Pragma(_) => false,
    }
}

fn expr_writes_var(e: &Expr, name: &str) -> bool {
    match e {
        Expr::Assign { target, value, .. } => {
            matches!(target.as_ref(), Expr::Ident { name: n, .. } if n == name)
                || expr_writes_var(target, name)
                || expr_writes_var(value, name)
        }
        Expr::IncDec { target, .. } => {
            matches!(target.as_ref(), Expr::Ident { name: n, .. } if n == name)
                || expr_writes_var(target, name)
        }
        Expr::Unary { operand, .. } => expr_writes_var(operand, name),
        Expr::Binary { lhs, rhs, .. } => {
            expr_writes_var(lhs, name) || expr_writes_var(rhs, name)
        }
        Expr::Call { args, .. } => args.iter().any(|a| expr_writes_var(a, name)),
        Expr::Subscript { base, index, .. } => {
            expr_writes_var(base, name) || expr_writes_var(index, name)
        }
        Expr::Sizeof { .. }
        | Expr::IntLit { .. }
        | Expr::FloatLit { .. }
        | Expr::StrLit { .. }
        | Expr::Ident { .. } => false,
    }
}
