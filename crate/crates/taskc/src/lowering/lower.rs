//! Lowering of the analyzed program into the executable task-program
//! artifact: codelets with per-target IR, and the ordered main-procedure ops
//! that allocate storage, register buffers, invoke tasks, and clean up.

use std::collections::BTreeMap;
use std::path::Path;

use crate::diag::{Code, Diagnostic};
use crate::frontend::ast::{
    AssignOp, AttrName, Block, Expr, SizeofArg, Stmt, TypeExpr, UnaryOp, VarDecl,
};
use crate::loc::Loc;
use crate::lowering::artifact::{
    Arch, Binding, CallArg, CleanupVar, Codelet, CodeletParam, ExecPlan, ImplDef, MainOp,
    Metadata, PackEntry, StorageClass, TaskBodyPlan, TaskProgram, WrapperPlan,
};
use crate::lowering::embed;
use crate::lowering::expr::{FnLower, KernelEnv, MainEnv, MainVarInfo};
use crate::lowering::ir::{self, IrOp, IrParam, IrParamKind, IrValue, KernelIR, ScalarTy};
use crate::sema::types::{complete_array_count, has_attr, AccessMode, TargetConfig};
use crate::sema::{loc_key, ProgramModel, Target, TaskDecl, TaskImpl};

/// Lower an analyzed, error-free program into its artifact.
pub fn lower_program(
    model: &ProgramModel,
    source_file: &str,
    src_dir: &Path,
) -> Result<TaskProgram, Vec<Diagnostic>> {
    let cfg = &model.target;
    let mut diags = Vec::new();
    let mut codelets = Vec::new();
    for cd in &model.codelets {
        match lower_codelet(model, &cd.name, src_dir, cfg) {
            Ok(c) => codelets.push(c),
            Err(mut e) => diags.append(&mut e),
        }
    }

    let main_ops = match model.main {
        Some(mi) => {
            let body = model.functions[mi]
                .body
                .as_ref()
                .expect("main has a body");
            let (ops, mut main_diags) = MainLower::new(model, cfg).run(body);
            diags.append(&mut main_diags);
            ops
        }
        None => {
            let loc = Loc::new(&std::sync::Arc::from(source_file), 1, 1);
            diags.push(Diagnostic::error(
                Code::E_LOWER,
                &loc,
                "program has no 'main' function to lower",
            ));
            Vec::new()
        }
    };

    if !diags.is_empty() {
        return Err(diags);
    }
    Ok(TaskProgram {
        codelets,
        main_ops,
        metadata: Metadata { source_file: source_file.to_string(), target: cfg.clone() },
    })
}

// ── Codelets ─────────────────────────────────────────────────────────────────

fn lower_codelet(
    model: &ProgramModel,
    task_name: &str,
    src_dir: &Path,
    cfg: &TargetConfig,
) -> Result<Codelet, Vec<Diagnostic>> {
    let cd = model
        .codelets
        .iter()
        .find(|c| c.name == task_name)
        .expect("codelet exists");
    let task = &model.tasks[model.task_index(task_name).expect("task exists")];
    let mut diags = Vec::new();

    let mut params = Vec::new();
    let mut buffer_slots = Vec::new();
    let mut scalar_pack = Vec::new();
    let mut lookups = Vec::new();
    for (i, p) in task.params.iter().enumerate() {
        let Some(ty) = ScalarTy::from_base(p.ty.base, cfg) else {
            diags.push(Diagnostic::error(
                Code::E_LOWER,
                &p.loc,
                format!("parameter '{}' of task '{}' has no lowerable element type", p.name, task.name),
            ));
            continue;
        };
        if p.mode == AccessMode::ScalarValue {
            scalar_pack.push(PackEntry { param: p.name.clone(), width: ty.width(), ty });
            params.push(CodeletParam::Scalar { name: p.name.clone(), ty });
        } else {
            buffer_slots.push(i as u32);
            lookups.push(p.name.clone());
            params.push(CodeletParam::Buffer {
                name: p.name.clone(),
                elem: ty,
                elem_size: ty.width(),
                mode: p.mode,
            });
        }
    }

    let mut impls = Vec::new();
    for &ii in &cd.impls {
        let imp = &model.impls[ii];
        match lower_impl(task, imp, src_dir, cfg) {
            Ok(def) => impls.push(def),
            Err(d) => diags.push(d),
        }
    }

    if !diags.is_empty() {
        return Err(diags);
    }
    Ok(Codelet {
        name: task.name.clone(),
        params,
        nbuffers: cd.nbuffers,
        modes: cd.modes.clone(),
        wrapper: WrapperPlan { buffer_slots, scalar_pack },
        task_body: TaskBodyPlan { lookups, submit: task.name.clone() },
        impls,
    })
}

fn lower_impl(
    task: &TaskDecl,
    imp: &TaskImpl,
    src_dir: &Path,
    cfg: &TargetConfig,
) -> Result<ImplDef, Diagnostic> {
    let target = match imp.target {
        Target::Cpu => Arch::Cpu,
        Target::Opencl => Arch::Opencl,
        Target::Cuda => Arch::Cuda,
    };
    let exec = if let Some(binding) = &imp.kernel_binding {
        let kernel = embed::embed_kernel(binding, task, src_dir, cfg)?;
        ExecPlan::WorkItems { kernel }
    } else if let Some(body) = &imp.body {
        ExecPlan::Loop { ir: lower_impl_body(imp, body, cfg)? }
    } else {
        return Err(Diagnostic::error(
            Code::E_LOWER,
            &imp.loc,
            format!("implementation '{}' has neither a body nor a bound kernel", imp.name),
        ));
    };
    Ok(ImplDef { name: imp.name.clone(), target, synthesized: imp.synthesized, exec })
}

/// Compile a C task-implementation body into run-once statement IR.
fn lower_impl_body(imp: &TaskImpl, body: &Block, cfg: &TargetConfig) -> Result<KernelIR, Diagnostic> {
    lower_fn_ir(&imp.params, body, cfg, false, &imp.loc)
}

/// Compile a function body (task implementation or device kernel) into IR:
/// buffer parameters stay indexable, scalar parameters are loaded into
/// registers up front.
pub fn lower_fn_ir(
    params: &[crate::frontend::ast::Param],
    body: &Block,
    cfg: &TargetConfig,
    allow_global_id: bool,
    err_loc: &Loc,
) -> Result<KernelIR, Diagnostic> {
    let mut ir_params = Vec::new();
    let mut env = KernelEnv::new();
    let mut scalars = Vec::new();
    for (i, p) in params.iter().enumerate() {
        let Some(ty) = ScalarTy::from_base(p.ty.base, cfg) else {
            return Err(Diagnostic::error(
                Code::E_LOWER,
                &p.loc,
                format!("parameter '{}' has no lowerable element type", p.name),
            ));
        };
        if p.ty.is_pointer_or_array() {
            env.bind_buffer(&p.name, i as u32, ty);
            ir_params.push(IrParam {
                name: p.name.clone(),
                kind: IrParamKind::Buffer { elem: ty },
            });
        } else {
            scalars.push((i as u32, p.name.clone(), ty));
            ir_params.push(IrParam { name: p.name.clone(), kind: IrParamKind::Scalar { ty } });
        }
    }

    let mut fl = FnLower::new(cfg, env, allow_global_id);
    let mut ops = Vec::new();
    for (idx, name, ty) in scalars {
        let reg = fl.fresh();
        ops.push(IrOp::LoadParam { dst: reg, param: idx });
        fl.env.bind_value(&name, reg, ty);
    }
    fl.compile_block(body, &mut ops)?;
    let (_, regs) = fl.finish();
    let ir = KernelIR { params: ir_params, regs, ops };
    ir::validate(&ir, allow_global_id)
        .map_err(|m| Diagnostic::error(Code::E_LOWER, err_loc, m))?;
    Ok(ir)
}

// ── The main procedure ───────────────────────────────────────────────────────

struct ScopeEntry {
    name: String,
    unregister: bool,
    free: bool,
}

struct MainLower<'m> {
    model: &'m ProgramModel,
    cfg: &'m TargetConfig,
    vars: BTreeMap<String, MainVarInfo>,
    ops: Vec<MainOp>,
    diags: Vec<Diagnostic>,
    scopes: Vec<Vec<ScopeEntry>>,
}

impl<'m> MainLower<'m> {
    fn new(model: &'m ProgramModel, cfg: &'m TargetConfig) -> MainLower<'m> {
        MainLower {
            model,
            cfg,
            vars: BTreeMap::new(),
            ops: Vec::new(),
            diags: Vec::new(),
            scopes: Vec::new(),
        }
    }

    fn run(mut self, body: &Block) -> (Vec<MainOp>, Vec<Diagnostic>) {
        // File-scope variables live in an outermost pseudo-scope whose
        // cleanup runs after main's own.
        self.scopes.push(Vec::new());
        for g in &self.model.globals.clone() {
            self.declare_var(g, StorageClass::Static);
        }
        self.walk_block(&body.stmts, 0);
        self.end_scope();
        (self.ops, self.diags)
    }

    fn err(&mut self, loc: &Loc, msg: impl Into<String>) {
        self.diags.push(Diagnostic::error(Code::E_LOWER, loc, msg.into()));
    }

    fn walk_block(&mut self, stmts: &[Stmt], depth: usize) {
        self.scopes.push(Vec::new());
        let last = stmts.len().saturating_sub(1);
        for (i, stmt) in stmts.iter().enumerate() {
            match stmt {
                Stmt::Var(vd) => {
                    let storage = if has_attr(&vd.attrs, &AttrName::HeapAllocated) {
                        StorageClass::Heap
                    } else {
                        StorageClass::Auto
                    };
                    self.declare_var(vd, storage);
                }
                Stmt::Pragma(p) => self.pragma_op(p),
                Stmt::Block(b) => self.walk_block(&b.stmts, depth + 1),
                Stmt::Return { loc, .. } => {
                    if !(depth == 0 && i == last) {
                        self.err(loc, "return may only appear as the final statement of main");
                    }
                }
                Stmt::Expr(e) => self.expr_stmt(e, stmt),
                Stmt::If { .. } | Stmt::For { .. } => self.fragment(stmt),
            }
        }
        self.end_scope();
    }

    fn end_scope(&mut self) {
        let scope = self.scopes.pop().expect("scope");
        let vars: Vec<CleanupVar> = scope
            .iter()
            .rev()
            .filter(|s| s.unregister || s.free)
            .map(|s| CleanupVar { var: s.name.clone(), unregister: s.unregister, free: s.free })
            .collect();
        if !vars.is_empty() {
            self.ops.push(MainOp::ScopeEndCleanup { vars });
        }
    }

    // ── Declarations ─────────────────────────────────────────────────────────

    fn declare_var(&mut self, vd: &VarDecl, storage: StorageClass) {
        if self.vars.contains_key(&vd.name) {
            self.err(
                &vd.loc,
                format!("variable '{}' is declared more than once across main's scopes", vd.name),
            );
            return;
        }
        let registered = has_attr(&vd.attrs, &AttrName::Registered);
        let heap = storage == StorageClass::Heap;

        let (info, count, elem) = if !vd.ty.array_dims.is_empty() {
            if vd.ty.pointer_depth > 0 {
                self.err(&vd.loc, format!("array of pointers '{}' cannot be lowered", vd.name));
                return;
            }
            let Some(elem) = ScalarTy::from_base(vd.ty.base, self.cfg) else {
                self.err(&vd.loc, format!("variable '{}' has no lowerable element type", vd.name));
                return;
            };
            let Some(count) = complete_array_count(&vd.ty) else {
                self.err(
                    &vd.loc,
                    format!("the size of array '{}' must be a compile-time constant", vd.name),
                );
                return;
            };
            let info = MainVarInfo { ty: vd.ty.clone(), cell: elem, pointee: None, is_array: true };
            (info, count, elem)
        } else if vd.ty.pointer_depth > 0 {
            let cell = ScalarTy::pointer(self.cfg);
            let pointee = if vd.ty.pointer_depth == 1 {
                ScalarTy::from_base(vd.ty.base, self.cfg)
            } else {
                None
            };
            let info = MainVarInfo { ty: vd.ty.clone(), cell, pointee, is_array: false };
            (info, 1, cell)
        } else {
            let Some(cell) = ScalarTy::from_base(vd.ty.base, self.cfg) else {
                self.err(&vd.loc, format!("variable '{}' has no lowerable type", vd.name));
                return;
            };
            let info = MainVarInfo { ty: vd.ty.clone(), cell, pointee: None, is_array: false };
            (info, 1, cell)
        };

        if (registered || heap) && !info.is_array {
            // The analyzer rejects these on non-arrays; stay defensive.
            self.err(
                &vd.loc,
                format!("attributed variable '{}' must have a complete array type", vd.name),
            );
            return;
        }

        self.ops.push(MainOp::Alloc {
            var: vd.name.clone(),
            count,
            elem_size: elem.width(),
            elem,
            pinned: heap,
            storage,
        });
        self.vars.insert(vd.name.clone(), info.clone());
        self.scopes
            .last_mut()
            .expect("scope")
            .push(ScopeEntry { name: vd.name.clone(), unregister: registered, free: heap });

        match &vd.init {
            None => {}
            Some(init) if malloc_arg(init).is_some() => {
                let size = malloc_arg(init).expect("malloc argument");
                self.malloc_op(&vd.name, size, &vd.loc);
            }
            Some(_) if info.is_array => {
                self.err(&vd.loc, format!("array '{}' cannot have an initializer", vd.name));
            }
            Some(init) => {
                let assign = Stmt::Expr(Expr::Assign {
                    op: AssignOp::Assign,
                    target: Box::new(Expr::Ident { name: vd.name.clone(), loc: vd.loc.clone() }),
                    value: Box::new(init.clone()),
                    loc: vd.loc.clone(),
                });
                self.fragment(&assign);
            }
        }

        if registered {
            self.ops.push(MainOp::Register {
                var: vd.name.clone(),
                deref: false,
                count,
                elem_size: elem.width(),
                elem,
                loc: vd.loc.clone(),
            });
        }
    }

    // ── Expression statements ────────────────────────────────────────────────

    fn expr_stmt(&mut self, e: &Expr, stmt: &Stmt) {
        match e {
            Expr::Call { callee, args, loc } if callee == "free" => {
                self.free_op(args, loc);
            }
            Expr::Call { callee, args, loc }
                if self.model.task_index(callee).is_some() =>
            {
                self.call_task(callee, args, loc);
            }
            Expr::Call { callee, loc, .. } if callee == "malloc" => {
                self.err(loc, "the result of malloc must be assigned to a pointer variable");
            }
            Expr::Assign { op: AssignOp::Assign, target, value, loc }
                if malloc_arg(value).is_some() =>
            {
                let size = malloc_arg(value).expect("malloc argument");
                match target.as_ref() {
                    Expr::Ident { name, .. } => {
                        let name = name.clone();
                        self.malloc_op(&name, size, loc);
                    }
                    _ => self.err(loc, "malloc may only be assigned to a pointer variable"),
                }
            }
            _ => self.fragment(stmt),
        }
    }

    fn free_op(&mut self, args: &[Expr], loc: &Loc) {
        let var = match args {
            [Expr::Ident { name, .. }] => name.clone(),
            _ => {
                self.err(loc, "free takes exactly one pointer variable");
                return;
            }
        };
        match self.vars.get(&var) {
            Some(info) if !info.is_array && info.ty.pointer_depth > 0 => {
                self.ops.push(MainOp::Free { var, loc: loc.clone() });
            }
            Some(_) => self.err(loc, format!("'{var}' is not a pointer and cannot be freed")),
            None => self.err(loc, format!("'{var}' is not a main-scope variable")),
        }
    }

    fn malloc_op(&mut self, var: &str, size: &Expr, loc: &Loc) {
        let Some(info) = self.vars.get(var) else {
            self.err(loc, format!("'{var}' is not a main-scope variable"));
            return;
        };
        let Some(elem) = (!info.is_array).then_some(info.pointee).flatten() else {
            self.err(
                loc,
                format!("malloc target '{var}' must be a pointer to a complete element type"),
            );
            return;
        };
        let Some((v, _)) = const_fold(self.cfg, &self.vars, size) else {
            self.err(loc, "allocation size must be a compile-time constant");
            return;
        };
        let bytes = match v {
            IrValue::I64(n) if n >= 0 => n as u64,
            IrValue::U64(n) => n,
            _ => {
                self.err(loc, "allocation size must be a non-negative integer constant");
                return;
            }
        };
        let w = elem.width() as u64;
        if bytes % w != 0 {
            self.err(
                loc,
                format!("allocation of {bytes} bytes is not a multiple of the {w}-byte element size"),
            );
            return;
        }
        self.ops.push(MainOp::Malloc {
            var: var.to_string(),
            count: bytes / w,
            elem_size: elem.width(),
            elem,
            loc: loc.clone(),
        });
    }

    // ── Task invocations ─────────────────────────────────────────────────────

    fn call_task(&mut self, callee: &str, args: &[Expr], loc: &Loc) {
        let ti = self.model.task_index(callee).expect("task exists");
        let task = &self.model.tasks[ti];
        if args.len() != task.params.len() {
            // The analyzer reports too-few/too-many argument errors.
            return;
        }
        let mut cargs = Vec::new();
        for (a, p) in args.iter().zip(&task.params) {
            let Some(pty) = ScalarTy::from_base(p.ty.base, self.cfg) else {
                self.err(&p.loc, format!("parameter '{}' has no lowerable element type", p.name));
                return;
            };
            if p.mode == AccessMode::ScalarValue {
                if let Some((v, _)) = const_fold(self.cfg, &self.vars, a) {
                    cargs.push(CallArg::Const { ty: pty, v: v.convert(pty) });
                    continue;
                }
                if let Expr::Ident { name, .. } = a {
                    if let Some(info) = self.vars.get(name) {
                        if !info.is_array && info.ty.pointer_depth == 0 {
                            cargs.push(CallArg::Var { name: name.clone(), ty: info.cell });
                            continue;
                        }
                    }
                }
                self.err(
                    a.loc(),
                    format!(
                        "argument for scalar parameter '{}' of task '{}' must be a constant or a scalar variable",
                        p.name, task.name
                    ),
                );
                return;
            }
            match a {
                Expr::Ident { name, .. } => match self.vars.get(name) {
                    Some(info) if info.is_array => {
                        cargs.push(CallArg::Buffer { name: name.clone(), deref: false });
                    }
                    Some(info) if info.pointee.is_some() => {
                        cargs.push(CallArg::Buffer { name: name.clone(), deref: true });
                    }
                    _ => {
                        self.err(
                            a.loc(),
                            format!(
                                "argument for buffer parameter '{}' of task '{}' must be an array or pointer variable",
                                p.name, task.name
                            ),
                        );
                        return;
                    }
                },
                _ => {
                    self.err(
                        a.loc(),
                        format!(
                            "argument for buffer parameter '{}' of task '{}' must be a plain variable",
                            p.name, task.name
                        ),
                    );
                    return;
                }
            }
        }
        self.ops.push(MainOp::CallTask { task: callee.to_string(), args: cargs, loc: loc.clone() });
    }

    // ── Pragmas ──────────────────────────────────────────────────────────────

    fn pragma_op(&mut self, p: &crate::frontend::ast::Pragma) {
        use crate::frontend::ast::PragmaKind;
        match &p.kind {
            PragmaKind::Register { var, var_loc, .. } => {
                let Some(site) = self.model.registrations.get(&loc_key(&p.loc)) else {
                    self.err(&p.loc, format!("registration of '{var}' has no element count"));
                    return;
                };
                let (count, elem_size) = (site.count, site.elem_size);
                let Some((deref, elem)) = self.region_ref(var) else {
                    self.err(var_loc, format!("'{var}' does not denote a registrable region"));
                    return;
                };
                self.ops.push(MainOp::Register {
                    var: var.clone(),
                    deref,
                    count,
                    elem_size,
                    elem,
                    loc: p.loc.clone(),
                });
            }
            PragmaKind::Unregister { var, var_loc } => {
                let Some((deref, _)) = self.region_ref(var) else {
                    self.err(var_loc, format!("'{var}' does not denote a registrable region"));
                    return;
                };
                self.ops.push(MainOp::Unregister { var: var.clone(), deref, loc: p.loc.clone() });
            }
            PragmaKind::Acquire { var, var_loc } => {
                let Some((deref, _)) = self.region_ref(var) else {
                    self.err(var_loc, format!("'{var}' does not denote a registrable region"));
                    return;
                };
                self.ops.push(MainOp::Acquire { var: var.clone(), deref, loc: p.loc.clone() });
            }
            PragmaKind::Wait => self.ops.push(MainOp::Wait { loc: p.loc.clone() }),
            // Kernel bindings are resolved at compile time; unknown pragmas
            // are inert.
            PragmaKind::OpenclBind { .. } | PragmaKind::Unknown { .. } => {}
        }
    }

    /// How a registration-style pragma reaches its region: directly for
    /// arrays, through the held address for pointers.
    fn region_ref(&self, var: &str) -> Option<(bool, ScalarTy)> {
        let info = self.vars.get(var)?;
        if info.is_array {
            Some((false, info.cell))
        } else {
            info.pointee.map(|elem| (true, elem))
        }
    }

    // ── Plain statement fragments ────────────────────────────────────────────

    fn fragment(&mut self, stmt: &Stmt) {
        if let Some(loc) = find_return(stmt) {
            self.err(&loc, "return may only appear as the final statement of main");
            return;
        }
        match compile_fragment(self.cfg, &self.vars, stmt) {
            Ok(op) => self.ops.push(op),
            Err(d) => self.diags.push(d),
        }
    }
}

/// Compile one main statement into a self-contained IR fragment over
/// memory-backed variables.
fn compile_fragment(
    cfg: &TargetConfig,
    vars: &BTreeMap<String, MainVarInfo>,
    stmt: &Stmt,
) -> Result<MainOp, Diagnostic> {
    let env = MainEnv::new(vars);
    let mut fl = FnLower::new(cfg, env, false);
    let mut ops = Vec::new();
    fl.compile_stmt(stmt, &mut ops)?;
    let (env, regs) = fl.finish();
    let params = env.into_params();
    let ir_params = params
        .iter()
        .map(|(var, deref, elem)| IrParam {
            name: if *deref { format!("*{var}") } else { var.clone() },
            kind: IrParamKind::Buffer { elem: *elem },
        })
        .collect();
    let bindings = params
        .iter()
        .map(|(var, deref, _)| Binding { var: var.clone(), deref: *deref })
        .collect();
    let ir = KernelIR { params: ir_params, regs, ops };
    ir::validate(&ir, false).map_err(|m| Diagnostic::error(Code::E_LOWER, stmt.loc(), m))?;
    Ok(MainOp::PlainStmt { ir, bindings, loc: stmt.loc().clone() })
}

// ── Constant folding ─────────────────────────────────────────────────────────

/// Evaluate a variable-free expression at compile time by compiling it and
/// running the IR, so folded values match run-time semantics exactly.
pub fn const_fold(
    cfg: &TargetConfig,
    vars: &BTreeMap<String, MainVarInfo>,
    e: &Expr,
) -> Option<(IrValue, ScalarTy)> {
    let e = resolve_sizeofs(e, vars)?;
    let env = MainEnv::new(vars);
    let mut fl = FnLower::new(cfg, env, false);
    let mut ops = Vec::new();
    let (r, ty) = fl.compile_expr(&e, &mut ops).ok()?;
    let idx = fl.fresh();
    let (env, regs) = fl.finish();
    if !env.into_params().is_empty() {
        return None; // references run-time state
    }
    ops.push(IrOp::Const { dst: idx, v: IrValue::I64(0) });
    ops.push(IrOp::StoreElem { buf: 0, idx, src: r, ty });
    let ir = KernelIR {
        params: vec![IrParam { name: "out".into(), kind: IrParamKind::Buffer { elem: ty } }],
        regs,
        ops,
    };
    let mut buf = vec![0u8; ty.width() as usize];
    ir::eval(&ir, &[], &mut [&mut buf], &[1], None).ok()?;
    Some((ir::read_scalar(&buf, ty), ty))
}

/// Rewrite `sizeof expr` into `sizeof(type)` using the main variable table.
fn resolve_sizeofs(e: &Expr, vars: &BTreeMap<String, MainVarInfo>) -> Option<Expr> {
    Some(match e {
        Expr::Sizeof { arg: SizeofArg::Expr(inner), loc } => {
            let ty = simple_expr_type(inner, vars)?;
            Expr::Sizeof { arg: SizeofArg::Type(ty), loc: loc.clone() }
        }
        Expr::Sizeof { .. }
        | Expr::IntLit { .. }
        | Expr::FloatLit { .. }
        | Expr::StrLit { .. }
        | Expr::Ident { .. } => e.clone(),
        Expr::Unary { op, operand, loc } => Expr::Unary {
            op: *op,
            operand: Box::new(resolve_sizeofs(operand, vars)?),
            loc: loc.clone(),
        },
        Expr::Binary { op, lhs, rhs, loc } => Expr::Binary {
            op: *op,
            lhs: Box::new(resolve_sizeofs(lhs, vars)?),
            rhs: Box::new(resolve_sizeofs(rhs, vars)?),
            loc: loc.clone(),
        },
        Expr::Assign { op, target, value, loc } => Expr::Assign {
            op: *op,
            target: Box::new(resolve_sizeofs(target, vars)?),
            value: Box::new(resolve_sizeofs(value, vars)?),
            loc: loc.clone(),
        },
        Expr::IncDec { inc, prefix, target, loc } => Expr::IncDec {
            inc: *inc,
            prefix: *prefix,
            target: Box::new(resolve_sizeofs(target, vars)?),
            loc: loc.clone(),
        },
        Expr::Call { callee, args, loc } => Expr::Call {
            callee: callee.clone(),
            args: args.iter().map(|a| resolve_sizeofs(a, vars)).collect::<Option<_>>()?,
            loc: loc.clone(),
        },
        Expr::Subscript { base, index, loc } => Expr::Subscript {
            base: Box::new(resolve_sizeofs(base, vars)?),
            index: Box::new(resolve_sizeofs(index, vars)?),
            loc: loc.clone(),
        },
    })
}

/// Type of the simple expressions `sizeof` accepts: a variable, `*p`, or
/// `a[i]`.
fn simple_expr_type(e: &Expr, vars: &BTreeMap<String, MainVarInfo>) -> Option<TypeExpr> {
    match e {
        Expr::Ident { name, .. } => Some(vars.get(name)?.ty.clone()),
        Expr::Unary { op: UnaryOp::Deref, operand, .. } => {
            let name = match operand.as_ref() {
                Expr::Ident { name, .. } => name,
                _ => return None,
            };
            strip_level(&vars.get(name)?.ty)
        }
        Expr::Subscript { base, .. } => {
            let name = match base.as_ref() {
                Expr::Ident { name, .. } => name,
                _ => return None,
            };
            strip_level(&vars.get(name)?.ty)
        }
        _ => None,
    }
}

fn strip_level(ty: &TypeExpr) -> Option<TypeExpr> {
    let mut t = ty.clone();
    if !t.array_dims.is_empty() {
        t.array_dims.remove(0);
        Some(t)
    } else if t.pointer_depth > 0 {
        t.pointer_depth -= 1;
        Some(t)
    } else {
        None
    }
}

fn malloc_arg(e: &Expr) -> Option<&Expr> {
    match e {
        Expr::Call { callee, args, .. } if callee == "malloc" && args.len() == 1 => Some(&args[0]),
        _ => None,
    }
}

fn find_return(stmt: &Stmt) -> Option<Loc> {
    match stmt {
        Stmt::Return { loc, .. } => Some(loc.clone()),
        Stmt::If { then_branch, else_branch, .. } => find_return(then_branch)
            .or_else(|| else_branch.as_ref().and_then(|b| find_return(b))),
        Stmt::For { body, .. } => find_return(body),
        Stmt::Block(b) => b.stmts.iter().find_map(find_return),
        Stmt::Var(_) | Stmt::Expr(_) | Stmt::Pragma(_) => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parse;
    use crate::sema::analyze;

    fn lowered(src: &str) -> TaskProgram {
        let tu = parse(src, "t.tc").expect("parse");
        let cfg = TargetConfig::default();
        let (model, diags) = analyze(&tu, &cfg);
        assert!(!crate::diag::has_errors(&diags), "analysis errors: {diags:?}");
        lower_program(&model, "t.tc", Path::new(".")).expect("lowering")
    }

    fn lower_err(src: &str) -> Vec<Diagnostic> {
        let tu = parse(src, "t.tc").expect("parse");
        let cfg = TargetConfig::default();
        let (model, diags) = analyze(&tu, &cfg);
        assert!(!crate::diag::has_errors(&diags), "analysis errors: {diags:?}");
        lower_program(&model, "t.tc", Path::new(".")).expect_err("expected lowering errors")
    }

    const SCALE: &str = concat!(
        "static float vector[8];\n",
        "\n",
        "void vector_scale(float *vector, size_t nx, float factor)\n",
        "  __attribute__ ((task));\n",
        "\n",
        "static void vector_scale_cpu(float *vector, size_t nx, float factor)\n",
        "  __attribute__ ((task_implementation (\"cpu\", vector_scale)));\n",
        "\n",
        "static void vector_scale_cpu(float *vector, size_t nx, float factor)\n",
        "{\n",
        "  unsigned int i;\n",
        "  for (i = 0; i < nx; i++)\n",
        "    vector[i] = vector[i] * factor;\n",
        "}\n",
        "\n",
        "int main(void)\n",
        "{\n",
        "#pragma starpu register vector\n",
        "  vector_scale(vector, 8, 3.14f);\n",
        "#pragma starpu wait\n",
        "#pragma starpu unregister vector\n",
        "  return 0;\n",
        "}\n",
    );

    #[test]
    fn scale_codelet_shape() {
        let prog = lowered(SCALE);
        assert_eq!(prog.codelets.len(), 1);
        let c = &prog.codelets[0];
        assert_eq!(c.name, "vector_scale");
        assert_eq!(c.nbuffers, 1);
        assert_eq!(c.modes, vec![AccessMode::RW]);
        assert_eq!(c.wrapper.buffer_slots, vec![0]);
        let packed: Vec<_> = c.wrapper.scalar_pack.iter().map(|e| e.param.as_str()).collect();
        assert_eq!(packed, vec!["nx", "factor"]);
        assert_eq!(c.wrapper.pack_size(), 12);
        assert_eq!(c.task_body.lookups, vec!["vector"]);
        assert_eq!(c.task_body.submit, "vector_scale");
        assert_eq!(c.impls.len(), 1);
        assert_eq!(c.impls[0].target, Arch::Cpu);
        assert!(!c.impls[0].synthesized);
    }

    #[test]
    fn scale_impl_ir_runs() {
        let prog = lowered(SCALE);
        let ir = prog.codelets[0].impls[0].exec.ir();
        let mut data = Vec::new();
        for i in 1..=8u32 {
            data.extend_from_slice(&(i as f32).to_le_bytes());
        }
        ir::eval(
            ir,
            &[IrValue::U64(8), IrValue::F32(3.14)],
            &mut [&mut data],
            &[8],
            None,
        )
        .expect("kernel runs");
        for i in 1..=8u32 {
            let off = (i as usize - 1) * 4;
            let got = f32::from_le_bytes(data[off..off + 4].try_into().unwrap());
            assert_eq!(got, i as f32 * 3.14f32);
        }
    }

    #[test]
    fn scale_main_ops_order() {
        let prog = lowered(SCALE);
        let kinds: Vec<&str> = prog
            .main_ops
            .iter()
            .map(|op| match op {
                MainOp::Alloc { .. } => "alloc",
                MainOp::Register { .. } => "register",
                MainOp::CallTask { .. } => "call_task",
                MainOp::Wait { .. } => "wait",
                MainOp::Unregister { .. } => "unregister",
                _ => "other",
            })
            .collect();
        assert_eq!(kinds, vec!["alloc", "register", "call_task", "wait", "unregister"]);
        match &prog.main_ops[0] {
            MainOp::Alloc { var, count, elem, storage, pinned, .. } => {
                assert_eq!(var, "vector");
                assert_eq!(*count, 8);
                assert_eq!(*elem, ScalarTy::F32);
                assert_eq!(*storage, StorageClass::Static);
                assert!(!pinned);
            }
            other => panic!("expected alloc, got {other:?}"),
        }
        match &prog.main_ops[2] {
            MainOp::CallTask { task, args, .. } => {
                assert_eq!(task, "vector_scale");
                assert_eq!(
                    args[0],
                    CallArg::Buffer { name: "vector".into(), deref: false }
                );
                assert_eq!(args[1], CallArg::Const { ty: ScalarTy::U64, v: IrValue::U64(8) });
                assert_eq!(args[2], CallArg::Const { ty: ScalarTy::F32, v: IrValue::F32(3.14) });
            }
            other => panic!("expected call_task, got {other:?}"),
        }
    }

    #[test]
    fn scoped_attr_var_allocates_registers_and_cleans_up() {
        let src = concat!(
            "void t(float *v) __attribute__ ((task));\n",
            "void t_cpu(float *v) __attribute__ ((task_implementation (\"cpu\", t)));\n",
            "void t_cpu(float *v) { v[0] = 1.0f; }\n",
            "int main(void) {\n",
            "  float x[4] __attribute__ ((heap_allocated, registered));\n",
            "  t(x);\n",
            "#pragma starpu wait\n",
            "  return 0;\n",
            "}\n",
        );
        let prog = lowered(src);
        match &prog.main_ops[0] {
            MainOp::Alloc { var, count, pinned, storage, .. } => {
                assert_eq!(var, "x");
                assert_eq!(*count, 4);
                assert!(*pinned);
                assert_eq!(*storage, StorageClass::Heap);
            }
            other => panic!("expected alloc, got {other:?}"),
        }
        assert!(matches!(
            &prog.main_ops[1],
            MainOp::Register { var, deref: false, count: 4, .. } if var == "x"
        ));
        let cleanup = prog
            .main_ops
            .iter()
            .find_map(|op| match op {
                MainOp::ScopeEndCleanup { vars } => Some(vars),
                _ => None,
            })
            .expect("cleanup op");
        assert_eq!(cleanup.len(), 1);
        assert_eq!(cleanup[0], CleanupVar { var: "x".into(), unregister: true, free: true });
    }

    #[test]
    fn malloc_and_free_become_heap_ops() {
        let src = concat!(
            "int main(void) {\n",
            "  float *p;\n",
            "  p = malloc(8 * sizeof *p);\n",
            "  free(p);\n",
            "  return 0;\n",
            "}\n",
        );
        let prog = lowered(src);
        assert!(matches!(
            &prog.main_ops[0],
            MainOp::Alloc { var, count: 1, elem: ScalarTy::U64, .. } if var == "p"
        ));
        assert!(matches!(
            &prog.main_ops[1],
            MainOp::Malloc { var, count: 8, elem: ScalarTy::F32, elem_size: 4, .. } if var == "p"
        ));
        assert!(matches!(&prog.main_ops[2], MainOp::Free { var, .. } if var == "p"));
    }

    #[test]
    fn malloc_size_must_divide_evenly() {
        let src = concat!(
            "int main(void) {\n",
            "  float *p;\n",
            "  p = malloc(7);\n",
            "  return 0;\n",
            "}\n",
        );
        let errs = lower_err(src);
        assert!(errs[0].message.contains("not a multiple"), "{}", errs[0].message);
    }

    #[test]
    fn scalar_init_becomes_plain_stmt() {
        let src = concat!(
            "int main(void) {\n",
            "  int n = 41;\n",
            "  n = n + 1;\n",
            "  return 0;\n",
            "}\n",
        );
        let prog = lowered(src);
        assert!(matches!(&prog.main_ops[0], MainOp::Alloc { var, count: 1, .. } if var == "n"));
        let stmts: Vec<_> = prog
            .main_ops
            .iter()
            .filter_map(|op| match op {
                MainOp::PlainStmt { ir, bindings, .. } => Some((ir, bindings)),
                _ => None,
            })
            .collect();
        assert_eq!(stmts.len(), 2, "init store and increment");
        for (_, bindings) in &stmts {
            assert_eq!(bindings.as_slice(), &[Binding { var: "n".into(), deref: false }]);
        }
        // Run both fragments against a 4-byte cell and check the final value.
        let mut cell = vec![0u8; 4];
        for (ir, _) in &stmts {
            ir::eval(ir, &[], &mut [&mut cell], &[1], None).expect("fragment runs");
        }
        assert_eq!(i32::from_le_bytes(cell[..4].try_into().unwrap()), 42);
    }

    #[test]
    fn return_must_be_last() {
        let src = concat!(
            "int main(void) {\n",
            "  int n = 0;\n",
            "  if (n) { return 1; }\n",
            "  return 0;\n",
            "}\n",
        );
        let errs = lower_err(src);
        assert!(errs[0].message.contains("final statement"), "{}", errs[0].message);
    }

    #[test]
    fn duplicate_names_across_sibling_scopes_rejected() {
        let src = concat!(
            "int main(void) {\n",
            "  { int a = 1; a = a + 1; }\n",
            "  { int a = 2; a = a + 1; }\n",
            "  return 0;\n",
            "}\n",
        );
        let errs = lower_err(src);
        assert!(errs[0].message.contains("more than once"), "{}", errs[0].message);
    }

    #[test]
    fn loop_over_memory_counter_writes_back() {
        let src = concat!(
            "int main(void) {\n",
            "  int i;\n",
            "  int total = 0;\n",
            "  for (i = 0; i < 5; i++) { total = total + i; }\n",
            "  return 0;\n",
            "}\n",
        );
        let prog = lowered(src);
        let (ir, bindings) = prog
            .main_ops
            .iter()
            .filter_map(|op| match op {
                MainOp::PlainStmt { ir, bindings, .. } => Some((ir, bindings)),
                _ => None,
            })
            .last()
            .expect("loop fragment");
        let names: Vec<_> = bindings.iter().map(|b| b.var.as_str()).collect();
        assert_eq!(names, vec!["i", "total"]);
        let mut i_cell = vec![0u8; 4];
        let mut total_cell = vec![0u8; 4];
        ir::eval(ir, &[], &mut [&mut i_cell, &mut total_cell], &[1, 1], None).expect("runs");
        assert_eq!(i32::from_le_bytes(i_cell[..4].try_into().unwrap()), 5);
        assert_eq!(i32::from_le_bytes(total_cell[..4].try_into().unwrap()), 10);
    }

    const CL_SRC: &str = concat!(
        "__kernel void vector_scale (__global float *vector, size_t nx, float factor)\n",
        "{\n",
        "  size_t i = get_global_id (0);\n",
        "  if (i < nx)\n",
        "    vector[i] = vector[i] * factor;\n",
        "}\n",
    );

    #[test]
    fn opencl_kernel_embeds_with_ir() {
        let dir = tempfile::tempdir().expect("tempdir");
        std::fs::write(dir.path().join("scale.cl"), CL_SRC).expect("write kernel");
        let src = concat!(
            "void vector_scale(float *vector, size_t nx, float factor)\n",
            "  __attribute__ ((task));\n",
            "static void vector_scale_cpu(float *vector, size_t nx, float factor)\n",
            "  __attribute__ ((task_implementation (\"cpu\", vector_scale)));\n",
            "static void vector_scale_opencl(float *vector, size_t nx, float factor)\n",
            "  __attribute__ ((task_implementation (\"opencl\", vector_scale)));\n",
            "#pragma starpu opencl vector_scale_opencl \"scale.cl\" \"vector_scale\" 8\n",
            "static void vector_scale_cpu(float *vector, size_t nx, float factor)\n",
            "{\n",
            "  unsigned int i;\n",
            "  for (i = 0; i < nx; i++)\n",
            "    vector[i] = vector[i] * factor;\n",
            "}\n",
            "static float v[4];\n",
            "int main(void)\n",
            "{\n",
            "#pragma starpu register v\n",
            "  vector_scale(v, 4, 2.0f);\n",
            "#pragma starpu wait\n",
            "#pragma starpu unregister v\n",
            "  return 0;\n",
            "}\n",
        );
        let tu = parse(src, "t.tc").expect("parse");
        let cfg = TargetConfig::default();
        let (model, diags) = analyze(&tu, &cfg);
        assert!(!crate::diag::has_errors(&diags), "analysis errors: {diags:?}");
        let prog = lower_program(&model, "t.tc", dir.path()).expect("lowering");
        let c = &prog.codelets[0];
        assert_eq!(c.impls.len(), 2);
        let ocl = c.impls.iter().find(|i| i.target == Arch::Opencl).expect("opencl impl");
        let ExecPlan::WorkItems { kernel } = &ocl.exec else {
            panic!("expected work-items plan");
        };
        assert_eq!(kernel.source_text, CL_SRC);
        assert_eq!(kernel.kernel_name, "vector_scale");
        assert_eq!(kernel.group_size, 8);

        // Run the embedded kernel once per work item.
        let mut data = Vec::new();
        for i in 1..=4u32 {
            data.extend_from_slice(&(i as f32).to_le_bytes());
        }
        for gid in 0..4 {
            ir::eval(
                &kernel.ir,
                &[IrValue::U64(4), IrValue::F32(2.0)],
                &mut [&mut data],
                &[4],
                Some(gid),
            )
            .expect("work item runs");
        }
        for i in 1..=4u32 {
            let off = (i as usize - 1) * 4;
            let got = f32::from_le_bytes(data[off..off + 4].try_into().unwrap());
            assert_eq!(got, i as f32 * 2.0);
        }
    }

    #[test]
    fn missing_kernel_file_is_reported() {
        let dir = tempfile::tempdir().expect("tempdir");
        let src = concat!(
            "void t(float *v) __attribute__ ((task));\n",
            "void t_cpu(float *v) __attribute__ ((task_implementation (\"cpu\", t)));\n",
            "void t_cl(float *v) __attribute__ ((task_implementation (\"opencl\", t)));\n",
            "#pragma starpu opencl t_cl \"nope.cl\" \"k\" 4\n",
            "void t_cpu(float *v) { v[0] = 1.0f; }\n",
            "int main(void) { return 0; }\n",
        );
        let tu = parse(src, "t.tc").expect("parse");
        let cfg = TargetConfig::default();
        let (model, diags) = analyze(&tu, &cfg);
        assert!(!crate::diag::has_errors(&diags), "analysis errors: {diags:?}");
        let errs = lower_program(&model, "t.tc", dir.path()).expect_err("missing file");
        assert_eq!(errs[0].message, "kernel file not found: 'nope.cl'");
    }

    #[test]
    fn kernel_signature_mismatch_is_reported() {
        let dir = tempfile::tempdir().expect("tempdir");
        std::fs::write(
            dir.path().join("k.cl"),
            "__kernel void k (__global double *v) { v[get_global_id (0)] = 1.0; }\n",
        )
        .expect("write kernel");
        let src = concat!(
            "void t(float *v) __attribute__ ((task));\n",
            "void t_cpu(float *v) __attribute__ ((task_implementation (\"cpu\", t)));\n",
            "void t_cl(float *v) __attribute__ ((task_implementation (\"opencl\", t)));\n",
            "#pragma starpu opencl t_cl \"k.cl\" \"k\" 4\n",
            "void t_cpu(float *v) { v[0] = 1.0f; }\n",
            "int main(void) { return 0; }\n",
        );
        let tu = parse(src, "t.tc").expect("parse");
        let cfg = TargetConfig::default();
        let (model, diags) = analyze(&tu, &cfg);
        assert!(!crate::diag::has_errors(&diags), "analysis errors: {diags:?}");
        let errs = lower_program(&model, "t.tc", dir.path()).expect_err("signature mismatch");
        assert!(errs[0].message.contains("but task 't' expects"), "{}", errs[0].message);
    }

    #[test]
    fn artifact_round_trips_byte_identically() {
        let prog = lowered(SCALE);
        let json = prog.to_json();
        let back = TaskProgram::from_json(&json).expect("parse json");
        assert_eq!(back.to_json(), json);
    }
}
