//! Function-body checks: scope and declaration rules, pragma placement and
//! registration resolution, and the shape of task invocations.
//!
//! Two kinds of bodies exist. Plain functions (like `main`) may register
//! buffers and submit tasks. Task implementations are kernels: straight
//! computational code with no pragmas and no calls.

use super::{loc_key, Analyzer, FnRole, RegistrationSite, ScopedVarInfo};
use crate::diag::Code;
use crate::frontend::ast::*;
use crate::loc::Loc;
use crate::sema::{complete_array_count, TargetConfig};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FnKind {
    Plain,
    Kernel,
}

#[derive(Debug, Clone)]
struct VarInfo {
    ty: TypeExpr,
    storage: Storage,
    heap_allocated: bool,
}

pub(super) fn walk_all(an: &mut Analyzer, tu: &TranslationUnit) {
    // File scope, shared by every function body.
    let mut file_scope: BTreeMap<String, VarInfo> = BTreeMap::new();
    for item in &tu.items {
        if let Item::Var(v) = item {
            file_scope.entry(v.name.clone()).or_insert(VarInfo {
                ty: v.ty.clone(),
                storage: v.storage,
                heap_allocated: false,
            });
        }
    }
    let merged = std::mem::take(&mut an.merged);
    for (name, m) in &merged {
        let Some(body) = &m.body else { continue };
        let kind = match an.classified.get(name) {
            Some(FnRole::Task(_)) | Some(FnRole::Impl(_)) => FnKind::Kernel,
            _ => FnKind::Plain,
        };
        let cfg = an.cfg;
        let mut w = Walk {
            an,
            cfg,
            kind,
            scopes: vec![file_scope.clone(), BTreeMap::new()],
            reported_undeclared: BTreeSet::new(),
        };
        for p in &m.params {
            w.scopes[1].insert(
                p.name.clone(),
                VarInfo { ty: p.ty.clone(), storage: Storage::None, heap_allocated: false },
            );
        }
        w.block(body);
    }
    an.merged = merged;
}

struct Walk<'a> {
    an: &'a mut Analyzer,
    cfg: TargetConfig,
    kind: FnKind,
    /// scopes[0] = file scope, scopes[1] = parameters, deeper = blocks.
    scopes: Vec<BTreeMap<String, VarInfo>>,
    reported_undeclared: BTreeSet<String>,
}

impl<'a> Walk<'a> {
    fn error(&mut self, code: Code, loc: &Loc, msg: impl Into<String>) {
        self.an.error(code, loc, msg);
    }

    /// Innermost binding for `name`, with the scope depth it was found at
    /// (0 = file scope, 1 = parameters, ≥2 = block-local).
    fn lookup(&self, name: &str) -> Option<(usize, VarInfo)> {
        for (depth, scope) in self.scopes.iter().enumerate().rev() {
            if let Some(info) = scope.get(name) {
                return Some((depth, info.clone()));
            }
        }
        None
    }

    fn block(&mut self, b: &Block) {
        self.scopes.push(BTreeMap::new());
        for s in &b.stmts {
            self.stmt(s);
        }
        self.scopes.pop();
    }

    fn stmt(&mut self, s: &Stmt) {
        match s {
            Stmt::Var(v) => self.var_decl(v),
            Stmt::Expr(e) => match e {
                Expr::Call { .. } => self.call(e, true),
                _ => self.expr(e),
            },
            Stmt::For { init, cond, step, body, .. } => {
                self.scopes.push(BTreeMap::new());
                match init {
                    ForInit::None => {}
                    ForInit::Decl(v) => self.var_decl(v),
                    ForInit::Expr(e) => self.expr(e),
                }
                if let Some(c) = cond {
                    self.expr(c);
                }
                if let Some(st) = step {
                    self.expr(st);
                }
                self.stmt(body);
                self.scopes.pop();
            }
            Stmt::If { cond, then_branch, else_branch, .. } => {
                self.expr(cond);
                self.stmt(then_branch);
                if let Some(e) = else_branch {
                    self.stmt(e);
                }
            }
            Stmt::Return { value, .. } => {
                if let Some(v) = value {
                    self.expr(v);
                }
            }
            Stmt::Block(b) => self.block(b),
            Stmt::Pragma(p) => self.pragma(p),
        }
    }

    // ── Declarations ─────────────────────────────────────────────────────────

    fn var_decl(&mut self, v: &VarDecl) {
        if v.ty.base == BaseType::Void && v.ty.pointer_depth == 0 {
            self.error(Code::E_PARAM_TYPE, &v.loc, format!("variable '{}' has incomplete type 'void'", v.name));
            return;
        }
        if let Some((depth, _)) = self.lookup(&v.name) {
            let msg = if depth + 1 == self.scopes.len() {
                format!("redeclaration of variable '{}'", v.name)
            } else {
                format!("declaration of '{}' shadows a previous declaration", v.name)
            };
            self.error(Code::E_DUPLICATE_NAME, &v.loc, msg);
            return;
        }
        if !v.ty.array_dims.is_empty() {
            if !v.ty.array_dims.iter().all(|d| matches!(d, ArrayDim::Const(_))) {
                self.error(
                    Code::E_PARAM_TYPE,
                    &v.loc,
                    format!("size of array '{}' is not a compile-time constant", v.name),
                );
                return;
            }
            if v.init.is_some() {
                self.error(
                    Code::E_PARAM_TYPE,
                    &v.loc,
                    format!("invalid initializer for array '{}'", v.name),
                );
            }
        }
        let mut heap_allocated = false;
        let mut registered = false;
        for a in &v.attrs {
            match a.name {
                AttrName::Task | AttrName::TaskImplementation => {
                    self.error(Code::E_TASK_ON_NONFUNCTION, &a.loc, "task attribute on non-function");
                }
                AttrName::Output => {
                    self.error(Code::E_ATTR_CONTEXT, &a.loc, "'output' attribute is only valid on parameters");
                }
                AttrName::HeapAllocated => heap_allocated = true,
                AttrName::Registered => registered = true,
                AttrName::Unknown(_) => {}
            }
        }
        if heap_allocated || registered {
            self.scoped_attr_decl(v, heap_allocated, registered);
        }
        if let Some(init) = &v.init {
            self.expr(init);
        }
        self.scopes.last_mut().unwrap().insert(
            v.name.clone(),
            VarInfo { ty: v.ty.clone(), storage: v.storage, heap_allocated },
        );
    }

    fn scoped_attr_decl(&mut self, v: &VarDecl, heap_allocated: bool, registered: bool) {
        let attr_name = if heap_allocated { "heap_allocated" } else { "registered" };
        if self.kind == FnKind::Kernel {
            self.error(
                Code::E_ATTR_CONTEXT,
                &v.loc,
                format!("'{}' attribute is not allowed inside a task implementation", attr_name),
            );
            return;
        }
        if heap_allocated && v.storage != Storage::None {
            self.error(
                Code::E_ATTR_CONTEXT,
                &v.loc,
                "'heap_allocated' attribute requires a variable with automatic storage duration",
            );
            return;
        }
        let Some(count) = complete_array_count(&v.ty) else {
            self.error(
                Code::E_SCOPED_NOT_ARRAY,
                &v.loc,
                format!("variable '{}' with '{}' attribute must have a complete array type", v.name, attr_name),
            );
            return;
        };
        self.an.model.scoped_vars.insert(
            loc_key(&v.loc),
            ScopedVarInfo {
                var: v.name.clone(),
                count,
                elem_size: self.cfg.scalar_width(v.ty.base),
                heap_allocated,
                registered,
            },
        );
    }

    // ── Pragmas ──────────────────────────────────────────────────────────────

    fn pragma(&mut self, p: &Pragma) {
        if self.kind == FnKind::Kernel {
            if !matches!(p.kind, PragmaKind::Unknown { .. }) {
                self.error(
                    Code::E_PRAGMA_POSITION,
                    &p.loc,
                    "pragmas are not allowed inside a task implementation",
                );
            }
            return;
        }
        match &p.kind {
            PragmaKind::Register { var, var_loc, count } => self.register_pragma(p, var, var_loc, count),
            PragmaKind::Unregister { var, var_loc } => self.handle_ref_pragma("unregister", var, var_loc),
            PragmaKind::Acquire { var, var_loc } => self.handle_ref_pragma("acquire", var, var_loc),
            PragmaKind::Wait => {}
            PragmaKind::OpenclBind { .. } => {
                self.error(Code::E_PRAGMA_POSITION, &p.loc, "'opencl' pragma must appear at file scope");
            }
            PragmaKind::Unknown { .. } => {}
        }
    }

    fn register_pragma(&mut self, p: &Pragma, var: &str, var_loc: &Loc, count: &Option<Expr>) {
        let Some((depth, info)) = self.lookup(var) else {
            self.undeclared(var, var_loc);
            return;
        };
        if !info.ty.is_pointer_or_array() {
            self.error(
                Code::E_REG_TYPE,
                var_loc,
                format!("variable '{}' in 'register' pragma must have pointer or array type", var),
            );
            return;
        }
        let count = match count {
            Some(expr) => match self.const_fold(expr) {
                Some(n) if n > 0 => n,
                _ => {
                    self.error(
                        Code::E_REG_NO_SIZE,
                        expr.loc(),
                        format!("element count of '{}' in 'register' pragma is not a positive integer constant", var),
                    );
                    return;
                }
            },
            None => match complete_array_count(&info.ty) {
                Some(n) => n,
                None => {
                    self.error(
                        Code::E_REG_NO_SIZE,
                        var_loc,
                        format!("cannot determine the number of elements in '{}'", var),
                    );
                    return;
                }
            },
        };
        // Registering an automatic array is allowed but dangerous: the frame
        // slot can be reclaimed while tasks still reference it.
        let is_block_local = depth >= 2;
        if is_block_local
            && info.storage == Storage::None
            && !info.ty.array_dims.is_empty()
            && !info.heap_allocated
        {
            self.an.warn(
                Code::W_AUTO_STORAGE,
                &p.loc,
                format!("storage of variable '{}' may be reclaimed before tasks that use it have completed", var),
            );
        }
        let elem_size = self.region_elem_width(&info.ty);
        self.an
            .model
            .registrations
            .insert(loc_key(&p.loc), RegistrationSite { var: var.to_string(), count, elem_size });
    }

    fn handle_ref_pragma(&mut self, which: &str, var: &str, var_loc: &Loc) {
        let Some((_, info)) = self.lookup(var) else {
            self.undeclared(var, var_loc);
            return;
        };
        if !info.ty.is_pointer_or_array() {
            self.error(
                Code::E_REG_TYPE,
                var_loc,
                format!("variable '{}' in '{}' pragma must have pointer or array type", var, which),
            );
        }
    }

    /// Byte width of one element of the registered region: the array element
    /// or pointee, which may itself be a pointer.
    fn region_elem_width(&self, ty: &TypeExpr) -> u32 {
        let mut depth = ty.pointer_depth;
        if ty.array_dims.is_empty() && depth > 0 {
            depth -= 1;
        }
        if depth > 0 {
            self.cfg.pointer_width()
        } else {
            self.cfg.scalar_width(ty.base)
        }
    }

    // ── Expressions ──────────────────────────────────────────────────────────

    fn undeclared(&mut self, name: &str, loc: &Loc) {
        if self.reported_undeclared.insert(name.to_string()) {
            self.error(Code::E_UNDECLARED, loc, format!("'{}' undeclared (first use in this function)", name));
        }
    }

    fn expr(&mut self, e: &Expr) {
        match e {
            Expr::IntLit { .. } | Expr::FloatLit { .. } | Expr::StrLit { .. } => {}
            Expr::Ident { name, loc } => {
                if self.lookup(name).is_none() {
                    self.undeclared(name, loc);
                }
            }
            Expr::Unary { operand, .. } => self.expr(operand),
            Expr::Binary { lhs, rhs, .. } => {
                self.expr(lhs);
                self.expr(rhs);
            }
            Expr::Assign { target, value, .. } => {
                self.expr(target);
                self.expr(value);
            }
            Expr::IncDec { target, .. } => self.expr(target),
            Expr::Call { .. } => self.call(e, false),
            Expr::Subscript { base, index, .. } => {
                self.expr(base);
                self.expr(index);
            }
            Expr::Sizeof { arg, .. } => {
                if let SizeofArg::Expr(inner) = arg {
                    self.expr(inner);
                }
            }
        }
    }

    fn call(&mut self, e: &Expr, is_stmt_root: bool) {
        let Expr::Call { callee, args, loc } = e else { unreachable!() };
        if self.kind == FnKind::Kernel {
            self.error(
                Code::E_CALL_CONTEXT,
                loc,
                "function calls are not supported inside a task implementation",
            );
            for a in args {
                self.expr(a);
            }
            return;
        }
        if let Some(task_idx) = self.an.model.task_index(callee) {
            self.task_call(task_idx, callee, args, loc, is_stmt_root);
            return;
        }
        if self.an.model.impl_index(callee).is_some() {
            let msg = format!("'{}' is a task implementation; call its task instead", callee);
            self.error(Code::E_IMPL_CALLED, loc, msg);
            for a in args {
                self.expr(a);
            }
            return;
        }
        let known_fn = self.an.classified.contains_key(callee);
        let builtin = matches!(callee.as_str(), "malloc" | "free");
        if !known_fn && !builtin {
            self.undeclared(callee, loc);
        }
        for a in args {
            self.expr(a);
        }
    }

    fn task_call(&mut self, task_idx: usize, name: &str, args: &[Expr], loc: &Loc, is_stmt_root: bool) {
        if !is_stmt_root {
            self.error(
                Code::E_CALL_CONTEXT,
                loc,
                format!("call to task '{}' cannot be used as an expression", name),
            );
        }
        let params: Vec<(String, TypeExpr, bool)> = self.an.model.tasks[task_idx]
            .params
            .iter()
            .map(|p| (p.name.clone(), p.ty.clone(), p.mode.is_buffer()))
            .collect();
        if args.len() != params.len() {
            let msg = if args.len() < params.len() {
                format!("too few arguments to task '{}'", name)
            } else {
                format!("too many arguments to task '{}'", name)
            };
            self.error(Code::E_CALL_ARITY, loc, msg);
            for a in args {
                self.expr(a);
            }
            return;
        }
        for (i, (arg, (_, _, is_buffer))) in args.iter().zip(&params).enumerate() {
            if *is_buffer {
                let ok = match arg {
                    Expr::Ident { name: vn, loc: vl } => match self.lookup(vn) {
                        Some((_, info)) => info.ty.is_pointer_or_array(),
                        None => {
                            self.undeclared(vn, vl);
                            continue;
                        }
                    },
                    _ => false,
                };
                if !ok {
                    self.error(
                        Code::E_CALL_ARG,
                        arg.loc(),
                        format!("argument {} of task '{}' must be a pointer or array variable", i + 1, name),
                    );
                }
            } else {
                self.expr(arg);
            }
        }
    }

    // ── Constant folding for registration counts ────────────────────────────

    fn const_fold(&self, e: &Expr) -> Option<u64> {
        match e {
            Expr::IntLit { value, .. } => Some(*value),
            Expr::Binary { op, lhs, rhs, .. } => {
                let l = self.const_fold(lhs)?;
                let r = self.const_fold(rhs)?;
                match op {
                    BinOp::Add => l.checked_add(r),
                    BinOp::Sub => l.checked_sub(r),
                    BinOp::Mul => l.checked_mul(r),
                    BinOp::Div => l.checked_div(r),
                    _ => None,
                }
            }
            Expr::Sizeof { arg, .. } => match arg {
                SizeofArg::Type(ty) => self.sizeof_type(ty),
                SizeofArg::Expr(inner) => {
                    let ty = self.type_of(inner)?;
                    self.sizeof_type(&ty)
                }
            },
            _ => None,
        }
    }

    fn sizeof_type(&self, ty: &TypeExpr) -> Option<u64> {
        let elem: u64 = if ty.pointer_depth > 0 {
            self.cfg.pointer_width() as u64
        } else {
            match self.cfg.scalar_width(ty.base) {
                0 => return None,
                w => w as u64,
            }
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

    fn type_of(&self, e: &Expr) -> Option<TypeExpr> {
        match e {
            Expr::Ident { name, .. } => self.lookup(name).map(|(_, info)| info.ty),
            Expr::IntLit { .. } => Some(TypeExpr::scalar(BaseType::Int)),
            Expr::FloatLit { single, .. } => {
                Some(TypeExpr::scalar(if *single { BaseType::Float } else { BaseType::Double }))
            }
            Expr::Unary { op: UnaryOp::Deref, operand, .. } => deref_type(&self.type_of(operand)?),
            Expr::Subscript { base, .. } => deref_type(&self.type_of(base)?),
            _ => None,
        }
    }
}

/// The type obtained by `*e` or `e[i]`: drop the outermost array dimension,
/// else one level of pointer.
fn deref_type(ty: &TypeExpr) -> Option<TypeExpr> {
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

#[cfg(test)]
mod tests {
    use crate::diag::{Code, Severity};
    use crate::frontend::parse;
    use crate::sema::{analyze, TargetConfig};

    fn check(src: &str) -> Vec<(Severity, Code, u32, String)> {
        let tu = parse(src, "t.c").expect("parse");
        let (_, diags) = analyze(&tu, &TargetConfig::default());
        diags.into_iter().map(|d| (d.severity, d.code, d.line, d.message)).collect()
    }

    #[test]
    fn register_of_static_array_infers_count() {
        let src = "static float global[123];\n\
                   static void t(int n, float *v) __attribute__ ((task));\n\
                   static void t_cpu(int n, float *v) __attribute__ ((task_implementation (\"cpu\", t))) {\n\
                   }\n\
                   int main(void) {\n\
                   #pragma starpu register global\n\
                     t(123, global);\n\
                   #pragma starpu unregister global\n\
                     return 0;\n\
                   }\n";
        let tu = parse(src, "t.c").expect("parse");
        let (model, diags) = analyze(&tu, &TargetConfig::default());
        assert!(diags.is_empty(), "{diags:?}");
        let site = model.registrations.values().next().expect("one registration");
        assert_eq!((site.var.as_str(), site.count, site.elem_size), ("global", 123, 4));
    }

    #[test]
    fn register_pointer_without_count_is_an_error() {
        let src = "void t(float *v) __attribute__ ((task)) { }\n\
                   int main(void) {\n\
                     float *p;\n\
                   #pragma starpu register p\n\
                     return 0;\n\
                   }\n";
        let diags = check(src);
        assert_eq!(diags.len(), 1);
        assert_eq!(diags[0].1, Code::E_REG_NO_SIZE);
        assert!(diags[0].3.contains("cannot determine the number of elements in 'p'"));
    }

    #[test]
    fn register_automatic_array_warns_about_reclaimed_storage() {
        let src = "void t(float *v) __attribute__ ((task)) { }\n\
                   int main(void) {\n\
                     float local[4];\n\
                   #pragma starpu register local\n\
                     t(local);\n\
                     return 0;\n\
                   }\n";
        let diags = check(src);
        assert_eq!(diags.len(), 1, "{diags:?}");
        let (sev, code, line, msg) = &diags[0];
        assert_eq!(*sev, Severity::Warning);
        assert_eq!(*code, Code::W_AUTO_STORAGE);
        assert_eq!(*line, 4);
        assert_eq!(
            msg,
            "storage of variable 'local' may be reclaimed before tasks that use it have completed"
        );
    }

    #[test]
    fn register_with_explicit_count_and_sizeof() {
        let src = "void t(double *v) __attribute__ ((task)) { }\n\
                   int main(void) {\n\
                     double *p;\n\
                     p = malloc(12 * sizeof *p);\n\
                   #pragma starpu register p 12\n\
                     t(p);\n\
                     return 0;\n\
                   }\n";
        let tu = parse(src, "t.c").expect("parse");
        let (model, diags) = analyze(&tu, &TargetConfig::default());
        assert!(diags.is_empty(), "{diags:?}");
        let site = model.registrations.values().next().expect("registration");
        assert_eq!((site.count, site.elem_size), (12, 8));
    }

    #[test]
    fn heap_allocated_registered_scoped_array() {
        let src = "void t(int *x) __attribute__ ((task)) { }\n\
                   int main(void) {\n\
                     {\n\
                       int x[12] __attribute__ ((heap_allocated, registered));\n\
                       t(x);\n\
                     }\n\
                     return 0;\n\
                   }\n";
        let tu = parse(src, "t.c").expect("parse");
        let (model, diags) = analyze(&tu, &TargetConfig::default());
        assert!(diags.is_empty(), "{diags:?}");
        let sv = model.scoped_vars.values().next().expect("scoped var");
        assert_eq!(
            (sv.var.as_str(), sv.count, sv.elem_size, sv.heap_allocated, sv.registered),
            ("x", 12, 4, true, true)
        );
        // The attribute form cleans up at scope exit, so no storage warning.
    }

    #[test]
    fn heap_allocated_on_pointer_is_an_error() {
        let src = "int main(void) {\n\
                     int *p __attribute__ ((heap_allocated));\n\
                     return 0;\n\
                   }\n";
        let diags = check(src);
        assert_eq!(diags.len(), 1);
        assert_eq!(diags[0].1, Code::E_SCOPED_NOT_ARRAY);
    }

    #[test]
    fn undeclared_variable_in_pragma_reported_once() {
        let src = "int main(void) {\n\
                   #pragma starpu register q 4\n\
                   #pragma starpu unregister q\n\
                     return 0;\n\
                   }\n";
        let diags = check(src);
        assert_eq!(diags.len(), 1, "{diags:?}");
        assert_eq!(diags[0].1, Code::E_UNDECLARED);
        assert_eq!(diags[0].3, "'q' undeclared (first use in this function)");
    }

    #[test]
    fn task_call_arity_and_buffer_argument_shape() {
        let src = "void t(int n, float *v) __attribute__ ((task)) { }\n\
                   int main(void) {\n\
                     float buf[8] __attribute__ ((registered));\n\
                     t(1);\n\
                     t(1, 2);\n\
                     t(1, buf);\n\
                     return 0;\n\
                   }\n";
        let diags = check(src);
        assert_eq!(diags.len(), 2, "{diags:?}");
        assert_eq!(diags[0].1, Code::E_CALL_ARITY);
        assert!(diags[0].3.contains("too few arguments to task 't'"));
        assert_eq!(diags[1].1, Code::E_CALL_ARG);
        assert!(diags[1].3.contains("argument 2 of task 't'"));
    }

    #[test]
    fn calling_an_implementation_directly_is_an_error() {
        let src = "void t(float *v) __attribute__ ((task));\n\
                   void t_cpu(float *v) __attribute__ ((task_implementation (\"cpu\", t))) { }\n\
                   int main(void) {\n\
                     float v[4] __attribute__ ((registered));\n\
                     t_cpu(v);\n\
                     return 0;\n\
                   }\n";
        let diags = check(src);
        assert_eq!(diags.len(), 1, "{diags:?}");
        assert_eq!(diags[0].1, Code::E_IMPL_CALLED);
    }

    #[test]
    fn no_shadowing_across_scopes() {
        let src = "int main(void) {\n\
                     int x;\n\
                     {\n\
                       int x;\n\
                     }\n\
                     return 0;\n\
                   }\n";
        let diags = check(src);
        assert_eq!(diags.len(), 1);
        assert_eq!(diags[0].1, Code::E_DUPLICATE_NAME);
        assert!(diags[0].3.contains("shadows"));
    }

    #[test]
    fn pragmas_inside_kernels_are_rejected() {
        let src = "void t(float *v) __attribute__ ((task)) {\n\
                   #pragma starpu wait\n\
                   }\n\
                   int main(void) { return 0; }\n";
        let diags = check(src);
        assert_eq!(diags.len(), 1, "{diags:?}");
        assert_eq!(diags[0].1, Code::E_PRAGMA_POSITION);
    }
}
