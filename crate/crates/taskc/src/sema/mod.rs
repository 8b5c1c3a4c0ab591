//! Semantic analysis: builds the task/codelet model from the AST and
//! diagnoses misuse of the annotation system.
//!
//! Analysis never stops at the first problem; it records diagnostics and
//! keeps going so one compile reports as much as possible. The resulting
//! [`ProgramModel`] is the single input to the registration dataflow check
//! and to lowering.

mod body;
pub mod types;

pub use types::{
    complete_array_count, derive_access_mode, normalize_param, signature_mismatch, AccessMode,
    NormalizedParam, TargetConfig,
};

use crate::diag::{Code, Diagnostic};
use crate::frontend::ast::*;
use crate::loc::Loc;
use std::collections::BTreeMap;

// ── Model types ──────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Target {
    Cpu,
    Opencl,
    Cuda,
}

impl Target {
    pub fn as_str(&self) -> &'static str {
        match self {
            Target::Cpu => "cpu",
            Target::Opencl => "opencl",
            Target::Cuda => "cuda",
        }
    }

    pub fn from_str(s: &str) -> Option<Target> {
        match s {
            "cpu" => Some(Target::Cpu),
            "opencl" => Some(Target::Opencl),
            "cuda" => Some(Target::Cuda),
            _ => None,
        }
    }

    /// OpenCL and CUDA implementations both run on device workers and take
    /// their bodies from an embedded kernel when bound via the pragma.
    pub fn is_device(&self) -> bool {
        !matches!(self, Target::Cpu)
    }
}

#[derive(Debug, Clone)]
pub struct TaskParam {
    pub name: String,
    pub ty: TypeExpr,
    pub mode: AccessMode,
    pub loc: Loc,
}

#[derive(Debug, Clone)]
pub struct TaskDecl {
    pub name: String,
    pub params: Vec<TaskParam>,
    pub loc: Loc,
}

impl TaskDecl {
    /// Indices of buffer parameters, in declaration order.
    pub fn buffer_params(&self) -> Vec<usize> {
        self.params.iter().enumerate().filter(|(_, p)| p.mode.is_buffer()).map(|(i, _)| i).collect()
    }
}

#[derive(Debug, Clone)]
pub struct KernelBinding {
    pub file: String,
    pub kernel: String,
    pub group_size: u64,
    pub loc: Loc,
}

#[derive(Debug, Clone)]
pub struct TaskImpl {
    pub name: String,
    /// Index of the task this implements in `ProgramModel::tasks`.
    pub task: usize,
    pub target: Target,
    pub params: Vec<Param>,
    pub body: Option<Block>,
    pub kernel_binding: Option<KernelBinding>,
    /// True when the implementation was synthesized from the task's own body.
    pub synthesized: bool,
    pub loc: Loc,
}

/// Everything the runtime needs to know about one task: its name (kept for
/// debugging and error messages), buffer count and access modes, and the
/// available implementations.
#[derive(Debug, Clone)]
pub struct CodeletDescriptor {
    pub name: String,
    pub nbuffers: usize,
    pub modes: Vec<AccessMode>,
    /// Indices into `ProgramModel::impls`.
    pub impls: Vec<usize>,
}

/// A resolved registration site: how many elements of what size the pragma
/// or `registered` attribute covers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegistrationSite {
    pub var: String,
    pub count: u64,
    pub elem_size: u32,
}

/// A block-scoped variable carrying `heap_allocated` and/or `registered`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScopedVarInfo {
    pub var: String,
    pub count: u64,
    pub elem_size: u32,
    pub heap_allocated: bool,
    pub registered: bool,
}

pub type LocKey = (u32, u32);

pub fn loc_key(loc: &Loc) -> LocKey {
    (loc.line, loc.col)
}

#[derive(Debug, Clone, Default)]
pub struct ProgramModel {
    pub target: TargetConfig,
    pub tasks: Vec<TaskDecl>,
    pub impls: Vec<TaskImpl>,
    /// One codelet per task, same order as `tasks`.
    pub codelets: Vec<CodeletDescriptor>,
    /// Non-extern file-scope variables, in declaration order.
    pub globals: Vec<VarDecl>,
    /// Names of globals registered at startup via the `registered` attribute,
    /// in declaration order.
    pub global_registrations: Vec<RegistrationSite>,
    /// Registration sites resolved from `register` pragmas and `registered`
    /// attributes on locals, keyed by the pragma/declaration location.
    pub registrations: BTreeMap<LocKey, RegistrationSite>,
    /// Scoped allocations, keyed by declaration location.
    pub scoped_vars: BTreeMap<LocKey, ScopedVarInfo>,
    /// Plain function definitions (not tasks or implementations), in source
    /// order; these are the functions that may submit tasks.
    pub functions: Vec<FunctionDecl>,
    /// Index of `main` in `functions`, when defined.
    pub main: Option<usize>,
}

impl ProgramModel {
    pub fn task_index(&self, name: &str) -> Option<usize> {
        self.tasks.iter().position(|t| t.name == name)
    }

    pub fn impl_index(&self, name: &str) -> Option<usize> {
        self.impls.iter().position(|i| i.name == name)
    }
}

// ── Analysis entry point ─────────────────────────────────────────────────────

/// Analyze a translation unit. Always returns a model (possibly partial) and
/// the full diagnostic list; callers must refuse to lower when any diagnostic
/// is an error.
pub fn analyze(tu: &TranslationUnit, cfg: &TargetConfig) -> (ProgramModel, Vec<Diagnostic>) {
    let mut an = Analyzer {
        model: ProgramModel { target: *cfg, ..Default::default() },
        diags: Vec::new(),
        cfg: *cfg,
        merged: merge_function_items(tu),
        classified: BTreeMap::new(),
    };
    an.run(tu);
    let mut diags = an.diags;
    crate::diag::sort_diagnostics(&mut diags);
    (an.model, diags)
}

/// A function's declarations merged into one view: C allows a prototype
/// followed by a definition, and attributes may appear on either.
struct MergedFn {
    name: String,
    first_item: usize,
    storage: Storage,
    return_type: TypeExpr,
    params: Vec<Param>,
    attrs: Vec<Attribute>,
    body: Option<Block>,
    loc: Loc,
    redefinition: Option<Loc>,
    conflicting_sig: Option<Loc>,
}

fn merge_function_items(tu: &TranslationUnit) -> BTreeMap<String, MergedFn> {
    let mut merged: BTreeMap<String, MergedFn> = BTreeMap::new();
    for (idx, item) in tu.items.iter().enumerate() {
        let Item::Function(f) = item else { continue };
        match merged.get_mut(&f.name) {
            None => {
                merged.insert(
                    f.name.clone(),
                    MergedFn {
                        name: f.name.clone(),
                        first_item: idx,
                        storage: f.storage,
                        return_type: f.return_type.clone(),
                        params: f.params.clone(),
                        attrs: f.attrs.clone(),
                        body: f.body.clone(),
                        loc: f.loc.clone(),
                        redefinition: None,
                        conflicting_sig: None,
                    },
                );
            }
            Some(m) => {
                if m.body.is_some() && f.body.is_some() {
                    m.redefinition = Some(f.loc.clone());
                    continue;
                }
                let compatible = m.params.len() == f.params.len()
                    && m.params
                        .iter()
                        .zip(&f.params)
                        .all(|(a, b)| normalize_param(&a.ty) == normalize_param(&b.ty))
                    && normalize_param(&m.return_type) == normalize_param(&f.return_type);
                if !compatible {
                    m.conflicting_sig = Some(f.loc.clone());
                    continue;
                }
                // The defining declaration wins for parameter names; attrs
                // accumulate (first occurrence order, no duplicates).
                if f.body.is_some() {
                    m.params = f.params.clone();
                    m.body = f.body.clone();
                }
                for a in &f.attrs {
                    if !m.attrs.iter().any(|e| e.name == a.name) {
                        m.attrs.push(a.clone());
                    }
                }
            }
        }
    }
    merged
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FnRole {
    Task(usize),
    Impl(Option<usize>),
    Plain(Option<usize>),
}

struct Analyzer {
    model: ProgramModel,
    diags: Vec<Diagnostic>,
    cfg: TargetConfig,
    merged: BTreeMap<String, MergedFn>,
    classified: BTreeMap<String, FnRole>,
}

impl Analyzer {
    fn error(&mut self, code: Code, loc: &Loc, msg: impl Into<String>) {
        self.diags.push(Diagnostic::error(code, loc, msg));
    }

    fn warn(&mut self, code: Code, loc: &Loc, msg: impl Into<String>) {
        self.diags.push(Diagnostic::warning(code, loc, msg));
    }

    fn run(&mut self, tu: &TranslationUnit) {
        // Single pass in source order: a task must be declared before its
        // implementations, and an implementation before its kernel binding.
        for (idx, item) in tu.items.iter().enumerate() {
            match item {
                Item::Function(f) => {
                    let m = &self.merged[&f.name];
                    if m.first_item != idx {
                        continue;
                    }
                    let redefinition = m.redefinition.clone();
                    let conflicting_sig = m.conflicting_sig.clone();
                    if let Some(loc) = redefinition {
                        self.error(Code::E_DUPLICATE_NAME, &loc, format!("redefinition of function '{}'", f.name));
                    }
                    if let Some(loc) = conflicting_sig {
                        self.error(
                            Code::E_SIG_MISMATCH,
                            &loc,
                            format!("conflicting declarations of function '{}'", f.name),
                        );
                    }
                    self.classify_function(&f.name);
                }
                Item::Var(v) => self.global_var(v),
                Item::Pragma(p) => self.toplevel_pragma(p),
            }
        }
        // Late checks that need the whole unit.
        self.check_undefined_impls();
        self.check_missing_impls();
        self.check_opencl_types_all();
        // Walk bodies: registration resolution, call shapes, scoped vars.
        body::walk_all(self, tu);
    }

    fn classify_function(&mut self, name: &str) {
        let m = &self.merged[name];
        let has_task = m.attrs.iter().any(|a| a.name == AttrName::Task);
        let has_impl = m.attrs.iter().any(|a| a.name == AttrName::TaskImplementation);
        let attr_errors: Vec<(Loc, String)> = m
            .attrs
            .iter()
            .filter(|a| matches!(a.name, AttrName::Output | AttrName::HeapAllocated | AttrName::Registered))
            .map(|a| (a.loc.clone(), format!("attribute '{}' is not valid on a function", a.name.as_str())))
            .collect();
        let both_attrs = if has_task && has_impl {
            Some((m.loc.clone(), format!("function '{}' cannot be both a task and a task implementation", m.name)))
        } else {
            None
        };
        for (loc, msg) in attr_errors {
            self.error(Code::E_ATTR_CONTEXT, &loc, msg);
        }
        if let Some((loc, msg)) = both_attrs {
            self.error(Code::E_ATTR_CONTEXT, &loc, msg);
        }
        let role = if has_task {
            FnRole::Task(self.declare_task(name))
        } else if has_impl {
            FnRole::Impl(self.declare_impl(name))
        } else {
            let m = &self.merged[name];
            if m.body.is_some() {
                let f = FunctionDecl {
                    name: m.name.clone(),
                    storage: m.storage,
                    is_cl_kernel: false,
                    return_type: m.return_type.clone(),
                    params: m.params.clone(),
                    attrs: m.attrs.clone(),
                    body: m.body.clone(),
                    loc: m.loc.clone(),
                };
                let idx = self.model.functions.len();
                self.model.functions.push(f);
                if name == "main" {
                    self.model.main = Some(idx);
                }
                FnRole::Plain(Some(idx))
            } else {
                FnRole::Plain(None)
            }
        };
        self.classified.insert(name.to_string(), role);
    }

    fn declare_task(&mut self, name: &str) -> usize {
        let m = &self.merged[name];
        let loc = m.loc.clone();
        let task_attr = m.attrs.iter().find(|a| a.name == AttrName::Task).unwrap();
        if !task_attr.args.is_empty() {
            let aloc = task_attr.loc.clone();
            self.error(Code::E_ATTR_ARGS, &aloc, "'task' attribute takes no arguments");
        }
        let m = &self.merged[name];
        if m.return_type.base != BaseType::Void || m.return_type.pointer_depth > 0 {
            let l = loc.clone();
            let msg = format!("task '{}' must have return type 'void'", name);
            self.error(Code::E_TASK_RETURN_TYPE, &l, msg);
        }
        let m = &self.merged[name];
        let params_src = m.params.clone();
        let body = m.body.clone();
        let mut params = Vec::new();
        for (i, p) in params_src.iter().enumerate() {
            if p.ty.array_dims.len() > 1 {
                let l = p.loc.clone();
                let msg = format!(
                    "parameter '{}' of task '{}' has a multidimensional array type; tasks take flat arrays",
                    p.name, name
                );
                self.error(Code::E_PARAM_TYPE, &l, msg);
            }
            if let Some(ArrayDim::Param(dim)) = p.ty.array_dims.first() {
                let names_earlier_int = params_src[..i].iter().any(|q| {
                    &q.name == dim && !q.ty.is_pointer_or_array() && self.cfg.scalar_width(q.ty.base) >= 1
                        && !matches!(q.ty.base, BaseType::Float | BaseType::Double | BaseType::Void)
                });
                if !names_earlier_int {
                    let l = p.loc.clone();
                    let msg = format!(
                        "array dimension '{}' of parameter '{}' does not name a preceding integer parameter",
                        dim, p.name
                    );
                    self.error(Code::E_PARAM_TYPE, &l, msg);
                }
            }
            let mode = match derive_access_mode(p, &self.cfg) {
                Ok(mode) => mode,
                Err(d) => {
                    self.diags.push(d);
                    AccessMode::ScalarValue
                }
            };
            params.push(TaskParam { name: p.name.clone(), ty: p.ty.clone(), mode, loc: p.loc.clone() });
        }
        let task_idx = self.model.tasks.len();
        let modes: Vec<AccessMode> = params.iter().filter(|p| p.mode.is_buffer()).map(|p| p.mode).collect();
        self.model.tasks.push(TaskDecl { name: name.to_string(), params, loc: loc.clone() });
        self.model.codelets.push(CodeletDescriptor {
            name: name.to_string(),
            nbuffers: modes.len(),
            modes,
            impls: Vec::new(),
        });
        // A task defined with a body gets that body as its cpu implementation.
        if let Some(body) = body {
            let impl_idx = attach_implicit_cpu_impl(&mut self.model, task_idx, params_src, body, &loc);
            self.model.codelets[task_idx].impls.push(impl_idx);
        }
        task_idx
    }

    fn declare_impl(&mut self, name: &str) -> Option<usize> {
        let m = &self.merged[name];
        let attr = m.attrs.iter().find(|a| a.name == AttrName::TaskImplementation).unwrap().clone();
        let loc = m.loc.clone();
        let (target_str, target_loc, task_name) = match (attr.args.first(), attr.args.get(1), attr.args.len()) {
            (Some(AttrArg::Str(t, tl)), Some(AttrArg::Ident(task, _)), 2) => {
                (t.clone(), tl.clone(), task.clone())
            }
            _ => {
                self.error(
                    Code::E_ATTR_ARGS,
                    &attr.loc,
                    "'task_implementation' expects a target string and a task name: (\"cpu\", some_task)",
                );
                return None;
            }
        };
        let Some(target) = Target::from_str(&target_str) else {
            self.error(
                Code::E_BAD_TARGET,
                &target_loc,
                format!("unknown task implementation target '{}'", target_str),
            );
            return None;
        };
        let Some(task_idx) = self.model.task_index(&task_name) else {
            self.error(
                Code::E_UNKNOWN_TASK,
                &attr.loc,
                format!("'{}' is not a declared task", task_name),
            );
            return None;
        };
        let m = &self.merged[name];
        if m.return_type.base != BaseType::Void || m.return_type.pointer_depth > 0 {
            let l = loc.clone();
            let msg = format!("implementation '{}' must have return type 'void'", name);
            self.error(Code::E_SIG_MISMATCH, &l, msg);
        }
        let task = &self.model.tasks[task_idx];
        let task_params: Vec<Param> = task
            .params
            .iter()
            .map(|p| Param { name: p.name.clone(), ty: p.ty.clone(), attrs: vec![], loc: p.loc.clone() })
            .collect();
        let m = &self.merged[name];
        if let Some((pos, t, i)) = signature_mismatch(&task_params, &m.params) {
            let msg = if pos == usize::MAX {
                format!(
                    "implementation '{}' has {} parameters but task '{}' has {}",
                    name, i, task_name, t
                )
            } else {
                format!(
                    "parameter {} of implementation '{}' has type '{}' but task '{}' expects '{}'",
                    pos + 1,
                    name,
                    i,
                    task_name,
                    t
                )
            };
            let l = loc.clone();
            self.error(Code::E_SIG_MISMATCH, &l, msg);
        }
        // Exactly one implementation per (task, target) in one unit.
        let existing = self.model.codelets[task_idx]
            .impls
            .iter()
            .find(|&&i| self.model.impls[i].target == target)
            .copied();
        if let Some(prev) = existing {
            let synthesized = self.model.impls[prev].synthesized;
            let l = loc.clone();
            if target == Target::Cpu && synthesized {
                self.error(
                    Code::E_AMBIGUOUS_CPU_IMPL,
                    &l,
                    format!("task '{}' already has an implicit cpu implementation from its body", task_name),
                );
            } else {
                self.error(
                    Code::E_DUP_IMPL,
                    &l,
                    format!("duplicate '{}' implementation for task '{}'", target.as_str(), task_name),
                );
            }
            return None;
        }
        let m = &self.merged[name];
        let impl_idx = self.model.impls.len();
        self.model.impls.push(TaskImpl {
            name: name.to_string(),
            task: task_idx,
            target,
            params: m.params.clone(),
            body: m.body.clone(),
            kernel_binding: None,
            synthesized: false,
            loc,
        });
        self.model.codelets[task_idx].impls.push(impl_idx);
        Some(impl_idx)
    }

    fn global_var(&mut self, v: &VarDecl) {
        for a in &v.attrs {
            match a.name {
                AttrName::Task | AttrName::TaskImplementation => {
                    self.error(Code::E_TASK_ON_NONFUNCTION, &a.loc, "task attribute on non-function");
                }
                AttrName::Output => {
                    self.error(Code::E_ATTR_CONTEXT, &a.loc, "'output' attribute is only valid on parameters");
                }
                AttrName::HeapAllocated => {
                    self.error(
                        Code::E_ATTR_CONTEXT,
                        &a.loc,
                        "'heap_allocated' attribute requires a variable with automatic storage duration",
                    );
                }
                AttrName::Registered | AttrName::Unknown(_) => {}
            }
        }
        if v.ty.base == BaseType::Void && v.ty.pointer_depth == 0 {
            self.error(Code::E_PARAM_TYPE, &v.loc, format!("variable '{}' has incomplete type 'void'", v.name));
            return;
        }
        if self.model.globals.iter().any(|g| g.name == v.name) {
            self.error(Code::E_DUPLICATE_NAME, &v.loc, format!("redeclaration of variable '{}'", v.name));
            return;
        }
        if types::has_attr(&v.attrs, &AttrName::Registered) {
            match complete_array_count(&v.ty) {
                Some(count) => {
                    let site = RegistrationSite {
                        var: v.name.clone(),
                        count,
                        elem_size: self.cfg.scalar_width(v.ty.base),
                    };
                    self.model.global_registrations.push(site);
                }
                None => {
                    self.error(
                        Code::E_SCOPED_NOT_ARRAY,
                        &v.loc,
                        format!("variable '{}' with 'registered' attribute must have a complete array type", v.name),
                    );
                }
            }
        }
        if v.storage != Storage::Extern {
            self.model.globals.push(v.clone());
        }
    }

    fn toplevel_pragma(&mut self, p: &Pragma) {
        match &p.kind {
            PragmaKind::OpenclBind { impl_name, impl_loc, file, kernel, group_size } => {
                let Some(impl_idx) = self.model.impl_index(impl_name) else {
                    self.error(
                        Code::E_UNDECLARED,
                        impl_loc,
                        format!("'{}' is not a declared task implementation", impl_name),
                    );
                    return;
                };
                let ti = &self.model.impls[impl_idx];
                if ti.target == Target::Cpu {
                    self.error(
                        Code::E_BAD_KERNEL_BINDING,
                        &p.loc,
                        format!("cannot bind an OpenCL kernel to cpu implementation '{}'", impl_name),
                    );
                    return;
                }
                if ti.body.is_some() {
                    self.error(
                        Code::E_BAD_KERNEL_BINDING,
                        &p.loc,
                        format!("implementation '{}' already has a body", impl_name),
                    );
                    return;
                }
                if ti.kernel_binding.is_some() {
                    self.error(
                        Code::E_BAD_KERNEL_BINDING,
                        &p.loc,
                        format!("implementation '{}' is already bound to a kernel", impl_name),
                    );
                    return;
                }
                if *group_size == 0 {
                    self.error(Code::E_BAD_KERNEL_BINDING, &p.loc, "kernel group size must be positive");
                    return;
                }
                self.model.impls[impl_idx].kernel_binding = Some(KernelBinding {
                    file: file.clone(),
                    kernel: kernel.clone(),
                    group_size: *group_size,
                    loc: p.loc.clone(),
                });
            }
            PragmaKind::Wait
            | PragmaKind::Register { .. }
            | PragmaKind::Unregister { .. }
            | PragmaKind::Acquire { .. } => {
                self.error(
                    Code::E_PRAGMA_POSITION,
                    &p.loc,
                    "this pragma must appear inside a function body",
                );
            }
            PragmaKind::Unknown { .. } => {}
        }
    }

    fn check_undefined_impls(&mut self) {
        let mut errs = Vec::new();
        for ti in &self.model.impls {
            if ti.body.is_none() && ti.kernel_binding.is_none() {
                errs.push((
                    ti.loc.clone(),
                    format!(
                        "implementation '{}' of task '{}' is never defined and not bound to a kernel",
                        ti.name, self.model.tasks[ti.task].name
                    ),
                ));
            }
        }
        for (loc, msg) in errs {
            self.error(Code::E_IMPL_UNDEFINED, &loc, msg);
        }
    }

    fn check_missing_impls(&mut self) {
        let mut errs = Vec::new();
        for (i, cd) in self.model.codelets.iter().enumerate() {
            if cd.impls.is_empty() {
                errs.push((self.model.tasks[i].loc.clone(), format!("task '{}' has no implementation", cd.name)));
            }
        }
        for (loc, msg) in errs {
            self.error(Code::E_NO_IMPL, &loc, msg);
        }
    }

    /// Warn about parameter types that do not translate to OpenCL: `size_t`
    /// has no OpenCL counterpart, and `long`/`char` may have a different
    /// width or signedness than the same-named OpenCL type on this target.
    fn check_opencl_types_all(&mut self) {
        let mut warns = Vec::new();
        for (t, cd) in self.model.codelets.iter().enumerate() {
            let has_device_impl = cd.impls.iter().any(|&i| self.model.impls[i].target.is_device());
            if !has_device_impl {
                continue;
            }
            for p in &self.model.tasks[t].params {
                for w in opencl_type_warnings(&p.ty, &self.cfg) {
                    warns.push((p.loc.clone(), w));
                }
            }
        }
        for (loc, msg) in warns {
            self.warn(Code::W_OPENCL_TYPE, &loc, msg);
        }
    }
}

/// Per-type OpenCL compatibility messages; applies to a scalar's type or to
/// a buffer's element type.
pub fn opencl_type_warnings(ty: &TypeExpr, cfg: &TargetConfig) -> Vec<String> {
    let mut out = Vec::new();
    match ty.base {
        BaseType::SizeT => out.push("'size_t' does not correspond to a known OpenCL type".to_string()),
        BaseType::Long if cfg.long_width_bits == 32 => {
            out.push("C type 'long int' differs from the same-named OpenCL type".to_string());
        }
        BaseType::UnsignedLong if cfg.long_width_bits == 32 => {
            out.push("C type 'long unsigned int' differs from the same-named OpenCL type".to_string());
        }
        BaseType::Char if !cfg.char_signed => {
            out.push("C type 'char' differs from the same-named OpenCL type".to_string());
        }
        _ => {}
    }
    out
}

/// Move a task's body into a synthesized cpu implementation, leaving the task
/// itself as a pure declaration. The synthesized implementation reuses the
/// task's parameter list.
pub fn attach_implicit_cpu_impl(
    model: &mut ProgramModel,
    task_idx: usize,
    params: Vec<Param>,
    body: Block,
    loc: &Loc,
) -> usize {
    let idx = model.impls.len();
    model.impls.push(TaskImpl {
        name: model.tasks[task_idx].name.clone(),
        task: task_idx,
        target: Target::Cpu,
        params,
        body: Some(body),
        kernel_binding: None,
        synthesized: true,
        loc: loc.clone(),
    });
    idx
}
