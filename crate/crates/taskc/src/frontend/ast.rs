//! Abstract syntax for the task-annotated C subset.
//!
//! Nodes carry the `Loc` where they begin. Structural comparisons in tests go
//! through [`strip_locations`], which zeroes every location so that a program
//! and its pretty-printed re-parse compare equal.

use crate::loc::Loc;

// ── Types ───────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BaseType {
    Void,
    Char,
    SignedChar,
    UnsignedChar,
    Short,
    UnsignedShort,
    Int,
    UnsignedInt,
    Long,
    UnsignedLong,
    Float,
    Double,
    SizeT,
}

impl BaseType {
    /// The C spelling, used by the printer and in diagnostics.
    pub fn c_name(&self) -> &'static str {
        match self {
            BaseType::Void => "void",
            BaseType::Char => "char",
            BaseType::SignedChar => "signed char",
            BaseType::UnsignedChar => "unsigned char",
            BaseType::Short => "short",
            BaseType::UnsignedShort => "unsigned short",
            BaseType::Int => "int",
            BaseType::UnsignedInt => "unsigned int",
            BaseType::Long => "long",
            BaseType::UnsignedLong => "unsigned long",
            BaseType::Float => "float",
            BaseType::Double => "double",
            BaseType::SizeT => "size_t",
        }
    }
}

/// One array dimension: a constant extent, a reference to a parameter named
/// earlier in the same parameter list (C99 variable-length style), or an
/// unspecified extent (`[]`).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ArrayDim {
    Const(u64),
    Param(String),
    Unspecified,
}

/// A declared type: base type, optional const qualification of the element /
/// pointee, pointer depth, and array dimensions (outermost first).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TypeExpr {
    pub base: BaseType,
    pub is_const: bool,
    pub pointer_depth: u32,
    pub array_dims: Vec<ArrayDim>,
}

impl TypeExpr {
    pub fn scalar(base: BaseType) -> Self {
        TypeExpr { base, is_const: false, pointer_depth: 0, array_dims: Vec::new() }
    }

    pub fn is_pointer_or_array(&self) -> bool {
        self.pointer_depth > 0 || !self.array_dims.is_empty()
    }

    /// C-ish rendering for diagnostics, e.g. `const float *` or `float[size]`.
    pub fn c_render(&self) -> String {
        let mut s = String::new();
        if self.is_const {
            s.push_str("const ");
        }
        s.push_str(self.base.c_name());
        for _ in 0..self.pointer_depth {
            s.push_str(" *");
        }
        for d in &self.array_dims {
            match d {
                ArrayDim::Const(n) => s.push_str(&format!("[{}]", n)),
                ArrayDim::Param(p) => s.push_str(&format!("[{}]", p)),
                ArrayDim::Unspecified => s.push_str("[]"),
            }
        }
        s
    }
}

// ── Attributes ───────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub enum AttrArg {
    Str(String, Loc),
    Ident(String, Loc),
    Int(u64, Loc),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AttrName {
    Task,
    TaskImplementation,
    Output,
    HeapAllocated,
    Registered,
    /// Attributes the compiler does not interpret are preserved and inert.
    Unknown(String),
}

impl AttrName {
    pub fn as_str(&self) -> &str {
        match self {
            AttrName::Task => "task",
            AttrName::TaskImplementation => "task_implementation",
            AttrName::Output => "output",
            AttrName::HeapAllocated => "heap_allocated",
            AttrName::Registered => "registered",
            AttrName::Unknown(s) => s,
        }
    }

    pub fn from_str(s: &str) -> AttrName {
        match s {
            "task" => AttrName::Task,
            "task_implementation" => AttrName::TaskImplementation,
            "output" => AttrName::Output,
            "heap_allocated" => AttrName::HeapAllocated,
            "registered" => AttrName::Registered,
            other => AttrName::Unknown(other.to_string()),
        }
    }

    pub fn is_known(&self) -> bool {
        !matches!(self, AttrName::Unknown(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attribute {
    pub name: AttrName,
    pub args: Vec<AttrArg>,
    pub loc: Loc,
}

// ── Pragmas ──────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub enum PragmaKind {
    /// `#pragma starpu register VAR [COUNT]`
    Register { var: String, var_loc: Loc, count: Option<Expr> },
    /// `#pragma starpu unregister VAR`
    Unregister { var: String, var_loc: Loc },
    /// `#pragma starpu acquire VAR`
    Acquire { var: String, var_loc: Loc },
    /// `#pragma starpu wait`
    Wait,
    /// `#pragma starpu opencl IMPL "FILE" "KERNEL" GROUP_SIZE`
    OpenclBind { impl_name: String, impl_loc: Loc, file: String, kernel: String, group_size: u64 },
    /// Any pragma outside the `starpu` namespace: preserved verbatim, inert.
    Unknown { raw: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pragma {
    pub kind: PragmaKind,
    pub loc: Loc,
}

// ── Declarations ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Storage {
    None,
    Static,
    Extern,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub ty: TypeExpr,
    pub attrs: Vec<Attribute>,
    pub loc: Loc,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionDecl {
    pub name: String,
    pub storage: Storage,
    /// True for `__kernel` functions in the OpenCL source dialect.
    pub is_cl_kernel: bool,
    pub return_type: TypeExpr,
    /// `None` for `(void)` / `()` parameter lists.
    pub params: Vec<Param>,
    pub attrs: Vec<Attribute>,
    pub body: Option<Block>,
    pub loc: Loc,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarDecl {
    pub name: String,
    pub storage: Storage,
    pub ty: TypeExpr,
    pub attrs: Vec<Attribute>,
    pub init: Option<Expr>,
    pub loc: Loc,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Item {
    Function(FunctionDecl),
    Var(VarDecl),
    Pragma(Pragma),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TranslationUnit {
    pub file: String,
    pub items: Vec<Item>,
}

// ── Statements ───────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub stmts: Vec<Stmt>,
    pub loc: Loc,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ForInit {
    None,
    Decl(VarDecl),
    Expr(Expr),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stmt {
    Var(VarDecl),
    Expr(Expr),
    For { init: ForInit, cond: Option<Expr>, step: Option<Expr>, body: Box<Stmt>, loc: Loc },
    If { cond: Expr, then_branch: Box<Stmt>, else_branch: Option<Box<Stmt>>, loc: Loc },
    Return { value: Option<Expr>, loc: Loc },
    Block(Block),
    Pragma(Pragma),
}

impl Stmt {
    pub fn loc(&self) -> &Loc {
        match self {
            Stmt::Var(v) => &v.loc,
            Stmt::Expr(e) => e.loc(),
            Stmt::For { loc, .. } => loc,
            Stmt::If { loc, .. } => loc,
            Stmt::Return { loc, .. } => loc,
            Stmt::Block(b) => &b.loc,
            Stmt::Pragma(p) => &p.loc,
        }
    }
}

// ── Expressions ──────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl BinOp {
    pub fn symbol(&self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
        }
    }

    pub fn is_comparison(&self) -> bool {
        matches!(self, BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge | BinOp::Eq | BinOp::Ne)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssignOp {
    Assign,
    AddAssign,
    SubAssign,
    MulAssign,
    DivAssign,
}

impl AssignOp {
    pub fn symbol(&self) -> &'static str {
        match self {
            AssignOp::Assign => "=",
            AssignOp::AddAssign => "+=",
            AssignOp::SubAssign => "-=",
            AssignOp::MulAssign => "*=",
            AssignOp::DivAssign => "/=",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Deref,
    AddrOf,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SizeofArg {
    Type(TypeExpr),
    Expr(Box<Expr>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    IntLit { value: u64, loc: Loc },
    FloatLit { value: f64, single: bool, loc: Loc },
    StrLit { value: String, loc: Loc },
    Ident { name: String, loc: Loc },
    Unary { op: UnaryOp, operand: Box<Expr>, loc: Loc },
    Binary { op: BinOp, lhs: Box<Expr>, rhs: Box<Expr>, loc: Loc },
    Assign { op: AssignOp, target: Box<Expr>, value: Box<Expr>, loc: Loc },
    /// Prefix or postfix `++`/`--`; both forms have the same effect as a
    /// statement, which is the only position the subset allows them in.
    IncDec { inc: bool, prefix: bool, target: Box<Expr>, loc: Loc },
    Call { callee: String, args: Vec<Expr>, loc: Loc },
    Subscript { base: Box<Expr>, index: Box<Expr>, loc: Loc },
    Sizeof { arg: SizeofArg, loc: Loc },
}

impl Expr {
    pub fn loc(&self) -> &Loc {
        match self {
            Expr::IntLit { loc, .. }
            | Expr::FloatLit { loc, .. }
            | Expr::StrLit { loc, .. }
            | Expr::Ident { loc, .. }
            | Expr::Unary { loc, .. }
            | Expr::Binary { loc, .. }
            | Expr::Assign { loc, .. }
            | Expr::IncDec { loc, .. }
            | Expr::Call { loc, .. }
            | Expr::Subscript { loc, .. }
            | Expr::Sizeof { loc, .. } => loc,
        }
    }
}

// ── Location stripping for structural comparison ────────────────────────────

/// Return a copy of `tu` with every location replaced by the synthesized
/// placeholder, so two parses of equivalent text compare equal.
pub fn strip_locations(tu: &TranslationUnit) -> TranslationUnit {
    let mut tu = tu.clone();
    tu.file = String::new();
    for item in &mut tu.items {
        match item {
            Item::Function(f) => strip_function(f),
            Item::Var(v) => strip_var(v),
            Item::Pragma(p) => strip_pragma(p),
        }
    }
    tu
}

fn z() -> Loc {
    Loc::synthesized()
}

fn strip_function(f: &mut FunctionDecl) {
    f.loc = z();
    for p in &mut f.params {
        p.loc = z();
        strip_attrs(&mut p.attrs);
    }
    strip_attrs(&mut f.attrs);
    if let Some(body) = &mut f.body {
        strip_block(body);
    }
}

fn strip_var(v: &mut VarDecl) {
    v.loc = z();
    strip_attrs(&mut v.attrs);
    if let Some(init) = &mut v.init {
        strip_expr(init);
    }
}

fn strip_attrs(attrs: &mut [Attribute]) {
    for a in attrs {
        a.loc = z();
        for arg in &mut a.args {
            match arg {
                AttrArg::Str(_, l) | AttrArg::Ident(_, l) | AttrArg::Int(_, l) => *l = z(),
            }
        }
    }
}

fn strip_pragma(p: &mut Pragma) {
    p.loc = z();
    match &mut p.kind {
        PragmaKind::Register { var_loc, count, .. } => {
            *var_loc = z();
            if let Some(c) = count {
                strip_expr(c);
            }
        }
        PragmaKind::Unregister { var_loc, .. } | PragmaKind::Acquire { var_loc, .. } => *var_loc = z(),
        PragmaKind::OpenclBind { impl_loc, .. } => *impl_loc = z(),
        PragmaKind::Wait | PragmaKind::Unknown { .. } => {}
    }
}

fn strip_block(b: &mut Block) {
    b.loc = z();
    for s in &mut b.stmts {
        strip_stmt(s);
    }
}

fn strip_stmt(s: &mut Stmt) {
    match s {
        Stmt::Var(v) => strip_var(v),
        Stmt::Expr(e) => strip_expr(e),
        Stmt::For { init, cond, step, body, loc } => {
            *loc = z();
            match init {
                ForInit::None => {}
                ForInit::Decl(v) => strip_var(v),
                ForInit::Expr(e) => strip_expr(e),
            }
            if let Some(c) = cond {
                strip_expr(c);
            }
            if let Some(st) = step {
                strip_expr(st);
            }
            strip_stmt(body);
        }
        Stmt::If { cond, then_branch, else_branch, loc } => {
            *loc = z();
            strip_expr(cond);
            strip_stmt(then_branch);
            if let Some(e) = else_branch {
                strip_stmt(e);
            }
        }
        Stmt::Return { value, loc } => {
            *loc = z();
            if let Some(v) = value {
                strip_expr(v);
            }
        }
        Stmt::Block(b) => strip_block(b),
        Stmt::Pragma(p) => strip_pragma(p),
    }
}

fn strip_expr(e: &mut Expr) {
    match e {
        Expr::IntLit { loc, .. }
        | Expr::FloatLit { loc, .. }
        | Expr::StrLit { loc, .. }
        | Expr::Ident { loc, .. } => *loc = z(),
        Expr::Unary { operand, loc, .. } => {
            *loc = z();
            strip_expr(operand);
        }
        Expr::Binary { lhs, rhs, loc, .. } => {
            *loc = z();
            strip_expr(lhs);
            strip_expr(rhs);
        }
        Expr::Assign { target, value, loc, .. } => {
            *loc = z();
            strip_expr(target);
            strip_expr(value);
        }
        Expr::IncDec { target, loc, .. } => {
            *loc = z();
            strip_expr(target);
        }
        Expr::Call { args, loc, .. } => {
            *loc = z();
            for a in args {
                strip_expr(a);
            }
        }
        Expr::Subscript { base, index, loc } => {
            *loc = z();
            strip_expr(base);
            strip_expr(index);
        }
        Expr::Sizeof { arg, loc } => {
            *loc = z();
            if let SizeofArg::Expr(inner) = arg {
                strip_expr(inner);
            }
        }
    }
}
