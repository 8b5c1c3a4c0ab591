//! Pretty-printer: turns an AST back into compilable C text.
//!
//! With `strip_annotations` set, every pragma the compiler understands and
//! every known attribute is omitted, leaving the plain sequential program;
//! unknown pragmas and attributes are someone else's and are kept verbatim.
//! Printing is loss-free up to locations: re-parsing the output yields a
//! structurally identical tree.

use super::ast::*;

pub fn print(tu: &TranslationUnit, strip_annotations: bool) -> String {
    let mut p = Printer { out: String::new(), indent: 0, strip: strip_annotations };
    for item in &tu.items {
        match item {
            Item::Function(f) => p.function(f),
            Item::Var(v) => {
                p.var_decl(v);
                p.out.push_str(";\n");
            }
            Item::Pragma(pr) => p.pragma(pr),
        }
    }
    p.out
}

struct Printer {
    out: String,
    indent: usize,
    strip: bool,
}

impl Printer {
    fn pad(&mut self) {
        for _ in 0..self.indent {
            self.out.push_str("  ");
        }
    }

    fn type_prefix(&mut self, ty: &TypeExpr) {
        if ty.is_const {
            self.out.push_str("const ");
        }
        self.out.push_str(ty.base.c_name());
    }

    fn declarator(&mut self, ty: &TypeExpr, name: &str) {
        self.out.push(' ');
        for _ in 0..ty.pointer_depth {
            self.out.push('*');
        }
        self.out.push_str(name);
        for d in &ty.array_dims {
            match d {
                ArrayDim::Const(n) => self.out.push_str(&format!("[{}]", n)),
                ArrayDim::Param(p) => self.out.push_str(&format!("[{}]", p)),
                ArrayDim::Unspecified => self.out.push_str("[]"),
            }
        }
    }

    fn storage(&mut self, s: Storage) {
        match s {
            Storage::None => {}
            Storage::Static => self.out.push_str("static "),
            Storage::Extern => self.out.push_str("extern "),
        }
    }

    fn kept_attrs<'a>(&self, attrs: &'a [Attribute]) -> Vec<&'a Attribute> {
        attrs.iter().filter(|a| !(self.strip && a.name.is_known())).collect()
    }

    fn attributes(&mut self, attrs: &[Attribute]) {
        let kept = self.kept_attrs(attrs);
        if kept.is_empty() {
            return;
        }
        self.out.push_str(" __attribute__ ((");
        for (i, a) in kept.iter().enumerate() {
            if i > 0 {
                self.out.push_str(", ");
            }
            self.out.push_str(a.name.as_str());
            if !a.args.is_empty() {
                self.out.push_str(" (");
                for (j, arg) in a.args.iter().enumerate() {
                    if j > 0 {
                        self.out.push_str(", ");
                    }
                    match arg {
                        AttrArg::Str(s, _) => self.out.push_str(&quote(s)),
                        AttrArg::Ident(s, _) => self.out.push_str(s),
                        AttrArg::Int(n, _) => self.out.push_str(&n.to_string()),
                    }
                }
                self.out.push(')');
            }
        }
        self.out.push_str("))");
    }

    fn function(&mut self, f: &FunctionDecl) {
        self.storage(f.storage);
        if f.is_cl_kernel {
            self.out.push_str("__kernel ");
        }
        self.type_prefix(&f.return_type);
        self.out.push(' ');
        for _ in 0..f.return_type.pointer_depth {
            self.out.push('*');
        }
        self.out.push_str(&f.name);
        self.out.push_str(" (");
        if f.params.is_empty() {
            self.out.push_str("void");
        } else {
            for (i, param) in f.params.iter().enumerate() {
                if i > 0 {
                    self.out.push_str(", ");
                }
                self.type_prefix(&param.ty);
                self.declarator(&param.ty, &param.name);
                self.attributes(&param.attrs);
            }
        }
        self.out.push(')');
        self.attributes(&f.attrs);
        match &f.body {
            None => self.out.push_str(";\n"),
            Some(body) => {
                self.out.push('\n');
                self.block(body);
            }
        }
    }

    fn var_decl(&mut self, v: &VarDecl) {
        self.storage(v.storage);
        self.type_prefix(&v.ty);
        self.declarator(&v.ty, &v.name);
        self.attributes(&v.attrs);
        if let Some(init) = &v.init {
            self.out.push_str(" = ");
            self.expr(init, 1);
        }
    }

    fn pragma(&mut self, p: &Pragma) {
        if self.strip && !matches!(p.kind, PragmaKind::Unknown { .. }) {
            return;
        }
        match &p.kind {
            PragmaKind::Register { var, count, .. } => {
                self.out.push_str(&format!("#pragma starpu register {}", var));
                if let Some(c) = count {
                    self.out.push(' ');
                    self.expr(c, 1);
                }
                self.out.push('\n');
            }
            PragmaKind::Unregister { var, .. } => {
                self.out.push_str(&format!("#pragma starpu unregister {}\n", var));
            }
            PragmaKind::Acquire { var, .. } => {
                self.out.push_str(&format!("#pragma starpu acquire {}\n", var));
            }
            PragmaKind::Wait => self.out.push_str("#pragma starpu wait\n"),
            PragmaKind::OpenclBind { impl_name, file, kernel, group_size, .. } => {
                self.out.push_str(&format!(
                    "#pragma starpu opencl {} {} {} {}\n",
                    impl_name,
                    quote(file),
                    quote(kernel),
                    group_size
                ));
            }
            PragmaKind::Unknown { raw } => {
                self.out.push_str(&format!("#pragma {}\n", raw));
            }
        }
    }

    fn block(&mut self, b: &Block) {
        self.pad();
        self.out.push_str("{\n");
        self.indent += 1;
        for s in &b.stmts {
            self.stmt(s);
        }
        self.indent -= 1;
        self.pad();
        self.out.push_str("}\n");
    }

    fn stmt(&mut self, s: &Stmt) {
        match s {
            Stmt::Var(v) => {
                self.pad();
                self.var_decl(v);
                self.out.push_str(";\n");
            }
            Stmt::Expr(e) => {
                self.pad();
                self.expr(e, 0);
                self.out.push_str(";\n");
            }
            Stmt::For { init, cond, step, body, .. } => {
                self.pad();
                self.out.push_str("for (");
                match init {
                    ForInit::None => {}
                    ForInit::Decl(v) => self.var_decl(v),
                    ForInit::Expr(e) => self.expr(e, 0),
                }
                self.out.push_str("; ");
                if let Some(c) = cond {
                    self.expr(c, 0);
                }
                self.out.push_str("; ");
                if let Some(st) = step {
                    self.expr(st, 0);
                }
                self.out.push_str(")\n");
                self.nested_stmt(body);
            }
            Stmt::If { cond, then_branch, else_branch, .. } => {
                self.pad();
                self.out.push_str("if (");
                self.expr(cond, 0);
                self.out.push_str(")\n");
                self.nested_stmt(then_branch);
                if let Some(e) = else_branch {
                    self.pad();
                    self.out.push_str("else\n");
                    self.nested_stmt(e);
                }
            }
            Stmt::Return { value, .. } => {
                self.pad();
                self.out.push_str("return");
                if let Some(v) = value {
                    self.out.push(' ');
                    self.expr(v, 0);
                }
                self.out.push_str(";\n");
            }
            Stmt::Block(b) => self.block(b),
            Stmt::Pragma(p) => self.pragma(p),
        }
    }

    fn nested_stmt(&mut self, s: &Stmt) {
        if matches!(s, Stmt::Block(_)) {
            self.stmt(s);
        } else {
            self.indent += 1;
            self.stmt(s);
            self.indent -= 1;
        }
    }

    // Precedence levels: 1 assignment, 2 comparison, 3 additive,
    // 4 multiplicative, 5 unary, 6 postfix/primary. A child is parenthesized
    // when its level is below what its context requires.
    fn expr(&mut self, e: &Expr, min_prec: u8) {
        let prec = expr_prec(e);
        let need_parens = prec < min_prec;
        if need_parens {
            self.out.push('(');
        }
        match e {
            Expr::IntLit { value, .. } => self.out.push_str(&value.to_string()),
            Expr::FloatLit { value, single, .. } => {
                // Debug formatting keeps a decimal point or exponent, so the
                // output re-lexes as a floating literal with the same value.
                self.out.push_str(&format!("{:?}", value));
                if *single {
                    self.out.push('f');
                }
            }
            Expr::StrLit { value, .. } => self.out.push_str(&quote(value)),
            Expr::Ident { name, .. } => self.out.push_str(name),
            Expr::Unary { op, operand, .. } => {
                self.out.push_str(match op {
                    UnaryOp::Neg => "-",
                    UnaryOp::Deref => "*",
                    UnaryOp::AddrOf => "&",
                });
                self.expr(operand, 5);
            }
            Expr::Binary { op, lhs, rhs, .. } => {
                let (l, r) = match op {
                    BinOp::Add | BinOp::Sub => (3, 4),
                    BinOp::Mul | BinOp::Div => (4, 5),
                    _ => (3, 3), // comparisons: parenthesize nested comparisons on both sides
                };
                self.expr(lhs, l);
                self.out.push_str(&format!(" {} ", op.symbol()));
                self.expr(rhs, r);
            }
            Expr::Assign { op, target, value, .. } => {
                self.expr(target, 5);
                self.out.push_str(&format!(" {} ", op.symbol()));
                self.expr(value, 1);
            }
            Expr::IncDec { inc, prefix, target, .. } => {
                let sym = if *inc { "++" } else { "--" };
                if *prefix {
                    self.out.push_str(sym);
                    self.expr(target, 6);
                } else {
                    self.expr(target, 6);
                    self.out.push_str(sym);
                }
            }
            Expr::Call { callee, args, .. } => {
                self.out.push_str(callee);
                self.out.push_str(" (");
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        self.out.push_str(", ");
                    }
                    self.expr(a, 1);
                }
                self.out.push(')');
            }
            Expr::Subscript { base, index, .. } => {
                self.expr(base, 6);
                self.out.push('[');
                self.expr(index, 0);
                self.out.push(']');
            }
            Expr::Sizeof { arg, .. } => match arg {
                SizeofArg::Type(ty) => {
                    self.out.push_str("sizeof (");
                    if ty.is_const {
                        self.out.push_str("const ");
                    }
                    self.out.push_str(ty.base.c_name());
                    for _ in 0..ty.pointer_depth {
                        self.out.push_str(" *");
                    }
                    self.out.push(')');
                }
                SizeofArg::Expr(inner) => {
                    self.out.push_str("sizeof ");
                    self.expr(inner, 5);
                }
            },
        }
        if need_parens {
            self.out.push(')');
        }
    }
}

fn expr_prec(e: &Expr) -> u8 {
    match e {
        Expr::Assign { .. } => 1,
        Expr::Binary { op, .. } if op.is_comparison() => 2,
        Expr::Binary { op: BinOp::Add | BinOp::Sub, .. } => 3,
        Expr::Binary { .. } => 4,
        Expr::Unary { .. } | Expr::Sizeof { .. } => 5,
        Expr::IncDec { prefix: true, .. } => 5,
        _ => 6,
    }
}

fn quote(s: &str) -> String {
    let mut out = String::from("\"");
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\0' => out.push_str("\\0"),
            other => out.push(other),
        }
    }
    out.push('"');
    out
}
