//! Recursive-descent parser for the annotated C subset.
//!
//! The grammar is deliberately closed: declarations, statements, and
//! expressions cover what the annotation system needs and nothing more.
//! Attributes are accepted only in declaration-suffix position (after the
//! declarator), matching how the examples in the interface documentation
//! spell them. Pragma payloads are re-lexed so operand locations point at the
//! original line.

use super::ast::*;
use super::token::{tokenize_at, Kw, LexError, Punct, TokKind, Token};
use crate::loc::Loc;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{loc}: expected {}, found {found}", expected.join(" or "))]
pub struct ParseError {
    pub loc: Loc,
    pub expected: Vec<String>,
    pub found: String,
}

pub struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    file: Arc<str>,
}

type PResult<T> = Result<T, ParseError>;

/// Parse a full translation unit from source text.
pub fn parse(src: &str, file: &str) -> Result<TranslationUnit, ParseError> {
    let tokens = tokenize(src, file)?;
    let mut p = Parser::new(tokens, file);
    p.translation_unit(file)
}

fn tokenize(src: &str, file: &str) -> Result<Vec<Token>, ParseError> {
    super::token::tokenize(src, file).map_err(lex_to_parse)
}

fn lex_to_parse(e: LexError) -> ParseError {
    ParseError { loc: e.loc, expected: vec!["valid token".into()], found: e.message }
}

impl Parser {
    pub fn new(tokens: Vec<Token>, file: &str) -> Self {
        Parser { tokens, pos: 0, file: Arc::from(file) }
    }

    fn peek(&self) -> &Token {
        &self.tokens[self.pos.min(self.tokens.len() - 1)]
    }

    fn peek_kind(&self) -> &TokKind {
        &self.peek().kind
    }

    fn peek_ahead(&self, n: usize) -> &TokKind {
        &self.tokens[(self.pos + n).min(self.tokens.len() - 1)].kind
    }

    fn bump(&mut self) -> Token {
        let t = self.tokens[self.pos.min(self.tokens.len() - 1)].clone();
        if self.pos < self.tokens.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn at(&self, kind: &TokKind) -> bool {
        self.peek_kind() == kind
    }

    fn at_punct(&self, p: Punct) -> bool {
        matches!(self.peek_kind(), TokKind::Punct(q) if *q == p)
    }

    fn at_kw(&self, k: Kw) -> bool {
        matches!(self.peek_kind(), TokKind::Kw(q) if *q == k)
    }

    fn eat_punct(&mut self, p: Punct) -> bool {
        if self.at_punct(p) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn eat_kw(&mut self, k: Kw) -> bool {
        if self.at_kw(k) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn error<T>(&self, expected: &[&str]) -> PResult<T> {
        Err(ParseError {
            loc: self.peek().loc.clone(),
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found: format!("{}", self.peek_kind()),
        })
    }

    fn expect_punct(&mut self, p: Punct) -> PResult<Token> {
        if self.at_punct(p) {
            Ok(self.bump())
        } else {
            self.error(&[&format!("'{}'", p.as_str())])
        }
    }

    fn expect_ident(&mut self) -> PResult<(String, Loc)> {
        if let TokKind::Ident(name) = self.peek_kind().clone() {
            let t = self.bump();
            Ok((name, t.loc))
        } else {
            self.error(&["identifier"])
        }
    }

    // ── Items ────────────────────────────────────────────────────────────

    fn translation_unit(&mut self, file: &str) -> PResult<TranslationUnit> {
        let mut items = Vec::new();
        while !self.at(&TokKind::Eof) {
            if let TokKind::Pragma { .. } = self.peek_kind() {
                items.push(Item::Pragma(self.pragma()?));
            } else {
                items.push(self.declaration()?);
            }
        }
        Ok(TranslationUnit { file: file.to_string(), items })
    }

    /// A top-level or statement-level declaration; decides between function
    /// and variable forms after the declarator.
    fn declaration(&mut self) -> PResult<Item> {
        let loc = self.peek().loc.clone();
        let mut storage = Storage::None;
        let mut is_cl_kernel = false;
        loop {
            if self.eat_kw(Kw::Static) {
                storage = Storage::Static;
            } else if self.eat_kw(Kw::Extern) {
                storage = Storage::Extern;
            } else if self.eat_kw(Kw::ClKernel) {
                is_cl_kernel = true;
            } else {
                break;
            }
        }
        let base = self.type_specifier()?;
        let mut pointer_depth = 0;
        while self.eat_punct(Punct::Star) {
            pointer_depth += 1;
        }
        let (name, name_loc) = self.expect_ident()?;
        if self.at_punct(Punct::LParen) {
            let f = self.function_rest(name, name_loc, storage, is_cl_kernel, base, pointer_depth, loc)?;
            Ok(Item::Function(f))
        } else {
            let v = self.var_rest(name, storage, base, pointer_depth, loc)?;
            self.expect_punct(Punct::Semi)?;
            Ok(Item::Var(v))
        }
    }

    fn function_rest(
        &mut self,
        name: String,
        _name_loc: Loc,
        storage: Storage,
        is_cl_kernel: bool,
        base: (BaseType, bool),
        pointer_depth: u32,
        loc: Loc,
    ) -> PResult<FunctionDecl> {
        self.expect_punct(Punct::LParen)?;
        let params = self.param_list()?;
        self.expect_punct(Punct::RParen)?;
        let attrs = self.attribute_suffix()?;
        let body = if self.at_punct(Punct::LBrace) {
            Some(self.block()?)
        } else {
            self.expect_punct(Punct::Semi)?;
            None
        };
        Ok(FunctionDecl {
            name,
            storage,
            is_cl_kernel,
            return_type: TypeExpr {
                base: base.0,
                is_const: base.1,
                pointer_depth,
                array_dims: Vec::new(),
            },
            params,
            attrs,
            body,
            loc,
        })
    }

    fn var_rest(
        &mut self,
        name: String,
        storage: Storage,
        base: (BaseType, bool),
        pointer_depth: u32,
        loc: Loc,
    ) -> PResult<VarDecl> {
        let array_dims = self.array_dims()?;
        let attrs = self.attribute_suffix()?;
        let init = if self.eat_punct(Punct::Assign) { Some(self.expr()?) } else { None };
        Ok(VarDecl {
            name,
            storage,
            ty: TypeExpr { base: base.0, is_const: base.1, pointer_depth, array_dims },
            attrs,
            init,
            loc,
        })
    }

    fn array_dims(&mut self) -> PResult<Vec<ArrayDim>> {
        let mut dims = Vec::new();
        while self.eat_punct(Punct::LBracket) {
            if self.eat_punct(Punct::RBracket) {
                dims.push(ArrayDim::Unspecified);
                continue;
            }
            let dim = match self.peek_kind().clone() {
                TokKind::IntLit(n) => {
                    self.bump();
                    ArrayDim::Const(n)
                }
                TokKind::Ident(name) => {
                    self.bump();
                    ArrayDim::Param(name)
                }
                _ => return self.error(&["array dimension (integer or parameter name)"]),
            };
            self.expect_punct(Punct::RBracket)?;
            dims.push(dim);
        }
        Ok(dims)
    }

    fn param_list(&mut self) -> PResult<Vec<Param>> {
        if self.at_punct(Punct::RParen) {
            return Ok(Vec::new());
        }
        // `(void)` means an empty parameter list.
        if self.at_kw(Kw::Void) && matches!(self.peek_ahead(1), TokKind::Punct(Punct::RParen)) {
            self.bump();
            return Ok(Vec::new());
        }
        let mut params = vec![self.param()?];
        while self.eat_punct(Punct::Comma) {
            params.push(self.param()?);
        }
        Ok(params)
    }

    fn param(&mut self) -> PResult<Param> {
        let loc = self.peek().loc.clone();
        // `__global` marks buffer pointers in the OpenCL dialect; it does not
        // change the declared type.
        let mut seen_global = self.eat_kw(Kw::ClGlobal);
        let (base, mut is_const) = self.type_specifier()?;
        if !seen_global {
            seen_global = self.eat_kw(Kw::ClGlobal);
        }
        let _ = seen_global;
        if self.eat_kw(Kw::Const) {
            is_const = true;
        }
        let mut pointer_depth = 0;
        while self.eat_punct(Punct::Star) {
            pointer_depth += 1;
        }
        let (name, _) = self.expect_ident()?;
        let array_dims = self.array_dims()?;
        let attrs = self.attribute_suffix()?;
        Ok(Param {
            name,
            ty: TypeExpr { base, is_const, pointer_depth, array_dims },
            attrs,
            loc,
        })
    }

    /// Parse a base type, handling multi-word spellings and `const` on either
    /// side. Returns (base, is_const).
    fn type_specifier(&mut self) -> PResult<(BaseType, bool)> {
        let mut is_const = false;
        while self.eat_kw(Kw::Const) {
            is_const = true;
        }
        let base = if self.eat_kw(Kw::Void) {
            BaseType::Void
        } else if self.eat_kw(Kw::Char) {
            BaseType::Char
        } else if self.eat_kw(Kw::Float) {
            BaseType::Float
        } else if self.eat_kw(Kw::Double) {
            BaseType::Double
        } else if self.eat_kw(Kw::SizeT) {
            BaseType::SizeT
        } else if self.eat_kw(Kw::Int) {
            BaseType::Int
        } else if self.eat_kw(Kw::Short) {
            self.eat_kw(Kw::Int);
            BaseType::Short
        } else if self.eat_kw(Kw::Long) {
            if self.at_kw(Kw::Long) || self.at_kw(Kw::Double) {
                return self.error(&["a supported type ('long long' and 'long double' are not in the subset)"]);
            }
            self.eat_kw(Kw::Int);
            BaseType::Long
        } else if self.eat_kw(Kw::Signed) {
            if self.eat_kw(Kw::Char) {
                BaseType::SignedChar
            } else {
                self.eat_kw(Kw::Int);
                BaseType::Int
            }
        } else if self.eat_kw(Kw::Unsigned) {
            if self.eat_kw(Kw::Char) {
                BaseType::UnsignedChar
            } else if self.eat_kw(Kw::Short) {
                self.eat_kw(Kw::Int);
                BaseType::UnsignedShort
            } else if self.eat_kw(Kw::Long) {
                self.eat_kw(Kw::Int);
                BaseType::UnsignedLong
            } else {
                self.eat_kw(Kw::Int);
                BaseType::UnsignedInt
            }
        } else {
            return self.error(&["type specifier"]);
        };
        while self.eat_kw(Kw::Const) {
            is_const = true;
        }
        Ok((base, is_const))
    }

    fn at_type_start(&self) -> bool {
        matches!(
            self.peek_kind(),
            TokKind::Kw(
                Kw::Void
                    | Kw::Char
                    | Kw::Short
                    | Kw::Int
                    | Kw::Long
                    | Kw::Float
                    | Kw::Double
                    | Kw::Signed
                    | Kw::Unsigned
                    | Kw::Const
                    | Kw::SizeT
                    | Kw::Static
                    | Kw::Extern
                    | Kw::ClKernel
                    | Kw::ClGlobal
            )
        )
    }

    // ── Attributes ───────────────────────────────────────────────────────

    /// Zero or more `__attribute__ ((...))` groups in declaration-suffix
    /// position, flattened into one list.
    fn attribute_suffix(&mut self) -> PResult<Vec<Attribute>> {
        let mut attrs = Vec::new();
        while self.at_kw(Kw::Attribute) {
            self.bump();
            self.expect_punct(Punct::LParen)?;
            self.expect_punct(Punct::LParen)?;
            if !self.at_punct(Punct::RParen) {
                attrs.push(self.attribute()?);
                while self.eat_punct(Punct::Comma) {
                    attrs.push(self.attribute()?);
                }
            }
            self.expect_punct(Punct::RParen)?;
            self.expect_punct(Punct::RParen)?;
        }
        Ok(attrs)
    }

    fn attribute(&mut self) -> PResult<Attribute> {
        let (name, loc) = self.expect_ident()?;
        let mut args = Vec::new();
        if self.eat_punct(Punct::LParen) {
            if !self.at_punct(Punct::RParen) {
                args.push(self.attribute_arg()?);
                while self.eat_punct(Punct::Comma) {
                    args.push(self.attribute_arg()?);
                }
            }
            self.expect_punct(Punct::RParen)?;
        }
        Ok(Attribute { name: AttrName::from_str(&name), args, loc })
    }

    fn attribute_arg(&mut self) -> PResult<AttrArg> {
        match self.peek_kind().clone() {
            TokKind::StrLit(s) => {
                let t = self.bump();
                Ok(AttrArg::Str(s, t.loc))
            }
            TokKind::Ident(s) => {
                let t = self.bump();
                Ok(AttrArg::Ident(s, t.loc))
            }
            TokKind::IntLit(n) => {
                let t = self.bump();
                Ok(AttrArg::Int(n, t.loc))
            }
            _ => self.error(&["attribute argument (string, identifier, or integer)"]),
        }
    }

    // ── Pragmas ──────────────────────────────────────────────────────────

    fn pragma(&mut self) -> PResult<Pragma> {
        let tok = self.bump();
        let TokKind::Pragma { payload, payload_loc } = tok.kind else { unreachable!() };
        let toks = tokenize_at(&payload, &self.file, payload_loc.line, payload_loc.col).map_err(lex_to_parse)?;
        let mut sub = Parser::new(toks, &self.file);
        // Pragmas outside the `starpu` namespace are preserved verbatim and
        // have no meaning to this compiler.
        if !matches!(sub.peek_kind(), TokKind::Ident(ns) if ns == "starpu") {
            return Ok(Pragma { kind: PragmaKind::Unknown { raw: payload }, loc: tok.loc });
        }
        sub.bump();
        let (kind_name, kind_loc) = sub.expect_ident()?;
        let kind = match kind_name.as_str() {
            "register" => {
                let (var, var_loc) = sub.expect_ident()?;
                let count = if sub.at(&TokKind::Eof) { None } else { Some(sub.expr()?) };
                sub.expect_eof()?;
                PragmaKind::Register { var, var_loc, count }
            }
            "unregister" => {
                let (var, var_loc) = sub.expect_ident()?;
                sub.expect_eof()?;
                PragmaKind::Unregister { var, var_loc }
            }
            "acquire" => {
                let (var, var_loc) = sub.expect_ident()?;
                sub.expect_eof()?;
                PragmaKind::Acquire { var, var_loc }
            }
            "wait" => {
                sub.expect_eof()?;
                PragmaKind::Wait
            }
            "opencl" => {
                let (impl_name, impl_loc) = sub.expect_ident()?;
                let file = sub.expect_string()?;
                let kernel = sub.expect_string()?;
                let group_size = sub.expect_int()?;
                sub.expect_eof()?;
                PragmaKind::OpenclBind { impl_name, impl_loc, file, kernel, group_size }
            }
            other => {
                return Err(ParseError {
                    loc: kind_loc,
                    expected: vec![
                        "'register'".into(),
                        "'unregister'".into(),
                        "'acquire'".into(),
                        "'wait'".into(),
                        "'opencl'".into(),
                    ],
                    found: format!("'{}'", other),
                })
            }
        };
        Ok(Pragma { kind, loc: tok.loc })
    }

    fn expect_eof(&mut self) -> PResult<()> {
        if self.at(&TokKind::Eof) {
            Ok(())
        } else {
            self.error(&["end of pragma"])
        }
    }

    fn expect_string(&mut self) -> PResult<String> {
        if let TokKind::StrLit(s) = self.peek_kind().clone() {
            self.bump();
            Ok(s)
        } else {
            self.error(&["string literal"])
        }
    }

    fn expect_int(&mut self) -> PResult<u64> {
        if let TokKind::IntLit(n) = *self.peek_kind() {
            self.bump();
            Ok(n)
        } else {
            self.error(&["integer literal"])
        }
    }

    // ── Statements ───────────────────────────────────────────────────────

    fn block(&mut self) -> PResult<Block> {
        let open = self.expect_punct(Punct::LBrace)?;
        let mut stmts = Vec::new();
        while !self.at_punct(Punct::RBrace) {
            if self.at(&TokKind::Eof) {
                return self.error(&["'}'"]);
            }
            stmts.push(self.stmt()?);
        }
        self.bump();
        Ok(Block { stmts, loc: open.loc })
    }

    fn stmt(&mut self) -> PResult<Stmt> {
        if let TokKind::Pragma { .. } = self.peek_kind() {
            return Ok(Stmt::Pragma(self.pragma()?));
        }
        if self.at_punct(Punct::LBrace) {
            return Ok(Stmt::Block(self.block()?));
        }
        if self.at_kw(Kw::For) {
            return self.for_stmt();
        }
        if self.at_kw(Kw::If) {
            return self.if_stmt();
        }
        if self.at_kw(Kw::Return) {
            let tok = self.bump();
            let value = if self.at_punct(Punct::Semi) { None } else { Some(self.expr()?) };
            self.expect_punct(Punct::Semi)?;
            return Ok(Stmt::Return { value, loc: tok.loc });
        }
        if self.at_type_start() {
            return self.var_decl_stmt();
        }
        let e = self.expr()?;
        self.expect_punct(Punct::Semi)?;
        Ok(Stmt::Expr(e))
    }

    fn var_decl_stmt(&mut self) -> PResult<Stmt> {
        let loc = self.peek().loc.clone();
        let mut storage = Storage::None;
        loop {
            if self.eat_kw(Kw::Static) {
                storage = Storage::Static;
            } else if self.eat_kw(Kw::Extern) {
                storage = Storage::Extern;
            } else {
                break;
            }
        }
        let base = self.type_specifier()?;
        let mut pointer_depth = 0;
        while self.eat_punct(Punct::Star) {
            pointer_depth += 1;
        }
        let (name, _) = self.expect_ident()?;
        let v = self.var_rest(name, storage, base, pointer_depth, loc)?;
        self.expect_punct(Punct::Semi)?;
        Ok(Stmt::Var(v))
    }

    fn for_stmt(&mut self) -> PResult<Stmt> {
        let tok = self.bump();
        self.expect_punct(Punct::LParen)?;
        let init = if self.at_punct(Punct::Semi) {
            self.bump();
            ForInit::None
        } else if self.at_type_start() {
            let loc = self.peek().loc.clone();
            let base = self.type_specifier()?;
            let mut pointer_depth = 0;
            while self.eat_punct(Punct::Star) {
                pointer_depth += 1;
            }
            let (name, _) = self.expect_ident()?;
            let v = self.var_rest(name, Storage::None, base, pointer_depth, loc)?;
            self.expect_punct(Punct::Semi)?;
            ForInit::Decl(v)
        } else {
            let e = self.expr()?;
            self.expect_punct(Punct::Semi)?;
            ForInit::Expr(e)
        };
        let cond = if self.at_punct(Punct::Semi) { None } else { Some(self.expr()?) };
        self.expect_punct(Punct::Semi)?;
        let step = if self.at_punct(Punct::RParen) { None } else { Some(self.expr()?) };
        self.expect_punct(Punct::RParen)?;
        let body = Box::new(self.stmt()?);
        Ok(Stmt::For { init, cond, step, body, loc: tok.loc })
    }

    fn if_stmt(&mut self) -> PResult<Stmt> {
        let tok = self.bump();
        self.expect_punct(Punct::LParen)?;
        let cond = self.expr()?;
        self.expect_punct(Punct::RParen)?;
        let then_branch = Box::new(self.stmt()?);
        let else_branch = if self.eat_kw(Kw::Else) { Some(Box::new(self.stmt()?)) } else { None };
        Ok(Stmt::If { cond, then_branch, else_branch, loc: tok.loc })
    }

    // ── Expressions ──────────────────────────────────────────────────────

    pub(super) fn expr(&mut self) -> PResult<Expr> {
        self.assignment()
    }

    fn assignment(&mut self) -> PResult<Expr> {
        let lhs = self.comparison()?;
        let op = match self.peek_kind() {
            TokKind::Punct(Punct::Assign) => Some(AssignOp::Assign),
            TokKind::Punct(Punct::PlusAssign) => Some(AssignOp::AddAssign),
            TokKind::Punct(Punct::MinusAssign) => Some(AssignOp::SubAssign),
            TokKind::Punct(Punct::StarAssign) => Some(AssignOp::MulAssign),
            TokKind::Punct(Punct::SlashAssign) => Some(AssignOp::DivAssign),
            _ => None,
        };
        if let Some(op) = op {
            let tok = self.bump();
            let value = self.assignment()?;
            return Ok(Expr::Assign { op, target: Box::new(lhs), value: Box::new(value), loc: tok.loc });
        }
        Ok(lhs)
    }

    fn comparison(&mut self) -> PResult<Expr> {
        let mut lhs = self.additive()?;
        loop {
            let op = match self.peek_kind() {
                TokKind::Punct(Punct::Lt) => BinOp::Lt,
                TokKind::Punct(Punct::Le) => BinOp::Le,
                TokKind::Punct(Punct::Gt) => BinOp::Gt,
                TokKind::Punct(Punct::Ge) => BinOp::Ge,
                TokKind::Punct(Punct::EqEq) => BinOp::Eq,
                TokKind::Punct(Punct::Ne) => BinOp::Ne,
                _ => break,
            };
            let tok = self.bump();
            let rhs = self.additive()?;
            lhs = Expr::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs), loc: tok.loc };
        }
        Ok(lhs)
    }

    fn additive(&mut self) -> PResult<Expr> {
        let mut lhs = self.multiplicative()?;
        loop {
            let op = match self.peek_kind() {
                TokKind::Punct(Punct::Plus) => BinOp::Add,
                TokKind::Punct(Punct::Minus) => BinOp::Sub,
                _ => break,
            };
            let tok = self.bump();
            let rhs = self.multiplicative()?;
            lhs = Expr::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs), loc: tok.loc };
        }
        Ok(lhs)
    }

    fn multiplicative(&mut self) -> PResult<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek_kind() {
                TokKind::Punct(Punct::Star) => BinOp::Mul,
                TokKind::Punct(Punct::Slash) => BinOp::Div,
                _ => break,
            };
            let tok = self.bump();
            let rhs = self.unary()?;
            lhs = Expr::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs), loc: tok.loc };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> PResult<Expr> {
        match self.peek_kind() {
            TokKind::Punct(Punct::Minus) => {
                let tok = self.bump();
                let operand = self.unary()?;
                Ok(Expr::Unary { op: UnaryOp::Neg, operand: Box::new(operand), loc: tok.loc })
            }
            TokKind::Punct(Punct::Star) => {
                let tok = self.bump();
                let operand = self.unary()?;
                Ok(Expr::Unary { op: UnaryOp::Deref, operand: Box::new(operand), loc: tok.loc })
            }
            TokKind::Punct(Punct::Amp) => {
                let tok = self.bump();
                let operand = self.unary()?;
                Ok(Expr::Unary { op: UnaryOp::AddrOf, operand: Box::new(operand), loc: tok.loc })
            }
            TokKind::Punct(Punct::PlusPlus) | TokKind::Punct(Punct::MinusMinus) => {
                let inc = self.at_punct(Punct::PlusPlus);
                let tok = self.bump();
                let target = self.unary()?;
                Ok(Expr::IncDec { inc, prefix: true, target: Box::new(target), loc: tok.loc })
            }
            TokKind::Kw(Kw::Sizeof) => {
                let tok = self.bump();
                // `sizeof (type)` vs `sizeof expr`; a parenthesized expression
                // is handled by the expression branch.
                if self.at_punct(Punct::LParen) && self.ahead_is_type_start(1) {
                    self.bump();
                    let (base, is_const) = self.type_specifier()?;
                    let mut pointer_depth = 0;
                    while self.eat_punct(Punct::Star) {
                        pointer_depth += 1;
                    }
                    self.expect_punct(Punct::RParen)?;
                    let ty = TypeExpr { base, is_const, pointer_depth, array_dims: Vec::new() };
                    Ok(Expr::Sizeof { arg: SizeofArg::Type(ty), loc: tok.loc })
                } else {
                    let operand = self.unary()?;
                    Ok(Expr::Sizeof { arg: SizeofArg::Expr(Box::new(operand)), loc: tok.loc })
                }
            }
            _ => self.postfix(),
        }
    }

    fn ahead_is_type_start(&self, n: usize) -> bool {
        matches!(
            self.peek_ahead(n),
            TokKind::Kw(
                Kw::Void
                    | Kw::Char
                    | Kw::Short
                    | Kw::Int
                    | Kw::Long
                    | Kw::Float
                    | Kw::Double
                    | Kw::Signed
                    | Kw::Unsigned
                    | Kw::Const
                    | Kw::SizeT
            )
        )
    }

    fn postfix(&mut self) -> PResult<Expr> {
        let mut e = self.primary()?;
        loop {
            match self.peek_kind() {
                TokKind::Punct(Punct::LParen) => {
                    let tok = self.bump();
                    let callee = match &e {
                        Expr::Ident { name, .. } => name.clone(),
                        _ => {
                            return Err(ParseError {
                                loc: tok.loc,
                                expected: vec!["function name before call".into()],
                                found: "call of non-identifier expression".into(),
                            })
                        }
                    };
                    let call_loc = e.loc().clone();
                    let mut args = Vec::new();
                    if !self.at_punct(Punct::RParen) {
                        args.push(self.expr()?);
                        while self.eat_punct(Punct::Comma) {
                            args.push(self.expr()?);
                        }
                    }
                    self.expect_punct(Punct::RParen)?;
                    e = Expr::Call { callee, args, loc: call_loc };
                }
                TokKind::Punct(Punct::LBracket) => {
                    self.bump();
                    let index = self.expr()?;
                    self.expect_punct(Punct::RBracket)?;
                    let loc = e.loc().clone();
                    e = Expr::Subscript { base: Box::new(e), index: Box::new(index), loc };
                }
                TokKind::Punct(Punct::PlusPlus) | TokKind::Punct(Punct::MinusMinus) => {
                    let inc = self.at_punct(Punct::PlusPlus);
                    let tok = self.bump();
                    e = Expr::IncDec { inc, prefix: false, target: Box::new(e), loc: tok.loc };
                }
                _ => break,
            }
        }
        Ok(e)
    }

    fn primary(&mut self) -> PResult<Expr> {
        match self.peek_kind().clone() {
            TokKind::IntLit(value) => {
                let t = self.bump();
                Ok(Expr::IntLit { value, loc: t.loc })
            }
            TokKind::FloatLit(value, single) => {
                let t = self.bump();
                Ok(Expr::FloatLit { value, single, loc: t.loc })
            }
            TokKind::StrLit(value) => {
                let t = self.bump();
                Ok(Expr::StrLit { value, loc: t.loc })
            }
            TokKind::Ident(name) => {
                let t = self.bump();
                Ok(Expr::Ident { name, loc: t.loc })
            }
            TokKind::Punct(Punct::LParen) => {
                self.bump();
                let e = self.expr()?;
                self.expect_punct(Punct::RParen)?;
                Ok(e)
            }
            _ => self.error(&["expression"]),
        }
    }
}
