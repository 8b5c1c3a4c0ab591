//! Registration dataflow: warn when a pointer passed as a task buffer
//! argument may not be registered on every path reaching the call.
//!
//! The check runs on a control-flow graph per plain function. Two forward
//! analyses cooperate:
//!
//! 1. *Roots* (copy propagation): each pointer variable is mapped to the
//!    memory region it must point to — the variable's own declaration, a
//!    specific `malloc` call site, or unknown. `p = q` copies the root,
//!    `p = malloc(...)` mints a fresh root, anything else is unknown.
//! 2. *Availability* (must-analysis, intersection over predecessors): the set
//!    of roots whose registration is live — generated by `register` pragmas
//!    and `registered` attributes, killed by `unregister` and by scope exit
//!    of scoped registrations.
//!
//! A call argument warns exactly when its root is known and not available.
//! Unknown roots stay silent: the analysis never guesses.

use crate::diag::{Code, Diagnostic};
use crate::frontend::ast::*;
use crate::loc::Loc;
use crate::sema::ProgramModel;
use std::collections::{BTreeMap, BTreeSet};

// ── Events and CFG ───────────────────────────────────────────────────────────

/// Where a pointer value comes from, as far as root tracking is concerned.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RootSrc {
    /// `p = q`: p aliases whatever q roots to.
    Copy(String),
    /// `p = malloc(...)`: fresh region identified by the call site.
    Malloc(Loc),
    /// Anything else: pointer arithmetic, unknown call result, …
    Opaque,
}

/// The statements the analysis cares about, in block order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Event {
    /// `#pragma starpu register VAR`
    Register { var: String },
    /// `#pragma starpu unregister VAR`
    Unregister { var: String },
    /// Declaration with the `registered` attribute: registers at the
    /// declaration, unregisters at scope exit.
    ScopedRegister { var: String },
    /// Synthesized at the closing brace of a scope with registered variables.
    ScopedUnregister { var: String },
    /// Variable declaration, with the root of its initializer if any.
    Decl { var: String, init: Option<RootSrc> },
    /// Simple assignment to a variable.
    Assign { dst: String, src: RootSrc },
    /// The variable's address escaped (`&v` or similar); root becomes unknown.
    Escape { var: String },
    /// Task invocation with the buffer-argument variable names.
    Call { task: String, loc: Loc, buffer_args: Vec<String> },
}

#[derive(Debug, Clone, Default)]
pub struct BasicBlock {
    pub events: Vec<Event>,
    pub succs: Vec<usize>,
    pub preds: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Cfg {
    pub blocks: Vec<BasicBlock>,
    /// Immediate dominator per block; `None` for the entry block and for
    /// blocks unreachable from it.
    pub idom: Vec<Option<usize>>,
}

impl Cfg {
    pub fn entry(&self) -> usize {
        0
    }

    /// Blocks reachable from the entry, in depth-first preorder.
    pub fn reachable(&self) -> Vec<bool> {
        let mut seen = vec![false; self.blocks.len()];
        let mut stack = vec![0usize];
        while let Some(b) = stack.pop() {
            if seen[b] {
                continue;
            }
            seen[b] = true;
            for &s in &self.blocks[b].succs {
                stack.push(s);
            }
        }
        seen
    }
}

/// Build the CFG for one function body. Structured statements induce the
/// standard shapes: `if` contributes then/else/join blocks (the else block
/// exists even when the branch is absent), `for` contributes header, body,
/// and after blocks with a back edge, and statements after `return` land in
/// a fresh block with no predecessors.
pub fn build_cfg(f: &FunctionDecl, model: &ProgramModel) -> Cfg {
    let mut b = Builder {
        model,
        blocks: vec![BasicBlock::default()],
        cur: 0,
        terminated: false,
    };
    if let Some(body) = &f.body {
        b.inline_block(body);
    }
    let mut blocks = b.blocks;
    // Derive predecessor lists from successor lists.
    let succs: Vec<Vec<usize>> = blocks.iter().map(|bl| bl.succs.clone()).collect();
    for (i, ss) in succs.iter().enumerate() {
        for &s in ss {
            blocks[s].preds.push(i);
        }
    }
    let idom = immediate_dominators(&blocks);
    Cfg { blocks, idom }
}

struct Builder<'m> {
    model: &'m ProgramModel,
    blocks: Vec<BasicBlock>,
    cur: usize,
    terminated: bool,
}

impl<'m> Builder<'m> {
    fn new_block(&mut self) -> usize {
        self.blocks.push(BasicBlock::default());
        self.blocks.len() - 1
    }

    fn edge(&mut self, from: usize, to: usize) {
        self.blocks[from].succs.push(to);
    }

    /// Append an event to the current block. Code that follows a `return`
    /// opens a fresh, unreachable block, mirroring the source structure.
    fn emit(&mut self, ev: Event) {
        if self.terminated {
            self.cur = self.new_block();
            self.terminated = false;
        }
        self.blocks[self.cur].events.push(ev);
    }

    /// Inline a brace block into the current position; registered-attribute
    /// variables declared directly in it are unregistered at its end.
    fn inline_block(&mut self, b: &Block) {
        let mut scoped: Vec<String> = Vec::new();
        for s in &b.stmts {
            if let Stmt::Var(v) = s {
                let registered = v.attrs.iter().any(|a| a.name == AttrName::Registered);
                if registered {
                    scoped.push(v.name.clone());
                }
            }
            self.stmt(s);
        }
        // Scope exit does not happen on paths that already returned.
        if !self.terminated {
            for var in scoped {
                self.emit(Event::ScopedUnregister { var });
            }
        }
    }

    fn stmt(&mut self, s: &Stmt) {
        match s {
            Stmt::Var(v) => {
                if let Some(init) = &v.init {
                    self.expr(init);
                }
                let init = v.init.as_ref().map(root_src);
                let registered = v.attrs.iter().any(|a| a.name == AttrName::Registered);
                self.emit(Event::Decl { var: v.name.clone(), init });
                if registered {
                    self.emit(Event::ScopedRegister { var: v.name.clone() });
                }
            }
            Stmt::Expr(e) => self.expr_stmt(e),
            Stmt::Return { .. } => {
                self.terminated = true;
            }
            Stmt::If { cond, then_branch, else_branch, .. } => {
                self.expr(cond);
                if self.terminated {
                    // The whole `if` is unreachable; open its own block chain.
                    self.cur = self.new_block();
                    self.terminated = false;
                }
                let head = self.cur;

                let then_start = self.new_block();
                self.edge(head, then_start);
                self.cur = then_start;
                self.stmt(then_branch);
                let then_end = if self.terminated { None } else { Some(self.cur) };

                self.terminated = false;
                let else_start = self.new_block();
                self.edge(head, else_start);
                self.cur = else_start;
                if let Some(e) = else_branch {
                    self.stmt(e);
                }
                let else_end = if self.terminated { None } else { Some(self.cur) };

                let join = self.new_block();
                if let Some(t) = then_end {
                    self.edge(t, join);
                }
                if let Some(e) = else_end {
                    self.edge(e, join);
                }
                self.cur = join;
                self.terminated = false;
            }
            Stmt::For { init, cond, step, body, .. } => {
                match init {
                    ForInit::None => {}
                    ForInit::Decl(v) => self.stmt(&Stmt::Var(v.clone())),
                    ForInit::Expr(e) => self.expr_stmt(e),
                }
                if self.terminated {
                    self.cur = self.new_block();
                    self.terminated = false;
                }
                let head = self.cur;
                let header = self.new_block();
                self.edge(head, header);
                self.cur = header;
                if let Some(c) = cond {
                    self.expr(c);
                }
                let cond_end = self.cur;

                let body_start = self.new_block();
                self.edge(cond_end, body_start);
                self.cur = body_start;
                self.stmt(body);
                if let Some(st) = step {
                    if self.terminated {
                        // Step is unreachable when every body path returns.
                        self.cur = self.new_block();
                        self.terminated = false;
                        self.expr_stmt(st);
                        self.terminated = true;
                    } else {
                        self.expr_stmt(st);
                    }
                }
                if !self.terminated {
                    let back = self.cur;
                    self.edge(back, header);
                }
                self.terminated = false;

                let after = self.new_block();
                self.edge(cond_end, after);
                self.cur = after;
            }
            Stmt::Block(b) => self.inline_block(b),
            Stmt::Pragma(p) => match &p.kind {
                PragmaKind::Register { var, .. } => self.emit(Event::Register { var: var.clone() }),
                PragmaKind::Unregister { var, .. } => self.emit(Event::Unregister { var: var.clone() }),
                PragmaKind::Acquire { .. }
                | PragmaKind::Wait
                | PragmaKind::OpenclBind { .. }
                | PragmaKind::Unknown { .. } => {}
            },
        }
    }

    /// A statement-position expression: assignments and calls change state.
    fn expr_stmt(&mut self, e: &Expr) {
        match e {
            Expr::Assign { op, target, value, .. } => {
                self.expr(value);
                match (&**target, op) {
                    (Expr::Ident { name, .. }, AssignOp::Assign) => {
                        self.emit(Event::Assign { dst: name.clone(), src: root_src(value) });
                    }
                    (Expr::Ident { name, .. }, _) => {
                        // Compound assignment: p += k is pointer arithmetic.
                        self.emit(Event::Assign { dst: name.clone(), src: RootSrc::Opaque });
                    }
                    _ => self.expr(target),
                }
            }
            Expr::IncDec { target, .. } => {
                if let Expr::Ident { name, .. } = &**target {
                    self.emit(Event::Assign { dst: name.clone(), src: RootSrc::Opaque });
                }
            }
            Expr::Call { .. } => self.call(e),
            _ => self.expr(e),
        }
    }

    fn call(&mut self, e: &Expr) {
        let Expr::Call { callee, args, loc } = e else { unreachable!() };
        for a in args {
            self.expr(a);
        }
        if let Some(t) = self.model.task_index(callee) {
            let mut buffer_args = Vec::new();
            for (param, arg) in self.model.tasks[t].params.iter().zip(args) {
                if param.mode.is_buffer() {
                    if let Expr::Ident { name, .. } = arg {
                        buffer_args.push(name.clone());
                    }
                }
            }
            self.emit(Event::Call { task: callee.clone(), loc: loc.clone(), buffer_args });
        }
    }

    /// Walk a value-position expression for escapes and nested calls.
    fn expr(&mut self, e: &Expr) {
        match e {
            Expr::IntLit { .. } | Expr::FloatLit { .. } | Expr::StrLit { .. } | Expr::Ident { .. } => {}
            Expr::Unary { op: UnaryOp::AddrOf, operand, .. } => {
                if let Expr::Ident { name, .. } = &**operand {
                    self.emit(Event::Escape { var: name.clone() });
                } else {
                    self.expr(operand);
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
            Expr::Call { args, .. } => {
                for a in args {
                    self.expr(a);
                }
            }
            Expr::Subscript { base, index, .. } => {
                self.expr(base);
                self.expr(index);
            }
            Expr::Sizeof { .. } => {}
        }
    }
}

fn root_src(e: &Expr) -> RootSrc {
    match e {
        Expr::Ident { name, .. } => RootSrc::Copy(name.clone()),
        Expr::Call { callee, loc, .. } if callee == "malloc" => RootSrc::Malloc(loc.clone()),
        _ => RootSrc::Opaque,
    }
}

// ── Dominators ───────────────────────────────────────────────────────────────

/// Reverse postorder of the blocks reachable from the entry.
fn reverse_postorder(blocks: &[BasicBlock]) -> Vec<usize> {
    let n = blocks.len();
    let mut state = vec![0u8; n]; // 0 unvisited, 1 on stack, 2 done
    let mut post = Vec::new();
    let mut stack: Vec<(usize, usize)> = vec![(0, 0)];
    state[0] = 1;
    while let Some(&mut (b, ref mut i)) = stack.last_mut() {
        if *i < blocks[b].succs.len() {
            let s = blocks[b].succs[*i];
            *i += 1;
            if state[s] == 0 {
                state[s] = 1;
                stack.push((s, 0));
            }
        } else {
            state[b] = 2;
            post.push(b);
            stack.pop();
        }
    }
    post.reverse();
    post
}

/// Immediate dominators by iterated intersection over reverse postorder.
pub fn immediate_dominators(blocks: &[BasicBlock]) -> Vec<Option<usize>> {
    let n = blocks.len();
    let rpo = reverse_postorder(blocks);
    let mut rpo_num = vec![usize::MAX; n];
    for (i, &b) in rpo.iter().enumerate() {
        rpo_num[b] = i;
    }
    let mut idom: Vec<Option<usize>> = vec![None; n];
    idom[0] = Some(0);
    let mut changed = true;
    while changed {
        changed = false;
        for &b in rpo.iter().skip(1) {
            let mut new_idom: Option<usize> = None;
            for &p in &blocks[b].preds {
                if idom[p].is_none() {
                    continue; // predecessor not yet reached
                }
                new_idom = Some(match new_idom {
                    None => p,
                    Some(cur) => intersect(&idom, &rpo_num, p, cur),
                });
            }
            if new_idom != idom[b] {
                idom[b] = new_idom;
                changed = true;
            }
        }
    }
    // The entry has no immediate dominator in the public view.
    idom[0] = None;
    idom
}

fn intersect(idom: &[Option<usize>], rpo_num: &[usize], mut a: usize, mut b: usize) -> usize {
    while a != b {
        while rpo_num[a] > rpo_num[b] {
            a = idom[a].expect("reachable block has idom");
        }
        while rpo_num[b] > rpo_num[a] {
            b = idom[b].expect("reachable block has idom");
        }
    }
    a
}

// ── Roots and availability ───────────────────────────────────────────────────

/// A must-alias root: the region a pointer is known to address.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Root {
    /// The storage of a named variable (its declaration).
    Var(String),
    /// The allocation made by the `malloc` at this line and column.
    Site(u32, u32),
    Unknown,
}

type Roots = BTreeMap<String, Root>;
type Avail = BTreeSet<Root>;

#[derive(Debug, Clone, PartialEq, Eq)]
struct State {
    roots: Roots,
    avail: Avail,
}

fn resolve(roots: &Roots, var: &str) -> Root {
    roots.get(var).cloned().unwrap_or(Root::Unknown)
}

fn transfer(state: &mut State, ev: &Event) {
    match ev {
        Event::Decl { var, init } => {
            let root = match init {
                None => Root::Var(var.clone()),
                Some(RootSrc::Copy(s)) => resolve(&state.roots, s),
                Some(RootSrc::Malloc(l)) => Root::Site(l.line, l.col),
                Some(RootSrc::Opaque) => Root::Unknown,
            };
            state.roots.insert(var.clone(), root);
        }
        Event::Assign { dst, src } => {
            let root = match src {
                RootSrc::Copy(s) => resolve(&state.roots, s),
                RootSrc::Malloc(l) => Root::Site(l.line, l.col),
                RootSrc::Opaque => Root::Unknown,
            };
            state.roots.insert(dst.clone(), root);
        }
        Event::Escape { var } => {
            state.roots.insert(var.clone(), Root::Unknown);
        }
        Event::Register { var } | Event::ScopedRegister { var } => {
            let r = resolve(&state.roots, var);
            if r != Root::Unknown {
                state.avail.insert(r);
            }
        }
        Event::Unregister { var } | Event::ScopedUnregister { var } => {
            let r = resolve(&state.roots, var);
            if r != Root::Unknown {
                state.avail.remove(&r);
            }
        }
        Event::Call { .. } => {}
    }
}

/// Pointwise meet: roots agree or collapse to unknown; availability is the
/// intersection (a registration must hold on every incoming path).
fn meet(a: &State, b: &State) -> State {
    let mut roots = Roots::new();
    for (k, va) in &a.roots {
        let merged = match b.roots.get(k) {
            Some(vb) if vb == va => va.clone(),
            _ => Root::Unknown,
        };
        roots.insert(k.clone(), merged);
    }
    for k in b.roots.keys() {
        roots.entry(k.clone()).or_insert(Root::Unknown);
    }
    let avail = a.avail.intersection(&b.avail).cloned().collect();
    State { roots, avail }
}

fn entry_state(model: &ProgramModel) -> State {
    let mut roots = Roots::new();
    for g in &model.globals {
        roots.insert(g.name.clone(), Root::Var(g.name.clone()));
    }
    let avail = model
        .global_registrations
        .iter()
        .map(|site| Root::Var(site.var.clone()))
        .collect();
    State { roots, avail }
}

/// Forward fixpoint over the CFG; returns the state at entry to each block
/// (`None` for blocks never reached).
fn solve(cfg: &Cfg, entry: State) -> Vec<Option<State>> {
    let n = cfg.blocks.len();
    let mut input: Vec<Option<State>> = vec![None; n];
    input[0] = Some(entry);
    let mut work: BTreeSet<usize> = BTreeSet::new();
    work.insert(0);
    while let Some(&b) = work.iter().next() {
        work.remove(&b);
        let mut out = input[b].clone().expect("worklist blocks have input");
        for ev in &cfg.blocks[b].events {
            transfer(&mut out, ev);
        }
        for &s in &cfg.blocks[b].succs {
            let new_in = match &input[s] {
                None => out.clone(),
                Some(prev) => meet(prev, &out),
            };
            if input[s].as_ref() != Some(&new_in) {
                input[s] = Some(new_in);
                work.insert(s);
            }
        }
    }
    input
}

/// Run the registration check on one function.
pub fn check_registration(f: &FunctionDecl, model: &ProgramModel) -> Vec<Diagnostic> {
    let cfg = build_cfg(f, model);
    let input = solve(&cfg, entry_state(model));
    let mut diags = Vec::new();
    for (b, block) in cfg.blocks.iter().enumerate() {
        let Some(start) = &input[b] else { continue };
        let mut state = start.clone();
        for ev in &block.events {
            if let Event::Call { loc, buffer_args, .. } = ev {
                for var in buffer_args {
                    let r = resolve(&state.roots, var);
                    if r != Root::Unknown && !state.avail.contains(&r) {
                        diags.push(Diagnostic::warning(
                            Code::W_UNREGISTERED,
                            loc,
                            format!("variable '{}' may be used unregistered", var),
                        ));
                    }
                }
            }
            transfer(&mut state, ev);
        }
    }
    diags
}

/// Run the registration check on every plain function in the unit.
pub fn check_unit(model: &ProgramModel) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    for f in &model.functions {
        diags.extend(check_registration(f, model));
    }
    crate::diag::sort_diagnostics(&mut diags);
    diags
}
