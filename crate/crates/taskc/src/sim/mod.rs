//! Virtual-time execution of a lowered program on a simulated heterogeneous
//! machine.
//!
//! The submitter walks `main_ops` at a virtual clock that only advances when
//! the program waits: explicit waits, data acquisition, unregistration, and
//! the implicit drain at the end of the run. Task submission itself is free.
//! Each ready task is dispatched immediately to a worker chosen by the
//! scheduling policy; the worker's queue is a single availability time, and
//! transfers claim per-directed-link availability, so the timeline is fully
//! deterministic.
//!
//! Data movement follows the coherence protocol in [`crate::runtime`]:
//! dispatching a task triggers the transfers its access modes require, and
//! the task's byte effects are applied at dispatch time — dependencies
//! guarantee every input is final by then, so results cannot depend on the
//! interleaving of concurrently running tasks.

pub mod machine;
pub mod policy;
pub mod trace;

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt;

use crate::loc::Loc;
use crate::lowering::artifact::{
    Binding, CallArg, Codelet, CodeletParam, ExecPlan, ImplDef, MainOp, StorageClass, TaskProgram,
};
use crate::lowering::ir::{self, IrOp, IrParamKind, IrValue, KernelFault, KernelIR, ScalarTy};
use crate::runtime::heap::FreeError;
use crate::runtime::{NodeId, RegisterError, Runtime, TaskState, TransferPlan, HOST_NODE};
use crate::sema::types::AccessMode;
use crate::sim::machine::{ConfigError, MachineDescription, PerfModel};
use crate::sim::policy::Policy;
use crate::sim::trace::{Trace, TraceEvent};

// ── Results ──────────────────────────────────────────────────────────────────

/// A fatal runtime error: the run stops at the failing operation.
#[derive(Debug, Clone, PartialEq)]
pub struct FatalEvent {
    pub message: String,
    pub file: String,
    pub line: u32,
}

impl fmt::Display for FatalEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: error: {}", self.file, self.line, self.message)
    }
}

/// Final host-side contents of one registered region, captured when it is
/// unregistered (or still live when the run ends).
#[derive(Debug, Clone, PartialEq)]
pub struct BufferDump {
    pub label: String,
    pub elem: ScalarTy,
    pub nx: u64,
    pub bytes: Vec<u8>,
}

/// Everything a finished (or aborted) run produced.
#[derive(Debug)]
pub struct RunResult {
    pub trace: Trace,
    pub makespan: f64,
    pub fatal: Option<FatalEvent>,
    pub buffer_dump: Vec<BufferDump>,
    pub live_handles: usize,
    pub registered_total: usize,
    pub unregistered_total: usize,
    pub live_allocations: usize,
}

// ── Event queue ──────────────────────────────────────────────────────────────

/// A pending task completion, ordered by (end time, task id).
#[derive(Debug, PartialEq)]
struct EventKey {
    end: f64,
    task: usize,
}

impl Eq for EventKey {}

impl Ord for EventKey {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.end.total_cmp(&other.end).then(self.task.cmp(&other.task))
    }
}

impl PartialOrd for EventKey {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

// ── Submitter state ──────────────────────────────────────────────────────────

/// One main-procedure variable's storage and registration status.
#[derive(Debug, Clone)]
struct VarState {
    addr: u64,
    elem: ScalarTy,
    registered_base: Option<u64>,
}

struct Sim<'a> {
    program: &'a TaskProgram,
    machine: &'a MachineDescription,
    perf: &'a PerfModel,
    policy: Policy,
    rt: Runtime,
    clock: f64,
    worker_avail: Vec<f64>,
    link_avail: BTreeMap<(NodeId, NodeId), f64>,
    events: BinaryHeap<Reverse<EventKey>>,
    vars: BTreeMap<String, VarState>,
    task_locs: Vec<Loc>,
    trace: Trace,
    dump: Vec<BufferDump>,
    fatal: Option<FatalEvent>,
}

/// Execute a lowered program under the given machine, cost model, and
/// scheduling policy. Configuration problems (malformed machine, cost
/// entries that do not match the program, codelets no worker can run) are
/// reported before anything executes; runtime errors stop the run and are
/// returned in [`RunResult::fatal`].
pub fn run(
    program: &TaskProgram,
    machine: &MachineDescription,
    perf: &PerfModel,
    policy: Policy,
) -> Result<RunResult, ConfigError> {
    machine.validate()?;
    perf.validate_against(program)?;
    for c in &program.codelets {
        if machine.compatible_workers(c).is_empty() {
            return Err(ConfigError(format!("no compatible worker for codelet '{}'", c.name)));
        }
    }

    let mut sim = Sim {
        program,
        machine,
        perf,
        policy,
        rt: Runtime::new(machine.n_nodes()),
        clock: 0.0,
        worker_avail: vec![0.0; machine.workers.len()],
        link_avail: BTreeMap::new(),
        events: BinaryHeap::new(),
        vars: BTreeMap::new(),
        task_locs: Vec::new(),
        trace: Trace::default(),
        dump: Vec::new(),
        fatal: None,
    };
    sim.execute();

    // Snapshot regions still registered when the run ends (leaked handles),
    // without mutating coherence state or the timeline.
    let mut dump = std::mem::take(&mut sim.dump);
    for id in sim.rt.live_handles() {
        let h = sim.rt.handle(id).expect("live");
        let src = h.source_node().expect("registered handles always have a valid copy");
        dump.push(BufferDump {
            label: h.label.clone(),
            elem: h.elem,
            nx: h.nx,
            bytes: sim.rt.copy_of_node(id, src),
        });
    }

    let makespan = sim.trace.makespan();
    sim.trace.normalize();
    Ok(RunResult {
        trace: sim.trace,
        makespan,
        fatal: sim.fatal,
        buffer_dump: dump,
        live_handles: sim.rt.live_handle_count(),
        registered_total: sim.rt.registered_total(),
        unregistered_total: sim.rt.unregistered_total(),
        live_allocations: sim.rt.heap.live_count(),
    })
}

impl<'a> Sim<'a> {
    fn execute(&mut self) {
        let program = self.program;
        for op in &program.main_ops {
            if self.fatal.is_some() {
                break;
            }
            self.exec_op(op);
        }
        if self.fatal.is_none() {
            // Implicit drain: the run is not over while tasks are in flight.
            self.wait_all();
        }
    }

    fn fatal(&mut self, loc: &Loc, message: String) {
        if self.fatal.is_some() {
            return;
        }
        self.trace.push(TraceEvent::Error {
            message: message.clone(),
            file: loc.file.to_string(),
            line: loc.line,
        });
        self.fatal = Some(FatalEvent { message, file: loc.file.to_string(), line: loc.line });
    }

    // ── Variable storage ─────────────────────────────────────────────────────

    fn var(&self, name: &str) -> &VarState {
        self.vars.get(name).expect("lowering declares every referenced variable")
    }

    /// Read a pointer variable's current value.
    fn read_ptr(&self, vs: &VarState) -> u64 {
        let a = self.rt.heap.get(vs.addr).expect("variable cells are never freed");
        match ir::read_scalar(&a.bytes, vs.elem) {
            IrValue::U64(v) => v,
            IrValue::I64(v) => v as u64,
            _ => unreachable!("pointer cells hold integers"),
        }
    }

    /// The address a registration-style op refers to: the variable's own
    /// storage, or the address it holds.
    fn region_base(&self, var: &str, deref: bool) -> u64 {
        let vs = self.var(var);
        if deref {
            self.read_ptr(vs)
        } else {
            vs.addr
        }
    }

    // ── Main operations ──────────────────────────────────────────────────────

    fn exec_op(&mut self, op: &MainOp) {
        match op {
            MainOp::Alloc { var, count, elem_size, elem, pinned, storage } => {
                let addr = self.rt.heap.alloc(*count, *elem_size, *elem, *pinned);
                self.vars
                    .insert(var.clone(), VarState { addr, elem: *elem, registered_base: None });
                if *storage == StorageClass::Heap {
                    self.trace.push(TraceEvent::Alloc {
                        var: var.clone(),
                        bytes: count * *elem_size as u64,
                        pinned: *pinned,
                        time: self.clock,
                    });
                }
            }
            MainOp::Malloc { var, count, elem_size, elem, .. } => {
                let base = self.rt.heap.alloc(*count, *elem_size, *elem, false);
                let vs = self.var(var).clone();
                let cell = self.rt.heap.get_mut(vs.addr).expect("variable cells are never freed");
                ir::write_scalar(&mut cell.bytes, vs.elem, IrValue::U64(base));
                self.trace.push(TraceEvent::Alloc {
                    var: format!("*{var}"),
                    bytes: count * *elem_size as u64,
                    pinned: false,
                    time: self.clock,
                });
            }
            MainOp::Free { var, loc } => self.exec_free(var, loc),
            MainOp::Register { var, deref, count, elem_size, elem, loc } => {
                self.exec_register(var, *deref, *count, *elem_size, *elem, loc);
            }
            MainOp::Unregister { var, deref, loc } => {
                let base = self.region_base(var, *deref);
                if self.rt.lookup(base).is_none() {
                    self.fatal(loc, format!("use of '{var}' after unregistration"));
                    return;
                }
                self.do_unregister(var, base);
                self.vars.get_mut(var).expect("declared").registered_base = None;
            }
            MainOp::Acquire { var, deref, loc } => {
                let base = self.region_base(var, *deref);
                let Some(h) = self.rt.lookup(base) else {
                    self.fatal(loc, format!("use of '{var}' after unregistration"));
                    return;
                };
                let id = h.id;
                self.wait_for_users(id);
                if self.fatal.is_some() {
                    return;
                }
                if let Some(plan) = self.rt.acquire_to_host(id) {
                    let end = self.schedule_transfer(&plan);
                    self.clock = self.clock.max(end);
                }
            }
            MainOp::Wait { .. } => self.wait_all(),
            MainOp::CallTask { task, args, loc } => self.exec_call(task, args, loc),
            MainOp::PlainStmt { ir, bindings, loc } => self.exec_fragment(ir, bindings, loc),
            MainOp::ScopeEndCleanup { vars } => self.exec_cleanup(vars),
        }
    }

    fn exec_free(&mut self, var: &str, loc: &Loc) {
        let vs = self.var(var).clone();
        let base = self.read_ptr(&vs);
        if base == 0 {
            return; // freeing a null pointer is a no-op
        }
        if self.rt.lookup(base).is_some() {
            self.fatal(loc, format!("storage of '{var}' freed while still registered"));
            return;
        }
        match self.rt.heap.free(base) {
            Ok(()) => self.trace.push(TraceEvent::Free { var: format!("*{var}"), time: self.clock }),
            Err(FreeError::AlreadyFreed) => self.fatal(loc, format!("double free of '{var}'")),
            Err(FreeError::UnknownAddress) => self.fatal(loc, format!("invalid free of '{var}'")),
        }
    }

    fn exec_register(
        &mut self,
        var: &str,
        deref: bool,
        count: u64,
        elem_size: u32,
        elem: ScalarTy,
        loc: &Loc,
    ) {
        let base = self.region_base(var, deref);
        match self.rt.register(var, base, count, elem_size, elem, self.clock) {
            Ok(id) => {
                self.vars.get_mut(var).expect("declared").registered_base = Some(base);
                self.trace.push(TraceEvent::Register {
                    handle: id,
                    var: var.to_string(),
                    bytes: count * elem_size as u64,
                    time: self.clock,
                });
            }
            Err(RegisterError::Overlap { existing_label }) => self.fatal(
                loc,
                format!("registration overlaps existing registered region '{existing_label}'"),
            ),
            Err(RegisterError::NoBacking) => {
                self.fatal(loc, format!("cannot register '{var}': no backing allocation"));
            }
            Err(RegisterError::TooLarge { alloc_len, requested }) => self.fatal(
                loc,
                format!(
                    "registration of '{var}' ({requested} bytes) exceeds its allocation \
                     ({alloc_len} bytes)"
                ),
            ),
        }
    }

    /// Unregister a live handle: wait for its users, flush the latest copy
    /// back to the host, snapshot the contents, and drop the registration.
    fn do_unregister(&mut self, var: &str, base: u64) {
        let id = self.rt.lookup(base).expect("caller checked").id;
        self.wait_for_users(id);
        if self.fatal.is_some() {
            return;
        }
        let end = match self.rt.acquire_to_host(id) {
            Some(plan) => self.schedule_transfer(&plan),
            None => self.clock,
        };
        self.clock = self.clock.max(end);
        let h = self.rt.handle(id).expect("live");
        let (label, elem, nx) = (h.label.clone(), h.elem, h.nx);
        self.dump.push(BufferDump {
            label,
            elem,
            nx,
            bytes: self.rt.copy_of_node(id, HOST_NODE),
        });
        self.trace.push(TraceEvent::Unregister { handle: id, var: var.to_string(), time: end });
        self.rt.remove_handle(id);
    }

    fn exec_cleanup(&mut self, vars: &[crate::lowering::artifact::CleanupVar]) {
        for cv in vars {
            if self.fatal.is_some() {
                return;
            }
            if cv.unregister {
                if let Some(base) = self.var(&cv.var).registered_base {
                    if self.rt.lookup(base).is_some() {
                        self.do_unregister(&cv.var, base);
                    }
                    self.vars.get_mut(&cv.var).expect("declared").registered_base = None;
                }
            }
            if self.fatal.is_some() {
                return;
            }
            if cv.free {
                // Scoped heap storage is the variable's own allocation.
                let addr = self.var(&cv.var).addr;
                if self.rt.lookup(addr).is_some() {
                    // Still registered by a pragma the program never undid:
                    // reclaiming the storage out from under the registry is
                    // the hazard the front end warns about.
                    let loc = Loc::new(&self.program.metadata.source_file.as_str().into(), 0, 0);
                    self.fatal(
                        &loc,
                        format!("storage of '{}' freed while still registered", cv.var),
                    );
                    return;
                }
                if self.rt.heap.free(addr).is_ok() {
                    self.trace.push(TraceEvent::Free { var: cv.var.clone(), time: self.clock });
                }
            }
        }
    }

    // ── Task submission and dispatch ─────────────────────────────────────────

    fn exec_call(&mut self, task: &str, args: &[CallArg], loc: &Loc) {
        let program = self.program;
        let codelet = program.codelet(task).expect("calls reference lowered tasks");
        let mut scalars = Vec::new();
        let mut buffers = Vec::new();
        for (p, a) in codelet.params.iter().zip(args) {
            match (p, a) {
                (CodeletParam::Scalar { .. }, CallArg::Const { v, .. }) => scalars.push(*v),
                (CodeletParam::Scalar { .. }, CallArg::Var { name, ty }) => {
                    let vs = self.var(name);
                    let cell =
                        self.rt.heap.get(vs.addr).expect("variable cells are never freed");
                    scalars.push(ir::read_scalar(&cell.bytes, *ty));
                }
                (CodeletParam::Buffer { mode, .. }, CallArg::Buffer { name, deref }) => {
                    let base = self.region_base(name, *deref);
                    let Some(h) = self.rt.lookup(base) else {
                        self.fatal(loc, "attempt to use unregistered pointer".to_string());
                        return;
                    };
                    buffers.push((h.id, *mode));
                }
                _ => unreachable!("argument kinds are checked during lowering"),
            }
        }
        let pack = codelet.wrapper.pack(&scalars);
        match self.rt.submit(task, pack, buffers, self.clock) {
            Ok(id) => {
                self.task_locs.push(loc.clone());
                debug_assert_eq!(self.task_locs.len(), id + 1);
                self.dispatch_ready();
            }
            Err(_) => self.fatal(loc, format!("failed to insert task '{task}'")),
        }
    }

    /// Dispatch every ready task, in policy order.
    fn dispatch_ready(&mut self) {
        let mut ready: Vec<usize> = self
            .rt
            .tasks
            .iter()
            .filter(|t| t.state == TaskState::Ready)
            .map(|t| t.id)
            .collect();
        if ready.is_empty() {
            return;
        }
        if self.policy == Policy::Heft {
            let ranks = policy::upward_rank(&self.rt.tasks, self.program, self.machine, self.perf);
            ready.sort_by(|a, b| ranks[*b].total_cmp(&ranks[*a]).then(a.cmp(b)));
        }
        for id in ready {
            if self.fatal.is_some() {
                return;
            }
            self.dispatch_one(id);
        }
    }

    fn dispatch_one(&mut self, id: usize) {
        let program = self.program;
        let codelet =
            program.codelet(&self.rt.tasks[id].codelet).expect("submissions are validated");
        let wi = match self.policy {
            Policy::Eager => self.eager_worker(codelet),
            Policy::Heft => self.eft_worker(id, codelet),
        };
        let worker = &self.machine.workers[wi];
        let node = worker.memory_node;

        // Coherence: trigger the transfers the access modes require, and wait
        // for copies that are still materializing on this node.
        let buffers = self.rt.tasks[id].buffers.clone();
        let mut data_ready = self.clock;
        for (h, mode) in &buffers {
            match self.rt.prepare_access(*h, node, *mode) {
                Some(plan) => {
                    let end = self.schedule_transfer(&plan);
                    data_ready = data_ready.max(end);
                }
                None => {
                    let ct = self.rt.handle(*h).expect("live").content_time[node as usize];
                    data_ready = data_ready.max(ct);
                }
            }
        }

        let start = data_ready.max(self.worker_avail[wi]);
        let end = start + self.perf.exec_cost(&codelet.name, worker, self.rt.tasks[id].total_bytes());
        self.worker_avail[wi] = end;
        for (h, mode) in &buffers {
            if matches!(mode, AccessMode::W | AccessMode::RW) {
                self.rt.handle_mut(*h).expect("live").content_time[node as usize] = end;
            }
        }
        self.rt.tasks[id].state = TaskState::Running;

        // Byte effects happen now; dependencies made every input final.
        let imp = codelet
            .impls
            .iter()
            .find(|i| i.target == worker.arch)
            .expect("worker compatibility checked before the run");
        if let Err(fault) = self.run_task_bytes(id, codelet, imp, node) {
            let loc = self.task_locs[id].clone();
            self.rt.mark_failed(id);
            self.fatal(&loc, format!("task '{}' failed: {fault}", codelet.name));
            return;
        }
        self.rt.assert_coherent();

        self.trace.push(TraceEvent::Task {
            id,
            codelet: codelet.name.clone(),
            worker: worker.id,
            start,
            end,
        });
        self.events.push(Reverse(EventKey { end, task: id }));
    }

    /// Run one task's kernel against the copies on `node`.
    fn run_task_bytes(
        &mut self,
        id: usize,
        codelet: &Codelet,
        imp: &ImplDef,
        node: NodeId,
    ) -> Result<(), KernelFault> {
        let scalars = codelet.wrapper.unpack(&self.rt.tasks[id].scalar_pack);
        let widths: Vec<u32> = codelet
            .params
            .iter()
            .filter_map(|p| match p {
                CodeletParam::Buffer { elem_size, .. } => Some(*elem_size),
                CodeletParam::Scalar { .. } => None,
            })
            .collect();
        let handles: Vec<usize> = self.rt.tasks[id].buffers.iter().map(|(h, _)| *h).collect();
        let mut nx = Vec::with_capacity(handles.len());
        for (hid, width) in handles.iter().zip(&widths) {
            let h = self.rt.handle(*hid).expect("live");
            nx.push(h.bytes_len() / *width as u64);
        }
        let mut taken: Vec<(usize, Vec<u8>)> =
            handles.iter().map(|hid| (*hid, self.rt.take_node_bytes(*hid, node))).collect();
        let mut slices: Vec<&mut [u8]> =
            taken.iter_mut().map(|(_, b)| b.as_mut_slice()).collect();
        let result = match &imp.exec {
            ExecPlan::Loop { ir } => ir::eval(ir, &scalars, &mut slices, &nx, None),
            ExecPlan::WorkItems { kernel } => {
                let n = nx.first().copied().unwrap_or(1);
                (0..n).try_for_each(|gid| ir::eval(&kernel.ir, &scalars, &mut slices, &nx, Some(gid)))
            }
        };
        for (hid, bytes) in taken {
            self.rt.put_node_bytes(hid, node, bytes);
        }
        result
    }

    // ── Worker choice ────────────────────────────────────────────────────────

    /// First-come-first-served: the compatible worker that frees up first.
    fn eager_worker(&self, codelet: &Codelet) -> usize {
        self.machine
            .workers
            .iter()
            .enumerate()
            .filter(|(_, w)| codelet.has_arch(w.arch))
            .min_by(|(ai, _), (bi, _)| {
                self.worker_avail[*ai].total_cmp(&self.worker_avail[*bi]).then(ai.cmp(bi))
            })
            .expect("worker compatibility checked before the run")
            .0
    }

    /// Earliest-finish-time choice over compatible workers, using
    /// contention-free transfer estimates for data that is not yet local.
    fn eft_worker(&self, id: usize, codelet: &Codelet) -> usize {
        let t = &self.rt.tasks[id];
        let mut best: Option<(f64, usize)> = None;
        for (wi, w) in self.machine.workers.iter().enumerate() {
            if !codelet.has_arch(w.arch) {
                continue;
            }
            let mut data_ready = self.clock;
            for (hid, mode) in &t.buffers {
                if *mode == AccessMode::W {
                    continue; // no inbound data
                }
                let h = self.rt.handle(*hid).expect("live");
                if h.valid_at(w.memory_node) {
                    data_ready = data_ready.max(h.content_time[w.memory_node as usize]);
                } else {
                    let src = h.source_node().expect("registered handles have a valid copy");
                    let avail = self.clock.max(h.content_time[src as usize]);
                    data_ready = data_ready
                        .max(avail + self.machine.transfer_seconds(src, w.memory_node, h.bytes_len()));
                }
            }
            let start = data_ready.max(self.worker_avail[wi]);
            let eft = start + self.perf.exec_cost(&codelet.name, w, t.total_bytes());
            if best.map_or(true, |(b, _)| eft < b) {
                best = Some((eft, wi));
            }
        }
        best.expect("worker compatibility checked before the run").1
    }

    // ── Transfers and time ───────────────────────────────────────────────────

    /// Timestamp one planned transfer. The link is serialized; the source
    /// copy must exist; unpinned memory cannot be staged while workers on the
    /// source node are still busy.
    fn schedule_transfer(&mut self, plan: &TransferPlan) -> f64 {
        let h = self.rt.handle(plan.handle).expect("live");
        let src_content = h.content_time[plan.from as usize];
        let pinned = h.pinned;
        let src_idle = if pinned {
            0.0
        } else {
            self.machine
                .workers
                .iter()
                .enumerate()
                .filter(|(_, w)| w.memory_node == plan.from)
                .map(|(i, _)| self.worker_avail[i])
                .fold(0.0, f64::max)
        };
        let link = self.link_avail.get(&(plan.from, plan.to)).copied().unwrap_or(0.0);
        let start = self.clock.max(link).max(src_content).max(src_idle);
        let end = start + self.machine.transfer_seconds(plan.from, plan.to, plan.bytes);
        self.link_avail.insert((plan.from, plan.to), end);
        self.rt.handle_mut(plan.handle).expect("live").content_time[plan.to as usize] = end;
        self.trace.push(TraceEvent::Transfer {
            handle: plan.handle,
            from: plan.from,
            to: plan.to,
            bytes: plan.bytes,
            start,
            end,
        });
        end
    }

    /// Retire the earliest pending completion; returns false if none remain.
    fn complete_next_event(&mut self) -> bool {
        let Some(Reverse(EventKey { end, task })) = self.events.pop() else {
            return false;
        };
        self.clock = self.clock.max(end);
        self.rt.mark_done(task);
        self.dispatch_ready();
        true
    }

    /// Advance until every submitted task has finished.
    fn wait_all(&mut self) {
        self.dispatch_ready();
        while self.fatal.is_none() && !self.rt.unfinished_tasks().is_empty() {
            if !self.complete_next_event() {
                panic!("pending tasks but no completion events: dispatch invariant broken");
            }
        }
    }

    /// Advance until no unfinished task uses `handle`.
    fn wait_for_users(&mut self, handle: usize) {
        while self.fatal.is_none() && !self.rt.unfinished_users(handle).is_empty() {
            if !self.complete_next_event() {
                panic!("pending handle users but no completion events: dispatch invariant broken");
            }
        }
    }

    // ── Host statement fragments ─────────────────────────────────────────────

    /// Run one main-procedure statement against host memory. Registered
    /// regions a fragment writes become host-owned first, so device copies
    /// never resurrect overwritten data.
    fn exec_fragment(&mut self, ir: &KernelIR, bindings: &[Binding], loc: &Loc) {
        let mut bases = Vec::with_capacity(bindings.len());
        for b in bindings {
            let vs = self.var(&b.var).clone();
            let base = if b.deref { self.read_ptr(&vs) } else { vs.addr };
            if self.rt.heap.live(base).is_none() {
                self.fatal(loc, format!("use of invalid pointer '{}'", b.var));
                return;
            }
            if bases.contains(&base) {
                self.fatal(
                    loc,
                    "two variables alias the same storage in one statement".to_string(),
                );
                return;
            }
            bases.push(base);
        }
        for (i, base) in bases.iter().enumerate() {
            let writes = ir
                .ops
                .iter()
                .any(|op| matches!(op, IrOp::StoreElem { buf, .. } if *buf as usize == i));
            if !writes {
                continue;
            }
            if let Some(h) = self.rt.lookup(*base) {
                let id = h.id;
                self.rt.make_owner(id, HOST_NODE);
            }
        }
        let mut nx = Vec::with_capacity(bases.len());
        for (i, base) in bases.iter().enumerate() {
            let elem = match &ir.params[i].kind {
                IrParamKind::Buffer { elem } => *elem,
                IrParamKind::Scalar { .. } => unreachable!("fragment parameters are buffers"),
            };
            let len = self.rt.heap.get(*base).expect("checked live").len();
            nx.push(len / elem.width() as u64);
        }
        let mut taken: Vec<Vec<u8>> =
            bases.iter().map(|base| self.rt.heap.take_bytes(*base)).collect();
        let mut slices: Vec<&mut [u8]> = taken.iter_mut().map(|b| b.as_mut_slice()).collect();
        let result = ir::eval(ir, &[], &mut slices, &nx, None);
        for (base, bytes) in bases.iter().zip(taken) {
            self.rt.heap.put_bytes(*base, bytes);
        }
        if let Err(fault) = result {
            self.fatal(loc, fault.to_string());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parser::parse;
    use crate::lowering::lower::lower_program;
    use crate::sema::analyze;
    use crate::sema::types::TargetConfig;
    use crate::sim::machine::{CostEntry, Worker};
    use crate::lowering::artifact::Arch;
    use std::path::Path;

    fn compile(src: &str) -> TaskProgram {
        let tu = parse(src, "t.tc").expect("parse");
        let cfg = TargetConfig::default();
        let (model, diags) = analyze(&tu, &cfg);
        assert!(!crate::diag::has_errors(&diags), "analysis errors: {diags:?}");
        lower_program(&model, "t.tc", Path::new(".")).expect("lowering")
    }

    const SCALE: &str = concat!(
        "static float vector[8] __attribute__((registered));\n",
        "\n",
        "static void vector_scale(float *vector, unsigned int nx, float factor)\n",
        "  __attribute__((task));\n",
        "\n",
        "static void vector_scale_cpu(float *vector, unsigned int nx, float factor)\n",
        "  __attribute__((task_implementation(\"cpu\", vector_scale)));\n",
        "\n",
        "static void vector_scale_cpu(float *vector, unsigned int nx, float factor)\n",
        "{\n",
        "  unsigned int i;\n",
        "  for (i = 0; i < nx; i++)\n",
        "    vector[i] = vector[i] * 3.0f;\n",
        "}\n",
        "\n",
        "int main(void)\n",
        "{\n",
        "  unsigned int i;\n",
        "  for (i = 0; i < 8; i++)\n",
        "    vector[i] = i;\n",
        "  vector_scale(vector, 8, 3.0f);\n",
        "#pragma starpu wait\n",
        "  return 0;\n",
        "}\n",
    );

    fn cpu_and_device() -> MachineDescription {
        MachineDescription {
            workers: vec![
                Worker { id: 0, arch: Arch::Cpu, memory_node: 0, speed_factor: 1.0 },
                Worker { id: 1, arch: Arch::Cuda, memory_node: 1, speed_factor: 1.0 },
            ],
            bandwidth: vec![vec![0.0, 1.0e9], vec![1.0e9, 0.0]],
            latency: vec![vec![0.0, 1.0e-5], vec![1.0e-5, 0.0]],
        }
    }

    #[test]
    fn single_cpu_scale_runs_one_task_no_transfers() {
        let prog = compile(SCALE);
        let machine = MachineDescription::single_cpu();
        let perf = PerfModel::default_for(&prog);
        let r = run(&prog, &machine, &perf, Policy::Eager).expect("run");
        assert!(r.fatal.is_none(), "fatal: {:?}", r.fatal);
        let tasks =
            r.trace.events.iter().filter(|e| matches!(e, TraceEvent::Task { .. })).count();
        let transfers =
            r.trace.events.iter().filter(|e| matches!(e, TraceEvent::Transfer { .. })).count();
        assert_eq!(tasks, 1);
        assert_eq!(transfers, 0);
        assert_eq!(r.makespan, 1.0); // default cost model: 1 second per task
        // scope cleanup unregisters the attributed static and snapshots it
        assert_eq!(r.live_handles, 0);
        assert_eq!(r.buffer_dump.len(), 1);
        let d = &r.buffer_dump[0];
        assert_eq!(d.label, "vector");
        for i in 0..8u32 {
            let off = i as usize * 4;
            let got = f32::from_le_bytes(d.bytes[off..off + 4].try_into().unwrap());
            assert_eq!(got, i as f32 * 3.0);
        }
    }

    #[test]
    fn device_only_machine_moves_data_both_ways() {
        // Make the implementation CUDA-only by renaming the arch in the
        // artifact, then run on a machine whose only capable worker is the
        // device: data must travel out and, on unregister, back.
        let mut prog = compile(SCALE);
        prog.codelets[0].impls[0].target = Arch::Cuda;
        let machine = cpu_and_device();
        let perf = PerfModel::default_for(&prog);
        let r = run(&prog, &machine, &perf, Policy::Eager).expect("run");
        assert!(r.fatal.is_none(), "fatal: {:?}", r.fatal);
        let transfers: Vec<(NodeId, NodeId, u64)> = r
            .trace
            .events
            .iter()
            .filter_map(|e| match e {
                TraceEvent::Transfer { from, to, bytes, .. } => Some((*from, *to, *bytes)),
                _ => None,
            })
            .collect();
        assert_eq!(transfers, vec![(0, 1, 32), (1, 0, 32)]);
        let d = &r.buffer_dump[0];
        for i in 0..8u32 {
            let off = i as usize * 4;
            let got = f32::from_le_bytes(d.bytes[off..off + 4].try_into().unwrap());
            assert_eq!(got, i as f32 * 3.0);
        }
        // task start must wait for the inbound transfer
        let (t_start, t_end) = r
            .trace
            .events
            .iter()
            .find_map(|e| match e {
                TraceEvent::Task { start, end, .. } => Some((*start, *end)),
                _ => None,
            })
            .expect("one task");
        let expected_transfer = 1.0e-5 + 32.0 / 1.0e9;
        assert!((t_start - expected_transfer).abs() < 1e-12);
        assert!((t_end - (t_start + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn empty_main_has_zero_makespan() {
        let prog = compile("int main(void) { return 0; }\n");
        let machine = MachineDescription::single_cpu();
        let perf = PerfModel::default_for(&prog);
        let r = run(&prog, &machine, &perf, Policy::Eager).expect("run");
        assert!(r.fatal.is_none());
        assert_eq!(r.makespan, 0.0);
        assert!(r.trace.events.is_empty());
        assert_eq!(r.live_handles, 0);
    }

    #[test]
    fn incompatible_codelet_is_a_config_error() {
        let mut prog = compile(SCALE);
        prog.codelets[0].impls[0].target = Arch::Cuda;
        let machine = MachineDescription::single_cpu();
        let perf = PerfModel::default_for(&prog);
        let err = run(&prog, &machine, &perf, Policy::Eager).unwrap_err();
        assert_eq!(err.0, "no compatible worker for codelet 'vector_scale'");
    }

    #[test]
    fn calling_with_unregistered_pointer_is_fatal() {
        let src = concat!(
            "static void f(float *v, unsigned int nx) __attribute__((task));\n",
            "static void f_cpu(float *v, unsigned int nx)\n",
            "  __attribute__((task_implementation(\"cpu\", f)));\n",
            "static void f_cpu(float *v, unsigned int nx) { v[0] = 1.0f; }\n",
            "int main(void) {\n",
            "  float data[4];\n",
            "  f(data, 4);\n",
            "#pragma starpu wait\n",
            "  return 0;\n",
            "}\n",
        );
        let prog = compile(src);
        let machine = MachineDescription::single_cpu();
        let perf = PerfModel::default_for(&prog);
        let r = run(&prog, &machine, &perf, Policy::Eager).expect("run");
        let fatal = r.fatal.expect("fatal");
        assert_eq!(fatal.message, "attempt to use unregistered pointer");
        assert_eq!(fatal.line, 7);
        assert!(r.trace.events.iter().any(|e| matches!(e, TraceEvent::Error { .. })));
    }

    #[test]
    fn unregister_then_use_is_fatal() {
        let src = concat!(
            "static void f(float *v, unsigned int nx) __attribute__((task));\n",
            "static void f_cpu(float *v, unsigned int nx)\n",
            "  __attribute__((task_implementation(\"cpu\", f)));\n",
            "static void f_cpu(float *v, unsigned int nx) { v[0] = 1.0f; }\n",
            "int main(void) {\n",
            "  float data[4];\n",
            "#pragma starpu register data\n",
            "#pragma starpu unregister data\n",
            "#pragma starpu unregister data\n",
            "  return 0;\n",
            "}\n",
        );
        let prog = compile(src);
        let machine = MachineDescription::single_cpu();
        let perf = PerfModel::default_for(&prog);
        let r = run(&prog, &machine, &perf, Policy::Eager).expect("run");
        let fatal = r.fatal.expect("fatal");
        assert_eq!(fatal.message, "use of 'data' after unregistration");
        assert_eq!(fatal.line, 9);
    }

    #[test]
    fn malloc_register_free_balances_heap() {
        let src = concat!(
            "static void f(double *v, unsigned int nx) __attribute__((task));\n",
            "static void f_cpu(double *v, unsigned int nx)\n",
            "  __attribute__((task_implementation(\"cpu\", f)));\n",
            "static void f_cpu(double *v, unsigned int nx) {\n",
            "  unsigned int i;\n",
            "  for (i = 0; i < nx; i++) v[i] = 2.5;\n",
            "}\n",
            "int main(void) {\n",
            "  double *p = malloc(8 * sizeof(double));\n",
            "#pragma starpu register p 8\n",
            "  f(p, 8);\n",
            "#pragma starpu wait\n",
            "#pragma starpu unregister p\n",
            "  free(p);\n",
            "  return 0;\n",
            "}\n",
        );
        let prog = compile(src);
        let machine = MachineDescription::single_cpu();
        let perf = PerfModel::default_for(&prog);
        let r = run(&prog, &machine, &perf, Policy::Eager).expect("run");
        assert!(r.fatal.is_none(), "fatal: {:?}", r.fatal);
        assert_eq!(r.registered_total, 1);
        assert_eq!(r.unregistered_total, 1);
        assert_eq!(r.live_handles, 0);
        let allocs =
            r.trace.events.iter().filter(|e| matches!(e, TraceEvent::Alloc { .. })).count();
        let frees =
            r.trace.events.iter().filter(|e| matches!(e, TraceEvent::Free { .. })).count();
        assert_eq!((allocs, frees), (1, 1));
        // the unregister-time snapshot has the task's results
        let d = &r.buffer_dump[0];
        assert_eq!(d.label, "p");
        for i in 0..8 {
            let off = i * 8;
            let got = f64::from_le_bytes(d.bytes[off..off + 8].try_into().unwrap());
            assert_eq!(got, 2.5);
        }
    }

    #[test]
    fn host_write_after_acquire_wins_over_device_copy() {
        // A device task triples the vector; main acquires, then overwrites one
        // element; a later unregister must see the host's write, not the
        // device copy.
        let src = concat!(
            "static float v[4] __attribute__((registered));\n",
            "static void triple(float *v, unsigned int nx) __attribute__((task));\n",
            "static void triple_cpu(float *v, unsigned int nx)\n",
            "  __attribute__((task_implementation(\"cpu\", triple)));\n",
            "static void triple_cpu(float *v, unsigned int nx) {\n",
            "  unsigned int i;\n",
            "  for (i = 0; i < nx; i++) v[i] = v[i] * 3.0f;\n",
            "}\n",
            "int main(void) {\n",
            "  v[0] = 1.0f; v[1] = 1.0f; v[2] = 1.0f; v[3] = 1.0f;\n",
            "  triple(v, 4);\n",
            "#pragma starpu acquire v\n",
            "  v[0] = 9.0f;\n",
            "#pragma starpu unregister v\n",
            "  return 0;\n",
            "}\n",
        );
        let mut prog = compile(src);
        prog.codelets[0].impls[0].target = Arch::Cuda; // force device placement
        let machine = cpu_and_device();
        let perf = PerfModel::default_for(&prog);
        let r = run(&prog, &machine, &perf, Policy::Eager).expect("run");
        assert!(r.fatal.is_none(), "fatal: {:?}", r.fatal);
        let d = &r.buffer_dump[0];
        let vals: Vec<f32> = (0..4)
            .map(|i| f32::from_le_bytes(d.bytes[i * 4..i * 4 + 4].try_into().unwrap()))
            .collect();
        assert_eq!(vals, vec![9.0, 3.0, 3.0, 3.0]);
    }

    #[test]
    fn eager_spreads_independent_tasks_across_equal_cpus() {
        let src = concat!(
            "static float a[4] __attribute__((registered));\n",
            "static float b[4] __attribute__((registered));\n",
            "static void bump(float *v, unsigned int nx) __attribute__((task));\n",
            "static void bump_cpu(float *v, unsigned int nx)\n",
            "  __attribute__((task_implementation(\"cpu\", bump)));\n",
            "static void bump_cpu(float *v, unsigned int nx) {\n",
            "  unsigned int i;\n",
            "  for (i = 0; i < nx; i++) v[i] = v[i] + 1.0f;\n",
            "}\n",
            "int main(void) {\n",
            "  bump(a, 4);\n",
            "  bump(b, 4);\n",
            "#pragma starpu wait\n",
            "  return 0;\n",
            "}\n",
        );
        let prog = compile(src);
        let machine = MachineDescription {
            workers: vec![
                Worker { id: 0, arch: Arch::Cpu, memory_node: 0, speed_factor: 1.0 },
                Worker { id: 1, arch: Arch::Cpu, memory_node: 0, speed_factor: 1.0 },
            ],
            bandwidth: vec![vec![0.0]],
            latency: vec![vec![0.0]],
        };
        let perf = PerfModel::default_for(&prog);
        let r = run(&prog, &machine, &perf, Policy::Eager).expect("run");
        assert!(r.fatal.is_none());
        let workers: Vec<u32> = r
            .trace
            .events
            .iter()
            .filter_map(|e| match e {
                TraceEvent::Task { worker, .. } => Some(*worker),
                _ => None,
            })
            .collect();
        assert_eq!(workers, vec![0, 1]);
        assert_eq!(r.makespan, 1.0); // they overlap
    }

    #[test]
    fn dependent_tasks_serialize_on_the_clock() {
        let src = concat!(
            "static float a[4] __attribute__((registered));\n",
            "static void bump(float *v, unsigned int nx) __attribute__((task));\n",
            "static void bump_cpu(float *v, unsigned int nx)\n",
            "  __attribute__((task_implementation(\"cpu\", bump)));\n",
            "static void bump_cpu(float *v, unsigned int nx) {\n",
            "  unsigned int i;\n",
            "  for (i = 0; i < nx; i++) v[i] = v[i] + 1.0f;\n",
            "}\n",
            "int main(void) {\n",
            "  bump(a, 4);\n",
            "  bump(a, 4);\n",
            "#pragma starpu wait\n",
            "  return 0;\n",
            "}\n",
        );
        let prog = compile(src);
        let machine = MachineDescription {
            workers: vec![
                Worker { id: 0, arch: Arch::Cpu, memory_node: 0, speed_factor: 1.0 },
                Worker { id: 1, arch: Arch::Cpu, memory_node: 0, speed_factor: 1.0 },
            ],
            bandwidth: vec![vec![0.0]],
            latency: vec![vec![0.0]],
        };
        let perf = PerfModel::default_for(&prog);
        let r = run(&prog, &machine, &perf, Policy::Eager).expect("run");
        assert!(r.fatal.is_none());
        let spans: Vec<(f64, f64)> = r
            .trace
            .events
            .iter()
            .filter_map(|e| match e {
                TraceEvent::Task { start, end, .. } => Some((*start, *end)),
                _ => None,
            })
            .collect();
        assert_eq!(spans, vec![(0.0, 1.0), (1.0, 2.0)]);
        assert_eq!(r.makespan, 2.0);
        // the final value reflects both increments
        let d = &r.buffer_dump[0];
        let got = f32::from_le_bytes(d.bytes[0..4].try_into().unwrap());
        assert_eq!(got, 2.0);
    }

    #[test]
    fn heft_prefers_the_faster_device_despite_the_transfer() {
        // One task, cpu cost 4.0 vs device cost 1.0 with a cheap transfer:
        // list scheduling must pick the device; eager (both idle) picks the
        // lower-id cpu.
        let mut prog = compile(SCALE);
        let dev_exec = prog.codelets[0].impls[0].exec.clone();
        prog.codelets[0].impls.push(crate::lowering::artifact::ImplDef {
            name: "vector_scale_dev".into(),
            target: Arch::Cuda,
            synthesized: false,
            exec: dev_exec,
        });
        let machine = cpu_and_device();
        let mut perf = PerfModel::default();
        perf.entries.insert(
            "vector_scale/cpu".into(),
            CostEntry { base_seconds: 4.0, seconds_per_byte: 0.0 },
        );
        perf.entries.insert(
            "vector_scale/cuda".into(),
            CostEntry { base_seconds: 1.0, seconds_per_byte: 0.0 },
        );
        let r_eager = run(&prog, &machine, &perf, Policy::Eager).expect("run");
        let r_heft = run(&prog, &machine, &perf, Policy::Heft).expect("run");
        let worker_of = |r: &RunResult| {
            r.trace
                .events
                .iter()
                .find_map(|e| match e {
                    TraceEvent::Task { worker, .. } => Some(*worker),
                    _ => None,
                })
                .expect("one task")
        };
        assert_eq!(worker_of(&r_eager), 0);
        assert_eq!(worker_of(&r_heft), 1);
        assert!(r_heft.makespan < r_eager.makespan);
    }

    #[test]
    fn reruns_are_byte_identical() {
        let prog = compile(SCALE);
        let machine = MachineDescription::single_cpu();
        let perf = PerfModel::default_for(&prog);
        let a = run(&prog, &machine, &perf, Policy::Eager).expect("run");
        let b = run(&prog, &machine, &perf, Policy::Eager).expect("run");
        assert_eq!(a.trace.to_json_lines(), b.trace.to_json_lines());
        assert_eq!(a.buffer_dump, b.buffer_dump);
        assert_eq!(a.makespan, b.makespan);
    }
}
