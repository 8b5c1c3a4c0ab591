//! Task runtime: data registry with per-node coherence, dependency inference
//! at submission, and the task table.
//!
//! The runtime owns the *data* semantics of a run — which bytes live where,
//! which tasks depend on which — while the simulator owns the *time*
//! semantics (workers, costs, transfers' start/end instants). Coherence
//! follows an MSI-style discipline: per memory node a handle's copy is Owner,
//! Shared, or Invalid; there is always exactly one Owner, or one or more
//! identical Shared copies and no Owner.

pub mod heap;

use std::collections::{BTreeMap, BTreeSet};

use crate::lowering::ir::ScalarTy;
use crate::sema::types::AccessMode;

pub use heap::{Allocation, FreeError, HostHeap};

/// Memory-node id; node 0 is always the host.
pub type NodeId = u32;

pub const HOST_NODE: NodeId = 0;

/// Per-node coherence state of one data handle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CopyState {
    Owner,
    Shared,
    Invalid,
}

/// A byte movement the caller must account for in virtual time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferPlan {
    pub handle: usize,
    pub from: NodeId,
    pub to: NodeId,
    pub bytes: u64,
}

/// A registered buffer, tracked across memory nodes. Host bytes live in the
/// heap allocation at `base`; device copies live here.
#[derive(Debug)]
pub struct DataHandle {
    pub id: usize,
    /// The variable name the registration referred to (trace/dump label).
    pub label: String,
    pub base: u64,
    pub elem: ScalarTy,
    pub elem_size: u32,
    pub nx: u64,
    pub pinned: bool,
    pub state: Vec<CopyState>,
    pub device_bytes: BTreeMap<NodeId, Vec<u8>>,
    /// Per node: virtual time its copy last became valid.
    pub content_time: Vec<f64>,
    last_writer: Option<usize>,
    readers_since_write: Vec<usize>,
}

impl DataHandle {
    pub fn bytes_len(&self) -> u64 {
        self.nx * self.elem_size as u64
    }

    pub fn valid_at(&self, node: NodeId) -> bool {
        self.state[node as usize] != CopyState::Invalid
    }

    /// Deterministic source node for a copy: the host if valid, else the
    /// lowest-numbered valid node.
    pub fn source_node(&self) -> Option<NodeId> {
        if self.valid_at(HOST_NODE) {
            return Some(HOST_NODE);
        }
        self.state
            .iter()
            .position(|s| *s != CopyState::Invalid)
            .map(|n| n as NodeId)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskState {
    Blocked,
    Ready,
    Running,
    Done,
    Failed,
}

/// One submitted task instance.
#[derive(Debug)]
pub struct TaskInstance {
    pub id: usize,
    pub codelet: String,
    pub scalar_pack: Vec<u8>,
    /// Buffer arguments in declaration order: handle id and access mode.
    pub buffers: Vec<(usize, AccessMode)>,
    /// Byte size of each buffer argument, captured at submission (handles
    /// may be unregistered later).
    pub buffer_bytes: Vec<u64>,
    /// Ids of tasks this one must wait for (all lower than `id`).
    pub deps: Vec<usize>,
    pub state: TaskState,
    pub submit_time: f64,
}

impl TaskInstance {
    /// Total bytes across all buffer arguments.
    pub fn total_bytes(&self) -> u64 {
        self.buffer_bytes.iter().sum()
    }

    /// Bytes of the arguments using `handle`.
    pub fn bytes_of(&self, handle: usize) -> u64 {
        self.buffers
            .iter()
            .zip(&self.buffer_bytes)
            .filter(|((h, _), _)| *h == handle)
            .map(|(_, b)| *b)
            .sum()
    }

    pub fn writes(&self, handle: usize) -> bool {
        self.buffers
            .iter()
            .any(|(h, m)| *h == handle && matches!(m, AccessMode::W | AccessMode::RW))
    }

    pub fn uses(&self, handle: usize) -> bool {
        self.buffers.iter().any(|(h, _)| *h == handle)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RegisterError {
    /// The range intersects a live registration.
    Overlap { existing_label: String },
    /// No live allocation starts at the base address.
    NoBacking,
    /// The registered size exceeds the backing allocation.
    TooLarge { alloc_len: u64, requested: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SubmitError {
    /// A buffer argument's backing storage was freed.
    DeadStorage { label: String },
    /// The same handle appears twice in one task's arguments.
    DuplicateHandle { label: String },
}

/// The runtime state for one program run.
#[derive(Debug)]
pub struct Runtime {
    pub heap: HostHeap,
    handles: Vec<Option<DataHandle>>,
    by_base: BTreeMap<u64, usize>,
    pub tasks: Vec<TaskInstance>,
    n_nodes: u32,
    registered_total: usize,
    unregistered_total: usize,
}

impl Runtime {
    pub fn new(n_nodes: u32) -> Runtime {
        assert!(n_nodes >= 1, "at least the host node must exist");
        Runtime {
            heap: HostHeap::new(),
            handles: Vec::new(),
            by_base: BTreeMap::new(),
            tasks: Vec::new(),
            n_nodes,
            registered_total: 0,
            unregistered_total: 0,
        }
    }

    pub fn n_nodes(&self) -> u32 {
        self.n_nodes
    }

    // ── Registry ─────────────────────────────────────────────────────────────

    /// Register the range starting at `base`; the host node becomes Owner.
    pub fn register(
        &mut self,
        label: &str,
        base: u64,
        nx: u64,
        elem_size: u32,
        elem: ScalarTy,
        time: f64,
    ) -> Result<usize, RegisterError> {
        let requested = nx * elem_size as u64;
        let backing = self.heap.live(base).ok_or(RegisterError::NoBacking)?;
        if requested > backing.len() {
            return Err(RegisterError::TooLarge { alloc_len: backing.len(), requested });
        }
        let pinned = backing.pinned;
        let end = base + requested;
        for (_, id) in self.by_base.range(..end) {
            let h = self.handles[*id].as_ref().expect("by_base points at live handles");
            if h.base + h.bytes_len() > base {
                return Err(RegisterError::Overlap { existing_label: h.label.clone() });
            }
        }
        let id = self.handles.len();
        let mut state = vec![CopyState::Invalid; self.n_nodes as usize];
        state[HOST_NODE as usize] = CopyState::Owner;
        let mut content_time = vec![0.0; self.n_nodes as usize];
        content_time[HOST_NODE as usize] = time;
        self.handles.push(Some(DataHandle {
            id,
            label: label.to_string(),
            base,
            elem,
            elem_size,
            nx,
            pinned,
            state,
            device_bytes: BTreeMap::new(),
            content_time,
            last_writer: None,
            readers_since_write: Vec::new(),
        }));
        self.by_base.insert(base, id);
        self.registered_total += 1;
        Ok(id)
    }

    /// Exact-base lookup of a live handle.
    pub fn lookup(&self, base: u64) -> Option<&DataHandle> {
        self.by_base.get(&base).map(|id| self.handles[*id].as_ref().expect("live"))
    }

    pub fn handle(&self, id: usize) -> Option<&DataHandle> {
        self.handles.get(id).and_then(|h| h.as_ref())
    }

    pub fn handle_mut(&mut self, id: usize) -> Option<&mut DataHandle> {
        self.handles.get_mut(id).and_then(|h| h.as_mut())
    }

    /// Remove a handle from the registry, dropping all device copies. The
    /// caller is responsible for flushing to the host first (implicit
    /// acquire).
    pub fn remove_handle(&mut self, id: usize) {
        let h = self.handles[id].take().expect("remove_handle: live handle");
        self.by_base.remove(&h.base);
        self.unregistered_total += 1;
    }

    /// Ids of live handles, in registration order.
    pub fn live_handles(&self) -> Vec<usize> {
        self.handles
            .iter()
            .filter_map(|h| h.as_ref().map(|h| h.id))
            .collect()
    }

    pub fn live_handle_count(&self) -> usize {
        self.by_base.len()
    }

    pub fn registered_total(&self) -> usize {
        self.registered_total
    }

    pub fn unregistered_total(&self) -> usize {
        self.unregistered_total
    }

    // ── Coherence ────────────────────────────────────────────────────────────

    /// Ensure `node` holds a valid copy, moving bytes if necessary. The node
    /// ends at least Shared; an existing Owner elsewhere degrades to Shared.
    pub fn ensure_valid(&mut self, id: usize, node: NodeId) -> Option<TransferPlan> {
        let h = self.handles[id].as_ref().expect("ensure_valid: live handle");
        if h.valid_at(node) {
            return None;
        }
        let src = h.source_node().expect("a registered handle always has a valid copy");
        let bytes = self.copy_of_node(id, src);
        let h = self.handles[id].as_mut().expect("live");
        let len = bytes.len() as u64;
        if node == HOST_NODE {
            let base = h.base;
            let mut host = self.heap.take_bytes(base);
            host[..bytes.len()].copy_from_slice(&bytes);
            self.heap.put_bytes(base, host);
        } else {
            h.device_bytes.insert(node, bytes);
        }
        let h = self.handles[id].as_mut().expect("live");
        if h.state[src as usize] == CopyState::Owner {
            h.state[src as usize] = CopyState::Shared;
        }
        h.state[node as usize] = CopyState::Shared;
        Some(TransferPlan { handle: id, from: src, to: node, bytes: len })
    }

    /// Make `node` the sole Owner, invalidating and dropping all other
    /// copies. Does not move bytes.
    pub fn make_owner(&mut self, id: usize, node: NodeId) {
        let h = self.handles[id].as_mut().expect("make_owner: live handle");
        for n in 0..h.state.len() {
            h.state[n] = if n == node as usize { CopyState::Owner } else { CopyState::Invalid };
        }
        h.device_bytes.retain(|n, _| *n == node);
    }

    /// Prepare one buffer argument for access on `node` per its mode,
    /// returning the transfer performed, if any. Write-only access allocates
    /// a zero-filled destination copy without transferring anything in.
    pub fn prepare_access(
        &mut self,
        id: usize,
        node: NodeId,
        mode: AccessMode,
    ) -> Option<TransferPlan> {
        match mode {
            AccessMode::R => self.ensure_valid(id, node),
            AccessMode::RW => {
                let t = self.ensure_valid(id, node);
                self.make_owner(id, node);
                t
            }
            AccessMode::W => {
                self.make_owner(id, node);
                let h = self.handles[id].as_ref().expect("live");
                let len = h.bytes_len() as usize;
                let base = h.base;
                if node == HOST_NODE {
                    let mut host = self.heap.take_bytes(base);
                    host[..len].fill(0);
                    self.heap.put_bytes(base, host);
                } else {
                    let h = self.handles[id].as_mut().expect("live");
                    h.device_bytes.insert(node, vec![0; len]);
                }
                None
            }
            AccessMode::ScalarValue => unreachable!("scalars are not buffer arguments"),
        }
    }

    /// A fresh copy of the bytes held at `node` (which must be valid).
    pub fn copy_of_node(&self, id: usize, node: NodeId) -> Vec<u8> {
        let h = self.handles[id].as_ref().expect("copy_of_node: live handle");
        assert!(h.valid_at(node), "copy_of_node: node copy is invalid");
        if node == HOST_NODE {
            let a = self.heap.get(h.base).expect("backing allocation");
            a.bytes[..h.bytes_len() as usize].to_vec()
        } else {
            h.device_bytes[&node].clone()
        }
    }

    /// Move the bytes of `node`'s copy out for mutation; pair with
    /// [`Runtime::put_node_bytes`]. For the host node this is the backing
    /// allocation's full byte vector (evaluation never reaches past the
    /// handle's element count, which gates every access).
    pub fn take_node_bytes(&mut self, id: usize, node: NodeId) -> Vec<u8> {
        let h = self.handles[id].as_mut().expect("take_node_bytes: live handle");
        if node == HOST_NODE {
            let base = h.base;
            self.heap.take_bytes(base)
        } else {
            h.device_bytes.remove(&node).expect("device copy present")
        }
    }

    pub fn put_node_bytes(&mut self, id: usize, node: NodeId, bytes: Vec<u8>) {
        let h = self.handles[id].as_mut().expect("put_node_bytes: live handle");
        if node == HOST_NODE {
            let base = h.base;
            self.heap.put_bytes(base, bytes);
        } else {
            h.device_bytes.insert(node, bytes);
        }
    }

    /// Implicit or explicit acquire: bring a valid copy to the host. The host
    /// ends Shared (or stays Owner).
    pub fn acquire_to_host(&mut self, id: usize) -> Option<TransferPlan> {
        self.ensure_valid(id, HOST_NODE)
    }

    /// Check the MSI invariant for every live handle: exactly one Owner, or
    /// no Owner and one or more Shared copies holding identical bytes.
    /// Panics on violation — reaching one is a runtime bug, not a user error.
    pub fn assert_coherent(&self) {
        for h in self.handles.iter().flatten() {
            let owners = h.state.iter().filter(|s| **s == CopyState::Owner).count();
            let shared: Vec<usize> = h
                .state
                .iter()
                .enumerate()
                .filter(|(_, s)| **s == CopyState::Shared)
                .map(|(n, _)| n)
                .collect();
            if owners == 1 {
                continue;
            }
            assert!(
                owners == 0 && !shared.is_empty(),
                "handle '{}': {} owners, {} shared copies",
                h.label,
                owners,
                shared.len()
            );
            let reference = self.copy_of_node(h.id, shared[0] as NodeId);
            for n in &shared[1..] {
                assert!(
                    self.copy_of_node(h.id, *n as NodeId) == reference,
                    "handle '{}': shared copies on nodes {} and {} differ",
                    h.label,
                    shared[0],
                    n
                );
            }
        }
    }

    // ── Tasks and dependencies ───────────────────────────────────────────────

    /// Submit a task: infer dependencies from the submission history of each
    /// buffer argument (readers depend on the last writer; writers depend on
    /// the last writer and every reader since), then record the task.
    pub fn submit(
        &mut self,
        codelet: &str,
        scalar_pack: Vec<u8>,
        buffers: Vec<(usize, AccessMode)>,
        time: f64,
    ) -> Result<usize, SubmitError> {
        let id = self.tasks.len();
        let mut seen = BTreeSet::new();
        let mut buffer_bytes = Vec::with_capacity(buffers.len());
        for (hid, _) in &buffers {
            let h = self.handles[*hid].as_ref().expect("submit: live handle");
            if !seen.insert(*hid) {
                return Err(SubmitError::DuplicateHandle { label: h.label.clone() });
            }
            if self.heap.live(h.base).is_none() {
                return Err(SubmitError::DeadStorage { label: h.label.clone() });
            }
            buffer_bytes.push(h.bytes_len());
        }
        let mut deps = BTreeSet::new();
        for (hid, mode) in &buffers {
            let h = self.handles[*hid].as_mut().expect("live");
            match mode {
                AccessMode::R => {
                    if let Some(w) = h.last_writer {
                        deps.insert(w);
                    }
                    h.readers_since_write.push(id);
                }
                AccessMode::W | AccessMode::RW => {
                    if let Some(w) = h.last_writer {
                        deps.insert(w);
                    }
                    deps.extend(h.readers_since_write.iter().copied());
                    h.last_writer = Some(id);
                    h.readers_since_write.clear();
                }
                AccessMode::ScalarValue => unreachable!("scalars are not buffer arguments"),
            }
        }
        deps.remove(&id);
        let deps: Vec<usize> = deps.into_iter().collect();
        let state = if deps.iter().all(|d| self.tasks[*d].state == TaskState::Done) {
            TaskState::Ready
        } else {
            TaskState::Blocked
        };
        self.tasks.push(TaskInstance {
            id,
            codelet: codelet.to_string(),
            scalar_pack,
            buffers,
            buffer_bytes,
            deps,
            state,
            submit_time: time,
        });
        Ok(id)
    }

    pub fn deps_done(&self, id: usize) -> bool {
        self.tasks[id].deps.iter().all(|d| self.tasks[*d].state == TaskState::Done)
    }

    /// Mark a task done and promote blocked dependents whose deps are now all
    /// done. Returns the promoted ids.
    pub fn mark_done(&mut self, id: usize) -> Vec<usize> {
        self.tasks[id].state = TaskState::Done;
        let mut promoted = Vec::new();
        for t in id + 1..self.tasks.len() {
            if self.tasks[t].state == TaskState::Blocked
                && self.tasks[t].deps.contains(&id)
                && self.deps_done(t)
            {
                self.tasks[t].state = TaskState::Ready;
                promoted.push(t);
            }
        }
        promoted
    }

    /// Mark a task failed and transitively fail every not-yet-running task
    /// depending on it. Returns the poisoned ids (excluding `id`).
    pub fn mark_failed(&mut self, id: usize) -> Vec<usize> {
        self.tasks[id].state = TaskState::Failed;
        let mut poisoned = Vec::new();
        for t in id + 1..self.tasks.len() {
            if matches!(self.tasks[t].state, TaskState::Blocked | TaskState::Ready)
                && self.tasks[t]
                    .deps
                    .iter()
                    .any(|d| self.tasks[*d].state == TaskState::Failed)
            {
                self.tasks[t].state = TaskState::Failed;
                poisoned.push(t);
            }
        }
        poisoned
    }

    /// Tasks that use `handle` and have not finished (done or failed).
    pub fn unfinished_users(&self, handle: usize) -> Vec<usize> {
        self.tasks
            .iter()
            .filter(|t| {
                t.uses(handle) && !matches!(t.state, TaskState::Done | TaskState::Failed)
            })
            .map(|t| t.id)
            .collect()
    }

    pub fn unfinished_tasks(&self) -> Vec<usize> {
        self.tasks
            .iter()
            .filter(|t| !matches!(t.state, TaskState::Done | TaskState::Failed))
            .map(|t| t.id)
            .collect()
    }
}
