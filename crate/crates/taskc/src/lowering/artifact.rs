//! The serialized task-program artifact: everything the runtime needs to run
//! a lowered program, self-contained in one JSON document.
//!
//! Top-level keys are `codelets`, `main_ops`, and `metadata`. Serialization
//! uses declaration order for struct fields and `Vec`s throughout, so a
//! document re-serializes byte-identically after a round trip.

use serde::{Deserialize, Serialize};

use crate::loc::Loc;
use crate::lowering::ir::{read_scalar, write_scalar, IrValue, KernelIR, ScalarTy};
use crate::sema::types::{AccessMode, TargetConfig};

// ── Architectures ────────────────────────────────────────────────────────────

/// Worker / implementation architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Cpu,
    Opencl,
    Cuda,
}

impl Arch {
    pub fn as_str(&self) -> &'static str {
        match self {
            Arch::Cpu => "cpu",
            Arch::Opencl => "opencl",
            Arch::Cuda => "cuda",
        }
    }

    pub fn from_str(s: &str) -> Option<Arch> {
        match s {
            "cpu" => Some(Arch::Cpu),
            "opencl" => Some(Arch::Opencl),
            "cuda" => Some(Arch::Cuda),
            _ => None,
        }
    }
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

// ── Codelets ─────────────────────────────────────────────────────────────────

/// One task parameter as the runtime sees it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CodeletParam {
    Scalar { name: String, ty: ScalarTy },
    Buffer { name: String, elem: ScalarTy, elem_size: u32, mode: AccessMode },
}

impl CodeletParam {
    pub fn name(&self) -> &str {
        match self {
            CodeletParam::Scalar { name, .. } | CodeletParam::Buffer { name, .. } => name,
        }
    }

    pub fn is_buffer(&self) -> bool {
        matches!(self, CodeletParam::Buffer { .. })
    }
}

/// One entry of the packed scalar layout: parameter name, byte width, and the
/// scalar type used to encode it (little-endian, no padding).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackEntry {
    pub param: String,
    pub width: u32,
    pub ty: ScalarTy,
}

/// Marshalling plan: which parameters become buffer slots (by parameter
/// index, in declaration order) and how scalars are packed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WrapperPlan {
    pub buffer_slots: Vec<u32>,
    pub scalar_pack: Vec<PackEntry>,
}

impl WrapperPlan {
    /// Total byte size of the packed scalar block.
    pub fn pack_size(&self) -> usize {
        self.scalar_pack.iter().map(|e| e.width as usize).sum()
    }

    /// Pack scalar values (in scalar-parameter declaration order) into bytes.
    pub fn pack(&self, values: &[IrValue]) -> Vec<u8> {
        assert_eq!(values.len(), self.scalar_pack.len());
        let mut out = Vec::with_capacity(self.pack_size());
        for (entry, v) in self.scalar_pack.iter().zip(values) {
            let mut bytes = [0u8; 8];
            write_scalar(&mut bytes, entry.ty, *v);
            out.extend_from_slice(&bytes[..entry.width as usize]);
        }
        out
    }

    /// Unpack a scalar block produced by [`WrapperPlan::pack`].
    pub fn unpack(&self, bytes: &[u8]) -> Vec<IrValue> {
        let mut out = Vec::with_capacity(self.scalar_pack.len());
        let mut off = 0;
        for entry in &self.scalar_pack {
            out.push(read_scalar(&bytes[off..], entry.ty));
            off += entry.width as usize;
        }
        out
    }
}

/// The generated task body: handle lookups for buffer arguments (in
/// declaration order), then one submit against the codelet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskBodyPlan {
    pub lookups: Vec<String>,
    pub submit: String,
}

/// An embedded device kernel: full source text captured at compile time plus
/// the IR it lowers to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedKernel {
    pub source_text: String,
    pub kernel_name: String,
    pub group_size: u64,
    pub ir: KernelIR,
}

/// How one implementation executes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ExecPlan {
    /// The body is ordinary statement IR, run once per task.
    Loop { ir: KernelIR },
    /// A device kernel run once per work item, global ids 0..nx of the first
    /// buffer argument.
    WorkItems { kernel: EmbeddedKernel },
}

impl ExecPlan {
    pub fn ir(&self) -> &KernelIR {
        match self {
            ExecPlan::Loop { ir } => ir,
            ExecPlan::WorkItems { kernel } => &kernel.ir,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImplDef {
    pub name: String,
    pub target: Arch,
    pub synthesized: bool,
    pub exec: ExecPlan,
}

/// One codelet: task name, parameters, buffer modes, marshalling and task
/// body plans, and the available implementations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codelet {
    pub name: String,
    pub params: Vec<CodeletParam>,
    pub nbuffers: usize,
    pub modes: Vec<AccessMode>,
    pub wrapper: WrapperPlan,
    pub task_body: TaskBodyPlan,
    pub impls: Vec<ImplDef>,
}

impl Codelet {
    pub fn has_arch(&self, arch: Arch) -> bool {
        self.impls.iter().any(|i| i.target == arch)
    }

    pub fn impl_for(&self, arch: Arch) -> Option<&ImplDef> {
        self.impls.iter().find(|i| i.target == arch)
    }
}

// ── Main-procedure ops ───────────────────────────────────────────────────────

/// Storage class of a variable's own backing store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StorageClass {
    /// Block-scoped storage, released at scope exit.
    Auto,
    /// File-scope storage, lives for the whole run.
    Static,
    /// Heap storage from a scoped `heap_allocated` declaration; freed by the
    /// variable's cleanup op.
    Heap,
}

/// One argument of a task invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CallArg {
    /// A compile-time constant scalar.
    Const { ty: ScalarTy, v: IrValue },
    /// A scalar variable, read at submission time.
    Var { name: String, ty: ScalarTy },
    /// A buffer address: the variable's own storage, or — with `deref` — the
    /// address held in a pointer variable.
    Buffer { name: String, deref: bool },
}

/// Maps one IR buffer parameter of a `plain_stmt` fragment onto a main
/// variable (directly, or through the pointer it holds).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Binding {
    pub var: String,
    pub deref: bool,
}

/// Cleanup actions for one scoped variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanupVar {
    pub var: String,
    pub unregister: bool,
    pub free: bool,
}

/// One step of the main procedure, executed in order by the submitter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum MainOp {
    /// Create a variable's own storage (zero-filled).
    Alloc {
        var: String,
        count: u64,
        elem_size: u32,
        elem: ScalarTy,
        pinned: bool,
        storage: StorageClass,
    },
    /// Allocate an anonymous heap region and store its address in `var`.
    Malloc { var: String, count: u64, elem_size: u32, elem: ScalarTy, loc: Loc },
    /// Free the heap region whose address `var` holds.
    Free { var: String, loc: Loc },
    Register { var: String, deref: bool, count: u64, elem_size: u32, elem: ScalarTy, loc: Loc },
    Unregister { var: String, deref: bool, loc: Loc },
    Acquire { var: String, deref: bool, loc: Loc },
    Wait { loc: Loc },
    CallTask { task: String, args: Vec<CallArg>, loc: Loc },
    /// Host-side statement IR over main variables.
    PlainStmt { ir: KernelIR, bindings: Vec<Binding>, loc: Loc },
    /// Scope exit: unregister/free scoped variables, in the order listed
    /// (reverse definition order).
    ScopeEndCleanup { vars: Vec<CleanupVar> },
}

// ── Program ──────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub source_file: String,
    pub target: TargetConfig,
}

/// A complete lowered program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskProgram {
    pub codelets: Vec<Codelet>,
    pub main_ops: Vec<MainOp>,
    pub metadata: Metadata,
}

impl TaskProgram {
    pub fn codelet(&self, name: &str) -> Option<&Codelet> {
        self.codelets.iter().find(|c| c.name == name)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("artifact serialization");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<TaskProgram, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn save(&self, path: &std::path::Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_json())
    }

    pub fn load(path: &std::path::Path) -> std::io::Result<TaskProgram> {
        let text = std::fs::read_to_string(path)?;
        TaskProgram::from_json(&text)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}
