//! Machine and performance-model descriptions: the simulated hardware a
//! program runs on and the per-architecture cost functions.
//!
//! Both are plain JSON documents. A machine lists workers plus node-to-node
//! bandwidth and latency matrices; a performance model maps `"codelet/arch"`
//! to an affine cost in the total bytes of a task's buffer arguments.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::lowering::artifact::{Arch, TaskProgram};
use crate::runtime::NodeId;

/// One simulated worker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Worker {
    pub id: u32,
    pub arch: Arch,
    pub memory_node: NodeId,
    pub speed_factor: f64,
}

/// The simulated machine: workers plus transfer cost matrices indexed by
/// memory node. Node 0 is host memory; each accelerator worker owns one
/// device node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineDescription {
    pub workers: Vec<Worker>,
    /// bytes/second between nodes; the diagonal is unused (intra-node moves
    /// are free) and written as 0.
    pub bandwidth: Vec<Vec<f64>>,
    /// seconds of fixed cost between nodes; zero diagonal.
    pub latency: Vec<Vec<f64>>,
}

impl MachineDescription {
    /// The default machine: one CPU worker at speed 1.0, host memory only.
    pub fn single_cpu() -> MachineDescription {
        MachineDescription {
            workers: vec![Worker {
                id: 0,
                arch: Arch::Cpu,
                memory_node: 0,
                speed_factor: 1.0,
            }],
            bandwidth: vec![vec![0.0]],
            latency: vec![vec![0.0]],
        }
    }

    pub fn n_nodes(&self) -> u32 {
        self.bandwidth.len() as u32
    }

    pub fn load(path: &Path) -> Result<MachineDescription, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read machine file '{}': {e}", path.display())))?;
        let m: MachineDescription = serde_json::from_str(&text)
            .map_err(|e| ConfigError(format!("malformed machine file '{}': {e}", path.display())))?;
        m.validate()?;
        Ok(m)
    }

    /// Structural checks: contiguous worker ids, one host node shared by CPU
    /// workers, one distinct device node per accelerator worker, symmetric
    /// matrices with zero diagonal latency.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.workers.is_empty() {
            return Err(ConfigError("machine has no workers".into()));
        }
        for (i, w) in self.workers.iter().enumerate() {
            if w.id as usize != i {
                return Err(ConfigError(format!(
                    "worker ids must be 0..{} in order; found id {} at position {i}",
                    self.workers.len() - 1,
                    w.id
                )));
            }
            if !(w.speed_factor > 0.0) {
                return Err(ConfigError(format!(
                    "worker {} has non-positive speed_factor {}",
                    w.id, w.speed_factor
                )));
            }
            match w.arch {
                Arch::Cpu if w.memory_node != 0 => {
                    return Err(ConfigError(format!(
                        "cpu worker {} must use host memory node 0",
                        w.id
                    )));
                }
                Arch::Opencl | Arch::Cuda if w.memory_node == 0 => {
                    return Err(ConfigError(format!(
                        "device worker {} must own a device memory node (>= 1)",
                        w.id
                    )));
                }
                _ => {}
            }
        }
        let mut device_nodes: Vec<NodeId> = self
            .workers
            .iter()
            .filter(|w| w.arch != Arch::Cpu)
            .map(|w| w.memory_node)
            .collect();
        device_nodes.sort_unstable();
        let expected: Vec<NodeId> = (1..=device_nodes.len() as NodeId).collect();
        if device_nodes != expected {
            return Err(ConfigError(
                "device memory nodes must be distinct and numbered 1..=device count".into(),
            ));
        }
        let n = 1 + device_nodes.len();
        for (name, m) in [("bandwidth", &self.bandwidth), ("latency", &self.latency)] {
            if m.len() != n || m.iter().any(|row| row.len() != n) {
                return Err(ConfigError(format!(
                    "{name} matrix must be {n}x{n} (one row/column per memory node)"
                )));
            }
            for i in 0..n {
                for j in 0..n {
                    if m[i][j] != m[j][i] {
                        return Err(ConfigError(format!("{name} matrix must be symmetric")));
                    }
                    if m[i][j] < 0.0 || !m[i][j].is_finite() {
                        return Err(ConfigError(format!(
                            "{name} matrix entries must be finite and non-negative"
                        )));
                    }
                }
            }
        }
        for i in 0..n {
            if self.latency[i][i] != 0.0 {
                return Err(ConfigError("latency diagonal must be zero".into()));
            }
            for j in 0..n {
                if i != j && self.bandwidth[i][j] <= 0.0 {
                    return Err(ConfigError(
                        "bandwidth between distinct nodes must be positive".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Seconds to move `bytes` between nodes; zero within a node.
    pub fn transfer_seconds(&self, from: NodeId, to: NodeId, bytes: u64) -> f64 {
        if from == to {
            return 0.0;
        }
        let (f, t) = (from as usize, to as usize);
        self.latency[f][t] + bytes as f64 / self.bandwidth[f][t]
    }

    /// Workers whose architecture can execute the codelet, in id order.
    pub fn compatible_workers<'a>(
        &'a self,
        codelet: &crate::lowering::artifact::Codelet,
    ) -> Vec<&'a Worker> {
        self.workers.iter().filter(|w| codelet.has_arch(w.arch)).collect()
    }
}

/// Affine execution cost of one (codelet, arch) pair, before the worker's
/// speed factor is applied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostEntry {
    pub base_seconds: f64,
    pub seconds_per_byte: f64,
}

/// Performance model: `"codelet/arch"` → cost entry. An entry must exist for
/// exactly the (codelet, arch) pairs that have an implementation.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PerfModel {
    pub entries: BTreeMap<String, CostEntry>,
}

impl PerfModel {
    /// The default model: every implemented (codelet, arch) pair costs a flat
    /// 1 second before speed factors.
    pub fn default_for(program: &TaskProgram) -> PerfModel {
        let mut entries = BTreeMap::new();
        for c in &program.codelets {
            for i in &c.impls {
                entries.insert(
                    format!("{}/{}", c.name, i.target),
                    CostEntry { base_seconds: 1.0, seconds_per_byte: 0.0 },
                );
            }
        }
        PerfModel { entries }
    }

    pub fn load(path: &Path) -> Result<PerfModel, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read perf file '{}': {e}", path.display())))?;
        let p: PerfModel = serde_json::from_str(&text)
            .map_err(|e| ConfigError(format!("malformed perf file '{}': {e}", path.display())))?;
        for (key, e) in &p.entries {
            if !(e.base_seconds > 0.0) || e.seconds_per_byte < 0.0 {
                return Err(ConfigError(format!(
                    "perf entry '{key}' must have positive base_seconds and non-negative seconds_per_byte"
                )));
            }
        }
        Ok(p)
    }

    /// Check the entries cover exactly the implemented (codelet, arch) pairs.
    pub fn validate_against(&self, program: &TaskProgram) -> Result<(), ConfigError> {
        let mut expected = BTreeMap::new();
        for c in &program.codelets {
            for i in &c.impls {
                expected.insert(format!("{}/{}", c.name, i.target), ());
            }
        }
        for key in self.entries.keys() {
            if !expected.contains_key(key) {
                return Err(ConfigError(format!(
                    "perf entry '{key}' has no matching implementation"
                )));
            }
        }
        for key in expected.keys() {
            if !self.entries.contains_key(key) {
                return Err(ConfigError(format!(
                    "missing perf entry '{key}' for an existing implementation"
                )));
            }
        }
        Ok(())
    }

    pub fn entry(&self, codelet: &str, arch: Arch) -> Option<&CostEntry> {
        self.entries.get(&format!("{codelet}/{arch}"))
    }

    /// Execution cost of a task on a worker: (base + per_byte × bytes) /
    /// speed_factor.
    pub fn exec_cost(&self, codelet: &str, worker: &Worker, buffer_bytes: u64) -> f64 {
        let e = self
            .entry(codelet, worker.arch)
            .expect("validated: entry exists for every implemented arch");
        (e.base_seconds + e.seconds_per_byte * buffer_bytes as f64) / worker.speed_factor
    }
}

/// A configuration problem: bad machine/perf files or an unrunnable
/// program/machine combination. Maps to the usage-error exit code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}
