//! Scheduling policies: eager FIFO dispatch and a list scheduler prioritizing
//! tasks by upward rank and placing each on the worker with the earliest
//! estimated finish time.
//!
//! The upward rank of a task is its average execution cost over compatible
//! workers plus the maximum, over its successors, of the average transfer
//! cost of the data flowing along the edge plus the successor's rank.

use crate::lowering::artifact::TaskProgram;
use crate::runtime::TaskInstance;
use crate::sim::machine::{MachineDescription, PerfModel};

/// Which scheduling policy drives worker choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Policy {
    Eager,
    Heft,
}

impl Policy {
    pub fn from_str(s: &str) -> Option<Policy> {
        match s {
            "eager" => Some(Policy::Eager),
            "heft" => Some(Policy::Heft),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Policy::Eager => "eager",
            Policy::Heft => "heft",
        }
    }
}

/// Mean execution cost of a task over all compatible workers.
pub fn avg_exec_cost(
    task: &TaskInstance,
    program: &TaskProgram,
    machine: &MachineDescription,
    perf: &PerfModel,
) -> f64 {
    let codelet = program.codelet(&task.codelet).expect("codelet exists");
    let workers = machine.compatible_workers(codelet);
    assert!(!workers.is_empty(), "validated: every codelet has a compatible worker");
    let total: f64 = workers
        .iter()
        .map(|w| perf.exec_cost(&codelet.name, w, task.total_bytes()))
        .sum();
    total / workers.len() as f64
}

/// Mean cost of moving the data a dependency edge carries: for every handle
/// the predecessor writes and the successor uses, the transfer time averaged
/// over all compatible worker placements of the two tasks (zero when both
/// land on the same memory node).
pub fn avg_transfer_cost(
    pred: &TaskInstance,
    succ: &TaskInstance,
    program: &TaskProgram,
    machine: &MachineDescription,
) -> f64 {
    let pc = program.codelet(&pred.codelet).expect("codelet exists");
    let sc = program.codelet(&succ.codelet).expect("codelet exists");
    let pw = machine.compatible_workers(pc);
    let sw = machine.compatible_workers(sc);
    let mut total = 0.0;
    for (i, (h, _)) in pred.buffers.iter().enumerate() {
        if !pred.writes(*h) || !succ.uses(*h) {
            continue;
        }
        let bytes = pred.buffer_bytes[i];
        let mut sum = 0.0;
        for a in &pw {
            for b in &sw {
                sum += machine.transfer_seconds(a.memory_node, b.memory_node, bytes);
            }
        }
        total += sum / (pw.len() * sw.len()) as f64;
    }
    total
}

/// Upward ranks for every submitted task. Successors always have higher ids
/// (dependencies only point at earlier submissions), so one reverse pass
/// suffices.
pub fn upward_rank(
    tasks: &[TaskInstance],
    program: &TaskProgram,
    machine: &MachineDescription,
    perf: &PerfModel,
) -> Vec<f64> {
    let mut rank = vec![0.0; tasks.len()];
    for t in (0..tasks.len()).rev() {
        let own = avg_exec_cost(&tasks[t], program, machine, perf);
        let mut best_succ = 0.0;
        for s in t + 1..tasks.len() {
            if tasks[s].deps.contains(&t) {
                let via = avg_transfer_cost(&tasks[t], &tasks[s], program, machine) + rank[s];
                if via > best_succ {
                    best_succ = via;
                }
            }
        }
        rank[t] = own + best_succ;
    }
    rank
}
