//! Simulated host memory: a bump allocator handing out fake addresses backed
//! by real byte vectors.
//!
//! Every main-procedure variable and every `malloc` call owns one allocation.
//! Addresses are stable for a whole run, so they double as identities for the
//! data registry.

use std::collections::BTreeMap;

use crate::lowering::ir::ScalarTy;

/// One live or freed allocation in the simulated host address space.
#[derive(Debug, Clone)]
pub struct Allocation {
    pub base: u64,
    pub bytes: Vec<u8>,
    pub elem: ScalarTy,
    pub elem_size: u32,
    pub count: u64,
    pub pinned: bool,
    pub live: bool,
}

impl Allocation {
    pub fn len(&self) -> u64 {
        self.bytes.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    pub fn end(&self) -> u64 {
        self.base + self.len()
    }
}

/// The simulated host heap. Freed allocations keep their address range
/// reserved (never reused), which makes use-after-free detectable.
#[derive(Debug, Default)]
pub struct HostHeap {
    allocs: BTreeMap<u64, Allocation>,
    next: u64,
    live_count: usize,
}

/// First simulated address handed out; nonzero so that 0 reads as "null".
const HEAP_BASE: u64 = 0x1000;

impl HostHeap {
    pub fn new() -> HostHeap {
        HostHeap { allocs: BTreeMap::new(), next: HEAP_BASE, live_count: 0 }
    }

    /// Allocate `count` zero-filled elements; returns the simulated address.
    pub fn alloc(&mut self, count: u64, elem_size: u32, elem: ScalarTy, pinned: bool) -> u64 {
        let size = count * elem_size as u64;
        let base = self.next;
        // Keep allocations 16-byte aligned and non-adjacent so distinct
        // allocations never share a boundary address.
        self.next += (size.max(1) + 31) & !15;
        self.allocs.insert(
            base,
            Allocation {
                base,
                bytes: vec![0; size as usize],
                elem,
                elem_size,
                count,
                pinned,
                live: true,
            },
        );
        self.live_count += 1;
        base
    }

    /// Free the allocation at exactly `base`.
    pub fn free(&mut self, base: u64) -> Result<(), FreeError> {
        match self.allocs.get_mut(&base) {
            Some(a) if a.live => {
                a.live = false;
                a.bytes.clear();
                self.live_count -= 1;
                Ok(())
            }
            Some(_) => Err(FreeError::AlreadyFreed),
            None => Err(FreeError::UnknownAddress),
        }
    }

    /// The allocation whose base is exactly `base`, live or freed.
    pub fn get(&self, base: u64) -> Option<&Allocation> {
        self.allocs.get(&base)
    }

    pub fn get_mut(&mut self, base: u64) -> Option<&mut Allocation> {
        self.allocs.get_mut(&base)
    }

    /// The live allocation at exactly `base`.
    pub fn live(&self, base: u64) -> Option<&Allocation> {
        self.allocs.get(&base).filter(|a| a.live)
    }

    pub fn live_count(&self) -> usize {
        self.live_count
    }

    /// Move an allocation's bytes out for in-place mutation (see
    /// [`HostHeap::put_bytes`]). Panics if the allocation is unknown or dead.
    pub fn take_bytes(&mut self, base: u64) -> Vec<u8> {
        let a = self.allocs.get_mut(&base).expect("take_bytes: unknown allocation");
        assert!(a.live, "take_bytes: allocation is dead");
        std::mem::take(&mut a.bytes)
    }

    pub fn put_bytes(&mut self, base: u64, bytes: Vec<u8>) {
        let a = self.allocs.get_mut(&base).expect("put_bytes: unknown allocation");
        a.bytes = bytes;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FreeError {
    UnknownAddress,
    AlreadyFreed,
}
