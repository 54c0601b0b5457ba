//! MINISA: a compact virtual-neuron ISA for a reconfigurable GEMM accelerator,
//! together with the compiler and simulator that drive it.
//!
//! The crate is organized around the toolchain stages:
//!
//! * [`arch`] — validated accelerator configurations and derived buffer geometry
//! * [`isa`] — the eight instructions, bit-accurate encode/decode, trace containers
//! * [`layout`] — VN-granular buffer address generation for the `Set*VNLayout` family
//! * [`mapping`] — `ExecuteMapping` / `ExecuteStreaming` semantics and legality checks
//! * [`simulator`] — functional execution plus the five-engine latency model
//! * [`microbaseline`] — cost model of per-cycle micro-instruction control
//! * [`mapper`] — mapping-layout co-search emitting minimum-latency traces
//! * [`workloads`] — benchmark suite, CSV ingestion, im2col lowering

pub mod arch;
pub mod isa;
pub mod layout;
pub mod mapper;
pub mod mapping;
pub mod microbaseline;
pub mod report;
pub mod simulator;
pub mod tensor;
pub mod trace_io;
pub mod workloads;

pub use arch::{ArchConfig, BufferGeometry, BufferKind};
pub use isa::{Dataflow, Instruction, LayoutSpec, MappingEm, MappingEs, Operand, Trace};
pub use mapper::{Candidate, Solution};
pub use simulator::{SimMode, SimReport};
pub use tensor::{Mat, TensorStore};
pub use workloads::Workload;

/// `ceil(log2(x))` for `x >= 1`; the bit width needed to address `x` values.
pub(crate) fn clog2(x: u64) -> u32 {
    debug_assert!(x >= 1);
    if x <= 1 {
        0
    } else {
        64 - (x - 1).leading_zeros()
    }
}

pub(crate) fn ceil_div(a: usize, b: usize) -> usize {
    debug_assert!(b > 0);
    (a + b - 1) / b
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clog2_edges() {
        assert_eq!(clog2(1), 0);
        assert_eq!(clog2(2), 1);
        assert_eq!(clog2(3), 2);
        assert_eq!(clog2(6), 3);
        assert_eq!(clog2(64), 6);
        assert_eq!(clog2(65), 7);
    }
}
