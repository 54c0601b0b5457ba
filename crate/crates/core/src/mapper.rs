//! Mapping-layout co-search: enumerate the mapping knob grid, resolve
//! conflict-free layouts per candidate, estimate latency by simulating the
//! generated trace, and return the arg-min with a deterministic tie-break.
//!
//! The search is mapping-first, layout-second: tile shape, column-pattern
//! count, duplication, and strides span the candidate grid; rank orders and
//! level-0 factors are resolved per candidate by the legality checks. With
//! pruning enabled, candidates are evaluated in ascending order of an
//! admissible latency lower bound and evaluation stops once the bound
//! exceeds the best simulated latency, which cannot change the returned
//! result.

use crate::arch::{ArchConfig, BufferKind};
use crate::ceil_div;
use crate::isa::{
    self, ActDesc, ActFunc, Dataflow, Instruction, LayoutSpec, MappingEm, MappingEs, Operand,
    TensorRef, Trace, TransferDesc,
};
use crate::layout::check_layout;
use crate::mapping::{
    check_output_legality, check_stream_read_legality, OutputReject, StationaryAssignment,
    StreamReject, StreamSchedule,
};
use crate::simulator::{Machine, SimError, SimMode, SimReport};
use crate::tensor::TensorStore;
use crate::trace_io::TensorTable;
use crate::workloads::Workload;
use rayon::prelude::*;
use std::error::Error;
use std::fmt;

/// Shared verification budget for the conflict checks; patterns whose exact
/// period exceeds it are rejected as unverifiable by every caller alike.
pub const LEGALITY_WORK_CAP: usize = 1 << 18;

/// Inter-column stride pattern of the stationary operand's non-reduction
/// index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum WStride {
    /// `s_r = 1, s_c = AH`: each column pattern holds a consecutive block.
    Block,
    /// `s_r = n_col, s_c = 1`: patterns interleave at stride `n_col`.
    Strided,
}

/// Temporal stride of the streamed rows across duplicated columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum IStride {
    /// `s_m = n_rep`: replicas cover interleaved rows.
    Interleaved,
    /// `s_m = 1`: contiguous rows; only sound without duplication.
    Consecutive,
}

/// One point of the search space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Candidate {
    pub df: Dataflow,
    /// Tile shape in search coordinates (IO-S searches the transposed GEMM).
    pub m_t: usize,
    pub k_t: usize,
    pub n_t: usize,
    pub vn_size: usize,
    /// Resolved rank orders per operand.
    pub o_w: u8,
    pub o_i: u8,
    pub o_o: u8,
    /// Resolved level-0 non-reduction factors per operand.
    pub f0_w: usize,
    pub f0_i: usize,
    pub f0_o: usize,
    /// Distinct column patterns per invocation.
    pub n_col: usize,
    /// Duplication factor (columns replicating one pattern).
    pub dup: usize,
    pub w_stride: WStride,
    pub i_stride: IStride,
}

impl Candidate {
    /// Deterministic tie-break key: dataflow, tile, orders, grouping, strides.
    pub fn key(&self) -> (u8, usize, usize, usize, u8, u8, u8, usize, usize, u8, u8) {
        (
            matches!(self.df, Dataflow::IoS) as u8,
            self.m_t,
            self.k_t,
            self.n_t,
            self.o_w,
            self.o_i,
            self.o_o,
            self.n_col,
            self.dup,
            matches!(self.w_stride, WStride::Strided) as u8,
            matches!(self.i_stride, IStride::Consecutive) as u8,
        )
    }

    pub fn g_r(&self) -> usize {
        self.n_col * self.dup
    }

    pub fn g_c(&self) -> usize {
        self.n_col
    }

    pub fn strides(&self, ah: usize) -> (usize, usize) {
        match self.w_stride {
            WStride::Block => (1, ah),
            WStride::Strided => (self.n_col, 1),
        }
    }

    pub fn s_m(&self) -> usize {
        match self.i_stride {
            IStride::Interleaved => self.dup,
            IStride::Consecutive => 1,
        }
    }
}

/// Why a candidate was rejected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Infeasible {
    Knob(String),
    Capacity(BufferKind),
    Encoding(String),
    /// Streamed-row coverage would double-count output rows.
    Coverage,
    NoStreamLayout(StreamReject),
    NoOutputLayout(OutputReject),
}

impl fmt::Display for Infeasible {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Infeasible::Knob(msg) => write!(f, "knob: {}", msg),
            Infeasible::Capacity(b) => write!(f, "capacity: {} buffer", b),
            Infeasible::Encoding(msg) => write!(f, "encoding: {}", msg),
            Infeasible::Coverage => write!(f, "stream coverage double-counts rows"),
            Infeasible::NoStreamLayout(r) => write!(f, "no conflict-free streaming layout: {}", r),
            Infeasible::NoOutputLayout(r) => write!(f, "no conflict-free output layout: {}", r),
        }
    }
}

#[derive(Debug)]
pub enum MapperError {
    NoFeasibleCandidate,
    NoFeasibleChain,
    ShapeMismatch { layer: usize, expected: (usize, usize), got: (usize, usize) },
    Sim(SimError),
}

impl fmt::Display for MapperError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MapperError::NoFeasibleCandidate => write!(f, "no feasible mapping-layout candidate"),
            MapperError::NoFeasibleChain => write!(f, "no feasible cross-layer combination"),
            MapperError::ShapeMismatch { layer, expected, got } => write!(
                f,
                "layer {} shape ({}, {}) does not chain from ({}, {})",
                layer, got.0, got.1, expected.0, expected.1
            ),
            MapperError::Sim(e) => write!(f, "simulation failed: {}", e),
        }
    }
}

impl Error for MapperError {}

impl From<SimError> for MapperError {
    fn from(e: SimError) -> Self {
        MapperError::Sim(e)
    }
}

/// Count of VN groups in a tile: one per (streamed row, reduction tile,
/// stationary column tile).
pub fn count_vn_groups(m_t: usize, k_t: usize, n_t: usize, cfg: &ArchConfig) -> u64 {
    m_t as u64 * ceil_div(k_t, cfg.ah) as u64 * ceil_div(n_t, cfg.ah) as u64
}

/// Combined VN groups: VN groups sharing one stationary set.
pub fn count_combined_groups(k_t: usize, n_t: usize, cfg: &ArchConfig) -> u64 {
    ceil_div(k_t, cfg.ah) as u64 * ceil_div(n_t, cfg.ah) as u64
}

/// The fully resolved execution plan of one candidate on one workload.
#[derive(Debug, Clone)]
pub struct Plan {
    pub cand: Candidate,
    /// Search-space problem dims: (M, K, N) under WO-S, (N, K, M) under IO-S.
    pub m_s: usize,
    pub k_s: usize,
    pub n_s: usize,
    pub stream_layout: LayoutSpec,
    pub stat_layout: LayoutSpec,
    pub out_layout: LayoutSpec,
}

impl Plan {
    pub fn j_tiles(&self) -> usize {
        ceil_div(self.cand.k_t, self.cand.vn_size)
    }

    pub fn j_span(&self, cfg: &ArchConfig) -> usize {
        cfg.aw / self.cand.g_r()
    }

    pub fn c_blocks(&self, cfg: &ArchConfig) -> usize {
        ceil_div(self.cand.n_t, cfg.ah)
    }
}

/// Search-space dims for a dataflow choice.
fn search_dims(w: &Workload, df: Dataflow) -> (usize, usize, usize) {
    match df {
        Dataflow::WoS => (w.m, w.k, w.n),
        Dataflow::IoS => (w.n, w.k, w.m),
    }
}

fn pow2s_upto(limit: usize) -> Vec<usize> {
    let mut v = Vec::new();
    let mut x = 1;
    while x <= limit {
        v.push(x);
        x *= 2;
    }
    v
}

/// Tile grid along one axis: base times powers of two, capped by the full
/// extent which is always included.
fn tile_grid(base: usize, extent: usize) -> Vec<usize> {
    let mut v = Vec::new();
    let mut x = base;
    while x < extent {
        v.push(x);
        x *= 2;
    }
    v.push(extent);
    v
}

/// Representative first-invocation mapping of a plan.
fn representative(plan: &Plan, cfg: &ArchConfig, r0: usize, c0: usize, t: usize) -> (MappingEm, MappingEs) {
    let (s_r, s_c) = plan.cand.strides(cfg.ah);
    (
        MappingEm {
            r0,
            c0,
            g_r: plan.cand.g_r(),
            g_c: plan.cand.g_c(),
            s_r,
            s_c,
        },
        MappingEs {
            m0: 0,
            s_m: plan.cand.s_m(),
            t,
            vn_size: plan.cand.vn_size,
            df: plan.cand.df,
        },
    )
}

/// Buffer roles under the candidate's dataflow.
fn role_buffers(df: Dataflow) -> (Operand, Operand) {
    (df.streaming_operand(), df.stationary_operand())
}

struct LayoutSearch<'a> {
    cfg: &'a ArchConfig,
    cand: Candidate,
    j_tiles: usize,
    j_sweeps: usize,
    c_sweeps: usize,
    t_steps: usize,
}

impl<'a> LayoutSearch<'a> {
    /// Streaming-operand layout: smallest (order, f0) passing the read check
    /// at representative sweep bases.
    fn resolve_stream(&self, operand: Operand, buf: BufferKind, m_t: usize) -> Result<LayoutSpec, Infeasible> {
        let mut last_reject = StreamReject::RowSplit { t: 0, col_a: 0, col_b: 0 };
        for order_id in 0..6u8 {
            for &f0 in &self.f0_order(m_t) {
                let spec = LayoutSpec {
                    operand,
                    vn_size: self.cand.vn_size,
                    f_red_l1: self.j_tiles,
                    f_nr_l0: f0,
                    f_nr_l1: ceil_div(m_t, f0),
                    order_id,
                };
                match self.admit_stream(&spec, buf) {
                    Ok(()) => return Ok(spec),
                    Err(Infeasible::NoStreamLayout(rej)) => last_reject = rej,
                    Err(_) => {}
                }
            }
        }
        Err(Infeasible::NoStreamLayout(last_reject))
    }

    /// Validate one specific streaming layout (capacity, encoding, conflicts).
    fn admit_stream(&self, spec: &LayoutSpec, buf: BufferKind) -> Result<(), Infeasible> {
        check_layout(spec, self.cfg, buf).map_err(|_| Infeasible::Capacity(buf))?;
        self.encodable_layout(spec)?;
        for r0 in self.sample_bases(self.j_sweeps, self.cfg.aw / self.cand.g_r()) {
            let (em, es) = self.rep(r0, 0);
            let ss = StreamSchedule::new(&em, es, self.cfg.aw, spec.operand);
            check_stream_read_legality(&ss, spec, self.cfg.aw, LEGALITY_WORK_CAP)
                .map_err(Infeasible::NoStreamLayout)?;
        }
        Ok(())
    }

    /// Output layout: smallest (order, f0) with conflict-free bank writes at
    /// representative bases.
    fn resolve_output(&self, p_extent: usize, q_extent: usize, stat_op: Operand) -> Result<LayoutSpec, Infeasible> {
        let vn_o = self.cand.vn_size;
        let mut last_reject = OutputReject::BankConflict { t: 0, a_h: 0, bank: 0 };
        for order_id in 0..6u8 {
            for &f0 in &self.f0_order(p_extent) {
                let spec = LayoutSpec {
                    operand: Operand::O,
                    vn_size: vn_o,
                    f_red_l1: ceil_div(q_extent, vn_o),
                    f_nr_l0: f0,
                    f_nr_l1: ceil_div(p_extent, f0),
                    order_id,
                };
                match self.admit_output(&spec, stat_op) {
                    Ok(()) => return Ok(spec),
                    Err(Infeasible::NoOutputLayout(rej)) => last_reject = rej,
                    Err(_) => {}
                }
            }
        }
        Err(Infeasible::NoOutputLayout(last_reject))
    }

    fn admit_output(&self, spec: &LayoutSpec, stat_op: Operand) -> Result<(), Infeasible> {
        check_layout(spec, self.cfg, BufferKind::Output).map_err(|_| Infeasible::Capacity(BufferKind::Output))?;
        self.encodable_layout(spec)?;
        for r0 in self.sample_bases(self.j_sweeps, self.cfg.aw / self.cand.g_r()) {
            for c0 in self.sample_bases(self.c_sweeps, self.cand.n_col * self.cfg.ah) {
                let (em, es) = self.rep(r0, c0);
                let sa = StationaryAssignment::new(em, self.cfg.ah, self.cfg.aw, stat_op);
                let ss = StreamSchedule::new(&em, es, self.cfg.aw, self.cand.df.streaming_operand());
                check_output_legality(&sa, &ss, self.cand.df, spec, self.cfg.aw, LEGALITY_WORK_CAP)
                    .map_err(Infeasible::NoOutputLayout)?;
            }
        }
        Ok(())
    }

    /// Stationary layout: reads are never illegal; pick the (order, f0) with
    /// the smallest first-tile fill, then the smallest code.
    fn resolve_stationary(&self, operand: Operand, buf: BufferKind, n_t: usize) -> Result<LayoutSpec, Infeasible> {
        let mut best: Option<(u64, u8, usize, LayoutSpec)> = None;
        for order_id in 0..6u8 {
            for &f0 in &pow2s_upto(self.cfg.aw.min(n_t.next_power_of_two())) {
                let spec = LayoutSpec {
                    operand,
                    vn_size: self.cand.vn_size,
                    f_red_l1: self.j_tiles,
                    f_nr_l0: f0,
                    f_nr_l1: ceil_div(n_t, f0),
                    order_id,
                };
                if check_layout(&spec, self.cfg, buf).is_err() || self.encodable_layout(&spec).is_err() {
                    continue;
                }
                let (em, _) = self.rep(0, 0);
                let sa = StationaryAssignment::new(em, self.cfg.ah, self.cfg.aw, operand);
                let fill = fill_rows(&sa, &spec, self.cfg);
                let key = (fill, order_id, f0);
                if best.as_ref().map_or(true, |(f, o, l0, _)| key < (*f, *o, *l0)) {
                    best = Some((fill, order_id, f0, spec));
                }
            }
        }
        best.map(|(_, _, _, s)| s).ok_or(Infeasible::Capacity(buf))
    }

    fn rep(&self, r0: usize, c0: usize) -> (MappingEm, MappingEs) {
        let (s_r, s_c) = self.cand.strides(self.cfg.ah);
        (
            MappingEm { r0, c0, g_r: self.cand.g_r(), g_c: self.cand.g_c(), s_r, s_c },
            MappingEs {
                m0: 0,
                s_m: self.cand.s_m(),
                t: self.t_steps,
                vn_size: self.cand.vn_size,
                df: self.cand.df,
            },
        )
    }

    /// Level-0 factor candidates, cheapest-to-verify first: matching the
    /// temporal stride makes the access pattern affine in the step index.
    fn f0_order(&self, extent: usize) -> Vec<usize> {
        let limit = self.cfg.aw.min(extent.next_power_of_two());
        let preferred = self.cand.s_m();
        let mut v = Vec::new();
        if preferred <= limit {
            v.push(preferred);
        }
        for f0 in pow2s_upto(limit) {
            if f0 != preferred {
                v.push(f0);
            }
        }
        v
    }

    /// First, second, and last sweep bases; enough to exercise every distinct
    /// alignment of the power-of-two stepping.
    fn sample_bases(&self, sweeps: usize, step: usize) -> Vec<usize> {
        let mut v = vec![0];
        if sweeps > 1 {
            v.push(step);
        }
        if sweeps > 2 {
            v.push((sweeps - 1) * step);
        }
        v
    }

    fn encodable_layout(&self, spec: &LayoutSpec) -> Result<(), Infeasible> {
        let instr = match spec.operand {
            Operand::I => Instruction::SetIvnLayout(*spec),
            Operand::W => Instruction::SetWvnLayout(*spec),
            Operand::O => Instruction::SetOvnLayout(*spec),
        };
        isa::encode(&instr, self.cfg)
            .map(|_| ())
            .map_err(|e| Infeasible::Encoding(e.to_string()))
    }
}

/// Distinct stationary physical rows a mapping touches under a layout.
fn fill_rows(sa: &StationaryAssignment, spec: &LayoutSpec, cfg: &ArchConfig) -> u64 {
    let mut slots: Vec<usize> = Vec::with_capacity(cfg.ah * cfg.aw);
    let mut seen_pattern: Vec<(usize, usize)> = Vec::new();
    for a_w in 0..cfg.aw {
        let r = sa.row_index(a_w);
        if r >= spec.f_red_l1 {
            continue;
        }
        // replicated columns touch identical slots
        let pattern = (r, a_w % sa.em.g_c.max(1));
        if seen_pattern.contains(&pattern) {
            continue;
        }
        seen_pattern.push(pattern);
        for a_h in 0..cfg.ah {
            let c = sa.col_index(a_h, a_w);
            if c >= spec.nr_extent() {
                continue;
            }
            let coord = crate::layout::VnCoord { operand: spec.operand, r, c };
            if let Ok(linear) = crate::layout::flatten_vn(&coord, spec) {
                slots.push(linear / cfg.aw);
            }
        }
    }
    slots.sort_unstable();
    slots.dedup();
    slots.len() as u64 * spec.vn_size as u64
}

/// Validate knob invariants and resolve layouts; the spec-level feasibility
/// verdict.
pub fn feasible(cand: &Candidate, workload: &Workload, cfg: &ArchConfig) -> Result<Plan, Infeasible> {
    feasible_constrained(cand, workload, cfg, &SearchConstraint::default())
}

/// Fixed input/output layouts for constrained searches: the input layout of
/// a chained layer is inherited, and `search --layout-constrained` pins both.
#[derive(Debug, Clone, Copy, Default)]
pub struct SearchConstraint {
    pub ivn_layout: Option<LayoutSpec>,
    pub ovn_layout: Option<LayoutSpec>,
}

pub fn feasible_constrained(
    cand: &Candidate,
    workload: &Workload,
    cfg: &ArchConfig,
    constraint: &SearchConstraint,
) -> Result<Plan, Infeasible> {
    let (m_s, k_s, n_s) = search_dims(workload, cand.df);
    if cand.n_col * cand.dup > cfg.aw {
        return Err(Infeasible::Knob(format!(
            "n_col {} x dup {} exceeds {} columns",
            cand.n_col, cand.dup, cfg.aw
        )));
    }
    if !cand.n_col.is_power_of_two() || !cand.dup.is_power_of_two() {
        return Err(Infeasible::Knob("column grouping must be a power of two".to_string()));
    }
    if cand.vn_size == 0 || cand.vn_size > cfg.ah {
        return Err(Infeasible::Knob(format!("vn_size {} outside 1..={}", cand.vn_size, cfg.ah)));
    }
    // contiguous streaming with duplication double-counts rows
    if matches!(cand.i_stride, IStride::Consecutive) && cand.dup > 1 {
        return Err(Infeasible::Coverage);
    }
    let geom = cfg.geometry();
    let j_tiles = ceil_div(cand.k_t, cand.vn_size);
    let (stream_op, stat_op) = role_buffers(cand.df);
    // capacity of the three resident partitions
    if j_tiles * cand.m_t > geom.vn_slots(BufferKind::Streaming, cand.vn_size) {
        return Err(Infeasible::Capacity(BufferKind::Streaming));
    }
    if j_tiles * cand.n_t > geom.vn_slots(BufferKind::Stationary, cand.vn_size) {
        return Err(Infeasible::Capacity(BufferKind::Stationary));
    }
    let (p_extent, q_extent) = match cand.df {
        Dataflow::WoS => (cand.m_t, cand.n_t),
        Dataflow::IoS => (cand.n_t, cand.m_t),
    };
    if ceil_div(q_extent, cand.vn_size) * p_extent > geom.vn_slots(BufferKind::Output, cand.vn_size) {
        return Err(Infeasible::Capacity(BufferKind::Output));
    }

    let g_r = cand.g_r();
    let j_span = cfg.aw / g_r;
    let j_sweeps = ceil_div(j_tiles, j_span);
    let c_sweeps = ceil_div(ceil_div(cand.n_t, cfg.ah), cand.n_col);
    let t_steps = ceil_div(cand.m_t.min(m_s), cand.dup);
    let searcher = LayoutSearch { cfg, cand: *cand, j_tiles, j_sweeps, c_sweeps, t_steps };

    let (stream_buf, stat_buf) = (BufferKind::Streaming, BufferKind::Stationary);
    let i_fixed = constraint.ivn_layout.filter(|l| l.operand == Operand::I);
    let stream_layout = match (stream_op, i_fixed) {
        (Operand::I, Some(fixed)) => {
            if fixed.vn_size != cand.vn_size || fixed.f_red_l1 != j_tiles || fixed.nr_extent() < cand.m_t {
                return Err(Infeasible::Knob("fixed input layout does not cover the tile".to_string()));
            }
            searcher.admit_stream(&fixed, stream_buf)?;
            fixed
        }
        _ => searcher.resolve_stream(stream_op, stream_buf, cand.m_t)?,
    };
    let stat_layout = match (stat_op, i_fixed) {
        (Operand::I, Some(fixed)) => {
            if fixed.vn_size != cand.vn_size || fixed.f_red_l1 != j_tiles || fixed.nr_extent() < cand.n_t {
                return Err(Infeasible::Knob("fixed input layout does not cover the tile".to_string()));
            }
            check_layout(&fixed, cfg, stat_buf).map_err(|_| Infeasible::Capacity(stat_buf))?;
            fixed
        }
        _ => searcher.resolve_stationary(stat_op, stat_buf, cand.n_t)?,
    };
    let out_layout = match constraint.ovn_layout {
        Some(fixed) => {
            if fixed.vn_size != cand.vn_size
                || fixed.f_red_l1 != ceil_div(q_extent, cand.vn_size)
                || fixed.nr_extent() < p_extent
            {
                return Err(Infeasible::Knob("fixed output layout does not cover the tile".to_string()));
            }
            searcher.admit_output(&fixed, stat_op)?;
            fixed
        }
        None => searcher.resolve_output(p_extent, q_extent, stat_op)?,
    };

    let plan = Plan {
        cand: Candidate {
            o_w: if stat_op == Operand::W { stat_layout.order_id } else { stream_layout.order_id },
            o_i: if stream_op == Operand::I { stream_layout.order_id } else { stat_layout.order_id },
            o_o: out_layout.order_id,
            f0_w: if stat_op == Operand::W { stat_layout.f_nr_l0 } else { stream_layout.f_nr_l0 },
            f0_i: if stream_op == Operand::I { stream_layout.f_nr_l0 } else { stat_layout.f_nr_l0 },
            f0_o: out_layout.f_nr_l0,
            ..*cand
        },
        m_s,
        k_s,
        n_s,
        stream_layout,
        stat_layout,
        out_layout,
    };
    // representative extreme instructions must encode
    let max_r0 = (j_sweeps - 1) * j_span;
    let max_c0 = (c_sweeps - 1) * cand.n_col * cfg.ah;
    let (em, es) = representative(&plan, cfg, max_r0, max_c0, t_steps.max(1));
    isa::encode(&Instruction::ExecuteMapping(em), cfg)
        .map_err(|e| Infeasible::Encoding(e.to_string()))?;
    isa::encode(&Instruction::ExecuteStreaming(es), cfg)
        .map_err(|e| Infeasible::Encoding(e.to_string()))?;
    Ok(plan)
}

/// Tensor-store ids used by generated single-layer traces.
pub const TENSOR_I: u16 = 0;
pub const TENSOR_W: u16 = 1;
pub const TENSOR_O: u16 = 2;

/// Chunk walk shared by emission and the latency bound.
struct Walk {
    m_regions: Vec<(usize, usize)>,
    n_regions: Vec<(usize, usize)>,
    k_chunks: Vec<(usize, usize)>,
}

fn axis_chunks(extent: usize, tile: usize) -> Vec<(usize, usize)> {
    let mut v = Vec::new();
    let mut base = 0;
    while base < extent {
        let real = tile.min(extent - base);
        v.push((base, real));
        base += tile;
    }
    v
}

fn walk(plan: &Plan) -> Walk {
    Walk {
        m_regions: axis_chunks(plan.m_s, plan.cand.m_t),
        n_regions: axis_chunks(plan.n_s, plan.cand.n_t),
        k_chunks: axis_chunks(plan.k_s, plan.cand.k_t),
    }
}

/// Per-layer context for multi-layer traces.
#[derive(Debug, Clone, Copy)]
pub struct LayerIo {
    /// Emit SetIVNLayout and Load the streamed input from off-chip.
    pub load_input: bool,
    /// Commit the finished output on-chip for the next layer instead of
    /// writing it off-chip, applying this activation.
    pub commit: Option<(ActFunc, BufferKind)>,
    pub input_id: u16,
    pub weight_id: u16,
    pub output_id: u16,
}

impl Default for LayerIo {
    fn default() -> Self {
        LayerIo {
            load_input: true,
            commit: None,
            input_id: TENSOR_I,
            weight_id: TENSOR_W,
            output_id: TENSOR_O,
        }
    }
}

/// Emit the instruction stream of a plan into a sink.
pub fn emit_program(
    plan: &Plan,
    cfg: &ArchConfig,
    io: &LayerIo,
    mut sink: impl FnMut(Instruction) -> Result<(), SimError>,
) -> Result<(), SimError> {
    let cand = &plan.cand;
    let (stream_op, stat_op) = role_buffers(cand.df);
    let w = walk(plan);
    let j_span = plan.j_span(cfg);
    let stream_rows = rows_needed(&plan.stream_layout, cfg);
    let stat_rows = rows_needed(&plan.stat_layout, cfg);
    let (s_r, s_c) = cand.strides(cfg.ah);

    // The input operand's layout is inherited when the previous layer
    // committed it on-chip; weight layouts are always set.
    match stream_op {
        Operand::I if io.load_input => sink(Instruction::SetIvnLayout(plan.stream_layout))?,
        Operand::I => {}
        _ => sink(Instruction::SetWvnLayout(plan.stream_layout))?,
    }
    match stat_op {
        Operand::W => sink(Instruction::SetWvnLayout(plan.stat_layout))?,
        _ if io.load_input => sink(Instruction::SetIvnLayout(plan.stat_layout))?,
        _ => {}
    }

    let mut loaded_stream_chunk: Option<(usize, usize)> = None;
    for &(m_base, m_real) in &w.m_regions {
        for &(n_base, n_real) in &w.n_regions {
            for (ki, &(k_base, k_real)) in w.k_chunks.iter().enumerate() {
                // streamed chunk: reload when the (m, k) window moved; a
                // committed input is already resident
                let stream_offchip = stream_op == Operand::W || io.load_input;
                if stream_offchip && loaded_stream_chunk != Some((m_base, k_base)) {
                    let (row0, col0) = match stream_op {
                        Operand::I => (m_base, k_base), // I is M x K
                        _ => (k_base, m_base),          // W is K x N
                    };
                    sink(Instruction::Load(TransferDesc {
                        buffer: BufferKind::Streaming,
                        tensor: TensorRef {
                            kind: stream_op,
                            id: if stream_op == Operand::I { io.input_id } else { io.weight_id },
                            row0,
                            col0,
                        },
                        row_start: 0,
                        row_count: stream_rows,
                    }))?;
                    loaded_stream_chunk = Some((m_base, k_base));
                }
                // stationary chunk
                if stat_op == Operand::W || io.load_input {
                    let (row0, col0) = match stat_op {
                        Operand::W => (k_base, n_base), // W is K x N
                        _ => (n_base, k_base),          // I is M x K, stationary under IO-S
                    };
                    sink(Instruction::Load(TransferDesc {
                        buffer: BufferKind::Stationary,
                        tensor: TensorRef {
                            kind: stat_op,
                            id: if stat_op == Operand::W { io.weight_id } else { io.input_id },
                            row0,
                            col0,
                        },
                        row_start: 0,
                        row_count: stat_rows,
                    }))?;
                }
                if ki == 0 {
                    sink(Instruction::SetOvnLayout(plan.out_layout))?;
                }
                let t_steps = ceil_div(m_real, cand.dup);
                let j_tiles_real = ceil_div(k_real, cand.vn_size);
                let c_blocks_real = ceil_div(n_real, cfg.ah);
                for cs in 0..ceil_div(c_blocks_real, cand.n_col) {
                    for js in 0..ceil_div(j_tiles_real, j_span) {
                        sink(Instruction::ExecuteMapping(MappingEm {
                            r0: js * j_span,
                            c0: cs * cand.n_col * cfg.ah,
                            g_r: cand.g_r(),
                            g_c: cand.g_c(),
                            s_r,
                            s_c,
                        }))?;
                        sink(Instruction::ExecuteStreaming(MappingEs {
                            m0: 0,
                            s_m: cand.s_m(),
                            t: t_steps,
                            vn_size: cand.vn_size,
                            df: cand.df,
                        }))?;
                    }
                }
            }
            match io.commit {
                Some((func, buffer)) => {
                    sink(Instruction::Activation(ActDesc {
                        buffer,
                        func,
                        row_start: 0,
                        row_count: rows_needed(&plan.out_layout, cfg),
                    }))?;
                }
                None => {
                    let (row0, col0) = match cand.df {
                        Dataflow::WoS => (m_base, n_base),
                        Dataflow::IoS => (n_base, m_base),
                    };
                    sink(Instruction::Write(TransferDesc {
                        buffer: BufferKind::Output,
                        tensor: TensorRef { kind: Operand::O, id: io.output_id, row0, col0 },
                        row_start: 0,
                        row_count: rows_needed(&plan.out_layout, cfg),
                    }))?;
                }
            }
        }
    }
    Ok(())
}

fn rows_needed(spec: &LayoutSpec, cfg: &ArchConfig) -> usize {
    ceil_div(spec.vn_count(), cfg.aw) * spec.vn_size
}

/// Admissible lower bound on the plan's end-to-end latency. It walks the
/// dependency chain the engine model always enforces: chunk loads write the
/// buffer a prior tile reads (WAR), computes follow their loads, the region
/// write follows the last compute, and the next region's clear follows the
/// write. Fill and fetch costs are omitted, keeping the bound at or below
/// the simulated total.
fn latency_bound(cand: &Candidate, m_s: usize, k_s: usize, n_s: usize, cfg: &ArchConfig) -> u64 {
    let vn = cand.vn_size as u64;
    let j_span = cfg.aw / cand.g_r();
    let drain = vn + 2 * cfg.aw.trailing_zeros() as u64;
    let elem = cfg.elem_bytes as u64;
    let ld = |bytes: u64| (bytes + cfg.bw_operand - 1) / cfg.bw_operand;
    let st = |bytes: u64| (bytes + cfg.bw_output - 1) / cfg.bw_output;
    // Aggregate over the at-most-two distinct sizes (full, edge) per axis.
    let shapes = |extent: usize, tile: usize| -> [(usize, u64); 2] {
        let count = ceil_div(extent, tile);
        let edge = extent - (count - 1) * tile;
        if edge == tile {
            [(tile, count as u64), (0, 0)]
        } else {
            [(tile, count as u64 - 1), (edge, 1)]
        }
    };
    let ck = ceil_div(k_s, cand.k_t) as u64;
    let cn = ceil_div(n_s, cand.n_t) as u64;
    let mut total = 0u64;
    for (m_real, m_count) in shapes(m_s, cand.m_t) {
        if m_count == 0 {
            continue;
        }
        let t_steps = ceil_div(m_real, cand.dup) as u64;
        // compute: every (n, k) chunk of every region of this m-shape
        for (n_real, n_count) in shapes(n_s, cand.n_t) {
            for (k_real, k_count) in shapes(k_s, cand.k_t) {
                if n_count == 0 || k_count == 0 {
                    continue;
                }
                let inv = ceil_div(ceil_div(k_real, cand.vn_size), j_span) as u64
                    * ceil_div(ceil_div(n_real, cfg.ah), cand.n_col) as u64;
                total += m_count * n_count * k_count * (inv * (t_steps * vn + drain));
                // stationary chunk load precedes each chunk's first compute
                total += m_count * n_count * k_count * ld((k_real * n_real) as u64 * elem);
            }
        }
        // streamed chunk loads: once per (m, k) window, repeated per n-region
        // when k is chunked
        let i_repeats = if ck > 1 { cn } else { 1 };
        for (k_real, k_count) in shapes(k_s, cand.k_t) {
            if k_count == 0 {
                continue;
            }
            total += m_count * i_repeats * k_count * ld((m_real * k_real) as u64 * elem);
        }
    }
    // only the final store is guaranteed outside the chain
    let m_edge = m_s - (ceil_div(m_s, cand.m_t) - 1) * cand.m_t;
    let n_edge = n_s - (ceil_div(n_s, cand.n_t) - 1) * cand.n_t;
    total + st((m_edge * n_edge) as u64 * cfg.acc_bytes as u64)
}

/// A chosen candidate with its trace-backed latency estimate.
#[derive(Debug, Clone)]
pub struct Solution {
    pub workload: Workload,
    pub candidate: Candidate,
    pub plan: Plan,
    pub report: SimReport,
    pub latency: u64,
}

impl Solution {
    /// Materialize the full instruction list.
    pub fn trace(&self, cfg: &ArchConfig) -> Trace {
        let mut instrs = Vec::new();
        emit_program(&self.plan, cfg, &LayerIo::default(), |i| {
            instrs.push(i);
            Ok(())
        })
        .expect("collection cannot fail");
        Trace::new(instrs)
    }

    pub fn tensor_table(&self) -> TensorTable {
        TensorTable {
            names: vec!["I".to_string(), "W".to_string(), "O".to_string()],
        }
    }

    /// Register the workload's tensor shapes in a store, ids matching the
    /// generated trace.
    pub fn register_shapes(&self, store: &mut TensorStore) {
        store.add_shape("I", self.workload.m, self.workload.k);
        store.add_shape("W", self.workload.k, self.workload.n);
        store.add_shape("O", self.workload.m, self.workload.n);
    }

    /// CSV row of the chosen knobs.
    pub fn csv_row(&self) -> String {
        let c = &self.candidate;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{:.6}",
            self.workload.name,
            c.df,
            c.m_t,
            c.k_t,
            c.n_t,
            c.vn_size,
            c.o_w,
            c.o_i,
            c.o_o,
            c.n_col,
            c.dup,
            match c.w_stride { WStride::Block => "block", WStride::Strided => "strided" },
            match c.i_stride { IStride::Interleaved => "interleaved", IStride::Consecutive => "consecutive" },
            self.latency,
            self.report.compute_tiles,
            self.report.utilization,
        )
    }
}

pub const SOLUTION_HEADER: &str =
    "workload,df,m_t,k_t,n_t,vn_size,o_w,o_i,o_o,n_col,dup,w_stride,i_stride,latency,tiles,utilization";

/// Simulate a plan end to end (timing only) and report its latency.
pub fn simulate_plan(plan: &Plan, workload: &Workload, cfg: &ArchConfig) -> Result<SimReport, SimError> {
    let mut store = TensorStore::new();
    store.add_shape("I", workload.m, workload.k);
    store.add_shape("W", workload.k, workload.n);
    store.add_shape("O", workload.m, workload.n);
    let mut machine = Machine::new(cfg, SimMode::TimingOnly);
    emit_program(plan, cfg, &LayerIo::default(), |instr| machine.feed(&instr, &mut store))?;
    Ok(machine.finish(&store))
}

/// Enumerate the raw mapping grid (layouts unresolved).
fn mapping_grid(workload: &Workload, cfg: &ArchConfig) -> Vec<Candidate> {
    let mut out = Vec::new();
    let heuristic_io_first = workload.m > workload.n;
    let mut dfs = vec![Dataflow::WoS, Dataflow::IoS];
    if heuristic_io_first {
        dfs.reverse(); // search ordering only; the tie-break key is absolute
    }
    for df in dfs {
        let (m_s, k_s, n_s) = search_dims(workload, df);
        let vn_grid = if k_s < cfg.ah && k_s % cfg.ah != 0 {
            vec![cfg.ah, k_s]
        } else {
            vec![cfg.ah]
        };
        for &vn_size in &vn_grid {
            for &m_t in &tile_grid(cfg.ah, m_s) {
                for &k_t in &tile_grid(cfg.ah, k_s) {
                    for &n_t in &tile_grid(1, n_s) {
                        for &n_col in &pow2s_upto(cfg.aw) {
                            for &dup in &pow2s_upto(cfg.aw / n_col) {
                                let w_strides: &[WStride] = if n_col > 1 {
                                    &[WStride::Block, WStride::Strided]
                                } else {
                                    &[WStride::Block]
                                };
                                let i_strides: &[IStride] = if dup > 1 {
                                    &[IStride::Interleaved, IStride::Consecutive]
                                } else {
                                    &[IStride::Interleaved]
                                };
                                for &w_stride in w_strides {
                                    for &i_stride in i_strides {
                                        out.push(Candidate {
                                            df,
                                            m_t,
                                            k_t,
                                            n_t,
                                            vn_size,
                                            o_w: 0,
                                            o_i: 0,
                                            o_o: 0,
                                            f0_w: 1,
                                            f0_i: 1,
                                            f0_o: 1,
                                            n_col,
                                            dup,
                                            w_stride,
                                            i_stride,
                                        });
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Cheap arithmetic pre-filter; anything passing still goes through the full
/// layout resolution before simulation.
fn quick_filter(cand: &Candidate, cfg: &ArchConfig) -> bool {
    let geom = cfg.geometry();
    let j_tiles = ceil_div(cand.k_t, cand.vn_size);
    if cand.n_col * cand.dup > cfg.aw {
        return false;
    }
    if matches!(cand.i_stride, IStride::Consecutive) && cand.dup > 1 {
        return false;
    }
    if j_tiles * cand.m_t > geom.vn_slots(BufferKind::Streaming, cand.vn_size) {
        return false;
    }
    if j_tiles * cand.n_t > geom.vn_slots(BufferKind::Stationary, cand.vn_size) {
        return false;
    }
    let (p, q) = match cand.df {
        Dataflow::WoS => (cand.m_t, cand.n_t),
        Dataflow::IoS => (cand.n_t, cand.m_t),
    };
    if ceil_div(q, cand.vn_size) * p > geom.vn_slots(BufferKind::Output, cand.vn_size) {
        return false;
    }
    // every encoded field must fit its width
    let r_str = geom.slot_rows(BufferKind::Streaming, cfg.ah).max(1);
    let t = ceil_div(cand.m_t, cand.dup);
    if t > 1 << crate::clog2(r_str as u64) {
        return false;
    }
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pruning {
    On,
    Off,
}

fn evaluate(
    cand: &Candidate,
    workload: &Workload,
    cfg: &ArchConfig,
    constraint: &SearchConstraint,
) -> Option<Solution> {
    let plan = feasible_constrained(cand, workload, cfg, constraint).ok()?;
    let report = simulate_plan(&plan, workload, cfg).ok()?;
    Some(Solution {
        workload: workload.clone(),
        candidate: plan.cand,
        plan,
        report: report.clone(),
        latency: report.total_cycles,
    })
}

fn better(a: &Solution, b: &Solution) -> bool {
    (a.latency, a.candidate.key()) < (b.latency, b.candidate.key())
}

/// Minimum-latency feasible solution for one workload on one instance.
pub fn search(workload: &Workload, cfg: &ArchConfig, pruning: Pruning) -> Result<Solution, MapperError> {
    search_constrained(workload, cfg, pruning, &SearchConstraint::default())
}

pub fn search_constrained(
    workload: &Workload,
    cfg: &ArchConfig,
    pruning: Pruning,
    constraint: &SearchConstraint,
) -> Result<Solution, MapperError> {
    let mut grid: Vec<(u64, Candidate)> = mapping_grid(workload, cfg)
        .into_iter()
        .filter(|c| quick_filter(c, cfg))
        .map(|c| {
            let (m_s, k_s, n_s) = search_dims(workload, c.df);
            (latency_bound(&c, m_s, k_s, n_s, cfg), c)
        })
        .collect();
    grid.sort_by_key(|(bound, c)| (*bound, c.key()));

    let mut best: Option<Solution> = None;
    const BATCH: usize = 32;
    let mut idx = 0;
    while idx < grid.len() {
        if let (Pruning::On, Some(b)) = (pruning, &best) {
            if grid[idx].0 > b.latency {
                break; // admissible bound: nothing later can win
            }
        }
        let hi = (idx + BATCH).min(grid.len());
        let batch: Vec<Solution> = grid[idx..hi]
            .par_iter()
            .filter(|(bound, _)| match (pruning, &best) {
                (Pruning::On, Some(b)) => *bound <= b.latency,
                _ => true,
            })
            .filter_map(|(_, cand)| evaluate(cand, workload, cfg, constraint))
            .collect();
        for sol in batch {
            if best.as_ref().map_or(true, |b| better(&sol, b)) {
                best = Some(sol);
            }
        }
        idx = hi;
    }
    best.ok_or(MapperError::NoFeasibleCandidate)
}

/// Convert an output layout into the input layout the committed region
/// presents to the next layer.
pub fn output_as_input_layout(o: &LayoutSpec) -> LayoutSpec {
    LayoutSpec {
        operand: Operand::I,
        vn_size: o.vn_size,
        f_red_l1: o.f_red_l1,
        f_nr_l0: o.f_nr_l0,
        f_nr_l1: o.f_nr_l1,
        order_id: 5 - o.order_id,
    }
}

/// A multi-layer plan: per-layer solutions whose boundary layouts agree.
#[derive(Debug, Clone)]
pub struct ChainSolution {
    pub layers: Vec<Solution>,
    pub latency: u64,
    pub report: SimReport,
}

impl ChainSolution {
    pub fn trace(&self, cfg: &ArchConfig) -> Trace {
        let mut instrs = Vec::new();
        emit_chain(&self.layers, cfg, |i| {
            instrs.push(i);
            Ok(())
        })
        .expect("collection cannot fail");
        Trace::new(instrs)
    }

    pub fn tensor_table(&self) -> TensorTable {
        let mut names = vec!["I".to_string()];
        for i in 0..self.layers.len() {
            names.push(format!("W{}", i));
        }
        names.push("O".to_string());
        TensorTable { names }
    }

    pub fn register_shapes(&self, store: &mut TensorStore) {
        let first = &self.layers[0].workload;
        let last = &self.layers[self.layers.len() - 1].workload;
        store.add_shape("I", first.m, first.k);
        for sol in &self.layers {
            store.add_shape(&format!("W_{}", sol.workload.name), sol.workload.k, sol.workload.n);
        }
        store.add_shape("O", last.m, last.n);
    }
}

/// Layer ids in chained traces: input 0, weights 1..=L, output L+1.
pub fn chain_layer_io(layer: usize, n_layers: usize, next_df: Option<Dataflow>) -> LayerIo {
    LayerIo {
        load_input: layer == 0,
        commit: if layer + 1 < n_layers {
            let buffer = match next_df.expect("inner layers have a successor") {
                Dataflow::WoS => BufferKind::Streaming,
                Dataflow::IoS => BufferKind::Stationary,
            };
            Some((ActFunc::Identity, buffer))
        } else {
            None
        },
        input_id: TENSOR_I,
        weight_id: 1 + layer as u16,
        output_id: 1 + n_layers as u16,
    }
}

pub fn emit_chain(
    layers: &[Solution],
    cfg: &ArchConfig,
    mut sink: impl FnMut(Instruction) -> Result<(), SimError>,
) -> Result<(), SimError> {
    for (i, sol) in layers.iter().enumerate() {
        let io = chain_layer_io(i, layers.len(), layers.get(i + 1).map(|s| s.candidate.df));
        emit_program(&sol.plan, cfg, &io, &mut sink)?;
    }
    Ok(())
}

fn simulate_chain(layers: &[Solution], cfg: &ArchConfig) -> Result<SimReport, SimError> {
    let mut store = TensorStore::new();
    let first = &layers[0].workload;
    let last = &layers[layers.len() - 1].workload;
    store.add_shape("I", first.m, first.k);
    for sol in layers {
        store.add_shape("W", sol.workload.k, sol.workload.n);
    }
    store.add_shape("O", last.m, last.n);
    let mut machine = Machine::new(cfg, SimMode::TimingOnly);
    emit_chain(layers, cfg, |instr| machine.feed(&instr, &mut store))?;
    Ok(machine.finish(&store))
}

/// Joint minimum-latency search over a layer chain with matching boundary
/// layouts. Chained layers are restricted to single-region, single-chunk
/// plans (the committed region is the whole inter-layer tensor) and stream
/// the committed input (WO-S).
pub fn chain_search(layers: &[Workload], cfg: &ArchConfig) -> Result<ChainSolution, MapperError> {
    assert!(!layers.is_empty());
    for i in 1..layers.len() {
        if layers[i].k != layers[i - 1].n || layers[i].m != layers[i - 1].m {
            return Err(MapperError::ShapeMismatch {
                layer: i,
                expected: (layers[i - 1].m, layers[i - 1].n),
                got: (layers[i].m, layers[i].k),
            });
        }
    }
    if layers.len() == 1 {
        let sol = search(&layers[0], cfg, Pruning::On)?;
        let report = sol.report.clone();
        return Ok(ChainSolution {
            latency: report.total_cycles,
            layers: vec![sol],
            report,
        });
    }

    let whole = |w: &Workload, c: &Candidate| {
        c.m_t >= match c.df {
            Dataflow::WoS => w.m,
            Dataflow::IoS => w.n,
        } && c.k_t >= w.k
            && c.n_t >= match c.df {
                Dataflow::WoS => w.n,
                Dataflow::IoS => w.m,
            }
    };
    let layer_solutions = |li: usize, w: &Workload, constraint: &SearchConstraint| -> Vec<Solution> {
        let mut sols: Vec<Solution> = mapping_grid(w, cfg)
            .into_par_iter()
            .filter(|c| quick_filter(c, cfg) && whole(w, c))
            .filter(|c| li == 0 || matches!(c.df, Dataflow::WoS))
            .filter_map(|c| evaluate(&c, w, cfg, constraint))
            .collect();
        sols.sort_by(|a, b| (a.latency, a.candidate.key()).cmp(&(b.latency, b.candidate.key())));
        sols
    };

    // Grow prefixes layer by layer; successor layers are searched once per
    // distinct boundary layout with the input layout pinned to it.
    const PREFIX_CAP: usize = 4096;
    let mut prefixes: Vec<Vec<Solution>> =
        layer_solutions(0, &layers[0], &SearchConstraint::default())
            .into_iter()
            .map(|s| vec![s])
            .collect();
    if prefixes.is_empty() {
        return Err(MapperError::NoFeasibleChain);
    }
    for (li, w) in layers.iter().enumerate().skip(1) {
        let mut boundaries: Vec<LayoutSpec> = Vec::new();
        for p in &prefixes {
            let b = output_as_input_layout(&p[li - 1].plan.out_layout);
            if !boundaries.contains(&b) {
                boundaries.push(b);
            }
        }
        let extensions: Vec<(LayoutSpec, Vec<Solution>)> = boundaries
            .into_iter()
            .map(|b| {
                let c = SearchConstraint { ivn_layout: Some(b), ovn_layout: None };
                (b, layer_solutions(li, w, &c))
            })
            .collect();
        let mut next: Vec<Vec<Solution>> = Vec::new();
        for prefix in prefixes {
            let b = output_as_input_layout(&prefix[li - 1].plan.out_layout);
            if let Some((_, sols)) = extensions.iter().find(|(eb, _)| *eb == b) {
                for s in sols {
                    let mut chain = prefix.clone();
                    chain.push(s.clone());
                    next.push(chain);
                }
            }
        }
        next.sort_by_key(|chain| {
            (chain.iter().map(|s| s.latency).sum::<u64>(), chain_key_of(chain))
        });
        next.truncate(PREFIX_CAP);
        prefixes = next;
        if prefixes.is_empty() {
            return Err(MapperError::NoFeasibleChain);
        }
    }

    let mut best: Option<ChainSolution> = None;
    for chain in prefixes {
        if let Ok(report) = simulate_chain(&chain, cfg) {
            let cand = ChainSolution {
                latency: report.total_cycles,
                layers: chain,
                report,
            };
            let better_chain = best.as_ref().map_or(true, |b| {
                (cand.latency, chain_key(&cand)) < (b.latency, chain_key(b))
            });
            if better_chain {
                best = Some(cand);
            }
        }
    }
    best.ok_or(MapperError::NoFeasibleChain)
}

type ChainKey = Vec<(u8, usize, usize, usize, u8, u8, u8, usize, usize, u8, u8)>;

fn chain_key(c: &ChainSolution) -> ChainKey {
    chain_key_of(&c.layers)
}

fn chain_key_of(layers: &[Solution]) -> ChainKey {
    layers.iter().map(|s| s.candidate.key()).collect()
}

/// Emit and validate a single-layer trace for a solution.
pub fn generate_trace(solution: &Solution, cfg: &ArchConfig) -> Trace {
    let trace = solution.trace(cfg);
    debug_assert!(trace.is_valid());
    trace
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{execute_trace, reference_gemm};
    use crate::tensor::Mat;

    fn small_cfg(ah: usize, aw: usize) -> ArchConfig {
        ArchConfig::small(ah, aw).unwrap()
    }

    #[test]
    fn group_count_formulas() {
        let cfg = small_cfg(4, 4);
        assert_eq!(count_vn_groups(8, 8, 8, &cfg), 32);
        assert_eq!(count_vn_groups(1, 4, 4, &cfg), 1);
        assert_eq!(count_vn_groups(4, 10, 3, &cfg), 12);
        assert_eq!(count_combined_groups(8, 8, &cfg), 4);
        assert_eq!(count_combined_groups(4, 4, &cfg), 1);
        assert_eq!(count_combined_groups(10, 3, &cfg), 3);
    }

    #[test]
    fn knob_bounds_rejected() {
        let cfg = small_cfg(4, 4);
        let w = Workload::new("t", "t", 8, 8, 8);
        let cand = Candidate {
            df: Dataflow::WoS,
            m_t: 8,
            k_t: 8,
            n_t: 8,
            vn_size: 4,
            o_w: 0,
            o_i: 0,
            o_o: 0,
            f0_w: 1,
            f0_i: 1,
            f0_o: 1,
            n_col: 4,
            dup: 2,
            w_stride: WStride::Block,
            i_stride: IStride::Interleaved,
        };
        assert!(matches!(feasible(&cand, &w, &cfg), Err(Infeasible::Knob(_))));
    }

    #[test]
    fn capacity_rejected() {
        let cfg = small_cfg(4, 4);
        // streaming needs ceil(512/4)*512 = 65536 VN slots, buffer has 64
        let w = Workload::new("t", "t", 512, 512, 8);
        let cand = Candidate {
            df: Dataflow::WoS,
            m_t: 512,
            k_t: 512,
            n_t: 8,
            vn_size: 4,
            o_w: 0,
            o_i: 0,
            o_o: 0,
            f0_w: 1,
            f0_i: 1,
            f0_o: 1,
            n_col: 1,
            dup: 1,
            w_stride: WStride::Block,
            i_stride: IStride::Interleaved,
        };
        assert!(matches!(
            feasible(&cand, &w, &cfg),
            Err(Infeasible::Capacity(BufferKind::Streaming))
        ));
    }

    #[test]
    fn consecutive_with_duplication_rejected() {
        let cfg = small_cfg(4, 4);
        let w = Workload::new("t", "t", 8, 8, 8);
        let cand = Candidate {
            df: Dataflow::WoS,
            m_t: 8,
            k_t: 8,
            n_t: 8,
            vn_size: 4,
            o_w: 0,
            o_i: 0,
            o_o: 0,
            f0_w: 1,
            f0_i: 1,
            f0_o: 1,
            n_col: 1,
            dup: 2,
            w_stride: WStride::Block,
            i_stride: IStride::Consecutive,
        };
        assert_eq!(feasible(&cand, &w, &cfg).unwrap_err(), Infeasible::Coverage);
    }

    fn run_solution(sol: &Solution, cfg: &ArchConfig, i: &Mat, w: &Mat) -> Mat {
        let mut store = TensorStore::new();
        store.add("I", i.clone());
        store.add("W", w.clone());
        store.add_shape("O", i.rows, w.cols);
        let trace = sol.trace(cfg);
        assert!(trace.is_valid());
        execute_trace(&trace, cfg, &mut store, SimMode::Functional).unwrap();
        store.get(TENSOR_O).unwrap().data.clone().unwrap()
    }

    #[test]
    fn search_8x8x8_is_sound_and_two_tiles() {
        let cfg = small_cfg(4, 4);
        let w = Workload::new("t", "t", 8, 8, 8);
        let sol = search(&w, &cfg, Pruning::On).unwrap();
        assert_eq!(sol.report.compute_tiles, 2, "walk-through schedule uses two tiles");
        let i = Mat::from_fn(8, 8, |r, c| ((r * 5 + c * 3) % 13) as i32 - 6);
        let wm = Mat::from_fn(8, 8, |r, c| ((r * 7 + c) % 11) as i32 - 5);
        let got = run_solution(&sol, &cfg, &i, &wm);
        assert_eq!(got, reference_gemm(&i, &wm).unwrap());
    }

    #[test]
    fn degenerate_single_invocation() {
        let cfg = small_cfg(4, 8);
        let w = Workload::new("t", "t", 4, 4, 4);
        let sol = search(&w, &cfg, Pruning::On).unwrap();
        assert_eq!(sol.report.compute_tiles, 1);
    }

    #[test]
    fn pruning_preserves_latency() {
        let cfg = small_cfg(4, 4);
        for (m, k, n) in [(8, 8, 8), (5, 10, 3), (12, 4, 16), (3, 3, 3), (16, 10, 7)] {
            let w = Workload::new("t", "t", m, k, n);
            let on = search(&w, &cfg, Pruning::On).unwrap();
            let off = search(&w, &cfg, Pruning::Off).unwrap();
            assert_eq!(on.latency, off.latency, "({}, {}, {})", m, k, n);
            assert_eq!(on.candidate.key(), off.candidate.key());
        }
    }

    #[test]
    fn estimator_is_the_simulator() {
        let cfg = small_cfg(4, 4);
        let w = Workload::new("t", "t", 10, 9, 6);
        let sol = search(&w, &cfg, Pruning::On).unwrap();
        let mut store = TensorStore::new();
        sol.register_shapes(&mut store);
        let report = execute_trace(&sol.trace(&cfg), &cfg, &mut store, SimMode::TimingOnly).unwrap();
        assert_eq!(report.total_cycles, sol.latency);
    }

    #[test]
    fn ragged_k_is_sound() {
        let cfg = small_cfg(4, 4);
        let w = Workload::new("t", "t", 6, 10, 5);
        let sol = search(&w, &cfg, Pruning::On).unwrap();
        let i = Mat::from_fn(6, 10, |r, c| (r as i32 - c as i32) % 5);
        let wm = Mat::from_fn(10, 5, |r, c| ((r + 2 * c) % 7) as i32 - 3);
        let got = run_solution(&sol, &cfg, &i, &wm);
        assert_eq!(got, reference_gemm(&i, &wm).unwrap());
    }

    #[test]
    fn trace_instruction_multiset() {
        // single-region, single-chunk, two-invocation plan built explicitly
        let cfg = small_cfg(4, 4);
        let w = Workload::new("t", "t", 8, 8, 8);
        let cand = Candidate {
            df: Dataflow::WoS,
            m_t: 8,
            k_t: 8,
            n_t: 8,
            vn_size: 4,
            o_w: 0,
            o_i: 0,
            o_o: 0,
            f0_w: 1,
            f0_i: 1,
            f0_o: 1,
            n_col: 2,
            dup: 2,
            w_stride: WStride::Block,
            i_stride: IStride::Interleaved,
        };
        let plan = feasible(&cand, &w, &cfg).unwrap();
        let report = simulate_plan(&plan, &w, &cfg).unwrap();
        let sol = Solution {
            workload: w,
            candidate: plan.cand,
            plan,
            latency: report.total_cycles,
            report,
        };
        assert_eq!(sol.report.compute_tiles, 2);
        let trace = sol.trace(&cfg);
        let count = |pred: fn(&Instruction) -> bool| trace.instrs.iter().filter(|i| pred(i)).count();
        assert_eq!(count(|i| matches!(i, Instruction::Load(_))), 2);
        assert_eq!(count(|i| matches!(i, Instruction::SetIvnLayout(_))), 1);
        assert_eq!(count(|i| matches!(i, Instruction::SetWvnLayout(_))), 1);
        assert_eq!(count(|i| matches!(i, Instruction::SetOvnLayout(_))), 1);
        assert_eq!(count(|i| matches!(i, Instruction::ExecuteMapping(_))), 2);
        assert_eq!(count(|i| matches!(i, Instruction::ExecuteStreaming(_))), 2);
        assert_eq!(count(|i| matches!(i, Instruction::Write(_))), 1);
    }

    #[test]
    fn chain_mismatch_rejected() {
        let cfg = small_cfg(4, 4);
        let layers = vec![Workload::new("a", "a", 4, 4, 8), Workload::new("b", "b", 4, 5, 4)];
        assert!(matches!(
            chain_search(&layers, &cfg),
            Err(MapperError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn chain_trace_omits_second_input_layout() {
        let cfg = small_cfg(4, 4);
        let layers = vec![Workload::new("a", "a", 4, 4, 8), Workload::new("b", "b", 4, 8, 4)];
        let chain = chain_search(&layers, &cfg).unwrap();
        let trace = chain.trace(&cfg);
        let set_i = trace
            .instrs
            .iter()
            .filter(|i| matches!(i, Instruction::SetIvnLayout(_)))
            .count();
        assert_eq!(set_i, 1, "layer 2 inherits its input layout");
        assert!(trace.instrs.iter().any(|i| matches!(i, Instruction::Activation(_))));
    }

    #[test]
    fn chain_matches_independent_layers_functionally() {
        let cfg = small_cfg(4, 4);
        let layers = vec![Workload::new("a", "a", 4, 4, 8), Workload::new("b", "b", 4, 8, 4)];
        let chain = chain_search(&layers, &cfg).unwrap();
        let i0 = Mat::from_fn(4, 4, |r, c| ((r + c) % 5) as i32 - 2);
        let w0 = Mat::from_fn(4, 8, |r, c| ((2 * r + c) % 7) as i32 - 3);
        let w1 = Mat::from_fn(8, 4, |r, c| ((r + 3 * c) % 5) as i32 - 2);
        let mut store = TensorStore::new();
        store.add("I", i0.clone());
        store.add("W0", w0.clone());
        store.add("W1", w1.clone());
        store.add_shape("O", 4, 4);
        let trace = chain.trace(&cfg);
        execute_trace(&trace, &cfg, &mut store, SimMode::Functional).unwrap();
        let got = store.get(3).unwrap().data.clone().unwrap();
        // oracle: layer 1, requantize to the element range, layer 2
        let mid = reference_gemm(&i0, &w0).unwrap();
        let mid_q = Mat::from_fn(4, 8, |r, c| mid.get(r, c).clamp(-128, 127));
        let want = reference_gemm(&mid_q, &w1).unwrap();
        assert_eq!(got, want);
    }
}

/// Candidates under a latency cutoff, bound-sorted; diagnostics only.
pub fn debug_candidates(workload: &Workload, cfg: &ArchConfig, best: u64) -> Vec<Candidate> {
    let mut grid: Vec<(u64, Candidate)> = mapping_grid(workload, cfg)
        .into_iter()
        .filter(|c| quick_filter(c, cfg))
        .map(|c| {
            let (m_s, k_s, n_s) = search_dims(workload, c.df);
            (latency_bound(&c, m_s, k_s, n_s, cfg), c)
        })
        .filter(|(b, _)| *b <= best)
        .collect();
    grid.sort_by_key(|(bound, c)| (*bound, c.key()));
    grid.into_iter().map(|(_, c)| c).collect()
}

/// Grid-size diagnostics for tuning; not part of the toolchain surface.
pub fn debug_grid_stats(workload: &Workload, cfg: &ArchConfig, best: u64) -> (usize, usize) {
    let grid: Vec<(u64, Candidate)> = mapping_grid(workload, cfg)
        .into_iter()
        .filter(|c| quick_filter(c, cfg))
        .map(|c| {
            let (m_s, k_s, n_s) = search_dims(workload, c.df);
            (latency_bound(&c, m_s, k_s, n_s, cfg), c)
        })
        .collect();
    let below = grid.iter().filter(|(b, _)| *b <= best).count();
    (grid.len(), below)
}
