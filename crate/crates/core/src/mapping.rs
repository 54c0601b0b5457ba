//! Semantics of `ExecuteMapping` and `ExecuteStreaming`: which stationary VN
//! sits in each PE, which streaming VN enters each column per step, where the
//! resulting psums land, and the buffer-access legality of all of it.

use crate::isa::{Dataflow, LayoutSpec, MappingEm, MappingEs, Operand};
use crate::layout::{flatten_vn, VnCoord};
use std::error::Error;
use std::fmt;

/// Stationary VN per PE, evaluated from the mapping parameters:
/// `r = r0 + floor(a_w / g_r)`, `c = c0 + s_r*a_h + s_c*(a_w mod g_c)`.
#[derive(Debug, Clone, Copy)]
pub struct StationaryAssignment {
    pub em: MappingEm,
    pub ah: usize,
    pub aw: usize,
    pub operand: Operand,
}

impl StationaryAssignment {
    pub fn new(em: MappingEm, ah: usize, aw: usize, operand: Operand) -> Self {
        StationaryAssignment { em, ah, aw, operand }
    }

    #[inline]
    pub fn row_index(&self, a_w: usize) -> usize {
        self.em.r0 + a_w / self.em.g_r
    }

    #[inline]
    pub fn col_index(&self, a_h: usize, a_w: usize) -> usize {
        self.em.c0 + self.em.s_r * a_h + self.em.s_c * (a_w % self.em.g_c)
    }

    #[inline]
    pub fn vn_at(&self, a_h: usize, a_w: usize) -> VnCoord {
        VnCoord {
            operand: self.operand,
            r: self.row_index(a_w),
            c: self.col_index(a_h, a_w),
        }
    }

    /// Full table, PE-row major.
    pub fn table(&self) -> Vec<Vec<VnCoord>> {
        (0..self.ah)
            .map(|a_h| (0..self.aw).map(|a_w| self.vn_at(a_h, a_w)).collect())
            .collect()
    }
}

/// Streaming VN per (step, column):
/// `j = r0 + floor(a_w / g_r)`, `m = m0 + s_m*t + floor((a_w mod g_r) / g_c)`.
#[derive(Debug, Clone, Copy)]
pub struct StreamSchedule {
    pub r0: usize,
    pub g_r: usize,
    pub g_c: usize,
    pub es: MappingEs,
    pub aw: usize,
    pub operand: Operand,
}

impl StreamSchedule {
    pub fn new(em: &MappingEm, es: MappingEs, aw: usize, operand: Operand) -> Self {
        StreamSchedule {
            r0: em.r0,
            g_r: em.g_r,
            g_c: em.g_c,
            es,
            aw,
            operand,
        }
    }

    #[inline]
    pub fn reduction_index(&self, a_w: usize) -> usize {
        self.r0 + a_w / self.g_r
    }

    #[inline]
    pub fn row_index(&self, t: usize, a_w: usize) -> usize {
        self.es.m0 + self.es.s_m * t + (a_w % self.g_r) / self.g_c
    }

    #[inline]
    pub fn vn_at(&self, t: usize, a_w: usize) -> VnCoord {
        VnCoord {
            operand: self.operand,
            r: self.reduction_index(a_w),
            c: self.row_index(t, a_w),
        }
    }

    pub fn table(&self) -> Vec<Vec<VnCoord>> {
        (0..self.es.t)
            .map(|t| (0..self.aw).map(|a_w| self.vn_at(t, a_w)).collect())
            .collect()
    }

    /// Per-cycle textual table in the published array shape: latest injection
    /// first, one `cycle N | VN VN ...` line per step.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for t in (0..self.es.t).rev() {
            out.push_str(&format!("cycle {} |", t));
            for a_w in 0..self.aw {
                out.push_str(&format!(" {}", self.vn_at(t, a_w)));
            }
            out.push('\n');
        }
        out
    }
}

/// Output element coordinate produced by one PE at one step, or `Dead` when
/// the psum has no live target (a fully padded VN on either side).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsumTarget {
    At { p: usize, q: usize },
    Dead,
}

/// Partition and real-data extents of a resident operand region. Coordinates
/// beyond `part_*` are phantom (never stored); coordinates beyond the real
/// extents read as zeros.
#[derive(Debug, Clone, Copy)]
pub struct RegionBounds {
    /// Reduction tiles in the partition.
    pub part_red: usize,
    /// Non-reduction extent of the partition.
    pub part_nr: usize,
    /// Real reduction extent in elements.
    pub real_red_elems: usize,
    /// Real non-reduction extent.
    pub real_nr: usize,
}

impl RegionBounds {
    /// Outside the stored partition; never read, generated as zeros.
    pub fn phantom(&self, r: usize, c: usize) -> bool {
        r >= self.part_red || c >= self.part_nr
    }

    /// True when the VN holds no real element at all.
    pub fn fully_padded(&self, r: usize, c: usize, vn_size: usize) -> bool {
        c >= self.real_nr || r * vn_size >= self.real_red_elems
    }

    pub fn dead(&self, r: usize, c: usize, vn_size: usize) -> bool {
        self.phantom(r, c) || self.fully_padded(r, c, vn_size)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MapError {
    MissingMapping,
    ReductionMismatch {
        t: usize,
        a_w: usize,
        stationary_r: usize,
        streaming_j: usize,
    },
}

impl fmt::Display for MapError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MapError::MissingMapping => write!(f, "ExecuteStreaming without a prior ExecuteMapping"),
            MapError::ReductionMismatch { t, a_w, stationary_r, streaming_j } => write!(
                f,
                "step {} column {}: stationary row {} != streamed reduction index {}",
                t, a_w, stationary_r, streaming_j
            ),
        }
    }
}

impl Error for MapError {}

/// Target of PE `(a_h, a_w)` at step `t`. Under WO-S the streamed row picks
/// the output row and the stationary column picks the output column; IO-S
/// transposes the roles.
#[inline]
pub fn target_at(
    sa: &StationaryAssignment,
    ss: &StreamSchedule,
    df: Dataflow,
    vn_size: usize,
    stat: &RegionBounds,
    stream: &RegionBounds,
    t: usize,
    a_h: usize,
    a_w: usize,
) -> PsumTarget {
    let r = sa.row_index(a_w);
    let c = sa.col_index(a_h, a_w);
    let m = ss.row_index(t, a_w);
    if stat.dead(r, c, vn_size) || stream.dead(r, m, vn_size) {
        return PsumTarget::Dead;
    }
    match df {
        Dataflow::WoS => PsumTarget::At { p: m, q: c },
        Dataflow::IoS => PsumTarget::At { p: c, q: m },
    }
}

/// Materialized target table indexed `[t][a_h][a_w]`, with the paired-tables
/// consistency check.
pub fn psum_targets(
    sa: &StationaryAssignment,
    ss: &StreamSchedule,
    df: Dataflow,
    vn_size: usize,
    stat: &RegionBounds,
    stream: &RegionBounds,
) -> Result<Vec<Vec<Vec<PsumTarget>>>, MapError> {
    let mut out = Vec::with_capacity(ss.es.t);
    for t in 0..ss.es.t {
        let mut per_row = Vec::with_capacity(sa.ah);
        for a_h in 0..sa.ah {
            let mut row = Vec::with_capacity(sa.aw);
            for a_w in 0..sa.aw {
                let stat_r = sa.row_index(a_w);
                let stream_j = ss.reduction_index(a_w);
                if stat_r != stream_j {
                    return Err(MapError::ReductionMismatch {
                        t,
                        a_w,
                        stationary_r: stat_r,
                        streaming_j: stream_j,
                    });
                }
                row.push(target_at(sa, ss, df, vn_size, stat, stream, t, a_h, a_w));
            }
            per_row.push(row);
        }
        out.push(per_row);
    }
    Ok(out)
}

/// Rejection from the streaming-read check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamReject {
    /// Two VNs needed in one step live in different slot rows.
    RowSplit { t: usize, col_a: usize, col_b: usize },
    /// The access pattern is too irregular to verify within the work budget.
    Unverifiable { period: usize },
}

impl fmt::Display for StreamReject {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StreamReject::RowSplit { t, col_a, col_b } => {
                write!(f, "step {}: columns {} and {} need different slot rows", t, col_a, col_b)
            }
            StreamReject::Unverifiable { period } => {
                write!(f, "stream pattern period {} exceeds the verification budget", period)
            }
        }
    }
}

/// Rejection from the output-buffer check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputReject {
    BankConflict { t: usize, a_h: usize, bank: usize },
    Unverifiable { period: usize },
}

impl fmt::Display for OutputReject {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OutputReject::BankConflict { t, a_h, bank } => {
                write!(f, "step {} commit row {}: two writes target bank {}", t, a_h, bank)
            }
            OutputReject::Unverifiable { period } => {
                write!(f, "output pattern period {} exceeds the verification budget", period)
            }
        }
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Steps that must be enumerated for an exact verdict. The per-step access
/// set is a function of `(m0 + s_m*t) mod (f_nr_l0 * aw)`, so one period of
/// that residue covers all distinct patterns.
fn exact_period(s_m: usize, f_nr_l0: usize, aw: usize) -> usize {
    let modulus = f_nr_l0 * aw;
    modulus / gcd(s_m % modulus.max(1), modulus).max(1)
}

/// Streaming reads are legal iff, at every step, the distinct VNs required
/// across columns share one slot row (one wide row read, crossbar-distributed;
/// identical VNs may be multicast). Phantom coordinates are never read.
pub fn check_stream_read_legality(
    ss: &StreamSchedule,
    ivn_layout: &LayoutSpec,
    aw: usize,
    work_cap: usize,
) -> Result<(), StreamReject> {
    let period = exact_period(ss.es.s_m, ivn_layout.f_nr_l0, aw);
    // Affine fast path, mirroring the output check: with a constant replica
    // offset the flattened indices are E_i + D*t with one shared coefficient,
    // so the step-t set is the step-0 set shifted by D*t. Co-row holds for
    // all t iff the shifted window never straddles a row boundary, which only
    // depends on (E_min + D*t) mod aw.
    let max_offset = (ss.g_r - 1) / ss.g_c;
    if ss.es.s_m == ivn_layout.f_nr_l0
        && ss.es.m0 % ivn_layout.f_nr_l0 == 0
        && max_offset < ivn_layout.f_nr_l0
    {
        let mut indices: Vec<usize> = Vec::new();
        for a_w in 0..ss.aw {
            let coord = ss.vn_at(0, a_w);
            if coord.r >= ivn_layout.f_red_l1 || coord.c >= ivn_layout.nr_extent() {
                continue;
            }
            indices.push(flatten_vn(&coord, ivn_layout).expect("in-partition by filter"));
        }
        let (Some(&lo), Some(&hi)) = (indices.iter().min(), indices.iter().max()) else {
            return Ok(());
        };
        let span = hi - lo;
        if span >= aw {
            return Err(StreamReject::RowSplit { t: 0, col_a: 0, col_b: 0 });
        }
        // shared step coefficient: the f_nr_l1 rank advances by one per step
        let coeff = if ivn_layout.f_nr_l1 >= 2 {
            let c0 = VnCoord { operand: ss.operand, r: 0, c: 0 };
            let c1 = VnCoord { operand: ss.operand, r: 0, c: ivn_layout.f_nr_l0 };
            flatten_vn(&c1, ivn_layout).expect("in partition")
                - flatten_vn(&c0, ivn_layout).expect("in partition")
        } else {
            0
        };
        let cycle = aw / gcd(coeff % aw, aw).max(1);
        for step in 0..ss.es.t.min(cycle) {
            let base = (lo + coeff * step) % aw;
            if base + span >= aw {
                return Err(StreamReject::RowSplit { t: step, col_a: 0, col_b: 0 });
            }
        }
        return Ok(());
    }
    let steps = ss.es.t.min(period);
    if steps.saturating_mul(ss.aw) > work_cap {
        return Err(StreamReject::Unverifiable { period });
    }
    let mut seen: Vec<(usize, usize, usize)> = Vec::with_capacity(ss.aw);
    for t in 0..steps {
        seen.clear();
        let mut row: Option<(usize, usize)> = None; // (slot_row, col index that set it)
        for a_w in 0..ss.aw {
            let coord = ss.vn_at(t, a_w);
            if coord.r >= ivn_layout.f_red_l1 || coord.c >= ivn_layout.nr_extent() {
                continue; // phantom: generated as zeros, no buffer access
            }
            if seen.iter().any(|&(r, c, _)| (r, c) == (coord.r, coord.c)) {
                continue; // multicast of an already-read VN
            }
            let linear = flatten_vn(&coord, ivn_layout).expect("in-partition by filter");
            let slot_row = linear / aw;
            seen.push((coord.r, coord.c, a_w));
            match row {
                None => row = Some((slot_row, a_w)),
                Some((r0, col_a)) if r0 != slot_row => {
                    return Err(StreamReject::RowSplit { t, col_a, col_b: a_w });
                }
                _ => {}
            }
        }
    }
    Ok(())
}

/// Output writes are legal iff, per commit cycle (one NEST row per step),
/// the post-merge psum targets map to pairwise-distinct output banks. All
/// in-partition targets are treated as live, which is conservative for
/// ragged tensor edges.
pub fn check_output_legality(
    sa: &StationaryAssignment,
    ss: &StreamSchedule,
    df: Dataflow,
    ovn_layout: &LayoutSpec,
    aw: usize,
    work_cap: usize,
) -> Result<(), OutputReject> {
    let period = exact_period(ss.es.s_m, ovn_layout.f_nr_l0, aw);
    // Affine fast path: when every column's streamed-row offset is constant
    // and the moving rank variable advances uniformly, every flattened index
    // is E_i + D*t with one shared coefficient D. Pairwise bank equality is
    // then t-invariant, and later live sets are subsets of the t=0 set, so
    // checking the first step decides all of them.
    let max_offset = (ss.g_r - 1) / ss.g_c;
    let affine = match df {
        // p = m(t): p_L0 must stay fixed at the replica offset
        Dataflow::WoS => {
            ss.es.s_m == ovn_layout.f_nr_l0
                && ss.es.m0 % ovn_layout.f_nr_l0 == 0
                && max_offset < ovn_layout.f_nr_l0
        }
        // q = m(t): the q tile and element index must advance uniformly
        Dataflow::IoS => {
            ss.es.s_m % ovn_layout.vn_size == 0
                && ss.es.m0 % ovn_layout.vn_size == 0
                && max_offset < ovn_layout.vn_size
        }
    };
    let steps = if affine { 1 } else { ss.es.t.min(period) };
    if steps.saturating_mul(sa.ah).saturating_mul(sa.aw) > work_cap {
        return Err(OutputReject::Unverifiable { period });
    }
    let vn_o = ovn_layout.vn_size;
    let mut targets: Vec<(usize, usize)> = Vec::with_capacity(sa.aw);
    for t in 0..steps {
        for a_h in 0..sa.ah {
            targets.clear();
            for a_w in 0..sa.aw {
                let c = sa.col_index(a_h, a_w);
                let m = ss.row_index(t, a_w);
                let (p, q) = match df {
                    Dataflow::WoS => (m, c),
                    Dataflow::IoS => (c, m),
                };
                let coord = VnCoord { operand: Operand::O, r: q / vn_o, c: p };
                if coord.r >= ovn_layout.f_red_l1 || coord.c >= ovn_layout.nr_extent() {
                    continue;
                }
                if !targets.contains(&(p, q)) {
                    targets.push((p, q));
                }
            }
            let mut banks: Vec<usize> = Vec::with_capacity(targets.len());
            for &(p, q) in &targets {
                let coord = VnCoord { operand: Operand::O, r: q / vn_o, c: p };
                let linear = flatten_vn(&coord, ovn_layout).expect("in-partition by filter");
                let bank = linear % aw;
                if banks.contains(&bank) {
                    return Err(OutputReject::BankConflict { t, a_h, bank });
                }
                banks.push(bank);
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::{Dataflow, MappingEm, MappingEs};

    fn em(r0: usize, c0: usize, g_r: usize, g_c: usize, s_r: usize, s_c: usize) -> MappingEm {
        MappingEm { r0, c0, g_r, g_c, s_r, s_c }
    }

    #[test]
    fn replicate_across_all_columns() {
        // g_r = aw, g_c = 1: every column holds WVN(r0, c0 + s_r*a_h)
        let sa = StationaryAssignment::new(em(0, 0, 4, 1, 1, 0), 4, 4, Operand::W);
        for a_w in 0..4 {
            for a_h in 0..4 {
                assert_eq!(sa.vn_at(a_h, a_w), VnCoord { operand: Operand::W, r: 0, c: a_h });
            }
        }
    }

    #[test]
    fn two_reduction_groups() {
        // columns 0,1 share r=0 and columns 2,3 share r=1
        let sa = StationaryAssignment::new(em(0, 0, 2, 1, 1, 0), 4, 4, Operand::W);
        assert_eq!(sa.row_index(0), 0);
        assert_eq!(sa.row_index(1), 0);
        assert_eq!(sa.row_index(2), 1);
        assert_eq!(sa.row_index(3), 1);
    }

    #[test]
    fn single_row_constant_assignment() {
        let sa = StationaryAssignment::new(em(2, 7, 1, 1, 0, 0), 1, 4, Operand::W);
        for a_w in 0..4 {
            assert_eq!(sa.vn_at(0, a_w).c, 7);
        }
    }

    #[test]
    fn column_shared_reduction_index_property() {
        // r depends on a_w only, never on a_h
        for g_r in [1usize, 2, 3, 4, 8] {
            for g_c in [1usize, 2, 4] {
                let sa = StationaryAssignment::new(em(3, 5, g_r, g_c, 2, 7), 8, 8, Operand::W);
                for a_w in 0..8 {
                    let r = sa.vn_at(0, a_w).r;
                    for a_h in 1..8 {
                        assert_eq!(sa.vn_at(a_h, a_w).r, r);
                    }
                }
            }
        }
    }

    fn paper_schedule() -> StreamSchedule {
        let e = em(0, 0, 2, 1, 1, 0);
        StreamSchedule::new(
            &e,
            MappingEs { m0: 0, s_m: 3, t: 3, vn_size: 4, df: Dataflow::WoS },
            4,
            Operand::I,
        )
    }

    #[test]
    fn streaming_case_study_table() {
        let ss = paper_schedule();
        let want = [
            [(0, 0), (1, 0), (0, 1), (1, 1)],
            [(3, 0), (4, 0), (3, 1), (4, 1)],
            [(6, 0), (7, 0), (6, 1), (7, 1)],
        ];
        for (t, row) in want.iter().enumerate() {
            for (a_w, (m, j)) in row.iter().enumerate() {
                let coord = ss.vn_at(t, a_w);
                assert_eq!((coord.c, coord.r), (*m, *j), "t={} a_w={}", t, a_w);
            }
        }
    }

    #[test]
    fn streaming_case_study_dump() {
        let want = "cycle 2 | IVN(6,0) IVN(7,0) IVN(6,1) IVN(7,1)\n\
                    cycle 1 | IVN(3,0) IVN(4,0) IVN(3,1) IVN(4,1)\n\
                    cycle 0 | IVN(0,0) IVN(1,0) IVN(0,1) IVN(1,1)\n";
        assert_eq!(paper_schedule().dump(), want);
    }

    #[test]
    fn single_step_schedule() {
        let e = em(0, 0, 1, 1, 0, 0);
        let ss = StreamSchedule::new(
            &e,
            MappingEs { m0: 5, s_m: 9, t: 1, vn_size: 2, df: Dataflow::WoS },
            4,
            Operand::I,
        );
        for a_w in 0..4 {
            assert_eq!(ss.row_index(0, a_w), 5);
        }
    }

    #[test]
    fn full_multicast_schedule() {
        // g_r = g_c = aw: every column streams the identical sequence
        let e = em(0, 0, 4, 4, 0, 1);
        let ss = StreamSchedule::new(
            &e,
            MappingEs { m0: 0, s_m: 1, t: 5, vn_size: 4, df: Dataflow::WoS },
            4,
            Operand::I,
        );
        for t in 0..5 {
            let first = ss.vn_at(t, 0);
            for a_w in 1..4 {
                assert_eq!(ss.vn_at(t, a_w), first);
            }
        }
    }

    fn bounds(part_red: usize, part_nr: usize, red_elems: usize, nr: usize) -> RegionBounds {
        RegionBounds { part_red, part_nr, real_red_elems: red_elems, real_nr: nr }
    }

    #[test]
    fn two_tiles_share_targets() {
        // consecutive reduction tiles accumulate into identical output cells
        let stat = bounds(2, 8, 8, 8);
        let stream = bounds(2, 8, 8, 8);
        let mk = |r0| {
            let e = em(r0, 0, 4, 1, 1, 0);
            let sa = StationaryAssignment::new(e, 4, 4, Operand::W);
            let ss = StreamSchedule::new(
                &e,
                MappingEs { m0: 0, s_m: 1, t: 8, vn_size: 4, df: Dataflow::WoS },
                4,
                Operand::I,
            );
            psum_targets(&sa, &ss, Dataflow::WoS, 4, &stat, &stream).unwrap()
        };
        assert_eq!(mk(0), mk(1));
    }

    #[test]
    fn single_pe_single_step_target() {
        let e = em(0, 3, 1, 1, 0, 0);
        let sa = StationaryAssignment::new(e, 1, 2, Operand::W);
        let ss = StreamSchedule::new(
            &e,
            MappingEs { m0: 2, s_m: 1, t: 1, vn_size: 1, df: Dataflow::WoS },
            2,
            Operand::I,
        );
        let stat = bounds(1, 8, 1, 8);
        let stream = bounds(1, 8, 1, 8);
        let targets = psum_targets(&sa, &ss, Dataflow::WoS, 1, &stat, &stream).unwrap();
        assert_eq!(targets[0][0][0], PsumTarget::At { p: 2, q: 3 });
    }

    #[test]
    fn counting_oracle_multiplicities() {
        // over a full tile, every live (p, q) pair appears once per reduction
        // tile; here J = 2 tiles via two reduction groups.
        let e = em(0, 0, 2, 1, 1, 0);
        let sa = StationaryAssignment::new(e, 4, 4, Operand::W);
        let ss = StreamSchedule::new(
            &e,
            MappingEs { m0: 0, s_m: 2, t: 3, vn_size: 4, df: Dataflow::WoS },
            4,
            Operand::I,
        );
        let stat = bounds(2, 4, 8, 4);
        let stream = bounds(2, 6, 8, 6);
        let targets = psum_targets(&sa, &ss, Dataflow::WoS, 4, &stat, &stream).unwrap();
        let mut counts = std::collections::HashMap::new();
        for per_t in &targets {
            for row in per_t {
                for t in row {
                    if let PsumTarget::At { p, q } = t {
                        *counts.entry((*p, *q)).or_insert(0usize) += 1;
                    }
                }
            }
        }
        // m in {0..5} (stride 2 over 3 steps x 2 replicas), q in {0..3}
        for m in 0..6 {
            for q in 0..4 {
                assert_eq!(counts.get(&(m, q)), Some(&2), "({}, {})", m, q);
            }
        }
        assert_eq!(counts.len(), 24);
    }

    #[test]
    fn reduction_mismatch_detected() {
        let e = em(0, 0, 2, 1, 1, 0);
        let sa = StationaryAssignment::new(e, 2, 4, Operand::W);
        // schedule built from a different mapping: r0 differs
        let e2 = em(1, 0, 2, 1, 1, 0);
        let ss = StreamSchedule::new(
            &e2,
            MappingEs { m0: 0, s_m: 1, t: 1, vn_size: 2, df: Dataflow::WoS },
            4,
            Operand::I,
        );
        let b = bounds(4, 8, 8, 8);
        assert!(matches!(
            psum_targets(&sa, &ss, Dataflow::WoS, 2, &b, &b),
            Err(MapError::ReductionMismatch { .. })
        ));
    }

    fn ivn_layout(f_red: usize, f0: usize, f1: usize, order: u8) -> LayoutSpec {
        LayoutSpec {
            operand: Operand::I,
            vn_size: 4,
            f_red_l1: f_red,
            f_nr_l0: f0,
            f_nr_l1: f1,
            order_id: order,
        }
    }

    #[test]
    fn stream_legality_paper_case() {
        // interleaved layout: order m_L1 -> j_L1 -> m_L0 with f0 = 2 keeps each
        // step's four VNs in one slot row.
        let e = em(0, 0, 2, 1, 1, 0);
        let ss = StreamSchedule::new(
            &e,
            MappingEs { m0: 0, s_m: 2, t: 4, vn_size: 4, df: Dataflow::WoS },
            4,
            Operand::I,
        );
        let layout = ivn_layout(2, 2, 4, 0b100);
        assert_eq!(check_stream_read_legality(&ss, &layout, 4, 1 << 20), Ok(()));
    }

    #[test]
    fn stream_multicast_always_legal() {
        let e = em(0, 0, 4, 4, 0, 1);
        let ss = StreamSchedule::new(
            &e,
            MappingEs { m0: 0, s_m: 1, t: 8, vn_size: 4, df: Dataflow::WoS },
            4,
            Operand::I,
        );
        let layout = ivn_layout(1, 1, 8, 0);
        assert_eq!(check_stream_read_legality(&ss, &layout, 4, 1 << 20), Ok(()));
    }

    #[test]
    fn stream_row_split_rejected() {
        // order j_L1 -> m_L0 -> m_L1 places the two reduction groups a full
        // M-extent apart, splitting each step across slot rows.
        let e = em(0, 0, 2, 1, 1, 0);
        let ss = StreamSchedule::new(
            &e,
            MappingEs { m0: 0, s_m: 2, t: 4, vn_size: 4, df: Dataflow::WoS },
            4,
            Operand::I,
        );
        let layout = ivn_layout(2, 2, 4, 0b000);
        assert!(matches!(
            check_stream_read_legality(&ss, &layout, 4, 1 << 20),
            Err(StreamReject::RowSplit { t: 0, .. })
        ));
    }

    fn ovn_layout(f_red: usize, f0: usize, f1: usize, order: u8) -> LayoutSpec {
        LayoutSpec {
            operand: Operand::O,
            vn_size: 4,
            f_red_l1: f_red,
            f_nr_l0: f0,
            f_nr_l1: f1,
            order_id: order,
        }
    }

    #[test]
    fn output_full_spatial_reduction_accepts() {
        // g_r = 1: each column holds a different reduction tile of the same
        // output cells, so a row's psums merge into a single write.
        let e = em(0, 0, 1, 1, 1, 0);
        let sa = StationaryAssignment::new(e, 4, 4, Operand::W);
        let ss = StreamSchedule::new(
            &e,
            MappingEs { m0: 0, s_m: 1, t: 4, vn_size: 4, df: Dataflow::WoS },
            4,
            Operand::I,
        );
        let layout = ovn_layout(1, 1, 8, 1);
        assert_eq!(check_output_legality(&sa, &ss, Dataflow::WoS, &layout, 4, 1 << 20), Ok(()));
    }

    #[test]
    fn output_distinct_banks_accept_and_conflict_reject() {
        // two replicas: targets (2t, q) and (2t+1, q); order p_L1 -> q_L1 -> p_L0
        // with f0 = 2 spreads them over banks; f0 = 1 collides.
        let e = em(0, 0, 2, 1, 1, 0);
        let sa = StationaryAssignment::new(e, 4, 4, Operand::W);
        let ss = StreamSchedule::new(
            &e,
            MappingEs { m0: 0, s_m: 2, t: 4, vn_size: 4, df: Dataflow::WoS },
            4,
            Operand::I,
        );
        let good = ovn_layout(1, 2, 4, 1);
        assert_eq!(check_output_legality(&sa, &ss, Dataflow::WoS, &good, 4, 1 << 20), Ok(()));
        // p_L0 outermost separates the replicas by a full f1 span: both land
        // on bank t mod 4 every cycle.
        let bad = LayoutSpec { order_id: 3, ..good };
        assert!(matches!(
            check_output_legality(&sa, &ss, Dataflow::WoS, &bad, 4, 1 << 20),
            Err(OutputReject::BankConflict { .. })
        ));
    }

    #[test]
    fn exact_period_collapses_for_matched_stride() {
        assert_eq!(exact_period(2, 2, 4), 4);
        assert_eq!(exact_period(3, 2, 4), 8);
        assert_eq!(exact_period(1, 4, 8), 32);
    }
}
