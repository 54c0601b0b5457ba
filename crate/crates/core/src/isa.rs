//! The eight MINISA instructions with bit-accurate encoding.
//!
//! Field widths are not hard-coded: each index field is sized as
//! `ceil(log2)` of its invariant bound under the given [`ArchConfig`], with
//! count fields stored as `value - 1`. A 3-bit opcode leads every word and
//! fields follow in declaration order, big-endian within fields.

use crate::arch::{ArchConfig, BufferKind};
use crate::clog2;
use std::error::Error;
use std::fmt;

/// Logical operand of a layout or transfer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Operand {
    I,
    W,
    O,
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::I => write!(f, "I"),
            Operand::W => write!(f, "W"),
            Operand::O => write!(f, "O"),
        }
    }
}

/// Dataflow selector carried by `ExecuteStreaming`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dataflow {
    /// Input-output stationary: inputs resident in PEs, weights streamed.
    IoS,
    /// Weight-output stationary: weights resident in PEs, inputs streamed.
    WoS,
}

impl Dataflow {
    pub fn stationary_operand(self) -> Operand {
        match self {
            Dataflow::WoS => Operand::W,
            Dataflow::IoS => Operand::I,
        }
    }

    pub fn streaming_operand(self) -> Operand {
        match self {
            Dataflow::WoS => Operand::I,
            Dataflow::IoS => Operand::W,
        }
    }
}

impl fmt::Display for Dataflow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dataflow::IoS => write!(f, "IO-S"),
            Dataflow::WoS => write!(f, "WO-S"),
        }
    }
}

/// Per-operand VN layout: two-level partition factors plus a rank-order
/// permutation. The level-0 reduction factor is implicitly `vn_size`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LayoutSpec {
    pub operand: Operand,
    pub vn_size: usize,
    /// Level-1 factor of the reduction rank (count of VN rows).
    pub f_red_l1: usize,
    /// Level-0 factor of the non-reduction rank, capped at AW.
    pub f_nr_l0: usize,
    /// Level-1 factor of the non-reduction rank.
    pub f_nr_l1: usize,
    /// 3-bit rank-order permutation code, 0..=5.
    pub order_id: u8,
}

impl LayoutSpec {
    /// Total VNs covered by the partition.
    pub fn vn_count(&self) -> usize {
        self.f_red_l1 * self.f_nr_l0 * self.f_nr_l1
    }

    /// Extent of the non-reduction coordinate covered by the partition.
    pub fn nr_extent(&self) -> usize {
        self.f_nr_l0 * self.f_nr_l1
    }
}

/// `ExecuteMapping` parameters: which stationary VN sits in each PE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MappingEm {
    /// Starting VN row (reduction-tile) index.
    pub r0: usize,
    /// Starting VN column (non-reduction) index.
    pub c0: usize,
    /// Consecutive PE columns sharing one VN row index; 1..=AW.
    pub g_r: usize,
    /// Replication period of the column pattern; >= 1.
    pub g_c: usize,
    /// Per-PE-row stride of the VN column index.
    pub s_r: usize,
    /// Intra-period column stride of the VN column index.
    pub s_c: usize,
}

/// `ExecuteStreaming` parameters: which streaming VN enters each column per step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MappingEs {
    /// Starting streamed-row index.
    pub m0: usize,
    /// Temporal stride of the streamed row index; >= 1.
    pub s_m: usize,
    /// VNs injected per column; >= 1.
    pub t: usize,
    /// Elements per VN, 1..=AH.
    pub vn_size: usize,
    pub df: Dataflow,
}

/// Reference to a rectangular region of an off-chip tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorRef {
    pub kind: Operand,
    /// Index into the run's tensor store / trace name table.
    pub id: u16,
    /// Element-coordinate origin of the region.
    pub row0: usize,
    pub col0: usize,
}

/// Load/Write descriptor: an off-chip tensor region and a buffer row range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TransferDesc {
    pub buffer: BufferKind,
    pub tensor: TensorRef,
    pub row_start: usize,
    pub row_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActFunc {
    Identity,
    Relu,
}

impl fmt::Display for ActFunc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActFunc::Identity => write!(f, "identity"),
            ActFunc::Relu => write!(f, "relu"),
        }
    }
}

/// Activation descriptor. The buffer names the operand buffer the drained
/// output region lands in; `Output` is not a legal destination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ActDesc {
    pub buffer: BufferKind,
    pub func: ActFunc,
    pub row_start: usize,
    pub row_count: usize,
}

/// One MINISA instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Instruction {
    SetIvnLayout(LayoutSpec),
    SetWvnLayout(LayoutSpec),
    SetOvnLayout(LayoutSpec),
    ExecuteMapping(MappingEm),
    ExecuteStreaming(MappingEs),
    Load(TransferDesc),
    Write(TransferDesc),
    Activation(ActDesc),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InstrKind {
    SetIvnLayout,
    SetWvnLayout,
    SetOvnLayout,
    ExecuteMapping,
    ExecuteStreaming,
    Load,
    Write,
    Activation,
}

impl InstrKind {
    pub const ALL: [InstrKind; 8] = [
        InstrKind::SetIvnLayout,
        InstrKind::SetWvnLayout,
        InstrKind::SetOvnLayout,
        InstrKind::ExecuteMapping,
        InstrKind::ExecuteStreaming,
        InstrKind::Load,
        InstrKind::Write,
        InstrKind::Activation,
    ];

    pub fn opcode(self) -> u8 {
        match self {
            InstrKind::SetIvnLayout => 0,
            InstrKind::SetWvnLayout => 1,
            InstrKind::SetOvnLayout => 2,
            InstrKind::ExecuteMapping => 3,
            InstrKind::ExecuteStreaming => 4,
            InstrKind::Load => 5,
            InstrKind::Write => 6,
            InstrKind::Activation => 7,
        }
    }

    pub fn from_opcode(op: u8) -> Option<InstrKind> {
        InstrKind::ALL.get(op as usize).copied()
    }
}

impl Instruction {
    pub fn kind(&self) -> InstrKind {
        match self {
            Instruction::SetIvnLayout(_) => InstrKind::SetIvnLayout,
            Instruction::SetWvnLayout(_) => InstrKind::SetWvnLayout,
            Instruction::SetOvnLayout(_) => InstrKind::SetOvnLayout,
            Instruction::ExecuteMapping(_) => InstrKind::ExecuteMapping,
            Instruction::ExecuteStreaming(_) => InstrKind::ExecuteStreaming,
            Instruction::Load(_) => InstrKind::Load,
            Instruction::Write(_) => InstrKind::Write,
            Instruction::Activation(_) => InstrKind::Activation,
        }
    }

    /// Encoded size in bytes, rounded up per instruction.
    pub fn byte_len(&self, cfg: &ArchConfig) -> u64 {
        (instruction_bit_width(self.kind(), cfg) as u64 + 7) / 8
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IsaError {
    FieldOutOfRange {
        field: &'static str,
        value: u64,
        bound: u64,
    },
    UnknownOpcode(u8),
    TruncatedBits {
        expected: u32,
        got: u32,
    },
}

impl fmt::Display for IsaError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IsaError::FieldOutOfRange { field, value, bound } => {
                write!(f, "field '{}' value {} exceeds bound {}", field, value, bound)
            }
            IsaError::UnknownOpcode(op) => write!(f, "unknown opcode {}", op),
            IsaError::TruncatedBits { expected, got } => {
                write!(f, "bit string has {} bits, expected {}", got, expected)
            }
        }
    }
}

impl Error for IsaError {}

/// Per-config field widths, all derived from invariant bounds.
#[derive(Debug, Clone, Copy)]
struct FieldWidths {
    vn: u32,
    order: u32,
    red_l1: [u32; 3],
    nr_l0: u32,
    nr_l1: [u32; 3],
    r0: u32,
    c0: u32,
    g: u32,
    stride: u32,
    m0: u32,
    sm: u32,
    t: u32,
    buf2: u32,
    kind2: u32,
    tensor_id: u32,
    coord: u32,
    row: u32,
    row_count: u32,
    buf1: u32,
    func: u32,
}

const OPCODE_BITS: u32 = 3;
const TENSOR_COORD_BITS: u32 = 24;

fn widths(cfg: &ArchConfig) -> FieldWidths {
    let geom = cfg.geometry();
    // Slot-row bounds at the maximum VN size; one per buffer in opcode order
    // (I -> streaming, W -> stationary, O -> output).
    let rows = |buf: BufferKind| geom.slot_rows(buf, cfg.ah).max(1) as u64;
    let r_str = rows(BufferKind::Streaming);
    let r_sta = rows(BufferKind::Stationary);
    let r_out = rows(BufferKind::Output);
    let s_sta = r_sta * cfg.aw as u64;
    let max_d = geom.d_str.max(geom.d_sta).max(geom.d_out) as u64;
    FieldWidths {
        vn: clog2(cfg.ah as u64),
        order: 3,
        red_l1: [clog2(r_str), clog2(r_sta), clog2(r_out)],
        nr_l0: clog2(cfg.aw as u64),
        nr_l1: [clog2(r_str), clog2(r_sta), clog2(r_out)],
        r0: clog2(r_sta),
        c0: clog2(s_sta),
        g: clog2(cfg.aw as u64),
        stride: clog2((s_sta / 2).max(1)),
        m0: clog2(r_str),
        sm: clog2(r_str),
        t: clog2(r_str),
        buf2: 2,
        kind2: 2,
        tensor_id: 8,
        coord: TENSOR_COORD_BITS,
        row: clog2(max_d),
        row_count: clog2(max_d + 1),
        buf1: 1,
        func: 1,
    }
}

fn layout_buf_index(kind: InstrKind) -> usize {
    match kind {
        InstrKind::SetIvnLayout => 0,
        InstrKind::SetWvnLayout => 1,
        InstrKind::SetOvnLayout => 2,
        _ => unreachable!(),
    }
}

/// Deterministic width of one instruction word under a config.
pub fn instruction_bit_width(kind: InstrKind, cfg: &ArchConfig) -> u32 {
    let w = widths(cfg);
    OPCODE_BITS
        + match kind {
            InstrKind::SetIvnLayout | InstrKind::SetWvnLayout | InstrKind::SetOvnLayout => {
                let b = layout_buf_index(kind);
                w.vn + w.red_l1[b] + w.nr_l0 + w.nr_l1[b] + w.order
            }
            InstrKind::ExecuteMapping => w.r0 + w.c0 + 2 * w.g + 2 * w.stride,
            InstrKind::ExecuteStreaming => w.m0 + w.sm + w.t + w.vn + 1,
            InstrKind::Load | InstrKind::Write => {
                w.buf2 + w.kind2 + w.tensor_id + 2 * w.coord + w.row + w.row_count
            }
            InstrKind::Activation => w.buf1 + w.func + w.row + w.row_count,
        }
}

struct BitWriter {
    buf: Vec<u8>,
    len: u32,
}

impl BitWriter {
    fn new() -> Self {
        BitWriter { buf: Vec::new(), len: 0 }
    }

    fn push(&mut self, value: u64, width: u32) {
        for i in (0..width).rev() {
            let bit = (value >> i) & 1;
            let byte = (self.len / 8) as usize;
            if byte == self.buf.len() {
                self.buf.push(0);
            }
            self.buf[byte] |= (bit as u8) << (7 - self.len % 8);
            self.len += 1;
        }
    }
}

struct BitReader<'a> {
    buf: &'a [u8],
    pos: u32,
    len: u32,
}

impl<'a> BitReader<'a> {
    fn new(buf: &'a [u8], bit_len: u32) -> Self {
        BitReader { buf, pos: 0, len: bit_len }
    }

    fn pull(&mut self, width: u32) -> Result<u64, IsaError> {
        if self.pos + width > self.len {
            return Err(IsaError::TruncatedBits {
                expected: self.pos + width,
                got: self.len,
            });
        }
        let mut v = 0u64;
        for _ in 0..width {
            let byte = (self.pos / 8) as usize;
            let bit = (self.buf[byte] >> (7 - self.pos % 8)) & 1;
            v = (v << 1) | bit as u64;
            self.pos += 1;
        }
        Ok(v)
    }
}

fn check(field: &'static str, value: u64, bound: u64) -> Result<(), IsaError> {
    if value >= bound {
        Err(IsaError::FieldOutOfRange { field, value, bound })
    } else {
        Ok(())
    }
}

/// Value stored as `value - 1`; the field must be in `1..=2^width`.
fn check_count(field: &'static str, value: u64, width: u32) -> Result<u64, IsaError> {
    if value == 0 || value > (1u64 << width) {
        return Err(IsaError::FieldOutOfRange {
            field,
            value,
            bound: 1u64 << width,
        });
    }
    Ok(value - 1)
}

fn check_raw(field: &'static str, value: u64, width: u32) -> Result<u64, IsaError> {
    if width >= 64 || value < (1u64 << width) {
        Ok(value)
    } else {
        Err(IsaError::FieldOutOfRange {
            field,
            value,
            bound: 1u64 << width,
        })
    }
}

fn buf2_code(b: BufferKind) -> u64 {
    match b {
        BufferKind::Streaming => 0,
        BufferKind::Stationary => 1,
        BufferKind::Output => 2,
    }
}

fn operand_code(o: Operand) -> u64 {
    match o {
        Operand::I => 0,
        Operand::W => 1,
        Operand::O => 2,
    }
}

/// Encoded instruction: packed bytes plus the exact bit length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedInstr {
    pub bits: Vec<u8>,
    pub bit_len: u32,
}

/// Pack an instruction into its bit string.
pub fn encode(instr: &Instruction, cfg: &ArchConfig) -> Result<EncodedInstr, IsaError> {
    let w = widths(cfg);
    let mut bw = BitWriter::new();
    bw.push(instr.kind().opcode() as u64, OPCODE_BITS);
    match instr {
        Instruction::SetIvnLayout(l) | Instruction::SetWvnLayout(l) | Instruction::SetOvnLayout(l) => {
            let expected = match instr.kind() {
                InstrKind::SetIvnLayout => Operand::I,
                InstrKind::SetWvnLayout => Operand::W,
                _ => Operand::O,
            };
            if l.operand != expected {
                return Err(IsaError::FieldOutOfRange {
                    field: "operand",
                    value: operand_code(l.operand),
                    bound: operand_code(expected) + 1,
                });
            }
            let b = layout_buf_index(instr.kind());
            check("vn_size", l.vn_size as u64, cfg.ah as u64 + 1)?;
            bw.push(check_count("vn_size", l.vn_size as u64, w.vn)?, w.vn);
            bw.push(check_count("f_red_l1", l.f_red_l1 as u64, w.red_l1[b])?, w.red_l1[b]);
            check("f_nr_l0", l.f_nr_l0 as u64, cfg.aw as u64 + 1)?;
            bw.push(check_count("f_nr_l0", l.f_nr_l0 as u64, w.nr_l0)?, w.nr_l0);
            bw.push(check_count("f_nr_l1", l.f_nr_l1 as u64, w.nr_l1[b])?, w.nr_l1[b]);
            check("order_id", l.order_id as u64, 6)?;
            bw.push(l.order_id as u64, w.order);
        }
        Instruction::ExecuteMapping(em) => {
            check("g_r", em.g_r as u64, cfg.aw as u64 + 1)?;
            bw.push(check_raw("r0", em.r0 as u64, w.r0)?, w.r0);
            bw.push(check_raw("c0", em.c0 as u64, w.c0)?, w.c0);
            bw.push(check_count("g_r", em.g_r as u64, w.g)?, w.g);
            bw.push(check_count("g_c", em.g_c as u64, w.g)?, w.g);
            bw.push(check_raw("s_r", em.s_r as u64, w.stride)?, w.stride);
            bw.push(check_raw("s_c", em.s_c as u64, w.stride)?, w.stride);
        }
        Instruction::ExecuteStreaming(es) => {
            check("vn_size", es.vn_size as u64, cfg.ah as u64 + 1)?;
            bw.push(check_raw("m0", es.m0 as u64, w.m0)?, w.m0);
            bw.push(check_count("s_m", es.s_m as u64, w.sm)?, w.sm);
            bw.push(check_count("t", es.t as u64, w.t)?, w.t);
            bw.push(check_count("vn_size", es.vn_size as u64, w.vn)?, w.vn);
            bw.push(matches!(es.df, Dataflow::WoS) as u64, 1);
        }
        Instruction::Load(td) | Instruction::Write(td) => {
            bw.push(buf2_code(td.buffer), w.buf2);
            bw.push(operand_code(td.tensor.kind), w.kind2);
            bw.push(check_raw("tensor_id", td.tensor.id as u64, w.tensor_id)?, w.tensor_id);
            bw.push(check_raw("row0", td.tensor.row0 as u64, w.coord)?, w.coord);
            bw.push(check_raw("col0", td.tensor.col0 as u64, w.coord)?, w.coord);
            bw.push(check_raw("row_start", td.row_start as u64, w.row)?, w.row);
            bw.push(check_raw("row_count", td.row_count as u64, w.row_count)?, w.row_count);
        }
        Instruction::Activation(a) => {
            let code = match a.buffer {
                BufferKind::Streaming => 0,
                BufferKind::Stationary => 1,
                BufferKind::Output => {
                    return Err(IsaError::FieldOutOfRange {
                        field: "buffer",
                        value: 2,
                        bound: 2,
                    })
                }
            };
            bw.push(code, w.buf1);
            bw.push(matches!(a.func, ActFunc::Relu) as u64, w.func);
            bw.push(check_raw("row_start", a.row_start as u64, w.row)?, w.row);
            bw.push(check_raw("row_count", a.row_count as u64, w.row_count)?, w.row_count);
        }
    }
    debug_assert_eq!(bw.len, instruction_bit_width(instr.kind(), cfg));
    Ok(EncodedInstr {
        bits: bw.buf,
        bit_len: bw.len,
    })
}

/// Inverse of [`encode`]. The bit length must match the width implied by the opcode.
pub fn decode(bits: &[u8], bit_len: u32, cfg: &ArchConfig) -> Result<Instruction, IsaError> {
    let w = widths(cfg);
    let mut br = BitReader::new(bits, bit_len);
    let op = br.pull(OPCODE_BITS)? as u8;
    let kind = InstrKind::from_opcode(op).ok_or(IsaError::UnknownOpcode(op))?;
    let expected = instruction_bit_width(kind, cfg);
    if bit_len != expected {
        return Err(IsaError::TruncatedBits {
            expected,
            got: bit_len,
        });
    }
    let instr = match kind {
        InstrKind::SetIvnLayout | InstrKind::SetWvnLayout | InstrKind::SetOvnLayout => {
            let b = layout_buf_index(kind);
            let spec = LayoutSpec {
                operand: match kind {
                    InstrKind::SetIvnLayout => Operand::I,
                    InstrKind::SetWvnLayout => Operand::W,
                    _ => Operand::O,
                },
                vn_size: br.pull(w.vn)? as usize + 1,
                f_red_l1: br.pull(w.red_l1[b])? as usize + 1,
                f_nr_l0: br.pull(w.nr_l0)? as usize + 1,
                f_nr_l1: br.pull(w.nr_l1[b])? as usize + 1,
                order_id: br.pull(w.order)? as u8,
            };
            match kind {
                InstrKind::SetIvnLayout => Instruction::SetIvnLayout(spec),
                InstrKind::SetWvnLayout => Instruction::SetWvnLayout(spec),
                _ => Instruction::SetOvnLayout(spec),
            }
        }
        InstrKind::ExecuteMapping => Instruction::ExecuteMapping(MappingEm {
            r0: br.pull(w.r0)? as usize,
            c0: br.pull(w.c0)? as usize,
            g_r: br.pull(w.g)? as usize + 1,
            g_c: br.pull(w.g)? as usize + 1,
            s_r: br.pull(w.stride)? as usize,
            s_c: br.pull(w.stride)? as usize,
        }),
        InstrKind::ExecuteStreaming => Instruction::ExecuteStreaming(MappingEs {
            m0: br.pull(w.m0)? as usize,
            s_m: br.pull(w.sm)? as usize + 1,
            t: br.pull(w.t)? as usize + 1,
            vn_size: br.pull(w.vn)? as usize + 1,
            df: if br.pull(1)? == 1 { Dataflow::WoS } else { Dataflow::IoS },
        }),
        InstrKind::Load | InstrKind::Write => {
            let buffer = match br.pull(w.buf2)? {
                0 => BufferKind::Streaming,
                1 => BufferKind::Stationary,
                2 => BufferKind::Output,
                v => return Err(IsaError::FieldOutOfRange { field: "buffer", value: v, bound: 3 }),
            };
            let kind2 = match br.pull(w.kind2)? {
                0 => Operand::I,
                1 => Operand::W,
                2 => Operand::O,
                v => return Err(IsaError::FieldOutOfRange { field: "kind", value: v, bound: 3 }),
            };
            let td = TransferDesc {
                buffer,
                tensor: TensorRef {
                    kind: kind2,
                    id: br.pull(w.tensor_id)? as u16,
                    row0: br.pull(w.coord)? as usize,
                    col0: br.pull(w.coord)? as usize,
                },
                row_start: br.pull(w.row)? as usize,
                row_count: br.pull(w.row_count)? as usize,
            };
            if kind == InstrKind::Load {
                Instruction::Load(td)
            } else {
                Instruction::Write(td)
            }
        }
        InstrKind::Activation => Instruction::Activation(ActDesc {
            buffer: if br.pull(w.buf1)? == 1 {
                BufferKind::Stationary
            } else {
                BufferKind::Streaming
            },
            func: if br.pull(w.func)? == 1 { ActFunc::Relu } else { ActFunc::Identity },
            row_start: br.pull(w.row)? as usize,
            row_count: br.pull(w.row_count)? as usize,
        }),
    };
    Ok(instr)
}

/// Ordered instruction sequence.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Trace {
    pub instrs: Vec<Instruction>,
}

impl Trace {
    pub fn new(instrs: Vec<Instruction>) -> Self {
        Trace { instrs }
    }

    pub fn len(&self) -> usize {
        self.instrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instrs.is_empty()
    }

    /// Single-pass check that every `ExecuteStreaming` has a prior
    /// `ExecuteMapping`.
    pub fn is_valid(&self) -> bool {
        let mut seen_em = false;
        for instr in &self.instrs {
            match instr {
                Instruction::ExecuteMapping(_) => seen_em = true,
                Instruction::ExecuteStreaming(_) if !seen_em => return false,
                _ => {}
            }
        }
        true
    }

    /// Total encoded bytes, with each instruction rounded up to whole bytes.
    pub fn byte_len(&self, cfg: &ArchConfig) -> u64 {
        self.instrs.iter().map(|i| i.byte_len(cfg)).sum()
    }

    /// Textual disassembly, one instruction per line.
    pub fn disassemble(&self) -> String {
        let mut out = String::new();
        for instr in &self.instrs {
            out.push_str(&instr.to_string());
            out.push('\n');
        }
        out
    }
}

/// Total encoded trace bytes; errors if any instruction fails to encode.
pub fn trace_bytes(trace: &Trace, cfg: &ArchConfig) -> Result<u64, IsaError> {
    let mut total = 0u64;
    for instr in &trace.instrs {
        let enc = encode(instr, cfg)?;
        total += (enc.bit_len as u64 + 7) / 8;
    }
    Ok(total)
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Instruction::SetIvnLayout(l) | Instruction::SetWvnLayout(l) | Instruction::SetOvnLayout(l) => {
                let name = match self.kind() {
                    InstrKind::SetIvnLayout => "SetIVNLayout",
                    InstrKind::SetWvnLayout => "SetWVNLayout",
                    _ => "SetOVNLayout",
                };
                write!(
                    f,
                    "{} vn_size={} f_red_l1={} f_nr_l0={} f_nr_l1={} order_id={}",
                    name, l.vn_size, l.f_red_l1, l.f_nr_l0, l.f_nr_l1, l.order_id
                )
            }
            Instruction::ExecuteMapping(em) => write!(
                f,
                "ExecuteMapping r0={} c0={} g_r={} g_c={} s_r={} s_c={}",
                em.r0, em.c0, em.g_r, em.g_c, em.s_r, em.s_c
            ),
            Instruction::ExecuteStreaming(es) => write!(
                f,
                "ExecuteStreaming m0={} s_m={} t={} vn_size={} df={}",
                es.m0, es.s_m, es.t, es.vn_size, es.df
            ),
            Instruction::Load(td) | Instruction::Write(td) => {
                let name = if matches!(self.kind(), InstrKind::Load) { "Load" } else { "Write" };
                write!(
                    f,
                    "{} buffer={} kind={} id={} row0={} col0={} row_start={} row_count={}",
                    name,
                    td.buffer,
                    td.tensor.kind,
                    td.tensor.id,
                    td.tensor.row0,
                    td.tensor.col0,
                    td.row_start,
                    td.row_count
                )
            }
            Instruction::Activation(a) => write!(
                f,
                "Activation buffer={} func={} row_start={} row_count={}",
                a.buffer, a.func, a.row_start, a.row_count
            ),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::validate_config;

    fn paper_cfg(ah: usize, aw: usize) -> ArchConfig {
        ArchConfig::paper_scale(ah, aw).unwrap()
    }

    #[test]
    fn order_field_is_three_bits() {
        let w = widths(&paper_cfg(4, 4));
        assert_eq!(w.order, 3);
    }

    #[test]
    fn df_field_is_one_bit() {
        // one bit suffices for the two dataflow choices
        let cfg = paper_cfg(4, 4);
        let wos = encode(
            &Instruction::ExecuteStreaming(MappingEs { m0: 0, s_m: 1, t: 1, vn_size: 1, df: Dataflow::WoS }),
            &cfg,
        )
        .unwrap();
        let ios = encode(
            &Instruction::ExecuteStreaming(MappingEs { m0: 0, s_m: 1, t: 1, vn_size: 1, df: Dataflow::IoS }),
            &cfg,
        )
        .unwrap();
        assert_eq!(wos.bit_len, ios.bit_len);
        assert_ne!(wos.bits, ios.bits);
    }

    #[test]
    fn streaming_widths_match_published_values() {
        // Derived bounds reproduce the published ExecuteStreaming widths
        // for all nine swept shapes.
        let expect = [
            ((4, 4), 57),
            ((4, 16), 51),
            ((4, 64), 45),
            ((8, 8), 58),
            ((8, 32), 52),
            ((8, 128), 46),
            ((16, 16), 59),
            ((16, 64), 53),
            ((16, 256), 47),
        ];
        for ((ah, aw), bits) in expect {
            let cfg = paper_cfg(ah, aw);
            assert_eq!(
                instruction_bit_width(InstrKind::ExecuteStreaming, &cfg),
                bits,
                "({}, {})",
                ah,
                aw
            );
        }
    }

    #[test]
    fn width_trends_at_fixed_capacity() {
        let w16: Vec<u32> = [16, 64, 256]
            .iter()
            .map(|&aw| instruction_bit_width(InstrKind::ExecuteStreaming, &paper_cfg(16, aw)))
            .collect();
        assert!(w16[0] > w16[1] && w16[1] > w16[2], "ES width should fall: {:?}", w16);
        let em: Vec<u32> = [16, 64, 256]
            .iter()
            .map(|&aw| instruction_bit_width(InstrKind::ExecuteMapping, &paper_cfg(16, aw)))
            .collect();
        assert!(em[0] < em[1] && em[1] < em[2], "EM width should grow: {:?}", em);
        let set: Vec<u32> = [16, 64, 256]
            .iter()
            .map(|&aw| instruction_bit_width(InstrKind::SetIvnLayout, &paper_cfg(16, aw)))
            .collect();
        assert!(set[0] > set[1] && set[1] > set[2], "layout width should fall: {:?}", set);
    }

    #[test]
    fn widths_monotone_in_depth() {
        // increasing buffer depth never decreases any instruction width
        let small = validate_config(ArchConfig::new(4, 8, 4096, 4096, 4096, 1024)).unwrap();
        let big = validate_config(ArchConfig::new(4, 8, 1 << 20, 1 << 20, 1 << 20, 1024)).unwrap();
        for kind in InstrKind::ALL {
            assert!(instruction_bit_width(kind, &big) >= instruction_bit_width(kind, &small));
        }
    }

    #[test]
    fn paper_case_streaming_round_trip() {
        let cfg = paper_cfg(4, 4);
        let instr = Instruction::ExecuteStreaming(MappingEs {
            m0: 0,
            s_m: 3,
            t: 3,
            vn_size: 4,
            df: Dataflow::WoS,
        });
        let enc = encode(&instr, &cfg).unwrap();
        assert_eq!(decode(&enc.bits, enc.bit_len, &cfg).unwrap(), instr);
    }

    #[test]
    fn round_trip_each_kind() {
        let cfg = paper_cfg(8, 8);
        let samples = [
            Instruction::SetWvnLayout(LayoutSpec {
                operand: Operand::W,
                vn_size: 4,
                f_red_l1: 2,
                f_nr_l0: 4,
                f_nr_l1: 2,
                order_id: 2,
            }),
            Instruction::ExecuteMapping(MappingEm { r0: 1, c0: 9, g_r: 2, g_c: 1, s_r: 1, s_c: 4 }),
            Instruction::Load(TransferDesc {
                buffer: BufferKind::Streaming,
                tensor: TensorRef { kind: Operand::I, id: 3, row0: 128, col0: 64 },
                row_start: 0,
                row_count: 40,
            }),
            Instruction::Activation(ActDesc {
                buffer: BufferKind::Stationary,
                func: ActFunc::Relu,
                row_start: 2,
                row_count: 6,
            }),
        ];
        for instr in samples {
            let enc = encode(&instr, &cfg).unwrap();
            assert_eq!(decode(&enc.bits, enc.bit_len, &cfg).unwrap(), instr, "{}", instr);
        }
    }

    #[test]
    fn g_r_bound_enforced() {
        let cfg = paper_cfg(4, 4);
        let instr = Instruction::ExecuteMapping(MappingEm {
            r0: 0,
            c0: 0,
            g_r: cfg.aw + 1,
            g_c: 1,
            s_r: 0,
            s_c: 0,
        });
        match encode(&instr, &cfg) {
            Err(IsaError::FieldOutOfRange { field: "g_r", .. }) => {}
            other => panic!("expected g_r range error, got {:?}", other),
        }
    }

    #[test]
    fn truncated_bits_detected() {
        let cfg = paper_cfg(4, 4);
        let instr = Instruction::ExecuteMapping(MappingEm { r0: 0, c0: 0, g_r: 1, g_c: 1, s_r: 0, s_c: 0 });
        let enc = encode(&instr, &cfg).unwrap();
        let err = decode(&enc.bits, enc.bit_len - 4, &cfg).unwrap_err();
        assert!(matches!(err, IsaError::TruncatedBits { .. }));
    }

    #[test]
    fn reserved_order_rejected() {
        let cfg = paper_cfg(4, 4);
        let instr = Instruction::SetIvnLayout(LayoutSpec {
            operand: Operand::I,
            vn_size: 4,
            f_red_l1: 1,
            f_nr_l0: 1,
            f_nr_l1: 1,
            order_id: 6,
        });
        match encode(&instr, &cfg) {
            Err(IsaError::FieldOutOfRange { field: "order_id", .. }) => {}
            other => panic!("expected order range error, got {:?}", other),
        }
    }

    #[test]
    fn empty_trace_bytes() {
        let cfg = paper_cfg(4, 4);
        assert_eq!(trace_bytes(&Trace::default(), &cfg).unwrap(), 0);
    }

    #[test]
    fn trace_validity_single_pass() {
        let es = Instruction::ExecuteStreaming(MappingEs { m0: 0, s_m: 1, t: 1, vn_size: 1, df: Dataflow::WoS });
        let em = Instruction::ExecuteMapping(MappingEm { r0: 0, c0: 0, g_r: 1, g_c: 1, s_r: 0, s_c: 0 });
        assert!(!Trace::new(vec![es]).is_valid());
        assert!(Trace::new(vec![em, es]).is_valid());
        assert!(Trace::new(vec![em, es, es]).is_valid());
    }
}
