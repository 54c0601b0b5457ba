//! Binary trace container and textual disassembly.
//!
//! Layout: an 8-byte magic, a length-prefixed `key = value` config header,
//! a tensor name table, then per-instruction records of a 2-byte bit length
//! followed by the byte-padded payload. All length prefixes are big-endian.

use crate::arch::{ArchConfig, ArchError};
use crate::isa::{self, Instruction, IsaError, Trace};
use std::error::Error;
use std::fmt;

pub const TRACE_MAGIC: [u8; 8] = *b"MINISA1\n";

#[derive(Debug)]
pub enum TraceIoError {
    BadMagic,
    Truncated(&'static str),
    Config(ArchError),
    Isa(IsaError),
    BadUtf8,
}

impl fmt::Display for TraceIoError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceIoError::BadMagic => write!(f, "not a trace file (bad magic)"),
            TraceIoError::Truncated(what) => write!(f, "trace file truncated in {}", what),
            TraceIoError::Config(e) => write!(f, "embedded config invalid: {}", e),
            TraceIoError::Isa(e) => write!(f, "instruction record invalid: {}", e),
            TraceIoError::BadUtf8 => write!(f, "tensor name is not UTF-8"),
        }
    }
}

impl Error for TraceIoError {}

impl From<ArchError> for TraceIoError {
    fn from(e: ArchError) -> Self {
        TraceIoError::Config(e)
    }
}

impl From<IsaError> for TraceIoError {
    fn from(e: IsaError) -> Self {
        TraceIoError::Isa(e)
    }
}

/// Names carried alongside a trace so tensor ids stay meaningful off-line.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TensorTable {
    pub names: Vec<String>,
}

pub fn write_trace(
    trace: &Trace,
    cfg: &ArchConfig,
    table: &TensorTable,
) -> Result<Vec<u8>, TraceIoError> {
    let mut out = Vec::new();
    out.extend_from_slice(&TRACE_MAGIC);
    let header = cfg.to_kv_text();
    out.extend_from_slice(&(header.len() as u32).to_be_bytes());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(&(table.names.len() as u16).to_be_bytes());
    for name in &table.names {
        out.extend_from_slice(&(name.len() as u16).to_be_bytes());
        out.extend_from_slice(name.as_bytes());
    }
    out.extend_from_slice(&(trace.instrs.len() as u32).to_be_bytes());
    for instr in &trace.instrs {
        let enc = isa::encode(instr, cfg)?;
        out.extend_from_slice(&(enc.bit_len as u16).to_be_bytes());
        out.extend_from_slice(&enc.bits);
    }
    Ok(out)
}

pub fn read_trace(bytes: &[u8]) -> Result<(Trace, ArchConfig, TensorTable), TraceIoError> {
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize, what: &'static str| -> Result<&[u8], TraceIoError> {
        if *pos + n > bytes.len() {
            return Err(TraceIoError::Truncated(what));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    if take(&mut pos, 8, "magic")? != TRACE_MAGIC {
        return Err(TraceIoError::BadMagic);
    }
    let hlen = u32::from_be_bytes(take(&mut pos, 4, "header length")?.try_into().unwrap()) as usize;
    let header = std::str::from_utf8(take(&mut pos, hlen, "header")?).map_err(|_| TraceIoError::BadUtf8)?;
    let cfg = ArchConfig::from_kv_text(header)?;
    let n_names = u16::from_be_bytes(take(&mut pos, 2, "name count")?.try_into().unwrap()) as usize;
    let mut table = TensorTable::default();
    for _ in 0..n_names {
        let len = u16::from_be_bytes(take(&mut pos, 2, "name length")?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(take(&mut pos, len, "name")?).map_err(|_| TraceIoError::BadUtf8)?;
        table.names.push(name.to_string());
    }
    let n_instrs = u32::from_be_bytes(take(&mut pos, 4, "instruction count")?.try_into().unwrap()) as usize;
    let mut instrs = Vec::with_capacity(n_instrs);
    for _ in 0..n_instrs {
        let bit_len = u16::from_be_bytes(take(&mut pos, 2, "bit length")?.try_into().unwrap()) as u32;
        let payload = take(&mut pos, (bit_len as usize + 7) / 8, "payload")?;
        instrs.push(isa::decode(payload, bit_len, &cfg)?);
    }
    Ok((Trace::new(instrs), cfg, table))
}

/// One instruction per line, `OPNAME field=value ...`.
pub fn disassemble(trace: &Trace) -> String {
    trace.disassemble()
}

#[allow(dead_code)]
fn _assert_instruction_display(_: &Instruction) {}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::BufferKind;
    use crate::isa::{Dataflow, LayoutSpec, MappingEm, MappingEs, Operand, TensorRef, TransferDesc};

    fn sample_trace() -> Trace {
        Trace::new(vec![
            Instruction::SetWvnLayout(LayoutSpec {
                operand: Operand::W,
                vn_size: 4,
                f_red_l1: 2,
                f_nr_l0: 4,
                f_nr_l1: 2,
                order_id: 2,
            }),
            Instruction::Load(TransferDesc {
                buffer: BufferKind::Stationary,
                tensor: TensorRef { kind: Operand::W, id: 0, row0: 0, col0: 0 },
                row_start: 0,
                row_count: 8,
            }),
            Instruction::ExecuteMapping(MappingEm { r0: 0, c0: 0, g_r: 2, g_c: 1, s_r: 1, s_c: 4 }),
            Instruction::ExecuteStreaming(MappingEs { m0: 0, s_m: 3, t: 3, vn_size: 4, df: Dataflow::WoS }),
        ])
    }

    #[test]
    fn container_round_trip() {
        let cfg = ArchConfig::small(4, 4).unwrap();
        let trace = sample_trace();
        let table = TensorTable { names: vec!["w".to_string()] };
        let bytes = write_trace(&trace, &cfg, &table).unwrap();
        let (back, cfg2, table2) = read_trace(&bytes).unwrap();
        assert_eq!(back, trace);
        assert_eq!(cfg2, cfg);
        assert_eq!(table2, table);
    }

    #[test]
    fn bad_magic_rejected() {
        let mut bytes = write_trace(&sample_trace(), &ArchConfig::small(4, 4).unwrap(), &Default::default()).unwrap();
        bytes[0] ^= 0xff;
        assert!(matches!(read_trace(&bytes), Err(TraceIoError::BadMagic)));
    }

    #[test]
    fn truncation_detected() {
        let bytes = write_trace(&sample_trace(), &ArchConfig::small(4, 4).unwrap(), &Default::default()).unwrap();
        assert!(read_trace(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn disassembly_is_stable() {
        let text = disassemble(&sample_trace());
        let want = "SetWVNLayout vn_size=4 f_red_l1=2 f_nr_l0=4 f_nr_l1=2 order_id=2\n\
                    Load buffer=stationary kind=W id=0 row0=0 col0=0 row_start=0 row_count=8\n\
                    ExecuteMapping r0=0 c0=0 g_r=2 g_c=1 s_r=1 s_c=4\n\
                    ExecuteStreaming m0=0 s_m=3 t=3 vn_size=4 df=WO-S\n";
        assert_eq!(text, want);
    }
}
