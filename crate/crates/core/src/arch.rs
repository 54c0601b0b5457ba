//! Accelerator instance parameters and derived buffer geometry.
//!
//! An instance is an `AH x AW` PE array fed by three on-chip buffers
//! (streaming, stationary, output) plus a dedicated instruction buffer.
//! Everything downstream (field bit widths, capacity checks, the latency
//! model) is derived from a validated [`ArchConfig`].

use std::error::Error;
use std::fmt;

/// Which on-chip buffer an operation targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BufferKind {
    Streaming,
    Stationary,
    Output,
}

impl fmt::Display for BufferKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BufferKind::Streaming => write!(f, "streaming"),
            BufferKind::Stationary => write!(f, "stationary"),
            BufferKind::Output => write!(f, "output"),
        }
    }
}

/// Parameters of one accelerator instance.
///
/// Bandwidths of zero are treated as "unset" and replaced by the defaults
/// (`bw_operand = aw`, `bw_output = 4*aw`, `bw_instr = 9`) during validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchConfig {
    /// PE rows; also the maximum VN size.
    pub ah: usize,
    /// PE columns; must be a power of two (multistage reorder network).
    pub aw: usize,
    /// Streaming buffer capacity in bytes.
    pub cap_str: u64,
    /// Stationary buffer capacity in bytes.
    pub cap_sta: u64,
    /// Output buffer capacity in bytes.
    pub cap_out: u64,
    /// Instruction buffer capacity in bytes.
    pub cap_instr: u64,
    /// Operand element width in bytes (1 or 2).
    pub elem_bytes: u32,
    /// Accumulator width in bytes.
    pub acc_bytes: u32,
    /// Off-chip operand bandwidth, bytes per cycle.
    pub bw_operand: u64,
    /// Off-chip output bandwidth, bytes per cycle.
    pub bw_output: u64,
    /// Off-chip instruction bandwidth, bytes per cycle.
    pub bw_instr: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ArchError {
    NonPowerOfTwoAw(usize),
    AwTooSmall(usize),
    ZeroAh,
    ZeroCapacity(&'static str),
    BadElemBytes(u32),
    BadAccBytes { acc: u32, elem: u32 },
    /// Buffer depth is smaller than AH, so not even one full VN fits.
    AhExceedsDepth {
        buffer: BufferKind,
        depth: usize,
        ah: usize,
    },
    BadKey(String),
    BadValue(String),
}

impl fmt::Display for ArchError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ArchError::NonPowerOfTwoAw(aw) => write!(f, "aw={} is not a power of two", aw),
            ArchError::AwTooSmall(aw) => write!(f, "aw={} but at least 2 columns are required", aw),
            ArchError::ZeroAh => write!(f, "ah must be at least 1"),
            ArchError::ZeroCapacity(which) => write!(f, "{} capacity must be positive", which),
            ArchError::BadElemBytes(b) => write!(f, "elem_bytes={} (expected 1 or 2)", b),
            ArchError::BadAccBytes { acc, elem } => {
                write!(f, "acc_bytes={} must be >= elem_bytes={}", acc, elem)
            }
            ArchError::AhExceedsDepth { buffer, depth, ah } => write!(
                f,
                "{} buffer depth {} is smaller than ah={}; no VN fits",
                buffer, depth, ah
            ),
            ArchError::BadKey(k) => write!(f, "unknown config key '{}'", k),
            ArchError::BadValue(l) => write!(f, "malformed config line '{}'", l),
        }
    }
}

impl Error for ArchError {}

impl ArchConfig {
    /// Config with unset bandwidths; run through [`validate_config`] before use.
    pub fn new(ah: usize, aw: usize, cap_str: u64, cap_sta: u64, cap_out: u64, cap_instr: u64) -> Self {
        ArchConfig {
            ah,
            aw,
            cap_str,
            cap_sta,
            cap_out,
            cap_instr,
            elem_bytes: 1,
            acc_bytes: 4,
            bw_operand: 0,
            bw_output: 0,
            bw_instr: 0,
        }
    }

    /// The evaluation-scale instance for a given AH: data SRAM scales with AH
    /// and is split streaming/stationary/output at 40/40/20, with a 0.5-2 MB
    /// instruction buffer.
    pub fn paper_scale(ah: usize, aw: usize) -> Result<Self, ArchError> {
        let cap_data = (ah as u64) * (ah as u64) * 100_000;
        let cap_instr = (ah as u64) * 125_000;
        validate_config(ArchConfig::new(ah, aw, cap_data, cap_data, cap_data / 2, cap_instr))
    }

    /// A small instance for tests: every buffer is 64 rows deep.
    pub fn small(ah: usize, aw: usize) -> Result<Self, ArchError> {
        let aw64 = aw as u64;
        validate_config(ArchConfig::new(
            ah,
            aw,
            64 * aw64,
            64 * aw64,
            64 * aw64 * 4,
            4096,
        ))
    }

    /// Parse the flat `key = value` config format.
    pub fn from_kv_text(text: &str) -> Result<Self, ArchError> {
        let mut cfg = ArchConfig::new(0, 0, 0, 0, 0, 0);
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ArchError::BadValue(line.to_string()))?;
            let key = key.trim();
            let value: u64 = value
                .trim()
                .parse()
                .map_err(|_| ArchError::BadValue(line.to_string()))?;
            match key {
                "ah" => cfg.ah = value as usize,
                "aw" => cfg.aw = value as usize,
                "cap_str_bytes" => cfg.cap_str = value,
                "cap_sta_bytes" => cfg.cap_sta = value,
                "cap_out_bytes" => cfg.cap_out = value,
                "cap_instr_bytes" => cfg.cap_instr = value,
                "elem_bytes" => cfg.elem_bytes = value as u32,
                "acc_bytes" => cfg.acc_bytes = value as u32,
                "bw_operand" => cfg.bw_operand = value,
                "bw_output" => cfg.bw_output = value,
                "bw_instr" => cfg.bw_instr = value,
                _ => return Err(ArchError::BadKey(key.to_string())),
            }
        }
        validate_config(cfg)
    }

    /// Serialize to the flat `key = value` format accepted by [`ArchConfig::from_kv_text`].
    pub fn to_kv_text(&self) -> String {
        format!(
            "ah = {}\naw = {}\ncap_str_bytes = {}\ncap_sta_bytes = {}\ncap_out_bytes = {}\n\
             cap_instr_bytes = {}\nelem_bytes = {}\nacc_bytes = {}\nbw_operand = {}\n\
             bw_output = {}\nbw_instr = {}\n",
            self.ah,
            self.aw,
            self.cap_str,
            self.cap_sta,
            self.cap_out,
            self.cap_instr,
            self.elem_bytes,
            self.acc_bytes,
            self.bw_operand,
            self.bw_output,
            self.bw_instr
        )
    }

    pub fn geometry(&self) -> BufferGeometry {
        BufferGeometry {
            aw: self.aw,
            d_str: (self.cap_str / (self.aw as u64 * self.elem_bytes as u64)) as usize,
            d_sta: (self.cap_sta / (self.aw as u64 * self.elem_bytes as u64)) as usize,
            d_out: (self.cap_out / (self.aw as u64 * self.acc_bytes as u64)) as usize,
        }
    }
}

/// Buffer depths in rows of `aw` elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BufferGeometry {
    pub aw: usize,
    pub d_str: usize,
    pub d_sta: usize,
    pub d_out: usize,
}

impl BufferGeometry {
    pub fn depth(&self, buf: BufferKind) -> usize {
        match buf {
            BufferKind::Streaming => self.d_str,
            BufferKind::Stationary => self.d_sta,
            BufferKind::Output => self.d_out,
        }
    }

    /// Rows of whole VN slots: `floor(depth / vn_size)`.
    pub fn slot_rows(&self, buf: BufferKind, vn_size: usize) -> usize {
        self.depth(buf) / vn_size
    }

    /// VN capacity of a buffer: `floor(depth / vn_size) * aw`.
    pub fn vn_slots(&self, buf: BufferKind, vn_size: usize) -> usize {
        self.slot_rows(buf, vn_size) * self.aw
    }
}

/// Check all invariants and fill in derived bandwidth defaults.
pub fn validate_config(mut raw: ArchConfig) -> Result<ArchConfig, ArchError> {
    if raw.ah < 1 {
        return Err(ArchError::ZeroAh);
    }
    if raw.aw < 2 {
        return Err(ArchError::AwTooSmall(raw.aw));
    }
    if !raw.aw.is_power_of_two() {
        return Err(ArchError::NonPowerOfTwoAw(raw.aw));
    }
    for (cap, name) in [
        (raw.cap_str, "streaming"),
        (raw.cap_sta, "stationary"),
        (raw.cap_out, "output"),
        (raw.cap_instr, "instruction"),
    ] {
        if cap == 0 {
            return Err(ArchError::ZeroCapacity(name));
        }
    }
    if !matches!(raw.elem_bytes, 1 | 2) {
        return Err(ArchError::BadElemBytes(raw.elem_bytes));
    }
    if raw.acc_bytes < raw.elem_bytes {
        return Err(ArchError::BadAccBytes {
            acc: raw.acc_bytes,
            elem: raw.elem_bytes,
        });
    }
    if raw.bw_operand == 0 {
        raw.bw_operand = raw.aw as u64;
    }
    if raw.bw_output == 0 {
        raw.bw_output = 4 * raw.aw as u64;
    }
    if raw.bw_instr == 0 {
        raw.bw_instr = 9;
    }
    let geom = raw.geometry();
    for buf in [BufferKind::Streaming, BufferKind::Stationary, BufferKind::Output] {
        let depth = geom.depth(buf);
        if depth < raw.ah {
            return Err(ArchError::AhExceedsDepth {
                buffer: buf,
                depth,
                ah: raw.ah,
            });
        }
    }
    Ok(raw)
}

/// Derived buffer depths for a validated config.
pub fn buffer_geometry(cfg: &ArchConfig) -> BufferGeometry {
    cfg.geometry()
}

/// The nine swept instance shapes.
pub fn paper_sweep() -> Vec<(usize, usize)> {
    vec![
        (4, 4),
        (4, 16),
        (4, 64),
        (8, 8),
        (8, 32),
        (8, 128),
        (16, 16),
        (16, 64),
        (16, 256),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_scale_16_256_is_valid() {
        let cfg = ArchConfig::paper_scale(16, 256).unwrap();
        assert_eq!(cfg.cap_str, 25_600_000);
        assert_eq!(cfg.cap_sta, 25_600_000);
        assert_eq!(cfg.cap_out, 12_800_000);
        assert_eq!(cfg.cap_instr, 2_000_000);
        assert_eq!(cfg.bw_operand, 256);
        assert_eq!(cfg.bw_output, 1024);
        assert_eq!(cfg.bw_instr, 9);
    }

    #[test]
    fn non_power_of_two_aw_rejected() {
        let err = validate_config(ArchConfig::new(4, 3, 1024, 1024, 1024, 1024)).unwrap_err();
        assert_eq!(err, ArchError::NonPowerOfTwoAw(3));
    }

    #[test]
    fn ah_exceeds_depth_rejected() {
        // d_str = 32 / (8*1) = 4 < ah = 8
        let err = validate_config(ArchConfig::new(8, 8, 32, 1024, 1024, 1024)).unwrap_err();
        assert!(matches!(
            err,
            ArchError::AhExceedsDepth { buffer: BufferKind::Streaming, depth: 4, ah: 8 }
        ));
    }

    #[test]
    fn zero_capacity_rejected() {
        let err = validate_config(ArchConfig::new(4, 4, 0, 1024, 1024, 1024)).unwrap_err();
        assert_eq!(err, ArchError::ZeroCapacity("streaming"));
    }

    #[test]
    fn depth_formulas() {
        let cfg = validate_config(ArchConfig::new(4, 4, 1_600_000, 1_600_000, 800_000, 1024)).unwrap();
        let geom = cfg.geometry();
        assert_eq!(geom.d_str, 400_000);
        let cfg = validate_config(ArchConfig::new(4, 4, 256, 256, 1024, 1024)).unwrap();
        let geom = cfg.geometry();
        assert_eq!(geom.d_str, 64);
        assert_eq!(geom.vn_slots(BufferKind::Streaming, 4), 64);
    }

    #[test]
    fn geometry_monotone_in_capacity() {
        let mut prev = 0;
        for cap in [256u64, 512, 1000, 1024, 4096, 1 << 20] {
            let cfg = validate_config(ArchConfig::new(4, 8, cap, cap, cap, 1024)).unwrap();
            let d = cfg.geometry().d_str;
            assert!(d >= prev, "depth shrank when capacity grew");
            prev = d;
        }
    }

    #[test]
    fn all_paper_configs_validate() {
        for (ah, aw) in paper_sweep() {
            ArchConfig::paper_scale(ah, aw).unwrap();
        }
    }

    #[test]
    fn kv_round_trip() {
        let cfg = ArchConfig::paper_scale(8, 32).unwrap();
        let text = cfg.to_kv_text();
        let back = ArchConfig::from_kv_text(&text).unwrap();
        assert_eq!(cfg, back);
    }
}
