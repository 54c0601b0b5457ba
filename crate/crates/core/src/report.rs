//! CSV row assembly for the toolchain's report files.

use crate::microbaseline::ComparisonRow;
use crate::simulator::SimReport;

pub const REPORT_HEADER: &str = "workload,category,ah,aw,total_cycles,cycles_compute,cycles_load,cycles_out2stream,cycles_store,stall_instr,instr_bytes,data_bytes,utilization";

pub fn report_row(workload: &str, category: &str, ah: usize, aw: usize, r: &SimReport) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{:.6}",
        workload,
        category,
        ah,
        aw,
        r.total_cycles,
        r.busy_compute,
        r.busy_load,
        r.busy_out2stream,
        r.busy_store,
        r.stall_cycles_instr,
        r.instruction_bytes,
        r.data_bytes_in + r.data_bytes_out,
        r.utilization
    )
}

pub const COMPARISON_HEADER: &str =
    "workload,ah,aw,minisa_bytes,micro_bytes,reduction,minisa_stall,micro_stall,speedup";

pub fn comparison_row(c: &ComparisonRow) -> String {
    format!(
        "{},{},{},{},{},{:.6e},{:.6},{:.6},{:.6}",
        c.workload, c.ah, c.aw, c.minisa_bytes, c.micro_bytes, c.reduction, c.minisa_stall, c.micro_stall, c.speedup
    )
}

/// Geometric mean of strictly positive values; 1.0 for an empty slice.
pub fn geomean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 1.0;
    }
    let log_sum: f64 = values.iter().map(|v| v.max(f64::MIN_POSITIVE).ln()).sum();
    (log_sum / values.len() as f64).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geomean_basics() {
        assert_eq!(geomean(&[]), 1.0);
        assert!((geomean(&[4.0, 1.0]) - 2.0).abs() < 1e-12);
        assert!((geomean(&[10.0, 1000.0]) - 100.0).abs() < 1e-9);
    }
}
