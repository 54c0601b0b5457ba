use minisa::mapper::{search, Pruning};
use minisa::workloads::Workload;
use minisa::ArchConfig;
use std::time::Instant;

fn main() {
    let w = Workload::new("fhe", "stall_ref", 65536, 40, 88);
    for (ah, aw) in [(4usize, 4usize), (8, 8), (4, 64), (16, 16), (8, 128), (16, 256)] {
        let cfg = ArchConfig::paper_scale(ah, aw).unwrap();
        let t0 = Instant::now();
        match search(&w, &cfg, Pruning::On) {
            Ok(sol) => println!(
                "({:2},{:3}): latency {:>9} tiles {:>5} util {:.3} stall {} in {:?}",
                ah, aw, sol.latency, sol.report.compute_tiles, sol.report.utilization,
                sol.report.stall_cycles_instr, t0.elapsed()
            ),
            Err(e) => println!("({}, {}): ERR {} in {:?}", ah, aw, e, t0.elapsed()),
        }
    }
    // the heavyweight suite rows
    for (name, m, k, n, ah, aw) in [
        ("zkp_ntt32768_m2048", 2048usize, 32768usize, 32768usize, 16usize, 16usize),
        ("gpt_k2880_n201088", 2048, 2880, 201088, 16, 16),
        ("bconv_k40_n88", 65536, 40, 88, 16, 16),
    ] {
        let w = Workload::new("x", name, m, k, n);
        let cfg = ArchConfig::paper_scale(ah, aw).unwrap();
        let t0 = Instant::now();
        match search(&w, &cfg, Pruning::On) {
            Ok(sol) => println!(
                "{} @ ({},{}): latency {} tiles {} util {:.3} in {:?}",
                name, ah, aw, sol.latency, sol.report.compute_tiles, sol.report.utilization, t0.elapsed()
            ),
            Err(e) => println!("{}: ERR {} in {:?}", name, e, t0.elapsed()),
        }
    }
}
