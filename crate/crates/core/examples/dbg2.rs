use minisa::mapper::{search, Pruning};
use minisa::workloads::Workload;
use minisa::ArchConfig;
use std::time::Instant;

fn main() {
    for (name, m, k, n, ah, aw) in [
        ("zkp32768", 2048usize, 32768usize, 32768usize, 4usize, 4usize),
        ("gpt201088", 2048, 2880, 201088, 4, 4),
        ("zkp32768", 2048, 32768, 32768, 4, 16),
        ("gpt201088", 2048, 2880, 201088, 8, 8),
    ] {
        let w = Workload::new("x", name, m, k, n);
        let cfg = ArchConfig::paper_scale(ah, aw).unwrap();
        let t0 = Instant::now();
        match search(&w, &cfg, Pruning::On) {
            Ok(sol) => println!(
                "{} @ ({},{}): latency {} tiles {} in {:?}",
                name, ah, aw, sol.latency, sol.report.compute_tiles, t0.elapsed()
            ),
            Err(e) => println!("{} @ ({},{}): ERR {} in {:?}", name, ah, aw, e, t0.elapsed()),
        }
    }
}
