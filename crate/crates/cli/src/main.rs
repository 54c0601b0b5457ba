//! Command-line driver mirroring the toolchain's published surface:
//! `evaluate` (full co-search sweep), `search` (single workload or chain),
//! `compare` (MINISA vs micro-instruction baseline), `analyze` (device
//! baseline ratios), and `plot` (figure-ready data files).

use clap::{Args, Parser, Subcommand};
use minisa::arch::{paper_sweep, ArchConfig};
use minisa::isa::LayoutSpec;
use minisa::mapper::{self, Pruning, SearchConstraint, Solution};
use minisa::microbaseline::{self, MicroCostParams};
use minisa::report::{self, geomean};
use minisa::simulator::{Machine, SimMode};
use minisa::tensor::TensorStore;
use minisa::trace_io;
use minisa::workloads::{self, Workload};
use minisa::Operand;
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Committed micro-baseline calibration; regenerate with `compare --calibrate`.
const DEFAULT_CALIBRATION: &str = include_str!("../fixtures/microbaseline.calib");

/// Reference stall fractions of the micro baseline on the
/// (M, K, N) = (65536, 40, 88) kernel, in `STALL_CONFIGS` order.
pub const STALL_TARGETS: [f64; 6] = [0.0, 0.0, 0.753, 0.652, 0.904, 0.969];
pub const STALL_CONFIGS: [(usize, usize); 6] = [(4, 4), (8, 8), (4, 64), (16, 16), (8, 128), (16, 256)];

#[derive(Parser)]
#[command(name = "minisa", version, about = "MINISA accelerator toolchain")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// PE rows; repeatable. Defaults to the full nine-shape sweep.
    #[arg(long = "ah")]
    ah: Vec<usize>,
    /// PE columns; repeatable, or `same` for square arrays.
    #[arg(long = "aw")]
    aw: Vec<String>,
    /// Explicit instance config file (key = value), overrides --ah/--aw.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Workload CSV (category,name,M,K,N); defaults to the built-in suite.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, default_value_t = 8)]
    jobs: usize,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Seed recorded in the run manifest (reserved for randomized fixtures).
    #[arg(long, default_value_t = 314159)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Mapping-layout co-search for every workload on every instance.
    Evaluate(CommonOpts),
    /// Co-search one workload (or a layer chain) and emit its trace.
    Search {
        #[command(flatten)]
        common: CommonOpts,
        /// Treat the CSV rows as a layer chain.
        #[arg(long)]
        chain: bool,
        /// Fix input/output VN layouts from --layout-file; search mappings only.
        #[arg(long)]
        layout_constrained: bool,
        /// Layout file for --layout-constrained (key = value).
        #[arg(long)]
        layout_file: Option<PathBuf>,
    },
    /// Instruction-overhead comparison against the micro-instruction baseline.
    Compare {
        #[command(flatten)]
        common: CommonOpts,
        /// Re-fit the micro cost constants against the reference stall table
        /// and write the fitted calibration file.
        #[arg(long)]
        calibrate: bool,
        /// Calibration file; defaults to the committed fixture.
        #[arg(long)]
        calibration: Option<PathBuf>,
    },
    /// Join sweep results with pre-collected device latencies.
    Analyze {
        #[command(flatten)]
        common: CommonOpts,
        /// Baseline CSV (name,device,latency_us).
        #[arg(long)]
        baseline_csv: PathBuf,
        /// Clock assumed when converting cycles to microseconds.
        #[arg(long, default_value_t = 1.0)]
        freq_ghz: f64,
    },
    /// Emit figure-ready CSV data from a completed run directory.
    Plot(CommonOpts),
}

#[derive(Debug)]
enum CliError {
    Io(String),
    Infeasible(String),
    Usage(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Io(m) => write!(f, "I/O error: {}", m),
            CliError::Infeasible(m) => write!(f, "infeasible: {}", m),
            CliError::Usage(m) => write!(f, "usage error: {}", m),
        }
    }
}

fn io_err<E: fmt::Display>(e: E) -> CliError {
    CliError::Io(e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Evaluate(c) => cmd_evaluate(&c),
        Command::Search { common, chain, layout_constrained, layout_file } => {
            cmd_search(&common, chain, layout_constrained, layout_file.as_deref())
        }
        Command::Compare { common, calibrate, calibration } => {
            cmd_compare(&common, calibrate, calibration.as_deref())
        }
        Command::Analyze { common, baseline_csv, freq_ghz } => {
            cmd_analyze(&common, &baseline_csv, freq_ghz)
        }
        Command::Plot(c) => cmd_plot(&c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("minisa: {}", e);
            match e {
                CliError::Usage(_) => ExitCode::from(2),
                CliError::Infeasible(_) => ExitCode::from(3),
                CliError::Io(_) => ExitCode::from(4),
            }
        }
    }
}

fn configs_of(common: &CommonOpts) -> Result<Vec<ArchConfig>, CliError> {
    if let Some(path) = &common.config {
        let text = fs::read_to_string(path).map_err(io_err)?;
        return Ok(vec![ArchConfig::from_kv_text(&text).map_err(|e| CliError::Usage(e.to_string()))?]);
    }
    let shapes: Vec<(usize, usize)> = if common.ah.is_empty() {
        paper_sweep()
    } else {
        let mut v = Vec::new();
        for &ah in &common.ah {
            if common.aw.is_empty() {
                v.push((ah, ah));
            } else {
                for aw in &common.aw {
                    let aw = if aw == "same" {
                        ah
                    } else {
                        aw.parse().map_err(|_| CliError::Usage(format!("bad --aw value '{}'", aw)))?
                    };
                    v.push((ah, aw));
                }
            }
        }
        v
    };
    shapes
        .into_iter()
        .map(|(ah, aw)| ArchConfig::paper_scale(ah, aw).map_err(|e| CliError::Usage(e.to_string())))
        .collect()
}

fn workloads_of(common: &CommonOpts) -> Result<Vec<Workload>, CliError> {
    match &common.csv {
        Some(path) => workloads::load_csv(path).map_err(io_err),
        None => Ok(workloads::suite50()),
    }
}

fn init_jobs(jobs: usize) {
    let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global();
}

fn prepare_out(common: &CommonOpts, subcommand: &str) -> Result<(), CliError> {
    fs::create_dir_all(&common.out).map_err(io_err)?;
    let manifest = format!(
        "subcommand = {}\nconfig_source = {}\nworkload_source = {}\njobs = {}\nout = {}\nseed = {}\n",
        subcommand,
        common.config.as_deref().map_or("builtin-sweep".to_string(), |p| p.display().to_string()),
        common.csv.as_deref().map_or("builtin-suite".to_string(), |p| p.display().to_string()),
        common.jobs,
        common.out.display(),
        common.seed
    );
    fs::write(common.out.join("run_manifest.txt"), manifest).map_err(io_err)
}

fn write_file(path: &Path, content: &str) -> Result<(), CliError> {
    fs::write(path, content).map_err(io_err)
}

fn cmd_evaluate(common: &CommonOpts) -> Result<(), CliError> {
    init_jobs(common.jobs);
    prepare_out(common, "evaluate")?;
    let configs = configs_of(common)?;
    let suite = workloads_of(common)?;
    let mut tasks = Vec::new();
    for (wi, w) in suite.iter().enumerate() {
        for (ci, cfg) in configs.iter().enumerate() {
            tasks.push((wi, ci, w.clone(), cfg.clone()));
        }
    }
    let results: Vec<(usize, usize, Result<Solution, String>)> = tasks
        .par_iter()
        .map(|(wi, ci, w, cfg)| {
            let r = mapper::search(w, cfg, Pruning::On).map_err(|e| e.to_string());
            (*wi, *ci, r)
        })
        .collect();

    let mut solutions = String::from(mapper::SOLUTION_HEADER.to_string() + ",ah,aw\n");
    let mut reports = String::from(report::REPORT_HEADER.to_string() + "\n");
    let mut failures = String::from("workload,ah,aw,error\n");
    let mut n_fail = 0;
    let mut sorted = results;
    sorted.sort_by_key(|(wi, ci, _)| (*wi, *ci));
    for (wi, ci, r) in sorted {
        let (w, cfg) = (&suite[wi], &configs[ci]);
        match r {
            Ok(sol) => {
                solutions.push_str(&format!("{},{},{}\n", sol.csv_row(), cfg.ah, cfg.aw));
                reports.push_str(&format!(
                    "{}\n",
                    report::report_row(&w.name, &w.category, cfg.ah, cfg.aw, &sol.report)
                ));
            }
            Err(e) => {
                failures.push_str(&format!("{},{},{},{}\n", w.name, cfg.ah, cfg.aw, e));
                n_fail += 1;
            }
        }
    }
    write_file(&common.out.join("solutions.csv"), &solutions)?;
    write_file(&common.out.join("reports.csv"), &reports)?;
    if n_fail > 0 {
        write_file(&common.out.join("failures.csv"), &failures)?;
        return Err(CliError::Infeasible(format!("{} of {} runs failed; see failures.csv", n_fail, suite.len() * configs.len())));
    }
    println!("evaluate: {} workloads x {} configs -> {}", suite.len(), configs.len(), common.out.display());
    Ok(())
}

fn parse_layout_file(text: &str) -> Result<SearchConstraint, CliError> {
    // two stanzas keyed by operand prefix: i_* and o_*
    let mut vals: BTreeMap<String, usize> = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("bad layout line '{}'", line)))?;
        vals.insert(
            k.trim().to_string(),
            v.trim().parse().map_err(|_| CliError::Usage(format!("bad layout value '{}'", line)))?,
        );
    }
    let spec = |prefix: &str, operand: Operand| -> Option<LayoutSpec> {
        Some(LayoutSpec {
            operand,
            vn_size: *vals.get(&format!("{}_vn_size", prefix))?,
            f_red_l1: *vals.get(&format!("{}_f_red_l1", prefix))?,
            f_nr_l0: *vals.get(&format!("{}_f_nr_l0", prefix))?,
            f_nr_l1: *vals.get(&format!("{}_f_nr_l1", prefix))?,
            order_id: *vals.get(&format!("{}_order_id", prefix))? as u8,
        })
    };
    Ok(SearchConstraint {
        ivn_layout: spec("i", Operand::I),
        ovn_layout: spec("o", Operand::O),
    })
}

fn cmd_search(
    common: &CommonOpts,
    chain: bool,
    layout_constrained: bool,
    layout_file: Option<&Path>,
) -> Result<(), CliError> {
    init_jobs(common.jobs);
    prepare_out(common, "search")?;
    let configs = configs_of(common)?;
    let suite = workloads_of(common)?;
    if suite.is_empty() {
        return Err(CliError::Usage("no workloads given".to_string()));
    }
    let constraint = if layout_constrained {
        let path = layout_file.ok_or_else(|| CliError::Usage("--layout-constrained needs --layout-file".to_string()))?;
        let text = fs::read_to_string(path).map_err(io_err)?;
        parse_layout_file(&text)?
    } else {
        SearchConstraint::default()
    };

    let mut rows = String::from(mapper::SOLUTION_HEADER.to_string() + ",ah,aw\n");
    for cfg in &configs {
        if chain {
            let sol = mapper::chain_search(&suite, cfg)
                .map_err(|e| CliError::Infeasible(e.to_string()))?;
            let trace = sol.trace(cfg);
            let name = format!("chain_ah{}_aw{}", cfg.ah, cfg.aw);
            let bytes = trace_io::write_trace(&trace, cfg, &sol.tensor_table()).map_err(io_err)?;
            fs::write(common.out.join(format!("{}.trace", name)), bytes).map_err(io_err)?;
            write_file(&common.out.join(format!("{}.asm", name)), &trace.disassemble())?;
            for layer in &sol.layers {
                rows.push_str(&format!("{},{},{}\n", layer.csv_row(), cfg.ah, cfg.aw));
            }
            println!("chain @ {}x{}: latency {} cycles, {} instructions", cfg.ah, cfg.aw, sol.latency, trace.len());
        } else {
            for w in &suite {
                let sol = mapper::search_constrained(w, cfg, Pruning::On, &constraint)
                    .map_err(|e| CliError::Infeasible(format!("{} @ {}x{}: {}", w.name, cfg.ah, cfg.aw, e)))?;
                let trace = sol.trace(cfg);
                let name = format!("{}_ah{}_aw{}", w.name, cfg.ah, cfg.aw);
                let bytes = trace_io::write_trace(&trace, cfg, &sol.tensor_table()).map_err(io_err)?;
                fs::write(common.out.join(format!("{}.trace", name)), bytes).map_err(io_err)?;
                write_file(&common.out.join(format!("{}.asm", name)), &trace.disassemble())?;
                rows.push_str(&format!("{},{},{}\n", sol.csv_row(), cfg.ah, cfg.aw));
                println!("{} @ {}x{}: latency {} cycles, {} instructions", w.name, cfg.ah, cfg.aw, sol.latency, trace.len());
            }
        }
    }
    write_file(&common.out.join("solution.csv"), &rows)?;
    Ok(())
}

/// MINISA and micro engine runs over the identical mapping.
pub fn run_comparison(
    w: &Workload,
    cfg: &ArchConfig,
    params: &MicroCostParams,
) -> Result<microbaseline::ComparisonRow, String> {
    let sol = mapper::search(w, cfg, Pruning::On).map_err(|e| e.to_string())?;
    let micro = rerun_with_micro(&sol, cfg, params).map_err(|e| e.to_string())?;
    Ok(microbaseline::compare(&w.name, cfg, &sol.report, &micro))
}

fn rerun_with_micro(
    sol: &Solution,
    cfg: &ArchConfig,
    params: &MicroCostParams,
) -> Result<minisa::SimReport, minisa::simulator::SimError> {
    let mut store = TensorStore::new();
    sol.register_shapes(&mut store);
    let mut machine =
        Machine::new(cfg, SimMode::TimingOnly).with_micro_fetch(microbaseline::micro_fetch(cfg, params));
    mapper::emit_program(&sol.plan, cfg, &Default::default(), |i| machine.feed(&i, &mut store))?;
    Ok(machine.finish(&store))
}

/// The calibration workload and per-config solutions for the stall table.
pub fn stall_reference_solutions() -> Result<Vec<(ArchConfig, Solution)>, String> {
    let w = Workload::new("fhe", "stall_ref", 65536, 40, 88);
    STALL_CONFIGS
        .par_iter()
        .map(|&(ah, aw)| {
            let cfg = ArchConfig::paper_scale(ah, aw).map_err(|e| e.to_string())?;
            let sol = mapper::search(&w, &cfg, Pruning::On).map_err(|e| e.to_string())?;
            Ok((cfg, sol))
        })
        .collect()
}

pub fn calibrate() -> Result<(MicroCostParams, f64), String> {
    let solutions = stall_reference_solutions()?;
    Ok(microbaseline::fit_params(
        |params| {
            solutions
                .iter()
                .map(|(cfg, sol)| match rerun_with_micro(sol, cfg, params) {
                    Ok(r) => r.stall_cycles_instr as f64 / r.total_cycles.max(1) as f64,
                    Err(_) => 1.0,
                })
                .collect()
        },
        &STALL_TARGETS,
    ))
}

fn load_calibration(path: Option<&Path>) -> Result<MicroCostParams, CliError> {
    let text = match path {
        Some(p) => fs::read_to_string(p).map_err(io_err)?,
        None => DEFAULT_CALIBRATION.to_string(),
    };
    MicroCostParams::from_kv_text(&text).map_err(|e| CliError::Usage(e.to_string()))
}

fn cmd_compare(common: &CommonOpts, do_calibrate: bool, calibration: Option<&Path>) -> Result<(), CliError> {
    init_jobs(common.jobs);
    prepare_out(common, "compare")?;
    let params = if do_calibrate {
        let (fitted, err) = calibrate().map_err(CliError::Infeasible)?;
        let path = calibration
            .map(Path::to_path_buf)
            .unwrap_or_else(|| common.out.join("calibration.txt"));
        fs::write(&path, fitted.to_kv_text()).map_err(io_err)?;
        println!("calibrated (L2 = {:.4}) -> {}", err, path.display());
        fitted
    } else {
        load_calibration(calibration)?
    };
    let configs = configs_of(common)?;
    let suite = workloads_of(common)?;
    let mut tasks = Vec::new();
    for (wi, w) in suite.iter().enumerate() {
        for (ci, cfg) in configs.iter().enumerate() {
            tasks.push((wi, ci, w.clone(), cfg.clone()));
        }
    }
    let mut rows: Vec<(usize, usize, Result<microbaseline::ComparisonRow, String>)> = tasks
        .par_iter()
        .map(|(wi, ci, w, cfg)| (*wi, *ci, run_comparison(w, cfg, &params)))
        .collect();
    rows.sort_by_key(|(wi, ci, _)| (*wi, *ci));
    let mut csv = String::from(report::COMPARISON_HEADER.to_string() + "\n");
    let mut failures = 0;
    for (_, _, r) in rows {
        match r {
            Ok(row) => csv.push_str(&format!("{}\n", report::comparison_row(&row))),
            Err(_) => failures += 1,
        }
    }
    write_file(&common.out.join("comparison.csv"), &csv)?;
    if failures > 0 {
        return Err(CliError::Infeasible(format!("{} comparison runs failed", failures)));
    }
    println!("compare -> {}", common.out.join("comparison.csv").display());
    Ok(())
}

fn cmd_analyze(common: &CommonOpts, baseline_csv: &Path, freq_ghz: f64) -> Result<(), CliError> {
    prepare_out(common, "analyze")?;
    let baselines =
        workloads::parse_baseline_csv(&fs::read_to_string(baseline_csv).map_err(io_err)?).map_err(io_err)?;
    let reports_path = common.out.join("reports.csv");
    let reports = fs::read_to_string(&reports_path).map_err(|_| {
        CliError::Io(format!("{} not found; run `minisa evaluate --out {}` first", reports_path.display(), common.out.display()))
    })?;
    // workload name -> best (fewest cycles over configs)
    let mut ours: BTreeMap<String, u64> = BTreeMap::new();
    for line in reports.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() < 5 {
            continue;
        }
        let cycles: u64 = f[4].parse().unwrap_or(u64::MAX);
        ours.entry(f[0].to_string())
            .and_modify(|c| *c = (*c).min(cycles))
            .or_insert(cycles);
    }
    let mut csv = String::from("name,device,baseline_us,ours_cycles,ours_us,ratio\n");
    for (name, device, us) in baselines {
        if let Some(&cycles) = ours.get(&name) {
            let ours_us = cycles as f64 / (freq_ghz * 1000.0);
            csv.push_str(&format!(
                "{},{},{:.3},{},{:.3},{:.4}\n",
                name,
                device,
                us,
                cycles,
                ours_us,
                us / ours_us
            ));
        }
    }
    write_file(&common.out.join("analysis.csv"), &csv)?;
    println!("analyze -> {}", common.out.join("analysis.csv").display());
    Ok(())
}

fn cmd_plot(common: &CommonOpts) -> Result<(), CliError> {
    prepare_out(common, "plot")?;
    let read = |name: &str| fs::read_to_string(common.out.join(name)).unwrap_or_default();
    let reports = read("reports.csv");
    let comparison = read("comparison.csv");

    // data bytes per (workload, config) for instruction-to-data ratios
    let mut data_bytes: BTreeMap<(String, String, String), u64> = BTreeMap::new();
    for line in reports.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() >= 12 {
            data_bytes.insert(
                (f[0].to_string(), f[2].to_string(), f[3].to_string()),
                f[11].parse().unwrap_or(0),
            );
        }
    }

    let mut fig1 = String::from("workload,ah,aw,minisa_bytes,micro_bytes,reduction,instr_to_data_minisa,instr_to_data_micro\n");
    let mut per_config: BTreeMap<(usize, usize), (Vec<f64>, Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for line in comparison.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() < 9 {
            continue;
        }
        let key = (f[0].to_string(), f[1].to_string(), f[2].to_string());
        let bytes = data_bytes.get(&key).copied().unwrap_or(0).max(1) as f64;
        let minisa: f64 = f[3].parse().unwrap_or(0.0);
        let micro: f64 = f[4].parse().unwrap_or(0.0);
        fig1.push_str(&format!(
            "{},{},{},{},{},{},{:.6e},{:.6e}\n",
            f[0], f[1], f[2], f[3], f[4], f[5], minisa / bytes, micro / bytes
        ));
        let entry = per_config
            .entry((f[1].parse().unwrap_or(0), f[2].parse().unwrap_or(0)))
            .or_default();
        entry.0.push(f[8].parse().unwrap_or(1.0));
        entry.1.push(f[7].parse().unwrap_or(0.0));
        entry.2.push(f[6].parse().unwrap_or(0.0));
    }
    write_file(&common.out.join("fig_instr_reduction.csv"), &fig1)?;

    let mut fig2 = String::from("ah,aw,geomean_speedup,mean_micro_stall,mean_minisa_stall\n");
    for ((ah, aw), (speedups, micro_stalls, minisa_stalls)) in &per_config {
        let mean = |v: &Vec<f64>| v.iter().sum::<f64>() / v.len().max(1) as f64;
        fig2.push_str(&format!(
            "{},{},{:.4},{:.4},{:.4}\n",
            ah,
            aw,
            geomean(speedups),
            mean(micro_stalls),
            mean(minisa_stalls)
        ));
    }
    write_file(&common.out.join("fig_speedup_stall.csv"), &fig2)?;

    let mut fig3 = String::from(
        "workload,ah,aw,total_cycles,cycles_compute,cycles_load,cycles_out2stream,cycles_store,utilization\n",
    );
    for line in reports.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() >= 13 {
            fig3.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                f[0], f[2], f[3], f[4], f[5], f[6], f[7], f[8], f[12]
            ));
        }
    }
    write_file(&common.out.join("fig_latency_breakdown.csv"), &fig3)?;
    println!("plot -> 3 figure data files in {}", common.out.display());
    Ok(())
}
