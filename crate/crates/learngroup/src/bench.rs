//! Batch experiment drivers behind the CLI subcommands.
//!
//! Every driver is a pure function of its [`ExperimentConfig`]: instance
//! seeds are derived from the configured seeds and the sweep coordinates, so
//! a rerun with the same config produces byte-identical reports.

use rand::Rng as _;

use crate::alloc::{assign_rows, deviation, AllocScheme};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::flgw::GroupingPair;
use crate::matrix::Matrix;
use crate::osel::{self, EncodeMode};
use crate::report::{Metric, ReportRow};
use crate::rng;
use crate::train;
use crate::vpu::{self, CoreConfig, Precision};

/// Rows plus any per-run artifact files (e.g. training timelines) and the
/// number of verification failures.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchOutput {
    pub rows: Vec<ReportRow>,
    /// `(file name, contents)` pairs written next to the report.
    pub artifacts: Vec<(String, String)>,
    /// Oracle-equivalence failures; non-zero means verification failed.
    pub failures: usize,
}

impl BenchOutput {
    fn new() -> Self {
        BenchOutput {
            rows: Vec::new(),
            artifacts: Vec::new(),
            failures: 0,
        }
    }
}

fn check_groups_fit(cfg: &ExperimentConfig) -> Result<()> {
    let max = cfg.m.min(cfg.n);
    for &g in &cfg.g_list {
        if g > max {
            return Err(Error::InvalidGroupCount { groups: g, max });
        }
    }
    Ok(())
}

/// Encoder benchmark: measured hit/miss cycles for a concrete instance per
/// group count, the analytic model in both modes, and the memory footprint.
pub fn run_encode_bench(cfg: &ExperimentConfig) -> Result<BenchOutput> {
    cfg.validate()?;
    check_groups_fit(cfg)?;
    let mut out = BenchOutput::new();
    let seed = cfg.seeds[0];
    for &g in &cfg.g_list {
        let instance_seed = rng::derive(seed, &[1, g as u64]);
        let gp = GroupingPair::init(cfg.m, cfg.n, g, instance_seed)?;
        let row_max = gp.row_max_indexes();
        let col_max = gp.col_max_indexes();
        let (_, _, stats) = osel::encode_forward(&row_max, &col_max, &cfg.cycle)?;
        let base = format!("m={};n={};g={};seed={}", cfg.m, cfg.n, g, seed);
        out.rows.push(ReportRow::new(
            "encode-bench",
            format!("{base};mode=osel;kind=measured"),
            Metric::Cycles,
            stats.cycles.total() as f64,
            "cycles",
        ));
        for (mode, name) in [(EncodeMode::Osel, "osel"), (EncodeMode::Baseline, "baseline")] {
            let model = osel::cycle_model(cfg.m, cfg.n, g, mode, &cfg.cycle)?;
            out.rows.push(ReportRow::new(
                "encode-bench",
                format!("{base};mode={name};kind=model"),
                Metric::Cycles,
                model.cycles.total() as f64,
                "cycles",
            ));
        }
        let mask = gp.mask();
        let footprint = osel::memory_footprint(cfg.m, cfg.n, g, cfg.weight_bits, Some(&mask))?;
        let flag = if footprint.beyond_hardware_envelope {
            ";envelope=beyond"
        } else {
            ""
        };
        out.rows.push(ReportRow::new(
            "encode-bench",
            format!("{base};accounting=actual{flag}"),
            Metric::CompressionRatio,
            footprint.compression_ratio,
            "x",
        ));
    }
    Ok(out)
}

/// Allocation benchmark: mean max deviation of the row-based and
/// threshold-based schemes over Monte Carlo trials per sweep cell.
pub fn run_alloc_bench(cfg: &ExperimentConfig) -> Result<BenchOutput> {
    cfg.validate()?;
    check_groups_fit(cfg)?;
    let mut out = BenchOutput::new();
    let seed = cfg.seeds[0];
    for &g in &cfg.g_list {
        for &c in &cfg.c_list {
            let mut sums = [0.0f64; 2];
            for trial in 0..cfg.alloc_trials {
                let instance_seed = rng::derive(seed, &[2, g as u64, c as u64, trial as u64]);
                let gp = GroupingPair::init(cfg.m, cfg.n, g, instance_seed)?;
                let (srm, idx, _) = osel::encode_forward(
                    &gp.row_max_indexes(),
                    &gp.col_max_indexes(),
                    &cfg.cycle,
                )?;
                for (slot, scheme) in
                    [AllocScheme::RowBased, AllocScheme::ThresholdBased].into_iter().enumerate()
                {
                    let a = assign_rows(&srm, &idx, c, scheme)?;
                    sums[slot] += deviation(&a).max_deviation;
                }
            }
            for (slot, name) in ["row", "threshold"].into_iter().enumerate() {
                out.rows.push(ReportRow::new(
                    "alloc-bench",
                    format!(
                        "m={};n={};g={};c={};seed={};scheme={};trials={}",
                        cfg.m, cfg.n, g, c, seed, name, cfg.alloc_trials
                    ),
                    Metric::MaxDeviation,
                    sums[slot] / cfg.alloc_trials as f64,
                    "elements",
                ));
            }
        }
    }
    Ok(out)
}

fn fp32_core(core: &CoreConfig) -> CoreConfig {
    CoreConfig {
        precision: Precision::Fp32,
        ..core.clone()
    }
}

fn int_core(core: &CoreConfig) -> CoreConfig {
    CoreConfig {
        precision: Precision::Int,
        ..core.clone()
    }
}

/// Tolerance scaled by accumulated magnitude; see the simulator tests.
fn within_fp32_tolerance(got: &[f64], want: &[f64], mags: &[f64]) -> bool {
    got.iter()
        .zip(want)
        .zip(mags)
        .all(|((&g, &w), &m)| (g - w).abs() <= 1e-5 * w.abs().max(m).max(1.0))
}

fn masked_matvec(w: &Matrix, mask: &crate::flgw::MaskMatrix, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut y = vec![0.0; w.cols()];
    let mut mags = vec![0.0; w.cols()];
    for (i, &xi) in x.iter().enumerate() {
        for j in 0..w.cols() {
            if mask.get(i, j) {
                let term = xi * w.get(i, j);
                y[j] += term;
                mags[j] += term.abs();
            }
        }
    }
    (y, mags)
}

/// Simulated-vs-oracle verification plus the utilization and
/// speedup-over-dense sweep at the configured shape.
pub fn run_spmv_verify(cfg: &ExperimentConfig) -> Result<BenchOutput> {
    cfg.validate()?;
    check_groups_fit(cfg)?;
    let mut out = BenchOutput::new();
    let seed = cfg.seeds[0];

    // oracle equivalence over random small instances, fp32 and integer modes
    let glen = cfg.g_list.len();
    let clen = cfg.c_list.len();
    let mut passed = 0usize;
    for case in 0..cfg.spmv_cases {
        let g = cfg.g_list[case % glen];
        let c = cfg.c_list[(case / glen) % clen];
        let mut case_rng = rng::rng_from_seed(rng::derive(seed, &[3, case as u64]));
        let m = case_rng.random_range(g.max(1)..=cfg.spmv_max_m.max(g));
        let n = case_rng.random_range(g.max(1)..=cfg.spmv_max_n.max(g));
        let gp = GroupingPair::init(m, n, g, rng::derive(seed, &[4, case as u64]))?;
        let mask = gp.mask();

        let w = Matrix::from_fn(m, n, |_, _| case_rng.random::<f64>() * 2.0 - 1.0);
        let x: Vec<f64> = (0..m).map(|_| case_rng.random::<f64>() * 2.0 - 1.0).collect();
        let (y, _) = vpu::spmv(&w, &gp, &x, c, &fp32_core(&cfg.core), &cfg.cycle)?;
        let (oracle, mags) = masked_matvec(&w, &mask, &x);
        let fp_ok = within_fp32_tolerance(&y, &oracle, &mags);

        let wi = Matrix::from_fn(m, n, |_, _| case_rng.random_range(-8i64..=8) as f64);
        let xi: Vec<f64> = (0..m).map(|_| case_rng.random_range(-8i64..=8) as f64).collect();
        let (yi, _) = vpu::spmv(&wi, &gp, &xi, c, &int_core(&cfg.core), &cfg.cycle)?;
        let (oracle_i, _) = masked_matvec(&wi, &mask, &xi);
        let int_ok = yi == oracle_i;

        if fp_ok && int_ok {
            passed += 1;
        } else {
            out.failures += 1;
        }
    }
    out.rows.push(ReportRow::new(
        "spmv-verify",
        format!("phase=oracle;cases={};seed={}", cfg.spmv_cases, seed),
        Metric::SuccessRate,
        passed as f64 / cfg.spmv_cases as f64 * 100.0,
        "percent",
    ));

    // utilization and speedup at the configured shape
    let mut perf_rng = rng::rng_from_seed(rng::derive(seed, &[5]));
    let w = Matrix::from_fn(cfg.m, cfg.n, |_, _| perf_rng.random::<f64>() * 2.0 - 1.0);
    let x: Vec<f64> = (0..cfg.m).map(|_| perf_rng.random::<f64>() * 2.0 - 1.0).collect();
    for &c in &cfg.c_list {
        let dense_gp = GroupingPair::init(cfg.m, cfg.n, 1, rng::derive(seed, &[6]))?;
        let (_, dense_report) = vpu::spmv(&w, &dense_gp, &x, c, &cfg.core, &cfg.cycle)?;
        let dense_params = format!("m={};n={};g=1;c={};seed={}", cfg.m, cfg.n, c, seed);
        out.rows.push(ReportRow::new(
            "spmv-verify",
            dense_params.clone(),
            Metric::Cycles,
            dense_report.cycles as f64,
            "cycles",
        ));
        out.rows.push(ReportRow::new(
            "spmv-verify",
            dense_params,
            Metric::Utilization,
            dense_report.utilization,
            "fraction",
        ));
        for &g in &cfg.g_list {
            if g == 1 {
                continue;
            }
            let gp = GroupingPair::init(cfg.m, cfg.n, g, rng::derive(seed, &[7, g as u64]))?;
            let (_, report) = vpu::spmv(&w, &gp, &x, c, &cfg.core, &cfg.cycle)?;
            let params = format!("m={};n={};g={};c={};seed={}", cfg.m, cfg.n, g, c, seed);
            out.rows.push(ReportRow::new(
                "spmv-verify",
                params.clone(),
                Metric::Cycles,
                report.cycles as f64,
                "cycles",
            ));
            out.rows.push(ReportRow::new(
                "spmv-verify",
                params.clone(),
                Metric::Utilization,
                report.utilization,
                "fraction",
            ));
            out.rows.push(ReportRow::new(
                "spmv-verify",
                params,
                Metric::SpeedupVsDense,
                dense_report.cycles as f64 / report.cycles as f64,
                "x",
            ));
        }
    }
    Ok(out)
}

/// Training sweep over `(G, seed)` cells; emits final success and density
/// rows plus one timeline CSV artifact per run.
pub fn run_train(cfg: &ExperimentConfig) -> Result<BenchOutput> {
    cfg.validate()?;
    let mut out = BenchOutput::new();
    for &g in &cfg.g_list {
        for &seed in &cfg.seeds {
            let tcfg = cfg.train_config(g, seed);
            let timeline = train::train_loop(&tcfg)?;
            let final_success = final_window_mean(&timeline, |m| m.success_rate);
            let final_density = timeline.last().map_or(1.0, |m| m.density);
            let params = format!(
                "g={};seed={};agents={};iterations={}",
                g, seed, cfg.train_agents, cfg.train_iterations
            );
            out.rows.push(ReportRow::new(
                "train",
                params.clone(),
                Metric::SuccessRate,
                final_success,
                "percent",
            ));
            out.rows.push(ReportRow::new(
                "train",
                params,
                Metric::Density,
                final_density,
                "fraction",
            ));
            out.artifacts.push((
                format!("train_g{g}_seed{seed}.csv"),
                train::timeline_to_csv(&timeline),
            ));
        }
    }
    Ok(out)
}

/// Mean of a metric over the final fifth of a timeline.
pub fn final_window_mean(
    timeline: &train::Timeline,
    metric: impl Fn(&train::IterationMetrics) -> f64,
) -> f64 {
    if timeline.is_empty() {
        return 0.0;
    }
    let window = (timeline.len() / 5).max(1);
    let tail = &timeline[timeline.len() - window..];
    tail.iter().map(metric).sum::<f64>() / tail.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::report::rows_to_csv;

    fn tiny_config() -> ExperimentConfig {
        ExperimentConfig {
            m: 32,
            n: 48,
            g_list: vec![2, 4],
            c_list: vec![2],
            seeds: vec![1],
            spmv_cases: 24,
            spmv_max_m: 24,
            spmv_max_n: 24,
            alloc_trials: 8,
            train_iterations: 3,
            train_batch_episodes: 2,
            train_hidden: 8,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn encode_bench_emits_rows_per_group_count() {
        let out = run_encode_bench(&tiny_config()).unwrap();
        let cycles = out
            .rows
            .iter()
            .filter(|r| r.metric == Metric::Cycles)
            .count();
        // measured + two model rows per g
        assert_eq!(cycles, 2 * 3);
        assert_eq!(
            out.rows
                .iter()
                .filter(|r| r.metric == Metric::CompressionRatio)
                .count(),
            2
        );
        assert_eq!(out.failures, 0);
    }

    #[test]
    fn empty_g_list_is_config_error() {
        let cfg = ExperimentConfig {
            g_list: vec![],
            ..tiny_config()
        };
        assert!(run_encode_bench(&cfg).is_err());
        assert!(run_alloc_bench(&cfg).is_err());
        assert!(run_spmv_verify(&cfg).is_err());
        assert!(run_train(&cfg).is_err());
    }

    #[test]
    fn oversized_group_count_is_config_error() {
        let cfg = ExperimentConfig {
            m: 8,
            n: 8,
            g_list: vec![16],
            ..tiny_config()
        };
        assert!(run_encode_bench(&cfg).is_err());
    }

    #[test]
    fn encode_bench_rerun_is_byte_identical() {
        let cfg = tiny_config();
        let a = run_encode_bench(&cfg).unwrap();
        let b = run_encode_bench(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(rows_to_csv(&a.rows), rows_to_csv(&b.rows));
    }

    #[test]
    fn alloc_bench_covers_cells() {
        let out = run_alloc_bench(&tiny_config()).unwrap();
        assert_eq!(out.rows.len(), 2 * 2);
        assert!(out
            .rows
            .iter()
            .all(|r| r.metric == Metric::MaxDeviation && r.value >= 0.0));
    }

    #[test]
    fn spmv_verify_passes_oracle_checks() {
        let out = run_spmv_verify(&tiny_config()).unwrap();
        assert_eq!(out.failures, 0);
        let oracle_row = out
            .rows
            .iter()
            .find(|r| r.params.starts_with("phase=oracle"))
            .unwrap();
        assert_eq!(oracle_row.value, 100.0);
        assert!(out.rows.iter().any(|r| r.metric == Metric::SpeedupVsDense));
    }

    #[test]
    fn train_bench_emits_rows_and_timelines() {
        let out = run_train(&tiny_config()).unwrap();
        assert_eq!(out.rows.len(), 2 * 2);
        assert_eq!(out.artifacts.len(), 2);
        for r in &out.rows {
            assert!(r.value >= 0.0 && r.value <= 100.0);
        }
        for (name, content) in &out.artifacts {
            assert!(name.starts_with("train_g"));
            assert!(content.starts_with("iteration,success_rate,mean_reward,density\n"));
        }
    }

    #[test]
    fn spmv_verify_rerun_is_byte_identical() {
        let cfg = tiny_config();
        let a = run_spmv_verify(&cfg).unwrap();
        let b = run_spmv_verify(&cfg).unwrap();
        assert_eq!(rows_to_csv(&a.rows), rows_to_csv(&b.rows));
    }
}
