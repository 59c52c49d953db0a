//! Experiment configuration file.
//!
//! A plain sectioned key/value format:
//!
//! ```text
//! # comment
//! [experiment]
//! m = 128
//! n = 512
//! g_list = 2,4,8,16,32
//! c_list = 3
//! seeds = 1,2,3,4,5
//! weight_bits = 16
//! [cycle]
//! comparators = 16
//! fetch_width = 8
//! [core]
//! vpu_count = 264
//! precision = fp16
//! [train]
//! agents = 2
//! iterations = 300
//! [spmv]
//! cases = 500
//! [alloc]
//! trials = 100
//! ```
//!
//! Unknown sections or keys are errors, lists are comma-separated, later
//! assignments win, and CLI flags override file values. [`to_config_string`]
//! emits a canonical form that parses back to an equal value.
//!
//! [`to_config_string`]: ExperimentConfig::to_config_string

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::osel::CycleParams;
use crate::train::rmsprop::RmspropParams;
use crate::vpu::{CoreConfig, Precision};

/// Knobs for one batch experiment run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Layer rows.
    pub m: usize,
    /// Layer columns.
    pub n: usize,
    /// Group counts to sweep.
    pub g_list: Vec<usize>,
    /// Core counts to sweep.
    pub c_list: Vec<usize>,
    /// Seeds to sweep.
    pub seeds: Vec<u64>,
    /// Stored bits per weight for footprint accounting.
    pub weight_bits: u32,
    pub cycle: CycleParams,
    pub core: CoreConfig,
    /// Agents in the toy task.
    pub train_agents: usize,
    pub train_grid: usize,
    pub train_horizon: usize,
    pub train_hidden: usize,
    pub train_batch_episodes: usize,
    pub train_iterations: usize,
    pub train_comm: bool,
    pub rmsprop: RmspropParams,
    /// Oracle-equivalence cases for the spmv verifier.
    pub spmv_cases: usize,
    pub spmv_max_m: usize,
    pub spmv_max_n: usize,
    /// Monte Carlo trials per cell for the allocation bench.
    pub alloc_trials: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            m: 128,
            n: 512,
            g_list: vec![2, 4, 8, 16, 32],
            c_list: vec![3],
            seeds: vec![1, 2, 3, 4, 5],
            weight_bits: 16,
            cycle: CycleParams::default(),
            core: CoreConfig::default(),
            train_agents: 2,
            train_grid: 5,
            train_horizon: 20,
            train_hidden: 32,
            train_batch_episodes: 16,
            train_iterations: 300,
            train_comm: true,
            rmsprop: RmspropParams::default(),
            spmv_cases: 500,
            spmv_max_m: 64,
            spmv_max_n: 64,
            alloc_trials: 100,
        }
    }
}

impl ExperimentConfig {
    /// Largest layer dimension a config may request. Keeps runaway sweeps
    /// from allocating past desk scale.
    pub const MAX_DIM: usize = 1 << 20;

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 {
            return Err(Error::Config("m and n must be positive".into()));
        }
        if self.m > Self::MAX_DIM
            || self.n > Self::MAX_DIM
            || self.spmv_max_m > Self::MAX_DIM
            || self.spmv_max_n > Self::MAX_DIM
        {
            return Err(Error::Config(format!(
                "layer dimensions capped at {}",
                Self::MAX_DIM
            )));
        }
        if self.g_list.is_empty() || self.c_list.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config(
                "g_list, c_list, and seeds must be non-empty".into(),
            ));
        }
        for &g in &self.g_list {
            if g == 0 || g > crate::flgw::MAX_GROUPS {
                return Err(Error::InvalidGroupCount {
                    groups: g,
                    max: crate::flgw::MAX_GROUPS,
                });
            }
        }
        if self.c_list.contains(&0) {
            return Err(Error::InvalidCoreCount { cores: 0 });
        }
        if self.weight_bits == 0 {
            return Err(Error::Config("weight_bits must be positive".into()));
        }
        if self.spmv_cases == 0 || self.spmv_max_m == 0 || self.spmv_max_n == 0 {
            return Err(Error::Config("spmv knobs must be positive".into()));
        }
        if self.alloc_trials == 0 {
            return Err(Error::Config("alloc trials must be positive".into()));
        }
        if self.train_agents == 0
            || self.train_grid < 2
            || self.train_horizon == 0
            || self.train_hidden == 0
            || self.train_batch_episodes == 0
        {
            return Err(Error::Config("degenerate train section".into()));
        }
        self.cycle.validate()?;
        self.core.validate()?;
        Ok(())
    }

    /// Parse the sectioned key/value text. Strict: unknown sections, unknown
    /// keys, bad numbers, and keys outside any section are all errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut section: Option<&str> = None;
        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| Error::parse(lineno, "unterminated section header"))?
                    .trim();
                section = Some(match name {
                    "experiment" => "experiment",
                    "cycle" => "cycle",
                    "core" => "core",
                    "train" => "train",
                    "spmv" => "spmv",
                    "alloc" => "alloc",
                    other => {
                        return Err(Error::parse(lineno, format!("unknown section [{other}]")))
                    }
                });
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(lineno, "expected `key = value`"))?;
            let key = key.trim();
            let value = value.trim();
            let section =
                section.ok_or_else(|| Error::parse(lineno, "key before any [section]"))?;
            cfg.apply(section, key, value, lineno)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, section: &str, key: &str, value: &str, lineno: usize) -> Result<()> {
        match (section, key) {
            ("experiment", "m") => self.m = parse_num(value, lineno)?,
            ("experiment", "n") => self.n = parse_num(value, lineno)?,
            ("experiment", "g_list") => self.g_list = parse_list(value, lineno)?,
            ("experiment", "c_list") => self.c_list = parse_list(value, lineno)?,
            ("experiment", "seeds") => self.seeds = parse_list(value, lineno)?,
            ("experiment", "weight_bits") => self.weight_bits = parse_num(value, lineno)?,
            ("cycle", "comparators") => self.cycle.comparators = parse_num(value, lineno)?,
            ("cycle", "fetch_width") => self.cycle.fetch_width = parse_num(value, lineno)?,
            ("cycle", "miss_cycles") => self.cycle.miss_cycles = parse_num(value, lineno)?,
            ("cycle", "hit_cycles") => self.cycle.hit_cycles = parse_num(value, lineno)?,
            ("core", "vpu_count") => self.core.vpu_count = parse_num(value, lineno)?,
            ("core", "rows_per_wave") => self.core.rows_per_wave = parse_num(value, lineno)?,
            ("core", "weight_load_cycles") => {
                self.core.weight_load_cycles = parse_num(value, lineno)?
            }
            ("core", "precision") => {
                self.core.precision = match value {
                    "fp32" => Precision::Fp32,
                    "fp16" => Precision::Fp16Fp32,
                    "int" => Precision::Int,
                    other => {
                        return Err(Error::parse(
                            lineno,
                            format!("unknown precision {other:?} (fp32|fp16|int)"),
                        ))
                    }
                }
            }
            ("train", "agents") => self.train_agents = parse_num(value, lineno)?,
            ("train", "grid") => self.train_grid = parse_num(value, lineno)?,
            ("train", "horizon") => self.train_horizon = parse_num(value, lineno)?,
            ("train", "hidden") => self.train_hidden = parse_num(value, lineno)?,
            ("train", "batch_episodes") => self.train_batch_episodes = parse_num(value, lineno)?,
            ("train", "iterations") => self.train_iterations = parse_num(value, lineno)?,
            ("train", "comm") => self.train_comm = parse_bool(value, lineno)?,
            ("train", "learning_rate") => self.rmsprop.learning_rate = parse_f64(value, lineno)?,
            ("train", "decay") => self.rmsprop.decay = parse_f64(value, lineno)?,
            ("train", "epsilon") => self.rmsprop.epsilon = parse_f64(value, lineno)?,
            ("spmv", "cases") => self.spmv_cases = parse_num(value, lineno)?,
            ("spmv", "max_m") => self.spmv_max_m = parse_num(value, lineno)?,
            ("spmv", "max_n") => self.spmv_max_n = parse_num(value, lineno)?,
            ("alloc", "trials") => self.alloc_trials = parse_num(value, lineno)?,
            (section, key) => {
                return Err(Error::parse(
                    lineno,
                    format!("unknown key {key:?} in section [{section}]"),
                ))
            }
        }
        Ok(())
    }

    /// Canonical serialization; `parse` of the output reproduces `self`.
    pub fn to_config_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "[experiment]");
        let _ = writeln!(out, "m = {}", self.m);
        let _ = writeln!(out, "n = {}", self.n);
        let _ = writeln!(out, "g_list = {}", join(&self.g_list));
        let _ = writeln!(out, "c_list = {}", join(&self.c_list));
        let _ = writeln!(out, "seeds = {}", join(&self.seeds));
        let _ = writeln!(out, "weight_bits = {}", self.weight_bits);
        let _ = writeln!(out, "[cycle]");
        let _ = writeln!(out, "comparators = {}", self.cycle.comparators);
        let _ = writeln!(out, "fetch_width = {}", self.cycle.fetch_width);
        let _ = writeln!(out, "miss_cycles = {}", self.cycle.miss_cycles);
        let _ = writeln!(out, "hit_cycles = {}", self.cycle.hit_cycles);
        let _ = writeln!(out, "[core]");
        let _ = writeln!(out, "vpu_count = {}", self.core.vpu_count);
        let _ = writeln!(out, "rows_per_wave = {}", self.core.rows_per_wave);
        let _ = writeln!(out, "weight_load_cycles = {}", self.core.weight_load_cycles);
        let precision = match self.core.precision {
            Precision::Fp32 => "fp32",
            Precision::Fp16Fp32 => "fp16",
            Precision::Int => "int",
        };
        let _ = writeln!(out, "precision = {precision}");
        let _ = writeln!(out, "[train]");
        let _ = writeln!(out, "agents = {}", self.train_agents);
        let _ = writeln!(out, "grid = {}", self.train_grid);
        let _ = writeln!(out, "horizon = {}", self.train_horizon);
        let _ = writeln!(out, "hidden = {}", self.train_hidden);
        let _ = writeln!(out, "batch_episodes = {}", self.train_batch_episodes);
        let _ = writeln!(out, "iterations = {}", self.train_iterations);
        let _ = writeln!(out, "comm = {}", self.train_comm);
        let _ = writeln!(out, "learning_rate = {}", self.rmsprop.learning_rate);
        let _ = writeln!(out, "decay = {}", self.rmsprop.decay);
        let _ = writeln!(out, "epsilon = {}", self.rmsprop.epsilon);
        let _ = writeln!(out, "[spmv]");
        let _ = writeln!(out, "cases = {}", self.spmv_cases);
        let _ = writeln!(out, "max_m = {}", self.spmv_max_m);
        let _ = writeln!(out, "max_n = {}", self.spmv_max_n);
        let _ = writeln!(out, "[alloc]");
        let _ = writeln!(out, "trials = {}", self.alloc_trials);
        out
    }

    /// Train config for one sweep cell.
    pub fn train_config(&self, groups: usize, seed: u64) -> crate::train::TrainConfig {
        crate::train::TrainConfig {
            agents: self.train_agents,
            grid: self.train_grid,
            horizon: self.train_horizon,
            hidden: self.train_hidden,
            groups,
            batch_episodes: self.train_batch_episodes,
            iterations: self.train_iterations,
            seed,
            use_comm: self.train_comm,
            rmsprop: self.rmsprop,
        }
    }
}

fn parse_num<T: std::str::FromStr>(value: &str, lineno: usize) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::parse(lineno, format!("bad number {value:?}")))
}

fn parse_f64(value: &str, lineno: usize) -> Result<f64> {
    let v: f64 = value
        .parse()
        .map_err(|_| Error::parse(lineno, format!("bad number {value:?}")))?;
    if !v.is_finite() {
        return Err(Error::parse(lineno, "value must be finite"));
    }
    Ok(v)
}

fn parse_bool(value: &str, lineno: usize) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(Error::parse(lineno, format!("bad bool {other:?}"))),
    }
}

fn parse_list<T: std::str::FromStr>(value: &str, lineno: usize) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| Error::parse(lineno, format!("bad list entry {s:?}")))
        })
        .collect()
}

fn join<T: std::fmt::Display>(list: &[T]) -> String {
    list.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}
