//! Scaling benchmark harness.
//!
//! A matrix file lists one case per line as `n decomp p [p1 p2]`, with `#`
//! comments. Each case runs Taylor-Green steps on the in-process backend
//! and reports the mean wall time of the bare step loop, the first
//! [`WARMUP_STEPS`] steps excluded. A failing case is recorded and the
//! harness moves on.

use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::app::config::pencil_grid;
use crate::app::run::{first_cause, WARMUP_STEPS};
use crate::error::{ConfigError, Result};
use crate::grid::{Decomp, SolverConfig};
use crate::integrate::{rk4_step, Rk4State};
use crate::ns_core::NsSolver;
use crate::transport::{launch, Communicator, LocalOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchCase {
    pub n: usize,
    pub decomp: Decomp,
    pub p: usize,
    pub p1: Option<usize>,
    pub p2: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub n: usize,
    pub decomp: Decomp,
    pub p: usize,
    pub p1: usize,
    pub p2: usize,
    /// `n^3 / p`
    pub mesh_per_rank: f64,
    pub steps: u64,
    /// Mean over ranks of each rank's mean step time; NaN on failure.
    pub s_per_step: f64,
    /// `ok` or the error message.
    pub status: String,
}

impl BenchRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

pub const CSV_HEADER: &str = "n,decomp,p,p1,p2,mesh_per_rank,steps,s_per_step,status";

pub fn parse_matrix(text: &str) -> Result<Vec<BenchCase>, ConfigError> {
    let mut cases = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let syntax = || ConfigError::Syntax { line: i + 1, text: raw.trim().to_string() };
        let f: Vec<&str> = line.split(|c: char| c.is_whitespace() || c == ',').filter(|s| !s.is_empty()).collect();
        if f.len() != 3 && f.len() != 5 {
            return Err(syntax());
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| syntax());
        cases.push(BenchCase {
            n: num(f[0])?,
            decomp: f[1].parse()?,
            p: num(f[2])?,
            p1: f.get(3).map(|s| num(s)).transpose()?,
            p2: f.get(4).map(|s| num(s)).transpose()?,
        });
    }
    Ok(cases)
}

fn case_config(c: &BenchCase) -> Result<SolverConfig> {
    let cfg = SolverConfig::taylor_green(c.n);
    let cfg = match c.decomp {
        Decomp::Slab => cfg.with_slab(c.p),
        Decomp::Pencil => {
            let (p1, p2) = pencil_grid(Some(c.p), c.p1, c.p2)?;
            if p1 * p2 != c.p {
                return Err(ConfigError::invalid("p", format!("pencil needs p = p1 * p2 (p = {}, p1 = {p1}, p2 = {p2})", c.p)).into());
            }
            cfg.with_pencil(p1, p2)
        }
    };
    cfg.validate()?;
    Ok(cfg)
}

fn time_rank<C: Communicator>(cfg: &SolverConfig, comm: C, steps: u64) -> Result<f64> {
    let mut solver = NsSolver::new(cfg, comm)?;
    let u_hat = solver.initial_condition()?;
    let mut state = Rk4State::new(u_hat, 0.0);
    let mut total = 0.0;
    for s in 0..WARMUP_STEPS + steps {
        let start = Instant::now();
        rk4_step(&mut state, cfg.dt, &mut solver)?;
        if s >= WARMUP_STEPS {
            total += start.elapsed().as_secs_f64();
        }
    }
    let mean = total / steps as f64;
    Ok(solver.world.allreduce_sum_scalar(mean)? / solver.world.size() as f64)
}

/// Times one case on `p` in-process ranks.
pub fn bench_case(c: &BenchCase, steps: u64, transport: &LocalOptions) -> BenchRow {
    let (p1, p2) = match c.decomp {
        Decomp::Slab => (c.p, 1),
        Decomp::Pencil => pencil_grid(Some(c.p), c.p1, c.p2).unwrap_or((c.p1.unwrap_or(0), c.p2.unwrap_or(0))),
    };
    let mut row = BenchRow {
        n: c.n,
        decomp: c.decomp,
        p: c.p,
        p1,
        p2,
        mesh_per_rank: (c.n as f64).powi(3) / c.p.max(1) as f64,
        steps,
        s_per_step: f64::NAN,
        status: "ok".into(),
    };
    let outcome = (|| -> Result<f64> {
        if steps == 0 {
            return Err(ConfigError::invalid("steps", "must be at least 1").into());
        }
        let cfg = case_config(c)?;
        let results = launch(cfg.p, transport.clone(), |comm| time_rank(&cfg, comm, steps));
        let mut value = f64::NAN;
        let mut errors = Vec::new();
        for r in results {
            match r {
                Ok(v) => value = v,
                Err(e) => errors.push(e),
            }
        }
        if errors.is_empty() {
            Ok(value)
        } else {
            Err(first_cause(errors))
        }
    })();
    match outcome {
        Ok(v) => row.s_per_step = v,
        Err(e) => {
            log::warn!("bench case n={} {} p={} failed: {e}", c.n, c.decomp, c.p);
            row.status = e.to_string().replace([',', '\n'], ";");
        }
    }
    row
}

pub fn bench(cases: &[BenchCase], steps: u64, transport: &LocalOptions) -> Vec<BenchRow> {
    cases
        .iter()
        .map(|c| {
            let row = bench_case(c, steps, transport);
            log::info!("n={} {} p={}: {} s/step ({})", row.n, row.decomp, row.p, row.s_per_step, row.status);
            row
        })
        .collect()
}

pub fn csv_row(r: &BenchRow) -> String {
    let t = if r.s_per_step.is_nan() { String::new() } else { format!("{:e}", r.s_per_step) };
    format!("{},{},{},{},{},{},{},{},{}", r.n, r.decomp, r.p, r.p1, r.p2, r.mesh_per_rank, r.steps, t, r.status)
}

pub fn write_bench_csv(path: &Path, rows: &[BenchRow]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(f, "{}", csv_row(r))?;
    }
    f.flush()?;
    Ok(())
}
