//! Full simulation runs: workers, diagnostics CSV, checkpoints, manifest.

use std::fmt;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;

use crate::app::checkpoint::write_checkpoint;
use crate::diagnostics::{collect, shell_count, FlowStats};
use crate::error::{ConfigError, Error, Result, TransportError};
use crate::grid::SolverConfig;
use crate::integrate::{advance_step, step_count, Rk4State};
use crate::ns_core::NsSolver;
use crate::transport::{launch, Communicator, LocalOptions, Loopback};

/// Steps excluded from timing statistics (plan and cache warmup).
pub const WARMUP_STEPS: u64 = 5;

pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
pub const FINAL_CHECKPOINT: &str = "final.chk";
pub const LAST_GOOD_CHECKPOINT: &str = "last_good.chk";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    /// One rank, no transport.
    Loopback,
    /// `p` worker threads in this process.
    Local,
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backend::Loopback => "loopback",
            Backend::Local => "local",
        })
    }
}

impl FromStr for Backend {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s.trim().to_ascii_lowercase().as_str() {
            "loopback" => Ok(Backend::Loopback),
            "local" => Ok(Backend::Local),
            other => Err(ConfigError::invalid("backend", format!("expected `local` or `loopback`, got `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub backend: Backend,
    pub out_dir: PathBuf,
    pub transport: LocalOptions,
}

impl RunOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        RunOptions {
            backend: Backend::Local,
            out_dir: out_dir.into(),
            transport: LocalOptions::default(),
        }
    }
}

/// Seconds per step, reduced over ranks from each rank's own mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepTiming {
    pub timed_steps: u64,
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunOutputs {
    pub diagnostics: Option<PathBuf>,
    pub checkpoint: PathBuf,
    pub manifest: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub version: String,
    pub git: Option<String>,
    pub backend: Backend,
    pub config: SolverConfig,
    pub steps: u64,
    pub t_final: f64,
    /// `None` when the run has no steps past warmup.
    pub step_seconds: Option<StepTiming>,
    pub outputs: RunOutputs,
}

/// What one rank brings back from a run.
#[derive(Debug, Clone)]
pub struct RankReport {
    pub records: Vec<FlowStats>,
    pub steps: u64,
    pub t_final: f64,
    pub step_seconds: Option<StepTiming>,
}

pub fn csv_header(n: usize) -> String {
    let mut cols = vec!["step".to_string(), "t".into(), "E".into(), "Z".into(), "eps".into(), "div_max".into()];
    cols.extend((0..shell_count(n)).map(|s| format!("s{s}")));
    cols.join(",")
}

/// One CSV row. Floats are written in exponent form with the shortest
/// digits that round-trip.
pub fn csv_row(s: &FlowStats) -> String {
    let mut out = format!("{},{:e},{:e},{:e},{:e},{:e}", s.step, s.t, s.energy, s.enstrophy, s.dissipation, s.div_max);
    for v in &s.spectrum {
        out.push_str(&format!(",{v:e}"));
    }
    out
}

fn write_csv(path: &Path, n: usize, records: &[FlowStats]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{}", csv_header(n))?;
    for r in records {
        writeln!(f, "{}", csv_row(r))?;
    }
    f.flush()?;
    Ok(())
}

fn reduce_timing<C: Communicator>(comm: &C, samples: &[f64]) -> Result<Option<StepTiming>> {
    if samples.is_empty() {
        return Ok(None);
    }
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    let mut mx = [mean, -mean];
    comm.allreduce_max(&mut mx)?;
    let sum = comm.allreduce_sum_scalar(mean)?;
    Ok(Some(StepTiming {
        timed_steps: samples.len() as u64,
        min: -mx[1],
        mean: sum / comm.size() as f64,
        max: mx[0],
    }))
}

/// The per-rank body of a run. Collective over `comm`; rank 0 writes files.
pub fn run_rank<C: Communicator>(cfg: &SolverConfig, comm: C, out_dir: &Path) -> Result<RankReport> {
    let mut solver = NsSolver::new(cfg, comm)?;
    let root = solver.world.rank() == 0;
    let u_hat = solver.initial_condition()?;
    let mut state = Rk4State::new(u_hat, 0.0);
    let steps = step_count(cfg.t_end, cfg.dt);

    let mut records = vec![collect(&state.u, &solver.wm, cfg.nu, 0, 0.0, &solver.world)?];
    let mut samples = Vec::new();
    let mut outcome = Ok(());
    for s in 1..=steps {
        let start = Instant::now();
        match advance_step(&mut state, 0.0, s, steps, cfg.dt, cfg.t_end, &mut solver) {
            Ok(()) => {}
            Err(e @ Error::Divergence { .. }) => {
                outcome = Err(e);
                break;
            }
            Err(e) => return Err(e),
        }
        if s > WARMUP_STEPS {
            samples.push(start.elapsed().as_secs_f64());
        }
        if s % cfg.out_every as u64 == 0 || s == steps {
            records.push(collect(&state.u, &solver.wm, cfg.nu, state.step, state.t, &solver.world)?);
            log::debug!("step {} t {} E {}", state.step, state.t, records.last().unwrap().energy);
        }
    }

    let diverged = outcome.is_err();
    if steps > 0 && root {
        write_csv(&out_dir.join(DIAGNOSTICS_FILE), cfg.n, &records)?;
    }
    let chk = out_dir.join(if diverged { LAST_GOOD_CHECKPOINT } else { FINAL_CHECKPOINT });
    let u = solver.inverse(&state.u)?;
    write_checkpoint(&chk, cfg, &solver.world, &u, state.t, state.step)?;
    outcome?;

    let step_seconds = reduce_timing(&solver.world, &samples)?;
    Ok(RankReport { records, steps: state.step, t_final: state.t, step_seconds })
}

fn git_stamp() -> Option<String> {
    let out = std::process::Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .stderr(std::process::Stdio::null())
        .output()
        .ok()?;
    out.status.success().then(|| String::from_utf8_lossy(&out.stdout).trim().to_string())
}

/// Picks the most informative failure: a peer's `Aborted` only echoes the
/// error of the rank that stopped first.
pub(crate) fn first_cause(errors: Vec<Error>) -> Error {
    let is_echo = |e: &Error| matches!(e, Error::Transport(TransportError::Aborted { .. }));
    let mut errors = errors;
    match errors.iter().position(|e| !is_echo(e)) {
        Some(i) => errors.swap_remove(i),
        None => errors.swap_remove(0),
    }
}

/// Runs every rank on the selected backend and returns rank 0's report.
pub fn run_ranks(cfg: &SolverConfig, opts: &RunOptions) -> Result<RankReport> {
    cfg.validate()?;
    std::fs::create_dir_all(&opts.out_dir)?;
    match opts.backend {
        Backend::Loopback => {
            if cfg.p != 1 {
                return Err(ConfigError::invalid("backend", format!("loopback runs a single rank, config has p = {}", cfg.p)).into());
            }
            run_rank(cfg, Loopback, &opts.out_dir)
        }
        Backend::Local => {
            let results = launch(cfg.p, opts.transport.clone(), |comm| run_rank(cfg, comm, &opts.out_dir));
            let mut reports = Vec::new();
            let mut errors = Vec::new();
            for r in results {
                match r {
                    Ok(rep) => reports.push(rep),
                    Err(e) => errors.push(e),
                }
            }
            if !errors.is_empty() {
                return Err(first_cause(errors));
            }
            Ok(reports.swap_remove(0))
        }
    }
}

/// Runs `cfg` to `t_end` and writes the CSV, final checkpoint and manifest
/// into `opts.out_dir`.
pub fn run(cfg: &SolverConfig, opts: &RunOptions) -> Result<RunManifest> {
    let report = run_ranks(cfg, opts)?;
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        git: git_stamp(),
        backend: opts.backend,
        config: cfg.clone(),
        steps: report.steps,
        t_final: report.t_final,
        step_seconds: report.step_seconds,
        outputs: RunOutputs {
            diagnostics: (report.steps > 0).then(|| opts.out_dir.join(DIAGNOSTICS_FILE)),
            checkpoint: opts.out_dir.join(FINAL_CHECKPOINT),
            manifest: opts.out_dir.join(MANIFEST_FILE),
        },
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Io(e.into()))?;
    std::fs::write(&manifest.outputs.manifest, text + "\n")?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::app::checkpoint::read_checkpoint;

    #[test]
    fn short_run_writes_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = SolverConfig::taylor_green(8);
        cfg.t_end = 7e-3;
        cfg.out_every = 3;
        let mut opts = RunOptions::new(dir.path());
        opts.backend = Backend::Loopback;
        let m = run(&cfg, &opts).unwrap();
        assert_eq!(m.steps, 7);
        assert_eq!(m.t_final, 7e-3);
        assert_eq!(m.step_seconds.unwrap().timed_steps, 2);

        let csv = std::fs::read_to_string(dir.path().join(DIAGNOSTICS_FILE)).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], csv_header(8));
        assert!(lines[0].starts_with("step,t,E,Z,eps,div_max,s0,s1,"));
        let steps: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
        assert_eq!(steps, ["0", "3", "6", "7"]);
        let cols = lines[0].split(',').count();
        assert!(lines.iter().all(|l| l.split(',').count() == cols));

        let (_, h) = read_checkpoint(&dir.path().join(FINAL_CHECKPOINT), &cfg, &Loopback).unwrap();
        assert_eq!((h.step, h.t), (7, 7e-3));
        let manifest: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
        assert_eq!(manifest["config"]["n"], 8);
        assert_eq!(manifest["backend"], "loopback");
    }

    #[test]
    fn zero_length_run() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = SolverConfig::taylor_green(8);
        cfg.t_end = 0.0;
        let m = run(&cfg, &RunOptions::new(dir.path())).unwrap();
        assert_eq!((m.steps, m.step_seconds), (0, None));
        assert!(dir.path().join(MANIFEST_FILE).exists());
        assert!(dir.path().join(FINAL_CHECKPOINT).exists());
        assert!(!dir.path().join(DIAGNOSTICS_FILE).exists());
    }

    #[test]
    fn divergence_keeps_last_good_state() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = SolverConfig::taylor_green(8).with_slab(2);
        cfg.dt = 1e3;
        cfg.t_end = 1e5;
        cfg.nu = 0.0;
        cfg.dealias = false;
        let err = run(&cfg, &RunOptions::new(dir.path())).unwrap_err();
        let Error::Divergence { step } = err else { panic!("unexpected {err}") };
        let (u, h) = read_checkpoint(&dir.path().join(LAST_GOOD_CHECKPOINT), &cfg, &Loopback).unwrap();
        assert_eq!(h.step, step - 1);
        assert!(u.components().iter().all(|c| c.iter().all(|v| v.is_finite())));
        assert!(!dir.path().join(MANIFEST_FILE).exists());
    }

    #[test]
    fn loopback_needs_one_rank() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SolverConfig::taylor_green(8).with_slab(2);
        let mut opts = RunOptions::new(dir.path());
        opts.backend = Backend::Loopback;
        assert!(matches!(run(&cfg, &opts), Err(Error::Config(_))));
    }
}
