use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sdns::app::{self, Backend, ConfigValues, RunOptions};
use sdns::{Case, Decomp};

#[derive(Parser)]
#[command(name = "sdns", version, about = "Pseudo-spectral Navier-Stokes solver for triply periodic boxes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation from a config file. Flags override the file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        decomp: Option<Decomp>,
        #[arg(long)]
        p: Option<usize>,
        #[arg(long)]
        p1: Option<usize>,
        #[arg(long)]
        p2: Option<usize>,
        #[arg(long, conflicts_with = "nu")]
        re: Option<f64>,
        #[arg(long)]
        nu: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        t_end: Option<f64>,
        #[arg(long)]
        dealias: Option<bool>,
        #[arg(long)]
        case: Option<Case>,
        #[arg(long)]
        out_every: Option<usize>,
        #[arg(long, default_value = "local")]
        backend: Backend,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Time the step loop for each `n decomp p [p1 p2]` line of a matrix file.
    Bench {
        #[arg(long)]
        matrix: PathBuf,
        /// Timed steps per case, after warmup.
        #[arg(long, default_value_t = 10)]
        steps: u64,
        #[arg(long, default_value = "bench.csv")]
        out: PathBuf,
    },
    /// Run the built-in correctness checks.
    Verify,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn execute(cmd: Command) -> sdns::Result<ExitCode> {
    match cmd {
        Command::Run { config, n, decomp, p, p1, p2, re, nu, dt, t_end, dealias, case, out_every, backend, out } => {
            let flags = ConfigValues { n, decomp, p, p1, p2, nu, re, dt, t_end, dealias, case, out_every };
            let cfg = app::parse_config(&config, &flags)?;
            log::info!("n = {} {} p = {} ({} x {}) nu = {} dt = {} t_end = {}", cfg.n, cfg.decomp, cfg.p, cfg.p1, cfg.p2, cfg.nu, cfg.dt, cfg.t_end);
            let opts = RunOptions { backend, ..RunOptions::new(out) };
            let m = app::run(&cfg, &opts)?;
            match m.step_seconds {
                Some(t) => println!("{} steps to t = {}, {:.3e} s/step (min {:.3e}, max {:.3e})", m.steps, m.t_final, t.mean, t.min, t.max),
                None => println!("{} steps to t = {}", m.steps, m.t_final),
            }
            println!("manifest: {}", m.outputs.manifest.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Bench { matrix, steps, out } => {
            let text = std::fs::read_to_string(&matrix)?;
            let cases = app::parse_matrix(&text)?;
            let rows = app::bench(&cases, steps, &Default::default());
            app::write_bench_csv(&out, &rows)?;
            let failed = rows.iter().filter(|r| !r.is_ok()).count();
            println!("{} cases, {} failed, written to {}", rows.len(), failed, out.display());
            Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Verify => {
            let checks = sdns::verify::run_suite();
            for c in &checks {
                println!("{} {:<36} {} [{:.1}s]", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail, c.seconds);
            }
            let ok = checks.iter().all(|c| c.passed);
            Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
    }
}
