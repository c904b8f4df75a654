//! Quick self-check suite behind `sdns verify`: reduced-size versions of the
//! solver's correctness properties, each reported as pass or fail.

use std::time::Instant;

use ndarray::{s, Array3};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::app::checkpoint::{read_checkpoint, write_checkpoint};
use crate::app::run::first_cause;
use crate::diagnostics::{collect, divergence_norm, energy, l2_diff, physical_energy, FlowStats};
use crate::error::Result;
use crate::fft::{DistributedFft, SerialFft};
use crate::grid::SolverConfig;
use crate::integrate::{advance, Rk4State};
use crate::ns_core::{NsSolver, RealField3};
use crate::transport::{launch, BlockBuffer, Communicator, LocalComm, LocalOptions, Loopback};
use crate::Complex;

#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

fn check(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> Check {
    let start = Instant::now();
    let (passed, detail) = match f() {
        Ok(v) => v,
        Err(e) => (false, format!("error: {e}")),
    };
    Check { name, passed, detail, seconds: start.elapsed().as_secs_f64() }
}

fn on_ranks<R: Send>(cfg: &SolverConfig, f: impl Fn(LocalComm) -> Result<R> + Sync) -> Result<Vec<R>> {
    let mut out = Vec::new();
    let mut errors = Vec::new();
    for r in launch(cfg.p, LocalOptions::default(), f) {
        match r {
            Ok(v) => out.push(v),
            Err(e) => errors.push(e),
        }
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(first_cause(errors))
    }
}

fn random_global(n: usize, seed: u64) -> Array3<f64> {
    let mut rng = StdRng::seed_from_u64(seed);
    Array3::from_shape_simple_fn((n, n, n), || rng.random_range(-1.0..1.0))
}

fn max_rel(a: impl Iterator<Item = f64>, scale: f64) -> f64 {
    a.fold(0.0, f64::max) / scale
}

/// Distributed transforms against the serial transform of the gathered field.
fn fft_matches_serial(cfg: &SolverConfig) -> Result<f64> {
    let n = cfg.n;
    let global = random_global(n, 17);
    let reference = SerialFft::new().forward_3d(&global);
    let scale = reference.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let errs = on_ranks(cfg, |comm| {
        let mut fft = DistributedFft::new(cfg, &comm)?;
        let l = fft.layout().clone();
        let (r, sp) = (l.real, l.spec);
        let local = global
            .slice(s![r.offset[0]..r.offset[0] + r.shape[0], r.offset[1]..r.offset[1] + r.shape[1], ..])
            .to_owned();
        let mut spec = Array3::<Complex>::zeros((sp.shape[0], sp.shape[1], sp.shape[2]));
        fft.forward(&local, &mut spec)?;
        let want = reference.slice(s![
            ..,
            sp.offset[1]..sp.offset[1] + sp.shape[1],
            sp.offset[2]..sp.offset[2] + sp.shape[2]
        ]);
        let fwd = max_rel(spec.iter().zip(want.iter()).map(|(a, b)| (a - b).norm()), scale);
        let mut back = Array3::zeros((r.shape[0], r.shape[1], r.shape[2]));
        fft.inverse(&spec, &mut back)?;
        let rt = max_rel(back.iter().zip(local.iter()).map(|(a, b)| (a - b).abs()), 1.0);
        Ok(fwd.max(rt))
    })?;
    Ok(errs.into_iter().fold(0.0, f64::max))
}

fn tg_records(cfg: &SolverConfig, steps: u64) -> Result<Vec<FlowStats>> {
    let mut cfg = cfg.clone();
    cfg.t_end = steps as f64 * cfg.dt;
    let mut all = on_ranks(&cfg, |comm| {
        let mut s = NsSolver::new(&cfg, comm)?;
        let mut st = Rk4State::new(s.initial_condition()?, 0.0);
        let mut rec = Vec::new();
        let (wm, nu) = (s.wm.clone(), cfg.nu);
        let world = s.world.split(0, 0)?;
        advance(&mut st, cfg.dt, cfg.t_end, cfg.out_every, &mut s, |st| {
            rec.push(collect(&st.u, &wm, nu, st.step, st.t, &world)?);
            Ok(())
        })?;
        Ok(rec)
    })?;
    Ok(all.swap_remove(0))
}

fn rel_diff(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

fn stats_diff(a: &[FlowStats], b: &[FlowStats]) -> f64 {
    let mut worst: f64 = 0.0;
    for (x, y) in a.iter().zip(b) {
        worst = worst.max(rel_diff(x.energy, y.energy)).max(rel_diff(x.enstrophy, y.enstrophy));
        worst = worst.max(rel_diff(x.div_max, y.div_max));
        for (p, q) in x.spectrum.iter().zip(&y.spectrum) {
            // Shells holding only roundoff are compared on the energy scale.
            worst = worst.max((p - q).abs() / p.abs().max(q.abs()).max(1e-12 * x.energy));
        }
    }
    if a.len() != b.len() {
        f64::INFINITY
    } else {
        worst
    }
}

fn tg_final(dt: f64, t_end: f64, n: usize) -> Result<RealField3> {
    let cfg = SolverConfig::taylor_green(n);
    let mut s = NsSolver::new(&cfg, Loopback)?;
    let mut st = Rk4State::new(s.initial_condition()?, 0.0);
    advance(&mut st, dt, t_end, usize::MAX, &mut s, |_| Ok(()))?;
    s.inverse(&st.u)
}

fn transport_trials(trials: u64) -> Result<(bool, String)> {
    let mut rng = StdRng::seed_from_u64(99);
    for trial in 0..trials {
        let size = rng.random_range(1..=8usize);
        let table: Vec<Vec<usize>> = (0..size).map(|_| (0..size).map(|_| rng.random_range(0..4)).collect()).collect();
        let opts = LocalOptions { perturb_seed: Some(trial), ..LocalOptions::default() };
        let table = &table;
        let results = launch(size, opts, move |c: LocalComm| -> Result<bool> {
            let me = c.rank();
            let send: Vec<Vec<f64>> = (0..size)
                .map(|j| (0..table[me][j]).map(|k| (me * 100 + j * 10 + k) as f64).collect())
                .collect();
            let recv_counts: Vec<usize> = (0..size).map(|i| table[i][me]).collect();
            let got = c.all_to_all(BlockBuffer::from_blocks(send), &recv_counts)?;
            let mut ok = (0..size).all(|i| {
                got.block(i).iter().enumerate().all(|(k, &v)| v == (i * 100 + me * 10 + k) as f64)
            });
            let total = c.allreduce_sum_scalar(me as f64)?;
            ok &= total == (size * (size - 1) / 2) as f64;
            let root = size - 1;
            let b = c.broadcast(if me == root { vec![trial as f64] } else { vec![] }, root)?;
            ok &= b == vec![trial as f64];
            let sub = c.split((me % 2) as u64, -(me as i64))?;
            let expected = (size - me % 2).div_ceil(2);
            ok &= sub.size() == expected;
            ok &= sub.allreduce_max_scalar(me as f64)? == (me % 2 + 2 * (expected - 1)) as f64;
            Ok(ok)
        });
        for r in results {
            if !r? {
                return Ok((false, format!("trial {trial} (size {size}) delivered wrong data")));
            }
        }
    }
    Ok((true, format!("{trials} randomized trials")))
}

/// Runs every check. Sizes are small enough for a few seconds on one core.
pub fn run_suite() -> Vec<Check> {
    let mut out = Vec::new();
    out.push(check("fft matches serial oracle", || {
        let cases = [
            SolverConfig::taylor_green(16).with_slab(4),
            SolverConfig::taylor_green(16).with_pencil(2, 2),
            SolverConfig::taylor_green(8).with_pencil(2, 4),
        ];
        let mut worst: f64 = 0.0;
        for c in &cases {
            worst = worst.max(fft_matches_serial(c)?);
        }
        Ok((worst <= 1e-12, format!("max relative error {worst:.2e} (tol 1e-12)")))
    }));
    out.push(check("parseval", || {
        let mut s = NsSolver::new(&SolverConfig::taylor_green(16), Loopback)?;
        let mut worst: f64 = 0.0;
        for seed in 0..5 {
            let u = RealField3::from_components(std::array::from_fn(|c| random_global(16, seed * 3 + c as u64)));
            let h = s.forward(&u)?;
            let es = energy(&h, &s.wm, &Loopback)?;
            let ep = physical_energy(&u, 16, &Loopback)?;
            worst = worst.max(rel_diff(es, ep));
        }
        Ok((worst <= 1e-12, format!("max relative error {worst:.2e} (tol 1e-12)")))
    }));
    out.push(check("taylor-green energy and divergence", || {
        let mut cfg = SolverConfig::taylor_green(16);
        cfg.out_every = 1;
        let rec = tg_records(&cfg, 20)?;
        let e0 = (rec[0].energy - 0.125).abs();
        let div = rec.iter().map(|r| r.div_max).fold(0.0, f64::max);
        let mono = rec.windows(2).all(|w| w[1].energy <= w[0].energy);
        Ok((
            e0 <= 1e-12 && div <= 1e-10 && mono,
            format!("|E(0) - 0.125| = {e0:.1e}, max div {div:.1e}, E nonincreasing: {mono}"),
        ))
    }));
    out.push(check("rk4 order", || {
        let (n, t) = (16, 0.1);
        let reference = tg_final(1e-3 / 16.0, t, n)?;
        let errs: Vec<f64> = [4e-3, 2e-3, 1e-3]
            .iter()
            .map(|&dt| l2_diff(&tg_final(dt, t, n)?, &reference, n, &Loopback))
            .collect::<Result<_>>()?;
        let slope = (errs[0] / errs[2]).log2() / 2.0;
        let shown: Vec<String> = errs.iter().map(|e| format!("{e:.2e}")).collect();
        Ok(((slope - 4.0).abs() <= 0.3, format!("observed order {slope:.3} (errors {})", shown.join(", "))))
    }));
    out.push(check("parallel invariance", || {
        let base = tg_records(&SolverConfig::taylor_green(16), 20)?;
        let slab = tg_records(&SolverConfig::taylor_green(16).with_slab(4), 20)?;
        let pencil = tg_records(&SolverConfig::taylor_green(16).with_pencil(2, 2), 20)?;
        let d = stats_diff(&base, &slab).max(stats_diff(&base, &pencil));
        Ok((d <= 1e-12, format!("max relative difference {d:.2e} (tol 1e-12)")))
    }));
    out.push(check("checkpoint portability", || {
        let dir = std::env::temp_dir().join(format!("sdns-verify-{}", std::process::id()));
        std::fs::create_dir_all(&dir)?;
        let path = dir.join("portable.chk");
        let n = 16;
        let global: [Array3<f64>; 3] = std::array::from_fn(|c| random_global(n, 40 + c as u64));
        let slab = SolverConfig::taylor_green(n).with_slab(4);
        on_ranks(&slab, |comm| {
            let l = crate::grid::build_layout(&slab, comm.rank())?;
            let r = l.real;
            let u = RealField3::from_components(std::array::from_fn(|c| {
                global[c].slice(s![r.offset[0]..r.offset[0] + r.shape[0], .., ..]).to_owned()
            }));
            write_checkpoint(&path, &slab, &comm, &u, 0.5, 5)
        })?;
        let pencil = SolverConfig::taylor_green(n).with_pencil(2, 2);
        let same = on_ranks(&pencil, |comm| {
            let (u, _) = read_checkpoint(&path, &pencil, &comm)?;
            let r = crate::grid::build_layout(&pencil, comm.rank())?.real;
            Ok((0..3).all(|c| {
                let want = global[c].slice(s![
                    r.offset[0]..r.offset[0] + r.shape[0],
                    r.offset[1]..r.offset[1] + r.shape[1],
                    ..
                ]);
                u[c].iter().zip(want.iter()).all(|(a, b)| a.to_bits() == b.to_bits())
            }))
        })?;
        let _ = std::fs::remove_dir_all(&dir);
        let ok = same.iter().all(|&b| b);
        Ok((ok, "slab 4 -> pencil 2x2, bitwise".to_string()))
    }));
    out.push(check("transport conformance", || transport_trials(200)));
    out.push(check("divergence of a pure gradient", || {
        let mut s = NsSolver::new(&SolverConfig::taylor_green(8), Loopback)?;
        let mut g = s.zeros_spectral();
        for ((i, j, l), _) in s.wm.k2.indexed_iter() {
            let k = s.wm.k(i, j, l);
            for c in 0..3 {
                g[c][[i, j, l]] = Complex::new(k[c], 0.5 * k[c]);
            }
        }
        let d = divergence_norm(&g, &s.wm, &Loopback)?;
        let _ = &mut s;
        Ok(((d - 1.0).abs() < 1e-12, format!("normalized divergence {d:.15}")))
    }));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes() {
        for c in run_suite() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
