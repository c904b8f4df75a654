//! Global flow statistics. Every function here is collective over `comm`
//! and returns the same value on every rank.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::WavenumberMesh;
use crate::ns_core::{RealField3, SpectralField3};
use crate::transport::Communicator;
use crate::Complex;

/// Statistics of one recorded state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowStats {
    pub step: u64,
    pub t: f64,
    /// Box-mean kinetic energy `<|u|^2>/2`.
    pub energy: f64,
    /// `<|omega|^2>/2`
    pub enstrophy: f64,
    /// `2 nu Z`
    pub dissipation: f64,
    pub div_max: f64,
    /// Energy per integer shell `round(|k|) = s`.
    pub spectrum: Vec<f64>,
}

/// Number of spectrum shells for an `n^3` box, enough to hold the corner mode.
pub fn shell_count(n: usize) -> usize {
    (3f64.sqrt() * n as f64 / 2.0).round() as usize + 1
}

fn norm_factor(n: usize) -> f64 {
    let n3 = (n * n * n) as f64;
    0.5 / (n3 * n3)
}

fn mode_energy(u: &SpectralField3, m: usize) -> f64 {
    let s = |c: usize| u[c].as_slice().expect("standard layout")[m].norm_sqr();
    s(0) + s(1) + s(2)
}

fn vorticity_energy(u: &SpectralField3, k: [f64; 3], m: usize) -> f64 {
    let c = |c: usize| u[c].as_slice().expect("standard layout")[m];
    let (a, b, d) = (c(0), c(1), c(2));
    let w: [Complex; 3] = [b * k[2] - d * k[1], d * k[0] - a * k[2], a * k[1] - b * k[0]];
    w.iter().map(|v| v.norm_sqr()).sum()
}

/// Visits every stored mode as `(flat index, k, hermitian weight)`.
fn for_each_mode(wm: &WavenumberMesh, mut f: impl FnMut(usize, [f64; 3], f64)) {
    let [nx, ny, nz] = wm.shape();
    for i in 0..nx {
        for j in 0..ny {
            for l in 0..nz {
                f((i * ny + j) * nz + l, wm.k(i, j, l), wm.hermitian_weight(l));
            }
        }
    }
}

fn local_energy(u: &SpectralField3, wm: &WavenumberMesh) -> f64 {
    let mut e = 0.0;
    for_each_mode(wm, |m, _, w| e += w * mode_energy(u, m));
    e * norm_factor(wm.n)
}

fn local_enstrophy(u: &SpectralField3, wm: &WavenumberMesh) -> f64 {
    let mut z = 0.0;
    for_each_mode(wm, |m, k, w| z += w * vorticity_energy(u, k, m));
    z * norm_factor(wm.n)
}

fn local_divergence(u: &SpectralField3, wm: &WavenumberMesh) -> f64 {
    let mut worst: f64 = 0.0;
    for_each_mode(wm, |m, k, _| {
        let kn = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]).sqrt();
        if kn == 0.0 {
            return;
        }
        let c = |c: usize| u[c].as_slice().expect("standard layout")[m];
        let d = c(0) * k[0] + c(1) * k[1] + c(2) * k[2];
        worst = worst.max(d.norm() / (kn * mode_energy(u, m).sqrt() + f64::EPSILON));
    });
    worst
}

fn local_spectrum(u: &SpectralField3, wm: &WavenumberMesh, out: &mut [f64]) {
    let f = norm_factor(wm.n);
    for_each_mode(wm, |m, k, w| {
        let s = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]).sqrt().round() as usize;
        out[s] += f * w * mode_energy(u, m);
    });
}

pub fn energy<C: Communicator>(u: &SpectralField3, wm: &WavenumberMesh, comm: &C) -> Result<f64> {
    Ok(comm.allreduce_sum_scalar(local_energy(u, wm))?)
}

pub fn enstrophy<C: Communicator>(u: &SpectralField3, wm: &WavenumberMesh, comm: &C) -> Result<f64> {
    Ok(comm.allreduce_sum_scalar(local_enstrophy(u, wm))?)
}

/// Largest `|k . u_hat| / (|k| |u_hat| + eps)` over nonzero modes.
pub fn divergence_norm<C: Communicator>(u: &SpectralField3, wm: &WavenumberMesh, comm: &C) -> Result<f64> {
    Ok(comm.allreduce_max_scalar(local_divergence(u, wm))?)
}

pub fn spectrum<C: Communicator>(u: &SpectralField3, wm: &WavenumberMesh, comm: &C) -> Result<Vec<f64>> {
    let mut shells = vec![0.0; shell_count(wm.n)];
    local_spectrum(u, wm, &mut shells);
    comm.allreduce_sum(&mut shells)?;
    Ok(shells)
}

/// Box-mean `<|u|^2>/2` evaluated directly on physical samples.
pub fn physical_energy<C: Communicator>(u: &RealField3, n: usize, comm: &C) -> Result<f64> {
    let local: f64 = u.components().iter().map(|c| c.iter().map(|v| v * v).sum::<f64>()).sum();
    Ok(0.5 * comm.allreduce_sum_scalar(local)? / (n * n * n) as f64)
}

/// `sqrt(<|a - b|^2>)` over the box.
pub fn l2_diff<C: Communicator>(a: &RealField3, b: &RealField3, n: usize, comm: &C) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::layout(format!("l2_diff of shapes {:?} and {:?}", a.shape(), b.shape())));
    }
    let mut local = 0.0;
    for c in 0..3 {
        local += a[c].iter().zip(b[c].iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    }
    let total = comm.allreduce_sum_scalar(local)?;
    Ok((total / (n * n * n) as f64).sqrt())
}

/// All statistics with one sum and one max reduction.
pub fn collect<C: Communicator>(
    u: &SpectralField3,
    wm: &WavenumberMesh,
    nu: f64,
    step: u64,
    t: f64,
    comm: &C,
) -> Result<FlowStats> {
    let k = shell_count(wm.n);
    let mut sums = vec![0.0; k + 2];
    sums[0] = local_energy(u, wm);
    sums[1] = local_enstrophy(u, wm);
    local_spectrum(u, wm, &mut sums[2..]);
    comm.allreduce_sum(&mut sums)?;
    let div_max = comm.allreduce_max_scalar(local_divergence(u, wm))?;
    Ok(FlowStats {
        step,
        t,
        energy: sums[0],
        enstrophy: sums[1],
        dissipation: 2.0 * nu * sums[1],
        div_max,
        spectrum: sums[2..].to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use ndarray::Array3;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    use super::*;
    use crate::grid::SolverConfig;
    use crate::ns_core::{project, NsSolver};
    use crate::transport::Loopback;

    fn solver(n: usize) -> NsSolver<Loopback> {
        NsSolver::new(&SolverConfig::taylor_green(n), Loopback).unwrap()
    }

    fn random_real(s: &NsSolver<Loopback>, seed: u64) -> RealField3 {
        let mut rng = StdRng::seed_from_u64(seed);
        let shape = s.dfft.real_shape();
        RealField3::from_components(std::array::from_fn(|_| {
            Array3::from_shape_simple_fn((shape[0], shape[1], shape[2]), || rng.random_range(-1.0..1.0))
        }))
    }

    #[test]
    fn zero_field() {
        let s = solver(8);
        let z = s.zeros_spectral();
        assert_eq!(energy(&z, &s.wm, &Loopback).unwrap(), 0.0);
        assert_eq!(enstrophy(&z, &s.wm, &Loopback).unwrap(), 0.0);
        assert_eq!(divergence_norm(&z, &s.wm, &Loopback).unwrap(), 0.0);
        assert!(spectrum(&z, &s.wm, &Loopback).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn taylor_green_statistics() {
        let mut s = solver(32);
        let u_hat = s.initial_condition().unwrap();
        let st = collect(&u_hat, &s.wm, s.cfg.nu, 0, 0.0, &Loopback).unwrap();
        assert!((st.energy - 0.125).abs() <= 1e-12);
        // omega = (-cos x sin y sin z, -sin x cos y sin z, 2 sin x sin y cos z): <|omega|^2> = 3/4.
        assert!((st.enstrophy - 0.375).abs() <= 1e-12, "{}", st.enstrophy);
        assert_eq!(st.dissipation, 2.0 * s.cfg.nu * st.enstrophy);
        assert!(st.div_max <= 1e-14, "{}", st.div_max);
        assert_eq!(st.spectrum.len(), shell_count(32));
        let total: f64 = st.spectrum.iter().sum();
        assert!(((total - st.energy) / st.energy).abs() <= 1e-12);
        // |k| = sqrt(3) rounds to shell 2.
        assert!((st.spectrum[2] - 0.125).abs() <= 1e-12);
        assert!(st.spectrum.iter().enumerate().all(|(i, &v)| i == 2 || v < 1e-25));
    }

    #[test]
    fn shells() {
        assert_eq!(shell_count(8), 8);
        assert_eq!(shell_count(32), 29);
        let mut s = solver(8);
        let mut u = s.zeros_real();
        for ((_, _, k), v) in u[0].indexed_iter_mut() {
            *v = s.mesh.z[k].cos();
        }
        let h = s.forward(&u).unwrap();
        let sp = spectrum(&h, &s.wm, &Loopback).unwrap();
        assert!((sp[1] - 0.25).abs() < 1e-14);
        assert!(sp.iter().enumerate().all(|(i, &v)| i == 1 || v < 1e-28));
    }

    #[test]
    fn parseval_on_random_fields() {
        let mut s = solver(16);
        for seed in 0..5 {
            let u = random_real(&s, seed);
            let h = s.forward(&u).unwrap();
            let es = energy(&h, &s.wm, &Loopback).unwrap();
            let ep = physical_energy(&u, 16, &Loopback).unwrap();
            assert!(((es - ep) / ep).abs() <= 1e-12);
            let sp: f64 = spectrum(&h, &s.wm, &Loopback).unwrap().iter().sum();
            assert!(((sp - es) / es).abs() <= 1e-12);
        }
    }

    #[test]
    fn divergence_of_projected_and_gradient_fields() {
        let mut s = solver(16);
        let u = random_real(&s, 7);
        let mut h = s.forward(&u).unwrap();
        project(&mut h, &s.wm);
        assert!(divergence_norm(&h, &s.wm, &Loopback).unwrap() <= 1e-14);

        let mut g = s.zeros_spectral();
        let mut rng = StdRng::seed_from_u64(1);
        for ((i, j, l), _) in s.wm.k2.indexed_iter() {
            let k = s.wm.k(i, j, l);
            let a = Complex::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            for c in 0..3 {
                g[c][[i, j, l]] = a * k[c];
            }
        }
        let d = divergence_norm(&g, &s.wm, &Loopback).unwrap();
        assert!((d - 1.0).abs() < 1e-12, "{d}");
    }

    #[test]
    fn l2_norms() {
        let s = solver(8);
        let tg = crate::ns_core::taylor_green_init(s.layout(), &s.mesh);
        assert_eq!(l2_diff(&tg, &tg, 8, &Loopback).unwrap(), 0.0);
        let zero = s.zeros_real();
        assert!((l2_diff(&tg, &zero, 8, &Loopback).unwrap() - 0.5).abs() < 1e-14);
        let mut shifted = tg.clone();
        for c in 0..3 {
            shifted[c].mapv_inplace(|v| v + 0.3);
        }
        assert!((l2_diff(&shifted, &tg, 8, &Loopback).unwrap() - 0.3 * 3f64.sqrt()).abs() < 1e-14);
        assert!(l2_diff(&tg, &crate::ns_core::RealField3::zeros([4, 8, 8]), 8, &Loopback).is_err());
    }
}
