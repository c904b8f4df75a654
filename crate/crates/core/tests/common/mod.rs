//! Oracles shared by the integration tests. Nothing here calls into the
//! solver's transforms or diagnostics.

#![allow(dead_code)]

use std::f64::consts::PI;

use ndarray::{s, Array3};
use num_complex::Complex64 as C64;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use sdns::grid::{build_layout, Block3};
use sdns::SolverConfig;

pub fn random_global(n: usize, seed: u64) -> Array3<f64> {
    let mut rng = StdRng::seed_from_u64(seed);
    Array3::from_shape_simple_fn((n, n, n), || rng.random_range(-1.0..1.0))
}

/// Direct summation along one axis, `exp(-2 pi i j k / len)`, twiddles taken
/// modulo `len` so the angle stays small.
fn dft_axis(a: &Array3<C64>, axis: usize, keep: usize) -> Array3<C64> {
    let len = a.shape()[axis];
    let mut shape = [a.shape()[0], a.shape()[1], a.shape()[2]];
    shape[axis] = keep;
    let tw: Vec<C64> = (0..len).map(|m| C64::from_polar(1.0, -2.0 * PI * m as f64 / len as f64)).collect();
    Array3::from_shape_fn((shape[0], shape[1], shape[2]), |(i, j, l)| {
        let mut idx = [i, j, l];
        let k = idx[axis];
        let mut acc = C64::new(0.0, 0.0);
        for m in 0..len {
            idx[axis] = m;
            acc += a[idx] * tw[(k * m) % len];
        }
        acc
    })
}

/// Unnormalized forward transform of a real `n^3` array, half spectrum in z.
pub fn naive_forward(u: &Array3<f64>) -> Array3<C64> {
    let n = u.shape()[2];
    let c = u.mapv(|v| C64::new(v, 0.0));
    let z = dft_axis(&c, 2, n / 2 + 1);
    let y = dft_axis(&z, 1, n);
    dft_axis(&y, 0, n)
}

pub fn real_block(cfg: &SolverConfig, rank: usize) -> Block3 {
    build_layout(cfg, rank).unwrap().real
}

pub fn spec_block(cfg: &SolverConfig, rank: usize) -> Block3 {
    build_layout(cfg, rank).unwrap().spec
}

pub fn cut<T: Clone>(global: &Array3<T>, b: &Block3) -> Array3<T> {
    global
        .slice(s![
            b.offset[0]..b.offset[0] + b.shape[0],
            b.offset[1]..b.offset[1] + b.shape[1],
            b.offset[2]..b.offset[2] + b.shape[2]
        ])
        .to_owned()
}

pub fn paste<T: Clone>(global: &mut Array3<T>, b: &Block3, local: &Array3<T>) {
    global
        .slice_mut(s![
            b.offset[0]..b.offset[0] + b.shape[0],
            b.offset[1]..b.offset[1] + b.shape[1],
            b.offset[2]..b.offset[2] + b.shape[2]
        ])
        .assign(local);
}

/// Box-mean kinetic energy `<|u|^2>/2` straight from samples.
pub fn physical_energy(u: &[Array3<f64>]) -> f64 {
    let count = u[0].len() as f64;
    0.5 * u.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>()).sum::<f64>() / count
}

/// `sqrt(<|a - b|^2>)`
pub fn rms_diff(a: &[Array3<f64>], b: &[Array3<f64>]) -> f64 {
    let count = a[0].len() as f64;
    let s: f64 = a.iter().zip(b).map(|(x, y)| x.iter().zip(y.iter()).map(|(p, q)| (p - q) * (p - q)).sum::<f64>()).sum();
    (s / count).sqrt()
}

pub fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

/// Parsed diagnostics CSV: header and numeric rows.
pub struct Csv {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Csv {
    pub fn read(path: &std::path::Path) -> Csv {
        let text = std::fs::read_to_string(path).unwrap();
        let mut lines = text.lines();
        let header: Vec<String> = lines.next().unwrap().split(',').map(String::from).collect();
        let rows = lines
            .map(|l| l.split(',').map(|v| v.parse::<f64>().unwrap()).collect::<Vec<_>>())
            .collect();
        Csv { header, rows }
    }

    pub fn col(&self, name: &str) -> Vec<f64> {
        let i = self.header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"));
        self.rows.iter().map(|r| r[i]).collect()
    }
}
