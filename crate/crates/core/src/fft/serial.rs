use std::collections::HashMap;
use std::sync::Arc;

use ndarray::{Array3, Axis};
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::{Fft, FftPlanner};

use crate::Complex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Forward,
    Inverse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Kind {
    R2c,
    C2r,
    C2c(Direction),
}

#[derive(Clone)]
enum Plan {
    C2c(Arc<dyn Fft<f64>>),
    R2c(Arc<dyn RealToComplex<f64>>),
    C2r(Arc<dyn ComplexToReal<f64>>),
}

/// One-dimensional transforms applied along an axis of a 3D array, with
/// plans and line buffers cached per instance.
pub struct SerialFft {
    complex_planner: FftPlanner<f64>,
    real_planner: RealFftPlanner<f64>,
    plans: HashMap<(usize, Kind), Plan>,
    line: Vec<Complex>,
    real_line: Vec<f64>,
    scratch: Vec<Complex>,
}

impl Default for SerialFft {
    fn default() -> Self {
        Self::new()
    }
}

impl SerialFft {
    pub fn new() -> Self {
        SerialFft {
            complex_planner: FftPlanner::new(),
            real_planner: RealFftPlanner::new(),
            plans: HashMap::new(),
            line: Vec::new(),
            real_line: Vec::new(),
            scratch: Vec::new(),
        }
    }

    fn plan(&mut self, len: usize, kind: Kind) -> Plan {
        if let Some(p) = self.plans.get(&(len, kind)) {
            return p.clone();
        }
        let plan = match kind {
            Kind::C2c(Direction::Forward) => Plan::C2c(self.complex_planner.plan_fft_forward(len)),
            Kind::C2c(Direction::Inverse) => Plan::C2c(self.complex_planner.plan_fft_inverse(len)),
            Kind::R2c => Plan::R2c(self.real_planner.plan_fft_forward(len)),
            Kind::C2r => Plan::C2r(self.real_planner.plan_fft_inverse(len)),
        };
        let scratch = match &plan {
            Plan::C2c(p) => p.get_inplace_scratch_len(),
            Plan::R2c(p) => p.get_scratch_len(),
            Plan::C2r(p) => p.get_scratch_len(),
        };
        if self.scratch.len() < scratch {
            self.scratch.resize(scratch, Complex::default());
        }
        self.plans.insert((len, kind), plan.clone());
        plan
    }

    /// Number of cached plans.
    pub fn cached_plans(&self) -> usize {
        self.plans.len()
    }

    /// Complex transform of every lane along `axis`, in place.
    pub fn c2c(&mut self, data: &mut Array3<Complex>, axis: usize, dir: Direction) {
        let len = data.len_of(Axis(axis));
        if len == 0 || data.is_empty() {
            return;
        }
        let Plan::C2c(plan) = self.plan(len, Kind::C2c(dir)) else { unreachable!() };
        let scale = 1.0 / len as f64;
        self.line.resize(len, Complex::default());
        let scratch_len = plan.get_inplace_scratch_len();
        for mut lane in data.lanes_mut(Axis(axis)) {
            let scratch = &mut self.scratch[..scratch_len];
            if let Some(s) = lane.as_slice_mut() {
                plan.process_with_scratch(s, scratch);
                if dir == Direction::Inverse {
                    s.iter_mut().for_each(|v| *v *= scale);
                }
                continue;
            }
            for (d, s) in self.line.iter_mut().zip(lane.iter()) {
                *d = *s;
            }
            plan.process_with_scratch(&mut self.line, scratch);
            match dir {
                Direction::Forward => lane.iter_mut().zip(&self.line).for_each(|(d, s)| *d = *s),
                Direction::Inverse => lane.iter_mut().zip(&self.line).for_each(|(d, s)| *d = *s * scale),
            }
        }
    }

    /// Real-to-complex transform along the last axis: `(a, b, n) -> (a, b, n/2+1)`.
    pub fn r2c_last(&mut self, input: &Array3<f64>, out: &mut Array3<Complex>) {
        let n = input.len_of(Axis(2));
        debug_assert_eq!(out.len_of(Axis(2)), n / 2 + 1);
        if input.is_empty() {
            return;
        }
        let Plan::R2c(plan) = self.plan(n, Kind::R2c) else { unreachable!() };
        let scratch_len = plan.get_scratch_len();
        self.real_line.resize(n, 0.0);
        self.line.resize(n / 2 + 1, Complex::default());
        for (src, mut dst) in input.rows().into_iter().zip(out.rows_mut()) {
            for (d, s) in self.real_line.iter_mut().zip(src.iter()) {
                *d = *s;
            }
            plan.process_with_scratch(&mut self.real_line, &mut self.line, &mut self.scratch[..scratch_len])
                .expect("r2c buffer lengths");
            dst.iter_mut().zip(&self.line).for_each(|(d, s)| *d = *s);
        }
    }

    /// Complex-to-real inverse along the last axis, including the `1/n`
    /// factor. Imaginary parts of the `k = 0` and Nyquist entries are
    /// ignored, as for any Hermitian-consistent half spectrum.
    pub fn c2r_last(&mut self, input: &Array3<Complex>, out: &mut Array3<f64>) {
        let n = out.len_of(Axis(2));
        debug_assert_eq!(input.len_of(Axis(2)), n / 2 + 1);
        if out.is_empty() {
            return;
        }
        let Plan::C2r(plan) = self.plan(n, Kind::C2r) else { unreachable!() };
        let scratch_len = plan.get_scratch_len();
        let scale = 1.0 / n as f64;
        self.real_line.resize(n, 0.0);
        self.line.resize(n / 2 + 1, Complex::default());
        for (src, mut dst) in input.rows().into_iter().zip(out.rows_mut()) {
            for (d, s) in self.line.iter_mut().zip(src.iter()) {
                *d = *s;
            }
            self.line[0].im = 0.0;
            if n % 2 == 0 {
                self.line[n / 2].im = 0.0;
            }
            plan.process_with_scratch(&mut self.line, &mut self.real_line, &mut self.scratch[..scratch_len])
                .expect("c2r buffer lengths");
            dst.iter_mut().zip(&self.real_line).for_each(|(d, s)| *d = *s * scale);
        }
    }

    /// Full single-rank 3D forward transform in the same axis order as the
    /// distributed transforms (z, then y, then x).
    pub fn forward_3d(&mut self, u: &Array3<f64>) -> Array3<Complex> {
        let (a, b, n) = u.dim();
        let mut out = Array3::zeros((a, b, n / 2 + 1));
        self.r2c_last(u, &mut out);
        self.c2c(&mut out, 1, Direction::Forward);
        self.c2c(&mut out, 0, Direction::Forward);
        out
    }

    /// Inverse of [`SerialFft::forward_3d`] for a real field with last-axis length `n`.
    pub fn inverse_3d(&mut self, fu: &Array3<Complex>, n: usize) -> Array3<f64> {
        let mut work = fu.clone();
        self.c2c(&mut work, 0, Direction::Inverse);
        self.c2c(&mut work, 1, Direction::Inverse);
        let (a, b, _) = fu.dim();
        let mut out = Array3::zeros((a, b, n));
        self.c2r_last(&work, &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    use super::*;

    /// Direct evaluation of the half-spectrum DFT sum.
    fn naive_dft(u: &Array3<f64>) -> Array3<Complex> {
        let (nx, ny, nz) = u.dim();
        Array3::from_shape_fn((nx, ny, nz / 2 + 1), |(kx, ky, kz)| {
            let mut acc = Complex::new(0.0, 0.0);
            for ((i, j, l), &v) in u.indexed_iter() {
                let phase = -2.0 * PI
                    * ((kx * i) as f64 / nx as f64 + (ky * j) as f64 / ny as f64 + (kz * l) as f64 / nz as f64);
                acc += Complex::from_polar(v, phase);
            }
            acc
        })
    }

    fn random(shape: (usize, usize, usize), seed: u64) -> Array3<f64> {
        let mut rng = StdRng::seed_from_u64(seed);
        Array3::from_shape_simple_fn(shape, || rng.random_range(-1.0..1.0))
    }

    #[test]
    fn forward_matches_direct_sum() {
        for &(shape, seed) in &[((4, 4, 4), 1), ((6, 4, 8), 2), ((8, 8, 8), 3)] {
            let u = random(shape, seed);
            let got = SerialFft::new().forward_3d(&u);
            let want = naive_dft(&u);
            let scale = want.iter().map(|c| c.norm()).fold(0.0, f64::max);
            let err = got.iter().zip(want.iter()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            assert!(err <= 1e-12 * scale, "{shape:?}: {err}");
        }
    }

    #[test]
    fn round_trip() {
        let u = random((8, 6, 10), 7);
        let mut fft = SerialFft::new();
        let spec = fft.forward_3d(&u);
        let back = fft.inverse_3d(&spec, 10);
        let err = back.iter().zip(u.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-14, "{err}");
    }

    #[test]
    fn strided_and_contiguous_lanes_agree() {
        let u = random((8, 8, 8), 9);
        let mut fft = SerialFft::new();
        let mut c = u.mapv(|v| Complex::new(v, 0.0));
        let mut t = c.clone().permuted_axes([2, 1, 0]).as_standard_layout().to_owned();
        fft.c2c(&mut c, 0, Direction::Forward);
        fft.c2c(&mut t, 2, Direction::Forward);
        let t = t.permuted_axes([2, 1, 0]);
        assert!(c.iter().zip(t.iter()).all(|(a, b)| a == b));
    }

    #[test]
    fn plans_are_cached() {
        let mut fft = SerialFft::new();
        let u = random((4, 4, 4), 0);
        fft.forward_3d(&u);
        let n = fft.cached_plans();
        fft.forward_3d(&u);
        assert_eq!(n, fft.cached_plans());
        assert_eq!(n, 2);
    }
}
