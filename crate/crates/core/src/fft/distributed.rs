use ndarray::{Array3, Axis, Slice};

use super::serial::{Direction, SerialFft};
use crate::error::{Error, Result};
use crate::grid::{build_layout, Decomp, RankLayout, SolverConfig, TransposeStage};
use crate::transport::{BlockBuffer, Communicator};
use crate::Complex;

/// Distributed real-to-complex 3D FFT for one rank.
///
/// Forward, slab:   r2c(z), c2c(y), exchange (x <-> ky), c2c(x).
/// Forward, pencil: r2c(z), exchange within the row group (y <-> kz),
///                  c2c(y), exchange within the column group (x <-> ky), c2c(x).
///
/// The inverse runs the mirror sequence. Every 1D transform acts on the same
/// line data regardless of decomposition, so results are bit-identical for
/// any rank count.
pub struct DistributedFft<C: Communicator> {
    decomp: Decomp,
    layout: RankLayout,
    /// One communicator per transpose stage.
    comms: Vec<C>,
    serial: SerialFft,
    /// Local arrays before each stage, in forward order.
    work: Vec<Array3<Complex>>,
    /// Copy of the spectral input for the inverse, which must not clobber it.
    spec_work: Array3<Complex>,
    /// Per stage: forward send table, forward receive table. The inverse
    /// sends from the second and receives into the first.
    buffers: Vec<(BlockBuffer<Complex>, BlockBuffer<Complex>)>,
}

fn shape_tuple(s: [usize; 3]) -> (usize, usize, usize) {
    (s[0], s[1], s[2])
}

fn pack(src: &Array3<Complex>, axis: usize, blocks: &[(usize, usize)], buf: &mut BlockBuffer<Complex>) {
    for (j, &(off, len)) in blocks.iter().enumerate() {
        let view = src.slice_axis(Axis(axis), Slice::from(off..off + len));
        buf.block_mut(j).iter_mut().zip(view.iter()).for_each(|(d, s)| *d = *s);
    }
}

fn unpack(buf: &BlockBuffer<Complex>, dst: &mut Array3<Complex>, axis: usize, blocks: &[(usize, usize)]) {
    for (j, &(off, len)) in blocks.iter().enumerate() {
        let mut view = dst.slice_axis_mut(Axis(axis), Slice::from(off..off + len));
        view.iter_mut().zip(buf.block(j)).for_each(|(d, s)| *d = *s);
    }
}

impl<C: Communicator> DistributedFft<C> {
    /// Collective over `world`. Builds the stage subgroups and sizes every
    /// work buffer once.
    pub fn new(cfg: &SolverConfig, world: &C) -> Result<Self> {
        if world.size() != cfg.p {
            return Err(Error::layout(format!(
                "communicator has {} ranks but the configuration needs p = {} (p1 = {}, p2 = {})",
                world.size(),
                cfg.p,
                cfg.p1,
                cfg.p2
            )));
        }
        let layout = build_layout(cfg, world.rank())?;
        let comms = match cfg.decomp {
            Decomp::Slab => vec![world.split(0, world.rank() as i64)?],
            Decomp::Pencil => {
                let (r1, r2) = layout.coords;
                let row = world.split(r1 as u64, r2 as i64)?;
                let col = world.split(r2 as u64, r1 as i64)?;
                vec![row, col]
            }
        };
        for (stage, comm) in layout.stages.iter().zip(&comms) {
            debug_assert_eq!(stage.peers(), comm.size());
        }
        let work = layout
            .stages
            .iter()
            .map(|s| Array3::zeros(shape_tuple(s.before)))
            .collect();
        let buffers = layout
            .stages
            .iter()
            .map(|s| (BlockBuffer::zeroed(s.send_counts()), BlockBuffer::zeroed(s.recv_counts())))
            .collect();
        Ok(DistributedFft {
            decomp: cfg.decomp,
            spec_work: Array3::zeros(shape_tuple(layout.spec.shape)),
            layout,
            comms,
            serial: SerialFft::new(),
            work,
            buffers,
        })
    }

    pub fn layout(&self) -> &RankLayout {
        &self.layout
    }

    pub fn real_shape(&self) -> [usize; 3] {
        self.layout.real.shape
    }

    pub fn spec_shape(&self) -> [usize; 3] {
        self.layout.spec.shape
    }

    fn check(&self, what: &str, got: &[usize], want: [usize; 3]) -> Result<()> {
        if got != want {
            return Err(Error::layout(format!(
                "rank {}: {what} has shape {got:?}, layout expects {want:?}",
                self.layout.rank
            )));
        }
        Ok(())
    }

    fn exchange_forward(
        comm: &C,
        stage: &TransposeStage,
        bufs: &mut (BlockBuffer<Complex>, BlockBuffer<Complex>),
        src: &Array3<Complex>,
        dst: &mut Array3<Complex>,
    ) -> Result<()> {
        pack(src, stage.split_axis, &stage.split_blocks, &mut bufs.0);
        comm.all_to_all_into(&bufs.0, &mut bufs.1)?;
        unpack(&bufs.1, dst, stage.merge_axis, &stage.merge_blocks);
        Ok(())
    }

    fn exchange_inverse(
        comm: &C,
        stage: &TransposeStage,
        bufs: &mut (BlockBuffer<Complex>, BlockBuffer<Complex>),
        src: &Array3<Complex>,
        dst: &mut Array3<Complex>,
    ) -> Result<()> {
        pack(src, stage.merge_axis, &stage.merge_blocks, &mut bufs.1);
        comm.all_to_all_into(&bufs.1, &mut bufs.0)?;
        unpack(&bufs.0, dst, stage.split_axis, &stage.split_blocks);
        Ok(())
    }

    /// Forward transform of the rank's real block into its spectral block.
    /// Collective.
    pub fn forward(&mut self, u: &Array3<f64>, out: &mut Array3<Complex>) -> Result<()> {
        self.check("real input", u.shape(), self.layout.real.shape)?;
        self.check("spectral output", out.shape(), self.layout.spec.shape)?;
        let stages = &self.layout.stages;
        self.serial.r2c_last(u, &mut self.work[0]);
        match self.decomp {
            Decomp::Slab => {
                self.serial.c2c(&mut self.work[0], 1, Direction::Forward);
                Self::exchange_forward(&self.comms[0], &stages[0], &mut self.buffers[0], &self.work[0], out)?;
            }
            Decomp::Pencil => {
                let (w0, w1) = self.work.split_at_mut(1);
                Self::exchange_forward(&self.comms[0], &stages[0], &mut self.buffers[0], &w0[0], &mut w1[0])?;
                self.serial.c2c(&mut w1[0], 1, Direction::Forward);
                Self::exchange_forward(&self.comms[1], &stages[1], &mut self.buffers[1], &w1[0], out)?;
            }
        }
        self.serial.c2c(out, 0, Direction::Forward);
        Ok(())
    }

    /// Inverse transform, carrying the full `1/n^3` normalization. Collective.
    pub fn inverse(&mut self, fu: &Array3<Complex>, out: &mut Array3<f64>) -> Result<()> {
        self.check("spectral input", fu.shape(), self.layout.spec.shape)?;
        self.check("real output", out.shape(), self.layout.real.shape)?;
        let stages = &self.layout.stages;
        self.spec_work.assign(fu);
        self.serial.c2c(&mut self.spec_work, 0, Direction::Inverse);
        match self.decomp {
            Decomp::Slab => {
                Self::exchange_inverse(&self.comms[0], &stages[0], &mut self.buffers[0], &self.spec_work, &mut self.work[0])?;
            }
            Decomp::Pencil => {
                Self::exchange_inverse(&self.comms[1], &stages[1], &mut self.buffers[1], &self.spec_work, &mut self.work[1])?;
                self.serial.c2c(&mut self.work[1], 1, Direction::Inverse);
                let (w0, w1) = self.work.split_at_mut(1);
                Self::exchange_inverse(&self.comms[0], &stages[0], &mut self.buffers[0], &w1[0], &mut w0[0])?;
            }
        }
        if self.decomp == Decomp::Slab {
            self.serial.c2c(&mut self.work[0], 1, Direction::Inverse);
        }
        self.serial.c2r_last(&self.work[0], out);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    use super::*;
    use crate::grid::physical_mesh;
    use crate::transport::{launch, LocalOptions, Loopback};

    fn global_random(n: usize, seed: u64) -> Array3<f64> {
        let mut rng = StdRng::seed_from_u64(seed);
        Array3::from_shape_simple_fn((n, n, n), || rng.random_range(-1.0..1.0))
    }

    fn local_block(global: &Array3<f64>, l: &RankLayout) -> Array3<f64> {
        let (o, s) = (l.real.offset, l.real.shape);
        Array3::from_shape_fn(shape_tuple(s), |(i, j, k)| global[[o[0] + i, o[1] + j, o[2] + k]])
    }

    /// Runs forward on every rank and assembles the global half spectrum.
    fn distributed_forward(cfg: &SolverConfig, global: &Array3<f64>) -> Array3<Complex> {
        let n = cfg.n;
        let parts = launch(cfg.p, LocalOptions::default(), |comm| {
            let mut fft = DistributedFft::new(cfg, &comm)?;
            let u = local_block(global, fft.layout());
            let mut out = Array3::zeros(shape_tuple(fft.spec_shape()));
            fft.forward(&u, &mut out)?;
            Ok::<_, Error>((fft.layout().clone(), out))
        });
        let mut full = Array3::zeros((n, n, n / 2 + 1));
        for part in parts {
            let (l, block) = part.unwrap();
            let o = l.spec.offset;
            for ((i, j, k), v) in block.indexed_iter() {
                full[[o[0] + i, o[1] + j, o[2] + k]] = *v;
            }
        }
        full
    }

    #[test]
    fn constant_field_has_only_dc() {
        let n = 8;
        for cfg in [
            SolverConfig::taylor_green(n).with_slab(4),
            SolverConfig::taylor_green(n).with_pencil(2, 2),
        ] {
            let c = 0.75;
            let full = distributed_forward(&cfg, &Array3::from_elem((n, n, n), c));
            let n3 = (n * n * n) as f64;
            for ((i, j, k), v) in full.indexed_iter() {
                let want = if (i, j, k) == (0, 0, 0) { c * n3 } else { 0.0 };
                assert!((v - Complex::new(want, 0.0)).norm() <= 1e-12 * n3, "{cfg:?} {i} {j} {k}");
            }
        }
    }

    #[test]
    fn cosine_in_x() {
        let n = 8;
        let cfg = SolverConfig::taylor_green(n).with_slab(2);
        let global = Array3::from_shape_fn((n, n, n), |(i, _, _)| (2.0 * PI * i as f64 / n as f64).cos());
        let full = distributed_forward(&cfg, &global);
        let half = (n * n * n) as f64 / 2.0;
        for ((i, j, k), v) in full.indexed_iter() {
            let want = if (i == 1 || i == n - 1) && j == 0 && k == 0 { half } else { 0.0 };
            assert!((v - Complex::new(want, 0.0)).norm() < 1e-12 * half);
        }
    }

    #[test]
    fn matches_serial_for_slab_and_pencil() {
        let n = 8;
        let global = global_random(n, 42);
        let serial = SerialFft::new().forward_3d(&global);
        for cfg in [
            SolverConfig::taylor_green(n).with_slab(2),
            SolverConfig::taylor_green(n).with_slab(8),
            SolverConfig::taylor_green(n).with_pencil(2, 2),
            SolverConfig::taylor_green(n).with_pencil(2, 4),
            SolverConfig::taylor_green(n).with_pencil(4, 1),
        ] {
            let full = distributed_forward(&cfg, &global);
            // Same line transforms in the same order: expect bit equality.
            assert_eq!(full, serial, "{cfg:?}");
        }
    }

    #[test]
    fn inverse_of_dc_is_unit_constant_and_round_trip_holds() {
        let n = 8;
        let cfg = SolverConfig::taylor_green(n).with_pencil(2, 2);
        let global = global_random(n, 5);
        let res = launch(4, LocalOptions::default(), |comm| {
            let mut fft = DistributedFft::new(&cfg, &comm)?;
            let mut spec = Array3::zeros(shape_tuple(fft.spec_shape()));
            let mut real = Array3::zeros(shape_tuple(fft.real_shape()));
            if fft.layout().spec.contains([0, 0, 0]) {
                spec[[0, 0, 0]] = Complex::new((n * n * n) as f64, 0.0);
            }
            fft.inverse(&spec, &mut real)?;
            let dc_err = real.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);

            let u = local_block(&global, fft.layout());
            fft.forward(&u, &mut spec)?;
            fft.inverse(&spec, &mut real)?;
            let rt_err = real.iter().zip(u.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            Ok::<_, Error>((dc_err, rt_err))
        });
        for r in res {
            let (dc, rt) = r.unwrap();
            assert!(dc < 1e-14, "{dc}");
            assert!(rt < 1e-14, "{rt}");
        }
    }

    #[test]
    fn single_mode_cos_y_reconstruction() {
        let n = 8;
        let cfg = SolverConfig::taylor_green(n).with_pencil(2, 2);
        let res = launch(4, LocalOptions::default(), |comm| {
            let mut fft = DistributedFft::new(&cfg, &comm)?;
            let l = fft.layout().clone();
            let mut spec = Array3::zeros(shape_tuple(l.spec.shape));
            let half = (n * n * n) as f64 / 2.0;
            for ky in [1, n - 1] {
                if l.spec.contains([0, ky, 0]) {
                    spec[[0, ky - l.spec.offset[1], 0]] = Complex::new(half, 0.0);
                }
            }
            let mut real = Array3::zeros(shape_tuple(l.real.shape));
            fft.inverse(&spec, &mut real)?;
            let mesh = physical_mesh(&l);
            let err = real
                .indexed_iter()
                .map(|((_, j, _), v)| (v - mesh.y[j].cos()).abs())
                .fold(0.0, f64::max);
            Ok::<_, Error>(err)
        });
        for r in res {
            assert!(r.unwrap() < 1e-14);
        }
    }

    #[test]
    fn shape_and_size_mismatches_are_errors() {
        let cfg = SolverConfig::taylor_green(8).with_slab(2);
        assert!(matches!(DistributedFft::new(&cfg, &Loopback), Err(Error::Layout(_))));
        let cfg = SolverConfig::taylor_green(8);
        let mut fft = DistributedFft::new(&cfg, &Loopback).unwrap();
        let u = Array3::zeros((4, 8, 8));
        let mut out = Array3::zeros((8, 8, 5));
        assert!(matches!(fft.forward(&u, &mut out), Err(Error::Layout(_))));
    }
}
