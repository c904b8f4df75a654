//! Fourier-space Navier-Stokes right-hand side in rotational form:
//!
//! ```text
//! du_hat/dt = N_hat - nu |k|^2 u_hat - k (k . N_hat) / |k|^2,   N = u x omega
//! ```
//!
//! `u` and `omega = curl u` are brought to physical space, the cross product
//! is formed pointwise, transformed back, truncated by the dealiasing mask
//! and projected onto divergence-free fields.

use std::ops::{Index, IndexMut};

use ndarray::Array3;

use crate::error::{Error, Result};
use crate::fft::DistributedFft;
use crate::grid::{physical_mesh, wavenumbers, PhysicalMesh, RankLayout, SolverConfig, WavenumberMesh};
use crate::integrate::{kahan, OdeVector, Rhs};
use crate::transport::Communicator;
use crate::Complex;

fn dims(shape: [usize; 3]) -> (usize, usize, usize) {
    (shape[0], shape[1], shape[2])
}

/// Three velocity-like components on the rank's physical block.
#[derive(Debug, Clone, PartialEq)]
pub struct RealField3 {
    comps: [Array3<f64>; 3],
}

impl RealField3 {
    pub fn zeros(shape: [usize; 3]) -> Self {
        RealField3 {
            comps: std::array::from_fn(|_| Array3::zeros(dims(shape))),
        }
    }

    pub fn from_components(comps: [Array3<f64>; 3]) -> Self {
        assert!(comps[1].shape() == comps[0].shape() && comps[2].shape() == comps[0].shape());
        RealField3 { comps }
    }

    pub fn shape(&self) -> [usize; 3] {
        let s = self.comps[0].shape();
        [s[0], s[1], s[2]]
    }

    pub fn components(&self) -> &[Array3<f64>; 3] {
        &self.comps
    }
}

impl Index<usize> for RealField3 {
    type Output = Array3<f64>;
    fn index(&self, i: usize) -> &Array3<f64> {
        &self.comps[i]
    }
}

impl IndexMut<usize> for RealField3 {
    fn index_mut(&mut self, i: usize) -> &mut Array3<f64> {
        &mut self.comps[i]
    }
}

/// Three complex components on the rank's spectral block.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField3 {
    comps: [Array3<Complex>; 3],
}

impl SpectralField3 {
    pub fn zeros(shape: [usize; 3]) -> Self {
        SpectralField3 {
            comps: std::array::from_fn(|_| Array3::zeros(dims(shape))),
        }
    }

    pub fn shape(&self) -> [usize; 3] {
        let s = self.comps[0].shape();
        [s[0], s[1], s[2]]
    }

    pub fn components(&self) -> &[Array3<Complex>; 3] {
        &self.comps
    }
}

impl Index<usize> for SpectralField3 {
    type Output = Array3<Complex>;
    fn index(&self, i: usize) -> &Array3<Complex> {
        &self.comps[i]
    }
}

impl IndexMut<usize> for SpectralField3 {
    fn index_mut(&mut self, i: usize) -> &mut Array3<Complex> {
        &mut self.comps[i]
    }
}

impl OdeVector for SpectralField3 {
    fn copy_from(&mut self, other: &Self) {
        for c in 0..3 {
            self.comps[c].assign(&other.comps[c]);
        }
    }

    fn axpy(&mut self, a: f64, x: &Self) {
        for c in 0..3 {
            self.comps[c].zip_mut_with(&x.comps[c], |s, x| *s += x * a);
        }
    }

    fn set_scaled(&mut self, a: f64, x: &Self) {
        for c in 0..3 {
            self.comps[c].zip_mut_with(&x.comps[c], |s, x| *s = x * a);
        }
    }

    fn add_compensated(&mut self, delta: &Self, carry: &mut Self) {
        for c in 0..3 {
            ndarray::Zip::from(&mut self.comps[c])
                .and(&delta.comps[c])
                .and(&mut carry.comps[c])
                .for_each(|s, &d, c| kahan(s, d, c));
        }
    }

    fn all_finite(&self) -> bool {
        self.comps.iter().all(|c| c.iter().all(|v| v.re.is_finite() && v.im.is_finite()))
    }
}

fn check_shape(what: &str, got: [usize; 3], want: [usize; 3]) -> Result<()> {
    if got != want {
        return Err(Error::layout(format!("{what} has shape {got:?}, expected {want:?}")));
    }
    Ok(())
}

#[inline]
fn times_i(z: Complex) -> Complex {
    Complex::new(-z.im, z.re)
}

/// `omega_hat = i k x u_hat`, modewise.
pub fn curl_hat(u_hat: &SpectralField3, wm: &WavenumberMesh, out: &mut SpectralField3) {
    let [nx, ny, nz] = u_hat.shape();
    let (u, v, w) = (as_slice(&u_hat[0]), as_slice(&u_hat[1]), as_slice(&u_hat[2]));
    let [ox, oy, oz] = &mut out.comps;
    let (ox, oy, oz) = (as_slice_mut(ox), as_slice_mut(oy), as_slice_mut(oz));
    for i in 0..nx {
        let kx = wm.kx[i] as f64;
        for j in 0..ny {
            let ky = wm.ky[j] as f64;
            for l in 0..nz {
                let kz = wm.kz[l] as f64;
                let m = (i * ny + j) * nz + l;
                ox[m] = times_i(v[m].scale(-kz) + w[m].scale(ky));
                oy[m] = times_i(u[m].scale(kz) - w[m].scale(kx));
                oz[m] = times_i(v[m].scale(kx) - u[m].scale(ky));
            }
        }
    }
}

fn as_slice<T>(a: &Array3<T>) -> &[T] {
    a.as_slice().expect("fields are standard-layout")
}

fn as_slice_mut<T>(a: &mut Array3<T>) -> &mut [T] {
    a.as_slice_mut().expect("fields are standard-layout")
}

/// Vorticity on the physical block. Collective.
pub fn curl_physical<C: Communicator>(
    u_hat: &SpectralField3,
    wm: &WavenumberMesh,
    dfft: &mut DistributedFft<C>,
) -> Result<RealField3> {
    check_shape("u_hat", u_hat.shape(), dfft.spec_shape())?;
    let mut w_hat = SpectralField3::zeros(u_hat.shape());
    curl_hat(u_hat, wm, &mut w_hat);
    let mut omega = RealField3::zeros(dfft.real_shape());
    for c in 0..3 {
        dfft.inverse(&w_hat[c], &mut omega[c])?;
    }
    Ok(omega)
}

/// `c = a x b` in a single pass over the mesh.
pub fn cross(a: &RealField3, b: &RealField3, c: &mut RealField3) -> Result<()> {
    check_shape("b", b.shape(), a.shape())?;
    check_shape("c", c.shape(), a.shape())?;
    let (a0, a1, a2) = (as_slice(&a[0]), as_slice(&a[1]), as_slice(&a[2]));
    let (b0, b1, b2) = (as_slice(&b[0]), as_slice(&b[1]), as_slice(&b[2]));
    let [c0, c1, c2] = &mut c.comps;
    let (c0, c1, c2) = (as_slice_mut(c0), as_slice_mut(c1), as_slice_mut(c2));
    for m in 0..a0.len() {
        let (x0, x1, x2) = (a0[m], a1[m], a2[m]);
        let (y0, y1, y2) = (b0[m], b1[m], b2[m]);
        c0[m] = x1 * y2 - x2 * y1;
        c1[m] = x2 * y0 - x0 * y2;
        c2[m] = x0 * y1 - x1 * y0;
    }
    Ok(())
}

/// Modified pressure `P_hat = -i k . N_hat / |k|^2`, zero at the zero mode.
pub fn pressure_hat(nl_hat: &SpectralField3, wm: &WavenumberMesh) -> Array3<Complex> {
    let mut p = Array3::zeros(dims(nl_hat.shape()));
    let kk = [as_slice(&wm.k_over_k2[0]), as_slice(&wm.k_over_k2[1]), as_slice(&wm.k_over_k2[2])];
    let n = [as_slice(&nl_hat[0]), as_slice(&nl_hat[1]), as_slice(&nl_hat[2])];
    for (m, p) in as_slice_mut(&mut p).iter_mut().enumerate() {
        *p = -times_i(n[0][m] * kk[0][m] + n[1][m] * kk[1][m] + n[2][m] * kk[2][m]);
    }
    p
}

/// Solenoidal part of one mode, evaluated as `(k x f) x k / |k|^2`. Unlike
/// `f - k (k . f) / |k|^2` its rounding error is orthogonal to `k` up to
/// the size of the result, so nearly-gradient modes stay divergence-free.
/// The zero mode is returned unchanged.
#[inline]
fn solenoidal(f: [Complex; 3], k: [f64; 3], k2: f64) -> [Complex; 3] {
    if k2 == 0.0 {
        return f;
    }
    let c = [f[2] * k[1] - f[1] * k[2], f[0] * k[2] - f[2] * k[0], f[1] * k[0] - f[0] * k[1]];
    let inv = 1.0 / k2;
    [
        (c[1] * k[2] - c[2] * k[1]) * inv,
        (c[2] * k[0] - c[0] * k[2]) * inv,
        (c[0] * k[1] - c[1] * k[0]) * inv,
    ]
}

/// Removes the gradient part `k (k . f_hat) / |k|^2` of every mode in place.
pub fn project(f_hat: &mut SpectralField3, wm: &WavenumberMesh) {
    let [nx, ny, nz] = f_hat.shape();
    let k2 = as_slice(&wm.k2);
    let [f0, f1, f2] = &mut f_hat.comps;
    let (f0, f1, f2) = (as_slice_mut(f0), as_slice_mut(f1), as_slice_mut(f2));
    for i in 0..nx {
        let kx = wm.kx[i] as f64;
        for j in 0..ny {
            let ky = wm.ky[j] as f64;
            for l in 0..nz {
                let kz = wm.kz[l] as f64;
                let m = (i * ny + j) * nz + l;
                [f0[m], f1[m], f2[m]] = solenoidal([f0[m], f1[m], f2[m]], [kx, ky, kz], k2[m]);
            }
        }
    }
}

/// Scratch for one right-hand-side evaluation, allocated once per rank.
pub struct RhsWorkspace {
    pub u: RealField3,
    pub omega: RealField3,
    pub nl: RealField3,
    pub w_hat: SpectralField3,
}

impl RhsWorkspace {
    pub fn new(layout: &RankLayout) -> Self {
        RhsWorkspace {
            u: RealField3::zeros(layout.real.shape),
            omega: RealField3::zeros(layout.real.shape),
            nl: RealField3::zeros(layout.real.shape),
            w_hat: SpectralField3::zeros(layout.spec.shape),
        }
    }
}

/// Evaluates `du_hat`. Collective (nine distributed transforms).
pub fn compute_rhs<C: Communicator>(
    u_hat: &SpectralField3,
    wm: &WavenumberMesh,
    nu: f64,
    dfft: &mut DistributedFft<C>,
    ws: &mut RhsWorkspace,
    du_hat: &mut SpectralField3,
) -> Result<()> {
    check_shape("u_hat", u_hat.shape(), dfft.spec_shape())?;
    check_shape("du_hat", du_hat.shape(), dfft.spec_shape())?;
    for c in 0..3 {
        dfft.inverse(&u_hat[c], &mut ws.u[c])?;
    }
    curl_hat(u_hat, wm, &mut ws.w_hat);
    for c in 0..3 {
        dfft.inverse(&ws.w_hat[c], &mut ws.omega[c])?;
    }
    cross(&ws.u, &ws.omega, &mut ws.nl)?;
    for c in 0..3 {
        dfft.forward(&ws.nl[c], &mut du_hat[c])?;
    }

    let [nx, ny, nz] = u_hat.shape();
    let mask = as_slice(&wm.dealias_mask);
    let k2 = as_slice(&wm.k2);
    let u = [as_slice(&u_hat[0]), as_slice(&u_hat[1]), as_slice(&u_hat[2])];
    let [d0, d1, d2] = &mut du_hat.comps;
    let d = [as_slice_mut(d0), as_slice_mut(d1), as_slice_mut(d2)];
    let [d0, d1, d2] = d;
    for i in 0..nx {
        let kx = wm.kx[i] as f64;
        for j in 0..ny {
            let ky = wm.ky[j] as f64;
            for l in 0..nz {
                let kz = wm.kz[l] as f64;
                let m = (i * ny + j) * nz + l;
                if !mask[m] {
                    d0[m] = -u[0][m] * (nu * k2[m]);
                    d1[m] = -u[1][m] * (nu * k2[m]);
                    d2[m] = -u[2][m] * (nu * k2[m]);
                    continue;
                }
                let visc = nu * k2[m];
                let p = solenoidal([d0[m], d1[m], d2[m]], [kx, ky, kz], k2[m]);
                d0[m] = p[0] - u[0][m] * visc;
                d1[m] = p[1] - u[1][m] * visc;
                d2[m] = p[2] - u[2][m] * visc;
            }
        }
    }
    Ok(())
}

/// `u = sin x cos y cos z`, `v = -cos x sin y cos z`, `w = 0`.
pub fn taylor_green_init(layout: &RankLayout, mesh: &PhysicalMesh) -> RealField3 {
    let mut f = RealField3::zeros(layout.real.shape);
    for ((i, j, k), v) in f[0].indexed_iter_mut() {
        *v = mesh.x[i].sin() * mesh.y[j].cos() * mesh.z[k].cos();
    }
    for ((i, j, k), v) in f[1].indexed_iter_mut() {
        *v = -mesh.x[i].cos() * mesh.y[j].sin() * mesh.z[k].cos();
    }
    f
}

/// Everything one rank needs to evaluate the right-hand side.
pub struct NsSolver<C: Communicator> {
    pub cfg: SolverConfig,
    pub world: C,
    pub dfft: DistributedFft<C>,
    pub wm: WavenumberMesh,
    pub mesh: PhysicalMesh,
    ws: RhsWorkspace,
}

impl<C: Communicator> NsSolver<C> {
    /// Collective over `world`.
    pub fn new(cfg: &SolverConfig, world: C) -> Result<Self> {
        let dfft = DistributedFft::new(cfg, &world)?;
        let layout = dfft.layout().clone();
        Ok(NsSolver {
            wm: wavenumbers(cfg, &layout),
            mesh: physical_mesh(&layout),
            ws: RhsWorkspace::new(&layout),
            cfg: cfg.clone(),
            world,
            dfft,
        })
    }

    pub fn layout(&self) -> &RankLayout {
        self.dfft.layout()
    }

    pub fn zeros_spectral(&self) -> SpectralField3 {
        SpectralField3::zeros(self.dfft.spec_shape())
    }

    pub fn zeros_real(&self) -> RealField3 {
        RealField3::zeros(self.dfft.real_shape())
    }

    pub fn forward(&mut self, u: &RealField3) -> Result<SpectralField3> {
        let mut out = self.zeros_spectral();
        for c in 0..3 {
            self.dfft.forward(&u[c], &mut out[c])?;
        }
        Ok(out)
    }

    pub fn inverse(&mut self, u_hat: &SpectralField3) -> Result<RealField3> {
        let mut out = self.zeros_real();
        for c in 0..3 {
            self.dfft.inverse(&u_hat[c], &mut out[c])?;
        }
        Ok(out)
    }

    pub fn initial_condition(&mut self) -> Result<SpectralField3> {
        let u = match self.cfg.case {
            crate::grid::Case::TaylorGreen => taylor_green_init(self.dfft.layout(), &self.mesh),
        };
        let mut u_hat = self.forward(&u)?;
        // The analytic field is solenoidal; this only clears roundoff-level
        // divergence left by the transform.
        project(&mut u_hat, &self.wm);
        Ok(u_hat)
    }

    pub fn rhs(&mut self, u_hat: &SpectralField3, du_hat: &mut SpectralField3) -> Result<()> {
        compute_rhs(u_hat, &self.wm, self.cfg.nu, &mut self.dfft, &mut self.ws, du_hat)
    }
}

impl<C: Communicator> Rhs<SpectralField3> for NsSolver<C> {
    fn eval(&mut self, _t: f64, u: &SpectralField3, du: &mut SpectralField3) -> Result<()> {
        self.rhs(u, du)
    }

    fn agree_finite(&mut self, local_ok: bool) -> Result<bool> {
        let bad = self.world.allreduce_max_scalar(if local_ok { 0.0 } else { 1.0 })?;
        Ok(bad == 0.0)
    }
}
