//! Mesh construction and per-rank data layouts.
//!
//! The box is `[0, 2pi)^3` sampled with `n` points per direction. Physical
//! arrays are `(x, y, z)` row-major; spectral arrays are `(kx, ky, kz)`
//! with only `kz in 0..=n/2` stored (real-to-complex half spectrum).
//!
//! * Slab: physical blocks split along x, spectral blocks split along ky.
//! * Pencil: ranks form a `p1 x p2` grid with `rank = r1 * p2 + r2`.
//!   Physical blocks split x over `p1` and y over `p2`; spectral blocks
//!   split ky over `p1` and kz over `p2`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use ndarray::Array3;

use crate::error::{ConfigError, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decomp {
    Slab,
    Pencil,
}

impl fmt::Display for Decomp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decomp::Slab => "slab",
            Decomp::Pencil => "pencil",
        })
    }
}

impl FromStr for Decomp {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s.trim().to_ascii_lowercase().as_str() {
            "slab" => Ok(Decomp::Slab),
            "pencil" => Ok(Decomp::Pencil),
            other => Err(ConfigError::invalid(
                "decomp",
                format!("expected `slab` or `pencil`, got `{other}`"),
            )),
        }
    }
}

/// Initial condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Case {
    TaylorGreen,
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Case::TaylorGreen => f.write_str("taylor_green"),
        }
    }
}

impl FromStr for Case {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s.trim().to_ascii_lowercase().as_str() {
            "taylor_green" | "taylorgreen" | "tg" => Ok(Case::TaylorGreen),
            other => Err(ConfigError::invalid(
                "case",
                format!("unknown initializer `{other}` (available: taylor_green)"),
            )),
        }
    }
}

/// Global run parameters.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SolverConfig {
    /// Points per direction.
    pub n: usize,
    pub decomp: Decomp,
    /// Total number of ranks.
    pub p: usize,
    /// Pencil grid factors, `p = p1 * p2`. Slab runs carry `p1 = p, p2 = 1`.
    pub p1: usize,
    pub p2: usize,
    /// Kinematic viscosity.
    pub nu: f64,
    pub dt: f64,
    pub t_end: f64,
    pub dealias: bool,
    pub case: Case,
    /// Steps between diagnostic records.
    pub out_every: usize,
}

impl SolverConfig {
    /// Taylor-Green defaults at `Re = 1600`, `dt = 1e-3` on a single slab rank.
    pub fn taylor_green(n: usize) -> Self {
        SolverConfig {
            n,
            decomp: Decomp::Slab,
            p: 1,
            p1: 1,
            p2: 1,
            nu: 1.0 / 1600.0,
            dt: 1e-3,
            t_end: 0.1,
            dealias: true,
            case: Case::TaylorGreen,
            out_every: 10,
        }
    }

    pub fn with_slab(mut self, p: usize) -> Self {
        self.decomp = Decomp::Slab;
        self.p = p;
        self.p1 = p;
        self.p2 = 1;
        self
    }

    pub fn with_pencil(mut self, p1: usize, p2: usize) -> Self {
        self.decomp = Decomp::Pencil;
        self.p = p1 * p2;
        self.p1 = p1;
        self.p2 = p2;
        self
    }

    /// Half-spectrum length along z.
    pub fn nf(&self) -> usize {
        self.n / 2 + 1
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let n = self.n;
        if n < 4 || n % 2 != 0 {
            return Err(ConfigError::invalid("n", format!("must be even and >= 4, got {n}")));
        }
        if self.p == 0 {
            return Err(ConfigError::invalid("p", "must be at least 1"));
        }
        match self.decomp {
            Decomp::Slab => {
                if self.p > n || n % self.p != 0 {
                    return Err(ConfigError::invalid(
                        "p",
                        format!("slab needs n mod p = 0 and p <= n (n = {n}, p = {})", self.p),
                    ));
                }
            }
            Decomp::Pencil => {
                if self.p1 == 0 || self.p2 == 0 || self.p1 * self.p2 != self.p {
                    return Err(ConfigError::invalid(
                        "p",
                        format!(
                            "pencil needs p = p1 * p2 (p = {}, p1 = {}, p2 = {})",
                            self.p, self.p1, self.p2
                        ),
                    ));
                }
                if n % self.p1 != 0 {
                    return Err(ConfigError::invalid(
                        "p1",
                        format!("pencil needs n mod p1 = 0 (n = {n}, p1 = {})", self.p1),
                    ));
                }
                if n % self.p2 != 0 {
                    return Err(ConfigError::invalid(
                        "p2",
                        format!("pencil needs n mod p2 = 0 (n = {n}, p2 = {})", self.p2),
                    ));
                }
            }
        }
        if !(self.nu >= 0.0 && self.nu.is_finite()) {
            return Err(ConfigError::invalid("nu", format!("must be finite and >= 0, got {}", self.nu)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(ConfigError::invalid("dt", format!("must be > 0, got {}", self.dt)));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(ConfigError::invalid("t_end", format!("must be >= 0, got {}", self.t_end)));
        }
        if self.out_every == 0 {
            return Err(ConfigError::invalid("out_every", "must be at least 1"));
        }
        Ok(())
    }
}

/// Contiguous block of a distributed axis: `len` entries starting at `offset`.
pub fn block_range(total: usize, parts: usize, idx: usize) -> (usize, usize) {
    let base = total / parts;
    let extra = total % parts;
    let len = base + usize::from(idx < extra);
    let offset = idx * base + idx.min(extra);
    (offset, len)
}

/// Local extents plus global offsets of one rank's block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block3 {
    pub shape: [usize; 3],
    pub offset: [usize; 3],
}

impl Block3 {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, global: [usize; 3]) -> bool {
        (0..3).all(|a| global[a] >= self.offset[a] && global[a] < self.offset[a] + self.shape[a])
    }
}

/// One all-to-all exchange of a distributed transform, in the forward
/// direction. The array being sent is cut into per-peer blocks along
/// `split_axis`; received blocks are stacked along `merge_axis`.
/// The inverse transform runs the same stage with the roles swapped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransposeStage {
    /// Shape of the local array before the exchange.
    pub before: [usize; 3],
    /// Shape of the local array after the exchange.
    pub after: [usize; 3],
    pub split_axis: usize,
    pub merge_axis: usize,
    /// `(offset, len)` along `split_axis` of the block sent to each peer.
    pub split_blocks: Vec<(usize, usize)>,
    /// `(offset, len)` along `merge_axis` of the block received from each peer.
    pub merge_blocks: Vec<(usize, usize)>,
}

impl TransposeStage {
    fn new(before: [usize; 3], after: [usize; 3], split_axis: usize, merge_axis: usize,
           split_blocks: Vec<(usize, usize)>, merge_blocks: Vec<(usize, usize)>) -> Self {
        TransposeStage { before, after, split_axis, merge_axis, split_blocks, merge_blocks }
    }

    /// Element count of each forward send block.
    pub fn send_counts(&self) -> Vec<usize> {
        let mut shape = self.before;
        self.split_blocks
            .iter()
            .map(|&(_, len)| {
                shape[self.split_axis] = len;
                shape.iter().product()
            })
            .collect()
    }

    /// Element count of each forward receive block.
    pub fn recv_counts(&self) -> Vec<usize> {
        let mut shape = self.after;
        self.merge_blocks
            .iter()
            .map(|&(_, len)| {
                shape[self.merge_axis] = len;
                shape.iter().product()
            })
            .collect()
    }

    pub fn peers(&self) -> usize {
        self.split_blocks.len()
    }
}

/// Per-rank shapes and offsets in physical and spectral space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankLayout {
    pub rank: usize,
    /// Pencil grid coordinates `(r1, r2)`; slab ranks use `(rank, 0)`.
    pub coords: (usize, usize),
    pub n: usize,
    pub nf: usize,
    pub real: Block3,
    pub spec: Block3,
    /// Transpose stages in forward order.
    pub stages: Vec<TransposeStage>,
}

pub fn build_layout(cfg: &SolverConfig, rank: usize) -> Result<RankLayout> {
    cfg.validate()?;
    if rank >= cfg.p {
        return Err(Error::layout(format!("rank {rank} out of range for p = {}", cfg.p)));
    }
    let n = cfg.n;
    let nf = cfg.nf();
    let layout = match cfg.decomp {
        Decomp::Slab => {
            let p = cfg.p;
            let np = n / p;
            let blocks: Vec<_> = (0..p).map(|j| (j * np, np)).collect();
            let stage = TransposeStage::new(
                [np, n, nf],
                [n, np, nf],
                1,
                0,
                blocks.clone(),
                blocks,
            );
            RankLayout {
                rank,
                coords: (rank, 0),
                n,
                nf,
                real: Block3 { shape: [np, n, n], offset: [rank * np, 0, 0] },
                spec: Block3 { shape: [n, np, nf], offset: [0, rank * np, 0] },
                stages: vec![stage],
            }
        }
        Decomp::Pencil => {
            let (p1, p2) = (cfg.p1, cfg.p2);
            let (r1, r2) = (rank / p2, rank % p2);
            let nx1 = n / p1;
            let ny2 = n / p2;
            let ny1 = n / p1;
            let (kz_off, kz_len) = block_range(nf, p2, r2);
            // z-pencil -> y-pencil, exchanged within the row of p2 ranks sharing r1.
            let stage_a = TransposeStage::new(
                [nx1, ny2, nf],
                [nx1, n, kz_len],
                2,
                1,
                (0..p2).map(|j| block_range(nf, p2, j)).collect(),
                (0..p2).map(|j| (j * ny2, ny2)).collect(),
            );
            // y-pencil -> x-pencil, exchanged within the column of p1 ranks sharing r2.
            let stage_b = TransposeStage::new(
                [nx1, n, kz_len],
                [n, ny1, kz_len],
                1,
                0,
                (0..p1).map(|j| (j * ny1, ny1)).collect(),
                (0..p1).map(|j| (j * nx1, nx1)).collect(),
            );
            RankLayout {
                rank,
                coords: (r1, r2),
                n,
                nf,
                real: Block3 { shape: [nx1, ny2, n], offset: [r1 * nx1, r2 * ny2, 0] },
                spec: Block3 { shape: [n, ny1, kz_len], offset: [0, r1 * ny1, kz_off] },
                stages: vec![stage_a, stage_b],
            }
        }
    };
    Ok(layout)
}

/// Local physical coordinates along each axis.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalMesh {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

pub fn coordinate(n: usize, global_index: usize) -> f64 {
    2.0 * PI * global_index as f64 / n as f64
}

pub fn physical_mesh(layout: &RankLayout) -> PhysicalMesh {
    let axis = |a: usize| -> Vec<f64> {
        let b = &layout.real;
        (b.offset[a]..b.offset[a] + b.shape[a])
            .map(|i| coordinate(layout.n, i))
            .collect()
    };
    PhysicalMesh { x: axis(0), y: axis(1), z: axis(2) }
}

/// Wavenumber of DFT storage index `i` on an axis of length `n`.
/// The Nyquist bin is labelled `-n/2`.
pub fn frequency(i: usize, n: usize) -> i64 {
    if i < n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

/// Wavenumbers of the rank's spectral block.
#[derive(Debug, Clone)]
pub struct WavenumberMesh {
    pub n: usize,
    pub kx: Vec<i64>,
    pub ky: Vec<i64>,
    /// Non-negative half-spectrum wavenumbers `0..=n/2`.
    pub kz: Vec<i64>,
    pub k2: Array3<f64>,
    /// `k / |k|^2`, zero at the global zero mode.
    pub k_over_k2: [Array3<f64>; 3],
    pub dealias_mask: Array3<bool>,
}

impl WavenumberMesh {
    pub fn shape(&self) -> [usize; 3] {
        [self.kx.len(), self.ky.len(), self.kz.len()]
    }

    pub fn k(&self, i: usize, j: usize, l: usize) -> [f64; 3] {
        [self.kx[i] as f64, self.ky[j] as f64, self.kz[l] as f64]
    }

    /// Weight of a stored mode in sums over the full spectrum: the planes
    /// `kz = 0` and `kz = n/2` are their own conjugate partners.
    pub fn hermitian_weight(&self, l: usize) -> f64 {
        let kz = self.kz[l];
        if kz == 0 || kz as usize == self.n / 2 {
            1.0
        } else {
            2.0
        }
    }
}

pub fn wavenumbers(cfg: &SolverConfig, layout: &RankLayout) -> WavenumberMesh {
    let n = layout.n;
    let b = &layout.spec;
    let kx: Vec<i64> = (b.offset[0]..b.offset[0] + b.shape[0]).map(|i| frequency(i, n)).collect();
    let ky: Vec<i64> = (b.offset[1]..b.offset[1] + b.shape[1]).map(|i| frequency(i, n)).collect();
    let kz: Vec<i64> = (b.offset[2]..b.offset[2] + b.shape[2]).map(|i| i as i64).collect();

    let shape = (kx.len(), ky.len(), kz.len());
    let k2 = Array3::from_shape_fn(shape, |(i, j, l)| (kx[i] * kx[i] + ky[j] * ky[j] + kz[l] * kz[l]) as f64);
    let inv = |i: usize, j: usize, l: usize, k: i64| {
        let k2 = k2[[i, j, l]];
        if k2 == 0.0 {
            0.0
        } else {
            k as f64 / k2
        }
    };
    let k_over_k2 = [
        Array3::from_shape_fn(shape, |(i, j, l)| inv(i, j, l, kx[i])),
        Array3::from_shape_fn(shape, |(i, j, l)| inv(i, j, l, ky[j])),
        Array3::from_shape_fn(shape, |(i, j, l)| inv(i, j, l, kz[l])),
    ];
    let mut wm = WavenumberMesh {
        n,
        kx,
        ky,
        kz,
        k2,
        k_over_k2,
        dealias_mask: Array3::from_elem(shape, true),
    };
    wm.dealias_mask = dealias_mask(cfg, &wm);
    wm
}

/// Per-axis 2/3 truncation: keep a mode iff every `|k_i| < n/3`.
pub fn dealias_mask(cfg: &SolverConfig, wm: &WavenumberMesh) -> Array3<bool> {
    let shape = (wm.kx.len(), wm.ky.len(), wm.kz.len());
    if !cfg.dealias {
        return Array3::from_elem(shape, true);
    }
    let n = wm.n as i64;
    let keep = |k: i64| 3 * k.abs() < n;
    Array3::from_shape_fn(shape, |(i, j, l)| keep(wm.kx[i]) && keep(wm.ky[j]) && keep(wm.kz[l]))
}
