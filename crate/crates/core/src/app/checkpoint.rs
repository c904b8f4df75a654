//! Binary velocity checkpoints.
//!
//! Layout (little-endian):
//!
//! | bytes  | field                          |
//! |--------|--------------------------------|
//! | 0..4   | magic `SDNS`                   |
//! | 4..8   | format version, u32 (= 1)      |
//! | 8..16  | n, u64                         |
//! | 16..24 | t, f64                         |
//! | 24..32 | step, u64                      |
//! | 32..36 | component count, u32 (= 3)     |
//! | 36..40 | zero padding                   |
//! | 40..   | `3 n^3` f64 samples            |
//!
//! Samples are component-major, then global x-major (`(x * n + y) * n + z`),
//! so a file does not depend on the decomposition that wrote it. Rank 0
//! does all file I/O; blocks move to and from it through `all_to_all`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{build_layout, Block3, SolverConfig};
use crate::ns_core::RealField3;
use crate::transport::{BlockBuffer, Communicator};

pub const MAGIC: [u8; 4] = *b"SDNS";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckpointHeader {
    pub n: usize,
    pub t: f64,
    pub step: u64,
}

/// Serializes a header and the full global payload.
pub fn encode(h: &CheckpointHeader, payload: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * payload.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(h.n as u64).to_le_bytes());
    out.extend_from_slice(&h.t.to_le_bytes());
    out.extend_from_slice(&h.step.to_le_bytes());
    out.extend_from_slice(&3u32.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn field<const N: usize>(bytes: &[u8], at: usize) -> [u8; N] {
    bytes[at..at + N].try_into().expect("length checked")
}

pub fn decode(bytes: &[u8]) -> Result<(CheckpointHeader, Vec<f64>)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Checkpoint(format!("file too short for a header ({} bytes)", bytes.len())));
    }
    if bytes[0..4] != MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {:?}", &bytes[0..4])));
    }
    let version = u32::from_le_bytes(field(bytes, 4));
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let n = u64::from_le_bytes(field(bytes, 8)) as usize;
    let t = f64::from_le_bytes(field(bytes, 16));
    let step = u64::from_le_bytes(field(bytes, 24));
    let ncomp = u32::from_le_bytes(field(bytes, 32));
    if ncomp != 3 {
        return Err(Error::Checkpoint(format!("expected 3 components, found {ncomp}")));
    }
    let want = n
        .checked_pow(3)
        .and_then(|v| v.checked_mul(3 * 8))
        .ok_or_else(|| Error::Checkpoint(format!("implausible n = {n}")))?;
    let body = &bytes[HEADER_LEN..];
    if body.len() != want {
        return Err(Error::Checkpoint(format!(
            "payload is {} bytes, expected {want} for n = {n}",
            body.len()
        )));
    }
    let payload = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((CheckpointHeader { n, t, step }, payload))
}

/// Global flat indices of a physical block, in the block's row-major order.
fn global_indices(b: &Block3, n: usize) -> impl Iterator<Item = usize> + '_ {
    let [sx, sy, sz] = b.shape;
    let [ox, oy, oz] = b.offset;
    (0..sx).flat_map(move |i| {
        (0..sy).flat_map(move |j| (0..sz).map(move |k| ((ox + i) * n + oy + j) * n + oz + k))
    })
}

fn real_blocks(cfg: &SolverConfig, size: usize) -> Result<Vec<Block3>> {
    (0..size).map(|r| build_layout(cfg, r).map(|l| l.real)).collect()
}

/// Turns a root-side outcome into the same verdict on every rank.
fn agree<C: Communicator>(comm: &C, outcome: Result<()>) -> Result<()> {
    let flag = if comm.rank() == 0 { vec![outcome.is_ok() as u8] } else { Vec::new() };
    let ok = comm.broadcast(flag, 0)?[0] == 1;
    match (outcome, ok) {
        (Err(e), _) => Err(e),
        (Ok(()), true) => Ok(()),
        (Ok(()), false) => Err(Error::Checkpoint("rank 0 failed to access the checkpoint".into())),
    }
}

/// Collective write of the velocity field.
pub fn write_checkpoint<C: Communicator>(
    path: &Path,
    cfg: &SolverConfig,
    comm: &C,
    u: &RealField3,
    t: f64,
    step: u64,
) -> Result<()> {
    let size = comm.size();
    let blocks = real_blocks(cfg, size)?;
    let mine = &blocks[comm.rank()];
    if u.shape() != mine.shape {
        return Err(Error::layout(format!("checkpoint field has shape {:?}, expected {:?}", u.shape(), mine.shape)));
    }
    let mut send_counts = vec![0; size];
    send_counts[0] = 3 * mine.len();
    let mut data = Vec::with_capacity(3 * mine.len());
    for c in 0..3 {
        data.extend(u[c].iter().copied());
    }
    let recv_counts: Vec<usize> = if comm.rank() == 0 {
        blocks.iter().map(|b| 3 * b.len()).collect()
    } else {
        vec![0; size]
    };
    let recv = comm.all_to_all(BlockBuffer::new(data, send_counts), &recv_counts)?;

    let outcome = if comm.rank() == 0 {
        let n = cfg.n;
        let n3 = n * n * n;
        let mut global = vec![0.0; 3 * n3];
        for (r, b) in blocks.iter().enumerate() {
            let block = recv.block(r);
            for c in 0..3 {
                let part = &block[c * b.len()..(c + 1) * b.len()];
                for (v, g) in part.iter().zip(global_indices(b, n)) {
                    global[c * n3 + g] = *v;
                }
            }
        }
        let bytes = encode(&CheckpointHeader { n, t, step }, &global);
        std::fs::write(path, bytes)
            .map_err(|e| Error::Checkpoint(format!("cannot write {}: {e}", path.display())))
    } else {
        Ok(())
    };
    agree(comm, outcome)
}

/// Collective read. Every rank receives its own block of the stored field.
pub fn read_checkpoint<C: Communicator>(
    path: &Path,
    cfg: &SolverConfig,
    comm: &C,
) -> Result<(RealField3, CheckpointHeader)> {
    let size = comm.size();
    let blocks = real_blocks(cfg, size)?;
    let mut loaded = None;
    let outcome = if comm.rank() == 0 {
        std::fs::read(path)
            .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))
            .and_then(|b| decode(&b))
            .and_then(|(h, p)| {
                if h.n != cfg.n {
                    return Err(Error::Checkpoint(format!("file has n = {}, run has n = {}", h.n, cfg.n)));
                }
                loaded = Some((h, p));
                Ok(())
            })
    } else {
        Ok(())
    };
    agree(comm, outcome)?;

    let header_words = match &loaded {
        Some((h, _)) => vec![h.t, h.step as f64],
        None => Vec::new(),
    };
    let hw = comm.broadcast(header_words, 0)?;
    let header = CheckpointHeader { n: cfg.n, t: hw[0], step: hw[1] as u64 };

    let (send, send_counts) = match &loaded {
        Some((_, payload)) => {
            let n3 = cfg.n * cfg.n * cfg.n;
            let mut data = Vec::with_capacity(payload.len());
            for b in &blocks {
                for c in 0..3 {
                    data.extend(global_indices(b, cfg.n).map(|g| payload[c * n3 + g]));
                }
            }
            (data, blocks.iter().map(|b| 3 * b.len()).collect())
        }
        None => (Vec::new(), vec![0; size]),
    };
    let mine = &blocks[comm.rank()];
    let mut recv_counts = vec![0; size];
    recv_counts[0] = 3 * mine.len();
    let recv = comm.all_to_all(BlockBuffer::new(send, send_counts), &recv_counts)?;
    let data = recv.block(0);
    let len = mine.len();
    let shape = (mine.shape[0], mine.shape[1], mine.shape[2]);
    let comps = std::array::from_fn(|c| {
        ndarray::Array3::from_shape_vec(shape, data[c * len..(c + 1) * len].to_vec()).expect("block length")
    });
    Ok((RealField3::from_components(comps), header))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ns_core::NsSolver;
    use crate::transport::Loopback;

    #[test]
    fn header_layout() {
        let bytes = encode(&CheckpointHeader { n: 4, t: 0.5, step: 7 }, &vec![1.0; 3 * 64]);
        assert_eq!(bytes.len(), HEADER_LEN + 3 * 64 * 8);
        assert_eq!(&bytes[0..4], b"SDNS");
        assert_eq!(bytes[4..8], 1u32.to_le_bytes());
        assert_eq!(bytes[8..16], 4u64.to_le_bytes());
        assert_eq!(bytes[16..24], 0.5f64.to_le_bytes());
        assert_eq!(bytes[24..32], 7u64.to_le_bytes());
        assert_eq!(bytes[32..36], 3u32.to_le_bytes());
        assert_eq!(bytes[40..48], 1.0f64.to_le_bytes());
        let (h, p) = decode(&bytes).unwrap();
        assert_eq!((h.n, h.t, h.step, p.len()), (4, 0.5, 7, 192));
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let good = encode(&CheckpointHeader { n: 4, t: 0.0, step: 0 }, &vec![0.0; 192]);
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(decode(&bad).unwrap_err().to_string().contains("magic"));
        let mut bad = good.clone();
        bad[4] = 2;
        assert!(decode(&bad).unwrap_err().to_string().contains("version"));
        assert!(decode(&good[..good.len() - 8]).unwrap_err().to_string().contains("payload"));
        assert!(decode(&good[..20]).is_err());
    }

    #[test]
    fn single_rank_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.chk");
        let cfg = SolverConfig::taylor_green(8);
        let s = NsSolver::new(&cfg, Loopback).unwrap();
        let u = crate::ns_core::taylor_green_init(s.layout(), &s.mesh);
        write_checkpoint(&path, &cfg, &Loopback, &u, 0.25, 3).unwrap();
        let (back, h) = read_checkpoint(&path, &cfg, &Loopback).unwrap();
        assert_eq!(back, u);
        assert_eq!((h.t, h.step), (0.25, 3));

        // Global x-major order: sample (x=1, y=0, z=0) of u sits at index n^2.
        let (_, payload) = decode(&std::fs::read(&path).unwrap()).unwrap();
        assert_eq!(payload[64], u[0][[1, 0, 0]]);

        let other = SolverConfig::taylor_green(16);
        assert!(read_checkpoint(&path, &other, &Loopback).is_err());
        assert!(read_checkpoint(&dir.path().join("missing"), &cfg, &Loopback).is_err());
    }
}
