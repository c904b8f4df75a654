mod common;

use common::*;
use sdns::app::checkpoint::{decode, encode, read_checkpoint, write_checkpoint, CheckpointHeader, HEADER_LEN};
use sdns::ns_core::RealField3;
use sdns::transport::{launch, Communicator, LocalComm, LocalOptions, Loopback};
use sdns::{Error, SolverConfig};

fn write_from(cfg: &SolverConfig, path: &std::path::Path, global: &[ndarray::Array3<f64>]) {
    for r in launch(cfg.p, LocalOptions::default(), |comm: LocalComm| {
        let b = real_block(cfg, comm.rank());
        let u = RealField3::from_components(std::array::from_fn(|c| cut(&global[c], &b)));
        write_checkpoint(path, cfg, &comm, &u, 1.5, 1500)
    }) {
        r.unwrap();
    }
}

fn read_into(cfg: &SolverConfig, path: &std::path::Path) -> Vec<ndarray::Array3<f64>> {
    let n = cfg.n;
    let mut global = vec![ndarray::Array3::from_elem((n, n, n), f64::NAN); 3];
    for r in launch(cfg.p, LocalOptions::default(), |comm: LocalComm| {
        let (u, h) = read_checkpoint(path, cfg, &comm)?;
        assert_eq!((h.t, h.step), (1.5, 1500));
        Ok::<_, Error>((real_block(cfg, comm.rank()), u))
    }) {
        let (b, u) = r.unwrap();
        for c in 0..3 {
            paste(&mut global[c], &b, &u[c]);
        }
    }
    global
}

#[test]
fn any_layout_reads_any_other() {
    let n = 16;
    let global: Vec<_> = (0..3).map(|c| random_global(n, 5 + c)).collect();
    let layouts = [
        SolverConfig::taylor_green(n),
        SolverConfig::taylor_green(n).with_slab(2),
        SolverConfig::taylor_green(n).with_slab(8),
        SolverConfig::taylor_green(n).with_pencil(2, 2),
        SolverConfig::taylor_green(n).with_pencil(4, 2),
        SolverConfig::taylor_green(n).with_pencil(1, 4),
    ];
    let dir = tempfile::tempdir().unwrap();
    for (i, w) in layouts.iter().enumerate() {
        let path = dir.path().join(format!("w{i}.chk"));
        write_from(w, &path, &global);
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + 3 * n * n * n * 8);
        for r in &layouts {
            let back = read_into(r, &path);
            for c in 0..3 {
                assert!(back[c].iter().zip(global[c].iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
            }
        }
    }
}

#[test]
fn files_from_different_layouts_are_identical() {
    let n = 8;
    let global: Vec<_> = (0..3).map(|c| random_global(n, 50 + c)).collect();
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.chk");
    let b = dir.path().join("b.chk");
    write_from(&SolverConfig::taylor_green(n).with_slab(4), &a, &global);
    write_from(&SolverConfig::taylor_green(n).with_pencil(2, 4), &b, &global);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn corrupt_or_mismatched_files_fail_on_every_rank() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.chk");
    let mut bytes = encode(&CheckpointHeader { n: 8, t: 0.0, step: 0 }, &vec![0.0; 3 * 512]);
    bytes[1] = b'X';
    std::fs::write(&path, &bytes).unwrap();
    let cfg = SolverConfig::taylor_green(8).with_slab(2);
    for r in launch(2, LocalOptions::default(), |comm: LocalComm| read_checkpoint(&path, &cfg, &comm).map(|_| ())) {
        assert!(matches!(r, Err(Error::Checkpoint(_))), "{r:?}");
    }

    let truncated = encode(&CheckpointHeader { n: 8, t: 0.0, step: 0 }, &vec![0.0; 3 * 512 - 1]);
    assert!(decode(&truncated).is_err());
    std::fs::write(&path, &truncated).unwrap();
    assert!(read_checkpoint(&path, &SolverConfig::taylor_green(8), &Loopback).is_err());
}
