//! Command-line application: configuration, runs, checkpoints, benchmarks.

pub mod bench;
pub mod checkpoint;
pub mod config;
pub mod run;

pub use bench::{bench, parse_matrix, write_bench_csv, BenchCase, BenchRow};
pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointHeader};
pub use config::{parse_config, parse_config_str, ConfigValues};
pub use run::{run, Backend, RunManifest, RunOptions};
