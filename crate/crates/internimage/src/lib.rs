//! File formats, reports, benchmarks and check suites behind the `internimage`
//! command-line tool. The numerics live in [`dcnv3_core`].

pub mod bench;
pub mod config_file;
pub mod report;
pub mod suite;
pub mod threads;
pub mod weights;
