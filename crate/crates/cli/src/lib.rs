//! Grid expansion, grid execution and cross-run reports behind the
//! `udakit` binary.

pub mod grid;
pub mod report;
