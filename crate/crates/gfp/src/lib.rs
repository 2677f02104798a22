//! File formats, fixtures and the pruning pipeline behind the `gfp`
//! command-line tool. The algorithms live in [`gfp_core`].

pub mod blob;
pub mod dataset;
pub mod fixtures;
pub mod ledger;
pub mod manifest;
pub mod run;

pub use gfp_core as core;
