//! Configuration, dataset ingestion, checkpoints, and artifact emission.

pub mod checkpoint;
pub mod config;
pub mod csv;
pub mod idx;
pub mod pgm;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::RunConfig;
pub use csv::write_csv;
pub use idx::{load_idx, IdxMode};
pub use pgm::{write_pgm, write_pgm_grid};
