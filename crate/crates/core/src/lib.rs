pub mod error;
pub mod graph;
pub mod interpret;
pub mod io;
pub mod model;
pub mod numerics;
pub mod record;
pub mod sigproc;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use record::{AecgRecord, NormStats, RecordMeta};
