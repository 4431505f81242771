//! One module per subcommand.

pub mod bench;
pub mod convert;
pub mod eval;
pub mod infer;
pub mod phantom;
pub mod report;
pub mod stats;
pub mod sweep;
pub mod thickness;
pub mod train;
