//! Command-line front end: corpus generation, annotation, training,
//! refinement and evaluation over motion files.

pub mod commands;
pub mod corpus;
pub mod motion_file;
pub mod plots;

pub use commands::{run, Cli, ExitCode};
pub use motion_file::MotionFile;
