//! Benchmark and conformance harness around `featrack`.
//!
//! The `featrack-bench` binary is a thin command-line layer over
//! [`run_detect`] and [`run_track`]; both are usable in-process.

use std::path::PathBuf;

use thiserror::Error;

pub mod config;
pub mod report;
pub mod run;
pub mod sequence;

pub use config::RunConfig;
pub use report::RunReport;
pub use run::{run_detect, run_track, run_track_sweep, DetectRow, SweepAxis, TrackRow};
pub use sequence::{load_sequence, pan_sequence, write_pan_sequence, Frame, PanSpec};

/// Problems with the inputs of a run: files, frames or configuration.
#[derive(Debug, Error)]
pub enum InputError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("frame {frame}: {source}")]
    Frame {
        frame: String,
        #[source]
        source: featrack::image::ImageError,
    },
    #[error("frame {frame} is {actual:?}, earlier frames are {expected:?}")]
    Dimensions {
        frame: String,
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("no .pgm frames in {0}")]
    EmptySequence(PathBuf),
    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("{0}")]
    Frontend(#[from] featrack::frontend::FrontendError),
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
}
