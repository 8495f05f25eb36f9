//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode {path}: {source}")]
    Decode {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("cannot encode {path}: {source}")]
    Encode {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("image has zero dimension")]
    ZeroDimension,

    #[error("mask is {got_w}x{got_h}, expected {want_w}x{want_h}")]
    DimensionMismatch {
        got_w: u32,
        got_h: u32,
        want_w: u32,
        want_h: u32,
    },

    #[error("empty target region: mask selects no pixels")]
    EmptyMask,

    #[error("mask covers the entire image; nothing to fill from")]
    FullMask,

    #[error("region is empty")]
    EmptyRegion,

    #[error("histograms have {left} and {right} bins")]
    HistogramMismatch { left: usize, right: usize },

    #[error("points are coincident")]
    CoincidentPoints,

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("spectral weight is positive but no spectral detector was supplied")]
    MissingSpectralDetector,

    #[error("known region is empty")]
    EmptyKnownRegion,

    #[error("no valid candidate patch: the known region admits no full patch window")]
    NoCandidates,

    #[error("no valid exemplar window for fill")]
    NoExemplar,

    #[error("fill stalled with {remaining} unknown pixels")]
    FillStalled { remaining: usize },

    #[error("curve generation failed: {0}")]
    CurveDropped(String),

    #[error("config error: {0}")]
    Config(String),
}
