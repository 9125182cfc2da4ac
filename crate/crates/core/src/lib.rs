//! Sparse feature detection and tracking for visual(-inertial) odometry
//! frontends.
//!
//! - [`image`]: pitched grayscale images, halving pyramids, bilinear sampling, PGM I/O.
//! - [`fast`]: FAST segment test through an 8 KiB bit lookup table, with
//!   SAD-B, SAD-A and maximum-threshold scores.
//! - [`nms`]: spiral neighborhood suppression fused with one-maximum-per-cell
//!   selection over all pyramid levels.
//! - [`lk`]: pyramidal inverse-compositional Lucas-Kanade with gain/offset
//!   illumination estimation.
//! - [`frontend`]: detect/track lifecycle with threshold-triggered re-detection.
//! - [`oracle`]: slow reference implementations used as test oracles.
//! - [`synth`]: analytic synthetic scenes with known motion.
//!
//! Every stage is a pure function of its inputs. Parallel stages run on the
//! current rayon pool and produce bit-identical results for any thread count.

pub mod fast;
pub mod frontend;
pub mod image;
pub mod lk;
pub mod nms;
pub mod oracle;
pub mod synth;

pub use fast::{
    build_lookup_table, classify_pixel, corner_score, detect_responses, FastParams, LookupTable,
    ResponseMap, ScoreKind,
};
pub use frontend::{Frontend, FrontendConfig, FrameReport, StageTimings, TrackSnapshot};
pub use image::{build_pyramid, sample_bilinear, Image, ImagePyramid};
pub use lk::{
    build_template, track_all, track_feature, ParamMode, PatchTemplate, TrackResult, TrackStatus,
    TrackerConfig, WarpState,
};
pub use nms::{suppress_and_select, CellMax, FeatureGrid, GridConfig};
