//! Run reports: stage timings, NMS instrumentation, feature counts and
//! conformance against the reference detector.

use std::time::Duration;

use featrack::frontend::StageTimings;
use featrack::nms::NmsStats;
use serde::Serialize;

use crate::config::RunConfig;

/// Mean, median and 95th percentile of one stage, in microseconds.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageRow {
    pub stage: &'static str,
    pub mean_us: f64,
    pub median_us: f64,
    pub p95_us: f64,
}

impl StageRow {
    fn summarize(stage: &'static str, samples: &[f64]) -> Self {
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        if n == 0 {
            return Self {
                stage,
                mean_us: 0.0,
                median_us: 0.0,
                p95_us: 0.0,
            };
        }
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        // nearest rank
        let p95 = sorted[((0.95 * n as f64).ceil() as usize).clamp(1, n) - 1];
        Self {
            stage,
            mean_us: sorted.iter().sum::<f64>() / n as f64,
            median_us: median,
            p95_us: p95,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FrameRow {
    pub frame: usize,
    pub name: String,
    pub features: usize,
    pub pyramid_us: f64,
    pub crf_us: f64,
    pub nms_us: f64,
    pub track_us: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct NmsSummary {
    pub radius: usize,
    pub candidates: u64,
    pub spiral_comparisons_per_candidate: f64,
    pub raster_comparisons_per_candidate: f64,
    /// `(2n+1)²`, the full neighborhood size.
    pub neighborhood: usize,
}

impl NmsSummary {
    pub fn new(radius: usize, stats: NmsStats) -> Self {
        Self {
            radius,
            candidates: stats.candidates,
            spiral_comparisons_per_candidate: stats.mean_spiral(),
            raster_comparisons_per_candidate: stats.mean_raster(),
            neighborhood: (2 * radius + 1).pow(2),
        }
    }
}

/// Emitted features compared with the corners of the reference detector.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Conformance {
    /// Emitted features that are reference corners.
    pub matched: u64,
    /// Reference corners not emitted (suppressed or not their cell's best).
    pub subset_only: u64,
    /// Emitted features that are not reference corners.
    pub false_positives: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrackingSummary {
    /// Mean over frames with existing tracks of converged / attempted.
    pub mean_convergence: f64,
    /// Mean tracker iterations per attempted track.
    pub mean_iterations: f64,
    pub births: u64,
    pub redetections: u64,
    pub retired_converged_duplicates: u64,
    pub retired_diverged: u64,
    pub retired_out_of_bounds: u64,
    pub retired_singular: u64,
    pub retired_max_iterations: u64,
    /// Mean frames between birth and retirement of retired tracks.
    pub mean_lifetime: f64,
}

/// One session of a `--sweep`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub target_count: usize,
    pub param_mode: String,
    pub mean_live: f64,
    pub mean_track_us: f64,
    pub mean_total_us: f64,
    pub mean_convergence: f64,
    pub mean_iterations: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub command: &'static str,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub config: RunConfig,
    pub stages: Vec<StageRow>,
    pub nms: NmsSummary,
    pub mean_features: f64,
    pub per_frame: Vec<FrameRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub conformance: Option<Conformance>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tracking: Option<TrackingSummary>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub sweep: Vec<SweepRow>,
}

fn micros(d: Duration) -> f64 {
    d.as_secs_f64() * 1e6
}

impl RunReport {
    pub(crate) fn new(command: &'static str, dims: (usize, usize), config: RunConfig, per_frame: Vec<FrameRow>, nms: NmsSummary) -> Self {
        let column = |f: fn(&FrameRow) -> f64| per_frame.iter().map(f).collect::<Vec<_>>();
        let stages = vec![
            StageRow::summarize("Pyramid", &column(|r| r.pyramid_us)),
            StageRow::summarize("CRF", &column(|r| r.crf_us)),
            StageRow::summarize("NMS", &column(|r| r.nms_us)),
            StageRow::summarize("Track", &column(|r| r.track_us)),
        ];
        let mean_features = if per_frame.is_empty() {
            0.0
        } else {
            per_frame.iter().map(|r| r.features as f64).sum::<f64>() / per_frame.len() as f64
        };
        Self {
            command,
            frames: per_frame.len(),
            width: dims.0,
            height: dims.1,
            config,
            stages,
            nms,
            mean_features,
            per_frame,
            conformance: None,
            tracking: None,
            sweep: Vec::new(),
        }
    }

    pub fn stage(&self, name: &str) -> Option<&StageRow> {
        self.stages.iter().find(|s| s.stage == name)
    }

    pub fn to_text(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is always serializable")
    }
}

pub(crate) fn frame_row(frame: usize, name: &str, features: usize, t: &StageTimings) -> FrameRow {
    FrameRow {
        frame,
        name: name.to_owned(),
        features,
        pyramid_us: micros(t.pyramid),
        crf_us: micros(t.crf),
        nms_us: micros(t.nms),
        track_us: micros(t.track),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_statistics() {
        let s = StageRow::summarize("x", &[4.0, 1.0, 3.0, 2.0]);
        assert_eq!((s.mean_us, s.median_us, s.p95_us), (2.5, 2.5, 4.0));
        let samples: Vec<f64> = (1..=100).map(f64::from).collect();
        let s = StageRow::summarize("x", &samples);
        assert_eq!((s.median_us, s.p95_us), (50.5, 95.0));
        assert_eq!(StageRow::summarize("x", &[]).mean_us, 0.0);
    }
}
