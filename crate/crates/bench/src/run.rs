//! Detection-only and full-session runs over a loaded sequence.

use std::io::Write;
use std::time::Instant;

use featrack::frontend::StageTimings;
use featrack::nms::{suppress_and_select_with_stats, NmsStats};
use featrack::oracle::naive_fast;
use featrack::{build_lookup_table, build_pyramid, detect_responses, Frontend, ParamMode, TrackStatus};
use serde::Serialize;

use crate::config::RunConfig;
use crate::report::{frame_row, Conformance, FrameRow, NmsSummary, RunReport, SweepRow, TrackingSummary};
use crate::sequence::Frame;
use crate::InputError;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DetectRow {
    pub frame: usize,
    pub cell: usize,
    pub x: usize,
    pub y: usize,
    pub level: usize,
    pub score: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrackRow {
    pub frame: usize,
    pub track_id: u64,
    pub x: f64,
    pub y: f64,
    pub status: String,
    pub alpha: f64,
    pub beta: f64,
}

fn dims(frames: &[Frame]) -> Result<(usize, usize), InputError> {
    frames
        .first()
        .map(|f| (f.image.width(), f.image.height()))
        .ok_or_else(|| InputError::Invalid("empty sequence".into()))
}

fn add_stats(a: NmsStats, b: NmsStats) -> NmsStats {
    NmsStats {
        candidates: a.candidates + b.candidates,
        spiral_comparisons: a.spiral_comparisons + b.spiral_comparisons,
        raster_comparisons: a.raster_comparisons + b.raster_comparisons,
    }
}

/// Detection on every frame; with `oracle`, every emitted feature is also
/// checked against the reference detector.
pub fn run_detect(frames: &[Frame], cfg: &RunConfig, oracle: bool) -> Result<(RunReport, Vec<DetectRow>), InputError> {
    let dims = dims(frames)?;
    let params = cfg.fast()?;
    let grid_cfg = cfg.grid()?;
    let lut = build_lookup_table(params.arc_length()).map_err(|e| InputError::Invalid(e.to_string()))?;
    let mut rows = Vec::new();
    let mut per_frame = Vec::with_capacity(frames.len());
    let mut stats = NmsStats::default();
    let mut conformance = Conformance::default();
    for (i, frame) in frames.iter().enumerate() {
        let mut t = StageTimings::default();
        let start = Instant::now();
        let pyr = build_pyramid(&frame.image, cfg.levels).map_err(|source| InputError::Frame {
            frame: frame.name.clone(),
            source,
        })?;
        t.pyramid = start.elapsed();
        let start = Instant::now();
        let responses = detect_responses(&pyr, &params, &lut).map_err(|e| InputError::Invalid(e.to_string()))?;
        t.crf = start.elapsed();
        let start = Instant::now();
        let (grid, s) =
            suppress_and_select_with_stats(&responses, &grid_cfg).map_err(|e| InputError::Invalid(e.to_string()))?;
        t.nms = start.elapsed();
        stats = add_stats(stats, s);

        for (cell, f) in grid.features() {
            rows.push(DetectRow {
                frame: i,
                cell,
                x: f.x,
                y: f.y,
                level: f.level,
                score: f.score,
            });
        }
        if oracle {
            let reference: Vec<_> = (0..pyr.num_levels()).map(|k| naive_fast(pyr.level(k), &params)).collect();
            let corners: u64 = reference.iter().map(|r| r.nonzero().len() as u64).sum();
            let mut matched = 0;
            for (_, f) in grid.features() {
                let (x, y) = (f.x >> f.level, f.y >> f.level);
                if reference[f.level].get(x, y) > 0.0 {
                    matched += 1;
                } else {
                    conformance.false_positives += 1;
                }
            }
            conformance.matched += matched;
            conformance.subset_only += corners - matched;
        }
        per_frame.push(frame_row(i, &frame.name, grid.len(), &t));
    }
    let mut report = RunReport::new("detect", dims, *cfg, per_frame, NmsSummary::new(cfg.nms_radius, stats));
    if oracle {
        report.conformance = Some(conformance);
    }
    Ok((report, rows))
}

/// Full detect-and-track session over the sequence.
pub fn run_track(frames: &[Frame], cfg: &RunConfig) -> Result<(RunReport, Vec<TrackRow>), InputError> {
    let dims = dims(frames)?;
    let mut fe = Frontend::new(cfg.frontend()?)?;
    let mut rows = Vec::new();
    let mut per_frame: Vec<FrameRow> = Vec::with_capacity(frames.len());
    let mut stats = NmsStats::default();
    let mut summary = TrackingSummary::default();
    let (mut conv_sum, mut conv_frames) = (0.0, 0usize);
    let (mut iter_sum, mut attempted_total) = (0usize, 0usize);
    let (mut lifetime_sum, mut lifetime_n) = (0usize, 0usize);
    for (i, frame) in frames.iter().enumerate() {
        let r = fe.process_frame(&frame.image)?;
        let lost: Vec<_> = r.retired.iter().filter(|t| t.status != TrackStatus::Converged).collect();
        let attempted = r.live_before_detection + lost.len();
        if attempted > 0 {
            conv_sum += r.live_before_detection as f64 / attempted as f64;
            conv_frames += 1;
            attempted_total += attempted;
            iter_sum += r.retired.iter().map(|t| t.iterations).sum::<usize>();
            iter_sum += r.tracks.iter().filter(|t| t.birth_frame < i).map(|t| t.iterations).sum::<usize>();
        }
        for t in &r.retired {
            match t.status {
                TrackStatus::Converged => summary.retired_converged_duplicates += 1,
                TrackStatus::Diverged => summary.retired_diverged += 1,
                TrackStatus::OutOfBounds => summary.retired_out_of_bounds += 1,
                TrackStatus::SingularHessian => summary.retired_singular += 1,
                TrackStatus::MaxIterations => summary.retired_max_iterations += 1,
            }
            lifetime_sum += i - t.birth_frame;
            lifetime_n += 1;
        }
        if r.redetected {
            summary.redetections += 1;
        }
        summary.births += r.born as u64;
        if let Some(s) = r.nms_stats {
            stats = add_stats(stats, s);
        }
        let mut frame_rows: Vec<TrackRow> = r
            .tracks
            .iter()
            .chain(&r.retired)
            .map(|t| TrackRow {
                frame: i,
                track_id: t.id,
                x: t.x,
                y: t.y,
                status: t.status.to_string(),
                alpha: t.alpha,
                beta: t.beta,
            })
            .collect();
        frame_rows.sort_by_key(|row| row.track_id);
        rows.extend(frame_rows);
        per_frame.push(frame_row(i, &frame.name, r.tracks.len(), &r.timings));
    }
    let ratio = |a: f64, n: usize| if n == 0 { 0.0 } else { a / n as f64 };
    summary.mean_convergence = ratio(conv_sum, conv_frames);
    summary.mean_iterations = ratio(iter_sum as f64, attempted_total);
    summary.mean_lifetime = ratio(lifetime_sum as f64, lifetime_n);
    let mut report = RunReport::new("track", dims, *cfg, per_frame, NmsSummary::new(cfg.nms_radius, stats));
    report.tracking = Some(summary);
    Ok((report, rows))
}

/// What a `--sweep` varies between sessions.
#[derive(Clone, Debug, PartialEq)]
pub enum SweepAxis {
    TargetCounts(Vec<usize>),
    ParamModes(Vec<ParamMode>),
}

impl std::str::FromStr for SweepAxis {
    type Err = String;

    /// Comma-separated target counts (`25,50,100`) or parameter modes
    /// (`TRANSLATION,FULL`).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let items: Vec<&str> = s.split(',').map(str::trim).filter(|p| !p.is_empty()).collect();
        if items.is_empty() {
            return Err("empty sweep list".into());
        }
        if let Ok(counts) = items.iter().map(|p| p.parse::<usize>()).collect::<Result<Vec<_>, _>>() {
            return Ok(Self::TargetCounts(counts));
        }
        items
            .iter()
            .map(|p| p.parse::<ParamMode>())
            .collect::<Result<Vec<_>, _>>()
            .map(Self::ParamModes)
            .map_err(|e| format!("sweep entries must be all target counts or all parameter modes: {e}"))
    }
}

/// One session per sweep entry, summarized as rows.
pub fn run_track_sweep(frames: &[Frame], cfg: &RunConfig, axis: &SweepAxis) -> Result<Vec<SweepRow>, InputError> {
    let configs: Vec<RunConfig> = match axis {
        SweepAxis::TargetCounts(counts) => counts
            .iter()
            .map(|&target_count| RunConfig {
                target_count,
                ..*cfg
            })
            .collect(),
        SweepAxis::ParamModes(modes) => modes
            .iter()
            .map(|&param_mode| RunConfig { param_mode, ..*cfg })
            .collect(),
    };
    configs
        .iter()
        .map(|c| {
            let (report, _) = run_track(frames, c)?;
            let n = report.per_frame.len().max(1) as f64;
            let tracking = report.tracking.clone().unwrap_or_default();
            Ok(SweepRow {
                target_count: c.target_count,
                param_mode: c.param_mode.to_string(),
                mean_live: report.mean_features,
                mean_track_us: report.stage("Track").map_or(0.0, |s| s.mean_us),
                mean_total_us: report
                    .per_frame
                    .iter()
                    .map(|r| r.pyramid_us + r.crf_us + r.nms_us + r.track_us)
                    .sum::<f64>()
                    / n,
                mean_convergence: tracking.mean_convergence,
                mean_iterations: tracking.mean_iterations,
            })
        })
        .collect()
}

pub const DETECT_HEADER: [&str; 6] = ["frame", "cell", "x", "y", "level", "score"];
pub const TRACK_HEADER: [&str; 7] = ["frame", "track_id", "x", "y", "status", "alpha", "beta"];

/// Writes rows as CSV under `header`, which is emitted even with no rows.
pub fn write_csv<T: Serialize, W: Write>(out: W, header: &[&str], rows: &[T]) -> Result<(), InputError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
