//! Detect-and-track session over an image sequence.

use std::time::{Duration, Instant};

use thiserror::Error;

use crate::fast::{detect_level, FastError, FastParams, LookupTable};
use crate::image::{build_pyramid, Image, ImageError, ImagePyramid};
use crate::lk::{
    build_template, track_all, PatchTemplate, TrackInput, TrackStatus, TrackerConfig, WarpState,
};
use crate::nms::{suppress_and_select_with_stats, CellMax, GridConfig, NmsError, NmsStats};

#[derive(Debug, Error)]
pub enum FrontendError {
    #[error("frame is {actual:?}, session started with {expected:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("invalid frontend configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Fast(#[from] FastError),
    #[error(transparent)]
    Nms(#[from] NmsError),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrontendConfig {
    pub target_count: usize,
    /// Re-detect when live tracks drop below this fraction of the target.
    pub redetect_ratio: f64,
    pub fast: FastParams,
    pub grid: GridConfig,
    pub tracker: TrackerConfig,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            target_count: 100,
            redetect_ratio: 0.3,
            fast: FastParams::default(),
            grid: GridConfig::default(),
            tracker: TrackerConfig::default(),
        }
    }
}

impl FrontendConfig {
    /// Live-track count below which re-detection runs: `⌈ratio · target⌉`.
    pub fn redetect_threshold(&self) -> usize {
        let x = self.redetect_ratio * self.target_count as f64;
        // 0.3 · 100 is 30.000000000000004 in binary floating point
        if (x - x.round()).abs() < 1e-9 {
            x.round() as usize
        } else {
            x.ceil() as usize
        }
    }

    fn validate(&self) -> Result<(), FrontendError> {
        if !(self.redetect_ratio > 0.0 && self.redetect_ratio < 1.0) {
            return Err(FrontendError::InvalidConfig(format!(
                "redetect_ratio must be in (0, 1), got {}",
                self.redetect_ratio
            )));
        }
        if self.target_count == 0 {
            return Err(FrontendError::InvalidConfig("target_count must be positive".into()));
        }
        self.tracker
            .validate()
            .map_err(|e| FrontendError::InvalidConfig(e.to_string()))
    }
}

#[derive(Clone, Debug)]
pub struct Track {
    pub id: u64,
    /// Level-0 detection position; the current position is `anchor + t`.
    pub anchor: (usize, usize),
    pub state: WarpState,
    pub templates: Vec<PatchTemplate>,
    pub birth_frame: usize,
    pub last_frame: usize,
    pub status: TrackStatus,
    pub score: f32,
}

impl Track {
    pub fn position(&self) -> (f64, f64) {
        (
            self.anchor.0 as f64 + self.state.tx,
            self.anchor.1 as f64 + self.state.ty,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrackSnapshot {
    pub id: u64,
    pub x: f64,
    pub y: f64,
    pub alpha: f64,
    pub beta: f64,
    pub status: TrackStatus,
    pub birth_frame: usize,
    /// Tracker iterations spent on this frame (0 for newborn tracks).
    pub iterations: usize,
}

/// Wall-clock time per stage of one frame.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StageTimings {
    pub pyramid: Duration,
    pub crf: Duration,
    pub nms: Duration,
    pub track: Duration,
}

#[derive(Clone, Debug)]
pub struct FrameReport {
    pub frame_index: usize,
    /// Live tracks after this frame, by id.
    pub tracks: Vec<TrackSnapshot>,
    /// Tracks retired on this frame with the status that retired them.
    pub retired: Vec<TrackSnapshot>,
    /// Live count after tracking, before any re-detection.
    pub live_before_detection: usize,
    pub redetected: bool,
    pub born: usize,
    pub timings: StageTimings,
    pub nms_stats: Option<NmsStats>,
}

pub struct Frontend {
    cfg: FrontendConfig,
    lut: LookupTable,
    dims: Option<(usize, usize)>,
    tracks: Vec<Track>,
    next_id: u64,
    frame_index: usize,
}

impl Frontend {
    pub fn new(cfg: FrontendConfig) -> Result<Self, FrontendError> {
        cfg.validate()?;
        let lut = LookupTable::build(cfg.fast.arc_length())?;
        Ok(Self {
            cfg,
            lut,
            dims: None,
            tracks: Vec::new(),
            next_id: 0,
            frame_index: 0,
        })
    }

    pub fn config(&self) -> &FrontendConfig {
        &self.cfg
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    fn pyramid_levels(&self) -> usize {
        self.cfg.grid.num_levels().max(self.cfg.tracker.num_levels)
    }

    fn check_dims(&mut self, frame: &Image) -> Result<(), FrontendError> {
        let actual = (frame.width(), frame.height());
        match self.dims {
            Some(expected) if expected != actual => {
                Err(FrontendError::DimensionMismatch { expected, actual })
            }
            Some(_) => Ok(()),
            None => {
                let (cols, rows) = self.cfg.grid.grid_dims(actual.0, actual.1);
                if self.cfg.target_count > cols * rows {
                    return Err(FrontendError::InvalidConfig(format!(
                        "target_count {} exceeds the {} grid cells of a {}x{} frame",
                        self.cfg.target_count,
                        cols * rows,
                        actual.0,
                        actual.1
                    )));
                }
                self.dims = Some(actual);
                Ok(())
            }
        }
    }

    fn snapshot(track: &Track, iterations: usize) -> TrackSnapshot {
        let (x, y) = track.position();
        TrackSnapshot {
            id: track.id,
            x,
            y,
            alpha: track.state.alpha,
            beta: track.state.beta,
            status: track.status,
            birth_frame: track.birth_frame,
            iterations,
        }
    }

    pub fn process_frame(&mut self, frame: &Image) -> Result<FrameReport, FrontendError> {
        self.check_dims(frame)?;
        let frame_index = self.frame_index;
        let mut timings = StageTimings::default();

        let start = Instant::now();
        let pyr = build_pyramid(frame, self.pyramid_levels())?;
        timings.pyramid = start.elapsed();

        let start = Instant::now();
        let results = {
            let inputs: Vec<TrackInput<'_>> = self
                .tracks
                .iter()
                .map(|t| TrackInput {
                    feature: CellMax {
                        x: t.anchor.0,
                        y: t.anchor.1,
                        score: t.score,
                        level: 0,
                    },
                    templates: &t.templates,
                    init: t.state,
                })
                .collect();
            track_all(&inputs, &pyr, &self.cfg.tracker)
        };
        timings.track = start.elapsed();

        let mut retired = Vec::new();
        let mut iterations = Vec::with_capacity(results.len());
        let mut kept = Vec::with_capacity(self.tracks.len());
        for (mut track, res) in std::mem::take(&mut self.tracks).into_iter().zip(results) {
            track.state = res.state;
            track.status = res.status;
            if res.status == TrackStatus::Converged {
                track.last_frame = frame_index;
                iterations.push(res.total_iterations());
                kept.push(track);
            } else {
                retired.push(Self::snapshot(&track, res.total_iterations()));
            }
        }
        self.tracks = kept;
        let live_before_detection = self.tracks.len();

        let mut born = 0;
        let mut nms_stats = None;
        let redetected = live_before_detection < self.cfg.redetect_threshold();
        if redetected {
            let (b, stats) = self.redetect(&pyr, frame_index, &mut timings, &mut retired, &mut iterations)?;
            born = b;
            nms_stats = Some(stats);
        }

        let tracks = self
            .tracks
            .iter()
            .zip(iterations.iter().copied().chain(std::iter::repeat(0)))
            .map(|(t, it)| Self::snapshot(t, it))
            .collect();
        self.frame_index += 1;
        Ok(FrameReport {
            frame_index,
            tracks,
            retired,
            live_before_detection,
            redetected,
            born,
            timings,
            nms_stats,
        })
    }

    fn redetect(
        &mut self,
        pyr: &ImagePyramid,
        frame_index: usize,
        timings: &mut StageTimings,
        retired: &mut Vec<TrackSnapshot>,
        iterations: &mut Vec<usize>,
    ) -> Result<(usize, NmsStats), FrontendError> {
        let start = Instant::now();
        let responses = (0..self.cfg.grid.num_levels())
            .map(|k| detect_level(pyr.level(k), k, &self.cfg.fast, &self.lut))
            .collect::<Result<Vec<_>, _>>()?;
        timings.crf = start.elapsed();

        let start = Instant::now();
        let (mut grid, stats) = suppress_and_select_with_stats(&responses, &self.cfg.grid)?;
        timings.nms = start.elapsed();

        // one live track per cell: the oldest keeps it
        let mut occupied = vec![false; grid.num_cells()];
        let mut kept = Vec::with_capacity(self.tracks.len());
        let mut kept_iterations = Vec::with_capacity(self.tracks.len());
        for (track, it) in std::mem::take(&mut self.tracks).into_iter().zip(iterations.iter().copied()) {
            let (x, y) = track.position();
            let cell = grid.cell_index(x.round().max(0.0) as usize, y.round().max(0.0) as usize);
            match cell {
                Some(c) if !occupied[c] => {
                    occupied[c] = true;
                    kept.push(track);
                    kept_iterations.push(it);
                }
                Some(_) => retired.push(Self::snapshot(&track, it)),
                None => {
                    kept.push(track);
                    kept_iterations.push(it);
                }
            }
        }
        self.tracks = kept;
        *iterations = kept_iterations;
        for (c, taken) in occupied.iter().enumerate() {
            if *taken {
                grid.clear_cell(c);
            }
        }

        let mut candidates: Vec<CellMax> = grid.features().map(|(_, m)| *m).collect();
        candidates.sort_by(|a, b| b.rank(a));
        let mut born = 0;
        for cand in candidates {
            if self.tracks.len() >= self.cfg.target_count {
                break;
            }
            let Ok(templates) = build_template(pyr, &cand, &self.cfg.tracker) else {
                continue;
            };
            self.tracks.push(Track {
                id: self.next_id,
                anchor: (cand.x, cand.y),
                state: WarpState::default(),
                templates,
                birth_frame: frame_index,
                last_frame: frame_index,
                status: TrackStatus::Converged,
                score: cand.score,
            });
            self.next_id += 1;
            born += 1;
        }
        Ok((born, stats))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::Texture;

    #[test]
    fn threshold_is_exact_ceiling() {
        let mut cfg = FrontendConfig::default();
        assert_eq!(cfg.redetect_threshold(), 30);
        cfg.target_count = 7;
        assert_eq!(cfg.redetect_threshold(), 3);
        cfg.target_count = 10;
        assert_eq!(cfg.redetect_threshold(), 3);
        cfg.redetect_ratio = 0.25;
        cfg.target_count = 70;
        assert_eq!(cfg.redetect_threshold(), 18);
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = FrontendConfig {
            redetect_ratio: 1.0,
            ..Default::default()
        };
        assert!(Frontend::new(cfg).is_err());
        let cfg = FrontendConfig {
            target_count: 1000,
            ..Default::default()
        };
        let mut fe = Frontend::new(cfg).unwrap();
        let img = Image::filled(128, 96, 0).unwrap();
        assert!(matches!(
            fe.process_frame(&img),
            Err(FrontendError::InvalidConfig(_))
        ));
    }

    #[test]
    fn cold_start_then_fixed_point() {
        let img = Texture::mosaic(2, 256.0, 192.0).render(256, 192, 0.0, 0.0);
        let cfg = FrontendConfig {
            target_count: 40,
            ..Default::default()
        };
        let mut fe = Frontend::new(cfg).unwrap();
        let first = fe.process_frame(&img).unwrap();
        assert!(first.redetected);
        assert_eq!(first.live_before_detection, 0);
        assert!(first.born > 0 && first.born <= 40);
        assert_eq!(first.tracks.len(), first.born);

        let second = fe.process_frame(&img).unwrap();
        assert!(!second.redetected);
        assert!(second.retired.is_empty());
        for (a, b) in first.tracks.iter().zip(&second.tracks) {
            assert_eq!(a.id, b.id);
            assert_eq!(b.status, TrackStatus::Converged);
            assert!((a.x - b.x).abs() < 0.01 && (a.y - b.y).abs() < 0.01);
        }

        let other = Image::filled(100, 100, 0).unwrap();
        assert!(matches!(
            fe.process_frame(&other),
            Err(FrontendError::DimensionMismatch { .. })
        ));
    }
}
