//! Combined neighborhood suppression and per-cell maximum selection.
//!
//! The level-0 image is split into a grid of `32·w × 2^(l-1)·h` cells. Every
//! cell is an independent work unit: for each pyramid level its pixels are
//! visited line by line, each column keeps the best surviving candidate it has
//! seen, and the column maxima are folded into one cell maximum with a
//! shuffle-down style tree reduction. Survival is decided by a spiral walk over
//! the Moore neighborhood, nearest ring first, stopping at the first neighbor
//! that suppresses the candidate.

use std::cmp::Ordering;

use rayon::prelude::*;
use thiserror::Error;

use crate::fast::ResponseMap;

/// Level-0 cell widths are multiples of this many pixels.
pub const CELL_WIDTH_QUANTUM: usize = 32;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NmsError {
    #[error("grid configuration expects {expected} pyramid levels, got {actual} response maps")]
    LevelMismatch { expected: usize, actual: usize },
    #[error("level {level} is {width}x{height}, expected {expected_width}x{expected_height}")]
    LevelShape {
        level: usize,
        width: usize,
        height: usize,
        expected_width: usize,
        expected_height: usize,
    },
    #[error("response stride {0} is not a multiple of 32")]
    Stride(usize),
    #[error("invalid grid configuration: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridConfig {
    cell_width_units: usize,
    cell_height_units: usize,
    num_levels: usize,
    nms_radius: usize,
}

impl GridConfig {
    pub fn new(
        cell_width_units: usize,
        cell_height_units: usize,
        num_levels: usize,
        nms_radius: usize,
    ) -> Result<Self, NmsError> {
        if cell_width_units == 0 || cell_height_units == 0 {
            return Err(NmsError::InvalidConfig("cell units must be positive"));
        }
        if num_levels == 0 || num_levels > 16 {
            return Err(NmsError::InvalidConfig("level count must be in 1..=16"));
        }
        if nms_radius == 0 {
            return Err(NmsError::InvalidConfig("suppression radius must be at least 1"));
        }
        Ok(Self {
            cell_width_units,
            cell_height_units,
            num_levels,
            nms_radius,
        })
    }

    pub fn cell_width_units(&self) -> usize {
        self.cell_width_units
    }

    pub fn cell_height_units(&self) -> usize {
        self.cell_height_units
    }

    pub fn num_levels(&self) -> usize {
        self.num_levels
    }

    pub fn nms_radius(&self) -> usize {
        self.nms_radius
    }

    pub fn with_nms_radius(self, nms_radius: usize) -> Result<Self, NmsError> {
        Self::new(
            self.cell_width_units,
            self.cell_height_units,
            self.num_levels,
            nms_radius,
        )
    }

    /// Level-0 cell width in pixels.
    pub fn cell_width(&self) -> usize {
        CELL_WIDTH_QUANTUM * self.cell_width_units
    }

    /// Level-0 cell height in pixels.
    pub fn cell_height(&self) -> usize {
        (1 << (self.num_levels - 1)) * self.cell_height_units
    }

    /// Grid columns and rows covering a level-0 image; edge cells may be partial.
    pub fn grid_dims(&self, width: usize, height: usize) -> (usize, usize) {
        (
            width.div_ceil(self.cell_width()),
            height.div_ceil(self.cell_height()),
        )
    }
}

impl Default for GridConfig {
    /// 32×32 cells on a single level, 3×3 suppression.
    fn default() -> Self {
        Self {
            cell_width_units: 1,
            cell_height_units: 32,
            num_levels: 1,
            nms_radius: 1,
        }
    }
}

/// Best candidate of one cell, in level-0 coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellMax {
    pub x: usize,
    pub y: usize,
    pub score: f32,
    pub level: usize,
}

impl CellMax {
    /// Cross-level candidate order: higher score, then lower level, then
    /// smaller `(y, x)`. `Greater` means `self` wins.
    pub fn rank(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then(other.level.cmp(&self.level))
            .then((other.y, other.x).cmp(&(self.y, self.x)))
    }
}

fn pick(a: Option<CellMax>, b: Option<CellMax>) -> Option<CellMax> {
    match (a, b) {
        (Some(a), Some(b)) => Some(if b.rank(&a) == Ordering::Greater { b } else { a }),
        (a, None) => a,
        (None, b) => b,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureGrid {
    cols: usize,
    rows: usize,
    cell_width: usize,
    cell_height: usize,
    cells: Vec<Option<CellMax>>,
}

impl FeatureGrid {
    pub fn empty(cfg: &GridConfig, width: usize, height: usize) -> Self {
        let (cols, rows) = cfg.grid_dims(width, height);
        Self {
            cols,
            rows,
            cell_width: cfg.cell_width(),
            cell_height: cfg.cell_height(),
            cells: vec![None; cols * rows],
        }
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn cell_width(&self) -> usize {
        self.cell_width
    }

    pub fn cell_height(&self) -> usize {
        self.cell_height
    }

    pub fn get(&self, col: usize, row: usize) -> Option<&CellMax> {
        self.cells[row * self.cols + col].as_ref()
    }

    pub fn cells(&self) -> &[Option<CellMax>] {
        &self.cells
    }

    /// Flat cell index of a level-0 position, or `None` outside the grid.
    pub fn cell_index(&self, x: usize, y: usize) -> Option<usize> {
        let (c, r) = (x / self.cell_width, y / self.cell_height);
        (c < self.cols && r < self.rows).then_some(r * self.cols + c)
    }

    pub fn clear_cell(&mut self, index: usize) {
        self.cells[index] = None;
    }

    /// Occupied cells as `(cell index, maximum)`, in cell order.
    pub fn features(&self) -> impl Iterator<Item = (usize, &CellMax)> {
        self.cells
            .iter()
            .enumerate()
            .filter_map(|(i, c)| c.as_ref().map(|m| (i, m)))
    }

    pub fn len(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Offers a candidate to the cell containing it, keeping the better one.
    pub fn offer(&mut self, candidate: CellMax) {
        if let Some(i) = self.cell_index(candidate.x, candidate.y) {
            self.cells[i] = pick(self.cells[i], Some(candidate));
        }
    }
}

/// Comparison counters gathered during suppression.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct NmsStats {
    /// Pixels with a positive score that were tested.
    pub candidates: u64,
    /// Neighbor comparisons performed by the spiral walk.
    pub spiral_comparisons: u64,
    /// Neighbor comparisons a full raster scan of each neighborhood would do.
    pub raster_comparisons: u64,
}

impl NmsStats {
    pub fn mean_spiral(&self) -> f64 {
        if self.candidates == 0 {
            0.0
        } else {
            self.spiral_comparisons as f64 / self.candidates as f64
        }
    }

    pub fn mean_raster(&self) -> f64 {
        if self.candidates == 0 {
            0.0
        } else {
            self.raster_comparisons as f64 / self.candidates as f64
        }
    }

    fn merge(self, other: Self) -> Self {
        Self {
            candidates: self.candidates + other.candidates,
            spiral_comparisons: self.spiral_comparisons + other.spiral_comparisons,
            raster_comparisons: self.raster_comparisons + other.raster_comparisons,
        }
    }
}

/// Moore-neighborhood offsets ring by ring, each ring clockwise from its
/// top-left corner.
pub fn spiral_offsets(radius: usize) -> Vec<(i32, i32)> {
    let mut out = Vec::with_capacity((2 * radius + 1).pow(2) - 1);
    for r in 1..=radius as i32 {
        out.extend((-r..=r).map(|dx| (dx, -r)));
        out.extend((-r + 1..=r).map(|dy| (r, dy)));
        out.extend((-r..r).rev().map(|dx| (dx, r)));
        out.extend((-r + 1..r).rev().map(|dy| (-r, dy)));
    }
    out
}

/// Returns whether `(x, y)` survives and how many neighbors were compared.
#[inline]
fn spiral_test(resp: &ResponseMap, x: usize, y: usize, offsets: &[(i32, i32)]) -> (bool, u32) {
    let score = resp.get(x, y);
    let (w, h) = (resp.width() as i32, resp.height() as i32);
    let mut comparisons = 0;
    for &(dx, dy) in offsets {
        let (nx, ny) = (x as i32 + dx, y as i32 + dy);
        if nx < 0 || ny < 0 || nx >= w || ny >= h {
            continue;
        }
        comparisons += 1;
        let other = resp.get(nx as usize, ny as usize);
        // ties go to the neighbor earlier in raster order
        if other > score || (other == score && (dy, dx) < (0, 0)) {
            return (false, comparisons);
        }
    }
    (true, comparisons)
}

fn in_image_neighbors(resp: &ResponseMap, x: usize, y: usize, radius: usize) -> u64 {
    let x0 = x.saturating_sub(radius);
    let y0 = y.saturating_sub(radius);
    let x1 = (x + radius).min(resp.width() - 1);
    let y1 = (y + radius).min(resp.height() - 1);
    ((x1 - x0 + 1) * (y1 - y0 + 1) - 1) as u64
}

/// Whether the response at `(x, y)` survives suppression against its
/// `(2n+1)²` neighborhood. Neighbors outside the map never suppress.
pub fn spiral_is_local_max(resp: &ResponseMap, x: usize, y: usize, radius: usize) -> bool {
    spiral_test(resp, x, y, &spiral_offsets(radius)).0
}

/// Same as [`spiral_is_local_max`], also returning the comparison count.
pub fn spiral_is_local_max_counted(
    resp: &ResponseMap,
    x: usize,
    y: usize,
    radius: usize,
) -> (bool, u32) {
    spiral_test(resp, x, y, &spiral_offsets(radius))
}

#[inline]
pub fn rescale_to_level0(x: usize, y: usize, level: usize) -> (usize, usize) {
    (x << level, y << level)
}

fn validate(responses: &[ResponseMap], cfg: &GridConfig) -> Result<(), NmsError> {
    if responses.len() != cfg.num_levels {
        return Err(NmsError::LevelMismatch {
            expected: cfg.num_levels,
            actual: responses.len(),
        });
    }
    let (w0, h0) = (responses[0].width(), responses[0].height());
    for (k, r) in responses.iter().enumerate() {
        if r.stride() % 32 != 0 {
            return Err(NmsError::Stride(r.stride()));
        }
        if r.width() != w0 >> k || r.height() != h0 >> k {
            return Err(NmsError::LevelShape {
                level: k,
                width: r.width(),
                height: r.height(),
                expected_width: w0 >> k,
                expected_height: h0 >> k,
            });
        }
    }
    Ok(())
}

/// Level-k index range whose level-0 projections land in `[lo, hi)`.
#[inline]
fn level_range(lo: usize, hi: usize, level: usize, len: usize) -> std::ops::Range<usize> {
    let scale = 1usize << level;
    lo.div_ceil(scale).min(len)..hi.div_ceil(scale).min(len)
}

/// Tree reduction over lanes: at each step lane `i` absorbs lane `i + offset`.
fn shuffle_down_reduce(lanes: &mut [Option<CellMax>]) -> Option<CellMax> {
    if lanes.is_empty() {
        return None;
    }
    let mut offset = lanes.len().next_power_of_two() / 2;
    while offset > 0 {
        for i in 0..offset {
            if i + offset < lanes.len() {
                lanes[i] = pick(lanes[i], lanes[i + offset]);
            }
        }
        offset /= 2;
    }
    lanes[0]
}

fn process_cell(
    responses: &[ResponseMap],
    rect: (usize, usize, usize, usize),
    offsets: &[(i32, i32)],
    radius: usize,
    lanes: &mut Vec<Option<CellMax>>,
) -> (Option<CellMax>, NmsStats) {
    let (x_lo, y_lo, x_hi, y_hi) = rect;
    let mut best = None;
    let mut stats = NmsStats::default();
    for (k, resp) in responses.iter().enumerate() {
        let cols = level_range(x_lo, x_hi, k, resp.width());
        let rows = level_range(y_lo, y_hi, k, resp.height());
        lanes.clear();
        lanes.resize(cols.len(), None);
        for y in rows {
            let line = resp.row(y);
            for (lane, x) in lanes.iter_mut().zip(cols.clone()) {
                let score = line[x];
                if score <= 0.0 {
                    continue;
                }
                stats.candidates += 1;
                stats.raster_comparisons += in_image_neighbors(resp, x, y, radius);
                let (survives, n) = spiral_test(resp, x, y, offsets);
                stats.spiral_comparisons += n as u64;
                if survives {
                    let (x0, y0) = rescale_to_level0(x, y, k);
                    *lane = pick(
                        *lane,
                        Some(CellMax {
                            x: x0,
                            y: y0,
                            score,
                            level: k,
                        }),
                    );
                }
            }
        }
        best = pick(best, shuffle_down_reduce(lanes));
    }
    (best, stats)
}

/// One maximum per grid cell over all levels, with comparison counters.
pub fn suppress_and_select_with_stats(
    responses: &[ResponseMap],
    cfg: &GridConfig,
) -> Result<(FeatureGrid, NmsStats), NmsError> {
    validate(responses, cfg)?;
    let (w0, h0) = (responses[0].width(), responses[0].height());
    let mut grid = FeatureGrid::empty(cfg, w0, h0);
    let offsets = spiral_offsets(cfg.nms_radius);
    let (cols, cw, ch) = (grid.cols, grid.cell_width, grid.cell_height);
    let results: Vec<(Option<CellMax>, NmsStats)> = (0..grid.cells.len())
        .into_par_iter()
        .map_init(Vec::new, |lanes, i| {
            let (c, r) = (i % cols, i / cols);
            let rect = (c * cw, r * ch, ((c + 1) * cw).min(w0), ((r + 1) * ch).min(h0));
            process_cell(responses, rect, &offsets, cfg.nms_radius, lanes)
        })
        .collect();
    let mut stats = NmsStats::default();
    for (cell, (best, s)) in grid.cells.iter_mut().zip(results) {
        *cell = best;
        stats = stats.merge(s);
    }
    Ok((grid, stats))
}

/// One maximum per grid cell over all levels.
pub fn suppress_and_select(
    responses: &[ResponseMap],
    cfg: &GridConfig,
) -> Result<FeatureGrid, NmsError> {
    suppress_and_select_with_stats(responses, cfg).map(|(g, _)| g)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(w: usize, h: usize, pts: &[(usize, usize, f32)]) -> ResponseMap {
        let mut m = ResponseMap::zeros(w, h, 0);
        for &(x, y, s) in pts {
            m.set(x, y, s);
        }
        m
    }

    #[test]
    fn cell_geometry() {
        let cfg = GridConfig::new(2, 5, 3, 1).unwrap();
        assert_eq!(cfg.cell_width(), 64);
        assert_eq!(cfg.cell_height(), 20);
        assert_eq!(cfg.grid_dims(130, 40), (3, 2));
        let d = GridConfig::default();
        assert_eq!((d.cell_width(), d.cell_height()), (32, 32));
        assert!(GridConfig::new(0, 1, 1, 1).is_err());
        assert!(GridConfig::new(1, 1, 1, 0).is_err());
    }

    #[test]
    fn spiral_rings_cover_neighborhood() {
        for n in 1..=4 {
            let offs = spiral_offsets(n);
            assert_eq!(offs.len(), (2 * n + 1).pow(2) - 1);
            let mut sorted = offs.clone();
            sorted.sort();
            sorted.dedup();
            assert_eq!(sorted.len(), offs.len());
            // ring r occupies a contiguous stretch
            let rings: Vec<i32> = offs.iter().map(|&(x, y)| x.abs().max(y.abs())).collect();
            assert!(rings.windows(2).all(|w| w[0] <= w[1]));
            // consecutive offsets within a ring are adjacent
            for w in offs.windows(2) {
                if w[0].0.abs().max(w[0].1.abs()) == w[1].0.abs().max(w[1].1.abs()) {
                    assert!((w[0].0 - w[1].0).abs() + (w[0].1 - w[1].1).abs() == 1);
                }
            }
        }
    }

    #[test]
    fn lone_maximum_fills_one_cell() {
        let resp = map(96, 64, &[(40, 10, 3.0)]);
        let grid = suppress_and_select(&[resp], &GridConfig::default()).unwrap();
        assert_eq!((grid.cols(), grid.rows()), (3, 2));
        assert_eq!(grid.len(), 1);
        let m = grid.get(1, 0).unwrap();
        assert_eq!((m.x, m.y, m.score, m.level), (40, 10, 3.0, 0));
    }

    #[test]
    fn neighbor_suppression_in_one_cell() {
        let resp = map(64, 64, &[(10, 10, 5.0), (11, 11, 7.0)]);
        let grid = suppress_and_select(&[resp.clone()], &GridConfig::default()).unwrap();
        assert_eq!(grid.len(), 1);
        assert_eq!(grid.get(0, 0).unwrap().score, 7.0);
        let (alive, comparisons) = spiral_is_local_max_counted(&resp, 10, 10, 3);
        assert!(!alive);
        assert!(comparisons <= 8);
        assert!(spiral_is_local_max(&resp, 11, 11, 4));
    }

    #[test]
    fn plateau_keeps_smallest_raster_index() {
        let mut pts = Vec::new();
        for y in 20..23 {
            for x in 5..8 {
                pts.push((x, y, 4.0));
            }
        }
        let resp = map(32, 32, &pts);
        for n in 1..=3 {
            let survivors: Vec<_> = pts
                .iter()
                .filter(|&&(x, y, _)| spiral_is_local_max(&resp, x, y, n))
                .map(|&(x, y, _)| (x, y))
                .collect();
            assert_eq!(survivors, vec![(5, 20)]);
        }
        let a = suppress_and_select(&[resp.clone()], &GridConfig::default()).unwrap();
        let b = suppress_and_select(&[resp], &GridConfig::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.get(0, 0).map(|m| (m.x, m.y)), Some((5, 20)));
    }

    #[test]
    fn border_neighbors_never_suppress() {
        let resp = map(8, 8, &[(0, 0, 1.0), (7, 7, 1.0)]);
        assert!(spiral_is_local_max(&resp, 0, 0, 2));
        assert!(spiral_is_local_max(&resp, 7, 7, 2));
    }

    #[test]
    fn rescale() {
        assert_eq!(rescale_to_level0(10, 7, 0), (10, 7));
        assert_eq!(rescale_to_level0(10, 7, 1), (20, 14));
        assert_eq!(rescale_to_level0(3, 5, 3), (24, 40));
    }

    #[test]
    fn level_ranges_match_projection() {
        for k in 0..4 {
            for (lo, hi) in [(0, 32), (32, 64), (96, 100), (8, 40)] {
                let len = 100 >> k;
                let brute: Vec<usize> = (0..len).filter(|&x| (lo..hi).contains(&(x << k))).collect();
                let fast: Vec<usize> = level_range(lo, hi, k, len).collect();
                assert_eq!(brute, fast, "k={k} [{lo},{hi})");
            }
        }
    }

    #[test]
    fn coarse_level_maxima_land_in_projected_cells() {
        // l = 3: cells 32 × 4h; put isolated peaks on level 2 only
        let cfg = GridConfig::new(1, 8, 3, 1).unwrap();
        let (w, h) = (128, 96);
        let l0 = map(w, h, &[]);
        let l1 = map(w / 2, h / 2, &[]);
        let mut l2 = ResponseMap::zeros(w / 4, h / 4, 2);
        let peaks = [(3, 2, 9.0), (9, 9, 4.0), (20, 15, 6.0), (31, 23, 2.0)];
        for &(x, y, s) in &peaks {
            l2.set(x, y, s);
        }
        let grid = suppress_and_select(&[l0, l1, l2], &cfg).unwrap();
        assert_eq!(grid.len(), peaks.len());
        for &(x, y, s) in &peaks {
            let cell = ((x * 4) / 32) + ((y * 4) / 32) * grid.cols();
            let m = grid.cells()[cell].unwrap();
            assert_eq!((m.x, m.y, m.score, m.level), (x * 4, y * 4, s, 2));
        }
    }

    #[test]
    fn finer_level_wins_ties() {
        let cfg = GridConfig::new(1, 16, 2, 1).unwrap();
        let l0 = map(64, 64, &[(12, 12, 5.0)]);
        let mut l1 = ResponseMap::zeros(32, 32, 1);
        l1.set(3, 3, 5.0);
        let grid = suppress_and_select(&[l0, l1], &cfg).unwrap();
        let m = grid.get(0, 0).unwrap();
        assert_eq!((m.x, m.y, m.level), (12, 12, 0));
    }

    #[test]
    fn mismatched_levels_rejected() {
        let cfg = GridConfig::new(1, 16, 2, 1).unwrap();
        let err = suppress_and_select(&[map(64, 64, &[])], &cfg).unwrap_err();
        assert_eq!(err, NmsError::LevelMismatch { expected: 2, actual: 1 });
        let err = suppress_and_select(&[map(64, 64, &[]), map(30, 32, &[])], &cfg).unwrap_err();
        assert!(matches!(err, NmsError::LevelShape { level: 1, .. }));
    }

    #[test]
    fn reduction_order_is_irrelevant() {
        let cands: Vec<Option<CellMax>> = (0..23)
            .map(|i| {
                (i % 3 != 0).then_some(CellMax {
                    x: i,
                    y: 0,
                    score: (i % 5) as f32,
                    level: 0,
                })
            })
            .collect();
        let serial = cands.iter().copied().fold(None, pick);
        let mut lanes = cands.clone();
        assert_eq!(shuffle_down_reduce(&mut lanes), serial);
        assert_eq!(serial.unwrap().x, 4);
    }
}
