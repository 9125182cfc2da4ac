//! FAST segment test backed by a bit-packed lookup table, and the three
//! corner response scores.
//!
//! Each pixel produces two 16-bit masks, one for circle pixels darker than
//! the center by more than ε and one for brighter pixels. A mask indexes a
//! 2¹⁶-bit table (2048 words of 32 bits): the high 11 bits of the mask pick
//! the word and the low 5 bits pick the bit. The pixel is a corner when
//! either mask hits a set bit.

use rayon::prelude::*;
use thiserror::Error;

use crate::image::{aligned_stride, Image, ImagePyramid};

/// Pixels excluded on every side, the circle radius.
pub const BORDER: usize = 3;

const LUT_WORDS: usize = 1 << 11;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FastError {
    #[error("arc length must be in 9..=16, got {0}")]
    InvalidArcLength(u8),
    #[error("pixel ({x}, {y}) is within {BORDER} pixels of the {width}x{height} image border")]
    Border {
        x: usize,
        y: usize,
        width: usize,
        height: usize,
    },
    #[error("lookup table was built for N = {table}, parameters ask for N = {params}")]
    TableMismatch { table: u8, params: u8 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ScoreKind {
    /// Thresholded absolute differences summed over the whole circle.
    SadB,
    /// Thresholded absolute differences summed over the strongest qualifying arc.
    SadA,
    /// Largest threshold at which the segment test still passes.
    Mt,
}

impl std::str::FromStr for ScoreKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "SAD_B" | "SADB" => Ok(Self::SadB),
            "SAD_A" | "SADA" => Ok(Self::SadA),
            "MT" => Ok(Self::Mt),
            _ => Err(format!("unknown score kind {s:?} (expected SAD_B, SAD_A or MT)")),
        }
    }
}

impl std::fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::SadB => "SAD_B",
            Self::SadA => "SAD_A",
            Self::Mt => "MT",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FastParams {
    epsilon: u8,
    arc_length: u8,
    score_kind: ScoreKind,
}

impl FastParams {
    pub fn new(epsilon: u8, arc_length: u8, score_kind: ScoreKind) -> Result<Self, FastError> {
        if !(9..=16).contains(&arc_length) {
            return Err(FastError::InvalidArcLength(arc_length));
        }
        Ok(Self {
            epsilon,
            arc_length,
            score_kind,
        })
    }

    pub fn epsilon(&self) -> u8 {
        self.epsilon
    }

    pub fn arc_length(&self) -> u8 {
        self.arc_length
    }

    pub fn score_kind(&self) -> ScoreKind {
        self.score_kind
    }

    pub fn with_epsilon(self, epsilon: u8) -> Self {
        Self { epsilon, ..self }
    }

    pub fn with_score_kind(self, score_kind: ScoreKind) -> Self {
        Self { score_kind, ..self }
    }
}

impl Default for FastParams {
    fn default() -> Self {
        Self {
            epsilon: 10,
            arc_length: 10,
            score_kind: ScoreKind::SadA,
        }
    }
}

/// Radius-3 Bresenham circle, starting straight up and running clockwise
/// (x right, y down).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BresenhamCircle {
    pub offsets: [(i32, i32); 16],
}

pub const CIRCLE: BresenhamCircle = BresenhamCircle {
    offsets: [
        (0, -3),
        (1, -3),
        (2, -2),
        (3, -1),
        (3, 0),
        (3, 1),
        (2, 2),
        (1, 3),
        (0, 3),
        (-1, 3),
        (-2, 2),
        (-3, 1),
        (-3, 0),
        (-3, -1),
        (-2, -2),
        (-1, -3),
    ],
};

/// One bit per 16-bit comparison mask: set iff the mask contains a cyclic
/// run of at least `arc_length` ones.
#[derive(Clone)]
pub struct LookupTable {
    words: Box<[u32; LUT_WORDS]>,
    arc_length: u8,
}

impl std::fmt::Debug for LookupTable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LookupTable")
            .field("arc_length", &self.arc_length)
            .finish_non_exhaustive()
    }
}

#[inline]
fn has_cyclic_run(mask: u16, n: u8) -> bool {
    let doubled = mask as u32 | ((mask as u32) << 16);
    let mut run = doubled;
    // after step k, bit j survives iff bits j..=j+k are all set
    for k in 1..n as u32 {
        run &= doubled >> k;
    }
    run & 0xFFFF != 0
}

impl LookupTable {
    pub fn build(arc_length: u8) -> Result<Self, FastError> {
        if !(9..=16).contains(&arc_length) {
            return Err(FastError::InvalidArcLength(arc_length));
        }
        let mut words = Box::new([0u32; LUT_WORDS]);
        for mask in 0..=u16::MAX {
            if has_cyclic_run(mask, arc_length) {
                words[(mask >> 5) as usize] |= 1 << (mask & 31);
            }
        }
        Ok(Self { words, arc_length })
    }

    #[inline]
    pub fn contains(&self, mask: u16) -> bool {
        (self.words[(mask >> 5) as usize] >> (mask & 31)) & 1 == 1
    }

    pub fn arc_length(&self) -> u8 {
        self.arc_length
    }

    pub fn words(&self) -> &[u32; LUT_WORDS] {
        &self.words
    }

    pub fn size_bytes(&self) -> usize {
        std::mem::size_of_val(&*self.words)
    }
}

pub fn build_lookup_table(arc_length: u8) -> Result<LookupTable, FastError> {
    LookupTable::build(arc_length)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PixelClass {
    pub is_corner: bool,
    pub dark_mask: u16,
    pub bright_mask: u16,
}

#[inline]
fn circle_values(img: &Image, x: usize, y: usize) -> [i16; 16] {
    let mut out = [0i16; 16];
    for (v, &(dx, dy)) in out.iter_mut().zip(CIRCLE.offsets.iter()) {
        *v = img.get((x as i32 + dx) as usize, (y as i32 + dy) as usize) as i16;
    }
    out
}

#[inline]
fn masks(center: i16, circle: &[i16; 16], epsilon: u8) -> (u16, u16) {
    let lo = center - epsilon as i16;
    let hi = center + epsilon as i16;
    let mut dark = 0u16;
    let mut bright = 0u16;
    for (i, &v) in circle.iter().enumerate() {
        dark |= ((v < lo) as u16) << i;
        bright |= ((v > hi) as u16) << i;
    }
    (dark, bright)
}

fn check_inputs(
    img: &Image,
    x: usize,
    y: usize,
    params: &FastParams,
    lut: &LookupTable,
) -> Result<(), FastError> {
    if lut.arc_length != params.arc_length {
        return Err(FastError::TableMismatch {
            table: lut.arc_length,
            params: params.arc_length,
        });
    }
    if x < BORDER || y < BORDER || x + BORDER >= img.width() || y + BORDER >= img.height() {
        return Err(FastError::Border {
            x,
            y,
            width: img.width(),
            height: img.height(),
        });
    }
    Ok(())
}

pub fn classify_pixel(
    img: &Image,
    x: usize,
    y: usize,
    params: &FastParams,
    lut: &LookupTable,
) -> Result<PixelClass, FastError> {
    check_inputs(img, x, y, params, lut)?;
    let circle = circle_values(img, x, y);
    let (dark_mask, bright_mask) = masks(img.get(x, y) as i16, &circle, params.epsilon);
    Ok(PixelClass {
        is_corner: lut.contains(dark_mask) || lut.contains(bright_mask),
        dark_mask,
        bright_mask,
    })
}

/// Corner response at an interior pixel; 0 when the segment test fails.
pub fn corner_score(
    img: &Image,
    x: usize,
    y: usize,
    params: &FastParams,
    lut: &LookupTable,
) -> Result<f32, FastError> {
    check_inputs(img, x, y, params, lut)?;
    Ok(pixel_score(
        img.get(x, y) as i16,
        &circle_values(img, x, y),
        params,
        lut,
    ))
}

#[inline]
fn pixel_score(center: i16, circle: &[i16; 16], params: &FastParams, lut: &LookupTable) -> f32 {
    let (dark, bright) = masks(center, circle, params.epsilon);
    let dark_ok = lut.contains(dark);
    let bright_ok = lut.contains(bright);
    if !dark_ok && !bright_ok {
        return 0.0;
    }
    let eps = params.epsilon as i32;
    let excess = |i: usize| ((circle[i] - center).abs() as i32 - eps).max(0);
    match params.score_kind {
        ScoreKind::SadB => (0..16).map(excess).sum::<i32>() as f32,
        ScoreKind::SadA => {
            let mut best = 0;
            if dark_ok {
                best = best.max(strongest_arc(dark, params.arc_length, excess));
            }
            if bright_ok {
                best = best.max(strongest_arc(bright, params.arc_length, excess));
            }
            best as f32
        }
        ScoreKind::Mt => {
            let passes = |t: u8| {
                let (d, b) = masks(center, circle, t);
                lut.contains(d) || lut.contains(b)
            };
            let (mut lo, mut hi) = (params.epsilon, u8::MAX);
            while lo < hi {
                let mid = lo + (hi - lo).div_ceil(2);
                if passes(mid) {
                    lo = mid;
                } else {
                    hi = mid - 1;
                }
            }
            lo as f32
        }
    }
}

/// Largest summed excess over any maximal cyclic run of ≥ `n` set bits.
fn strongest_arc(mask: u16, n: u8, excess: impl Fn(usize) -> i32) -> i32 {
    if mask == u16::MAX {
        return (0..16).map(excess).sum();
    }
    // start right after a clear bit so no run wraps past the scan start
    let start = (0..16).find(|&i| mask & (1 << i) == 0).unwrap() + 1;
    let (mut best, mut len, mut sum) = (0, 0u8, 0);
    for step in 0..=16 {
        let i = (start + step) % 16;
        if step < 16 && mask & (1 << i) != 0 {
            len += 1;
            sum += excess(i);
        } else {
            if len >= n {
                best = best.max(sum);
            }
            len = 0;
            sum = 0;
        }
    }
    best
}

/// Dense corner response raster for one pyramid level.
#[derive(Clone, Debug, PartialEq)]
pub struct ResponseMap {
    width: usize,
    height: usize,
    stride: usize,
    level: usize,
    scores: Vec<f32>,
}

impl ResponseMap {
    pub fn zeros(width: usize, height: usize, level: usize) -> Self {
        let stride = aligned_stride(width);
        Self {
            width,
            height,
            stride,
            level,
            scores: vec![0.0; stride * height],
        }
    }

    /// Builds a map from tightly packed row-major scores.
    pub fn from_packed(width: usize, height: usize, level: usize, scores: &[f32]) -> Self {
        assert_eq!(scores.len(), width * height);
        let mut map = Self::zeros(width, height, level);
        for y in 0..height {
            map.row_mut(y)
                .copy_from_slice(&scores[y * width..(y + 1) * width]);
        }
        map
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn stride(&self) -> usize {
        self.stride
    }

    #[inline]
    pub fn level(&self) -> usize {
        self.level
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        debug_assert!(x < self.width && y < self.height);
        self.scores[y * self.stride + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, score: f32) {
        assert!(x < self.width && y < self.height);
        self.scores[y * self.stride + x] = score;
    }

    pub fn row(&self, y: usize) -> &[f32] {
        &self.scores[y * self.stride..y * self.stride + self.width]
    }

    pub fn row_mut(&mut self, y: usize) -> &mut [f32] {
        let start = y * self.stride;
        &mut self.scores[start..start + self.width]
    }

    /// Positions with a nonzero score, in raster order.
    pub fn nonzero(&self) -> Vec<(usize, usize)> {
        (0..self.height)
            .flat_map(|y| {
                self.row(y)
                    .iter()
                    .enumerate()
                    .filter(|(_, &s)| s > 0.0)
                    .map(move |(x, _)| (x, y))
            })
            .collect()
    }
}

/// Corner responses for a single image; rows are evaluated in parallel.
pub fn detect_level(
    img: &Image,
    level: usize,
    params: &FastParams,
    lut: &LookupTable,
) -> Result<ResponseMap, FastError> {
    if lut.arc_length != params.arc_length {
        return Err(FastError::TableMismatch {
            table: lut.arc_length,
            params: params.arc_length,
        });
    }
    let mut map = ResponseMap::zeros(img.width(), img.height(), level);
    let (w, h) = (img.width(), img.height());
    if w <= 2 * BORDER || h <= 2 * BORDER {
        return Ok(map);
    }
    let stride = map.stride;
    map.scores
        .par_chunks_mut(stride)
        .enumerate()
        .filter(|(y, _)| *y >= BORDER && *y < h - BORDER)
        .for_each(|(y, row)| {
            for (x, out) in row.iter_mut().enumerate().take(w - BORDER).skip(BORDER) {
                *out = pixel_score(img.get(x, y) as i16, &circle_values(img, x, y), params, lut);
            }
        });
    Ok(map)
}

/// One response map per pyramid level.
pub fn detect_responses(
    pyr: &ImagePyramid,
    params: &FastParams,
    lut: &LookupTable,
) -> Result<Vec<ResponseMap>, FastError> {
    pyr.levels()
        .iter()
        .enumerate()
        .map(|(k, img)| detect_level(img, k, params, lut))
        .collect()
}
