//! Slow, direct reference implementations used to check the fast paths.
//!
//! Nothing here shares code with `fast` or `nms` beyond the plain data types.
//! Not meant for timed paths.

use crate::fast::{FastParams, ResponseMap, ScoreKind};
use crate::image::Image;
use crate::nms::{CellMax, FeatureGrid, GridConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Label {
    Darker,
    Similar,
    Brighter,
}

const RING: [(i32, i32); 16] = [
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
];

/// True iff some cyclic rotation of `mask` starts with `n` consecutive ones.
pub fn arc_oracle(mask: u16, n: u8) -> bool {
    for rotation in 0..16 {
        let rotated = mask.rotate_right(rotation);
        let mut run = 0;
        for bit in 0..16 {
            if rotated & (1 << bit) != 0 {
                run += 1;
            } else {
                break;
            }
        }
        if run >= n {
            return true;
        }
    }
    false
}

fn label(value: i32, center: i32, epsilon: i32) -> Label {
    if value < center - epsilon {
        Label::Darker
    } else if value > center + epsilon {
        Label::Brighter
    } else {
        Label::Similar
    }
}

fn labels(ring: &[i32; 16], center: i32, epsilon: i32) -> [Label; 16] {
    let mut out = [Label::Similar; 16];
    for i in 0..16 {
        out[i] = label(ring[i], center, epsilon);
    }
    out
}

fn label_mask(labels: &[Label; 16], which: Label) -> u16 {
    let mut mask = 0u16;
    for i in 0..16 {
        if labels[i] == which {
            mask |= 1 << i;
        }
    }
    mask
}

fn segment_test(ring: &[i32; 16], center: i32, epsilon: i32, n: u8) -> bool {
    let l = labels(ring, center, epsilon);
    arc_oracle(label_mask(&l, Label::Darker), n) || arc_oracle(label_mask(&l, Label::Brighter), n)
}

fn naive_score(ring: &[i32; 16], center: i32, params: &FastParams) -> f32 {
    let eps = params.epsilon() as i32;
    let n = params.arc_length();
    if !segment_test(ring, center, eps, n) {
        return 0.0;
    }
    let diff = |i: usize| {
        let d = (ring[i] - center).abs() - eps;
        if d > 0 {
            d
        } else {
            0
        }
    };
    match params.score_kind() {
        ScoreKind::SadB => {
            let mut sum = 0;
            for i in 0..16 {
                sum += diff(i);
            }
            sum as f32
        }
        ScoreKind::SadA => {
            // every arc of length ≥ n made of one non-similar label
            let l = labels(ring, center, eps);
            let mut best = 0;
            for start in 0..16 {
                if l[start] == Label::Similar {
                    continue;
                }
                for len in n as usize..=16 {
                    let uniform = (0..len).all(|j| l[(start + j) % 16] == l[start]);
                    if !uniform {
                        break;
                    }
                    let sum: i32 = (0..len).map(|j| diff((start + j) % 16)).sum();
                    if sum > best {
                        best = sum;
                    }
                }
            }
            best as f32
        }
        ScoreKind::Mt => {
            let mut best = eps;
            for t in eps..=255 {
                if segment_test(ring, center, t, n) {
                    best = t;
                }
            }
            best as f32
        }
    }
}

/// Per-pixel FAST with explicit three-way labels and a rotation scan.
pub fn naive_fast(img: &Image, params: &FastParams) -> ResponseMap {
    let (w, h) = (img.width(), img.height());
    let mut out = ResponseMap::zeros(w, h, 0);
    if w < 7 || h < 7 {
        return out;
    }
    for y in 3..h - 3 {
        for x in 3..w - 3 {
            let mut ring = [0i32; 16];
            for (i, (dx, dy)) in RING.iter().enumerate() {
                let px = (x as i32 + dx) as usize;
                let py = (y as i32 + dy) as usize;
                ring[i] = img.get(px, py) as i32;
            }
            out.set(x, y, naive_score(&ring, img.get(x, y) as i32, params));
        }
    }
    out
}

/// Full (2n+1)² raster-order neighborhood check with the raster tie rule.
pub fn naive_is_local_max(resp: &ResponseMap, x: usize, y: usize, radius: usize) -> bool {
    let s = resp.get(x, y);
    let r = radius as i64;
    for ny in y as i64 - r..=y as i64 + r {
        for nx in x as i64 - r..=x as i64 + r {
            if nx < 0 || ny < 0 || nx >= resp.width() as i64 || ny >= resp.height() as i64 {
                continue;
            }
            if nx == x as i64 && ny == y as i64 {
                continue;
            }
            let o = resp.get(nx as usize, ny as usize);
            let earlier = ny < y as i64 || (ny == y as i64 && nx < x as i64);
            if o > s || (o == s && earlier) {
                return false;
            }
        }
    }
    true
}

fn beats(a: &CellMax, b: &CellMax) -> bool {
    if a.score != b.score {
        return a.score > b.score;
    }
    if a.level != b.level {
        return a.level < b.level;
    }
    (a.y, a.x) < (b.y, b.x)
}

/// Two separate passes: raster NMS on every level, then argmax per cell.
pub fn naive_nms_then_argmax(responses: &[ResponseMap], cfg: &GridConfig) -> FeatureGrid {
    let (w0, h0) = (responses[0].width(), responses[0].height());
    let mut survivors = Vec::new();
    for (level, resp) in responses.iter().enumerate() {
        for y in 0..resp.height() {
            for x in 0..resp.width() {
                let s = resp.get(x, y);
                if s > 0.0 && naive_is_local_max(resp, x, y, cfg.nms_radius()) {
                    let scale = 1usize << level;
                    survivors.push(CellMax {
                        x: x * scale,
                        y: y * scale,
                        score: s,
                        level,
                    });
                }
            }
        }
    }
    let (cols, rows) = cfg.grid_dims(w0, h0);
    let mut best: Vec<Option<CellMax>> = vec![None; cols * rows];
    for c in survivors {
        let idx = (c.y / cfg.cell_height()) * cols + c.x / cfg.cell_width();
        match &best[idx] {
            Some(cur) if !beats(&c, cur) => {}
            _ => best[idx] = Some(c),
        }
    }
    let mut grid = FeatureGrid::empty(cfg, w0, h0);
    for c in best.into_iter().flatten() {
        grid.offer(c);
    }
    grid
}

/// Corner positions of a response map, raster order.
pub fn corner_set(resp: &ResponseMap) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for y in 0..resp.height() {
        for x in 0..resp.width() {
            if resp.get(x, y) > 0.0 {
                out.push((x, y));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arc_oracle_examples() {
        assert!(arc_oracle(0x00FF, 8));
        assert!(arc_oracle(0xF00F, 8));
        assert!(!arc_oracle(0x0F0F, 8));
        assert!(arc_oracle(0xFFFF, 16));
        assert!(!arc_oracle(0x0000, 9));
        assert!(!arc_oracle(0x7FFF, 16));
    }

    #[test]
    fn constant_image_all_zero() {
        let img = Image::filled(20, 20, 77).unwrap();
        let r = naive_fast(&img, &FastParams::default());
        assert!(corner_set(&r).is_empty());
    }

    #[test]
    fn mt_linear_scan_full_ring() {
        let mut img = Image::filled(7, 7, 50).unwrap();
        img.set(3, 3, 200);
        let p = FastParams::new(10, 10, ScoreKind::Mt).unwrap();
        assert_eq!(naive_fast(&img, &p).get(3, 3), 149.0);
        let p = p.with_score_kind(ScoreKind::SadB);
        assert_eq!(naive_fast(&img, &p).get(3, 3), 2240.0);
    }

    #[test]
    fn naive_nms_examples() {
        let cfg = GridConfig::default();
        let mut m = ResponseMap::zeros(64, 64, 0);
        m.set(10, 10, 5.0);
        m.set(11, 11, 7.0);
        m.set(40, 50, 1.0);
        let g = naive_nms_then_argmax(&[m], &cfg);
        assert_eq!(g.len(), 2);
        assert_eq!(g.get(0, 0).unwrap().score, 7.0);
        assert_eq!(g.get(1, 1).unwrap().score, 1.0);
    }
}
