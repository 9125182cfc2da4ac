//! Pyramidal inverse-compositional Lucas-Kanade with approximated
//! simultaneous estimation of an affine illumination change.
//!
//! Parameters are `q = [t_x, t_y, α, β]`: a pure translation warp and a
//! gain/offset model `(1 + α)·T + β` of the template. Template gradients,
//! the per-pixel coefficient vectors `U = [∂T/∂x, ∂T/∂y, T, 1]` and the
//! Hessian `Σ Uᵀ U` are computed once, at `α = 0`, when the template is
//! built. Each iteration then only resamples the current image:
//!
//! ```text
//! Δq = H⁻¹ Σ Uᵀ(x) [I(x + t) − (1 + α)·T(x) − β]
//! t ← t − Δt,  α ← α + Δα,  β ← β + Δβ
//! ```

use rayon::prelude::*;
use thiserror::Error;

use crate::image::{Image, ImagePyramid};
use crate::nms::CellMax;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamMode {
    Translation,
    TranslationOffset,
    TranslationGain,
    Full,
}

impl ParamMode {
    pub const ALL: [ParamMode; 4] = [
        ParamMode::Translation,
        ParamMode::TranslationOffset,
        ParamMode::TranslationGain,
        ParamMode::Full,
    ];

    /// Active flags for `[t_x, t_y, α, β]`.
    pub fn active(self) -> [bool; 4] {
        match self {
            Self::Translation => [true, true, false, false],
            Self::TranslationOffset => [true, true, false, true],
            Self::TranslationGain => [true, true, true, false],
            Self::Full => [true, true, true, true],
        }
    }
}

impl std::str::FromStr for ParamMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "TRANSLATION" => Ok(Self::Translation),
            "TRANSLATION_OFFSET" => Ok(Self::TranslationOffset),
            "TRANSLATION_GAIN" => Ok(Self::TranslationGain),
            "FULL" => Ok(Self::Full),
            _ => Err(format!(
                "unknown parameter mode {s:?} (expected TRANSLATION, TRANSLATION_OFFSET, TRANSLATION_GAIN or FULL)"
            )),
        }
    }
}

impl std::fmt::Display for ParamMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Translation => "TRANSLATION",
            Self::TranslationOffset => "TRANSLATION_OFFSET",
            Self::TranslationGain => "TRANSLATION_GAIN",
            Self::Full => "FULL",
        })
    }
}

/// Translation in level-0 pixels relative to the template anchor, plus
/// illumination gain increment and offset.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct WarpState {
    pub tx: f64,
    pub ty: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl WarpState {
    pub fn translation(tx: f64, ty: f64) -> Self {
        Self {
            tx,
            ty,
            ..Self::default()
        }
    }

    pub fn is_valid(&self) -> bool {
        [self.tx, self.ty, self.alpha, self.beta]
            .iter()
            .all(|v| v.is_finite())
            && self.alpha > -1.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrackerConfig {
    pub param_mode: ParamMode,
    /// Iteration cap per pyramid level.
    pub max_iterations: usize,
    /// Translation update norm, in level pixels, that ends a level.
    pub convergence_epsilon: f64,
    /// Pyramid levels used for tracking, starting at level 0.
    pub num_levels: usize,
    /// Active Hessian block is rejected when its determinant falls below
    /// this factor times the squared patch area.
    pub min_det_factor: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            param_mode: ParamMode::Full,
            max_iterations: 30,
            convergence_epsilon: 0.01,
            num_levels: 3,
            min_det_factor: 1e-6,
        }
    }
}

impl TrackerConfig {
    /// Square patch side used on `level`.
    pub fn patch_size(level: usize) -> usize {
        if level < 2 {
            16
        } else {
            8
        }
    }

    pub fn validate(&self) -> Result<(), TrackError> {
        if self.max_iterations == 0 {
            return Err(TrackError::InvalidConfig("max_iterations must be positive"));
        }
        if !(self.convergence_epsilon > 0.0) {
            return Err(TrackError::InvalidConfig("convergence_epsilon must be positive"));
        }
        if self.num_levels == 0 {
            return Err(TrackError::InvalidConfig("at least one tracking level is required"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TrackStatus {
    Converged,
    Diverged,
    OutOfBounds,
    SingularHessian,
    MaxIterations,
}

impl std::fmt::Display for TrackStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Converged => "CONVERGED",
            Self::Diverged => "DIVERGED",
            Self::OutOfBounds => "OUT_OF_BOUNDS",
            Self::SingularHessian => "SINGULAR_HESSIAN",
            Self::MaxIterations => "MAX_ITERATIONS",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackError {
    #[error("patch around ({x}, {y}) leaves pyramid level {level}")]
    OutOfBounds { level: usize, x: f64, y: f64 },
    #[error("singular Hessian on level {level} (determinant {determinant:e})")]
    SingularHessian { level: usize, determinant: f64 },
    #[error("invalid tracker configuration: {0}")]
    InvalidConfig(&'static str),
}

impl TrackError {
    pub fn status(&self) -> TrackStatus {
        match self {
            Self::OutOfBounds { .. } => TrackStatus::OutOfBounds,
            Self::SingularHessian { .. } | Self::InvalidConfig(_) => TrackStatus::SingularHessian,
        }
    }
}

type Mat4 = [[f64; 4]; 4];

/// Template patch on one pyramid level with its precomputed solver data.
#[derive(Clone, Debug)]
pub struct PatchTemplate {
    level: usize,
    anchor: (f64, f64),
    size: usize,
    values: Vec<f64>,
    grad_x: Vec<f64>,
    grad_y: Vec<f64>,
    coeffs: Vec<[f64; 4]>,
    hessian: Mat4,
    determinant: f64,
    inverse: Option<Mat4>,
}

impl PatchTemplate {
    pub fn level(&self) -> usize {
        self.level
    }

    /// Patch anchor in this level's pixel coordinates.
    pub fn anchor(&self) -> (f64, f64) {
        self.anchor
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn grad_x(&self) -> &[f64] {
        &self.grad_x
    }

    pub fn grad_y(&self) -> &[f64] {
        &self.grad_y
    }

    /// Coefficient vectors `U(x)` in row-major patch order; entries of
    /// inactive parameters are zero.
    pub fn coefficients(&self) -> &[[f64; 4]] {
        &self.coeffs
    }

    pub fn hessian(&self) -> &Mat4 {
        &self.hessian
    }

    /// Determinant of the active-parameter block of the Hessian.
    pub fn determinant(&self) -> f64 {
        self.determinant
    }

    pub fn inverse_hessian(&self) -> Option<&Mat4> {
        self.inverse.as_ref()
    }

    /// Offset of patch sample `i` from the anchor.
    #[inline]
    pub fn offset(&self, i: usize) -> (f64, f64) {
        let half = (self.size / 2) as f64;
        ((i % self.size) as f64 - half, (i / self.size) as f64 - half)
    }

    /// Whether the patch shifted by `t` (level pixels) lies inside `img`.
    fn fits(&self, img: &Image, t: (f64, f64), margin: f64) -> bool {
        let half = (self.size / 2) as f64;
        let (x, y) = (self.anchor.0 + t.0, self.anchor.1 + t.1);
        img.contains_subpixel(x - half - margin, y - half - margin)
            && img.contains_subpixel(x + half - 1.0 + margin, y + half - 1.0 + margin)
    }
}

/// `Σ Uᵀ U` over a patch.
pub fn hessian(coeffs: &[[f64; 4]]) -> Mat4 {
    let mut h = [[0.0; 4]; 4];
    for u in coeffs {
        for r in 0..4 {
            for c in r..4 {
                h[r][c] += u[r] * u[c];
            }
        }
    }
    for r in 0..4 {
        for c in 0..r {
            h[r][c] = h[c][r];
        }
    }
    h
}

/// Determinant and inverse of the active block, embedded back into 4×4.
fn active_inverse(h: &Mat4, active: [bool; 4]) -> (f64, Option<Mat4>) {
    let idx: Vec<usize> = (0..4).filter(|&i| active[i]).collect();
    let n = idx.len();
    let block = nalgebra::DMatrix::from_fn(n, n, |r, c| h[idx[r]][idx[c]]);
    let det = block.determinant();
    let inv = block.try_inverse().map(|m| {
        let mut out = [[0.0; 4]; 4];
        for (r, &i) in idx.iter().enumerate() {
            for (c, &j) in idx.iter().enumerate() {
                out[i][j] = m[(r, c)];
            }
        }
        out
    });
    (det, inv)
}

fn build_level(
    img: &Image,
    level: usize,
    anchor: (f64, f64),
    cfg: &TrackerConfig,
) -> Result<PatchTemplate, TrackError> {
    let size = TrackerConfig::patch_size(level);
    let mut tpl = PatchTemplate {
        level,
        anchor,
        size,
        values: Vec::with_capacity(size * size),
        grad_x: Vec::with_capacity(size * size),
        grad_y: Vec::with_capacity(size * size),
        coeffs: Vec::with_capacity(size * size),
        hessian: [[0.0; 4]; 4],
        determinant: 0.0,
        inverse: None,
    };
    // one extra pixel on each side for the central differences
    if !tpl.fits(img, (0.0, 0.0), 1.0) {
        return Err(TrackError::OutOfBounds {
            level,
            x: anchor.0,
            y: anchor.1,
        });
    }
    let active = cfg.param_mode.active();
    for i in 0..size * size {
        let (ox, oy) = tpl.offset(i);
        let (x, y) = (anchor.0 + ox, anchor.1 + oy);
        let v = img.sample_unchecked(x, y);
        let gx = 0.5 * (img.sample_unchecked(x + 1.0, y) - img.sample_unchecked(x - 1.0, y));
        let gy = 0.5 * (img.sample_unchecked(x, y + 1.0) - img.sample_unchecked(x, y - 1.0));
        let full = [gx, gy, v, 1.0];
        let mut u = [0.0; 4];
        for p in 0..4 {
            if active[p] {
                u[p] = full[p];
            }
        }
        tpl.values.push(v);
        tpl.grad_x.push(gx);
        tpl.grad_y.push(gy);
        tpl.coeffs.push(u);
    }
    tpl.hessian = hessian(&tpl.coeffs);
    let (det, inv) = active_inverse(&tpl.hessian, active);
    let area = (size * size) as f64;
    tpl.determinant = det;
    if det.is_finite() && det >= cfg.min_det_factor * area * area {
        tpl.inverse = inv;
    }
    Ok(tpl)
}

/// Templates around `feature` for every tracking level the pyramid can
/// hold, finest first. Levels too small for their patch are skipped; a
/// coarse level with an ill-conditioned Hessian is kept without an inverse
/// and later skipped by the tracker.
pub fn build_template(
    pyr: &ImagePyramid,
    feature: &CellMax,
    cfg: &TrackerConfig,
) -> Result<Vec<PatchTemplate>, TrackError> {
    cfg.validate()?;
    let mut out = Vec::new();
    for level in 0..cfg.num_levels.min(pyr.num_levels()) {
        let img = pyr.level(level);
        let size = TrackerConfig::patch_size(level);
        if img.width() < size + 2 || img.height() < size + 2 {
            continue;
        }
        let scale = (1u64 << level) as f64;
        let anchor = (feature.x as f64 / scale, feature.y as f64 / scale);
        let tpl = build_level(img, level, anchor, cfg)?;
        if level == 0 && tpl.inverse.is_none() {
            return Err(TrackError::SingularHessian {
                level,
                determinant: tpl.determinant,
            });
        }
        out.push(tpl);
    }
    if out.is_empty() {
        return Err(TrackError::OutOfBounds {
            level: 0,
            x: feature.x as f64,
            y: feature.y as f64,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackResult {
    pub status: TrackStatus,
    pub state: WarpState,
    /// Iterations spent on each pyramid level, indexed by level.
    pub iterations: Vec<usize>,
    /// Mean absolute photometric error on the finest level reached.
    pub residual: f64,
    /// Translation (level-0 pixels) on leaving each processed level,
    /// coarse to fine, as `(level, t_x, t_y)`.
    pub level_exits: Vec<(usize, f64, f64)>,
}

impl TrackResult {
    pub fn total_iterations(&self) -> usize {
        self.iterations.iter().sum()
    }

    fn failed(status: TrackStatus, state: WarpState, levels: usize) -> Self {
        Self {
            status,
            state,
            iterations: vec![0; levels],
            residual: f64::NAN,
            level_exits: Vec::new(),
        }
    }
}

/// Photometric residual sums for the patch shifted by `t` (level pixels):
/// returns `Σ U·r` and `Σ |r|`, where `r = I(x + t) − (1 + α)T − β`.
#[inline]
fn residual_terms(tpl: &PatchTemplate, img: &Image, t: (f64, f64), alpha: f64, beta: f64) -> ([f64; 4], f64) {
    let mut b = [0.0; 4];
    let mut abs_sum = 0.0;
    for (i, u) in tpl.coeffs.iter().enumerate() {
        let (ox, oy) = tpl.offset(i);
        let sample = img.sample_unchecked(tpl.anchor.0 + ox + t.0, tpl.anchor.1 + oy + t.1);
        let r = sample - (1.0 + alpha) * tpl.values[i] - beta;
        for p in 0..4 {
            b[p] += u[p] * r;
        }
        abs_sum += r.abs();
    }
    (b, abs_sum / tpl.coeffs.len() as f64)
}

/// Coarse-to-fine tracking of one feature into `cur`.
pub fn track_feature(
    templates: &[PatchTemplate],
    cur: &ImagePyramid,
    init: WarpState,
    cfg: &TrackerConfig,
) -> TrackResult {
    let levels = cur.num_levels();
    if !init.is_valid() {
        return TrackResult::failed(TrackStatus::Diverged, init, levels);
    }
    let mut order: Vec<&PatchTemplate> = templates
        .iter()
        .filter(|t| t.level < levels && t.inverse.is_some())
        .collect();
    order.sort_by(|a, b| b.level.cmp(&a.level));
    if order.is_empty() {
        return TrackResult::failed(TrackStatus::SingularHessian, init, levels);
    }

    let mut state = init;
    let mut iterations = vec![0; levels];
    let mut level_exits = Vec::with_capacity(order.len());
    let mut residual = f64::NAN;
    let mut converged = false;
    for tpl in order {
        let img = cur.level(tpl.level);
        let scale = (1u64 << tpl.level) as f64;
        let mut t = (state.tx / scale, state.ty / scale);
        let h_inv = tpl.inverse.as_ref().expect("filtered above");
        let half_diag = 0.5 * ((img.width() as f64).powi(2) + (img.height() as f64).powi(2)).sqrt();
        converged = false;
        for _ in 0..cfg.max_iterations {
            if !tpl.fits(img, t, 0.0) {
                state.tx = t.0 * scale;
                state.ty = t.1 * scale;
                return TrackResult {
                    status: TrackStatus::OutOfBounds,
                    state,
                    iterations,
                    residual,
                    level_exits,
                };
            }
            let (b, mean_abs) = residual_terms(tpl, img, t, state.alpha, state.beta);
            residual = mean_abs;
            let mut dq = [0.0; 4];
            for r in 0..4 {
                for c in 0..4 {
                    dq[r] += h_inv[r][c] * b[c];
                }
            }
            iterations[tpl.level] += 1;
            let step = (dq[0] * dq[0] + dq[1] * dq[1]).sqrt();
            t.0 -= dq[0];
            t.1 -= dq[1];
            state.alpha += dq[2];
            state.beta += dq[3];
            if !step.is_finite() || step > half_diag || !(state.alpha > -1.0) || !state.beta.is_finite() {
                state.tx = t.0 * scale;
                state.ty = t.1 * scale;
                return TrackResult {
                    status: TrackStatus::Diverged,
                    state,
                    iterations,
                    residual,
                    level_exits,
                };
            }
            if step <= cfg.convergence_epsilon {
                converged = true;
                break;
            }
        }
        state.tx = t.0 * scale;
        state.ty = t.1 * scale;
        level_exits.push((tpl.level, state.tx, state.ty));
        if tpl.level == 0 && tpl.fits(img, t, 0.0) {
            residual = residual_terms(tpl, img, t, state.alpha, state.beta).1;
        }
    }
    TrackResult {
        status: if converged {
            TrackStatus::Converged
        } else {
            TrackStatus::MaxIterations
        },
        state,
        iterations,
        residual,
        level_exits,
    }
}

/// One feature to track: its detection, templates and starting state.
#[derive(Clone, Copy, Debug)]
pub struct TrackInput<'a> {
    pub feature: CellMax,
    pub templates: &'a [PatchTemplate],
    pub init: WarpState,
}

/// Tracks every input independently; output order matches input order.
pub fn track_all(inputs: &[TrackInput<'_>], cur: &ImagePyramid, cfg: &TrackerConfig) -> Vec<TrackResult> {
    inputs
        .par_iter()
        .map(|inp| track_feature(inp.templates, cur, inp.init, cfg))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::build_pyramid;
    use crate::synth::Texture;

    fn feature(x: usize, y: usize) -> CellMax {
        CellMax {
            x,
            y,
            score: 1.0,
            level: 0,
        }
    }

    #[test]
    fn constant_patch_is_singular() {
        let pyr = build_pyramid(&Image::filled(64, 64, 120).unwrap(), 1).unwrap();
        let cfg = TrackerConfig {
            param_mode: ParamMode::Translation,
            ..Default::default()
        };
        let err = build_template(&pyr, &feature(32, 32), &cfg).unwrap_err();
        assert_eq!(err.status(), TrackStatus::SingularHessian);
    }

    #[test]
    fn ramp_patch_hessian() {
        let img = Image::from_fn(64, 64, |x, _| x as u8).unwrap();
        let pyr = build_pyramid(&img, 1).unwrap();
        let cfg = TrackerConfig {
            param_mode: ParamMode::Translation,
            min_det_factor: 0.0,
            num_levels: 1,
            ..Default::default()
        };
        let tpl = build_level(pyr.level(0), 0, (32.0, 32.0), &cfg).unwrap();
        assert!(tpl.grad_x().iter().all(|&g| g == 1.0));
        assert!(tpl.grad_y().iter().all(|&g| g == 0.0));
        let h = tpl.hessian();
        assert_eq!(h[0][0], 256.0);
        assert_eq!((h[0][1], h[1][1], h[1][0]), (0.0, 0.0, 0.0));
        assert_eq!(tpl.determinant(), 0.0);
        // default regularity threshold rejects it
        assert!(build_template(&pyr, &feature(32, 32), &TrackerConfig {
            param_mode: ParamMode::Translation,
            ..Default::default()
        })
        .is_err());
    }

    #[test]
    fn random_patch_hessian_matches_double_loop() {
        let tex = Texture::random(7, 40.0, 200.0);
        let img = tex.render(96, 96, 0.0, 0.0);
        let pyr = build_pyramid(&img, 1).unwrap();
        let tpl = &build_template(&pyr, &feature(48, 40), &TrackerConfig::default()).unwrap()[0];
        let mut h = [[0.0f64; 4]; 4];
        for i in 0..256 {
            let u = [tpl.grad_x()[i], tpl.grad_y()[i], tpl.values()[i], 1.0];
            for r in 0..4 {
                for c in 0..4 {
                    h[r][c] += u[r] * u[c];
                }
            }
        }
        for r in 0..4 {
            for c in 0..4 {
                let got = tpl.hessian()[r][c];
                assert!((got - h[r][c]).abs() <= 1e-9 * h[r][c].abs().max(1.0), "{r},{c}");
            }
        }
        // H · H⁻¹ = I
        let inv = tpl.inverse_hessian().unwrap();
        for r in 0..4 {
            for c in 0..4 {
                let v: f64 = (0..4).map(|k| tpl.hessian()[r][k] * inv[k][c]).sum();
                let e = if r == c { 1.0 } else { 0.0 };
                assert!((v - e).abs() < 1e-6, "{r},{c}: {v}");
            }
        }
    }

    #[test]
    fn inactive_parameters_are_zeroed() {
        let img = Texture::random(3, 40.0, 200.0).render(64, 64, 0.0, 0.0);
        let pyr = build_pyramid(&img, 1).unwrap();
        let cfg = TrackerConfig {
            param_mode: ParamMode::TranslationOffset,
            ..Default::default()
        };
        let tpl = &build_template(&pyr, &feature(32, 32), &cfg).unwrap()[0];
        assert!(tpl.coefficients().iter().all(|u| u[2] == 0.0 && u[3] == 1.0));
        let inv = tpl.inverse_hessian().unwrap();
        assert!(inv[2].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_residual_fixed_point() {
        let img = Texture::random(11, 40.0, 200.0).render(128, 128, 0.0, 0.0);
        let pyr = build_pyramid(&img, 3).unwrap();
        let tpls = build_template(&pyr, &feature(64, 60), &TrackerConfig::default()).unwrap();
        let res = track_feature(&tpls, &pyr, WarpState::default(), &TrackerConfig::default());
        assert_eq!(res.status, TrackStatus::Converged);
        assert!(res.iterations.iter().all(|&n| n <= 2), "{:?}", res.iterations);
        assert!(res.state.tx.abs() < 1e-9 && res.state.ty.abs() < 1e-9);
        assert!(res.state.alpha.abs() < 1e-9 && res.state.beta.abs() < 1e-9);
        assert!(res.residual < 1e-9);
    }

    #[test]
    fn patch_near_border_is_out_of_bounds() {
        let img = Texture::random(5, 40.0, 200.0).render(128, 128, 0.0, 0.0);
        let pyr = build_pyramid(&img, 2).unwrap();
        let err = build_template(&pyr, &feature(6, 64), &TrackerConfig::default()).unwrap_err();
        assert_eq!(err.status(), TrackStatus::OutOfBounds);
    }

    #[test]
    fn walking_off_the_image_reports_out_of_bounds() {
        let img = Texture::random(5, 40.0, 200.0).render(128, 128, 0.0, 0.0);
        let pyr = build_pyramid(&img, 1).unwrap();
        let cfg = TrackerConfig {
            num_levels: 1,
            ..Default::default()
        };
        let tpls = build_template(&pyr, &feature(64, 64), &cfg).unwrap();
        let res = track_feature(&tpls, &pyr, WarpState::translation(60.0, 0.0), &cfg);
        assert_eq!(res.status, TrackStatus::OutOfBounds);
    }

    #[test]
    fn invalid_init_and_empty_templates() {
        let pyr = build_pyramid(&Image::filled(32, 32, 0).unwrap(), 1).unwrap();
        let cfg = TrackerConfig::default();
        let bad = WarpState {
            alpha: -1.5,
            ..Default::default()
        };
        assert_eq!(track_feature(&[], &pyr, bad, &cfg).status, TrackStatus::Diverged);
        assert_eq!(
            track_feature(&[], &pyr, WarpState::default(), &cfg).status,
            TrackStatus::SingularHessian
        );
        assert!(track_all(&[], &pyr, &cfg).is_empty());
    }

    #[test]
    fn param_mode_parsing() {
        for m in ParamMode::ALL {
            assert_eq!(m.to_string().parse::<ParamMode>().unwrap(), m);
        }
        assert!("affine".parse::<ParamMode>().is_err());
    }
}
