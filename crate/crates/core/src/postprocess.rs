//! Token heatmap to pixel-level perception map.
//!
//! The stages run in a fixed order: min-max normalization, variance
//! amplification squashed through a logistic sigmoid, a `k x k` box filter
//! with replicated edges, and half-pixel-centred bilinear upsampling.

use serde::{Deserialize, Serialize};

use crate::attention_map::TokenHeatmap;
use crate::error::{Error, Result};
use crate::grid::Grid;

pub const DEFAULT_ALPHA: f64 = 10.0;
pub const DEFAULT_KERNEL: usize = 3;

/// Distance kept between perception values and the ends of `(0, 1)`.
///
/// Large z-scores saturate the sigmoid to exactly 0 or 1 in floating point.
/// `RANGE_MARGIN` and `1 - RANGE_MARGIN` are both exact in `f32`, so the open
/// interval also survives serialization.
pub const RANGE_MARGIN: f64 = 1.0 / 16_777_216.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PostprocessConfig {
    /// Variance scaling coefficient applied to the z-scores.
    pub alpha: f64,
    /// Box filter size in tokens; odd.
    pub kernel: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl PostprocessConfig {
    pub fn new(out_h: usize, out_w: usize) -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            kernel: DEFAULT_KERNEL,
            out_h,
            out_w,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::validation(format!(
                "alpha {} must be > 0",
                self.alpha
            )));
        }
        check_kernel(self.kernel)
    }
}

/// Pixel-resolution map with every value strictly inside `(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerceptionMap(Grid<f64>);

impl PerceptionMap {
    pub fn new(grid: Grid<f64>) -> Result<Self> {
        if grid.is_empty() {
            return Err(Error::validation("perception map must be non-empty"));
        }
        if let Some(v) = grid.as_slice().iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
            return Err(Error::validation(format!(
                "perception value {v} lies outside (0, 1)"
            )));
        }
        Ok(Self(grid))
    }

    pub fn grid(&self) -> &Grid<f64> {
        &self.0
    }

    pub fn into_grid(self) -> Grid<f64> {
        self.0
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }
}

fn check_kernel(k: usize) -> Result<()> {
    if k == 0 || k.is_multiple_of(2) {
        return Err(Error::validation(format!(
            "smoothing kernel {k} must be odd and >= 1"
        )));
    }
    Ok(())
}

/// Min-max scaling to `[0, 1]`; a constant map becomes constant 0.5.
pub fn normalize_unit(heat: &TokenHeatmap) -> TokenHeatmap {
    let grid = heat.grid();
    let out = match grid.min_max() {
        Some((lo, hi)) if hi > lo => {
            let span = hi - lo;
            grid.map(|v| (v - lo) / span)
        }
        _ => grid.map(|_| 0.5),
    };
    TokenHeatmap::from_grid_unchecked(out)
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `sigmoid(alpha * (v - mean) / std)` with population statistics.
///
/// Zero spread yields 0.5 everywhere.
pub fn sigmoid_enhance(hnorm: &TokenHeatmap, alpha: f64) -> TokenHeatmap {
    let grid = hnorm.grid();
    let n = grid.len() as f64;
    let mean = grid.sum() / n;
    let var = grid
        .as_slice()
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / n;
    let std = var.sqrt();
    let out = if std > 0.0 {
        grid.map(|v| sigmoid(alpha * ((v - mean) / std)))
    } else {
        grid.map(|_| 0.5)
    };
    TokenHeatmap::from_grid_unchecked(out)
}

/// `k x k` mean filter with clamp-to-edge padding.
pub fn smooth_uniform(heat: &TokenHeatmap, k: usize) -> Result<TokenHeatmap> {
    check_kernel(k)?;
    if k == 1 {
        return Ok(heat.clone());
    }
    let grid = heat.grid();
    let (h, w) = grid.dims();
    let r = (k / 2) as isize;
    let clamp = |v: isize, len: usize| v.clamp(0, len as isize - 1) as usize;
    let area = (k * k) as f64;
    let out = Grid::from_fn(h, w, |y, x| {
        let mut s = 0.0;
        for dy in -r..=r {
            let yy = clamp(y as isize + dy, h);
            for dx in -r..=r {
                s += *grid.get(yy, clamp(x as isize + dx, w));
            }
        }
        s / area
    });
    Ok(TokenHeatmap::from_grid_unchecked(out))
}

/// Source coordinate of output index `i` under the half-pixel convention.
#[inline]
pub(crate) fn half_pixel_source(i: usize, in_len: usize, out_len: usize) -> f64 {
    (i as f64 + 0.5) * in_len as f64 / out_len as f64 - 0.5
}

/// Bilinear upsampling with half-pixel-centred sampling.
pub fn upsample_bilinear(heat: &TokenHeatmap, out_h: usize, out_w: usize) -> Result<Grid<f64>> {
    let grid = heat.grid();
    let (h, w) = grid.dims();
    if out_h < h || out_w < w {
        return Err(Error::validation(format!(
            "cannot upsample {h}x{w} to smaller {out_h}x{out_w}"
        )));
    }
    if h == 0 || w == 0 {
        return Err(Error::validation("cannot upsample an empty heatmap"));
    }
    let ys: Vec<f64> = (0..out_h).map(|i| half_pixel_source(i, h, out_h)).collect();
    let xs: Vec<f64> = (0..out_w).map(|j| half_pixel_source(j, w, out_w)).collect();
    Ok(Grid::from_fn(out_h, out_w, |i, j| {
        grid.sample_bilinear(ys[i], xs[j])
    }))
}

/// Full post-processing chain from an aggregated heatmap to a perception map.
///
/// The result is clamped to `[RANGE_MARGIN, 1 - RANGE_MARGIN]`.
pub fn postprocess_pipeline(heat: &TokenHeatmap, cfg: &PostprocessConfig) -> Result<PerceptionMap> {
    cfg.validate()?;
    let normalized = normalize_unit(heat);
    let enhanced = sigmoid_enhance(&normalized, cfg.alpha);
    let smoothed = smooth_uniform(&enhanced, cfg.kernel)?;
    let up = upsample_bilinear(&smoothed, cfg.out_h, cfg.out_w)?;
    PerceptionMap::new(up.map(|v| v.clamp(RANGE_MARGIN, 1.0 - RANGE_MARGIN)))
}
