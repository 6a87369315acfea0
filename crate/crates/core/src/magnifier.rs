//! Perception-guided magnification by separable inverse transform sampling.
//!
//! The perception map is collapsed into a column marginal (max over rows)
//! and a row marginal (max over columns). Their cumulative sums act as
//! piecewise-linear CDFs over source cells. Output pixels are spread evenly
//! in cumulative mass and mapped back through the inverse CDFs, so columns
//! and rows carrying more mass receive more output pixels. Pixels are then
//! read from the source image bilinearly.

use crate::error::{Error, Result};
use crate::grid::{bilinear_taps, blend4, Grid};

/// Interleaved `[height, width, channels]` image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::validation("image dimensions must be positive"));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::validation(format!(
                "images need 1 or 3 channels, got {channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::validation(format!(
                "image {height}x{width}x{channels} needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::validation(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Same image with grey replicated into three channels.
    pub fn to_rgb(&self) -> ImageBuffer {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|v| [*v, *v, *v]).collect();
        ImageBuffer {
            channels: 3,
            data,
            ..*self
        }
    }

    /// Bilinear read at continuous pixel-centre coordinates, clamped to edges.
    pub fn sample(&self, y: f64, x: f64, c: usize) -> f64 {
        let (y0, y1, fy) = bilinear_taps(y, self.height);
        let (x0, x1, fx) = bilinear_taps(x, self.width);
        blend4(
            self.get(y0, x0, c),
            self.get(y0, x1, c),
            self.get(y1, x0, c),
            self.get(y1, x1, c),
            fy,
            fx,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

/// Cumulative mass along one image axis with a piecewise-linear inverse.
///
/// `cumulative` has a leading zero, so `cumulative[n]` is the mass of the
/// first `n` cells and source cell `j` (1-based) spans `[j - 1, j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalCdf {
    axis: Axis,
    mass: Vec<f64>,
    cumulative: Vec<f64>,
}

impl MarginalCdf {
    pub fn new(axis: Axis, mass: Vec<f64>) -> Result<Self> {
        if mass.is_empty() {
            return Err(Error::validation("marginal needs at least one cell"));
        }
        if let Some(m) = mass.iter().find(|m| !(m.is_finite() && **m > 0.0)) {
            return Err(Error::validation(format!(
                "marginal mass {m} must be finite and positive"
            )));
        }
        let mut cumulative = Vec::with_capacity(mass.len() + 1);
        let mut acc = 0.0;
        cumulative.push(acc);
        for m in &mass {
            acc += m;
            cumulative.push(acc);
        }
        Ok(Self {
            axis,
            mass,
            cumulative,
        })
    }

    pub fn axis(&self) -> Axis {
        self.axis
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    /// Number of source cells.
    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.cumulative[self.mass.len()]
    }

    /// Scale-free form used to drive the warp: each mass divided by the
    /// largest and rounded to `f32` precision.
    ///
    /// Two maps that differ by a positive factor produce the same canonical
    /// marginal, so their remap grids are bit-identical.
    pub fn canonical(&self) -> MarginalCdf {
        let peak = self.mass.iter().copied().fold(0.0f64, f64::max);
        let mass = self
            .mass
            .iter()
            .map(|m| f64::from((m / peak) as f32).max(f64::from(f32::MIN_POSITIVE)))
            .collect();
        MarginalCdf::new(self.axis, mass).expect("canonical masses are positive")
    }
}

/// Column marginal (`x`, max over rows) and row marginal (`y`, max over
/// columns) of a strictly positive map.
pub fn build_marginal_cdfs(pmap: &Grid<f64>) -> Result<(MarginalCdf, MarginalCdf)> {
    let (h, w) = pmap.dims();
    if h == 0 || w == 0 {
        return Err(Error::validation("perception map must be non-empty"));
    }
    if let Some(v) = pmap
        .as_slice()
        .iter()
        .find(|v| !(v.is_finite() && **v > 0.0))
    {
        return Err(Error::validation(format!(
            "perception value {v} must be finite and positive"
        )));
    }
    let mut col = vec![f64::NEG_INFINITY; w];
    let mut row = vec![f64::NEG_INFINITY; h];
    for (y, r) in row.iter_mut().enumerate() {
        for (x, c) in col.iter_mut().enumerate() {
            let v = *pmap.get(y, x);
            *c = c.max(v);
            *r = r.max(v);
        }
    }
    Ok((
        MarginalCdf::new(Axis::X, col)?,
        MarginalCdf::new(Axis::Y, row)?,
    ))
}

/// Continuous source coordinate (in cells) whose cumulative mass is `target`.
pub fn invert_cdf(cdf: &MarginalCdf, target: f64) -> Result<f64> {
    let total = cdf.total();
    if !(0.0..=total).contains(&target) {
        return Err(Error::Range(format!(
            "target mass {target} outside [0, {total}]"
        )));
    }
    Ok(invert_unchecked(cdf, target))
}

#[inline]
fn invert_unchecked(cdf: &MarginalCdf, target: f64) -> f64 {
    let n = cdf.len();
    if target >= cdf.total() {
        return n as f64;
    }
    // First bin whose upper cumulative reaches the target.
    let j = cdf.cumulative[1..].partition_point(|c| *c < target) + 1;
    let lower = cdf.cumulative[j - 1];
    let offset = ((target - lower) / cdf.mass[j - 1]).clamp(0.0, 1.0);
    (j - 1) as f64 + offset
}

/// Source pixel-centre coordinate for every output column (`xs`) and row
/// (`ys`).
#[derive(Debug, Clone, PartialEq)]
pub struct RemapGrid {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

fn axis_remap(cdf: &MarginalCdf, out_len: usize) -> Vec<f64> {
    let total = cdf.total();
    (0..out_len)
        .map(|j| {
            let target = (j as f64 + 0.5) / out_len as f64 * total;
            invert_unchecked(cdf, target) - 0.5
        })
        .collect()
}

/// Separable remap from output pixels back into source coordinates.
pub fn remap_coordinates(pmap: &Grid<f64>, out_h: usize, out_w: usize) -> Result<RemapGrid> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::validation("output dimensions must be positive"));
    }
    let (fx, fy) = build_marginal_cdfs(pmap)?;
    Ok(RemapGrid {
        xs: axis_remap(&fx.canonical(), out_w),
        ys: axis_remap(&fy.canonical(), out_h),
    })
}

/// Resamples `image` so regions with high perception mass are enlarged.
///
/// `pmap` must have the image's dimensions.
pub fn magnify(
    image: &ImageBuffer,
    pmap: &Grid<f64>,
    out_h: usize,
    out_w: usize,
) -> Result<ImageBuffer> {
    if pmap.dims() != image.dims() {
        return Err(Error::validation(format!(
            "perception map {:?} does not match image {:?}",
            pmap.dims(),
            image.dims()
        )));
    }
    let remap = remap_coordinates(pmap, out_h, out_w)?;
    Ok(resample(image, &remap))
}

/// Bilinear read of `image` at every `(ys[i], xs[j])`.
pub fn resample(image: &ImageBuffer, remap: &RemapGrid) -> ImageBuffer {
    let (out_h, out_w, ch) = (remap.ys.len(), remap.xs.len(), image.channels);
    let x_taps: Vec<_> = remap
        .xs
        .iter()
        .map(|x| bilinear_taps(*x, image.width))
        .collect();
    let mut data = Vec::with_capacity(out_h * out_w * ch);
    for &y in &remap.ys {
        let (y0, y1, fy) = bilinear_taps(y, image.height);
        for &(x0, x1, fx) in &x_taps {
            for c in 0..ch {
                data.push(blend4(
                    image.get(y0, x0, c),
                    image.get(y0, x1, c),
                    image.get(y1, x0, c),
                    image.get(y1, x1, c),
                    fy,
                    fx,
                ));
            }
        }
    }
    ImageBuffer {
        height: out_h,
        width: out_w,
        channels: ch,
        data,
    }
}

/// Plain bilinear resize with half-pixel centres.
pub fn resize_bilinear(image: &ImageBuffer, out_h: usize, out_w: usize) -> Result<ImageBuffer> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::validation("output dimensions must be positive"));
    }
    let remap = RemapGrid {
        xs: (0..out_w)
            .map(|j| crate::postprocess::half_pixel_source(j, image.width, out_w))
            .collect(),
        ys: (0..out_h)
            .map(|i| crate::postprocess::half_pixel_source(i, image.height, out_h))
            .collect(),
    };
    Ok(resample(image, &remap))
}
