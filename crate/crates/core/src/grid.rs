//! Row-major 2-D storage shared by heatmaps, masks and perception maps.

use crate::error::{Error, Result};

/// A dense row-major 2-D grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grid<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T> Grid<T> {
    pub fn new(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::validation(format!(
                "grid {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `(height, width)`.
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index_of(&self, y: usize, x: usize) -> usize {
        debug_assert!(y < self.height && x < self.width);
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> &T {
        &self.data[self.index_of(y, x)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, value: T) {
        let i = self.index_of(y, x);
        self.data[i] = value;
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(f).collect(),
        }
    }
}

impl<T: Clone> Grid<T> {
    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }
}

impl Grid<f64> {
    /// Smallest and largest element, or `None` for an empty grid.
    pub fn min_max(&self) -> Option<(f64, f64)> {
        let mut it = self.data.iter().copied();
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v))))
    }

    /// Row-major sum.
    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Bilinear read at a continuous `(y, x)` position in cell-center
    /// coordinates, clamped to the grid edges.
    pub fn sample_bilinear(&self, y: f64, x: f64) -> f64 {
        let (y0, y1, fy) = bilinear_taps(y, self.height);
        let (x0, x1, fx) = bilinear_taps(x, self.width);
        let a = self.data[y0 * self.width + x0];
        let b = self.data[y0 * self.width + x1];
        let c = self.data[y1 * self.width + x0];
        let d = self.data[y1 * self.width + x1];
        blend4(a, b, c, d, fy, fx)
    }
}

/// Neighbouring taps and fractional weight for a clamped bilinear read
/// along an axis of length `len`.
#[inline]
pub(crate) fn bilinear_taps(pos: f64, len: usize) -> (usize, usize, f64) {
    let max = (len - 1) as f64;
    let p = pos.clamp(0.0, max);
    let i0 = p.floor() as usize;
    let i1 = (i0 + 1).min(len - 1);
    (i0, i1, p - i0 as f64)
}

/// Bilinear blend of four corner values, clamped to their hull so rounding
/// can never step outside the convex range.
#[inline]
pub(crate) fn blend4(a: f64, b: f64, c: f64, d: f64, fy: f64, fx: f64) -> f64 {
    let top = a + fx * (b - a);
    let bottom = c + fx * (d - c);
    let v = top + fy * (bottom - top);
    let lo = a.min(b).min(c.min(d));
    let hi = a.max(b).max(c.max(d));
    v.clamp(lo, hi)
}
