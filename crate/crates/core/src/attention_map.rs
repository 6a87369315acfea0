//! Attention tensors, token masks and the layer/head aggregation into a
//! token heatmap.
//!
//! An [`AttnStack`] holds the attention from the current query position to
//! every visual token for a range of layers and heads. [`aggregate_heatmap`]
//! max-pools over heads and sums over layers from a start layer upward.
//! [`cluster_high_group`] splits the live heatmap values into two groups and
//! reports the dominant tokens that the refinement loop masks next.

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Shape of an attention stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StackDims {
    pub num_layers: usize,
    pub num_heads: usize,
    pub grid_h: usize,
    pub grid_w: usize,
}

impl StackDims {
    pub fn tokens(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn len(&self) -> usize {
        self.num_layers * self.num_heads * self.tokens()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_shape(&self) -> [usize; 4] {
        [self.num_layers, self.num_heads, self.grid_h, self.grid_w]
    }

    fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.num_heads == 0 || self.grid_h == 0 || self.grid_w == 0 {
            return Err(Error::validation(format!(
                "attention stack dimensions must be positive, got {:?}",
                self.as_shape()
            )));
        }
        Ok(())
    }
}

/// Non-negative attention weights laid out as `[layer, head, y, x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttnStack {
    dims: StackDims,
    values: Vec<f64>,
}

impl AttnStack {
    pub fn new(dims: StackDims, values: Vec<f64>) -> Result<Self> {
        dims.validate()?;
        if values.len() != dims.len() {
            return Err(Error::validation(format!(
                "attention stack {:?} needs {} values, got {}",
                dims.as_shape(),
                dims.len(),
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::validation(format!(
                "attention value {} at flat index {pos} is not finite and non-negative",
                values[pos]
            )));
        }
        Ok(Self { dims, values })
    }

    /// Stack with every weight set to zero.
    pub fn zeros(dims: StackDims) -> Result<Self> {
        dims.validate()?;
        Ok(Self {
            dims,
            values: vec![0.0; dims.len()],
        })
    }

    pub fn dims(&self) -> StackDims {
        self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn index_of(&self, layer: usize, head: usize, y: usize, x: usize) -> usize {
        let d = &self.dims;
        ((layer * d.num_heads + head) * d.grid_h + y) * d.grid_w + x
    }

    #[inline]
    pub fn get(&self, layer: usize, head: usize, y: usize, x: usize) -> f64 {
        self.values[self.index_of(layer, head, y, x)]
    }

    /// Contiguous `[grid_h * grid_w]` slice for one layer and head.
    pub fn head_slice(&self, layer: usize, head: usize) -> &[f64] {
        let n = self.dims.tokens();
        let start = (layer * self.dims.num_heads + head) * n;
        &self.values[start..start + n]
    }
}

/// Aggregated attention mass per visual token.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenHeatmap(Grid<f64>);

impl TokenHeatmap {
    pub fn new(grid: Grid<f64>) -> Result<Self> {
        if let Some(v) = grid.as_slice().iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::validation(format!(
                "heatmap value {v} is not finite and non-negative"
            )));
        }
        Ok(Self(grid))
    }

    /// Wraps a grid already known to satisfy the heatmap invariants.
    pub(crate) fn from_grid_unchecked(grid: Grid<f64>) -> Self {
        Self(grid)
    }

    pub fn zeros(grid_h: usize, grid_w: usize) -> Self {
        Self(Grid::filled(grid_h, grid_w, 0.0))
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

    pub fn get(&self, y: usize, x: usize) -> f64 {
        *self.0.get(y, x)
    }

    pub fn total(&self) -> f64 {
        self.0.sum()
    }
}

/// Which visual tokens may still receive attention (`true` = attendable).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenMask(Grid<bool>);

impl TokenMask {
    pub fn all(grid_h: usize, grid_w: usize) -> Self {
        Self(Grid::filled(grid_h, grid_w, true))
    }

    pub fn none(grid_h: usize, grid_w: usize) -> Self {
        Self(Grid::filled(grid_h, grid_w, false))
    }

    pub fn from_grid(grid: Grid<bool>) -> Self {
        Self(grid)
    }

    pub fn grid(&self) -> &Grid<bool> {
        &self.0
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }

    pub fn is_attendable(&self, y: usize, x: usize) -> bool {
        *self.0.get(y, x)
    }

    pub fn attendable_count(&self) -> usize {
        self.0.as_slice().iter().filter(|a| **a).count()
    }

    /// Marks the given tokens as non-attendable.
    pub fn exclude(&mut self, tokens: &[(usize, usize)]) {
        for &(y, x) in tokens {
            self.0.set(y, x, false);
        }
    }

    /// True when every attendable token here is attendable in `other` too.
    pub fn is_subset_of(&self, other: &TokenMask) -> bool {
        self.dims() == other.dims()
            && self
                .0
                .as_slice()
                .iter()
                .zip(other.0.as_slice())
                .all(|(a, b)| !*a || *b)
    }
}

/// Number of refinement passes in which each token was attendable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountMask(Grid<u32>);

impl CountMask {
    pub fn zeros(grid_h: usize, grid_w: usize) -> Self {
        Self(Grid::filled(grid_h, grid_w, 0))
    }

    pub fn grid(&self) -> &Grid<u32> {
        &self.0
    }

    pub fn get(&self, y: usize, x: usize) -> u32 {
        *self.0.get(y, x)
    }

    /// Adds one visit at every attendable position of `mask`.
    pub fn record(&mut self, mask: &TokenMask) {
        for (c, a) in self.0.as_mut_slice().iter_mut().zip(mask.grid().as_slice()) {
            if *a {
                *c += 1;
            }
        }
    }
}

/// Sums the head-wise maximum attention of every layer from `start_layer`
/// (0-based, inclusive) through the last layer.
pub fn aggregate_heatmap(attn: &AttnStack, start_layer: usize) -> Result<TokenHeatmap> {
    let d = attn.dims();
    if start_layer >= d.num_layers {
        return Err(Error::Range(format!(
            "start layer {start_layer} is outside 0..{}",
            d.num_layers
        )));
    }
    let n = d.tokens();
    let mut out = vec![0.0f64; n];
    let mut head_max = vec![0.0f64; n];
    for layer in start_layer..d.num_layers {
        head_max.copy_from_slice(attn.head_slice(layer, 0));
        for head in 1..d.num_heads {
            for (m, &v) in head_max.iter_mut().zip(attn.head_slice(layer, head)) {
                if v > *m {
                    *m = v;
                }
            }
        }
        for (o, m) in out.iter_mut().zip(&head_max) {
            *o += *m;
        }
    }
    Ok(TokenHeatmap(Grid::new(d.grid_h, d.grid_w, out)?))
}

/// Zeroes every non-attendable token across all layers and heads.
pub fn apply_mask(attn: &AttnStack, mask: &TokenMask) -> Result<AttnStack> {
    let d = attn.dims();
    if mask.dims() != (d.grid_h, d.grid_w) {
        return Err(Error::validation(format!(
            "mask {:?} does not match attention grid {}x{}",
            mask.dims(),
            d.grid_h,
            d.grid_w
        )));
    }
    let keep = mask.grid().as_slice();
    let n = d.tokens();
    let values = attn
        .values()
        .iter()
        .enumerate()
        .map(|(i, &v)| if keep[i % n] { v } else { 0.0 })
        .collect();
    Ok(AttnStack { dims: d, values })
}

const MAX_LLOYD_ITERATIONS: usize = 100;

/// Splits the attendable heatmap values into two groups with 1-D 2-means and
/// returns the tokens of the higher group in row-major order.
///
/// Centroids start at the extreme values; ties go to the high group. When
/// every attendable value is equal no group dominates and the result is empty.
pub fn cluster_high_group(heat: &TokenHeatmap, mask: &TokenMask) -> Result<Vec<(usize, usize)>> {
    if heat.dims() != mask.dims() {
        return Err(Error::validation(format!(
            "mask {:?} does not match heatmap {:?}",
            mask.dims(),
            heat.dims()
        )));
    }
    let (h, w) = heat.dims();
    let live: Vec<((usize, usize), f64)> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (y, x)))
        .filter(|&(y, x)| mask.is_attendable(y, x))
        .map(|(y, x)| ((y, x), heat.get(y, x)))
        .collect();
    if live.is_empty() {
        return Err(Error::EmptyDomain(
            "no attendable tokens to cluster".to_string(),
        ));
    }

    let (lo, hi) = live
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, v)| {
            (lo.min(*v), hi.max(*v))
        });
    if lo == hi {
        return Ok(Vec::new());
    }

    let mut low_c = lo;
    let mut high_c = hi;
    let mut is_high: Vec<bool> = live.iter().map(|(_, v)| *v == hi).collect();
    for _ in 0..MAX_LLOYD_ITERATIONS {
        let next: Vec<bool> = live
            .iter()
            .map(|(_, v)| (v - high_c).abs() <= (v - low_c).abs())
            .collect();
        let (mut sum_hi, mut n_hi, mut sum_lo, mut n_lo) = (0.0, 0usize, 0.0, 0usize);
        for ((_, v), hi_member) in live.iter().zip(&next) {
            if *hi_member {
                sum_hi += v;
                n_hi += 1;
            } else {
                sum_lo += v;
                n_lo += 1;
            }
        }
        let converged = next == is_high;
        is_high = next;
        if converged || n_hi == 0 || n_lo == 0 {
            break;
        }
        high_c = sum_hi / n_hi as f64;
        low_c = sum_lo / n_lo as f64;
    }

    Ok(live
        .iter()
        .zip(&is_high)
        .filter(|(_, h)| **h)
        .map(|((t, _), _)| *t)
        .collect())
}
