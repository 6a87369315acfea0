//! Sources of masked attention for the refinement loop.

use crate::attention_map::{apply_mask, AttnStack, StackDims, TokenMask};
use crate::error::{Error, Result};

/// Yields the attention stack for the current query under a token mask.
///
/// A provider stands in for re-running the vision-language model with the
/// masked tokens blocked. Every stack it returns must have the dimensions
/// reported by [`dims`](AttentionProvider::dims) and zero weight at every
/// non-attendable token.
pub trait AttentionProvider {
    fn dims(&self) -> StackDims;

    /// Attention for refinement pass `iteration` (0-based) under `mask`.
    fn attend(&mut self, iteration: usize, mask: &TokenMask) -> Result<AttnStack>;
}

impl<P: AttentionProvider + ?Sized> AttentionProvider for Box<P> {
    fn dims(&self) -> StackDims {
        (**self).dims()
    }

    fn attend(&mut self, iteration: usize, mask: &TokenMask) -> Result<AttnStack> {
        (**self).attend(iteration, mask)
    }
}

/// Replays pre-recorded per-pass stacks, clamping to the last one when the
/// loop runs longer than the recording.
#[derive(Debug, Clone)]
pub struct ReplayProvider {
    dumps: Vec<AttnStack>,
}

impl ReplayProvider {
    pub fn new(dumps: Vec<AttnStack>) -> Result<Self> {
        let first = dumps
            .first()
            .ok_or_else(|| Error::validation("replay provider needs at least one stack"))?
            .dims();
        if let Some((i, s)) = dumps.iter().enumerate().find(|(_, s)| s.dims() != first) {
            return Err(Error::validation(format!(
                "replay stack {i} has shape {:?}, expected {:?}",
                s.dims().as_shape(),
                first.as_shape()
            )));
        }
        Ok(Self { dumps })
    }

    pub fn len(&self) -> usize {
        self.dumps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dumps.is_empty()
    }
}

impl AttentionProvider for ReplayProvider {
    fn dims(&self) -> StackDims {
        self.dumps[0].dims()
    }

    fn attend(&mut self, iteration: usize, mask: &TokenMask) -> Result<AttnStack> {
        let stack = &self.dumps[iteration.min(self.dumps.len() - 1)];
        apply_mask(stack, mask)
    }
}

/// One isotropic Gaussian attention bump centred on a token.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Blob {
    /// `(row, column)` of the centre token.
    pub center: (usize, usize),
    /// Standard deviation in tokens.
    pub width: f64,
    /// Total attention mass of the bump over the full grid.
    pub weight: f64,
}

/// Closed-form provider that mimics attention re-concentrating on the next
/// region once the dominant one is blocked.
///
/// Each blob contributes only while its centre token is attendable. With no
/// live blob the provider spreads `leak` uniformly over attendable tokens.
/// The mixture sits in the last layer and head 0; all lower layers are zero,
/// so any start layer up to the last yields the same heatmap.
#[derive(Debug, Clone)]
pub struct SyntheticProvider {
    dims: StackDims,
    blobs: Vec<Blob>,
    bumps: Vec<Vec<f64>>,
    leak: f64,
}

impl SyntheticProvider {
    /// Single-layer, single-head provider over a `grid_h x grid_w` token grid.
    pub fn new(grid_h: usize, grid_w: usize, blobs: Vec<Blob>, leak: f64) -> Result<Self> {
        if grid_h == 0 || grid_w == 0 {
            return Err(Error::validation("synthetic grid must be non-empty"));
        }
        if blobs.is_empty() {
            return Err(Error::validation(
                "synthetic provider needs at least one blob",
            ));
        }
        if !(0.0..1.0).contains(&leak) {
            return Err(Error::validation(format!("leak {leak} must lie in [0, 1)")));
        }
        for b in &blobs {
            if !(b.width.is_finite() && b.width > 0.0) {
                return Err(Error::validation(format!(
                    "blob width {} must be positive",
                    b.width
                )));
            }
            if !(b.weight.is_finite() && b.weight > 0.0) {
                return Err(Error::validation(format!(
                    "blob weight {} must be positive",
                    b.weight
                )));
            }
            if b.center.0 >= grid_h || b.center.1 >= grid_w {
                return Err(Error::validation(format!(
                    "blob centre {:?} lies outside the {grid_h}x{grid_w} grid",
                    b.center
                )));
            }
        }
        let bumps = blobs
            .iter()
            .map(|b| gaussian_bump(grid_h, grid_w, b))
            .collect();
        Ok(Self {
            dims: StackDims {
                num_layers: 1,
                num_heads: 1,
                grid_h,
                grid_w,
            },
            blobs,
            bumps,
            leak,
        })
    }

    /// Emits `num_layers` layers, the mixture occupying the last one.
    pub fn with_layers(mut self, num_layers: usize) -> Result<Self> {
        if num_layers == 0 {
            return Err(Error::validation(
                "synthetic provider needs at least one layer",
            ));
        }
        self.dims.num_layers = num_layers;
        Ok(self)
    }

    pub fn blobs(&self) -> &[Blob] {
        &self.blobs
    }

    /// Token-grid attention for `mask`, before layering.
    pub fn mixture(&self, mask: &TokenMask) -> Result<Vec<f64>> {
        let (h, w) = (self.dims.grid_h, self.dims.grid_w);
        if mask.dims() != (h, w) {
            return Err(Error::validation(format!(
                "mask {:?} does not match synthetic grid {h}x{w}",
                mask.dims()
            )));
        }
        let live: Vec<&Vec<f64>> = self
            .blobs
            .iter()
            .zip(&self.bumps)
            .filter(|(b, _)| mask.is_attendable(b.center.0, b.center.1))
            .map(|(_, bump)| bump)
            .collect();
        let keep = mask.grid().as_slice();
        let values = if live.is_empty() {
            let n = mask.attendable_count();
            let per = if n == 0 { 0.0 } else { self.leak / n as f64 };
            keep.iter().map(|&k| if k { per } else { 0.0 }).collect()
        } else {
            (0..h * w)
                .map(|t| {
                    if keep[t] {
                        live.iter().map(|b| b[t]).sum()
                    } else {
                        0.0
                    }
                })
                .collect()
        };
        Ok(values)
    }
}

impl AttentionProvider for SyntheticProvider {
    fn dims(&self) -> StackDims {
        self.dims
    }

    fn attend(&mut self, _iteration: usize, mask: &TokenMask) -> Result<AttnStack> {
        let top = self.mixture(mask)?;
        let mut values = vec![0.0; self.dims.len()];
        let n = self.dims.tokens();
        let start = (self.dims.num_layers - 1) * self.dims.num_heads * n;
        values[start..start + n].copy_from_slice(&top);
        AttnStack::new(self.dims, values)
    }
}

/// Gaussian over the whole grid rescaled so its grid sum equals the weight.
fn gaussian_bump(grid_h: usize, grid_w: usize, blob: &Blob) -> Vec<f64> {
    let (cy, cx) = (blob.center.0 as f64, blob.center.1 as f64);
    let two_var = 2.0 * blob.width * blob.width;
    let raw: Vec<f64> = (0..grid_h)
        .flat_map(|y| (0..grid_w).map(move |x| (y as f64, x as f64)))
        .map(|(y, x)| (-((y - cy).powi(2) + (x - cx).powi(2)) / two_var).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total * blob.weight).collect()
}
