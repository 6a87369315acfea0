//! File formats: NPY tensors, PNG images, JSON manifests and traces, and
//! colormapped visualizations.

mod image;
mod manifest;
mod npy;
mod render;
mod viridis;

pub use image::{decode_png, encode_png, quantize, read_image, write_image};
pub use manifest::{
    load_replay_provider, BlobSpec, RunManifest, SyntheticSpec, TraceIteration, TraceRecord,
};
pub use npy::{read_npy, write_npy, NpyArray, NpyData, MAGIC as NPY_MAGIC};
pub use render::{colormap, render_heat};

use crate::attention_map::{AttnStack, StackDims, TokenHeatmap, TokenMask};
use crate::error::{Error, Result};
use crate::grid::Grid;

/// Interprets a 4-D `<f4` array as `[layers, heads, grid_h, grid_w]`.
pub fn stack_from_npy(array: &NpyArray) -> Result<AttnStack> {
    let shape = array.shape();
    let [num_layers, num_heads, grid_h, grid_w] = *shape else {
        return Err(Error::validation(format!(
            "attention stacks are 4-D, got shape {shape:?}"
        )));
    };
    let values = array.as_f32()?.iter().map(|v| f64::from(*v)).collect();
    AttnStack::new(
        StackDims {
            num_layers,
            num_heads,
            grid_h,
            grid_w,
        },
        values,
    )
}

pub fn stack_to_npy(stack: &AttnStack) -> NpyArray {
    let values = stack.values().iter().map(|v| *v as f32).collect();
    NpyArray::from_f32(stack.dims().as_shape().to_vec(), values).expect("shape matches data")
}

/// Interprets a 2-D `<f4` array as a row-major grid.
pub fn grid_from_npy(array: &NpyArray) -> Result<Grid<f64>> {
    let [h, w] = *array.shape() else {
        return Err(Error::validation(format!(
            "expected a 2-D map, got shape {:?}",
            array.shape()
        )));
    };
    let values = array.as_f32()?.iter().map(|v| f64::from(*v)).collect();
    Grid::new(h, w, values)
}

/// Stores a grid as 2-D `<f4`.
pub fn grid_to_npy(grid: &Grid<f64>) -> NpyArray {
    let values = grid.as_slice().iter().map(|v| *v as f32).collect();
    NpyArray::from_f32(vec![grid.height(), grid.width()], values).expect("shape matches data")
}

pub fn heatmap_from_npy(array: &NpyArray) -> Result<TokenHeatmap> {
    TokenHeatmap::new(grid_from_npy(array)?)
}

pub fn mask_to_npy(mask: &TokenMask) -> NpyArray {
    let (h, w) = mask.dims();
    NpyArray::from_bool(vec![h, w], mask.grid().as_slice().to_vec()).expect("shape matches data")
}

pub fn mask_from_npy(array: &NpyArray) -> Result<TokenMask> {
    let [h, w] = *array.shape() else {
        return Err(Error::validation(format!(
            "expected a 2-D mask, got shape {:?}",
            array.shape()
        )));
    };
    Ok(TokenMask::from_grid(Grid::new(
        h,
        w,
        array.as_bool()?.to_vec(),
    )?))
}

/// Rounds every element through `f32`, as a write/read cycle would.
pub fn round_through_f32(grid: &Grid<f64>) -> Grid<f64> {
    grid.map(|v| f64::from(*v as f32))
}
