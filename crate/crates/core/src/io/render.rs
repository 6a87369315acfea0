//! Colormapped heatmap rendering, optionally blended over an image.

use crate::attention_map::TokenHeatmap;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::io::viridis::VIRIDIS;
use crate::magnifier::ImageBuffer;
use crate::postprocess::upsample_bilinear;

/// Colormap entry for a value in `[0, 1]` as `[0, 1]` reals.
pub fn colormap(v: f64) -> [f64; 3] {
    let i = (v.clamp(0.0, 1.0) * 255.0).round() as usize;
    let [r, g, b] = VIRIDIS[i];
    [
        f64::from(r) / 255.0,
        f64::from(g) / 255.0,
        f64::from(b) / 255.0,
    ]
}

/// Maps `values` (expected in `[0, 1]`) through the viridis table.
///
/// With an overlay the map is bilinearly upsampled to the overlay size and
/// the result is `(1 - blend) * overlay + blend * colour`.
pub fn render_heat(
    values: &Grid<f64>,
    overlay: Option<&ImageBuffer>,
    blend: f64,
) -> Result<ImageBuffer> {
    if !(0.0..=1.0).contains(&blend) {
        return Err(Error::validation(format!(
            "blend {blend} must lie in [0, 1]"
        )));
    }
    if values.is_empty() {
        return Err(Error::validation("cannot render an empty map"));
    }
    let Some(base) = overlay else {
        let (h, w) = values.dims();
        return ImageBuffer::from_fn(h, w, 3, |y, x, c| colormap(*values.get(y, x))[c]);
    };
    let base = base.to_rgb();
    let (h, w) = base.dims();
    let map = if values.dims() == (h, w) {
        values.clone()
    } else {
        let heat = TokenHeatmap::new(values.map(|v| v.clamp(0.0, 1.0)))?;
        upsample_bilinear(&heat, h, w)?
    };
    ImageBuffer::from_fn(h, w, 3, |y, x, c| {
        let color = colormap(*map.get(y, x))[c];
        (1.0 - blend) * base.get(y, x, c) + blend * color
    })
}
