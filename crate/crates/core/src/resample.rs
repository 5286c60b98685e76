//! Plane resampling primitives shared by the heatmap prior, fovea cropping,
//! and score fusion. All samplers use the pixel-center convention: target
//! pixel (x, y) reads source coordinate ((x+0.5)*sw/dw - 0.5, ...), clamped
//! to the source grid.

/// Bilinear sample of a single f32 plane at fractional source coordinates.
#[inline]
fn bilinear_at(src: &[f32], sw: usize, sh: usize, sx: f64, sy: f64) -> f32 {
    let sx = sx.clamp(0.0, (sw - 1) as f64);
    let sy = sy.clamp(0.0, (sh - 1) as f64);
    let x0 = sx.floor() as usize;
    let y0 = sy.floor() as usize;
    let x1 = (x0 + 1).min(sw - 1);
    let y1 = (y0 + 1).min(sh - 1);
    let fx = sx - x0 as f64;
    let fy = sy - y0 as f64;
    let v00 = src[y0 * sw + x0] as f64;
    let v01 = src[y0 * sw + x1] as f64;
    let v10 = src[y1 * sw + x0] as f64;
    let v11 = src[y1 * sw + x1] as f64;
    let top = v00 + (v01 - v00) * fx;
    let bot = v10 + (v11 - v10) * fx;
    (top + (bot - top) * fy) as f32
}

/// Resamples a row-major f32 plane from (sw, sh) to (dw, dh) bilinearly.
pub(crate) fn bilinear_plane(src: &[f32], sw: usize, sh: usize, dw: usize, dh: usize) -> Vec<f32> {
    debug_assert_eq!(src.len(), sw * sh);
    let mut out = Vec::with_capacity(dw * dh);
    let x_scale = sw as f64 / dw as f64;
    let y_scale = sh as f64 / dh as f64;
    for y in 0..dh {
        let sy = (y as f64 + 0.5) * y_scale - 0.5;
        for x in 0..dw {
            let sx = (x as f64 + 0.5) * x_scale - 0.5;
            out.push(bilinear_at(src, sw, sh, sx, sy));
        }
    }
    out
}

/// Source index for nearest-neighbor scaling by an integer factor: the source
/// pixel containing the target pixel center. Equals integer division.
#[inline]
pub(crate) fn nearest_src(target: u32, factor: u32) -> u32 {
    target / factor
}
