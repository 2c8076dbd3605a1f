//! Attention heatmaps and box overlays as PPM rasters.

use cal_synthdata::{BBox, PpmImage, Result};
use cal_tensor::Tensor;

/// Color stops from zero attention (first) to the sample's peak (last).
pub const RAMP: [[u8; 3]; 5] = [
    [0, 0, 0],
    [87, 16, 110],
    [188, 55, 84],
    [249, 142, 9],
    [252, 255, 164],
];
pub const GT_COLOR: [u8; 3] = [0, 255, 0];
pub const ATTENTION_COLOR: [u8; 3] = [0, 255, 255];

/// Piecewise-linear color for `t` in `[0, 1]`; values outside are clamped.
pub fn ramp_color(t: f64) -> [u8; 3] {
    let t = if t.is_nan() { 0.0 } else { t.clamp(0.0, 1.0) };
    let pos = t * (RAMP.len() - 1) as f64;
    let i = (pos.floor() as usize).min(RAMP.len() - 2);
    let f = pos - i as f64;
    let (a, b) = (RAMP[i], RAMP[i + 1]);
    std::array::from_fn(|c| (a[c] as f64 + f * (b[c] as f64 - a[c] as f64)).round() as u8)
}

/// `h×w` map resampled to `size×size` by nearest neighbor.
pub fn upsample_nearest(map: &[f64], h: usize, w: usize, size: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(size * size);
    for y in 0..size {
        let cy = y * h / size;
        for x in 0..size {
            out.push(map[cy * w + x * w / size]);
        }
    }
    out
}

/// One map colored on [`RAMP`], with `peak` at the top of the ramp.
pub fn heatmap(map: &[f64], h: usize, w: usize, size: usize, peak: f64) -> Result<PpmImage> {
    let scale = if peak > 0.0 { 1.0 / peak } else { 0.0 };
    let pixels = upsample_nearest(map, h, w, size)
        .into_iter()
        .flat_map(|v| ramp_color(v * scale))
        .collect();
    PpmImage::new(size, size, pixels)
}

fn peak(maps: &[f64]) -> f64 {
    maps.iter().copied().fold(0.0, f64::max)
}

/// One heatmap per head of a sample's `M×h×w` maps, all on the sample's common scale.
pub fn head_heatmaps(maps: &[f64], h: usize, w: usize, size: usize) -> Result<Vec<PpmImage>> {
    let top = peak(maps);
    maps.chunks(h * w)
        .map(|m| heatmap(m, h, w, size, top))
        .collect()
}

/// One-pixel outline of a half-open box, clipped to the image.
pub fn draw_box(image: &mut PpmImage, b: &BBox, rgb: [u8; 3]) {
    let (x1, y1) = (b.x1.min(image.width), b.y1.min(image.height));
    if b.x0 >= x1 || b.y0 >= y1 {
        return;
    }
    for x in b.x0..x1 {
        image.set(x, b.y0, rgb);
        image.set(x, y1 - 1, rgb);
    }
    for y in b.y0..y1 {
        image.set(b.x0, y, rgb);
        image.set(x1 - 1, y, rgb);
    }
}

/// The image averaged with the head-maximum heatmap, outlined with the
/// ground-truth box and, when present, the attended rectangle.
pub fn overlay(
    image: &Tensor,
    maps: &[f64],
    h: usize,
    w: usize,
    gt: &BBox,
    attended: Option<&BBox>,
) -> Result<PpmImage> {
    let mut out = PpmImage::from_tensor(image)?;
    let size = out.width;
    let mut merged = vec![0.0f64; h * w];
    for head in maps.chunks(h * w) {
        for (m, &v) in merged.iter_mut().zip(head) {
            *m = m.max(v);
        }
    }
    let heat = heatmap(&merged, h, w, size, peak(&merged))?;
    for (p, q) in out.pixels.iter_mut().zip(&heat.pixels) {
        *p = ((*p as u16 + *q as u16 + 1) / 2) as u8;
    }
    draw_box(&mut out, gt, GT_COLOR);
    if let Some(b) = attended {
        draw_box(&mut out, b, ATTENTION_COLOR);
    }
    Ok(out)
}
