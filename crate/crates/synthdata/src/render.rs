//! Procedural backgrounds and part glyphs.

use rand::Rng;

/// Distinct shapes a part slot can hold.
pub const GLYPH_KINDS: usize = 4;
/// Slots per object, arranged 2×2.
pub const PARTS: usize = 4;
/// Number of distinct part compositions, and so the most classes or identities.
pub const GLYPH_COMBINATIONS: usize = 256;

const NOISE: f64 = 0.03;
const STRIPE: usize = 2;

/// The four glyph kinds in slot order for class `k`.
pub fn class_glyphs(k: usize) -> [usize; PARTS] {
    digits((k * 157 + 11) % GLYPH_COMBINATIONS)
}

/// The four glyph kinds in slot order for identity `i`.
pub fn identity_glyphs(i: usize) -> [usize; PARTS] {
    digits((i * 73 + 201) % GLYPH_COMBINATIONS)
}

fn digits(code: usize) -> [usize; PARTS] {
    let mut out = [0; PARTS];
    for (j, d) in out.iter_mut().enumerate() {
        *d = (code >> (2 * j)) % GLYPH_KINDS;
    }
    out
}

/// HSV to RGB with all components in `[0, 1]`.
pub fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let sector = h6.floor() as usize % 6;
    let f = h6 - h6.floor();
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match sector {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Ink color giving identity `i` its own tint.
pub fn identity_ink(i: usize) -> [f64; 3] {
    hsv(i as f64 * 0.381_966, 0.9, 0.4)
}

/// Whether cell `(r, c)` of a `g×g` glyph of `kind` is inked.
pub fn glyph_cell(kind: usize, g: usize, r: usize, c: usize) -> bool {
    let last = g - 1;
    match kind {
        0 => true,
        1 => (2 * r).abs_diff(last) <= 1 || (2 * c).abs_diff(last) <= 1,
        2 => r == 0 || c == 0 || r == last || c == last,
        _ => r == c || r + c == last,
    }
}

pub(crate) struct Canvas {
    pub size: usize,
    pub data: Vec<f64>,
}

impl Canvas {
    pub fn new(size: usize) -> Self {
        Self {
            size,
            data: vec![0.0; 3 * size * size],
        }
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let plane = self.size * self.size;
        for (ch, v) in rgb.iter().enumerate() {
            self.data[ch * plane + y * self.size + x] = *v;
        }
    }

    /// Fills the canvas with texture `t` out of `count`, shifted by `phase`.
    pub fn texture(&mut self, t: usize, count: usize, phase: (usize, usize)) {
        let base = hsv(t as f64 / count as f64, 0.85, 0.95);
        let dark = base.map(|v| 0.55 * v);
        let pattern = t % 4;
        for y in 0..self.size {
            for x in 0..self.size {
                let (px, py) = ((x + phase.0) / STRIPE, (y + phase.1) / STRIPE);
                let on = match pattern {
                    0 => py % 2 == 0,
                    1 => px % 2 == 0,
                    2 => ((x + y + phase.0) / STRIPE) % 2 == 0,
                    _ => (px + py) % 2 == 0,
                };
                self.set(x, y, if on { base } else { dark });
            }
        }
    }

    /// Draws the plate and its 2×2 glyph slots with top-left corner `(x0, y0)`.
    /// Returns the slot centers.
    pub fn object(
        &mut self,
        x0: usize,
        y0: usize,
        side: usize,
        plate: f64,
        ink: [f64; 3],
        glyphs: [usize; PARTS],
    ) -> Vec<(f64, f64)> {
        for y in y0..y0 + side {
            for x in x0..x0 + side {
                self.set(x, y, [plate; 3]);
            }
        }
        let slot = side / 2;
        let g = slot - 2;
        let mut centers = Vec::with_capacity(PARTS);
        for (j, &kind) in glyphs.iter().enumerate() {
            let (sx, sy) = (x0 + (j % 2) * slot, y0 + (j / 2) * slot);
            for r in 0..g {
                for c in 0..g {
                    if glyph_cell(kind, g, r, c) {
                        self.set(sx + 1 + c, sy + 1 + r, ink);
                    }
                }
            }
            centers.push((
                (sx as f64) + slot as f64 / 2.0,
                (sy as f64) + slot as f64 / 2.0,
            ));
        }
        centers
    }

    pub fn add_noise<R: Rng>(&mut self, rng: &mut R) {
        for v in &mut self.data {
            *v = (*v + rng.gen_range(-NOISE..NOISE)).clamp(0.0, 1.0);
        }
    }
}
