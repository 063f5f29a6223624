//! Procedural handwritten-digit corpus.
//!
//! Each digit is a set of stroke skeletons in a unit box. Every sample gets
//! its own control-point jitter, affine distortion and pen width, and is
//! rasterized with an anti-aliased distance-to-stroke profile into a 28×28
//! greyscale image with the MNIST framing (glyph inside a central 20×20 box).

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng as _;

use super::idx::{write_idx_images, write_idx_labels};
use super::{IMAGE_PIXELS, IMAGE_SIDE};
use crate::error::Result;
use crate::seed;

type Stroke = Vec<(f64, f64)>;

fn arc(cx: f64, cy: f64, rx: f64, ry: f64, from_deg: f64, to_deg: f64, steps: usize) -> Stroke {
    (0..=steps)
        .map(|i| {
            let t = (from_deg + (to_deg - from_deg) * i as f64 / steps as f64) * PI / 180.0;
            (cx + rx * t.cos(), cy - ry * t.sin())
        })
        .collect()
}

/// Stroke skeletons in a unit box, y pointing down.
fn glyph(digit: u8) -> Vec<Stroke> {
    match digit {
        0 => vec![arc(0.5, 0.5, 0.32, 0.45, 0.0, 360.0, 24)],
        1 => vec![vec![(0.35, 0.2), (0.55, 0.05), (0.55, 0.95)]],
        2 => {
            let mut s = arc(0.5, 0.3, 0.3, 0.25, 160.0, -20.0, 10);
            s.extend([(0.2, 0.95), (0.85, 0.95)]);
            vec![s]
        }
        3 => vec![
            arc(0.48, 0.28, 0.3, 0.23, 150.0, -90.0, 12),
            arc(0.48, 0.72, 0.33, 0.23, 90.0, -150.0, 12),
        ],
        4 => vec![
            vec![(0.6, 0.05), (0.15, 0.65), (0.88, 0.65)],
            vec![(0.65, 0.35), (0.65, 0.97)],
        ],
        5 => {
            let mut s = vec![(0.8, 0.05), (0.3, 0.05), (0.25, 0.45)];
            s.extend(arc(0.48, 0.67, 0.32, 0.28, 130.0, -150.0, 12));
            vec![s]
        }
        6 => {
            let mut s = vec![(0.7, 0.05)];
            s.extend(arc(0.5, 0.7, 0.3, 0.25, 150.0, 520.0, 20));
            vec![s]
        }
        7 => vec![vec![(0.15, 0.07), (0.85, 0.07), (0.4, 0.97)]],
        8 => vec![
            arc(0.5, 0.27, 0.25, 0.22, 0.0, 360.0, 16),
            arc(0.5, 0.71, 0.3, 0.24, 0.0, 360.0, 16),
        ],
        9 => {
            let mut s = arc(0.5, 0.3, 0.28, 0.24, -10.0, 360.0, 18);
            s.extend([(0.75, 0.97)]);
            vec![s]
        }
        _ => unreachable!("digits are 0..=9"),
    }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (qx, qy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    (qx * qx + qy * qy).sqrt()
}

/// Renders one digit into 784 bytes (0 = background, 255 = ink).
pub fn render_digit(digit: u8, rng: &mut seed::Rng) -> Vec<u8> {
    let jitter = 0.035;
    let strokes: Vec<Stroke> = glyph(digit)
        .into_iter()
        .map(|s| {
            s.into_iter()
                .map(|(x, y)| {
                    (
                        x + rng.gen_range(-jitter..jitter),
                        y + rng.gen_range(-jitter..jitter),
                    )
                })
                .collect()
        })
        .collect();

    let angle: f64 = rng.gen_range(-0.25..0.25);
    let shear = rng.gen_range(-0.25..0.25);
    let sx = rng.gen_range(0.75..1.05) * 20.0;
    let sy = rng.gen_range(0.85..1.05) * 20.0;
    let (tx, ty) = (rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5));
    let pen: f64 = rng.gen_range(0.9..1.9);
    let (c, s) = (angle.cos(), angle.sin());
    let centre = IMAGE_SIDE as f64 / 2.0;
    let place = |(x, y): (f64, f64)| {
        let (u, v) = ((x - 0.5) * sx, (y - 0.5) * sy);
        let u = u + shear * v;
        (c * u - s * v + centre + tx, s * u + c * v + centre + ty)
    };
    let segments: Vec<((f64, f64), (f64, f64))> = strokes
        .iter()
        .flat_map(|st| {
            let pts: Vec<_> = st.iter().copied().map(place).collect();
            pts.windows(2).map(|w| (w[0], w[1])).collect::<Vec<_>>()
        })
        .collect();

    let mut out = vec![0u8; IMAGE_PIXELS];
    for py in 0..IMAGE_SIDE {
        for px in 0..IMAGE_SIDE {
            let p = (px as f64 + 0.5, py as f64 + 0.5);
            let d = segments
                .iter()
                .map(|&(a, b)| segment_distance(p, a, b))
                .fold(f64::INFINITY, f64::min);
            let ink = (pen - d + 0.5).clamp(0.0, 1.0);
            out[py * IMAGE_SIDE + px] = (ink * 255.0).round() as u8;
        }
    }
    out
}

/// Renders `count` digits with uniformly drawn labels.
pub fn generate(count: usize, seed: u64) -> (Vec<u8>, Vec<u8>) {
    let mut rng = seed::rng(seed::derive_seed(seed, "synth-digits", 0));
    let mut pixels = Vec::with_capacity(count * IMAGE_PIXELS);
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        let d = rng.gen_range(0..10u8);
        pixels.extend(render_digit(d, &mut rng));
        labels.push(d);
    }
    (pixels, labels)
}

/// Writes a corpus as `synth-images-idx3-ubyte` / `synth-labels-idx1-ubyte`
/// inside `dir` and returns the image file path.
pub fn write_corpus(dir: &Path, count: usize, seed: u64) -> Result<std::path::PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| crate::error::Error::io(dir, e))?;
    let (pixels, labels) = generate(count, seed);
    let images = dir.join("synth-images-idx3-ubyte");
    write_idx_images(&images, count, IMAGE_SIDE, IMAGE_SIDE, &pixels)?;
    write_idx_labels(&dir.join("synth-labels-idx1-ubyte"), &labels)?;
    Ok(images)
}
