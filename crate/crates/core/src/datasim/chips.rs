//! Synthetic SAR chip generation.

use std::io::Write;

use rand::Rng;
use serde::Serialize;

use crate::error::{Result, SimError};
use crate::numerics::{sample_speckle, Grid2D, RngStream};

/// Intensity ceiling applied after speckle multiplication. Unbounded Gamma
/// tails otherwise produce rare extreme pixels that destabilize tiny models;
/// the same clip is applied everywhere chips are constructed or perturbed.
pub const I_MAX: f64 = 4.0;

const BACKGROUND: f64 = 0.05 * I_MAX;
const JITTER: i64 = 2;

/// A single-channel intensity chip with its class label.
#[derive(Debug, Clone)]
pub struct SarChip {
    pub grid: Grid2D,
    pub label: usize,
}

fn paint_rect(grid: &mut Grid2D, cy: f64, cx: f64, half_h: f64, half_w: f64, intensity: f64) {
    let (h, w) = (grid.height() as i64, grid.width() as i64);
    let y0 = (cy - half_h).round() as i64;
    let y1 = (cy + half_h).round() as i64;
    let x0 = (cx - half_w).round() as i64;
    let x1 = (cx + half_w).round() as i64;
    for y in y0.max(0)..=y1.min(h - 1) {
        for x in x0.max(0)..=x1.min(w - 1) {
            grid.set(y as usize, x as usize, intensity);
        }
    }
}

fn paint_ellipse(grid: &mut Grid2D, cy: f64, cx: f64, ry: f64, rx: f64, intensity: f64) {
    let (h, w) = (grid.height() as i64, grid.width() as i64);
    let y0 = (cy - ry).floor() as i64;
    let y1 = (cy + ry).ceil() as i64;
    let x0 = (cx - rx).floor() as i64;
    let x1 = (cx + rx).ceil() as i64;
    for y in y0.max(0)..=y1.min(h - 1) {
        for x in x0.max(0)..=x1.min(w - 1) {
            let dy = (y as f64 - cy) / ry;
            let dx = (x as f64 - cx) / rx;
            if dy * dy + dx * dx <= 1.0 {
                grid.set(y as usize, x as usize, intensity);
            }
        }
    }
}

/// Clean class template translated by `(dy, dx)`.
///
/// Classes are arrangements of bright rectangles and ellipses chosen to
/// differ in pooled texture statistics (lit area, edge density, stripe
/// orientation, blob granularity) rather than absolute position, so both a
/// pixel-space linear model and a pooled convolutional model can separate
/// them. Class indices beyond the base patterns reuse them at reduced
/// brightness.
fn paint_template(class: usize, _classes: usize, size: usize, dy: i64, dx: i64) -> Grid2D {
    let mut grid = Grid2D::constant(size, size, BACKGROUND);
    let s = size as f64;
    let c = s / 2.0;
    let bright = I_MAX * (0.85 - 0.18 * (class / 10) as f64).max(0.4);
    let dim = 0.8 * bright;
    let (oy, ox) = (dy as f64, dx as f64);
    match class % 10 {
        // thick horizontal bars
        0 => {
            for k in 0..3 {
                let y = (0.22 + 0.28 * k as f64) * s + oy;
                paint_rect(&mut grid, y, c + ox, 0.055 * s, 0.38 * s, bright);
            }
        }
        // thick vertical bars
        1 => {
            for k in 0..3 {
                let x = (0.22 + 0.28 * k as f64) * s + ox;
                paint_rect(&mut grid, c + oy, x, 0.38 * s, 0.055 * s, bright);
            }
        }
        // one large filled ellipse
        2 => {
            paint_ellipse(&mut grid, c + oy, c + ox, 0.36 * s, 0.30 * s, bright);
        }
        // hollow ring
        3 => {
            paint_ellipse(&mut grid, c + oy, c + ox, 0.38 * s, 0.38 * s, bright);
            paint_ellipse(&mut grid, c + oy, c + ox, 0.22 * s, 0.22 * s, BACKGROUND);
        }
        // checker of small squares
        4 => {
            for r in 0..4 {
                for q in 0..4 {
                    if (r + q) % 2 == 0 {
                        let y = (0.17 + 0.22 * r as f64) * s + oy;
                        let x = (0.17 + 0.22 * q as f64) * s + ox;
                        paint_rect(&mut grid, y, x, 0.055 * s, 0.055 * s, bright);
                    }
                }
            }
        }
        // descending diagonal stripe of ellipses
        5 => {
            for k in 0..5 {
                let t = 0.15 + 0.175 * k as f64;
                paint_ellipse(&mut grid, t * s + oy, t * s + ox, 0.075 * s, 0.075 * s, bright);
            }
        }
        // ascending diagonal stripe of squares
        6 => {
            for k in 0..5 {
                let t = 0.15 + 0.175 * k as f64;
                paint_rect(
                    &mut grid,
                    (1.0 - t) * s + oy,
                    t * s + ox,
                    0.065 * s,
                    0.065 * s,
                    bright,
                );
            }
        }
        // large plus sign
        7 => {
            paint_rect(&mut grid, c + oy, c + ox, 0.40 * s, 0.09 * s, bright);
            paint_rect(&mut grid, c + oy, c + ox, 0.09 * s, 0.40 * s, bright);
        }
        // two solid side-by-side rectangles
        8 => {
            paint_rect(&mut grid, c + oy, 0.28 * s + ox, 0.30 * s, 0.11 * s, bright);
            paint_rect(&mut grid, c + oy, 0.72 * s + ox, 0.30 * s, 0.11 * s, dim);
        }
        // sparse grid of dots
        _ => {
            for r in 0..3 {
                for q in 0..3 {
                    let y = (0.2 + 0.3 * r as f64) * s + oy;
                    let x = (0.2 + 0.3 * q as f64) * s + ox;
                    paint_ellipse(&mut grid, y, x, 0.05 * s, 0.05 * s, bright);
                }
            }
        }
    }
    grid
}

/// Pose-jittered clean template drawn with the next jitter from `rng`.
/// Consumes exactly the jitter draws that `generate_chip` would, so a clone
/// of the stream reproduces the template underlying a generated chip.
pub fn jittered_template(class: usize, classes: usize, size: usize, rng: &mut RngStream) -> Grid2D {
    let dy = rng.gen_range(-JITTER..=JITTER);
    let dx = rng.gen_range(-JITTER..=JITTER);
    paint_template(class, classes, size, dy, dx)
}

/// Generates one chip: jittered class template multiplied pixelwise by a
/// speckle field with `looks` equivalent looks, clipped to `[0, I_MAX]`.
pub fn generate_chip(
    class: usize,
    classes: usize,
    size: usize,
    looks: f64,
    rng: &mut RngStream,
) -> Result<SarChip> {
    if class >= classes {
        return Err(SimError::Config(format!(
            "class {class} out of range for {classes} classes"
        )));
    }
    let template = jittered_template(class, classes, size, rng);
    let speckle = sample_speckle(size, size, looks, rng)?;
    let mut grid = template.hadamard(&speckle);
    grid.clip(0.0, I_MAX);
    Ok(SarChip { grid, label: class })
}

/// Builds the server's probe set: `size` chips with classes assigned
/// round-robin, generated from a stream reserved for the server so probe
/// chips are disjoint from every client shard.
pub fn build_probe_set(
    size: usize,
    classes: usize,
    chip_size: usize,
    looks: f64,
    rng: &mut RngStream,
) -> Result<Vec<SarChip>> {
    if size < classes {
        return Err(SimError::Config(format!(
            "probe size {size} must be at least the class count {classes}"
        )));
    }
    (0..size)
        .map(|i| generate_chip(i % classes, classes, chip_size, looks, rng))
        .collect()
}

#[derive(Serialize)]
struct ChipRecord<'a> {
    label: usize,
    height: usize,
    width: usize,
    values: &'a [f64],
}

/// Writes one JSON record per chip (label, height, width, row-major
/// intensities), line-delimited.
pub fn export_dataset<W: Write>(chips: &[SarChip], mut out: W) -> Result<()> {
    for chip in chips {
        let record = ChipRecord {
            label: chip.label,
            height: chip.grid.height(),
            width: chip.grid.width(),
            values: chip.grid.values(),
        };
        let line = serde_json::to_string(&record)
            .map_err(|e| SimError::Parse(format!("chip serialization: {e}")))?;
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::StreamId;

    #[test]
    fn high_looks_recovers_template() {
        let mut rng = RngStream::new(3, StreamId::Aux { tag: 2, index: 0 });
        let mut template_rng = rng.clone();
        let chip = generate_chip(4, 10, 32, 1e6, &mut rng).unwrap();
        let template = jittered_template(4, 10, 32, &mut template_rng);
        for (c, t) in chip.grid.values().iter().zip(template.values()) {
            assert!((c - t).abs() / t < 0.01, "chip {c} vs template {t}");
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let mut a = RngStream::new(8, StreamId::Aux { tag: 2, index: 1 });
        let mut b = RngStream::new(8, StreamId::Aux { tag: 2, index: 1 });
        let x = generate_chip(1, 10, 32, 3.0, &mut a).unwrap();
        let y = generate_chip(1, 10, 32, 3.0, &mut b).unwrap();
        assert_eq!(x.grid.values(), y.grid.values());
    }

    #[test]
    fn chips_satisfy_invariants() {
        let mut rng = RngStream::new(5, StreamId::Aux { tag: 2, index: 2 });
        for class in 0..10 {
            let chip = generate_chip(class, 10, 32, 1.0, &mut rng).unwrap();
            assert_eq!(chip.label, class);
            assert!(chip
                .grid
                .values()
                .iter()
                .all(|v| v.is_finite() && *v >= 0.0 && *v <= I_MAX));
            assert_eq!(chip.grid.height() % 8, 0);
        }
    }

    #[test]
    fn probe_set_round_robin() {
        let mut rng = RngStream::new(5, StreamId::Probe);
        let probe = build_probe_set(20, 10, 32, 3.0, &mut rng).unwrap();
        for class in 0..10 {
            assert_eq!(probe.iter().filter(|c| c.label == class).count(), 2);
        }
    }

    #[test]
    fn probe_smaller_than_classes_rejected() {
        let mut rng = RngStream::new(5, StreamId::Probe);
        assert!(build_probe_set(5, 10, 32, 3.0, &mut rng).is_err());
    }

    #[test]
    fn export_emits_one_line_per_chip() {
        let mut rng = RngStream::new(5, StreamId::Aux { tag: 2, index: 3 });
        let chips: Vec<SarChip> = (0..3)
            .map(|c| generate_chip(c, 10, 16, 3.0, &mut rng).unwrap())
            .collect();
        let mut buf = Vec::new();
        export_dataset(&chips, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first["label"], 0);
        assert_eq!(first["height"], 16);
        assert_eq!(first["values"].as_array().unwrap().len(), 256);
    }
}
