//! Minimal self-contained raster output: PPM (P6) line plots for sweeps
//! and PGM (P5) grayscale images for saliency maps. No plotting or image
//! dependencies; everything is drawn pixel by pixel.

use std::path::Path;

use crate::{artifacts::write_atomic, CliError};

// ── Canvas ──────────────────────────────────────────────────────────────

pub const WHITE: [u8; 3] = [255, 255, 255];
pub const BLACK: [u8; 3] = [16, 16, 16];
pub const GRID: [u8; 3] = [224, 224, 224];

/// Default series palette (blue, red, green, orange, purple).
pub const PALETTE: [[u8; 3]; 5] =
    [[31, 119, 180], [214, 39, 40], [44, 160, 44], [255, 127, 14], [148, 103, 189]];

/// RGB raster with (0,0) at the top-left.
pub struct Canvas {
    pub width: usize,
    pub height: usize,
    px: Vec<u8>,
}

impl Canvas {
    pub fn new(width: usize, height: usize) -> Self {
        Canvas { width, height, px: vec![255; width * height * 3] }
    }

    pub fn set(&mut self, x: i64, y: i64, color: [u8; 3]) {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            return;
        }
        let at = (y as usize * self.width + x as usize) * 3;
        self.px[at..at + 3].copy_from_slice(&color);
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let at = (y * self.width + x) * 3;
        [self.px[at], self.px[at + 1], self.px[at + 2]]
    }

    /// Bresenham segment; `dashed` skips every other 3-pixel run.
    pub fn line(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, color: [u8; 3], dashed: bool) {
        let dx = (x1 - x0).abs();
        let dy = -(y1 - y0).abs();
        let sx = if x0 < x1 { 1 } else { -1 };
        let sy = if y0 < y1 { 1 } else { -1 };
        let (mut x, mut y) = (x0, y0);
        let mut err = dx + dy;
        let mut step = 0i64;
        loop {
            if !dashed || (step / 3) % 2 == 0 {
                self.set(x, y, color);
            }
            step += 1;
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    /// 3x3 marker centered on the point.
    pub fn blot(&mut self, x: i64, y: i64, color: [u8; 3]) {
        for dy in -1..=1 {
            for dx in -1..=1 {
                self.set(x + dx, y + dy, color);
            }
        }
    }

    pub fn fill_rect(&mut self, x: i64, y: i64, w: i64, h: i64, color: [u8; 3]) {
        for yy in y..y + h {
            for xx in x..x + w {
                self.set(xx, yy, color);
            }
        }
    }

    pub fn save_ppm(&self, path: &Path) -> Result<(), CliError> {
        let mut bytes = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        bytes.extend_from_slice(&self.px);
        write_atomic(path, &bytes)
    }
}

// ── Tiny digit font ─────────────────────────────────────────────────────

// 3x5 glyphs for the characters a numeric axis label can contain, one row
// per bit triple (most significant bit = left column).
const GLYPHS: &[(char, [u8; 5])] = &[
    ('0', [0b111, 0b101, 0b101, 0b101, 0b111]),
    ('1', [0b010, 0b110, 0b010, 0b010, 0b111]),
    ('2', [0b111, 0b001, 0b111, 0b100, 0b111]),
    ('3', [0b111, 0b001, 0b111, 0b001, 0b111]),
    ('4', [0b101, 0b101, 0b111, 0b001, 0b001]),
    ('5', [0b111, 0b100, 0b111, 0b001, 0b111]),
    ('6', [0b111, 0b100, 0b111, 0b101, 0b111]),
    ('7', [0b111, 0b001, 0b010, 0b010, 0b010]),
    ('8', [0b111, 0b101, 0b111, 0b101, 0b111]),
    ('9', [0b111, 0b101, 0b111, 0b001, 0b111]),
    ('.', [0b000, 0b000, 0b000, 0b000, 0b010]),
    ('-', [0b000, 0b000, 0b111, 0b000, 0b000]),
];

/// Draws `text` at (x, y); unknown characters advance the pen silently.
pub fn draw_text(canvas: &mut Canvas, x: i64, y: i64, text: &str, color: [u8; 3]) {
    let mut pen = x;
    for ch in text.chars() {
        if let Some((_, rows)) = GLYPHS.iter().find(|(g, _)| *g == ch) {
            for (ry, bits) in rows.iter().enumerate() {
                for rx in 0..3 {
                    if bits >> (2 - rx) & 1 == 1 {
                        canvas.set(pen + rx as i64, y + ry as i64, color);
                    }
                }
            }
        }
        pen += 4;
    }
}

// ── Line plots ──────────────────────────────────────────────────────────

/// One polyline over the shared x grid.
pub struct Series {
    pub label: String,
    pub color: [u8; 3],
    pub values: Vec<f64>,
    pub dashed: bool,
}

/// Renders success-rate series (y clamped to [0, 1]) over categorical x
/// positions. Numeric x labels are printed under their ticks; word labels
/// fall back to the 1-based position index, with the mapping left to the
/// accompanying table.
pub fn render_line_plot(
    path: &Path,
    x_labels: &[String],
    series: &[Series],
) -> Result<(), CliError> {
    if x_labels.is_empty() || series.is_empty() {
        return Err(CliError::Invalid("plot needs at least one point and one series".into()));
    }
    let (width, height) = (640usize, 420usize);
    let (left, right, top, bottom) = (52i64, 16i64, 16i64, 34i64);
    let mut c = Canvas::new(width, height);
    let x0 = left;
    let x1 = width as i64 - right;
    let y0 = height as i64 - bottom;
    let y1 = top;

    let x_at = |i: usize| -> i64 {
        if x_labels.len() == 1 {
            return (x0 + x1) / 2;
        }
        x0 + ((x1 - x0) * i as i64) / (x_labels.len() as i64 - 1)
    };
    let y_at = |v: f64| -> i64 {
        let v = v.clamp(0.0, 1.0);
        y0 - ((y0 - y1) as f64 * v).round() as i64
    };

    // Grid and y ticks at 0, 0.25, …, 1.
    for q in 0..=4 {
        let v = q as f64 / 4.0;
        let y = y_at(v);
        c.line(x0, y, x1, y, GRID, false);
        draw_text(&mut c, 8, y - 2, &format!("{v}"), BLACK);
    }
    // X ticks.
    for (i, label) in x_labels.iter().enumerate() {
        let x = x_at(i);
        c.line(x, y0, x, y0 + 4, BLACK, false);
        let text = if label.parse::<f64>().is_ok() {
            label.clone()
        } else {
            format!("{}", i + 1)
        };
        let w = 4 * text.chars().count() as i64;
        draw_text(&mut c, x - w / 2, y0 + 8, &text, BLACK);
    }
    // Axes above the grid.
    c.line(x0, y0, x1, y0, BLACK, false);
    c.line(x0, y0, x0, y1, BLACK, false);

    // Series.
    for s in series {
        let m = s.values.len().min(x_labels.len());
        for i in 0..m {
            let (px, py) = (x_at(i), y_at(s.values[i]));
            if i + 1 < m {
                c.line(px, py, x_at(i + 1), y_at(s.values[i + 1]), s.color, s.dashed);
            }
            if !s.dashed {
                c.blot(px, py, s.color);
            }
        }
    }
    // Legend swatches, top-right, numbered in series order.
    for (si, s) in series.iter().enumerate() {
        let y = y1 + 6 + 12 * si as i64;
        c.fill_rect(x1 - 40, y, 10, 6, s.color);
        draw_text(&mut c, x1 - 26, y, &format!("{}", si + 1), BLACK);
    }
    c.save_ppm(path)
}

// ── Grayscale output ────────────────────────────────────────────────────

/// Binary PGM (P5), one byte per pixel.
pub fn save_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<(), CliError> {
    if pixels.len() != width * height {
        return Err(CliError::Invalid(format!(
            "pgm: {} pixels do not fill {width}x{height}",
            pixels.len()
        )));
    }
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend_from_slice(pixels);
    write_atomic(path, &bytes)
}

/// Maps unit-interval values to 8-bit gray.
pub fn to_gray(values: &[f32]) -> Vec<u8> {
    values.iter().map(|&v| (f64::from(v).clamp(0.0, 1.0) * 255.0).round() as u8).collect()
}

/// Nearest-neighbor upsample of a `sh x sw` plane to `dh x dw`.
pub fn upsample_nearest(src: &[u8], sw: usize, sh: usize, dw: usize, dh: usize) -> Vec<u8> {
    let mut out = vec![0u8; dw * dh];
    for y in 0..dh {
        let sy = y * sh / dh;
        for x in 0..dw {
            let sx = x * sw / dw;
            out[y * dw + x] = src[sy * sw + sx];
        }
    }
    out
}

// ── Tests ───────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_header_and_size_are_correct() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ppm");
        let labels = vec!["0".to_string(), "0.5".to_string(), "1".to_string()];
        let series = vec![Series {
            label: "a".into(),
            color: PALETTE[0],
            values: vec![0.1, 0.9, 0.5],
            dashed: false,
        }];
        render_line_plot(&path, &labels, &series).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P6\n640 420\n255\n"));
        assert_eq!(bytes.len(), 15 + 640 * 420 * 3);
    }

    #[test]
    fn plot_paints_each_series_color() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ppm");
        let labels: Vec<String> = (0..4).map(|i| i.to_string()).collect();
        let series = vec![
            Series {
                label: "solid".into(),
                color: PALETTE[0],
                values: vec![0.2, 0.4, 0.6, 0.8],
                dashed: false,
            },
            Series {
                label: "dash".into(),
                color: PALETTE[1],
                values: vec![0.5; 4],
                dashed: true,
            },
        ];
        render_line_plot(&path, &labels, &series).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let body = &bytes[15..];
        for color in [PALETTE[0], PALETTE[1]] {
            let found = body.chunks(3).any(|p| p == color);
            assert!(found, "series color {color:?} not painted");
        }
    }

    #[test]
    fn line_is_connected_and_clipped() {
        let mut c = Canvas::new(10, 10);
        c.line(-5, 2, 14, 2, BLACK, false);
        for x in 0..10 {
            assert_eq!(c.get(x, 2), BLACK);
        }
        c.line(3, -3, 3, 12, BLACK, false);
        for y in 0..10 {
            assert_eq!(c.get(3, y), BLACK);
        }
    }

    #[test]
    fn digits_render_within_their_cell() {
        let mut c = Canvas::new(60, 10);
        draw_text(&mut c, 1, 2, "0123456789.-", BLACK);
        let dark = (0..60).flat_map(|x| (0..10).map(move |y| (x, y)))
            .filter(|&(x, y)| c.get(x, y) == BLACK)
            .count();
        assert!(dark > 40, "font painted {dark} pixels");
    }

    #[test]
    fn pgm_round_trip_and_upsample() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pgm");
        let src = vec![0u8, 255, 128, 64];
        let up = upsample_nearest(&src, 2, 2, 4, 4);
        assert_eq!(up.len(), 16);
        assert_eq!(up[0], 0);
        assert_eq!(up[3], 255);
        assert_eq!(up[15], 64);
        assert_eq!(up[5], 0, "nearest neighbor keeps blocks");
        save_pgm(&path, 4, 4, &up).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P5\n4 4\n255\n"));
        assert_eq!(&bytes[bytes.len() - 16..], up.as_slice());
        assert!(save_pgm(&path, 3, 3, &up).is_err());
    }

    #[test]
    fn gray_mapping_clamps() {
        assert_eq!(to_gray(&[0.0, 1.0, 0.5, -1.0, 2.0]), vec![0, 255, 128, 0, 255]);
    }
}
