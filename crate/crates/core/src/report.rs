//! Heatmap rendering of similarity matrices.
//!
//! Colors map accuracy on a fixed `[0, 1]` scale so plots of different
//! pairs are comparable. Cells carry their value to two decimals; holes are
//! hatched. The PNG encoder writes no timestamps, so equal input gives
//! equal bytes.

use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, Rgb, RgbImage};

use crate::checkpoint::write_atomic;
use crate::error::{Error, Result};
use crate::experiments::{parse_matrix_csv, Grid};

const CELL: u32 = 44;
const MARGIN: u32 = 30;
const BAR_GAP: u32 = 14;
const BAR_WIDTH: u32 = 14;
const SCALE: u32 = 2;
const BACKGROUND: Rgb<u8> = Rgb([255, 255, 255]);
const INK: Rgb<u8> = Rgb([20, 20, 20]);

/// Anchors of a viridis-like ramp at 0, 0.25, 0.5, 0.75, 1.
const RAMP: [[f64; 3]; 5] = [
    [68.0, 1.0, 84.0],
    [59.0, 82.0, 139.0],
    [33.0, 145.0, 140.0],
    [94.0, 201.0, 98.0],
    [253.0, 231.0, 37.0],
];

pub fn color_for(value: f64) -> Rgb<u8> {
    let v = value.clamp(0.0, 1.0) * (RAMP.len() - 1) as f64;
    let k = (v.floor() as usize).min(RAMP.len() - 2);
    let t = v - k as f64;
    let mix = |c: usize| (RAMP[k][c] + (RAMP[k + 1][c] - RAMP[k][c]) * t).round() as u8;
    Rgb([mix(0), mix(1), mix(2)])
}

/// 5x7 glyphs, one row per byte, low five bits used.
fn glyph(c: char) -> [u8; 7] {
    match c {
        '0' => [0x0e, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0e],
        '1' => [0x04, 0x0c, 0x04, 0x04, 0x04, 0x04, 0x0e],
        '2' => [0x0e, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1f],
        '3' => [0x1f, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0e],
        '4' => [0x02, 0x06, 0x0a, 0x12, 0x1f, 0x02, 0x02],
        '5' => [0x1f, 0x10, 0x1e, 0x01, 0x01, 0x11, 0x0e],
        '6' => [0x06, 0x08, 0x10, 0x1e, 0x11, 0x11, 0x0e],
        '7' => [0x1f, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0e, 0x11, 0x11, 0x0e, 0x11, 0x11, 0x0e],
        '9' => [0x0e, 0x11, 0x11, 0x0f, 0x01, 0x02, 0x0c],
        '.' => [0, 0, 0, 0, 0, 0x0c, 0x0c],
        'N' => [0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11],
        'A' => [0x0e, 0x11, 0x11, 0x1f, 0x11, 0x11, 0x11],
        _ => [0; 7],
    }
}

fn text_width(s: &str) -> u32 {
    (s.chars().count() as u32 * 6).saturating_sub(1) * SCALE
}

fn draw_text(img: &mut RgbImage, s: &str, x0: u32, y0: u32, color: Rgb<u8>) {
    for (n, c) in s.chars().enumerate() {
        let g = glyph(c);
        for (row, bits) in g.iter().enumerate() {
            for col in 0..5u32 {
                if bits & (0x10 >> col) == 0 {
                    continue;
                }
                for dy in 0..SCALE {
                    for dx in 0..SCALE {
                        let x = x0 + (n as u32 * 6 + col) * SCALE + dx;
                        let y = y0 + row as u32 * SCALE + dy;
                        if x < img.width() && y < img.height() {
                            img.put_pixel(x, y, color);
                        }
                    }
                }
            }
        }
    }
}

fn draw_centered(img: &mut RgbImage, s: &str, cx: u32, cy: u32, color: Rgb<u8>) {
    let x = cx.saturating_sub(text_width(s) / 2);
    let y = cy.saturating_sub(7 * SCALE / 2);
    draw_text(img, s, x, y, color);
}

fn fill(img: &mut RgbImage, x0: u32, y0: u32, w: u32, h: u32, f: impl Fn(u32, u32) -> Rgb<u8>) {
    for y in y0..y0 + h {
        for x in x0..x0 + w {
            img.put_pixel(x, y, f(x - x0, y - y0));
        }
    }
}

/// Rows are sender indices (top to bottom), columns receiver indices.
pub fn render_heatmap(grid: &Grid) -> Result<RgbImage> {
    let rows = grid.len() as u32;
    let cols = grid.first().map_or(0, Vec::len) as u32;
    if rows == 0 || cols == 0 || grid.iter().any(|r| r.len() as u32 != cols) {
        return Err(Error::Argument(
            "heatmap needs a non-empty rectangular grid".into(),
        ));
    }
    let width = MARGIN + cols * CELL + BAR_GAP + BAR_WIDTH + MARGIN;
    let height = MARGIN + rows * CELL + MARGIN / 2;
    let mut img = RgbImage::from_pixel(width, height, BACKGROUND);
    for (i, row) in grid.iter().enumerate() {
        let y0 = MARGIN + i as u32 * CELL;
        draw_centered(&mut img, &i.to_string(), MARGIN / 2, y0 + CELL / 2, INK);
        for (j, v) in row.iter().enumerate() {
            let x0 = MARGIN + j as u32 * CELL;
            match v {
                Some(a) => {
                    let c = color_for(*a);
                    fill(&mut img, x0, y0, CELL, CELL, |_, _| c);
                    let ink = if *a < 0.6 { Rgb([255, 255, 255]) } else { INK };
                    draw_centered(
                        &mut img,
                        &format!("{a:.2}"),
                        x0 + CELL / 2,
                        y0 + CELL / 2,
                        ink,
                    );
                }
                None => {
                    fill(&mut img, x0, y0, CELL, CELL, |x, y| {
                        if (x + y) % 8 < 2 {
                            Rgb([110, 110, 110])
                        } else {
                            Rgb([225, 225, 225])
                        }
                    });
                    draw_centered(&mut img, "NA", x0 + CELL / 2, y0 + CELL / 2, INK);
                }
            }
        }
    }
    for j in 0..cols {
        draw_centered(
            &mut img,
            &j.to_string(),
            MARGIN + j * CELL + CELL / 2,
            MARGIN / 2,
            INK,
        );
    }
    // Color bar, 1 at the top.
    let bar_x = MARGIN + cols * CELL + BAR_GAP;
    let bar_h = rows * CELL;
    fill(&mut img, bar_x, MARGIN, BAR_WIDTH, bar_h, |_, y| {
        color_for(1.0 - y as f64 / (bar_h - 1).max(1) as f64)
    });
    draw_centered(&mut img, "1", bar_x + BAR_WIDTH / 2, MARGIN / 2, INK);
    draw_centered(
        &mut img,
        "0",
        bar_x + BAR_WIDTH / 2 + BAR_WIDTH,
        MARGIN + bar_h - 4,
        INK,
    );
    Ok(img)
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    img.write_to(&mut Cursor::new(&mut bytes), ImageFormat::Png)?;
    Ok(bytes)
}

/// Reads a matrix CSV and writes its heatmap PNG.
pub fn plot_matrix_csv(csv_path: &Path, out: &Path) -> Result<()> {
    let text = std::fs::read_to_string(csv_path).map_err(crate::error::Error::io(format!(
        "reading {}",
        csv_path.display()
    )))?;
    let grid = parse_matrix_csv(&text, &csv_path.display().to_string())?;
    write_atomic(out, &encode_png(&render_heatmap(&grid)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramp_endpoints_and_clamping() {
        assert_eq!(color_for(0.0), Rgb([68, 1, 84]));
        assert_eq!(color_for(1.0), Rgb([253, 231, 37]));
        assert_eq!(color_for(2.0), color_for(1.0));
        assert_eq!(color_for(-1.0), color_for(0.0));
    }

    #[test]
    fn heatmap_is_deterministic_and_hatches_holes() {
        let grid = vec![vec![Some(0.9), None], vec![Some(0.1), Some(0.5)]];
        let a = encode_png(&render_heatmap(&grid).unwrap()).unwrap();
        let b = encode_png(&render_heatmap(&grid).unwrap()).unwrap();
        assert_eq!(a, b);
        let img = render_heatmap(&grid).unwrap();
        // Top-left pixel of the hole cell is on a hatch line.
        assert_eq!(*img.get_pixel(MARGIN + CELL, MARGIN), Rgb([110, 110, 110]));
        assert_eq!(*img.get_pixel(MARGIN + 1, MARGIN + 1), color_for(0.9));
        assert!(render_heatmap(&vec![]).is_err());
    }

    #[test]
    fn plot_from_csv() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("m.csv");
        std::fs::write(&csv, "sender\\receiver,0,1\n0,0.5,NA\n1,0.25,1.0\n").unwrap();
        let out = dir.path().join("m.png");
        plot_matrix_csv(&csv, &out).unwrap();
        assert!(std::fs::metadata(&out).unwrap().len() > 0);
        std::fs::write(&csv, "sender\\receiver,0,1\n0,0.5,NA\n1,x,1.0\n").unwrap();
        match plot_matrix_csv(&csv, &out).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("{e}"),
        }
    }
}
