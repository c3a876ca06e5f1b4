//! Overlapping-glyph two-task classification images.
//!
//! Each example superimposes two glyphs from a fixed 10-glyph alphabet onto
//! one raster: one glyph anchored at the left edge, the other offset to the
//! right by `glyph_width * (1 - overlap)`. The two tasks predict the left
//! and right glyph classes. Glyphs are procedurally rendered 5x7 bitmaps at
//! 2x scale with per-example intensity and vertical jitter plus light pixel
//! noise, so examples of one class differ while staying easily separable.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datasets::{quantize_f32, split_pool, Dataset, DatasetSpec, TaskKind};
use crate::error::{Error, Result};
use crate::net::TaskLabels;

const GLYPH_ROWS: usize = 7;
const GLYPH_COLS: usize = 5;
const SCALE: usize = 2;

/// Digit-shaped 5x7 bitmaps, one per class.
const GLYPHS: [[&str; GLYPH_ROWS]; 10] = [
    [" ### ", "#   #", "#  ##", "# # #", "##  #", "#   #", " ### "],
    ["  #  ", " ##  ", "  #  ", "  #  ", "  #  ", "  #  ", " ### "],
    [" ### ", "#   #", "    #", "   # ", "  #  ", " #   ", "#####"],
    [" ### ", "#   #", "    #", "  ## ", "    #", "#   #", " ### "],
    ["   # ", "  ## ", " # # ", "#  # ", "#####", "   # ", "   # "],
    ["#####", "#    ", "#### ", "    #", "    #", "#   #", " ### "],
    [" ### ", "#    ", "#    ", "#### ", "#   #", "#   #", " ### "],
    ["#####", "    #", "   # ", "  #  ", " #   ", " #   ", " #   "],
    [" ### ", "#   #", "#   #", " ### ", "#   #", "#   #", " ### "],
    [" ### ", "#   #", "#   #", " ####", "    #", "    #", " ### "],
];

struct Geometry {
    height: usize,
    width: usize,
    right_offset: usize,
    y_base: usize,
}

fn geometry(raster: [usize; 2], overlap: f64) -> Result<Geometry> {
    if !(0.0..=0.9).contains(&overlap) {
        return Err(Error::Config(format!("overlap must lie in [0, 0.9], got {overlap}")));
    }
    let [height, width] = raster;
    let glyph_h = GLYPH_ROWS * SCALE;
    let glyph_w = GLYPH_COLS * SCALE;
    let right_offset = ((glyph_w as f64) * (1.0 - overlap)).round() as usize;
    // One pixel of vertical jitter both ways.
    if height < glyph_h + 2 {
        return Err(Error::Config(format!(
            "raster height {height} too small: glyphs need {}",
            glyph_h + 2
        )));
    }
    if width < right_offset + glyph_w {
        return Err(Error::Config(format!(
            "raster width {width} too small for offset: need {}",
            right_offset + glyph_w
        )));
    }
    Ok(Geometry { height, width, right_offset, y_base: (height - glyph_h) / 2 })
}

fn stamp(
    pixels: &mut [f64],
    geo: &Geometry,
    class: u16,
    x0: usize,
    y0: usize,
    intensity: f64,
) {
    let bitmap = &GLYPHS[class as usize];
    for (gy, row) in bitmap.iter().enumerate() {
        for (gx, cell) in row.chars().enumerate() {
            if cell != '#' {
                continue;
            }
            for sy in 0..SCALE {
                for sx in 0..SCALE {
                    let y = y0 + gy * SCALE + sy;
                    let x = x0 + gx * SCALE + sx;
                    let p = &mut pixels[y * geo.width + x];
                    *p = (*p + intensity).min(1.0);
                }
            }
        }
    }
}

pub fn generate(spec: &DatasetSpec) -> Result<Dataset> {
    let DatasetSpec::OverlapGlyph { train, valid, test, seed, overlap, raster } = spec else {
        return Err(Error::Config("not an overlap-glyph spec".into()));
    };
    let geo = geometry(*raster, *overlap)?;
    let total = train + valid + test;
    if *train == 0 {
        return Err(Error::Config("train split must be non-empty".into()));
    }
    let input_dim = geo.height * geo.width;
    let mut rng = ChaCha8Rng::seed_from_u64(*seed);
    let mut features = Vec::with_capacity(total * input_dim);
    let mut left = Vec::with_capacity(total);
    let mut right = Vec::with_capacity(total);
    for _ in 0..total {
        let left_class = rng.gen_range(0..10u16);
        let right_class = rng.gen_range(0..10u16);
        let jitter_left = rng.gen_range(-1i64..=1) as i64;
        let jitter_right = rng.gen_range(-1i64..=1) as i64;
        let intensity_left = rng.gen_range(0.75..1.0);
        let intensity_right = rng.gen_range(0.75..1.0);
        let mut pixels = vec![0.0f64; input_dim];
        for p in pixels.iter_mut() {
            *p = rng.gen_range(0.0..0.05);
        }
        let y_left = (geo.y_base as i64 + jitter_left) as usize;
        let y_right = (geo.y_base as i64 + jitter_right) as usize;
        stamp(&mut pixels, &geo, left_class, 0, y_left, intensity_left);
        stamp(&mut pixels, &geo, right_class, geo.right_offset, y_right, intensity_right);
        features.extend_from_slice(&pixels);
        left.push(left_class);
        right.push(right_class);
    }
    quantize_f32(&mut features);
    let task_kinds = vec![
        TaskKind::Classification { classes: 10 },
        TaskKind::Classification { classes: 10 },
    ];
    let labels = vec![TaskLabels::Class(left), TaskLabels::Class(right)];
    Ok(split_pool(spec, input_dim, task_kinds, features, labels, [*train, *valid, *test]))
}
