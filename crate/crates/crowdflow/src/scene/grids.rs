//! Lighting and density grid construction.

use super::{Bounds, GrayImage, LightingGrid, Vec2};
use crate::{Error, Result};

/// Pool per-cell brightness stats over a partition into `cell_px`-sized
/// cells. Trailing partial cells pool over their actual pixels. Values are
/// scaled from `[0, 255]` to `[0, 1]`.
pub fn build_lighting_grid(image: &GrayImage, cell_px: usize) -> Result<LightingGrid> {
    if cell_px == 0 {
        return Err(Error::invalid("cell_px must be at least 1"));
    }
    let cols = image.width.div_ceil(cell_px);
    let rows = image.height.div_ceil(cell_px);
    pool(image, cols, rows, cell_px, cell_px, cell_px)
}

/// Pool over an explicit `cols x rows` partition (grid-dimension override).
/// Cell sizes are the ceiling division of the image dimensions.
pub fn build_lighting_grid_with_dims(
    image: &GrayImage,
    cols: usize,
    rows: usize,
) -> Result<LightingGrid> {
    if cols == 0 || rows == 0 {
        return Err(Error::invalid("grid dims must be at least 1x1"));
    }
    let cell_w = image.width.div_ceil(cols);
    let cell_h = image.height.div_ceil(rows);
    pool(image, cols, rows, cell_w, cell_h, cell_w.max(cell_h))
}

fn pool(
    image: &GrayImage,
    cols: usize,
    rows: usize,
    cell_w: usize,
    cell_h: usize,
    cell_px: usize,
) -> Result<LightingGrid> {
    let mut stats = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let x0 = c * cell_w;
            let y0 = r * cell_h;
            let x1 = ((c + 1) * cell_w).min(image.width);
            let y1 = ((r + 1) * cell_h).min(image.height);
            if x0 >= x1 || y0 >= y1 {
                stats.push((0.0, 0.0, 0.0));
                continue;
            }
            let mut sum = 0.0;
            let mut max = 0u8;
            let mut min = 255u8;
            for y in y0..y1 {
                for x in x0..x1 {
                    let v = image.pixel(x, y);
                    sum += v as f64;
                    max = max.max(v);
                    min = min.min(v);
                }
            }
            let count = ((x1 - x0) * (y1 - y0)) as f64;
            stats.push((sum / count / 255.0, max as f64 / 255.0, min as f64 / 255.0));
        }
    }
    Ok(LightingGrid {
        rows,
        cols,
        cell_px,
        image_width: image.width,
        image_height: image.height,
        stats,
    })
}

/// Count valid positions into a `k x k` grid over `bounds` (row-major,
/// row 0 at `bounds.min.y`). Cells are half-open except the final row and
/// column, which absorb the boundary maximum; positions outside the bounds
/// are clamped to the nearest cell and still counted.
pub fn build_density_grid(positions: &[Vec2], bounds: Bounds, k: usize) -> Result<Vec<u32>> {
    if k == 0 {
        return Err(Error::invalid("density grid needs k >= 1"));
    }
    let ext = bounds.extent();
    let mut grid = vec![0u32; k * k];
    for p in positions {
        let fx = if ext.x > 0.0 {
            (p.x - bounds.min.x) / ext.x
        } else {
            0.0
        };
        let fy = if ext.y > 0.0 {
            (p.y - bounds.min.y) / ext.y
        } else {
            0.0
        };
        let cx = ((fx * k as f64).floor() as i64).clamp(0, k as i64 - 1) as usize;
        let cy = ((fy * k as f64).floor() as i64).clamp(0, k as i64 - 1) as usize;
        grid[cy * k + cx] += 1;
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{purpose, stream};
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn uniform_image(w: usize, h: usize, v: u8) -> GrayImage {
        GrayImage::new(w, h, vec![v; w * h]).unwrap()
    }

    #[test]
    fn ceiling_rule_dimensions() {
        // 720x576 at 110 px: ceil gives 7 columns x 6 rows.
        let img = uniform_image(720, 576, 100);
        let g = build_lighting_grid(&img, 110).unwrap();
        assert_eq!((g.cols, g.rows), (7, 6));
        // Dims override for callers that need a fixed partition.
        let g2 = build_lighting_grid_with_dims(&img, 8, 6).unwrap();
        assert_eq!((g2.cols, g2.rows), (8, 6));
    }

    #[test]
    fn uniform_image_stats() {
        let img = uniform_image(9, 5, 128);
        let g = build_lighting_grid(&img, 4).unwrap();
        assert_eq!((g.cols, g.rows), (3, 2));
        for (mean, max, min) in &g.stats {
            assert_abs_diff_eq!(*mean, 128.0 / 255.0, epsilon = 1e-12);
            assert_eq!(*max, 128.0 / 255.0);
            assert_eq!(*min, 128.0 / 255.0);
        }
    }

    #[test]
    fn checkerboard_pooling() {
        // 4x4 checkerboard of 0/255 pooled at cell 2: each cell holds two of
        // each value, so (mean, max, min) = (0.5, 1.0, 0.0). Hand pooling.
        let mut px = Vec::new();
        for y in 0..4 {
            for x in 0..4 {
                px.push(if (x + y) % 2 == 0 { 255 } else { 0 });
            }
        }
        let img = GrayImage::new(4, 4, px).unwrap();
        let g = build_lighting_grid(&img, 2).unwrap();
        assert_eq!(g.stats.len(), 4);
        for (mean, max, min) in &g.stats {
            assert_abs_diff_eq!(*mean, 0.5, epsilon = 1e-12);
            assert_eq!(*max, 1.0);
            assert_eq!(*min, 0.0);
        }
    }

    #[test]
    fn stats_are_ordered() {
        let mut rng = stream(3, &[purpose::INIT]);
        let px: Vec<u8> = (0..31 * 17).map(|_| rng.random()).collect();
        let img = GrayImage::new(31, 17, px).unwrap();
        let g = build_lighting_grid(&img, 5).unwrap();
        for (mean, max, min) in &g.stats {
            assert!(min <= mean && mean <= max);
            assert!(*min >= 0.0 && *max <= 1.0);
        }
    }

    fn bounds() -> Bounds {
        Bounds {
            min: Vec2::new(0.0, 0.0),
            max: Vec2::new(10.0, 10.0),
        }
    }

    #[test]
    fn empty_density_grid() {
        let g = build_density_grid(&[], bounds(), 4).unwrap();
        assert!(g.iter().all(|c| *c == 0));
    }

    #[test]
    fn center_point_lands_in_one_cell() {
        let g = build_density_grid(&[Vec2::new(5.0, 5.0)], bounds(), 2).unwrap();
        assert_eq!(g.iter().sum::<u32>(), 1);
        assert_eq!(g[3], 1); // exactly on the midline: upper-right cell
    }

    #[test]
    fn boundary_and_outside_points_are_counted() {
        let g = build_density_grid(
            &[Vec2::new(10.0, 10.0), Vec2::new(-3.0, 20.0)],
            bounds(),
            3,
        )
        .unwrap();
        assert_eq!(g.iter().sum::<u32>(), 2);
        assert_eq!(g[8], 1); // max corner maps to the last cell
        assert_eq!(g[6], 1); // clamped to bottom-left column, top row
    }

    #[test]
    fn density_count_matches_input_size() {
        let mut rng = stream(4, &[purpose::INIT]);
        for _ in 0..50 {
            let n = rng.random_range(0..40);
            let pts: Vec<Vec2> = (0..n)
                .map(|_| Vec2::new(rng.random_range(-2.0..12.0), rng.random_range(-2.0..12.0)))
                .collect();
            let g = build_density_grid(&pts, bounds(), 16).unwrap();
            assert_eq!(g.iter().sum::<u32>() as usize, n);
        }
    }
}
