//! Heatmap images of control layers.

use std::path::Path;

use image::{ImageResult, Rgb, RgbImage};

use crate::control::Grid;

/// Dark purple through red to pale yellow; warmer means higher.
const STOPS: [(f64, [f64; 3]); 5] = [
    (0.0, [0.0, 0.0, 4.0]),
    (0.25, [87.0, 16.0, 110.0]),
    (0.5, [188.0, 55.0, 84.0]),
    (0.75, [249.0, 142.0, 9.0]),
    (1.0, [252.0, 255.0, 164.0]),
];

/// Color for a value in `[0, 1]`; values outside are clamped, NaN maps to 0.
pub fn colormap(v: f64) -> Rgb<u8> {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    let k = STOPS
        .windows(2)
        .position(|w| v <= w[1].0)
        .unwrap_or(STOPS.len() - 2);
    let ((t0, c0), (t1, c1)) = (STOPS[k], STOPS[k + 1]);
    let f = (v - t0) / (t1 - t0);
    Rgb(std::array::from_fn(|i| (c0[i] + f * (c1[i] - c0[i])).round() as u8))
}

/// Paints a full-grid layer, `scale` pixels per cell, with `y` pointing up.
pub fn heatmap(values: &[f64], grid: &Grid, scale: u32) -> RgbImage {
    assert_eq!(values.len(), grid.len(), "one value per grid cell");
    let scale = scale.max(1);
    let (w, h) = (grid.nx as u32 * scale, grid.ny as u32 * scale);
    RgbImage::from_fn(w, h, |px, py| {
        let ix = (px / scale) as usize;
        let iy = grid.ny - 1 - (py / scale) as usize;
        colormap(values[grid.index(ix, iy)])
    })
}

pub fn save_heatmap(values: &[f64], grid: &Grid, scale: u32, path: impl AsRef<Path>) -> ImageResult<()> {
    heatmap(values, grid, scale).save(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn colormap_ends_and_order() {
        assert_eq!(colormap(0.0), Rgb([0, 0, 4]));
        assert_eq!(colormap(1.0), Rgb([252, 255, 164]));
        assert_eq!(colormap(2.0), colormap(1.0));
        assert_eq!(colormap(f64::NAN), colormap(0.0));
        let brightness = |c: Rgb<u8>| c.0.iter().map(|&v| u32::from(v)).sum::<u32>();
        let mut last = 0;
        for i in 0..=100 {
            let b = brightness(colormap(f64::from(i) / 100.0));
            assert!(b + 40 >= last);
            last = b;
        }
    }

    #[test]
    fn heatmap_orientation() {
        let grid = Grid::new(1.0);
        let mut values = vec![0.0; grid.len()];
        values[grid.index(0, 0)] = 1.0;
        let img = heatmap(&values, &grid, 2);
        assert_eq!(img.dimensions(), (188, 74));
        // Cell (0, 0) is the bottom-left corner.
        assert_eq!(*img.get_pixel(0, 73), colormap(1.0));
        assert_eq!(*img.get_pixel(0, 0), colormap(0.0));
    }
}
