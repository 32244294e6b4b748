//! Cell-state field and the masking, damage and readback operations that act on it.
//!
//! Layout is row-major by `(row, column, channel)` with a fixed 16 channels per
//! cell. Channels 0..4 are RGBα, the rest are hidden state.

use image::{Rgba, RgbaImage};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Channels per cell.
pub const CHANNELS: usize = 16;
/// Index of the α channel.
pub const ALPHA: usize = 3;
/// Number of visible channels (RGBα).
pub const VISIBLE: usize = 4;
/// Smallest legal edge length.
pub const MIN_EDGE: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellGrid {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl CellGrid {
    /// All-zero grid.
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height * CHANNELS],
        }
    }

    /// Builds a grid from raw row-major data. `channels` must be 16.
    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels != CHANNELS {
            return Err(Error::InvalidArgument(format!(
                "cell grids carry exactly {CHANNELS} channels, got {channels}"
            )));
        }
        if data.len() != width * height * CHANNELS {
            return Err(Error::InvalidArgument(format!(
                "data length {} does not match {width}x{height}x{CHANNELS}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("grid data contains non-finite values".into()));
        }
        Ok(Self { width, height, data })
    }

    /// A grid that is zero everywhere except the center cell `(w/2, h/2)`,
    /// whose α and hidden channels are 1.
    pub fn seed(width: usize, height: usize) -> Result<Self> {
        if width < MIN_EDGE || height < MIN_EDGE {
            return Err(Error::InvalidArgument(format!(
                "seed grid must be at least {MIN_EDGE}x{MIN_EDGE}, got {width}x{height}"
            )));
        }
        let mut grid = Self::zeros(width, height);
        let cell = grid.cell_mut(width / 2, height / 2);
        cell[ALPHA..].fill(1.0);
        Ok(grid)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        CHANNELS
    }

    pub fn cell_count(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[cfg(test)]
    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn same_shape(&self, other: &CellGrid) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// The 16 channels of cell `(x, y)`.
    pub fn cell(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.width + x) * CHANNELS;
        &self.data[i..i + CHANNELS]
    }

    pub fn cell_mut(&mut self, x: usize, y: usize) -> &mut [f32] {
        let i = (y * self.width + x) * CHANNELS;
        &mut self.data[i..i + CHANNELS]
    }

    pub fn alpha(&self, x: usize, y: usize) -> f32 {
        self.data[(y * self.width + x) * CHANNELS + ALPHA]
    }

    /// Cells whose 3×3 neighborhood holds an α above `threshold`.
    pub fn alive_mask(&self, threshold: f32) -> AliveMask {
        AliveMask {
            width: self.width,
            height: self.height,
            bits: alive_bits(&self.data, self.width, self.height, threshold),
        }
    }

    /// Zeroes every cell whose mask value is 0.
    pub fn apply_binary_mask(&self, mask: &BinaryStateArray) -> Result<CellGrid> {
        if mask.width != self.width || mask.height != self.height {
            return Err(Error::InvalidArgument(format!(
                "mask is {}x{} but grid is {}x{}",
                mask.width, mask.height, self.width, self.height
            )));
        }
        let mut out = self.clone();
        for (cell, &keep) in out.data.chunks_exact_mut(CHANNELS).zip(&mask.values) {
            if !keep {
                cell.fill(0.0);
            }
        }
        Ok(out)
    }

    /// Zeroes all cells with `(x-cx)² + (y-cy)² ≤ r²`. The disc may extend past
    /// (or lie entirely outside) the grid.
    pub fn apply_circle_damage(&self, cx: f32, cy: f32, r: f32) -> CellGrid {
        let mut out = self.clone();
        out.damage_in_place(cx, cy, r);
        out
    }

    pub(crate) fn damage_in_place(&mut self, cx: f32, cy: f32, r: f32) {
        if r.is_nan() || r < 0.0 {
            return;
        }
        let (cx, cy, r) = (cx as f64, cy as f64, r as f64);
        let r2 = r * r;
        let y0 = (cy - r).floor().max(0.0) as usize;
        let x0 = (cx - r).floor().max(0.0) as usize;
        let y1 = (cy + r).ceil().min(self.height as f64 - 1.0);
        let x1 = (cx + r).ceil().min(self.width as f64 - 1.0);
        if y1 < 0.0 || x1 < 0.0 {
            return;
        }
        for y in y0..=y1 as usize {
            for x in x0..=x1 as usize {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                if dx * dx + dy * dy <= r2 {
                    self.cell_mut(x, y).fill(0.0);
                }
            }
        }
    }

    /// RGBα readback: clamp to [0,1], scale to bytes rounding half up.
    pub fn to_rgba(&self) -> RgbaImage {
        let mut img = RgbaImage::new(self.width as u32, self.height as u32);
        for (px, cell) in img.pixels_mut().zip(self.data.chunks_exact(CHANNELS)) {
            *px = Rgba([to_byte(cell[0]), to_byte(cell[1]), to_byte(cell[2]), to_byte(cell[3])]);
        }
        img
    }

    /// Bounding box `(x0, y0, x1, y1)` (inclusive) of cells with α > 0, if any.
    pub fn alpha_bbox(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bbox: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.alpha(x, y) > 0.0 {
                    bbox = Some(match bbox {
                        None => (x, y, x, y),
                        Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                    });
                }
            }
        }
        bbox
    }
}

fn to_byte(v: f32) -> u8 {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (v as f64 * 255.0 + 0.5).floor() as u8
}

/// Alive bits for a raw row-major state slice. Shared with the model kernels,
/// which run on both precisions.
pub(crate) fn alive_bits<T: num_traits::Float>(data: &[T], width: usize, height: usize, threshold: f32) -> Vec<bool> {
    let threshold = T::from(threshold).unwrap();
    let mut bits = vec![false; width * height];
    // Row-wise max first, then column-wise: separable 3×3 max with zero padding.
    let mut row_max = vec![T::zero(); width * height];
    for y in 0..height {
        for x in 0..width {
            let mut m = T::zero();
            for xx in x.saturating_sub(1)..=(x + 1).min(width - 1) {
                m = m.max(data[(y * width + xx) * CHANNELS + ALPHA]);
            }
            row_max[y * width + x] = m;
        }
    }
    for y in 0..height {
        for x in 0..width {
            let mut m = T::zero();
            for yy in y.saturating_sub(1)..=(y + 1).min(height - 1) {
                m = m.max(row_max[yy * width + x]);
            }
            bits[y * width + x] = m > threshold;
        }
    }
    bits
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AliveMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl AliveMask {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn fraction(&self) -> f64 {
        self.count() as f64 / self.bits.len() as f64
    }
}

/// Engine-side binary cell state: `true` keeps a cell, `false` kills it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryStateArray {
    width: usize,
    height: usize,
    values: Vec<bool>,
}

impl BinaryStateArray {
    pub fn all_alive(width: usize, height: usize) -> Self {
        Self::filled(width, height, true)
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Self {
            width,
            height,
            values: vec![value; width * height],
        }
    }

    pub fn from_values(width: usize, height: usize, values: Vec<bool>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "{} mask values for a {width}x{height} grid",
                values.len()
            )));
        }
        Ok(Self { width, height, values })
    }

    /// Mask that is 0 inside the disc and 1 elsewhere.
    pub fn disc_complement(width: usize, height: usize, cx: f32, cy: f32, r: f32) -> Self {
        let (cx, cy, r) = (cx as f64, cy as f64, r as f64);
        let values = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                !(r >= 0.0 && dx * dx + dy * dy <= r * r)
            })
            .collect();
        Self { width, height, values }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.values[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.values[y * self.width + x] = value;
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }

    pub fn reset(&mut self) {
        self.values.fill(true);
    }
}
