//! The learned per-cell update rule: fixed Sobel perception, a two-layer
//! network producing a residual update, stochastic firing and alive masking.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::grid::{CellGrid, CHANNELS};
use crate::kernel::{self, MaskSource, Params};
use crate::{Error, Result};

pub use crate::kernel::StepMasks;

/// Length of the per-cell perception vector (identity, Sobel-x, Sobel-y).
pub const PERCEPTION_SIZE: usize = kernel::PERCEPTION;
pub const DEFAULT_HIDDEN: usize = 128;
pub const DEFAULT_FIRE_RATE: f32 = 0.5;
pub const DEFAULT_ALIVE_THRESHOLD: f32 = 0.1;

/// Parameters of the update network plus its fixed hyperparameters.
///
/// `w1` is `hidden × 48` and `w2` is `16 × hidden`, both row-major. The
/// output layer has no bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateRule {
    hidden_size: usize,
    w1: Vec<f32>,
    b1: Vec<f32>,
    w2: Vec<f32>,
    fire_rate: f32,
    alive_threshold: f32,
}

impl UpdateRule {
    /// Glorot-uniform `w1`, zero `b1`, zero `w2`. A fresh rule is the identity
    /// up to alive masking.
    pub fn init<R: Rng + ?Sized>(rng: &mut R, hidden_size: usize) -> Result<Self> {
        if hidden_size == 0 {
            return Err(Error::InvalidArgument("hidden size must be at least 1".into()));
        }
        let s = (6.0 / (PERCEPTION_SIZE + hidden_size) as f64).sqrt() as f32;
        let w1 = (0..hidden_size * PERCEPTION_SIZE)
            .map(|_| rng.random_range(-s..=s))
            .collect();
        Ok(Self {
            hidden_size,
            w1,
            b1: vec![0.0; hidden_size],
            w2: vec![0.0; CHANNELS * hidden_size],
            fire_rate: DEFAULT_FIRE_RATE,
            alive_threshold: DEFAULT_ALIVE_THRESHOLD,
        })
    }

    pub fn from_parts(
        hidden_size: usize,
        w1: Vec<f32>,
        b1: Vec<f32>,
        w2: Vec<f32>,
        fire_rate: f32,
        alive_threshold: f32,
    ) -> Result<Self> {
        if hidden_size == 0 {
            return Err(Error::InvalidArgument("hidden size must be at least 1".into()));
        }
        let shapes = [
            ("w1", w1.len(), hidden_size * PERCEPTION_SIZE),
            ("b1", b1.len(), hidden_size),
            ("w2", w2.len(), CHANNELS * hidden_size),
        ];
        for (name, got, want) in shapes {
            if got != want {
                return Err(Error::InvalidArgument(format!(
                    "{name} has {got} entries, expected {want}"
                )));
            }
        }
        if w1.iter().chain(&b1).chain(&w2).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("rule parameters must be finite".into()));
        }
        let rule = Self {
            hidden_size,
            w1,
            b1,
            w2,
            fire_rate: DEFAULT_FIRE_RATE,
            alive_threshold: DEFAULT_ALIVE_THRESHOLD,
        };
        rule.with_fire_rate(fire_rate)?.with_alive_threshold(alive_threshold)
    }

    pub fn with_fire_rate(mut self, fire_rate: f32) -> Result<Self> {
        if !(fire_rate > 0.0 && fire_rate <= 1.0) {
            return Err(Error::InvalidArgument(format!("fire rate {fire_rate} outside (0, 1]")));
        }
        self.fire_rate = fire_rate;
        Ok(self)
    }

    pub fn with_alive_threshold(mut self, alive_threshold: f32) -> Result<Self> {
        if !(alive_threshold > 0.0 && alive_threshold < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "alive threshold {alive_threshold} outside (0, 1)"
            )));
        }
        self.alive_threshold = alive_threshold;
        Ok(self)
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden_size
    }

    pub fn perception_size(&self) -> usize {
        PERCEPTION_SIZE
    }

    pub fn channels(&self) -> usize {
        CHANNELS
    }

    pub fn fire_rate(&self) -> f32 {
        self.fire_rate
    }

    pub fn alive_threshold(&self) -> f32 {
        self.alive_threshold
    }

    pub fn w1(&self) -> &[f32] {
        &self.w1
    }

    pub fn b1(&self) -> &[f32] {
        &self.b1
    }

    pub fn w2(&self) -> &[f32] {
        &self.w2
    }

    /// Mutable views of `(w1, b1, w2)` for the optimizer.
    pub(crate) fn params_mut(&mut self) -> [&mut [f32]; 3] {
        [&mut self.w1, &mut self.b1, &mut self.w2]
    }

    pub(crate) fn params(&self) -> Params<'_, f32> {
        Params {
            w1: &self.w1,
            b1: &self.b1,
            w2: &self.w2,
            hidden: self.hidden_size,
        }
    }

    /// Per-cell residual `Δ = w2·relu(w1·p + b1)` for every cell, before
    /// firing and masking. Row-major, 16 values per cell.
    pub fn residuals(&self, grid: &CellGrid) -> Vec<f32> {
        kernel::residuals(self.params(), grid.data(), grid.width(), grid.height())
    }

    /// One stochastic update step. Draws a single `u64` from `rng`; per-cell
    /// firing bits are derived from it by a counter-based hash.
    pub fn step<R: RngCore + ?Sized>(&self, grid: &CellGrid, rng: &mut R) -> CellGrid {
        self.step_with_masks(grid, rng).0
    }

    /// Like [`step`](Self::step) and also returns the firing and life masks used.
    pub fn step_with_masks<R: RngCore + ?Sized>(&self, grid: &CellGrid, rng: &mut R) -> (CellGrid, StepMasks) {
        let source = MaskSource::Sample {
            fire_seed: rng.next_u64(),
            fire_rate: self.fire_rate,
            threshold: self.alive_threshold,
        };
        let (data, masks) = kernel::forward_step(self.params(), grid.data(), grid.width(), grid.height(), source, None);
        let next = CellGrid::from_data(grid.width(), grid.height(), CHANNELS, data).expect("step preserves shape");
        (next, masks)
    }

    /// `n` successive steps drawing from the same stream.
    pub fn rollout<R: RngCore + ?Sized>(&self, grid: &CellGrid, n: usize, rng: &mut R) -> CellGrid {
        let mut g = grid.clone();
        for _ in 0..n {
            g = self.step(&g, rng);
        }
        g
    }
}

/// Perception field: 48 values per cell, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PerceptionField {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl PerceptionField {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn cell(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.width + x) * PERCEPTION_SIZE;
        &self.data[i..i + PERCEPTION_SIZE]
    }
}

/// Identity, Sobel-x and Sobel-y (scaled by 1/8) per channel, zero padded.
pub fn perceive(grid: &CellGrid) -> PerceptionField {
    let (w, h) = (grid.width(), grid.height());
    let mut data = vec![0.0; w * h * PERCEPTION_SIZE];
    for y in 0..h {
        for x in 0..w {
            let i = (y * w + x) * PERCEPTION_SIZE;
            kernel::perceive_cell(grid.data(), w, h, x, y, &mut data[i..i + PERCEPTION_SIZE]);
        }
    }
    PerceptionField {
        width: w,
        height: h,
        data,
    }
}
