//! Loss, reverse-mode gradients through unrolled rollouts, and gradient
//! normalization.

use rand::RngCore;

use crate::grid::{CellGrid, CHANNELS};
use crate::kernel::{self, MaskSource, Params};
use crate::model::{StepMasks, UpdateRule};
use crate::{Error, Result};

/// Gradients with the same shapes as an [`UpdateRule`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T = f32> {
    pub w1: Vec<T>,
    pub b1: Vec<T>,
    pub w2: Vec<T>,
}

impl<T: num_traits::Float> Gradients<T> {
    pub fn zeros_like(rule: &UpdateRule) -> Self {
        Self {
            w1: vec![T::zero(); rule.w1().len()],
            b1: vec![T::zero(); rule.b1().len()],
            w2: vec![T::zero(); rule.w2().len()],
        }
    }

    pub fn tensors(&self) -> [&[T]; 3] {
        [&self.w1, &self.b1, &self.w2]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<T>; 3] {
        [&mut self.w1, &mut self.b1, &mut self.w2]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Elementwise `self += other`.
    pub fn accumulate(&mut self, other: &Self) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = *d + s;
            }
        }
    }

    pub fn scale(&mut self, factor: T) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v = *v * factor);
        }
    }
}

/// Result of [`backward`].
#[derive(Debug, Clone)]
pub struct Backward {
    pub final_grid: CellGrid,
    pub loss: f32,
    pub grads: Gradients,
    /// Firing and life masks of each step, in order. Replaying them reproduces
    /// the rollout exactly.
    pub masks: Vec<StepMasks>,
}

fn check_shapes(a: &CellGrid, b: &CellGrid) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::InvalidArgument(format!(
            "grid is {}x{} but target is {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

/// Mean squared error over channels 0..4, averaged over all cells. Hidden
/// channels do not contribute.
pub fn loss(grid: &CellGrid, target: &CellGrid) -> Result<f32> {
    check_shapes(grid, target)?;
    Ok(kernel::visible_mse(grid.data(), target.data()) as f32)
}

/// Runs `n` steps from `initial` (drawing from `rng` exactly as
/// [`UpdateRule::rollout`] would), then returns the loss of the final grid
/// and its exact gradient with respect to `w1`, `b1` and `w2`.
///
/// Firing and alive masks are held constant during differentiation: gradient
/// flows only through cells that were retained.
pub fn backward<R: RngCore + ?Sized>(
    initial: &CellGrid,
    rule: &UpdateRule,
    n: usize,
    rng: &mut R,
    target: &CellGrid,
) -> Result<Backward> {
    if n == 0 {
        return Err(Error::InvalidArgument("backward needs at least one step".into()));
    }
    check_shapes(initial, target)?;
    let (fire_rate, threshold) = (rule.fire_rate(), rule.alive_threshold());
    let sources = (0..n).map(|_| MaskSource::Sample {
        fire_seed: rng.next_u64(),
        fire_rate,
        threshold,
    });
    let out = kernel::unroll_and_backprop(
        rule.params(),
        initial.data(),
        initial.width(),
        initial.height(),
        sources,
        target.data(),
    );
    Ok(Backward {
        final_grid: CellGrid::from_data(initial.width(), initial.height(), CHANNELS, out.final_state)
            .expect("rollout preserves shape"),
        loss: out.loss as f32,
        grads: Gradients {
            w1: out.grads.w1,
            b1: out.grads.b1,
            w2: out.grads.w2,
        },
        masks: out.masks,
    })
}

/// Double-precision shadow of [`backward`]: replays recorded masks with all
/// arithmetic in `f64`. Returns the loss and gradients.
pub fn backward_f64(
    initial: &CellGrid,
    rule: &UpdateRule,
    masks: &[StepMasks],
    target: &CellGrid,
) -> Result<(f64, Gradients<f64>)> {
    check_shapes(initial, target)?;
    let n = initial.cell_count();
    if let Some(bad) = masks.iter().find(|m| m.fired.len() != n || m.life.len() != n) {
        return Err(Error::InvalidArgument(format!(
            "mask of {} cells for a grid of {n}",
            bad.fired.len()
        )));
    }
    let widen = |v: &[f32]| v.iter().map(|&x| x as f64).collect::<Vec<_>>();
    let (w1, b1, w2) = (widen(rule.w1()), widen(rule.b1()), widen(rule.w2()));
    let params = Params {
        w1: &w1,
        b1: &b1,
        w2: &w2,
        hidden: rule.hidden_size(),
    };
    let out = kernel::unroll_and_backprop(
        params,
        &widen(initial.data()),
        initial.width(),
        initial.height(),
        masks.iter().map(MaskSource::Replay),
        target.data(),
    );
    Ok((
        out.loss,
        Gradients {
            w1: out.grads.w1,
            b1: out.grads.b1,
            w2: out.grads.w2,
        },
    ))
}

/// Divides each tensor by its own L2 norm (plus 1e-8).
pub fn normalize_gradients(grads: &Gradients) -> Gradients {
    let mut out = grads.clone();
    for t in out.tensors_mut() {
        let norm = t.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
        let inv = 1.0 / (norm + 1e-8);
        t.iter_mut().for_each(|v| *v = (*v as f64 * inv) as f32);
    }
    out
}
