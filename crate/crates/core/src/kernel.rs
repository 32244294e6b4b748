//! Precision-generic NCA forward/backward kernels.
//!
//! Production paths run these at `f32`; the gradient checker runs the same
//! kernels at `f64` as a shadow implementation.

use std::fmt::Debug;

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, ArrayViewMut2};
use num_traits::Float;

use crate::grid::{alive_bits, CHANNELS, VISIBLE};

pub(crate) const PERCEPTION: usize = 3 * CHANNELS;

pub(crate) trait Real: Float + ndarray::LinalgScalar + Debug + Send + Sync + 'static {}
impl Real for f32 {}
impl Real for f64 {}

/// Sobel-x kernel rows, pre-scaled by 1/8. Sobel-y is the transpose.
pub(crate) const SOBEL_X: [[f64; 3]; 3] = [[-0.125, 0.0, 0.125], [-0.25, 0.0, 0.25], [-0.125, 0.0, 0.125]];

#[derive(Clone, Copy)]
pub(crate) struct Params<'a, T> {
    pub w1: &'a [T],
    pub b1: &'a [T],
    pub w2: &'a [T],
    pub hidden: usize,
}

/// Per-step masks: which cells fired and which survived pre∧post alive masking.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepMasks {
    pub fired: Vec<bool>,
    pub life: Vec<bool>,
}

pub(crate) enum MaskSource<'a> {
    Sample {
        fire_seed: u64,
        fire_rate: f32,
        threshold: f32,
    },
    Replay(&'a StepMasks),
}

/// Activations kept for the reverse pass, for the cells that fired and survived.
pub(crate) struct StepRecord<T> {
    cells: Vec<usize>,
    perception: Vec<T>,
    preact: Vec<T>,
    life: Vec<bool>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based Bernoulli draw for one cell; independent of evaluation order.
pub(crate) fn fires(fire_seed: u64, cell: usize, fire_rate: f32) -> bool {
    let bits = splitmix64(fire_seed ^ splitmix64(cell as u64)) >> 40;
    (bits as f64 / (1u64 << 24) as f64) < fire_rate as f64
}

/// `(Sobel-x, Sobel-y)` weights of the tap at `(dy, dx)`.
fn sobel<T: Real>(dy: usize, dx: usize) -> (T, T) {
    (T::from(SOBEL_X[dy][dx]).unwrap(), T::from(SOBEL_X[dx][dy]).unwrap())
}

/// Writes the 48-value perception vector of cell `(x, y)` into `out`.
pub(crate) fn perceive_cell<T: Real>(state: &[T], width: usize, height: usize, x: usize, y: usize, out: &mut [T]) {
    let (id, rest) = out.split_at_mut(CHANNELS);
    let (gx, gy) = rest.split_at_mut(CHANNELS);
    let base = (y * width + x) * CHANNELS;
    id.copy_from_slice(&state[base..base + CHANNELS]);
    gx.fill(T::zero());
    gy.fill(T::zero());
    // Sobel-x accumulates row by row and Sobel-y column by column, so each
    // partial sum pairs opposite taps and a constant field gives exactly 0.
    for (dy, dx) in (0..3).flat_map(|dy| (0..3).map(move |dx| (dy, dx))) {
        accumulate_tap(
            state,
            width,
            height,
            x,
            y,
            dy,
            dx,
            T::from(SOBEL_X[dy][dx]).unwrap(),
            gx,
        );
    }
    for (dx, dy) in (0..3).flat_map(|dx| (0..3).map(move |dy| (dx, dy))) {
        accumulate_tap(
            state,
            width,
            height,
            x,
            y,
            dy,
            dx,
            T::from(SOBEL_X[dx][dy]).unwrap(),
            gy,
        );
    }
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn accumulate_tap<T: Real>(
    state: &[T],
    width: usize,
    height: usize,
    x: usize,
    y: usize,
    dy: usize,
    dx: usize,
    weight: T,
    out: &mut [T],
) {
    let yy = y as isize + dy as isize - 1;
    let xx = x as isize + dx as isize - 1;
    if weight == T::zero() || yy < 0 || xx < 0 || yy >= height as isize || xx >= width as isize {
        return;
    }
    let nb = (yy as usize * width + xx as usize) * CHANNELS;
    for (o, &v) in out.iter_mut().zip(&state[nb..nb + CHANNELS]) {
        *o = *o + weight * v;
    }
}

/// Adjoint of [`perceive_cell`]: accumulates `grad` (48 values) into `dstate`.
fn perceive_cell_adjoint<T: Real>(dstate: &mut [T], width: usize, height: usize, x: usize, y: usize, grad: &[T]) {
    let base = (y * width + x) * CHANNELS;
    for c in 0..CHANNELS {
        dstate[base + c] = dstate[base + c] + grad[c];
    }
    let (gx, gy) = (&grad[CHANNELS..2 * CHANNELS], &grad[2 * CHANNELS..]);
    for dy in 0..3 {
        let yy = y as isize + dy as isize - 1;
        if yy < 0 || yy >= height as isize {
            continue;
        }
        for dx in 0..3 {
            let xx = x as isize + dx as isize - 1;
            if xx < 0 || xx >= width as isize || (dx == 1 && dy == 1) {
                continue;
            }
            let (kx, ky) = sobel::<T>(dy, dx);
            let nb = (yy as usize * width + xx as usize) * CHANNELS;
            for c in 0..CHANNELS {
                dstate[nb + c] = dstate[nb + c] + kx * gx[c] + ky * gy[c];
            }
        }
    }
}

/// Hidden pre-activations `z = P·W1ᵀ + b1` and residuals `Δ = relu(z)·W2ᵀ`
/// for the given cells.
fn dense_forward<T: Real>(
    params: Params<'_, T>,
    state: &[T],
    width: usize,
    height: usize,
    cells: &[usize],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let rows = cells.len();
    let hidden = params.hidden;
    let mut perception = vec![T::zero(); rows * PERCEPTION];
    for (r, &cell) in cells.iter().enumerate() {
        perceive_cell(
            state,
            width,
            height,
            cell % width,
            cell / width,
            &mut perception[r * PERCEPTION..(r + 1) * PERCEPTION],
        );
    }
    let mut preact = Vec::with_capacity(rows * hidden);
    for _ in 0..rows {
        preact.extend_from_slice(params.b1);
    }
    let mut delta = vec![T::zero(); rows * CHANNELS];
    if rows == 0 {
        return (perception, preact, delta);
    }
    let p = ArrayView2::from_shape((rows, PERCEPTION), &perception).unwrap();
    let w1 = ArrayView2::from_shape((hidden, PERCEPTION), params.w1).unwrap();
    let w2 = ArrayView2::from_shape((CHANNELS, hidden), params.w2).unwrap();
    {
        let mut z = ArrayViewMut2::from_shape((rows, hidden), &mut preact).unwrap();
        general_mat_mul(T::one(), &p, &w1.t(), T::one(), &mut z);
    }
    let act: Vec<T> = preact.iter().map(|&v| v.max(T::zero())).collect();
    let h = ArrayView2::from_shape((rows, hidden), &act).unwrap();
    let mut d = ArrayViewMut2::from_shape((rows, CHANNELS), &mut delta).unwrap();
    general_mat_mul(T::one(), &h, &w2.t(), T::zero(), &mut d);
    (perception, preact, delta)
}

/// Residual update for every cell, ignoring firing and masking.
pub(crate) fn residuals<T: Real>(params: Params<'_, T>, state: &[T], width: usize, height: usize) -> Vec<T> {
    let cells: Vec<usize> = (0..width * height).collect();
    dense_forward(params, state, width, height, &cells).2
}

fn dilate(bits: &[bool], width: usize, height: usize) -> Vec<bool> {
    let mut out = vec![false; bits.len()];
    for y in 0..height {
        for x in 0..width {
            if !bits[y * width + x] {
                continue;
            }
            for yy in y.saturating_sub(1)..=(y + 1).min(height - 1) {
                for xx in x.saturating_sub(1)..=(x + 1).min(width - 1) {
                    out[yy * width + xx] = true;
                }
            }
        }
    }
    out
}

/// One NCA step on a raw state. Returns the next state and the masks used.
pub(crate) fn forward_step<T: Real>(
    params: Params<'_, T>,
    state: &[T],
    width: usize,
    height: usize,
    source: MaskSource<'_>,
    record: Option<&mut Vec<StepRecord<T>>>,
) -> (Vec<T>, StepMasks) {
    let n = width * height;
    let mut next = state.to_vec();
    let masks = match source {
        MaskSource::Sample {
            fire_seed,
            fire_rate,
            threshold,
        } => {
            let pre = alive_bits(state, width, height, threshold);
            let fired: Vec<bool> = (0..n).map(|c| fires(fire_seed, c, fire_rate)).collect();
            // Only fired cells that can influence a pre-alive cell's post mask matter.
            let near_pre = dilate(&pre, width, height);
            let cells: Vec<usize> = (0..n).filter(|&c| fired[c] && near_pre[c]).collect();
            let (perception, preact, delta) = dense_forward(params, state, width, height, &cells);
            for (r, &cell) in cells.iter().enumerate() {
                let dst = &mut next[cell * CHANNELS..(cell + 1) * CHANNELS];
                for (v, &d) in dst.iter_mut().zip(&delta[r * CHANNELS..(r + 1) * CHANNELS]) {
                    *v = *v + d;
                }
            }
            let post = alive_bits(&next, width, height, threshold);
            let life: Vec<bool> = pre.iter().zip(&post).map(|(&a, &b)| a && b).collect();
            if let Some(rec) = record {
                let keep: Vec<usize> = (0..cells.len()).filter(|&r| life[cells[r]]).collect();
                let hidden = params.hidden;
                rec.push(StepRecord {
                    cells: keep.iter().map(|&r| cells[r]).collect(),
                    perception: keep
                        .iter()
                        .flat_map(|&r| perception[r * PERCEPTION..(r + 1) * PERCEPTION].iter().copied())
                        .collect(),
                    preact: keep
                        .iter()
                        .flat_map(|&r| preact[r * hidden..(r + 1) * hidden].iter().copied())
                        .collect(),
                    life: life.clone(),
                });
            }
            StepMasks { fired, life }
        }
        MaskSource::Replay(masks) => {
            let cells: Vec<usize> = (0..n).filter(|&c| masks.fired[c] && masks.life[c]).collect();
            let (perception, preact, delta) = dense_forward(params, state, width, height, &cells);
            for (r, &cell) in cells.iter().enumerate() {
                let dst = &mut next[cell * CHANNELS..(cell + 1) * CHANNELS];
                for (v, &d) in dst.iter_mut().zip(&delta[r * CHANNELS..(r + 1) * CHANNELS]) {
                    *v = *v + d;
                }
            }
            if let Some(rec) = record {
                rec.push(StepRecord {
                    cells,
                    perception,
                    preact,
                    life: masks.life.clone(),
                });
            }
            masks.clone()
        }
    };
    for (cell, &alive) in next.chunks_exact_mut(CHANNELS).zip(&masks.life) {
        if !alive {
            cell.fill(T::zero());
        }
    }
    (next, masks)
}

/// Mean squared error over the RGBα channels, averaged over cells.
/// Accumulates in `f64` at either precision.
pub(crate) fn visible_mse<T: Real>(state: &[T], target: &[f32]) -> f64 {
    let mut sum = 0.0f64;
    for (s, t) in state.chunks_exact(CHANNELS).zip(target.chunks_exact(CHANNELS)) {
        for c in 0..VISIBLE {
            let d = s[c].to_f64().unwrap() - t[c] as f64;
            sum += d * d;
        }
    }
    sum / (state.len() / CHANNELS * VISIBLE) as f64
}

pub(crate) struct GradBuffers<T> {
    pub w1: Vec<T>,
    pub b1: Vec<T>,
    pub w2: Vec<T>,
}

impl<T: Real> GradBuffers<T> {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            w1: vec![T::zero(); hidden * PERCEPTION],
            b1: vec![T::zero(); hidden],
            w2: vec![T::zero(); CHANNELS * hidden],
        }
    }
}

pub(crate) struct Unrolled<T> {
    pub final_state: Vec<T>,
    pub loss: f64,
    pub grads: GradBuffers<T>,
    pub masks: Vec<StepMasks>,
}

/// Runs `sources.len()` steps, then reverse-accumulates the gradient of the
/// visible-channel MSE against `target` through every step. Firing and life
/// masks are constants of the differentiation.
pub(crate) fn unroll_and_backprop<'a, T: Real>(
    params: Params<'_, T>,
    initial: &[T],
    width: usize,
    height: usize,
    sources: impl Iterator<Item = MaskSource<'a>>,
    target: &[f32],
) -> Unrolled<T> {
    let hidden = params.hidden;
    let mut records = Vec::new();
    let mut masks = Vec::new();
    let mut state = initial.to_vec();
    for source in sources {
        let (next, m) = forward_step(params, &state, width, height, source, Some(&mut records));
        state = next;
        masks.push(m);
    }
    let loss = visible_mse(&state, target);

    let n_cells = width * height;
    let scale = T::from(2.0 / (n_cells * VISIBLE) as f64).unwrap();
    let mut grad = vec![T::zero(); state.len()];
    for (g, (s, t)) in grad
        .chunks_exact_mut(CHANNELS)
        .zip(state.chunks_exact(CHANNELS).zip(target.chunks_exact(CHANNELS)))
    {
        for c in 0..VISIBLE {
            g[c] = scale * (s[c] - T::from(t[c]).unwrap());
        }
    }

    let mut grads = GradBuffers::zeros(hidden);
    let w1 = ArrayView2::from_shape((hidden, PERCEPTION), params.w1).unwrap();
    let w2 = ArrayView2::from_shape((CHANNELS, hidden), params.w2).unwrap();
    for rec in records.iter().rev() {
        for (g, &alive) in grad.chunks_exact_mut(CHANNELS).zip(&rec.life) {
            if !alive {
                g.fill(T::zero());
            }
        }
        let rows = rec.cells.len();
        if rows == 0 {
            continue;
        }
        let mut d_delta = Vec::with_capacity(rows * CHANNELS);
        for &cell in &rec.cells {
            d_delta.extend_from_slice(&grad[cell * CHANNELS..(cell + 1) * CHANNELS]);
        }
        let d_delta = ArrayView2::from_shape((rows, CHANNELS), &d_delta).unwrap();
        let act: Vec<T> = rec.preact.iter().map(|&v| v.max(T::zero())).collect();
        let act = ArrayView2::from_shape((rows, hidden), &act).unwrap();
        {
            let mut gw2 = ArrayViewMut2::from_shape((CHANNELS, hidden), &mut grads.w2).unwrap();
            general_mat_mul(T::one(), &d_delta.t(), &act, T::one(), &mut gw2);
        }
        let mut d_pre = Array2::<T>::zeros((rows, hidden));
        general_mat_mul(T::one(), &d_delta, &w2, T::zero(), &mut d_pre);
        for (d, &z) in d_pre.iter_mut().zip(&rec.preact) {
            if z <= T::zero() {
                *d = T::zero();
            }
        }
        for row in d_pre.rows() {
            for (gb, &v) in grads.b1.iter_mut().zip(row) {
                *gb = *gb + v;
            }
        }
        let p = ArrayView2::from_shape((rows, PERCEPTION), &rec.perception).unwrap();
        {
            let mut gw1 = ArrayViewMut2::from_shape((hidden, PERCEPTION), &mut grads.w1).unwrap();
            general_mat_mul(T::one(), &d_pre.t(), &p, T::one(), &mut gw1);
        }
        let mut d_p = Array2::<T>::zeros((rows, PERCEPTION));
        general_mat_mul(T::one(), &d_pre, &w1, T::zero(), &mut d_p);
        // The identity path of `state + fired·Δ` already carries `grad` through.
        for (r, &cell) in rec.cells.iter().enumerate() {
            let row = d_p.row(r);
            perceive_cell_adjoint(
                &mut grad,
                width,
                height,
                cell % width,
                cell / width,
                row.as_slice().unwrap(),
            );
        }
    }
    Unrolled {
        final_state: state,
        loss,
        grads,
        masks,
    }
}
