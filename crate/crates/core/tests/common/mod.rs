//! Shared test oracles.
#![allow(dead_code, clippy::needless_range_loop)]

use gnca_core::model::StepMasks;
use gnca_core::{CellGrid, UpdateRule, CHANNELS};
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SOBEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];

/// Naive replay of a recorded rollout, written without reference to the
/// library kernels: explicit per-cell 3×3 loops and dense dot products.
pub struct NaiveReplay<'a, T> {
    pub width: usize,
    pub height: usize,
    pub hidden: usize,
    pub initial: Vec<T>,
    pub target: Vec<T>,
    pub masks: &'a [StepMasks],
}

impl<'a, T: Float> NaiveReplay<'a, T> {
    pub fn new(initial: &CellGrid, target: &CellGrid, hidden: usize, masks: &'a [StepMasks]) -> Self {
        let cast = |v: &[f32]| v.iter().map(|&x| T::from(x).unwrap()).collect();
        Self {
            width: initial.width(),
            height: initial.height(),
            hidden,
            initial: cast(initial.data()),
            target: cast(target.data()),
            masks,
        }
    }

    fn at(&self, s: &[T], x: i64, y: i64, c: usize) -> T {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            T::zero()
        } else {
            s[(y as usize * self.width + x as usize) * CHANNELS + c]
        }
    }

    pub fn loss(&self, w1: &[T], b1: &[T], w2: &[T]) -> T {
        self.evaluate(w1, b1, w2).0
    }

    /// Loss (summed in `f64`) and the sign pattern of every hidden
    /// pre-activation visited, in evaluation order.
    pub fn evaluate(&self, w1: &[T], b1: &[T], w2: &[T]) -> (T, Vec<bool>) {
        let mut pattern = Vec::new();
        let (w, h, hid) = (self.width, self.height, self.hidden);
        let eighth = T::from(0.125).unwrap();
        let mut s = self.initial.clone();
        for m in self.masks {
            let mut next = s.clone();
            for y in 0..h {
                for x in 0..w {
                    let cell = y * w + x;
                    if !(m.fired[cell] && m.life[cell]) {
                        continue;
                    }
                    let mut p = [T::zero(); 48];
                    for c in 0..CHANNELS {
                        p[c] = s[cell * CHANNELS + c];
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let v = self.at(&s, x as i64 + kx as i64 - 1, y as i64 + ky as i64 - 1, c);
                                p[16 + c] = p[16 + c] + T::from(SOBEL_X[ky][kx]).unwrap() * eighth * v;
                                p[32 + c] = p[32 + c] + T::from(SOBEL_X[kx][ky]).unwrap() * eighth * v;
                            }
                        }
                    }
                    let mut act = vec![T::zero(); hid];
                    for j in 0..hid {
                        let mut z = b1[j];
                        for k in 0..48 {
                            z = z + w1[j * 48 + k] * p[k];
                        }
                        pattern.push(z > T::zero());
                        act[j] = z.max(T::zero());
                    }
                    for c in 0..CHANNELS {
                        let mut d = T::zero();
                        for j in 0..hid {
                            d = d + w2[c * hid + j] * act[j];
                        }
                        next[cell * CHANNELS + c] = next[cell * CHANNELS + c] + d;
                    }
                }
            }
            for cell in 0..w * h {
                if !m.life[cell] {
                    for c in 0..CHANNELS {
                        next[cell * CHANNELS + c] = T::zero();
                    }
                }
            }
            s = next;
        }
        let mut sum = 0.0f64;
        for cell in 0..w * h {
            for c in 0..4 {
                let d = (s[cell * CHANNELS + c] - self.target[cell * CHANNELS + c])
                    .to_f64()
                    .unwrap();
                sum += d * d;
            }
        }
        (T::from(sum / (w * h * 4) as f64).unwrap(), pattern)
    }

    /// Central finite differences of [`loss`](Self::loss) for every parameter.
    pub fn finite_differences(&self, rule: &UpdateRule, step: f64) -> [Vec<T>; 3] {
        self.finite_differences_with_kinks(rule, step).0
    }

    /// Central finite differences plus, per parameter, whether the
    /// perturbation moved any ReLU pre-activation across zero.
    pub fn finite_differences_with_kinks(&self, rule: &UpdateRule, step: f64) -> ([Vec<T>; 3], [Vec<bool>; 3]) {
        let cast = |v: &[f32]| v.iter().map(|&x| T::from(x).unwrap()).collect::<Vec<T>>();
        let mut params = [cast(rule.w1()), cast(rule.b1()), cast(rule.w2())];
        let h = T::from(step).unwrap();
        let (_, base) = self.evaluate(&params[0], &params[1], &params[2]);
        let mut out = [Vec::new(), Vec::new(), Vec::new()];
        let mut kinks = [Vec::new(), Vec::new(), Vec::new()];
        for t in 0..3 {
            for i in 0..params[t].len() {
                let orig = params[t][i];
                params[t][i] = orig + h;
                let (plus, p_plus) = self.evaluate(&params[0], &params[1], &params[2]);
                params[t][i] = orig - h;
                let (minus, p_minus) = self.evaluate(&params[0], &params[1], &params[2]);
                params[t][i] = orig;
                out[t].push((plus - minus) / (h + h));
                kinks[t].push(p_plus != base || p_minus != base);
            }
        }
        (out, kinks)
    }
}

/// `‖a − b‖₂ / max(‖a‖₂, ‖b‖₂)`, or 0 when both vanish.
pub fn relative_error<A: Float, B: Float>(a: &[A], b: &[B]) -> f64 {
    let (mut diff, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x.to_f64().unwrap(), y.to_f64().unwrap());
        diff += (x - y) * (x - y);
        na += x * x;
        nb += y * y;
    }
    let scale = na.sqrt().max(nb.sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff.sqrt() / scale
    }
}

/// A small random gradient-check instance: live blob on an 8×8 grid, random
/// premultiplied target, and a rule with every tensor nonzero.
pub fn random_instance(seed: u64, hidden: usize) -> (CellGrid, CellGrid, UpdateRule) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (8, 8);
    let mut data = vec![0.0f32; w * h * CHANNELS];
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (x as f32 - 3.5, y as f32 - 3.5);
            if dx * dx + dy * dy <= 7.0 || rng.random_bool(0.1) {
                for c in 0..CHANNELS {
                    data[(y * w + x) * CHANNELS + c] = rng.random_range(0.0..1.0);
                }
            }
        }
    }
    let initial = CellGrid::from_data(w, h, CHANNELS, data).unwrap();
    let mut target = vec![0.0f32; w * h * CHANNELS];
    for cell in target.chunks_exact_mut(CHANNELS) {
        let a: f32 = rng.random_range(0.0..1.0);
        for c in 0..3 {
            cell[c] = a * rng.random_range(0.0..1.0f32);
        }
        cell[3] = a;
    }
    let target = CellGrid::from_data(w, h, CHANNELS, target).unwrap();
    let mut uniform = |n: usize, s: f32| (0..n).map(|_| rng.random_range(-s..s)).collect::<Vec<f32>>();
    let s1 = (6.0f32 / (48.0 + hidden as f32)).sqrt();
    let rule = UpdateRule::from_parts(
        hidden,
        uniform(hidden * 48, s1),
        uniform(hidden, 0.1),
        uniform(16 * hidden, 0.2),
        0.5,
        0.1,
    )
    .unwrap();
    (initial, target, rule)
}
