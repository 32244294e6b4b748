//! Pool-based training of an [`UpdateRule`] by backpropagation through
//! unrolled rollouts, with damage augmentation.

mod adam;
mod backprop;

use rand::seq::index;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::grid::CellGrid;
use crate::model::{UpdateRule, DEFAULT_ALIVE_THRESHOLD, DEFAULT_FIRE_RATE, DEFAULT_HIDDEN};
use crate::{Error, Result};

pub use adam::AdamState;
pub use backprop::{backward, backward_f64, loss, normalize_gradients, Backward, Gradients};

/// Inclusive cell rectangle in which damage centers are never sampled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Rect {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x0..=self.x1).contains(&x) && (self.y0..=self.y1).contains(&y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub total_steps: usize,
    pub batch_size: usize,
    pub pool_size: usize,
    pub unroll_min: usize,
    pub unroll_max: usize,
    pub learning_rate: f32,
    /// The learning rate is multiplied by `lr_decay_factor` from this step on.
    pub lr_decay_step: usize,
    pub lr_decay_factor: f32,
    pub damage_start_step: usize,
    pub damaged_per_batch: usize,
    /// Damage radius as a fraction of the target's bounding-box diagonal.
    pub damage_radius_fraction: f32,
    pub damage_exclusion: Option<Rect>,
    pub hidden_size: usize,
    pub fire_rate: f32,
    pub alive_threshold: f32,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_steps: 8000,
            batch_size: 8,
            pool_size: 1024,
            unroll_min: 64,
            unroll_max: 96,
            learning_rate: 2e-3,
            lr_decay_step: 2000,
            lr_decay_factor: 0.1,
            damage_start_step: 500,
            damaged_per_batch: 3,
            damage_radius_fraction: 0.25,
            damage_exclusion: None,
            hidden_size: DEFAULT_HIDDEN,
            fire_rate: DEFAULT_FIRE_RATE,
            alive_threshold: DEFAULT_ALIVE_THRESHOLD,
            rng_seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidArgument(msg));
        if self.batch_size == 0 {
            return fail("batch size must be at least 1".into());
        }
        if self.unroll_min == 0 || self.unroll_min > self.unroll_max {
            return fail(format!(
                "unroll range [{}, {}] is empty or starts at 0",
                self.unroll_min, self.unroll_max
            ));
        }
        if self.damaged_per_batch >= self.batch_size {
            return fail(format!(
                "damaged_per_batch ({}) must be below batch_size ({})",
                self.damaged_per_batch, self.batch_size
            ));
        }
        if self.pool_size < self.batch_size {
            return fail(format!(
                "pool_size ({}) must be at least batch_size ({})",
                self.pool_size, self.batch_size
            ));
        }
        if !(self.damage_radius_fraction > 0.0 && self.damage_radius_fraction < 1.0) {
            return fail(format!(
                "damage radius fraction {} outside (0, 1)",
                self.damage_radius_fraction
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning rate {} must be positive", self.learning_rate));
        }
        if self.hidden_size == 0 {
            return fail("hidden size must be at least 1".into());
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, step: usize) -> f32 {
        if step >= self.lr_decay_step {
            self.learning_rate * self.lr_decay_factor
        } else {
            self.learning_rate
        }
    }
}

/// Persistent set of training states.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePool {
    entries: Vec<CellGrid>,
    last_loss: Vec<Option<f32>>,
}

impl SamplePool {
    pub fn seeded(size: usize, width: usize, height: usize) -> Result<Self> {
        let seed = CellGrid::seed(width, height)?;
        Ok(Self {
            entries: vec![seed; size],
            last_loss: vec![None; size],
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[CellGrid] {
        &self.entries
    }

    pub fn get(&self, i: usize) -> &CellGrid {
        &self.entries[i]
    }

    pub fn last_loss(&self, i: usize) -> Option<f32> {
        self.last_loss[i]
    }
}

/// Bookkeeping of one optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub batch_loss: f32,
    /// Pool slots used, sorted from highest to lowest pre-step loss.
    pub batch: Vec<usize>,
    pub reseeded: usize,
    /// Slots damaged this step, with the damage disc `(cx, cy, r)`.
    pub damaged: Vec<(usize, (f32, f32, f32))>,
    pub unroll: usize,
}

/// Training loop state. [`Trainer::step`] performs one pool train step.
pub struct Trainer {
    cfg: TrainConfig,
    target: CellGrid,
    pool: SamplePool,
    rule: UpdateRule,
    opt: AdamState,
    rng: ChaCha8Rng,
    step_index: usize,
    damage_radius: f32,
    damage_box: (usize, usize, usize, usize),
    history: Vec<f32>,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, target: CellGrid) -> Result<Self> {
        cfg.validate()?;
        if target.width() < 3 || target.height() < 3 {
            return Err(Error::InvalidArgument("target must be at least 3x3".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        let rule = UpdateRule::init(&mut rng, cfg.hidden_size)?
            .with_fire_rate(cfg.fire_rate)?
            .with_alive_threshold(cfg.alive_threshold)?;
        let opt = AdamState::new(&rule);
        let pool = SamplePool::seeded(cfg.pool_size, target.width(), target.height())?;
        let damage_box = target
            .alpha_bbox()
            .unwrap_or((0, 0, target.width() - 1, target.height() - 1));
        let (bw, bh) = (damage_box.2 - damage_box.0 + 1, damage_box.3 - damage_box.1 + 1);
        let damage_radius = cfg.damage_radius_fraction * ((bw * bw + bh * bh) as f32).sqrt();
        Ok(Self {
            cfg,
            target,
            pool,
            rule,
            opt,
            rng,
            step_index: 0,
            damage_radius,
            damage_box,
            history: Vec::new(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn rule(&self) -> &UpdateRule {
        &self.rule
    }

    pub fn pool(&self) -> &SamplePool {
        &self.pool
    }

    pub fn optimizer(&self) -> &AdamState {
        &self.opt
    }

    pub fn step_index(&self) -> usize {
        self.step_index
    }

    pub fn loss_history(&self) -> &[f32] {
        &self.history
    }

    pub fn damage_radius(&self) -> f32 {
        self.damage_radius
    }

    pub fn is_done(&self) -> bool {
        self.step_index >= self.cfg.total_steps
    }

    pub fn into_parts(self) -> (UpdateRule, Vec<f32>) {
        (self.rule, self.history)
    }

    fn sample_damage_center(&mut self) -> Option<(f32, f32)> {
        let (x0, y0, x1, y1) = self.damage_box;
        for _ in 0..64 {
            let x = self.rng.random_range(x0..=x1);
            let y = self.rng.random_range(y0..=y1);
            match self.cfg.damage_exclusion {
                Some(rect) if rect.contains(x, y) => continue,
                _ => return Some((x as f32, y as f32)),
            }
        }
        None
    }

    /// One optimizer step over a batch drawn from the pool.
    pub fn step(&mut self) -> Result<StepOutcome> {
        if self.is_done() {
            return Err(Error::InvalidArgument(format!(
                "step {} is past total_steps {}",
                self.step_index, self.cfg.total_steps
            )));
        }
        let cfg = &self.cfg;
        let mut batch = index::sample(&mut self.rng, cfg.pool_size, cfg.batch_size).into_vec();
        let losses: Vec<f32> = batch
            .iter()
            .map(|&i| loss(&self.pool.entries[i], &self.target))
            .collect::<Result<_>>()?;
        let mut order: Vec<usize> = (0..batch.len()).collect();
        order.sort_by(|&a, &b| losses[b].total_cmp(&losses[a]));
        batch = order.iter().map(|&k| batch[k]).collect();

        let reseeded = batch[0];
        self.pool.entries[reseeded] = CellGrid::seed(self.target.width(), self.target.height())?;

        let mut damaged = Vec::new();
        if self.step_index >= self.cfg.damage_start_step {
            let lowest = batch.len() - self.cfg.damaged_per_batch;
            for &slot in &batch[lowest..] {
                if let Some((cx, cy)) = self.sample_damage_center() {
                    let r = self.damage_radius;
                    self.pool.entries[slot].damage_in_place(cx, cy, r);
                    damaged.push((slot, (cx, cy, r)));
                }
            }
        }

        let unroll = self.rng.random_range(self.cfg.unroll_min..=self.cfg.unroll_max);
        let seeds: Vec<u64> = batch.iter().map(|_| self.rng.next_u64()).collect();
        let (rule, target, pool) = (&self.rule, &self.target, &self.pool);
        let results: Vec<Backward> = batch
            .par_iter()
            .zip(&seeds)
            .map(|(&slot, &seed)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                backward(&pool.entries[slot], rule, unroll, &mut rng, target)
            })
            .collect::<Result<_>>()?;

        let mut grads = Gradients::zeros_like(&self.rule);
        for r in &results {
            grads.accumulate(&r.grads);
        }
        grads.scale(1.0 / results.len() as f32);
        let grads = normalize_gradients(&grads);
        let lr = self.cfg.learning_rate_at(self.step_index);
        self.opt.step(&mut self.rule, &grads, lr);

        let mut total = 0.0f64;
        for (&slot, r) in batch.iter().zip(results) {
            total += r.loss as f64;
            self.pool.last_loss[slot] = Some(r.loss);
            self.pool.entries[slot] = r.final_grid;
        }
        let batch_loss = (total / batch.len() as f64) as f32;
        self.history.push(batch_loss);
        self.step_index += 1;
        Ok(StepOutcome {
            batch_loss,
            batch,
            reseeded,
            damaged,
            unroll,
        })
    }
}

/// Trains from scratch. Returns the final rule and the per-step mean batch loss.
pub fn train(cfg: TrainConfig, target: &CellGrid) -> Result<(UpdateRule, Vec<f32>)> {
    train_with_progress(cfg, target, |_, _| {})
}

/// [`train`] with a callback receiving `(step_index, batch_loss)` after every step.
pub fn train_with_progress(
    cfg: TrainConfig,
    target: &CellGrid,
    mut progress: impl FnMut(usize, f32),
) -> Result<(UpdateRule, Vec<f32>)> {
    let mut trainer = Trainer::new(cfg, target.clone())?;
    while !trainer.is_done() {
        let out = trainer.step()?;
        progress(trainer.step_index() - 1, out.batch_loss);
    }
    Ok(trainer.into_parts())
}

/// Filled disc of the given color (premultiplied, α = 1) centered on a
/// `size × size` grid.
pub fn disc_target(size: usize, radius: f32, rgb: [f32; 3]) -> CellGrid {
    let mut g = CellGrid::zeros(size, size);
    let c = (size as f32 - 1.0) / 2.0;
    for y in 0..size {
        for x in 0..size {
            let (dx, dy) = (x as f32 - c, y as f32 - c);
            if dx * dx + dy * dy <= radius * radius {
                g.cell_mut(x, y)[..4].copy_from_slice(&[rgb[0], rgb[1], rgb[2], 1.0]);
            }
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            total_steps: 6,
            batch_size: 4,
            pool_size: 16,
            unroll_min: 64,
            unroll_max: 70,
            damage_start_step: 3,
            hidden_size: 16,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = [
            TrainConfig {
                unroll_min: 10,
                unroll_max: 5,
                ..small_cfg()
            },
            TrainConfig {
                damaged_per_batch: 4,
                ..small_cfg()
            },
            TrainConfig {
                pool_size: 2,
                ..small_cfg()
            },
            TrainConfig {
                batch_size: 0,
                ..small_cfg()
            },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn learning_rate_decays() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.learning_rate_at(1999), 2e-3);
        assert!((cfg.learning_rate_at(2000) - 2e-4).abs() < 1e-9);
    }

    #[test]
    fn zero_steps_returns_fresh_rule() {
        let cfg = TrainConfig {
            total_steps: 0,
            ..small_cfg()
        };
        let target = disc_target(8, 3.0, [1.0, 0.0, 0.0]);
        let (rule, history) = train(cfg.clone(), &target).unwrap();
        let fresh = UpdateRule::init(&mut ChaCha8Rng::seed_from_u64(cfg.rng_seed), 16).unwrap();
        assert_eq!(rule, fresh);
        assert!(history.is_empty());
    }

    #[test]
    fn pool_step_touches_batch_and_gates_damage() {
        let target = disc_target(10, 3.5, [0.2, 0.8, 0.3]);
        let mut trainer = Trainer::new(small_cfg(), target.clone()).unwrap();
        let seed = CellGrid::seed(10, 10).unwrap();
        let first = trainer.step().unwrap();
        assert_eq!(first.batch.len(), 4);
        assert!(first.damaged.is_empty());
        assert!((64..=70).contains(&first.unroll));
        // Zero-initialised output layer: the first rollout only masks, so
        // touched slots still hold the seed; the rule has moved, though.
        for &slot in &first.batch {
            assert_eq!(trainer.pool().last_loss(slot), Some(loss(&seed, &target).unwrap()));
        }
        let second = trainer.step().unwrap();
        assert!(second.damaged.is_empty());
        for &slot in &second.batch {
            assert_ne!(trainer.pool().get(slot), &seed);
        }
        trainer.step().unwrap();
        let fourth = trainer.step().unwrap();
        assert_eq!(fourth.damaged.len(), 3);
        let lowest: Vec<usize> = fourth.batch[1..].to_vec();
        assert!(fourth.damaged.iter().all(|(slot, _)| lowest.contains(slot)));
        assert_eq!(trainer.pool().len(), 16);
        assert!(trainer.pool().entries().iter().all(|g| g.same_shape(&target)));
        assert_eq!(trainer.loss_history().len(), 4);
    }

    #[test]
    fn damage_exclusion_is_respected() {
        let target = disc_target(10, 4.0, [1.0, 1.0, 1.0]);
        let cfg = TrainConfig {
            damage_start_step: 0,
            damage_exclusion: Some(Rect {
                x0: 0,
                y0: 0,
                x1: 9,
                y1: 4,
            }),
            unroll_min: 1,
            unroll_max: 2,
            ..small_cfg()
        };
        let mut trainer = Trainer::new(cfg, target).unwrap();
        for _ in 0..6 {
            let out = trainer.step().unwrap();
            for (_, (_, cy, _)) in out.damaged {
                assert!(cy > 4.0);
            }
        }
        assert!(trainer.step().is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let target = disc_target(8, 3.0, [0.9, 0.4, 0.1]);
        let cfg = TrainConfig {
            unroll_min: 8,
            unroll_max: 12,
            ..small_cfg()
        };
        let a = train(cfg.clone(), &target).unwrap();
        let b = train(cfg, &target).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.1.len(), 6);
        assert!(a.1.iter().all(|&l| l >= 0.0 && l.is_finite()));
    }
}
