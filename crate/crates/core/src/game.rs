//! Shooter game against a regenerating automaton.
//!
//! The creature grid sits at the top of the field; the ship moves along the
//! bottom row and fires bullets straight up. A bullet that enters a live cell
//! zeroes it (all 16 channels) and is consumed. Every `nca_period` ticks the
//! creature takes one update step, which may regrow what was shot away.

use std::hash::{DefaultHasher, Hash, Hasher};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::grid::{BinaryStateArray, CellGrid, MIN_EDGE};
use crate::model::UpdateRule;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameConfig {
    pub field_width: usize,
    pub field_height: usize,
    pub creature_width: usize,
    pub creature_height: usize,
    /// Ticks between automaton steps.
    pub nca_period: u64,
    /// Rows per tick.
    pub bullet_speed: usize,
    pub fire_cooldown: u32,
    pub ship_speed: usize,
    /// Defaults to two rows above the ship.
    pub lose_row: Option<usize>,
    pub overgrow_fraction: f32,
    /// Move the whole creature grid one column every this many ticks,
    /// bouncing between the field edges. Off by default.
    pub drift_period: Option<u64>,
    pub rng_seed: u64,
}

impl Default for GameConfig {
    fn default() -> Self {
        Self {
            field_width: 64,
            field_height: 56,
            creature_width: 40,
            creature_height: 40,
            nca_period: 6,
            bullet_speed: 1,
            fire_cooldown: 8,
            ship_speed: 1,
            lose_row: None,
            overgrow_fraction: 0.9,
            drift_period: None,
            rng_seed: 7,
        }
    }
}

impl GameConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidArgument(msg));
        if self.creature_width < MIN_EDGE || self.creature_height < MIN_EDGE {
            return fail(format!("creature grid must be at least {MIN_EDGE}x{MIN_EDGE}"));
        }
        if self.creature_width > self.field_width || self.creature_height >= self.field_height {
            return fail(format!(
                "creature {}x{} does not fit above the ship row of a {}x{} field",
                self.creature_width, self.creature_height, self.field_width, self.field_height
            ));
        }
        if self.nca_period == 0 {
            return fail("nca_period must be at least 1".into());
        }
        if self.bullet_speed == 0 {
            return fail("bullet_speed must be at least 1".into());
        }
        if self.drift_period == Some(0) {
            return fail("drift_period must be at least 1".into());
        }
        if !(self.overgrow_fraction > 0.0 && self.overgrow_fraction <= 1.0) {
            return fail(format!("overgrow_fraction {} outside (0, 1]", self.overgrow_fraction));
        }
        if let Some(row) = self.lose_row {
            if row >= self.field_height {
                return fail(format!("lose_row {row} is outside the field"));
            }
        }
        Ok(())
    }

    pub fn ship_row(&self) -> usize {
        self.field_height - 1
    }

    pub fn lose_row(&self) -> usize {
        self.lose_row.unwrap_or(self.ship_row().saturating_sub(2))
    }

    /// Initial column of the creature grid's left edge.
    pub fn creature_x(&self) -> usize {
        (self.field_width - self.creature_width) / 2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlayerAction {
    Left,
    Right,
    Fire,
    None,
}

impl FromStr for PlayerAction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "left" => Ok(Self::Left),
            "right" => Ok(Self::Right),
            "fire" => Ok(Self::Fire),
            "none" => Ok(Self::None),
            _ => Err(Error::InvalidArgument(format!("unknown action {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Playing,
    Won,
    Lost,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossReason {
    /// A live cell reached the lose row.
    Contact,
    /// The alive fraction reached the overgrowth limit.
    Overgrowth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Bullet {
    pub x: usize,
    pub y: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GameState {
    config: GameConfig,
    tick: u64,
    creature: CellGrid,
    damage_mask: BinaryStateArray,
    creature_x: usize,
    drift_right: bool,
    ship_x: usize,
    cooldown_remaining: u32,
    bullets: Vec<Bullet>,
    status: Status,
    lost_reason: Option<LossReason>,
    rng: ChaCha8Rng,
}

impl GameState {
    /// Grows the creature from the seed for `warmup` steps and places the
    /// ship at the bottom center.
    pub fn new(config: GameConfig, rule: &UpdateRule, warmup: usize) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        let seed = CellGrid::seed(config.creature_width, config.creature_height)?;
        let creature = rule.rollout(&seed, warmup, &mut rng);
        Ok(Self {
            damage_mask: BinaryStateArray::all_alive(config.creature_width, config.creature_height),
            creature_x: config.creature_x(),
            drift_right: true,
            ship_x: config.field_width / 2,
            cooldown_remaining: 0,
            bullets: Vec::new(),
            status: Status::Playing,
            lost_reason: None,
            tick: 0,
            creature,
            rng,
            config,
        })
    }

    pub fn config(&self) -> &GameConfig {
        &self.config
    }

    pub fn tick_count(&self) -> u64 {
        self.tick
    }

    pub fn creature(&self) -> &CellGrid {
        &self.creature
    }

    pub fn damage_mask(&self) -> &BinaryStateArray {
        &self.damage_mask
    }

    /// Field column of the creature grid's left edge.
    pub fn creature_x(&self) -> usize {
        self.creature_x
    }

    pub fn ship_x(&self) -> usize {
        self.ship_x
    }

    pub fn cooldown_remaining(&self) -> u32 {
        self.cooldown_remaining
    }

    pub fn bullets(&self) -> &[Bullet] {
        &self.bullets
    }

    pub fn status(&self) -> Status {
        self.status
    }

    pub fn lost_reason(&self) -> Option<LossReason> {
        self.lost_reason
    }

    pub fn is_terminal(&self) -> bool {
        self.status != Status::Playing
    }

    pub fn alive_count(&self, rule: &UpdateRule) -> usize {
        self.creature.alive_mask(rule.alive_threshold()).count()
    }

    /// Test hook: places a bullet directly.
    pub fn spawn_bullet(&mut self, bullet: Bullet) {
        if bullet.x < self.config.field_width && bullet.y < self.config.field_height {
            self.bullets.push(bullet);
        }
    }

    /// Applies one player action. Ignored once the game is over.
    pub fn handle_input(&mut self, action: PlayerAction) {
        if self.is_terminal() {
            return;
        }
        let c = &self.config;
        match action {
            PlayerAction::Left => self.ship_x = self.ship_x.saturating_sub(c.ship_speed),
            PlayerAction::Right => self.ship_x = (self.ship_x + c.ship_speed).min(c.field_width - 1),
            PlayerAction::Fire => {
                if self.cooldown_remaining == 0 {
                    self.bullets.push(Bullet {
                        x: self.ship_x,
                        y: c.ship_row() - 1,
                    });
                    self.cooldown_remaining = c.fire_cooldown;
                }
            }
            PlayerAction::None => {}
        }
    }

    /// Creature-grid cell under a field position, if any.
    fn creature_cell(&self, x: usize, y: usize) -> Option<(usize, usize)> {
        let cx = x.checked_sub(self.creature_x)?;
        (cx < self.config.creature_width && y < self.config.creature_height).then_some((cx, y))
    }

    /// Advances the game by one tick. Identity once the game is over.
    pub fn tick(&mut self, rule: &UpdateRule) {
        if self.is_terminal() {
            return;
        }
        let threshold = rule.alive_threshold();
        self.cooldown_remaining = self.cooldown_remaining.saturating_sub(1);

        // Bullets fly and hit in index order; a bullet entering several rows
        // this tick checks them bottom to top. A cell is hit when its own α is
        // above the threshold: a dead neighbor of a live cell is counted as
        // alive by the mask but is already empty and does not stop bullets.
        let speed = self.config.bullet_speed;
        let mut kept = Vec::with_capacity(self.bullets.len());
        for b in std::mem::take(&mut self.bullets) {
            let mut hit = false;
            for step in 1..=speed {
                let Some(y) = b.y.checked_sub(step) else { break };
                if let Some((cx, cy)) = self.creature_cell(b.x, y) {
                    if self.damage_mask.get(cx, cy) && self.creature.alpha(cx, cy) > threshold {
                        self.damage_mask.set(cx, cy, false);
                        hit = true;
                        break;
                    }
                }
            }
            if !hit && b.y >= speed {
                kept.push(Bullet { x: b.x, y: b.y - speed });
            }
        }
        self.bullets = kept;

        self.creature = self
            .creature
            .apply_binary_mask(&self.damage_mask)
            .expect("damage mask matches creature shape");
        self.damage_mask.reset();

        if self.tick.is_multiple_of(self.config.nca_period) {
            self.creature = rule.step(&self.creature, &mut self.rng);
        }

        if let Some(period) = self.config.drift_period {
            if (self.tick + 1).is_multiple_of(period) {
                let max_x = self.config.field_width - self.config.creature_width;
                if self.drift_right && self.creature_x == max_x {
                    self.drift_right = false;
                } else if !self.drift_right && self.creature_x == 0 {
                    self.drift_right = true;
                }
                if max_x > 0 {
                    self.creature_x = if self.drift_right {
                        self.creature_x + 1
                    } else {
                        self.creature_x - 1
                    };
                }
            }
        }

        let alive = self.creature.alive_mask(threshold);
        if alive.count() == 0 {
            self.status = Status::Won;
        } else {
            let lose_row = self.config.lose_row();
            let w = self.config.creature_width;
            let contact = alive.bits().iter().enumerate().any(|(i, &a)| a && i / w >= lose_row);
            if contact {
                self.status = Status::Lost;
                self.lost_reason = Some(LossReason::Contact);
            } else if alive.fraction() >= self.config.overgrow_fraction as f64 {
                self.status = Status::Lost;
                self.lost_reason = Some(LossReason::Overgrowth);
            }
        }
        self.tick += 1;
    }

    /// Stable 64-bit digest of the complete state, including the rng
    /// position. Equal states have equal digests.
    pub fn digest(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.tick.hash(&mut h);
        for v in self.creature.data() {
            v.to_bits().hash(&mut h);
        }
        self.damage_mask.values().hash(&mut h);
        (self.creature_x, self.drift_right, self.ship_x, self.cooldown_remaining).hash(&mut h);
        self.bullets.hash(&mut h);
        (self.status, self.lost_reason).hash(&mut h);
        self.rng.get_word_pos().hash(&mut h);
        h.finish()
    }
}

/// Parses an input trace: one line per tick, each holding zero or more
/// whitespace-separated actions applied in order before that tick. Blank
/// lines are ticks without input; `#` starts a comment.
pub fn parse_trace(text: &str) -> Result<Vec<Vec<PlayerAction>>> {
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            let line = line.split('#').next().unwrap_or("");
            line.split_whitespace()
                .map(|tok| {
                    tok.parse()
                        .map_err(|_| Error::InvalidArgument(format!("line {}: unknown action {tok:?}", i + 1)))
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{ALPHA, CHANNELS};

    fn zero_rule() -> UpdateRule {
        UpdateRule::init(&mut ChaCha8Rng::seed_from_u64(0), 8).unwrap()
    }

    fn small() -> GameConfig {
        GameConfig {
            field_width: 12,
            field_height: 14,
            creature_width: 6,
            creature_height: 6,
            ..GameConfig::default()
        }
    }

    /// Replaces the creature with a single opaque cell at `(x, y)`.
    fn lone_cell(g: &mut GameState, x: usize, y: usize) {
        g.creature = CellGrid::zeros(g.config.creature_width, g.config.creature_height);
        g.creature.cell_mut(x, y).fill(1.0);
    }

    #[test]
    fn config_defaults_and_validation() {
        let c = GameConfig::default();
        c.validate().unwrap();
        assert_eq!(c.ship_row(), 55);
        assert_eq!(c.lose_row(), 53);
        assert_eq!(c.creature_x(), 12);
        for bad in [
            GameConfig {
                nca_period: 0,
                ..small()
            },
            GameConfig {
                creature_width: 13,
                ..small()
            },
            GameConfig {
                creature_height: 14,
                ..small()
            },
            GameConfig {
                bullet_speed: 0,
                ..small()
            },
            GameConfig {
                overgrow_fraction: 0.0,
                ..small()
            },
            GameConfig {
                lose_row: Some(14),
                ..small()
            },
            GameConfig {
                drift_period: Some(0),
                ..small()
            },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn fresh_game() {
        let g = GameState::new(small(), &zero_rule(), 0).unwrap();
        assert_eq!(g.creature(), &CellGrid::seed(6, 6).unwrap());
        assert_eq!(g.status(), Status::Playing);
        assert!(!g.is_terminal());
        assert_eq!(g.ship_x(), 6);
        assert!(g.bullets().is_empty());
        assert!(g.damage_mask().values().iter().all(|&v| v));
        assert_eq!(g, GameState::new(small(), &zero_rule(), 0).unwrap());
    }

    #[test]
    fn ship_movement_clamps() {
        let mut g = GameState::new(small(), &zero_rule(), 0).unwrap();
        for _ in 0..20 {
            g.handle_input(PlayerAction::Left);
        }
        assert_eq!(g.ship_x(), 0);
        for _ in 0..20 {
            g.handle_input(PlayerAction::Right);
        }
        assert_eq!(g.ship_x(), 11);
        let before = g.clone();
        g.handle_input(PlayerAction::None);
        assert_eq!(g, before);
    }

    #[test]
    fn fire_respects_cooldown() {
        let rule = zero_rule();
        let mut g = GameState::new(small(), &rule, 0).unwrap();
        g.handle_input(PlayerAction::Fire);
        assert_eq!(g.bullets(), &[Bullet { x: 6, y: 12 }]);
        g.handle_input(PlayerAction::Fire);
        assert_eq!(g.bullets().len(), 1);
        g.tick(&rule);
        g.handle_input(PlayerAction::Fire);
        assert_eq!(g.bullets().len(), 1);
        for _ in 0..7 {
            g.tick(&rule);
        }
        assert_eq!(g.cooldown_remaining(), 0);
        g.handle_input(PlayerAction::Fire);
        assert_eq!(g.bullets().len(), 2);
    }

    #[test]
    fn bullet_hits_cell_above_and_wins() {
        let rule = zero_rule();
        let mut g = GameState::new(small(), &rule, 0).unwrap();
        lone_cell(&mut g, 2, 4);
        // Field column of creature column 2.
        let x = g.creature_x() + 2;
        g.spawn_bullet(Bullet { x, y: 5 });
        g.tick(&rule);
        assert!(g.creature().cell(2, 4).iter().all(|&v| v == 0.0));
        assert!(g.bullets().is_empty());
        assert_eq!(g.status(), Status::Won);
        assert_eq!(g.tick_count(), 1);

        // Terminal states are frozen.
        let frozen = g.clone();
        g.tick(&rule);
        g.handle_input(PlayerAction::Fire);
        assert_eq!(g, frozen);
    }

    #[test]
    fn bullets_pass_dead_cells_and_leave_the_field() {
        let rule = zero_rule();
        let mut g = GameState::new(small(), &rule, 0).unwrap();
        g.spawn_bullet(Bullet { x: 0, y: 2 });
        for _ in 0..2 {
            g.tick(&rule);
        }
        assert_eq!(g.bullets(), &[Bullet { x: 0, y: 0 }]);
        g.tick(&rule);
        assert!(g.bullets().is_empty());
        // The seed block is untouched.
        assert_eq!(g.alive_count(&rule), 9);
    }

    #[test]
    fn fast_bullet_stops_at_first_live_cell() {
        let rule = zero_rule();
        let cfg = GameConfig {
            bullet_speed: 4,
            ..small()
        };
        let mut g = GameState::new(cfg, &rule, 0).unwrap();
        g.creature = CellGrid::zeros(6, 6);
        g.creature.cell_mut(1, 1).fill(1.0);
        g.creature.cell_mut(1, 3).fill(1.0);
        let x = g.creature_x() + 1;
        g.spawn_bullet(Bullet { x, y: 5 });
        g.tick(&rule);
        assert!(g.creature().cell(1, 3).iter().all(|&v| v == 0.0));
        assert_eq!(g.creature().cell(1, 1)[ALPHA], 1.0);
        assert!(g.bullets().is_empty());
        assert_eq!(g.status(), Status::Playing);
    }

    #[test]
    fn halo_cells_do_not_absorb_bullets() {
        let rule = zero_rule();
        let mut g = GameState::new(small(), &rule, 0).unwrap();
        lone_cell(&mut g, 3, 2);
        let x = g.creature_x() + 3;
        g.spawn_bullet(Bullet { x, y: 6 });
        for _ in 0..3 {
            g.tick(&rule);
        }
        // Rows 5, 4, 3 are dead (row 3 is the halo); the live cell remains.
        assert_eq!(g.bullets(), &[Bullet { x, y: 3 }]);
        g.tick(&rule);
        assert_eq!(g.status(), Status::Won);
    }

    #[test]
    fn contact_and_overgrowth_lose() {
        let rule = zero_rule();
        let cfg = GameConfig {
            lose_row: Some(4),
            ..small()
        };
        let mut g = GameState::new(cfg, &rule, 0).unwrap();
        lone_cell(&mut g, 0, 4);
        g.tick(&rule);
        assert_eq!((g.status(), g.lost_reason()), (Status::Lost, Some(LossReason::Contact)));

        let mut g = GameState::new(small(), &rule, 0).unwrap();
        g.creature = CellGrid::zeros(6, 6);
        for y in 0..6 {
            for x in 0..5 {
                g.creature.cell_mut(x, y)[ALPHA] = 1.0;
            }
        }
        g.tick(&rule);
        assert_eq!(
            (g.status(), g.lost_reason()),
            (Status::Lost, Some(LossReason::Overgrowth))
        );
    }

    #[test]
    fn nca_runs_on_period() {
        let mut rule = zero_rule();
        // Uniform positive α growth wherever a step applies.
        let [_, b1, w2] = rule.params_mut();
        b1.fill(1.0);
        w2.fill(0.0);
        w2[ALPHA * 8..ALPHA * 8 + 8].fill(0.01);
        let cfg = GameConfig {
            nca_period: 3,
            ..small()
        };
        let mut g = GameState::new(cfg, &rule, 0).unwrap();
        let mut changed_at = Vec::new();
        for t in 0..7 {
            let before = g.creature().clone();
            g.tick(&rule);
            if g.creature() != &before {
                changed_at.push(t);
            }
        }
        assert_eq!(changed_at, vec![0, 3, 6]);
    }

    #[test]
    fn drift_bounces_between_edges() {
        let rule = zero_rule();
        let cfg = GameConfig {
            field_width: 8,
            drift_period: Some(1),
            ..small()
        };
        let mut g = GameState::new(cfg, &rule, 0).unwrap();
        let mut xs = vec![g.creature_x()];
        for _ in 0..6 {
            g.tick(&rule);
            xs.push(g.creature_x());
        }
        assert_eq!(xs, vec![1, 2, 1, 0, 1, 2, 1]);
    }

    #[test]
    fn digest_tracks_state() {
        let rule = zero_rule();
        let a = GameState::new(small(), &rule, 0).unwrap();
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        b.handle_input(PlayerAction::Left);
        assert_ne!(a.digest(), b.digest());
        let mut c = a.clone();
        c.creature.cell_mut(0, 0)[CHANNELS - 1] = 0.5;
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn trace_parsing() {
        let t = parse_trace("left fire\n\nnone # idle\nright").unwrap();
        assert_eq!(
            t,
            vec![
                vec![PlayerAction::Left, PlayerAction::Fire],
                vec![],
                vec![PlayerAction::None],
                vec![PlayerAction::Right]
            ]
        );
        let err = parse_trace("left\njump").unwrap_err().to_string();
        assert!(err.contains("line 2") && err.contains("jump"));
    }
}
