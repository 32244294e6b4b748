//! Stability measurements for trained rules: regrowth after damage,
//! long-horizon persistence, and a coarse failure label.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::grid::CellGrid;
use crate::model::UpdateRule;
use crate::train::loss;
use crate::{Error, Result};

/// A damage disc in cell coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Damage {
    pub cx: f32,
    pub cy: f32,
    pub r: f32,
}

impl Damage {
    /// Disc at the center of the target's alpha bounding box with radius
    /// `fraction` of the box diagonal. `None` if the target is empty.
    pub fn centered(target: &CellGrid, fraction: f32) -> Option<Self> {
        let (x0, y0, x1, y1) = target.alpha_bbox()?;
        let (w, h) = ((x1 - x0 + 1) as f32, (y1 - y0 + 1) as f32);
        Some(Self {
            cx: (x0 + x1) as f32 / 2.0,
            cy: (y0 + y1) as f32 / 2.0,
            r: fraction * (w * w + h * h).sqrt(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegenOptions {
    /// Recovered once loss is at most this multiple of the pre-damage loss.
    pub recovery_factor: f32,
    /// Re-apply the same damage every this many horizon steps.
    pub damage_every: Option<usize>,
}

impl Default for RegenOptions {
    fn default() -> Self {
        Self {
            recovery_factor: 2.0,
            damage_every: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegenReport {
    pub pre_damage_loss: f32,
    pub pre_damage_alive: f32,
    /// Loss after each horizon step.
    pub loss_curve: Vec<f32>,
    /// `Some(0)` when the damaged grid is already within the recovery bound,
    /// otherwise the 1-based horizon step at which it first is.
    pub recovery_step: Option<usize>,
    pub alive_curve: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersistenceReport {
    pub warmup_loss: f32,
    pub warmup_alive: f32,
    /// `max(loss_curve) - warmup_loss`, or 0 for an empty horizon.
    pub drift: f32,
    pub loss_curve: Vec<f32>,
    pub alive_curve: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FailureLabel {
    Stable,
    Deformed,
    Overgrown,
    Vanished,
}

impl std::fmt::Display for FailureLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Stable => "stable",
            Self::Deformed => "deformed",
            Self::Overgrown => "overgrown",
            Self::Vanished => "vanished",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub overgrow_alive_fraction: f32,
    pub vanish_alive_fraction: f32,
    /// Deformed when the final loss reaches this multiple of the pre-damage loss.
    pub deform_factor: f32,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            overgrow_alive_fraction: 0.9,
            vanish_alive_fraction: 0.005,
            deform_factor: 4.0,
        }
    }
}

fn alive_fraction(grid: &CellGrid, rule: &UpdateRule) -> f32 {
    grid.alive_mask(rule.alive_threshold()).fraction() as f32
}

fn check_target(target: &CellGrid) -> Result<()> {
    if target.width() < crate::grid::MIN_EDGE || target.height() < crate::grid::MIN_EDGE {
        return Err(Error::InvalidArgument(format!(
            "target {}x{} is too small to hold a seed",
            target.width(),
            target.height()
        )));
    }
    Ok(())
}

fn warm_up<R: RngCore + ?Sized>(rule: &UpdateRule, target: &CellGrid, warmup: usize, rng: &mut R) -> Result<CellGrid> {
    check_target(target)?;
    let seed = CellGrid::seed(target.width(), target.height())?;
    Ok(rule.rollout(&seed, warmup, rng))
}

pub fn eval_regeneration<R: RngCore + ?Sized>(
    rule: &UpdateRule,
    target: &CellGrid,
    damage: Damage,
    warmup: usize,
    horizon: usize,
    rng: &mut R,
) -> Result<RegenReport> {
    eval_regeneration_with(rule, target, damage, warmup, horizon, &RegenOptions::default(), rng)
}

/// Grows from the seed for `warmup` steps, damages, then records loss and
/// alive fraction over `horizon` further steps.
pub fn eval_regeneration_with<R: RngCore + ?Sized>(
    rule: &UpdateRule,
    target: &CellGrid,
    damage: Damage,
    warmup: usize,
    horizon: usize,
    options: &RegenOptions,
    rng: &mut R,
) -> Result<RegenReport> {
    if warmup == 0 || horizon == 0 {
        return Err(Error::InvalidArgument("warmup and horizon must be at least 1".into()));
    }
    if options.damage_every == Some(0) {
        return Err(Error::InvalidArgument("damage_every must be at least 1".into()));
    }
    let grown = warm_up(rule, target, warmup, rng)?;
    let pre_damage_loss = loss(&grown, target)?;
    let pre_damage_alive = alive_fraction(&grown, rule);
    let bound = options.recovery_factor * pre_damage_loss;

    let mut grid = grown.apply_circle_damage(damage.cx, damage.cy, damage.r);
    let mut recovery_step = (loss(&grid, target)? <= bound).then_some(0);
    let mut loss_curve = Vec::with_capacity(horizon);
    let mut alive_curve = Vec::with_capacity(horizon);
    for i in 0..horizon {
        if let Some(k) = options.damage_every {
            if i > 0 && i % k == 0 {
                grid = grid.apply_circle_damage(damage.cx, damage.cy, damage.r);
            }
        }
        grid = rule.step(&grid, rng);
        let l = loss(&grid, target)?;
        if recovery_step.is_none() && l <= bound {
            recovery_step = Some(i + 1);
        }
        loss_curve.push(l);
        alive_curve.push(alive_fraction(&grid, rule));
    }
    Ok(RegenReport {
        pre_damage_loss,
        pre_damage_alive,
        loss_curve,
        recovery_step,
        alive_curve,
    })
}

/// Grows from the seed for `warmup` steps, then runs `horizon` undisturbed
/// steps.
pub fn eval_persistence<R: RngCore + ?Sized>(
    rule: &UpdateRule,
    target: &CellGrid,
    warmup: usize,
    horizon: usize,
    rng: &mut R,
) -> Result<PersistenceReport> {
    let mut grid = warm_up(rule, target, warmup, rng)?;
    let warmup_loss = loss(&grid, target)?;
    let warmup_alive = alive_fraction(&grid, rule);
    let mut loss_curve = Vec::with_capacity(horizon);
    let mut alive_curve = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        grid = rule.step(&grid, rng);
        loss_curve.push(loss(&grid, target)?);
        alive_curve.push(alive_fraction(&grid, rule));
    }
    let drift = loss_curve
        .iter()
        .copied()
        .fold(None, |m: Option<f32>, l| Some(m.map_or(l, |m| m.max(l))));
    Ok(PersistenceReport {
        warmup_loss,
        warmup_alive,
        drift: drift.map_or(0.0, |m| m - warmup_loss),
        loss_curve,
        alive_curve,
    })
}

/// True if `curve` falls to `vanish` or below after first reaching `10 × vanish`.
fn vanishes(start: f32, curve: &[f32], vanish: f32) -> bool {
    let mut populated = false;
    for &a in std::iter::once(&start).chain(curve) {
        if populated && a <= vanish {
            return true;
        }
        populated |= a >= 10.0 * vanish;
    }
    false
}

/// Labels a rule from one regeneration and one persistence run.
/// Precedence: vanished, overgrown, deformed, stable.
pub fn classify(report: &RegenReport, persistence: &PersistenceReport, thresholds: &Thresholds) -> FailureLabel {
    let vanish = thresholds.vanish_alive_fraction;
    if vanishes(report.pre_damage_alive, &report.alive_curve, vanish)
        || vanishes(persistence.warmup_alive, &persistence.alive_curve, vanish)
    {
        return FailureLabel::Vanished;
    }
    let over = thresholds.overgrow_alive_fraction;
    let overgrown = std::iter::once(&report.pre_damage_alive)
        .chain(&report.alive_curve)
        .chain(std::iter::once(&persistence.warmup_alive))
        .chain(&persistence.alive_curve)
        .any(|&a| a >= over);
    if overgrown {
        return FailureLabel::Overgrown;
    }
    let final_loss = report.loss_curve.last().copied().unwrap_or(report.pre_damage_loss);
    // A perfect fit (zero loss before and after) is not a deformation.
    if final_loss > 0.0 && final_loss >= thresholds.deform_factor * report.pre_damage_loss {
        return FailureLabel::Deformed;
    }
    FailureLabel::Stable
}

/// CSV with one row per horizon step of the regeneration curves and, when
/// given, the persistence curves alongside.
pub fn curves_csv(regen: &RegenReport, persistence: Option<&PersistenceReport>) -> String {
    let mut out = String::from("step,regen_loss,regen_alive");
    if persistence.is_some() {
        out.push_str(",persist_loss,persist_alive");
    }
    out.push('\n');
    let rows = regen
        .loss_curve
        .len()
        .max(persistence.map_or(0, |p| p.loss_curve.len()));
    let cell = |v: Option<&f32>| v.map(|v| v.to_string()).unwrap_or_default();
    for i in 0..rows {
        out.push_str(&format!(
            "{},{},{}",
            i + 1,
            cell(regen.loss_curve.get(i)),
            cell(regen.alive_curve.get(i))
        ));
        if let Some(p) = persistence {
            out.push_str(&format!(
                ",{},{}",
                cell(p.loss_curve.get(i)),
                cell(p.alive_curve.get(i))
            ));
        }
        out.push('\n');
    }
    out
}
