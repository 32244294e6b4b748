//! `gnca`: train, evaluate, play headless, or serve the automaton shooter.

use std::fs;
use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use gnca_core::eval::{
    classify, curves_csv, eval_persistence, eval_regeneration_with, Damage, FailureLabel, PersistenceReport,
    RegenOptions, RegenReport, Thresholds,
};
use gnca_core::game::{parse_trace, GameConfig, GameState, PlayerAction};
use gnca_core::model::DEFAULT_HIDDEN;
use gnca_core::persistence::{load_checkpoint, load_target, save_checkpoint};
use gnca_core::train::{train_with_progress, Rect, TrainConfig};
use gnca_core::UpdateRule;
use gnca_server::ServerSettings;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "gnca",
    version,
    about = "Growing neural cellular automata and a game against them"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an update rule to grow and regrow a target image.
    Train(TrainArgs),
    /// Measure regeneration and persistence of a trained rule.
    Eval(EvalArgs),
    /// Play a game headless from an input trace.
    Run(RunArgs),
    /// Serve games over WebSocket at /game.
    Serve(ServeArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Target PNG (RGBA, at most size×size).
    #[arg(long)]
    target: PathBuf,
    /// Grid edge length in cells.
    #[arg(long, default_value_t = 40)]
    size: usize,
    #[arg(long, default_value_t = 8000)]
    steps: usize,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, default_value_t = 1024)]
    pool: usize,
    #[arg(long, default_value_t = 64)]
    unroll_min: usize,
    #[arg(long, default_value_t = 96)]
    unroll_max: usize,
    /// First training step at which pool entries are damaged.
    #[arg(long, default_value_t = 500)]
    damage_after: usize,
    /// Damaged entries per batch.
    #[arg(long, default_value_t = 3)]
    damaged_per_batch: usize,
    /// Damage radius as a fraction of the target's bounding-box diagonal.
    #[arg(long, default_value_t = 0.25)]
    damage_radius_frac: f32,
    #[arg(long, default_value_t = 2e-3)]
    lr: f32,
    #[arg(long, default_value_t = DEFAULT_HIDDEN)]
    hidden: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value = "model.ncac")]
    out: PathBuf,
    /// Write per-step batch loss as CSV.
    #[arg(long)]
    loss_csv: Option<PathBuf>,
    /// Never center damage inside this inclusive cell rectangle.
    #[arg(long, value_name = "X0,Y0,X1,Y1", value_parser = parse_rect)]
    no_damage_rect: Option<Rect>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, default_value = "model.ncac")]
    model: PathBuf,
    #[arg(long)]
    target: PathBuf,
    #[arg(long, default_value_t = 40)]
    size: usize,
    #[arg(long, default_value_t = 0.25)]
    damage_radius_frac: f32,
    #[arg(long, default_value_t = 100)]
    warmup: usize,
    #[arg(long, default_value_t = 400)]
    horizon: usize,
    /// Re-apply the damage every this many steps of the horizon.
    #[arg(long)]
    damage_every: Option<usize>,
    #[arg(long, default_value_t = 2.0)]
    recovery_factor: f32,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value = "report.json")]
    report: PathBuf,
    /// Write loss and alive-fraction curves as CSV.
    #[arg(long)]
    curves: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct GameArgs {
    #[arg(long, default_value_t = 6)]
    nca_period: u64,
    #[arg(long, default_value_t = 40)]
    creature_size: usize,
    #[arg(long, default_value_t = 64)]
    field_width: usize,
    #[arg(long, default_value_t = 56)]
    field_height: usize,
    #[arg(long, default_value_t = 1)]
    bullet_speed: usize,
    #[arg(long, default_value_t = 8)]
    fire_cooldown: u32,
    #[arg(long, default_value_t = 0.9)]
    overgrow_fraction: f32,
    /// Shift the creature one column every this many ticks.
    #[arg(long)]
    drift_period: Option<u64>,
    /// Automaton steps grown from the seed before play starts.
    #[arg(long, default_value_t = 100)]
    warmup: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

impl GameArgs {
    fn config(&self) -> GameConfig {
        GameConfig {
            field_width: self.field_width,
            field_height: self.field_height,
            creature_width: self.creature_size,
            creature_height: self.creature_size,
            nca_period: self.nca_period,
            bullet_speed: self.bullet_speed,
            fire_cooldown: self.fire_cooldown,
            overgrow_fraction: self.overgrow_fraction,
            drift_period: self.drift_period,
            rng_seed: self.seed,
            ..GameConfig::default()
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, default_value = "model.ncac")]
    model: PathBuf,
    #[arg(long, default_value_t = 2000)]
    ticks: u64,
    /// Input trace (one line of actions per tick) or "none".
    #[arg(long, default_value = "none")]
    script: String,
    #[command(flatten)]
    game: GameArgs,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "model.ncac")]
    model: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
    #[arg(long, default_value_t = 8765)]
    port: u16,
    #[arg(long, default_value_t = 30)]
    tick_hz: u32,
    #[command(flatten)]
    game: GameArgs,
}

fn parse_rect(s: &str) -> Result<Rect, String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [x0, y0, x1, y1] if x0 <= x1 && y0 <= y1 => Ok(Rect { x0, y0, x1, y1 }),
        [_, _, _, _] => Err("expected x0 <= x1 and y0 <= y1".into()),
        _ => Err("expected four comma-separated cell coordinates".into()),
    }
}

fn load_model(path: &Path) -> Result<UpdateRule> {
    load_checkpoint(path).with_context(|| format!("loading model {}", path.display()))
}

fn train(args: TrainArgs) -> Result<()> {
    let target =
        load_target(&args.target, args.size).with_context(|| format!("loading target {}", args.target.display()))?;
    let cfg = TrainConfig {
        total_steps: args.steps,
        batch_size: args.batch,
        pool_size: args.pool,
        unroll_min: args.unroll_min,
        unroll_max: args.unroll_max,
        learning_rate: args.lr,
        damage_start_step: args.damage_after,
        damaged_per_batch: args.damaged_per_batch,
        damage_radius_fraction: args.damage_radius_frac,
        damage_exclusion: args.no_damage_rect,
        hidden_size: args.hidden,
        rng_seed: args.seed,
        ..TrainConfig::default()
    };
    let started = std::time::Instant::now();
    let (rule, losses) = train_with_progress(cfg, &target, |step, loss| {
        if step % 100 == 0 || step + 1 == args.steps {
            log::info!("step {step} loss {loss:.5} ({:.0}s)", started.elapsed().as_secs_f64());
        }
    })?;
    save_checkpoint(&rule, &args.out)?;
    if let Some(path) = &args.loss_csv {
        let mut csv = String::from("step,loss\n");
        for (i, l) in losses.iter().enumerate() {
            csv.push_str(&format!("{i},{l}\n"));
        }
        fs::write(path, csv).with_context(|| format!("writing {}", path.display()))?;
    }
    let tail = &losses[losses.len().saturating_sub(100)..];
    let rolling = if tail.is_empty() {
        None
    } else {
        Some(tail.iter().sum::<f32>() / tail.len() as f32)
    };
    match rolling {
        Some(r) => println!(
            "trained {} steps, final rolling loss {r:.5}, saved {}",
            losses.len(),
            args.out.display()
        ),
        None => println!("trained 0 steps, saved {}", args.out.display()),
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalDocument<'a> {
    model: &'a Path,
    target: &'a Path,
    seed: u64,
    warmup: usize,
    horizon: usize,
    damage: Damage,
    label: FailureLabel,
    regeneration: RegenReport,
    persistence: PersistenceReport,
}

fn eval(args: EvalArgs) -> Result<()> {
    let rule = load_model(&args.model)?;
    let target =
        load_target(&args.target, args.size).with_context(|| format!("loading target {}", args.target.display()))?;
    let damage = Damage::centered(&target, args.damage_radius_frac).context("target image is fully transparent")?;
    let options = RegenOptions {
        recovery_factor: args.recovery_factor,
        damage_every: args.damage_every,
    };
    let regen = eval_regeneration_with(
        &rule,
        &target,
        damage,
        args.warmup,
        args.horizon,
        &options,
        &mut ChaCha8Rng::seed_from_u64(args.seed),
    )?;
    let persistence = eval_persistence(
        &rule,
        &target,
        args.warmup,
        args.horizon,
        &mut ChaCha8Rng::seed_from_u64(args.seed),
    )?;
    let label = classify(&regen, &persistence, &Thresholds::default());
    println!(
        "label {label}; pre-damage loss {:.5}; recovery step {}; drift {:.5}",
        regen.pre_damage_loss,
        regen.recovery_step.map_or("none".to_string(), |s| s.to_string()),
        persistence.drift
    );
    if let Some(path) = &args.curves {
        fs::write(path, curves_csv(&regen, Some(&persistence)))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    let doc = EvalDocument {
        model: &args.model,
        target: &args.target,
        seed: args.seed,
        warmup: args.warmup,
        horizon: args.horizon,
        damage,
        label,
        regeneration: regen,
        persistence,
    };
    let json = serde_json::to_string_pretty(&doc)?;
    fs::write(&args.report, json + "\n").with_context(|| format!("writing {}", args.report.display()))?;
    Ok(())
}

fn run(args: RunArgs) -> Result<()> {
    let rule = load_model(&args.model)?;
    let trace: Vec<Vec<PlayerAction>> = if args.script == "none" {
        Vec::new()
    } else {
        let text = fs::read_to_string(&args.script).with_context(|| format!("reading script {}", args.script))?;
        parse_trace(&text).with_context(|| format!("parsing script {}", args.script))?
    };
    let mut state = GameState::new(args.game.config(), &rule, args.game.warmup)?;
    let cells = (args.game.creature_size * args.game.creature_size) as f64;
    let mut fractions = Vec::new();
    let mut ended_at = None;
    for t in 0..args.ticks {
        for &a in trace.get(t as usize).map(Vec::as_slice).unwrap_or(&[]) {
            state.handle_input(a);
        }
        state.tick(&rule);
        fractions.push(state.alive_count(&rule) as f64 / cells);
        if state.is_terminal() {
            ended_at = Some(state.tick_count());
            break;
        }
    }
    let status = serde_json::to_value(state.status())?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "status {}", status.as_str().unwrap_or("?"))?;
    if let Some(reason) = state.lost_reason() {
        writeln!(
            out,
            "lost_reason {}",
            serde_json::to_value(reason)?.as_str().unwrap_or("?")
        )?;
    }
    match ended_at {
        Some(t) => writeln!(out, "ended_at_tick {t}")?,
        None => writeln!(out, "ticks_played {}", state.tick_count())?,
    }
    if let Some(&last) = fractions.last() {
        let min = fractions.iter().copied().fold(f64::INFINITY, f64::min);
        let max = fractions.iter().copied().fold(0.0, f64::max);
        let mean = fractions.iter().sum::<f64>() / fractions.len() as f64;
        writeln!(
            out,
            "alive_fraction min {min:.4} mean {mean:.4} max {max:.4} final {last:.4}"
        )?;
    }
    Ok(())
}

fn serve(args: ServeArgs) -> Result<()> {
    let rule = load_model(&args.model)?;
    if args.tick_hz == 0 {
        bail!("--tick-hz must be at least 1");
    }
    let settings = ServerSettings {
        warmup: args.game.warmup,
        tick_hz: args.tick_hz,
        ..ServerSettings::new(args.game.config(), rule)
    };
    let addr = SocketAddr::new(args.host, args.port);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(gnca_server::serve(addr, settings, async {
        let _ = tokio::signal::ctrl_c().await;
    }))?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("NCA_LOG_LEVEL", "info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Run(a) => run(a),
        Command::Serve(a) => serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
