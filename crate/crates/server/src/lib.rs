//! WebSocket server for the automaton shooter.
//!
//! Each connection to `/game` gets its own game. A per-connection loop ticks
//! at a fixed rate: it applies queued inputs in arrival order, advances the
//! game unless paused, and offers a frame to the writer. The writer queue is
//! small and frames that do not fit are dropped, so a slow client never
//! holds up the loop.

pub mod protocol;

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use axum::Router;
use futures_util::{SinkExt, StreamExt};
use gnca_core::game::{GameConfig, GameState, PlayerAction};
use gnca_core::UpdateRule;
use tokio::net::TcpListener;
use tokio::sync::mpsc;
use tokio::time::MissedTickBehavior;

use protocol::{config_echo, decode_input, encode_frame, hello, ErrorMessage, InputAction, ServerMessage};

/// Frames buffered per client before new ones are dropped.
const OUTBOUND_CAPACITY: usize = 8;
/// Inputs buffered between ticks before new ones are dropped.
const INPUT_CAPACITY: usize = 1024;

#[derive(Debug, Clone)]
pub struct ServerSettings {
    pub game: GameConfig,
    pub rule: UpdateRule,
    /// Automaton steps before the first frame.
    pub warmup: usize,
    pub tick_hz: u32,
}

impl ServerSettings {
    pub fn new(game: GameConfig, rule: UpdateRule) -> Self {
        Self {
            game,
            rule,
            warmup: 0,
            tick_hz: 30,
        }
    }

    fn validate(&self) -> gnca_core::Result<()> {
        self.game.validate()?;
        if self.tick_hz == 0 {
            return Err(gnca_core::Error::InvalidArgument("tick_hz must be at least 1".into()));
        }
        Ok(())
    }
}

pub fn router(settings: ServerSettings) -> gnca_core::Result<Router> {
    settings.validate()?;
    Ok(Router::new()
        .route("/game", get(upgrade))
        .with_state(Arc::new(settings)))
}

/// Serves on an already bound listener until `shutdown` resolves.
pub async fn serve_with_shutdown(
    listener: TcpListener,
    settings: ServerSettings,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let app = router(settings).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, e.to_string()))?;
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await
}

/// Binds `addr` and serves until `shutdown` resolves.
pub async fn serve(
    addr: SocketAddr,
    settings: ServerSettings,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let listener = TcpListener::bind(addr).await?;
    log::info!("listening on ws://{}/game", listener.local_addr()?);
    serve_with_shutdown(listener, settings, shutdown).await
}

async fn upgrade(ws: WebSocketUpgrade, State(settings): State<Arc<ServerSettings>>) -> Response {
    ws.on_upgrade(move |socket| session(socket, settings))
}

fn player_action(action: InputAction) -> Option<PlayerAction> {
    match action {
        InputAction::Left => Some(PlayerAction::Left),
        InputAction::Right => Some(PlayerAction::Right),
        InputAction::Fire => Some(PlayerAction::Fire),
        InputAction::Pause | InputAction::Restart => None,
    }
}

async fn session(socket: WebSocket, settings: Arc<ServerSettings>) {
    let new_game = || GameState::new(settings.game.clone(), &settings.rule, settings.warmup);
    let mut state = match new_game() {
        Ok(s) => s,
        Err(e) => {
            log::error!("cannot start game: {e}");
            return;
        }
    };
    log::info!("client connected");
    let (mut sink, mut stream) = socket.split();
    let (out_tx, mut out_rx) = mpsc::channel::<String>(OUTBOUND_CAPACITY);
    let (in_tx, mut in_rx) = mpsc::channel::<InputAction>(INPUT_CAPACITY);

    let writer = tokio::spawn(async move {
        while let Some(text) = out_rx.recv().await {
            if sink.send(Message::Text(text.into())).await.is_err() {
                break;
            }
        }
        let _ = sink.close().await;
    });

    let errors = out_tx.clone();
    let reader = tokio::spawn(async move {
        while let Some(msg) = stream.next().await {
            let bytes = match msg {
                Ok(Message::Text(t)) => t.as_bytes().to_vec(),
                Ok(Message::Binary(b)) => b.to_vec(),
                Ok(Message::Close(_)) | Err(_) => break,
                Ok(_) => continue,
            };
            match decode_input(&bytes) {
                Ok(input) => {
                    if in_tx.try_send(input.action).is_err() {
                        log::debug!("input queue full, dropping {:?}", input.action);
                    }
                }
                Err(e) => {
                    log::debug!("rejected client message: {e}");
                    let reply = ServerMessage::Error(ErrorMessage::from(&e)).to_json();
                    if errors.send(reply).await.is_err() {
                        break;
                    }
                }
            }
        }
    });

    if out_tx
        .send(ServerMessage::Hello(hello(&state, settings.tick_hz)).to_json())
        .await
        .is_err()
    {
        reader.abort();
        return;
    }

    let mut interval = tokio::time::interval(Duration::from_secs_f64(1.0 / settings.tick_hz as f64));
    interval.set_missed_tick_behavior(MissedTickBehavior::Skip);
    let mut paused = false;
    let mut frame_no = 0u64;
    'session: loop {
        interval.tick().await;
        loop {
            match in_rx.try_recv() {
                Ok(InputAction::Pause) => paused = !paused,
                Ok(InputAction::Restart) => {
                    state = new_game().expect("settings were validated");
                    paused = false;
                }
                Ok(action) => {
                    if !paused {
                        state.handle_input(player_action(action).expect("movement or fire"));
                    }
                }
                Err(mpsc::error::TryRecvError::Empty) => break,
                Err(mpsc::error::TryRecvError::Disconnected) => break 'session,
            }
        }
        if !paused {
            state.tick(&settings.rule);
        }
        let echo = (frame_no == 0).then(|| config_echo(&state, settings.tick_hz));
        let frame = ServerMessage::Frame(encode_frame(&state, frame_no, paused, echo)).to_json();
        frame_no += 1;
        match out_tx.try_send(frame) {
            Ok(()) => {}
            Err(mpsc::error::TrySendError::Full(_)) => log::trace!("client behind, frame {frame_no} dropped"),
            Err(mpsc::error::TrySendError::Closed(_)) => break,
        }
    }
    drop(out_tx);
    reader.abort();
    let _ = writer.await;
    log::info!("client disconnected after {frame_no} frames");
}
