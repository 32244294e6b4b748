#![allow(dead_code)]

use std::net::SocketAddr;
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use gnca_core::game::GameConfig;
use gnca_core::UpdateRule;
use gnca_server::protocol::ServerMessage;
use gnca_server::{serve_with_shutdown, ServerSettings};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tokio::net::TcpStream;
use tokio::sync::oneshot;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};

pub type Client = WebSocketStream<MaybeTlsStream<TcpStream>>;

pub fn small_rule() -> UpdateRule {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut uniform = |n: usize, s: f32| (0..n).map(|_| rng.random_range(-s..s)).collect::<Vec<f32>>();
    UpdateRule::from_parts(
        8,
        uniform(8 * 48, 0.3),
        uniform(8, 0.1),
        uniform(16 * 8, 0.02),
        0.5,
        0.1,
    )
    .unwrap()
}

pub fn small_settings(tick_hz: u32) -> ServerSettings {
    let game = GameConfig {
        field_width: 20,
        field_height: 20,
        creature_width: 10,
        creature_height: 10,
        ..GameConfig::default()
    };
    ServerSettings {
        warmup: 5,
        tick_hz,
        ..ServerSettings::new(game, small_rule())
    }
}

pub struct Running {
    pub addr: SocketAddr,
    pub stop: Option<oneshot::Sender<()>>,
    pub task: tokio::task::JoinHandle<std::io::Result<()>>,
}

impl Running {
    pub async fn shutdown(mut self) -> std::io::Result<()> {
        let _ = self.stop.take().unwrap().send(());
        self.task.await.unwrap()
    }
}

pub async fn start(settings: ServerSettings) -> Running {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let (tx, rx) = oneshot::channel();
    let task = tokio::spawn(serve_with_shutdown(listener, settings, async {
        let _ = rx.await;
    }));
    Running {
        addr,
        stop: Some(tx),
        task,
    }
}

pub async fn connect(addr: SocketAddr) -> Client {
    let (ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/game"))
        .await
        .unwrap();
    ws
}

/// Next server message, skipping control frames.
pub async fn next_message(ws: &mut Client) -> ServerMessage {
    loop {
        let msg = tokio::time::timeout(Duration::from_secs(5), ws.next())
            .await
            .expect("server went quiet")
            .expect("stream ended")
            .expect("socket error");
        if let Message::Text(t) = msg {
            return serde_json::from_str(&t).unwrap_or_else(|e| panic!("bad server message {t}: {e}"));
        }
    }
}

pub async fn send_text(ws: &mut Client, text: &str) {
    ws.send(Message::Text(text.into())).await.unwrap();
}
