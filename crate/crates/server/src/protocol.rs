//! Wire messages. Every message is a JSON object tagged by `"type"`.
//!
//! Client to server:
//!
//! ```json
//! {"type":"input","action":"left"}
//! ```
//!
//! Server to client: `hello` once on connect, then one `frame` per server
//! tick, and an `error` for each rejected client message.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use gnca_core::game::{Bullet, GameState, LossReason, Status};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputAction {
    Left,
    Right,
    Fire,
    Pause,
    Restart,
}

impl InputAction {
    pub const ALL: [InputAction; 5] = [Self::Left, Self::Right, Self::Fire, Self::Pause, Self::Restart];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Left => "left",
            Self::Right => "right",
            Self::Fire => "fire",
            Self::Pause => "pause",
            Self::Restart => "restart",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct InputMessage {
    pub action: InputAction,
}

impl Serialize for InputMessage {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut map = serializer.serialize_map(Some(2))?;
        map.serialize_entry("type", "input")?;
        map.serialize_entry("action", self.action.as_str())?;
        map.end()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecodeError {
    #[error("message is not a JSON object: {0}")]
    Syntax(String),
    #[error("field {field:?}: {reason}")]
    Field { field: &'static str, reason: String },
}

impl DecodeError {
    pub fn field(&self) -> Option<&'static str> {
        match self {
            Self::Syntax(_) => None,
            Self::Field { field, .. } => Some(field),
        }
    }
}

/// Parses a client message. Unknown `type` or `action` values are rejected
/// with the offending field named; extra fields are ignored.
pub fn decode_input(bytes: &[u8]) -> Result<InputMessage, DecodeError> {
    let value: serde_json::Value = serde_json::from_slice(bytes).map_err(|e| DecodeError::Syntax(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| DecodeError::Syntax(format!("expected an object, got {value}")))?;
    let field = |field: &'static str, reason: String| DecodeError::Field { field, reason };
    match obj.get("type") {
        Some(serde_json::Value::String(t)) if t == "input" => {}
        Some(serde_json::Value::String(t)) => return Err(field("type", format!("unknown message type {t:?}"))),
        Some(other) => return Err(field("type", format!("expected a string, got {other}"))),
        None => return Err(field("type", "missing".into())),
    }
    let action = match obj.get("action") {
        Some(serde_json::Value::String(a)) => {
            InputAction::parse(a).ok_or_else(|| field("action", format!("unknown action {a:?}")))?
        }
        Some(other) => return Err(field("action", format!("expected a string, got {other}"))),
        None => return Err(field("action", "missing".into())),
    };
    Ok(InputMessage { action })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameStatus {
    Playing,
    Won,
    Lost,
    Paused,
}

/// The creature's RGBA image and its placement on the field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridImage {
    pub w: usize,
    pub h: usize,
    /// Field column of the grid's left edge.
    pub x: usize,
    /// Field row of the grid's top edge.
    pub y: usize,
    /// Base64 of `w × h × 4` bytes, row-major RGBA.
    pub rgba: String,
}

impl GridImage {
    pub fn decode_rgba(&self) -> Result<Vec<u8>, base64::DecodeError> {
        STANDARD.decode(&self.rgba)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Point {
    pub x: usize,
    pub y: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldInfo {
    pub w: usize,
    pub h: usize,
    pub ship_row: usize,
    pub lose_row: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreatureInfo {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub field: FieldInfo,
    pub creature: CreatureInfo,
    pub tick_hz: u32,
    pub nca_period: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMessage {
    /// Server frame counter; strictly increasing within a connection, also
    /// across pauses and restarts.
    pub tick: u64,
    /// The game's own tick count, which restarts with the game.
    pub game_tick: u64,
    pub status: FrameStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lost_reason: Option<LossReason>,
    pub grid: GridImage,
    pub ship_x: usize,
    pub bullets: Vec<Point>,
    /// Present on the first frame of a connection only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<ConfigEcho>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HelloMessage {
    pub tick_hz: u32,
    pub field: FieldInfo,
    pub creature: CreatureInfo,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorMessage {
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

impl From<&DecodeError> for ErrorMessage {
    fn from(e: &DecodeError) -> Self {
        Self {
            message: e.to_string(),
            field: e.field().map(String::from),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ServerMessage {
    Hello(HelloMessage),
    Frame(FrameMessage),
    Error(ErrorMessage),
}

impl ServerMessage {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages always serialize")
    }
}

pub fn config_echo(state: &GameState, tick_hz: u32) -> ConfigEcho {
    let hello = hello(state, tick_hz);
    ConfigEcho {
        field: hello.field,
        creature: hello.creature,
        tick_hz,
        nca_period: state.config().nca_period,
    }
}

pub fn hello(state: &GameState, tick_hz: u32) -> HelloMessage {
    let c = state.config();
    HelloMessage {
        tick_hz,
        field: FieldInfo {
            w: c.field_width,
            h: c.field_height,
            ship_row: c.ship_row(),
            lose_row: c.lose_row(),
        },
        creature: CreatureInfo {
            x: state.creature_x(),
            y: 0,
            w: c.creature_width,
            h: c.creature_height,
        },
    }
}

/// Snapshot of `state` as a frame.
pub fn encode_frame(state: &GameState, tick: u64, paused: bool, config: Option<ConfigEcho>) -> FrameMessage {
    let creature = state.creature();
    let status = match (paused, state.status()) {
        (true, Status::Playing) => FrameStatus::Paused,
        (_, Status::Playing) => FrameStatus::Playing,
        (_, Status::Won) => FrameStatus::Won,
        (_, Status::Lost) => FrameStatus::Lost,
    };
    FrameMessage {
        tick,
        game_tick: state.tick_count(),
        status,
        lost_reason: state.lost_reason(),
        grid: GridImage {
            w: creature.width(),
            h: creature.height(),
            x: state.creature_x(),
            y: 0,
            rgba: STANDARD.encode(creature.to_rgba().as_raw()),
        },
        ship_x: state.ship_x(),
        bullets: state.bullets().iter().map(|&Bullet { x, y }| Point { x, y }).collect(),
        config,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use gnca_core::game::GameConfig;
    use gnca_core::UpdateRule;
    use rand::SeedableRng;

    #[test]
    fn every_action_round_trips() {
        for action in InputAction::ALL {
            let text = serde_json::to_string(&InputMessage { action }).unwrap();
            assert_eq!(text, format!(r#"{{"type":"input","action":"{}"}}"#, action.as_str()));
            assert_eq!(decode_input(text.as_bytes()).unwrap().action, action);
        }
        let fire = decode_input(br#"{ "action": "fire", "type": "input", "extra": 1 }"#).unwrap();
        assert_eq!(fire.action, InputAction::Fire);
    }

    #[test]
    fn decode_errors_name_the_field() {
        let cases: [(&[u8], Option<&str>); 8] = [
            (b"{not json", None),
            (b"[1,2]", None),
            (br#"{"action":"left"}"#, Some("type")),
            (br#"{"type":"hello","action":"left"}"#, Some("type")),
            (br#"{"type":5,"action":"left"}"#, Some("type")),
            (br#"{"type":"input"}"#, Some("action")),
            (br#"{"type":"input","action":"jump"}"#, Some("action")),
            (br#"{"type":"input","action":["left"]}"#, Some("action")),
        ];
        for (bytes, field) in cases {
            let err = decode_input(bytes).unwrap_err();
            assert_eq!(err.field(), field, "{}", String::from_utf8_lossy(bytes));
            if let Some(f) = field {
                assert!(err.to_string().contains(f));
            }
        }
    }

    #[test]
    fn fresh_default_game_frame() {
        let rule = UpdateRule::init(&mut rand_chacha::ChaCha8Rng::seed_from_u64(1), 8).unwrap();
        let state = GameState::new(GameConfig::default(), &rule, 0).unwrap();
        let frame = encode_frame(&state, 0, false, Some(config_echo(&state, 30)));
        // 40×40 pixels, 4 bytes each.
        assert_eq!(frame.grid.decode_rgba().unwrap().len(), 6400);
        assert_eq!(frame.status, FrameStatus::Playing);
        let json = ServerMessage::Frame(frame.clone()).to_json();
        assert!(json.starts_with(r#"{"type":"frame","tick":0,"#));
        assert!(json.contains(r#""config":{"field":{"w":64,"h":56,"ship_row":55,"lose_row":53}"#));
        assert_eq!(
            serde_json::from_str::<ServerMessage>(&json).unwrap(),
            ServerMessage::Frame(frame)
        );

        let paused = encode_frame(&state, 1, true, None);
        assert_eq!(paused.status, FrameStatus::Paused);
        assert!(!ServerMessage::Frame(paused).to_json().contains("config"));
    }

    #[test]
    fn error_message_shape() {
        let err = decode_input(br#"{"type":"input","action":"jump"}"#).unwrap_err();
        let json = ServerMessage::Error(ErrorMessage::from(&err)).to_json();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["type"], "error");
        assert_eq!(v["field"], "action");
        assert!(v["message"].as_str().unwrap().contains("jump"));
    }
}
