//! JSON messages exchanged over the WebSocket.

use capsim_core::scenario::{Command, StateFrame};
use serde::{Deserialize, Serialize};

/// Server to client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum ServerMessage {
    State(StateFrame),
    Error { reason: String },
}

impl ServerMessage {
    pub fn error(reason: impl Into<String>) -> Self {
        ServerMessage::Error { reason: reason.into() }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages serialise")
    }
}

/// Client to server: `{"type":"cmd","cmd":"magnet_delta","dx":0.001}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Cmd(Command),
}

pub fn parse_client_message(text: &str) -> Result<ClientMessage, String> {
    serde_json::from_str(text).map_err(|e| format!("malformed message: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_envelope() {
        let m = parse_client_message(r#"{"type":"cmd","cmd":"magnet_delta","dx":0.001}"#).unwrap();
        assert_eq!(m, ClientMessage::Cmd(Command::delta(0.001, 0.0, 0.0)));
        let p = parse_client_message(r#"{"type":"cmd","cmd":"pause"}"#).unwrap();
        assert_eq!(p, ClientMessage::Cmd(Command::Pause));
        let back = serde_json::to_string(&ClientMessage::Cmd(Command::Reset)).unwrap();
        assert_eq!(back, r#"{"type":"cmd","cmd":"reset"}"#);
    }

    #[test]
    fn malformed_messages() {
        for bad in [
            "not json",
            r#"{"cmd":"pause"}"#,
            r#"{"type":"cmd","cmd":"teleport"}"#,
            r#"{"type":"cmd","cmd":"magnet_delta","dx":"far"}"#,
            r#"{"type":"cmd","cmd":"magnet_delta","dw":1}"#,
            r#"{"type":"hello"}"#,
        ] {
            assert!(parse_client_message(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn error_frame() {
        assert_eq!(ServerMessage::error("nope").to_json(), r#"{"type":"error","reason":"nope"}"#);
    }
}
