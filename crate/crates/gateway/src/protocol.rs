//! Wire schema. Every message is a JSON object with a protocol version `v`
//! and a `type` tag.

use serde::{Deserialize, Serialize};
use taskcomm::{Action, BeliefSnapshot, Observation, PlanStats, TaskHypothesis, TraceRecord, WorldState};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    StartTrial {
        #[serde(default)]
        card: Option<TaskHypothesis>,
    },
    Spacebar {
        client_time: f64,
    },
    Reset,
    Report {
        correct: bool,
        intelligence: u8,
    },
}

/// A trace record without ground truth, plus how many presses this tick
/// acknowledges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickMessage {
    pub tick: u32,
    pub action: Option<Action>,
    pub observation: Observation,
    pub world: WorldState,
    pub belief: BeliefSnapshot,
    pub plan: Option<PlanStats>,
    pub press_acknowledged: bool,
    pub presses_acknowledged: u32,
}

impl TickMessage {
    pub fn new(r: &TraceRecord, presses: u32) -> Self {
        TickMessage {
            tick: r.tick,
            action: r.action,
            observation: r.observation,
            world: r.world,
            belief: r.belief.clone(),
            plan: r.plan,
            press_acknowledged: presses > 0,
            presses_acknowledged: presses,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub trial_id: String,
    pub card: TaskHypothesis,
    pub final_task: Option<TaskHypothesis>,
    /// Whether the declared task matches the card.
    pub correct: Option<bool>,
    pub ticks_to_final: Option<u32>,
    pub seconds_to_final: Option<f64>,
    pub presses: usize,
    pub aborted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    TrialStarted { trial_id: String, card: TaskHypothesis },
    Tick(Box<TickMessage>),
    Final { task: TaskHypothesis },
    TrialEnded { summary: TrialSummary },
    Error { code: String, detail: String },
}

impl ServerMessage {
    pub fn error(code: &str, detail: impl Into<String>) -> Self {
        ServerMessage::Error {
            code: code.to_string(),
            detail: detail.into(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    v: u32,
    #[serde(flatten)]
    body: T,
}

pub fn encode(msg: &ServerMessage) -> String {
    serde_json::to_string(&Envelope {
        v: PROTOCOL_VERSION,
        body: msg,
    })
    .expect("server messages serialize")
}

/// Parses a client message, returning the error reply for bad input.
pub fn decode(text: &str) -> Result<ClientMessage, ServerMessage> {
    #[derive(Deserialize)]
    struct Version {
        v: Option<u32>,
    }
    let version: Version =
        serde_json::from_str(text).map_err(|e| ServerMessage::error("malformed_message", e.to_string()))?;
    match version.v {
        Some(PROTOCOL_VERSION) => {}
        Some(v) => {
            return Err(ServerMessage::error(
                "unsupported_version",
                format!("protocol version {v} is not supported, expected {PROTOCOL_VERSION}"),
            ))
        }
        None => {
            return Err(ServerMessage::error(
                "malformed_message",
                "missing protocol version `v`",
            ))
        }
    }
    let env: Envelope<ClientMessage> =
        serde_json::from_str(text).map_err(|e| ServerMessage::error("malformed_message", e.to_string()))?;
    if let ClientMessage::Report { intelligence, .. } = env.body {
        if !(1..=10).contains(&intelligence) {
            return Err(ServerMessage::error(
                "malformed_message",
                format!("intelligence {intelligence} is outside 1..=10"),
            ));
        }
    }
    Ok(env.body)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn client_messages_parse() {
        assert_eq!(
            decode(r#"{"v":1,"type":"start_trial"}"#).unwrap(),
            ClientMessage::StartTrial { card: None }
        );
        let card = decode(r#"{"v":1,"type":"start_trial","card":{"mov":1,"wrt":2,"dist":4}}"#).unwrap();
        let ClientMessage::StartTrial { card: Some(h) } = card else {
            panic!()
        };
        assert_eq!(h.to_string(), "(1,2,4)");
        assert_eq!(
            decode(r#"{"v":1,"type":"spacebar","client_time":12.5}"#).unwrap(),
            ClientMessage::Spacebar { client_time: 12.5 }
        );
        assert_eq!(decode(r#"{"v":1,"type":"reset"}"#).unwrap(), ClientMessage::Reset);
        assert_eq!(
            decode(r#"{"v":1,"type":"report","correct":true,"intelligence":7}"#).unwrap(),
            ClientMessage::Report {
                correct: true,
                intelligence: 7
            }
        );
    }

    fn code(r: Result<ClientMessage, ServerMessage>) -> String {
        match r {
            Err(ServerMessage::Error { code, .. }) => code,
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_input_is_reported() {
        assert_eq!(code(decode("not json")), "malformed_message");
        assert_eq!(code(decode(r#"{"type":"reset"}"#)), "malformed_message");
        assert_eq!(code(decode(r#"{"v":2,"type":"reset"}"#)), "unsupported_version");
        assert_eq!(code(decode(r#"{"v":1,"type":"dance"}"#)), "malformed_message");
        assert_eq!(
            code(decode(
                r#"{"v":1,"type":"start_trial","card":{"mov":1,"wrt":1,"dist":4}}"#
            )),
            "malformed_message"
        );
        assert_eq!(
            code(decode(r#"{"v":1,"type":"report","correct":true,"intelligence":11}"#)),
            "malformed_message"
        );
    }

    #[test]
    fn server_messages_carry_version_and_tag() {
        let s = encode(&ServerMessage::error("no_active_trial", "x"));
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v["v"], 1);
        assert_eq!(v["type"], "error");
        assert_eq!(v["code"], "no_active_trial");
        let f = encode(&ServerMessage::Final {
            task: TaskHypothesis::from_index(0),
        });
        assert_eq!(f, r#"{"v":1,"type":"final","task":{"mov":1,"wrt":2,"dist":1}}"#);
    }
}
