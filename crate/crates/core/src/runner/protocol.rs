//! Newline-delimited JSON wire protocol between the harness and a model.
//!
//! Every message is one line of canonical JSON (sorted keys, floats with 17
//! significant digits) with a `type` tag:
//!
//! ```text
//! -> {"id":0,"protocol":"bctrust/1","type":"handshake"}
//! <- {"id":0,"metadata":{...},"type":"handshake_reply"}
//! -> {"id":1,"inputs":[<DataPoint>...],"seed":7,"type":"eval"}
//! <- {"id":1,"outputs":[<Value>...],"type":"result"}
//! -> {"id":2,"points":[<DataPoint>...],"type":"loglik"}
//! <- {"id":2,"type":"loglik_reply","value":-9.1893853320467278e-1}
//! <- {"code":"Unsupported","id":2,"message":"...","type":"error"}
//! -> {"type":"shutdown"}
//! ```
//!
//! The harness sends one request at a time and expects exactly one reply
//! carrying the same `id`. `error` replies may answer any request.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{Model, ModelMetadata};
use crate::canonical;
use crate::data::{DataPoint, Value};
use crate::error::{Error, Result};

pub const PROTOCOL_VERSION: &str = "bctrust/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    Handshake { id: u64, protocol: String },
    HandshakeReply { id: u64, metadata: ModelMetadata },
    Eval { id: u64, inputs: Vec<DataPoint>, seed: u64 },
    Result { id: u64, outputs: Vec<Value> },
    Loglik { id: u64, points: Vec<DataPoint> },
    /// `None` encodes a non-finite log-density.
    LoglikReply { id: u64, value: Option<f64> },
    Error { id: u64, code: String, message: String },
    Shutdown,
}

impl Message {
    pub fn id(&self) -> Option<u64> {
        match self {
            Message::Handshake { id, .. }
            | Message::HandshakeReply { id, .. }
            | Message::Eval { id, .. }
            | Message::Result { id, .. }
            | Message::Loglik { id, .. }
            | Message::LoglikReply { id, .. }
            | Message::Error { id, .. } => Some(*id),
            Message::Shutdown => None,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Message::Handshake { .. } => "handshake",
            Message::HandshakeReply { .. } => "handshake_reply",
            Message::Eval { .. } => "eval",
            Message::Result { .. } => "result",
            Message::Loglik { .. } => "loglik",
            Message::LoglikReply { .. } => "loglik_reply",
            Message::Error { .. } => "error",
            Message::Shutdown => "shutdown",
        }
    }

    /// One canonical line, without the trailing newline.
    pub fn encode(&self) -> Result<String> {
        canonical::to_string(self)
    }

    pub fn decode(line: &str) -> Result<Message> {
        serde_json::from_str(line.trim_end()).map_err(|e| Error::Protocol(format!("malformed message: {e}")))
    }
}

fn error_reply(id: u64, err: &Error) -> Message {
    Message::Error { id, code: err.code().to_owned(), message: err.to_string() }
}

/// Answer one request on behalf of `model`. Returns `None` for shutdown.
pub fn respond(model: &mut dyn Model, request: Message) -> Option<Message> {
    Some(match request {
        Message::Handshake { id, protocol } => {
            if protocol == PROTOCOL_VERSION {
                Message::HandshakeReply { id, metadata: model.metadata() }
            } else {
                error_reply(id, &Error::Protocol(format!("unsupported protocol `{protocol}`")))
            }
        }
        Message::Eval { id, inputs, seed } => match model.eval(&inputs, seed) {
            Ok(outputs) => Message::Result { id, outputs },
            Err(e) => error_reply(id, &e),
        },
        Message::Loglik { id, points } => match model.log_likelihood(&points) {
            Ok(v) => Message::LoglikReply { id, value: v.is_finite().then_some(v) },
            Err(e) => error_reply(id, &e),
        },
        Message::Shutdown => return None,
        reply => {
            let id = reply.id().unwrap_or(0);
            error_reply(id, &Error::Protocol(format!("`{}` is not a request", reply.kind())))
        }
    })
}

/// Serve `model` over a line-oriented stream until shutdown or end of input.
/// Unparseable lines get an `error` reply with id 0.
pub fn serve(model: &mut dyn Model, input: impl BufRead, mut output: impl Write) -> Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match Message::decode(&line) {
            Ok(request) => match respond(model, request) {
                Some(reply) => reply,
                None => break,
            },
            Err(e) => error_reply(0, &e),
        };
        writeln!(output, "{}", reply.encode()?)?;
        output.flush()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runner::builtin::BuiltinModel;
    use serde_json::json;

    fn run(model: &mut dyn Model, lines: &[&str]) -> Vec<Message> {
        let input = lines.join("\n");
        let mut out = Vec::new();
        serve(model, input.as_bytes(), &mut out).unwrap();
        String::from_utf8(out).unwrap().lines().map(|l| Message::decode(l).unwrap()).collect()
    }

    #[test]
    fn every_request_gets_one_reply_with_its_id() {
        let mut m = BuiltinModel::parse("linear", &json!({"weights": [1.0, 2.0]})).unwrap();
        let eval = Message::Eval { id: 7, inputs: vec![DataPoint::from_numbers(&[3.0, 4.0])], seed: 1 }.encode().unwrap();
        let hs = Message::Handshake { id: 3, protocol: PROTOCOL_VERSION.into() }.encode().unwrap();
        let replies = run(&mut m, &[&hs, &eval]);
        assert_eq!(replies.len(), 2);
        assert!(matches!(&replies[0], Message::HandshakeReply { id: 3, .. }));
        assert_eq!(replies[1], Message::Result { id: 7, outputs: vec![Value::Number(11.0)] });
    }

    #[test]
    fn shutdown_stops_serving() {
        let mut m = BuiltinModel::parse("mean_aggregator", &json!({})).unwrap();
        let eval = Message::Eval { id: 1, inputs: vec![], seed: 0 }.encode().unwrap();
        let replies = run(&mut m, &[r#"{"type":"shutdown"}"#, &eval]);
        assert!(replies.is_empty());
    }

    #[test]
    fn malformed_lines_and_replies_get_error_messages() {
        let mut m = BuiltinModel::parse("mean_aggregator", &json!({})).unwrap();
        let replies = run(&mut m, &["not json", r#"{"type":"result","id":4,"outputs":[]}"#]);
        assert!(matches!(&replies[0], Message::Error { id: 0, code, .. } if code == "ProtocolError"));
        assert!(matches!(&replies[1], Message::Error { id: 4, .. }));
    }

    #[test]
    fn loglik_unsupported_is_an_error_reply() {
        let mut m = BuiltinModel::parse("mean_aggregator", &json!({})).unwrap();
        let req = Message::Loglik { id: 2, points: vec![DataPoint::from_numbers(&[0.0])] }.encode().unwrap();
        let replies = run(&mut m, &[&req]);
        assert!(matches!(&replies[0], Message::Error { id: 2, code, .. } if code == "Unsupported"));
    }

    #[test]
    fn encoded_numbers_have_fixed_precision() {
        let line = Message::Result { id: 1, outputs: vec![Value::Number(0.5)] }.encode().unwrap();
        assert_eq!(line, r#"{"id":1,"outputs":[5.0000000000000000e-1],"type":"result"}"#);
    }
}
