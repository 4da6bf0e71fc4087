//! One-line textual framing for requests and responses.
//!
//! Every message is a flat JSON object with its fields in alphabetical order,
//! followed by a single LF:
//!
//! ```text
//! {"op":"start"}
//! {"key":"x","op":"read","ts":3}
//! {"key":"x","op":"write","val":"1"}
//! {"op":"commit","ts":1,"writes":[["x","1"]]}
//!
//! {"ok":true,"op":"start","ts":1}
//! {"ok":true,"op":"read","val":"1"}      ("val":null when absent)
//! {"ok":true,"op":"write"}
//! {"committed":true,"ok":true,"op":"commit"}
//! {"code":"unsupported","msg":"...","ok":false}
//! ```

use serde_json::{json, Map, Value as Json};
use thiserror::Error;

use super::{ErrorCode, Request, Response};
use crate::types::{Key, Timestamp, Value};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("decode error at byte {offset}: {message}")]
pub struct DecodeError {
    pub offset: usize,
    pub message: String,
}

fn line(v: Json) -> String {
    // serde_json's default map is ordered by key, which gives the canonical order.
    let mut s = v.to_string();
    s.push('\n');
    s
}

pub fn encode_request(req: &Request) -> String {
    line(match req {
        Request::Start => json!({"op": "start"}),
        Request::Read { key, ts } => json!({"op": "read", "key": key.as_str(), "ts": ts.get()}),
        Request::WriteRu { key, value } => {
            json!({"op": "write", "key": key.as_str(), "val": value.as_str()})
        }
        Request::Commit { ts, writes } => json!({
            "op": "commit",
            "ts": ts.get(),
            "writes": writes.iter().map(|(k, v)| json!([k.as_str(), v.as_str()])).collect::<Vec<_>>(),
        }),
    })
}

pub fn encode_response(resp: &Response) -> String {
    line(match resp {
        Response::StartTs(ts) => json!({"ok": true, "op": "start", "ts": ts.get()}),
        Response::ReadResult(v) => {
            json!({"ok": true, "op": "read", "val": v.as_ref().map(Value::as_str)})
        }
        Response::Ack => json!({"ok": true, "op": "write"}),
        Response::CommitResult(c) => json!({"committed": c, "ok": true, "op": "commit"}),
        Response::Error { code, message } => {
            json!({"code": code.as_str(), "msg": message, "ok": false})
        }
    })
}

struct Fields {
    map: Map<String, Json>,
    len: usize,
}

impl Fields {
    fn parse(text: &str) -> Result<Self, DecodeError> {
        let body = text.strip_suffix('\n').unwrap_or(text);
        if body.contains('\n') {
            return Err(DecodeError {
                offset: body.find('\n').unwrap_or(0),
                message: "embedded line feed".into(),
            });
        }
        let parsed: Json = serde_json::from_str(body).map_err(|e| DecodeError {
            offset: e.column().saturating_sub(1),
            message: e.to_string(),
        })?;
        match parsed {
            Json::Object(map) => Ok(Fields { map, len: body.len() }),
            _ => Err(DecodeError { offset: 0, message: "expected a JSON object".into() }),
        }
    }

    fn err(&self, message: impl Into<String>) -> DecodeError {
        DecodeError { offset: self.len, message: message.into() }
    }

    fn take(&mut self, name: &str) -> Result<Json, DecodeError> {
        self.map
            .remove(name)
            .ok_or_else(|| self.err(format!("missing field {name:?}")))
    }

    fn str(&mut self, name: &str) -> Result<String, DecodeError> {
        match self.take(name)? {
            Json::String(s) => Ok(s),
            _ => Err(self.err(format!("field {name:?} must be a string"))),
        }
    }

    fn bool(&mut self, name: &str) -> Result<bool, DecodeError> {
        match self.take(name)? {
            Json::Bool(b) => Ok(b),
            _ => Err(self.err(format!("field {name:?} must be a boolean"))),
        }
    }

    fn ts(&mut self, name: &str) -> Result<Timestamp, DecodeError> {
        let n = self
            .take(name)?
            .as_u64()
            .ok_or_else(|| self.err(format!("field {name:?} must be a positive integer")))?;
        Timestamp::new(n).map_err(|e| self.err(e.to_string()))
    }

    fn key(&mut self, name: &str) -> Result<Key, DecodeError> {
        let s = self.str(name)?;
        Key::new(s).map_err(|e| self.err(e.to_string()))
    }

    fn value(&self, s: String) -> Result<Value, DecodeError> {
        Value::new(s).map_err(|e| self.err(e.to_string()))
    }

    fn finish<T>(self, out: T) -> Result<T, DecodeError> {
        match self.map.keys().next() {
            Some(extra) => Err(self.err(format!("unexpected field {extra:?}"))),
            None => Ok(out),
        }
    }
}

pub fn decode_request(text: &str) -> Result<Request, DecodeError> {
    let mut f = Fields::parse(text)?;
    let op = f.str("op")?;
    let req = match op.as_str() {
        "start" => Request::Start,
        "read" => Request::Read { key: f.key("key")?, ts: f.ts("ts")? },
        "write" => {
            let key = f.key("key")?;
            let raw = f.str("val")?;
            Request::WriteRu { key, value: f.value(raw)? }
        }
        "commit" => {
            let ts = f.ts("ts")?;
            let Json::Array(items) = f.take("writes")? else {
                return Err(f.err("field \"writes\" must be an array"));
            };
            let mut writes = Vec::with_capacity(items.len());
            for item in items {
                let pair = match item {
                    Json::Array(pair) => pair,
                    _ => return Err(f.err("each write must be a [key, value] pair")),
                };
                let [Json::String(k), Json::String(v)] = <[Json; 2]>::try_from(pair)
                    .map_err(|_| f.err("each write must be a [key, value] pair"))?
                else {
                    return Err(f.err("write pairs hold two strings"));
                };
                let key = Key::new(k).map_err(|e| f.err(e.to_string()))?;
                if writes.iter().any(|(seen, _): &(Key, Value)| *seen == key) {
                    return Err(f.err(format!("key {key} written twice")));
                }
                writes.push((key, f.value(v)?));
            }
            Request::Commit { ts, writes }
        }
        other => return Err(f.err(format!("unknown op {other:?}"))),
    };
    f.finish(req)
}

pub fn decode_response(text: &str) -> Result<Response, DecodeError> {
    let mut f = Fields::parse(text)?;
    if !f.bool("ok")? {
        let code = f.str("code")?;
        let code = ErrorCode::parse(&code).ok_or_else(|| f.err(format!("unknown error code {code:?}")))?;
        let message = f.str("msg")?;
        return f.finish(Response::Error { code, message });
    }
    let op = f.str("op")?;
    let resp = match op.as_str() {
        "start" => Response::StartTs(f.ts("ts")?),
        "read" => match f.take("val")? {
            Json::Null => Response::ReadResult(None),
            Json::String(s) => Response::ReadResult(Some(f.value(s)?)),
            _ => return Err(f.err("field \"val\" must be a string or null")),
        },
        "write" => Response::Ack,
        "commit" => Response::CommitResult(f.bool("committed")?),
        other => return Err(f.err(format!("unknown op {other:?}"))),
    };
    f.finish(resp)
}
