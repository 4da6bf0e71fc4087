//! A fixed 500-request script, driven once in process and once over TCP.

use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::sync::Arc;

use isokv::transport::{decode_request, encode_request, encode_response, ErrorCode, Request, Response, TcpServer};
use isokv::{EngineKind, Key, Server, ServerConfig, Timestamp, Value};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GOLDEN_LEN: usize = 500;
const CONNS: usize = 2;

fn keys() -> Vec<Key> {
    ["x", "y", "z"].iter().map(|k| Key::new(k).unwrap()).collect()
}

/// Drives one server in process and records the request lines and the
/// response lines it produced, per connection.
pub fn golden_script(engine: EngineKind, seed: u64) -> (Vec<(usize, String)>, Vec<String>) {
    let server = Arc::new(Server::new(engine, &keys(), ServerConfig { debug_model: true, max_snapshots: None }));
    let conns: Vec<_> = (0..CONNS).map(|_| server.register_conn()).collect();
    let mut open: Vec<Option<Timestamp>> = vec![None; CONNS];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ks = keys();
    let mut script = Vec::new();
    let mut responses = Vec::new();
    while script.len() < GOLDEN_LEN {
        let c = rng.gen_range(0..CONNS);
        let key = ks[rng.gen_range(0..ks.len())].clone();
        let value = Value::from_int(rng.gen_range(-3..10));
        let line = match (rng.gen_range(0..100), open[c]) {
            (0..=2, _) => "{\"op\":\"frobnicate\"}\n".to_string(),
            (3..=4, _) => "not json\n".to_string(),
            (5..=7, _) => encode_request(&Request::Read { key, ts: Timestamp::new(999).unwrap() }),
            (_, None) => encode_request(&Request::Start),
            (8..=15, Some(_)) => encode_request(&Request::Start),
            (16..=50, Some(ts)) => encode_request(&Request::Read { key, ts }),
            (51..=70, Some(_)) => encode_request(&Request::WriteRu { key, value }),
            (_, Some(ts)) => {
                let n = rng.gen_range(0..3);
                let mut writes: Vec<(Key, Value)> = Vec::new();
                for k in ks.iter().take(n) {
                    writes.push((k.clone(), Value::from_int(rng.gen_range(0..10))));
                }
                encode_request(&Request::Commit { ts, writes })
            }
        };
        let response = match decode_request(&line) {
            Ok(req) => server.handle(conns[c], &req),
            Err(e) => Response::Error { code: ErrorCode::Decode, message: e.to_string() },
        };
        match &response {
            Response::StartTs(ts) => open[c] = Some(*ts),
            Response::CommitResult(_) => open[c] = None,
            _ => {}
        }
        script.push((c, line));
        responses.push(encode_response(&response));
    }
    (script, responses)
}

pub fn replay_over_tcp(engine: EngineKind, script: &[(usize, String)]) -> Vec<String> {
    let server = Arc::new(Server::new(engine, &keys(), ServerConfig { debug_model: true, max_snapshots: None }));
    let handle = TcpServer::bind("127.0.0.1:0", server).unwrap().spawn().unwrap();
    let mut streams: Vec<_> = (0..CONNS)
        .map(|_| {
            let s = TcpStream::connect(handle.addr()).unwrap();
            (s.try_clone().unwrap(), BufReader::new(s))
        })
        .collect();
    let mut out = Vec::new();
    for (c, line) in script {
        let (w, r) = &mut streams[*c];
        w.write_all(line.as_bytes()).unwrap();
        let mut resp = String::new();
        r.read_line(&mut resp).unwrap();
        out.push(resp);
    }
    drop(streams);
    handle.stop().unwrap();
    out
}

/// Runs the golden script for `engine` in process and over TCP and compares
/// the response bytes.
pub fn compare_transports(engine: EngineKind) -> Result<(), String> {
    let (script, expected) = golden_script(engine, 0x5eed);
    if script.len() != GOLDEN_LEN {
        return Err(format!("{engine}: script has {} requests", script.len()));
    }
    // The script must exercise every response shape.
    for needle in ["\"op\":\"start\"", "\"op\":\"read\"", "\"committed\"", "\"code\":\"decode\"", "\"code\":\"unknown_txn\""] {
        if !expected.iter().any(|r| r.contains(needle)) {
            return Err(format!("{engine}: no response containing {needle}"));
        }
    }
    let got = replay_over_tcp(engine, &script);
    if got.len() != expected.len() {
        return Err(format!("{engine}: {} responses over tcp, {} in process", got.len(), expected.len()));
    }
    for (i, (a, b)) in expected.iter().zip(&got).enumerate() {
        if a.as_bytes() != b.as_bytes() {
            return Err(format!("{engine}: response {i} to {:?} differs: {a:?} vs {b:?}", script[i].1));
        }
    }
    Ok(())
}
