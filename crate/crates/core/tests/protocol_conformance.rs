//! Line-protocol conformance: shared request/response vectors against the
//! stub server, and client-side error paths of the line transport.
#![cfg(unix)]

use std::io::{BufRead, BufReader, Write};
use std::os::unix::net::UnixStream;
use std::path::PathBuf;
use std::thread;
use std::time::Duration;

use regrank::gateway::{
    serve_stub, Embedder, Gateway, GatewayError, Handshake, LineTransport, Nli, ScoreResponse, Verb, PROTOCOL_VERSION,
};
use serde_json::Value;

fn vectors() -> Vec<Value> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/protocol_vectors.jsonl");
    std::fs::read_to_string(path).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn spawn_stub() -> UnixStream {
    let (client, server) = UnixStream::pair().unwrap();
    thread::spawn(move || {
        let reader = BufReader::new(server.try_clone().unwrap());
        serve_stub(reader, server).unwrap();
    });
    client
}

#[test]
fn stub_server_answers_every_vector() {
    let mut client = spawn_stub();
    let mut reader = BufReader::new(client.try_clone().unwrap());
    let hello = serde_json::to_string(&Handshake { protocol_version: PROTOCOL_VERSION, capabilities: vec![] }).unwrap();
    writeln!(client, "{hello}").unwrap();
    let mut line = String::new();
    reader.read_line(&mut line).unwrap();
    let reply: Handshake = serde_json::from_str(&line).unwrap();
    assert_eq!(reply.protocol_version, 1);
    assert_eq!(reply.capabilities, Verb::ALL.to_vec());

    for v in vectors() {
        let name = v["name"].as_str().unwrap();
        writeln!(client, "{}", v["line"].as_str().unwrap()).unwrap();
        line.clear();
        reader.read_line(&mut line).unwrap();
        let resp: ScoreResponse = serde_json::from_str(&line).unwrap_or_else(|e| panic!("{name}: {e}: {line}"));
        let expect = &v["expect"];
        assert_eq!(resp.batch_id, expect["batch_id"].as_str().unwrap(), "{name}");
        if let Some(code) = expect.get("error_code") {
            assert_eq!(resp.error.as_ref().map(|e| e.code.as_str()), code.as_str(), "{name}");
            assert!(resp.results.is_empty(), "{name}");
        } else if let Some(shape) = expect.get("shape") {
            assert!(resp.error.is_none(), "{name}");
            assert_eq!(resp.results.len() as u64, shape[0].as_u64().unwrap(), "{name}");
            for r in &resp.results {
                assert_eq!(r.as_array().unwrap().len() as u64, shape[1].as_u64().unwrap(), "{name}");
            }
        } else {
            assert!(resp.error.is_none(), "{name}");
            assert_eq!(&Value::Array(resp.results.clone()), &expect["results"], "{name}");
        }
    }
}

#[test]
fn bad_handshake_is_refused() {
    let mut client = spawn_stub();
    let mut reader = BufReader::new(client.try_clone().unwrap());
    writeln!(client, "{{\"protocol_version\":2,\"capabilities\":[]}}").unwrap();
    let mut line = String::new();
    reader.read_line(&mut line).unwrap();
    let resp: ScoreResponse = serde_json::from_str(&line).unwrap();
    assert_eq!(resp.error.unwrap().code, "handshake");
}

fn transport_over(stream: UnixStream, timeout: Duration) -> Result<LineTransport, GatewayError> {
    LineTransport::connect(Box::new(stream.try_clone().unwrap()), Box::new(stream), timeout)
}

#[test]
fn gateway_round_trip_over_line_protocol() {
    let gw = Gateway::new(Box::new(transport_over(spawn_stub(), Duration::from_secs(5)).unwrap()))
        .with_embed_dim(64)
        .with_max_batch(2);
    let pairs: Vec<(String, String)> = (0..5)
        .map(|i| (format!("sentence {i}"), if i % 2 == 0 { format!("sentence {i}") } else { "other".into() }))
        .collect();
    let scores = gw.nli(&pairs).unwrap();
    assert_eq!(scores.len(), 5);
    for (i, s) in scores.iter().enumerate() {
        assert_eq!(s.entailment == 1.0, i % 2 == 0);
    }
    let texts: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
    let v = gw.embed("bge", &texts).unwrap();
    assert_eq!(v.len(), 3);
    assert!(v.iter().all(|x| x.len() == 64));
    assert!(matches!(
        Gateway::new(Box::new(transport_over(spawn_stub(), Duration::from_secs(5)).unwrap()))
            .with_embed_dim(32)
            .embed("bge", &texts),
        Err(GatewayError::ProtocolViolation(_))
    ));
}

/// A peer that completes the handshake and then runs `after` on each line.
fn scripted_peer(after: impl Fn(&str) -> Option<String> + Send + 'static) -> UnixStream {
    let (client, server) = UnixStream::pair().unwrap();
    thread::spawn(move || {
        let mut w = server.try_clone().unwrap();
        let mut lines = BufReader::new(server).lines();
        lines.next();
        writeln!(w, "{{\"protocol_version\":1,\"capabilities\":[\"nli\",\"rerank\"]}}").unwrap();
        for line in lines {
            let Ok(line) = line else { break };
            if let Some(reply) = after(&line) {
                writeln!(w, "{reply}").unwrap();
            }
        }
    });
    client
}

fn batch_id(line: &str) -> String {
    serde_json::from_str::<Value>(line).unwrap()["batch_id"].as_str().unwrap().to_string()
}

#[test]
fn silent_peer_times_out() {
    let gw = Gateway::new(Box::new(transport_over(scripted_peer(|_| None), Duration::from_millis(100)).unwrap()));
    let err = gw.nli(&[("a".into(), "b".into())]).unwrap_err();
    assert!(matches!(err, GatewayError::Timeout { .. }), "{err:?}");
}

#[test]
fn misaligned_peer_is_a_violation() {
    let peer = scripted_peer(|l| Some(format!("{{\"batch_id\":\"{}\",\"results\":[]}}", batch_id(l))));
    let gw = Gateway::new(Box::new(transport_over(peer, Duration::from_secs(5)).unwrap()));
    assert!(matches!(gw.nli(&[("a".into(), "b".into())]), Err(GatewayError::ProtocolViolation(_))));
}

#[test]
fn invalid_triple_is_a_violation() {
    let peer = scripted_peer(|l| {
        Some(format!(
            "{{\"batch_id\":\"{}\",\"results\":[{{\"entailment\":0.9,\"contradiction\":0.9,\"neutral\":0.0}}]}}",
            batch_id(l)
        ))
    });
    let gw = Gateway::new(Box::new(transport_over(peer, Duration::from_secs(5)).unwrap()));
    assert!(matches!(gw.nli(&[("a".into(), "b".into())]), Err(GatewayError::ProtocolViolation(_))));
}

#[test]
fn remote_error_carries_message() {
    let peer = scripted_peer(|l| {
        Some(format!(
            "{{\"batch_id\":\"{}\",\"error\":{{\"code\":\"oom\",\"message\":\"out of memory\"}}}}",
            batch_id(l)
        ))
    });
    let gw = Gateway::new(Box::new(transport_over(peer, Duration::from_secs(5)).unwrap()));
    match gw.nli(&[("a".into(), "b".into())]) {
        Err(GatewayError::RemoteError { code, message, .. }) => {
            assert_eq!(code, "oom");
            assert_eq!(message, "out of memory");
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn unserved_verb_is_unsupported() {
    let gw = Gateway::new(Box::new(transport_over(scripted_peer(|_| None), Duration::from_secs(5)).unwrap()));
    assert!(matches!(gw.embed("p", &["x".into()]), Err(GatewayError::Unsupported(_))));
}
