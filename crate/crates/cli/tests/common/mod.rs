//! Shared fixtures: a loopback chat-completion endpoint driven by a closure
//! and a scripted model that replays oracle decisions.

#![allow(dead_code)]

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::process::{Command, Output};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;

use serde_json::{json, Value};

use seeker_core::agent::{
    assistant_final_content, assistant_step_content, oracle_policy, run_episode, Budget, OracleStyle,
};
use seeker_core::graph::KnowledgeGraph;
use seeker_core::synth::TaskSpec;
use seeker_core::tools::{render_corpus, ObservationConfig, ToolProfile, ToolRegistry};

pub type Responder = Arc<dyn Fn(&Value) -> String + Send + Sync>;

pub struct MockEndpoint {
    pub url: String,
    pub hits: Arc<AtomicUsize>,
}

fn read_request(stream: &mut TcpStream) -> Option<Vec<u8>> {
    let mut reader = BufReader::new(stream.try_clone().ok()?);
    let mut length = None;
    let mut chunked = false;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).ok()? == 0 {
            return None;
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        let lower = line.to_ascii_lowercase();
        if let Some(v) = lower.strip_prefix("content-length:") {
            length = v.trim().parse::<usize>().ok();
        }
        if lower.starts_with("transfer-encoding:") && lower.contains("chunked") {
            chunked = true;
        }
    }
    let mut body = Vec::new();
    if chunked {
        loop {
            let mut size = String::new();
            reader.read_line(&mut size).ok()?;
            let n = usize::from_str_radix(size.trim().split(';').next()?, 16).ok()?;
            let mut chunk = vec![0; n + 2];
            reader.read_exact(&mut chunk).ok()?;
            if n == 0 {
                break;
            }
            body.extend_from_slice(&chunk[..n]);
        }
    } else {
        body.resize(length.unwrap_or(0), 0);
        reader.read_exact(&mut body).ok()?;
    }
    Some(body)
}

/// Serves `POST` requests on a loopback port until the process exits.
pub fn spawn_endpoint(respond: Responder) -> MockEndpoint {
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind loopback");
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = Arc::clone(&hits);
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let respond = Arc::clone(&respond);
            let counter = Arc::clone(&counter);
            thread::spawn(move || {
                let Some(body) = read_request(&mut stream) else { return };
                counter.fetch_add(1, Ordering::SeqCst);
                let request: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
                let reply = respond(&request);
                let payload = json!({
                    "choices": [{"index": 0, "message": {"role": "assistant", "content": reply}}],
                    "usage": {"prompt_tokens": 1, "completion_tokens": 1}
                })
                .to_string();
                let _ = write!(
                    stream,
                    "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                    payload.len(),
                    payload
                );
                let _ = stream.flush();
            });
        }
    });
    MockEndpoint { url, hits }
}

/// Assistant turns the oracle would produce for each question, in order,
/// ending with the answer turn.
pub fn oracle_script(graph: &KnowledgeGraph, tasks: &[TaskSpec]) -> HashMap<String, Vec<String>> {
    let reg = ToolRegistry::simulated(Arc::new(render_corpus(graph)), ToolProfile::V1, ObservationConfig::default());
    let mut script = HashMap::new();
    for t in tasks {
        let mut p = oracle_policy(graph, t, OracleStyle::Direct).expect("certified task");
        let traj = run_episode(t, &mut p, &reg, &Budget::default()).expect("episode");
        let mut turns: Vec<String> =
            traj.steps.iter().map(|s| assistant_step_content(&s.reasoning, &s.action)).collect();
        turns.push(assistant_final_content(&traj.final_reasoning, &traj.answer));
        script.insert(t.question.clone(), turns);
    }
    script
}

/// A responder that picks the turn by counting tool messages so far.
pub fn scripted_model(script: HashMap<String, Vec<String>>) -> Responder {
    Arc::new(move |req: &Value| {
        let msgs = req["messages"].as_array().cloned().unwrap_or_default();
        let question = msgs.iter().find(|m| m["role"] == "user").and_then(|m| m["content"].as_str()).unwrap_or("");
        let k = msgs.iter().filter(|m| m["role"] == "tool").count();
        match script.get(question) {
            Some(turns) => turns[k.min(turns.len() - 1)].clone(),
            None => "I do not know.\n\n<answer>unknown</answer>".to_string(),
        }
    })
}

pub fn seeker() -> Command {
    Command::new(env!("CARGO_BIN_EXE_seeker"))
}

pub fn run_seeker(args: &[&str], cwd: &Path) -> Output {
    seeker().args(args).current_dir(cwd).env("SEEKER_API_KEY", "test-token").output().expect("spawn seeker")
}

pub fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let p = dir.join("pipeline.toml");
    std::fs::write(&p, body).unwrap();
    p
}
