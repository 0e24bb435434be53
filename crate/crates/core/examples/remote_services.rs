//! Runs the pipeline against HTTP parser, scorer and generator services.
//! A small in-process server stands in for them: `/parse` answers from the
//! bundled gold trees, `/score` flags copular sentences, and `/generate`
//! wraps the answer span in a fixed question.
//!
//!     cargo run -p defquest --example remote_services

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};

use defquest::corpus::{load_index, load_textbook};
use defquest::pipeline::{ask, Backends, GeneratorChoice, ParserSource, PipelineConfig};
use defquest::selection::ScorerChoice;
use serde_json::{json, Value};

const GOLD: &str = include_str!("../fixtures/biology_gold.conllu");

fn squash(s: &str) -> String {
    s.chars().filter(|c| !c.is_whitespace()).collect()
}

/// Gold CoNLL-U blocks keyed by their `# text` line without whitespace.
fn gold_blocks() -> HashMap<String, String> {
    GOLD.split("\n\n")
        .filter_map(|block| {
            let text = block.lines().find_map(|l| l.strip_prefix("# text = "))?;
            Some((squash(text), format!("{}\n\n", block.trim())))
        })
        .collect()
}

fn respond(path: &str, body: &Value, gold: &HashMap<String, String>) -> (u16, String) {
    let texts = |key: &str| -> Vec<String> {
        body[key]
            .as_array()
            .into_iter()
            .flatten()
            .filter_map(|v| v.as_str().map(String::from))
            .collect()
    };
    match path {
        "/parse" => {
            let blocks: Option<String> = texts("sentences")
                .iter()
                .map(|s| gold.get(&squash(s)).cloned())
                .collect();
            blocks.map_or((422, "unknown sentence".into()), |b| (200, b))
        }
        "/score" => {
            let scores: Vec<f64> = texts("sentences")
                .iter()
                .map(|s| {
                    if [" is ", " refers to ", " defined as "]
                        .iter()
                        .any(|cue| s.contains(cue))
                    {
                        0.9
                    } else {
                        0.2
                    }
                })
                .collect();
            (200, json!({ "scores": scores }).to_string())
        }
        "/generate" => {
            let questions: Vec<String> = texts("inputs")
                .iter()
                .map(|input| {
                    let answer = input.rsplit("[SEP]").next().unwrap_or("").trim();
                    format!("Which term is described as \"{answer}\"?")
                })
                .collect();
            (200, json!({ "questions": questions }).to_string())
        }
        _ => (404, "not found".into()),
    }
}

fn handle(stream: TcpStream, gold: &HashMap<String, String>) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut request_line = String::new();
    reader.read_line(&mut request_line)?;
    let path = request_line.split_whitespace().nth(1).unwrap_or("/").to_string();
    let mut length = 0;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line)?;
        if line.trim().is_empty() {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            if name.eq_ignore_ascii_case("content-length") {
                length = value.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body)?;
    let (status, payload) = respond(&path, &serde_json::from_slice(&body).unwrap_or(Value::Null), gold);
    let mut stream = stream;
    write!(
        stream,
        "HTTP/1.1 {status} X\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{payload}",
        payload.len()
    )
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let base = format!("http://{}", listener.local_addr()?);
    std::thread::spawn(move || {
        let gold = gold_blocks();
        for stream in listener.incoming().flatten() {
            if let Err(e) = handle(stream, &gold) {
                eprintln!("mock service: {e}");
            }
        }
    });

    let book = load_textbook("bio", include_str!("../fixtures/biology_chapter.md"))?;
    let index = load_index(include_str!("../fixtures/biology_index.txt"))?;
    let mut config = PipelineConfig::offline("unused");
    config.parser = ParserSource::Remote { url: base.clone() };
    config.selection.scorer = ScorerChoice::External { url: base.clone() };
    config.generator = GeneratorChoice::External {
        url: base,
        name: Some("mock".into()),
    };
    let run = ask(&book, &index, &config, &Backends::from_config(&config)?)?;
    for q in &run.records {
        println!("{:<14} {}", q.question_id, q.question_text);
    }
    eprintln!("{}", serde_json::to_string(&run.manifest.counts)?);
    Ok(())
}
