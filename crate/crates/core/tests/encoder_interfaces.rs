//! Wire-level checks of the `/encode` client and of caches produced outside
//! this crate.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use molabel::chunker::Field;
use molabel::embedder::{
    encode_batch, mock_encode, read_records, EmbedError, EmbeddingCache, EncoderBackend, HttpBackend, MockBackend,
};
use molabel::features::Variant;
use molabel::pipeline::{BackendKind, Pipeline, PipelineConfig, PipelineError, EXIT_BACKEND, EXIT_VALIDATION};
use molabel::synth::{generate, SynthSpec};
use serde_json::{json, Value};

#[derive(Clone, Copy)]
enum Behaviour {
    Serve { max_batch: usize, dimension: usize },
    Fail(u16),
}

struct FakeSidecar {
    url: String,
    batches: Arc<Mutex<Vec<usize>>>,
}

fn read_request(stream: &mut TcpStream) -> Option<Value> {
    let mut reader = BufReader::new(stream.try_clone().ok()?);
    let mut len = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).ok()? == 0 {
            return None;
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                len = v.trim().parse().ok()?;
            }
        }
    }
    let mut body = vec![0u8; len];
    reader.read_exact(&mut body).ok()?;
    serde_json::from_slice(&body).ok()
}

fn respond(stream: &mut TcpStream, status: u16, body: &str) {
    let reason = match status {
        200 => "OK",
        413 => "Payload Too Large",
        _ => "Error",
    };
    let _ = write!(
        stream,
        "HTTP/1.1 {status} {reason}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
        body.len()
    );
    let _ = stream.flush();
}

/// Serves `/encode` with the mock encoder, refusing batches above `max_batch`.
fn spawn(behaviour: Behaviour) -> FakeSidecar {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let batches = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&batches);
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let Some(req) = read_request(&mut stream) else { continue };
            let texts: Vec<String> = serde_json::from_value(req["texts"].clone()).unwrap();
            let prefix = req["prefix"].as_str().unwrap().to_string();
            match behaviour {
                Behaviour::Fail(code) => respond(&mut stream, code, r#"{"error":"boom"}"#),
                Behaviour::Serve { max_batch, .. } if texts.len() > max_batch => {
                    respond(&mut stream, 413, &json!({ "max_batch": max_batch }).to_string())
                }
                Behaviour::Serve { dimension, .. } => {
                    log.lock().unwrap().push(texts.len());
                    let embeddings: Vec<Vec<f32>> = texts.iter().map(|t| mock_encode(&format!("{prefix}{t}"), 8)).collect();
                    respond(&mut stream, 200, &json!({ "dimension": dimension, "embeddings": embeddings }).to_string());
                }
            }
        }
    });
    FakeSidecar { url, batches }
}

fn client(url: &str) -> HttpBackend {
    HttpBackend::new(url, 8, true, Duration::from_secs(10))
}

#[test]
fn http_backend_matches_mock_reference() {
    let server = spawn(Behaviour::Serve { max_batch: 1000, dimension: 8 });
    let texts: Vec<String> = (0..300).map(|i| format!("title {i}")).collect();
    let got = encode_batch(&client(&server.url), &texts, "query: ", 256).unwrap();
    let want = encode_batch(&MockBackend::new(8), &texts, "query: ", 256).unwrap();
    assert_eq!(got, want);
    assert_eq!(*server.batches.lock().unwrap(), vec![256, 44]);
}

#[test]
fn payload_too_large_halves_the_batch() {
    let server = spawn(Behaviour::Serve { max_batch: 50, dimension: 8 });
    let texts: Vec<String> = (0..300).map(|i| format!("chunk number {i}")).collect();
    let got = encode_batch(&client(&server.url), &texts, "query: ", 256).unwrap();
    let want = encode_batch(&MockBackend::new(8), &texts, "query: ", 256).unwrap();
    assert_eq!(got, want);
    let served = server.batches.lock().unwrap().clone();
    assert!(served.iter().all(|&n| n <= 50), "{served:?}");
    assert_eq!(served.iter().sum::<usize>(), 300);
}

#[test]
fn single_text_413_is_an_error() {
    let server = spawn(Behaviour::Serve { max_batch: 0, dimension: 8 });
    let err = client(&server.url).encode(&["a"], "query: ").unwrap_err();
    assert!(matches!(err, EmbedError::BackendUnavailable(ref m) if m.contains("413")), "{err}");
}

#[test]
fn server_errors_and_wrong_dimension() {
    let server = spawn(Behaviour::Fail(503));
    let err = client(&server.url).encode(&["a"], "query: ").unwrap_err();
    assert!(matches!(err, EmbedError::BackendUnavailable(ref m) if m.contains("503")), "{err}");

    let server = spawn(Behaviour::Serve { max_batch: 10, dimension: 16 });
    let err = client(&server.url).encode(&["a"], "query: ").unwrap_err();
    assert!(matches!(err, EmbedError::DimensionMismatch { expected: 8, got: 16 }), "{err}");
}

fn dead_url() -> String {
    let l = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", l.local_addr().unwrap());
    drop(l);
    url
}

fn pipeline(dir: &Path, n: usize, kind: BackendKind, url: Option<String>) -> Pipeline {
    generate(&SynthSpec { n_records: n, positive_rate: 0.4, seed: 3, ..Default::default() })
        .write(&dir.join("input"))
        .unwrap();
    let mut cfg = PipelineConfig::default();
    cfg.paths.corpus = "input/corpus.jsonl".into();
    cfg.paths.awards = "input/awards.csv".into();
    cfg.backend.kind = kind;
    cfg.backend.url = url;
    cfg.backend.dimension = 8;
    cfg.variants = vec![Variant::ScriptSummaryTitle];
    Pipeline::new(cfg, dir).unwrap()
}

#[test]
fn pipeline_embeds_through_http_and_reports_outage() {
    let server = spawn(Behaviour::Serve { max_batch: 40, dimension: 8 });
    let dir = tempfile::tempdir().unwrap();
    let p = pipeline(dir.path(), 6, BackendKind::Http, Some(server.url.clone()));
    p.build_dataset().unwrap();
    let s = p.embed().unwrap();
    assert!(s.chunks_encoded > 0);

    let mock_dir = tempfile::tempdir().unwrap();
    let reference = pipeline(mock_dir.path(), 6, BackendKind::Mock, None);
    reference.build_dataset().unwrap();
    reference.embed().unwrap();
    for f in Field::ALL {
        let (a, _) = EmbeddingCache::read(&p.paths.caches.join(f.as_str())).unwrap();
        let (b, _) = EmbeddingCache::read(&reference.paths.caches.join(f.as_str())).unwrap();
        assert_eq!(a.to_records(), b.to_records(), "{f}");
    }

    let down = tempfile::tempdir().unwrap();
    let p = pipeline(down.path(), 6, BackendKind::Http, Some(dead_url()));
    p.build_dataset().unwrap();
    let err = p.embed().unwrap_err();
    assert!(matches!(err, PipelineError::Embed(EmbedError::BackendUnavailable(_))), "{err}");
    assert_eq!(err.exit_code(), EXIT_BACKEND);
    assert_ne!(EXIT_BACKEND, EXIT_VALIDATION);
}

// ----------------------------------------------------- externally written caches

/// Word windows computed independently of the crate's chunker.
fn windows(text: &str, size: usize, overlap: usize) -> Vec<String> {
    let words: Vec<&str> = text.split_whitespace().collect();
    if words.len() <= size {
        return vec![words.join(" ")];
    }
    (0..words.len())
        .step_by(size - overlap)
        .map(|s| words[s..(s + size).min(words.len())].join(" "))
        .collect()
}

/// Emits a cache the way a foreign writer would: hand-packed bytes and a
/// manifest assembled as plain JSON.
fn write_foreign_cache(dir: &Path, field_code: u8, d: usize, entries: &[(String, Vec<Vec<f32>>)], manifest: Value) {
    std::fs::create_dir_all(dir).unwrap();
    let mut body = Vec::new();
    let mut count = 0u64;
    for (id, vectors) in entries {
        for (k, v) in vectors.iter().enumerate() {
            body.extend_from_slice(&(id.len() as u16).to_le_bytes());
            body.extend_from_slice(id.as_bytes());
            body.push(field_code);
            body.extend_from_slice(&(k as u32).to_le_bytes());
            for x in v {
                body.extend_from_slice(&x.to_le_bytes());
            }
            count += 1;
        }
    }
    let mut bytes = b"MOLEMB01".to_vec();
    bytes.extend_from_slice(&1u32.to_le_bytes());
    bytes.extend_from_slice(&(d as u32).to_le_bytes());
    bytes.extend_from_slice(&count.to_le_bytes());
    bytes.extend_from_slice(&body);
    bytes.extend_from_slice(&crc32fast::hash(&body).to_le_bytes());
    std::fs::write(dir.join("vectors.bin"), bytes).unwrap();
    let mut manifest = manifest;
    manifest["count"] = json!(count);
    std::fs::write(dir.join("manifest.json"), manifest.to_string()).unwrap();
}

#[test]
fn foreign_caches_pass_reader_density_and_manifest_checks() {
    let dir = tempfile::tempdir().unwrap();
    let p = pipeline(dir.path(), 5, BackendKind::CacheOnly, None);
    p.build_dataset().unwrap();
    p.chunk().unwrap();
    let chunk_manifest: Value =
        serde_json::from_str(&std::fs::read_to_string(p.paths.chunks.join("manifest.json")).unwrap()).unwrap();
    let records = molabel::corpus::read_dataset(&p.paths.dataset).unwrap();
    assert_eq!(records.len(), 5);

    for (field, code) in [(Field::Title, 0u8), (Field::Summary, 1), (Field::Script, 2)] {
        let mut entries = Vec::new();
        for (r, doc) in records.iter().zip(chunk_manifest["documents"].as_array().unwrap()) {
            let text = match field {
                Field::Title => &r.title,
                Field::Summary => &r.summary,
                Field::Script => &r.script_clean,
            };
            let chunks = windows(text, 400, 80);
            assert_eq!(doc["imdb_id"], json!(r.imdb_id));
            assert_eq!(doc[field.as_str()], json!(chunks.len()), "{} {field}", r.imdb_id);
            let vectors = chunks.iter().map(|c| mock_encode(&format!("query: {c}"), 8)).collect();
            entries.push((r.imdb_id.clone(), vectors));
        }
        let manifest = json!({
            "format_version": 1,
            "backend": "intfloat/e5-base-v2",
            "dimension": 8,
            "prefix": "query: ",
            "chunk_size": 400,
            "chunk_overlap": 80,
            "normalized_at_encode": true,
            "field": field.as_str(),
        });
        write_foreign_cache(&p.paths.caches.join(field.as_str()), code, 8, &entries, manifest);

        let (d, raw) = read_records(&p.paths.caches.join(field.as_str()).join("vectors.bin")).unwrap();
        assert_eq!(d, 8);
        assert_eq!(raw.len(), entries.iter().map(|(_, v)| v.len()).sum::<usize>());
        let (cache, _) = EmbeddingCache::read(&p.paths.caches.join(field.as_str())).unwrap();
        cache.check_dense().unwrap();
    }

    let s = p.embed().unwrap();
    assert_eq!(s.backend_calls, 0);
    p.split().unwrap();
    p.features().unwrap();

    let other = tempfile::tempdir().unwrap();
    let q = pipeline(other.path(), 5, BackendKind::Mock, None);
    q.build_dataset().unwrap();
    q.embed().unwrap();
    for f in Field::ALL {
        let (a, _) = EmbeddingCache::read(&p.paths.caches.join(f.as_str())).unwrap();
        let (b, _) = EmbeddingCache::read(&q.paths.caches.join(f.as_str())).unwrap();
        assert_eq!(a.to_records(), b.to_records(), "{f}");
    }
}
