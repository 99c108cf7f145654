//! Client behaviour over real HTTP against the mock server and scripted peers.

use std::io::{Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use anonpipe_backend::golden::{check_builtin, golden_request};
use anonpipe_backend::protocol::{to_json, BackendResponse, DetectRequest, ImageData, RequestBody};
use anonpipe_backend::server::MockServer;
use anonpipe_backend::{BackendClient, BackendError, FnTransport, HttpTransport, MockTransport, Op, Transport};
use image::{Rgb, RgbImage};

fn http_client(url: &str) -> BackendClient {
    BackendClient::new(Arc::new(HttpTransport::new(url, Duration::from_secs(10), 2).unwrap()))
}

#[test]
fn mock_server_speaks_v1() {
    let server = MockServer::start(0).unwrap();
    let transport = HttpTransport::new(&server.url(), Duration::from_secs(10), 2).unwrap();
    let health = transport.health().unwrap();
    assert_eq!(health.protocol, "v1");
    assert_eq!(health.ops.len(), 6);

    let client = http_client(&server.url());
    assert!(client.detect(&RgbImage::new(32, 24)).unwrap().is_empty());

    for outcome in check_builtin(&transport) {
        assert!(outcome.passed, "{outcome:?}");
    }
    // Same answers over HTTP as in process.
    for op in Op::ALL {
        let req = golden_request(op);
        assert_eq!(transport.call(&req).unwrap(), MockTransport.call(&req).unwrap(), "{op}");
    }
}

#[test]
fn server_rejects_op_path_mismatch() {
    let server = MockServer::start(0).unwrap();
    let req = golden_request(Op::Detect);
    let resp = reqwest::blocking::Client::new()
        .post(format!("{}/v1/embed", server.url()))
        .body(to_json(&req))
        .send()
        .unwrap();
    assert_eq!(resp.status(), 400);
    let body: BackendResponse = resp.json().unwrap();
    assert_eq!(body.request_id, req.request_id);
}

#[test]
fn concurrent_calls_are_independent() {
    let server = MockServer::start(0).unwrap();
    let client = http_client(&server.url());
    std::thread::scope(|s| {
        for i in 0..8u8 {
            let client = client.clone();
            s.spawn(move || {
                let img = RgbImage::from_pixel(8, 8, Rgb([i, 0, 0]));
                let e1 = client.embed(&img, None).unwrap();
                let e2 = client.embed(&img, None).unwrap();
                assert_eq!(e1, e2);
            });
        }
    });
}

#[test]
fn mismatched_request_id_is_protocol_error() {
    let t = FnTransport(|req: &anonpipe_backend::BackendRequest| {
        let mut resp = anonpipe_backend::mock::handle(req);
        resp.request_id = uuid::Uuid::nil();
        Ok(resp)
    });
    let client = BackendClient::new(Arc::new(t));
    assert!(matches!(client.detect(&RgbImage::new(4, 4)), Err(BackendError::Protocol(_))));
}

#[test]
fn wrong_result_kind_is_protocol_error() {
    let t = FnTransport(|req: &anonpipe_backend::BackendRequest| {
        let other = anonpipe_backend::BackendRequest { request_id: req.request_id, ..golden_request(Op::Embed) };
        Ok(anonpipe_backend::mock::handle(&other))
    });
    let client = BackendClient::new(Arc::new(t));
    assert!(matches!(client.detect(&RgbImage::new(4, 4)), Err(BackendError::Protocol(_))));
}

/// Minimal HTTP peer: answers each connection with `body` and counts hits.
fn scripted_peer(respond: impl Fn(&[u8]) -> Option<Vec<u8>> + Send + 'static) -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let mut stream = stream.unwrap();
            counter.fetch_add(1, Ordering::SeqCst);
            let mut buf = Vec::new();
            let mut chunk = [0u8; 4096];
            // Read headers and the declared body.
            loop {
                let n = stream.read(&mut chunk).unwrap_or(0);
                if n == 0 {
                    break;
                }
                buf.extend_from_slice(&chunk[..n]);
                if let Some(end) = buf.windows(4).position(|w| w == b"\r\n\r\n") {
                    let head = String::from_utf8_lossy(&buf[..end]).to_lowercase();
                    let len = head
                        .lines()
                        .find_map(|l| l.strip_prefix("content-length:").map(|v| v.trim().parse::<usize>().unwrap()))
                        .unwrap_or(0);
                    if buf.len() >= end + 4 + len {
                        break;
                    }
                }
            }
            let body_start = buf.windows(4).position(|w| w == b"\r\n\r\n").map_or(buf.len(), |e| e + 4);
            match respond(&buf[body_start..]) {
                Some(body) => {
                    let head = format!(
                        "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n",
                        body.len()
                    );
                    let _ = stream.write_all(head.as_bytes());
                    let _ = stream.write_all(&body);
                }
                None => {
                    // Hold the connection open without answering.
                    std::thread::sleep(Duration::from_secs(3));
                }
            }
        }
    });
    (url, hits)
}

#[test]
fn status_error_is_not_retried() {
    let (url, hits) = scripted_peer(|body| {
        let req = anonpipe_backend::protocol::parse_request(body).unwrap();
        Some(to_json(&BackendResponse::error(req.request_id, "model exploded")))
    });
    let client = http_client(&url);
    let err = client.detect(&RgbImage::new(4, 4)).unwrap_err();
    assert_eq!(err, BackendError::Remote("model exploded".into()));
    assert_eq!(hits.load(Ordering::SeqCst), 1);
}

#[test]
fn slow_backend_times_out() {
    let (url, _) = scripted_peer(|_| None);
    let t = HttpTransport::new(&url, Duration::from_millis(300), 2).unwrap();
    let client = BackendClient::new(Arc::new(t));
    let start = Instant::now();
    let err = client.detect(&RgbImage::new(4, 4)).unwrap_err();
    assert!(matches!(err, BackendError::Timeout(_)), "{err:?}");
    assert!(start.elapsed() < Duration::from_secs(3));
}

#[test]
fn malformed_body_is_protocol_error() {
    let (url, _) = scripted_peer(|_| Some(b"{\"hello\": 1}".to_vec()));
    let err = http_client(&url).detect(&RgbImage::new(4, 4)).unwrap_err();
    assert!(matches!(err, BackendError::Protocol(_)), "{err:?}");
}

#[test]
fn refused_connection_is_retried_then_reported() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let t = HttpTransport::new(&format!("http://127.0.0.1:{port}"), Duration::from_secs(2), 2).unwrap();
    let req = anonpipe_backend::BackendRequest::new(RequestBody::Detect(DetectRequest {
        image: ImageData::encode(&RgbImage::new(2, 2)),
    }));
    match t.call(&req) {
        Err(BackendError::Connection { attempts, .. }) => assert_eq!(attempts, 3),
        other => panic!("{other:?}"),
    }
}
