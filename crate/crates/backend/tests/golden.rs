//! Golden v1 files: byte-stable across serialize/parse and rebuildable from code.
//! Set `ANONPIPE_BLESS=1` to rewrite them after an intentional protocol change.

use std::path::PathBuf;

use anonpipe_backend::golden::{check_builtin, golden_request, GOLDEN_REQUESTS};
use anonpipe_backend::mock::handle;
use anonpipe_backend::protocol::{parse_request, parse_response, to_json_pretty};
use anonpipe_backend::{MockTransport, Op};

fn dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("golden/v1")
}

fn bless() -> bool {
    std::env::var_os("ANONPIPE_BLESS").is_some_and(|v| v == "1")
}

#[test]
fn golden_files_are_byte_stable() {
    for op in Op::ALL {
        let req = golden_request(op);
        let req_path = dir().join(format!("{op}.request.json"));
        let resp_path = dir().join(format!("{op}.response.json"));
        let req_text = to_json_pretty(&req);
        let resp_text = to_json_pretty(&handle(&req));
        if bless() {
            std::fs::write(&req_path, &req_text).unwrap();
            std::fs::write(&resp_path, &resp_text).unwrap();
            continue;
        }
        let on_disk = std::fs::read_to_string(&req_path).unwrap();
        assert_eq!(on_disk, req_text, "{op}: request built from code drifted from golden file");
        assert_eq!(to_json_pretty(&parse_request(on_disk.as_bytes()).unwrap()), on_disk, "{op}: request re-encode");
        let resp_disk = std::fs::read_to_string(&resp_path).unwrap();
        assert_eq!(resp_disk, resp_text, "{op}: mock response drifted from golden file");
        assert_eq!(to_json_pretty(&parse_response(resp_disk.as_bytes()).unwrap()), resp_disk, "{op}: response re-encode");
    }
}

#[test]
fn embedded_copies_match_files() {
    if bless() {
        return;
    }
    for (op, text) in GOLDEN_REQUESTS {
        assert_eq!(std::fs::read_to_string(dir().join(format!("{op}.request.json"))).unwrap(), text);
    }
}

#[test]
fn mock_passes_conformance() {
    if bless() {
        return;
    }
    for outcome in check_builtin(&MockTransport) {
        assert!(outcome.passed, "{outcome:?}");
    }
}
