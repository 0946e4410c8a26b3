#![allow(dead_code)]

use std::sync::Arc;
use std::thread::JoinHandle;

use saber::backend::{OracleBackend, PredictRequest, PredictResponse, WireError};
use saber::state::{SequenceState, VocabSpec};

type Handler = dyn Fn(&str) -> (u16, String) + Send + Sync;

/// Local HTTP server answering every request with `handler(body)`.
pub struct StubServer {
    server: Arc<tiny_http::Server>,
    thread: Option<JoinHandle<()>>,
    pub url: String,
}

impl StubServer {
    pub fn spawn(handler: impl Fn(&str) -> (u16, String) + Send + Sync + 'static) -> Self {
        let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").unwrap());
        let url = format!("http://{}", server.server_addr().to_ip().unwrap());
        let handler: Box<Handler> = Box::new(handler);
        let srv = server.clone();
        let thread = std::thread::spawn(move || {
            for mut req in srv.incoming_requests() {
                let mut body = String::new();
                let _ = req.as_reader().read_to_string(&mut body);
                let (status, text) = if req.url() == "/v1/predict" {
                    handler(&body)
                } else {
                    (404, error_body("no such endpoint"))
                };
                let header =
                    tiny_http::Header::from_bytes("Content-Type", "application/json").unwrap();
                let resp = tiny_http::Response::from_string(text)
                    .with_status_code(status)
                    .with_header(header);
                let _ = req.respond(resp);
            }
        });
        Self {
            server,
            thread: Some(thread),
            url,
        }
    }

    /// Serves `oracle` over the wire protocol.
    pub fn oracle(oracle: OracleBackend, vocab: VocabSpec) -> Self {
        Self::spawn(move |body| match answer(&oracle, vocab, body) {
            Ok(text) => (200, text),
            Err(msg) => (400, error_body(&msg)),
        })
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

pub fn error_body(msg: &str) -> String {
    serde_json::to_string(&WireError {
        error: msg.to_string(),
    })
    .unwrap()
}

/// Rebuilds the sequence from a request and scores it with the oracle.
pub fn answer(oracle: &OracleBackend, vocab: VocabSpec, body: &str) -> Result<String, String> {
    let req: PredictRequest = serde_json::from_str(body).map_err(|e| e.to_string())?;
    if req.mask_id != vocab.mask_id() {
        return Err(format!("unexpected mask id {}", req.mask_id));
    }
    let mut state =
        SequenceState::new(req.prompt, req.gen.len(), vocab).map_err(|e| e.to_string())?;
    for (i, &t) in req.gen.iter().enumerate() {
        if t != vocab.mask_id() {
            state.apply_unmask(i, t, 1.0).map_err(|e| e.to_string())?;
        }
    }
    let preds = oracle.oracle_predict(&state).map_err(|e| e.to_string())?;
    Ok(serde_json::to_string(&PredictResponse::from_predictions(&preds)).unwrap())
}
