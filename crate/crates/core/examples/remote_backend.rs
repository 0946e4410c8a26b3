//! Drive the sampler against a model server over HTTP.
//!
//! A tiny in-process server answers `POST /v1/predict` with oracle
//! predictions, standing in for a real model. Point `RemoteBackend` at your
//! own server the same way; set `SABER_REMOTE_TOKEN` if it wants a bearer
//! token.
//!
//! ```bash
//! cargo run -p saber --example remote_backend
//! ```

use std::sync::Arc;
use std::time::Duration;

use saber::backend::{
    OracleBackend, OracleParams, PredictRequest, PredictResponse, RemoteBackend, WireError,
};
use saber::sampler::{generate, RunContext, SaberConfig, Strategy};
use saber::state::{SequenceState, VocabSpec};

fn serve(oracle: OracleBackend, vocab: VocabSpec) -> (String, Arc<tiny_http::Server>) {
    let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").unwrap());
    let url = format!("http://{}", server.server_addr().to_ip().unwrap());
    let srv = server.clone();
    std::thread::spawn(move || {
        for mut req in srv.incoming_requests() {
            let mut body = String::new();
            req.as_reader().read_to_string(&mut body).unwrap();
            let (status, text) = match handle(&oracle, vocab, &body) {
                Ok(resp) => (200, serde_json::to_string(&resp).unwrap()),
                Err(error) => (400, serde_json::to_string(&WireError { error }).unwrap()),
            };
            let _ = req.respond(tiny_http::Response::from_string(text).with_status_code(status));
        }
    });
    (url, server)
}

fn handle(oracle: &OracleBackend, vocab: VocabSpec, body: &str) -> Result<PredictResponse, String> {
    let req: PredictRequest = serde_json::from_str(body).map_err(|e| e.to_string())?;
    let mut state =
        SequenceState::new(req.prompt, req.gen.len(), vocab).map_err(|e| e.to_string())?;
    for (i, &t) in req.gen.iter().enumerate() {
        if t != req.mask_id {
            state.apply_unmask(i, t, 1.0).map_err(|e| e.to_string())?;
        }
    }
    let preds = oracle.oracle_predict(&state).map_err(|e| e.to_string())?;
    Ok(PredictResponse::from_predictions(&preds))
}

fn main() {
    let vocab = VocabSpec::new(1024, 1023).unwrap();
    let params = OracleParams::fixture(40, 0.1, 5, vocab);
    let (url, server) = serve(OracleBackend::new(params.clone()).unwrap(), vocab);

    let remote = RemoteBackend::new(&url, Duration::from_secs(10)).with_run_id("remote-demo");
    println!("endpoint {}", remote.endpoint());

    let strategy: Strategy = "saber".parse().unwrap();
    let cfg = SaberConfig::default();
    let state = SequenceState::new(vec![], 40, vocab).unwrap();
    let ctx = RunContext::new("remote-demo", 5);
    let over_http = generate(state.clone(), &remote, &cfg, &strategy, &ctx).unwrap();
    let in_process = generate(
        state,
        &OracleBackend::new(params).unwrap(),
        &cfg,
        &strategy,
        &ctx,
    )
    .unwrap();

    println!(
        "over HTTP: {} steps, {} requests, completed={}",
        over_http.steps_used, over_http.backend_calls, over_http.completed
    );
    println!(
        "identical to in-process run: {}",
        over_http.trace == in_process.trace
    );
    server.unblock();
}
