//! Schema-level protocol conformance checks, runnable against any backend.
//!
//! The same suite is used for the synthetic world and for served models, so
//! it only checks shapes and error contracts, never model-specific content.

use serde::Serialize;
use serde_json::{json, Value};

use super::transport::{Transport, TransportFailure};
use super::Route;

/// Inputs the backend is expected to accept.
#[derive(Clone, Debug)]
pub struct ConformanceInputs {
    pub text: String,
    pub hypothesis: String,
    pub prompt: String,
    /// Require identical responses for repeated seeded generate requests.
    pub deterministic_generate: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

pub fn run_suite(transport: &dyn Transport, inputs: &ConformanceInputs) -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    let mut check = |name: &'static str, result: Result<(), String>| {
        out.push(CheckOutcome {
            name,
            passed: result.is_ok(),
            detail: result.err().unwrap_or_default(),
        });
    };

    let classify_req = json!({ "text": inputs.text });
    check("classify returns a non-empty label", {
        post(transport, Route::Classify, &classify_req).and_then(|v| {
            match v.get("label").and_then(Value::as_str) {
                Some(l) if !l.is_empty() => Ok(()),
                _ => Err(format!("bad classify response {v}")),
            }
        })
    });
    check("classify is repeatable", {
        let a = post(transport, Route::Classify, &classify_req);
        let b = post(transport, Route::Classify, &classify_req);
        match (a, b) {
            (Ok(a), Ok(b)) if a == b => Ok(()),
            (a, b) => Err(format!("{a:?} vs {b:?}")),
        }
    });

    let embedding = post(transport, Route::Encode, &json!({ "text": inputs.text }));
    check("encode returns a finite rectangular matrix", {
        embedding.clone().and_then(|v| {
            let rows = v
                .get("embedding")
                .and_then(Value::as_array)
                .ok_or_else(|| format!("bad encode response {v}"))?;
            let widths: Vec<usize> = rows.iter().map(|r| r.as_array().map_or(0, Vec::len)).collect();
            let finite = rows
                .iter()
                .flat_map(|r| r.as_array().into_iter().flatten())
                .all(|x| x.as_f64().is_some_and(f64::is_finite));
            if rows.is_empty() || widths[0] == 0 || widths.iter().any(|w| *w != widths[0]) || !finite {
                return Err("embedding is empty, ragged or non-finite".into());
            }
            Ok(())
        })
    });
    check("decode of an encoding returns non-empty text", {
        embedding.and_then(|v| {
            let body = json!({ "embedding": v.get("embedding").cloned().unwrap_or(Value::Null) });
            let resp = post(transport, Route::Decode, &body)?;
            match resp.get("text").and_then(Value::as_str) {
                Some(t) if !t.is_empty() => Ok(()),
                _ => Err(format!("bad decode response {resp}")),
            }
        })
    });

    let gen_req = json!({
        "prompt": inputs.prompt, "n": 2, "top_p": 0.9, "temperature": 1.0, "seed": 7
    });
    check("generate returns n texts", {
        post(transport, Route::Generate, &gen_req).and_then(|v| {
            let texts = v
                .get("texts")
                .and_then(Value::as_array)
                .ok_or_else(|| format!("bad generate response {v}"))?;
            if texts.len() != 2 || texts.iter().any(|t| t.as_str().is_none_or(str::is_empty)) {
                return Err(format!("expected 2 non-empty texts, got {v}"));
            }
            Ok(())
        })
    });
    if inputs.deterministic_generate {
        check("seeded generate is repeatable", {
            let a = post(transport, Route::Generate, &gen_req);
            let b = post(transport, Route::Generate, &gen_req);
            match (a, b) {
                (Ok(a), Ok(b)) if a == b => Ok(()),
                (a, b) => Err(format!("{a:?} vs {b:?}")),
            }
        });
    }

    check("nli returns entailment in [0, 1]", {
        let req = json!({ "premise": inputs.text, "hypothesis": inputs.hypothesis });
        post(transport, Route::Nli, &req).and_then(|v| match v.get("entailment").and_then(Value::as_f64) {
            Some(s) if (0.0..=1.0).contains(&s) => Ok(()),
            _ => Err(format!("bad nli response {v}")),
        })
    });

    for (name, route, body) in [
        ("classify without text is a 4xx with error", Route::Classify, json!({ "txt": "x" })),
        ("decode of ragged rows is a 4xx with error", Route::Decode, json!({ "embedding": [[1.0, 2.0], [3.0]] })),
        ("generate with n = 0 is a 4xx with error", Route::Generate, json!({ "prompt": "x", "n": 0, "top_p": 0.9, "temperature": 1.0 })),
    ] {
        check(name, expect_client_error(transport, route, &body));
    }
    out
}

fn post(transport: &dyn Transport, route: Route, body: &Value) -> Result<Value, String> {
    transport.post(route, body).map_err(|f| f.message())
}

fn expect_client_error(transport: &dyn Transport, route: Route, body: &Value) -> Result<(), String> {
    match transport.post(route, body) {
        Err(TransportFailure::Status {
            code,
            structured: true,
            ..
        }) if (400..500).contains(&code) => Ok(()),
        Err(TransportFailure::Status {
            code,
            structured: false,
            ..
        }) => Err(format!("HTTP {code} without an {{\"error\"}} body")),
        other => Err(format!("expected a 4xx, got {other:?}")),
    }
}
