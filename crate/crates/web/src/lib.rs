//! Browser bindings: plain enumeration, single-op evaluation and spec
//! encoding, each taking and returning JSON text.

use std::time::Duration;

use serde::Serialize;
use tensynth::encoding::{encode_spec as encode, tensors};
use tensynth::search::{enumerate, CostTable, Limits};
use tensynth::{evaluate, Expr, OpCode, Registry, TaskSpec, Tensor};
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct SynthOutput {
    status: String,
    program: Option<String>,
    cost: Option<u32>,
    candidates: u64,
}

fn parse_spec(spec_json: &str) -> Result<TaskSpec, String> {
    serde_json::from_str(spec_json).map_err(|e| format!("bad spec: {e}"))
}

/// Enumerates over the core registry until a program maps the inputs to
/// the output or the limits run out.
pub fn synthesize_json(
    spec_json: &str,
    timeout_secs: f64,
    max_cost: u32,
) -> Result<String, String> {
    let spec = parse_spec(spec_json)?;
    if !(timeout_secs > 0.0 && timeout_secs.is_finite()) {
        return Err("timeout must be positive".into());
    }
    let limits = Limits {
        timeout: Duration::from_secs_f64(timeout_secs),
        max_cost,
        ..Limits::default()
    };
    let r = enumerate(&spec, &Registry::core16(), &CostTable::preset(), &limits);
    let out = SynthOutput {
        status: format!("{:?}", r.status),
        program: r.program.as_ref().map(Expr::render),
        cost: r.cost,
        candidates: r.stats.candidates,
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

/// Applies one op to tensors given as a JSON array. `params` uses the
/// program syntax, e.g. `0, 2` or `(2, 3)`.
pub fn apply_op_json(op: &str, args_json: &str, params: &str) -> Result<String, String> {
    let op: OpCode = op.parse().map_err(|e| format!("{e}"))?;
    let args: Vec<Tensor> =
        serde_json::from_str(args_json).map_err(|e| format!("bad arguments: {e}"))?;
    if args.len() != op.arity() {
        return Err(format!(
            "{op} takes {} tensor arguments, got {}",
            op.arity(),
            args.len()
        ));
    }
    let names: Vec<String> = (1..=args.len()).map(|i| format!("in{i}")).collect();
    let mut text = match op {
        OpCode::Stack => format!("{op}(({})", names.join(", ")),
        _ => format!("{op}({}", names.join(", ")),
    };
    if !params.trim().is_empty() {
        text.push_str(", ");
        text.push_str(params.trim());
    }
    text.push(')');
    let expr: Expr = text.parse().map_err(|e| format!("bad parameters: {e}"))?;
    let value = evaluate(&expr, &args).map_err(|e| e.to_string())?;
    serde_json::to_string(&value).map_err(|e| e.to_string())
}

/// The fixed-length model encoding of a spec as a JSON array of numbers.
pub fn encode_spec_json(spec_json: &str) -> Result<String, String> {
    let spec = parse_spec(spec_json)?;
    let enc = encode(&tensors(&spec.inputs), &spec.output).map_err(|e| e.to_string())?;
    serde_json::to_string(enc.values()).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn synthesize(spec_json: &str, timeout_secs: f64, max_cost: u32) -> Result<String, JsError> {
    synthesize_json(spec_json, timeout_secs, max_cost).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn apply_op(op: &str, args_json: &str, params: &str) -> Result<String, JsError> {
    apply_op_json(op, args_json, params).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn encode_spec(spec_json: &str) -> Result<String, JsError> {
    encode_spec_json(spec_json).map_err(|e| JsError::new(&e))
}

/// Op names in registry order, for populating the page.
#[wasm_bindgen]
pub fn op_names() -> String {
    serde_json::to_string(&Registry::core16().names()).expect("names serialize")
}
