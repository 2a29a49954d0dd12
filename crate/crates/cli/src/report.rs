//! JSON encodings. Exact values are strings (`"a/b"`, decimal mantissas with
//! a p-exponent); floats appear only as decimal strings.

use num_bigint::BigInt;
use num_rational::BigRational;
use serde_json::{json, Value};

use sadic::dioph::{Estimate, Exponent, Witness};
use sadic::{CertifiedNorm, Content, PExact, PNorm, Prime};

pub const SCHEMA: &str = "sadic-report/1";

pub fn rat(r: &BigRational) -> Value {
    Value::String(r.to_string())
}

pub fn big(b: &BigInt) -> Value {
    Value::String(b.to_string())
}

pub fn float(x: f64) -> Value {
    Value::String(format!("{x}"))
}

/// `mantissa / p^exp`.
pub fn pex(x: &PExact) -> Value {
    json!({ "mantissa": x.mantissa().to_string(), "exp": x.exp() })
}

pub fn pvec(v: &[PExact]) -> Value {
    Value::Array(v.iter().map(pex).collect())
}

pub fn bigs(v: &[BigInt]) -> Value {
    Value::Array(v.iter().map(big).collect())
}

pub fn pnorm(n: PNorm) -> Value {
    Value::String(n.to_string())
}

pub fn cnorm(n: &CertifiedNorm) -> Value {
    json!({ "value": pnorm(n.value), "certified": n.certified, "bound": pnorm(n.bound) })
}

pub fn content(c: &Content, p: Prime) -> Value {
    json!({
        "value": rat(&c.value(p)),
        "upper": rat(&c.upper(p)),
        "inf": rat(&c.inf),
        "padic": cnorm(&c.padic),
        "certified": c.certified(),
    })
}

pub fn exponent(e: &Exponent) -> Value {
    match e {
        Exponent::Infinite => Value::String("infinite".into()),
        Exponent::Finite { num, den, offset } => json!({
            "log_num": rat(num),
            "log_den": rat(den),
            "offset": rat(offset),
            "approx": float(e.to_f64()),
        }),
    }
}

pub fn estimate(e: &Estimate) -> Value {
    match e {
        Estimate::Undefined => Value::String("undefined".into()),
        Estimate::Infinite => Value::String("infinite".into()),
        Estimate::Value(v) => rat(v),
    }
}

pub fn witness(w: &Witness, grid: u32) -> Value {
    json!({
        "q": pvec(&w.q),
        "integral": w.integral,
        "sup_norm": rat(&w.sup_norm),
        "q_pnorm": pnorm(w.q_pnorm),
        "pi_plus": rat(&w.pi_plus),
        "residual": cnorm(&w.residual),
        "exact_zero": w.is_exact_zero(),
        "at_floor": w.at_floor(),
        "exponent": exponent(&w.exponent),
        "exponent_floor": w.exponent.floor_on_grid(grid).as_ref().map_or(Value::Null, rat),
    })
}

/// The full report envelope.
pub fn envelope(
    command: &str,
    anchor: &str,
    status: &str,
    invocation: Value,
    result: Value,
) -> Value {
    json!({
        "schema": SCHEMA,
        "command": command,
        "anchor": anchor,
        "status": status,
        "invocation": invocation,
        "result": result,
    })
}

pub fn to_text(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("values serialize");
    s.push('\n');
    s
}
