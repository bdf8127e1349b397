//! Deterministic output formatting: every float is written with exactly six
//! decimals.

use serde_json::{Map, Number, Value};

/// JSON number printed as `{v:.6}`; non-finite values become `null`.
pub fn fixed(v: f64) -> Value {
    if !v.is_finite() {
        return Value::Null;
    }
    let text = format!("{v:.6}");
    let text = if text == "-0.000000" { "0.000000".to_string() } else { text };
    Value::Number(text.parse::<Number>().expect("formatted float is a valid JSON number"))
}

pub fn fixed_list(values: &[f64]) -> Value {
    Value::Array(values.iter().map(|v| fixed(*v)).collect())
}

pub fn object(entries: Vec<(&str, Value)>) -> Value {
    let mut map = Map::new();
    for (k, v) in entries {
        map.insert(k.to_string(), v);
    }
    Value::Object(map)
}

pub fn to_string(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json values serialise");
    s.push('\n');
    s
}
