use serde_json::{Map, Value};

/// A float rounded to 12 significant digits; non-finite values become null.
pub fn number(v: f64) -> Value {
    if !v.is_finite() {
        return Value::Null;
    }
    let rounded: f64 = format!("{v:.11e}").parse().expect("formatted float parses");
    serde_json::Number::from_f64(rounded).map_or(Value::Null, Value::Number)
}

/// An object mapping labels to rounded values, in the given order.
pub fn labeled(labels: &[String], values: &[f64]) -> Value {
    let mut m = Map::new();
    for (l, v) in labels.iter().zip(values) {
        m.insert(l.clone(), number(*v));
    }
    Value::Object(m)
}

pub fn render(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("JSON values serialize");
    s.push('\n');
    s
}
