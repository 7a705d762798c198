//! Report emission: a JSON document or a CSV table, both carrying the
//! resolved configuration, with every number cut to 12 significant digits.

use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};

pub const SIGNIFICANT_DIGITS: usize = 12;

pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x).parse().unwrap_or(x)
}

/// Number formatting shared by both report formats.
pub fn number(x: f64) -> String {
    if x.is_finite() {
        let r = round_sig(x);
        if r == r.trunc() && r.abs() < 1e15 {
            format!("{r:.1}")
        } else {
            format!("{r}")
        }
    } else if x.is_nan() {
        "NaN".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn round_value(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            if let Some(r) = n.as_f64().map(round_sig).and_then(serde_json::Number::from_f64) {
                *n = r;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_value),
        Value::Object(map) => map.values_mut().for_each(round_value),
        _ => {}
    }
}

pub fn to_value(x: &impl Serialize) -> Result<Value> {
    let mut v = serde_json::to_value(x).map_err(|e| Error::Input(format!("report serialization failed: {e}")))?;
    round_value(&mut v);
    Ok(v)
}

pub fn json_report(command: &str, config: &Value, result: &impl Serialize) -> Result<String> {
    let doc = json!({ "command": command, "config": config, "result": to_value(result)? });
    let mut out = serde_json::to_string_pretty(&doc).map_err(|e| Error::Input(e.to_string()))?;
    out.push('\n');
    Ok(out)
}

/// Rows of already formatted cells under a `# config=` line.
pub struct Table {
    pub headers: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(headers: Vec<&'static str>) -> Self {
        Table { headers, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn render(&self, command: &str, config: &Value) -> Result<String> {
        let mut out = format!("# command={command}\n# config={config}\n");
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Input(format!("csv output failed: {e}"));
        w.write_record(&self.headers).map_err(io)?;
        for row in &self.rows {
            w.write_record(row).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Input(format!("csv output failed: {e}")))?;
        out.push_str(&String::from_utf8_lossy(&bytes));
        Ok(out)
    }
}

pub fn opt_number(x: Option<f64>) -> String {
    x.map(number).unwrap_or_default()
}
