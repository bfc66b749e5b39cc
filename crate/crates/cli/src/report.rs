//! JSON and CSV emission. Numbers carry 17 significant digits; non-finite
//! values become `null` in JSON and empty cells in CSV.

use robust_si::inference::SelectiveReport;
use serde::Serialize;
use serde_json::value::RawValue;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
}

pub const REPORT_COLUMNS: [&str; 9] = [
    "index",
    "z_obs",
    "naive_p",
    "bonferroni_p",
    "selective_p",
    "ci_lo",
    "ci_hi",
    "truncation",
    "mass_outside_window_bound",
];

fn number(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        String::new()
    }
}

fn raw(v: f64) -> Box<RawValue> {
    let text = if v.is_finite() {
        format!("{v:.16e}")
    } else {
        "null".to_owned()
    };
    RawValue::from_string(text).expect("formatted float is valid JSON")
}

#[derive(Serialize)]
struct JsonRow {
    index: usize,
    z_obs: Box<RawValue>,
    naive_p: Box<RawValue>,
    bonferroni_p: Box<RawValue>,
    selective_p: Box<RawValue>,
    ci_lo: Box<RawValue>,
    ci_hi: Box<RawValue>,
    truncation: Vec<[Box<RawValue>; 2]>,
    mass_outside_window_bound: Box<RawValue>,
}

/// Semicolon-joined `lo:hi` pairs.
fn truncation_cell(r: &SelectiveReport) -> String {
    r.truncation
        .intervals()
        .iter()
        .map(|&(lo, hi)| format!("{}:{}", bound(lo), bound(hi)))
        .collect::<Vec<_>>()
        .join(";")
}

fn bound(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

pub fn emit_report(reports: &[SelectiveReport], format: Format) -> Vec<u8> {
    match format {
        Format::Json => {
            let rows: Vec<JsonRow> = reports
                .iter()
                .map(|r| JsonRow {
                    index: r.target_index,
                    z_obs: raw(r.z_obs),
                    naive_p: raw(r.naive_p),
                    bonferroni_p: raw(r.bonferroni_p),
                    selective_p: raw(r.selective_p),
                    ci_lo: raw(r.ci.0),
                    ci_hi: raw(r.ci.1),
                    truncation: r
                        .truncation
                        .intervals()
                        .iter()
                        .map(|&(lo, hi)| [raw(lo), raw(hi)])
                        .collect(),
                    mass_outside_window_bound: raw(r.mass_outside_window_bound),
                })
                .collect();
            let mut out = serde_json::to_vec_pretty(&rows).expect("serializable rows");
            out.push(b'\n');
            out
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(REPORT_COLUMNS).expect("in-memory write");
            for r in reports {
                w.write_record([
                    r.target_index.to_string(),
                    number(r.z_obs),
                    number(r.naive_p),
                    number(r.bonferroni_p),
                    number(r.selective_p),
                    number(r.ci.0),
                    number(r.ci.1),
                    truncation_cell(r),
                    number(r.mass_outside_window_bound),
                ])
                .expect("in-memory write");
            }
            w.into_inner().expect("in-memory flush")
        }
    }
}

struct Table<'a>(Vec<(&'a str, Box<RawValue>)>);

impl Serialize for Table<'_> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut map = s.serialize_map(Some(self.0.len()))?;
        for (k, v) in &self.0 {
            map.serialize_entry(k, v)?;
        }
        map.end()
    }
}

/// A single-row table of named numbers, such as simulated rates.
pub fn emit_table(fields: &[(&str, f64)], format: Format) -> Vec<u8> {
    match format {
        Format::Json => {
            let row = Table(fields.iter().map(|&(k, v)| (k, raw(v))).collect());
            let mut out = serde_json::to_vec_pretty(&row).expect("serializable table");
            out.push(b'\n');
            out
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(fields.iter().map(|f| f.0))
                .expect("in-memory write");
            w.write_record(fields.iter().map(|f| number(f.1)))
                .expect("in-memory write");
            w.into_inner().expect("in-memory flush")
        }
    }
}
