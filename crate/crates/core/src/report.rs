//! `results.csv`: one row per (method, parameter, trial).

use crate::error::{Error, Result};
use crate::evaluation::{SweepResult, SweepRow};

pub const CSV_HEADER: [&str; 8] = ["method", "param_name", "param_value", "seed", "rmse_m", "ber", "runtime_s", "status"];

/// Nine significant digits, `%g` style: plain notation for exponents in
/// `[-5, 9)`, scientific otherwise, trailing zeros dropped.
pub fn format_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:.8e}");
    let (mant, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mant.to_string()))
    }
}

fn trim_zeros(s: String) -> String {
    if !s.contains('.') {
        return s;
    }
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn opt(x: Option<f64>) -> String {
    x.map(format_sig).unwrap_or_default()
}

pub fn to_csv_string(result: &SweepResult) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let io = |e: csv::Error| Error::Parse(e.to_string());
    w.write_record(CSV_HEADER).map_err(io)?;
    for r in &result.rows {
        w.write_record([
            r.method.clone(),
            r.param_name.clone(),
            format_sig(r.param_value),
            r.seed.to_string(),
            opt(r.rmse_m),
            opt(r.ber),
            opt(r.runtime_s),
            r.status.clone(),
        ])
        .map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
}

fn field_f64(line: u64, name: &str, raw: &str) -> Result<f64> {
    let v: f64 = raw
        .parse()
        .map_err(|_| Error::Parse(format!("line {line}: `{name}` is not a number: {raw:?}")))?;
    if !v.is_finite() {
        return Err(Error::Parse(format!("line {line}: `{name}` must be finite")));
    }
    Ok(v)
}

fn field_opt(line: u64, name: &str, raw: &str, ok: impl Fn(f64) -> bool) -> Result<Option<f64>> {
    if raw.is_empty() {
        return Ok(None);
    }
    let v = field_f64(line, name, raw)?;
    if !ok(v) {
        return Err(Error::Parse(format!("line {line}: `{name}` out of range: {v}")));
    }
    Ok(Some(v))
}

/// Strict inverse of [`to_csv_string`].
pub fn parse_csv(text: &str) -> Result<SweepResult> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut records = rdr.records();
    let header = records
        .next()
        .ok_or_else(|| Error::Parse("empty file, expected a header".into()))?
        .map_err(|e| Error::Parse(e.to_string()))?;
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::Parse(format!("unexpected header: {}", header.iter().collect::<Vec<_>>().join(","))));
    }
    let mut rows = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != CSV_HEADER.len() {
            return Err(Error::Parse(format!("line {line}: expected {} fields, got {}", CSV_HEADER.len(), rec.len())));
        }
        let text = |i: usize| -> Result<String> {
            let v = &rec[i];
            if v.is_empty() {
                return Err(Error::Parse(format!("line {line}: `{}` is empty", CSV_HEADER[i])));
            }
            Ok(v.to_string())
        };
        rows.push(SweepRow {
            method: text(0)?,
            param_name: text(1)?,
            param_value: field_f64(line, "param_value", &rec[2])?,
            seed: rec[3]
                .parse()
                .map_err(|_| Error::Parse(format!("line {line}: `seed` is not a u64: {:?}", &rec[3])))?,
            rmse_m: field_opt(line, "rmse_m", &rec[4], |v| v >= 0.0)?,
            ber: field_opt(line, "ber", &rec[5], |v| (0.0..=1.0).contains(&v))?,
            runtime_s: field_opt(line, "runtime_s", &rec[6], |v| v >= 0.0)?,
            status: text(7)?,
        });
    }
    Ok(SweepResult { rows })
}
