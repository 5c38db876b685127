//! Plain-text file formats: two-column CSV with `# key = value` comment
//! headers, and flat key-value reports.
//!
//! Floats are written with `{:e}`, the shortest representation that parses
//! back to the same `f64`, so every file round-trips exactly.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::dsp::Spectrum;
use crate::error::{Error, Result};
use crate::field::{Axis, FieldWaveform};
use crate::spin::{DetectionRecord, Sequence};

/// Ordered `key = value` header lines.
pub type Header = Vec<(String, String)>;

const META_PREFIX: &str = "meta.";

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_header(out: &mut impl Write, header: &[(String, String)]) -> std::io::Result<()> {
    for (k, v) in header {
        writeln!(out, "# {k} = {v}")?;
    }
    Ok(())
}

fn write_columns(
    path: &Path,
    header: &[(String, String)],
    names: &str,
    rows: impl Iterator<Item = (f64, f64)>,
) -> Result<()> {
    let mut out = create(path)?;
    let res = (|| {
        write_header(&mut out, header)?;
        writeln!(out, "{names}")?;
        for (a, b) in rows {
            writeln!(out, "{a:e},{b:e}")?;
        }
        out.flush()
    })();
    res.map_err(|e| Error::io(path, e))
}

/// Contents of a two-column CSV file.
#[derive(Debug, Clone, Default)]
struct Columns {
    header: BTreeMap<String, String>,
    first: Vec<f64>,
    second: Vec<f64>,
}

fn parse_error(path: &Path, line: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        reason: reason.into(),
    }
}

fn read_columns(path: &Path, names: &str) -> Result<Columns> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut cols = Columns::default();
    let mut seen_names = false;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let lineno = i + 1;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        if let Some(c) = t.strip_prefix('#') {
            if let Some((k, v)) = c.split_once('=') {
                cols.header.insert(k.trim().to_string(), v.trim().to_string());
            }
            continue;
        }
        if !seen_names {
            if t.replace(' ', "") != names {
                return Err(parse_error(path, lineno, format!("expected header `{names}`, got `{t}`")));
            }
            seen_names = true;
            continue;
        }
        let (a, b) = t
            .split_once(',')
            .ok_or_else(|| parse_error(path, lineno, "expected two comma-separated values"))?;
        let parse = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| parse_error(path, lineno, format!("`{}`: {e}", s.trim())))
        };
        cols.first.push(parse(a)?);
        cols.second.push(parse(b)?);
    }
    if !seen_names {
        return Err(parse_error(path, 0, format!("missing column header `{names}`")));
    }
    Ok(cols)
}

fn header_f64(path: &Path, header: &BTreeMap<String, String>, key: &str) -> Result<Option<f64>> {
    header
        .get(key)
        .map(|v| {
            v.parse::<f64>()
                .map_err(|e| parse_error(path, 0, format!("header `{key}`: {e}")))
        })
        .transpose()
}

/// Grid of a time column: explicit header keys win, else inferred.
fn time_grid(path: &Path, cols: &Columns) -> Result<(f64, f64)> {
    let t = &cols.first;
    let dt = match header_f64(path, &cols.header, "dt_s")? {
        Some(dt) => dt,
        None if t.len() >= 2 => t[1] - t[0],
        None => return Err(parse_error(path, 0, "cannot infer dt from fewer than two rows")),
    };
    let start = match header_f64(path, &cols.header, "start_time_s")? {
        Some(s) => s,
        None => *t.first().ok_or_else(|| parse_error(path, 0, "no data rows"))?,
    };
    for (k, &tk) in t.iter().enumerate() {
        if (tk - (start + k as f64 * dt)).abs() > 1e-6 * dt {
            return Err(parse_error(path, 0, format!("time column not uniform at row {k}")));
        }
    }
    Ok((dt, start))
}

/// Write a waveform as `time_s,field_T`; `time_s` is the start of each
/// sample interval.
pub fn write_waveform(path: &Path, w: &FieldWaveform, header: &[(String, String)]) -> Result<()> {
    let mut h = header.to_vec();
    h.push(("axis".into(), w.axis().to_string()));
    h.push(("dt_s".into(), format!("{:e}", w.dt())));
    h.push(("start_time_s".into(), format!("{:e}", w.start_time())));
    let rows = w
        .samples()
        .iter()
        .enumerate()
        .map(|(k, &b)| (w.start_time() + k as f64 * w.dt(), b));
    write_columns(path, &h, "time_s,field_T", rows)
}

/// Read a waveform. Comment lines are optional; without them `dt` and the
/// start time come from the time column and the axis defaults to z.
pub fn read_waveform(path: &Path) -> Result<FieldWaveform> {
    let cols = read_columns(path, "time_s,field_T")?;
    let (dt, start) = time_grid(path, &cols)?;
    let axis = match cols.header.get("axis") {
        Some(a) => a.parse::<Axis>()?,
        None => Axis::Z,
    };
    FieldWaveform::new(cols.second, dt, start, axis)
}

/// Write a record as `time_s,signal`, with its metadata as `meta.*` keys.
pub fn write_record(path: &Path, r: &DetectionRecord, header: &[(String, String)]) -> Result<()> {
    let mut h = header.to_vec();
    h.push(("sequence".into(), r.sequence.as_str().into()));
    h.push(("n_avg".into(), r.n_avg.to_string()));
    h.push(("dt_s".into(), format!("{:e}", r.dt)));
    h.push(("start_time_s".into(), format!("{:e}", r.start_time)));
    for (k, v) in &r.metadata {
        h.push((format!("{META_PREFIX}{k}"), v.clone()));
    }
    let rows = r.samples.iter().enumerate().map(|(k, &x)| (r.time(k), x));
    write_columns(path, &h, "time_s,signal", rows)
}

pub fn read_record(path: &Path) -> Result<DetectionRecord> {
    let cols = read_columns(path, "time_s,signal")?;
    let (dt, start) = time_grid(path, &cols)?;
    let sequence = match cols.header.get("sequence") {
        Some(s) => Sequence::parse(s)?,
        None => Sequence::Continuous,
    };
    let mut r = DetectionRecord::new(cols.second, dt, start, sequence)?;
    if let Some(n) = cols.header.get("n_avg") {
        r.n_avg = n
            .parse()
            .map_err(|e| parse_error(path, 0, format!("header `n_avg`: {e}")))?;
    }
    for (k, v) in &cols.header {
        if let Some(key) = k.strip_prefix(META_PREFIX) {
            r.metadata.insert(key.to_string(), v.clone());
        }
    }
    Ok(r)
}

/// Write a one-sided spectrum as `freq_Hz,psd`.
pub fn write_spectrum(path: &Path, s: &Spectrum, header: &[(String, String)]) -> Result<()> {
    let mut h = header.to_vec();
    h.push(("window_length_s".into(), format!("{:e}", s.window_length)));
    h.push(("n_samples".into(), s.n_samples.to_string()));
    h.push(("convention".into(), "one-sided".into()));
    let rows = s.frequencies.iter().copied().zip(s.psd_values.iter().copied());
    write_columns(path, &h, "freq_Hz,psd", rows)
}

pub fn read_spectrum(path: &Path) -> Result<Spectrum> {
    let cols = read_columns(path, "freq_Hz,psd")?;
    let window_length = match header_f64(path, &cols.header, "window_length_s")? {
        Some(t) => t,
        None if cols.first.len() >= 2 => 1.0 / (cols.first[1] - cols.first[0]),
        None => return Err(parse_error(path, 0, "cannot infer window length")),
    };
    let n_samples = match cols.header.get("n_samples") {
        Some(n) => n
            .parse()
            .map_err(|e| parse_error(path, 0, format!("header `n_samples`: {e}")))?,
        None => 2 * cols.first.len().saturating_sub(1),
    };
    Ok(Spectrum {
        frequencies: cols.first,
        psd_values: cols.second,
        window_length,
        n_samples,
    })
}

/// Write `key = value` lines.
pub fn write_key_values(path: &Path, entries: &[(String, String)]) -> Result<()> {
    let mut out = create(path)?;
    let res = (|| {
        for (k, v) in entries {
            writeln!(out, "{k} = {v}")?;
        }
        out.flush()
    })();
    res.map_err(|e| Error::io(path, e))
}

/// Read `key = value` lines; `#` starts a comment line.
pub fn read_key_values(path: &Path) -> Result<Header> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let (k, v) = t
            .split_once('=')
            .ok_or_else(|| parse_error(path, i + 1, "expected `key = value`"))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}
