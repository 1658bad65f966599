//! On-disk formats.
//!
//! * QTD1 dense tensors: the line `qtensor-dense v1`, a line of
//!   space-separated extents, then the entries as little-endian `f64` in
//!   row-major order (last index fastest).
//! * QTO1 observations: `# shape n1 .. nK`, `# W <levels>`, the CSV header
//!   `i1,...,iK,label`, then one row per observed entry with 1-based indices.
//! * Run records: CSV with one row per solver run.

use std::fs;
use std::path::Path;

use qtensor_core::tensor::multi_index;
use qtensor_core::{DenseTensor, ObservationSet, QuantizedObservations};

use crate::error::{Error, FormatError, Result};
use crate::sweep::RunRecord;

pub const DENSE_MAGIC: &str = "qtensor-dense v1";

pub fn encode_tensor(x: &DenseTensor) -> Vec<u8> {
    let extents: Vec<String> = x.shape().iter().map(usize::to_string).collect();
    let mut out = format!("{DENSE_MAGIC}\n{}\n", extents.join(" ")).into_bytes();
    out.reserve(8 * x.len());
    for v in x.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn next_line(bytes: &[u8], start: usize) -> Option<(&[u8], usize)> {
    let end = start + bytes.get(start..)?.iter().position(|&b| b == b'\n')?;
    Some((&bytes[start..end], end + 1))
}

pub fn decode_tensor(bytes: &[u8]) -> std::result::Result<DenseTensor, FormatError> {
    let (magic, p) = next_line(bytes, 0).ok_or_else(|| FormatError::line(1, "missing header line"))?;
    if magic != DENSE_MAGIC.as_bytes() {
        return Err(FormatError::line(1, format!("expected `{DENSE_MAGIC}`")));
    }
    let (extents, start) = next_line(bytes, p).ok_or_else(|| FormatError::line(2, "missing extents line"))?;
    let extents = std::str::from_utf8(extents).map_err(|_| FormatError::line(2, "extents are not UTF-8"))?;
    let shape = extents
        .split(' ')
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| FormatError::line(2, format!("bad extent: {e}")))?;
    let zeros = DenseTensor::zeros(&shape).map_err(|e| FormatError::line(2, e.to_string()))?;
    let need = 8 * zeros.len();
    let payload = &bytes[start..];
    if payload.len() < need {
        return Err(FormatError::byte(
            bytes.len(),
            format!("payload ends after {} of {need} bytes", payload.len()),
        ));
    }
    if payload.len() > need {
        return Err(FormatError::byte(start + need, "trailing bytes after payload"));
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of eight bytes")))
        .collect();
    Ok(DenseTensor::new(shape, data).expect("length checked above"))
}

pub fn write_tensor(path: &Path, x: &DenseTensor) -> Result<()> {
    fs::write(path, encode_tensor(x)).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: &Path) -> Result<DenseTensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes).map_err(|e| Error::format(path, e))
}

pub fn encode_observations(obs: &QuantizedObservations) -> String {
    let shape = obs.shape();
    let mut out = String::new();
    let extents: Vec<String> = shape.iter().map(usize::to_string).collect();
    out.push_str(&format!("# shape {}\n# W {}\n", extents.join(" "), obs.levels()));
    let header: Vec<String> = (1..=shape.len()).map(|k| format!("i{k}")).collect();
    out.push_str(&format!("{},label\n", header.join(",")));
    for (linear, label) in obs.iter() {
        for i in multi_index(shape, linear) {
            out.push_str(&(i + 1).to_string());
            out.push(',');
        }
        out.push_str(&label.to_string());
        out.push('\n');
    }
    out
}

fn parse_prefixed<'a>(line: Option<&'a str>, n: usize, prefix: &str) -> std::result::Result<&'a str, FormatError> {
    line.and_then(|l| l.strip_prefix(prefix))
        .ok_or_else(|| FormatError::line(n, format!("expected `{prefix}...`")))
}

pub fn decode_observations(text: &str) -> std::result::Result<QuantizedObservations, FormatError> {
    let mut lines = text.split('\n');
    let shape = parse_prefixed(lines.next(), 1, "# shape ")?
        .split_whitespace()
        .map(str::parse::<usize>)
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| FormatError::line(1, format!("bad extent: {e}")))?;
    let total = DenseTensor::zeros(&shape)
        .map_err(|e| FormatError::line(1, e.to_string()))?
        .len();
    let levels: usize = parse_prefixed(lines.next(), 2, "# W ")?
        .trim()
        .parse()
        .map_err(|e| FormatError::line(2, format!("bad level count: {e}")))?;
    if !(2..=u16::MAX as usize).contains(&levels) {
        return Err(FormatError::line(2, "level count must be in 2..=65535"));
    }
    let header: Vec<String> = (1..=shape.len()).map(|k| format!("i{k}")).collect();
    let header = format!("{},label", header.join(","));
    if lines.next() != Some(header.as_str()) {
        return Err(FormatError::line(3, format!("expected header `{header}`")));
    }

    let mut entries: Vec<(usize, u16, usize)> = Vec::new();
    for (offset, line) in lines.enumerate() {
        let n = offset + 4;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != shape.len() + 1 {
            return Err(FormatError::line(n, format!("expected {} fields", shape.len() + 1)));
        }
        let mut linear = 0;
        for (k, (field, &extent)) in fields.iter().zip(&shape).enumerate() {
            let i: usize = field
                .trim()
                .parse()
                .map_err(|_| FormatError::line(n, format!("bad index `{field}`")))?;
            if i == 0 || i > extent {
                return Err(FormatError::line(
                    n,
                    format!("index i{} = {i} outside 1..={extent}", k + 1),
                ));
            }
            linear = linear * extent + (i - 1);
        }
        let label: usize = fields[shape.len()]
            .trim()
            .parse()
            .map_err(|_| FormatError::line(n, format!("bad label `{}`", fields[shape.len()])))?;
        if label == 0 || label > levels {
            return Err(FormatError::line(n, format!("label {label} outside 1..={levels}")));
        }
        entries.push((linear, label as u16, n));
    }
    if entries.is_empty() {
        return Err(FormatError::line(4, "no observations"));
    }
    entries.sort_by_key(|e| e.0);
    if let Some(w) = entries.windows(2).find(|w| w[0].0 == w[1].0) {
        let line = w[0].2.max(w[1].2);
        return Err(FormatError::line(line, "duplicate index tuple"));
    }
    debug_assert!(entries.last().unwrap().0 < total);
    let set = ObservationSet::from_linear(&shape, entries.iter().map(|e| e.0).collect())
        .map_err(|e| FormatError::line(1, e.to_string()))?;
    QuantizedObservations::new(set, entries.iter().map(|e| e.1).collect(), levels)
        .map_err(|e| FormatError::line(2, e.to_string()))
}

pub fn write_observations(path: &Path, obs: &QuantizedObservations) -> Result<()> {
    fs::write(path, encode_observations(obs)).map_err(|e| Error::io(path, e))
}

pub fn read_observations(path: &Path) -> Result<QuantizedObservations> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode_observations(&text).map_err(|e| Error::format(path, e))
}

pub const RECORD_COLUMNS: [&str; 15] = [
    "run_id",
    "seed",
    "shape",
    "r_true",
    "r_est",
    "sigma_true",
    "sigma_est",
    "W",
    "obs_rate",
    "boundaries_known",
    "rel_error",
    "pred_error",
    "iterations",
    "wall_time_ms",
    "omegas",
];

fn join<T: ToString>(values: &[T], sep: &str) -> String {
    values.iter().map(T::to_string).collect::<Vec<_>>().join(sep)
}

fn record_fields(r: &RunRecord) -> [String; 15] {
    [
        r.run_id.to_string(),
        r.seed.to_string(),
        join(&r.shape, "x"),
        r.r_true.to_string(),
        r.r_est.to_string(),
        r.sigma_true.to_string(),
        r.sigma_est.to_string(),
        r.levels.to_string(),
        r.obs_rate.to_string(),
        r.boundaries_known.to_string(),
        r.rel_error.to_string(),
        r.pred_error.map(|v| v.to_string()).unwrap_or_default(),
        r.iterations.to_string(),
        r.wall_time_ms.to_string(),
        join(&r.omegas, ";"),
    ]
}

pub fn encode_records(records: &[RunRecord]) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(RECORD_COLUMNS).expect("writing to memory");
    for r in records {
        w.write_record(record_fields(r)).expect("writing to memory");
    }
    String::from_utf8(w.into_inner().expect("writing to memory")).expect("fields are UTF-8")
}

fn parse_field<T: std::str::FromStr>(value: &str, column: &str, line: usize) -> std::result::Result<T, FormatError> {
    value
        .parse()
        .map_err(|_| FormatError::line(line, format!("bad {column} `{value}`")))
}

fn parse_list<T: std::str::FromStr>(
    value: &str,
    sep: char,
    column: &str,
    line: usize,
) -> std::result::Result<Vec<T>, FormatError> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(sep).map(|v| parse_field(v, column, line)).collect()
}

pub fn decode_records(text: &str) -> std::result::Result<Vec<RunRecord>, FormatError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(text.as_bytes());
    let mut rows = reader.records();
    let header = rows
        .next()
        .ok_or_else(|| FormatError::line(1, "missing header"))?
        .map_err(|e| FormatError::line(1, e.to_string()))?;
    if header.iter().ne(RECORD_COLUMNS) {
        return Err(FormatError::line(
            1,
            format!("expected header `{}`", RECORD_COLUMNS.join(",")),
        ));
    }
    let mut out = Vec::new();
    for row in rows {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            FormatError::line(line, e.to_string())
        })?;
        let n = row.position().map_or(0, |p| p.line() as usize);
        if row.len() != RECORD_COLUMNS.len() {
            return Err(FormatError::line(
                n,
                format!("expected {} fields", RECORD_COLUMNS.len()),
            ));
        }
        let f = |i: usize| &row[i];
        out.push(RunRecord {
            run_id: parse_field(f(0), "run_id", n)?,
            seed: parse_field(f(1), "seed", n)?,
            shape: parse_list(f(2), 'x', "shape", n)?,
            r_true: parse_field(f(3), "r_true", n)?,
            r_est: parse_field(f(4), "r_est", n)?,
            sigma_true: parse_field(f(5), "sigma_true", n)?,
            sigma_est: parse_field(f(6), "sigma_est", n)?,
            levels: parse_field(f(7), "W", n)?,
            obs_rate: parse_field(f(8), "obs_rate", n)?,
            boundaries_known: parse_field(f(9), "boundaries_known", n)?,
            rel_error: parse_field(f(10), "rel_error", n)?,
            pred_error: if f(11).is_empty() {
                None
            } else {
                Some(parse_field(f(11), "pred_error", n)?)
            },
            iterations: parse_field(f(12), "iterations", n)?,
            wall_time_ms: parse_field(f(13), "wall_time_ms", n)?,
            omegas: parse_list(f(14), ';', "omegas", n)?,
        });
    }
    Ok(out)
}

pub fn write_records(path: &Path, records: &[RunRecord]) -> Result<()> {
    fs::write(path, encode_records(records)).map_err(|e| Error::io(path, e))
}

pub fn read_records(path: &Path) -> Result<Vec<RunRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode_records(&text).map_err(|e| Error::format(path, e))
}
