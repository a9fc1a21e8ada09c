use std::path::Path;

use sha2::{Digest, Sha256};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::matrix::Mat;

/// Which column holds the response.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ResponseColumn {
    Name(String),
    Index(usize),
    /// The rightmost column.
    Last,
}

impl ResponseColumn {
    /// A bare integer is a 0-based index unless it names a header column.
    pub fn parse(s: &str) -> Self {
        match s.parse() {
            Ok(i) => ResponseColumn::Index(i),
            Err(_) => ResponseColumn::Name(s.to_string()),
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn load_csv(path: &Path, response: &ResponseColumn, has_header: bool) -> Result<Dataset> {
    let bytes = std::fs::read(path)?;
    parse_csv(&bytes, response, has_header)
}

/// Parses CSV text. Line and column numbers in errors are 1-based.
pub fn parse_csv(bytes: &[u8], response: &ResponseColumn, has_header: bool) -> Result<Dataset> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::ParseError {
        line: 1 + bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count(),
        col: 1,
        msg: "invalid UTF-8".into(),
    })?;
    // The csv reader skips blank lines silently; they are errors here.
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            return Err(Error::ParseError {
                line: i + 1,
                col: 1,
                msg: "blank line".into(),
            });
        }
    }

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(false)
        .from_reader(text.as_bytes());
    let mut records = reader.records();

    let header: Option<Vec<String>> = if has_header {
        match records.next() {
            Some(r) => Some(r.map_err(csv_error)?.iter().map(|s| s.trim().to_string()).collect()),
            None => return Err(Error::ParseError { line: 1, col: 1, msg: "empty file".into() }),
        }
    } else {
        None
    };

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = header.as_ref().map(Vec::len);
    for rec in records {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let mut row = Vec::with_capacity(rec.len());
        for (c, cell) in rec.iter().enumerate() {
            let v: f64 = cell.trim().parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| Error::NonNumericCell {
                line,
                col: c + 1,
                value: cell.to_string(),
            })?;
            row.push(v);
        }
        match width {
            Some(w) if w != row.len() => {
                return Err(Error::ParseError {
                    line,
                    col: row.len().min(w) + 1,
                    msg: format!("expected {w} fields, found {}", row.len()),
                })
            }
            None => width = Some(row.len()),
            _ => {}
        }
        rows.push(row);
    }
    let width = width.unwrap_or(0);
    if rows.is_empty() {
        return Err(Error::ParseError {
            line: 1 + usize::from(has_header),
            col: 1,
            msg: "no data rows".into(),
        });
    }

    let resp = match response {
        ResponseColumn::Name(name) => header
            .as_ref()
            .and_then(|h| h.iter().position(|c| c == name))
            .ok_or_else(|| Error::MissingResponse(name.clone()))?,
        ResponseColumn::Index(i) => {
            // A header cell spelled like the number wins over the index.
            let by_name = header.as_ref().and_then(|h| h.iter().position(|c| *c == i.to_string()));
            match by_name {
                Some(pos) => pos,
                None if *i < width => *i,
                None => return Err(Error::MissingResponse(i.to_string())),
            }
        }
        ResponseColumn::Last => width.saturating_sub(1),
    };
    if width < 2 {
        return Err(Error::InvalidArgument("need at least one feature column besides the response".into()));
    }

    let n = rows.len();
    let mut y = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * (width - 1));
    for row in rows {
        for (c, v) in row.into_iter().enumerate() {
            if c == resp {
                y.push(v);
            } else {
                data.push(v);
            }
        }
    }
    Dataset::new(Mat::new(n, width - 1, data)?, y)
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    let msg = match e.kind() {
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => {
            format!("expected {expected_len} fields, found {len}")
        }
        _ => e.to_string(),
    };
    Error::ParseError { line, col: 1, msg }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SplitPolicy {
    /// Sizes differ by at most one; earlier agencies take the remainder.
    Equal,
    Sizes(Vec<usize>),
}

/// Contiguous horizontal split into `k` shards.
pub fn split_horizontal(data: &Dataset, k: usize, policy: &SplitPolicy) -> Result<Vec<Dataset>> {
    let n = data.n();
    if k == 0 {
        return Err(Error::InvalidArgument("need at least one agency".into()));
    }
    if k > n {
        return Err(Error::TooManyAgencies { n, k });
    }
    let sizes = match policy {
        SplitPolicy::Equal => (0..k).map(|i| n / k + usize::from(i < n % k)).collect(),
        SplitPolicy::Sizes(s) => {
            if s.len() != k || s.iter().sum::<usize>() != n || s.contains(&0) {
                return Err(Error::InvalidArgument(format!(
                    "sizes {s:?} do not split {n} rows into {k} non-empty shards"
                )));
            }
            s.clone()
        }
    };
    let mut at = 0;
    Ok(sizes
        .into_iter()
        .map(|len| {
            let d = data.rows(at..at + len);
            at += len;
            d
        })
        .collect())
}
