//! Text formats: observation dumps, factor dumps and rating triplets.
//!
//! Observation dump: a header line `n m nnz`, then `nnz` lines `i j value`
//! with 0-based indices. Factor dump: a header `n m r`, then the `n` rows of
//! `U` followed by the `m` rows of `V`, whitespace separated. Values are
//! written in Rust's shortest round-trip form, so dumps reload bit-exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use l20mc_core::{FactorPair, Mat, ObservationSet};

use crate::error::{CliError, Result};

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

/// Line reader that remembers where it is for error messages.
struct Lines<R> {
    inner: std::io::Lines<R>,
    path: PathBuf,
    line: usize,
}

impl<R: BufRead> Lines<R> {
    fn new(reader: R, path: &Path) -> Self {
        Lines {
            inner: reader.lines(),
            path: path.to_path_buf(),
            line: 0,
        }
    }

    /// Next line that is neither blank nor a `#` comment.
    fn next_content(&mut self) -> Result<Option<String>> {
        for item in self.inner.by_ref() {
            self.line += 1;
            let text = item.map_err(|e| CliError::io(&self.path, e))?;
            let t = text.trim();
            if !t.is_empty() && !t.starts_with('#') {
                return Ok(Some(t.to_string()));
            }
        }
        Ok(None)
    }

    fn err(&self, msg: impl Into<String>) -> CliError {
        CliError::Parse {
            path: self.path.clone(),
            line: self.line,
            msg: msg.into(),
        }
    }

    fn expect(&mut self, what: &str) -> Result<String> {
        self.next_content()?
            .ok_or_else(|| self.err(format!("unexpected end of file, expected {what}")))
    }

    fn parse<T: std::str::FromStr>(&self, token: Option<&str>, what: &str) -> Result<T> {
        let tok = token.ok_or_else(|| self.err(format!("missing {what}")))?;
        tok.parse()
            .map_err(|_| self.err(format!("cannot parse {what} from `{tok}`")))
    }
}

pub fn write_observations<W: Write>(mut w: W, obs: &ObservationSet) -> std::io::Result<()> {
    writeln!(w, "{} {} {}", obs.n_rows(), obs.n_cols(), obs.nnz())?;
    for (i, j, v) in obs.iter() {
        writeln!(w, "{i} {j} {v:?}")?;
    }
    w.flush()
}

pub fn read_observations<R: Read>(r: R, path: &Path) -> Result<ObservationSet> {
    let mut lines = Lines::new(BufReader::new(r), path);
    let header = lines.expect("header `n m nnz`")?;
    let mut it = header.split_whitespace();
    let n: usize = lines.parse(it.next(), "n")?;
    let m: usize = lines.parse(it.next(), "m")?;
    let nnz: usize = lines.parse(it.next(), "nnz")?;
    let mut entries = Vec::with_capacity(nnz);
    for _ in 0..nnz {
        let text = lines.expect("an `i j value` line")?;
        let mut it = text.split_whitespace();
        let i: usize = lines.parse(it.next(), "row index")?;
        let j: usize = lines.parse(it.next(), "column index")?;
        let v: f64 = lines.parse(it.next(), "value")?;
        if i >= n || j >= m {
            return Err(lines.err(format!("entry ({i}, {j}) outside {n}x{m}")));
        }
        entries.push((i, j, v));
    }
    if lines.next_content()?.is_some() {
        return Err(lines.err(format!("more than the declared {nnz} entries")));
    }
    ObservationSet::new(n, m, entries).map_err(|e| CliError::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg: e.to_string(),
    })
}

pub fn save_observations(path: &Path, obs: &ObservationSet) -> Result<()> {
    write_observations(create(path)?, obs).map_err(|e| CliError::io(path, e))
}

pub fn load_observations(path: &Path) -> Result<ObservationSet> {
    read_observations(open(path)?, path)
}

fn write_rows<W: Write>(w: &mut W, m: &Mat) -> std::io::Result<()> {
    for i in 0..m.rows() {
        let mut first = true;
        for x in m.row(i) {
            if !first {
                w.write_all(b" ")?;
            }
            write!(w, "{x:?}")?;
            first = false;
        }
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_factors<W: Write>(mut w: W, fp: &FactorPair) -> std::io::Result<()> {
    writeln!(w, "{} {} {}", fp.u.rows(), fp.v.rows(), fp.width())?;
    write_rows(&mut w, &fp.u)?;
    write_rows(&mut w, &fp.v)?;
    w.flush()
}

pub fn read_factors<R: Read>(r: R, path: &Path) -> Result<FactorPair> {
    let mut lines = Lines::new(BufReader::new(r), path);
    let header = lines.expect("header `n m r`")?;
    let mut it = header.split_whitespace();
    let n: usize = lines.parse(it.next(), "n")?;
    let m: usize = lines.parse(it.next(), "m")?;
    let r: usize = lines.parse(it.next(), "r")?;
    let read_block = |rows: usize, lines: &mut Lines<_>| -> Result<Mat> {
        let mut data = Vec::with_capacity(rows * r);
        for _ in 0..rows {
            let text = lines.expect("a factor row")?;
            let before = data.len();
            for tok in text.split_whitespace() {
                data.push(lines.parse::<f64>(Some(tok), "factor entry")?);
            }
            if data.len() - before != r {
                return Err(lines.err(format!("expected {r} values, found {}", data.len() - before)));
            }
        }
        Ok(Mat::from_row_major(rows, r, data)?)
    };
    let u = read_block(n, &mut lines)?;
    let v = read_block(m, &mut lines)?;
    if lines.next_content()?.is_some() {
        return Err(lines.err("trailing content after the factor rows"));
    }
    Ok(FactorPair::new(u, v)?)
}

pub fn save_factors(path: &Path, fp: &FactorPair) -> Result<()> {
    write_factors(create(path)?, fp).map_err(|e| CliError::io(path, e))
}

pub fn load_factors(path: &Path) -> Result<FactorPair> {
    read_factors(open(path)?, path)
}

pub fn save_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(|e| CliError::io(path, std::io::Error::other(e)))?;
    w.write_all(b"\n")
        .and_then(|_| w.flush())
        .map_err(|e| CliError::io(path, e))
}

/// Parses a JSON file, naming the offending field on failure.
pub fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let mut text = String::new();
    open(path)?
        .read_to_string(&mut text)
        .map_err(|e| CliError::io(path, e))?;
    parse_json(&text, path)
}

pub fn parse_json<T: serde::de::DeserializeOwned>(text: &str, path: &Path) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| CliError::Spec {
        path: path.to_path_buf(),
        field: e.path().to_string(),
        msg: e.inner().to_string(),
    })
}

/// Rating triplets read from a delimited text file.
#[derive(Clone, Debug, PartialEq)]
pub struct RatingTable {
    /// 0-based `(user, item, rating)`.
    pub ratings: Vec<(usize, usize, f64)>,
    pub n_users: usize,
    pub n_items: usize,
    /// Whether the file's ids were shifted down by one.
    pub one_based: bool,
}

/// Reads `user <sep> item <sep> rating [extra…]` lines.
///
/// With no delimiter, commas, tabs, `::` and runs of spaces all separate
/// fields. Ids are treated as 1-based when no user or item id is 0.
pub fn read_triplets<R: Read>(r: R, path: &Path, delimiter: Option<&str>) -> Result<RatingTable> {
    let mut lines = Lines::new(BufReader::new(r), path);
    let mut raw: Vec<(u64, u64, f64)> = Vec::new();
    while let Some(text) = lines.next_content()? {
        let fields: Vec<&str> = match delimiter {
            Some(d) => text.split(d).map(str::trim).collect(),
            None => text
                .split(|c: char| c == ',' || c == ':' || c == ';' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .collect(),
        };
        if fields.len() < 3 {
            return Err(lines.err(format!("expected `user item rating`, found {} field(s)", fields.len())));
        }
        let user: u64 = lines.parse(Some(fields[0]), "user id")?;
        let item: u64 = lines.parse(Some(fields[1]), "item id")?;
        let rating: f64 = lines.parse(Some(fields[2]), "rating")?;
        if !rating.is_finite() {
            return Err(lines.err("rating is not finite"));
        }
        raw.push((user, item, rating));
    }
    if raw.is_empty() {
        return Err(CliError::Parse {
            path: path.to_path_buf(),
            line: lines.line,
            msg: "no ratings found".into(),
        });
    }
    let min_id = raw.iter().map(|&(u, i, _)| u.min(i)).min().unwrap_or(0);
    let shift = u64::from(min_id >= 1);
    let ratings: Vec<(usize, usize, f64)> = raw
        .iter()
        .map(|&(u, i, v)| ((u - shift) as usize, (i - shift) as usize, v))
        .collect();
    let n_users = ratings.iter().map(|r| r.0).max().unwrap_or(0) + 1;
    let n_items = ratings.iter().map(|r| r.1).max().unwrap_or(0) + 1;
    Ok(RatingTable {
        ratings,
        n_users,
        n_items,
        one_based: shift == 1,
    })
}

pub fn load_triplets(path: &Path, delimiter: Option<&str>) -> Result<RatingTable> {
    read_triplets(open(path)?, path, delimiter)
}
