//! Plain-text formats: click-stream files and `#`-headed tab-delimited tables.
//!
//! A click-stream file is a few `# key = value` header lines followed by one
//! integer nanosecond timestamp per line.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clicks::{Channel, ClickStream, TruthMetadata};
use crate::error::{Error, Result};

const STREAM_MAGIC: &str = "# phononcount click stream v1";

pub fn write_click_stream<W: Write>(mut w: W, stream: &ClickStream) -> Result<()> {
    let t = &stream.truth;
    let mut head = String::new();
    writeln!(head, "{STREAM_MAGIC}").unwrap();
    writeln!(head, "# duration_s = {}", stream.duration).unwrap();
    writeln!(head, "# seed = {}", stream.seed).unwrap();
    writeln!(head, "# channel = {}", stream.channel).unwrap();
    writeln!(head, "# clicks = {}", stream.len()).unwrap();
    writeln!(head, "# truth.signal_rate_hz = {}", t.signal_rate).unwrap();
    writeln!(head, "# truth.gamma_opt_rad_s = {}", t.gamma_opt).unwrap();
    writeln!(head, "# truth.dark_rate_hz = {}", t.dark_rate).unwrap();
    writeln!(head, "# truth.dark_fraction = {}", t.dark_fraction).unwrap();
    writeln!(head, "# truth.efficiency = {}", t.efficiency).unwrap();
    w.write_all(head.as_bytes())?;
    let mut buf = String::with_capacity(16 * stream.len().min(1 << 20));
    for chunk in stream.timestamps.chunks(1 << 16) {
        buf.clear();
        for ts in chunk {
            writeln!(buf, "{ts}").unwrap();
        }
        w.write_all(buf.as_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn parse_err(line: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        line,
        reason: reason.into(),
    }
}

fn header_value<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| parse_err(line, format!("bad value `{v}` for `{key}`")))
}

/// Reads a click-stream file. Header keys other than `duration_s` are
/// optional; unknown keys are ignored.
pub fn read_click_stream<R: Read>(r: R) -> Result<ClickStream> {
    let mut duration = None;
    let mut seed = 0;
    let mut channel = Channel::AntiStokes;
    let mut truth = TruthMetadata::default();
    let mut declared = None;
    let mut timestamps = Vec::new();
    for (i, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        let n = i + 1;
        let s = line.trim();
        if s.is_empty() {
            continue;
        }
        if let Some(rest) = s.strip_prefix('#') {
            let Some((k, v)) = rest.split_once('=') else { continue };
            let (k, v) = (k.trim(), v.trim());
            match k {
                "duration_s" => duration = Some(header_value::<f64>(n, k, v)?),
                "seed" => seed = header_value(n, k, v)?,
                "channel" => channel = v.parse().map_err(|e: Error| parse_err(n, e.to_string()))?,
                "clicks" => declared = Some(header_value::<usize>(n, k, v)?),
                "truth.signal_rate_hz" => truth.signal_rate = header_value(n, k, v)?,
                "truth.gamma_opt_rad_s" => truth.gamma_opt = header_value(n, k, v)?,
                "truth.dark_rate_hz" => truth.dark_rate = header_value(n, k, v)?,
                "truth.dark_fraction" => truth.dark_fraction = header_value(n, k, v)?,
                "truth.efficiency" => truth.efficiency = header_value(n, k, v)?,
                _ => {}
            }
            continue;
        }
        let ts: u64 = s
            .parse()
            .map_err(|_| parse_err(n, format!("expected integer nanoseconds, got `{s}`")))?;
        if let Some(&prev) = timestamps.last() {
            if ts <= prev {
                return Err(parse_err(n, "timestamps must be strictly increasing"));
            }
        }
        timestamps.push(ts);
    }
    let duration = duration.ok_or_else(|| parse_err(0, "missing `duration_s` header"))?;
    if !(duration.is_finite() && duration > 0.0) {
        return Err(parse_err(0, format!("duration must be > 0, got {duration}")));
    }
    if let Some(d) = declared {
        if d != timestamps.len() {
            return Err(parse_err(0, format!("header declares {d} clicks, file has {}", timestamps.len())));
        }
    }
    let stream = ClickStream {
        timestamps,
        duration,
        channel,
        seed,
        truth,
    };
    stream.check_invariants(0.0)?;
    Ok(stream)
}

pub fn save_click_stream(path: &Path, stream: &ClickStream) -> Result<()> {
    let mut buf = Vec::new();
    write_click_stream(&mut buf, stream)?;
    write_atomic(path, &buf)
}

pub fn load_click_stream(path: &Path) -> Result<ClickStream> {
    read_click_stream(fs::File::open(path)?)
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid("path", format!("`{}` has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Column name plus a short description (units) for the header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub doc: String,
}

/// Numeric table with `# key = value` metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub title: String,
    pub meta: Vec<(String, String)>,
    pub columns: Vec<Column>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(title: &str, columns: &[(&str, &str)]) -> Self {
        Table {
            title: title.to_string(),
            meta: Vec::new(),
            columns: columns
                .iter()
                .map(|(n, d)| Column {
                    name: n.to_string(),
                    doc: d.to_string(),
                })
                .collect(),
            rows: Vec::new(),
        }
    }

    pub fn meta(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.meta.push((key.to_string(), value.to_string()));
        self
    }

    pub fn push(&mut self, row: Vec<f64>) {
        assert_eq!(row.len(), self.columns.len(), "row width");
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c.name == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    /// Tab-delimited text. Numbers use Rust's shortest round-trip formatting.
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        writeln!(s, "# {}", self.title).unwrap();
        for (k, v) in &self.meta {
            writeln!(s, "# {k} = {v}").unwrap();
        }
        for (i, c) in self.columns.iter().enumerate() {
            writeln!(s, "# column {}: {} ({})", i + 1, c.name, c.doc).unwrap();
        }
        let names: Vec<&str> = self.columns.iter().map(|c| c.name.as_str()).collect();
        writeln!(s, "#{}", names.join("\t")).unwrap();
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(|v| format!("{v}")).collect();
            writeln!(s, "{}", cells.join("\t")).unwrap();
        }
        s
    }

    /// Parses text written by [`Table::to_tsv`].
    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().peekable();
        let title = match lines.next() {
            Some((_, l)) if l.starts_with("# ") => l[2..].to_string(),
            _ => return Err(parse_err(1, "missing title line")),
        };
        let mut t = Table {
            title,
            meta: Vec::new(),
            columns: Vec::new(),
            rows: Vec::new(),
        };
        let mut names: Option<Vec<String>> = None;
        for (i, line) in lines {
            let n = i + 1;
            if let Some(rest) = line.strip_prefix("# column ") {
                let (_, entry) = rest.split_once(": ").ok_or_else(|| parse_err(n, "bad column line"))?;
                let (name, doc) = entry.split_once(" (").ok_or_else(|| parse_err(n, "bad column line"))?;
                t.columns.push(Column {
                    name: name.to_string(),
                    doc: doc.trim_end_matches(')').to_string(),
                });
            } else if let Some(rest) = line.strip_prefix("# ") {
                if let Some((k, v)) = rest.split_once(" = ") {
                    t.meta.push((k.to_string(), v.to_string()));
                }
            } else if let Some(rest) = line.strip_prefix('#') {
                names = Some(rest.split('\t').map(str::to_string).collect());
            } else if !line.trim().is_empty() {
                let row: Vec<f64> = line
                    .split('\t')
                    .map(|c| c.parse::<f64>().map_err(|_| parse_err(n, format!("bad number `{c}`"))))
                    .collect::<Result<_>>()?;
                if row.len() != t.columns.len() {
                    return Err(parse_err(n, format!("expected {} cells, got {}", t.columns.len(), row.len())));
                }
                t.rows.push(row);
            }
        }
        if let Some(names) = names {
            if names.len() != t.columns.len() || names.iter().zip(&t.columns).any(|(a, c)| *a != c.name) {
                return Err(parse_err(0, "column header does not match column descriptions"));
            }
        }
        Ok(t)
    }
}
