use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use phononcount::io::{write_atomic, Table};
use phononcount::Result;
use serde::Serialize;
use serde_json::{json, Value};

/// What a run read, wrote and counted; saved next to its outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub events: BTreeMap<String, u64>,
    pub wall_clock_s: f64,
}

pub struct Output {
    dir: PathBuf,
    json: bool,
    started: Instant,
    manifest: RunManifest,
}

impl Output {
    pub fn new(dir: &Path, json: bool, command: &str, seed: u64, config: Value) -> Self {
        Output {
            dir: dir.to_path_buf(),
            json,
            started: Instant::now(),
            manifest: RunManifest {
                command: command.to_string(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                seed,
                config,
                inputs: Vec::new(),
                outputs: Vec::new(),
                events: BTreeMap::new(),
                wall_clock_s: 0.0,
            },
        }
    }

    pub fn input(&mut self, path: &Path) {
        self.manifest.inputs.push(path.to_path_buf());
    }

    pub fn count(&mut self, key: &str, n: u64) {
        *self.manifest.events.entry(key.to_string()).or_default() += n;
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.dir.join(file)
    }

    pub fn record(&mut self, path: PathBuf) {
        self.manifest.outputs.push(path);
    }

    pub fn table(&mut self, stem: &str, table: &Table) -> Result<()> {
        let (file, body) = if self.json {
            (format!("{stem}.json"), pretty(&table_json(table)))
        } else {
            (format!("{stem}.tsv"), table.to_tsv())
        };
        let path = self.path(&file);
        write_atomic(&path, body.as_bytes())?;
        self.count("rows", table.rows.len() as u64);
        self.record(path);
        Ok(())
    }

    /// Key-value summary; also echoed to stdout.
    pub fn summary(&mut self, stem: &str, doc: &Value) -> Result<()> {
        let (file, body) = if self.json {
            (format!("{stem}.json"), pretty(doc))
        } else {
            (format!("{stem}.tsv"), flat_tsv(stem, doc))
        };
        let path = self.path(&file);
        write_atomic(&path, body.as_bytes())?;
        self.record(path);
        print!("{body}");
        Ok(())
    }

    pub fn finish(mut self) -> Result<PathBuf> {
        self.manifest.wall_clock_s = self.started.elapsed().as_secs_f64();
        let path = self.path(&format!("{}.manifest.json", self.manifest.command));
        write_atomic(&path, pretty(&serde_json::to_value(&self.manifest).expect("serializable")).as_bytes())?;
        eprintln!("wrote {} file(s); manifest {}", self.manifest.outputs.len(), path.display());
        Ok(path)
    }
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn table_json(t: &Table) -> Value {
    let meta: serde_json::Map<String, Value> = t.meta.iter().map(|(k, v)| (k.clone(), json!(v))).collect();
    let columns: Vec<Value> = t
        .columns
        .iter()
        .map(|c| json!({"name": c.name, "doc": c.doc}))
        .collect();
    let rows: Vec<Value> = t.rows.iter().map(|r| json!(r.iter().map(|&x| num(x)).collect::<Vec<_>>())).collect();
    json!({"title": t.title, "meta": meta, "columns": columns, "rows": rows})
}

/// JSON has no infinities; they are written as strings.
pub fn num(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        json!(x.to_string())
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, x, out);
            }
        }
        Value::Array(a) => {
            for (i, x) in a.iter().enumerate() {
                flatten(&format!("{prefix}[{i}]"), x, out);
            }
        }
        Value::String(s) => out.push((prefix.to_string(), s.clone())),
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

fn flat_tsv(title: &str, doc: &Value) -> String {
    let mut pairs = Vec::new();
    flatten("", doc, &mut pairs);
    let mut s = format!("# {title}\n#key\tvalue\n");
    for (k, v) in pairs {
        s.push_str(&format!("{k}\t{v}\n"));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flattening() {
        let doc = json!({"a": 1.5, "b": {"c": "x", "d": [1, 2]}});
        let s = flat_tsv("t", &doc);
        assert!(s.contains("a\t1.5\n"));
        assert!(s.contains("b.c\tx\n"));
        assert!(s.contains("b.d[1]\t2\n"));
    }

    #[test]
    fn infinities_become_strings() {
        assert_eq!(num(f64::INFINITY), json!("inf"));
        assert_eq!(num(2.0), json!(2.0));
    }
}
