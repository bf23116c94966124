//! File formats: PFG v1 fields, pfgb boundary traces, key = value manifests,
//! and the flat `[section]` config syntax used by the CLI.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{BoundaryValues, ComplexField, GridSpec, ScalarField};

/// A field read from a PFG v1 file.
#[derive(Debug, Clone)]
pub enum PfgField {
    Real(ScalarField),
    Complex(ComplexField),
}

fn parse_err(msg: impl Into<String>) -> Error {
    Error::Parse(msg.into())
}

fn fmt_value(v: f64) -> String {
    format!("{v:.16e}")
}

fn pfg_header(kind: char, g: &GridSpec) -> String {
    format!(
        "pfg 1 {} {} {} {} {} {} {}",
        kind,
        g.nx,
        g.ny,
        fmt_value(g.x0),
        fmt_value(g.y0),
        fmt_value(g.dx),
        fmt_value(g.dy)
    )
}

/// Serialize a real field as PFG v1 text.
pub fn scalar_pfg_string(f: &ScalarField) -> String {
    let g = f.grid();
    let mut s = pfg_header('r', g);
    s.push('\n');
    for j in 0..g.ny {
        let mut line = String::new();
        for i in 0..g.nx {
            if i > 0 {
                line.push(' ');
            }
            let _ = write!(line, "{}", fmt_value(f.get(i, j)));
        }
        s.push_str(&line);
        s.push('\n');
    }
    s
}

/// Serialize a complex field as PFG v1 text (re im pairs).
pub fn complex_pfg_string(f: &ComplexField) -> String {
    let g = f.grid();
    let mut s = pfg_header('c', g);
    s.push('\n');
    for j in 0..g.ny {
        let mut line = String::new();
        for i in 0..g.nx {
            if i > 0 {
                line.push(' ');
            }
            let v = f.get(i, j);
            let _ = write!(line, "{} {}", fmt_value(v.re), fmt_value(v.im));
        }
        s.push_str(&line);
        s.push('\n');
    }
    s
}

/// Parse PFG v1 text.
pub fn parse_pfg(text: &str) -> Result<PfgField> {
    let mut tokens = text.split_whitespace();
    let mut next = |what: &str| {
        tokens
            .next()
            .ok_or_else(|| parse_err(format!("pfg: missing {what}")))
    };
    if next("magic")? != "pfg" {
        return Err(parse_err("pfg: bad magic"));
    }
    if next("version")? != "1" {
        return Err(parse_err("pfg: unsupported version"));
    }
    let kind = next("kind")?;
    let nx: usize = next("nx")?.parse().map_err(|_| parse_err("pfg: bad nx"))?;
    let ny: usize = next("ny")?.parse().map_err(|_| parse_err("pfg: bad ny"))?;
    let mut real = |what: &str| -> Result<f64> {
        next(what)?
            .parse()
            .map_err(|_| parse_err(format!("pfg: bad {what}")))
    };
    let (x0, y0, dx, dy) = (real("x0")?, real("y0")?, real("dx")?, real("dy")?);
    let grid = GridSpec::new(nx, ny, x0, y0, dx, dy)?;
    let n = nx * ny;
    match kind {
        "r" => {
            let mut vals = Vec::with_capacity(n);
            for _ in 0..n {
                vals.push(real("value")?);
            }
            Ok(PfgField::Real(ScalarField::new(grid, vals)?))
        }
        "c" => {
            let mut vals = Vec::with_capacity(n);
            for _ in 0..n {
                let re = real("re")?;
                let im = real("im")?;
                vals.push(Complex64::new(re, im));
            }
            Ok(PfgField::Complex(ComplexField::new(grid, vals)?))
        }
        other => Err(parse_err(format!("pfg: unknown kind {other:?}"))),
    }
}

pub fn write_scalar_pfg(path: &Path, f: &ScalarField) -> Result<()> {
    fs::write(path, scalar_pfg_string(f))?;
    Ok(())
}

pub fn write_complex_pfg(path: &Path, f: &ComplexField) -> Result<()> {
    fs::write(path, complex_pfg_string(f))?;
    Ok(())
}

pub fn read_scalar_pfg(path: &Path) -> Result<ScalarField> {
    match parse_pfg(&fs::read_to_string(path)?)? {
        PfgField::Real(f) => Ok(f),
        PfgField::Complex(_) => Err(parse_err("expected a real field, found complex")),
    }
}

pub fn read_complex_pfg(path: &Path) -> Result<ComplexField> {
    match parse_pfg(&fs::read_to_string(path)?)? {
        PfgField::Real(f) => Ok(f.to_complex()),
        PfgField::Complex(f) => Ok(f),
    }
}

/// Serialize boundary values with their perimeter parameters:
/// `pfgb 1 <count>` then `s re im` per node.
pub fn pfgb_string(params: &[f64], values: &BoundaryValues<Complex64>) -> Result<String> {
    if params.len() != values.values.len() {
        return Err(Error::Dimension(
            "boundary parameter and value counts differ".into(),
        ));
    }
    let mut s = format!("pfgb 1 {}\n", params.len());
    for (p, v) in params.iter().zip(&values.values) {
        let _ = writeln!(s, "{} {} {}", fmt_value(*p), fmt_value(v.re), fmt_value(v.im));
    }
    Ok(s)
}

/// Parse a pfgb file into (parameters, values).
pub fn parse_pfgb(text: &str) -> Result<(Vec<f64>, BoundaryValues<Complex64>)> {
    let mut tokens = text.split_whitespace();
    let mut next = |what: &str| {
        tokens
            .next()
            .ok_or_else(|| parse_err(format!("pfgb: missing {what}")))
    };
    if next("magic")? != "pfgb" {
        return Err(parse_err("pfgb: bad magic"));
    }
    if next("version")? != "1" {
        return Err(parse_err("pfgb: unsupported version"));
    }
    let count: usize = next("count")?
        .parse()
        .map_err(|_| parse_err("pfgb: bad count"))?;
    let mut real = |what: &str| -> Result<f64> {
        next(what)?
            .parse()
            .map_err(|_| parse_err(format!("pfgb: bad {what}")))
    };
    let mut params = Vec::with_capacity(count);
    let mut values = Vec::with_capacity(count);
    for _ in 0..count {
        params.push(real("s")?);
        let re = real("re")?;
        let im = real("im")?;
        values.push(Complex64::new(re, im));
    }
    Ok((params, BoundaryValues::new(values)))
}

pub fn write_pfgb(path: &Path, params: &[f64], values: &BoundaryValues<Complex64>) -> Result<()> {
    fs::write(path, pfgb_string(params, values)?)?;
    Ok(())
}

pub fn read_pfgb(path: &Path) -> Result<(Vec<f64>, BoundaryValues<Complex64>)> {
    parse_pfgb(&fs::read_to_string(path)?)
}

/// Write an ordered key = value manifest.
pub fn manifest_string(entries: &[(String, String)]) -> String {
    let mut s = String::new();
    for (k, v) in entries {
        let _ = writeln!(s, "{k} = {v}");
    }
    s
}

pub fn write_manifest(path: &Path, entries: &[(String, String)]) -> Result<()> {
    fs::write(path, manifest_string(entries))?;
    Ok(())
}

pub fn parse_manifest(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| parse_err(format!("manifest line {}: missing '='", lineno + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn read_manifest(path: &Path) -> Result<Vec<(String, String)>> {
    parse_manifest(&fs::read_to_string(path)?)
}

/// Flat key = value configuration with `[section]` headers; keys inside a
/// section are addressed as "section.key".
#[derive(Debug, Clone, Default)]
pub struct Config {
    map: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Config> {
        let mut map = BTreeMap::new();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(inner) = line.strip_prefix('[') {
                let name = inner
                    .strip_suffix(']')
                    .ok_or_else(|| {
                        Error::Config(format!("config line {}: unclosed section", lineno + 1))
                    })?
                    .trim();
                if name.is_empty() {
                    return Err(Error::Config(format!(
                        "config line {}: empty section name",
                        lineno + 1
                    )));
                }
                section = name.to_string();
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("config line {}: expected key = value", lineno + 1))
            })?;
            let key = if section.is_empty() {
                k.trim().to_string()
            } else {
                format!("{section}.{}", k.trim())
            };
            map.insert(key, v.trim().to_string());
        }
        Ok(Config { map })
    }

    pub fn load(path: &Path) -> Result<Config> {
        Config::parse(&fs::read_to_string(path)?)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|s| s.as_str())
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.map.insert(key.to_string(), value.to_string());
    }

    pub fn get_f64(&self, key: &str) -> Result<Option<f64>> {
        self.map
            .get(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| Error::Config(format!("config key {key}: bad float {v:?}")))
            })
            .transpose()
    }

    pub fn get_usize(&self, key: &str) -> Result<Option<usize>> {
        self.map
            .get(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| Error::Config(format!("config key {key}: bad integer {v:?}")))
            })
            .transpose()
    }

    pub fn get_u64(&self, key: &str) -> Result<Option<u64>> {
        self.map
            .get(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| Error::Config(format!("config key {key}: bad integer {v:?}")))
            })
            .transpose()
    }

    pub fn get_bool(&self, key: &str) -> Result<Option<bool>> {
        self.map
            .get(key)
            .map(|v| match v.as_str() {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                other => Err(Error::Config(format!("config key {key}: bad bool {other:?}"))),
            })
            .transpose()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(|s| s.as_str())
    }

    /// Canonical single-line rendering used for config hashing.
    pub fn canonical_string(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.map {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }
}

/// Write an RFC-4180 CSV table (header + string rows).
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Parse(e.to_string()))?;
    w.write_record(header).map_err(|e| Error::Parse(e.to_string()))?;
    for row in rows {
        w.write_record(row).map_err(|e| Error::Parse(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
