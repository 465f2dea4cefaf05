//! CSV tables, run manifests and output files.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nalgebra::DMatrix;
use nngp::Point;
use serde::Serialize;

/// Geospatial table with columns `sx, sy[, y], covariates...`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoTable {
    pub points: Vec<Point>,
    pub y: Option<Vec<f64>>,
    pub x: DMatrix<f64>,
    pub covariate_names: Vec<String>,
}

impl GeoTable {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Fixed 17-significant-digit formatting, exact under reparsing.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Parses a table. `source` names the input in error messages.
pub fn parse_table(reader: impl Read, source: &str, require_y: bool) -> Result<GeoTable> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .with_context(|| format!("{source}: cannot read the header row"))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        bail!("{source}: input is empty");
    }
    if header.len() < 2 || !header[0].eq_ignore_ascii_case("sx") || !header[1].eq_ignore_ascii_case("sy") {
        bail!(
            "{source}: line 1: the header must start with 'sx, sy', found '{}'",
            header.join(", ")
        );
    }
    let has_y = header.get(2).is_some_and(|h| h.eq_ignore_ascii_case("y"));
    if require_y && !has_y {
        bail!("{source}: line 1: the third column must be 'y'");
    }
    let first_cov = if has_y { 3 } else { 2 };
    let covariate_names = header[first_cov..].to_vec();
    if let Some(k) = covariate_names.iter().position(String::is_empty) {
        bail!("{source}: line 1: column {} has an empty name", first_cov + k + 1);
    }

    let p = covariate_names.len();
    let mut points = Vec::new();
    let mut y = Vec::new();
    let mut xs = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| match e.position() {
            Some(pos) => anyhow::anyhow!("{source}: line {}: {e}", pos.line()),
            None => anyhow::anyhow!("{source}: {e}"),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |k: usize| -> Result<f64> {
            let raw = record.get(k).unwrap_or("");
            if raw.is_empty() {
                bail!("{source}: line {line}: missing value in column '{}'", header[k]);
            }
            let v: f64 = raw.parse().map_err(|_| {
                anyhow::anyhow!("{source}: line {line}: cannot parse '{raw}' in column '{}'", header[k])
            })?;
            if !v.is_finite() {
                bail!("{source}: line {line}: non-finite value in column '{}'", header[k]);
            }
            Ok(v)
        };
        points.push(Point::new(field(0)?, field(1)?));
        if has_y {
            y.push(field(2)?);
        }
        for k in 0..p {
            xs.push(field(first_cov + k)?);
        }
    }
    if points.is_empty() {
        bail!("{source}: no data rows");
    }
    let n = points.len();
    Ok(GeoTable {
        points,
        y: has_y.then_some(y),
        x: DMatrix::from_row_slice(n, p, &xs),
        covariate_names,
    })
}

pub fn read_table(path: &Path, require_y: bool) -> Result<GeoTable> {
    let file = fs::File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    parse_table(file, &path.display().to_string(), require_y)
}

pub fn table_to_string(table: &GeoTable) -> Result<String> {
    let mut header = vec!["sx".to_string(), "sy".to_string()];
    if table.y.is_some() {
        header.push("y".into());
    }
    header.extend(table.covariate_names.iter().cloned());
    let rows = (0..table.len()).map(|i| {
        let mut row = vec![fmt_f64(table.points[i].x), fmt_f64(table.points[i].y)];
        if let Some(y) = &table.y {
            row.push(fmt_f64(y[i]));
        }
        row.extend(table.x.row(i).iter().map(|&v| fmt_f64(v)));
        row
    });
    csv_string(&header, rows)
}

pub fn write_table(path: &Path, table: &GeoTable) -> Result<()> {
    write_file(path, table_to_string(table)?.as_bytes())
}

pub fn csv_string<H: AsRef<str>>(header: &[H], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header.iter().map(AsRef::as_ref))?;
    for row in rows {
        w.write_record(&row)?;
    }
    Ok(String::from_utf8(w.into_inner().context("flushing CSV")?)?)
}

pub fn write_csv<H: AsRef<str>>(path: &Path, header: &[H], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    write_file(path, csv_string(header, rows)?.as_bytes())
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display()))
}

/// Collects the files a command writes and records them in its manifest.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("cannot create output directory {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn path(&mut self, name: &str) -> PathBuf {
        self.written.push(name.to_string());
        self.root.join(name)
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }
}

/// Everything needed to re-run a command.
#[derive(Debug, Serialize)]
pub struct Manifest<'a, P: Serialize> {
    pub command: &'a str,
    pub version: &'a str,
    pub seed: u64,
    pub threads: usize,
    pub parameters: &'a P,
    pub wall_time_seconds: f64,
    pub outputs: &'a [String],
}
