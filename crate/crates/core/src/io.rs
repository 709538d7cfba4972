//! Text file formats.
//!
//! All tables are comma-separated UTF-8 with a header row and `.` decimals.
//! Lines starting with `#` are comments; writers use them to embed the run
//! configuration. Floats are written with Rust's shortest round-trip
//! formatting, so reading a file back gives bit-identical values.
//!
//! Probability file:
//!
//! ```text
//! id,label,p0,p1,...,p{K-1}
//! img_0001,3,0.01,0.02,...
//! ```
//!
//! Calibration record (`format_version=1`): `key=value` lines followed by a
//! `scores` line and one ascending calibration score per line.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use crate::conformal::{CalibrationRecord, Example, PredictionSet};
use crate::dataprep::{DatasetManifest, TileRecord};
use crate::error::{Error, Result};
use crate::score::{ProbabilityVector, ScoreKind, ScoreSpec, UMode};

pub const RECORD_FORMAT_VERSION: u32 = 1;

/// One row of a probability file.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub id: String,
    pub label: usize,
    pub probs: ProbabilityVector,
}

impl LabeledExample {
    pub fn to_example(&self) -> Example {
        (self.probs.clone(), self.label)
    }
}

/// Write `lines` as `# ` comments.
pub fn write_preamble<W: Write>(out: &mut W, lines: &[String]) -> Result<()> {
    for line in lines {
        writeln!(out, "# {line}")?;
    }
    Ok(())
}

/// Extract the text after `# <key>: ` from the first matching comment line.
pub fn find_comment_value(text: &str, key: &str) -> Option<String> {
    let prefix = format!("# {key}: ");
    text.lines()
        .take_while(|l| l.starts_with('#'))
        .find_map(|l| l.strip_prefix(&prefix).map(str::to_string))
}

fn data_lines<R: BufRead>(input: R) -> impl Iterator<Item = (usize, std::io::Result<String>)> {
    input
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| match l {
            Ok(s) => !(s.trim().is_empty() || s.starts_with('#')),
            Err(_) => true,
        })
}

/// Parse a probability file. `origin` names the source in error messages.
pub fn read_probability_file<R: BufRead>(input: R, origin: &str) -> Result<Vec<LabeledExample>> {
    let mut lines = data_lines(input);
    let (header_line, header) = match lines.next() {
        Some((n, l)) => (n, l?),
        None => return Err(Error::parse(origin, 0, "missing header row")),
    };
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 4 || cols[0] != "id" || cols[1] != "label" {
        return Err(Error::parse(
            origin,
            header_line,
            "header must be 'id,label,p0,...' with at least two classes",
        ));
    }
    for (k, name) in cols[2..].iter().enumerate() {
        if *name != format!("p{k}") {
            return Err(Error::parse(origin, header_line, format!("expected column p{k}, found '{name}'")));
        }
    }
    let num_classes = cols.len() - 2;

    let mut rows = Vec::new();
    for (n, line) in lines {
        let line = line?;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != num_classes + 2 {
            return Err(Error::parse(
                origin,
                n,
                format!("expected {} fields, found {}", num_classes + 2, fields.len()),
            ));
        }
        let label: usize = fields[1]
            .parse()
            .map_err(|_| Error::parse(origin, n, format!("bad label '{}'", fields[1])))?;
        if label >= num_classes {
            return Err(Error::parse(origin, n, format!("label {label} outside [0, {num_classes})")));
        }
        let probs = fields[2..]
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| Error::parse(origin, n, format!("bad probability '{f}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        let probs = ProbabilityVector::new(probs).map_err(|e| Error::parse(origin, n, e.to_string()))?;
        rows.push(LabeledExample {
            id: fields[0].to_string(),
            label,
            probs,
        });
    }
    if rows.is_empty() {
        return Err(Error::parse(origin, header_line, "no data rows"));
    }
    Ok(rows)
}

pub fn write_probability_file<W: Write>(out: &mut W, rows: &[LabeledExample]) -> Result<()> {
    let k = rows.first().map_or(0, |r| r.probs.num_classes());
    let mut header = String::from("id,label");
    for i in 0..k {
        let _ = write!(header, ",p{i}");
    }
    writeln!(out, "{header}")?;
    for row in rows {
        if row.id.contains(',') {
            return Err(Error::InvalidConfig(format!("example id '{}' contains a comma", row.id)));
        }
        write!(out, "{},{}", row.id, row.label)?;
        for p in row.probs.as_slice() {
            write!(out, ",{p}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// `id,s0,...,s{K-1}` score matrix.
pub fn write_scores<W: Write>(out: &mut W, ids: &[String], scores: &[Vec<f64>]) -> Result<()> {
    let k = scores.first().map_or(0, Vec::len);
    let mut header = String::from("id");
    for i in 0..k {
        let _ = write!(header, ",s{i}");
    }
    writeln!(out, "{header}")?;
    for (id, row) in ids.iter().zip(scores) {
        write!(out, "{id}")?;
        for s in row {
            write!(out, ",{s}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// `id,label,size,classes` with classes separated by `;`.
pub fn write_prediction_sets<W: Write>(
    out: &mut W,
    rows: &[(String, usize, PredictionSet)],
) -> Result<()> {
    writeln!(out, "id,label,size,classes")?;
    for (id, label, set) in rows {
        let classes: Vec<String> = set.classes().iter().map(usize::to_string).collect();
        writeln!(out, "{id},{label},{},{}", set.size(), classes.join(";"))?;
    }
    Ok(())
}

pub fn write_record<W: Write>(out: &mut W, record: &CalibrationRecord) -> Result<()> {
    let spec = &record.spec;
    writeln!(out, "format_version={RECORD_FORMAT_VERSION}")?;
    writeln!(out, "kind={}", spec.kind)?;
    writeln!(out, "lambda={}", spec.lambda)?;
    writeln!(out, "gamma={}", spec.gamma)?;
    writeln!(out, "k_reg={}", spec.k_reg)?;
    writeln!(out, "u_mode={}", spec.u_mode)?;
    writeln!(out, "alpha={}", record.alpha)?;
    writeln!(out, "num_classes={}", record.num_classes)?;
    writeln!(out, "n_cal={}", record.n_cal)?;
    writeln!(out, "q_cal={}", record.q_cal)?;
    writeln!(out, "scores")?;
    for s in &record.sorted_scores {
        writeln!(out, "{s}")?;
    }
    Ok(())
}

pub fn read_record<R: BufRead>(input: R, origin: &str) -> Result<CalibrationRecord> {
    let mut keys: BTreeMap<String, (usize, String)> = BTreeMap::new();
    let mut scores = Vec::new();
    let mut in_scores = false;
    for (n, line) in data_lines(input) {
        let line = line?;
        let line = line.trim();
        if in_scores {
            let s: f64 = line
                .parse()
                .map_err(|_| Error::parse(origin, n, format!("bad score '{line}'")))?;
            scores.push(s);
        } else if line == "scores" {
            in_scores = true;
        } else {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(origin, n, "expected key=value"))?;
            keys.insert(k.trim().to_string(), (n, v.trim().to_string()));
        }
    }
    let get = |key: &str| -> Result<(usize, &str)> {
        keys.get(key)
            .map(|(n, v)| (*n, v.as_str()))
            .ok_or_else(|| Error::parse(origin, 0, format!("missing key '{key}'")))
    };
    fn num<T: std::str::FromStr>(origin: &str, (n, v): (usize, &str), key: &str) -> Result<T> {
        v.parse()
            .map_err(|_| Error::parse(origin, n, format!("bad value for {key}: '{v}'")))
    }
    let version: u32 = num(origin, get("format_version")?, "format_version")?;
    if version != RECORD_FORMAT_VERSION {
        return Err(Error::parse(origin, 0, format!("unsupported format_version {version}")));
    }
    let (n, kind) = get("kind")?;
    let kind: ScoreKind = kind.parse().map_err(|e: Error| Error::parse(origin, n, e.to_string()))?;
    let (n, u_mode) = get("u_mode")?;
    let u_mode: UMode = u_mode.parse().map_err(|e: Error| Error::parse(origin, n, e.to_string()))?;
    let spec = ScoreSpec {
        kind,
        lambda: num(origin, get("lambda")?, "lambda")?,
        gamma: num(origin, get("gamma")?, "gamma")?,
        k_reg: num(origin, get("k_reg")?, "k_reg")?,
        u_mode,
    };
    let record = CalibrationRecord {
        q_cal: num(origin, get("q_cal")?, "q_cal")?,
        alpha: num(origin, get("alpha")?, "alpha")?,
        n_cal: num(origin, get("n_cal")?, "n_cal")?,
        num_classes: num(origin, get("num_classes")?, "num_classes")?,
        spec,
        sorted_scores: scores,
    };
    if record.sorted_scores.len() != record.n_cal {
        return Err(Error::parse(
            origin,
            0,
            format!("n_cal={} but {} scores listed", record.n_cal, record.sorted_scores.len()),
        ));
    }
    if record.sorted_scores.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::parse(origin, 0, "scores are not ascending"));
    }
    spec.validate(record.num_classes)
        .map_err(|e| Error::parse(origin, 0, e.to_string()))?;
    Ok(record)
}

/// Tile table: `source,x_offset,y_offset,tile_size,label,label_name,pixel_counts`
/// where `pixel_counts` lists the non-zero `id:count` pairs separated by `;`.
pub fn write_manifest<W: Write>(out: &mut W, manifest: &DatasetManifest) -> Result<()> {
    writeln!(out, "source,x_offset,y_offset,tile_size,label,label_name,pixel_counts")?;
    for tile in &manifest.tiles {
        write_tile(out, manifest, tile)?;
    }
    Ok(())
}

fn write_tile<W: Write>(out: &mut W, manifest: &DatasetManifest, tile: &TileRecord) -> Result<()> {
    let name = manifest
        .classes
        .names()
        .get(&tile.label)
        .map_or("", String::as_str);
    let counts: Vec<String> = tile
        .pixel_counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(id, c)| format!("{id}:{c}"))
        .collect();
    writeln!(
        out,
        "{},{},{},{},{},{},{}",
        tile.source,
        tile.x_offset,
        tile.y_offset,
        tile.tile_size,
        tile.label,
        name,
        counts.join(";")
    )?;
    Ok(())
}

/// Per-class totals: `id,name,count`.
pub fn write_class_summary<W: Write>(out: &mut W, manifest: &DatasetManifest) -> Result<()> {
    writeln!(out, "id,name,count")?;
    let names = manifest.classes.names();
    for (id, count) in manifest.class_counts() {
        let name = names.get(&id).map_or("", String::as_str);
        writeln!(out, "{id},{name},{count}")?;
    }
    Ok(())
}
