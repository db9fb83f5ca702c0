//! Artifact encodings: plain-text PGM images and CSV tables.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::spatial::{AngularHistogram, FieldImage};

pub const PGM_MAXVAL: u32 = 65535;

/// `P2` (ASCII) greyscale, scaled so the brightest pixel is `65535`. Rows
/// are written top to bottom, one image row per line.
pub fn pgm_bytes(img: &FieldImage) -> Vec<u8> {
    let n = img.grid().n();
    let max = img.max();
    let mut out = format!("P2\n{n} {n}\n{PGM_MAXVAL}\n");
    for row in img.pixels().chunks(n) {
        let line: Vec<String> = row
            .iter()
            .map(|&v| {
                let q = if max > 0.0 {
                    (v / max * f64::from(PGM_MAXVAL)).round()
                } else {
                    0.0
                };
                (q as u32).to_string()
            })
            .collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out.into_bytes()
}

/// Parses a `P2` image into `(width, height, maxval, values)`.
pub fn read_pgm(bytes: &[u8]) -> Result<(usize, usize, u32, Vec<u32>)> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Numerical(format!("PGM is not text: {e}")))?;
    let mut tokens = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(str::split_whitespace);
    let bad = |m: &str| Error::Numerical(format!("malformed PGM: {m}"));
    if tokens.next() != Some("P2") {
        return Err(bad("missing P2 magic"));
    }
    let mut num =
        |what: &str| -> Result<u32> { tokens.next().ok_or_else(|| bad(what))?.parse().map_err(|_| bad(what)) };
    let w = num("width")? as usize;
    let h = num("height")? as usize;
    let maxval = num("maxval")?;
    let values = (0..w * h).map(|_| num("pixel")).collect::<Result<Vec<_>>>()?;
    if values.iter().any(|&v| v > maxval) {
        return Err(bad("pixel above maxval"));
    }
    Ok((w, h, maxval, values))
}

#[derive(Serialize)]
struct HistRow {
    bin_center_deg: f64,
    value: f64,
}

/// `bin_center_deg,value` per angular bin.
pub fn histogram_csv(hist: &AngularHistogram) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for (k, &value) in hist.bins().iter().enumerate() {
        w.serialize(HistRow {
            bin_center_deg: hist.bin_center(k).to_degrees(),
            value,
        })?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// One row of a coincidence count table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CountRow {
    pub setting_id: String,
    pub idler_basis: String,
    /// Signal analyzer: a basis name or `lin:<angle_deg>`.
    pub signal: String,
    pub counts: f64,
}

pub fn count_table_csv(rows: &[CountRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum ArtifactKind {
    Pgm,
    Csv,
    Json,
}

impl ArtifactKind {
    pub fn extension(self) -> &'static str {
        match self {
            ArtifactKind::Pgm => "pgm",
            ArtifactKind::Csv => "csv",
            ArtifactKind::Json => "json",
        }
    }
}

/// A named output file held in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub kind: ArtifactKind,
    pub bytes: Vec<u8>,
}

impl Artifact {
    pub fn new(stem: &str, kind: ArtifactKind, bytes: Vec<u8>) -> Self {
        Artifact {
            name: format!("{stem}.{}", kind.extension()),
            kind,
            bytes,
        }
    }
}

/// Writes artifacts into `dir`, creating it if needed.
pub fn write_artifacts(dir: &Path, artifacts: &[Artifact]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for a in artifacts {
        std::fs::write(dir.join(&a.name), &a.bytes)?;
    }
    Ok(())
}
