//! Dated return panels and their CSV form.
//!
//! `returns.csv` has the header `date,<asset_1>,...,<asset_N>` and one row per
//! ISO-8601 date, oldest first. Empty cells mark missing observations.
//! Optional `volumes.csv` and `caps.csv` next to it share the same shape and
//! header.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::spectral::format_full;

#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPanel {
    pub dates: Vec<NaiveDate>,
    pub assets: Vec<String>,
    /// `T×N`, oldest row first; `NaN` marks a missing observation.
    pub returns: DMatrix<f64>,
    pub volumes: Option<DMatrix<f64>>,
    /// Market capitalization per date and asset.
    pub caps: Option<DMatrix<f64>>,
}

impl ReturnPanel {
    pub fn new(dates: Vec<NaiveDate>, assets: Vec<String>, returns: DMatrix<f64>) -> Result<Self> {
        let panel = Self {
            dates,
            assets,
            returns,
            volumes: None,
            caps: None,
        };
        panel.validate()?;
        Ok(panel)
    }

    pub fn t(&self) -> usize {
        self.dates.len()
    }

    pub fn n(&self) -> usize {
        self.assets.len()
    }

    /// The last `rows` observations (all when `None`), most recent first, as
    /// estimators expect. Missing values are an error.
    pub fn recent_first(&self, rows: Option<usize>) -> Result<DMatrix<f64>> {
        let t = self.t();
        let take = rows.unwrap_or(t);
        if take == 0 || take > t {
            return Err(Error::InsufficientData(format!(
                "requested {take} rows, panel has {t}"
            )));
        }
        let out = DMatrix::from_fn(take, self.n(), |r, c| self.returns[(t - 1 - r, c)]);
        if let Some(pos) = out.iter().position(|v| !v.is_finite()) {
            let (r, c) = (pos % take, pos / take);
            return Err(Error::InsufficientData(format!(
                "missing return on {}, column {}, inside the estimation window",
                self.dates[t - 1 - r],
                self.assets[c]
            )));
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        let (t, n) = self.returns.shape();
        if t != self.dates.len() {
            return Err(Error::mismatch("panel rows vs dates", self.dates.len(), t));
        }
        if n != self.assets.len() {
            return Err(Error::mismatch(
                "panel columns vs assets",
                self.assets.len(),
                n,
            ));
        }
        for w in self.dates.windows(2) {
            if w[1] == w[0] {
                return Err(Error::Parse {
                    location: format!("date {}", w[1]),
                    message: "duplicate date".into(),
                });
            }
            if w[1] < w[0] {
                return Err(Error::Parse {
                    location: format!("date {}", w[1]),
                    message: format!("dates must be increasing, {} follows {}", w[1], w[0]),
                });
            }
        }
        let mut seen = std::collections::HashSet::new();
        for a in &self.assets {
            if !seen.insert(a.as_str()) {
                return Err(Error::Parse {
                    location: format!("asset {a}"),
                    message: "duplicate asset identifier".into(),
                });
            }
        }
        if self.returns.iter().any(|v| v.is_infinite()) {
            return Err(Error::non_finite("returns"));
        }
        for (m, what) in [(&self.volumes, "volumes"), (&self.caps, "caps")] {
            if let Some(m) = m {
                if m.shape() != (t, n) {
                    return Err(Error::mismatch(
                        format!("{what} shape"),
                        t * n,
                        m.nrows() * m.ncols(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Parsed matrix CSV: header identifiers, dates and values.
struct DatedMatrix {
    dates: Vec<NaiveDate>,
    assets: Vec<String>,
    values: DMatrix<f64>,
}

fn parse_dated_csv<R: Read>(input: R, source: &str) -> Result<DatedMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(input);
    let parse_err = |location: String, message: String| Error::Parse { location, message };

    let header = reader
        .headers()
        .map_err(|e| parse_err(format!("{source} header"), e.to_string()))?
        .clone();
    if header.len() < 2 || !header[0].eq_ignore_ascii_case("date") {
        return Err(parse_err(
            format!("{source} header"),
            "expected `date,<asset_1>,...,<asset_N>`".into(),
        ));
    }
    let assets: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let n = assets.len();

    let mut dates = Vec::new();
    let mut values = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| parse_err(format!("{source} row {row}"), e.to_string()))?;
        if record.len() != n + 1 {
            return Err(parse_err(
                format!("{source} row {row}"),
                format!("expected {} fields, found {}", n + 1, record.len()),
            ));
        }
        let date = NaiveDate::parse_from_str(&record[0], "%Y-%m-%d").map_err(|e| {
            parse_err(
                format!("{source} row {row}, column 1"),
                format!("bad date `{}`: {e}", &record[0]),
            )
        })?;
        dates.push(date);
        for (j, cell) in record.iter().skip(1).enumerate() {
            let v = if cell.is_empty() {
                f64::NAN
            } else {
                let v: f64 = cell.parse().map_err(|e| {
                    parse_err(
                        format!("{source} row {row}, column {}", j + 2),
                        format!("`{cell}`: {e}"),
                    )
                })?;
                if !v.is_finite() {
                    return Err(parse_err(
                        format!("{source} row {row}, column {}", j + 2),
                        format!("non-finite value `{cell}`"),
                    ));
                }
                v
            };
            values.push(v);
        }
    }
    let t = dates.len();
    Ok(DatedMatrix {
        dates,
        assets,
        values: DMatrix::from_row_slice(t, n, &values),
    })
}

/// Reads a returns CSV from any reader (no sibling files).
pub fn read_returns<R: Read>(input: R) -> Result<ReturnPanel> {
    let m = parse_dated_csv(input, "returns")?;
    ReturnPanel::new(m.dates, m.assets, m.values)
}

fn read_sibling(path: &Path, name: &str, panel: &ReturnPanel) -> Result<Option<DMatrix<f64>>> {
    let sibling = path.with_file_name(name);
    if !sibling.exists() {
        return Ok(None);
    }
    let m = parse_dated_csv(File::open(&sibling)?, name)?;
    if m.assets != panel.assets || m.dates != panel.dates {
        return Err(Error::Parse {
            location: name.to_string(),
            message: "header or dates differ from the returns file".into(),
        });
    }
    Ok(Some(m.values))
}

/// Loads `path` plus `volumes.csv` / `caps.csv` from the same directory when
/// present.
pub fn load_returns(path: impl AsRef<Path>) -> Result<ReturnPanel> {
    let path = path.as_ref();
    let mut panel = read_returns(File::open(path)?)?;
    panel.volumes = read_sibling(path, "volumes.csv", &panel)?;
    panel.caps = read_sibling(path, "caps.csv", &panel)?;
    panel.validate()?;
    Ok(panel)
}

fn write_dated<W: Write>(
    mut out: W,
    preamble: &str,
    dates: &[NaiveDate],
    assets: &[String],
    values: &DMatrix<f64>,
) -> std::io::Result<()> {
    out.write_all(preamble.as_bytes())?;
    writeln!(out, "date,{}", assets.join(","))?;
    for (r, d) in dates.iter().enumerate() {
        write!(out, "{}", d.format("%Y-%m-%d"))?;
        for c in 0..assets.len() {
            let v = values[(r, c)];
            if v.is_nan() {
                write!(out, ",")?;
            } else {
                write!(out, ",{}", format_full(v))?;
            }
        }
        writeln!(out)?;
    }
    out.flush()
}

pub fn write_returns<W: Write>(panel: &ReturnPanel, out: W) -> std::io::Result<()> {
    write_dated(out, "", &panel.dates, &panel.assets, &panel.returns)
}

/// Writes `returns.csv` (and `volumes.csv`, `caps.csv` when present) into `dir`.
/// `preamble` (typically `#` comment lines) is copied to the top of each file.
pub fn save_panel(
    panel: &ReturnPanel,
    dir: impl AsRef<Path>,
    preamble: &str,
) -> Result<Vec<String>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for (m, name) in [
        (Some(&panel.returns), "returns.csv"),
        (panel.volumes.as_ref(), "volumes.csv"),
        (panel.caps.as_ref(), "caps.csv"),
    ] {
        if let Some(m) = m {
            write_dated(
                BufWriter::new(File::create(dir.join(name))?),
                preamble,
                &panel.dates,
                &panel.assets,
                m,
            )?;
            written.push(name.to_string());
        }
    }
    Ok(written)
}
