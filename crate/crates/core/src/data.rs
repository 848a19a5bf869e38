//! Observed-data model for one-sided noncompliance trials with missing outcomes.
//!
//! Each unit contributes `(x, z, z·c, r, r·y)`: covariates, assignment, compliance
//! type (seen only in the treatment arm), response indicator and outcome (seen
//! only for responders).

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed support `[lower, upper]` of the outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct OutcomeBounds {
    lower: f64,
    upper: f64,
}

impl OutcomeBounds {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !lower.is_finite() || !upper.is_finite() {
            return Err(Error::Config("outcome bounds must be finite".into()));
        }
        if lower >= upper {
            return Err(Error::Config(format!(
                "outcome bounds require l < h, got ({lower}, {upper})"
            )));
        }
        Ok(Self { lower, upper })
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, y: f64) -> bool {
        y >= self.lower && y <= self.upper
    }

    /// Maps `y` onto `[0, 1]`.
    pub fn rescale(&self, y: f64) -> f64 {
        (y - self.lower) / self.width()
    }

    /// Inverse of [`rescale`](Self::rescale).
    pub fn unscale(&self, t: f64) -> f64 {
        self.lower + t * self.width()
    }
}

impl TryFrom<[f64; 2]> for OutcomeBounds {
    type Error = Error;
    fn try_from(v: [f64; 2]) -> Result<Self> {
        OutcomeBounds::new(v[0], v[1])
    }
}

impl From<OutcomeBounds> for [f64; 2] {
    fn from(b: OutcomeBounds) -> Self {
        [b.lower, b.upper]
    }
}

/// One participant.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitRecord {
    pub x: Vec<f64>,
    /// Assigned to the intervention arm.
    pub z: bool,
    /// Complier indicator; present exactly when `z`.
    pub c: Option<bool>,
    /// Outcome observed.
    pub r: bool,
    /// Present exactly when `r`.
    pub y: Option<f64>,
}

impl UnitRecord {
    fn check(&self, dim: usize, bounds: &OutcomeBounds) -> std::result::Result<(), String> {
        if self.x.len() != dim {
            return Err(format!(
                "covariate dimension {} does not match {} covariate names",
                self.x.len(),
                dim
            ));
        }
        if self.x.iter().any(|v| !v.is_finite()) {
            return Err("covariates must be finite".into());
        }
        match (self.z, self.c) {
            (true, None) => return Err("c required when z=1".into()),
            (false, Some(_)) => return Err("c must be empty when z=0".into()),
            _ => {}
        }
        match (self.r, self.y) {
            (true, None) => return Err("y required when r=1".into()),
            (false, Some(_)) => return Err("y must be empty when r=0".into()),
            (true, Some(y)) if !y.is_finite() || !bounds.contains(y) => {
                return Err("y out of bounds".into())
            }
            _ => {}
        }
        Ok(())
    }
}

/// The full sample. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<UnitRecord>,
    covariate_names: Vec<String>,
    bounds: OutcomeBounds,
}

impl Dataset {
    /// Builds a dataset, checking every record-level and sample-level invariant.
    pub fn new(
        records: Vec<UnitRecord>,
        covariate_names: Vec<String>,
        bounds: OutcomeBounds,
    ) -> Result<Self> {
        let dim = covariate_names.len();
        for (i, rec) in records.iter().enumerate() {
            rec.check(dim, &bounds)
                .map_err(|m| Error::Validation(format!("row {}: {m}", i + 1)))?;
        }
        let d = Self {
            records,
            covariate_names,
            bounds,
        };
        d.check_strata()?;
        Ok(d)
    }

    fn check_strata(&self) -> Result<()> {
        let mut n = [0usize; 2];
        let mut responders = [0usize; 2];
        let mut types = [0usize; 2];
        for rec in &self.records {
            let arm = rec.z as usize;
            n[arm] += 1;
            responders[arm] += rec.r as usize;
            if let Some(c) = rec.c {
                types[c as usize] += 1;
            }
        }
        if n[0] == 0 || n[1] == 0 {
            return Err(Error::Validation("both arms must be nonempty".into()));
        }
        if types[0] == 0 || types[1] == 0 {
            return Err(Error::Validation(
                "treatment arm must contain at least one complier and one noncomplier".into(),
            ));
        }
        if responders[0] == 0 || responders[1] == 0 {
            return Err(Error::Validation(
                "each arm must contain at least one responder".into(),
            ));
        }
        Ok(())
    }

    /// Draws the units at `indices` (with repetition). Record invariants carry
    /// over; the arm/stratum coverage checks of [`new`](Self::new) are not
    /// re-applied, so downstream fitting must handle empty cells.
    pub fn resample(&self, indices: &[usize]) -> Self {
        Self {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            covariate_names: self.covariate_names.clone(),
            bounds: self.bounds,
        }
    }

    pub fn records(&self) -> &[UnitRecord] {
        &self.records
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn bounds(&self) -> OutcomeBounds {
        self.bounds
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.covariate_names.len()
    }
}

const FIXED_COLUMNS: [&str; 4] = ["z", "c", "r", "y"];

/// Reads the `z,c,r,y,<covariates...>` CSV schema from a file.
pub fn load_csv(path: impl AsRef<Path>, bounds: OutcomeBounds) -> Result<Dataset> {
    let file = std::fs::File::open(path.as_ref())
        .map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
    read_csv(file, bounds)
}

pub fn read_csv<R: Read>(reader: R, bounds: OutcomeBounds) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::Validation(format!("cannot read header: {e}")))?
        .clone();
    if header.len() < FIXED_COLUMNS.len()
        || header.iter().zip(FIXED_COLUMNS).any(|(h, want)| h != want)
    {
        return Err(Error::Validation(format!(
            "header must start with z,c,r,y; got `{}`",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let names: Vec<String> = header.iter().skip(4).map(str::to_owned).collect();
    let column = |j: usize| header.get(j).unwrap_or("?").to_owned();

    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row_no = i + 1;
        let row = row.map_err(|e| Error::Parse {
            row: row_no,
            column: String::new(),
            message: e.to_string(),
        })?;
        let parse_err = |j: usize, message: String| Error::Parse {
            row: row_no,
            column: column(j),
            message,
        };
        let binary = |j: usize| -> Result<Option<bool>> {
            match &row[j] {
                "" => Ok(None),
                "0" => Ok(Some(false)),
                "1" => Ok(Some(true)),
                other => Err(parse_err(j, format!("expected 0 or 1, got `{other}`"))),
            }
        };
        let real = |j: usize| -> Result<Option<f64>> {
            match &row[j] {
                "" => Ok(None),
                s => s
                    .parse::<f64>()
                    .map(Some)
                    .map_err(|e| parse_err(j, format!("`{s}`: {e}"))),
            }
        };
        let z = binary(0)?.ok_or_else(|| parse_err(0, "z must not be empty".into()))?;
        let c = binary(1)?;
        let r = binary(2)?.ok_or_else(|| parse_err(2, "r must not be empty".into()))?;
        let y = real(3)?;
        let x = (4..row.len())
            .map(|j| real(j)?.ok_or_else(|| parse_err(j, "covariate missingness is not supported".into())))
            .collect::<Result<Vec<_>>>()?;
        records.push(UnitRecord { x, z, c, r, y });
    }
    Dataset::new(records, names, bounds)
}

/// Writes `d` in the CSV schema [`read_csv`] accepts. Reals use the shortest
/// representation that parses back to the same bits.
pub fn write_csv<W: Write>(d: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let header: Vec<&str> = FIXED_COLUMNS
        .iter()
        .copied()
        .chain(d.covariate_names.iter().map(String::as_str))
        .collect();
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(&header).map_err(io)?;
    let bit = |b: bool| if b { "1" } else { "0" }.to_string();
    for rec in &d.records {
        let mut row = Vec::with_capacity(4 + rec.x.len());
        row.push(bit(rec.z));
        row.push(rec.c.map(bit).unwrap_or_default());
        row.push(bit(rec.r));
        row.push(rec.y.map(|y| y.to_string()).unwrap_or_default());
        row.extend(rec.x.iter().map(f64::to_string));
        w.write_record(&row).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_csv(d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())
        .map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
    write_csv(d, std::io::BufWriter::new(file))
}

pub const LOW_RESPONSE_RATE: f64 = 0.10;
pub const FEW_STRATUM_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub enum DataWarning {
    LowResponse { treatment_arm: bool, rate: f64 },
    FewCompliers { fraction: f64 },
    FewNoncompliers { fraction: f64 },
}

impl fmt::Display for DataWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataWarning::LowResponse {
                treatment_arm,
                rate,
            } => {
                let arm = if *treatment_arm { "treatment" } else { "control" };
                write!(f, "low {arm} response ({:.1}%)", 100.0 * rate)
            }
            DataWarning::FewCompliers { fraction } => {
                write!(f, "few compliers ({:.1}% of treatment arm)", 100.0 * fraction)
            }
            DataWarning::FewNoncompliers { fraction } => {
                write!(f, "few noncompliers ({:.1}% of treatment arm)", 100.0 * fraction)
            }
        }
    }
}

/// Non-fatal data-quality warnings.
pub fn validate_dataset(d: &Dataset) -> Vec<DataWarning> {
    let mut n = [0usize; 2];
    let mut responders = [0usize; 2];
    let mut compliers = 0usize;
    for rec in d.records() {
        n[rec.z as usize] += 1;
        responders[rec.z as usize] += rec.r as usize;
        compliers += (rec.c == Some(true)) as usize;
    }
    let mut out = Vec::new();
    for (arm, treatment_arm) in [(0, false), (1, true)] {
        if n[arm] > 0 {
            let rate = responders[arm] as f64 / n[arm] as f64;
            if rate < LOW_RESPONSE_RATE {
                out.push(DataWarning::LowResponse {
                    treatment_arm,
                    rate,
                });
            }
        }
    }
    if n[1] > 0 {
        let fraction = compliers as f64 / n[1] as f64;
        if fraction < FEW_STRATUM_FRACTION {
            out.push(DataWarning::FewCompliers { fraction });
        }
        if 1.0 - fraction < FEW_STRATUM_FRACTION {
            out.push(DataWarning::FewNoncompliers {
                fraction: 1.0 - fraction,
            });
        }
    }
    out
}
