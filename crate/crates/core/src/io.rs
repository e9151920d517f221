//! Sample CSV files.
//!
//! ```text
//! # angular,3
//! 1.2,0.4
//! 0.3,5.9
//! ```
//!
//! The first line names the coordinate system (`cartesian` or `angular`) and
//! the ambient dimension `d`; a leading `#` is optional. Each following line
//! is one point: `d` values for Cartesian data, `d-1` angles for angular data.
//! Blank lines are skipped.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use crate::error::{KsdError, Result};
use crate::samplers::cartesian_to_sphere;
use crate::stein::{sphere::check_angular_box, Domain, Point};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoordSystem {
    Cartesian,
    Angular,
}

impl fmt::Display for CoordSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CoordSystem::Cartesian => "cartesian",
            CoordSystem::Angular => "angular",
        })
    }
}

impl FromStr for CoordSystem {
    type Err = KsdError;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "cartesian" => Ok(CoordSystem::Cartesian),
            "angular" => Ok(CoordSystem::Angular),
            other => Err(KsdError::Parse(format!(
                "unknown coordinate system '{other}' (expected cartesian or angular)"
            ))),
        }
    }
}

/// Parsed contents of a sample file.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSet {
    pub coords: CoordSystem,
    pub d: usize,
    pub points: Vec<Point>,
}

impl DataSet {
    /// Converts the points into the coordinates a kernel on `domain` expects.
    /// Cartesian data for a spherical domain is mapped to angles.
    pub fn into_domain(self, domain: Domain) -> Result<Vec<Point>> {
        if self.d != domain.dim() {
            return Err(KsdError::DimensionMismatch {
                expected: domain.dim(),
                got: self.d,
            });
        }
        match (domain, self.coords) {
            (Domain::Euclidean { .. }, CoordSystem::Cartesian) => Ok(self.points),
            (Domain::Euclidean { .. }, CoordSystem::Angular) => Err(KsdError::Parse(
                "angular data cannot be tested against a Euclidean target".into(),
            )),
            (Domain::Sphere { .. }, CoordSystem::Cartesian) => self
                .points
                .iter()
                .map(|p| cartesian_to_sphere(p).map(Point::new))
                .collect(),
            (Domain::Sphere { d }, CoordSystem::Angular) => {
                for (i, p) in self.points.iter().enumerate() {
                    check_angular_box(p, d).map_err(|e| KsdError::at_point(i, e))?;
                }
                Ok(self.points)
            }
        }
    }
}

/// Reads a sample file. Errors name the 1-based line and column.
pub fn read_points_csv<R: BufRead>(reader: R) -> Result<DataSet> {
    let mut lines = reader.lines().enumerate();
    let (coords, d) = loop {
        let Some((lineno, line)) = lines.next() else {
            return Err(KsdError::Empty("data file has no header line".into()));
        };
        let line = line?;
        let body = line.trim().trim_start_matches('#').trim();
        if body.is_empty() {
            continue;
        }
        let mut parts = body.split(',');
        let sys = parts.next().unwrap_or("");
        let dim = parts.next().ok_or_else(|| {
            KsdError::Parse(format!(
                "line {}: header must be 'coord_system,d'",
                lineno + 1
            ))
        })?;
        let coords: CoordSystem = sys
            .parse()
            .map_err(|e| KsdError::Parse(format!("line {}: {e}", lineno + 1)))?;
        let d: usize = dim.trim().parse().map_err(|_| {
            KsdError::Parse(format!(
                "line {}: invalid dimension '{}'",
                lineno + 1,
                dim.trim()
            ))
        })?;
        if d == 0 || (coords == CoordSystem::Angular && d < 2) {
            return Err(KsdError::Parse(format!(
                "line {}: dimension {d} is not valid for {coords} data",
                lineno + 1
            )));
        }
        break (coords, d);
    };
    let width = match coords {
        CoordSystem::Cartesian => d,
        CoordSystem::Angular => d - 1,
    };

    let mut points = Vec::new();
    for (lineno, line) in lines {
        let line = line?;
        let body = line.trim();
        if body.is_empty() || body.starts_with('#') {
            continue;
        }
        let row: Vec<f64> = body
            .split(',')
            .enumerate()
            .map(|(col, field)| {
                let v: f64 = field.trim().parse().map_err(|_| {
                    KsdError::Parse(format!(
                        "line {}, column {}: cannot parse '{}' as a number",
                        lineno + 1,
                        col + 1,
                        field.trim()
                    ))
                })?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(KsdError::Parse(format!(
                        "line {}, column {}: non-finite value",
                        lineno + 1,
                        col + 1
                    )))
                }
            })
            .collect::<Result<_>>()?;
        if row.len() != width {
            return Err(KsdError::Parse(format!(
                "line {}: expected {width} columns, found {}",
                lineno + 1,
                row.len()
            )));
        }
        points.push(Point::new(row));
    }
    if points.is_empty() {
        return Err(KsdError::Empty("data file contains no samples".into()));
    }
    Ok(DataSet { coords, d, points })
}

/// Writes points in the format accepted by [`read_points_csv`].
pub fn write_points_csv<W: Write>(
    mut w: W,
    coords: CoordSystem,
    d: usize,
    points: &[Point],
) -> Result<()> {
    writeln!(w, "# {coords},{d}")?;
    for p in points {
        let row: Vec<String> = p.iter().map(|v| format!("{v}")).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}
