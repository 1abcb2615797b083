//! CSV formats for ensembles and trajectories.
//!
//! Floats are written with 17 significant digits so every value round-trips
//! bit-exactly.

use std::io::{Read, Write};

use crate::dynamics::Trajectory;
use crate::ensemble::Ensemble;
use crate::error::{Error, Result};

/// Formats `v` with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn comp_header(d: usize) -> impl Iterator<Item = String> {
    (0..d).map(|c| format!("comp_{c}"))
}

/// Writes `step,time,particle,comp_0,...` rows for every recorded snapshot.
pub fn write_trajectory_csv(traj: &Trajectory, mut w: impl Write) -> Result<()> {
    let header: Vec<String> = ["step", "time", "particle"]
        .into_iter()
        .map(String::from)
        .chain(comp_header(traj.dim()))
        .collect();
    writeln!(w, "{}", header.join(","))?;
    for (i, snap) in traj.snapshots().iter().enumerate() {
        let step = traj.steps()[i];
        let time = fmt_f64(traj.time(i));
        for (j, p) in snap.particles().enumerate() {
            write!(w, "{step},{time},{j}")?;
            for v in p {
                write!(w, ",{}", fmt_f64(*v))?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}

/// Writes an ensemble as `particle,comp_0,...` rows.
pub fn write_ensemble_csv(e: &Ensemble, mut w: impl Write) -> Result<()> {
    let header: Vec<String> = std::iter::once("particle".to_string())
        .chain(comp_header(e.dim()))
        .collect();
    writeln!(w, "{}", header.join(","))?;
    for (j, p) in e.particles().enumerate() {
        write!(w, "{j}")?;
        for v in p {
            write!(w, ",{}", fmt_f64(*v))?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Reads an initial ensemble with header `particle,comp_0,...,comp_{d-1}`.
/// Particle labels must be `0..J` in order.
pub fn read_ensemble_csv(r: impl Read) -> Result<Ensemble> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let header = rdr
        .headers()
        .map_err(|e| Error::data(Some(1), None, e.to_string()))?
        .clone();
    if header.len() < 2 || &header[0] != "particle" {
        return Err(Error::data(Some(1), None, "expected header `particle,comp_0,...`"));
    }
    let d = header.len() - 1;
    for (c, name) in header.iter().skip(1).enumerate() {
        if name != format!("comp_{c}") {
            return Err(Error::data(Some(1), Some(name), format!("expected `comp_{c}`")));
        }
    }
    let mut data = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| Error::data(Some(row), None, e.to_string()))?;
        let label: usize = rec[0]
            .trim()
            .parse()
            .map_err(|_| Error::data(Some(row), Some("particle"), "particle label must be an integer"))?;
        if label != i {
            return Err(Error::data(
                Some(row),
                Some("particle"),
                format!("expected particle {i}, found {label}"),
            ));
        }
        for (c, field) in rec.iter().skip(1).enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::data(Some(row), Some(&header[c + 1]), format!("cannot parse `{field}`")))?;
            if !v.is_finite() {
                return Err(Error::data(Some(row), Some(&header[c + 1]), "non-finite value"));
            }
            data.push(v);
        }
    }
    if data.is_empty() {
        return Err(Error::data(None, None, "no particles"));
    }
    Ensemble::from_flat(d, data)
}
