use std::io::Write;

use serde::{Deserialize, Serialize};

use super::periodic::PeriodicOrbitRecord;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CensusRow {
    #[serde(rename = "T")]
    pub t: f64,
    #[serde(rename = "N")]
    pub n: usize,
    /// (1/T) log N(T).
    pub rate: f64,
}

/// A distinct periodic orbit: primitive itinerary (when labeled) and
/// primitive period.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CensusOrbit {
    pub itinerary: Option<String>,
    pub period: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Census {
    pub orbits: Vec<CensusOrbit>,
    pub rows: Vec<CensusRow>,
    /// Least-squares slope of log N(T) against T through the origin.
    pub rate: f64,
    /// Fewer than three grid points with N > 0.
    pub insufficient: bool,
}

impl Census {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row).map_err(|e| Error::Input(format!("csv: {e}")))?;
        }
        w.flush().map_err(|e| Error::Input(format!("csv: {e}")))
    }
}

/// Shortest word whose power is `word`, with the power.
fn primitive(word: &str) -> (&str, usize) {
    let n = word.len();
    (1..=n)
        .filter(|k| n % k == 0)
        .find(|&k| word.as_bytes().chunks(k).all(|c| c == &word.as_bytes()[..k]))
        .map_or((word, 1), |k| (&word[..k], n / k))
}

/// Orbits with period above this fraction of a grid step apart are distinct
/// when unlabeled.
const PERIOD_SEPARATION: f64 = 1e-6;

/// N(T) on the grid T = step, 2 step, ..., t_max and the growth rate.
/// Records traversing a labeled orbit several times are reduced to the
/// primitive orbit; unlabeled records are distinct when their periods
/// differ by more than 1e-6.
pub fn horseshoe_census(records: &[PeriodicOrbitRecord], t_max: f64, step: f64) -> Result<Census> {
    if !(step > 0.0) || !(t_max >= step) {
        return Err(Error::Input(format!("need 0 < step <= t_max, got {step}, {t_max}")));
    }
    let mut orbits: Vec<CensusOrbit> = Vec::new();
    for r in records {
        let orbit = match &r.symbol_sequence {
            Some(w) => {
                let (p, k) = primitive(w);
                CensusOrbit {
                    itinerary: Some(p.to_string()),
                    period: r.period / k as f64,
                }
            }
            None => CensusOrbit {
                itinerary: None,
                period: r.period,
            },
        };
        let duplicate = orbits.iter().any(|o| match (&o.itinerary, &orbit.itinerary) {
            (Some(a), Some(b)) => a == b,
            _ => (o.period - orbit.period).abs() <= PERIOD_SEPARATION,
        });
        if !duplicate {
            orbits.push(orbit);
        }
    }
    orbits.sort_by(|a, b| a.period.total_cmp(&b.period));
    let count = (t_max / step + 1e-9).floor() as usize;
    let rows: Vec<CensusRow> = (1..=count)
        .map(|k| {
            let t = k as f64 * step;
            let n = orbits.iter().filter(|o| o.period <= t).count();
            CensusRow {
                t,
                n,
                rate: if n > 0 { (n as f64).ln() / t } else { 0.0 },
            }
        })
        .collect();
    let used: Vec<&CensusRow> = rows.iter().filter(|r| r.n > 0).collect();
    let stt: f64 = used.iter().map(|r| r.t * r.t).sum();
    let sty: f64 = used.iter().map(|r| r.t * (r.n as f64).ln()).sum();
    Ok(Census {
        rate: if stt > 0.0 { sty / stt } else { 0.0 },
        insufficient: used.len() < 3,
        orbits,
        rows,
    })
}
