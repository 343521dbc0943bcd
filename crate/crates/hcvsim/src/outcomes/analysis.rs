//! Net-monetary-benefit analysis over a treatment-uptake grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::OutcomeTriple;

/// NMB of the new strategy over the status quo: k(Q_n - Q_s) - (C_n - C_s).
pub fn nmb(q_n: f64, q_s: f64, c_n: f64, c_s: f64, k: f64) -> f64 {
    k * (q_n - q_s) - (c_n - c_s)
}

/// One grid point: uptake with its discounted QALY and cost means.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct UptakePoint {
    pub uptake: f64,
    pub d_qaly: f64,
    pub d_cost: f64,
}

/// Incremental NMB of each uptake against the grid point just below it.
pub fn incremental_nmb_curve(points: &[UptakePoint], k: f64) -> Result<Vec<(f64, f64)>> {
    if points.len() < 2 {
        return Err(Error::Analysis("need at least 2 grid points".into()));
    }
    for pair in points.windows(2) {
        if pair[1].uptake <= pair[0].uptake {
            return Err(Error::Analysis(format!(
                "uptake grid must be strictly ascending, got {} then {}",
                pair[0].uptake, pair[1].uptake
            )));
        }
    }
    Ok(points
        .windows(2)
        .map(|pair| {
            let inc = nmb(
                pair[1].d_qaly,
                pair[0].d_qaly,
                pair[1].d_cost,
                pair[0].d_cost,
                k,
            );
            (pair[1].uptake, inc)
        })
        .collect())
}

/// The uptake whose incremental NMB is the smallest one still at or above
/// the threshold; `None` if no element clears it.
pub fn critical_uptake(series: &[(f64, f64)], threshold: f64) -> Option<f64> {
    series
        .iter()
        .filter(|(_, inc)| *inc >= threshold)
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|&(u, _)| u)
}

/// Population-level and patient-level mean outcomes of a replication.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct OutcomeLevels {
    pub population: Option<OutcomeTriple>,
    pub patient: Option<OutcomeTriple>,
}

pub fn summarize_levels(
    population_total: &OutcomeTriple,
    scope_count: usize,
    patient_total: &OutcomeTriple,
    patient_count: usize,
) -> OutcomeLevels {
    let per = |total: &OutcomeTriple, n: usize| {
        (n > 0).then(|| total.scale(1.0 / n as f64))
    };
    OutcomeLevels {
        population: per(population_total, scope_count),
        patient: per(patient_total, patient_count),
    }
}
