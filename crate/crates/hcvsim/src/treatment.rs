//! Treatment policies: the coverage-ramped annual scheduler with its
//! backlog ledger, camp-style one-shot treatment, and cure application by
//! state and genotype.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::natural_history::{Genotype, HcvState};
use crate::population::Agent;

/// Deterministic real-valued ledger of the annual-treatment scheduler.
/// Period j covers intervention year j; the coverage fraction for
/// assigned-but-untreated patients ramps linearly from alpha to 1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UptakeLedger {
    pub u: f64,
    pub alpha: f64,
    pub n: u32,
    pub n_new: Vec<f64>,
    /// Assigned to treatment per creation cohort: u * n_new.
    pub assigned: Vec<f64>,
    /// Treated per period, all cohorts pooled.
    pub treated: Vec<f64>,
    /// Assigned-but-untreated backlog after each period.
    pub backlog: Vec<f64>,
    /// treated_by_cohort[j][i]: of the infections created at i, the number
    /// treated at period j (i <= j).
    pub treated_by_cohort: Vec<Vec<f64>>,
}

pub fn coverage_fraction(alpha: f64, j: u32, n: u32) -> f64 {
    alpha + (1.0 - alpha) * j as f64 / n as f64
}

/// Build the full ledger for a new-infection sequence of length n + 1.
pub fn annual_plan(u: f64, alpha: f64, n: u32, n_new: &[f64]) -> Result<UptakeLedger> {
    if !(0.0..=1.0).contains(&u) || !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Parameter(format!("u/alpha out of [0,1]: {u}, {alpha}")));
    }
    if n == 0 {
        return Err(Error::Parameter("n must be >= 1".into()));
    }
    if n_new.len() != n as usize + 1 {
        return Err(Error::Parameter(format!(
            "need {} periods of new infections, got {}",
            n + 1,
            n_new.len()
        )));
    }
    if n_new.iter().any(|x| *x < 0.0) {
        return Err(Error::Parameter("negative infection count".into()));
    }
    let periods = n as usize + 1;
    let assigned: Vec<f64> = n_new.iter().map(|x| u * x).collect();
    // untreated[i]: assigned survivors of cohort i not yet treated
    let mut untreated = vec![0.0f64; periods];
    let mut treated = Vec::with_capacity(periods);
    let mut backlog = Vec::with_capacity(periods);
    let mut treated_by_cohort = Vec::with_capacity(periods);
    for j in 0..periods {
        untreated[j] = assigned[j];
        let c = coverage_fraction(alpha, j as u32, n);
        let mut row = vec![0.0f64; j + 1];
        let mut period_total = 0.0;
        for (i, stock) in untreated.iter_mut().enumerate().take(j + 1) {
            let t = c * *stock;
            *stock -= t;
            row[i] = t;
            period_total += t;
        }
        treated.push(period_total);
        backlog.push(untreated.iter().take(j + 1).sum());
        treated_by_cohort.push(row);
    }
    Ok(UptakeLedger {
        u,
        alpha,
        n,
        n_new: n_new.to_vec(),
        assigned,
        treated,
        backlog,
        treated_by_cohort,
    })
}

/// Per-cohort conservation: everything assigned gets treated by period n.
pub fn verify_uptake_identity(ledger: &UptakeLedger) -> bool {
    for (i, &a) in ledger.assigned.iter().enumerate() {
        let total: f64 = ledger
            .treated_by_cohort
            .iter()
            .skip(i)
            .map(|row| row[i])
            .sum();
        let tol = 1e-9 * a.max(1.0);
        if (total - a).abs() > tol {
            return false;
        }
    }
    true
}

impl UptakeLedger {
    /// Dump in the layout of the worked example: one row per period with
    /// the per-cohort treated counts.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let periods = self.n as usize + 1;
        let mut header = vec![
            "period".to_string(),
            "new_infections".to_string(),
            "assigned".to_string(),
            "coverage".to_string(),
        ];
        header.extend((0..periods).map(|i| format!("treated_from_{i}")));
        w.write_record(&header)?;
        for j in 0..periods {
            let mut rec = vec![
                j.to_string(),
                format!("{}", self.n_new[j]),
                format!("{}", self.assigned[j]),
                format!("{:.2}", coverage_fraction(self.alpha, j as u32, self.n)),
            ];
            for i in 0..periods {
                rec.push(if i <= j {
                    format!("{:.6}", self.treated_by_cohort[j][i])
                } else {
                    "-".to_string()
                });
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Cure probabilities by state group and genotype.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct SvrTable {
    pub f0_f3: f64,
    pub f4_g3: f64,
    pub f4_other: f64,
    pub dc: f64,
}

impl Default for SvrTable {
    fn default() -> Self {
        Self {
            f0_f3: 0.86,
            f4_g3: 0.84,
            f4_other: 0.86,
            dc: 0.84,
        }
    }
}

impl SvrTable {
    pub fn probability(&self, state: HcvState, genotype: Genotype) -> Result<f64> {
        Ok(match state {
            HcvState::F0 | HcvState::F1 | HcvState::F2 | HcvState::F3 => self.f0_f3,
            HcvState::F4 => {
                if genotype == Genotype::G3 {
                    self.f4_g3
                } else {
                    self.f4_other
                }
            }
            HcvState::Dc => self.dc,
            other => {
                return Err(Error::Parameter(format!(
                    "state {} is not treatable",
                    other.label()
                )))
            }
        })
    }
}

pub fn treatment_eligible(agent: &Agent) -> bool {
    agent.alive
        && !agent.treat_failed
        && !agent.treated
        && matches!(
            agent.state(),
            HcvState::F0
                | HcvState::F1
                | HcvState::F2
                | HcvState::F3
                | HcvState::F4
                | HcvState::Dc
        )
}

/// Realize a fractional demand as an integer count: floor plus a Bernoulli
/// draw on the fractional part.
pub fn stochastic_round(x: f64, rng: &mut impl Rng) -> u64 {
    let base = x.floor();
    let frac = x - base;
    base as u64 + u64::from(frac > 0.0 && rng.gen_bool(frac))
}

/// Uniform sample of `demand` agents without replacement; if the pool is
/// smaller, everyone is selected and the shortfall reported.
pub fn select_for_treatment(
    mut pool: Vec<usize>,
    demand: u64,
    rng: &mut impl Rng,
) -> (Vec<usize>, u64) {
    let demand_usize = demand.min(pool.len() as u64) as usize;
    let shortfall = demand - demand_usize as u64;
    pool.partial_shuffle(rng, demand_usize);
    pool.truncate(demand_usize);
    (pool, shortfall)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TreatOutcome {
    Cured,
    Failed,
}

/// Treat one agent: cure with the tabulated probability; a cure from a
/// non-cirrhotic state clears the infection record entirely, a cure from
/// F4 or DC moves to the residual-risk state. Active injecting ends with
/// treatment either way. Failed patients are never retreated.
pub fn apply_treatment(
    agent: &mut Agent,
    day: u32,
    svr: &SvrTable,
    rng: &mut impl Rng,
) -> Result<TreatOutcome> {
    if !treatment_eligible(agent) {
        return Err(Error::Parameter(format!(
            "agent {} not eligible for treatment",
            agent.id
        )));
    }
    let state = agent.state();
    let genotype = agent.infection.as_ref().expect("eligible implies infected").genotype;
    let p = svr.probability(state, genotype)?;
    agent.treated = true;
    agent.idu_until = None;
    if rng.gen_bool(p) {
        match state {
            HcvState::F0 | HcvState::F1 | HcvState::F2 | HcvState::F3 => {
                agent.infection = None;
                agent.cured = true;
            }
            _ => {
                let rec = agent.infection.as_mut().expect("infected");
                rec.state = HcvState::Svr2;
                rec.state_entry_day = day;
                rec.sojourn_years = 0;
            }
        }
        Ok(TreatOutcome::Cured)
    } else {
        agent.treat_failed = true;
        Ok(TreatOutcome::Failed)
    }
}

/// Realized uptake: treated over all infected agents present during the
/// intervention window. `None` when no one was infected.
pub fn effective_uptake(treated: u64, infected_present: u64) -> Option<f64> {
    (infected_present > 0).then(|| treated as f64 / infected_present as f64)
}
