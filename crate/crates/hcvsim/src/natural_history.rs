//! Disease natural history: an annual discrete-time Markov chain over the
//! fibrosis and end-stage liver states, with spontaneous clearance of acute
//! infection and residual post-cure risk from cirrhotic states.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HcvState {
    Susceptible,
    Acute,
    F0,
    F1,
    F2,
    F3,
    F4,
    Dc,
    Hcc,
    Lt,
    Svr2,
    CuredNonCirrhotic,
    /// Liver-related death. Absorbing.
    Lrd,
}

impl HcvState {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "susceptible" => HcvState::Susceptible,
            "acute" => HcvState::Acute,
            "f0" => HcvState::F0,
            "f1" => HcvState::F1,
            "f2" => HcvState::F2,
            "f3" => HcvState::F3,
            "f4" => HcvState::F4,
            "dc" => HcvState::Dc,
            "hcc" => HcvState::Hcc,
            "lt" => HcvState::Lt,
            "svr2" => HcvState::Svr2,
            "cured" => HcvState::CuredNonCirrhotic,
            "lrd" => HcvState::Lrd,
            other => return Err(Error::Parameter(format!("unknown state `{other}`"))),
        })
    }

    pub fn label(self) -> &'static str {
        match self {
            HcvState::Susceptible => "susceptible",
            HcvState::Acute => "acute",
            HcvState::F0 => "f0",
            HcvState::F1 => "f1",
            HcvState::F2 => "f2",
            HcvState::F3 => "f3",
            HcvState::F4 => "f4",
            HcvState::Dc => "dc",
            HcvState::Hcc => "hcc",
            HcvState::Lt => "lt",
            HcvState::Svr2 => "svr2",
            HcvState::CuredNonCirrhotic => "cured",
            HcvState::Lrd => "lrd",
        }
    }

    /// States the annual progression chain operates on.
    pub fn progresses(self) -> bool {
        matches!(
            self,
            HcvState::F0
                | HcvState::F1
                | HcvState::F2
                | HcvState::F3
                | HcvState::F4
                | HcvState::Dc
                | HcvState::Hcc
                | HcvState::Lt
                | HcvState::Svr2
        )
    }

    /// RNA-positive states that can transmit.
    pub fn infectious(self) -> bool {
        matches!(
            self,
            HcvState::Acute
                | HcvState::F0
                | HcvState::F1
                | HcvState::F2
                | HcvState::F3
                | HcvState::F4
                | HcvState::Dc
                | HcvState::Hcc
        )
    }
}

/// Sojourn regime of a transition row. Rows keyed `FirstYear`/`AfterFirst`
/// apply in the first year after entering the state and in later years.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Any,
    FirstYear,
    AfterFirst,
}

impl Regime {
    fn parse(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "any" | "all" => Regime::Any,
            "first_year" | "first" => Regime::FirstYear,
            "after_first" | "after" => Regime::AfterFirst,
            other => return Err(Error::Parameter(format!("unknown regime `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Genotype {
    G1,
    G3,
    G4,
}

/// G3 0.72, G1 0.22, G4 0.06.
pub fn assign_genotype(rng: &mut impl Rng) -> Genotype {
    let u: f64 = rng.gen();
    if u < 0.72 {
        Genotype::G3
    } else if u < 0.94 {
        Genotype::G1
    } else {
        Genotype::G4
    }
}

/// One infection episode of an agent.
#[derive(Debug, Clone, Copy)]
pub struct InfectionRecord {
    pub state: HcvState,
    pub state_entry_day: u32,
    pub infection_day: u32,
    /// Day the infection became chronic (entered F0); progression
    /// anniversaries are counted from here.
    pub chronic_onset_day: Option<u32>,
    pub genotype: Genotype,
    /// Completed years spent in the current state.
    pub sojourn_years: u32,
}

impl InfectionRecord {
    pub fn new_acute(day: u32, genotype: Genotype) -> Self {
        Self {
            state: HcvState::Acute,
            state_entry_day: day,
            infection_day: day,
            chronic_onset_day: None,
            genotype,
            sojourn_years: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TransitionRow {
    pub from: HcvState,
    pub to: HcvState,
    pub regime: Regime,
    pub probability: f64,
}

/// Annual transition probabilities, plus the acute-clearance probability
/// applied once at the six-month mark.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransitionModel {
    pub rows: Vec<TransitionRow>,
    pub acute_clearance: f64,
}

impl Default for TransitionModel {
    fn default() -> Self {
        use HcvState::*;
        use Regime::*;
        let r = |from, to, regime, probability| TransitionRow {
            from,
            to,
            regime,
            probability,
        };
        Self {
            rows: vec![
                r(F0, F1, Any, 0.117),
                r(F1, F2, Any, 0.085),
                r(F2, F3, Any, 0.120),
                r(F3, F4, Any, 0.116),
                r(F4, Dc, Any, 0.039),
                r(F4, Hcc, Any, 0.014),
                r(Dc, Hcc, Any, 0.068),
                r(Dc, Lt, Any, 0.023),
                r(Dc, Lrd, FirstYear, 0.182),
                r(Dc, Lrd, AfterFirst, 0.112),
                r(Hcc, Lt, Any, 0.040),
                r(Hcc, Lrd, Any, 0.427),
                r(Lt, Lrd, FirstYear, 0.116),
                r(Lt, Lrd, AfterFirst, 0.044),
                r(Svr2, Dc, Any, 0.008),
                r(Svr2, Hcc, Any, 0.005),
            ],
            acute_clearance: 0.26,
        }
    }
}

impl TransitionModel {
    /// Load from a CSV with columns from,to,regime,probability. A row with
    /// from=acute, to=cured sets the clearance probability.
    pub fn from_csv_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut rows = Vec::new();
        let mut acute_clearance = None;
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != 4 {
                return Err(Error::Parameter(format!(
                    "expected 4 columns, got {}",
                    rec.len()
                )));
            }
            let from = HcvState::parse(&rec[0])?;
            let to = HcvState::parse(&rec[1])?;
            let regime = Regime::parse(&rec[2])?;
            let probability: f64 = rec[3]
                .parse()
                .map_err(|_| Error::Parameter(format!("bad probability `{}`", &rec[3])))?;
            if from == HcvState::Acute {
                acute_clearance = Some(probability);
            } else {
                rows.push(TransitionRow {
                    from,
                    to,
                    regime,
                    probability,
                });
            }
        }
        let model = Self {
            rows,
            acute_clearance: acute_clearance.unwrap_or(0.26),
        };
        model.build_cdfs()?;
        Ok(model)
    }

    pub fn load_csv(path: &std::path::Path) -> Result<Self> {
        Self::from_csv_reader(std::fs::File::open(path)?)
    }

    /// Stable digest of the model contents, used to key the outcomes
    /// repository to the transition model it was built from.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(format!("clearance={:.12}\n", self.acute_clearance));
        for r in &self.rows {
            h.update(format!(
                "{},{},{:?},{:.12}\n",
                r.from.label(),
                r.to.label(),
                r.regime,
                r.probability
            ));
        }
        format!("{:x}", h.finalize())
    }

    /// Precompute sampling CDFs per (state, regime). Fails if any
    /// effective row's outgoing mass exceeds 1.
    pub fn build_cdfs(&self) -> Result<TransitionCdfs> {
        if !(0.0..=1.0).contains(&self.acute_clearance) {
            return Err(Error::Parameter(format!(
                "acute clearance out of [0,1]: {}",
                self.acute_clearance
            )));
        }
        let mut grouped: HashMap<(HcvState, Regime), Vec<(HcvState, f64)>> = HashMap::new();
        for row in &self.rows {
            if !(0.0..=1.0).contains(&row.probability) {
                return Err(Error::Parameter(format!(
                    "probability out of [0,1]: {} -> {} = {}",
                    row.from.label(),
                    row.to.label(),
                    row.probability
                )));
            }
            grouped
                .entry((row.from, row.regime))
                .or_default()
                .push((row.to, row.probability));
        }
        let mut cdfs = HashMap::new();
        let states: Vec<HcvState> = grouped.keys().map(|(s, _)| *s).collect();
        for state in states {
            for sojourn_regime in [Regime::FirstYear, Regime::AfterFirst] {
                let mut entries: Vec<(HcvState, f64)> = Vec::new();
                for regime in [Regime::Any, sojourn_regime] {
                    if let Some(rows) = grouped.get(&(state, regime)) {
                        entries.extend(rows.iter().copied());
                    }
                }
                let mass: f64 = entries.iter().map(|(_, p)| p).sum();
                if mass > 1.0 + 1e-12 {
                    return Err(Error::Parameter(format!(
                        "outgoing mass {mass:.6} > 1 from state {} ({sojourn_regime:?})",
                        state.label()
                    )));
                }
                let mut cum = 0.0;
                let mut cdf: Vec<(HcvState, f64)> = entries
                    .iter()
                    .map(|&(to, p)| {
                        cum += p;
                        (to, cum)
                    })
                    .collect();
                cdf.push((state, 1.0));
                cdfs.insert((state, sojourn_regime), StateCdf { steps: cdf });
            }
        }
        Ok(TransitionCdfs { cdfs })
    }
}

/// Step CDF over successor states; the final step is the self-loop.
#[derive(Debug, Clone)]
pub struct StateCdf {
    pub steps: Vec<(HcvState, f64)>,
}

impl StateCdf {
    pub fn sample(&self, u: f64) -> HcvState {
        for &(state, cum) in &self.steps {
            if u < cum {
                return state;
            }
        }
        self.steps.last().expect("nonempty cdf").0
    }
}

#[derive(Debug, Clone)]
pub struct TransitionCdfs {
    cdfs: HashMap<(HcvState, Regime), StateCdf>,
}

impl TransitionCdfs {
    pub fn get(&self, state: HcvState, sojourn_years: u32) -> Option<&StateCdf> {
        let regime = if sojourn_years == 0 {
            Regime::FirstYear
        } else {
            Regime::AfterFirst
        };
        self.cdfs.get(&(state, regime))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AcuteOutcome {
    Cleared,
    ChronicF0,
}

/// Resolve an acute infection at its six-month mark.
pub fn acute_resolution(clearance: f64, rng: &mut impl Rng) -> AcuteOutcome {
    if rng.gen_bool(clearance) {
        AcuteOutcome::Cleared
    } else {
        AcuteOutcome::ChronicF0
    }
}

/// Advance one annual progression step. Mutates the record's state and
/// sojourn counter; the caller owns entry-day bookkeeping on change.
pub fn progress_one_year(
    record: &mut InfectionRecord,
    cdfs: &TransitionCdfs,
    rng: &mut impl Rng,
) -> HcvState {
    debug_assert!(record.state.progresses(), "no annual step from {:?}", record.state);
    let next = match cdfs.get(record.state, record.sojourn_years) {
        Some(cdf) => cdf.sample(rng.gen()),
        None => record.state,
    };
    if next == record.state {
        record.sojourn_years += 1;
    } else {
        record.state = next;
        record.sojourn_years = 0;
    }
    next
}
