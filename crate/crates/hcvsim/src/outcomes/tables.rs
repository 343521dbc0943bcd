//! Cost and utility tables: one-time and recurring costs per disease
//! state (INR), and multiplicative utility weights by disease state and
//! age band.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::natural_history::HcvState;
use crate::population::AGE_BAND_COUNT;

/// One-time (state entry) and annual recurring costs, INR.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CostTable {
    pub one_time_f0_f3: f64,
    pub one_time_f4: f64,
    pub one_time_dc: f64,
    pub one_time_hcc: f64,
    pub one_time_lt: f64,
    pub recurring_f0_f3: f64,
    pub recurring_f4: f64,
    pub recurring_dc: f64,
    pub recurring_hcc: f64,
    pub recurring_lt: f64,
}

impl Default for CostTable {
    fn default() -> Self {
        Self {
            one_time_f0_f3: 3_900.0,
            one_time_f4: 2_900.0,
            one_time_dc: 2_600.0,
            one_time_hcc: 300_100.0,
            one_time_lt: 2_500_000.0,
            recurring_f0_f3: 11_000.0,
            recurring_f4: 21_700.0,
            recurring_dc: 23_600.0,
            recurring_hcc: 50_600.0,
            recurring_lt: 24_000.0,
        }
    }
}

impl CostTable {
    pub fn one_time(&self, state: HcvState) -> f64 {
        match state {
            HcvState::F0 | HcvState::F1 | HcvState::F2 | HcvState::F3 => self.one_time_f0_f3,
            HcvState::F4 => self.one_time_f4,
            HcvState::Dc => self.one_time_dc,
            HcvState::Hcc => self.one_time_hcc,
            HcvState::Lt => self.one_time_lt,
            _ => 0.0,
        }
    }

    pub fn recurring(&self, state: HcvState) -> f64 {
        match state {
            HcvState::F0 | HcvState::F1 | HcvState::F2 | HcvState::F3 => self.recurring_f0_f3,
            HcvState::F4 => self.recurring_f4,
            HcvState::Dc => self.recurring_dc,
            HcvState::Hcc => self.recurring_hcc,
            HcvState::Lt => self.recurring_lt,
            _ => 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.one_time_f0_f3,
            self.one_time_f4,
            self.one_time_dc,
            self.one_time_hcc,
            self.one_time_lt,
            self.recurring_f0_f3,
            self.recurring_f4,
            self.recurring_dc,
            self.recurring_hcc,
            self.recurring_lt,
        ];
        if all.iter().any(|c| *c < 0.0) {
            return Err(Error::Parameter("negative cost entry".into()));
        }
        Ok(())
    }

    /// Load from a CSV with columns state,one_time,recurring. State-group
    /// key `f0_f3` covers the four fibrosis rows at once.
    pub fn from_csv_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut t = CostTable::default();
        for rec in rdr.records() {
            let rec = rec?;
            let one: f64 = rec[1]
                .parse()
                .map_err(|_| Error::Parameter(format!("bad cost `{}`", &rec[1])))?;
            let rec_cost: f64 = rec[2]
                .parse()
                .map_err(|_| Error::Parameter(format!("bad cost `{}`", &rec[2])))?;
            match rec[0].to_ascii_lowercase().as_str() {
                "f0_f3" => (t.one_time_f0_f3, t.recurring_f0_f3) = (one, rec_cost),
                "f4" => (t.one_time_f4, t.recurring_f4) = (one, rec_cost),
                "dc" => (t.one_time_dc, t.recurring_dc) = (one, rec_cost),
                "hcc" => (t.one_time_hcc, t.recurring_hcc) = (one, rec_cost),
                "lt" => (t.one_time_lt, t.recurring_lt) = (one, rec_cost),
                other => return Err(Error::Parameter(format!("unknown cost row `{other}`"))),
            }
        }
        t.validate()?;
        Ok(t)
    }
}

/// Disease-state utilities and age multipliers; the weight of an agent is
/// their product.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct UtilityTable {
    pub u_f0_f3: f64,
    pub u_f4: f64,
    pub u_dc: f64,
    pub u_hcc: f64,
    pub u_lt: f64,
    pub u_svr2: f64,
    pub age_multipliers: [f64; AGE_BAND_COUNT],
}

impl Default for UtilityTable {
    fn default() -> Self {
        Self {
            u_f0_f3: 0.63,
            u_f4: 0.56,
            u_dc: 0.44,
            u_hcc: 0.44,
            u_lt: 0.84,
            u_svr2: 0.93,
            age_multipliers: [0.921, 0.906, 0.875, 0.849, 0.826, 0.786, 0.753],
        }
    }
}

impl UtilityTable {
    pub fn disease_utility(&self, state: HcvState) -> f64 {
        match state {
            HcvState::F0 | HcvState::F1 | HcvState::F2 | HcvState::F3 => self.u_f0_f3,
            HcvState::F4 => self.u_f4,
            HcvState::Dc => self.u_dc,
            HcvState::Hcc => self.u_hcc,
            HcvState::Lt => self.u_lt,
            HcvState::Svr2 => self.u_svr2,
            // acute infection carries no utility decrement in the tables
            _ => 1.0,
        }
    }

    pub fn qaly_weight(&self, age_band: usize, state: HcvState) -> f64 {
        self.age_multipliers[age_band] * self.disease_utility(state)
    }

    pub fn validate(&self) -> Result<()> {
        let mut all = vec![
            self.u_f0_f3,
            self.u_f4,
            self.u_dc,
            self.u_hcc,
            self.u_lt,
            self.u_svr2,
        ];
        all.extend_from_slice(&self.age_multipliers);
        if all.iter().any(|u| !(*u > 0.0 && *u <= 1.0)) {
            return Err(Error::Parameter("utility out of (0,1]".into()));
        }
        Ok(())
    }

    /// Load from a CSV with rows key,value; keys are the disease-state
    /// groups plus age_0..age_6.
    pub fn from_csv_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut t = UtilityTable::default();
        for rec in rdr.records() {
            let rec = rec?;
            let v: f64 = rec[1]
                .parse()
                .map_err(|_| Error::Parameter(format!("bad utility `{}`", &rec[1])))?;
            let key = rec[0].to_ascii_lowercase();
            match key.as_str() {
                "f0_f3" => t.u_f0_f3 = v,
                "f4" => t.u_f4 = v,
                "dc" => t.u_dc = v,
                "hcc" => t.u_hcc = v,
                "lt" => t.u_lt = v,
                "svr2" => t.u_svr2 = v,
                k if k.starts_with("age_") => {
                    let idx: usize = k[4..]
                        .parse()
                        .map_err(|_| Error::Parameter(format!("bad age band `{k}`")))?;
                    if idx >= AGE_BAND_COUNT {
                        return Err(Error::Parameter(format!("age band {idx} out of range")));
                    }
                    t.age_multipliers[idx] = v;
                }
                other => return Err(Error::Parameter(format!("unknown utility row `{other}`"))),
            }
        }
        t.validate()?;
        Ok(t)
    }
}
