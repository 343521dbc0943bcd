//! Lifetime outcomes: accrual of life-years, QALYs and costs; discounting;
//! the prebuilt outcomes repository; the two estimators (incremental
//! accumulation, outcomes allocation); and the net-monetary-benefit layer.

pub mod analysis;
pub mod repository;
pub mod tables;

use serde::{Deserialize, Serialize};

pub use analysis::{critical_uptake, incremental_nmb_curve, nmb};
pub use repository::{CompositeState, OutcomesRepository, RepositoryBuildConfig};
pub use tables::{CostTable, UtilityTable};

/// Life-years, QALYs and cost, each undiscounted and discounted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct OutcomeTriple {
    pub ly: f64,
    pub qaly: f64,
    pub cost: f64,
    pub d_ly: f64,
    pub d_qaly: f64,
    pub d_cost: f64,
}

impl OutcomeTriple {
    pub fn add(&mut self, other: &OutcomeTriple) {
        self.ly += other.ly;
        self.qaly += other.qaly;
        self.cost += other.cost;
        self.d_ly += other.d_ly;
        self.d_qaly += other.d_qaly;
        self.d_cost += other.d_cost;
    }

    pub fn sum(mut self, other: &OutcomeTriple) -> Self {
        self.add(other);
        self
    }

    pub fn scale(&self, f: f64) -> Self {
        Self {
            ly: self.ly * f,
            qaly: self.qaly * f,
            cost: self.cost * f,
            d_ly: self.d_ly * f,
            d_qaly: self.d_qaly * f,
            d_cost: self.d_cost * f,
        }
    }

    /// Scale only the discounted components; used when splicing a
    /// repository sample whose internal discounting is relative to its own
    /// allocation epoch into an analysis timeline.
    pub fn rebase_discounted(&self, factor: f64) -> Self {
        Self {
            d_ly: self.d_ly * factor,
            d_qaly: self.d_qaly * factor,
            d_cost: self.d_cost * factor,
            ..*self
        }
    }
}

/// Present value at the reference point of an amount accruing `t` years
/// later: amount / (1 + r)^t.
pub fn discount(amount: f64, rate: f64, years_from_reference: f64) -> crate::error::Result<f64> {
    if years_from_reference < 0.0 {
        return Err(crate::error::Error::Analysis(format!(
            "negative discount time {years_from_reference}"
        )));
    }
    Ok(amount / (1.0 + rate).powf(years_from_reference))
}

/// Discount factor for an annual chunk starting `year` whole years after
/// the reference point.
pub fn annual_discount_factor(rate: f64, year: u32) -> f64 {
    1.0 / (1.0 + rate).powi(year as i32)
}
