//! Run configuration: cohort settings, clock, rates, scenario toggles.
//!
//! All annual quantities are converted to daily ones with a 360-day year,
//! which is the year length the visit-rate arithmetic of the transmission
//! parameters assumes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transmission::{MedicalEnvParams, SocialEnvParams};

pub const DAYS_PER_YEAR: u32 = 360;

/// Which lifetime-outcomes estimator a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Incremental accumulation: keep simulating each agent past the model
    /// horizon until death.
    Ia,
    /// Outcomes allocation: splice accumulated outcomes with samples drawn
    /// from the prebuilt repository at infection-status changes.
    #[default]
    Oa,
}

impl std::fmt::Display for Estimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Estimator::Ia => "ia",
            Estimator::Oa => "oa",
        })
    }
}

impl std::str::FromStr for Estimator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ia" => Ok(Estimator::Ia),
            "oa" => Ok(Estimator::Oa),
            other => Err(Error::Config(format!("unknown estimator `{other}`"))),
        }
    }
}

/// Treatment policy. Camp years follow the convention that year 0 means the
/// first day of the intervention and year y > 0 means the last day of
/// intervention year y.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TreatmentModel {
    #[default]
    Annual,
    T0,
    End,
    Twice,
    Thrice,
    TwiceEarly,
    ThriceEarly,
}

impl TreatmentModel {
    /// Camp time points in intervention years; `None` for the annual model.
    pub fn camp_years(self, intervention_years: u32) -> Option<Vec<u32>> {
        let n = intervention_years;
        match self {
            TreatmentModel::Annual => None,
            TreatmentModel::T0 => Some(vec![0]),
            TreatmentModel::End => Some(vec![n]),
            TreatmentModel::Twice => Some(vec![n / 2, n]),
            TreatmentModel::Thrice => Some(vec![(3 * n) / 10, (6 * n) / 10, n]),
            TreatmentModel::TwiceEarly => Some(vec![0, n / 2]),
            TreatmentModel::ThriceEarly => Some(vec![0, (3 * n) / 10, (6 * n) / 10]),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            TreatmentModel::Annual => "annual",
            TreatmentModel::T0 => "t0",
            TreatmentModel::End => "end",
            TreatmentModel::Twice => "twice",
            TreatmentModel::Thrice => "thrice",
            TreatmentModel::TwiceEarly => "twice_early",
            TreatmentModel::ThriceEarly => "thrice_early",
        }
    }
}

impl std::fmt::Display for TreatmentModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for TreatmentModel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "annual" => Ok(TreatmentModel::Annual),
            "t0" => Ok(TreatmentModel::T0),
            "end" => Ok(TreatmentModel::End),
            "twice" => Ok(TreatmentModel::Twice),
            "thrice" => Ok(TreatmentModel::Thrice),
            "twice_early" => Ok(TreatmentModel::TwiceEarly),
            "thrice_early" => Ok(TreatmentModel::ThriceEarly),
            other => Err(Error::Config(format!("unknown treatment model `{other}`"))),
        }
    }
}

/// Non-disease-related mortality, decomposed into a lower hazard below the
/// split age and a higher hazard above it. Levels are solved at load time so
/// the mean over the initial age distribution equals the aggregate rate.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MortalityConfig {
    /// Aggregate annual death rate per person (6 per 1,000 by default).
    pub aggregate_annual_rate: f64,
    /// Age (years) splitting the low- and high-hazard bands.
    pub band_split_age: f64,
    /// Hazard ratio older:younger.
    pub hazard_ratio: f64,
    /// Explicit override of the solved (younger, older) annual hazards.
    pub annual_hazards: Option<(f64, f64)>,
}

impl Default for MortalityConfig {
    fn default() -> Self {
        Self {
            aggregate_annual_rate: 6.0 / 1000.0,
            band_split_age: 60.0,
            hazard_ratio: 8.0,
            annual_hazards: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub initial_cohort_size: u32,
    pub initial_idu_count: u32,
    pub initial_infected_count: u32,
    /// Inclusive age range (years) of the initial cohort.
    pub initial_age_range: (f64, f64),
    pub calibration_years: u32,
    pub intervention_years: u32,
    /// Annual births per 1,000 persons.
    pub birth_rate_per_1000: f64,
    pub mortality: MortalityConfig,
    /// Maximum permissible age in years; agents reaching it die.
    pub max_age_years: f64,
    pub discount_rate: f64,
    /// Willingness-to-pay per QALY, INR (3x per-capita GDP).
    pub wtp_per_qaly: f64,
    /// DAA course cost added at treatment time (INR). The source cost table
    /// omits drug acquisition cost, so the default is 0 with this override.
    pub daa_course_cost: f64,
    pub transmission_enabled_in_intervention: bool,
    pub treatment_model: TreatmentModel,
    pub target_uptake: f64,
    /// Base coverage fraction of the annual-treatment ramp.
    pub base_coverage_alpha: f64,
    pub estimator: Estimator,
    pub rng_seed: u64,
    pub replication_count: u32,
    /// Employment probability for the general population (1 - q_ue^g).
    pub employment_rate: f64,
    pub medical: MedicalEnvParams,
    pub social: SocialEnvParams,
    /// Use the exact age band at allocation instead of the band containing
    /// age+1 (the default reproduces the source convention).
    pub oa_exact_age_band: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            initial_cohort_size: 40_000,
            initial_idu_count: 15,
            initial_infected_count: 5,
            initial_age_range: (23.0, 102.0),
            calibration_years: 50,
            intervention_years: 10,
            birth_rate_per_1000: 15.0,
            mortality: MortalityConfig::default(),
            max_age_years: 102.0,
            discount_rate: 0.03,
            wtp_per_qaly: 341_901.0,
            daa_course_cost: 0.0,
            transmission_enabled_in_intervention: true,
            treatment_model: TreatmentModel::Annual,
            target_uptake: 0.10,
            base_coverage_alpha: 0.40,
            estimator: Estimator::Oa,
            rng_seed: 20_240_817,
            replication_count: 3,
            employment_rate: 1.0 - 0.166,
            medical: MedicalEnvParams::default(),
            social: SocialEnvParams::default(),
            oa_exact_age_band: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.initial_cohort_size == 0 {
            return fail("initial_cohort_size must be positive".into());
        }
        if self.initial_idu_count + self.initial_infected_count > self.initial_cohort_size {
            return fail("initial IDU + infected counts exceed cohort size".into());
        }
        if self.calibration_years == 0 || self.intervention_years == 0 {
            return fail("calibration_years and intervention_years must be > 0".into());
        }
        if self.initial_age_range.0 < 0.0 || self.initial_age_range.0 >= self.initial_age_range.1 {
            return fail("initial_age_range must be a nonempty nonnegative interval".into());
        }
        if self.initial_age_range.1 > self.max_age_years {
            return fail("initial ages exceed the maximum permissible age".into());
        }
        for (name, v) in [
            ("target_uptake", self.target_uptake),
            ("base_coverage_alpha", self.base_coverage_alpha),
            ("employment_rate", self.employment_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return fail(format!("{name} must be in [0,1], got {v}"));
            }
        }
        if self.discount_rate < 0.0 {
            return fail("discount_rate must be nonnegative".into());
        }
        if self.birth_rate_per_1000 < 0.0 || self.mortality.aggregate_annual_rate < 0.0 {
            return fail("birth/death rates must be nonnegative".into());
        }
        if self.replication_count == 0 {
            return fail("replication_count must be >= 1".into());
        }
        self.medical.validate()?;
        self.social.validate()?;
        Ok(())
    }

    pub fn calibration_days(&self) -> u32 {
        self.calibration_years * DAYS_PER_YEAR
    }

    pub fn total_days(&self) -> u32 {
        (self.calibration_years + self.intervention_years) * DAYS_PER_YEAR
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: SimConfig = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }
}

/// Daily probability equivalent of an annual one: p_d = 1 - (1 - p_a)^(1/360).
pub fn annual_to_daily(annual_p: f64) -> f64 {
    1.0 - (1.0 - annual_p).powf(1.0 / DAYS_PER_YEAR as f64)
}
