//! The two interaction environments that create new infections: medical
//! procedures through shared professional equipment, and social injecting
//! drug use through needle sharing.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::config::DAYS_PER_YEAR;
use crate::error::{Error, Result};
use crate::population::Population;

/// Where an infection was acquired.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Environment {
    Medical,
    Social,
}

/// Medical interaction environment. Annual per-capita counts m_* cover
/// injections, blood transfusions, surgeries and dental visits; together
/// they fix the daily visit probability q_v_med.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct MedicalEnvParams {
    pub m_i: f64,
    pub m_b: f64,
    pub m_s: f64,
    pub m_d: f64,
    /// Daily probability any person visits a medical professional.
    pub q_v_med: f64,
    /// Share of professionals with unsafe equipment practices.
    pub q_uns_med: f64,
    /// Patients seen per professional per day.
    pub n_p_mp: u32,
    /// Patients per doctor (the 1:1800 doctor:patient ratio).
    pub patients_per_doctor: f64,
    /// Per-event infection probability in a contaminated environment.
    pub q_t_med: f64,
    /// Per-transfusion infection probability implied by q_t_med.
    pub r_b: f64,
    /// Calibration target: fraction of infections that are medical.
    pub medical_share_target: f64,
}

impl Default for MedicalEnvParams {
    fn default() -> Self {
        Self {
            m_i: 2.9,
            m_b: 0.023,
            m_s: 0.009,
            m_d: 0.982,
            q_v_med: 0.0108,
            q_uns_med: 0.50,
            n_p_mp: 19,
            patients_per_doctor: 1800.0,
            q_t_med: 0.0064,
            r_b: 0.806,
            medical_share_target: 0.741,
        }
    }
}

impl MedicalEnvParams {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("q_v_med", self.q_v_med),
            ("q_uns_med", self.q_uns_med),
            ("q_t_med", self.q_t_med),
            ("r_b", self.r_b),
            ("medical_share_target", self.medical_share_target),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Parameter(format!("{name} out of [0,1]: {p}")));
            }
        }
        if [self.m_i, self.m_b, self.m_s, self.m_d]
            .iter()
            .any(|m| *m < 0.0)
        {
            return Err(Error::Parameter("negative annual event count".into()));
        }
        let derived = derive_q_v_med(self.m_i, self.m_b, self.m_s, self.m_d)?;
        if (derived - self.q_v_med).abs() > 1e-4 {
            return Err(Error::Parameter(format!(
                "q_v_med {} inconsistent with event counts (expected {derived:.6})",
                self.q_v_med
            )));
        }
        let expected_load = (self.q_v_med * self.patients_per_doctor).round() as u32;
        if self.n_p_mp != expected_load {
            return Err(Error::Parameter(format!(
                "n_p_mp {} inconsistent with visit rate and doctor ratio (expected {expected_load})",
                self.n_p_mp
            )));
        }
        Ok(())
    }
}

/// Social environment: IDU conversion and needle sharing in fixed-size
/// injection networks.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct SocialEnvParams {
    /// Daily probability an IDU visits the injection environment.
    pub q_v_soc_idu: f64,
    /// Daily probability a non-IDU in the at-risk age window visits.
    pub q_v_soc_nonidu: f64,
    /// Unemployment share among IDUs.
    pub q_ue_i: f64,
    /// Unemployment share in the general population.
    pub q_ue_g: f64,
    /// Daily conversion probability for an employed visitor.
    pub q_c_e: f64,
    /// Daily conversion probability for an unemployed visitor.
    pub q_c_ue: f64,
    /// Age window (years) in which non-IDUs may start injecting.
    pub idu_age_window: (f64, f64),
    /// Injecting career length in years.
    pub idu_duration_years: f64,
    pub network_size: usize,
    /// Probability an injection network shares equipment.
    pub q_shar: f64,
    /// Per-member infection probability in a sharing group with an
    /// infectious member.
    pub q_t_shar: f64,
}

impl Default for SocialEnvParams {
    fn default() -> Self {
        Self {
            q_v_soc_idu: 0.486,
            q_v_soc_nonidu: 0.142,
            q_ue_i: 0.26,
            q_ue_g: 0.166,
            q_c_e: 1.44e-5,
            q_c_ue: 2.25e-5,
            idu_age_window: (16.0, 32.0),
            idu_duration_years: 3.0,
            network_size: 3,
            q_shar: 0.41,
            q_t_shar: 0.02,
        }
    }
}

impl SocialEnvParams {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("q_v_soc_idu", self.q_v_soc_idu),
            ("q_v_soc_nonidu", self.q_v_soc_nonidu),
            ("q_ue_i", self.q_ue_i),
            ("q_ue_g", self.q_ue_g),
            ("q_c_e", self.q_c_e),
            ("q_c_ue", self.q_c_ue),
            ("q_shar", self.q_shar),
            ("q_t_shar", self.q_t_shar),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Parameter(format!("{name} out of [0,1]: {p}")));
            }
        }
        if self.q_shar > 0.504 {
            return Err(Error::Parameter(format!(
                "q_shar {} exceeds the feasible sharing bound 0.504",
                self.q_shar
            )));
        }
        if self.network_size == 0 {
            return Err(Error::Parameter("network_size must be positive".into()));
        }
        if self.idu_age_window.0 >= self.idu_age_window.1 {
            return Err(Error::Parameter("empty IDU age window".into()));
        }
        if self.q_c_e > 0.0 && self.q_ue_g > 0.0 {
            let got = self.q_c_ue / self.q_c_e;
            let want = self.q_ue_i / self.q_ue_g;
            if (got - want).abs() / want > 0.01 {
                return Err(Error::Parameter(format!(
                    "conversion probabilities out of closure: q_c_ue/q_c_e = {got:.4}, \
                     unemployment ratio = {want:.4}"
                )));
            }
        }
        Ok(())
    }

    pub fn in_idu_age_window(&self, age_years: f64) -> bool {
        age_years >= self.idu_age_window.0 && age_years <= self.idu_age_window.1
    }
}

/// Daily medical-visit probability from the annual per-capita procedure
/// counts: (m_i + m_b + m_s + m_d) / 360.
pub fn derive_q_v_med(m_i: f64, m_b: f64, m_s: f64, m_d: f64) -> Result<f64> {
    if [m_i, m_b, m_s, m_d].iter().any(|m| *m < 0.0) {
        return Err(Error::Parameter("negative annual event count".into()));
    }
    Ok((m_i + m_b + m_s + m_d) / DAYS_PER_YEAR as f64)
}

/// Per-transfusion infection probability implied by the average per-event
/// probability: r_b = medical_share x q_t_med x (sum m_j) / m_b.
pub fn derive_r_b(q_t_med: f64, m: [f64; 4], medical_share: f64) -> Result<f64> {
    let total: f64 = m.iter().sum();
    if m[1] <= 0.0 {
        return Err(Error::Parameter("m_b must be positive".into()));
    }
    if !(0.0..=1.0).contains(&medical_share) || medical_share == 0.0 {
        return Err(Error::Parameter(format!(
            "medical_share out of (0,1]: {medical_share}"
        )));
    }
    let r_b = medical_share * q_t_med * total / m[1];
    if r_b > 1.0 {
        return Err(Error::Parameter(format!(
            "infeasible parameterization: implied r_b = {r_b:.4} > 1"
        )));
    }
    Ok(r_b)
}

/// Inverse of [`derive_r_b`]: the weighted-average per-event probability
/// consistent with a given transfusion probability.
pub fn derive_q_t_med(r_b: f64, m: [f64; 4], medical_share: f64) -> Result<f64> {
    let total: f64 = m.iter().sum();
    if m[1] <= 0.0 || total <= 0.0 {
        return Err(Error::Parameter("m_b and total must be positive".into()));
    }
    if medical_share <= 0.0 {
        return Err(Error::Parameter("medical_share must be positive".into()));
    }
    Ok(r_b * m[1] / (medical_share * total))
}

/// Split an aggregate daily IDU-conversion probability q_c into
/// employment-specific probabilities, holding their ratio equal to the
/// unemployment-share ratio q_ue_I / q_ue_g:
///   q_c = q_c_ue * q_ue_g + q_c_e * (1 - q_ue_g),  q_c_ue = rho * q_c_e.
pub fn derive_idu_conversion(q_c: f64, q_ue_i: f64, q_ue_g: f64) -> Result<(f64, f64)> {
    for (name, p) in [("q_c", q_c), ("q_ue_I", q_ue_i), ("q_ue_g", q_ue_g)] {
        if !(0.0..1.0).contains(&p) && p != 0.0 {
            return Err(Error::Parameter(format!("{name} out of range: {p}")));
        }
    }
    if q_ue_g == 0.0 {
        return Ok((q_c, q_c));
    }
    let rho = q_ue_i / q_ue_g;
    let q_c_e = q_c / (rho * q_ue_g + (1.0 - q_ue_g));
    Ok((q_c_e, rho * q_c_e))
}

/// A medical professional's per-day environment state.
#[derive(Debug, Clone)]
pub struct MedicalProfessional {
    pub unsafe_practice: bool,
    pub contaminated_today: bool,
}

/// The professional pool. Grown in proportion to the living population so
/// the doctor:patient ratio stays fixed.
#[derive(Debug, Clone, Default)]
pub struct ProfessionalPool {
    pub professionals: Vec<MedicalProfessional>,
}

impl ProfessionalPool {
    pub fn resize_for_population(
        &mut self,
        living: usize,
        params: &MedicalEnvParams,
        rng: &mut impl Rng,
    ) {
        let needed = (living as f64 / params.patients_per_doctor).ceil().max(1.0) as usize;
        while self.professionals.len() < needed {
            self.professionals.push(MedicalProfessional {
                unsafe_practice: rng.gen_bool(params.q_uns_med),
                contaminated_today: false,
            });
        }
    }

    pub fn reset_day(&mut self) {
        for p in &mut self.professionals {
            p.contaminated_today = false;
        }
    }
}

/// One day of the medical environment. Visitors arrive in random order and
/// are dealt to professionals round-robin up to the per-day patient load.
/// An infectious visitor contaminates an unsafe professional's equipment;
/// susceptible visitors seen later the same day by that professional are
/// infected with probability q_t_med. Returns indices of newly infected
/// agents.
pub fn medical_step(
    pop: &mut Population,
    pool: &mut ProfessionalPool,
    params: &MedicalEnvParams,
    rng: &mut impl Rng,
) -> Vec<usize> {
    pool.reset_day();
    let living: Vec<usize> = pop
        .agents
        .iter()
        .enumerate()
        .filter(|(_, a)| a.alive)
        .map(|(i, _)| i)
        .collect();
    // binomial visitor count with a uniform subset is equivalent to a
    // per-agent Bernoulli visit draw
    let count = rand_distr::Binomial::new(living.len() as u64, params.q_v_med)
        .expect("valid binomial")
        .sample(rng) as usize;
    let mut visitors: Vec<usize> = rand::seq::index::sample(rng, living.len(), count)
        .iter()
        .map(|i| living[i])
        .collect();
    visitors.shuffle(rng);
    pool.resize_for_population(pop.living_count(), params, rng);

    let cap = params.n_p_mp as usize;
    let n_prof = pool.professionals.len();
    let mut infected = Vec::new();
    for (k, &idx) in visitors.iter().enumerate() {
        // round-robin assignment: fill each professional's day before
        // spilling to the next
        let prof_id = (k / cap) % n_prof;
        let prof = &mut pool.professionals[prof_id];
        if !prof.unsafe_practice {
            continue;
        }
        if pop.agents[idx].infectious() {
            prof.contaminated_today = true;
        } else if prof.contaminated_today
            && pop.agents[idx].susceptible()
            && rng.gen_bool(params.q_t_med)
        {
            infected.push(idx);
        }
    }
    infected
}

/// One day of the social environment: IDU-career expiry, conversion of
/// at-risk visitors, then needle sharing inside random injection networks.
/// Returns (converted, infected) agent indices.
pub fn social_step(
    pop: &mut Population,
    params: &SocialEnvParams,
    day: u32,
    rng: &mut impl Rng,
) -> (Vec<usize>, Vec<usize>) {
    let mut converted = Vec::new();
    let mut idus: Vec<usize> = Vec::new();
    let mut at_risk_employed: Vec<usize> = Vec::new();
    let mut at_risk_unemployed: Vec<usize> = Vec::new();

    for (idx, agent) in pop.agents.iter_mut().enumerate() {
        if !agent.alive {
            continue;
        }
        if let Some(until) = agent.idu_until {
            if day >= until {
                agent.idu_until = None;
            }
        }
        if agent.is_idu() {
            idus.push(idx);
        } else if params.in_idu_age_window(agent.age_years(day)) {
            if agent.employed {
                at_risk_employed.push(idx);
            } else {
                at_risk_unemployed.push(idx);
            }
        }
    }

    // folded visit-and-convert probability; visits without conversion have
    // no other effect on non-IDUs
    for (group, q_c) in [
        (&at_risk_employed, params.q_c_e),
        (&at_risk_unemployed, params.q_c_ue),
    ] {
        if group.is_empty() {
            continue;
        }
        let p = params.q_v_soc_nonidu * q_c;
        let count = rand_distr::Binomial::new(group.len() as u64, p)
            .expect("valid binomial")
            .sample(rng) as usize;
        for pick in rand::seq::index::sample(rng, group.len(), count) {
            let agent = &mut pop.agents[group[pick]];
            agent.idu_until =
                Some(day + (params.idu_duration_years * DAYS_PER_YEAR as f64) as u32);
            agent.ever_idu = true;
            converted.push(group[pick]);
        }
    }

    let visit_count = rand_distr::Binomial::new(idus.len() as u64, params.q_v_soc_idu)
        .expect("valid binomial")
        .sample(rng) as usize;
    let mut injecting_today: Vec<usize> = rand::seq::index::sample(rng, idus.len(), visit_count)
        .iter()
        .map(|i| idus[i])
        .collect();
    injecting_today.shuffle(rng);
    let mut infected = Vec::new();
    for group in injecting_today.chunks(params.network_size) {
        if group.len() < 2 || !rng.gen_bool(params.q_shar) {
            continue;
        }
        if !group.iter().any(|&i| pop.agents[i].infectious()) {
            continue;
        }
        for &i in group {
            if pop.agents[i].susceptible() && rng.gen_bool(params.q_t_shar) {
                infected.push(i);
            }
        }
    }
    (converted, infected)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn q_v_med_from_event_counts() {
        let q = derive_q_v_med(2.9, 0.023, 0.009, 0.982).unwrap();
        assert!((q - 0.010872).abs() < 1e-5);
        assert_eq!(derive_q_v_med(0.0, 0.0, 0.0, 0.0).unwrap(), 0.0);
        assert_eq!(derive_q_v_med(360.0, 0.0, 0.0, 0.0).unwrap(), 1.0);
        assert!(derive_q_v_med(-1.0, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn r_b_matches_calibrated_value() {
        let m = [2.9, 0.023, 0.009, 0.982];
        let r_b = derive_r_b(0.0064, m, 0.74).unwrap();
        assert!((r_b - 0.806).abs() < 0.003, "r_b = {r_b}");
        assert_eq!(derive_r_b(0.0, m, 0.74).unwrap(), 0.0);
    }

    #[test]
    fn r_b_round_trip() {
        let m = [2.9, 0.023, 0.009, 0.982];
        let r_b = 0.806;
        let q_t = derive_q_t_med(r_b, m, 0.74).unwrap();
        let back = derive_r_b(q_t, m, 0.74).unwrap();
        assert!((back - r_b).abs() < 1e-12);
    }

    #[test]
    fn r_b_infeasible_flagged() {
        let m = [2.9, 0.0001, 0.009, 0.982];
        assert!(derive_r_b(0.5, m, 1.0).is_err());
    }

    #[test]
    fn idu_conversion_solves_table_pair() {
        let (q_c_e, q_c_ue) = derive_idu_conversion(1.575e-5, 0.26, 0.166).unwrap();
        assert!((q_c_e - 1.44e-5).abs() / 1.44e-5 < 0.01, "q_c_e = {q_c_e:e}");
        assert!(
            (q_c_ue - 2.25e-5).abs() / 2.25e-5 < 0.01,
            "q_c_ue = {q_c_ue:e}"
        );
        // the aggregate identity
        let q_c = q_c_ue * 0.166 + q_c_e * (1.0 - 0.166);
        assert!((q_c - 1.575e-5).abs() < 1e-12);
    }

    #[test]
    fn idu_conversion_degenerate_cases() {
        let (e, ue) = derive_idu_conversion(1e-4, 0.2, 0.2).unwrap();
        assert!((e - 1e-4).abs() < 1e-15);
        assert!((ue - 1e-4).abs() < 1e-15);
        let (e, ue) = derive_idu_conversion(0.0, 0.26, 0.166).unwrap();
        assert_eq!((e, ue), (0.0, 0.0));
    }

    #[test]
    fn default_params_pass_validation() {
        MedicalEnvParams::default().validate().unwrap();
        SocialEnvParams::default().validate().unwrap();
    }

    #[test]
    fn sharing_bound_enforced() {
        let p = SocialEnvParams {
            q_shar: 0.51,
            ..SocialEnvParams::default()
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn conversion_closure_enforced() {
        let p = SocialEnvParams {
            q_c_ue: 3.0e-5,
            ..SocialEnvParams::default()
        };
        assert!(p.validate().is_err());
    }
}
