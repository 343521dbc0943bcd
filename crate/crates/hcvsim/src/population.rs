//! Agent lifecycle: cohort creation, aging, births, non-disease-related
//! deaths, employment, and age-band classification.

use rand::Rng;
use rand_distr::{Binomial, Distribution};

use crate::config::{annual_to_daily, MortalityConfig, SimConfig, DAYS_PER_YEAR};
use crate::error::{Error, Result};
use crate::natural_history::{assign_genotype, Genotype, HcvState, InfectionRecord};
use crate::outcomes::OutcomeTriple;

/// Utility-table age bands: 0-29, 30-39, ..., 70-79, 80+.
pub const AGE_BAND_COUNT: usize = 7;

pub fn age_band(age_years: f64) -> Result<usize> {
    if age_years < 0.0 {
        return Err(Error::Parameter(format!("negative age {age_years}")));
    }
    Ok(match age_years {
        a if a < 30.0 => 0,
        a if a < 40.0 => 1,
        a if a < 50.0 => 2,
        a if a < 60.0 => 3,
        a if a < 70.0 => 4,
        a if a < 80.0 => 5,
        _ => 6,
    })
}

#[derive(Debug, Clone)]
pub struct Agent {
    pub id: u64,
    /// Day index of birth; negative for agents alive at day 0.
    pub birth_day: i64,
    pub alive: bool,
    /// Drawn at creation; only consulted once the agent is of working age.
    pub employed: bool,
    /// Injecting career end day while the agent is an active IDU.
    pub idu_until: Option<u32>,
    pub ever_idu: bool,
    pub infection: Option<InfectionRecord>,
    /// Antibody positivity; never reverts.
    pub ever_infected: bool,
    /// Cured from a non-cirrhotic state or cleared spontaneously;
    /// RNA-negative and reinfectable.
    pub cured: bool,
    pub treated: bool,
    pub treat_failed: bool,
    pub acc: OutcomeTriple,
    pub allocated: Option<OutcomeTriple>,
}

impl Agent {
    pub fn new(id: u64, birth_day: i64, employed: bool) -> Self {
        Self {
            id,
            birth_day,
            alive: true,
            employed,
            idu_until: None,
            ever_idu: false,
            infection: None,
            ever_infected: false,
            cured: false,
            treated: false,
            treat_failed: false,
            acc: OutcomeTriple::default(),
            allocated: None,
        }
    }

    pub fn age_years(&self, day: u32) -> f64 {
        (day as i64 - self.birth_day) as f64 / DAYS_PER_YEAR as f64
    }

    pub fn is_idu(&self) -> bool {
        self.idu_until.is_some()
    }

    pub fn state(&self) -> HcvState {
        match &self.infection {
            Some(rec) => rec.state,
            None if self.cured => HcvState::CuredNonCirrhotic,
            None => HcvState::Susceptible,
        }
    }

    pub fn infectious(&self) -> bool {
        self.state().infectious()
    }

    /// RNA-negative and not in the residual-risk cured state.
    pub fn susceptible(&self) -> bool {
        self.infection.is_none()
    }

    pub fn rna_positive(&self) -> bool {
        self.infection
            .as_ref()
            .is_some_and(|r| r.state != HcvState::Lrd)
    }

    pub fn start_infection(&mut self, day: u32, genotype: Genotype) {
        debug_assert!(self.susceptible());
        self.infection = Some(InfectionRecord::new_acute(day, genotype));
        self.ever_infected = true;
        self.cured = false;
    }
}

/// Two-band non-disease-related mortality with the level solved so the
/// population-weighted mean annual rate over the initial age distribution
/// equals the configured aggregate.
#[derive(Debug, Clone, Copy)]
pub struct MortalityModel {
    pub split_age: f64,
    pub annual_young: f64,
    pub annual_old: f64,
    pub daily_young: f64,
    pub daily_old: f64,
    pub max_age: f64,
}

impl MortalityModel {
    pub fn solve(cfg: &MortalityConfig, initial_age_range: (f64, f64), max_age: f64) -> Result<Self> {
        let (annual_young, annual_old) = match cfg.annual_hazards {
            Some(pair) => pair,
            None => {
                let (lo, hi) = initial_age_range;
                let old_frac = ((hi - cfg.band_split_age.max(lo)).max(0.0) / (hi - lo)).min(1.0);
                let young = cfg.aggregate_annual_rate
                    / (1.0 - old_frac + cfg.hazard_ratio * old_frac);
                (young, cfg.hazard_ratio * young)
            }
        };
        if !(0.0..1.0).contains(&annual_young) || !(0.0..1.0).contains(&annual_old) {
            return Err(Error::Parameter(format!(
                "solved annual hazards out of range: {annual_young}, {annual_old}"
            )));
        }
        Ok(Self {
            split_age: cfg.band_split_age,
            annual_young,
            annual_old,
            daily_young: annual_to_daily(annual_young),
            daily_old: annual_to_daily(annual_old),
            max_age,
        })
    }

    pub fn from_config(cfg: &SimConfig) -> Result<Self> {
        Self::solve(&cfg.mortality, cfg.initial_age_range, cfg.max_age_years)
    }

    pub fn daily_death_prob(&self, age_years: f64) -> f64 {
        if age_years < self.split_age {
            self.daily_young
        } else {
            self.daily_old
        }
    }

    pub fn annual_death_prob(&self, age_years: f64) -> f64 {
        if age_years < self.split_age {
            self.annual_young
        } else {
            self.annual_old
        }
    }

    /// Mean annual rate over a uniform age distribution; should reproduce
    /// the configured aggregate for the solved model.
    pub fn mean_annual_rate_uniform(&self, range: (f64, f64)) -> f64 {
        let (lo, hi) = range;
        let old_frac = ((hi - self.split_age.max(lo)).max(0.0) / (hi - lo)).min(1.0);
        self.annual_young * (1.0 - old_frac) + self.annual_old * old_frac
    }

    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(format!(
            "split={:.6};young={:.12};old={:.12};max={:.3}",
            self.split_age, self.annual_young, self.annual_old, self.max_age
        ));
        format!("{:x}", h.finalize())
    }
}

#[derive(Debug, Clone, Default)]
pub struct Population {
    pub agents: Vec<Agent>,
    next_id: u64,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct DemographicEvents {
    pub births: u32,
    pub deaths: u32,
}

impl Population {
    pub fn living_count(&self) -> usize {
        self.agents.iter().filter(|a| a.alive).count()
    }

    pub fn count_living(&self, pred: impl Fn(&Agent) -> bool) -> usize {
        self.agents.iter().filter(|a| a.alive && pred(a)).count()
    }

    pub fn spawn(&mut self, birth_day: i64, employed: bool) -> usize {
        let id = self.next_id;
        self.next_id += 1;
        self.agents.push(Agent::new(id, birth_day, employed));
        self.agents.len() - 1
    }
}

/// Build the initial cohort: ages uniform over the configured range, the
/// configured numbers of IDUs and seed infections (possibly overlapping),
/// employment Bernoulli at the general rate.
pub fn init_cohort(cfg: &SimConfig, rng: &mut impl Rng) -> Result<Population> {
    cfg.validate()?;
    let mut pop = Population::default();
    let (lo, hi) = cfg.initial_age_range;
    for _ in 0..cfg.initial_cohort_size {
        let age = rng.gen_range(lo..hi);
        let birth_day = -((age * DAYS_PER_YEAR as f64) as i64);
        let employed = rng.gen_bool(cfg.employment_rate);
        pop.spawn(birth_day, employed);
    }
    let n = pop.agents.len();
    let idu_career_days = (cfg.social.idu_duration_years * DAYS_PER_YEAR as f64) as u32;
    for _ in 0..cfg.initial_idu_count {
        loop {
            let i = rng.gen_range(0..n);
            if !pop.agents[i].is_idu() {
                pop.agents[i].idu_until = Some(idu_career_days);
                pop.agents[i].ever_idu = true;
                break;
            }
        }
    }
    // seed infections among the injecting drug users first, so both
    // transmission routes are live from day one; any surplus lands on
    // non-injectors
    let mut idus: Vec<usize> = (0..n).filter(|&i| pop.agents[i].is_idu()).collect();
    for _ in 0..cfg.initial_infected_count {
        loop {
            let i = if idus.is_empty() {
                rng.gen_range(0..n)
            } else {
                let pick = rng.gen_range(0..idus.len());
                idus.swap_remove(pick)
            };
            if pop.agents[i].infection.is_none() {
                let genotype = assign_genotype(rng);
                pop.agents[i].infection = Some(InfectionRecord {
                    state: HcvState::F0,
                    state_entry_day: 0,
                    infection_day: 0,
                    chronic_onset_day: Some(0),
                    genotype,
                    sojourn_years: 0,
                });
                pop.agents[i].ever_infected = true;
                break;
            }
        }
    }
    Ok(pop)
}

/// One day of births, non-disease-related deaths, and the maximum-age cap.
/// Death counts are drawn per hazard band as binomials with uniformly
/// sampled victims, which is distributionally identical to per-agent
/// Bernoulli draws but far cheaper.
pub fn step_demographics(
    pop: &mut Population,
    day: u32,
    birth_rate_per_1000: f64,
    employment_rate: f64,
    mortality: &MortalityModel,
    rng: &mut impl Rng,
) -> DemographicEvents {
    let mut ev = DemographicEvents::default();
    let mut young: Vec<usize> = Vec::new();
    let mut old: Vec<usize> = Vec::new();
    for (idx, agent) in pop.agents.iter_mut().enumerate() {
        if !agent.alive {
            continue;
        }
        let age = agent.age_years(day);
        if age >= mortality.max_age {
            agent.alive = false;
            ev.deaths += 1;
        } else if age < mortality.split_age {
            young.push(idx);
        } else {
            old.push(idx);
        }
    }
    let mut band_deaths = 0u32;
    for (band, p) in [(&young, mortality.daily_young), (&old, mortality.daily_old)] {
        if band.is_empty() || p == 0.0 {
            continue;
        }
        let count = Binomial::new(band.len() as u64, p)
            .expect("valid binomial")
            .sample(rng) as usize;
        for pick in rand::seq::index::sample(rng, band.len(), count.min(band.len())) {
            pop.agents[band[pick]].alive = false;
            band_deaths += 1;
        }
    }
    ev.deaths += band_deaths;
    let living = (young.len() + old.len()) as u64 - u64::from(band_deaths);
    if living > 0 && birth_rate_per_1000 > 0.0 {
        let p_daily = birth_rate_per_1000 / 1000.0 / DAYS_PER_YEAR as f64;
        let births = Binomial::new(living, p_daily)
            .expect("valid binomial")
            .sample(rng);
        for _ in 0..births {
            let employed = rng.gen_bool(employment_rate);
            pop.spawn(day as i64, employed);
            ev.births += 1;
        }
    }
    ev
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cohort_counts() {
        let cfg = SimConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pop = init_cohort(&cfg, &mut rng).unwrap();
        assert_eq!(pop.agents.len(), 40_000);
        assert_eq!(pop.count_living(|a| a.is_idu()), 15);
        assert_eq!(pop.count_living(|a| a.infection.is_some()), 5);
        for a in &pop.agents {
            let age = a.age_years(0);
            assert!((23.0..102.0).contains(&age));
        }
    }

    #[test]
    fn employment_share_near_general_rate() {
        let cfg = SimConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pop = init_cohort(&cfg, &mut rng).unwrap();
        let share =
            pop.count_living(|a| a.employed) as f64 / pop.agents.len() as f64;
        // 3 sigma binomial band around 0.834
        assert!((share - 0.834).abs() < 0.006, "share = {share}");
    }

    #[test]
    fn solved_mortality_reproduces_aggregate() {
        let cfg = SimConfig::default();
        let m = MortalityModel::from_config(&cfg).unwrap();
        let mean = m.mean_annual_rate_uniform(cfg.initial_age_range);
        assert!((mean - 6.0 / 1000.0).abs() < 1e-6, "mean = {mean}");
        assert!((m.annual_old / m.annual_young - 8.0).abs() < 1e-9);
    }

    #[test]
    fn one_year_death_count_matches_binomial_oracle() {
        // stay below the maximum-age cap so only hazard deaths occur
        let cfg = SimConfig {
            initial_age_range: (23.0, 101.0),
            ..SimConfig::default()
        };
        let m = MortalityModel::from_config(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut pop = init_cohort(&cfg, &mut rng).unwrap();
        let mut deaths = 0u32;
        for day in 0..DAYS_PER_YEAR {
            deaths += step_demographics(&mut pop, day, 0.0, 0.834, &m, &mut rng).deaths;
        }
        // 40000 x 6/1000 = 240 expected; 3 sigma ~ 46
        assert!((deaths as f64 - 240.0).abs() < 46.0, "deaths = {deaths}");
        assert_eq!(pop.agents.len() as u32 - deaths, pop.living_count() as u32);
    }

    #[test]
    fn zero_rates_conserve_population() {
        let cfg = SimConfig {
            mortality: MortalityConfig {
                annual_hazards: Some((0.0, 0.0)),
                ..MortalityConfig::default()
            },
            // keep everyone below the age cap for the whole test
            initial_age_range: (23.0, 60.0),
            ..SimConfig::default()
        };
        let m = MortalityModel::from_config(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut pop = init_cohort(&cfg, &mut rng).unwrap();
        for day in 0..2 * DAYS_PER_YEAR {
            let ev = step_demographics(&mut pop, day, 0.0, 0.834, &m, &mut rng);
            assert_eq!((ev.births, ev.deaths), (0, 0));
        }
        assert_eq!(pop.living_count(), 40_000);
    }

    #[test]
    fn max_age_is_enforced() {
        let cfg = SimConfig::default();
        let m = MortalityModel::from_config(&cfg).unwrap();
        let mut pop = Population::default();
        let idx = pop.spawn(-(102 * DAYS_PER_YEAR as i64), true);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        step_demographics(&mut pop, 0, 0.0, 0.834, &m, &mut rng);
        assert!(!pop.agents[idx].alive);
    }

    #[test]
    fn age_band_boundaries() {
        assert_eq!(age_band(29.9).unwrap(), 0);
        assert_eq!(age_band(30.0).unwrap(), 1);
        assert_eq!(age_band(83.0).unwrap(), 6);
        assert_eq!(age_band(0.0).unwrap(), 0);
        assert!(age_band(-1.0).is_err());
    }

    #[test]
    fn antibody_flag_survives_cure() {
        let mut a = Agent::new(0, 0, true);
        a.start_infection(100, Genotype::G3);
        assert!(a.ever_infected && a.rna_positive());
        a.infection = None;
        a.cured = true;
        assert!(a.ever_infected && !a.rna_positive());
        assert_eq!(a.state(), HcvState::CuredNonCirrhotic);
        assert!(a.susceptible());
    }
}
