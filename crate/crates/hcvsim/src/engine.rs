//! Simulation clock and orchestration: the daily replication loop wiring
//! demographics, transmission, disease progression, treatment and outcome
//! tracking together, plus scenario fan-out and report assembly.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{Estimator, SimConfig, TreatmentModel, DAYS_PER_YEAR};
use crate::error::{Error, Result};
use crate::natural_history::{
    acute_resolution, assign_genotype, progress_one_year, AcuteOutcome, HcvState, TransitionModel,
};
use crate::outcomes::analysis::{nmb, summarize_levels, OutcomeLevels};
use crate::outcomes::repository::{
    allocation_band, simulate_remaining, start_state_index, CompositeState, LifetimeModels,
    OutcomesRepository,
};
use crate::outcomes::tables::{CostTable, UtilityTable};
use crate::outcomes::{annual_discount_factor, OutcomeTriple};
use crate::population::{age_band, init_cohort, step_demographics, MortalityModel, Population};
use crate::rng::{replication_seed, stream_rng, Stream};
use crate::transmission::{medical_step, social_step, ProfessionalPool};
use crate::treatment::{
    apply_treatment, coverage_fraction, select_for_treatment, stochastic_round,
    treatment_eligible, SvrTable,
};

/// All loaded model inputs of a run.
#[derive(Debug, Clone)]
pub struct Models {
    pub transition: TransitionModel,
    pub mortality: MortalityModel,
    pub costs: CostTable,
    pub utilities: UtilityTable,
    pub svr: SvrTable,
}

impl Models {
    pub fn from_config(cfg: &SimConfig) -> Result<Self> {
        Ok(Self {
            transition: TransitionModel::default(),
            mortality: MortalityModel::from_config(cfg)?,
            costs: CostTable::default(),
            utilities: UtilityTable::default(),
            svr: SvrTable::default(),
        })
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct AgentFlags {
    assigned: bool,
    in_scope: bool,
    patient: bool,
    infected_present: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicationReport {
    pub replication: u32,
    /// Prevalences among the living at the end of the run.
    pub antibody_prevalence: f64,
    pub rna_prevalence: f64,
    pub idu_prevalence: f64,
    /// Prevalences at the calibration/intervention boundary.
    pub cal_antibody_prevalence: f64,
    pub cal_rna_prevalence: f64,
    pub cal_idu_prevalence: f64,
    pub effective_uptake: Option<f64>,
    pub treated: u64,
    pub treatment_shortfall: u64,
    pub infected_present: u64,
    pub medical_infections: u64,
    pub social_infections: u64,
    pub cal_medical_infections: u64,
    pub cal_social_infections: u64,
    pub scope_count: u64,
    pub patient_count: u64,
    pub population_total: OutcomeTriple,
    pub patient_total: OutcomeTriple,
    pub levels: OutcomeLevels,
    pub wall_clock_secs: f64,
}

impl ReplicationReport {
    pub fn medical_share(&self) -> Option<f64> {
        let total = self.medical_infections + self.social_infections;
        (total > 0).then(|| self.medical_infections as f64 / total as f64)
    }

    pub fn cal_medical_share(&self) -> Option<f64> {
        let total = self.cal_medical_infections + self.cal_social_infections;
        (total > 0).then(|| self.cal_medical_infections as f64 / total as f64)
    }
}

fn chronic(state: HcvState) -> bool {
    matches!(
        state,
        HcvState::F0
            | HcvState::F1
            | HcvState::F2
            | HcvState::F3
            | HcvState::F4
            | HcvState::Dc
            | HcvState::Hcc
            | HcvState::Lt
    )
}

/// Repository start state an agent's current status maps to: the acute
/// phase and cured states count as class 0.
fn oa_state(state: HcvState) -> Option<HcvState> {
    match state {
        HcvState::Acute | HcvState::CuredNonCirrhotic | HcvState::Susceptible => {
            Some(HcvState::Susceptible)
        }
        HcvState::Lrd => None,
        s if start_state_index(s).is_some() => Some(s),
        _ => None,
    }
}

struct OaTracker<'a> {
    repo: Option<&'a OutcomesRepository>,
    exact_band: bool,
    discount_rate: f64,
}

impl OaTracker<'_> {
    /// Allocate at a status change: freeze accumulated-so-far plus one
    /// repository draw, discount-rebased to the change point.
    fn allocate(
        &self,
        agent: &mut crate::population::Agent,
        age: f64,
        state: HcvState,
        years_from_ref: u32,
        rng: &mut impl Rng,
    ) -> Result<()> {
        let Some(repo) = self.repo else {
            return Ok(());
        };
        let Some(start) = oa_state(state) else {
            return Ok(());
        };
        let v = CompositeState {
            band: allocation_band(age, self.exact_band)?,
            state: start,
        };
        let df = annual_discount_factor(self.discount_rate, years_from_ref);
        let sample = repo.allocate(v, rng)?.rebase_discounted(df);
        agent.allocated = Some(agent.acc.sum(&sample));
        Ok(())
    }
}

/// Run one replication of the full simulation.
pub fn run_replication(
    cfg: &SimConfig,
    models: &Models,
    repo: Option<&OutcomesRepository>,
    replication: u32,
) -> Result<ReplicationReport> {
    run_replication_full(cfg, models, repo, replication).map(|(report, _)| report)
}

/// As `run_replication`, but also returns the final population for
/// agent-level inspection.
pub fn run_replication_full(
    cfg: &SimConfig,
    models: &Models,
    repo: Option<&OutcomesRepository>,
    replication: u32,
) -> Result<(ReplicationReport, Population)> {
    let t0 = Instant::now();
    cfg.validate()?;
    let cdfs = models.transition.build_cdfs()?;
    if cfg.estimator == Estimator::Oa {
        let repo = repo.ok_or_else(|| {
            Error::Repository("outcomes-allocation estimator needs a repository".into())
        })?;
        repo.verify_models(&models.transition, &models.mortality)?;
    }
    let rep_seed = replication_seed(cfg.rng_seed, replication as u64);
    let mut rng_init = stream_rng(rep_seed, Stream::Init);
    let mut rng_demo = stream_rng(rep_seed, Stream::Demographics);
    let mut rng_med = stream_rng(rep_seed, Stream::Medical);
    let mut rng_soc = stream_rng(rep_seed, Stream::Social);
    let mut rng_nh = stream_rng(rep_seed, Stream::NaturalHistory);
    let mut rng_treat = stream_rng(rep_seed, Stream::Treatment);
    let mut rng_out = stream_rng(rep_seed, Stream::Outcomes);

    let mut pop = init_cohort(cfg, &mut rng_init)?;
    let mut flags: Vec<AgentFlags> = vec![AgentFlags::default(); pop.agents.len()];
    let mut pool = ProfessionalPool::default();
    let calib_days = cfg.calibration_days();
    let total_days = cfg.total_days();
    let ledger_n = (cfg.intervention_years - 1).max(1);
    let u = cfg.target_uptake;
    let alpha = cfg.base_coverage_alpha;
    let camp_days: Vec<u32> = cfg
        .treatment_model
        .camp_years(cfg.intervention_years)
        .map(|years| {
            years
                .iter()
                .map(|&y| {
                    if y == 0 {
                        calib_days
                    } else {
                        calib_days + y * DAYS_PER_YEAR - 1
                    }
                })
                .collect()
        })
        .unwrap_or_default();
    let oa = OaTracker {
        repo: if cfg.estimator == Estimator::Oa { repo } else { None },
        exact_band: cfg.oa_exact_age_band,
        discount_rate: cfg.discount_rate,
    };

    let mut medical_infections = 0u64;
    let mut social_infections = 0u64;
    let mut cal_medical = 0u64;
    let mut cal_social = 0u64;
    let mut year_new_infections = 0.0f64;
    let mut backlog = 0.0f64;
    let mut treated_count = 0u64;
    let mut shortfall = 0u64;
    let mut cal_prev = (0.0, 0.0, 0.0);

    for day in 0..total_days {
        let in_intervention = day >= calib_days;
        let ref_year = if in_intervention {
            (day - calib_days) / DAYS_PER_YEAR
        } else {
            0
        };
        let df = annual_discount_factor(cfg.discount_rate, ref_year);

        // intervention-start bookkeeping: scope, the pre-existing infected
        // stock entering the first treatment period, initial allocations
        if day == calib_days {
            cal_prev = prevalences(&pop);
            cal_medical = medical_infections;
            cal_social = social_infections;
            for idx in 0..pop.agents.len() {
                if !pop.agents[idx].alive {
                    continue;
                }
                flags[idx].in_scope = true;
                let state = pop.agents[idx].state();
                if pop.agents[idx].rna_positive() {
                    flags[idx].infected_present = true;
                    year_new_infections += 1.0;
                    if rng_treat.gen_bool(u) {
                        flags[idx].assigned = true;
                    }
                }
                if chronic(state) {
                    flags[idx].patient = true;
                }
                let age = pop.agents[idx].age_years(day);
                oa.allocate(&mut pop.agents[idx], age, state, 0, &mut rng_out)?;
            }
        }

        step_demographics(
            &mut pop,
            day,
            cfg.birth_rate_per_1000,
            cfg.employment_rate,
            &models.mortality,
            &mut rng_demo,
        );
        flags.resize(pop.agents.len(), AgentFlags::default());

        let transmission_on = !in_intervention || cfg.transmission_enabled_in_intervention;
        if transmission_on {
            let medical_hits = medical_step(&mut pop, &mut pool, &cfg.medical, &mut rng_med);
            for idx in medical_hits {
                infect(
                    &mut pop,
                    &mut flags,
                    idx,
                    day,
                    in_intervention,
                    u,
                    &mut year_new_infections,
                    &mut rng_med,
                    &mut rng_treat,
                );
                medical_infections += 1;
            }
            let (_converted, social_hits) = social_step(&mut pop, &cfg.social, day, &mut rng_soc);
            for idx in social_hits {
                if !pop.agents[idx].susceptible() {
                    continue;
                }
                infect(
                    &mut pop,
                    &mut flags,
                    idx,
                    day,
                    in_intervention,
                    u,
                    &mut year_new_infections,
                    &mut rng_soc,
                    &mut rng_treat,
                );
                social_infections += 1;
            }
        }

        // natural history: acute resolution at the six-month mark, annual
        // progression on the chronic-onset anniversary
        for idx in 0..pop.agents.len() {
            let agent = &mut pop.agents[idx];
            if !agent.alive {
                continue;
            }
            let Some(rec) = agent.infection.as_mut() else {
                continue;
            };
            if rec.state == HcvState::Acute {
                if day - rec.infection_day == DAYS_PER_YEAR / 2 {
                    match acute_resolution(models.transition.acute_clearance, &mut rng_nh) {
                        AcuteOutcome::Cleared => {
                            agent.infection = None;
                            agent.cured = true;
                            if in_intervention {
                                let age = agent.age_years(day);
                                oa.allocate(
                                    agent,
                                    age,
                                    HcvState::Susceptible,
                                    ref_year,
                                    &mut rng_out,
                                )?;
                            }
                        }
                        AcuteOutcome::ChronicF0 => {
                            rec.state = HcvState::F0;
                            rec.state_entry_day = day;
                            rec.chronic_onset_day = Some(day);
                            rec.sojourn_years = 0;
                            if in_intervention {
                                flags[idx].patient = true;
                                charge(agent, models.costs.one_time(HcvState::F0), df);
                                let age = agent.age_years(day);
                                oa.allocate(agent, age, HcvState::F0, ref_year, &mut rng_out)?;
                            }
                        }
                    }
                }
                continue;
            }
            if !rec.state.progresses() {
                continue;
            }
            let Some(onset) = rec.chronic_onset_day else {
                continue;
            };
            if day > onset && (day - onset) % DAYS_PER_YEAR == 0 {
                let old = rec.state;
                let new = progress_one_year(rec, &cdfs, &mut rng_nh);
                if new != old {
                    rec.state_entry_day = day;
                    if new == HcvState::Lrd {
                        agent.alive = false;
                    } else if in_intervention {
                        charge(agent, models.costs.one_time(new), df);
                    }
                }
            }
        }

        // treatment events
        if in_intervention {
            match cfg.treatment_model {
                TreatmentModel::Annual => {
                    let year_end = (day + 1 - calib_days) % DAYS_PER_YEAR == 0;
                    if year_end && u > 0.0 {
                        let j = ref_year.min(ledger_n);
                        let c = coverage_fraction(alpha, j, ledger_n);
                        let planned = c * (backlog + u * year_new_infections);
                        backlog += u * year_new_infections - planned;
                        year_new_infections = 0.0;
                        let demand = stochastic_round(planned, &mut rng_treat);
                        let eligible: Vec<usize> = (0..pop.agents.len())
                            .filter(|&i| flags[i].assigned && treatment_eligible(&pop.agents[i]))
                            .collect();
                        let (selected, short) =
                            select_for_treatment(eligible, demand, &mut rng_treat);
                        shortfall += short;
                        for idx in selected {
                            treat_one(
                                &mut pop, idx, day, df, ref_year, cfg, models, &oa, &mut rng_treat,
                                &mut rng_out,
                            )?;
                            treated_count += 1;
                        }
                    }
                }
                _ => {
                    if camp_days.contains(&day) && u > 0.0 {
                        let eligible: Vec<usize> = (0..pop.agents.len())
                            .filter(|&i| treatment_eligible(&pop.agents[i]))
                            .collect();
                        let demand =
                            stochastic_round(u * eligible.len() as f64, &mut rng_treat);
                        let (selected, short) =
                            select_for_treatment(eligible, demand, &mut rng_treat);
                        shortfall += short;
                        for idx in selected {
                            treat_one(
                                &mut pop, idx, day, df, ref_year, cfg, models, &oa, &mut rng_treat,
                                &mut rng_out,
                            )?;
                            treated_count += 1;
                        }
                    }
                }
            }
        }

        // daily outcome accrual
        if in_intervention {
            let daily = 1.0 / DAYS_PER_YEAR as f64;
            for (idx, agent) in pop.agents.iter_mut().enumerate() {
                if !agent.alive {
                    continue;
                }
                let age = agent.age_years(day);
                let band = age_band(age)?;
                let state = agent.state();
                let w = models.utilities.qaly_weight(band, state);
                let recurring = models.costs.recurring(state);
                agent.acc.ly += daily;
                agent.acc.d_ly += daily * df;
                agent.acc.qaly += w * daily;
                agent.acc.d_qaly += w * daily * df;
                agent.acc.cost += recurring * daily;
                agent.acc.d_cost += recurring * daily * df;
                if !flags[idx].in_scope {
                    // newborn entering the analysis window
                    flags[idx].in_scope = true;
                    oa.allocate(agent, age, state, ref_year, &mut rng_out)?;
                }
                if agent.rna_positive() {
                    flags[idx].infected_present = true;
                }
                if chronic(state) {
                    flags[idx].patient = true;
                }
            }
        }
    }

    // finalize outcomes
    let mut population_total = OutcomeTriple::default();
    let mut patient_total = OutcomeTriple::default();
    let mut scope_count = 0u64;
    let mut patient_count = 0u64;
    let horizon_df = annual_discount_factor(cfg.discount_rate, cfg.intervention_years);
    let lifetime = LifetimeModels {
        cdfs: &cdfs,
        mortality: &models.mortality,
        costs: &models.costs,
        utilities: &models.utilities,
        discount_rate: cfg.discount_rate,
    };
    for (idx, agent) in pop.agents.iter().enumerate() {
        if !flags[idx].in_scope {
            continue;
        }
        scope_count += 1;
        let final_outcome = match cfg.estimator {
            Estimator::Oa => agent.allocated.unwrap_or(agent.acc),
            Estimator::Ia => {
                if agent.alive && agent.state() != HcvState::Lrd {
                    let age = agent.age_years(total_days);
                    let remaining = simulate_remaining_continuation(
                        &lifetime,
                        age,
                        agent.state(),
                        agent.infection.as_ref().map_or(0, |r| r.sojourn_years),
                        &mut rng_out,
                    )
                    .rebase_discounted(horizon_df);
                    agent.acc.sum(&remaining)
                } else {
                    agent.acc
                }
            }
        };
        population_total.add(&final_outcome);
        if flags[idx].patient {
            patient_count += 1;
            patient_total.add(&final_outcome);
        }
    }

    let (antibody, rna, idu) = prevalences(&pop);
    let infected_present = flags.iter().filter(|f| f.infected_present).count() as u64;
    let report = ReplicationReport {
        replication,
        antibody_prevalence: antibody,
        rna_prevalence: rna,
        idu_prevalence: idu,
        cal_antibody_prevalence: cal_prev.0,
        cal_rna_prevalence: cal_prev.1,
        cal_idu_prevalence: cal_prev.2,
        effective_uptake: crate::treatment::effective_uptake(treated_count, infected_present),
        treated: treated_count,
        treatment_shortfall: shortfall,
        infected_present,
        medical_infections,
        social_infections,
        cal_medical_infections: cal_medical,
        cal_social_infections: cal_social,
        scope_count,
        patient_count,
        population_total,
        patient_total,
        levels: summarize_levels(
            &population_total,
            scope_count as usize,
            &patient_total,
            patient_count as usize,
        ),
        wall_clock_secs: t0.elapsed().as_secs_f64(),
    };
    Ok((report, pop))
}

/// One CSV row per agent at the end of a replication.
pub fn write_agent_csv<W: std::io::Write>(
    pop: &Population,
    final_day: u32,
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "id", "age", "alive", "state", "employed", "idu", "ever_infected", "treated", "cured",
        "ly", "qaly", "cost", "d_ly", "d_qaly", "d_cost",
    ])?;
    for a in &pop.agents {
        w.write_record([
            a.id.to_string(),
            format!("{:.2}", a.age_years(final_day)),
            a.alive.to_string(),
            a.state().label().to_string(),
            a.employed.to_string(),
            a.is_idu().to_string(),
            a.ever_infected.to_string(),
            a.treated.to_string(),
            a.cured.to_string(),
            format!("{:.4}", a.acc.ly),
            format!("{:.4}", a.acc.qaly),
            format!("{:.2}", a.acc.cost),
            format!("{:.4}", a.acc.d_ly),
            format!("{:.4}", a.acc.d_qaly),
            format!("{:.2}", a.acc.d_cost),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// IA continuation past the model horizon: same annual machinery as the
/// repository build, but without re-charging the current state's entry
/// cost and keeping the in-state sojourn clock.
fn simulate_remaining_continuation(
    models: &LifetimeModels,
    age: f64,
    state: HcvState,
    sojourn_years: u32,
    rng: &mut impl Rng,
) -> OutcomeTriple {
    let _ = sojourn_years;
    let mut sample = simulate_remaining(models, age, state, rng);
    // remove the double-charged entry cost for the state the agent is
    // already in
    let entry = models.costs.one_time(match state {
        HcvState::CuredNonCirrhotic => HcvState::Susceptible,
        s => s,
    });
    sample.cost -= entry;
    sample.d_cost -= entry;
    sample
}

#[allow(clippy::too_many_arguments)]
fn infect(
    pop: &mut Population,
    flags: &mut [AgentFlags],
    idx: usize,
    day: u32,
    in_intervention: bool,
    u: f64,
    year_new_infections: &mut f64,
    rng_env: &mut impl Rng,
    rng_treat: &mut impl Rng,
) {
    let genotype = assign_genotype(rng_env);
    pop.agents[idx].start_infection(day, genotype);
    if in_intervention {
        flags[idx].infected_present = true;
        *year_new_infections += 1.0;
        if rng_treat.gen_bool(u) {
            flags[idx].assigned = true;
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn treat_one(
    pop: &mut Population,
    idx: usize,
    day: u32,
    df: f64,
    ref_year: u32,
    cfg: &SimConfig,
    models: &Models,
    oa: &OaTracker,
    rng_treat: &mut impl Rng,
    rng_out: &mut impl Rng,
) -> Result<()> {
    let agent = &mut pop.agents[idx];
    charge(agent, cfg.daa_course_cost, df);
    let outcome = apply_treatment(agent, day, &models.svr, rng_treat)?;
    if outcome == crate::treatment::TreatOutcome::Cured {
        let age = agent.age_years(day);
        let state = agent.state();
        oa.allocate(agent, age, state, ref_year, rng_out)?;
    }
    Ok(())
}

fn charge(agent: &mut crate::population::Agent, amount: f64, df: f64) {
    agent.acc.cost += amount;
    agent.acc.d_cost += amount * df;
}

fn prevalences(pop: &Population) -> (f64, f64, f64) {
    let mut living = 0u64;
    let (mut antibody, mut rna, mut idu) = (0u64, 0u64, 0u64);
    for a in &pop.agents {
        if !a.alive {
            continue;
        }
        living += 1;
        antibody += u64::from(a.ever_infected);
        rna += u64::from(a.rna_positive());
        idu += u64::from(a.is_idu());
    }
    if living == 0 {
        return (0.0, 0.0, 0.0);
    }
    let n = living as f64;
    (antibody as f64 / n, rna as f64 / n, idu as f64 / n)
}

/// Mean and standard deviation per outcome component across replications.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct TripleStats {
    pub mean: OutcomeTriple,
    pub sd: OutcomeTriple,
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn triple_stats(triples: &[OutcomeTriple]) -> TripleStats {
    let get = |f: fn(&OutcomeTriple) -> f64| {
        let vals: Vec<f64> = triples.iter().map(f).collect();
        mean_sd(&vals)
    };
    let (ly, ly_sd) = get(|t| t.ly);
    let (qaly, qaly_sd) = get(|t| t.qaly);
    let (cost, cost_sd) = get(|t| t.cost);
    let (d_ly, d_ly_sd) = get(|t| t.d_ly);
    let (d_qaly, d_qaly_sd) = get(|t| t.d_qaly);
    let (d_cost, d_cost_sd) = get(|t| t.d_cost);
    TripleStats {
        mean: OutcomeTriple { ly, qaly, cost, d_ly, d_qaly, d_cost },
        sd: OutcomeTriple {
            ly: ly_sd,
            qaly: qaly_sd,
            cost: cost_sd,
            d_ly: d_ly_sd,
            d_qaly: d_qaly_sd,
            d_cost: d_cost_sd,
        },
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellResult {
    pub model: TreatmentModel,
    pub uptake: f64,
    pub replications: Vec<ReplicationReport>,
    pub antibody: (f64, f64),
    pub rna: (f64, f64),
    pub idu: (f64, f64),
    pub effective_uptake: (f64, f64),
    pub medical_share: (f64, f64),
    pub population: TripleStats,
    pub patient: TripleStats,
    /// NMB against the scenario comparator, on population-level
    /// discounted QALYs and costs.
    pub nmb: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub comparator_model: TreatmentModel,
    pub comparator_uptake: f64,
    pub cells: Vec<CellResult>,
}

impl ScenarioReport {
    pub fn cell(&self, model: TreatmentModel, uptake: f64) -> Option<&CellResult> {
        self.cells
            .iter()
            .find(|c| c.model == model && (c.uptake - uptake).abs() < 1e-12)
    }
}

fn summarize_cell(
    model: TreatmentModel,
    uptake: f64,
    replications: Vec<ReplicationReport>,
) -> CellResult {
    let collect = |f: &dyn Fn(&ReplicationReport) -> f64| {
        let vals: Vec<f64> = replications.iter().map(f).collect();
        mean_sd(&vals)
    };
    let pop: Vec<OutcomeTriple> = replications
        .iter()
        .filter_map(|r| r.levels.population)
        .collect();
    let pat: Vec<OutcomeTriple> = replications
        .iter()
        .filter_map(|r| r.levels.patient)
        .collect();
    CellResult {
        model,
        uptake,
        antibody: collect(&|r| r.antibody_prevalence),
        rna: collect(&|r| r.rna_prevalence),
        idu: collect(&|r| r.idu_prevalence),
        effective_uptake: collect(&|r| r.effective_uptake.unwrap_or(0.0)),
        medical_share: collect(&|r| r.medical_share().unwrap_or(0.0)),
        population: triple_stats(&pop),
        patient: triple_stats(&pat),
        nmb: None,
        replications,
    }
}

/// Run the full scenario grid: every treatment model at every uptake, with
/// `replication_count` replications per cell, and NMBs against the
/// comparator cell (by default the annual model at 10% of the same
/// transmission mode).
pub fn run_scenario(
    cfg: &SimConfig,
    models: &Models,
    repo: Option<&OutcomesRepository>,
    uptakes: &[f64],
    treatment_models: &[TreatmentModel],
) -> Result<ScenarioReport> {
    if uptakes.is_empty() || treatment_models.is_empty() {
        return Err(Error::Analysis("empty scenario grid".into()));
    }
    let comparator = (TreatmentModel::Annual, 0.10);
    let grid: Vec<(TreatmentModel, f64)> = treatment_models
        .iter()
        .flat_map(|&m| uptakes.iter().map(move |&x| (m, x)))
        .collect();

    let run_cell = |&(model, uptake): &(TreatmentModel, f64)| -> Result<CellResult> {
        let cell_cfg = SimConfig {
            treatment_model: model,
            target_uptake: uptake,
            ..cfg.clone()
        };
        let reps = run_replications(&cell_cfg, models, repo)?;
        Ok(summarize_cell(model, uptake, reps))
    };
    // the inner replication loop is already parallel; cells run in sequence
    let mut cells: Vec<CellResult> = grid
        .iter()
        .map(run_cell)
        .collect::<Result<Vec<_>>>()?;

    let comparator_cell = cells
        .iter()
        .find(|c| c.model == comparator.0 && (c.uptake - comparator.1).abs() < 1e-12)
        .cloned();
    let comparator_cell = comparator_cell.ok_or_else(|| {
        Error::Analysis(format!(
            "comparator cell ({}, {:.0}%) absent from the scenario grid",
            comparator.0.label(),
            comparator.1 * 100.0
        ))
    })?;
    let (q_s, c_s) = (
        comparator_cell.population.mean.d_qaly,
        comparator_cell.population.mean.d_cost,
    );
    for cell in &mut cells {
        cell.nmb = Some(nmb(
            cell.population.mean.d_qaly,
            q_s,
            cell.population.mean.d_cost,
            c_s,
            cfg.wtp_per_qaly,
        ));
    }
    Ok(ScenarioReport {
        comparator_model: comparator.0,
        comparator_uptake: comparator.1,
        cells,
    })
}

/// All replications of one configuration, parallel when the `parallel`
/// feature is enabled. Seeds are derived per replication index, so results
/// are identical in both modes.
pub fn run_replications(
    cfg: &SimConfig,
    models: &Models,
    repo: Option<&OutcomesRepository>,
) -> Result<Vec<ReplicationReport>> {
    let indices: Vec<u32> = (0..cfg.replication_count).collect();
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        indices
            .par_iter()
            .map(|&i| run_replication(cfg, models, repo, i))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        indices
            .iter()
            .map(|&i| run_replication(cfg, models, repo, i))
            .collect()
    }
}

/// One CSV row per replication per grid cell.
pub fn write_replication_csv<W: std::io::Write>(report: &ScenarioReport, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "model",
        "uptake",
        "replication",
        "antibody_prevalence",
        "rna_prevalence",
        "idu_prevalence",
        "effective_uptake",
        "treated",
        "treatment_shortfall",
        "infected_present",
        "medical_infections",
        "social_infections",
        "scope_count",
        "patient_count",
        "pop_ly",
        "pop_qaly",
        "pop_cost",
        "pop_d_ly",
        "pop_d_qaly",
        "pop_d_cost",
        "pat_ly",
        "pat_qaly",
        "pat_cost",
        "pat_d_ly",
        "pat_d_qaly",
        "pat_d_cost",
        "wall_clock_secs",
    ])?;
    for cell in &report.cells {
        for r in &cell.replications {
            let pop = r.levels.population.unwrap_or_default();
            let pat = r.levels.patient.unwrap_or_default();
            w.write_record([
                cell.model.label().to_string(),
                format!("{}", cell.uptake),
                r.replication.to_string(),
                format!("{:.6}", r.antibody_prevalence),
                format!("{:.6}", r.rna_prevalence),
                format!("{:.6}", r.idu_prevalence),
                format!("{:.6}", r.effective_uptake.unwrap_or(0.0)),
                r.treated.to_string(),
                r.treatment_shortfall.to_string(),
                r.infected_present.to_string(),
                r.medical_infections.to_string(),
                r.social_infections.to_string(),
                r.scope_count.to_string(),
                r.patient_count.to_string(),
                format!("{:.4}", pop.ly),
                format!("{:.4}", pop.qaly),
                format!("{:.2}", pop.cost),
                format!("{:.4}", pop.d_ly),
                format!("{:.4}", pop.d_qaly),
                format!("{:.2}", pop.d_cost),
                format!("{:.4}", pat.ly),
                format!("{:.4}", pat.qaly),
                format!("{:.2}", pat.cost),
                format!("{:.4}", pat.d_ly),
                format!("{:.4}", pat.d_qaly),
                format!("{:.2}", pat.d_cost),
                format!("{:.2}", r.wall_clock_secs),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Mean/SD summary with NMBs, one row per grid cell.
pub fn write_summary_csv<W: std::io::Write>(report: &ScenarioReport, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "model",
        "uptake",
        "antibody_mean",
        "antibody_sd",
        "rna_mean",
        "rna_sd",
        "idu_mean",
        "idu_sd",
        "effective_uptake_mean",
        "effective_uptake_sd",
        "medical_share_mean",
        "medical_share_sd",
        "pop_d_qaly_mean",
        "pop_d_qaly_sd",
        "pop_d_cost_mean",
        "pop_d_cost_sd",
        "pat_d_qaly_mean",
        "pat_d_qaly_sd",
        "pat_d_cost_mean",
        "pat_d_cost_sd",
        "nmb",
    ])?;
    for cell in &report.cells {
        w.write_record([
            cell.model.label().to_string(),
            format!("{}", cell.uptake),
            format!("{:.6}", cell.antibody.0),
            format!("{:.6}", cell.antibody.1),
            format!("{:.6}", cell.rna.0),
            format!("{:.6}", cell.rna.1),
            format!("{:.6}", cell.idu.0),
            format!("{:.6}", cell.idu.1),
            format!("{:.6}", cell.effective_uptake.0),
            format!("{:.6}", cell.effective_uptake.1),
            format!("{:.6}", cell.medical_share.0),
            format!("{:.6}", cell.medical_share.1),
            format!("{:.4}", cell.population.mean.d_qaly),
            format!("{:.4}", cell.population.sd.d_qaly),
            format!("{:.2}", cell.population.mean.d_cost),
            format!("{:.2}", cell.population.sd.d_cost),
            format!("{:.4}", cell.patient.mean.d_qaly),
            format!("{:.4}", cell.patient.sd.d_qaly),
            format!("{:.2}", cell.patient.mean.d_cost),
            format!("{:.2}", cell.patient.sd.d_cost),
            cell.nmb.map_or("".to_string(), |v| format!("{v:.2}")),
        ])?;
    }
    w.flush()?;
    Ok(())
}
