//! Command-line interface: calibrate, repository, run and analyze
//! subcommands over the simulation library.

use std::fs::File;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::calibration::{
    calibrate, validate_attribution, write_log_csv, winning_params_toml, CalibrationOptions,
};
use crate::config::{Estimator, SimConfig, TreatmentModel};
use crate::engine::{
    run_replication_full, run_scenario, write_agent_csv, write_replication_csv, write_summary_csv,
    Models,
};
use crate::error::{Error, Result};
use crate::outcomes::analysis::{critical_uptake, incremental_nmb_curve, UptakePoint};
use crate::outcomes::repository::{OutcomesRepository, RepositoryBuildConfig};

#[derive(Parser, Debug)]
#[command(
    name = "hcvsim",
    about = "Agent-based hepatitis-C transmission, treatment and cost-effectiveness simulator"
)]
pub struct Cli {
    /// TOML config file; omitted keys fall back to defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master RNG seed override.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Search transmission parameters against the prevalence and
    /// attribution targets.
    Calibrate {
        /// Replications averaged per candidate.
        #[arg(long)]
        replications: Option<u32>,
        /// Grid points per free parameter in the coarse stage.
        #[arg(long)]
        coarse_points: Option<usize>,
        /// Coordinate-refinement rounds.
        #[arg(long)]
        refine_rounds: Option<usize>,
        /// Directory for the evaluation log and winning parameters.
        #[arg(long, default_value = "calibration")]
        out_dir: PathBuf,
    },
    /// Build the lifetime-outcomes repository and save it to CSV.
    Repository {
        #[arg(long, default_value = "repository.csv")]
        out: PathBuf,
        /// Synthetic agents per start state.
        #[arg(long)]
        cohort_size: Option<u64>,
        /// Minimum samples per (age band, state) cell.
        #[arg(long)]
        per_cell_floor: Option<usize>,
        #[arg(long)]
        repo_seed: Option<u64>,
    },
    /// Run the scenario grid and write per-replication and summary CSVs.
    Run {
        /// Repository CSV; required for the outcomes-allocation estimator.
        #[arg(long)]
        repository: Option<PathBuf>,
        /// Treatment uptake levels, repeatable (e.g. --uptake 0.1 --uptake 0.3).
        #[arg(long = "uptake", default_values_t = [0.10, 0.30, 0.50, 0.70, 0.90, 0.95])]
        uptakes: Vec<f64>,
        /// Treatment models, repeatable.
        #[arg(long = "model", default_values_t = [TreatmentModel::Annual])]
        models: Vec<TreatmentModel>,
        /// Lifetime-outcome estimator: ia or oa.
        #[arg(long)]
        estimator: Option<Estimator>,
        /// Replications per grid cell.
        #[arg(long)]
        replications: Option<u32>,
        /// Stop transmission at the intervention start (the
        /// without-transmission counterfactual).
        #[arg(long)]
        without_transmission: bool,
        #[arg(long, default_value = "results")]
        out_dir: PathBuf,
        /// Also dump the final agent table of replication 0 of the first
        /// grid cell.
        #[arg(long)]
        agent_table: Option<PathBuf>,
    },
    /// Net monetary benefit curve and critical uptake from a run summary.
    Analyze {
        /// summary.csv produced by the run subcommand.
        #[arg(long)]
        summary: PathBuf,
        /// Required incremental net benefit per extra percentage point of
        /// uptake (INR).
        #[arg(long, default_value_t = 0.0)]
        threshold: f64,
        /// Treatment model whose uptake column to analyze.
        #[arg(long, default_value_t = TreatmentModel::Annual)]
        model: TreatmentModel,
    },
}

fn load_config(cli: &Cli) -> Result<SimConfig> {
    let mut cfg = match &cli.config {
        Some(path) => SimConfig::load(path)?,
        None => SimConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.rng_seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn main_with(cli: Cli) -> Result<()> {
    #[cfg(feature = "parallel")]
    if let Ok(threads) = std::env::var("HCVSIM_THREADS") {
        let n: usize = threads
            .parse()
            .map_err(|_| Error::Config(format!("HCVSIM_THREADS not a number: {threads}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let cfg = load_config(&cli)?;
    let models = Models::from_config(&cfg)?;
    match cli.command {
        Command::Calibrate {
            replications,
            coarse_points,
            refine_rounds,
            out_dir,
        } => {
            let mut opts = CalibrationOptions::default();
            if let Some(r) = replications {
                opts.replications = r;
            }
            if let Some(p) = coarse_points {
                opts.coarse_points = p;
            }
            if let Some(r) = refine_rounds {
                opts.refine_rounds = r;
            }
            let result = calibrate(&cfg, &models, &opts)?;
            std::fs::create_dir_all(&out_dir)?;
            write_log_csv(&result, File::create(out_dir.join("calibration_log.csv"))?)?;
            std::fs::write(
                out_dir.join("calibrated_params.toml"),
                winning_params_toml(&cfg, &result)?,
            )?;
            println!(
                "calibration {}: score {:.4} (pass < {:.1}), antibody {:.4} rna {:.4} idu {:.5} medical {:.4}",
                if result.passed { "PASSED" } else { "FAILED" },
                result.score,
                crate::calibration::DEVIATION_PASS,
                result.observation.antibody_prevalence,
                result.observation.rna_prevalence,
                result.observation.idu_prevalence,
                result.observation.medical_share,
            );
            let run_cfg = SimConfig {
                replication_count: opts.replications.max(2),
                intervention_years: 1,
                target_uptake: 0.0,
                estimator: Estimator::Ia,
                ..result.best.apply(&cfg)?
            };
            let reports = crate::engine::run_replications(&run_cfg, &models, None)?;
            let shares: Vec<f64> = reports
                .iter()
                .filter_map(|r| r.cal_medical_share())
                .collect();
            let test = validate_attribution(&shares, opts.targets.medical_share, 0.05)?;
            println!(
                "medical attribution: mean {:.4}, t {:.3}, p {:.4} ({})",
                test.mean,
                test.t_statistic,
                test.p_value,
                if test.compatible { "compatible with target" } else { "differs from target" },
            );
            Ok(())
        }
        Command::Repository {
            out,
            cohort_size,
            per_cell_floor,
            repo_seed,
        } => {
            let mut build = RepositoryBuildConfig {
                discount_rate: cfg.discount_rate,
                ..RepositoryBuildConfig::default()
            };
            if let Some(n) = cohort_size {
                build.cohort_size = n;
            }
            if let Some(f) = per_cell_floor {
                build.per_cell_floor = f;
            }
            if let Some(s) = repo_seed {
                build.seed = s;
            }
            let repo = OutcomesRepository::build(
                &build,
                &models.transition,
                &models.mortality,
                &models.costs,
                &models.utilities,
            )?;
            repo.save_csv(&out)?;
            println!("repository written to {}", out.display());
            Ok(())
        }
        Command::Run {
            repository,
            uptakes,
            models: treatment_models,
            estimator,
            replications,
            without_transmission,
            out_dir,
            agent_table,
        } => {
            let mut run_cfg = cfg.clone();
            if let Some(e) = estimator {
                run_cfg.estimator = e;
            }
            if let Some(r) = replications {
                run_cfg.replication_count = r;
            }
            if without_transmission {
                run_cfg.transmission_enabled_in_intervention = false;
            }
            let repo = match &repository {
                Some(path) => Some(OutcomesRepository::load_csv(path)?),
                None => None,
            };
            if run_cfg.estimator == Estimator::Oa && repo.is_none() {
                return Err(Error::Config(
                    "the outcomes-allocation estimator needs --repository".into(),
                ));
            }
            let report = run_scenario(
                &run_cfg,
                &models,
                repo.as_ref(),
                &uptakes,
                &treatment_models,
            )?;
            std::fs::create_dir_all(&out_dir)?;
            write_replication_csv(&report, File::create(out_dir.join("replications.csv"))?)?;
            write_summary_csv(&report, File::create(out_dir.join("summary.csv"))?)?;
            if let Some(path) = agent_table {
                let cell_cfg = SimConfig {
                    treatment_model: treatment_models[0],
                    target_uptake: uptakes[0],
                    ..run_cfg.clone()
                };
                let (_, pop) = run_replication_full(&cell_cfg, &models, repo.as_ref(), 0)?;
                write_agent_csv(&pop, cell_cfg.total_days(), File::create(&path)?)?;
            }
            for cell in &report.cells {
                println!(
                    "{} uptake {:>4.0}%: rna {:.4} nmb {}",
                    cell.model.label(),
                    cell.uptake * 100.0,
                    cell.rna.0,
                    cell.nmb.map_or("-".into(), |v| format!("{v:.0}")),
                );
            }
            println!("results written to {}", out_dir.display());
            Ok(())
        }
        Command::Analyze {
            summary,
            threshold,
            model,
        } => {
            let points = read_uptake_points(&summary, model, cfg.wtp_per_qaly)?;
            let curve = incremental_nmb_curve(&points, cfg.wtp_per_qaly)?;
            for (uptake, inc) in &curve {
                println!("uptake {:>4.0}%: incremental nmb {:.0}", uptake * 100.0, inc);
            }
            match critical_uptake(&curve, threshold) {
                Some(u) => println!("critical uptake at threshold {threshold}: {:.0}%", u * 100.0),
                None => println!("no uptake level clears threshold {threshold}"),
            }
            Ok(())
        }
    }
}

/// Per-patient QALY and cost gains of each uptake level over the lowest
/// uptake row of the chosen model.
fn read_uptake_points(path: &Path, model: TreatmentModel, _wtp: f64) -> Result<Vec<UptakePoint>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Analysis(format!("summary column missing: {name}")))
    };
    let (c_model, c_uptake) = (col("model")?, col("uptake")?);
    let (c_q, c_c) = (col("pat_d_qaly_mean")?, col("pat_d_cost_mean")?);
    let mut rows: Vec<(f64, f64, f64)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.get(c_model) != Some(model.label()) {
            continue;
        }
        let parse = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Analysis("unparsable summary cell".into()))
        };
        rows.push((parse(c_uptake)?, parse(c_q)?, parse(c_c)?));
    }
    if rows.len() < 2 {
        return Err(Error::Analysis(format!(
            "need at least two uptake rows for model {}",
            model.label()
        )));
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    let base = rows[0];
    Ok(rows
        .iter()
        .map(|&(uptake, q, c)| UptakePoint {
            uptake,
            d_qaly: q - base.1,
            d_cost: c - base.2,
        })
        .collect())
}
