use std::path::Path;
use std::time::Instant;

use hfl_core::phases::{evaluate_scopes, run_phases, RunOutcome, ScopedMetrics, Simulation};
use hfl_core::{Executor, ScenarioConfig};

use crate::checkpoint::Checkpoint;
use crate::error::{Result, SimError};
use crate::output::{self, CHECKPOINT_FILE, HISTORY_FILE, METRICS_FILE, REPORTS_FILE, SUMMARY_FILE};
use crate::scenario::digest;

/// Runs all phases and writes every artifact into `out`.
pub fn run_to_dir<E: Executor>(config: ScenarioConfig, out: &Path, exec: &E) -> Result<RunOutcome> {
    let started = Instant::now();
    let digest = digest(&config);
    let outcome = run_phases(config, exec)?;
    let wall = started.elapsed().as_secs_f64();

    output::create_dir(out)?;
    output::write_file(&out.join(METRICS_FILE), output::metrics_csv(&outcome.metrics))?;
    output::write_file(&out.join(HISTORY_FILE), output::history_jsonl(&outcome.history))?;
    output::write_file(&out.join(REPORTS_FILE), output::reports_jsonl(&outcome.reports))?;
    Checkpoint {
        rounds: outcome.history.len(),
        model: outcome.model.clone(),
        norm_stats: outcome.norm_stats.clone(),
    }
    .save(&out.join(CHECKPOINT_FILE))?;
    output::write_file(&out.join(SUMMARY_FILE), output::summary_json(&outcome, &digest, wall))?;
    Ok(outcome)
}

/// Scores a saved model on the scenario's held-out split using the
/// normalization stored with it.
pub fn evaluate_checkpoint(ck: &Checkpoint, config: ScenarioConfig, path: &Path) -> Result<Vec<ScopedMetrics>> {
    let mismatch = |message: String| SimError::Checkpoint {
        path: path.to_path_buf(),
        message,
    };
    if ck.model.dims() != config.model_dims() {
        return Err(mismatch(format!(
            "model dimensions {:?} do not match scenario {:?}",
            ck.model.dims(),
            config.model_dims()
        )));
    }
    let threshold = config.evaluation.threshold;
    let analytic = Simulation::new(config)?.functional()?.analytic()?;
    for p in analytic.topology().placements() {
        let stats = ck
            .norm_stats
            .get(p.vehicle)
            .ok_or_else(|| mismatch(format!("no normalization stored for `{}`", p.vehicle)))?;
        if stats.width() != ck.model.dims().input_size {
            return Err(mismatch(format!("normalization width for `{}` is {}", p.vehicle, stats.width())));
        }
    }
    let clients = analytic.datasets(Some(&ck.norm_stats))?;
    Ok(evaluate_scopes(&ck.model, analytic.topology(), &clients, threshold, ck.rounds)?)
}

/// Writes each vehicle's raw telemetry to `<out>/telemetry/<vehicle>.csv`.
pub fn export_telemetry(config: ScenarioConfig, out: &Path) -> Result<usize> {
    let functional = Simulation::new(config)?.functional()?;
    let dir = out.join("telemetry");
    output::create_dir(&dir)?;
    for (id, vehicle) in &functional.state().vehicles {
        output::write_file(&dir.join(format!("{id}.csv")), output::telemetry_csv(&vehicle.stream))?;
    }
    Ok(functional.state().vehicles.len())
}
