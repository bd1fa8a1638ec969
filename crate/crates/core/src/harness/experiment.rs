//! End-to-end experiment execution and file emission.

use std::fs;
use std::path::Path;

use crate::aggregation::AggregatorKind;
use crate::error::Result;
use crate::harness::config::ExperimentConfig;
use crate::harness::metrics::{
    auc_ra, write_health_csv, write_metrics_csv, RoundMetrics, Summary,
};
use crate::harness::round::{run_round, SimState};

/// Ablation variant names accepted by the harness, in canonical order.
pub const ABLATION_NAMES: [&str; 4] = ["full", "no-fdci", "no-naat", "no-dhat"];

/// Result of one experiment run.
pub struct RunResult {
    pub config: ExperimentConfig,
    pub rounds: Vec<RoundMetrics>,
    pub summary: Summary,
}

/// Runs the configured experiment; when `out_dir` is given, writes
/// `metrics.csv`, `health.csv`, `summary.json`, the resolved config
/// snapshot, and the final model checkpoint into it.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<RunResult> {
    cfg.validate()?;
    let mut state = SimState::new(cfg.clone())?;
    let mut rounds = Vec::with_capacity(cfg.rounds);
    for round in 1..=cfg.rounds {
        rounds.push(run_round(&mut state, round)?);
    }

    let auc = auc_ra(&state.global, &state.test, &cfg.eval_enls, cfg.seed)?;
    let last = rounds.last().expect("at least one round");
    let n = rounds.len() as f64;
    let summary = Summary {
        aggregator: cfg.aggregator.to_string(),
        seed: cfg.seed,
        rounds: cfg.rounds,
        final_acc: last.acc,
        final_asr: last.asr,
        final_macro_f1: last.macro_f1,
        auc_ra: auc,
        mean_client_time_s: rounds.iter().map(|r| r.client_time_s).sum::<f64>() / n,
        mean_server_time_s: rounds.iter().map(|r| r.server_time_s).sum::<f64>() / n,
        uniform_fallback_rounds: rounds.iter().filter(|r| r.fallback_uniform).count(),
    };

    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        let mut metrics_file = fs::File::create(dir.join("metrics.csv"))?;
        write_metrics_csv(&rounds, &mut metrics_file)?;
        let mut health_file = fs::File::create(dir.join("health.csv"))?;
        write_health_csv(&rounds, &mut health_file)?;
        let json = serde_json::to_string_pretty(&summary)
            .map_err(|e| crate::error::SimError::Parse(e.to_string()))?;
        fs::write(dir.join("summary.json"), json)?;
        fs::write(dir.join("config_resolved.toml"), cfg.to_toml_string()?)?;
        let mut checkpoint = fs::File::create(dir.join("model_final.bin"))?;
        state.global.save(&mut checkpoint)?;
    }

    Ok(RunResult {
        config: cfg.clone(),
        rounds,
        summary,
    })
}

/// The four ablation configurations: the full defense and each mechanism
/// removed in isolation. All variants force the health-weighted aggregator.
pub fn ablation_variants(base: &ExperimentConfig) -> Vec<(&'static str, ExperimentConfig)> {
    ABLATION_NAMES
        .iter()
        .map(|&name| {
            let mut cfg = base.clone();
            cfg.aggregator = AggregatorKind::Nadafd;
            cfg.defense.ablate_fdci = name == "no-fdci";
            cfg.defense.ablate_naat = name == "no-naat";
            cfg.defense.ablate_dhat = name == "no-dhat";
            (name, cfg)
        })
        .collect()
}
