//! Evaluation metrics and metrics-file emission.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::adversary::{embed_trigger, TriggerPattern};
use crate::datasim::SarChip;
use crate::error::Result;
use crate::model::{forward, Batch, ModelParams};
use crate::numerics::{sample_speckle, RngStream, StreamId};

/// Per-client row of the health trajectory table.
#[derive(Debug, Clone)]
pub struct ClientRoundRecord {
    pub client_id: usize,
    pub malicious: bool,
    pub health: f64,
    pub weight: f64,
}

/// Everything recorded about one communication round.
#[derive(Debug, Clone)]
pub struct RoundMetrics {
    pub round: usize,
    pub acc: f64,
    pub asr: f64,
    pub macro_f1: f64,
    pub mask_density: f64,
    pub tau: f64,
    pub xi: f64,
    pub zeta: f64,
    pub client_time_s: f64,
    pub server_time_s: f64,
    pub clients: Vec<ClientRoundRecord>,
    /// True when every client was pruned and uniform weights were used.
    pub fallback_uniform: bool,
}

/// Final run summary written as JSON next to the metrics.
#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub aggregator: String,
    pub seed: u64,
    pub rounds: usize,
    pub final_acc: f64,
    pub final_asr: f64,
    pub final_macro_f1: f64,
    pub auc_ra: f64,
    pub mean_client_time_s: f64,
    pub mean_server_time_s: f64,
    pub uniform_fallback_rounds: usize,
}

/// Argmax with ties broken toward the lowest class index.
fn predict(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, p) in row.iter().enumerate() {
        if *p > row[best] {
            best = k;
        }
    }
    best
}

fn predictions(params: &ModelParams, chips: &[&SarChip]) -> Vec<usize> {
    chips
        .par_chunks(64)
        .flat_map_iter(|chunk| {
            let batch = Batch::new(
                chunk.iter().map(|c| &c.grid).collect(),
                chunk.iter().map(|c| c.label).collect(),
            );
            forward(params, &batch).into_iter().map(|row| predict(&row))
        })
        .collect()
}

/// Macro-averaged F1 from a `classes x classes` confusion matrix indexed
/// `[true][predicted]`; a class with `precision + recall = 0` contributes 0.
pub fn macro_f1_from_confusion(confusion: &[Vec<usize>]) -> f64 {
    let classes = confusion.len();
    let mut total = 0.0;
    for k in 0..classes {
        let tp = confusion[k][k] as f64;
        let predicted: f64 = (0..classes).map(|r| confusion[r][k] as f64).sum();
        let actual: f64 = confusion[k].iter().map(|&v| v as f64).sum();
        let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
        let recall = if actual > 0.0 { tp / actual } else { 0.0 };
        if precision + recall > 0.0 {
            total += 2.0 * precision * recall / (precision + recall);
        }
    }
    total / classes as f64
}

/// Clean accuracy, attack success rate, and macro-F1 on the test set.
///
/// ASR is the fraction of trigger-embedded test chips whose true label is
/// not the target yet are classified as the target.
pub fn evaluate(
    params: &ModelParams,
    test: &[SarChip],
    trigger: &TriggerPattern,
    target_label: usize,
) -> (f64, f64, f64) {
    assert!(!test.is_empty(), "evaluation over empty test set");
    let classes = test.iter().map(|c| c.label).max().unwrap() + 1;
    let clean_refs: Vec<&SarChip> = test.iter().collect();
    let clean_pred = predictions(params, &clean_refs);
    let mut confusion = vec![vec![0usize; classes]; classes];
    let mut correct = 0usize;
    for (chip, &pred) in test.iter().zip(&clean_pred) {
        confusion[chip.label][pred] += 1;
        if pred == chip.label {
            correct += 1;
        }
    }
    let acc = correct as f64 / test.len() as f64;
    let macro_f1 = macro_f1_from_confusion(&confusion);

    let triggered: Vec<SarChip> = test
        .iter()
        .filter(|c| c.label != target_label)
        .map(|c| embed_trigger(c, trigger))
        .collect();
    let asr = if triggered.is_empty() {
        0.0
    } else {
        let refs: Vec<&SarChip> = triggered.iter().collect();
        let hits = predictions(params, &refs)
            .into_iter()
            .filter(|&p| p == target_label)
            .count();
        hits as f64 / triggered.len() as f64
    };
    (acc, asr, macro_f1)
}

/// Normalized trapezoidal area of the robustness-accuracy curve over the ENL
/// grid: each test chip is multiplied by a fresh speckle field at the given
/// ENL before classification. A constant curve of value `a` yields `a`.
pub fn auc_ra(params: &ModelParams, test: &[SarChip], enls: &[f64], seed: u64) -> Result<f64> {
    assert!(enls.len() >= 2, "need at least two ENL values");
    let mut accuracies = Vec::with_capacity(enls.len());
    for (index, &looks) in enls.iter().enumerate() {
        let mut rng = RngStream::new(seed, StreamId::RobustEval { index });
        let perturbed: Vec<SarChip> = test
            .iter()
            .map(|chip| {
                let field = sample_speckle(chip.grid.height(), chip.grid.width(), looks, &mut rng)?;
                let mut grid = chip.grid.hadamard(&field);
                grid.clip(0.0, crate::datasim::I_MAX);
                Ok(SarChip {
                    grid,
                    label: chip.label,
                })
            })
            .collect::<Result<_>>()?;
        let refs: Vec<&SarChip> = perturbed.iter().collect();
        let correct = predictions(params, &refs)
            .into_iter()
            .zip(&perturbed)
            .filter(|(p, c)| *p == c.label)
            .count();
        accuracies.push(correct as f64 / perturbed.len() as f64);
    }
    Ok(trapezoid_mean(&accuracies))
}

/// Trapezoidal area over equally spaced unit indices, divided by `n - 1`.
pub(crate) fn trapezoid_mean(values: &[f64]) -> f64 {
    let n = values.len();
    let area: f64 = values
        .windows(2)
        .map(|pair| 0.5 * (pair[0] + pair[1]))
        .sum();
    area / (n - 1) as f64
}

/// Writes the round metrics table:
/// `round,acc,asr,macro_f1,mask_density,tau,xi,zeta,client_time_s,server_time_s`.
pub fn write_metrics_csv<W: Write>(rounds: &[RoundMetrics], mut out: W) -> Result<()> {
    writeln!(
        out,
        "round,acc,asr,macro_f1,mask_density,tau,xi,zeta,client_time_s,server_time_s"
    )?;
    for m in rounds {
        writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            m.round,
            m.acc,
            m.asr,
            m.macro_f1,
            m.mask_density,
            m.tau,
            m.xi,
            m.zeta,
            m.client_time_s,
            m.server_time_s
        )?;
    }
    Ok(())
}

/// Writes the health trajectory table:
/// `round,client_id,malicious,health,weight` (one row per client per round).
pub fn write_health_csv<W: Write>(rounds: &[RoundMetrics], mut out: W) -> Result<()> {
    writeln!(out, "round,client_id,malicious,health,weight")?;
    for m in rounds {
        for c in &m.clients {
            writeln!(
                out,
                "{},{},{},{:.6},{:.6}",
                m.round,
                c.client_id,
                u8::from(c.malicious),
                c.health,
                c.weight
            )?;
        }
    }
    Ok(())
}
