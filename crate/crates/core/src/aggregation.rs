//! Server-side model combination rules: FedAvg, Krum, coordinate-wise
//! Median, and health-weighted aggregation.
//!
//! All rules reduce in ascending client-id order so results are
//! bit-reproducible across runs and worker counts.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// One selected client's contribution to the round's aggregation.
#[derive(Debug, Clone)]
pub struct Contribution<'a> {
    pub client_id: usize,
    /// Full local parameter vector after local training.
    pub params: &'a [f64],
    pub shard_size: usize,
    /// Health weight; only the health-weighted rule reads it.
    pub weight: f64,
}

/// Aggregation rule selector used in experiment configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregatorKind {
    Fedavg,
    Krum,
    Median,
    Nadafd,
}

impl std::fmt::Display for AggregatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            AggregatorKind::Fedavg => "fedavg",
            AggregatorKind::Krum => "krum",
            AggregatorKind::Median => "median",
            AggregatorKind::Nadafd => "nadafd",
        };
        write!(f, "{name}")
    }
}

fn sorted_by_id<'a, 'b>(inputs: &'b [Contribution<'a>]) -> Vec<&'b Contribution<'a>> {
    assert!(!inputs.is_empty(), "aggregation over empty input");
    let dim = inputs[0].params.len();
    assert!(
        inputs.iter().all(|c| c.params.len() == dim),
        "parameter length mismatch across clients"
    );
    let mut refs: Vec<&Contribution> = inputs.iter().collect();
    refs.sort_by_key(|c| c.client_id);
    for pair in refs.windows(2) {
        assert_ne!(pair[0].client_id, pair[1].client_id, "duplicate client id");
    }
    refs
}

fn weighted_mean(inputs: &[&Contribution], weights: &[f64]) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    let dim = inputs[0].params.len();
    let mut out = vec![0.0; dim];
    for (c, &w) in inputs.iter().zip(weights) {
        let scale = w / total;
        for (o, p) in out.iter_mut().zip(c.params) {
            *o += scale * p;
        }
    }
    out
}

/// Weighted mean with data-proportion weights `|D_i| / sum |D_j|`.
pub fn fedavg(inputs: &[Contribution]) -> Vec<f64> {
    let refs = sorted_by_id(inputs);
    let weights: Vec<f64> = refs.iter().map(|c| c.shard_size as f64).collect();
    assert!(weights.iter().sum::<f64>() > 0.0, "all shard sizes are zero");
    weighted_mean(&refs, &weights)
}

/// Health-weighted mean `sum (w_i / sum w_j) * theta_i`. The all-zero weight
/// case is a contract violation; the caller's fallback handles it upstream.
pub fn weighted_aggregate(inputs: &[Contribution]) -> Vec<f64> {
    let refs = sorted_by_id(inputs);
    let weights: Vec<f64> = refs.iter().map(|c| c.weight).collect();
    assert!(weights.iter().all(|w| *w >= 0.0), "negative health weight");
    assert!(
        weights.iter().sum::<f64>() > 0.0,
        "weighted_aggregate requires a positive total weight"
    );
    weighted_mean(&refs, &weights)
}

/// Krum: returns the candidate whose summed squared distance to its
/// `n - f - 2` nearest peers is minimal (ties broken by smallest client id).
/// Requires `n >= f + 3`.
pub fn krum(inputs: &[Contribution], assumed_byzantine: usize) -> Result<Vec<f64>> {
    let refs = sorted_by_id(inputs);
    let n = refs.len();
    if n < assumed_byzantine + 3 {
        return Err(SimError::Config(format!(
            "krum needs at least f + 3 = {} clients, got {n}",
            assumed_byzantine + 3
        )));
    }
    let neighbors = n - assumed_byzantine - 2;
    let mut best: Option<(f64, usize, usize)> = None; // (score, client_id, index)
    for (i, a) in refs.iter().enumerate() {
        let mut dists: Vec<f64> = refs
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, b)| {
                a.params
                    .iter()
                    .zip(b.params)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
            })
            .collect();
        dists.sort_by(|x, y| x.partial_cmp(y).expect("finite distances"));
        let score: f64 = dists[..neighbors].iter().sum();
        let candidate = (score, a.client_id, i);
        best = Some(match best {
            None => candidate,
            Some(cur) => {
                if score < cur.0 || (score == cur.0 && a.client_id < cur.1) {
                    candidate
                } else {
                    cur
                }
            }
        });
    }
    let (_, _, idx) = best.expect("nonempty input");
    Ok(refs[idx].params.to_vec())
}

/// Coordinate-wise median; even counts average the two middle values.
pub fn coordinate_median(inputs: &[Contribution]) -> Vec<f64> {
    let refs = sorted_by_id(inputs);
    let dim = refs[0].params.len();
    let mut column = vec![0.0; refs.len()];
    (0..dim)
        .map(|k| {
            for (slot, c) in column.iter_mut().zip(&refs) {
                *slot = c.params[k];
            }
            column.sort_by(|a, b| a.partial_cmp(b).expect("finite parameters"));
            let mid = column.len() / 2;
            if column.len() % 2 == 0 {
                0.5 * (column[mid - 1] + column[mid])
            } else {
                column[mid]
            }
        })
        .collect()
}
