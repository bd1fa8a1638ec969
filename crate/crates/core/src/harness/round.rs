//! The federated round loop.
//!
//! Each round: broadcast the global model (and, from round 2, the server's
//! adversarial samples), sample clients from a round-keyed stream, let
//! malicious clients poison per the attack schedule, train every selected
//! client under the composite loss, then on the server run the spectral
//! inversion, generate the next round's adversarial samples, score client
//! health, aggregate with the configured rule, and adapt the defense
//! parameters.

use std::time::Instant;

use rayon::prelude::*;

use crate::adversary::{attack_schedule, poison_shard, AttackPlan, ScheduleStep};
use crate::aggregation::{
    coordinate_median, fedavg, krum, weighted_aggregate, AggregatorKind, Contribution,
};
use crate::datasim::{build_probe_set, dirichlet_partition, generate_chip, SarChip};
use crate::defense::{
    adapt_params, composite_loss_and_grad, discrepancy, energy_map, generate_adversarial,
    health_score, health_weights, median_filter_updates, spatialize_mask, threshold_mask,
    DefenseParams, FrequencyMask, RoundFeedback,
};
use crate::error::Result;
use crate::harness::config::ExperimentConfig;
use crate::harness::metrics::{evaluate, ClientRoundRecord, RoundMetrics};
use crate::model::{
    forward, init_params, sgd_step, Batch, ModelParams, NetShape, OptState, ParamUpdate,
};
use crate::numerics::{RngStream, StreamId};

/// Number of broadcast adversarial samples paired with each local batch.
const ADV_SUB_BATCH: usize = 8;

/// Per-client server-side state across rounds.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub shard: Vec<usize>,
    pub malicious: bool,
    /// Update from this client's most recent participation.
    pub prev_delta: Option<Vec<f64>>,
    /// Probe-set outputs from the most recent participation.
    pub prev_probe: Option<Vec<Vec<f64>>>,
    /// Most recent health score (0 before the first assessment).
    pub health: f64,
}

/// Full mutable simulation state.
pub struct SimState {
    pub cfg: ExperimentConfig,
    pub shape: NetShape,
    pub train: Vec<SarChip>,
    pub test: Vec<SarChip>,
    pub probe: Vec<SarChip>,
    pub clients: Vec<ClientState>,
    pub global: ModelParams,
    pub defense: DefenseParams,
    pub plan: AttackPlan,
    /// Adversarial samples generated at the end of the previous round.
    pub adv_batch: Option<Vec<SarChip>>,
    prev_adv_variance: Option<f64>,
}

impl SimState {
    /// Builds the dataset, partition, probe set, and initial global model.
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let d = &cfg.dataset;
        let shape = NetShape::new(d.classes, d.chip_size, d.chip_size);

        let mut train_rng = RngStream::new(cfg.seed, StreamId::TrainData);
        let mut train = Vec::with_capacity(d.classes * d.train_per_class);
        for class in 0..d.classes {
            for _ in 0..d.train_per_class {
                train.push(generate_chip(
                    class,
                    d.classes,
                    d.chip_size,
                    d.looks,
                    &mut train_rng,
                )?);
            }
        }
        let mut test_rng = RngStream::new(cfg.seed, StreamId::TestData);
        let mut test = Vec::with_capacity(d.classes * d.test_per_class);
        for class in 0..d.classes {
            for _ in 0..d.test_per_class {
                test.push(generate_chip(
                    class,
                    d.classes,
                    d.chip_size,
                    d.looks,
                    &mut test_rng,
                )?);
            }
        }
        let mut probe_rng = RngStream::new(cfg.seed, StreamId::Probe);
        let probe = build_probe_set(d.probe_size, d.classes, d.chip_size, d.looks, &mut probe_rng)?;

        let labels: Vec<usize> = train.iter().map(|c| c.label).collect();
        let mut part_rng = RngStream::new(cfg.seed, StreamId::Partition);
        let partition = dirichlet_partition(
            &labels,
            cfg.clients,
            d.alpha,
            d.min_per_client,
            &mut part_rng,
        )?;

        let plan = cfg.attack.plan();
        let clients = partition
            .shards
            .into_iter()
            .enumerate()
            .map(|(id, shard)| ClientState {
                shard,
                malicious: plan.malicious_clients.contains(&id),
                prev_delta: None,
                prev_probe: None,
                health: 0.0,
            })
            .collect();

        let mut init_rng = RngStream::new(cfg.seed, StreamId::ModelInit);
        let global = init_params(&shape, &mut init_rng);
        let defense = cfg.defense.params();

        Ok(Self {
            cfg,
            shape,
            train,
            test,
            probe,
            clients,
            global,
            defense,
            plan,
            adv_batch: None,
            prev_adv_variance: None,
        })
    }
}

struct LocalOutcome {
    client_id: usize,
    params: ModelParams,
    delta: Vec<f64>,
    probe_outputs: Vec<Vec<f64>>,
    adv_loss: f64,
}

fn probe_batch(probe: &[SarChip]) -> Batch<'_> {
    Batch::new(
        probe.iter().map(|c| &c.grid).collect(),
        probe.iter().map(|c| c.label).collect(),
    )
}

fn mean_cross_entropy(params: &ModelParams, batch: &Batch) -> f64 {
    let probs = forward(params, batch);
    probs
        .iter()
        .zip(&batch.labels)
        .map(|(row, &y)| -row[y].max(1e-300).ln())
        .sum::<f64>()
        / batch.len() as f64
}

/// One client's local training session for one round.
fn train_client(
    state: &SimState,
    client_id: usize,
    round: usize,
    schedule: &ScheduleStep,
    adv_batch: Option<&[SarChip]>,
    beta: f64,
) -> LocalOutcome {
    let cfg = &state.cfg;
    let client = &state.clients[client_id];

    let mut chips: Vec<SarChip> = client
        .shard
        .iter()
        .map(|&idx| state.train[idx].clone())
        .collect();
    if client.malicious && schedule.active {
        let mut poison_rng = RngStream::new(
            cfg.seed,
            StreamId::Poison {
                client: client_id,
                round,
            },
        );
        chips = poison_shard(
            &chips,
            state.plan.poison_ratio,
            &schedule.trigger,
            state.plan.target_label,
            &mut poison_rng,
        );
    }

    let mut local = state.global.clone();
    let mut opt = OptState::new(
        local.len(),
        round - 1,
        cfg.rounds,
        cfg.optimizer.learning_rate,
        cfg.optimizer.momentum,
        cfg.optimizer.weight_decay,
    );
    // each step pairs the clean batch with a small rotating slice of the
    // broadcast adversarial samples
    let adv_chunk = ADV_SUB_BATCH.min(adv_batch.map_or(0, <[SarChip]>::len));
    let mut adv_cursor = 0usize;
    for epoch in 0..cfg.local_epochs {
        let mut order: Vec<usize> = (0..chips.len()).collect();
        let mut shuffle_rng = RngStream::new(
            cfg.seed,
            StreamId::Shuffle {
                client: client_id,
                round,
                epoch,
            },
        );
        use rand::seq::SliceRandom;
        order.shuffle(&mut shuffle_rng);
        for ids in order.chunks(cfg.batch_size) {
            let batch = Batch::new(
                ids.iter().map(|&i| &chips[i].grid).collect(),
                ids.iter().map(|&i| chips[i].label).collect(),
            );
            let adv = adv_batch.filter(|_| adv_chunk > 0).map(|samples| {
                let picks: Vec<&SarChip> = (0..adv_chunk)
                    .map(|k| &samples[(adv_cursor + k) % samples.len()])
                    .collect();
                adv_cursor = (adv_cursor + adv_chunk) % samples.len();
                Batch::new(
                    picks.iter().map(|c| &c.grid).collect(),
                    picks.iter().map(|c| c.label).collect(),
                )
            });
            let (_, grad) = composite_loss_and_grad(&local, &batch, adv.as_ref(), beta);
            sgd_step(&mut local, &grad, &mut opt);
        }
    }

    let probe_outputs = forward(&local, &probe_batch(&state.probe));
    let adv_loss = adv_batch
        .map(|samples| mean_cross_entropy(&local, &probe_batch(samples)))
        .unwrap_or(0.0);
    let delta = state.global.delta_to(&local).delta;
    LocalOutcome {
        client_id,
        params: local,
        delta,
        probe_outputs,
        adv_loss,
    }
}

/// Executes one communication round and returns its metrics. The global
/// model, client records, defense parameters, and adversarial batch are
/// updated in place. `round` is 1-based.
pub fn run_round(state: &mut SimState, round: usize) -> Result<RoundMetrics> {
    let cfg = state.cfg.clone();
    let aggregator = cfg.aggregator;
    let defense_active = aggregator == AggregatorKind::Nadafd;
    let fdci_on = defense_active && !cfg.defense.ablate_fdci;
    let naat_on = defense_active && !cfg.defense.ablate_naat;
    let dhat_on = defense_active && !cfg.defense.ablate_dhat;
    let beta = if naat_on { state.defense.beta } else { 0.0 };

    let mut jitter_rng = RngStream::new(cfg.seed, StreamId::TriggerJitter { round });
    let schedule = attack_schedule(&state.plan, round, &mut jitter_rng);

    let mut select_rng = RngStream::new(cfg.seed, StreamId::ClientSelect { round });
    let mut selected =
        rand::seq::index::sample(&mut select_rng, cfg.clients, cfg.selected_per_round())
            .into_vec();
    selected.sort_unstable();

    // client phase: broadcast theta^{r-1} plus any adversarial samples and
    // train every selected client (clean loss only while none exist)
    let client_start = Instant::now();
    let adv_ref: Option<&[SarChip]> = if naat_on {
        state.adv_batch.as_deref()
    } else {
        None
    };
    let outcomes: Vec<LocalOutcome> = selected
        .par_iter()
        .map(|&cid| train_client(state, cid, round, &schedule, adv_ref, beta))
        .collect();
    let client_time = client_start.elapsed().as_secs_f64();

    // server phase
    let server_start = Instant::now();
    let chip = cfg.dataset.chip_size;
    let mut mask_density = 0.0;
    let mut tau = 0.0;
    let mut pruned_fraction = 0.0;
    let mut fallback_uniform = false;
    let mut weight_by_id: Vec<(usize, f64)> = Vec::new();
    // per selected client, the spectrally filtered parameters to aggregate
    let mut filtered_params: Vec<Option<Vec<f64>>> = vec![None; outcomes.len()];

    if defense_active {
        let mask = if fdci_on {
            let energies = outcomes
                .iter()
                .map(|o| {
                    energy_map(
                        &ParamUpdate {
                            delta: o.delta.clone(),
                        },
                        state.defense.levels,
                        chip,
                        chip,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            threshold_mask(&discrepancy(&energies), state.defense.zeta)
        } else {
            FrequencyMask::all_zero(chip, chip)
        };
        mask_density = mask.density();
        let spatial = spatialize_mask(&mask, state.defense.levels)?;

        // flagged spectral components are clipped to the cross-client
        // median before aggregation; health scoring keeps the raw updates
        if fdci_on && mask_density > 0.0 {
            let raw: Vec<ParamUpdate> = outcomes
                .iter()
                .map(|o| ParamUpdate {
                    delta: o.delta.clone(),
                })
                .collect();
            let suppressed = median_filter_updates(&raw, &mask, state.defense.levels)?;
            for (slot, filtered) in filtered_params.iter_mut().zip(suppressed) {
                let params: Vec<f64> = state
                    .global
                    .flat
                    .iter()
                    .zip(&filtered.delta)
                    .map(|(g, d)| g + d)
                    .collect();
                *slot = Some(params);
            }
        }

        if naat_on {
            let mut adv_rng = RngStream::new(cfg.seed, StreamId::Adversarial { round });
            let next_batch = state
                .probe
                .iter()
                .map(|p| generate_adversarial(p, &state.defense, &spatial, &mut adv_rng))
                .collect::<Result<Vec<_>>>()?;
            state.adv_batch = Some(next_batch);
        }

        // health scores against each client's previous participation
        let scores: Vec<(usize, f64)> = outcomes
            .iter()
            .map(|o| {
                let record = &state.clients[o.client_id];
                let h = match (&record.prev_delta, &record.prev_probe) {
                    (Some(prev_delta), Some(prev_probe)) => health_score(
                        &ParamUpdate {
                            delta: o.delta.clone(),
                        },
                        &ParamUpdate {
                            delta: prev_delta.clone(),
                        },
                        &o.probe_outputs,
                        prev_probe,
                        state.defense.gamma,
                        state.defense.delta,
                    ),
                    _ => 0.0,
                };
                (o.client_id, h)
            })
            .collect();
        let hw = health_weights(&scores, state.defense.gamma, state.defense.tau_percentile);
        tau = hw.tau;
        fallback_uniform = hw.fallback_uniform;
        if dhat_on {
            // the uniform fallback keeps every client, so nothing was pruned
            if !hw.fallback_uniform {
                pruned_fraction = hw.pruned as f64 / scores.len() as f64;
            }
            weight_by_id = hw.weights;
        }
        for (client_id, h) in &scores {
            state.clients[*client_id].health = *h;
        }
        for o in &outcomes {
            let record = &mut state.clients[o.client_id];
            record.prev_delta = Some(o.delta.clone());
            record.prev_probe = Some(o.probe_outputs.clone());
        }
    }

    let contributions: Vec<Contribution> = outcomes
        .iter()
        .zip(&filtered_params)
        .map(|(o, filtered)| Contribution {
            client_id: o.client_id,
            params: filtered.as_deref().unwrap_or(&o.params.flat),
            shard_size: state.clients[o.client_id].shard.len(),
            weight: weight_by_id
                .iter()
                .find(|(id, _)| *id == o.client_id)
                .map(|(_, w)| *w)
                .unwrap_or(0.0),
        })
        .collect();
    let aggregated = match aggregator {
        AggregatorKind::Fedavg => fedavg(&contributions),
        AggregatorKind::Krum => krum(&contributions, cfg.krum_byzantine)?,
        AggregatorKind::Median => coordinate_median(&contributions),
        AggregatorKind::Nadafd => {
            if dhat_on {
                weighted_aggregate(&contributions)
            } else {
                fedavg(&contributions)
            }
        }
    };
    state.global.flat = aggregated;

    if defense_active {
        let n = outcomes.len() as f64;
        let mean_adv = outcomes.iter().map(|o| o.adv_loss).sum::<f64>() / n;
        let adv_variance = outcomes
            .iter()
            .map(|o| (o.adv_loss - mean_adv).powi(2))
            .sum::<f64>()
            / n;
        let feedback = RoundFeedback {
            pruned_fraction,
            adv_loss_variance: adv_variance,
            previous_variance: state.prev_adv_variance,
        };
        state.defense = adapt_params(&state.defense, &feedback);
        state.prev_adv_variance = Some(adv_variance);
    }
    let server_time = server_start.elapsed().as_secs_f64();

    let (acc, asr, macro_f1) = evaluate(
        &state.global,
        &state.test,
        &state.plan.trigger,
        state.plan.target_label,
    );

    // aggregation weight actually applied per client this round
    let applied_weight = |client_id: usize| -> f64 {
        if !selected.contains(&client_id) {
            return 0.0;
        }
        match aggregator {
            AggregatorKind::Nadafd if dhat_on => weight_by_id
                .iter()
                .find(|(id, _)| *id == client_id)
                .map(|(_, w)| *w)
                .unwrap_or(0.0),
            AggregatorKind::Krum => {
                let winner = contributions
                    .iter()
                    .find(|c| c.params == state.global.flat.as_slice())
                    .map(|c| c.client_id);
                if winner == Some(client_id) {
                    1.0
                } else {
                    0.0
                }
            }
            AggregatorKind::Median => 1.0 / selected.len() as f64,
            _ => {
                let total: usize = selected
                    .iter()
                    .map(|&id| state.clients[id].shard.len())
                    .sum();
                state.clients[client_id].shard.len() as f64 / total as f64
            }
        }
    };
    let clients = (0..cfg.clients)
        .map(|id| ClientRoundRecord {
            client_id: id,
            malicious: state.clients[id].malicious,
            health: state.clients[id].health,
            weight: applied_weight(id),
        })
        .collect();

    let (client_time_s, server_time_s) = if cfg.record_timings {
        (client_time, server_time)
    } else {
        (0.0, 0.0)
    };
    Ok(RoundMetrics {
        round,
        acc,
        asr,
        macro_f1,
        mask_density,
        tau,
        xi: state.defense.xi,
        zeta: state.defense.zeta,
        client_time_s,
        server_time_s,
        clients,
        fallback_uniform,
    })
}
