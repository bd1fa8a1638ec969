//! Backdoor attack implementation: trigger construction and embedding,
//! local data poisoning with label flipping, and the one-shot / persistent /
//! adaptive attack schedules.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datasim::{SarChip, I_MAX};
use crate::numerics::{dwt2_haar, idwt2_haar, RngStream};

/// How the trigger is embedded into a chip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TriggerMode {
    /// Additive 3x3 intensity block in the spatial domain.
    SpatialPatch,
    /// Additive 3x3 block of low-frequency (level-3 LL) wavelet coefficients,
    /// spread over the image by the inverse transform.
    SpectralLl,
}

/// A 3x3 trigger with a placement and an amplitude expressed as a multiple
/// of [`I_MAX`].
#[derive(Debug, Clone, PartialEq)]
pub struct TriggerPattern {
    pub mode: TriggerMode,
    /// Relative amplitudes of the nine cells.
    pub patch: [[f64; 3]; 3],
    /// Top-left chip coordinate (row, col) anchoring the trigger.
    pub location: (usize, usize),
    /// Nonnegative multiplier of `I_MAX`.
    pub amplitude: f64,
}

impl TriggerPattern {
    pub fn uniform(mode: TriggerMode, location: (usize, usize), amplitude: f64) -> Self {
        assert!(amplitude >= 0.0, "trigger amplitude must be nonnegative");
        Self {
            mode,
            patch: [[1.0; 3]; 3],
            location,
            amplitude,
        }
    }

    /// Copy with the amplitude scaled by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut t = self.clone();
        t.amplitude *= factor;
        t
    }
}

/// When and how strongly the malicious clients act.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackMode {
    /// Poisoning occurs in exactly one communication round.
    OneShot,
    /// Poisoning is repeated in every round.
    Persistent,
    /// Poisoning every round with a sinusoidal strength schedule and per-round
    /// trigger-location jitter.
    Adaptive,
}

/// Full attack description carried in the experiment configuration.
#[derive(Debug, Clone)]
pub struct AttackPlan {
    pub malicious_clients: Vec<usize>,
    pub poison_ratio: f64,
    pub target_label: usize,
    pub mode: AttackMode,
    /// Round at which a one-shot attack fires.
    pub one_shot_round: usize,
    pub trigger: TriggerPattern,
}

/// Resolved attack behavior for one round.
#[derive(Debug, Clone)]
pub struct ScheduleStep {
    pub active: bool,
    pub lambda: f64,
    pub trigger: TriggerPattern,
}

/// Embeds the trigger into a chip; the label is unchanged by this operation.
/// Output intensities are clipped to `[0, I_MAX]`.
pub fn embed_trigger(chip: &SarChip, trigger: &TriggerPattern) -> SarChip {
    let grid = &chip.grid;
    let (h, w) = (grid.height(), grid.width());
    let mut out = match trigger.mode {
        TriggerMode::SpatialPatch => {
            let (r0, c0) = trigger.location;
            assert!(
                r0 + 3 <= h && c0 + 3 <= w,
                "spatial trigger at ({r0},{c0}) exceeds {h}x{w} chip"
            );
            let mut g = grid.clone();
            for dr in 0..3 {
                for dc in 0..3 {
                    let v = g.get(r0 + dr, c0 + dc)
                        + trigger.amplitude * I_MAX * trigger.patch[dr][dc];
                    g.set(r0 + dr, c0 + dc, v);
                }
            }
            g
        }
        TriggerMode::SpectralLl => {
            const LEVELS: usize = 3;
            let mut pyramid = dwt2_haar(grid, LEVELS).expect("chip dimensions support level 3");
            let (llh, llw) = pyramid.ll_dims();
            assert!(
                llh >= 3 && llw >= 3,
                "LL subband {llh}x{llw} cannot host a 3x3 trigger"
            );
            // the 3x3 LL window nearest the requested chip location
            let block = 1 << LEVELS;
            let r0 = ((trigger.location.0 + block / 2) / block).min(llh - 3);
            let c0 = ((trigger.location.1 + block / 2) / block).min(llw - 3);
            for dr in 0..3 {
                for dc in 0..3 {
                    let v = pyramid.packed().get(r0 + dr, c0 + dc)
                        + trigger.amplitude * I_MAX * trigger.patch[dr][dc];
                    pyramid.packed_mut().set(r0 + dr, c0 + dc, v);
                }
            }
            idwt2_haar(&pyramid)
        }
    };
    out.clip(0.0, I_MAX);
    SarChip {
        grid: out,
        label: chip.label,
    }
}

/// Poisons `floor(ratio * len)` chips, sampled without replacement from the
/// non-target-class chips when enough exist; each poisoned chip carries the
/// trigger and is relabeled `target_label`. Shard order is preserved.
pub fn poison_shard(
    shard: &[SarChip],
    ratio: f64,
    trigger: &TriggerPattern,
    target_label: usize,
    rng: &mut RngStream,
) -> Vec<SarChip> {
    assert!((0.0..=1.0).contains(&ratio), "poison ratio out of [0, 1]");
    let n_poison = (ratio * shard.len() as f64).floor() as usize;
    if n_poison == 0 {
        return shard.to_vec();
    }
    let mut candidates: Vec<usize> = (0..shard.len())
        .filter(|&i| shard[i].label != target_label)
        .collect();
    if candidates.len() < n_poison {
        candidates.extend((0..shard.len()).filter(|&i| shard[i].label == target_label));
    }
    let chosen = rand::seq::index::sample(rng, candidates.len(), n_poison.min(candidates.len()));
    let mut poisoned = vec![false; shard.len()];
    for pick in chosen.iter() {
        poisoned[candidates[pick]] = true;
    }
    shard
        .iter()
        .enumerate()
        .map(|(i, chip)| {
            if poisoned[i] {
                let mut t = embed_trigger(chip, trigger);
                t.label = target_label;
                t
            } else {
                chip.clone()
            }
        })
        .collect()
}

/// Resolves the plan at a round (1-based): whether poisoning is active, the
/// strength multiplier, and the round's (possibly jittered and rescaled)
/// trigger. `rng` should be the round's dedicated jitter stream; it is only
/// consumed in adaptive mode.
pub fn attack_schedule(plan: &AttackPlan, round: usize, rng: &mut RngStream) -> ScheduleStep {
    assert!(round >= 1, "rounds are 1-based");
    match plan.mode {
        AttackMode::OneShot => ScheduleStep {
            active: round == plan.one_shot_round,
            lambda: 1.0,
            trigger: plan.trigger.clone(),
        },
        AttackMode::Persistent => ScheduleStep {
            active: true,
            lambda: 1.0,
            trigger: plan.trigger.clone(),
        },
        AttackMode::Adaptive => {
            let lambda =
                0.5 + 0.5 * (2.0 * std::f64::consts::PI * round as f64 / 20.0).sin();
            let dr = rng.gen_range(-1i64..=1);
            let dc = rng.gen_range(-1i64..=1);
            let mut trigger = plan.trigger.scaled(lambda);
            trigger.location = (
                (trigger.location.0 as i64 + dr).max(0) as usize,
                (trigger.location.1 as i64 + dc).max(0) as usize,
            );
            ScheduleStep {
                active: true,
                lambda,
                trigger,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Grid2D, StreamId};

    fn zero_chip(label: usize) -> SarChip {
        SarChip {
            grid: Grid2D::zeros(32, 32),
            label,
        }
    }

    fn constant_chip(value: f64, label: usize) -> SarChip {
        SarChip {
            grid: Grid2D::constant(32, 32, value),
            label,
        }
    }

    #[test]
    fn zero_amplitude_is_identity() {
        let chip = constant_chip(1.0, 2);
        for mode in [TriggerMode::SpatialPatch, TriggerMode::SpectralLl] {
            let t = TriggerPattern::uniform(mode, (2, 2), 0.0);
            let out = embed_trigger(&chip, &t);
            for (a, b) in out.grid.values().iter().zip(chip.grid.values()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn spatial_patch_saturates_nine_pixels() {
        let chip = zero_chip(0);
        let t = TriggerPattern::uniform(TriggerMode::SpatialPatch, (2, 2), 1.0);
        let out = embed_trigger(&chip, &t);
        let saturated = out.grid.values().iter().filter(|v| **v == I_MAX).count();
        assert_eq!(saturated, 9);
        assert_eq!(out.grid.get(2, 2), I_MAX);
        assert_eq!(out.grid.get(4, 4), I_MAX);
        assert_eq!(out.grid.get(5, 5), 0.0);
    }

    #[test]
    fn spectral_trigger_concentrates_in_ll() {
        // mid-gray chip so the additive LL lift never clips
        let chip = constant_chip(1.0, 3);
        let t = TriggerPattern::uniform(TriggerMode::SpectralLl, (8, 8), 0.8);
        let out = embed_trigger(&chip, &t);
        let diff = Grid2D::from_values(
            32,
            32,
            out.grid
                .values()
                .iter()
                .zip(chip.grid.values())
                .map(|(a, b)| a - b)
                .collect(),
        );
        let pyramid = dwt2_haar(&diff, 3).unwrap();
        let detail = pyramid.detail_energy();
        let total = pyramid.energy();
        assert!(total > 0.0);
        assert!(
            detail / total < 0.01,
            "detail fraction {}",
            detail / total
        );
    }

    #[test]
    fn embed_respects_value_bounds() {
        let chip = constant_chip(3.9, 1);
        for mode in [TriggerMode::SpatialPatch, TriggerMode::SpectralLl] {
            let t = TriggerPattern::uniform(mode, (0, 0), 2.0);
            let out = embed_trigger(&chip, &t);
            assert!(out
                .grid
                .values()
                .iter()
                .all(|v| *v >= 0.0 && *v <= I_MAX));
        }
    }

    #[test]
    #[should_panic(expected = "exceeds")]
    fn out_of_bounds_spatial_trigger_panics() {
        let chip = zero_chip(0);
        let t = TriggerPattern::uniform(TriggerMode::SpatialPatch, (30, 30), 1.0);
        embed_trigger(&chip, &t);
    }

    fn shard_of(labels: &[usize]) -> Vec<SarChip> {
        labels.iter().map(|&l| constant_chip(0.5, l)).collect()
    }

    #[test]
    fn zero_ratio_leaves_shard_unchanged() {
        let shard = shard_of(&[1, 2, 3]);
        let t = TriggerPattern::uniform(TriggerMode::SpatialPatch, (0, 0), 1.0);
        let mut rng = RngStream::new(1, StreamId::Poison { client: 0, round: 1 });
        let out = poison_shard(&shard, 0.0, &t, 0, &mut rng);
        assert!(out.iter().zip(&shard).all(|(a, b)| a.label == b.label));
        assert!(out
            .iter()
            .zip(&shard)
            .all(|(a, b)| a.grid.values() == b.grid.values()));
    }

    #[test]
    fn full_ratio_poisons_everything() {
        let shard = shard_of(&[1, 2, 3, 4]);
        let t = TriggerPattern::uniform(TriggerMode::SpatialPatch, (0, 0), 1.0);
        let mut rng = RngStream::new(1, StreamId::Poison { client: 0, round: 1 });
        let out = poison_shard(&shard, 1.0, &t, 0, &mut rng);
        assert!(out.iter().all(|c| c.label == 0));
        assert!(out.iter().all(|c| c.grid.get(0, 0) == I_MAX));
    }

    #[test]
    fn poison_count_is_floor_and_deterministic() {
        let labels: Vec<usize> = (0..100).map(|i| i % 10).collect();
        let shard = shard_of(&labels);
        let t = TriggerPattern::uniform(TriggerMode::SpatialPatch, (0, 0), 1.0);
        let run = |seed| {
            let mut rng = RngStream::new(seed, StreamId::Poison { client: 3, round: 7 });
            poison_shard(&shard, 0.3, &t, 0, &mut rng)
        };
        let a = run(9);
        let flipped = a
            .iter()
            .zip(&shard)
            .filter(|(p, o)| p.label != o.label || p.grid.values() != o.grid.values())
            .count();
        assert_eq!(flipped, 30);
        // non-target chips preferred: every poisoned chip was originally non-target
        for (p, o) in a.iter().zip(&shard) {
            if p.grid.values() != o.grid.values() {
                assert_ne!(o.label, 0);
                assert_eq!(p.label, 0);
            }
        }
        let b = run(9);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.label, y.label);
            assert_eq!(x.grid.values(), y.grid.values());
        }
    }

    fn plan(mode: AttackMode) -> AttackPlan {
        AttackPlan {
            malicious_clients: vec![0],
            poison_ratio: 0.3,
            target_label: 0,
            mode,
            one_shot_round: 5,
            trigger: TriggerPattern::uniform(TriggerMode::SpectralLl, (8, 8), 0.8),
        }
    }

    #[test]
    fn one_shot_fires_exactly_once() {
        let p = plan(AttackMode::OneShot);
        let mut rng = RngStream::new(0, StreamId::TriggerJitter { round: 5 });
        assert!(attack_schedule(&p, 5, &mut rng).active);
        assert!(!attack_schedule(&p, 6, &mut rng).active);
        assert!(!attack_schedule(&p, 4, &mut rng).active);
    }

    #[test]
    fn persistent_always_active_at_unit_strength() {
        let p = plan(AttackMode::Persistent);
        for round in [1, 17, 200] {
            let mut rng = RngStream::new(0, StreamId::TriggerJitter { round });
            let step = attack_schedule(&p, round, &mut rng);
            assert!(step.active);
            assert_eq!(step.lambda, 1.0);
            assert_eq!(step.trigger, p.trigger);
        }
    }

    #[test]
    fn adaptive_modulates_strength_and_location() {
        let p = plan(AttackMode::Adaptive);
        let mut rng = RngStream::new(3, StreamId::TriggerJitter { round: 5 });
        let step = attack_schedule(&p, 5, &mut rng);
        assert!(step.active);
        let expected = 0.5 + 0.5 * (2.0 * std::f64::consts::PI * 5.0 / 20.0).sin();
        assert!((step.lambda - expected).abs() < 1e-12);
        assert!((step.trigger.amplitude - 0.8 * expected).abs() < 1e-12);
        let (r, c) = step.trigger.location;
        assert!(r.abs_diff(8) <= 1 && c.abs_diff(8) <= 1);
    }
}
