//! Label-skewed Dirichlet partitioning of a dataset across clients.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma};

use crate::error::{Result, SimError};
use crate::numerics::RngStream;

/// Disjoint, covering per-client index lists into a dataset.
#[derive(Debug, Clone)]
pub struct Partition {
    pub shards: Vec<Vec<usize>>,
}

impl Partition {
    pub fn client_count(&self) -> usize {
        self.shards.len()
    }
}

/// Partitions sample indices across `clients` with per-class proportions
/// drawn from `Dirichlet(alpha)`, then moves samples from the largest shards
/// to deficient ones (largest class first, deterministic order) until every
/// client holds at least `min_per_client` samples.
pub fn dirichlet_partition(
    labels: &[usize],
    clients: usize,
    alpha: f64,
    min_per_client: usize,
    rng: &mut RngStream,
) -> Result<Partition> {
    if clients < 2 {
        return Err(SimError::Config(format!(
            "need at least 2 clients, got {clients}"
        )));
    }
    if !(alpha > 0.0) {
        return Err(SimError::Config(format!(
            "dirichlet alpha must be positive, got {alpha}"
        )));
    }
    if clients * min_per_client > labels.len() {
        return Err(SimError::Config(format!(
            "min {min_per_client} per client infeasible: {} clients x {} > {} samples",
            clients,
            min_per_client,
            labels.len()
        )));
    }

    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (idx, &label) in labels.iter().enumerate() {
        by_class[label].push(idx);
    }

    let gamma = Gamma::new(alpha, 1.0)
        .map_err(|e| SimError::Config(format!("dirichlet draw: {e}")))?;
    let mut shards: Vec<Vec<usize>> = vec![Vec::new(); clients];
    for mut indices in by_class.into_iter().filter(|v| !v.is_empty()) {
        indices.shuffle(rng);
        // Dirichlet proportions via normalized Gamma draws
        let mut props: Vec<f64> = (0..clients).map(|_| gamma.sample(rng)).collect();
        let total: f64 = props.iter().sum();
        if total <= f64::MIN_POSITIVE {
            props = vec![1.0 / clients as f64; clients];
        } else {
            for p in &mut props {
                *p /= total;
            }
        }
        // largest-remainder rounding of per-client counts
        let n = indices.len();
        let mut counts: Vec<usize> = props.iter().map(|p| (p * n as f64).floor() as usize).collect();
        let assigned: usize = counts.iter().sum();
        let mut remainders: Vec<(usize, f64)> = props
            .iter()
            .enumerate()
            .map(|(i, p)| (i, p * n as f64 - counts[i] as f64))
            .collect();
        remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        for &(client, _) in remainders.iter().take(n - assigned) {
            counts[client] += 1;
        }
        let mut cursor = 0;
        for (client, &count) in counts.iter().enumerate() {
            shards[client].extend_from_slice(&indices[cursor..cursor + count]);
            cursor += count;
        }
    }

    rebalance_to_minimum(&mut shards, labels, min_per_client);
    Ok(Partition { shards })
}

/// Moves one sample at a time from the largest shard (its most populous
/// class, lowest class id on ties) to the most deficient shard until every
/// shard reaches the minimum.
fn rebalance_to_minimum(shards: &mut [Vec<usize>], labels: &[usize], min_per_client: usize) {
    loop {
        let recipient = match shards
            .iter()
            .enumerate()
            .filter(|(_, s)| s.len() < min_per_client)
            .min_by_key(|(i, s)| (s.len(), *i))
        {
            Some((i, _)) => i,
            None => return,
        };
        let donor = shards
            .iter()
            .enumerate()
            .max_by(|(ia, a), (ib, b)| a.len().cmp(&b.len()).then(ib.cmp(ia)))
            .map(|(i, _)| i)
            .expect("at least one shard");
        debug_assert!(shards[donor].len() > min_per_client);
        // most populous class within the donor shard, lowest class id on ties
        let mut class_counts: std::collections::BTreeMap<usize, usize> = Default::default();
        for &idx in &shards[donor] {
            *class_counts.entry(labels[idx]).or_insert(0) += 1;
        }
        let target_class = class_counts
            .iter()
            .max_by(|(ca, na), (cb, nb)| na.cmp(nb).then(cb.cmp(ca)))
            .map(|(c, _)| *c)
            .expect("donor shard is nonempty");
        let pos = shards[donor]
            .iter()
            .rposition(|&idx| labels[idx] == target_class)
            .expect("target class present in donor");
        let moved = shards[donor].remove(pos);
        shards[recipient].push(moved);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::StreamId;

    fn balanced_labels(classes: usize, per_class: usize) -> Vec<usize> {
        (0..classes * per_class).map(|i| i % classes).collect()
    }

    fn assert_disjoint_covering(partition: &Partition, total: usize) {
        let mut seen = vec![false; total];
        for shard in &partition.shards {
            for &idx in shard {
                assert!(!seen[idx], "index {idx} assigned twice");
                seen[idx] = true;
            }
        }
        assert!(seen.iter().all(|s| *s), "partition does not cover dataset");
    }

    #[test]
    fn high_alpha_is_nearly_uniform() {
        let labels = balanced_labels(10, 100);
        let mut rng = RngStream::new(1, StreamId::Partition);
        let partition = dirichlet_partition(&labels, 10, 1e6, 10, &mut rng).unwrap();
        assert_disjoint_covering(&partition, labels.len());
        for shard in &partition.shards {
            let mut hist = vec![0usize; 10];
            for &idx in shard {
                hist[labels[idx]] += 1;
            }
            let n = shard.len() as f64;
            // total variation distance from the uniform class histogram
            let tv: f64 = hist
                .iter()
                .map(|&c| (c as f64 / n - 0.1).abs())
                .sum::<f64>()
                / 2.0;
            assert!(tv < 0.05, "total variation {tv}");
        }
    }

    #[test]
    fn disjoint_and_covering_across_sweep_grid() {
        let labels = balanced_labels(10, 60);
        for &clients in &[5usize, 10] {
            for &alpha in &[0.05, 0.1, 0.5, 1.0] {
                for seed in 0..3 {
                    let mut rng = RngStream::new(seed, StreamId::Partition);
                    let p = dirichlet_partition(&labels, clients, alpha, 5, &mut rng).unwrap();
                    assert_disjoint_covering(&p, labels.len());
                    assert!(p.shards.iter().all(|s| s.len() >= 5));
                }
            }
        }
    }

    fn mean_max_class_share(alpha: f64, seed: u64) -> f64 {
        let labels = balanced_labels(10, 50);
        let mut rng = RngStream::new(seed, StreamId::Partition);
        let p = dirichlet_partition(&labels, 10, alpha, 5, &mut rng).unwrap();
        let shares: Vec<f64> = p
            .shards
            .iter()
            .map(|shard| {
                let mut hist = vec![0usize; 10];
                for &idx in shard {
                    hist[labels[idx]] += 1;
                }
                *hist.iter().max().unwrap() as f64 / shard.len() as f64
            })
            .collect();
        shares.iter().sum::<f64>() / shares.len() as f64
    }

    #[test]
    fn smaller_alpha_skews_harder() {
        // paired Monte-Carlo comparison over 20 seeds
        let mut wins = 0;
        for seed in 0..20 {
            if mean_max_class_share(0.05, seed) > mean_max_class_share(1.0, seed) {
                wins += 1;
            }
        }
        assert!(wins >= 18, "alpha=0.05 skewed harder in only {wins}/20 trials");
    }

    #[test]
    fn min_per_client_enforced() {
        // heavily skewed draw still ends with everyone at the floor
        let labels = balanced_labels(10, 30);
        let mut rng = RngStream::new(7, StreamId::Partition);
        let p = dirichlet_partition(&labels, 10, 0.05, 12, &mut rng).unwrap();
        assert!(p.shards.iter().all(|s| s.len() >= 12));
        assert_disjoint_covering(&p, labels.len());
    }

    #[test]
    fn infeasible_minimum_rejected() {
        let labels = balanced_labels(2, 10);
        let mut rng = RngStream::new(7, StreamId::Partition);
        assert!(dirichlet_partition(&labels, 5, 1.0, 10, &mut rng).is_err());
    }
}
