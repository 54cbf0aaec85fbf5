//! Scenario builders shared by the integration suites.
#![allow(dead_code)]

pub mod props;

use ktpfl_core::data::{partition, synth_gen, PartitionScheme, SynthParams};
use ktpfl_core::{Algorithm, Dataset, Federation, Partition, PublicSet, SimConfig};

/// A fully built task: data, partition, public pool and per-client architectures.
pub struct Task {
    pub dataset: Dataset,
    pub partition: Partition,
    pub public: PublicSet,
    pub architectures: Vec<Vec<usize>>,
}

impl Task {
    pub fn federation(&self, config: SimConfig) -> Federation {
        Federation::new(config, &self.dataset, &self.partition, self.public.clone(), &self.architectures)
            .expect("federation builds")
    }
}

pub const HOLDOUT: usize = 3000;

/// 20 clients, 10 classes, two labels per client, four architecture groups of
/// five clients. Private shards are small (about 24 samples) and the classes
/// overlap, so a single client's model is noticeably worse than what its
/// label-sharing peers know collectively.
pub fn label_skew_task(seed: u64) -> Task {
    let d_in = 40;
    let dataset = synth_gen(&SynthParams {
        num_classes: 10,
        samples_per_class: 354,
        input_dim: d_in,
        spread: 0.8,
        seed: 100 + seed,
    })
    .unwrap();
    let partition = partition(
        &dataset,
        20,
        PartitionScheme::LabelSkew { labels_per_client: 2 },
        HOLDOUT,
        seed,
    )
    .unwrap();
    let public = dataset.subset(&partition.public_indices).to_public(true);
    let groups = [
        vec![d_in, 16, 10],
        vec![d_in, 32, 10],
        vec![d_in, 24, 16, 10],
        vec![d_in, 48, 10],
    ];
    let architectures = (0..20).map(|i| groups[i / 5].clone()).collect();
    Task {
        dataset,
        partition,
        public,
        architectures,
    }
}

/// 8 clients over 4 classes with two labels each. Even clients share one
/// label pair and odd clients the other, giving two clusters with disjoint
/// label sets.
pub fn two_cluster_task(seed: u64) -> Task {
    let d_in = 40;
    let dataset = synth_gen(&SynthParams {
        num_classes: 4,
        samples_per_class: 320,
        input_dim: d_in,
        spread: 0.8,
        seed: 200 + seed,
    })
    .unwrap();
    let partition = partition(
        &dataset,
        8,
        PartitionScheme::LabelSkew { labels_per_client: 2 },
        1000,
        seed,
    )
    .unwrap();
    let public = dataset.subset(&partition.public_indices).to_public(true);
    let groups = [vec![d_in, 16, 4], vec![d_in, 32, 4]];
    let architectures = (0..8).map(|i| groups[i / 4].clone()).collect();
    Task {
        dataset,
        partition,
        public,
        architectures,
    }
}

/// Cluster id of each client in [`two_cluster_task`], derived from the data.
pub fn clusters_by_label_set(task: &Task) -> Vec<usize> {
    let mut sets: Vec<Vec<usize>> = Vec::new();
    task.partition
        .private_shards
        .iter()
        .map(|shard| {
            let h = task.dataset.label_histogram(shard);
            let labels: Vec<usize> = (0..h.len()).filter(|&c| h[c] > 0).collect();
            match sets.iter().position(|s| *s == labels) {
                Some(i) => i,
                None => {
                    sets.push(labels);
                    sets.len() - 1
                }
            }
        })
        .collect()
}

/// Coefficient step per client. The divergence part of the coefficient
/// gradient carries the data weight `D_n/D ≈ 1/N`, so the step is scaled by
/// `N` to keep its effect comparable between fleets of different size.
pub const COEFF_LR_PER_CLIENT: f64 = 0.025;

/// Hyperparameters used for the trend experiments: 30 rounds, E = 20, R = 1.
pub fn trend_config(algorithm: Algorithm, seed: u64, clients: usize) -> SimConfig {
    let mut config = SimConfig {
        algorithm,
        rounds: 30,
        local_epochs: 20,
        distill_steps: 1,
        public_size: HOLDOUT,
        lr_local: 0.01,
        lr_distill: 0.5,
        threads: 4,
        seed,
        ..SimConfig::default()
    };
    config.knowledge.lambda = 1.0;
    config.knowledge.coeff_lr = COEFF_LR_PER_CLIENT * clients as f64;
    config.knowledge.rho = 0.3;
    config.knowledge.temperature = 1.0;
    config
}

/// Mean final average accuracy over seeds.
pub fn mean_final_accuracy(
    seeds: &[u64],
    task_for: impl Fn(u64) -> Task,
    config_for: impl Fn(u64) -> SimConfig,
) -> f64 {
    let total: f64 = seeds
        .iter()
        .map(|&s| {
            let task = task_for(s);
            task.federation(config_for(s)).run().unwrap().final_avg_accuracy
        })
        .sum();
    total / seeds.len() as f64
}

/// Mean off-diagonal coefficient mass within and across clusters.
pub fn within_cross_mass(c: &ktpfl_core::CoefficientMatrix, cluster: &[usize]) -> (f64, f64) {
    let (mut within, mut cross, mut nw, mut nc) = (0.0, 0.0, 0usize, 0usize);
    for m in 0..c.dim() {
        for n in 0..c.dim() {
            if m == n {
                continue;
            }
            if cluster[m] == cluster[n] {
                within += c.get(m, n);
                nw += 1;
            } else {
                cross += c.get(m, n);
                nc += 1;
            }
        }
    }
    (within / nw as f64, cross / nc as f64)
}
