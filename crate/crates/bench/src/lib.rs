//! Fixtures shared by the benchmarks.

use ktpfl_core::data::{partition, synth_gen};
use ktpfl_core::knowledge::soft_predict;
use ktpfl_core::{
    Algorithm, Federation, Model, PartitionScheme, SimConfig, SoftPredictionBank, SynthParams,
    Tensor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_batch(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut r = rng(seed);
    let data = (0..rows * cols).map(|_| r.random_range(0.0..1.0)).collect();
    Tensor::new(vec![rows, cols], data).unwrap()
}

/// Soft predictions of `n` random models on one public batch.
pub fn bank(n: usize, batch: usize, d_in: usize, classes: usize) -> SoftPredictionBank {
    let x = random_batch(batch, d_in, 1);
    let preds = (0..n)
        .map(|i| {
            let m = Model::init(&[d_in, 32, classes], &mut rng(i as u64)).unwrap();
            soft_predict(&m, &x, 1.0).unwrap()
        })
        .collect();
    SoftPredictionBank::new((0..n).collect(), preds, (0..batch).collect()).unwrap()
}

/// A 20-client, four-architecture federation on synthetic data.
pub fn federation(algorithm: Algorithm, threads: usize) -> Federation {
    let d_in = 40;
    let ds = synth_gen(&SynthParams {
        num_classes: 10,
        samples_per_class: 354,
        input_dim: d_in,
        spread: 0.8,
        seed: 100,
    })
    .unwrap();
    let p = partition(&ds, 20, PartitionScheme::LabelSkew { labels_per_client: 2 }, 3000, 0).unwrap();
    let public = ds.subset(&p.public_indices).to_public(true);
    let groups = [vec![d_in, 16, 10], vec![d_in, 32, 10], vec![d_in, 24, 16, 10], vec![d_in, 48, 10]];
    let archs: Vec<Vec<usize>> = (0..20).map(|i| groups[i / 5].clone()).collect();
    let config = SimConfig {
        algorithm,
        rounds: usize::MAX,
        threads,
        lr_distill: 0.5,
        ..SimConfig::default()
    };
    Federation::new(config, &ds, &p, public, &archs).unwrap()
}
