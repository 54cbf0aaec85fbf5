mod common;

use common::props::{small_dataset, small_federation, MIXED};
use ktpfl_core::data::carve_public;
use ktpfl_core::fedsim::sample_clients;
use ktpfl_core::{Algorithm, Federation};

fn archs() -> Vec<Vec<usize>> {
    MIXED.iter().map(|a| a.to_vec()).collect()
}

fn sampled_run(rate: f64) -> Federation {
    small_federation(Algorithm::Ktpfl, 8, &archs(), 3, |c| {
        c.sample_rate = rate;
        c.rounds = 3;
    })
}

#[test]
fn idle_clients_neither_train_nor_talk() {
    let mut f = sampled_run(0.5);
    let before: Vec<_> = f.clients().iter().map(|c| c.model.clone()).collect();
    let prev_c = f.coefficients().clone();
    f.run_round().unwrap();
    let sampled = sample_clients(8, 0.5, 1, 3).unwrap();
    assert_eq!(sampled.len(), 4);
    for (id, c) in f.clients().iter().enumerate() {
        let (up, down) = f.ledger().client_round(1, id);
        if sampled.contains(&id) {
            assert!(up > 0 && down > 0);
            assert!(c.model != before[id]);
        } else {
            assert_eq!((up, down), (0, 0));
            assert!(c.model == before[id]);
        }
    }
    // Idle columns and idle rows stay as they were.
    let c = f.coefficients();
    for m in 0..8 {
        for n in 0..8 {
            if !(sampled.contains(&m) && sampled.contains(&n)) {
                assert_eq!(c.get(m, n), prev_c.get(m, n), "entry ({m}, {n})");
            }
        }
    }
    assert!(c.is_column_stochastic(1e-12));
}

#[test]
fn coefficient_message_covers_the_full_fleet() {
    let mut f = sampled_run(0.25);
    f.run().unwrap();
    let totals = f.ledger().totals();
    // 2 clients × 3 rounds, each receiving N = 8 coefficients
    assert_eq!(totals.coefficients, 2 * 3 * 8 * 4);
}

#[test]
fn full_participation_matches_rate_one() {
    let mut a = sampled_run(1.0);
    let mut b = sampled_run(0.999_999);
    a.run().unwrap();
    b.run().unwrap();
    assert_eq!(a.history(), b.history());
}

#[test]
fn unlabeled_public_sets_drop_labels() {
    let ds = small_dataset(4, 3, 20);
    let source = ds.to_public(true);
    let carved = carve_public(&source, 15, false, 9).unwrap();
    assert_eq!(carved.len(), 15);
    assert!(carved.labels.is_none());
    let again = carve_public(&source, 15, false, 9).unwrap();
    assert_eq!(carved.inputs, again.inputs);
    assert!(carve_public(&source, 61, true, 9).is_err());
}

#[test]
fn resampling_the_public_set_is_reproducible() {
    let run = || {
        let mut f = small_federation(Algorithm::Simpfl, 4, &archs(), 11, |c| {
            c.public_resample_each_round = true;
            c.public_size = 20;
        });
        f.run().unwrap();
        f.history().to_vec()
    };
    assert_eq!(run(), run());
}
