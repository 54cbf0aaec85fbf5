use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::seed::{rng_for, tag};

/// Number of clients drawn per round: `⌈q·N⌉`, at least one.
pub fn sample_count(n: usize, rate: f64) -> usize {
    // guard against 0.1·100 = 10.000000000000002 style rounding
    (((rate * n as f64) - 1e-9).ceil() as usize).clamp(1, n)
}

/// Draws `⌈q·N⌉` clients uniformly without replacement for `round`, sorted by id.
pub fn sample_clients(n: usize, rate: f64, round: usize, seed: u64) -> Result<Vec<usize>> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::Configuration(format!(
            "sample rate must be in (0, 1], got {rate}"
        )));
    }
    let k = sample_count(n, rate);
    if k == n {
        return Ok((0..n).collect());
    }
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut rng_for(seed, &[tag::SAMPLING, round as u64]));
    ids.truncate(k);
    ids.sort_unstable();
    Ok(ids)
}
