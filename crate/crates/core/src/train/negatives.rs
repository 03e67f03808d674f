use rand::Rng;

use crate::data::{EntityId, Triple};
use crate::rng::{stream_rng, Stream};

use super::Mode;

/// `n_neg` replacement entities drawn uniformly from the `num_entities - 1`
/// entities other than the corrupted side. Duplicates are allowed and true
/// triples are not filtered out.
///
/// `keys` identify the draw (step, position in batch) within the negative stream.
pub fn sample_negatives(
    pos: &Triple,
    n_neg: usize,
    mode: Mode,
    num_entities: usize,
    seed: u64,
    keys: &[u64],
) -> Vec<EntityId> {
    assert!(num_entities > 1, "negative sampling needs at least two entities");
    let original = match mode {
        Mode::Head => pos.head,
        Mode::Tail => pos.tail,
    };
    let mut full = keys.to_vec();
    full.push(mode.key());
    let mut rng = stream_rng(seed, Stream::Negatives, &full);
    (0..n_neg)
        .map(|_| {
            let c = rng.gen_range(0..num_entities as u32 - 1);
            if c >= original {
                c + 1
            } else {
                c
            }
        })
        .collect()
}

/// `w_j = exp(α(γ − d_j)) / Σ_k exp(α(γ − d_k))`. The margin cancels, so it is
/// computed as a max-shifted softmax of `−α d`.
pub fn adversarial_weights(distances: &[f64], temperature: f64) -> Vec<f64> {
    if distances.is_empty() {
        return Vec::new();
    }
    let logits: Vec<f64> = distances.iter().map(|d| -temperature * d).collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / total).collect()
}
