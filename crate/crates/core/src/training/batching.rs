use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Width of a length bucket in tokens (STFT frames): one second of audio.
pub const BUCKET_TOKENS: usize = 100;

/// Ordered batches of item indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    pub batches: Vec<Vec<usize>>,
}

impl BatchPlan {
    pub fn len(&self) -> usize {
        self.batches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }
}

/// Seeded shuffle, stable sort into coarse length buckets, greedy filling
/// up to `max_tokens`, then a seeded shuffle of the batch order.
/// `items` are `(id, token_count)` pairs.
pub fn bucket_batches(items: &[(usize, usize)], max_tokens: usize, seed: u64) -> Result<BatchPlan> {
    if let Some(&(id, n)) = items.iter().find(|&&(_, n)| n > max_tokens || n == 0) {
        return Err(Error::invalid(format!(
            "item {id} has {n} tokens, batches hold 1..={max_tokens}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<(usize, usize)> = items.to_vec();
    order.shuffle(&mut rng);
    order.sort_by_key(|&(_, n)| n / BUCKET_TOKENS);

    let mut batches = Vec::new();
    let mut current = Vec::new();
    let mut used = 0;
    for (id, n) in order {
        if used + n > max_tokens {
            batches.push(std::mem::take(&mut current));
            used = 0;
        }
        current.push(id);
        used += n;
    }
    if !current.is_empty() {
        batches.push(current);
    }
    batches.shuffle(&mut rng);
    Ok(BatchPlan { batches })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn equal_items_fill_three_per_batch() {
        let items: Vec<_> = (0..10).map(|i| (i, 300)).collect();
        let plan = bucket_batches(&items, 1000, 5).unwrap();
        let mut sizes: Vec<usize> = plan.batches.iter().map(Vec::len).collect();
        sizes.sort();
        assert_eq!(sizes, vec![1, 3, 3, 3]);
    }

    #[test]
    fn single_item_and_errors() {
        let plan = bucket_batches(&[(7, 40)], 100, 0).unwrap();
        assert_eq!(plan.batches, vec![vec![7]]);
        assert!(bucket_batches(&[(7, 400)], 100, 0).is_err());
        assert!(bucket_batches(&[], 100, 0).unwrap().is_empty());
    }

    #[test]
    fn deterministic_per_seed() {
        let items: Vec<_> = (0..30).map(|i| (i, 100 + 37 * i % 300)).collect();
        assert_eq!(
            bucket_batches(&items, 800, 3).unwrap(),
            bucket_batches(&items, 800, 3).unwrap()
        );
    }

    proptest! {
        #[test]
        fn plan_is_a_partition_within_budget(
            lens in proptest::collection::vec(1usize..1200, 0..60),
            extra in 0usize..500,
            seed in any::<u64>(),
        ) {
            let max_tokens = lens.iter().copied().max().unwrap_or(1) + extra;
            let items: Vec<_> = lens.iter().copied().enumerate().collect();
            let plan = bucket_batches(&items, max_tokens, seed).unwrap();
            let mut seen = vec![0; items.len()];
            for b in &plan.batches {
                prop_assert!(!b.is_empty());
                prop_assert!(b.iter().map(|&i| lens[i]).sum::<usize>() <= max_tokens);
                for &i in b {
                    seen[i] += 1;
                }
            }
            prop_assert!(seen.iter().all(|&c| c == 1));
        }
    }
}
