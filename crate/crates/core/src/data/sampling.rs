use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use rand::Rng;

/// Result of [`negative_sample`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NegativeSample {
    pub items: Vec<usize>,
    /// The pool was smaller than the request, so items were drawn with replacement.
    pub degenerate: bool,
}

/// Draws `n_neg` items uniformly without replacement from `0..n_items` minus
/// `clicked` (the user's positives in the stage).
///
/// When fewer than `n_neg` items remain the draw falls back to sampling with
/// replacement from what is left (or from all items if nothing is left) and
/// sets `degenerate`.
pub fn negative_sample<R: Rng + ?Sized>(
    clicked: &BTreeSet<usize>,
    n_items: usize,
    n_neg: usize,
    rng: &mut R,
) -> NegativeSample {
    let universe: Vec<usize> = (0..n_items).collect();
    negative_sample_in(clicked, &universe, n_neg, rng)
}

/// [`negative_sample`] restricted to the sorted, distinct candidates in `universe`.
pub fn negative_sample_in<R: Rng + ?Sized>(
    clicked: &BTreeSet<usize>,
    universe: &[usize],
    n_neg: usize,
    rng: &mut R,
) -> NegativeSample {
    let n = universe.len();
    let excluded = clicked.iter().filter(|i| universe.binary_search(i).is_ok()).count();
    let pool_size = n - excluded;
    if n == 0 || n_neg == 0 {
        return NegativeSample {
            items: Vec::new(),
            degenerate: n_neg > 0,
        };
    }
    if pool_size < n_neg {
        let pool: Vec<usize> = if pool_size == 0 {
            universe.to_vec()
        } else {
            universe.iter().copied().filter(|i| !clicked.contains(i)).collect()
        };
        let items = (0..n_neg).map(|_| pool[rng.random_range(0..pool.len())]).collect();
        return NegativeSample { items, degenerate: true };
    }
    if 2 * n_neg <= pool_size && 2 * excluded <= n {
        // Rejection is cheap while the acceptance rate stays above one half.
        let mut items = Vec::with_capacity(n_neg);
        while items.len() < n_neg {
            let i = universe[rng.random_range(0..n)];
            if !clicked.contains(&i) && !items.contains(&i) {
                items.push(i);
            }
        }
        return NegativeSample { items, degenerate: false };
    }
    let pool: Vec<usize> = universe.iter().copied().filter(|i| !clicked.contains(i)).collect();
    let items = rand::seq::index::sample(rng, pool.len(), n_neg)
        .into_iter()
        .map(|k| pool[k])
        .collect();
    NegativeSample { items, degenerate: false }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pool_equals_request() {
        let clicked: BTreeSet<usize> = [0].into_iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = negative_sample(&clicked, 5, 4, &mut rng);
        assert!(!s.degenerate);
        s.items.sort_unstable();
        assert_eq!(s.items, [1, 2, 3, 4]);
    }

    #[test]
    fn everything_clicked_is_degenerate() {
        let clicked: BTreeSet<usize> = (0..3).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = negative_sample(&clicked, 3, 4, &mut rng);
        assert!(s.degenerate);
        assert_eq!(s.items.len(), 4);
    }

    #[test]
    fn seeded_draws_repeat() {
        let clicked: BTreeSet<usize> = [3, 7].into_iter().collect();
        let a = negative_sample(&clicked, 100, 4, &mut ChaCha8Rng::seed_from_u64(9));
        let b = negative_sample(&clicked, 100, 4, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn universe_bounds_the_pool() {
        let clicked: BTreeSet<usize> = [2].into_iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let s = negative_sample_in(&clicked, &[1, 2, 5, 8, 9], 3, &mut rng);
            assert!(s.items.iter().all(|i| [1, 5, 8, 9].contains(i)));
        }
    }
}
