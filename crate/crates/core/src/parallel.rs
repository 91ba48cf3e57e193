//! Data-parallel fan-out over sentences.
//!
//! Evaluation metrics are pure per-sentence maps; with the `parallel` feature
//! they fan out via rayon and join into an ordered `Vec`, so reductions stay
//! deterministic regardless of thread count. Without the feature everything
//! runs sequentially through the same entry point.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `items`, in parallel when the `parallel` feature is enabled.
/// Output order always matches input order.
pub fn par_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Sequential twin of [`par_map`]; exists so benchmarks can compare the two
/// code paths inside one build.
pub fn seq_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn par_and_seq_agree_in_order() {
        let items: Vec<u64> = (0..1000).collect();
        let a = par_map(&items, |x| x * x);
        let b = seq_map(&items, |x| x * x);
        assert_eq!(a, b);
    }
}
