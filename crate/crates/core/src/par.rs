//! Order-preserving parallel map over indices.

/// Evaluate `f(0..n)` on up to `workers` scoped threads. Results come back
/// in index order, so the output does not depend on the worker count as
/// long as `f` derives any randomness from its index.
pub fn par_map<T: Send, F: Fn(usize) -> T + Sync>(workers: usize, n: usize, f: F) -> Vec<T> {
    let workers = workers.max(1).min(n.max(1));
    if workers == 1 {
        return (0..n).map(&f).collect();
    }
    let chunk = n.div_ceil(workers);
    let f = &f;
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let lo = w * chunk;
                let hi = ((w + 1) * chunk).min(n);
                s.spawn(move || (lo..hi).map(f).collect::<Vec<T>>())
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}

/// Worker count from the machine, at least one.
pub fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_independent_of_workers() {
        let a = par_map(1, 37, |i| i * i);
        let b = par_map(4, 37, |i| i * i);
        assert_eq!(a, b);
        assert!(par_map(3, 0, |i| i).is_empty());
    }
}
