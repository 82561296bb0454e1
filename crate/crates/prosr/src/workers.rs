//! Deterministic worker fan-out: inputs are split into contiguous chunks,
//! mapped on scoped threads, and reassembled in input order, so results are
//! identical for any worker count.

/// Maps `f` over `items` using up to `workers` threads, preserving order.
pub fn par_map<T, U, F>(items: &[T], workers: usize, f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync,
{
    let workers = workers.max(1).min(items.len().max(1));
    if workers == 1 {
        return items.iter().map(f).collect();
    }
    let chunk_size = items.len().div_ceil(workers);
    let mut results: Vec<Vec<U>> = Vec::new();
    std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk_size)
            .map(|chunk| scope.spawn(|| chunk.iter().map(&f).collect::<Vec<U>>()))
            .collect();
        results = handles.into_iter().map(|h| h.join().expect("worker panicked")).collect();
    });
    results.into_iter().flatten().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_order_for_any_worker_count() {
        let items: Vec<u64> = (0..257).collect();
        let expect: Vec<u64> = items.iter().map(|v| v * v).collect();
        for workers in [1, 2, 3, 4, 7, 64, 1000] {
            assert_eq!(par_map(&items, workers, |v| v * v), expect);
        }
    }

    #[test]
    fn handles_empty_input() {
        let empty: Vec<u32> = Vec::new();
        assert_eq!(par_map(&empty, 4, |v| v + 1), Vec::<u32>::new());
    }
}
