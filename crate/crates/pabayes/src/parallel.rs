//! Deterministic per-item parallelism.
//!
//! Work items are split into contiguous index ranges across scoped threads;
//! each result lands in its input slot, so the output order and every value
//! are independent of the job count (items must be pure functions of their
//! index and payload).

pub fn parallel_map<T, R, F>(jobs: usize, items: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(usize, T) -> R + Sync,
{
    let jobs = jobs.max(1);
    let n = items.len();
    if jobs == 1 || n <= 1 {
        return items.into_iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let chunk = n.div_ceil(jobs);
    let mut slots: Vec<Option<R>> = (0..n).map(|_| None).collect();
    std::thread::scope(|scope| {
        let f = &f;
        let mut handles = Vec::new();
        let mut rest = items;
        let mut base = 0usize;
        while !rest.is_empty() {
            let take = chunk.min(rest.len());
            let tail = rest.split_off(take);
            let mine = rest;
            rest = tail;
            let start = base;
            base += take;
            handles.push(scope.spawn(move || {
                mine.into_iter()
                    .enumerate()
                    .map(|(i, t)| (start + i, f(start + i, t)))
                    .collect::<Vec<_>>()
            }));
        }
        for handle in handles {
            for (i, r) in handle.join().expect("worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots.into_iter().map(|s| s.expect("slot filled")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn results_keep_input_order_for_any_job_count() {
        let items: Vec<u64> = (0..37).collect();
        let serial = parallel_map(1, items.clone(), |i, v| (i as u64) * 1000 + v * v);
        for jobs in [2, 3, 8, 64] {
            let parallel = parallel_map(jobs, items.clone(), |i, v| (i as u64) * 1000 + v * v);
            assert_eq!(serial, parallel, "jobs={jobs}");
        }
    }

    #[test]
    fn empty_and_singleton() {
        let empty: Vec<u32> = vec![];
        assert!(parallel_map(4, empty, |_, v: u32| v).is_empty());
        assert_eq!(parallel_map(4, vec![9], |i, v| (i, v)), vec![(0, 9)]);
    }
}
