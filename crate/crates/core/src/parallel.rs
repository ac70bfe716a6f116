//! Bounded data parallelism for per-pixel loops.
//!
//! The thread count is capped by the `OT_APPEARANCE_THREADS` environment
//! variable (0 or unset means auto). Work is split into contiguous chunks, so
//! results are identical regardless of the number of threads.

/// Effective thread cap from `OT_APPEARANCE_THREADS`.
pub fn thread_cap() -> usize {
    let auto = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    match std::env::var("OT_APPEARANCE_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(0) | Err(_) => auto,
            Ok(n) => n,
        },
        Err(_) => auto,
    }
}

/// Apply `f` to disjoint contiguous chunks of `out`, one worker per chunk.
///
/// Chunk boundaries fall on multiples of `granularity` (e.g. 3 for
/// interleaved RGB), and `f` receives each chunk with the index of its first
/// element. At most `thread_cap()` workers run.
pub fn for_each_chunk_mut<T: Send>(
    out: &mut [T],
    granularity: usize,
    f: impl Fn(&mut [T], usize) + Sync,
) {
    let granularity = granularity.max(1);
    let len = out.len();
    let workers = thread_cap().min(len / granularity).max(1);
    if workers == 1 {
        f(out, 0);
        return;
    }
    let groups = len / granularity;
    let groups_per_worker = groups.div_ceil(workers);
    let chunk_len = groups_per_worker * granularity;
    std::thread::scope(|scope| {
        let mut start = 0;
        for chunk in out.chunks_mut(chunk_len) {
            let offset = start;
            start += chunk.len();
            let f = &f;
            scope.spawn(move || f(chunk, offset));
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunked_fill_matches_sequential() {
        let mut out = vec![0usize; 97];
        for_each_chunk_mut(&mut out, 10, |chunk, base| {
            for (i, v) in chunk.iter_mut().enumerate() {
                *v = base + i;
            }
        });
        for (i, v) in out.iter().enumerate() {
            assert_eq!(*v, i);
        }
    }

    #[test]
    fn boundaries_respect_granularity() {
        let mut out = vec![0usize; 30];
        for_each_chunk_mut(&mut out, 3, |chunk, base| {
            assert_eq!(base % 3, 0);
            assert_eq!(chunk.len() % 3, 0);
            for v in chunk.iter_mut() {
                *v = 1;
            }
        });
        assert!(out.iter().all(|&v| v == 1));
    }
}
