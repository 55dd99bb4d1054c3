//! Deterministic fan-out across corpus images. Work items are independent
//! and results land in index order, so the thread count (capped by the
//! MASKEXPLAIN_THREADS environment variable) never changes any output.

use std::thread;

use crate::error::CliResult;

pub fn thread_count() -> usize {
    if let Ok(v) = std::env::var("MASKEXPLAIN_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            if n >= 1 {
                return n;
            }
        }
    }
    thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Applies `f` to `0..n`, splitting the range into contiguous chunks across
/// worker threads. Results are positioned by index; the first error (lowest
/// index) wins.
pub fn map_indexed<T, F>(n: usize, f: F) -> CliResult<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> CliResult<T> + Sync,
{
    let workers = thread_count().min(n.max(1));
    if workers <= 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    let mut slots: Vec<Option<CliResult<T>>> = (0..n).map(|_| None).collect();
    let chunk = n.div_ceil(workers);
    thread::scope(|scope| {
        for (w, piece) in slots.chunks_mut(chunk).enumerate() {
            let f = &f;
            scope.spawn(move || {
                for (off, slot) in piece.iter_mut().enumerate() {
                    *slot = Some(f(w * chunk + off));
                }
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.expect("every index was assigned to a worker"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn results_land_in_index_order() {
        let out = map_indexed(25, |i| Ok(i * i)).unwrap();
        assert_eq!(out, (0..25).map(|i| i * i).collect::<Vec<_>>());
    }

    #[test]
    fn the_lowest_index_error_wins() {
        let err = map_indexed(10, |i| {
            if i >= 4 {
                Err(crate::error::CliError::runtime(format!("boom {i}")))
            } else {
                Ok(i)
            }
        })
        .unwrap_err();
        assert_eq!(err.to_string(), "boom 4");
    }

    #[test]
    fn empty_ranges_work() {
        let out: Vec<usize> = map_indexed(0, |i| Ok(i)).unwrap();
        assert!(out.is_empty());
    }
}
