//! Worker-pool plumbing shared by the clip-parallel commands.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use freqdyn_core::error::config_err;
use freqdyn_core::Result;

/// Resolve the worker count: `--threads`, then FREQDYN_THREADS, then 1.
pub fn resolve_threads(flag: Option<usize>) -> Result<usize> {
    let n = match flag {
        Some(n) => n,
        None => match std::env::var("FREQDYN_THREADS") {
            Ok(v) => v
                .parse::<usize>()
                .map_err(|_| config_err(format!("FREQDYN_THREADS {v:?} is not a number")))?,
            Err(_) => 1,
        },
    };
    if n == 0 {
        return Err(config_err("thread count must be >= 1"));
    }
    Ok(n)
}

/// Order-preserving parallel map over independent items. Results land at
/// their input index, so the output is deterministic for any worker count.
pub fn par_map<T, R, F>(items: &[T], threads: usize, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync,
{
    if threads <= 1 || items.len() <= 1 {
        return items.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<R>>>> =
        items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..threads.min(items.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                *slots[i].lock().unwrap() = Some(f(&items[i]));
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().unwrap().expect("worker filled every claimed slot"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn par_map_matches_serial_in_order() {
        let items: Vec<usize> = (0..100).collect();
        let serial = par_map(&items, 1, |&x| Ok(x * x)).unwrap();
        let parallel = par_map(&items, 4, |&x| Ok(x * x)).unwrap();
        assert_eq!(serial, parallel);
        assert_eq!(serial[7], 49);
    }

    #[test]
    fn par_map_surfaces_errors() {
        let items = vec![1usize, 2, 3];
        let r = par_map(&items, 2, |&x| {
            if x == 2 {
                Err(freqdyn_core::Error::Numeric("boom".into()))
            } else {
                Ok(x)
            }
        });
        assert!(r.is_err());
    }

    #[test]
    fn thread_resolution_prefers_the_flag() {
        assert_eq!(resolve_threads(Some(3)).unwrap(), 3);
        assert!(resolve_threads(Some(0)).is_err());
    }
}
