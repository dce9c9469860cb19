//! Replica fan-out.
//!
//! Replica `i` is always computed from its own seed material, and results are
//! collected in replica order, so outputs do not depend on the thread count.

use rayon::prelude::*;
use rayon::ThreadPoolBuilder;

/// Environment variable with the preferred number of worker threads.
pub const THREADS_ENV: &str = "LAMBDA_LOOKDOWN_THREADS";

/// Worker count from [`THREADS_ENV`], if set to a positive integer.
pub fn threads_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|&n| n > 0)
}

/// Evaluates `f(0), ..., f(replicas - 1)` on `threads` workers (rayon's
/// default when `None`) and returns the results in index order.
pub fn map_replicas<T, F>(replicas: u64, threads: Option<usize>, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    let run = || (0..replicas).into_par_iter().map(&f).collect();
    match threads {
        Some(1) => (0..replicas).map(&f).collect(),
        Some(n) => match ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(run),
            Err(_) => run(),
        },
        None => run(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let a = map_replicas(100, Some(1), |i| i * i);
        let b = map_replicas(100, Some(4), |i| i * i);
        assert_eq!(a, b);
        assert_eq!(a[7], 49);
    }
}
