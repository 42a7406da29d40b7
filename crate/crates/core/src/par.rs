//! Data-parallel evaluation over independent samples.
//!
//! With the `parallel` feature (default) work is spread over a rayon pool;
//! without it, or with [`Execution::Sequential`], a plain loop is used.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    #[default]
    Parallel,
    Sequential,
}

/// Caps the global pool at `RELU2ATTN_THREADS` workers when the variable is set.
pub fn configure_threads_from_env() {
    #[cfg(feature = "parallel")]
    if let Some(k) = std::env::var("RELU2ATTN_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|k| *k > 0)
    {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(k).build_global();
    }
}

pub fn map<T, F>(len: usize, exec: Execution, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec == Execution::Parallel {
        use rayon::prelude::*;
        return (0..len).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..len).map(f).collect()
}

/// Maximum of `f(i)` over `0..len`; NaN is propagated as the maximum.
pub fn max<F>(len: usize, exec: Execution, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    map(len, exec, f).into_iter().fold(0.0, |m, v| if v.is_nan() || m.is_nan() { f64::NAN } else { m.max(v) })
}
