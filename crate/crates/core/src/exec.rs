//! Index-keyed parallel map with a sequential fallback.
//!
//! With the `parallel` feature, work is spread over a rayon pool; without it
//! (or with one worker) it runs in a plain loop. Output order always follows
//! the input index, so results are identical either way.

/// Requested degree of parallelism.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Workers {
    /// Use the global rayon pool.
    #[default]
    Auto,
    /// Exactly this many threads; `Fixed(1)` runs sequentially.
    Fixed(usize),
}

impl Workers {
    pub fn from_count(count: Option<usize>) -> Self {
        match count {
            None | Some(0) => Workers::Auto,
            Some(n) => Workers::Fixed(n),
        }
    }

    pub fn is_sequential(self) -> bool {
        matches!(self, Workers::Fixed(1)) || !cfg!(feature = "parallel")
    }
}

/// Evaluates `f(0..count)` and returns the results in index order.
pub fn map_indexed<T, F>(count: usize, workers: Workers, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if workers.is_sequential() {
        return (0..count).map(f).collect();
    }
    parallel::map_indexed(count, workers, f)
}

#[cfg(feature = "parallel")]
mod parallel {
    use super::Workers;
    use rayon::prelude::*;

    pub(super) fn map_indexed<T, F>(count: usize, workers: Workers, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match workers {
            Workers::Auto => (0..count).into_par_iter().map(f).collect(),
            Workers::Fixed(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
                Ok(pool) => pool.install(|| (0..count).into_par_iter().map(&f).collect()),
                Err(_) => (0..count).map(f).collect(),
            },
        }
    }
}

#[cfg(not(feature = "parallel"))]
mod parallel {
    use super::Workers;

    pub(super) fn map_indexed<T, F>(count: usize, _workers: Workers, f: F) -> Vec<T>
    where
        F: Fn(usize) -> T,
    {
        (0..count).map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let seq = map_indexed(100, Workers::Fixed(1), |i| i * i);
        let par = map_indexed(100, Workers::Fixed(4), |i| i * i);
        let auto = map_indexed(100, Workers::Auto, |i| i * i);
        assert_eq!(seq, par);
        assert_eq!(seq, auto);
    }
}
