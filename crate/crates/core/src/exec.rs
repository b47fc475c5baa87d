//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (on by default) [`Parallelism::Parallel`] runs
//! on the rayon global pool. Without it, both modes run sequentially. Results
//! are always returned in input order, so reductions over them are bitwise
//! reproducible regardless of the mode.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parallelism {
    #[default]
    Parallel,
    Sequential,
}

impl Parallelism {
    /// Whether work will actually fan out on this build.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Parallelism::Parallel
    }
}

pub fn map<T, R, F>(mode: Parallelism, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    let _ = mode;
    items.iter().map(f).collect()
}

pub fn map_indexed<T, R, F>(mode: Parallelism, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        use rayon::prelude::*;
        return items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let _ = mode;
    items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
}

/// Fallible variant of [`map`]; the first error in input order wins.
pub fn try_map<T, R, E, F>(mode: Parallelism, items: &[T], f: F) -> Result<Vec<R>, E>
where
    T: Sync,
    R: Send,
    E: Send,
    F: Fn(&T) -> Result<R, E> + Sync + Send,
{
    map(mode, items, f).into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree_and_preserve_order() {
        let xs: Vec<u64> = (0..1000).collect();
        let a = map(Parallelism::Parallel, &xs, |x| x * x);
        let b = map(Parallelism::Sequential, &xs, |x| x * x);
        assert_eq!(a, b);
        assert_eq!(a[10], 100);
        let c = map_indexed(Parallelism::Parallel, &xs, |i, x| i as u64 + x);
        assert_eq!(c[999], 1998);
    }

    #[test]
    fn try_map_reports_first_error() {
        let xs = [1, 2, 3, 4];
        let r: Result<Vec<i32>, i32> =
            try_map(Parallelism::Parallel, &xs, |&x| if x >= 3 { Err(x) } else { Ok(x) });
        assert_eq!(r, Err(3));
    }
}
