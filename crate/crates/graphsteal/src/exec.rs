//! Execution-mode helpers: every data-parallel inner loop in this crate goes
//! through [`map_ordered`] so the same code runs on the rayon pool or
//! sequentially. Without the `parallel` feature the crate builds with no
//! rayon dependency and `Exec::Par` degrades to the sequential path.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Which execution strategy a batch helper should use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    Seq,
    Par,
}

impl Default for Exec {
    fn default() -> Self {
        #[cfg(feature = "parallel")]
        {
            Exec::Par
        }
        #[cfg(not(feature = "parallel"))]
        {
            Exec::Seq
        }
    }
}

/// Order-preserving map over a slice.
///
/// Results come back in input order regardless of mode, so callers that
/// reduce the output sequentially stay bitwise deterministic.
pub fn map_ordered<T, R, F>(mode: Exec, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match mode {
        Exec::Seq => items.iter().map(f).collect(),
        Exec::Par => {
            #[cfg(feature = "parallel")]
            {
                items.par_iter().map(f).collect()
            }
            #[cfg(not(feature = "parallel"))]
            {
                items.iter().map(f).collect()
            }
        }
    }
}

/// Order-preserving indexed map over `0..len`.
pub fn map_range<R, F>(mode: Exec, len: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    match mode {
        Exec::Seq => (0..len).map(f).collect(),
        Exec::Par => {
            #[cfg(feature = "parallel")]
            {
                (0..len).into_par_iter().map(f).collect()
            }
            #[cfg(not(feature = "parallel"))]
            {
                (0..len).map(f).collect()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_ordered_preserves_order() {
        let xs: Vec<usize> = (0..100).collect();
        let seq = map_ordered(Exec::Seq, &xs, |x| x * 3);
        let par = map_ordered(Exec::Par, &xs, |x| x * 3);
        assert_eq!(seq, par);
        assert_eq!(seq[7], 21);
    }

    #[test]
    fn map_range_matches_iter() {
        assert_eq!(map_range(Exec::Par, 5, |i| i + 1), vec![1, 2, 3, 4, 5]);
    }
}
