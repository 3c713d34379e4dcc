//! Data-parallel helpers. With the `parallel` feature these dispatch to rayon,
//! otherwise they fall back to plain sequential iterators. Both paths preserve
//! input order in their output.

/// Apply `$f` to each element of `$slice`, collecting into a `Vec`.
macro_rules! par_map {
    ($slice:expr, $f:expr) => {{
        #[cfg(feature = "parallel")]
        {
            use rayon::iter::{IntoParallelRefIterator, ParallelIterator};
            $slice.par_iter().map($f).collect::<Vec<_>>()
        }
        #[cfg(not(feature = "parallel"))]
        {
            $slice.iter().map($f).collect::<Vec<_>>()
        }
    }};
}

/// Fallible map over `$slice`, collecting into `Result<Vec<_>>`.
/// The first error in input order is not guaranteed under `parallel`.
macro_rules! par_try_map {
    ($slice:expr, $f:expr) => {{
        #[cfg(feature = "parallel")]
        {
            use rayon::iter::{IntoParallelRefIterator, ParallelIterator};
            $slice.par_iter().map($f).collect::<$crate::Result<Vec<_>>>()
        }
        #[cfg(not(feature = "parallel"))]
        {
            $slice.iter().map($f).collect::<$crate::Result<Vec<_>>>()
        }
    }};
}

pub(crate) use par_map;
pub(crate) use par_try_map;

/// Whether this build dispatches work onto the rayon pool.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
