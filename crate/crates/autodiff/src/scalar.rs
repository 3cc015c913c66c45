//! Scalar abstraction over f32/f64 plus exact order-independent summation.

use num_traits::{Float, NumAssignOps};
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Element type of the engine: IEEE binary32 or binary64.
pub trait Scalar:
    Float + NumAssignOps + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Dtype tag stored in checkpoints.
    const DTYPE: &'static str;

    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
    fn to_le_bytes_vec(self) -> Vec<u8>;
    fn from_le_slice(bytes: &[u8]) -> Self;
    const BYTES: usize;
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";
    const BYTES: usize = 4;

    fn from_f64(x: f64) -> Self {
        x as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

    fn to_le_bytes_vec(self) -> Vec<u8> {
        self.to_le_bytes().to_vec()
    }

    fn from_le_slice(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";
    const BYTES: usize = 8;

    fn from_f64(x: f64) -> Self {
        x
    }

    fn as_f64(self) -> f64 {
        self
    }

    fn to_le_bytes_vec(self) -> Vec<u8> {
        self.to_le_bytes().to_vec()
    }

    fn from_le_slice(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

/// Correctly rounded sum of a sequence (Shewchuk partials, as in fsum).
/// The result depends only on the multiset of addends, never their order,
/// which is what makes point-permutation invariance exact rather than
/// approximate. Falls back to naive summation when non-finite values
/// appear so that overflow and NaN still propagate to the caller.
pub fn exact_sum<S: Scalar>(xs: impl IntoIterator<Item = S> + Clone) -> S {
    let mut partials: Vec<S> = Vec::with_capacity(8);
    for x in xs.clone() {
        if !x.is_finite() {
            return xs.into_iter().fold(S::zero(), |a, b| a + b);
        }
        let mut x = x;
        let mut i = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != S::zero() {
                partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        partials.truncate(i);
        partials.push(x);
    }

    // Final reduction with round-half-even correction, largest partial last.
    let mut n = partials.len();
    if n == 0 {
        return S::zero();
    }
    n -= 1;
    let mut hi = partials[n];
    let mut lo = S::zero();
    while n > 0 {
        let x = hi;
        n -= 1;
        let y = partials[n];
        hi = x + y;
        let yr = hi - x;
        lo = y - yr;
        if lo != S::zero() {
            break;
        }
    }
    if n > 0
        && ((lo < S::zero() && partials[n - 1] < S::zero())
            || (lo > S::zero() && partials[n - 1] > S::zero()))
    {
        let y = lo + lo;
        let x = hi + y;
        if y == x - hi {
            hi = x;
        }
    }
    hi
}

/// Exact sum over a slice (the common case, avoids cloning iterators).
pub fn exact_sum_slice<S: Scalar>(xs: &[S]) -> S {
    exact_sum(xs.iter().copied())
}
