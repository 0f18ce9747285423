//! Scalar float shims and small statistics helpers.
//!
//! With the `std` feature the shims forward to the intrinsic `f64` methods;
//! without it they route through `libm` so the crate stays `no_std`-clean.
//! Both paths produce identical IEEE-754 results for the operations used
//! here, so feature selection never changes scores.

/// Square root.
#[inline]
pub fn sqrt(x: f64) -> f64 {
    #[cfg(feature = "std")]
    {
        x.sqrt()
    }
    #[cfg(not(feature = "std"))]
    {
        libm::sqrt(x)
    }
}

/// Natural exponential.
#[inline]
pub fn exp(x: f64) -> f64 {
    #[cfg(feature = "std")]
    {
        x.exp()
    }
    #[cfg(not(feature = "std"))]
    {
        libm::exp(x)
    }
}

/// Natural logarithm.
#[inline]
pub fn ln(x: f64) -> f64 {
    #[cfg(feature = "std")]
    {
        x.ln()
    }
    #[cfg(not(feature = "std"))]
    {
        libm::log(x)
    }
}

/// Absolute value.
#[inline]
pub fn abs(x: f64) -> f64 {
    #[cfg(feature = "std")]
    {
        x.abs()
    }
    #[cfg(not(feature = "std"))]
    {
        libm::fabs(x)
    }
}

/// Round-half-up to the nearest integer (0.5 always rounds toward +inf).
///
/// `f64::round` rounds half away from zero, which differs for negative
/// inputs; the cluster budget rule needs the half-up convention.
#[inline]
pub fn round_half_up(x: f64) -> f64 {
    #[cfg(feature = "std")]
    {
        (x + 0.5).floor()
    }
    #[cfg(not(feature = "std"))]
    {
        libm::floor(x + 0.5)
    }
}

/// Arithmetic mean; 0.0 for an empty slice.
pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation (divide by N, not N-1); 0.0 for an empty
/// slice.
pub fn population_std(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64;
    sqrt(var)
}

/// Dot product of equal-length vectors.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Euclidean norm.
pub fn norm(a: &[f64]) -> f64 {
    sqrt(dot(a, a))
}

/// Numerically stable softmax (shift by the max before exponentiating).
pub fn softmax(xs: &[f64]) -> alloc::vec::Vec<f64> {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: alloc::vec::Vec<f64> = xs.iter().map(|&x| exp(x - max)).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}
