//! Chebyshev polynomials of the first kind.
//!
//! Everything here is evaluated with the three-term recurrence
//! `T_j(x) = 2x T_{j-1}(x) - T_{j-2}(x)`, differentiated term by term, so the
//! same code path is valid inside and outside `[-1, 1]`.

use crate::error::{Error, Result};

/// Degrees above this are still evaluated, but no caller in this crate goes near it.
pub const MAX_DEGREE: usize = 10_000;

/// `T_j(x)` together with its first two derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChebTriple {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

/// Evaluates `T_degree`, `T_degree'` and `T_degree''` at `x` in one fused pass.
pub fn cheb_eval(degree: usize, x: f64) -> Result<ChebTriple> {
    if !x.is_finite() {
        return Err(Error::invalid(format!("Chebyshev argument must be finite, got {x}")));
    }
    Ok(cheb_eval_unchecked(degree, x))
}

pub(crate) fn cheb_eval_unchecked(degree: usize, x: f64) -> ChebTriple {
    // (T_{j-2}, T_{j-1}) and their derivatives.
    let (mut t0, mut t1) = (1.0, x);
    let (mut d0, mut d1) = (0.0, 1.0);
    let (mut s0, mut s1) = (0.0, 0.0);
    if degree == 0 {
        return ChebTriple { value: 1.0, d1: 0.0, d2: 0.0 };
    }
    for _ in 2..=degree {
        let t2 = 2.0 * x * t1 - t0;
        let d2 = 2.0 * t1 + 2.0 * x * d1 - d0;
        let s2 = 4.0 * d1 + 2.0 * x * s1 - s0;
        t0 = t1;
        t1 = t2;
        d0 = d1;
        d1 = d2;
        s0 = s1;
        s1 = s2;
    }
    ChebTriple { value: t1, d1, d2: s1 }
}

/// Divided difference `(T_degree(x) - T_degree(y)) / (x - y)`, continuously
/// extended by `T_degree'(y)` at `x = y`.
///
/// Uses `D_j = 2x D_{j-1} + 2 T_{j-1}(y) - D_{j-2}` with `D_0 = 0`, `D_1 = 1`,
/// which never subtracts nearly equal polynomial values.
pub fn cheb_divided_difference(degree: usize, x: f64, y: f64) -> f64 {
    if degree == 0 {
        return 0.0;
    }
    let (mut dd0, mut dd1) = (0.0, 1.0);
    let (mut ty0, mut ty1) = (1.0, y);
    for _ in 2..=degree {
        let dd2 = 2.0 * x * dd1 + 2.0 * ty1 - dd0;
        let ty2 = 2.0 * y * ty1 - ty0;
        dd0 = dd1;
        dd1 = dd2;
        ty0 = ty1;
        ty1 = ty2;
    }
    dd1
}
