//! Exact binomial coefficients for the supported moment orders.

use crate::moments::MAX_HALF_ORDER;

const MAX_ORDER: usize = 2 * MAX_HALF_ORDER;

const fn pascal() -> [[u64; MAX_ORDER + 1]; MAX_ORDER + 1] {
    let mut t = [[0u64; MAX_ORDER + 1]; MAX_ORDER + 1];
    let mut l = 0;
    while l <= MAX_ORDER {
        t[l][0] = 1;
        let mut j = 1;
        while j <= l {
            t[l][j] = t[l - 1][j - 1] + t[l - 1][j];
            j += 1;
        }
        l += 1;
    }
    t
}

static TABLE: [[u64; MAX_ORDER + 1]; MAX_ORDER + 1] = pascal();

/// `C(l, j)` for `j <= l <= 12`.
#[inline]
pub fn binomial(l: usize, j: usize) -> f64 {
    TABLE[l][j] as f64
}
