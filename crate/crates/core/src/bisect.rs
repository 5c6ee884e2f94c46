use crate::error::Result;

/// Final bracket of a monotone-predicate bisection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bracket {
    /// Largest point known to fail the predicate.
    pub lo: f64,
    /// Smallest point known to satisfy it.
    pub hi: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl Bracket {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Shrinks `[lo, hi]` around the switch point of a predicate that is false
/// at `lo` and true at `hi` and monotone in between. Stops once the width is
/// at most `tol` or after `max_iter` halvings.
pub fn bisect<F>(mut lo: f64, mut hi: f64, tol: f64, max_iter: usize, mut holds: F) -> Result<Bracket>
where
    F: FnMut(f64) -> Result<bool>,
{
    let mut iterations = 0;
    while hi - lo > tol && iterations < max_iter {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break; // no representable midpoint left
        }
        if holds(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
        iterations += 1;
    }
    let converged = hi - lo <= tol || iterations < max_iter;
    if !converged {
        log::warn!("bisection hit the iteration cap with bracket width {}", hi - lo);
    }
    Ok(Bracket {
        lo,
        hi,
        iterations,
        converged,
    })
}
