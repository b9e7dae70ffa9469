use serde::{Deserialize, Serialize};

use crate::{clamp_p, StatsError};

/// A 2×2 table laid out as `[[a, b], [c, d]]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ContingencyTable2x2 {
    pub a: u64,
    pub b: u64,
    pub c: u64,
    pub d: u64,
}

impl ContingencyTable2x2 {
    pub fn new(a: u64, b: u64, c: u64, d: u64) -> Self {
        Self { a, b, c, d }
    }

    pub fn from_rows(rows: [[u64; 2]; 2]) -> Self {
        Self::new(rows[0][0], rows[0][1], rows[1][0], rows[1][1])
    }

    pub fn swap_rows(self) -> Self {
        Self::new(self.c, self.d, self.a, self.b)
    }

    pub fn swap_cols(self) -> Self {
        Self::new(self.b, self.a, self.d, self.c)
    }
}

const RELATIVE_TIE: f64 = 1e-7;

/// Two-sided Fisher exact test by the point-probability method: the p value
/// sums every table with the observed margins whose hypergeometric
/// probability does not exceed the observed one.
pub fn fisher_exact(table: ContingencyTable2x2) -> Result<f64, StatsError> {
    let ContingencyTable2x2 { a, b, c, d } = table;
    let r1 = a + b;
    let r2 = c + d;
    let c1 = a + c;
    let n = r1 + r2;
    if n == 0 {
        return Err(StatsError::AllZeroMargin);
    }
    let lo = c1.saturating_sub(r2);
    let hi = r1.min(c1);
    if lo == hi {
        return Ok(1.0);
    }

    // Unnormalised weights relative to the mode, built by the ratio
    // P(k+1)/P(k) = (r1-k)(c1-k) / ((k+1)(r2-c1+k+1)) so nothing overflows.
    let span = (hi - lo + 1) as usize;
    let mut w = vec![0.0f64; span];
    let mode = (((r1 + 1) as f64 * (c1 + 1) as f64) / (n + 2) as f64).floor() as u64;
    let mode = mode.clamp(lo, hi);
    w[(mode - lo) as usize] = 1.0;
    for k in mode..hi {
        let ratio = ((r1 - k) as f64 * (c1 - k) as f64) / ((k + 1) as f64 * (r2 + k + 1 - c1) as f64);
        w[(k + 1 - lo) as usize] = w[(k - lo) as usize] * ratio;
    }
    for k in (lo + 1..=mode).rev() {
        // P(k-1)/P(k) = k (r2-c1+k) / ((r1-k+1)(c1-k+1))
        let ratio = (k as f64 * (r2 + k - c1) as f64) / ((r1 - k + 1) as f64 * (c1 - k + 1) as f64);
        w[(k - 1 - lo) as usize] = w[(k - lo) as usize] * ratio;
    }

    let observed = w[(a - lo) as usize];
    let cutoff = observed * (1.0 + RELATIVE_TIE);
    let total: f64 = w.iter().sum();
    let tail: f64 = w.iter().filter(|&&x| x <= cutoff).sum();
    Ok(clamp_p(tail / total))
}
