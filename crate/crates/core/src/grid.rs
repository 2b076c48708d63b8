use crate::error::{Error, Result};

/// `n` evenly spaced points from `lo` to `hi`, both endpoints exact.
pub fn uniform_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::GridTooSmall(n));
    }
    if lo.is_nan() || hi.is_nan() || lo >= hi {
        return Err(Error::InvalidArgument(format!(
            "grid bounds must satisfy lo < hi, got [{lo}, {hi}]"
        )));
    }
    let last = (n - 1) as f64;
    let mut grid: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * (i as f64 / last)).collect();
    grid[n - 1] = hi;
    Ok(grid)
}
