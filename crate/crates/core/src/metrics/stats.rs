use serde::{Deserialize, Serialize};

/// Median and quartiles.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub median: f64,
    pub p25: f64,
    pub p75: f64,
}

impl Summary {
    /// `(p75 - p25) / median`, or 0 for a zero median.
    pub fn relative_spread(&self) -> f64 {
        if self.median == 0.0 {
            0.0
        } else {
            (self.p75 - self.p25) / self.median
        }
    }
}

fn median_sorted(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

/// Quartiles by the median-inclusive method: for an odd count the median
/// belongs to both halves. NaNs are ignored; an empty input gives zeros.
pub fn summarize(xs: &[f64]) -> Summary {
    let mut v: Vec<f64> = xs.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return Summary::default();
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 1 {
        return Summary {
            median: v[0],
            p25: v[0],
            p75: v[0],
        };
    }
    let half = n.div_ceil(2);
    Summary {
        median: median_sorted(&v),
        p25: median_sorted(&v[..half]),
        p75: median_sorted(&v[n - half..]),
    }
}
