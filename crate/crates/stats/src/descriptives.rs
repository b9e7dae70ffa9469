use serde::{Deserialize, Serialize};

use crate::grouped::mean;
use crate::StatsError;

/// Mean with sample standard deviation and standard error of the mean.
/// `sd` and `sem` are `None` when fewer than two values are available.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Descriptives {
    pub n: usize,
    pub mean: f64,
    pub sd: Option<f64>,
    pub sem: Option<f64>,
}

pub fn descriptives(values: &[f64]) -> Result<Descriptives, StatsError> {
    if values.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    let n = values.len();
    let m = mean(values);
    let (sd, sem) = if n >= 2 {
        let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
        let sd = (ss / (n - 1) as f64).sqrt();
        (Some(sd), Some(sd / (n as f64).sqrt()))
    } else {
        (None, None)
    };
    Ok(Descriptives { n, mean: m, sd, sem })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn constant_values_have_zero_spread() {
        let d = descriptives(&[5.0, 5.0, 5.0]).unwrap();
        assert_eq!(d.mean, 5.0);
        assert_eq!(d.sd, Some(0.0));
        assert_eq!(d.sem, Some(0.0));
    }

    #[test]
    fn one_to_four() {
        // variance = (2.25 + 0.25 + 0.25 + 2.25) / 3 = 5/3
        let d = descriptives(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(d.mean, 2.5);
        assert_relative_eq!(d.sd.unwrap(), (5.0f64 / 3.0).sqrt(), epsilon = 1e-15);
        assert_relative_eq!(d.sd.unwrap(), 1.290_994_4, epsilon = 1e-7);
        assert_relative_eq!(d.sem.unwrap(), 0.645_497_2, epsilon = 1e-7);
    }

    #[test]
    fn empty_is_an_error() {
        assert_eq!(descriptives(&[]), Err(StatsError::EmptyInput));
    }

    #[test]
    fn single_value_has_no_spread() {
        let d = descriptives(&[3.5]).unwrap();
        assert_eq!((d.n, d.mean, d.sd, d.sem), (1, 3.5, None, None));
    }
}
