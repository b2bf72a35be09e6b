//! Two-sample location tests used for stratification and the falsity probe.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TTestKind {
    /// Equal-variance test with pooled variance and `n_a + n_b - 2` degrees of freedom.
    #[default]
    Pooled,
    /// Welch's unequal-variance test with Welch–Satterthwaite degrees of freedom.
    Welch,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
}

impl TTest {
    /// Two-sided p-value.
    pub fn p_value(&self) -> f64 {
        if !self.t.is_finite() {
            return 0.0;
        }
        let dist = StudentsT::new(0.0, 1.0, self.df).expect("df > 0 by construction");
        (2.0 * dist.sf(self.t.abs())).min(1.0)
    }
}

/// Sample mean and unbiased variance (two-pass).
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, ss / (n - 1.0))
}

/// Two-sample t statistic of `a` against `b` (positive when mean(a) > mean(b)).
///
/// Returns `None` when either side has fewer than two samples or the
/// denominator vanishes; the statistic is undefined there.
pub fn two_sample_t(a: &[f64], b: &[f64], kind: TTestKind) -> Option<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return None;
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (se2, df) = match kind {
        TTestKind::Pooled => {
            let df = na + nb - 2.0;
            let pooled = ((na - 1.0) * va + (nb - 1.0) * vb) / df;
            (pooled * (1.0 / na + 1.0 / nb), df)
        }
        TTestKind::Welch => {
            let (sa, sb) = (va / na, vb / nb);
            let se2 = sa + sb;
            let df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
            (se2, df)
        }
    };
    if !(se2 > 0.0) || !se2.is_finite() {
        return None;
    }
    Some(TTest {
        t: (ma - mb) / se2.sqrt(),
        df,
    })
}

/// Population variance, the REx statistic.
pub fn population_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn pooled_t_matches_textbook_fixture() {
        // a = {1, 3}: mean 2, var 2; b = {4, 8}: mean 6, var 8.
        // pooled = (2 + 8) / 2 = 5; se = sqrt(5 * (1/2 + 1/2)) = sqrt(5).
        let t = two_sample_t(&[1.0, 3.0], &[4.0, 8.0], TTestKind::Pooled).unwrap();
        assert_relative_eq!(t.t, -4.0 / 5f64.sqrt(), max_relative = 1e-14);
        assert_eq!(t.df, 2.0);
    }

    #[test]
    fn welch_t_fixture() {
        // se^2 = 2/2 + 8/2 = 5 -> same t; df = 25 / (1/1 + 16/1) = 25/17.
        let t = two_sample_t(&[1.0, 3.0], &[4.0, 8.0], TTestKind::Welch).unwrap();
        assert_relative_eq!(t.t, -4.0 / 5f64.sqrt(), max_relative = 1e-14);
        assert_relative_eq!(t.df, 25.0 / 17.0, max_relative = 1e-14);
    }

    #[test]
    fn p_value_against_known_quantile() {
        // t_{0.975, 10} = 2.228138851986...
        let t = TTest {
            t: 2.228_138_851_986_273_5,
            df: 10.0,
        };
        assert_relative_eq!(t.p_value(), 0.05, max_relative = 1e-9);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(two_sample_t(&[1.0], &[1.0, 2.0], TTestKind::Pooled).is_none());
        assert!(two_sample_t(&[1.0, 1.0], &[2.0, 2.0], TTestKind::Pooled).is_none());
    }

    #[test]
    fn population_variance_two_point() {
        assert_eq!(population_variance(&[0.0, 1.0]), 0.25);
    }
}
