//! Estimators shared by the experiments.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

pub const MIN_TAIL_SAMPLES: usize = 500;
pub const MIN_CI_SAMPLES: usize = 30;
/// Survival points need at least this many surviving samples to enter a fit.
pub const MIN_SURVIVORS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanCI {
    pub mean: f64,
    pub half_width: f64,
    pub n_samples: usize,
}

impl MeanCI {
    pub fn from_samples(xs: &[f64]) -> Result<Self> {
        if xs.len() < MIN_CI_SAMPLES {
            return Err(Error::SampleSize {
                needed: MIN_CI_SAMPLES,
                got: xs.len(),
            });
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Ok(Self {
            mean,
            half_width: Z95 * (var / n).sqrt(),
            n_samples: xs.len(),
        })
    }

    /// Ratio of means `sum(num) / sum(den)` with a delta-method interval,
    /// treating the pairs as i.i.d.
    pub fn ratio(num: &[f64], den: &[f64]) -> Result<Self> {
        if num.len() != den.len() {
            return Err(Error::InvalidArgument("ratio needs paired samples".into()));
        }
        if num.len() < MIN_CI_SAMPLES {
            return Err(Error::SampleSize {
                needed: MIN_CI_SAMPLES,
                got: num.len(),
            });
        }
        let n = num.len() as f64;
        let mean_den = den.iter().sum::<f64>() / n;
        if mean_den == 0.0 {
            return Err(Error::DegenerateFit("ratio with zero denominator".into()));
        }
        let r = num.iter().sum::<f64>() / den.iter().sum::<f64>();
        let var = num
            .iter()
            .zip(den)
            .map(|(x, y)| (x - r * y).powi(2))
            .sum::<f64>()
            / (n - 1.0);
        Ok(Self {
            mean: r,
            half_width: Z95 * (var / n).sqrt() / mean_den,
            n_samples: num.len(),
        })
    }

    pub fn standard_error(&self) -> f64 {
        self.half_width / Z95
    }

    pub fn contains(&self, x: f64) -> bool {
        (x - self.mean).abs() <= self.half_width
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares `y = intercept + slope * x`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<LineFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::DegenerateFit(format!(
            "need at least two paired points, got {}",
            xs.len().min(ys.len())
        )));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateFit("all abscissae equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    Ok(LineFit {
        slope,
        intercept,
        r_squared,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailModel {
    /// log P(X >= n) ~ a - c n
    Exponential,
    /// log P(X >= n) ~ a - c n^(1/8)
    Stretched,
}

impl TailModel {
    fn abscissa(self, n: u64) -> f64 {
        match self {
            TailModel::Exponential => n as f64,
            TailModel::Stretched => (n as f64).powf(0.125),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub model: TailModel,
    pub rate_c: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub fit_range: (u64, u64),
    pub points: usize,
}

/// Empirical survival `(n, P(X >= n))` at every integer n from the minimum
/// to the maximum sample.
pub fn survival(samples: &[u64]) -> Vec<(u64, f64)> {
    let mut sorted = samples.to_vec();
    sorted.sort_unstable();
    let Some(&max) = sorted.last() else {
        return Vec::new();
    };
    let total = sorted.len() as f64;
    (sorted[0]..=max)
        .map(|n| {
            let below = sorted.partition_point(|&x| x < n);
            (n, (sorted.len() - below) as f64 / total)
        })
        .collect()
}

/// Least-squares fit of the log empirical survival, on the range from the
/// median up to the last point with at least [`MIN_SURVIVORS`] survivors.
pub fn fit_tail(samples: &[u64], model: TailModel) -> Result<TailFit> {
    if samples.len() < MIN_TAIL_SAMPLES {
        return Err(Error::SampleSize {
            needed: MIN_TAIL_SAMPLES,
            got: samples.len(),
        });
    }
    let mut sorted = samples.to_vec();
    sorted.sort_unstable();
    if sorted[0] == sorted[sorted.len() - 1] {
        return Err(Error::DegenerateFit(format!(
            "all samples equal {}",
            sorted[0]
        )));
    }
    let total = sorted.len();
    let median = sorted[(total - 1) / 2];
    let survivors = |n: u64| total - sorted.partition_point(|&x| x < n);
    let n_max = (median..=sorted[total - 1])
        .take_while(|&n| survivors(n) >= MIN_SURVIVORS)
        .last()
        .unwrap_or(median);

    let (xs, ys): (Vec<f64>, Vec<f64>) = (median..=n_max)
        .map(|n| (model.abscissa(n), (survivors(n) as f64 / total as f64).ln()))
        .unzip();
    if xs.len() < 2 {
        return Err(Error::DegenerateFit(format!(
            "tail range [{median}, {n_max}] has fewer than two points"
        )));
    }
    let line = linear_fit(&xs, &ys)?;
    if line.slope >= 0.0 {
        return Err(Error::DegenerateFit("survival does not decay".into()));
    }
    Ok(TailFit {
        model,
        rate_c: -line.slope,
        intercept: line.intercept,
        r_squared: line.r_squared,
        fit_range: (median, n_max),
        points: xs.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometricTest {
    /// Success probability of `P(X = k) = theta (1 - theta)^k`, k >= 0.
    pub theta_hat: f64,
    pub theta_se: f64,
    pub test_stat: f64,
    pub dof: usize,
    pub p_value: f64,
    /// Histogram of the samples, index = value.
    pub support_counts: Vec<u64>,
    pub n_samples: usize,
    /// `|theta_hat - theta_ref|` when a reference was supplied.
    pub ref_diff: Option<f64>,
    /// All samples zero: the law is a point mass and the test is void.
    pub degenerate: bool,
}

pub fn test_geometric(samples: &[u64], theta_ref: Option<f64>) -> Result<GeometricTest> {
    if samples.len() < MIN_TAIL_SAMPLES {
        return Err(Error::SampleSize {
            needed: MIN_TAIL_SAMPLES,
            got: samples.len(),
        });
    }
    let n = samples.len();
    let nf = n as f64;
    let max = *samples.iter().max().expect("non-empty");
    let mut counts = vec![0u64; max as usize + 1];
    for &x in samples {
        counts[x as usize] += 1;
    }
    let mean = samples.iter().map(|&x| x as f64).sum::<f64>() / nf;
    let theta = 1.0 / (1.0 + mean);
    let theta_se = theta * ((1.0 - theta) / nf).sqrt();
    let ref_diff = theta_ref.map(|r| (theta - r).abs());

    if max == 0 {
        return Ok(GeometricTest {
            theta_hat: 1.0,
            theta_se: 0.0,
            test_stat: 0.0,
            dof: 0,
            p_value: 1.0,
            support_counts: counts,
            n_samples: n,
            ref_diff,
            degenerate: true,
        });
    }

    // Bins 0..last-1 individually, then a pooled tail {>= last}; every bin
    // keeps an expected count of at least 5.
    let q = 1.0 - theta;
    let expected_at = |k: usize| nf * theta * q.powi(k as i32);
    let tail_from = |k: usize| nf * q.powi(k as i32);
    let mut last = 0usize;
    while expected_at(last) >= 5.0 && tail_from(last + 1) >= 5.0 {
        last += 1;
    }
    let mut stat = 0.0;
    for (k, &observed) in counts.iter().enumerate().take(last) {
        let e = expected_at(k);
        stat += (observed as f64 - e).powi(2) / e;
    }
    let observed_tail: u64 = counts.iter().skip(last).sum();
    let e_tail = tail_from(last);
    stat += (observed_tail as f64 - e_tail).powi(2) / e_tail;

    let bins = last + 1;
    // one parameter estimated
    let dof = bins.saturating_sub(2);
    let p_value = if dof == 0 {
        1.0
    } else {
        ChiSquared::new(dof as f64).expect("positive dof").sf(stat)
    };
    Ok(GeometricTest {
        theta_hat: theta,
        theta_se,
        test_stat: stat,
        dof,
        p_value,
        support_counts: counts,
        n_samples: n,
        ref_diff,
        degenerate: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MgfEstimate {
    pub t: f64,
    pub value: MeanCI,
    /// `t` is at or beyond the fitted tail rate; the estimate may diverge.
    pub divergence_warning: bool,
}

/// Sample mean of `exp(t X)` with a normal interval.
pub fn empirical_mgf(samples: &[u64], t: f64, fitted_rate: Option<f64>) -> Result<MgfEstimate> {
    if samples.len() < MIN_TAIL_SAMPLES {
        return Err(Error::SampleSize {
            needed: MIN_TAIL_SAMPLES,
            got: samples.len(),
        });
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::InvalidArgument(format!("mgf argument t = {t}")));
    }
    let values: Vec<f64> = samples.iter().map(|&x| (t * x as f64).exp()).collect();
    Ok(MgfEstimate {
        t,
        value: MeanCI::from_samples(&values)?,
        divergence_warning: fitted_rate.is_some_and(|c| t >= c),
    })
}

/// Lag-1 sample autocorrelation; under independence it is roughly normal
/// with standard deviation `1/sqrt(n)`.
pub fn lag1_autocorrelation(xs: &[f64]) -> Option<f64> {
    if xs.len() < 3 {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let denom: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    if denom == 0.0 {
        return None;
    }
    let num: f64 = xs.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum();
    Some(num / denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Inverse-transform draws with `P(X >= n) = q^n`.
    fn geometric(q: f64, count: usize, seed: u64) -> Vec<u64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let u: f64 = 1.0 - rng.random::<f64>();
                (u.ln() / q.ln()).floor() as u64
            })
            .collect()
    }

    #[test]
    fn recovers_geometric_rate() {
        let samples = geometric(0.8, 100_000, 1);
        let fit = fit_tail(&samples, TailModel::Exponential).unwrap();
        let truth = -(0.8f64).ln();
        assert!((fit.rate_c - truth).abs() < 0.1 * truth, "{fit:?}");
        assert!(fit.r_squared > 0.99);
    }

    #[test]
    fn refit_on_own_model_is_consistent() {
        let first = fit_tail(&geometric(0.7, 100_000, 2), TailModel::Exponential).unwrap();
        let regenerated = geometric((-first.rate_c).exp(), 100_000, 3);
        let second = fit_tail(&regenerated, TailModel::Exponential).unwrap();
        assert!((second.rate_c - first.rate_c).abs() < 0.1 * first.rate_c);
    }

    #[test]
    fn constant_samples_are_degenerate() {
        let err = fit_tail(&[5; 600], TailModel::Exponential).unwrap_err();
        assert!(matches!(err, Error::DegenerateFit(_)));
        assert!(matches!(
            fit_tail(&[1, 2, 3], TailModel::Stretched),
            Err(Error::SampleSize { .. })
        ));
    }

    #[test]
    fn exponential_beats_stretched_on_geometric_data() {
        let samples = geometric(0.9, 50_000, 4);
        let exp = fit_tail(&samples, TailModel::Exponential).unwrap();
        let str = fit_tail(&samples, TailModel::Stretched).unwrap();
        assert!(exp.r_squared > str.r_squared);
    }

    #[test]
    fn geometric_test_on_synthetic_draws() {
        // theta = 0.6 means P(X >= n) = 0.4^n
        let samples = geometric(0.4, 100_000, 5);
        let test = test_geometric(&samples, Some(0.6)).unwrap();
        assert!((test.theta_hat - 0.6).abs() < 0.01, "{test:?}");
        assert!(test.p_value > 0.01, "{test:?}");
        assert_eq!(test.support_counts.iter().sum::<u64>(), 100_000);
        assert!(test.ref_diff.unwrap() < 0.01);
    }

    #[test]
    fn geometric_test_rejects_non_geometric() {
        // uniform on {0, 1, 2, 3}
        let samples: Vec<u64> = (0..20_000).map(|i| i % 4).collect();
        let test = test_geometric(&samples, None).unwrap();
        assert!(test.p_value < 1e-6);
    }

    #[test]
    fn all_zero_samples_are_a_point_mass() {
        let test = test_geometric(&[0; 800], None).unwrap();
        assert!(test.degenerate);
        assert_eq!(test.theta_hat, 1.0);
    }

    #[test]
    fn theta_hat_ignores_order() {
        let mut samples = geometric(0.5, 5_000, 6);
        let a = test_geometric(&samples, None).unwrap();
        samples.reverse();
        samples.rotate_left(1234);
        let b = test_geometric(&samples, None).unwrap();
        assert_eq!(a.theta_hat, b.theta_hat);
    }

    #[test]
    fn mgf_at_zero_is_one() {
        let est = empirical_mgf(&geometric(0.5, 1000, 7), 0.0, None).unwrap();
        assert_eq!(est.value.mean, 1.0);
    }

    #[test]
    fn mgf_matches_closed_form() {
        let q: f64 = 0.8;
        let samples = geometric(q, 100_000, 8);
        let rate = -q.ln();
        let t = rate / 2.0;
        // E[e^{tX}] = (1 - q) / (1 - q e^t)
        let exact = (1.0 - q) / (1.0 - q * t.exp());
        let est = empirical_mgf(&samples, t, Some(rate)).unwrap();
        assert!(
            (est.value.mean - exact).abs() < 0.05 * exact,
            "{est:?} vs {exact}"
        );
        assert!(!est.divergence_warning);
        assert!(
            empirical_mgf(&samples, rate, Some(rate))
                .unwrap()
                .divergence_warning
        );
    }

    #[test]
    fn mgf_monotone_in_t() {
        let samples = geometric(0.6, 2_000, 9);
        let values: Vec<f64> = (0..10)
            .map(|i| {
                empirical_mgf(&samples, i as f64 * 0.05, None)
                    .unwrap()
                    .value
                    .mean
            })
            .collect();
        assert!(values.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn ratio_interval_covers_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let den: Vec<f64> = (0..10_000).map(|_| rng.random_range(1.0..3.0)).collect();
        let num: Vec<f64> = den
            .iter()
            .map(|d| 0.5 * d + rng.random_range(-0.1..0.1))
            .collect();
        let r = MeanCI::ratio(&num, &den).unwrap();
        assert!(r.contains(0.5), "{r:?}");
        assert!(MeanCI::from_samples(&[1.0; 10]).is_err());
    }

    #[test]
    fn line_fit_exact() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys = [3.0, 5.0, 7.0, 9.0];
        let fit = linear_fit(&xs, &ys).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-12);
        assert!((fit.intercept - 1.0).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }
}
