use super::special::{ln_gamma, student_t_quantile, student_t_two_sided};
use super::{check_finite, mean, variance, StatsError};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub dof: f64,
    /// Two-sided.
    pub p_value: f64,
    pub n: usize,
}

impl TestResult {
    pub fn significant(&self) -> bool {
        self.p_value < super::ALPHA
    }
}

/// One-sample t-test of `mean(x) = mu0`, two-sided.
pub fn one_sample_t(x: &[f64], mu0: f64) -> Result<TestResult, StatsError> {
    let n = x.len();
    if n < 2 {
        return Err(StatsError::TooFewSamples { need: 2, got: n });
    }
    check_finite(x)?;
    let sd = variance(x).sqrt();
    if sd == 0.0 || !sd.is_finite() {
        return Err(StatsError::ZeroVariance);
    }
    let t = (mean(x) - mu0) / (sd / (n as f64).sqrt());
    let dof = (n - 1) as f64;
    Ok(TestResult { statistic: t, dof, p_value: student_t_two_sided(t, dof), n })
}

/// Paired-samples t-test on `x − y`, two-sided.
pub fn paired_t(x: &[f64], y: &[f64]) -> Result<TestResult, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    one_sample_t(&d, 0.0)
}

fn ln_binom_pmf(k: u64, n: u64, ln_p: f64, ln_q: f64) -> f64 {
    let (k, n) = (k as f64, n as f64);
    ln_gamma(n + 1.0) - ln_gamma(k + 1.0) - ln_gamma(n - k + 1.0) + k * ln_p + (n - k) * ln_q
}

/// Exact two-sided binomial test: sums the probability of every outcome no
/// more likely than the observed one (relative tie tolerance 1e-7).
pub fn binomial_test(k: u64, n: u64, p0: f64) -> Result<TestResult, StatsError> {
    if k > n {
        return Err(StatsError::InvalidArgument("k must not exceed n"));
    }
    if !(p0 > 0.0 && p0 < 1.0) {
        return Err(StatsError::InvalidArgument("p0 must lie in (0, 1)"));
    }
    let (ln_p, ln_q) = (p0.ln(), (1.0 - p0).ln());
    let observed = ln_binom_pmf(k, n, ln_p, ln_q);
    let threshold = observed + (1.0f64 + 1e-7).ln();
    let kept: Vec<f64> = (0..=n)
        .map(|i| ln_binom_pmf(i, n, ln_p, ln_q))
        .filter(|&l| l <= threshold)
        .collect();
    // log-sum-exp
    let top = kept.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let p = if kept.len() as u64 == n + 1 {
        1.0
    } else if top.is_finite() {
        (top + kept.iter().map(|l| (l - top).exp()).sum::<f64>().ln()).exp()
    } else {
        0.0
    };
    Ok(TestResult { statistic: k as f64, dof: n as f64, p_value: p.min(1.0), n: n as usize })
}

/// Pointwise mean with a 95% confidence band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceBand {
    pub mean: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub n: usize,
}

/// Pointwise mean ± t(0.975, n−1)·SEM over aligned series.
pub fn mean_ci95(trials: &[Vec<f64>]) -> Result<ConfidenceBand, StatsError> {
    let n = trials.len();
    if n < 2 {
        return Err(StatsError::TooFewSamples { need: 2, got: n });
    }
    let len = trials[0].len();
    if let Some(bad) = trials.iter().find(|t| t.len() != len) {
        return Err(StatsError::LengthMismatch(len, bad.len()));
    }
    let tq = student_t_quantile(0.975, (n - 1) as f64);
    let mut band = ConfidenceBand {
        mean: Vec::with_capacity(len),
        lo: Vec::with_capacity(len),
        hi: Vec::with_capacity(len),
        n,
    };
    let mut column = vec![0.0; n];
    for i in 0..len {
        for (c, t) in column.iter_mut().zip(trials) {
            *c = t[i];
        }
        check_finite(&column)?;
        let m = mean(&column);
        let half = tq * (variance(&column) / n as f64).sqrt();
        band.mean.push(m);
        band.lo.push(m - half);
        band.hi.push(m + half);
    }
    Ok(band)
}

/// Spike count in `[start_ms, end_ms)` divided by the window length, in Hz.
pub fn spike_rate(spike_times_ms: &[f64], start_ms: f64, end_ms: f64) -> Result<f64, StatsError> {
    let len = end_ms - start_ms;
    if !(len > 0.0) {
        return Err(StatsError::InvalidArgument("window length must be positive"));
    }
    let count = spike_times_ms.iter().filter(|&&t| t >= start_ms && t < end_ms).count();
    Ok(count as f64 / (len / 1000.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Exp, Normal};

    // Reference p-values computed with 50-digit arithmetic (regularized
    // incomplete beta) and frozen here.
    const ONE_SAMPLE_T: f64 = 15.556349186104045537;
    const ONE_SAMPLE_P: f64 = 0.000099689685871834950203;
    const PAIRED_T: f64 = 7.113893212265279618;
    const PAIRED_P: f64 = 0.00085104539253568249012;

    #[test]
    fn one_sample_fixture_matches_reference() {
        let r = one_sample_t(&[1.0, 1.2, 0.9, 1.1, 1.3], 0.0).unwrap();
        assert!((r.statistic - ONE_SAMPLE_T).abs() < 1e-9);
        assert!((r.p_value - ONE_SAMPLE_P).abs() < 1e-9);
        assert_eq!(r.dof, 4.0);
    }

    #[test]
    fn paired_fixture_matches_reference() {
        let x = [2.1, 3.4, 1.9, 5.0, 4.2, 3.3];
        let y = [1.0, 2.2, 1.5, 3.9, 3.0, 2.6];
        let r = paired_t(&x, &y).unwrap();
        assert!((r.statistic - PAIRED_T).abs() < 1e-9);
        assert!((r.p_value - PAIRED_P).abs() < 1e-9);
    }

    #[test]
    fn null_p_values_are_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut ps: Vec<f64> = (0..1000)
            .map(|_| {
                let x: Vec<f64> = (0..12).map(|_| normal.sample(&mut rng)).collect();
                let y: Vec<f64> = (0..12).map(|_| normal.sample(&mut rng)).collect();
                paired_t(&x, &y).unwrap().p_value
            })
            .collect();
        ps.sort_by(f64::total_cmp);
        let n = ps.len() as f64;
        let d = ps
            .iter()
            .enumerate()
            .map(|(i, &p)| (p - i as f64 / n).abs().max(((i + 1) as f64 / n - p).abs()))
            .fold(0.0, f64::max);
        assert!(d < 0.05, "KS distance {d}");
    }

    #[test]
    fn mean_equal_to_mu0_gives_p_one() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let r = one_sample_t(&x, 2.5).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn paired_is_antisymmetric_and_matches_one_sample() {
        let x = [0.3, 1.7, 2.2, 0.9, 1.4];
        let y = [0.1, 1.1, 2.5, 0.2, 1.0];
        let a = paired_t(&x, &y).unwrap();
        let b = paired_t(&y, &x).unwrap();
        assert_eq!(a.statistic, -b.statistic);
        let d: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
        assert_eq!(one_sample_t(&d, 0.0).unwrap(), a);
    }

    #[test]
    fn zero_variance_is_degenerate() {
        let x = [1.0, 2.0, 3.0];
        let y = [0.5, 1.5, 2.5];
        assert_eq!(paired_t(&x, &y), Err(StatsError::ZeroVariance));
        assert_eq!(one_sample_t(&[2.0], 0.0), Err(StatsError::TooFewSamples { need: 2, got: 1 }));
    }

    #[test]
    fn binomial_matches_exact_enumeration() {
        // exact rational enumeration, frozen
        let cases = [
            (0, 60, 0.5, 1.7347234759768070944e-18),
            (7, 20, 0.5, 0.26317596435546875),
            (3, 60, 0.1, 0.27903417421800264234),
            (12, 30, 0.2, 0.010731062214007864689),
        ];
        for (k, n, p0, expected) in cases {
            let r = binomial_test(k, n, p0).unwrap();
            assert!(
                (r.p_value - expected).abs() <= 1e-12 * expected.max(1e-300) + 1e-15,
                "k={k} n={n}: {} vs {expected}",
                r.p_value
            );
        }
        let r = binomial_test(0, 60, 0.5).unwrap();
        assert!((r.p_value / (2.0 * 2f64.powi(-60)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn binomial_mode_gives_one_and_tails_shrink() {
        assert_eq!(binomial_test(30, 60, 0.5).unwrap().p_value, 1.0);
        let mut prev = 1.0 + 1e-12;
        for k in (0..=30).rev() {
            let p = binomial_test(k, 60, 0.5).unwrap().p_value;
            assert!(p <= prev);
            prev = p;
        }
        assert!(binomial_test(61, 60, 0.5).is_err());
    }

    #[test]
    fn ci_identical_trials_zero_width() {
        let t = vec![vec![1.0, 2.0, 3.0]; 5];
        let b = mean_ci95(&t).unwrap();
        assert_eq!(b.lo, b.mean);
        assert_eq!(b.hi, b.mean);
    }

    #[test]
    fn ci_two_trials_hand_computation() {
        let b = mean_ci95(&[vec![0.0; 3], vec![2.0; 3]]).unwrap();
        // sd = √2, SEM = 1, t(0.975, 1) = 12.706204736174698
        let t = 12.706204736174698;
        for i in 0..3 {
            assert!((b.mean[i] - 1.0).abs() < 1e-12);
            assert!((b.hi[i] - (1.0 + t)).abs() < 1e-9);
            assert!((b.lo[i] - (1.0 - t)).abs() < 1e-9);
        }
        assert!(mean_ci95(&[vec![1.0]]).is_err());
    }

    #[test]
    fn ci_width_scales_inverse_sqrt_n() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let width = |n: usize, rng: &mut ChaCha8Rng| {
            let trials: Vec<Vec<f64>> =
                (0..n).map(|_| (0..200).map(|_| normal.sample(rng)).collect()).collect();
            let b = mean_ci95(&trials).unwrap();
            b.hi.iter().zip(&b.lo).map(|(h, l)| h - l).sum::<f64>() / 200.0
        };
        let w100 = width(100, &mut rng);
        let w400 = width(400, &mut rng);
        let ratio = w100 / w400;
        assert!((ratio - 2.0).abs() < 0.15, "ratio {ratio}");
    }

    #[test]
    fn spike_rates() {
        let spikes: Vec<f64> = (0..25).map(|i| i as f64 * 40.0).collect();
        assert_eq!(spike_rate(&spikes, 0.0, 1000.0).unwrap(), 25.0);
        assert_eq!(spike_rate(&[], 0.0, 1000.0).unwrap(), 0.0);
        assert!(spike_rate(&spikes, 10.0, 10.0).is_err());
    }

    #[test]
    fn poisson_generator_rate_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(253);
        let isi = Exp::new(25.3 / 1000.0).unwrap();
        let mut rates = Vec::new();
        for _ in 0..100 {
            let mut t = 0.0;
            let mut spikes = Vec::new();
            loop {
                t += isi.sample(&mut rng);
                if t >= 1000.0 {
                    break;
                }
                spikes.push(t);
            }
            rates.push(spike_rate(&spikes, 0.0, 1000.0).unwrap());
        }
        let m = rates.iter().sum::<f64>() / rates.len() as f64;
        assert!((m - 25.3).abs() < 2.0, "mean rate {m}");
    }
}
