//! Small statistical helpers: goodness-of-fit statistics and correlations.

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Asymptotic Kolmogorov-Smirnov critical value at significance 0.01.
pub fn ks_critical_001(n: usize) -> f64 {
    1.628 / (n as f64).sqrt()
}

/// One-sample KS statistic against Uniform[0, 1]. Sorts `values` in place.
pub fn ks_uniform(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len() as f64;
    values.iter().enumerate().fold(0.0, |acc: f64, (i, &v)| {
        let cdf = v.clamp(0.0, 1.0);
        let above = (i + 1) as f64 / n - cdf;
        let below = cdf - i as f64 / n;
        acc.max(above).max(below)
    })
}

/// Pearson chi-square statistic of label counts against equal expected counts.
pub fn chi_square_uniform(labels: &[usize], k: usize) -> f64 {
    if k <= 1 || labels.is_empty() {
        return 0.0;
    }
    let mut counts = vec![0usize; k];
    for &l in labels {
        counts[l] += 1;
    }
    let expected = labels.len() as f64 / k as f64;
    counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum()
}

/// Upper 1% quantile of the chi-square distribution with `dof` degrees of freedom.
pub fn chi_square_critical_001(dof: usize) -> f64 {
    if dof == 0 {
        return 0.0;
    }
    ChiSquared::new(dof as f64).expect("dof > 0").inverse_cdf(0.99)
}

/// Pearson correlation; zero when either input is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    if n == 0 {
        return 0.0;
    }
    let ma = a[..n].iter().sum::<f64>() / n as f64;
    let mb = b[..n].iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation (n - 1 denominator); zero for a single value.
pub fn sample_std(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ks_of_even_grid() {
        let n = 1000;
        let mut v: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let ks = ks_uniform(&mut v);
        assert!((ks - 0.5 / n as f64).abs() < 1e-12);
    }

    #[test]
    fn ks_of_point_mass() {
        let mut v = vec![0.5; 100];
        assert!((ks_uniform(&mut v) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn chi_square() {
        assert_eq!(chi_square_uniform(&[0, 0, 0], 1), 0.0);
        assert_eq!(chi_square_uniform(&[0, 1, 2, 0, 1, 2], 3), 0.0);
        // counts (4, 0) against expected 2 each: 2 + 2
        assert!((chi_square_uniform(&[0, 0, 0, 0], 2) - 4.0).abs() < 1e-12);
        // tabulated: chi2_{0.99}(2) = 9.2103
        assert!((chi_square_critical_001(2) - 9.2103).abs() < 1e-3);
    }

    #[test]
    fn correlation_edge_cases() {
        assert_eq!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), 0.0);
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]) - 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn std_uses_n_minus_one() {
        assert_eq!(sample_std(&[1.0, 2.0, 3.0]), 1.0);
        assert_eq!(sample_std(&[4.0]), 0.0);
    }
}
