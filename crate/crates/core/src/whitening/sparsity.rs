use crate::error::{Error, Result};

pub const HISTOGRAM_BINS: usize = 64;

/// Distribution summary of a signal before and after deconvolution.
#[derive(Clone, Debug)]
pub struct SparsityStats {
    pub hist_before: Vec<u64>,
    pub hist_after: Vec<u64>,
    /// `ln` of the normalized bin density; `-inf` for empty bins.
    pub log_density_before: Vec<f64>,
    pub log_density_after: Vec<f64>,
    pub kurtosis_before: f64,
    pub kurtosis_after: f64,
}

pub fn sparsity_stats(before: &[f64], after: &[f64]) -> Result<SparsityStats> {
    if before.len() != after.len() {
        return Err(Error::shape(format!(
            "sparsity inputs differ in size: {} vs {}",
            before.len(),
            after.len()
        )));
    }
    let kurtosis_before = excess_kurtosis(before)?;
    let kurtosis_after = excess_kurtosis(after)?;
    let hist_before = histogram(before);
    let hist_after = histogram(after);
    Ok(SparsityStats {
        log_density_before: log_density(&hist_before),
        log_density_after: log_density(&hist_after),
        hist_before,
        hist_after,
        kurtosis_before,
        kurtosis_after,
    })
}

/// `m4 / m2² - 3`; zero for a Gaussian, 3 for a Laplacian.
pub fn excess_kurtosis(x: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    if x.is_empty() {
        return Err(Error::InsufficientData(
            "kurtosis of an empty sample".into(),
        ));
    }
    let mean = x.iter().sum::<f64>() / n;
    let (mut m2, mut m4) = (0.0, 0.0);
    for v in x {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m4 += d2 * d2;
    }
    m2 /= n;
    m4 /= n;
    let scale = 1e-14 * mean.abs().max(f64::MIN_POSITIVE);
    if m2 <= scale * scale {
        return Err(Error::InsufficientData(
            "kurtosis undefined for a constant sample".into(),
        ));
    }
    Ok(m4 / (m2 * m2) - 3.0)
}

/// Histogram of min-max normalized values over `[0, 1]`.
fn histogram(x: &[f64]) -> Vec<u64> {
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let mut bins = vec![0u64; HISTOGRAM_BINS];
    for &v in x {
        let u = if span > 0.0 { (v - lo) / span } else { 0.0 };
        let b = ((u * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
        bins[b] += 1;
    }
    bins
}

fn log_density(hist: &[u64]) -> Vec<f64> {
    let total: u64 = hist.iter().sum();
    let width = 1.0 / hist.len() as f64;
    hist.iter()
        .map(|&c| (c as f64 / (total as f64 * width)).ln())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::SeededRng;

    #[test]
    fn gaussian_has_zero_excess() {
        let mut rng = SeededRng::new(41);
        let x: Vec<f64> = (0..1_000_000).map(|_| rng.gaussian()).collect();
        let k = excess_kurtosis(&x).unwrap();
        assert!(k.abs() < 0.1, "kurtosis {k}");
    }

    #[test]
    fn laplacian_has_excess_three() {
        let mut rng = SeededRng::new(42);
        // inverse CDF of the standard Laplace distribution
        let x: Vec<f64> = (0..1_000_000)
            .map(|_| {
                let u = rng.uniform(-0.5, 0.5);
                -u.signum() * (1.0 - 2.0 * u.abs()).ln()
            })
            .collect();
        let k = excess_kurtosis(&x).unwrap();
        assert!((k - 3.0).abs() < 0.3, "kurtosis {k}");
    }

    #[test]
    fn constant_sample_is_an_error() {
        assert!(excess_kurtosis(&[2.5; 100]).is_err());
        assert!(sparsity_stats(&[1.0; 10], &[1.0; 10]).is_err());
    }

    #[test]
    fn histogram_covers_every_value() {
        let x: Vec<f64> = (0..1000).map(|i| (i as f64).sin()).collect();
        let y: Vec<f64> = x.iter().map(|v| v * v * v).collect();
        let s = sparsity_stats(&x, &y).unwrap();
        assert_eq!(s.hist_before.len(), HISTOGRAM_BINS);
        assert_eq!(s.hist_before.iter().sum::<u64>(), 1000);
        assert_eq!(s.hist_after.iter().sum::<u64>(), 1000);
        assert!(s.hist_before[0] >= 1 && s.hist_before[HISTOGRAM_BINS - 1] >= 1);
        // cubing concentrates mass near zero
        assert!(s.kurtosis_after > s.kurtosis_before);
        assert!(sparsity_stats(&x, &y[..10]).is_err());
    }
}
