use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SHAPE_CAP: f64 = 50.0;
const MAX_NEWTON: usize = 100;

/// `sqrt((x - mu)^T inv_cov (x - mu))`. Fails when `inv_cov` is not
/// symmetric positive definite.
pub fn mahalanobis_distance(x: &[f64], mu: &[f64], inv_cov: &DMatrix<f64>) -> Result<f64> {
    let d = x.len();
    if mu.len() != d {
        return Err(Error::Shape {
            expected: d,
            actual: mu.len(),
        });
    }
    if inv_cov.nrows() != d || inv_cov.ncols() != d {
        return Err(Error::Shape {
            expected: d,
            actual: inv_cov.nrows(),
        });
    }
    let scale = inv_cov.amax().max(1.0);
    if (inv_cov - inv_cov.transpose()).amax() > 1e-9 * scale {
        return Err(Error::Numeric("inverse covariance is not symmetric".into()));
    }
    if inv_cov.clone().cholesky().is_none() {
        return Err(Error::Numeric(
            "inverse covariance is not positive definite".into(),
        ));
    }
    Ok(quadratic_form(x, mu, inv_cov.as_slice(), d).sqrt())
}

/// `(x - mu)^T M (x - mu)` for a column-major `d x d` matrix.
fn quadratic_form(x: &[f64], mu: &[f64], m: &[f64], d: usize) -> f64 {
    let diff: Vec<f64> = x.iter().zip(mu).map(|(a, b)| a - b).collect();
    let mut total = 0.0;
    for j in 0..d {
        let col = &m[j * d..(j + 1) * d];
        let dot: f64 = col.iter().zip(&diff).map(|(a, b)| a * b).sum();
        total += diff[j] * dot;
    }
    total.max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weibull {
    pub shape: f64,
    pub scale: f64,
}

impl Weibull {
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        -(-(x / self.scale).powf(self.shape)).exp_m1()
    }
}

/// Maximum-likelihood two-parameter Weibull fit.
///
/// The shape solves the profile equation
/// `1/k + mean(ln x) - sum(x^k ln x) / sum(x^k) = 0` by Newton steps kept
/// inside a shrinking bracket; the left side decreases in `k`, so when it is
/// still positive at 50 (for example all samples equal) the shape is capped
/// there. The scale is then `mean(x^k)^(1/k)`.
pub fn weibull_fit(samples: &[f64]) -> Result<Weibull> {
    if samples.len() < 3 {
        return Err(Error::Fit(format!(
            "weibull fit needs at least 3 samples, got {}",
            samples.len()
        )));
    }
    if let Some(bad) = samples.iter().find(|&&s| !s.is_finite() || s <= 0.0) {
        return Err(Error::Domain(format!(
            "weibull samples must be positive and finite, got {bad}"
        )));
    }
    // rescale so the largest sample is 1; x^k then stays in (0, 1]
    let top = samples.iter().copied().fold(f64::MIN, f64::max);
    let logs: Vec<f64> = samples.iter().map(|s| (s / top).ln()).collect();
    let mean_log = logs.iter().sum::<f64>() / logs.len() as f64;
    // returns the profile function and its derivative
    let profile = |k: f64| -> (f64, f64) {
        let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for &l in &logs {
            let w = (k * l).exp();
            s0 += w;
            s1 += w * l;
            s2 += w * l * l;
        }
        let ratio = s1 / s0;
        let f = 1.0 / k + mean_log - ratio;
        let df = -1.0 / (k * k) - (s2 / s0 - ratio * ratio);
        (f, df)
    };

    let shape = if profile(SHAPE_CAP).0 >= 0.0 {
        SHAPE_CAP
    } else {
        let (mut lo, mut hi) = (0.0, SHAPE_CAP);
        let mut k = 1.0;
        let mut converged = false;
        for _ in 0..MAX_NEWTON {
            let (f, df) = profile(k);
            if f.abs() < 1e-12 {
                converged = true;
                break;
            }
            if f > 0.0 {
                lo = k;
            } else {
                hi = k;
            }
            let mut next = k - f / df;
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - k).abs() <= 1e-12 * k.max(1.0) {
                k = next;
                converged = true;
                break;
            }
            k = next;
        }
        if !converged || !k.is_finite() {
            return Err(Error::Fit(
                "weibull shape did not converge in 100 iterations".into(),
            ));
        }
        k
    };
    let mean_pow = logs.iter().map(|l| (shape * l).exp()).sum::<f64>() / logs.len() as f64;
    let scale = top * mean_pow.powf(1.0 / shape);
    Ok(Weibull { shape, scale })
}

/// Class means, a shrunk pooled covariance inverse, and one Weibull tail fit
/// per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MahalanobisModel {
    pub means: Vec<Vec<f64>>,
    /// Column-major `d x d` inverse of the regularized pooled covariance.
    pub inv_cov: Vec<f64>,
    pub weibulls: Vec<Weibull>,
}

/// Shrinkage weight toward the isotropic target.
pub const SHRINKAGE: f64 = 0.1;

impl MahalanobisModel {
    /// Pooled within-class covariance shrunk toward `(trace / d) I`; the
    /// isotropic target keeps distances unchanged under rotations of the
    /// feature space.
    pub fn fit(classes: &[Vec<Vec<f64>>], weibull_tail: usize) -> Result<Self> {
        let d = classes
            .iter()
            .flat_map(|c| c.first())
            .map(Vec::len)
            .next()
            .ok_or_else(|| Error::Fit("no training samples".into()))?;
        let means: Vec<Vec<f64>> = classes
            .iter()
            .map(|c| {
                let mut m = vec![0.0; d];
                c.iter()
                    .for_each(|x| m.iter_mut().zip(x).for_each(|(a, b)| *a += b));
                m.iter_mut().for_each(|a| *a /= c.len() as f64);
                m
            })
            .collect();
        let mut cov = DMatrix::<f64>::zeros(d, d);
        let mut count = 0usize;
        for (c, mu) in classes.iter().zip(&means) {
            for x in c {
                let diff = DVector::from_iterator(d, x.iter().zip(mu).map(|(a, b)| a - b));
                cov.ger(1.0, &diff, &diff, 1.0);
                count += 1;
            }
        }
        let dof = count.saturating_sub(classes.len()).max(1);
        cov /= dof as f64;
        let iso = (cov.trace() / d as f64).max(1e-12);
        let shrunk = cov * (1.0 - SHRINKAGE) + DMatrix::<f64>::identity(d, d) * (SHRINKAGE * iso);
        let inv = shrunk
            .cholesky()
            .ok_or_else(|| {
                Error::Numeric("regularized covariance is not positive definite".into())
            })?
            .inverse();
        let inv = (&inv + inv.transpose()) * 0.5;

        let mut model = Self {
            means,
            inv_cov: inv.as_slice().to_vec(),
            weibulls: Vec::new(),
        };
        for (ci, c) in classes.iter().enumerate() {
            let mut dists: Vec<f64> = c.iter().map(|x| model.distance(x, ci).max(1e-12)).collect();
            dists.sort_by(|a, b| b.total_cmp(a));
            dists.truncate(weibull_tail.min(dists.len()));
            model.weibulls.push(weibull_fit(&dists)?);
        }
        Ok(model)
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    pub fn distance(&self, x: &[f64], class: usize) -> f64 {
        quadratic_form(x, &self.means[class], &self.inv_cov, self.dim()).sqrt()
    }

    /// Smallest tail probability over classes: how anomalous `x` is for the
    /// class it fits best.
    pub fn score(&self, x: &[f64]) -> f64 {
        (0..self.means.len())
            .map(|c| self.weibulls[c].cdf(self.distance(x, c)))
            .fold(f64::INFINITY, f64::min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Weibull as WeibullDist};

    #[test]
    fn identity_covariance_is_euclidean() {
        let id = DMatrix::<f64>::identity(2, 2);
        assert_eq!(
            mahalanobis_distance(&[3.0, 4.0], &[0.0, 0.0], &id).unwrap(),
            5.0
        );
        assert_eq!(
            mahalanobis_distance(&[1.5, -2.0], &[1.5, -2.0], &id).unwrap(),
            0.0
        );
    }

    #[test]
    fn diagonal_covariance_hand_value() {
        let inv = DMatrix::from_diagonal(&DVector::from_vec(vec![0.25, 1.0]));
        let d = mahalanobis_distance(&[2.0, 1.0], &[0.0, 0.0], &inv).unwrap();
        assert!((d - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn non_spd_rejected() {
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(
            mahalanobis_distance(&[1.0, 1.0], &[0.0, 0.0], &indefinite),
            Err(Error::Numeric(_))
        ));
        let asymmetric = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(
            mahalanobis_distance(&[1.0, 1.0], &[0.0, 0.0], &asymmetric),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn weibull_recovers_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dist = WeibullDist::new(1.0, 2.0).unwrap();
        let samples: Vec<f64> = (0..10_000).map(|_| dist.sample(&mut rng)).collect();
        let fit = weibull_fit(&samples).unwrap();
        assert!((fit.shape - 2.0).abs() / 2.0 < 0.05, "shape {}", fit.shape);
        assert!((fit.scale - 1.0).abs() < 0.05, "scale {}", fit.scale);
    }

    #[test]
    fn weibull_identical_samples_cap_shape() {
        let fit = weibull_fit(&[2.5; 10]).unwrap();
        assert_eq!(fit.shape, SHAPE_CAP);
        assert!((fit.scale - 2.5).abs() < 1e-9);
    }

    #[test]
    fn weibull_rejects_bad_input() {
        assert!(matches!(
            weibull_fit(&[1.0, 0.0, 2.0]),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            weibull_fit(&[1.0, -3.0, 2.0]),
            Err(Error::Domain(_))
        ));
        assert!(matches!(weibull_fit(&[1.0, 2.0]), Err(Error::Fit(_))));
    }

    #[test]
    fn weibull_cdf_limits() {
        let fit = weibull_fit(&[0.5, 1.0, 1.7, 2.2, 0.9]).unwrap();
        assert_eq!(fit.cdf(0.0), 0.0);
        assert!((fit.cdf(1e6) - 1.0).abs() < 1e-12);
        let mut last = 0.0;
        for i in 1..100 {
            let v = fit.cdf(i as f64 * 0.05);
            assert!(v >= last);
            last = v;
        }
    }

    #[test]
    fn profile_root_is_mle() {
        // perturbing the fitted shape must not raise the log-likelihood
        let samples = [0.3, 0.8, 1.1, 1.4, 2.0, 2.6, 0.6];
        let fit = weibull_fit(&samples).unwrap();
        let loglik = |k: f64, s: f64| -> f64 {
            samples
                .iter()
                .map(|&x| (k / s).ln() + (k - 1.0) * (x / s).ln() - (x / s).powf(k))
                .sum()
        };
        let best = loglik(fit.shape, fit.scale);
        for (dk, ds) in [(0.01, 0.0), (-0.01, 0.0), (0.0, 0.01), (0.0, -0.01)] {
            assert!(loglik(fit.shape + dk, fit.scale + ds) <= best + 1e-12);
        }
    }
}
