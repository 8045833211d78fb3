//! Independent df references: Monte Carlo covariance and finite-difference divergence.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct McConfig {
    pub replicates: usize,
    pub sigma: f64,
    pub seed: u64,
    pub true_beta: DVector<f64>,
    pub x: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleEstimate {
    pub value: f64,
    pub std_error: f64,
    /// Replicates that contributed.
    pub replicates: usize,
    pub failures: usize,
}

/// Independent stream `stream` of the generator keyed by `seed`.
pub fn replicate_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn gaussian_vector(rng: &mut ChaCha8Rng, n: usize, sigma: f64) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| {
        let z: f64 = StandardNormal.sample(rng);
        sigma * z
    }))
}

pub fn gaussian_sampler(seed: u64, n: usize, sigma: f64) -> DVector<f64> {
    gaussian_vector(&mut replicate_rng(seed, 0), n, sigma)
}

/// Noise for replicate `b`; identical whether replicates run serially or in parallel.
pub fn replicate_noise(seed: u64, b: usize, n: usize, sigma: f64) -> DVector<f64> {
    gaussian_vector(&mut replicate_rng(seed, b as u64), n, sigma)
}

/// Per-replicate terms whose mean is the covariance df estimate:
/// (B/(B−1))·(y_b − ȳ)ᵀ(ŷ_b − mean ŷ)/σ².
pub fn covariance_terms(ys: &[DVector<f64>], fits: &[DVector<f64>], sigma2: f64) -> Vec<f64> {
    let b = ys.len();
    if b < 2 {
        return Vec::new();
    }
    let n = ys[0].len();
    let mut ybar = DVector::zeros(n);
    let mut fbar = DVector::zeros(n);
    for (y, f) in ys.iter().zip(fits) {
        ybar += y;
        fbar += f;
    }
    ybar /= b as f64;
    fbar /= b as f64;
    let scale = b as f64 / ((b - 1) as f64 * sigma2);
    ys.iter().zip(fits).map(|(y, f)| (y - &ybar).dot(&(f - &fbar)) * scale).collect()
}

/// Mean and standard error of the mean.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let b = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / b;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (b - 1.0);
    (mean, (var / b).sqrt())
}

pub fn check_failures(failures: usize, total: usize) -> Result<()> {
    if failures * 100 > total {
        Err(Error::TooManyFailures { failed: failures, total })
    } else {
        Ok(())
    }
}

pub fn df_covariance_mc<F>(config: &McConfig, fitter: F) -> Result<OracleEstimate>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>> + Sync,
{
    if config.replicates < 2 || !(config.sigma > 0.0) {
        return Err(Error::InvalidInput("need B >= 2 and sigma > 0".into()));
    }
    let mu = &config.x * &config.true_beta;
    let n = mu.len();
    let draws: Vec<Option<(DVector<f64>, DVector<f64>)>> = (0..config.replicates)
        .into_par_iter()
        .map(|b| {
            let y = &mu + replicate_noise(config.seed, b, n, config.sigma);
            fitter(&y).ok().filter(|f| f.len() == n && f.iter().all(|v| v.is_finite())).map(|f| (y, f))
        })
        .collect();
    let failures = draws.iter().filter(|d| d.is_none()).count();
    check_failures(failures, config.replicates)?;
    let (ys, fits): (Vec<_>, Vec<_>) = draws.into_iter().flatten().unzip();
    let terms = covariance_terms(&ys, &fits, config.sigma * config.sigma);
    let (value, std_error) = mean_and_se(&terms);
    Ok(OracleEstimate { value, std_error, replicates: ys.len(), failures })
}

pub fn default_step(y: &DVector<f64>) -> f64 {
    1e-5 * (1.0 + y.iter().fold(0.0_f64, |a, v| a.max(v.abs())))
}

/// Σᵢ ∂ŷᵢ/∂yᵢ by central differences, with an h/2 Richardson correction when
/// the two step sizes disagree by more than 1e-3.
pub fn df_divergence_fd<F>(fitter: F, y: &DVector<f64>, h: f64) -> Result<f64>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>> + Sync,
{
    let n = y.len();
    let base = fitter(y)?;
    let partials: Vec<Result<(f64, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let eval = |step: f64| -> Result<f64> {
                let mut yp = y.clone();
                yp[i] += step;
                Ok(fitter(&yp)?[i])
            };
            let (up, down) = (eval(h)?, eval(-h)?);
            let forward = (up - base[i]) / h;
            let backward = (base[i] - down) / h;
            if (forward - backward).abs() > 0.5 {
                return Err(Error::DiscontinuityDetected(i));
            }
            let (up2, down2) = (eval(0.5 * h)?, eval(-0.5 * h)?);
            Ok(((up - down) / (2.0 * h), (up2 - down2) / h))
        })
        .collect();
    let mut full = 0.0;
    let mut half = 0.0;
    for p in partials {
        let (a, b) = p?;
        full += a;
        half += b;
    }
    if (full - half).abs() > 1e-3 {
        Ok((4.0 * half - full) / 3.0)
    } else {
        Ok(full)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Dataset;
    use crate::solvers::{fit_penalized, Prepared, SolverConfig};
    use crate::model::PenaltySpec;
    use rand::Rng;

    fn design(seed: u64, n: usize, p: usize) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, p, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn sampler_is_deterministic() {
        assert_eq!(gaussian_sampler(42, 10, 2.0), gaussian_sampler(42, 10, 2.0));
        assert_ne!(replicate_noise(42, 1, 10, 2.0), replicate_noise(42, 2, 10, 2.0));
    }

    #[test]
    fn sampler_moments() {
        let sigma = 1.5;
        let v = gaussian_sampler(7, 1_000_000, sigma);
        let mean = v.mean();
        assert!(mean.abs() <= 4.0 * sigma / 1000.0);
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
        assert!((var / (sigma * sigma) - 1.0).abs() <= 0.01);
    }

    #[test]
    fn covariance_of_ols_is_p() {
        let x = design(1, 50, 10);
        let hat = &x * (x.transpose() * &x).try_inverse().unwrap() * x.transpose();
        let cfg = McConfig { replicates: 5000, sigma: 1.0, seed: 3, true_beta: DVector::from_element(10, 1.0), x };
        let est = df_covariance_mc(&cfg, |y| Ok(&hat * y)).unwrap();
        assert!((est.value - 10.0).abs() <= 3.0 * est.std_error, "{est:?}");
        let ident = df_covariance_mc(&cfg, |y| Ok(y.clone())).unwrap();
        assert!((ident.value - 50.0).abs() <= 3.0 * ident.std_error);
    }

    #[test]
    fn failures_are_counted_and_capped() {
        let x = design(2, 20, 2);
        let cfg = McConfig { replicates: 200, sigma: 1.0, seed: 3, true_beta: DVector::zeros(2), x };
        let est = df_covariance_mc(&cfg, |y| if y[0] > 2.8 { Err(Error::Singular) } else { Ok(y.clone()) }).unwrap();
        assert!(est.failures <= 2);
        assert!(matches!(df_covariance_mc(&cfg, |y| if y[0] > 0.0 { Err(Error::Singular) } else { Ok(y.clone()) }), Err(Error::TooManyFailures { .. })));
    }

    #[test]
    fn divergence_is_exact_for_affine_maps() {
        let x = design(4, 30, 5);
        let hat = &x * (x.transpose() * &x).try_inverse().unwrap() * x.transpose();
        let offset = DVector::from_element(30, 0.7);
        let y = DVector::from_fn(30, |i, _| i as f64 * 0.1);
        let d = df_divergence_fd(|v| Ok(&hat * v + &offset), &y, default_step(&y)).unwrap();
        assert!((d - 5.0).abs() <= 1e-8);
    }

    #[test]
    fn lasso_divergence_counts_active_set() {
        let x = design(5, 40, 8);
        let beta = DVector::from_vec(vec![2.0, -1.5, 0.0, 1.0, 0.0, 0.0, 0.8, 0.0]);
        let y = &x * beta + gaussian_sampler(9, 40, 0.3);
        let data = Dataset::new(x, y.clone()).unwrap();
        let gamma = 0.3 * Prepared::new(&data, &PenaltySpec::Lasso).unwrap().gamma_max();
        let cfg = SolverConfig::default();
        let fit = fit_penalized(&data, &PenaltySpec::Lasso, gamma, &cfg, None).unwrap();
        let d = df_divergence_fd(|v| Ok(&data.x * fit_penalized(&data.with_response(v.clone()), &PenaltySpec::Lasso, gamma, &cfg, Some(&fit.beta))?.beta), &y, default_step(&y)).unwrap();
        assert!((d - fit.active.size() as f64).abs() <= 1e-4);
    }

    #[test]
    fn jumps_are_detected() {
        let y = DVector::from_vec(vec![0.0, 1.0]);
        let r = df_divergence_fd(|v| Ok(DVector::from_fn(2, |i, _| if v[i] > 0.0 { 1.0 } else { 0.0 })), &y, 1e-5);
        assert_eq!(r.unwrap_err(), Error::DiscontinuityDetected(0));
    }
}
