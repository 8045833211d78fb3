//! Information criteria, σ² estimation, γ selection and leave-one-out CV.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::model::{Dataset, FitResult, PathResult, PenaltySpec};
use crate::solvers::{self, SolverConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DfSource {
    Analytic,
    ActiveSetSize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criterion {
    Aic,
    Bic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriterionValue {
    pub gamma: f64,
    pub aic: f64,
    pub bic: f64,
    pub rss: f64,
    pub df_used: f64,
    pub df_source: DfSource,
}

impl CriterionValue {
    pub fn get(&self, c: Criterion) -> f64 {
        match c {
            Criterion::Aic => self.aic,
            Criterion::Bic => self.bic,
        }
    }
}

/// ‖y − Xβ̂^LS‖²/(n − p).
pub fn estimate_sigma2(data: &Dataset) -> Result<f64> {
    let (n, p) = (data.n(), data.p());
    if n <= p {
        return Err(Error::InsufficientDof { n, p });
    }
    let b = solvers::fit_ols(data)?;
    Ok((&data.y - &data.x * b).norm_squared() / (n - p) as f64)
}

pub fn criteria_from_rss(gamma: f64, rss: f64, n: usize, df: f64, sigma2: f64, df_source: DfSource) -> CriterionValue {
    let nf = n as f64;
    let fit_term = rss / (nf * sigma2);
    CriterionValue {
        gamma,
        aic: fit_term + 2.0 / nf * df,
        bic: fit_term + nf.ln() / nf * df,
        rss,
        df_used: df,
        df_source,
    }
}

pub fn criteria(fit: &FitResult, df: f64, sigma2: f64, data: &Dataset, df_source: DfSource) -> CriterionValue {
    criteria_from_rss(fit.gamma, fit.rss(data), data.n(), df, sigma2, df_source)
}

/// Fills `path.criteria` with one entry per (γ, df source); points without a
/// df estimate are skipped.
pub fn attach_criteria(path: &mut PathResult, data: &Dataset, sigma2: f64) {
    let mut out = Vec::with_capacity(2 * path.gammas.len());
    for (fit, dof) in path.fits.iter().zip(&path.dofs) {
        if let Some(d) = dof {
            out.push(criteria(fit, d.value, sigma2, data, DfSource::Analytic));
            out.push(criteria(fit, d.base_active as f64, sigma2, data, DfSource::ActiveSetSize));
        }
    }
    path.criteria = Some(out);
}

/// Index of the minimum; among (near-)ties the earliest entry wins, which on a
/// descending grid is the largest γ.
pub fn argmin_prefer_first(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if !v.is_finite() {
            continue;
        }
        match best {
            None => best = Some(i),
            Some(b) => {
                let cur = values[b];
                if v < cur - 1e-12 * cur.abs().max(1e-300) {
                    best = Some(i);
                }
            }
        }
    }
    best
}

/// Grid γ minimizing the criterion, ties toward larger γ.
pub fn select_gamma(path: &PathResult, criterion: Criterion, df_source: DfSource) -> Result<f64> {
    let crit = path.criteria.as_ref().ok_or_else(|| Error::InvalidInput("criteria not populated".into()))?;
    let rows: Vec<&CriterionValue> = crit.iter().filter(|c| c.df_source == df_source).collect();
    let values: Vec<f64> = rows.iter().map(|c| c.get(criterion)).collect();
    argmin_prefer_first(&values).map(|i| rows[i].gamma).ok_or_else(|| Error::InvalidInput("no criterion values".into()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub gamma: f64,
    pub index: usize,
    pub errors: Vec<f64>,
}

/// Training data for fold `i`.
pub fn loo_fold(data: &Dataset, i: usize) -> Dataset {
    data.without_row(i)
}

/// Leave-one-out CV over `grid`; adaptive weights are refit inside every fold.
pub fn loo_cv(data: &Dataset, penalty: &PenaltySpec, grid: &[f64], config: &SolverConfig) -> Result<CvResult> {
    let n = data.n();
    let per_fold: Vec<Result<Vec<f64>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let fold = loo_fold(data, i);
            let fits = solvers::fit_grid(&fold, penalty, grid, config)?;
            let row = data.x.row(i);
            Ok(fits.iter().map(|f| (data.y[i] - (row * &f.beta)[0]).powi(2)).collect())
        })
        .collect();
    let mut errors = vec![0.0; grid.len()];
    for fold in per_fold {
        for (e, v) in errors.iter_mut().zip(fold?) {
            *e += v;
        }
    }
    for e in errors.iter_mut() {
        *e /= n as f64;
    }
    let index = argmin_prefer_first(&errors).ok_or_else(|| Error::InvalidInput("empty grid".into()))?;
    Ok(CvResult { gamma: grid[index], index, errors })
}

/// Residual norm of a response under coefficients.
pub fn rss(data: &Dataset, beta: &DVector<f64>) -> f64 {
    (&data.y - &data.x * beta).norm_squared()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::WeightScheme;
    use crate::oracle::gaussian_sampler;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sigma2_examples() {
        let d = Dataset::new(DMatrix::from_element(3, 1, 1.0), DVector::from_vec(vec![0.0, 0.0, 3.0])).unwrap();
        assert_relative_eq!(estimate_sigma2(&d).unwrap(), 3.0, epsilon = 1e-14);
        let x = DMatrix::from_fn(20, 3, |i, j| ((i * 7 + j * 3) % 5) as f64 + (i as f64).sin());
        let y = &x * DVector::from_vec(vec![1.0, 2.0, -1.0]);
        assert!(estimate_sigma2(&Dataset::new(x.clone(), y).unwrap()).unwrap() <= 1e-18);
        let d = Dataset::new(x.rows(0, 3).into_owned(), DVector::zeros(3)).unwrap();
        assert!(matches!(estimate_sigma2(&d), Err(Error::InsufficientDof { .. })));
    }

    #[test]
    fn sigma2_chi_square_band() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x = DMatrix::from_fn(500, 10, |_, _| rng.gen_range(-1.0..1.0));
        let y = &x * DVector::from_element(10, 1.0) + gaussian_sampler(18, 500, 2.0);
        let s = estimate_sigma2(&Dataset::new(x, y).unwrap()).unwrap();
        assert!((3.3..=4.8).contains(&s), "{s}");
    }

    #[test]
    fn criteria_examples() {
        let c = criteria_from_rss(1.0, 50.0 * 2.0, 50, 3.0, 2.0, DfSource::Analytic);
        assert_relative_eq!(c.bic, 1.0 + 3.0 * 50f64.ln() / 50.0, epsilon = 1e-14);
        let c = criteria_from_rss(1.0, 0.0, 50, 0.0, 2.0, DfSource::Analytic);
        assert_eq!((c.aic, c.bic), (0.0, 0.0));
    }

    proptest! {
        #[test]
        fn criteria_affine_in_df(rss in 0.0f64..100.0, n in 2usize..500, df in 0.0f64..20.0, delta in 0.0f64..5.0, s2 in 0.1f64..10.0) {
            let a = criteria_from_rss(1.0, rss, n, df, s2, DfSource::Analytic);
            let b = criteria_from_rss(1.0, rss, n, df + delta, s2, DfSource::Analytic);
            let nf = n as f64;
            prop_assert!(((b.aic - a.aic) - 2.0 / nf * delta).abs() <= 1e-12);
            prop_assert!(((b.bic - a.bic) - nf.ln() / nf * delta).abs() <= 1e-12);
        }

        #[test]
        fn argmin_invariant_to_monotone_maps(v in proptest::collection::vec(-5.0f64..5.0, 1..40)) {
            let mapped: Vec<f64> = v.iter().map(|x| (x * 0.5).exp() + 3.0).collect();
            prop_assert_eq!(argmin_prefer_first(&v), argmin_prefer_first(&mapped));
        }
    }

    #[test]
    fn ties_go_to_first() {
        assert_eq!(argmin_prefer_first(&[1.0, 1.0, 1.0]), Some(0));
        assert_eq!(argmin_prefer_first(&[3.0, 1.0, 2.0]), Some(1));
    }

    #[test]
    fn cv_null_grid_and_noiseless() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = DMatrix::from_fn(30, 3, |_, _| rng.gen_range(-1.0..1.0));
        let y = &x * DVector::from_vec(vec![2.0, -1.0, 1.0]);
        let d = Dataset::new(x, y.clone()).unwrap();
        let cfg = SolverConfig::default();
        let cv = loo_cv(&d, &PenaltySpec::Lasso, &[1e6], &cfg).unwrap();
        assert_relative_eq!(cv.errors[0], y.norm_squared() / 30.0, epsilon = 1e-12);
        let grid = solvers::gamma_grid(50.0, 20, 5.0);
        let cv = loo_cv(&d, &PenaltySpec::Lasso, &grid, &cfg).unwrap();
        assert_eq!(cv.index, grid.len() - 1);
    }

    #[test]
    fn folds_exclude_their_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = DMatrix::from_fn(12, 2, |_, _| rng.gen_range(-1.0..1.0));
        let y = DVector::from_fn(12, |i, _| i as f64);
        let d = Dataset::new(x, y).unwrap();
        for i in 0..12 {
            let f = loo_fold(&d, i);
            assert_eq!(f.n(), 11);
            assert!(!f.y.iter().any(|v| *v == i as f64));
            let prep = solvers::Prepared::new(&f, &PenaltySpec::AdaptiveLasso(WeightScheme::InversePower(1.0))).unwrap();
            assert_eq!(prep.beta_ls().unwrap(), &solvers::fit_ols(&f).unwrap());
        }
    }
}
