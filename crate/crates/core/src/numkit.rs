//! Dense linear algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::{Error, Result};

const PIVOT_RTOL: f64 = 1e-14;
const RANK_RTOL: f64 = 1e-10;

/// Max absolute entry.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn max_abs_vec(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

fn cholesky(g: &DMatrix<f64>) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    let n = g.nrows();
    if n != g.ncols() {
        return Err(Error::InvalidInput(format!("cholesky of non-square {}x{}", n, g.ncols())));
    }
    let max_diag = (0..n).map(|i| g[(i, i)]).fold(0.0_f64, f64::max);
    let chol = Cholesky::new(g.clone()).ok_or(Error::NotPositiveDefinite { index: 0, pivot: f64::NAN })?;
    let l = chol.l_dirty();
    for i in 0..n {
        let pivot = l[(i, i)] * l[(i, i)];
        if !(pivot > PIVOT_RTOL * max_diag) {
            return Err(Error::NotPositiveDefinite { index: i, pivot });
        }
    }
    Ok(chol)
}

/// Solves `G x = rhs` for symmetric positive definite `G`.
pub fn cholesky_solve(g: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(cholesky(g)?.solve(rhs))
}

pub fn cholesky_solve_vec(g: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(cholesky(g)?.solve(rhs))
}

pub fn cholesky_inverse(g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(cholesky(g)?.inverse())
}

/// Least squares via Householder QR. Requires `n >= p` and full column rank.
pub fn qr_least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::InvalidInput(format!("response length {} != rows {}", y.len(), n)));
    }
    if n < p {
        return Err(Error::InsufficientDof { n, p });
    }
    let qr = x.clone().qr();
    let r = qr.r();
    let scale = x.norm();
    for i in 0..p {
        if r[(i, i)].abs() <= RANK_RTOL * scale {
            return Err(Error::RankDeficient { index: i, value: r[(i, i)] });
        }
    }
    let qty = qr.q().transpose() * y;
    r.solve_upper_triangular(&qty).ok_or(Error::RankDeficient { index: 0, value: 0.0 })
}

/// Thin QR factor `Q` (n×p) of a full-column-rank matrix, plus `R`.
pub fn thin_qr(x: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (n, p) = x.shape();
    if n < p {
        return Err(Error::InsufficientDof { n, p });
    }
    let qr = x.clone().qr();
    let r = qr.r();
    let scale = x.norm();
    for i in 0..p {
        if r[(i, i)].abs() <= RANK_RTOL * scale {
            return Err(Error::RankDeficient { index: i, value: r[(i, i)] });
        }
    }
    Ok((qr.q(), r))
}

/// Symmetric eigendecomposition, eigenvalues sorted descending; columns of the
/// returned matrix are the matching unit eigenvectors.
pub fn sym_eig(s: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = s.nrows();
    if n != s.ncols() {
        return Err(Error::InvalidInput("sym_eig of non-square matrix".into()));
    }
    let sym = (s + s.transpose()) * 0.5;
    let eig = SymmetricEigen::try_new(sym, f64::EPSILON, 10_000).ok_or(Error::NoConvergence)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        vectors.set_column(k, &eig.eigenvectors.column(i));
    }
    Ok((values, vectors))
}

/// trace(M⁻¹ N) through an LU solve.
pub fn trace_of_solve(m: &DMatrix<f64>, n: &DMatrix<f64>) -> Result<f64> {
    if !m.is_square() || m.shape() != n.shape() {
        return Err(Error::InvalidInput("trace_of_solve shape mismatch".into()));
    }
    let lu = m.clone().lu();
    let sol = lu.solve(n).ok_or(Error::Singular)?;
    let t = sol.trace();
    if t.is_finite() {
        Ok(t)
    } else {
        Err(Error::Singular)
    }
}

/// trace[(I_n + U Mk Uᵀ)⁻¹ U Nk Uᵀ] evaluated as trace[(I_k + Mk UᵀU)⁻¹ Nk UᵀU].
/// `gram` is UᵀU; only k×k work is done.
pub fn trace_of_solve_reduced(gram: &DMatrix<f64>, m_kernel: &DMatrix<f64>, n_kernel: &DMatrix<f64>) -> Result<f64> {
    let k = gram.nrows();
    if k == 0 {
        return Ok(0.0);
    }
    let lhs = DMatrix::identity(k, k) + m_kernel * gram;
    let rhs = n_kernel * gram;
    trace_of_solve(&lhs, &rhs)
}

/// Same quantity as [`trace_of_solve_reduced`] but assembled in n×n form.
pub fn trace_of_solve_direct(u: &DMatrix<f64>, m_kernel: &DMatrix<f64>, n_kernel: &DMatrix<f64>) -> Result<f64> {
    let n = u.nrows();
    if u.ncols() == 0 {
        return Ok(0.0);
    }
    let lhs = DMatrix::identity(n, n) + u * m_kernel * u.transpose();
    let rhs = u * n_kernel * u.transpose();
    trace_of_solve(&lhs, &rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
        let a = random_matrix(rng, n, n);
        &a * a.transpose() + DMatrix::identity(n, n) * 0.5
    }

    #[test]
    fn cholesky_identity_and_diagonal() {
        let x = cholesky_solve_vec(&DMatrix::identity(3, 3), &DVector::from_vec(vec![1.0, 2.0, 3.0])).unwrap();
        assert_eq!(x.as_slice(), &[1.0, 2.0, 3.0]);
        let g = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 4.0]));
        let x = cholesky_solve_vec(&g, &DVector::from_vec(vec![2.0, 4.0])).unwrap();
        assert_relative_eq!(x[0], 1.0);
        assert_relative_eq!(x[1], 1.0);
    }

    #[test]
    fn cholesky_rejects_indefinite_and_singular() {
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(cholesky_solve_vec(&g, &DVector::zeros(2)), Err(Error::NotPositiveDefinite { .. })));
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(cholesky_solve_vec(&g, &DVector::zeros(2)), Err(Error::NotPositiveDefinite { .. })));
    }

    #[test]
    fn cholesky_and_qr_residuals_on_many_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let n = rng.gen_range(1..9);
            let g = random_spd(&mut rng, n);
            let rhs = random_matrix(&mut rng, n, 1);
            let x = cholesky_solve(&g, &rhs).unwrap();
            assert!(max_abs(&(&g * &x - &rhs)) <= 1e-10 * (1.0 + max_abs(&rhs)));

            let p = rng.gen_range(1..6);
            let extra = rng.gen_range(0..20);
            let xm = random_matrix(&mut rng, p + extra, p);
            let y = DVector::from_fn(xm.nrows(), |_, _| rng.gen_range(-3.0..3.0));
            let b = qr_least_squares(&xm, &y).unwrap();
            assert!(max_abs_vec(&(xm.transpose() * (&y - &xm * &b))) <= 1e-8);
        }
    }

    #[test]
    fn qr_examples() {
        let b = qr_least_squares(&DMatrix::identity(2, 2), &DVector::from_vec(vec![3.0, -1.0])).unwrap();
        assert_relative_eq!(b[0], 3.0, epsilon = 1e-14);
        assert_relative_eq!(b[1], -1.0, epsilon = 1e-14);
        let b = qr_least_squares(&DMatrix::from_element(2, 1, 1.0), &DVector::from_vec(vec![1.0, 3.0])).unwrap();
        assert_relative_eq!(b[0], 2.0, epsilon = 1e-14);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_matrix(&mut rng, 50, 10);
        let beta = DVector::from_fn(10, |i, _| i as f64 - 4.5);
        let b = qr_least_squares(&x, &(&x * &beta)).unwrap();
        assert!(max_abs_vec(&(b - beta)) <= 1e-9);
    }

    #[test]
    fn qr_detects_rank_deficiency() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert!(matches!(qr_least_squares(&x, &y), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn eig_examples() {
        let (l, _) = sym_eig(&DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 3.0]))).unwrap();
        assert_eq!(l.as_slice(), &[3.0, 1.0]);
        let (l, _) = sym_eig(&DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])).unwrap();
        assert_relative_eq!(l[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(l[1], -1.0, epsilon = 1e-14);
    }

    #[test]
    fn trace_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = random_matrix(&mut rng, 4, 4);
        assert_relative_eq!(trace_of_solve(&DMatrix::identity(4, 4), &n).unwrap(), n.trace(), epsilon = 1e-14);
        let t = trace_of_solve(&(DMatrix::identity(4, 4) * 2.0), &DMatrix::identity(4, 4)).unwrap();
        assert_relative_eq!(t, 2.0, epsilon = 1e-14);
        let m = random_matrix(&mut rng, 10, 10) + DMatrix::identity(10, 10) * 4.0;
        let n = random_matrix(&mut rng, 10, 10);
        let explicit = (m.clone().try_inverse().unwrap() * &n).trace();
        assert_relative_eq!(trace_of_solve(&m, &n).unwrap(), explicit, epsilon = 1e-10);
    }

    #[test]
    fn reduced_trace_matches_direct() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let k = rng.gen_range(1..6);
            let u = random_matrix(&mut rng, 15, k);
            let a = random_matrix(&mut rng, k, k);
            let mk = &a * a.transpose() * 0.3;
            let nk = random_matrix(&mut rng, k, k);
            let gram = u.transpose() * &u;
            let r = trace_of_solve_reduced(&gram, &mk, &nk).unwrap();
            let d = trace_of_solve_direct(&u, &mk, &nk).unwrap();
            assert!((r - d).abs() <= 1e-10 * (1.0 + d.abs()));
        }
    }

    proptest! {
        #[test]
        fn eig_reconstructs_and_preserves_trace(seed in 0u64..10_000, n in 1usize..7) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_matrix(&mut rng, n, n);
            let s = &a + a.transpose();
            let (l, v) = sym_eig(&s).unwrap();
            let norm = s.norm().max(1.0);
            let recon = &v * DMatrix::from_diagonal(&l) * v.transpose();
            prop_assert!(max_abs(&(recon - &s)) <= 1e-9 * norm);
            prop_assert!(max_abs(&(v.transpose() * &v - DMatrix::identity(n, n))) <= 1e-9);
            prop_assert!((l.sum() - s.trace()).abs() <= 1e-9 * norm);
            for i in 1..n { prop_assert!(l[i - 1] >= l[i]); }
        }

        #[test]
        fn trace_matches_columnwise(seed in 0u64..10_000, n in 1usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_matrix(&mut rng, n, n) + DMatrix::identity(n, n) * 3.0;
            let nn = random_matrix(&mut rng, n, n);
            let lu = m.clone().lu();
            let mut sum = 0.0;
            for i in 0..n {
                let col = lu.solve(&nn.column(i).into_owned()).unwrap();
                sum += col[i];
            }
            prop_assert!((trace_of_solve(&m, &nn).unwrap() - sum).abs() <= 1e-10 * (1.0 + sum.abs()));
        }
    }
}
