//! Degrees-of-freedom estimators for the four penalties, plus derivative and
//! spectral diagnostics of the group penalty curvature along the path.

use nalgebra::{DMatrix, DVector};

use crate::model::{active_threshold, ActiveSets, Dataset, DofEstimate, DofMethod, FitResult, GroupStructure, PathResult, PenaltySpec, WeightScheme};
use crate::numkit;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DesignKind {
    Orthonormal,
    General,
}

impl DesignKind {
    /// Orthonormal when ‖XᵀX − I‖∞ ≤ 1e-10.
    pub fn detect(data: &Dataset) -> Self {
        let p = data.p();
        if data.n() < p {
            return DesignKind::General;
        }
        let g = data.x.transpose() * &data.x;
        if numkit::max_abs(&(g - DMatrix::identity(p, p))) <= 1e-10 {
            DesignKind::Orthonormal
        } else {
            DesignKind::General
        }
    }
}

/// How the n×n trace is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TracePath {
    /// |𝒜_p|×|𝒜_p| solve via the push-through identity.
    Reduced,
    /// Explicit n×n operators.
    Direct,
}

/// `(w(z), w'(z))`. A `Fixed` scheme carries its values separately, so it
/// reports a unit weight and zero derivative.
pub fn weight_and_derivative(scheme: &WeightScheme, z: f64) -> Result<(f64, f64)> {
    if let WeightScheme::Fixed(_) = scheme {
        return Ok((1.0, 0.0));
    }
    if !(z > 1e-12) {
        return Err(Error::DegenerateWeight(0));
    }
    Ok(match scheme {
        WeightScheme::InversePower(a) => (z.powf(-a), -a * z.powf(-a - 1.0)),
        WeightScheme::ExponentialDecay(a) => {
            let e = (-a * z).exp();
            (e, -a * e)
        }
        WeightScheme::GroupInverseNorm => (1.0 / z, -1.0 / (z * z)),
        WeightScheme::Fixed(_) => unreachable!(),
    })
}

fn sgn(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn df_lasso(active: &ActiveSets) -> DofEstimate {
    DofEstimate::new(active.size() as f64, active.size(), 0, DofMethod::Lasso)
}

fn active_columns(data: &Dataset, idx: &[usize]) -> DMatrix<f64> {
    data.x.select_columns(idx)
}

fn active_gram(data: &Dataset, idx: &[usize]) -> DMatrix<f64> {
    let xa = active_columns(data, idx);
    xa.transpose() * xa
}

/// Weighted-ℓ₁ estimator with data-driven weights.
pub fn df_adaptive_lasso(fit: &FitResult, beta_ls: &DVector<f64>, scheme: &WeightScheme, gamma: f64, design: DesignKind, data: &Dataset) -> Result<DofEstimate> {
    let idx = &fit.active.a_p;
    let k = idx.len();
    let method = match design {
        DesignKind::Orthonormal => DofMethod::AdaptiveLassoOrthonormal,
        DesignKind::General => DofMethod::AdaptiveLassoGeneral,
    };
    if k == 0 || scheme.is_fixed() {
        return Ok(DofEstimate::new(k as f64, k, 0, method));
    }
    let mut derivs = Vec::with_capacity(k);
    for &j in idx {
        let (_, d) = weight_and_derivative(scheme, beta_ls[j].abs()).map_err(|_| Error::DegenerateWeight(j))?;
        derivs.push(d);
    }
    let correction = match design {
        DesignKind::Orthonormal => -gamma * derivs.iter().sum::<f64>(),
        DesignKind::General => {
            let ginv = numkit::cholesky_inverse(&active_gram(data, idx)).map_err(|_| Error::Singular)?;
            -gamma
                * idx
                    .iter()
                    .enumerate()
                    .map(|(a, &j)| sgn(fit.beta[j]) * sgn(beta_ls[j]) * derivs[a] * ginv[(a, a)])
                    .sum::<f64>()
        }
    };
    let mut est = DofEstimate::new(k as f64 + correction, k, 0, method);
    est.inflation = correction;
    Ok(est)
}

/// One slope per constant-active-set stretch of an Adaptive Lasso path,
/// ordered by increasing γ.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalSlope {
    pub gamma_low: f64,
    pub gamma_high: f64,
    pub active_size: usize,
    pub slope: f64,
}

pub fn slopes_along_path(path: &PathResult) -> Vec<IntervalSlope> {
    let mut out = Vec::new();
    let mut k = path.gammas.len();
    while k > 0 {
        let end = k - 1;
        let mut start = end;
        while start > 0 && path.fits[start - 1].active.a_p == path.fits[end].active.a_p {
            start -= 1;
        }
        let pts: Vec<(f64, f64)> = (start..=end)
            .filter_map(|i| path.dofs[i].as_ref().map(|d| (path.gammas[i], d.value)))
            .collect();
        let size = path.fits[end].active.size();
        if let (Some(&(g_hi, d_hi)), Some(&(g_lo, d_lo))) = (pts.first(), pts.last()) {
            let slope = if pts.len() >= 2 { (d_hi - d_lo) / (g_hi - g_lo) } else { (d_hi - size as f64) / g_hi };
            out.push(IntervalSlope { gamma_low: path.gammas[end], gamma_high: path.gammas[start], active_size: size, slope });
        }
        k = start;
    }
    out
}

/// Block-diagonal matrix over the active variables (ordered as `index`).
#[derive(Debug, Clone, PartialEq)]
pub struct BlockMatrix {
    pub index: Vec<usize>,
    pub dense: DMatrix<f64>,
    /// `(group, block)` pairs in active-group order.
    pub blocks: Vec<(usize, DMatrix<f64>)>,
}

impl BlockMatrix {
    fn assemble(active: &ActiveSets, groups: &GroupStructure, blocks: Vec<(usize, DMatrix<f64>)>) -> Self {
        let k = active.a_p.len();
        let mut dense = DMatrix::zeros(k, k);
        for (g, blk) in &blocks {
            let pos: Vec<usize> = groups.members(*g).iter().map(|&j| active.pi[j].expect("active member")).collect();
            for (a, &pa) in pos.iter().enumerate() {
                for (b, &pb) in pos.iter().enumerate() {
                    dense[(pa, pb)] = blk[(a, b)];
                }
            }
        }
        Self { index: active.a_p.clone(), dense, blocks }
    }
}

pub type PiMatrix = BlockMatrix;
pub type PhiMatrix = BlockMatrix;

fn active_group_norm(fit: &FitResult, groups: &GroupStructure, g: usize) -> Result<f64> {
    let r = groups.block_norm(&fit.beta, g);
    if r > active_threshold(&fit.beta) {
        Ok(r)
    } else {
        Err(Error::InactiveGroupRequested(g))
    }
}

fn grouped_active(fit: &FitResult, groups: &GroupStructure) -> ActiveSets {
    if fit.active.a_g.is_empty() && !fit.active.a_p.is_empty() {
        ActiveSets::from_beta(&fit.beta, Some(groups))
    } else {
        fit.active.clone()
    }
}

pub fn pi_block(beta_g: &DVector<f64>, w: f64) -> DMatrix<f64> {
    let m = beta_g.len();
    let r = beta_g.norm();
    (DMatrix::identity(m, m) / r - beta_g * beta_g.transpose() / (r * r * r)) * w
}

pub fn build_pi(fit: &FitResult, groups: &GroupStructure, w: &DVector<f64>) -> Result<PiMatrix> {
    let active = grouped_active(fit, groups);
    let mut blocks = Vec::with_capacity(active.a_g.len());
    for &g in &active.a_g {
        active_group_norm(fit, groups, g)?;
        let blk = pi_block(&groups.block(&fit.beta, g), w[g]);
        if cfg!(debug_assertions) {
            let (l, _) = numkit::sym_eig(&blk)?;
            debug_assert!(l.iter().all(|v| *v >= -1e-10 * w[g].max(1.0) * l[0].abs().max(1.0)));
        }
        blocks.push((g, blk));
    }
    Ok(BlockMatrix::assemble(&active, groups, blocks))
}

/// Signed Φ: blocks (β̂_g/‖β̂_g‖)·w′(‖β̂_g^LS‖)·(β̂_g^LS)ᵀ/‖β̂_g^LS‖.
pub fn build_phi(fit: &FitResult, beta_ls: &DVector<f64>, groups: &GroupStructure, scheme: &WeightScheme) -> Result<PhiMatrix> {
    let active = grouped_active(fit, groups);
    let mut blocks = Vec::with_capacity(active.a_g.len());
    for &g in &active.a_g {
        let r = active_group_norm(fit, groups, g)?;
        let ls = groups.block(beta_ls, g);
        let z = ls.norm();
        let (_, dw) = weight_and_derivative(scheme, z).map_err(|_| Error::DegenerateWeight(g))?;
        let blk = if dw == 0.0 {
            DMatrix::zeros(ls.len(), ls.len())
        } else {
            groups.block(&fit.beta, g) * ls.transpose() * (dw / (r * z))
        };
        blocks.push((g, blk));
    }
    Ok(BlockMatrix::assemble(&active, groups, blocks))
}

/// Positive Φ for inverse-norm weights: blocks (β̂_g/‖β̂_g‖)(β̂_g^LS)ᵀ/‖β̂_g^LS‖³.
pub fn build_phi_inverse_norm(fit: &FitResult, beta_ls: &DVector<f64>, groups: &GroupStructure) -> Result<PhiMatrix> {
    let active = grouped_active(fit, groups);
    let mut blocks = Vec::with_capacity(active.a_g.len());
    for &g in &active.a_g {
        let r = active_group_norm(fit, groups, g)?;
        let ls = groups.block(beta_ls, g);
        let z = ls.norm();
        if !(z > 1e-12) {
            return Err(Error::DegenerateWeight(g));
        }
        blocks.push((g, groups.block(&fit.beta, g) * ls.transpose() / (r * z * z * z)));
    }
    Ok(BlockMatrix::assemble(&active, groups, blocks))
}

struct TraceParts {
    value: f64,
    contraction: f64,
}

/// trace[(I + γB)⁻¹(A − γ·sign·C)] with B, C built from Π, Φ.
fn group_trace(pi: &DMatrix<f64>, phi: Option<(&DMatrix<f64>, f64)>, index: &[usize], gamma: f64, design: DesignKind, data: &Dataset, path: TracePath) -> Result<TraceParts> {
    let k = index.len();
    if k == 0 {
        return Ok(TraceParts { value: 0.0, contraction: 0.0 });
    }
    let (gram, ginv) = match design {
        DesignKind::Orthonormal => (DMatrix::identity(k, k), DMatrix::identity(k, k)),
        DesignKind::General => {
            let g = active_gram(data, index);
            let inv = numkit::cholesky_inverse(&g).map_err(|_| Error::Singular)?;
            (g, inv)
        }
    };
    let m_kernel = &ginv * pi * &ginv * gamma;
    let base_kernel = ginv.clone();
    let full_kernel = match phi {
        Some((phi, sign)) => &ginv - &ginv * phi * &ginv * (gamma * sign),
        None => ginv.clone(),
    };
    let eval = |nk: &DMatrix<f64>| -> Result<f64> {
        match path {
            TracePath::Reduced => numkit::trace_of_solve_reduced(&gram, &m_kernel, nk),
            TracePath::Direct => numkit::trace_of_solve_direct(&active_columns(data, index), &m_kernel, nk),
        }
    };
    let plain = eval(&base_kernel)?;
    let value = if phi.is_some() { eval(&full_kernel)? } else { plain };
    Ok(TraceParts { value, contraction: plain - k as f64 })
}

fn group_method(adaptive: bool, design: DesignKind) -> DofMethod {
    match (adaptive, design) {
        (false, DesignKind::Orthonormal) => DofMethod::GroupLassoOrthonormal,
        (false, DesignKind::General) => DofMethod::GroupLassoGeneral,
        (true, DesignKind::Orthonormal) => DofMethod::AdaptiveGroupLassoOrthonormal,
        (true, DesignKind::General) => DofMethod::AdaptiveGroupLassoGeneral,
    }
}

pub fn df_group_lasso(fit: &FitResult, groups: &GroupStructure, w: &DVector<f64>, gamma: f64, design: DesignKind, data: &Dataset) -> Result<DofEstimate> {
    df_group_lasso_via(fit, groups, w, gamma, design, data, TracePath::Reduced)
}

pub fn df_group_lasso_via(fit: &FitResult, groups: &GroupStructure, w: &DVector<f64>, gamma: f64, design: DesignKind, data: &Dataset, path: TracePath) -> Result<DofEstimate> {
    let pi = build_pi(fit, groups, w)?;
    let parts = group_trace(&pi.dense, None, &pi.index, gamma, design, data, path)?;
    let mut est = DofEstimate::new(parts.value, pi.index.len(), pi.blocks.len(), group_method(false, design));
    est.contraction = parts.contraction;
    Ok(est)
}

/// Two algebraically equivalent closed forms of the orthonormal Group Lasso df.
/// `group_norms[g]` is ‖β̂_g‖₂ for every group.
pub fn df_group_lasso_closed_ortho(active: &ActiveSets, groups: &GroupStructure, w: &DVector<f64>, gamma: f64, group_norms: &[f64]) -> (f64, f64) {
    let mut form_a = active.a_g.len() as f64;
    let mut form_b = active.a_p.len() as f64;
    for &g in &active.a_g {
        let q = gamma * w[g] / group_norms[g];
        let m = (groups.size(g) - 1) as f64;
        form_a += m / (1.0 + q);
        form_b -= m * q / (1.0 + q);
    }
    (form_a, form_b)
}

pub fn df_adaptive_group_lasso(fit: &FitResult, beta_ls: &DVector<f64>, groups: &GroupStructure, scheme: &WeightScheme, gamma: f64, design: DesignKind, data: &Dataset) -> Result<DofEstimate> {
    df_adaptive_group_lasso_via(fit, beta_ls, groups, scheme, gamma, design, data, TracePath::Reduced)
}

#[allow(clippy::too_many_arguments)]
pub fn df_adaptive_group_lasso_via(
    fit: &FitResult,
    beta_ls: &DVector<f64>,
    groups: &GroupStructure,
    scheme: &WeightScheme,
    gamma: f64,
    design: DesignKind,
    data: &Dataset,
    path: TracePath,
) -> Result<DofEstimate> {
    let pi = build_pi(fit, groups, &fit.weights)?;
    let phi = build_phi(fit, beta_ls, groups, scheme)?;
    let parts = group_trace(&pi.dense, Some((&phi.dense, 1.0)), &pi.index, gamma, design, data, path)?;
    if cfg!(debug_assertions) && *scheme == WeightScheme::GroupInverseNorm {
        let fast = df_adaptive_group_lasso_inverse_norm(fit, beta_ls, groups, gamma, design, data)?;
        debug_assert!((fast.value - parts.value).abs() <= 1e-9 * (1.0 + parts.value.abs()));
    }
    let k = pi.index.len();
    let mut est = DofEstimate::new(parts.value, k, pi.blocks.len(), group_method(true, design));
    est.contraction = parts.contraction;
    est.inflation = parts.value - k as f64 - parts.contraction;
    Ok(est)
}

/// Inverse-norm weights evaluated as trace[(I+γB)⁻¹(A + γC)] with the positive Φ.
pub fn df_adaptive_group_lasso_inverse_norm(fit: &FitResult, beta_ls: &DVector<f64>, groups: &GroupStructure, gamma: f64, design: DesignKind, data: &Dataset) -> Result<DofEstimate> {
    let pi = build_pi(fit, groups, &fit.weights)?;
    let phi = build_phi_inverse_norm(fit, beta_ls, groups)?;
    let parts = group_trace(&pi.dense, Some((&phi.dense, -1.0)), &pi.index, gamma, design, data, TracePath::Reduced)?;
    let k = pi.index.len();
    let mut est = DofEstimate::new(parts.value, k, pi.blocks.len(), group_method(true, design));
    est.contraction = parts.contraction;
    est.inflation = parts.value - k as f64 - parts.contraction;
    Ok(est)
}

/// Closed form stated for the orthonormal inverse-norm case:
/// |𝒜_G| + Σ (n_g − 1 + γ/‖β̂_g^LS‖²)/(1 + γw_g/‖β̂_g‖).
pub fn df_adaptive_group_lasso_closed_ortho(active: &ActiveSets, groups: &GroupStructure, w: &DVector<f64>, gamma: f64, group_norms: &[f64], ls_norms: &[f64]) -> f64 {
    active.a_g.len() as f64
        + active
            .a_g
            .iter()
            .map(|&g| ((groups.size(g) - 1) as f64 + gamma / (ls_norms[g] * ls_norms[g])) / (1.0 + gamma * w[g] / group_norms[g]))
            .sum::<f64>()
}

/// Group Lasso sandwich |𝒜_G| ≤ df ≤ |𝒜_p| (with 1e-9 slack).
pub fn check_bounds(est: &DofEstimate) -> bool {
    est.group_active as f64 - 1e-9 <= est.value && est.value <= est.base_active as f64 + 1e-9
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LowerBound {
    Holds,
    Violated,
    /// Some active group has β̂_gᵀβ̂_g^LS < 0; the bound is not claimed.
    PremiseFailed,
}

/// Adaptive estimate against the plain Group Lasso value at the same fit.
pub fn check_adaptive_lower_bound(adaptive: &DofEstimate, plain: &DofEstimate, fit: &FitResult, beta_ls: &DVector<f64>, groups: &GroupStructure) -> LowerBound {
    let premise = grouped_active(fit, groups).a_g.iter().all(|&g| groups.block(&fit.beta, g).dot(&groups.block(beta_ls, g)) >= 0.0);
    if !premise {
        LowerBound::PremiseFailed
    } else if adaptive.value >= plain.value - 1e-9 {
        LowerBound::Holds
    } else {
        LowerBound::Violated
    }
}

/// Dispatches to the estimator matching the penalty.
pub fn estimate(fit: &FitResult, penalty: &PenaltySpec, design: DesignKind, data: &Dataset) -> Result<DofEstimate> {
    let missing_ls = || Error::InvalidInput("adaptive fit carries no least-squares estimate".into());
    match penalty {
        PenaltySpec::Lasso => Ok(df_lasso(&fit.active)),
        PenaltySpec::AdaptiveLasso(scheme) => {
            if scheme.is_fixed() {
                return df_adaptive_lasso(fit, &fit.beta, scheme, fit.gamma, design, data);
            }
            let ls = fit.beta_ls.as_ref().ok_or_else(missing_ls)?;
            df_adaptive_lasso(fit, ls, scheme, fit.gamma, design, data)
        }
        PenaltySpec::GroupLasso { groups, weights } => df_group_lasso(fit, groups, weights, fit.gamma, design, data),
        PenaltySpec::AdaptiveGroupLasso { groups, scheme } => {
            if scheme.is_fixed() {
                let mut est = df_group_lasso(fit, groups, &fit.weights, fit.gamma, design, data)?;
                est.method = group_method(true, design);
                return Ok(est);
            }
            let ls = fit.beta_ls.as_ref().ok_or_else(missing_ls)?;
            df_adaptive_group_lasso(fit, ls, groups, scheme, fit.gamma, design, data)
        }
    }
}

fn shifted_system(fit: &FitResult, groups: &GroupStructure, w: &DVector<f64>, gamma: f64, data: &Dataset) -> Result<(PiMatrix, DMatrix<f64>, DMatrix<f64>)> {
    let pi = build_pi(fit, groups, w)?;
    let gram = active_gram(data, &pi.index);
    let k = (&gram + &pi.dense * gamma).try_inverse().ok_or(Error::Singular)?;
    if k.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular);
    }
    Ok((pi, gram, k))
}

fn beta_tilde(fit: &FitResult, groups: &GroupStructure, w: &DVector<f64>, index: &[usize]) -> DVector<f64> {
    DVector::from_fn(index.len(), |a, _| {
        let j = index[a];
        let g = groups.group_of(j);
        w[g] * fit.beta[j] / groups.block_norm(&fit.beta, g)
    })
}

/// dβ̂/dγ over the active variables: −(X_𝒜ᵀX_𝒜 + γΠ)⁻¹ β̃.
pub fn diag_dbeta_dgamma(fit: &FitResult, groups: &GroupStructure, w: &DVector<f64>, gamma: f64, data: &Dataset) -> Result<DVector<f64>> {
    let (pi, _, k) = shifted_system(fit, groups, w, gamma, data)?;
    Ok(-(k * beta_tilde(fit, groups, w, &pi.index)))
}

fn positions(groups: &GroupStructure, g: usize, index: &[usize]) -> Vec<usize> {
    groups.members(g).iter().map(|j| index.binary_search(j).expect("active member")).collect()
}

/// dΠ/dγ over the active variables, block by block.
pub fn diag_dpi_dgamma(fit: &FitResult, groups: &GroupStructure, w: &DVector<f64>, gamma: f64, data: &Dataset) -> Result<DMatrix<f64>> {
    let (pi, _, k) = shifted_system(fit, groups, w, gamma, data)?;
    let v_all = &k * beta_tilde(fit, groups, w, &pi.index);
    let n = pi.index.len();
    let mut out = DMatrix::zeros(n, n);
    for (g, _) in &pi.blocks {
        let pos = positions(groups, *g, &pi.index);
        let u = DVector::from_iterator(pos.len(), pos.iter().map(|&a| fit.beta[pi.index[a]]));
        let v = DVector::from_iterator(pos.len(), pos.iter().map(|&a| v_all[a]));
        let r = u.norm();
        let uv = u.dot(&v);
        let m = pos.len();
        let wg = w[*g];
        let blk = DMatrix::identity(m, m) * (wg * uv / r.powi(3)) + (&v * u.transpose() + &u * v.transpose()) * (wg / r.powi(3))
            - &u * u.transpose() * (3.0 * wg * uv / r.powi(5));
        for (a, &pa) in pos.iter().enumerate() {
            for (b, &pb) in pos.iter().enumerate() {
                out[(pa, pb)] = blk[(a, b)];
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankTwoSpectrum {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub delta: f64,
    /// False when the dense eigensolver was used.
    pub closed_form: bool,
}

/// Spectrum of aI + b·uuᵀ + c·(uvᵀ + vuᵀ): λ₂ = a with multiplicity n−2 and
/// λ₁,λ₃ = ½(2a + b‖u‖² + 2c·uᵀv ± √Δ).
pub fn spectrum_rank_two(a: f64, b: f64, c: f64, u: &DVector<f64>, v: &DVector<f64>) -> Result<RankTwoSpectrum> {
    let n = u.len();
    if n < 2 || v.len() != n {
        return Err(Error::InvalidInput("rank-two spectrum needs matching vectors of length >= 2".into()));
    }
    let uu = u.norm_squared();
    let vv = v.norm_squared();
    let uv = u.dot(v);
    let parallel = uu == 0.0 || vv == 0.0 || (uv * uv) >= uu * vv * (1.0 - 1e-12);
    if b == 0.0 || c == 0.0 || parallel {
        let m = DMatrix::identity(n, n) * a + u * u.transpose() * b + (u * v.transpose() + v * u.transpose()) * c;
        let (vals, _) = numkit::sym_eig(&m)?;
        let mut rest: Vec<f64> = vals.iter().copied().collect();
        for _ in 0..n - 2 {
            let (pos, _) = rest.iter().enumerate().min_by(|x, y| (x.1 - a).abs().total_cmp(&(y.1 - a).abs())).expect("nonempty");
            rest.remove(pos);
        }
        let (l1, l3) = (rest[0].max(rest[1]), rest[0].min(rest[1]));
        return Ok(RankTwoSpectrum { lambda1: l1, lambda2: a, lambda3: l3, delta: (l1 - l3) * (l1 - l3), closed_form: false });
    }
    let delta = 4.0 * c * c * uu * vv + b * b * uu * uu + 4.0 * b * c * uu * uv;
    let scale = 4.0 * c * c * uu * vv + b * b * uu * uu + (4.0 * b * c * uu * uv).abs();
    if delta < -1e-12 * scale.max(1.0) {
        return Err(Error::NegativeDiscriminant(delta));
    }
    let s = 2.0 * a + b * uu + 2.0 * c * uv;
    let root = delta.max(0.0).sqrt();
    Ok(RankTwoSpectrum { lambda1: 0.5 * (s + root), lambda2: a, lambda3: 0.5 * (s - root), delta, closed_form: true })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Definiteness {
    Psd,
    Indefinite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupSpectrum {
    pub group: usize,
    pub size: usize,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub spectrum: RankTwoSpectrum,
    /// Cosine between u = β̂_g and v = [(X_𝒜ᵀX_𝒜 + γΠ)⁻¹ β̃]_g.
    pub rho: f64,
}

/// Per-group sign test on λ₁λ₃.
pub fn classify_group(s: &GroupSpectrum) -> Definiteness {
    let product = s.spectrum.lambda1 * s.spectrum.lambda3;
    let tol = 1e-10 * s.spectrum.lambda1.abs().max(s.spectrum.lambda3.abs()).powi(2).max(1.0);
    if product < -tol {
        Definiteness::Indefinite
    } else {
        Definiteness::Psd
    }
}

pub fn classify_definiteness(spectra: &[GroupSpectrum]) -> Definiteness {
    if spectra.iter().any(|s| classify_group(s) == Definiteness::Indefinite) {
        Definiteness::Indefinite
    } else {
        Definiteness::Psd
    }
}

#[derive(Debug, Clone)]
pub struct DiagnosticsReport {
    /// Active variable indices the vectors and matrices below are ordered by.
    pub index: Vec<usize>,
    pub dbeta_dgamma: DVector<f64>,
    pub pi: DMatrix<f64>,
    pub dpi_dgamma: DMatrix<f64>,
    pub spectrum: Vec<GroupSpectrum>,
    pub definiteness: Definiteness,
    pub sufficient_trace: f64,
    pub df_slope: f64,
}

/// Derivatives of β̂ and Π in γ, the per-group spectra of Π + γ dΠ/dγ, and
/// the derivative of the Group Lasso df.
pub fn diagnostics(fit: &FitResult, groups: &GroupStructure, w: &DVector<f64>, gamma: f64, data: &Dataset) -> Result<DiagnosticsReport> {
    let (pi, gram, k) = shifted_system(fit, groups, w, gamma, data)?;
    let v_all = &k * beta_tilde(fit, groups, w, &pi.index);
    let dpi = diag_dpi_dgamma(fit, groups, w, gamma, data)?;
    let mut spectrum = Vec::with_capacity(pi.blocks.len());
    for (g, _) in &pi.blocks {
        let pos = positions(groups, *g, &pi.index);
        let u = DVector::from_iterator(pos.len(), pos.iter().map(|&a| fit.beta[pi.index[a]]));
        let v = DVector::from_iterator(pos.len(), pos.iter().map(|&a| v_all[a]));
        let r = u.norm();
        let uv = u.dot(&v);
        let wg = w[*g];
        let a = wg / r + gamma * wg * uv / r.powi(3);
        let b = -(wg / r.powi(3) + 3.0 * gamma * wg * uv / r.powi(5));
        let c = gamma * wg / r.powi(3);
        let spec = if pos.len() == 1 {
            RankTwoSpectrum { lambda1: 0.0, lambda2: 0.0, lambda3: 0.0, delta: 0.0, closed_form: true }
        } else {
            spectrum_rank_two(a, b, c, &u, &v)?
        };
        spectrum.push(GroupSpectrum { group: *g, size: pos.len(), a, b, c, spectrum: spec, rho: uv / (r * v.norm()) });
    }
    let definiteness = classify_definiteness(&spectrum);
    let mut report = DiagnosticsReport {
        index: pi.index.clone(),
        dbeta_dgamma: -v_all,
        pi: pi.dense,
        dpi_dgamma: dpi,
        spectrum,
        definiteness,
        sufficient_trace: 0.0,
        df_slope: 0.0,
    };
    let (t, s) = monotonicity_terms(&report, &gram, &k, gamma);
    report.sufficient_trace = t;
    report.df_slope = s;
    Ok(report)
}

fn monotonicity_terms(report: &DiagnosticsReport, gram: &DMatrix<f64>, k: &DMatrix<f64>, gamma: f64) -> (f64, f64) {
    if report.index.is_empty() {
        return (0.0, 0.0);
    }
    let am = &report.pi + &report.dpi_dgamma * gamma;
    let bm = k * gram * k;
    let trace = (&am * bm).trace();
    let slope = -(k * &am * k * gram).trace();
    (trace, slope)
}

/// `(trace(A·B), d df/dγ)` for the Group Lasso df at `fit`.
pub fn monotonicity_sufficient(report: &DiagnosticsReport, data: &Dataset, fit: &FitResult, gamma: f64) -> Result<(f64, f64)> {
    if report.index.is_empty() {
        return Ok((0.0, 0.0));
    }
    let gram = active_gram(data, &report.index);
    let k = (&gram + &report.pi * gamma).try_inverse().ok_or(Error::Singular)?;
    debug_assert_eq!(fit.active.a_p, report.index);
    Ok(monotonicity_terms(report, &gram, &k, gamma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{standardize_with, StandardizeMode};
    use crate::solvers::{fit_adaptive_lasso, fit_group_lasso, fit_penalized, SolverConfig};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fake_fit(beta: Vec<f64>, groups: Option<&GroupStructure>, weights: DVector<f64>, gamma: f64) -> FitResult {
        let beta = DVector::from_vec(beta);
        FitResult {
            active: ActiveSets::from_beta(&beta, groups),
            beta,
            gamma,
            kkt_residual: 0.0,
            iterations: 0,
            converged: true,
            weights,
            beta_ls: None,
        }
    }

    fn data(seed: u64, n: usize, p: usize, ortho: bool) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p, |_, _| rng.gen_range(-1.0..1.0));
        let beta = DVector::from_fn(p, |j, _| [3.0, -2.0, 1.5, 0.0][j % 4]);
        let y = &x * beta + DVector::from_fn(n, |_, _| rng.gen_range(-0.5..0.5));
        let raw = Dataset::new(x, y).unwrap();
        if ortho {
            let d = standardize_with(&raw, StandardizeMode::Orthonormal).unwrap();
            let y = d.y.clone();
            d.with_response(y)
        } else {
            raw
        }
    }

    #[test]
    fn weight_derivatives() {
        assert_eq!(weight_and_derivative(&WeightScheme::Fixed(DVector::from_element(1, 2.0)), 0.0).unwrap().1, 0.0);
        assert_eq!(weight_and_derivative(&WeightScheme::InversePower(1.0), 2.0).unwrap(), (0.5, -0.25));
        let (w, d) = weight_and_derivative(&WeightScheme::ExponentialDecay(1.0), 2f64.ln()).unwrap();
        assert_relative_eq!(w, 0.5, epsilon = 1e-15);
        assert_relative_eq!(d, -0.5, epsilon = 1e-15);
        assert!(weight_and_derivative(&WeightScheme::InversePower(1.0), 1e-13).is_err());
    }

    #[test]
    fn lasso_df_counts() {
        let f = fake_fit(vec![0.0, 1.0, -2.0, 0.0, 3.0, 0.5, 0.1], None, DVector::from_element(7, 1.0), 1.0);
        assert_eq!(df_lasso(&f.active).value, 5.0);
        assert_eq!(df_lasso(&ActiveSets::default()).value, 0.0);
    }

    #[test]
    fn adaptive_lasso_orthonormal_examples() {
        let d = Dataset::new(DMatrix::from_column_slice(2, 1, &[1.0, 0.0]), DVector::from_vec(vec![2.0, 0.0])).unwrap();
        let f = fit_adaptive_lasso(&d, &WeightScheme::InversePower(1.0), 1.0).unwrap();
        let ls = f.beta_ls.clone().unwrap();
        let est = df_adaptive_lasso(&f, &ls, &WeightScheme::InversePower(1.0), 1.0, DesignKind::Orthonormal, &d).unwrap();
        assert_relative_eq!(est.value, 1.25, epsilon = 1e-14);
        let est = df_adaptive_lasso(&f, &ls, &WeightScheme::InversePower(1.0), 1.0, DesignKind::General, &d).unwrap();
        assert_relative_eq!(est.value, 1.25, epsilon = 1e-14);

        let alpha = 0.7;
        let f = fit_adaptive_lasso(&d, &WeightScheme::ExponentialDecay(alpha), 1.0).unwrap();
        let est = df_adaptive_lasso(&f, &ls, &WeightScheme::ExponentialDecay(alpha), 1.0, DesignKind::Orthonormal, &d).unwrap();
        assert_relative_eq!(est.value, 1.0 + alpha * (-alpha * 2.0f64).exp(), epsilon = 1e-14);

        let fixed = WeightScheme::Fixed(DVector::from_element(1, 1.0));
        let est = df_adaptive_lasso(&f, &ls, &fixed, 1.0, DesignKind::General, &d).unwrap();
        assert_eq!(est.value, 1.0);
        assert_eq!(est.correction, 0.0);
    }

    #[test]
    fn pi_blocks() {
        let gs = GroupStructure::new(vec![0, 0, 1]).unwrap();
        let w = DVector::from_element(2, 1.0);
        let f = fake_fit(vec![2.0, 0.0, -3.0], Some(&gs), w.clone(), 1.0);
        let pi = build_pi(&f, &gs, &w).unwrap();
        assert_relative_eq!(pi.blocks[0].1, DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 0.5]), epsilon = 1e-15);
        assert!(pi.blocks[1].1[(0, 0)].abs() < 1e-16);
        let f = fake_fit(vec![0.0, 0.0, -3.0], Some(&gs), w.clone(), 1.0);
        let mut inactive = f.clone();
        inactive.active.a_g = vec![0, 1];
        assert_eq!(build_pi(&inactive, &gs, &w).unwrap_err(), Error::InactiveGroupRequested(0));
    }

    proptest! {
        #[test]
        fn pi_block_spectrum(seed in 0u64..10_000, m in 2usize..6, w in 0.1f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = DVector::from_fn(m, |_, _| rng.gen_range(-3.0..3.0));
            let r = b.norm();
            let (vals, _) = numkit::sym_eig(&pi_block(&b, w)).unwrap();
            for i in 0..m - 1 { prop_assert!((vals[i] - w / r).abs() <= 1e-10); }
            prop_assert!(vals[m - 1].abs() <= 1e-10);
        }

        #[test]
        fn closed_forms_agree(seed in 0u64..10_000, g in 1usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sizes: Vec<usize> = (0..g).map(|_| rng.gen_range(1..5)).collect();
            let assignment: Vec<usize> = sizes.iter().enumerate().flat_map(|(k, &s)| std::iter::repeat(k).take(s)).collect();
            let gs = GroupStructure::new(assignment).unwrap();
            let beta = DVector::from_fn(gs.num_variables(), |_, _| if rng.gen_bool(0.8) { rng.gen_range(-2.0..2.0) } else { 0.0 });
            let active = ActiveSets::from_beta(&beta, Some(&gs));
            let w = DVector::from_fn(g, |_, _| rng.gen_range(0.2..2.0));
            let norms: Vec<f64> = (0..g).map(|k| gs.block_norm(&beta, k)).collect();
            let (a, b) = df_group_lasso_closed_ortho(&active, &gs, &w, rng.gen_range(0.0..3.0), &norms);
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn group_df_worked_example() {
        let gs = GroupStructure::new(vec![0, 0, 0]).unwrap();
        let w = DVector::from_element(1, 1.0);
        let f = fake_fit(vec![2.0, 0.0, 0.0], Some(&gs), w.clone(), 1.0);
        let d = Dataset::new(DMatrix::identity(4, 3), DVector::zeros(4)).unwrap();
        let est = df_group_lasso(&f, &gs, &w, 1.0, DesignKind::Orthonormal, &d).unwrap();
        assert_relative_eq!(est.value, 7.0 / 3.0, epsilon = 1e-14);
        let (a, b) = df_group_lasso_closed_ortho(&f.active, &gs, &w, 1.0, &[2.0]);
        assert_relative_eq!(a, 7.0 / 3.0, epsilon = 1e-14);
        assert_relative_eq!(b, 7.0 / 3.0, epsilon = 1e-14);
        let (a, b) = df_group_lasso_closed_ortho(&f.active, &gs, &w, 0.0, &[2.0]);
        assert_eq!((a, b), (3.0, 3.0));
        let est = df_group_lasso(&f, &gs, &w, 0.0, DesignKind::General, &d).unwrap();
        assert_relative_eq!(est.value, 3.0, epsilon = 1e-14);
        let direct = df_group_lasso_via(&f, &gs, &w, 1.0, DesignKind::General, &d, TracePath::Direct).unwrap();
        assert_relative_eq!(direct.value, 7.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn reduced_and_direct_traces_agree() {
        let d = data(21, 40, 9, false);
        let gs = GroupStructure::contiguous(9, 3).unwrap();
        let f = fit_penalized(&d, &PenaltySpec::AdaptiveGroupLasso { groups: gs.clone(), scheme: WeightScheme::GroupInverseNorm }, 0.5, &SolverConfig::default(), None).unwrap();
        let ls = f.beta_ls.clone().unwrap();
        let a = df_adaptive_group_lasso_via(&f, &ls, &gs, &WeightScheme::GroupInverseNorm, 0.5, DesignKind::General, &d, TracePath::Reduced).unwrap();
        let b = df_adaptive_group_lasso_via(&f, &ls, &gs, &WeightScheme::GroupInverseNorm, 0.5, DesignKind::General, &d, TracePath::Direct).unwrap();
        assert!((a.value - b.value).abs() <= 1e-10 * (1.0 + a.value));
        let c = df_adaptive_group_lasso_inverse_norm(&f, &ls, &gs, 0.5, DesignKind::General, &d).unwrap();
        assert!((a.value - c.value).abs() <= 1e-10 * (1.0 + a.value));
    }

    #[test]
    fn singleton_groups_reduce_to_lasso_variants() {
        let d = data(22, 50, 6, false);
        let gs = GroupStructure::singletons(6);
        let w = DVector::from_element(6, 1.0);
        let f = fit_group_lasso(&d, &gs, &w, 3.0).unwrap();
        let est = df_group_lasso(&f, &gs, &w, 3.0, DesignKind::General, &d).unwrap();
        assert_relative_eq!(est.value, f.active.size() as f64, epsilon = 1e-10);

        let pen = PenaltySpec::AdaptiveGroupLasso { groups: gs.clone(), scheme: WeightScheme::GroupInverseNorm };
        let fg = fit_penalized(&d, &pen, 3.0, &SolverConfig::default(), None).unwrap();
        let fl = fit_adaptive_lasso(&d, &WeightScheme::InversePower(1.0), 3.0).unwrap();
        let ls = fg.beta_ls.clone().unwrap();
        let eg = df_adaptive_group_lasso(&fg, &ls, &gs, &WeightScheme::GroupInverseNorm, 3.0, DesignKind::General, &d).unwrap();
        let el = df_adaptive_lasso(&fl, &ls, &WeightScheme::InversePower(1.0), 3.0, DesignKind::General, &d).unwrap();
        assert_relative_eq!(eg.value, el.value, epsilon = 1e-10);

        let phi = build_phi(&fg, &ls, &gs, &WeightScheme::GroupInverseNorm).unwrap();
        for (g, blk) in &phi.blocks {
            let j = gs.members(*g)[0];
            let expected = sgn(fg.beta[j]) * sgn(ls[j]) * (-1.0 / (ls[j] * ls[j]));
            assert_relative_eq!(blk[(0, 0)], expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn reference_ortho_closed_form_misses_one_term() {
        // trace = |A_G| + Σ [γ/‖z_g‖² + (n_g−1)/(1+q_g)]; the reference form divides the γ/‖z_g‖² term by (1+q_g) too
        let d = data(23, 30, 9, true);
        let gs = GroupStructure::contiguous(9, 3).unwrap();
        let pen = PenaltySpec::AdaptiveGroupLasso { groups: gs.clone(), scheme: WeightScheme::GroupInverseNorm };
        let gamma = 0.4;
        let f = fit_penalized(&d, &pen, gamma, &SolverConfig::default(), None).unwrap();
        let ls = f.beta_ls.clone().unwrap();
        let est = df_adaptive_group_lasso(&f, &ls, &gs, &WeightScheme::GroupInverseNorm, gamma, DesignKind::Orthonormal, &d).unwrap();
        let norms: Vec<f64> = (0..3).map(|g| gs.block_norm(&f.beta, g)).collect();
        let ls_norms: Vec<f64> = (0..3).map(|g| gs.block_norm(&ls, g)).collect();
        let stated = df_adaptive_group_lasso_closed_ortho(&f.active, &gs, &f.weights, gamma, &norms, &ls_norms);
        let mut exact = f.active.a_g.len() as f64;
        let mut gap = 0.0;
        for &g in &f.active.a_g {
            let q = gamma * f.weights[g] / norms[g];
            let t = gamma / (ls_norms[g] * ls_norms[g]);
            exact += t + 2.0 / (1.0 + q);
            gap += t * q / (1.0 + q);
        }
        assert!(!f.active.a_g.is_empty());
        assert_relative_eq!(est.value, exact, epsilon = 1e-10);
        assert_relative_eq!(est.value - stated, gap, epsilon = 1e-10);
    }

    #[test]
    fn fixed_weights_collapse_adaptive_group() {
        let d = data(24, 40, 6, false);
        let gs = GroupStructure::contiguous(6, 3).unwrap();
        let w = DVector::from_vec(vec![1.0, 0.5]);
        let f = fit_group_lasso(&d, &gs, &w, 1.0).unwrap();
        let plain = df_group_lasso(&f, &gs, &w, 1.0, DesignKind::General, &d).unwrap();
        let adaptive = df_adaptive_group_lasso(&f, &f.beta, &gs, &WeightScheme::Fixed(w.clone()), 1.0, DesignKind::General, &d).unwrap();
        assert_eq!(plain.value, adaptive.value);
    }

    #[test]
    fn spectrum_examples() {
        let u = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let v = DVector::from_vec(vec![0.0, 1.0, 0.0]);
        let s = spectrum_rank_two(1.0, 1.0, 1.0, &u, &v).unwrap();
        assert!(s.closed_form);
        assert_relative_eq!(s.lambda1, 0.5 * (3.0 + 5f64.sqrt()), epsilon = 1e-14);
        assert_relative_eq!(s.lambda3, 0.5 * (3.0 - 5f64.sqrt()), epsilon = 1e-14);
        assert_eq!(s.lambda2, 1.0);
        let s = spectrum_rank_two(2.0, 0.0, 0.0, &u, &v).unwrap();
        assert!(!s.closed_form);
        assert_relative_eq!(s.lambda1, 2.0, epsilon = 1e-14);
        assert_relative_eq!(s.lambda3, 2.0, epsilon = 1e-14);
    }

    #[test]
    fn orthonormal_diagnostics() {
        let d = data(25, 40, 9, true);
        let gs = GroupStructure::contiguous(9, 3).unwrap();
        let w = DVector::from_vec(vec![1.0, 0.8, 1.2]);
        let gamma = 0.3;
        let f = fit_group_lasso(&d, &gs, &w, gamma).unwrap();
        let rep = diagnostics(&f, &gs, &w, gamma, &d).unwrap();
        assert_eq!(rep.definiteness, Definiteness::Psd);
        let pi = build_pi(&f, &gs, &w).unwrap();
        for (g, blk) in &pi.blocks {
            let pos = positions(&gs, *g, &rep.index);
            let r = gs.block_norm(&f.beta, *g);
            for (a, &pa) in pos.iter().enumerate() {
                let j = rep.index[pa];
                assert_relative_eq!(rep.dbeta_dgamma[pa], -(w[*g] / r) * f.beta[j], epsilon = 1e-9);
                for (b, &pb) in pos.iter().enumerate() {
                    assert_relative_eq!(rep.dpi_dgamma[(pa, pb)], w[*g] / r * blk[(a, b)], epsilon = 1e-9);
                }
            }
            let dr: f64 = pos.iter().map(|&pa| f.beta[rep.index[pa]] * rep.dbeta_dgamma[pa]).sum::<f64>() / r;
            assert_relative_eq!(dr, -w[*g], epsilon = 1e-9);
        }
        for s in &rep.spectrum {
            assert!(s.spectrum.lambda3.abs() <= 1e-9);
        }
        let (t, slope) = monotonicity_sufficient(&rep, &d, &f, gamma).unwrap();
        assert!(t >= 0.0 && slope <= 0.0);
    }

    #[test]
    fn singleton_and_empty_diagnostics() {
        let d = data(26, 30, 4, false);
        let gs = GroupStructure::singletons(4);
        let w = DVector::from_element(4, 1.0);
        let f = fit_group_lasso(&d, &gs, &w, 1.0).unwrap();
        let dpi = diag_dpi_dgamma(&f, &gs, &w, 1.0, &d).unwrap();
        assert!(numkit::max_abs(&dpi) <= 1e-12);
        let rep = diagnostics(&f, &gs, &w, 1.0, &d).unwrap();
        assert_eq!(rep.definiteness, Definiteness::Psd);
        let f0 = fit_group_lasso(&d, &gs, &w, 1e6).unwrap();
        let rep = diagnostics(&f0, &gs, &w, 1e6, &d).unwrap();
        assert_eq!(monotonicity_sufficient(&rep, &d, &f0, 1e6).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn dbeta_matches_finite_difference() {
        let d = data(27, 50, 9, false);
        let gs = GroupStructure::contiguous(9, 3).unwrap();
        let w = DVector::from_element(3, 1.0);
        let gamma = 2.0;
        let h = 1e-5;
        let f = fit_group_lasso(&d, &gs, &w, gamma).unwrap();
        let up = fit_group_lasso(&d, &gs, &w, gamma + h).unwrap();
        let dn = fit_group_lasso(&d, &gs, &w, gamma - h).unwrap();
        let db = diag_dbeta_dgamma(&f, &gs, &w, gamma, &d).unwrap();
        for (a, &j) in f.active.a_p.iter().enumerate() {
            let fd = (up.beta[j] - dn.beta[j]) / (2.0 * h);
            assert!((fd - db[a]).abs() <= 1e-4 * db[a].abs().max(1e-3), "{fd} vs {}", db[a]);
        }
        let dpi = diag_dpi_dgamma(&f, &gs, &w, gamma, &d).unwrap();
        let fd = (build_pi(&up, &gs, &w).unwrap().dense - build_pi(&dn, &gs, &w).unwrap().dense) / (2.0 * h);
        assert!(numkit::max_abs(&(fd - &dpi)) <= 1e-4 * numkit::max_abs(&dpi));
    }

    #[test]
    fn slopes_for_fixed_weights_are_zero() {
        let d = data(28, 40, 6, true);
        let pen = PenaltySpec::AdaptiveLasso(WeightScheme::Fixed(DVector::from_element(6, 1.0)));
        let path = crate::solvers::compute_path(&d, &pen, &SolverConfig::default()).unwrap();
        assert!(slopes_along_path(&path).iter().all(|s| s.slope == 0.0));
    }

    #[test]
    fn single_interval_slope_is_inverse_square_sum() {
        let d = data(29, 40, 4, true);
        let ls = crate::solvers::fit_ols(&d).unwrap();
        let min = ls.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
        let pen = PenaltySpec::AdaptiveLasso(WeightScheme::InversePower(1.0));
        let top = 0.5 * min * min;
        let grid = [top, top * 0.5, top * 0.1];
        let path = crate::solvers::compute_path_with_grid(&d, &pen, &grid, &SolverConfig::default()).unwrap();
        let slopes = slopes_along_path(&path);
        assert_eq!(slopes.len(), 1);
        let expected: f64 = ls.iter().map(|v| 1.0 / (v * v)).sum();
        assert_relative_eq!(slopes[0].slope, expected, epsilon = 1e-9 * expected);
    }
}
