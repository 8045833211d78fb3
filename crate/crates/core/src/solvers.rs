//! Coordinate-descent solvers for the four penalized estimators, with an exact
//! active-set polish step so KKT residuals reach the configured tolerance.

use nalgebra::{DMatrix, DVector};

use crate::dof::{self, DesignKind};
use crate::model::{active_threshold, ActiveSets, Dataset, FitResult, GroupStructure, PathResult, PenaltySpec, WeightScheme};
use crate::numkit;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub max_iterations: usize,
    pub tol: f64,
    pub grid_size: usize,
    pub grid_decades: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { max_iterations: 10_000, tol: 1e-8, grid_size: 100, grid_decades: 4.0 }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iterations == 0 || self.grid_size < 2 || !(self.grid_decades > 0.0) {
            return Err(Error::InvalidInput(format!("invalid solver configuration {self:?}")));
        }
        Ok(())
    }
}

pub fn fit_ols(data: &Dataset) -> Result<DVector<f64>> {
    numkit::qr_least_squares(&data.x, &data.y)
}

pub fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
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

/// Realized adaptive weights. Per variable when `groups` is `None`, else per group
/// from the norms of the least-squares subvectors.
pub fn adaptive_weights(scheme: &WeightScheme, beta_ls: &DVector<f64>, groups: Option<&GroupStructure>) -> Result<DVector<f64>> {
    let zs: Vec<f64> = match groups {
        None => beta_ls.iter().map(|b| b.abs()).collect(),
        Some(gs) => (0..gs.num_groups()).map(|g| gs.block_norm(beta_ls, g)).collect(),
    };
    if let WeightScheme::Fixed(w) = scheme {
        scheme.validate(zs.len())?;
        return Ok(w.clone());
    }
    let mut w = DVector::zeros(zs.len());
    for (k, &z) in zs.iter().enumerate() {
        w[k] = dof::weight_and_derivative(scheme, z).map_err(|_| Error::DegenerateWeight(k))?.0;
    }
    Ok(w)
}

/// Data-dependent pieces of a penalized problem, shared across a γ grid.
#[derive(Debug, Clone)]
pub struct Prepared {
    gram: DMatrix<f64>,
    xty: DVector<f64>,
    yty: f64,
    weights: DVector<f64>,
    beta_ls: Option<DVector<f64>>,
    groups: Option<GroupStructure>,
    blocks: Vec<Block>,
}

#[derive(Debug, Clone)]
struct Block {
    idx: Vec<usize>,
    eigvals: DVector<f64>,
    eigvecs: DMatrix<f64>,
}

impl Prepared {
    pub fn new(data: &Dataset, penalty: &PenaltySpec) -> Result<Self> {
        penalty.validate(data.p())?;
        let p = data.p();
        let (weights, beta_ls, groups) = match penalty {
            PenaltySpec::Lasso => (DVector::from_element(p, 1.0), None, None),
            PenaltySpec::AdaptiveLasso(scheme) => {
                if let WeightScheme::Fixed(w) = scheme {
                    (w.clone(), None, None)
                } else {
                    let ls = fit_ols(data)?;
                    (adaptive_weights(scheme, &ls, None)?, Some(ls), None)
                }
            }
            PenaltySpec::GroupLasso { groups, weights } => (weights.clone(), None, Some(groups.clone())),
            PenaltySpec::AdaptiveGroupLasso { groups, scheme } => {
                if let WeightScheme::Fixed(w) = scheme {
                    (w.clone(), None, Some(groups.clone()))
                } else {
                    let ls = fit_ols(data)?;
                    (adaptive_weights(scheme, &ls, Some(groups))?, Some(ls), Some(groups.clone()))
                }
            }
        };
        Self::from_parts(data, weights, beta_ls, groups)
    }

    fn from_parts(data: &Dataset, weights: DVector<f64>, beta_ls: Option<DVector<f64>>, groups: Option<GroupStructure>) -> Result<Self> {
        let expected = groups.as_ref().map_or(data.p(), GroupStructure::num_groups);
        WeightScheme::Fixed(weights.clone()).validate(expected)?;
        let gram = data.x.transpose() * &data.x;
        let xty = data.x.transpose() * &data.y;
        let mut blocks = Vec::new();
        if let Some(gs) = &groups {
            for g in 0..gs.num_groups() {
                let idx = gs.members(g).to_vec();
                let sub = DMatrix::from_fn(idx.len(), idx.len(), |a, b| gram[(idx[a], idx[b])]);
                let (eigvals, eigvecs) = numkit::sym_eig(&sub)?;
                blocks.push(Block { idx, eigvals, eigvecs });
            }
        }
        Ok(Self { gram, xty, yty: data.y.norm_squared(), weights, beta_ls, groups, blocks })
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn beta_ls(&self) -> Option<&DVector<f64>> {
        self.beta_ls.as_ref()
    }

    /// Smallest γ at which the zero vector is optimal.
    pub fn gamma_max(&self) -> f64 {
        match &self.groups {
            None => (0..self.xty.len()).map(|j| self.xty[j].abs() / self.weights[j]).fold(0.0, f64::max),
            Some(gs) => (0..gs.num_groups()).map(|g| gs.block_norm(&self.xty, g) / self.weights[g]).fold(0.0, f64::max),
        }
    }

    pub fn objective(&self, beta: &DVector<f64>, gamma: f64) -> f64 {
        let quad = 0.5 * (self.yty - 2.0 * beta.dot(&self.xty) + beta.dot(&(&self.gram * beta)));
        quad + gamma * self.penalty(beta)
    }

    fn penalty(&self, beta: &DVector<f64>) -> f64 {
        match &self.groups {
            None => beta.iter().zip(self.weights.iter()).map(|(b, w)| w * b.abs()).sum(),
            Some(gs) => (0..gs.num_groups()).map(|g| self.weights[g] * gs.block_norm(beta, g)).sum(),
        }
    }

    fn correlations(&self, beta: &DVector<f64>) -> DVector<f64> {
        &self.xty - &self.gram * beta
    }

    /// Largest violation of the first-order conditions.
    pub fn kkt_residual(&self, beta: &DVector<f64>, gamma: f64) -> f64 {
        let c = self.correlations(beta);
        let thr = active_threshold(beta);
        match &self.groups {
            None => (0..beta.len())
                .map(|j| {
                    let t = gamma * self.weights[j];
                    if beta[j].abs() > thr {
                        (-c[j] + t * sgn(beta[j])).abs()
                    } else {
                        (c[j].abs() - t).max(0.0)
                    }
                })
                .fold(0.0, f64::max),
            Some(gs) => (0..gs.num_groups())
                .map(|g| {
                    let t = gamma * self.weights[g];
                    let r = gs.block_norm(beta, g);
                    let cg = gs.block(&c, g);
                    if r > thr {
                        (gs.block(beta, g) * (t / r) - cg).norm()
                    } else {
                        (cg.norm() - t).max(0.0)
                    }
                })
                .fold(0.0, f64::max),
        }
    }

    pub fn fit(&self, gamma: f64, config: &SolverConfig, warm: Option<&DVector<f64>>) -> Result<FitResult> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::InvalidInput(format!("gamma must be positive, got {gamma}")));
        }
        let p = self.xty.len();
        let start = match warm {
            Some(b) if b.len() == p => b.clone(),
            _ => DVector::zeros(p),
        };
        let (beta, iterations, kkt) = match &self.groups {
            None => self.lasso_cd(start, gamma, config),
            Some(_) => self.group_cd(start, gamma, config),
        };
        Ok(FitResult {
            active: ActiveSets::from_beta(&beta, self.groups.as_ref()),
            beta,
            gamma,
            kkt_residual: kkt,
            iterations,
            converged: kkt <= config.tol,
            weights: self.weights.clone(),
            beta_ls: self.beta_ls.clone(),
        })
    }

    fn lasso_cd(&self, mut beta: DVector<f64>, gamma: f64, config: &SolverConfig) -> (DVector<f64>, usize, f64) {
        let p = beta.len();
        let mut c = self.correlations(&beta);
        let mut best = (beta.clone(), self.kkt_residual(&beta, gamma));
        if best.1 <= config.tol {
            return (best.0, 0, best.1);
        }
        let mut last_pattern: Vec<i8> = Vec::new();
        let mut obj = self.objective(&beta, gamma);
        for iter in 1..=config.max_iterations {
            for j in 0..p {
                let gjj = self.gram[(j, j)];
                if gjj <= 0.0 {
                    continue;
                }
                let old = beta[j];
                let new = soft_threshold(c[j] + gjj * old, gamma * self.weights[j]) / gjj;
                if new != old {
                    let delta = new - old;
                    c.axpy(-delta, &self.gram.column(j), 1.0);
                    beta[j] = new;
                }
            }
            if cfg!(debug_assertions) {
                let next = self.objective(&beta, gamma);
                debug_assert!(next <= obj + 1e-9 * (1.0 + obj.abs()), "objective increased: {obj} -> {next}");
                obj = next;
            }
            c = self.correlations(&beta);
            let kkt = self.kkt_residual(&beta, gamma);
            if kkt < best.1 {
                best = (beta.clone(), kkt);
            }
            if kkt <= config.tol {
                return (beta, iter, kkt);
            }
            let pattern: Vec<i8> = beta.iter().map(|&b| sgn(b) as i8).collect();
            if pattern == last_pattern {
                if let Some((polished, k)) = self.lasso_polish(&pattern, gamma) {
                    if k <= config.tol {
                        return (polished, iter, k);
                    }
                }
            }
            last_pattern = pattern;
        }
        (best.0, config.max_iterations, best.1)
    }

    /// Solves the first-order conditions exactly on a fixed sign pattern.
    fn lasso_polish(&self, pattern: &[i8], gamma: f64) -> Option<(DVector<f64>, f64)> {
        let idx: Vec<usize> = (0..pattern.len()).filter(|&j| pattern[j] != 0).collect();
        let k = idx.len();
        let mut beta = DVector::zeros(pattern.len());
        if k > 0 {
            let g = DMatrix::from_fn(k, k, |a, b| self.gram[(idx[a], idx[b])]);
            let rhs = DVector::from_fn(k, |a, _| self.xty[idx[a]] - gamma * self.weights[idx[a]] * pattern[idx[a]] as f64);
            let sol = numkit::cholesky_solve_vec(&g, &rhs).ok()?;
            for (a, &j) in idx.iter().enumerate() {
                if sgn(sol[a]) as i8 != pattern[j] {
                    return None;
                }
                beta[j] = sol[a];
            }
        }
        let kkt = self.kkt_residual(&beta, gamma);
        Some((beta, kkt))
    }

    fn group_cd(&self, mut beta: DVector<f64>, gamma: f64, config: &SolverConfig) -> (DVector<f64>, usize, f64) {
        let gs = self.groups.as_ref().expect("grouped problem");
        let mut c = self.correlations(&beta);
        let mut best = (beta.clone(), self.kkt_residual(&beta, gamma));
        if best.1 <= config.tol {
            return (best.0, 0, best.1);
        }
        let mut last_active: Vec<bool> = Vec::new();
        let mut obj = self.objective(&beta, gamma);
        for iter in 1..=config.max_iterations {
            for (g, block) in self.blocks.iter().enumerate() {
                let old = gs.block(&beta, g);
                let sub_g = DMatrix::from_fn(block.idx.len(), block.idx.len(), |a, b| self.gram[(block.idx[a], block.idx[b])]);
                let z = gs.block(&c, g) + &sub_g * &old;
                let new = block_update(block, &sub_g, &z, gamma * self.weights[g], &old);
                let delta = &new - &old;
                if delta.iter().any(|d| *d != 0.0) {
                    for (a, &j) in block.idx.iter().enumerate() {
                        if delta[a] != 0.0 {
                            c.axpy(-delta[a], &self.gram.column(j), 1.0);
                            beta[j] = new[a];
                        }
                    }
                }
            }
            if cfg!(debug_assertions) {
                let next = self.objective(&beta, gamma);
                debug_assert!(next <= obj + 1e-9 * (1.0 + obj.abs()), "objective increased: {obj} -> {next}");
                obj = next;
            }
            c = self.correlations(&beta);
            let kkt = self.kkt_residual(&beta, gamma);
            if kkt < best.1 {
                best = (beta.clone(), kkt);
            }
            if kkt <= config.tol {
                return (beta, iter, kkt);
            }
            let active: Vec<bool> = (0..gs.num_groups()).map(|g| gs.block_norm(&beta, g) > 0.0).collect();
            if active == last_active {
                if let Some((polished, k)) = self.group_polish(&beta, &active, gamma) {
                    if k <= config.tol {
                        return (polished, iter, k);
                    }
                }
            }
            last_active = active;
        }
        (best.0, config.max_iterations, best.1)
    }

    /// Damped Newton on the active-group first-order conditions.
    fn group_polish(&self, start: &DVector<f64>, active: &[bool], gamma: f64) -> Option<(DVector<f64>, f64)> {
        let gs = self.groups.as_ref()?;
        let groups: Vec<usize> = (0..active.len()).filter(|&g| active[g]).collect();
        let idx: Vec<usize> = groups.iter().flat_map(|&g| gs.members(g).iter().copied()).collect();
        let k = idx.len();
        let mut full = DVector::zeros(start.len());
        if k > 0 {
            let g_aa = DMatrix::from_fn(k, k, |a, b| self.gram[(idx[a], idx[b])]);
            let xty_a = DVector::from_fn(k, |a, _| self.xty[idx[a]]);
            let mut offsets = Vec::with_capacity(groups.len());
            let mut off = 0;
            for &g in &groups {
                offsets.push((off, gs.size(g), self.weights[g]));
                off += gs.size(g);
            }
            let residual = |b: &DVector<f64>| -> Option<DVector<f64>> {
                let mut f = &g_aa * b - &xty_a;
                for &(o, m, w) in &offsets {
                    let r = b.rows(o, m).norm();
                    if !(r > 0.0) {
                        return None;
                    }
                    let scaled = b.rows(o, m) * (gamma * w / r);
                    let mut seg = f.rows_mut(o, m);
                    seg += scaled;
                }
                Some(f)
            };
            let mut b = DVector::from_fn(k, |a, _| start[idx[a]]);
            let mut f = residual(&b)?;
            let scale = numkit::max_abs_vec(&self.xty).max(1.0);
            for _ in 0..60 {
                if numkit::max_abs_vec(&f) <= 1e-15 * scale {
                    break;
                }
                let mut jac = g_aa.clone();
                for &(o, m, w) in &offsets {
                    let bg = b.rows(o, m).into_owned();
                    let r = bg.norm();
                    let blk = (DMatrix::identity(m, m) / r - &bg * bg.transpose() / (r * r * r)) * (gamma * w);
                    let mut view = jac.view_mut((o, o), (m, m));
                    view += blk;
                }
                let step = numkit::cholesky_solve_vec(&jac, &f).ok()?;
                let fnorm = f.norm();
                let mut t = 1.0;
                let mut accepted = false;
                for _ in 0..40 {
                    let cand = &b - &step * t;
                    if let Some(fc) = residual(&cand) {
                        if fc.norm() < fnorm {
                            b = cand;
                            f = fc;
                            accepted = true;
                            break;
                        }
                    }
                    t *= 0.5;
                }
                if !accepted {
                    break;
                }
            }
            for (a, &j) in idx.iter().enumerate() {
                full[j] = b[a];
            }
        }
        let kkt = self.kkt_residual(&full, gamma);
        Some((full, kkt))
    }
}

/// Exact minimizer of ½βᵀHβ − zᵀβ + κ‖β‖₂ for one block.
fn block_update(block: &Block, h: &DMatrix<f64>, z: &DVector<f64>, kappa: f64, old: &DVector<f64>) -> DVector<f64> {
    let m = z.len();
    if z.norm() <= kappa {
        return DVector::zeros(m);
    }
    let lmax = block.eigvals[0];
    let lmin = block.eigvals[m - 1];
    if !(lmin > 1e-10 * lmax) {
        return block_prox_gradient(h, z, kappa, old, lmax);
    }
    let zt = block.eigvecs.transpose() * z;
    let phi = |t: f64| -> (f64, f64) {
        let mut v = -1.0;
        let mut d = 0.0;
        for i in 0..m {
            let den = block.eigvals[i] * t + kappa;
            v += zt[i] * zt[i] / (den * den);
            d -= 2.0 * zt[i] * zt[i] * block.eigvals[i] / (den * den * den);
        }
        (v, d)
    };
    let (mut lo, mut hi) = (0.0, z.norm() / lmin);
    let mut t = 0.0;
    for _ in 0..200 {
        let (v, d) = phi(t);
        if v > 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        let mut next = t - v / d;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - t).abs() <= 1e-16 * next.max(1e-300) {
            t = next;
            break;
        }
        t = next;
    }
    let coef = DVector::from_fn(m, |i, _| t * zt[i] / (block.eigvals[i] * t + kappa));
    &block.eigvecs * coef
}

fn block_prox_gradient(h: &DMatrix<f64>, z: &DVector<f64>, kappa: f64, old: &DVector<f64>, lmax: f64) -> DVector<f64> {
    let step = 1.0 / lmax.max(f64::MIN_POSITIVE);
    let mut b = old.clone();
    for _ in 0..10_000 {
        let v = &b - (h * &b - z) * step;
        let r = v.norm();
        let next = if r <= kappa * step { DVector::zeros(v.len()) } else { v * (1.0 - kappa * step / r) };
        let diff = (&next - &b).norm();
        b = next;
        if diff <= 1e-15 * (1.0 + b.norm()) {
            break;
        }
    }
    b
}

pub fn fit_weighted_lasso(data: &Dataset, w: &DVector<f64>, gamma: f64) -> Result<FitResult> {
    fit_weighted_lasso_with(data, w, gamma, &SolverConfig::default(), None)
}

pub fn fit_weighted_lasso_with(data: &Dataset, w: &DVector<f64>, gamma: f64, config: &SolverConfig, warm: Option<&DVector<f64>>) -> Result<FitResult> {
    Prepared::from_parts(data, w.clone(), None, None)?.fit(gamma, config, warm)
}

pub fn fit_adaptive_lasso(data: &Dataset, scheme: &WeightScheme, gamma: f64) -> Result<FitResult> {
    fit_penalized(data, &PenaltySpec::AdaptiveLasso(scheme.clone()), gamma, &SolverConfig::default(), None)
}

pub fn fit_group_lasso(data: &Dataset, groups: &GroupStructure, w: &DVector<f64>, gamma: f64) -> Result<FitResult> {
    let penalty = PenaltySpec::GroupLasso { groups: groups.clone(), weights: w.clone() };
    fit_penalized(data, &penalty, gamma, &SolverConfig::default(), None)
}

pub fn fit_adaptive_group_lasso(data: &Dataset, groups: &GroupStructure, scheme: &WeightScheme, gamma: f64) -> Result<FitResult> {
    let penalty = PenaltySpec::AdaptiveGroupLasso { groups: groups.clone(), scheme: scheme.clone() };
    fit_penalized(data, &penalty, gamma, &SolverConfig::default(), None)
}

/// One fit for any penalty; adaptive weights are computed from `data`.
pub fn fit_penalized(data: &Dataset, penalty: &PenaltySpec, gamma: f64, config: &SolverConfig, warm: Option<&DVector<f64>>) -> Result<FitResult> {
    Prepared::new(data, penalty)?.fit(gamma, config, warm)
}

/// Orthonormal-design Lasso solution.
pub fn closed_form_lasso(beta_ls: &DVector<f64>, w: &DVector<f64>, gamma: f64) -> DVector<f64> {
    DVector::from_fn(beta_ls.len(), |j, _| soft_threshold(beta_ls[j], gamma * w[j]))
}

/// Orthonormal-design Group Lasso solution.
pub fn closed_form_group(beta_ls: &DVector<f64>, groups: &GroupStructure, w: &DVector<f64>, gamma: f64) -> DVector<f64> {
    let mut out = DVector::zeros(beta_ls.len());
    for g in 0..groups.num_groups() {
        let r = groups.block_norm(beta_ls, g);
        let shrink = if r > 0.0 { (1.0 - gamma * w[g] / r).max(0.0) } else { 0.0 };
        for &j in groups.members(g) {
            out[j] = shrink * beta_ls[j];
        }
    }
    out
}

/// Log-spaced descending grid from `gamma_max` down `decades` decades.
pub fn gamma_grid(gamma_max: f64, size: usize, decades: f64) -> Vec<f64> {
    (0..size).map(|k| gamma_max * 10f64.powf(-decades * k as f64 / (size - 1) as f64)).collect()
}

pub fn compute_path(data: &Dataset, penalty: &PenaltySpec, config: &SolverConfig) -> Result<PathResult> {
    config.validate()?;
    let prepared = Prepared::new(data, penalty)?;
    let gamma_max = prepared.gamma_max();
    if !(gamma_max > 0.0) {
        return Err(Error::InvalidInput("response is orthogonal to every column".into()));
    }
    let grid = gamma_grid(gamma_max, config.grid_size, config.grid_decades);
    compute_path_on_grid(data, penalty, &prepared, &grid, config)
}

/// Path over a caller-supplied descending grid.
pub fn compute_path_with_grid(data: &Dataset, penalty: &PenaltySpec, grid: &[f64], config: &SolverConfig) -> Result<PathResult> {
    let prepared = Prepared::new(data, penalty)?;
    compute_path_on_grid(data, penalty, &prepared, grid, config)
}

fn compute_path_on_grid(data: &Dataset, penalty: &PenaltySpec, prepared: &Prepared, grid: &[f64], config: &SolverConfig) -> Result<PathResult> {
    if grid.windows(2).any(|w| !(w[0] > w[1])) {
        return Err(Error::InvalidInput("gamma grid must be strictly decreasing".into()));
    }
    let design = DesignKind::detect(data);
    let mut fits = Vec::with_capacity(grid.len());
    let mut dofs = Vec::with_capacity(grid.len());
    let mut issues = Vec::with_capacity(grid.len());
    let mut warm: Option<DVector<f64>> = None;
    for &gamma in grid {
        let fit = prepared.fit(gamma, config, warm.as_ref())?;
        let mut issue = (!fit.converged).then(|| format!("not converged: KKT residual {:e}", fit.kkt_residual));
        let dof = match dof::estimate(&fit, penalty, design, data) {
            Ok(d) => Some(d),
            Err(e) => {
                issue = Some(e.to_string());
                None
            }
        };
        warm = Some(fit.beta.clone());
        fits.push(fit);
        dofs.push(dof);
        issues.push(issue);
    }
    let mut path = PathResult {
        penalty: penalty.clone(),
        gammas: grid.to_vec(),
        fits,
        dofs,
        issues,
        transitions: Vec::new(),
        criteria: None,
    };
    path.transitions = detect_transitions(&path);
    for (k, &gamma) in path.gammas.iter().enumerate() {
        if path.transitions.iter().any(|t| (t - gamma).abs() <= 1e-9) {
            if let Some(d) = path.dofs[k].as_mut() {
                d.near_transition = true;
            }
        }
    }
    Ok(path)
}

/// Warm-started fits over a descending grid, without df evaluation.
pub fn fit_grid(data: &Dataset, penalty: &PenaltySpec, grid: &[f64], config: &SolverConfig) -> Result<Vec<FitResult>> {
    let prepared = Prepared::new(data, penalty)?;
    let mut out: Vec<FitResult> = Vec::with_capacity(grid.len());
    for &gamma in grid {
        let fit = prepared.fit(gamma, config, out.last().map(|f| &f.beta))?;
        out.push(fit);
    }
    Ok(out)
}

/// Midpoints of consecutive grid values whose active sets differ.
pub fn detect_transitions(path: &PathResult) -> Vec<f64> {
    path.fits
        .windows(2)
        .zip(path.gammas.windows(2))
        .filter(|(f, _)| f[0].active.a_p != f[1].active.a_p)
        .map(|(_, g)| 0.5 * (g[0] + g[1]))
        .collect()
}
