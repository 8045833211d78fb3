//! Shared domain types.

use nalgebra::{DMatrix, DVector};

use crate::numkit;
use crate::selection::CriterionValue;
use crate::{Error, Result};

/// Design matrix and response, plus the affine map back to raw units.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub column_means: DVector<f64>,
    pub column_scales: DVector<f64>,
    pub y_mean: f64,
    pub standardized: bool,
    /// `R` of the QR factorization when the design was orthonormalized.
    pub orthonormal_r: Option<DMatrix<f64>>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let (n, p) = x.shape();
        if n < 2 {
            return Err(Error::InvalidInput(format!("need at least 2 observations, got {n}")));
        }
        if y.len() != n {
            return Err(Error::InvalidInput(format!("response length {} != rows {}", y.len(), n)));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite value in data".into()));
        }
        Ok(Self {
            x,
            y,
            column_means: DVector::zeros(p),
            column_scales: DVector::from_element(p, 1.0),
            y_mean: 0.0,
            standardized: false,
            orthonormal_r: None,
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn with_response(&self, y: DVector<f64>) -> Self {
        Self { y, ..self.clone() }
    }

    /// Drops observation `i`.
    pub fn without_row(&self, i: usize) -> Self {
        Self { x: self.x.clone().remove_row(i), y: self.y.clone().remove_row(i), ..self.clone() }
    }

    /// Maps coefficients on the standardized scale to `(intercept, raw coefficients)`.
    pub fn destandardize(&self, beta: &DVector<f64>) -> (f64, DVector<f64>) {
        let scaled = match &self.orthonormal_r {
            Some(r) => r.clone().solve_upper_triangular(beta).unwrap_or_else(|| beta.clone()),
            None => beta.clone(),
        };
        let raw = scaled.component_div(&self.column_scales);
        let intercept = self.y_mean - self.column_means.dot(&raw);
        (intercept, raw)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StandardizeMode {
    /// Center columns and scale them to ℓ₂ norm √n.
    Scale,
    /// Center columns, then replace X by the Q factor of its thin QR.
    Orthonormal,
}

pub fn standardize(raw: &Dataset) -> Result<Dataset> {
    standardize_with(raw, StandardizeMode::Scale)
}

pub fn standardize_with(raw: &Dataset, mode: StandardizeMode) -> Result<Dataset> {
    let (n, p) = raw.x.shape();
    if n < 2 {
        return Err(Error::InvalidInput("need at least 2 observations".into()));
    }
    let mut x = raw.x.clone();
    let mut means = DVector::zeros(p);
    let mut scales = DVector::from_element(p, 1.0);
    let sqrt_n = (n as f64).sqrt();
    for j in 0..p {
        let m = x.column(j).mean();
        let mut col = x.column_mut(j);
        col.add_scalar_mut(-m);
        let norm = col.norm();
        if norm <= 1e-12 * (1.0 + m.abs()) * sqrt_n {
            return Err(Error::ConstantColumn(j));
        }
        means[j] = m;
        if mode == StandardizeMode::Scale {
            let s = norm / sqrt_n;
            col /= s;
            scales[j] = s;
        }
    }
    let y_mean = raw.y.mean();
    let y = raw.y.add_scalar(-y_mean);
    let mut orthonormal_r = None;
    if mode == StandardizeMode::Orthonormal {
        let (q, r) = numkit::thin_qr(&x)?;
        x = q;
        orthonormal_r = Some(r);
    }
    Ok(Dataset { x, y, column_means: means, column_scales: scales, y_mean, standardized: true, orthonormal_r })
}

/// Partition of the p variables into G nonempty groups (0-based labels).
#[derive(Debug, Clone, PartialEq)]
pub struct GroupStructure {
    assignment: Vec<usize>,
    members: Vec<Vec<usize>>,
}

impl GroupStructure {
    pub fn new(assignment: Vec<usize>) -> Result<Self> {
        let g = assignment.iter().max().map_or(0, |m| m + 1);
        let mut members = vec![Vec::new(); g];
        for (j, &a) in assignment.iter().enumerate() {
            members[a].push(j);
        }
        if let Some(empty) = members.iter().position(Vec::is_empty) {
            return Err(Error::InvalidInput(format!("group {} has no members", empty + 1)));
        }
        Ok(Self { assignment, members })
    }

    /// Consecutive blocks of `size` variables.
    pub fn contiguous(p: usize, size: usize) -> Result<Self> {
        if size == 0 || p % size != 0 {
            return Err(Error::InvalidInput(format!("cannot split {p} variables into groups of {size}")));
        }
        Self::new((0..p).map(|j| j / size).collect())
    }

    pub fn singletons(p: usize) -> Self {
        Self::new((0..p).collect()).expect("singletons are valid")
    }

    pub fn num_groups(&self) -> usize {
        self.members.len()
    }

    pub fn num_variables(&self) -> usize {
        self.assignment.len()
    }

    pub fn group_of(&self, j: usize) -> usize {
        self.assignment[j]
    }

    pub fn members(&self, g: usize) -> &[usize] {
        &self.members[g]
    }

    pub fn size(&self, g: usize) -> usize {
        self.members[g].len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.members.iter().map(Vec::len).collect()
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn block(&self, v: &DVector<f64>, g: usize) -> DVector<f64> {
        DVector::from_iterator(self.size(g), self.members[g].iter().map(|&j| v[j]))
    }

    pub fn block_norm(&self, v: &DVector<f64>, g: usize) -> f64 {
        self.members[g].iter().map(|&j| v[j] * v[j]).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum WeightScheme {
    Fixed(DVector<f64>),
    InversePower(f64),
    ExponentialDecay(f64),
    GroupInverseNorm,
}

impl WeightScheme {
    pub fn validate(&self, expected_len: usize) -> Result<()> {
        match self {
            WeightScheme::Fixed(w) => {
                if w.len() != expected_len {
                    return Err(Error::InvalidInput(format!("expected {} weights, got {}", expected_len, w.len())));
                }
                if w.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                    return Err(Error::InvalidInput("fixed weights must be finite and positive".into()));
                }
                Ok(())
            }
            WeightScheme::InversePower(a) | WeightScheme::ExponentialDecay(a) => {
                if a.is_finite() && *a > 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidInput(format!("alpha must be positive, got {a}")))
                }
            }
            WeightScheme::GroupInverseNorm => Ok(()),
        }
    }

    pub fn is_fixed(&self) -> bool {
        matches!(self, WeightScheme::Fixed(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PenaltySpec {
    Lasso,
    AdaptiveLasso(WeightScheme),
    GroupLasso { groups: GroupStructure, weights: DVector<f64> },
    AdaptiveGroupLasso { groups: GroupStructure, scheme: WeightScheme },
}

impl PenaltySpec {
    pub fn validate(&self, p: usize) -> Result<()> {
        match self {
            PenaltySpec::Lasso => Ok(()),
            PenaltySpec::AdaptiveLasso(scheme) => scheme.validate(p),
            PenaltySpec::GroupLasso { groups, weights } => {
                check_groups(groups, p)?;
                WeightScheme::Fixed(weights.clone()).validate(groups.num_groups())
            }
            PenaltySpec::AdaptiveGroupLasso { groups, scheme } => {
                check_groups(groups, p)?;
                match scheme {
                    WeightScheme::Fixed(_) | WeightScheme::GroupInverseNorm => scheme.validate(groups.num_groups()),
                    _ => Err(Error::InvalidInput("adaptive group lasso takes group-inverse-norm or fixed weights".into())),
                }
            }
        }
    }

    pub fn groups(&self) -> Option<&GroupStructure> {
        match self {
            PenaltySpec::GroupLasso { groups, .. } | PenaltySpec::AdaptiveGroupLasso { groups, .. } => Some(groups),
            _ => None,
        }
    }

    pub fn is_adaptive(&self) -> bool {
        match self {
            PenaltySpec::AdaptiveLasso(s) | PenaltySpec::AdaptiveGroupLasso { scheme: s, .. } => !s.is_fixed(),
            _ => false,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PenaltySpec::Lasso => "lasso",
            PenaltySpec::AdaptiveLasso(_) => "adaptive-lasso",
            PenaltySpec::GroupLasso { .. } => "group-lasso",
            PenaltySpec::AdaptiveGroupLasso { .. } => "adaptive-group-lasso",
        }
    }
}

fn check_groups(groups: &GroupStructure, p: usize) -> Result<()> {
    if groups.num_variables() != p {
        return Err(Error::InvalidInput(format!("group map covers {} variables, design has {}", groups.num_variables(), p)));
    }
    Ok(())
}

/// Relative zero threshold for declaring coefficients active.
pub fn active_threshold(beta: &DVector<f64>) -> f64 {
    1e-10 * numkit::max_abs_vec(beta).max(1.0)
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ActiveSets {
    /// Sorted active variable indices.
    pub a_p: Vec<usize>,
    /// Sorted active group indices (empty for ungrouped penalties).
    pub a_g: Vec<usize>,
    /// Rank of each variable within `a_p`.
    pub pi: Vec<Option<usize>>,
}

impl ActiveSets {
    /// Ungrouped: entries above threshold. Grouped: every member of a group
    /// whose block norm is above threshold.
    pub fn from_beta(beta: &DVector<f64>, groups: Option<&GroupStructure>) -> Self {
        let thr = active_threshold(beta);
        let p = beta.len();
        let (a_p, a_g) = match groups {
            None => ((0..p).filter(|&j| beta[j].abs() > thr).collect::<Vec<_>>(), Vec::new()),
            Some(gs) => {
                let a_g: Vec<usize> = (0..gs.num_groups()).filter(|&g| gs.block_norm(beta, g) > thr).collect();
                let mut a_p: Vec<usize> = a_g.iter().flat_map(|&g| gs.members(g).iter().copied()).collect();
                a_p.sort_unstable();
                (a_p, a_g)
            }
        };
        let mut pi = vec![None; p];
        for (k, &j) in a_p.iter().enumerate() {
            pi[j] = Some(k);
        }
        Self { a_p, a_g, pi }
    }

    pub fn size(&self) -> usize {
        self.a_p.len()
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub beta: DVector<f64>,
    pub gamma: f64,
    pub active: ActiveSets,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Realized penalty weights (per variable, or per group for grouped penalties).
    pub weights: DVector<f64>,
    /// Least-squares fit the adaptive weights were built from.
    pub beta_ls: Option<DVector<f64>>,
}

impl FitResult {
    pub fn fitted(&self, data: &Dataset) -> DVector<f64> {
        &data.x * &self.beta
    }

    pub fn rss(&self, data: &Dataset) -> f64 {
        (&data.y - self.fitted(data)).norm_squared()
    }

    pub fn ensure_converged(&self) -> Result<&Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::MaxIterations { iterations: self.iterations, kkt: self.kkt_residual })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DofMethod {
    Lasso,
    AdaptiveLassoOrthonormal,
    AdaptiveLassoGeneral,
    GroupLassoOrthonormal,
    GroupLassoGeneral,
    AdaptiveGroupLassoOrthonormal,
    AdaptiveGroupLassoGeneral,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DofEstimate {
    pub value: f64,
    pub base_active: usize,
    pub group_active: usize,
    /// `value - base_active`.
    pub correction: f64,
    pub method: DofMethod,
    /// Shrinkage from the group-norm curvature (≤ 0).
    pub contraction: f64,
    /// Extra df from data-driven weights.
    pub inflation: f64,
    pub near_transition: bool,
}

impl DofEstimate {
    pub(crate) fn new(value: f64, base_active: usize, group_active: usize, method: DofMethod) -> Self {
        Self {
            value,
            base_active,
            group_active,
            correction: value - base_active as f64,
            method,
            contraction: 0.0,
            inflation: 0.0,
            near_transition: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PathResult {
    pub penalty: PenaltySpec,
    pub gammas: Vec<f64>,
    pub fits: Vec<FitResult>,
    pub dofs: Vec<Option<DofEstimate>>,
    /// Per-point error messages from the df evaluation or solver.
    pub issues: Vec<Option<String>>,
    pub transitions: Vec<f64>,
    pub criteria: Option<Vec<CriterionValue>>,
}
