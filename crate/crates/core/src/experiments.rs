//! Synthetic unbiasedness study, selection-count histograms, and the
//! discretize-and-group dataset pipeline.

use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::dof::{self, DesignKind};
use crate::model::{standardize, Dataset, GroupStructure, PenaltySpec, WeightScheme};
use crate::oracle::{self, check_failures, covariance_terms, mean_and_se, replicate_rng};
use crate::selection::{self, Criterion, DfSource};
use crate::solvers::{self, Prepared, SolverConfig};
use crate::{Error, Result};

pub const DEFAULT_SEED: u64 = 20_240_611;
const DESIGN_STREAM: u64 = u64::MAX;

/// Leading coefficients of the synthetic truth; the rest are zero.
pub const SIGNAL: [f64; 9] = [5.0, -5.0, 5.0, 3.0, -3.0, 3.0, 1.0, -1.0, 1.0];

/// How `snr` maps to the noise level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SnrDefinition {
    /// σ² = Var(Xβ)/snr.
    #[default]
    VarianceRatio,
    /// σ = sd(Xβ)/snr.
    StdRatio,
}

impl FromStr for SnrDefinition {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "variance" => Ok(SnrDefinition::VarianceRatio),
            "std" => Ok(SnrDefinition::StdRatio),
            other => Err(Error::InvalidInput(format!("unknown SNR definition '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n: usize,
    pub p: usize,
    pub beta: DVector<f64>,
    pub snr: f64,
    pub snr_definition: SnrDefinition,
    pub replicates: usize,
    pub group_size: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self::sized(100, 30, 10_000, DEFAULT_SEED)
    }
}

impl SyntheticSpec {
    pub fn sized(n: usize, p: usize, replicates: usize, seed: u64) -> Self {
        let beta = DVector::from_fn(p, |j, _| SIGNAL.get(j).copied().unwrap_or(0.0));
        Self { n, p, beta, snr: 4.0, snr_definition: SnrDefinition::VarianceRatio, replicates, group_size: 3, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beta.len() != self.p || !(self.snr > 0.0) || self.n < 2 || self.group_size == 0 || self.p % self.group_size != 0 {
            return Err(Error::InvalidInput(format!("invalid synthetic spec (n={}, p={}, group size {})", self.n, self.p, self.group_size)));
        }
        Ok(())
    }

    pub fn groups(&self) -> Result<GroupStructure> {
        GroupStructure::contiguous(self.p, self.group_size)
    }
}

/// Fixed design, noiseless mean and noise level of a synthetic spec.
#[derive(Debug, Clone)]
pub struct SyntheticDesign {
    pub x: DMatrix<f64>,
    pub mu: DVector<f64>,
    pub sigma: f64,
}

pub fn synthetic_design(spec: &SyntheticSpec) -> Result<SyntheticDesign> {
    spec.validate()?;
    let mut rng = replicate_rng(spec.seed, DESIGN_STREAM);
    let x = DMatrix::from_column_slice(spec.n, spec.p, oracle::gaussian_vector(&mut rng, spec.n * spec.p, 1.0).as_slice());
    let mu = &x * &spec.beta;
    let mean = mu.mean();
    let var = mu.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / spec.n as f64;
    let sigma = match spec.snr_definition {
        SnrDefinition::VarianceRatio => (var / spec.snr).sqrt(),
        SnrDefinition::StdRatio => var.sqrt() / spec.snr,
    };
    Ok(SyntheticDesign { x, sigma, mu })
}

fn replicate_dataset(design: &SyntheticDesign, seed: u64, b: usize) -> Result<Dataset> {
    let y = &design.mu + oracle::replicate_noise(seed, b, design.mu.len(), design.sigma);
    Dataset::new(design.x.clone(), y)
}

/// Replicate `replicate_index`: the shared design with fresh noise.
pub fn gen_synthetic(spec: &SyntheticSpec, replicate_index: usize) -> Result<Dataset> {
    replicate_dataset(&synthetic_design(spec)?, spec.seed, replicate_index)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Lasso,
    AdaptiveLasso,
    GroupLasso,
    AdaptiveGroupLasso,
}

impl Method {
    pub const STUDIED: [Method; 3] = [Method::AdaptiveLasso, Method::GroupLasso, Method::AdaptiveGroupLasso];

    pub fn penalty(self, p: usize, groups: Option<&GroupStructure>) -> Result<PenaltySpec> {
        let need_groups = || groups.cloned().ok_or_else(|| Error::InvalidInput("grouped method needs a group structure".into()));
        Ok(match self {
            Method::Lasso => PenaltySpec::Lasso,
            Method::AdaptiveLasso => PenaltySpec::AdaptiveLasso(WeightScheme::InversePower(1.0)),
            Method::GroupLasso => {
                let g = need_groups()?;
                let w = DVector::from_element(g.num_groups(), 1.0);
                PenaltySpec::GroupLasso { groups: g, weights: w }
            }
            Method::AdaptiveGroupLasso => PenaltySpec::AdaptiveGroupLasso { groups: need_groups()?, scheme: WeightScheme::GroupInverseNorm },
        })
        .and_then(|pen| pen.validate(p).map(|_| pen))
    }

    pub fn is_grouped(self) -> bool {
        matches!(self, Method::GroupLasso | Method::AdaptiveGroupLasso)
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Lasso => "lasso",
            Method::AdaptiveLasso => "adaptive-lasso",
            Method::GroupLasso => "group-lasso",
            Method::AdaptiveGroupLasso => "adaptive-group-lasso",
        }
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lasso" => Ok(Method::Lasso),
            "adaptive" | "adaptive-lasso" => Ok(Method::AdaptiveLasso),
            "group" | "group-lasso" => Ok(Method::GroupLasso),
            "adaptive-group" | "adaptive-group-lasso" => Ok(Method::AdaptiveGroupLasso),
            other => Err(Error::InvalidInput(format!("unknown penalty '{other}'"))),
        }
    }
}

fn spec_penalty(spec: &SyntheticSpec, method: Method) -> Result<PenaltySpec> {
    let groups = spec.groups()?;
    method.penalty(spec.p, Some(&groups))
}

/// Fractions of replicate 0's null threshold used when no grid is given.
pub const UNBIASEDNESS_FRACTIONS: [f64; 5] = [0.6, 0.3, 0.15, 0.07, 0.03];

pub fn default_unbiasedness_gammas(spec: &SyntheticSpec, method: Method) -> Result<Vec<f64>> {
    let gmax = Prepared::new(&gen_synthetic(spec, 0)?, &spec_penalty(spec, method)?)?.gamma_max();
    Ok(UNBIASEDNESS_FRACTIONS.iter().map(|f| f * gmax).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnbiasednessRow {
    pub gamma: f64,
    pub mean_analytic: f64,
    pub se_analytic: f64,
    pub mc_df: f64,
    pub mc_se: f64,
    /// Standard error of the per-replicate difference between the two.
    pub paired_se: f64,
    pub replicates: usize,
    pub failures: usize,
    pub max_kkt: f64,
}

impl UnbiasednessRow {
    pub fn z_score(&self) -> f64 {
        (self.mean_analytic - self.mc_df) / self.paired_se
    }
}

struct ReplicateOutcome {
    y: DVector<f64>,
    fitted: Vec<DVector<f64>>,
    df: Vec<f64>,
    max_kkt: f64,
}

/// Analytic df averaged over replicates next to the covariance df, all on the
/// same noise draws. `gammas` must be strictly decreasing.
pub fn run_unbiasedness(spec: &SyntheticSpec, gammas: &[f64], method: Method) -> Result<Vec<UnbiasednessRow>> {
    if method == Method::Lasso {
        return Err(Error::InvalidInput("unbiasedness study covers the adaptive and grouped methods".into()));
    }
    let design = synthetic_design(spec)?;
    let penalty = spec_penalty(spec, method)?;
    let config = SolverConfig::default();
    let outcomes: Vec<Option<ReplicateOutcome>> = (0..spec.replicates)
        .into_par_iter()
        .map(|b| -> Option<ReplicateOutcome> {
            let data = replicate_dataset(&design, spec.seed, b).ok()?;
            let prepared = Prepared::new(&data, &penalty).ok()?;
            let mut out = ReplicateOutcome { y: data.y.clone(), fitted: Vec::new(), df: Vec::new(), max_kkt: 0.0 };
            let mut warm: Option<DVector<f64>> = None;
            for &g in gammas {
                let fit = prepared.fit(g, &config, warm.as_ref()).ok()?;
                if !fit.converged {
                    return None;
                }
                let est = dof::estimate(&fit, &penalty, DesignKind::General, &data).ok()?;
                out.max_kkt = out.max_kkt.max(fit.kkt_residual);
                out.fitted.push(fit.fitted(&data));
                out.df.push(est.value);
                warm = Some(fit.beta);
            }
            Some(out)
        })
        .collect();
    let failures = outcomes.iter().filter(|o| o.is_none()).count();
    check_failures(failures, spec.replicates)?;
    let ok: Vec<ReplicateOutcome> = outcomes.into_iter().flatten().collect();
    let ys: Vec<DVector<f64>> = ok.iter().map(|o| o.y.clone()).collect();
    let sigma2 = design.sigma * design.sigma;
    let mut rows = Vec::with_capacity(gammas.len());
    for (k, &gamma) in gammas.iter().enumerate() {
        let fits: Vec<DVector<f64>> = ok.iter().map(|o| o.fitted[k].clone()).collect();
        let terms = covariance_terms(&ys, &fits, sigma2);
        let dfs: Vec<f64> = ok.iter().map(|o| o.df[k]).collect();
        let diffs: Vec<f64> = dfs.iter().zip(&terms).map(|(a, c)| a - c).collect();
        let (mc_df, mc_se) = mean_and_se(&terms);
        let (mean_analytic, se_analytic) = mean_and_se(&dfs);
        let (_, paired_se) = mean_and_se(&diffs);
        rows.push(UnbiasednessRow {
            gamma,
            mean_analytic,
            se_analytic,
            mc_df,
            mc_se,
            paired_se,
            replicates: ok.len(),
            failures,
            max_kkt: ok.iter().map(|o| o.max_kkt).fold(0.0, f64::max),
        });
    }
    Ok(rows)
}

pub const BUCKET_LABELS: [&str; 7] = ["<=7", "8", "9", "10", "11", "12", ">=13"];

pub fn bucket(size: usize) -> usize {
    size.clamp(7, 13) - 7
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionHistogram {
    pub method: Method,
    pub counts: [usize; 7],
    /// Count per exact selected size (index = size).
    pub exact: Vec<usize>,
    pub failures: usize,
    pub max_kkt: f64,
}

impl SelectionHistogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn modal_bucket(&self) -> usize {
        let mut best = 0;
        for (i, &c) in self.counts.iter().enumerate() {
            if c > self.counts[best] {
                best = i;
            }
        }
        best
    }
}

/// Size of the BIC-selected model (analytic df, OLS-based σ̂²) for one replicate.
pub fn selected_size(data: &Dataset, penalty: &PenaltySpec, config: &SolverConfig) -> Result<(usize, f64)> {
    let sigma2 = selection::estimate_sigma2(data)?;
    let mut path = solvers::compute_path(data, penalty, config)?;
    selection::attach_criteria(&mut path, data, sigma2);
    let gamma = selection::select_gamma(&path, Criterion::Bic, DfSource::Analytic)?;
    let k = path.gammas.iter().position(|g| *g == gamma).expect("selected from grid");
    let max_kkt = path.fits.iter().map(|f| f.kkt_residual).fold(0.0, f64::max);
    Ok((path.fits[k].active.size(), max_kkt))
}

pub fn run_table1(spec: &SyntheticSpec, replicates: usize) -> Result<Vec<SelectionHistogram>> {
    let design = synthetic_design(spec)?;
    let config = SolverConfig::default();
    let mut out = Vec::new();
    for method in Method::STUDIED {
        let penalty = spec_penalty(spec, method)?;
        let sizes: Vec<Option<(usize, f64)>> = (0..replicates)
            .into_par_iter()
            .map(|b| {
                let data = replicate_dataset(&design, spec.seed, b).ok()?;
                selected_size(&data, &penalty, &config).ok()
            })
            .collect();
        let failures = sizes.iter().filter(|s| s.is_none()).count();
        check_failures(failures, replicates)?;
        let mut counts = [0usize; 7];
        let mut exact = vec![0usize; spec.p + 1];
        let mut max_kkt: f64 = 0.0;
        for (size, kkt) in sizes.into_iter().flatten() {
            counts[bucket(size)] += 1;
            exact[size] += 1;
            max_kkt = max_kkt.max(kkt);
        }
        out.push(SelectionHistogram { method, counts, exact, failures, max_kkt });
    }
    Ok(out)
}

/// Equal-frequency bins with reference-cell dummies; the dummies of each
/// covariate form one group.
pub fn discretize_encode(data: &Dataset, levels: usize) -> Result<(Dataset, GroupStructure)> {
    if levels < 2 {
        return Err(Error::InvalidInput("need at least two levels".into()));
    }
    let (n, p) = data.x.shape();
    let mut x = DMatrix::zeros(n, p * (levels - 1));
    for j in 0..p {
        let mut sorted: Vec<f64> = data.x.column(j).iter().copied().collect();
        sorted.sort_by(f64::total_cmp);
        let mut distinct = sorted.clone();
        distinct.dedup();
        if distinct.len() < levels {
            return Err(Error::DegenerateQuantiles(j));
        }
        let cuts: Vec<f64> = (1..levels)
            .map(|k| {
                let pos = (k * n).div_ceil(levels);
                0.5 * (sorted[pos - 1] + sorted[pos.min(n - 1)])
            })
            .collect();
        let mut filled = vec![false; levels];
        for i in 0..n {
            let bin = cuts.iter().filter(|c| data.x[(i, j)] > **c).count();
            filled[bin] = true;
            if bin > 0 {
                x[(i, j * (levels - 1) + bin - 1)] = 1.0;
            }
        }
        if filled.iter().any(|f| !f) {
            return Err(Error::DegenerateQuantiles(j));
        }
    }
    let groups = GroupStructure::contiguous(p * (levels - 1), levels - 1)?;
    Ok((Dataset::new(x, data.y.clone())?, groups))
}

/// Covariate and response matrix from a headered numeric CSV.
pub fn read_csv(path: &Path, response: &str) -> Result<(Dataset, Vec<String>)> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| Error::CsvParse(e.to_string()))?;
    let headers: Vec<String> = reader.headers().map_err(|e| Error::CsvParse(e.to_string()))?.iter().map(str::to_owned).collect();
    let target = headers.iter().position(|h| h == response).ok_or_else(|| Error::CsvParse(format!("no column named '{response}'")))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::CsvParse(e.to_string()))?;
        let vals = rec
            .iter()
            .map(|v| v.parse::<f64>().map_err(|_| Error::CsvParse(format!("row {}: '{v}' is not a number", line + 2))))
            .collect::<Result<Vec<f64>>>()?;
        if vals.len() != headers.len() {
            return Err(Error::CsvParse(format!("row {} has {} fields, expected {}", line + 2, vals.len(), headers.len())));
        }
        rows.push(vals);
    }
    let n = rows.len();
    let names: Vec<String> = headers.iter().enumerate().filter(|(i, _)| *i != target).map(|(_, h)| h.clone()).collect();
    let x = DMatrix::from_fn(n, names.len(), |i, j| rows[i][if j < target { j } else { j + 1 }]);
    let y = DVector::from_fn(n, |i, _| rows[i][target]);
    Ok((Dataset::new(x, y)?, names))
}

#[derive(Debug, Clone)]
pub struct PipelineReport {
    pub method: Method,
    pub grouped: bool,
    pub gammas: Vec<f64>,
    pub df_analytic: Vec<f64>,
    pub df_active_set: Vec<f64>,
    pub df_active_groups: Option<Vec<f64>>,
    /// Coefficients per grid point on the standardized scale.
    pub coefficients: Vec<DVector<f64>>,
    pub gamma_bic_analytic: f64,
    pub gamma_bic_naive: f64,
    pub gamma_cv: Option<f64>,
    pub cv_errors: Option<Vec<f64>>,
    pub sigma2: f64,
    pub groups: Option<GroupStructure>,
    pub max_kkt: f64,
}

impl PipelineReport {
    /// |log γ_BIC-analytic − log γ_CV| ≤ |log γ_BIC-naive − log γ_CV|.
    pub fn analytic_closer_to_cv(&self) -> Option<bool> {
        let cv = self.gamma_cv?.ln();
        Some((self.gamma_bic_analytic.ln() - cv).abs() <= (self.gamma_bic_naive.ln() - cv).abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineOptions {
    pub levels: usize,
    pub cross_validate: bool,
    pub solver: SolverConfig,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self { levels: 4, cross_validate: true, solver: SolverConfig::default() }
    }
}

/// Encode (optional), standardize, fit the path, and select γ by BIC with both
/// df sources and by leave-one-out CV.
pub fn run_pipeline(raw: &Dataset, method: Method, grouped: bool, options: &PipelineOptions) -> Result<PipelineReport> {
    if method.is_grouped() && !grouped {
        return Err(Error::InvalidInput(format!("{} requires the grouped encoding", method.name())));
    }
    let (encoded, groups) = if grouped {
        let (d, g) = discretize_encode(raw, options.levels)?;
        (d, Some(g))
    } else {
        (raw.clone(), None)
    };
    let data = standardize(&encoded)?;
    let penalty = method.penalty(data.p(), groups.as_ref())?;
    let sigma2 = selection::estimate_sigma2(&data)?;
    let mut path = solvers::compute_path(&data, &penalty, &options.solver)?;
    selection::attach_criteria(&mut path, &data, sigma2);
    let gamma_bic_analytic = selection::select_gamma(&path, Criterion::Bic, DfSource::Analytic)?;
    let gamma_bic_naive = selection::select_gamma(&path, Criterion::Bic, DfSource::ActiveSetSize)?;
    let cv = if options.cross_validate { Some(selection::loo_cv(&data, &penalty, &path.gammas, &options.solver)?) } else { None };
    let nan = f64::NAN;
    Ok(PipelineReport {
        method,
        grouped,
        df_analytic: path.dofs.iter().map(|d| d.as_ref().map_or(nan, |d| d.value)).collect(),
        df_active_set: path.fits.iter().map(|f| f.active.size() as f64).collect(),
        df_active_groups: groups.as_ref().map(|_| path.fits.iter().map(|f| f.active.a_g.len() as f64).collect()),
        coefficients: path.fits.iter().map(|f| f.beta.clone()).collect(),
        max_kkt: path.fits.iter().map(|f| f.kkt_residual).fold(0.0, f64::max),
        gammas: path.gammas,
        gamma_bic_analytic,
        gamma_bic_naive,
        gamma_cv: cv.as_ref().map(|c| c.gamma),
        cv_errors: cv.map(|c| c.errors),
        sigma2,
        groups,
    })
}

pub fn run_dataset_pipeline(csv_path: &Path, response_column: &str, method: Method, grouped: bool) -> Result<PipelineReport> {
    let (raw, _) = read_csv(csv_path, response_column)?;
    run_pipeline(&raw, method, grouped, &PipelineOptions::default())
}

/// A 442×10 dataset with correlated covariates and a response driven by a few
/// of them through threshold effects.
pub fn gen_grouped_dataset(seed: u64) -> Result<Dataset> {
    let (n, p) = (442, 10);
    let mut rng = replicate_rng(seed, 0);
    let latent = oracle::gaussian_vector(&mut rng, n, 1.0);
    let noise = oracle::gaussian_vector(&mut rng, n * p, 1.0);
    let x = DMatrix::from_fn(n, p, |i, j| 0.6 * latent[i] + noise[i * p + j] + 0.1 * j as f64);
    let eps = oracle::gaussian_vector(&mut rng, n, 2.0);
    let jitter: f64 = rng.gen_range(-0.2..0.2);
    let y = DVector::from_fn(n, |i, _| {
        let r = x.row(i);
        3.0 * f64::from(r[0] > 0.7) - 2.5 * f64::from(r[1] < -0.5) + 2.0 * f64::from(r[2] > 0.1) + (1.2 + jitter) * r[3] + 0.8 * f64::from(r[4].abs() > 1.0) + eps[i]
    });
    Dataset::new(x, y)
}
