mod args;
mod output;

use std::fs;
use std::path::Path;
use std::process::ExitCode;

use clap::Parser;
use dofpath::dof::{self, DesignKind};
use dofpath::experiments::{self, Method, PipelineOptions, PipelineReport, SnrDefinition, SyntheticSpec};
use dofpath::model::{standardize, Dataset, GroupStructure, PenaltySpec, WeightScheme};
use dofpath::selection::{self, Criterion, DfSource};
use dofpath::solvers::{self, SolverConfig};
use nalgebra::DVector;
use serde_json::{json, Value};

use args::{Cli, Command, CriterionArg, DataArgs, ExperimentCommand, FitArgs, GridArgs, PathArgs, PenaltyArg, SimulationArgs, SnrArg};
use output::{num, opt_num, Outputs};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
    Library(dofpath::Error),
}

impl From<dofpath::Error> for CliError {
    fn from(e: dofpath::Error) -> Self {
        CliError::Library(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Library(e) if e.is_numerical() => 3,
            _ => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) | CliError::Io(m) => f.write_str(m),
            CliError::Library(e) => write!(f, "{e} ({e:?})"),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be positive");
            return ExitCode::from(2);
        }
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global().expect("thread pool configured once");
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Fit(a) => cmd_fit(a, &cli.out),
        Command::Path(a) => cmd_path(a, &cli.out),
        Command::Experiment(e) => cmd_experiment(e, &cli.out),
    }
}

fn method_of(p: PenaltyArg) -> Method {
    match p {
        PenaltyArg::Lasso => Method::Lasso,
        PenaltyArg::Adaptive => Method::AdaptiveLasso,
        PenaltyArg::Group => Method::GroupLasso,
        PenaltyArg::AdaptiveGroup => Method::AdaptiveGroupLasso,
    }
}

fn parse_alpha(s: &str, spec: &str) -> CliResult<f64> {
    s.parse::<f64>().map_err(|_| CliError::Config(format!("bad weight parameter in '{spec}'")))
}

fn parse_weights(spec: &str) -> CliResult<WeightScheme> {
    match spec.split_once(':') {
        None if spec == "fixed" => Ok(WeightScheme::Fixed(DVector::zeros(0))),
        None if spec == "group-inv-norm" => Ok(WeightScheme::GroupInverseNorm),
        Some(("inv-power", a)) => Ok(WeightScheme::InversePower(parse_alpha(a, spec)?)),
        Some(("exp", a)) => Ok(WeightScheme::ExponentialDecay(parse_alpha(a, spec)?)),
        _ => Err(CliError::Config(format!("unknown weight scheme '{spec}'"))),
    }
}

/// Reads `variable_index,group_index` lines (1-based); a non-numeric first
/// line is taken as a header.
fn read_groups(path: &Path, p: usize) -> CliResult<GroupStructure> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut assignment: Vec<Option<usize>> = vec![None; p];
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parsed = line.split_once(',').and_then(|(a, b)| Some((a.trim().parse::<usize>().ok()?, b.trim().parse::<usize>().ok()?)));
        let (var, group) = match parsed {
            Some(v) => v,
            None if k == 0 => continue,
            None => return Err(CliError::Config(format!("groups line {}: expected 'variable_index,group_index'", k + 1))),
        };
        if var == 0 || var > p || group == 0 {
            return Err(CliError::Config(format!("groups line {}: indices are 1-based and variables run to {p}", k + 1)));
        }
        if assignment[var - 1].replace(group - 1).is_some() {
            return Err(CliError::Config(format!("variable {var} assigned twice")));
        }
    }
    let assignment = assignment
        .into_iter()
        .enumerate()
        .map(|(j, g)| g.ok_or_else(|| CliError::Config(format!("variable {} has no group", j + 1))))
        .collect::<CliResult<Vec<usize>>>()?;
    Ok(GroupStructure::new(assignment)?)
}

fn build_penalty(args: &DataArgs, p: usize) -> CliResult<PenaltySpec> {
    let groups = match (&args.groups, args.penalty) {
        (Some(path), PenaltyArg::Group | PenaltyArg::AdaptiveGroup) => Some(read_groups(path, p)?),
        (None, PenaltyArg::Group | PenaltyArg::AdaptiveGroup) => return Err(CliError::Config("grouped penalties need --groups".into())),
        (Some(_), _) => return Err(CliError::Config("--groups only applies to group penalties".into())),
        (None, _) => None,
    };
    let scheme = args.weights.as_deref().map(parse_weights).transpose()?;
    let penalty = match (args.penalty, scheme) {
        (PenaltyArg::Lasso, None | Some(WeightScheme::Fixed(_))) => PenaltySpec::Lasso,
        (PenaltyArg::Adaptive, None) => PenaltySpec::AdaptiveLasso(WeightScheme::InversePower(1.0)),
        (PenaltyArg::Adaptive, Some(WeightScheme::Fixed(_))) => PenaltySpec::AdaptiveLasso(WeightScheme::Fixed(DVector::from_element(p, 1.0))),
        (PenaltyArg::Adaptive, Some(WeightScheme::GroupInverseNorm)) => return Err(CliError::Config("group-inv-norm needs a grouped penalty".into())),
        (PenaltyArg::Adaptive, Some(s)) => PenaltySpec::AdaptiveLasso(s),
        (PenaltyArg::Group, None | Some(WeightScheme::Fixed(_))) => {
            let g = groups.expect("checked above");
            let w = DVector::from_element(g.num_groups(), 1.0);
            PenaltySpec::GroupLasso { groups: g, weights: w }
        }
        (PenaltyArg::AdaptiveGroup, None | Some(WeightScheme::GroupInverseNorm)) => {
            PenaltySpec::AdaptiveGroupLasso { groups: groups.expect("checked above"), scheme: WeightScheme::GroupInverseNorm }
        }
        (PenaltyArg::AdaptiveGroup, Some(WeightScheme::Fixed(_))) => {
            let g = groups.expect("checked above");
            let w = DVector::from_element(g.num_groups(), 1.0);
            PenaltySpec::AdaptiveGroupLasso { groups: g, scheme: WeightScheme::Fixed(w) }
        }
        (pen, Some(_)) => return Err(CliError::Config(format!("weight scheme not available for {}", method_of(pen).name()))),
    };
    penalty.validate(p)?;
    Ok(penalty)
}

struct Loaded {
    data: Dataset,
    names: Vec<String>,
    penalty: PenaltySpec,
}

fn load(args: &DataArgs) -> CliResult<Loaded> {
    let (raw, names) = experiments::read_csv(&args.data, &args.response)?;
    let penalty = build_penalty(args, raw.p())?;
    Ok(Loaded { data: standardize(&raw)?, names, penalty })
}

fn data_config(args: &DataArgs) -> Value {
    json!({
        "data": args.data.display().to_string(),
        "response": args.response,
        "penalty": method_of(args.penalty).name(),
        "groups": args.groups.as_ref().map(|p| p.display().to_string()),
        "weights": args.weights,
    })
}

fn one_based(v: &[usize]) -> Vec<usize> {
    v.iter().map(|j| j + 1).collect()
}

fn cmd_fit(args: &FitArgs, out: &Path) -> CliResult<()> {
    if !(args.gamma.is_finite() && args.gamma >= 0.0) {
        return Err(CliError::Config("--gamma must be a finite non-negative number".into()));
    }
    let Loaded { data, names, penalty } = load(&args.data)?;
    let fit = solvers::fit_penalized(&data, &penalty, args.gamma, &SolverConfig::default(), None)?;
    fit.ensure_converged()?;
    let est = dof::estimate(&fit, &penalty, DesignKind::detect(&data), &data)?;
    let sigma2 = selection::estimate_sigma2(&data)?;
    let crit = selection::criteria(&fit, est.value, sigma2, &data, DfSource::Analytic);
    let (intercept, raw_beta) = data.destandardize(&fit.beta);
    let result = json!({
        "penalty": penalty.name(),
        "gamma": args.gamma,
        "variables": names,
        "beta_standardized": fit.beta.as_slice(),
        "intercept": intercept,
        "beta": raw_beta.as_slice(),
        "active_variables": one_based(&fit.active.a_p),
        "active_groups": penalty.groups().map(|_| one_based(&fit.active.a_g)),
        "kkt_residual": fit.kkt_residual,
        "iterations": fit.iterations,
        "df": {
            "value": est.value,
            "method": format!("{:?}", est.method),
            "active_size": est.base_active,
            "active_groups": est.group_active,
            "correction": est.correction,
        },
        "sigma2": sigma2,
        "rss": crit.rss,
        "aic": crit.aic,
        "bic": crit.bic,
    });
    let mut o = Outputs::new(out)?;
    o.json("fit.json", &result)?;
    let mut config = data_config(&args.data);
    config["gamma"] = json!(args.gamma);
    o.finish("fit", config)
}

fn solver_config(grid: &GridArgs) -> CliResult<SolverConfig> {
    let config = SolverConfig { grid_size: grid.grid_size, grid_decades: grid.grid_decades, ..SolverConfig::default() };
    config.validate()?;
    Ok(config)
}

fn criterion_of(c: CriterionArg) -> Criterion {
    match c {
        CriterionArg::Aic => Criterion::Aic,
        CriterionArg::Bic => Criterion::Bic,
    }
}

fn criterion_name(c: CriterionArg) -> &'static str {
    match c {
        CriterionArg::Aic => "aic",
        CriterionArg::Bic => "bic",
    }
}

struct Curves<'a> {
    gammas: &'a [f64],
    df_analytic: &'a [f64],
    df_active_set: &'a [f64],
    df_active_groups: Option<&'a [f64]>,
    coefficients: &'a [DVector<f64>],
}

fn write_curves(o: &mut Outputs, names: &[String], c: &Curves) -> CliResult<()> {
    let mut header: Vec<String> = ["gamma", "log_gamma", "df_analytic", "df_active_set"].map(String::from).to_vec();
    if c.df_active_groups.is_some() {
        header.push("df_active_groups".into());
    }
    let rows: Vec<Vec<String>> = (0..c.gammas.len())
        .map(|k| {
            let mut r = vec![num(c.gammas[k]), num(c.gammas[k].ln()), num(c.df_analytic[k]), num(c.df_active_set[k])];
            if let Some(g) = c.df_active_groups {
                r.push(num(g[k]));
            }
            r
        })
        .collect();
    o.csv("df_curve.csv", &header, &rows)?;
    let header: Vec<String> = std::iter::once("gamma".to_string()).chain(names.iter().cloned()).collect();
    let rows: Vec<Vec<String>> = (0..c.gammas.len())
        .map(|k| std::iter::once(num(c.gammas[k])).chain(c.coefficients[k].iter().map(|v| num(*v))).collect())
        .collect();
    o.csv("path.csv", &header, &rows)
}

fn cmd_path(args: &PathArgs, out: &Path) -> CliResult<()> {
    let Loaded { data, names, penalty } = load(&args.data)?;
    let config = solver_config(&args.grid)?;
    let sigma2 = selection::estimate_sigma2(&data)?;
    let mut path = solvers::compute_path(&data, &penalty, &config)?;
    if let Some((k, msg)) = path.issues.iter().enumerate().find_map(|(k, m)| m.as_ref().map(|m| (k, m))) {
        eprintln!("warning: γ={} {msg}", path.gammas[k]);
    }
    selection::attach_criteria(&mut path, &data, sigma2);
    let criterion = criterion_of(args.criterion);
    let analytic = selection::select_gamma(&path, criterion, DfSource::Analytic)?;
    let naive = selection::select_gamma(&path, criterion, DfSource::ActiveSetSize)?;
    let cv = if args.cv { Some(selection::loo_cv(&data, &penalty, &path.gammas, &config)?) } else { None };

    let df_analytic: Vec<f64> = path.dofs.iter().map(|d| d.as_ref().map_or(f64::NAN, |d| d.value)).collect();
    let df_active_set: Vec<f64> = path.fits.iter().map(|f| f.active.size() as f64).collect();
    let df_groups: Option<Vec<f64>> = penalty.groups().map(|_| path.fits.iter().map(|f| f.active.a_g.len() as f64).collect());
    let coefficients: Vec<DVector<f64>> = path.fits.iter().map(|f| f.beta.clone()).collect();
    let mut o = Outputs::new(out)?;
    write_curves(
        &mut o,
        &names,
        &Curves { gammas: &path.gammas, df_analytic: &df_analytic, df_active_set: &df_active_set, df_active_groups: df_groups.as_deref(), coefficients: &coefficients },
    )?;
    let name = criterion_name(args.criterion);
    let mut selection_json = json!({
        format!("{name}_analytic"): analytic,
        format!("{name}_naive"): naive,
        "sigma2": sigma2,
        "transitions": path.transitions,
    });
    if let Some(cv) = &cv {
        selection_json["cv"] = json!(cv.gamma);
        selection_json["cv_errors"] = json!(cv.errors);
    }
    o.json("selection.json", &selection_json)?;
    let mut config_json = data_config(&args.data);
    config_json["grid_size"] = json!(config.grid_size);
    config_json["grid_decades"] = json!(config.grid_decades);
    config_json["criterion"] = json!(name);
    config_json["cv"] = json!(args.cv);
    o.finish("path", config_json)
}

fn synthetic_spec(sim: &SimulationArgs, defaults: (usize, usize, usize)) -> CliResult<SyntheticSpec> {
    let (n, p, b) = defaults;
    let mut spec = SyntheticSpec::sized(sim.n.unwrap_or(n), sim.p.unwrap_or(p), sim.replicates.unwrap_or(b), sim.seed);
    spec.snr = sim.snr;
    spec.group_size = sim.group_size;
    spec.snr_definition = match sim.snr_definition {
        SnrArg::Variance => SnrDefinition::VarianceRatio,
        SnrArg::Std => SnrDefinition::StdRatio,
    };
    spec.validate().map_err(|e| CliError::Config(e.to_string()))?;
    if spec.replicates < 2 {
        return Err(CliError::Config("--B must be at least 2".into()));
    }
    Ok(spec)
}

fn spec_json(spec: &SyntheticSpec) -> Value {
    json!({
        "n": spec.n,
        "p": spec.p,
        "beta": spec.beta.as_slice(),
        "snr": spec.snr,
        "snr_definition": match spec.snr_definition {
            SnrDefinition::VarianceRatio => "variance",
            SnrDefinition::StdRatio => "std",
        },
        "replicates": spec.replicates,
        "group_size": spec.group_size,
        "seed": spec.seed,
    })
}

fn cmd_experiment(cmd: &ExperimentCommand, out: &Path) -> CliResult<()> {
    match cmd {
        ExperimentCommand::Unbiasedness { sim, penalty } => {
            let spec = synthetic_spec(sim, (50, 12, 2000))?;
            let methods: Vec<Method> = match penalty {
                Some(PenaltyArg::Lasso) => return Err(CliError::Config("the unbiasedness study covers adaptive, group, and adaptive-group".into())),
                Some(p) => vec![method_of(*p)],
                None => Method::STUDIED.to_vec(),
            };
            let header = ["method", "gamma", "df_analytic_mean", "df_analytic_se", "df_covariance", "df_covariance_se", "difference_se", "replicates", "failures", "max_kkt"].map(String::from);
            let mut rows = Vec::new();
            let mut grids = serde_json::Map::new();
            for m in methods {
                let gammas = experiments::default_unbiasedness_gammas(&spec, m)?;
                grids.insert(m.name().into(), json!(gammas));
                for r in experiments::run_unbiasedness(&spec, &gammas, m)? {
                    rows.push(vec![
                        m.name().to_string(),
                        num(r.gamma),
                        num(r.mean_analytic),
                        num(r.se_analytic),
                        num(r.mc_df),
                        num(r.mc_se),
                        num(r.paired_se),
                        r.replicates.to_string(),
                        r.failures.to_string(),
                        num(r.max_kkt),
                    ]);
                }
            }
            let mut o = Outputs::new(out)?;
            o.csv("unbiasedness.csv", &header, &rows)?;
            o.finish("experiment unbiasedness", json!({ "spec": spec_json(&spec), "gammas": grids }))
        }
        ExperimentCommand::Table1 { sim } => {
            let spec = synthetic_spec(sim, (100, 30, 500))?;
            let hists = experiments::run_table1(&spec, spec.replicates)?;
            let header = ["method", "bucket", "count"].map(String::from);
            let mut rows = Vec::new();
            let mut exact_rows = Vec::new();
            for h in &hists {
                for (label, count) in experiments::BUCKET_LABELS.iter().zip(h.counts) {
                    rows.push(vec![h.method.name().to_string(), label.to_string(), count.to_string()]);
                }
                for (size, count) in h.exact.iter().enumerate() {
                    exact_rows.push(vec![h.method.name().to_string(), size.to_string(), count.to_string()]);
                }
            }
            let mut o = Outputs::new(out)?;
            o.csv("histogram.csv", &header, &rows)?;
            o.csv("selected_sizes.csv", &["method", "size", "count"].map(String::from), &exact_rows)?;
            let config = SolverConfig::default();
            o.finish(
                "experiment table1",
                json!({
                    "spec": spec_json(&spec),
                    "criterion": "bic",
                    "df_source": "analytic",
                    "grid_size": config.grid_size,
                    "grid_decades": config.grid_decades,
                    "failures": hists.iter().map(|h| (h.method.name().to_string(), json!(h.failures))).collect::<serde_json::Map<_, _>>(),
                }),
            )
        }
        ExperimentCommand::Dataset { data, response, penalty, grouped, levels, no_cv, seed, grid } => {
            let (raw, names) = match data {
                Some(path) => experiments::read_csv(path, response)?,
                None => {
                    let d = experiments::gen_grouped_dataset(*seed)?;
                    let names = (1..=d.p()).map(|j| format!("x{j}")).collect();
                    (d, names)
                }
            };
            let options = PipelineOptions { levels: *levels, cross_validate: !no_cv, solver: solver_config(grid)? };
            let report = experiments::run_pipeline(&raw, method_of(*penalty), *grouped, &options)?;
            let names: Vec<String> = if *grouped {
                names.iter().flat_map(|n| (1..*levels).map(move |k| format!("{n}_level{}", k + 1))).collect()
            } else {
                names
            };
            let mut o = Outputs::new(out)?;
            write_pipeline(&mut o, &names, &report)?;
            o.finish(
                "experiment dataset",
                json!({
                    "data": data.as_ref().map(|p| p.display().to_string()),
                    "response": response,
                    "synthetic_seed": if data.is_none() { Some(*seed) } else { None },
                    "penalty": report.method.name(),
                    "grouped": grouped,
                    "levels": levels,
                    "cv": !no_cv,
                    "grid_size": options.solver.grid_size,
                    "grid_decades": options.solver.grid_decades,
                }),
            )
        }
    }
}

fn write_pipeline(o: &mut Outputs, names: &[String], r: &PipelineReport) -> CliResult<()> {
    write_curves(
        o,
        names,
        &Curves {
            gammas: &r.gammas,
            df_analytic: &r.df_analytic,
            df_active_set: &r.df_active_set,
            df_active_groups: r.df_active_groups.as_deref(),
            coefficients: &r.coefficients,
        },
    )?;
    let mut sel = json!({
        "bic_analytic": r.gamma_bic_analytic,
        "bic_naive": r.gamma_bic_naive,
        "cv": opt_num(r.gamma_cv),
        "sigma2": r.sigma2,
    });
    if let Some(closer) = r.analytic_closer_to_cv() {
        sel["analytic_closer_to_cv"] = json!(closer);
    }
    o.json("selection.json", &sel)
}
