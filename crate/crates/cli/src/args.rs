use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "dofpath", version, about = "Penalized regression paths with degrees-of-freedom estimates")]
pub struct Cli {
    /// Worker threads (default: all cores)
    #[arg(long, global = true, env = "DOFPATH_JOBS")]
    pub jobs: Option<usize>,

    /// Output directory
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit at a single γ
    Fit(FitArgs),
    /// Fit a γ grid and select γ
    Path(PathArgs),
    /// Simulation and dataset studies
    #[command(subcommand)]
    Experiment(ExperimentCommand),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PenaltyArg {
    Lasso,
    Adaptive,
    Group,
    AdaptiveGroup,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CriterionArg {
    Aic,
    Bic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SnrArg {
    Variance,
    Std,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// CSV file with a header row
    #[arg(long)]
    pub data: PathBuf,

    /// Name of the response column
    #[arg(long)]
    pub response: String,

    #[arg(long, value_enum)]
    pub penalty: PenaltyArg,

    /// File of `variable_index,group_index` lines (1-based)
    #[arg(long)]
    pub groups: Option<PathBuf>,

    /// fixed | inv-power:α | exp:α | group-inv-norm
    #[arg(long)]
    pub weights: Option<String>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,

    #[arg(long)]
    pub gamma: f64,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long, default_value_t = 100)]
    pub grid_size: usize,

    #[arg(long, default_value_t = 4.0)]
    pub grid_decades: f64,
}

#[derive(Debug, Args)]
pub struct PathArgs {
    #[command(flatten)]
    pub data: DataArgs,

    #[command(flatten)]
    pub grid: GridArgs,

    #[arg(long, value_enum, default_value_t = CriterionArg::Bic)]
    pub criterion: CriterionArg,

    /// Also select γ by leave-one-out cross-validation
    #[arg(long)]
    pub cv: bool,
}

#[derive(Debug, Args)]
pub struct SimulationArgs {
    /// Replicates
    #[arg(long = "B")]
    pub replicates: Option<usize>,

    #[arg(long)]
    pub n: Option<usize>,

    #[arg(long)]
    pub p: Option<usize>,

    #[arg(long, default_value_t = dofpath::experiments::DEFAULT_SEED)]
    pub seed: u64,

    #[arg(long, default_value_t = 4.0)]
    pub snr: f64,

    #[arg(long, value_enum, default_value_t = SnrArg::Variance)]
    pub snr_definition: SnrArg,

    #[arg(long, default_value_t = 3)]
    pub group_size: usize,
}

#[derive(Debug, Subcommand)]
pub enum ExperimentCommand {
    /// Mean analytic df against the covariance df over replicates
    Unbiasedness {
        #[command(flatten)]
        sim: SimulationArgs,

        /// Restrict to one method
        #[arg(long, value_enum)]
        penalty: Option<PenaltyArg>,
    },
    /// Histogram of BIC-selected model sizes
    Table1 {
        #[command(flatten)]
        sim: SimulationArgs,
    },
    /// Encode, fit, and select on a dataset (synthetic when --data is absent)
    Dataset {
        #[arg(long)]
        data: Option<PathBuf>,

        #[arg(long, default_value = "y")]
        response: String,

        #[arg(long, value_enum, default_value_t = PenaltyArg::Adaptive)]
        penalty: PenaltyArg,

        /// Discretize covariates and group their dummies
        #[arg(long)]
        grouped: bool,

        #[arg(long, default_value_t = 4)]
        levels: usize,

        #[arg(long)]
        no_cv: bool,

        #[arg(long, default_value_t = dofpath::experiments::DEFAULT_SEED)]
        seed: u64,

        #[command(flatten)]
        grid: GridArgs,
    },
}
