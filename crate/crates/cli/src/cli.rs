use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "tprm", version, about = "Tensor partition regression models")]
pub struct Cli {
    /// Worker threads for partitions, folds and replications.
    #[arg(long, env = "TPRM_THREADS", global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Decompose one tensor block by block.
    Decompose(DecomposeArgs),
    /// Fit the full model and write the chain, summaries and maps.
    Fit(FitArgs),
    /// Run one of the synthetic studies.
    Simulate(SimulateArgs),
    /// Posterior predictive probabilities for new subjects.
    Predict(PredictArgs),
    /// Cross-validated grid search over block sizes and ranks.
    Select(SelectArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Gibbs,
    Als,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Experiment {
    Decomp,
    Phantom2d,
    Sim3d,
}

/// Block lengths such as `4,4,2` or `8x8`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dims(pub Vec<usize>);

pub fn parse_dims(s: &str) -> Result<Dims, String> {
    let dims = s
        .split([',', 'x'])
        .map(|t| t.trim().parse::<usize>().map_err(|_| format!("`{t}` is not a block length")))
        .collect::<Result<Vec<_>, _>>()?;
    if dims.contains(&0) {
        return Err("block lengths must be positive".into());
    }
    Ok(Dims(dims))
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub rank: usize,
    /// Block lengths, e.g. `4,4,4`; the whole tensor when omitted.
    #[arg(long, value_parser = parse_dims)]
    pub blocks: Option<Dims>,
    #[arg(long, value_enum, default_value_t = Method::Gibbs)]
    pub method: Method,
    /// Sweeps (gibbs) or maximum iterations (als).
    #[arg(long, default_value_t = 1000)]
    pub iters: usize,
    /// Discarded sweeps; half of `iters` by default.
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long, required_unless_present = "manifest")]
    pub tensor: Option<PathBuf>,
    /// CSV with a header row; the first column holds the 0/1 responses.
    #[arg(long, required_unless_present = "manifest")]
    pub response: Option<PathBuf>,
    #[arg(long)]
    pub covariates: Option<PathBuf>,
    /// TOML configuration; every key is optional.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Repeat the run recorded in a previous run manifest.
    #[arg(long, conflicts_with_all = ["tensor", "response", "covariates", "config", "seed"])]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub experiment: Experiment,
    #[arg(long, default_value_t = 1)]
    pub replications: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Subjects per dataset (phantom2d, sim3d).
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Output directory of `tprm fit`, or a chain directory.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub tensor: PathBuf,
    #[arg(long)]
    pub covariates: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[arg(long)]
    pub tensor: PathBuf,
    #[arg(long)]
    pub response: PathBuf,
    #[arg(long)]
    pub covariates: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Candidate block lengths; repeat the flag for each candidate.
    #[arg(long, value_parser = parse_dims, required = true)]
    pub blocks: Vec<Dims>,
    /// Candidate ranks, e.g. `1,2,4`.
    #[arg(long, value_delimiter = ',', required = true)]
    pub ranks: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn dims_parse() {
        assert_eq!(parse_dims("4,4,2").unwrap().0, vec![4, 4, 2]);
        assert_eq!(parse_dims("8x8").unwrap().0, vec![8, 8]);
        assert!(parse_dims("4,0").is_err());
        assert!(parse_dims("a").is_err());
    }

    #[test]
    fn manifest_excludes_inputs() {
        assert!(Cli::try_parse_from(["tprm", "fit", "--manifest", "m.json", "--out", "o"]).is_ok());
        assert!(Cli::try_parse_from(["tprm", "fit", "--manifest", "m.json", "--tensor", "x", "--out", "o"]).is_err());
        assert!(Cli::try_parse_from(["tprm", "fit", "--tensor", "x", "--out", "o"]).is_err());
    }
}
