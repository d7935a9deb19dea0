use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use tprm_core::chain::{DirectorySink, MANIFEST};
use tprm_core::nalgebra::DMatrix;
use tprm_core::pipeline::{cross_validate_folds, fit_with_sink};
use tprm_core::sim::{
    decomp_experiment, phantom_experiment, replication_seed, sim3d_experiment, DecompRow, DecompSettings,
    MethodAccuracy, PhantomSettings, Sim3dSettings,
};
use tprm_core::{
    als_decompose, gibbs_decompose, predict_new, projection, rmse, CPHyper, ChainStore, DenseTensor, PipelineConfig,
};

use crate::cli::{DecomposeArgs, Dims, Experiment, FitArgs, Method, PredictArgs, SelectArgs, SimulateArgs};
use crate::error::{CliError, Result};
use crate::io::{
    create_dir, dims_label, load_tensor, read_covariates, read_response, save_tensor, write_rows, write_table,
};
use crate::manifest::{RunManifest, RUN_MANIFEST};

pub const CHAIN_DIR: &str = "chain";
pub const SUMMARY: &str = "summary.csv";

pub fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    let Some(path) = path else {
        return Ok(PipelineConfig::default());
    };
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    toml::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn check_subjects(x: &DenseTensor, n: usize, what: &str) -> Result<()> {
    if x.order() < 2 || x.subject_count() != n {
        return Err(CliError::Input(format!(
            "dimension mismatch: {what} has {n} rows but the tensor's last mode has {} subjects (dims {:?})",
            x.dims().last().copied().unwrap_or(0),
            x.dims()
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct FactorRow {
    block: usize,
    factor: String,
    index: usize,
    component: usize,
    value: f64,
}

#[derive(Serialize)]
struct RmseRow {
    method: &'static str,
    rank: usize,
    blocks: String,
    block_count: usize,
    rmse: f64,
    data_rms: f64,
    relative: f64,
}

pub fn decompose(a: &DecomposeArgs) -> Result<()> {
    let x = load_tensor(&a.input)?;
    let blocks = a.blocks.as_ref().map_or_else(|| x.dims().to_vec(), |d| d.0.clone());
    let run = RunManifest::begin("decompose", &DecomposeConfig::from(a), a.seed, &[("input", &a.input)])?;
    let d = match a.method {
        Method::Gibbs => {
            let burn_in = a.burn_in.unwrap_or(a.iters / 2);
            gibbs_decompose(&x, &blocks, &CPHyper::with_rank(a.rank), a.iters, burn_in, a.seed)?
        }
        Method::Als => als_decompose(&x, &blocks, a.rank, a.iters, a.tol, a.seed)?,
    };
    create_dir(&a.out)?;
    save_tensor(&a.out.join("reconstruction.tprm"), &d.reconstruction)?;

    let mut rows = Vec::new();
    for (s, f) in d.factors.iter().enumerate() {
        for (r, w) in f.weights.iter().enumerate() {
            rows.push(FactorRow { block: s, factor: "lambda".into(), index: 0, component: r, value: *w });
        }
        for (m, a) in f.factors.iter().enumerate() {
            for i in 0..a.nrows() {
                for r in 0..a.ncols() {
                    rows.push(FactorRow { block: s, factor: format!("mode{m}"), index: i, component: r, value: a[(i, r)] });
                }
            }
        }
    }
    write_rows(&a.out.join("factors.csv"), &rows)?;

    let err = rmse(&x, &d.reconstruction)?;
    let data_rms = x.frobenius_norm() / (x.len() as f64).sqrt();
    let report = RmseRow {
        method: match a.method {
            Method::Gibbs => "gibbs",
            Method::Als => "als",
        },
        rank: a.rank,
        blocks: dims_label(&blocks),
        block_count: d.grid.block_count(),
        rmse: err,
        data_rms,
        relative: if data_rms > 0.0 { err / data_rms } else { 0.0 },
    };
    write_rows(&a.out.join("rmse.csv"), &[report])?;
    println!("rmse {err:.6e} (relative {:.6e})", if data_rms > 0.0 { err / data_rms } else { 0.0 });
    run.finish(&a.out, vec!["reconstruction.tprm".into(), "factors.csv".into(), "rmse.csv".into()])?;
    Ok(())
}

#[derive(Serialize)]
struct DecomposeConfig {
    rank: usize,
    blocks: Option<Vec<usize>>,
    method: String,
    iters: usize,
    burn_in: Option<usize>,
    tol: f64,
}

impl From<&DecomposeArgs> for DecomposeConfig {
    fn from(a: &DecomposeArgs) -> Self {
        Self {
            rank: a.rank,
            blocks: a.blocks.as_ref().map(|d| d.0.clone()),
            method: format!("{:?}", a.method).to_lowercase(),
            iters: a.iters,
            burn_in: a.burn_in,
            tol: a.tol,
        }
    }
}

#[derive(Serialize)]
struct SummaryRow {
    parameter: &'static str,
    index: usize,
    mean: f64,
    lower: f64,
    upper: f64,
    inclusion: Option<f64>,
}

struct FitInputs {
    cfg: PipelineConfig,
    tensor: PathBuf,
    response: PathBuf,
    covariates: Option<PathBuf>,
}

fn fit_inputs(a: &FitArgs) -> Result<FitInputs> {
    if let Some(path) = &a.manifest {
        let m = RunManifest::load(path)?;
        if m.command != "fit" {
            return Err(CliError::Input(format!("{} records a `{}` run, not `fit`", path.display(), m.command)));
        }
        m.verify_inputs()?;
        let cfg: PipelineConfig = serde_json::from_value(m.config.clone())
            .map_err(|e| CliError::Input(format!("{}: config: {e}", path.display())))?;
        let need = |role: &str| {
            m.input(role)
                .map(Path::to_path_buf)
                .ok_or_else(|| CliError::Input(format!("{} has no {role} input", path.display())))
        };
        return Ok(FitInputs {
            cfg,
            tensor: need("tensor")?,
            response: need("response")?,
            covariates: m.input("covariates").map(Path::to_path_buf),
        });
    }
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let missing = |what: &str| CliError::Usage(format!("--{what} is required without --manifest"));
    Ok(FitInputs {
        cfg,
        tensor: a.tensor.clone().ok_or_else(|| missing("tensor"))?,
        response: a.response.clone().ok_or_else(|| missing("response"))?,
        covariates: a.covariates.clone(),
    })
}

pub fn fit(a: &FitArgs) -> Result<()> {
    let inp = fit_inputs(a)?;
    inp.cfg.validate()?;
    let mut roles: Vec<(&str, &Path)> = vec![("tensor", &inp.tensor), ("response", &inp.response)];
    if let Some(z) = &inp.covariates {
        roles.push(("covariates", z));
    }
    let run = RunManifest::begin("fit", &inp.cfg, inp.cfg.seed, &roles)?;

    let x = load_tensor(&inp.tensor)?;
    let y = read_response(&inp.response)?;
    check_subjects(&x, y.len(), "the response")?;
    let z = inp.covariates.as_deref().map(read_covariates).transpose()?;
    if let Some(z) = &z {
        check_subjects(&x, z.nrows(), "the covariate file")?;
    }

    create_dir(&a.out)?;
    let chain_dir = a.out.join(CHAIN_DIR);
    if chain_dir.exists() {
        fs::remove_dir_all(&chain_dir).map_err(CliError::io(&chain_dir))?;
    }
    let mut sink = DirectorySink::create(&chain_dir)?;
    let meta = fit_with_sink(&x, &y, z.as_ref(), &inp.cfg, &mut sink)?;
    sink.finish(meta)?;
    let chain = ChainStore::load(&chain_dir)?;

    let mut rows = Vec::new();
    let incl = chain.inclusion_probabilities()?;
    for (k, s) in chain.summarize("b")?.into_iter().enumerate() {
        rows.push(SummaryRow { parameter: "b", index: k, mean: s.mean, lower: s.lower, upper: s.upper, inclusion: Some(incl[k]) });
    }
    if chain.has("gamma") {
        for (k, s) in chain.summarize("gamma")?.into_iter().enumerate() {
            rows.push(SummaryRow { parameter: "gamma", index: k, mean: s.mean, lower: s.lower, upper: s.upper, inclusion: None });
        }
    }
    write_rows(&a.out.join(SUMMARY), &rows)?;

    let p = projection(&chain)?;
    let maps = [
        ("projection_mean.tprm", &p.mean),
        ("projection_lower.tprm", &p.lower),
        ("projection_upper.tprm", &p.upper),
        ("significance_mask.tprm", &p.significant),
    ];
    for (name, t) in maps {
        save_tensor(&a.out.join(name), t)?;
    }
    let mut outputs: Vec<String> = chain.names().map(|n| format!("{CHAIN_DIR}/{n}.f64")).collect();
    outputs.push(format!("{CHAIN_DIR}/{MANIFEST}"));
    outputs.push(SUMMARY.into());
    outputs.extend(maps.iter().map(|(n, _)| n.to_string()));
    run.finish(&a.out, outputs)?;
    println!(
        "{} draws, {} of {} blocks kept, {} coefficients",
        chain.draws(),
        chain.meta.survivors.len(),
        chain.meta.grid.block_count(),
        rows.len()
    );
    Ok(())
}

#[derive(Serialize)]
struct PredRow {
    subject: usize,
    probability: f64,
    label: u8,
}

pub fn predict(a: &PredictArgs) -> Result<()> {
    let dir = if a.model.join(MANIFEST).is_file() { a.model.clone() } else { a.model.join(CHAIN_DIR) };
    if !dir.join(MANIFEST).is_file() {
        return Err(CliError::Input(format!("{} holds no chain", a.model.display())));
    }
    let chain = ChainStore::load(&dir)?;
    let x = load_tensor(&a.tensor)?;
    if x.is_empty() {
        return Err(CliError::Input(format!("{} holds no subjects", a.tensor.display())));
    }
    let z = a.covariates.as_deref().map(read_covariates).transpose()?;
    if let Some(z) = &z {
        check_subjects(&x, z.nrows(), "the covariate file")?;
    }
    let p = predict_new(&chain, &x, z.as_ref())?;
    let rows: Vec<PredRow> = p
        .iter()
        .enumerate()
        .map(|(i, &p)| PredRow { subject: i, probability: p, label: u8::from(p > 0.5) })
        .collect();
    write_rows(&a.out, &rows)
}

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (m, var.sqrt())
}

fn print_table(header: &[String], rows: &[Vec<String>]) {
    println!("{}", header.join("\t"));
    for r in rows {
        println!("{}", r.join("\t"));
    }
}

#[derive(Serialize)]
struct SimulateConfig {
    experiment: String,
    replications: usize,
    n: Option<usize>,
    iters: Option<usize>,
    burn_in: Option<usize>,
}

pub fn simulate(a: &SimulateArgs) -> Result<()> {
    if a.replications == 0 {
        return Err(CliError::Usage("--replications must be at least 1".into()));
    }
    let cfg = SimulateConfig {
        experiment: format!("{:?}", a.experiment).to_lowercase(),
        replications: a.replications,
        n: a.n,
        iters: a.iters,
        burn_in: a.burn_in,
    };
    let run = RunManifest::begin("simulate", &cfg, a.seed, &[])?;
    create_dir(&a.out)?;
    let outputs = match a.experiment {
        Experiment::Decomp => simulate_decomp(a)?,
        Experiment::Phantom2d => simulate_phantom(a)?,
        Experiment::Sim3d => simulate_sim3d(a)?,
    };
    run.finish(&a.out, outputs)?;
    Ok(())
}

fn iterations(a: &SimulateArgs, iters: usize, burn_in: usize) -> (usize, usize) {
    match (a.iters, a.burn_in) {
        (Some(i), Some(b)) => (i, b),
        (Some(i), None) => (i, i / 2),
        (None, Some(b)) => (iters, b),
        (None, None) => (iters, burn_in),
    }
}

fn simulate_decomp(a: &SimulateArgs) -> Result<Vec<String>> {
    let mut s = DecompSettings::default();
    (s.iters, s.burn_in) = iterations(a, s.iters, s.burn_in);
    let rows: Vec<DecompRow> = decomp_experiment(a.replications, a.seed, &s)?;
    write_rows(&a.out.join("metrics.csv"), &rows)?;

    let mut header = vec!["data".to_string(), "method".to_string()];
    header.extend(s.ranks.iter().map(|r| format!("rank_{r}")));
    let mut table = Vec::new();
    for data in ["multiscale", "localized"] {
        for method in ["als", "bayes_s1", "bayes_s8"] {
            let mut row = vec![data.to_string(), method.to_string()];
            for &r in &s.ranks {
                let v: Vec<f64> = rows
                    .iter()
                    .filter(|x| x.data == data && x.method == method && x.rank == r)
                    .map(|x| x.rmse)
                    .collect();
                row.push(fmt(mean_sd(&v).0));
            }
            table.push(row);
        }
    }
    write_table(&a.out.join("table.csv"), &header, &table)?;
    print_table(&header, &table);
    Ok(vec!["metrics.csv".into(), "table.csv".into()])
}

#[derive(Serialize)]
struct PhantomRow {
    run: usize,
    method: String,
    accuracy: f64,
    precision: f64,
    recall: f64,
}

fn simulate_phantom(a: &SimulateArgs) -> Result<Vec<String>> {
    let mut s = PhantomSettings::default();
    if let Some(n) = a.n {
        s.n = n;
    }
    (s.iters, s.burn_in) = iterations(a, s.iters, s.burn_in);
    let mut rows = Vec::new();
    let mut outputs = vec!["metrics.csv".to_string(), "table.csv".to_string()];
    for run in 0..a.replications {
        let (data, models) = phantom_experiment(replication_seed(a.seed, run), &s)?;
        let truth = format!("truth_run{run}.tprm");
        save_tensor(&a.out.join(&truth), &data.truth)?;
        outputs.push(truth);
        for m in models {
            for (kind, t) in [("projection", &m.mean), ("mask", &m.significant)] {
                let name = format!("{kind}_{}_run{run}.tprm", m.method);
                save_tensor(&a.out.join(&name), t)?;
                outputs.push(name);
            }
            rows.push(PhantomRow { run, method: m.method, accuracy: m.accuracy, precision: m.precision, recall: m.recall });
        }
    }
    write_rows(&a.out.join("metrics.csv"), &rows)?;
    let header: Vec<String> = ["method", "accuracy", "precision", "recall"].map(String::from).to_vec();
    let table: Vec<Vec<String>> = ["fpca", "tprm_s1", "tprm_s16"]
        .iter()
        .map(|method| {
            let pick = |f: fn(&PhantomRow) -> f64| {
                let v: Vec<f64> = rows.iter().filter(|r| r.method == *method).map(f).collect();
                fmt(mean_sd(&v).0)
            };
            vec![method.to_string(), pick(|r| r.accuracy), pick(|r| r.precision), pick(|r| r.recall)]
        })
        .collect();
    write_table(&a.out.join("table.csv"), &header, &table)?;
    print_table(&header, &table);
    Ok(outputs)
}

fn simulate_sim3d(a: &SimulateArgs) -> Result<Vec<String>> {
    let mut s = Sim3dSettings::default();
    if let Some(n) = a.n {
        s.n = n;
    }
    (s.iters, s.burn_in) = iterations(a, s.iters, s.burn_in);
    let rows: Vec<MethodAccuracy> = sim3d_experiment(a.replications, a.seed, &s)?;
    write_rows(&a.out.join("metrics.csv"), &rows)?;
    let acc = |method: &str| -> Vec<f64> { rows.iter().filter(|r| r.method == method).map(|r| r.accuracy).collect() };
    let pmtd = acc("pmtd");
    let header: Vec<String> = ["method", "replications", "mean", "sd", "pmtd_better"].map(String::from).to_vec();
    let table: Vec<Vec<String>> = ["fpca", "tals", "pmtd"]
        .iter()
        .map(|method| {
            let v = acc(method);
            let (m, sd) = mean_sd(&v);
            let better = if *method == "pmtd" {
                String::new()
            } else {
                pmtd.iter().zip(&v).filter(|(p, o)| p > o).count().to_string()
            };
            vec![method.to_string(), v.len().to_string(), fmt(m), fmt(sd), better]
        })
        .collect();
    write_table(&a.out.join("table.csv"), &header, &table)?;
    print_table(&header, &table);
    Ok(vec!["metrics.csv".into(), "table.csv".into()])
}

pub fn select(a: &SelectArgs) -> Result<()> {
    let base = load_config(a.config.as_deref())?;
    let x = load_tensor(&a.tensor)?;
    let y = read_response(&a.response)?;
    check_subjects(&x, y.len(), "the response")?;
    let z: Option<DMatrix<f64>> = a.covariates.as_deref().map(read_covariates).transpose()?;
    if let Some(z) = &z {
        check_subjects(&x, z.nrows(), "the covariate file")?;
    }
    let header: Vec<String> = ["blocks", "rank", "folds", "accuracy", "sd"].map(String::from).to_vec();
    let mut table = Vec::new();
    let mut best: Option<(f64, String, usize)> = None;
    for Dims(blocks) in &a.blocks {
        for &rank in &a.ranks {
            let mut cfg = base.clone();
            cfg.block_dims = blocks.clone();
            cfg.cp.rank = rank;
            let acc = cross_validate_folds(&x, &y, z.as_ref(), &cfg, a.folds)?;
            let (m, sd) = mean_sd(&acc);
            if best.as_ref().is_none_or(|b| m > b.0) {
                best = Some((m, dims_label(blocks), rank));
            }
            table.push(vec![dims_label(blocks), rank.to_string(), a.folds.to_string(), fmt(m), fmt(sd)]);
        }
    }
    write_table(&a.out, &header, &table)?;
    print_table(&header, &table);
    if let Some((m, blocks, rank)) = best {
        println!("best: blocks {blocks} rank {rank} accuracy {m:.4}");
    }
    Ok(())
}

/// Files listed in a run manifest that are missing from `dir`.
pub fn missing_outputs(dir: &Path) -> Result<Vec<String>> {
    let m = RunManifest::load(&dir.join(RUN_MANIFEST))?;
    Ok(m.outputs.into_iter().filter(|o| !dir.join(o).exists()).collect())
}
