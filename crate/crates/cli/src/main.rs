//! Experiment driver: loads a TOML config, runs one of the verification
//! subcommands, and writes CSV artifacts.
//!
//! Exit codes: 0 when every check passes, 1 on a statistical failure, 2 on a
//! configuration or model error. Reruns with the same config and seed produce
//! byte-identical CSV files regardless of thread count.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use spinesim_core::config::{ConfigFile, OdeLimitSection};
use spinesim_core::eigen::{
    build_generator, perron_frobenius, state_space_of, stationary_law, DEFAULT_STATE_LIMIT,
};
use spinesim_core::models::{sir_large_n, GrowthFragmentation, LargeNModel, LogisticBD};
use spinesim_core::rng::{replica_rng, tag};
use spinesim_core::simulate::{composition_chain, simulate_original, DEFAULT_MAX_EVENTS};
use spinesim_core::stats::{
    many_to_one_check, original_side, spine_side_distorted, PathFunctional,
};
use spinesim_core::{
    Functional, ModelSpec, PairedCheck, PopVector, SamplingLaw, SimConfig, SimStatus,
};

/// Replica floor for the statistical comparison suites; below this the error
/// bars are too wide for the z-score bands to mean anything.
const MIN_COMPARE_REPLICAS: u64 = 100;

/// Scaled-simulation paths per population size in `odelimit`.
const LIMIT_PATHS: usize = 5;

#[derive(Parser)]
#[command(
    name = "spinesim",
    version,
    about = "Simulation and verification engine for branching populations and their tagged-lineage constructions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run original-process replicas and write their final compositions.
    Simulate(Common),
    /// Check the direct and tagged-lineage estimators against each other.
    Compare(Common),
    /// Solve the lineage eigenproblem and write the dominant triplet.
    Eigen(Common),
    /// Sweep mass growth rates and classify each against the threshold.
    Phase(Common),
    /// Compare scaled simulations against the density flow.
    Odelimit(Common),
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Simulate(c)
            | Command::Compare(c)
            | Command::Eigen(c)
            | Command::Phase(c)
            | Command::Odelimit(c) => c,
        }
    }
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Override the config seed.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Override the config replica count.
    #[arg(long, value_name = "N")]
    replicas: Option<u64>,
    /// Override the config horizon.
    #[arg(long, value_name = "T")]
    horizon: Option<f64>,
    /// Override the per-replica event budget.
    #[arg(long, value_name = "M")]
    max_events: Option<u64>,
    /// Worker threads (0 = library default).
    #[arg(long, value_name = "K")]
    threads: Option<usize>,
    /// Output directory for CSV files.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

/// Run parameters after merging flags over the config file.
struct RunParams {
    horizon: f64,
    replicas: u64,
    seed: u64,
    max_events: u64,
    out: PathBuf,
}

impl RunParams {
    fn resolve(common: &Common, cfg: &ConfigFile) -> Result<RunParams> {
        let horizon = common.horizon.unwrap_or(cfg.run.t);
        if !(horizon > 0.0) {
            bail!("horizon must be positive, got {horizon}");
        }
        let replicas = common.replicas.unwrap_or(cfg.run.replicas);
        if replicas == 0 {
            bail!("replica count must be positive");
        }
        let out = common
            .out
            .clone()
            .or_else(|| {
                cfg.output
                    .as_ref()
                    .and_then(|o| o.dir.as_ref())
                    .map(PathBuf::from)
            })
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(RunParams {
            horizon,
            replicas,
            seed: common.seed.unwrap_or(cfg.run.seed),
            max_events: common
                .max_events
                .or(cfg.run.max_events)
                .unwrap_or(DEFAULT_MAX_EVENTS),
            out,
        })
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: &Cli) -> Result<bool> {
    let common = cli.command.common();
    let cfg = ConfigFile::from_path(&common.config)?;
    let params = RunParams::resolve(common, &cfg)?;
    let threads = common.threads.or(cfg.run.threads).unwrap_or(0);
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("thread pool")?;
    }
    fs::create_dir_all(&params.out)
        .with_context(|| format!("creating {}", params.out.display()))?;
    match &cli.command {
        Command::Simulate(_) => cmd_simulate(&cfg, &params),
        Command::Compare(_) => cmd_compare(&cfg, &params),
        Command::Eigen(_) => cmd_eigen(&cfg, &params),
        Command::Phase(_) => cmd_phase(&cfg, &params),
        Command::Odelimit(_) => cmd_odelimit(&cfg, &params),
    }
}

fn write_csv(dir: &Path, name: &str, header: &str, rows: &[String]) -> Result<PathBuf> {
    let path = dir.join(name);
    let mut f = fs::File::create(&path).with_context(|| format!("writing {}", path.display()))?;
    writeln!(f, "{header}")?;
    for row in rows {
        writeln!(f, "{row}")?;
    }
    Ok(path)
}

fn status_word(s: &SimStatus) -> &'static str {
    match s {
        SimStatus::Completed => "completed",
        SimStatus::Extinct(_) => "extinct",
        SimStatus::Censored(_) => "censored",
    }
}

fn cmd_simulate(cfg: &ConfigFile, p: &RunParams) -> Result<bool> {
    let model = cfg.build_model()?;
    let outcomes: Vec<(SimStatus, PopVector)> = (0..p.replicas)
        .into_par_iter()
        .map(|i| {
            let sim = SimConfig::new(p.horizon)
                .with_seed(p.seed)
                .with_replica(i)
                .with_max_events(p.max_events)
                .without_tree();
            let mut rng = sim.rng_for(tag::ORIGINAL);
            let out = simulate_original(&model, &sim, &mut rng);
            (out.status, out.final_composition)
        })
        .collect();

    let header = format!("replica,status,{}", model.type_names().join(","));
    let rows: Vec<String> = outcomes
        .iter()
        .enumerate()
        .map(|(i, (status, z))| {
            let counts: Vec<String> = z.as_slice().iter().map(|c| c.to_string()).collect();
            format!("{i},{},{}", status_word(status), counts.join(","))
        })
        .collect();
    let path = write_csv(&p.out, "simulate.csv", &header, &rows)?;

    // genealogy dumps replay the same streams, so they match the marginals
    let dumps = cfg
        .output
        .as_ref()
        .and_then(|o| o.trees)
        .unwrap_or(0)
        .min(p.replicas as u32);
    for i in 0..u64::from(dumps) {
        let sim = SimConfig::new(p.horizon)
            .with_seed(p.seed)
            .with_replica(i)
            .with_max_events(p.max_events);
        let mut rng = sim.rng_for(tag::ORIGINAL);
        let out = simulate_original(&model, &sim, &mut rng);
        let tree = out.tree.expect("tree recording requested");
        let tree_path = p.out.join(format!("trees-{i}.csv"));
        tree.write_nodes(fs::File::create(&tree_path)?)?;
        let events_path = p.out.join(format!("events-{i}.csv"));
        tree.write_events(fs::File::create(&events_path)?)?;
    }

    let extinct = outcomes
        .iter()
        .filter(|(s, _)| matches!(s, SimStatus::Extinct(_)))
        .count();
    let censored = outcomes.iter().filter(|(s, _)| s.is_censored()).count();
    println!(
        "simulate: {} replicas to t = {} ({} extinct, {} censored) -> {}",
        p.replicas,
        p.horizon,
        extinct,
        censored,
        path.display()
    );
    Ok(true)
}

/// Parse a composition literal like `3` or `2|1`, one count per type.
fn parse_composition(model: &ModelSpec, text: &str) -> Result<PopVector> {
    let counts: Vec<u32> = text
        .split('|')
        .map(|p| p.trim().parse::<u32>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("composition literal \"{text}\""))?;
    if counts.len() != model.num_types() {
        bail!(
            "composition \"{text}\" has {} entries, model has {} types",
            counts.len(),
            model.num_types()
        );
    }
    Ok(PopVector::new(counts))
}

/// Resolve a functional name: `population-size`, `branch-count`, or
/// `occupation:TYPE:COMPOSITION`.
fn parse_functional(model: &ModelSpec, name: &str) -> Result<(String, Functional)> {
    if name == "population-size" {
        return Ok((name.to_string(), Functional::PopulationSize));
    }
    if name == "branch-count" {
        return Ok((name.to_string(), Functional::LineageBranchCount));
    }
    if let Some(rest) = name.strip_prefix("occupation:") {
        let (ty_name, comp_text) = rest
            .split_once(':')
            .ok_or_else(|| anyhow::anyhow!("expected occupation:TYPE:COMPOSITION, got \"{name}\""))?;
        let ty = model
            .type_by_name(ty_name)
            .ok_or_else(|| anyhow::anyhow!("unknown type name \"{ty_name}\""))?;
        let comp = parse_composition(model, comp_text)?;
        return Ok((name.to_string(), Functional::LineageOccupation { ty, comp }));
    }
    bail!("unknown functional \"{name}\" (population-size, branch-count, occupation:TYPE:COMP)");
}

fn cmd_compare(cfg: &ConfigFile, p: &RunParams) -> Result<bool> {
    let model = cfg.build_model()?;
    let psi = cfg.build_psi(&model)?;
    if p.replicas < MIN_COMPARE_REPLICAS {
        bail!(
            "compare needs at least {MIN_COMPARE_REPLICAS} replicas per side, got {}",
            p.replicas
        );
    }
    let model_name = cfg
        .model
        .name
        .clone()
        .unwrap_or_else(|| "custom".to_string());
    let sigmas = cfg
        .compare
        .as_ref()
        .and_then(|c| c.sigmas)
        .unwrap_or(3.0);
    let distortion = cfg
        .compare
        .as_ref()
        .and_then(|c| c.distortion)
        .unwrap_or(1.0);

    let default_names = || {
        vec![
            "population-size".to_string(),
            "branch-count".to_string(),
            format!(
                "occupation:{}:{}",
                model.type_name(spinesim_core::TypeId(0)),
                model.initial_composition()
            ),
        ]
    };
    let names = cfg
        .compare
        .as_ref()
        .and_then(|c| c.functionals.clone())
        .unwrap_or_else(default_names);
    let mut functionals = Vec::with_capacity(names.len());
    for n in &names {
        functionals.push(parse_functional(&model, n)?);
    }

    let law = SamplingLaw::Uniform;
    let fns: Vec<Functional> = functionals.iter().map(|(_, f)| f.clone()).collect();
    let lhs = original_side(&model, &fns, &law, p.horizon, p.replicas, p.seed)?;
    let rhs = spine_side_distorted(
        &model,
        &psi,
        &fns,
        &law,
        p.horizon,
        p.replicas,
        p.seed,
        distortion,
    )?;

    let mut rows = Vec::new();
    let mut all_pass = true;
    for ((name, _), (l, r)) in functionals.iter().zip(lhs.into_iter().zip(rhs)) {
        let check = PairedCheck { lhs: l, rhs: r };
        let pass = check.within(sigmas);
        all_pass &= pass;
        println!(
            "two-sided {name}: lhs = {:.6} +- {:.6}, rhs = {:.6} +- {:.6}, z = {:+.3} [{}]",
            check.lhs.mean,
            check.lhs.std_error,
            check.rhs.mean,
            check.rhs.std_error,
            check.zscore(),
            if pass { "pass" } else { "FAIL" }
        );
        rows.push(report_row(
            "two-sided",
            &model_name,
            psi.name(),
            name,
            &check,
            pass,
        ));
    }

    // the population-sum identity runs undistorted: it has no tagged branch
    // rate to corrupt on the direct side, so the distortion hook above is the
    // one that must trip the two-sided rows
    if distortion == 1.0 {
        let check = many_to_one_check(
            &model,
            &psi,
            &PathFunctional::One,
            p.horizon,
            p.replicas,
            p.seed,
        )?;
        let pass = check.within(sigmas);
        all_pass &= pass;
        println!(
            "many-to-one constant-one: lhs = {:.6} +- {:.6}, rhs = {:.6} +- {:.6}, z = {:+.3} [{}]",
            check.lhs.mean,
            check.lhs.std_error,
            check.rhs.mean,
            check.rhs.std_error,
            check.zscore(),
            if pass { "pass" } else { "FAIL" }
        );
        rows.push(report_row(
            "many-to-one",
            &model_name,
            psi.name(),
            "constant-one",
            &check,
            pass,
        ));
    }

    let path = write_csv(
        &p.out,
        "report.csv",
        "check,model,psi,functional,lhs,se_lhs,rhs,se_rhs,zscore,pass",
        &rows,
    )?;
    println!(
        "compare: {} checks at n = {} per side, band {} SE -> {} [{}]",
        rows.len(),
        p.replicas,
        sigmas,
        path.display(),
        if all_pass { "pass" } else { "FAIL" }
    );
    Ok(all_pass)
}

fn report_row(
    check: &str,
    model: &str,
    psi: &str,
    functional: &str,
    pair: &PairedCheck,
    pass: bool,
) -> String {
    format!(
        "{check},{model},{psi},{functional},{},{},{},{},{},{}",
        pair.lhs.mean,
        pair.lhs.std_error,
        pair.rhs.mean,
        pair.rhs.std_error,
        pair.zscore(),
        pass
    )
}

fn cmd_eigen(cfg: &ConfigFile, p: &RunParams) -> Result<bool> {
    let model = cfg.build_model()?;
    let space = state_space_of(&model, DEFAULT_STATE_LIMIT)?;
    let gen = build_generator(&model, &space)?;
    let trip = perron_frobenius(&gen)?;
    let pi = stationary_law(&trip);

    let rows: Vec<String> = (0..space.len())
        .map(|i| {
            let (ty, comp) = space.state(i);
            format!(
                "{i},{},{comp},{},{},{}",
                model.type_name(*ty),
                trip.h[i],
                trip.gamma[i],
                pi[i]
            )
        })
        .collect();
    let path = write_csv(
        &p.out,
        "triplet.csv",
        "state-index,type,composition,h,gamma,pi",
        &rows,
    )?;
    println!(
        "eigen: {} states, lambda = {}, residuals {:.3e} / {:.3e} -> {}",
        space.len(),
        trip.lambda,
        trip.residual_right,
        trip.residual_left,
        path.display()
    );
    Ok(true)
}

fn cmd_phase(cfg: &ConfigFile, p: &RunParams) -> Result<bool> {
    let section = cfg
        .phase
        .as_ref()
        .ok_or_else(|| anyhow::anyhow!("config has no [phase] section"))?;
    if section.b.is_empty() || section.c.is_empty() || section.r.is_empty() {
        bail!("phase grids must be nonempty");
    }
    let law = section.fraction.build()?;
    let paths = section.paths.unwrap_or(32);
    if paths == 0 {
        bail!("phase.paths must be positive");
    }
    let horizon = section.horizon.unwrap_or(200.0);
    let initial = section.initial.unwrap_or(1);

    let mut rows = Vec::new();
    let mut row_seed = p.seed;
    for &b in &section.b {
        for &c in &section.c {
            for &r in &section.r {
                let gf = GrowthFragmentation {
                    b,
                    c,
                    r,
                    law: law.clone(),
                    initial,
                };
                let res = gf.classify(horizon, paths, row_seed);
                row_seed = row_seed.wrapping_add(1);
                println!(
                    "phase b = {b}, c = {c}, r = {r}: threshold = {:.6}, slope = {:.4} +- {:.4} -> {}",
                    res.threshold, res.slope_estimate, res.slope_se, res.phase
                );
                rows.push(format!(
                    "{b},{c},{r},{},{},{}",
                    res.threshold, res.slope_estimate, res.phase
                ));
            }
        }
    }
    let path = write_csv(
        &p.out,
        "phase.csv",
        "b,c,r,threshold,slope_estimate,classification",
        &rows,
    )?;
    println!("phase: {} rows -> {}", rows.len(), path.display());
    Ok(true)
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).expect("no NaN"));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn cmd_odelimit(cfg: &ConfigFile, p: &RunParams) -> Result<bool> {
    let section = cfg
        .odelimit
        .as_ref()
        .ok_or_else(|| anyhow::anyhow!("config has no [odelimit] section"))?;
    let (limit, horizon, ns, steps): (LargeNModel, f64, Vec<u32>, usize) = match section {
        OdeLimitSection::Logistic {
            b,
            c,
            initial,
            horizon,
            ns,
            steps,
        } => (
            LogisticBD { b: *b, c: *c }.large_n(*initial),
            horizon.unwrap_or(5.0),
            ns.clone().unwrap_or_else(|| vec![100, 1000, 10_000]),
            steps.unwrap_or(2000),
        ),
        OdeLimitSection::Sir {
            beta,
            gamma,
            s0,
            i0,
            horizon,
            ns,
            steps,
        } => (
            sir_large_n(*beta, *gamma, *s0, *i0),
            horizon.unwrap_or(5.0),
            ns.clone().unwrap_or_else(|| vec![100, 1000, 10_000]),
            steps.unwrap_or(2000),
        ),
    };
    if ns.is_empty() {
        bail!("odelimit.ns must be nonempty");
    }

    let flow = match limit.solve(horizon, steps) {
        Ok(path) => path,
        Err(e) => {
            // the flow itself is ill-posed on this config: flag it instead of
            // writing a trajectory
            let rows = vec![format!("0,0,,{e}")];
            let path = write_csv(
                &p.out,
                "convergence.csv",
                "n,paths,median_sup_error,note",
                &rows,
            )?;
            println!("odelimit: flow failed ({e}) -> {}", path.display());
            return Ok(false);
        }
    };

    let header = format!("t,{}", limit.type_names().join(","));
    let rows: Vec<String> = flow
        .times
        .iter()
        .zip(&flow.states)
        .map(|(t, z)| {
            let cols: Vec<String> = z.iter().map(|v| v.to_string()).collect();
            format!("{t},{}", cols.join(","))
        })
        .collect();
    let traj_path = write_csv(&p.out, "trajectory.csv", &header, &rows)?;

    let mut conv_rows = Vec::new();
    let mut ok = true;
    for (ni, &n) in ns.iter().enumerate() {
        let scaled = limit.scaled_model(n)?;
        let mut errors = Vec::with_capacity(LIMIT_PATHS);
        let mut censored = 0u32;
        for path_idx in 0..LIMIT_PATHS {
            let mut rng = replica_rng(p.seed, tag::LIMIT, (ni * LIMIT_PATHS + path_idx) as u64);
            let mut sup = 0.0f64;
            let (status, _) = composition_chain(
                &scaled,
                horizon,
                p.max_events,
                &mut rng,
                |t0, t1, z| {
                    for &t in &[t0, t1] {
                        let zeta = flow.at(t.min(horizon));
                        for (x, &count) in z.as_slice().iter().enumerate() {
                            let dev = (count as f64 / n as f64 - zeta[x]).abs();
                            sup = sup.max(dev);
                        }
                    }
                },
            );
            if status.is_censored() {
                censored += 1;
            }
            errors.push(sup);
        }
        let med = median(errors);
        let note = if censored > 0 {
            ok = false;
            format!("{censored} of {LIMIT_PATHS} paths censored")
        } else {
            String::new()
        };
        println!("odelimit n = {n}: median sup error = {med:.6} {note}");
        conv_rows.push(format!("{n},{LIMIT_PATHS},{med},{note}"));
    }
    let conv_path = write_csv(
        &p.out,
        "convergence.csv",
        "n,paths,median_sup_error,note",
        &conv_rows,
    )?;
    println!(
        "odelimit: halving drift = {:.3e}, trajectory -> {}, convergence -> {}",
        flow.halving_sup_error,
        traj_path.display(),
        conv_path.display()
    );
    Ok(ok)
}
