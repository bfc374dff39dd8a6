//! Command-line interface: generate synthetic traces, learn transition
//! parameters, predict trip times, compare models, and cross-check against
//! exact inference on small networks.
//!
//! Every command works off a dataset directory holding four plain-text
//! files: `network.txt` (links, lengths, neighbor roles), `params.txt`
//! (ground-truth parameters used by the generator), `traces.txt`
//! (per-window probe-vehicle records), and `states.txt` (true per-epoch
//! congestion states, kept for evaluation). Exit codes: 0 on success, 2 on
//! validation or I/O problems, 3 on numerical failures.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use probecast::cpd::CpdKind;
use probecast::em::{init_transition, run_em, EmOptions};
use probecast::error::{Error, Result};
use probecast::eval::{evaluate_models, ModelSpec};
use probecast::filter::{filter_day, prepare_dataset, FilterOptions};
use probecast::network::RoadNetwork;
use probecast::oracle::{brute_force_log_lik, exact_forward};
use probecast::params::ThetaParams;
use probecast::predict::{predict_route, ParticleForecast};
use probecast::rng::{substream, Domain};
use probecast::synth::{
    build_benchmark, generate_dataset, load_dataset, ring_network, ring_routes,
    three_ring_theta, write_dataset, Pattern, TraceDataset,
};

#[derive(Parser)]
#[command(
    name = "probecast",
    about = "Congestion-aware travel-time modeling over road networks",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic benchmark dataset into a directory.
    Generate(GenerateArgs),
    /// Learn transition parameters from traces with particle EM.
    Learn(LearnArgs),
    /// Predict the expected travel time of one trip.
    Predict(PredictArgs),
    /// Compare learned models on trips carved from held-out traces.
    Evaluate(EvaluateArgs),
    /// Exact-inference cross-checks (small networks only).
    Oracle(OracleArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Planted congestion pattern: "short" (fronts die after one hop) or
    /// "persist" (congested links also tend to stay congested).
    #[arg(long)]
    pattern: String,
    /// Number of independent days to simulate.
    #[arg(long, default_value_t = 8)]
    days: usize,
    /// Epochs (forecast windows) per day.
    #[arg(long, default_value_t = 60)]
    steps: usize,
    /// Window duration in seconds.
    #[arg(long, default_value_t = 300.0)]
    delta: f64,
    #[arg(long, default_value_t = 20240101)]
    seed: u64,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LearnArgs {
    /// Transition family to fit: "noisyor" or "satpat".
    #[arg(long)]
    cpd: String,
    /// Dataset directory written by `generate`.
    #[arg(long)]
    traces: PathBuf,
    #[arg(long, default_value_t = 2000)]
    particles: usize,
    #[arg(long, default_value_t = 20)]
    iters: usize,
    /// Early-stop tolerance on the largest parameter change; 0 runs all
    /// iterations.
    #[arg(long, default_value_t = 0.0)]
    tol: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Score every iterate with the exact forward pass (small networks).
    #[arg(long, default_value_t = false)]
    exact_monitor: bool,
    /// File receiving the learned parameters (a report goes next to it).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    /// Parameter file for the model making the prediction.
    #[arg(long)]
    params: PathBuf,
    /// Dataset directory with the observations to filter.
    #[arg(long)]
    traces: PathBuf,
    /// Day to condition on (0-based).
    #[arg(long, default_value_t = 0)]
    day: usize,
    /// Condition on observations of epochs 1..=N (0 starts from the known
    /// all-free state).
    #[arg(long, default_value_t = 0)]
    upto_epoch: usize,
    /// Trip route as comma-separated link ids, e.g. "1,2,3".
    #[arg(long)]
    route: String,
    /// Fraction of the first link still ahead at the start.
    #[arg(long, default_value_t = 1.0)]
    alpha_s: f64,
    #[arg(long, default_value_t = 2000)]
    particles: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Dataset directory with held-out traces (and true states).
    #[arg(long)]
    traces: PathBuf,
    /// Learned noisy-OR parameter file.
    #[arg(long)]
    noisyor: Option<PathBuf>,
    /// Learned saturation-pattern parameter file.
    #[arg(long)]
    satpat: Option<PathBuf>,
    /// Trip horizons in windows, comma-separated.
    #[arg(long, default_value = "1,2,3,4,6")]
    horizons: String,
    /// Trips per horizon.
    #[arg(long, default_value_t = 60)]
    trips: usize,
    #[arg(long, default_value_t = 2000)]
    particles: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Directory receiving report.txt and per-model error distributions.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct OracleArgs {
    /// Run the built-in likelihood self-test on a three-link fixture.
    #[arg(long, default_value_t = false)]
    check_likelihood: bool,
    /// Dataset directory to analyze exactly (small networks only).
    #[arg(long)]
    traces: Option<PathBuf>,
    /// Parameter file (defaults to the dataset's params.txt).
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    day: usize,
    /// Analyze epochs 1..=N (0 means the whole day).
    #[arg(long, default_value_t = 0)]
    upto_epoch: usize,
}

fn parse_pattern(s: &str) -> Result<Pattern> {
    match s {
        "short" => Ok(Pattern::ShortLived),
        "persist" => Ok(Pattern::Persisting),
        other => Err(Error::validation(format!(
            "unknown pattern {other:?}: expected \"short\" or \"persist\""
        ))),
    }
}

fn parse_cpd(s: &str) -> Result<CpdKind> {
    match s {
        "noisyor" => Ok(CpdKind::NoisyOr),
        "satpat" => Ok(CpdKind::SatPat),
        other => Err(Error::validation(format!(
            "unknown transition family {other:?}: expected \"noisyor\" or \"satpat\""
        ))),
    }
}

fn parse_usize_list(s: &str, what: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| Error::validation(format!("bad {what} entry {p:?}")))
        })
        .collect()
}

/// Load the three dataset pieces a command needs.
fn load_dataset_dir(dir: &Path) -> Result<(RoadNetwork, ThetaParams, TraceDataset)> {
    let net = RoadNetwork::load(&dir.join("network.txt"))?;
    let truth = ThetaParams::load(&dir.join("params.txt"), &net)?;
    let dataset = load_dataset(dir, &net)?;
    Ok((net, truth, dataset))
}

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    let pattern = parse_pattern(&args.pattern)?;
    let (net, theta, dataset) =
        build_benchmark(pattern, args.days, args.steps, args.delta, args.seed)?;
    std::fs::create_dir_all(&args.out)?;
    net.save(&args.out.join("network.txt"))?;
    theta.save(&args.out.join("params.txt"), &net)?;
    write_dataset(&dataset, &args.out)?;
    println!(
        "generated {} days x {} epochs ({} records) into {}",
        args.days,
        args.steps,
        dataset.n_observations(),
        args.out.display()
    );
    Ok(())
}

fn cmd_learn(args: LearnArgs) -> Result<()> {
    let kind = parse_cpd(&args.cpd)?;
    let (net, truth, dataset) = load_dataset_dir(&args.traces)?;
    let prepared = prepare_dataset(&dataset, &net)?;
    // Observation model and window duration are taken as known; only the
    // transition family is learned.
    let mut theta0 = truth.clone();
    theta0.trans = init_transition(&net, kind, args.seed);
    let opts = EmOptions {
        n_particles: args.particles,
        max_iters: args.iters,
        tol: args.tol,
        exact_monitor: args.exact_monitor,
    };
    let (theta, report) = run_em(&prepared, &net, &theta0, &opts, args.seed)?;
    theta.save(&args.out, &net)?;
    let report_path = args.out.with_extension("report.txt");
    std::fs::write(&report_path, report.serialize())?;
    println!(
        "learned {} parameters over {} iterations into {} (report: {})",
        kind.keyword(),
        report.iterations.len(),
        args.out.display(),
        report_path.display()
    );
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Result<()> {
    let (net, _, dataset) = load_dataset_dir(&args.traces)?;
    let theta = ThetaParams::load(&args.params, &net)?;
    let route_ids = args
        .route
        .split(',')
        .map(|p| {
            p.trim()
                .parse::<u32>()
                .map_err(|_| Error::validation(format!("bad route link id {p:?}")))
        })
        .collect::<Result<Vec<u32>>>()?;
    let route: Vec<usize> =
        route_ids.iter().map(|&id| net.index_of(id)).collect::<Result<_>>()?;

    let prepared = prepare_dataset(&dataset, &net)?;
    let day = prepared
        .get(args.day)
        .ok_or_else(|| Error::validation(format!("day index {} out of range", args.day)))?;
    let particles = if args.upto_epoch == 0 {
        vec![0u64; args.particles]
    } else {
        let opts = FilterOptions {
            upto_epoch: Some(args.upto_epoch),
            ..Default::default()
        };
        let mut rng = substream(args.seed, Domain::Filter, args.day as u64);
        filter_day(day, &theta, &net, args.particles, &opts, &mut rng)?.final_states
    };
    let rng = substream(args.seed, Domain::Forecast, 0);
    let mut forecast = ParticleForecast::new(particles, &theta.trans, &net, rng)?;
    let pred =
        predict_route(&route, args.alpha_s, &theta.obs, theta.delta, &net, &mut forecast)?;
    println!("expected_seconds {}", pred.expected_seconds);
    println!("full_windows {}", pred.full_windows);
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let (net, truth, dataset) = load_dataset_dir(&args.traces)?;
    let mut models = Vec::new();
    if let Some(path) = &args.noisyor {
        models.push(ModelSpec {
            label: "noisyor".into(),
            theta: ThetaParams::load(path, &net)?,
        });
    }
    if let Some(path) = &args.satpat {
        models.push(ModelSpec {
            label: "satpat".into(),
            theta: ThetaParams::load(path, &net)?,
        });
    }
    if models.is_empty() {
        return Err(Error::validation(
            "pass at least one of --noisyor/--satpat",
        ));
    }
    let horizons = parse_usize_list(&args.horizons, "horizon")?;
    let days: Vec<usize> = (0..dataset.days.len()).collect();
    let report = evaluate_models(
        &dataset,
        &net,
        &truth,
        &models,
        &horizons,
        &days,
        args.particles,
        args.trips,
        args.seed,
    )?;
    std::fs::create_dir_all(&args.out)?;
    let summary = report.serialize_summary();
    std::fs::write(args.out.join("report.txt"), &summary)?;
    for (j, label) in report.labels.iter().enumerate() {
        for (k, row) in report.rows.iter().enumerate() {
            let path = args.out.join(format!("cdf_{label}_h{}.txt", row.horizon));
            std::fs::write(path, report.serialize_cdf(j, k))?;
        }
    }
    print!("{summary}");
    Ok(())
}

fn cmd_oracle(args: OracleArgs) -> Result<()> {
    if args.check_likelihood {
        // Self-test: exact forward pass against sequence enumeration on a
        // three-link fixture with fresh synthetic observations.
        let net = ring_network(3, 1000.0);
        let theta = three_ring_theta(&net);
        let routes = ring_routes(&net, 2);
        let dataset = generate_dataset(&net, &theta, &routes, 1, 3, 424_242)?;
        let prepared = prepare_dataset(&dataset, &net)?;
        let forward = exact_forward(&theta, &net, &prepared[0].epochs, None)?;
        let brute = brute_force_log_lik(&theta, &net, &prepared[0].epochs)?;
        let gap = (forward.log_lik - brute).abs();
        if gap > 1e-9 {
            return Err(Error::numerical(format!(
                "forward pass {} disagrees with enumeration {brute}",
                forward.log_lik
            )));
        }
        println!("likelihood_check ok forward {} enumeration {brute}", forward.log_lik);
        return Ok(());
    }

    let traces = args.traces.as_ref().ok_or_else(|| {
        Error::validation("pass --traces DIR (or --check-likelihood)")
    })?;
    let (net, truth, dataset) = load_dataset_dir(traces)?;
    let theta = match &args.params {
        Some(path) => ThetaParams::load(path, &net)?,
        None => truth,
    };
    let prepared = prepare_dataset(&dataset, &net)?;
    let day = prepared
        .get(args.day)
        .ok_or_else(|| Error::validation(format!("day index {} out of range", args.day)))?;
    let upto = if args.upto_epoch == 0 { None } else { Some(args.upto_epoch) };
    let forward = exact_forward(&theta, &net, &day.epochs, upto)?;
    for (t, row) in forward.marginals.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|m| m.to_string()).collect();
        println!("epoch {} {}", t + 1, cells.join(" "));
    }
    println!("log_lik {}", forward.log_lik);
    Ok(())
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Learn(args) => cmd_learn(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Oracle(args) => cmd_oracle(args),
    }
}

fn main() {
    if let Err(err) = run() {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
