use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use ranktopo::bounds::{
    cvo_decision, fano_pipeline, minimax_bounds, BoundConstants, BoundTarget, FanoVariant, LapLowerReading, Theorem,
};
use ranktopo::estimate::EstimateReport;
use ranktopo::exec::threads_from_env;
use ranktopo::experiment::{
    cardinal_risk, ordinal_risk, write_rows, Allocation, Campaign, ExperimentConfig, MeanSe, OrdinalRisk,
};
use ranktopo::graph::{optimality_report, Optimality, OptimalityThresholds};
use ranktopo::models::{make_link, plackett_luce};
use ranktopo::synth::{gen_quality, GeneratorKind};
use ranktopo::{build_topology, spectrum, ComparisonDesign, HyperDesign, ModelParams, ModelSpec, TopologyKind};

type CliResult<T = ()> = Result<T, Box<dyn std::error::Error>>;

#[derive(Parser)]
#[command(name = "ranktopo", version, about = "Score estimation from comparisons and comparison-graph analysis")]
struct Cli {
    /// Worker threads; overrides RANKTOPO_THREADS.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Laplacian spectrum and optimality class of a topology.
    Spectrum(SpectrumArgs),
    /// Monte-Carlo estimation campaign, one CSV row per trial.
    Simulate(SimulateArgs),
    /// Minimax lower and upper bounds.
    Bounds(BoundsArgs),
    /// Rank topologies by the l2 upper-bound proxy d / (lambda2 n).
    Design(DesignArgs),
    /// Cardinal versus ordinal decision.
    Cvo(CvoArgs),
}

#[derive(Args)]
struct DesignSource {
    /// Topology kind, e.g. complete, star, lattice2d:3x4.
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    d: Option<usize>,
    /// Design JSON file `{d, kind, edges: [[j, k, w], ...]}`.
    #[arg(long, conflicts_with = "kind")]
    design: Option<PathBuf>,
}

impl DesignSource {
    fn load(&self) -> CliResult<ComparisonDesign> {
        if let Some(path) = &self.design {
            let design: ComparisonDesign = serde_json::from_reader(io::BufReader::new(File::open(path)?))?;
            return Ok(design);
        }
        let kind: TopologyKind = self.kind.as_deref().ok_or("either --kind with --d or --design is required")?.parse()?;
        let d = self.d.ok_or("--d is required with --kind")?;
        Ok(build_topology(kind, d)?)
    }
}

#[derive(Args)]
struct SpectrumArgs {
    #[command(flatten)]
    source: DesignSource,
    /// Write `index,eigenvalue` rows here.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Write the design JSON here.
    #[arg(long)]
    save_design: Option<PathBuf>,
}

#[derive(Serialize)]
struct SpectrumReport {
    kind: String,
    d: usize,
    lambda2: f64,
    trace_pinv: f64,
    trace: f64,
    ratio_r: f64,
    lb_statistic: f64,
    class: Optimality,
    design_digest: String,
    eigenvalues: Vec<f64>,
}

fn cmd_spectrum(args: &SpectrumArgs) -> CliResult {
    let design = args.source.load()?;
    let s = spectrum(&design)?;
    let opt = optimality_report(&s, design.d(), &OptimalityThresholds::default())?;
    if let Some(path) = &args.csv {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "index,eigenvalue")?;
        for (i, l) in s.eigenvalues.iter().enumerate() {
            writeln!(w, "{},{}", i + 1, l)?;
        }
        w.flush()?;
    }
    if let Some(path) = &args.save_design {
        write_json(path, &design)?;
    }
    let report = SpectrumReport {
        kind: design.kind().to_string(),
        d: design.d(),
        lambda2: s.lambda2,
        trace_pinv: s.trace_pinv,
        trace: s.eigenvalues.iter().sum(),
        ratio_r: opt.ratio_r,
        lb_statistic: opt.lb_statistic,
        class: opt.classification,
        design_digest: design.digest(),
        eigenvalues: s.eigenvalues.clone(),
    };
    print_json(&report)
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON campaign config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated topology kinds.
    #[arg(long, value_delimiter = ',')]
    kinds: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    d: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    n: Vec<usize>,
    /// btl, thurstone, paired_cardinal or plackett_luce.
    #[arg(long)]
    family: Option<String>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long = "B", alias = "bound")]
    bound: Option<f64>,
    /// Subset size for plackett_luce.
    #[arg(long)]
    m: Option<usize>,
    /// gaussian, uniform or packing@<kind>[@proof].
    #[arg(long)]
    generator: Option<String>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// random or even.
    #[arg(long)]
    allocation: Option<String>,
    /// Record per-row wall time (makes output non-reproducible).
    #[arg(long)]
    timing: bool,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Recompute one row, `topology,d,n,trial`, instead of the whole campaign.
    #[arg(long)]
    replay: Option<String>,
    /// Row seed for --replay; defaults to the seed derived from the base seed.
    #[arg(long, requires = "replay")]
    row_seed: Option<u64>,
    /// With --replay: write the observation batch CSV here.
    #[arg(long, requires = "replay")]
    batch_out: Option<PathBuf>,
    /// With --replay: write the estimate JSON here.
    #[arg(long, requires = "replay")]
    estimate_out: Option<PathBuf>,
}

impl SimulateArgs {
    fn config(&self) -> CliResult<ExperimentConfig> {
        let mut c = match &self.config {
            Some(path) => serde_json::from_reader(io::BufReader::new(File::open(path)?))?,
            None => ExperimentConfig::default(),
        };
        if !self.kinds.is_empty() {
            c.topologies = self.kinds.clone();
        }
        if !self.d.is_empty() {
            c.d = self.d.clone();
        }
        if !self.n.is_empty() {
            c.n = self.n.clone();
        }
        if let Some(f) = &self.family {
            c.model.family = f.clone();
        }
        if let Some(s) = self.sigma {
            c.model.sigma = s;
        }
        if let Some(b) = self.bound {
            c.model.bound = b;
        }
        if self.m.is_some() {
            c.model.m = self.m;
        }
        if let Some(g) = &self.generator {
            c.generator = g.clone();
        }
        if let Some(t) = self.trials {
            c.trials = t;
        }
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(a) = &self.allocation {
            c.allocation = serde_json::from_value(serde_json::Value::String(a.to_ascii_lowercase()))
                .map_err(|_| format!("unknown allocation {a:?}"))?;
        }
        c.timing |= self.timing;
        Ok(c)
    }
}

fn output(path: &Option<PathBuf>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn cmd_simulate(args: &SimulateArgs, threads: Option<usize>) -> CliResult {
    let campaign = Campaign::new(args.config()?)?;
    if let Some(spec) = &args.replay {
        return replay(&campaign, spec, args);
    }
    let rows = campaign.run(threads)?;
    let failed = rows.iter().filter(|r| !r.converged).count();
    let mut w = output(&args.out)?;
    write_rows(&mut w, &rows)?;
    w.flush()?;
    if failed > 0 {
        eprintln!("warning: {failed} of {} trials did not converge", rows.len());
    }
    Ok(())
}

fn replay(campaign: &Campaign, spec: &str, args: &SimulateArgs) -> CliResult {
    let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
    let [topology, d, n, trial] = parts[..] else {
        return Err(format!("--replay expects topology,d,n,trial, got {spec:?}").into());
    };
    let cell = campaign.cell(topology, d.parse()?, n.parse()?, trial.parse()?)?;
    let seed = args.row_seed.unwrap_or_else(|| campaign.row_seed(&cell));
    let row = campaign.replay(&cell, seed)?;
    let mut w = output(&args.out)?;
    write_rows(&mut w, std::slice::from_ref(&row))?;
    w.flush()?;
    if args.batch_out.is_some() || args.estimate_out.is_some() {
        let detail = campaign.replay_detail(&cell, seed)?;
        let model = campaign.config().model.clone();
        if let Some(path) = &args.batch_out {
            let mut f = BufWriter::new(File::create(path)?);
            detail.batch.write_csv(&mut f, &serde_json::to_string(&model)?)?;
            f.flush()?;
        }
        if let Some(path) = &args.estimate_out {
            write_json(path, &EstimateReport::new(&detail.estimate, model, detail.design_digest))?;
        }
    }
    Ok(())
}

#[derive(Args)]
struct BoundsArgs {
    /// T1_lap, T2_l2, T3_paired, T4_mwise_lap or T4_mwise_l2 (T1..T4 accepted).
    #[arg(long)]
    theorem: String,
    #[command(flatten)]
    source: DesignSource,
    #[arg(long, default_value = "thurstone")]
    family: String,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long = "B", alias = "bound", default_value_t = 1.0)]
    bound: f64,
    /// Subset size for the m-wise theorems.
    #[arg(long, default_value_t = 3)]
    m: usize,
    #[arg(long)]
    n: f64,
    /// Reading of the Laplacian lower bound: rate or display.
    #[arg(long, default_value = "rate")]
    reading: String,
    /// JSON file with the universal constants.
    #[arg(long)]
    constants: Option<PathBuf>,
    /// Also run the constructive Fano lower bound.
    #[arg(long)]
    constructive: bool,
    #[arg(long, default_value_t = 0.01)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn cmd_bounds(args: &BoundsArgs) -> CliResult {
    let theorem: Theorem = args.theorem.parse()?;
    let constants: BoundConstants = match &args.constants {
        Some(p) => serde_json::from_reader(io::BufReader::new(File::open(p)?))?,
        None => BoundConstants::default(),
    };
    let reading: LapLowerReading = serde_json::from_value(serde_json::Value::String(args.reading.to_ascii_lowercase()))
        .map_err(|_| format!("unknown reading {:?}", args.reading))?;
    if theorem.is_mwise() {
        if args.constructive {
            return Err("--constructive applies to pairwise designs only".into());
        }
        let kind: TopologyKind = args.source.kind.as_deref().unwrap_or("complete").parse()?;
        if kind != TopologyKind::Complete {
            return Err("m-wise bounds use the complete hypergraph".into());
        }
        let d = args.source.d.ok_or("--d is required")?;
        let design = HyperDesign::complete(d, args.m)?;
        let link = plackett_luce(args.m, args.bound)?;
        let report = minimax_bounds(theorem, BoundTarget::Mwise { design: &design, link: &link }, args.n, &constants, reading)?;
        return print_json(&report);
    }
    let design = args.source.load()?;
    let link = make_link(&args.family, args.sigma)?;
    let params = ModelParams::new(&link, args.bound)?;
    let report = minimax_bounds(theorem, BoundTarget::Pairwise { design: &design, params: &params }, args.n, &constants, reading)?;
    if args.constructive {
        let fano = fano_pipeline(&design, &params, args.n, args.alpha, FanoVariant::Auto, args.seed)?;
        print_json(&serde_json::json!({ "report": report, "constructive": fano }))
    } else {
        print_json(&report)
    }
}

#[derive(Args)]
struct DesignArgs {
    #[arg(long)]
    d: usize,
    #[arg(long)]
    n: f64,
    /// Comma-separated kinds; every kind valid at `d` when absent.
    #[arg(long, value_delimiter = ',')]
    kinds: Vec<String>,
    /// Emit JSON instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Serialize)]
struct DesignRow {
    rank: usize,
    kind: String,
    proxy: f64,
    lambda2: f64,
    trace_pinv: f64,
    lb_statistic: f64,
    class: Optimality,
}

fn cmd_design(args: &DesignArgs) -> CliResult {
    if args.n.is_nan() || args.n <= 0.0 {
        return Err("n must be positive".into());
    }
    let kinds: Vec<TopologyKind> = if args.kinds.is_empty() {
        TopologyKind::ALL.iter().filter_map(|k| k.resolve(args.d).ok()).collect()
    } else {
        args.kinds.iter().map(|k| k.parse::<TopologyKind>()).collect::<Result<_, _>>()?
    };
    if kinds.is_empty() {
        return Err(format!("no topology is valid at d = {}", args.d).into());
    }
    let mut rows = Vec::new();
    for kind in kinds {
        let design = build_topology(kind, args.d)?;
        let s = spectrum(&design)?;
        let opt = optimality_report(&s, args.d, &OptimalityThresholds::default())?;
        rows.push(DesignRow {
            rank: 0,
            kind: kind.resolve(args.d)?.to_string(),
            proxy: args.d as f64 / (s.lambda2 * args.n),
            lambda2: s.lambda2,
            trace_pinv: s.trace_pinv,
            lb_statistic: opt.lb_statistic,
            class: opt.classification,
        });
    }
    rows.sort_by(|a, b| a.proxy.total_cmp(&b.proxy).then_with(|| a.kind.cmp(&b.kind)));
    for (i, r) in rows.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    if args.json {
        return print_json(&rows);
    }
    let mut out = io::stdout().lock();
    writeln!(out, "{:>4}  {:<24} {:>14} {:>12} {:>12} {:>14}  class", "rank", "kind", "proxy", "lambda2", "tr_pinv", "lb_stat")?;
    for r in &rows {
        writeln!(
            out,
            "{:>4}  {:<24} {:>14.6e} {:>12.6} {:>12.4} {:>14.4}  {}",
            r.rank, r.kind, r.proxy, r.lambda2, r.trace_pinv, r.lb_statistic, r.class
        )?;
    }
    Ok(())
}

#[derive(Args)]
struct CvoArgs {
    /// Ordinal (Thurstone) noise scale.
    #[arg(long)]
    sigma: f64,
    /// Cardinal noise scale.
    #[arg(long)]
    sigma_c: f64,
    #[arg(long = "B", alias = "bound", default_value_t = 1.0)]
    bound: f64,
    #[arg(long)]
    constants: Option<PathBuf>,
    /// Also run matched Monte-Carlo on the complete graph with even allocation.
    #[arg(long)]
    empirical: bool,
    #[arg(long, default_value_t = 10)]
    d: usize,
    #[arg(long, default_value_t = 4500)]
    n: usize,
    #[arg(long, default_value_t = 40)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Serialize)]
struct Empirical {
    d: usize,
    n: usize,
    trials: usize,
    ordinal: OrdinalRisk,
    cardinal: MeanSe,
    lower_risk: &'static str,
}

fn cmd_cvo(args: &CvoArgs, threads: Option<usize>) -> CliResult {
    let constants: BoundConstants = match &args.constants {
        Some(p) => serde_json::from_reader(io::BufReader::new(File::open(p)?))?,
        None => BoundConstants::default(),
    };
    let report = cvo_decision(args.sigma, args.sigma_c, args.bound, &constants)?;
    if !args.empirical {
        return print_json(&report);
    }
    let design = build_topology(TopologyKind::Complete, args.d)?;
    let model = ModelSpec { family: "thurstone".into(), sigma: args.sigma, bound: args.bound, m: None };
    let w_star = gen_quality(GeneratorKind::Uniform, args.d, args.bound, args.seed)?;
    let ordinal = ordinal_risk(&design, &model, &w_star, args.n, args.trials, Allocation::Even, args.seed, threads)?;
    let cardinal = cardinal_risk(args.d, args.sigma_c, args.n, args.trials, args.seed, threads)?;
    let lower_risk = if ordinal.sq_l2.mean < cardinal.mean { "ordinal" } else { "cardinal" };
    let empirical = Empirical { d: args.d, n: args.n, trials: args.trials, ordinal, cardinal, lower_risk };
    print_json(&serde_json::json!({ "decision": report, "empirical": empirical }))
}

fn print_json<T: Serialize>(value: &T) -> CliResult {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    let threads = cli.threads.filter(|&t| t > 0).or_else(threads_from_env);
    match &cli.command {
        Command::Spectrum(a) => cmd_spectrum(a),
        Command::Simulate(a) => cmd_simulate(a, threads),
        Command::Bounds(a) => cmd_bounds(a),
        Command::Design(a) => cmd_design(a),
        Command::Cvo(a) => cmd_cvo(a, threads),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
