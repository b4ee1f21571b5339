//! `symgain` command line.
//!
//! Exit codes: 0 ok, 1 runtime error, 2 small-gain violated, 3 empty
//! controller, 4 small-gain undecided or cycle cap exceeded, 64 usage error.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::abstraction::{AbstractionError, DEFAULT_TRANSITION_CAP, build_abstraction};
use crate::bench::{
    BenchError, CaseStudy, FullNetConfig, RoomPreset, RoomTempConfig, SweepFamily, closed_loop, error_sweep_with, gen_roomtemp, network_error,
    template_groups, write_sweep_csv, write_trajectory_csv,
};
use crate::certificate::Direction;
use crate::composition::{CompositionError, CompositionOptions, SgcMode, SmallGainOutcome, build_gain_matrix, check_small_gain};
use crate::config::{BoxSpec, ConfigError, NetConfig};
use crate::gain::GainFn;
use crate::synthesis::{SafetySpec, SynthesisError, neighbor_assumption, synthesize_safety};
use crate::system::BoxUnion;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_SGC_VIOLATED: i32 = 2;
pub const EXIT_EMPTY_CONTROLLER: i32 = 3;
pub const EXIT_UNDECIDED: i32 = 4;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(name = "symgain", version, about = "Compositional symbolic models and safety controllers for networks of control systems")]
struct Cli {
    /// Worker threads (falls back to SYMGAIN_THREADS, then the number of cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the symbolic model of every distinct subsystem and report its size.
    Abstract(AbstractArgs),
    /// Decide the small-gain condition on the gain matrix.
    CheckSmallgain(CheckArgs),
    /// Network relation error over a grid of sizes and quantization steps.
    ComposeError(ComposeArgs),
    /// Maximal safety controller per distinct subsystem.
    Synthesize(SynthArgs),
    /// Closed-loop simulation under the synthesized controllers.
    Simulate(SimArgs),
    /// End-to-end case studies.
    #[command(subcommand)]
    Bench(BenchCommand),
}

#[derive(Debug, Args)]
struct ConfigArg {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Debug, Args)]
struct AbstractArgs {
    #[command(flatten)]
    cfg: ConfigArg,
    /// Only this subsystem.
    #[arg(long)]
    sub: Option<usize>,
    /// Materialize and dump the transition relation (one file per model).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Transition cap for materialization.
    #[arg(long, default_value_t = DEFAULT_TRANSITION_CAP)]
    cap: u64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Linear,
    Exhaustive,
    Auto,
}

impl From<ModeArg> for SgcMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Linear => SgcMode::LinearFast,
            ModeArg::Exhaustive => SgcMode::Exhaustive,
            ModeArg::Auto => SgcMode::Auto,
        }
    }
}

#[derive(Debug, Args)]
struct CheckArgs {
    #[command(flatten)]
    cfg: ConfigArg,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
}

#[derive(Debug, Args)]
struct ComposeArgs {
    #[command(flatten)]
    cfg: ConfigArg,
    /// Quantization steps; the config `eta` when absent.
    #[arg(long, value_delimiter = ',')]
    eta: Vec<f64>,
    /// Network sizes; the config `n` when absent.
    #[arg(long, value_delimiter = ',')]
    n: Vec<usize>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[command(flatten)]
    cfg: ConfigArg,
    /// Safe interval `lo,hi` applied to every subsystem.
    #[arg(long, value_parser = parse_interval)]
    safe: Option<[f64; 2]>,
    #[arg(long)]
    sub: Option<usize>,
    /// Grow the assumed neighbor range beyond the neighbors' safe sets.
    #[arg(long, default_value_t = 0.0)]
    margin: f64,
    /// Add the network relation error to `--margin`.
    #[arg(long)]
    inflate: bool,
    /// Controller file; an index is appended when several models are written.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SimArgs {
    #[command(flatten)]
    cfg: ConfigArg,
    #[arg(long, value_parser = parse_interval)]
    safe: Option<[f64; 2]>,
    #[arg(long, default_value_t = 100)]
    steps: usize,
    /// Initial state: one value for every coordinate or a full comma list.
    #[arg(long, value_delimiter = ',', required = true)]
    x0: Vec<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum BenchCommand {
    /// Ring of rooms with heaters.
    Roomtemp(RoomBenchArgs),
    /// Fully connected sine network.
    Fullnet(FullNetBenchArgs),
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long, default_value_t = 0.01)]
    eta: f64,
    #[arg(long, default_value_t = 0.01)]
    mu: f64,
    /// Sizes for err.csv; `3,10,100,n` when absent.
    #[arg(long, value_delimiter = ',')]
    sweep_n: Vec<usize>,
    /// Steps for err.csv; `--eta` when absent.
    #[arg(long, value_delimiter = ',')]
    sweep_eta: Vec<f64>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct RoomBenchArgs {
    #[arg(long, default_value_t = 3)]
    n: usize,
    #[command(flatten)]
    sweep: SweepArgs,
    #[arg(long, default_value_t = 100)]
    steps: usize,
    #[arg(long, value_enum, default_value = "paper")]
    preset: PresetArg,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, default_value_t = 20.0)]
    x0: f64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PresetArg {
    Paper,
    Verified,
}

#[derive(Debug, Args)]
struct FullNetBenchArgs {
    #[arg(long, default_value_t = 2)]
    n: usize,
    #[command(flatten)]
    sweep: SweepArgs,
    #[arg(long)]
    a: Option<f64>,
    #[arg(long)]
    c: Option<f64>,
}

fn parse_interval(s: &str) -> Result<[f64; 2], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return Err(format!("expected `lo,hi`, got `{s}`"));
    }
    let lo: f64 = parts[0].parse().map_err(|e| format!("{e}"))?;
    let hi: f64 = parts[1].parse().map_err(|e| format!("{e}"))?;
    if !(lo <= hi) {
        return Err(format!("empty interval `{s}`"));
    }
    Ok([lo, hi])
}

/// Failure carrying its exit code.
#[derive(Debug)]
struct Failure {
    code: i32,
    msg: String,
}

impl Failure {
    fn runtime(e: impl std::fmt::Display) -> Self {
        Failure { code: EXIT_ERROR, msg: e.to_string() }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Bench(b) => b.into(),
            other => Failure::runtime(other),
        }
    }
}

impl From<BenchError> for Failure {
    fn from(e: BenchError) -> Self {
        let code = match &e {
            BenchError::Composition(c) => composition_code(c),
            BenchError::Synthesis(SynthesisError::EmptyWinningSet { .. }) => EXIT_EMPTY_CONTROLLER,
            _ => EXIT_ERROR,
        };
        Failure { code, msg: e.to_string() }
    }
}

impl From<SynthesisError> for Failure {
    fn from(e: SynthesisError) -> Self {
        BenchError::from(e).into()
    }
}

impl From<AbstractionError> for Failure {
    fn from(e: AbstractionError) -> Self {
        Failure::runtime(e)
    }
}

impl From<CompositionError> for Failure {
    fn from(e: CompositionError) -> Self {
        BenchError::from(e).into()
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::runtime(e)
    }
}

fn composition_code(e: &CompositionError) -> i32 {
    match e {
        CompositionError::SmallGainViolated { .. } => EXIT_SGC_VIOLATED,
        CompositionError::SmallGainUndecided { .. } | CompositionError::CapExceeded { .. } => EXIT_UNDECIDED,
        _ => EXIT_ERROR,
    }
}

type CmdResult = Result<i32, Failure>;

/// Runs the tool on `args` (program name first) and returns the exit code.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let threads = match cli.threads {
        Some(t) => t,
        None => match std::env::var("SYMGAIN_THREADS") {
            Ok(v) if !v.trim().is_empty() => match v.trim().parse() {
                Ok(t) => t,
                Err(_) => {
                    eprintln!("error: SYMGAIN_THREADS must be a non-negative integer, got `{v}`");
                    return EXIT_USAGE;
                }
            },
            _ => 0,
        },
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_ERROR;
        }
    };
    match pool.install(|| run(cli.command)) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            f.code
        }
    }
}

fn run(cmd: Command) -> CmdResult {
    match cmd {
        Command::Abstract(a) => cmd_abstract(a),
        Command::CheckSmallgain(a) => cmd_check(a),
        Command::ComposeError(a) => cmd_compose(a),
        Command::Synthesize(a) => cmd_synthesize(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Bench(BenchCommand::Roomtemp(a)) => cmd_bench_room(a),
        Command::Bench(BenchCommand::Fullnet(a)) => cmd_bench_fullnet(a),
    }
}

fn load(cfg: &ConfigArg) -> Result<(NetConfig, CaseStudy), Failure> {
    let net = NetConfig::load(&cfg.config)?;
    let case = net.case()?;
    Ok((net, case))
}

/// `path` itself for a single file, else `stem_k.ext`.
fn indexed_path(path: &Path, k: usize, count: usize) -> PathBuf {
    if count == 1 {
        return path.to_path_buf();
    }
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}_{k}.{}", ext.to_string_lossy()),
        None => format!("{stem}_{k}"),
    };
    path.with_file_name(name)
}

/// Subsystems to handle: one representative per template, or just `sub`.
fn selection(case: &CaseStudy, sub: Option<usize>) -> Result<Vec<(usize, Vec<usize>)>, Failure> {
    let group = template_groups(&case.subsystems);
    if let Some(i) = sub {
        if i >= case.n() {
            return Err(Failure { code: EXIT_USAGE, msg: format!("--sub {i} out of range for n = {}", case.n()) });
        }
        return Ok(vec![(i, vec![i])]);
    }
    let n_groups = group.iter().max().map_or(0, |g| g + 1);
    Ok((0..n_groups)
        .map(|g| {
            let members: Vec<usize> = (0..case.n()).filter(|i| group[*i] == g).collect();
            (members[0], members)
        })
        .collect())
}

fn members_label(m: &[usize]) -> String {
    match m {
        [one] => format!("{one}"),
        [first, .., last] if m.len() == last - first + 1 => format!("{first}..={last}"),
        _ => format!("{} subsystems", m.len()),
    }
}

fn cmd_abstract(a: AbstractArgs) -> CmdResult {
    let (_, case) = load(&a.cfg)?;
    let sel = selection(&case, a.sub)?;
    for (k, (rep, members)) in sel.iter().enumerate() {
        let t = Instant::now();
        let mut model = build_abstraction(&case.subsystems[*rep], case.abstraction_feedback(), case.abstraction_params(*rep))?;
        let stats = match &a.out {
            Some(out) => {
                let s = model.materialize(a.cap)?;
                let path = indexed_path(out, k, sel.len());
                if let crate::abstraction::TransitionStore::Materialized(m) = model.store() {
                    m.write_to(BufWriter::new(File::create(&path)?))?;
                }
                println!("wrote {}", path.display());
                s
            }
            None => model.stats(),
        };
        println!(
            "model {k} (subsystems {}): states {} inputs {} internal {} triples {} transitions {} flagged {} bytes {} time {:.3}s",
            members_label(members),
            stats.n_states,
            stats.n_inputs,
            stats.n_internal,
            stats.n_triples,
            stats.n_transitions,
            stats.n_flagged,
            stats.bytes,
            t.elapsed().as_secs_f64()
        );
    }
    Ok(EXIT_OK)
}

fn cmd_check(a: CheckArgs) -> CmdResult {
    let (net, case) = load(&a.cfg)?;
    let mode = a.mode.map_or(net.mode(), SgcMode::from);
    let certs = case.certificates(case.eta, Direction::AbstractionToConcrete)?;
    let gm = build_gain_matrix(&certs, &case.topology, &GainFn::Identity, None, &case.varpi_hat)?;
    match check_small_gain(&gm, mode, net.cycle_cap()) {
        Ok(SmallGainOutcome::Satisfied) => {
            println!("small-gain condition satisfied");
            Ok(EXIT_OK)
        }
        Ok(SmallGainOutcome::Violated { cycle }) => {
            println!("small-gain condition violated on cycle {cycle:?}");
            Ok(EXIT_SGC_VIOLATED)
        }
        Ok(SmallGainOutcome::Undecided { cycle }) => {
            println!("small-gain condition undecided on cycle {cycle:?}");
            Ok(EXIT_UNDECIDED)
        }
        Err(e) => Err(e.into()),
    }
}

fn sweep_code(rows: &[crate::bench::SweepRow]) -> i32 {
    if rows.iter().any(|r| r.status == "small_gain_violated") {
        EXIT_SGC_VIOLATED
    } else if rows.iter().any(|r| r.status == "small_gain_undecided") {
        EXIT_UNDECIDED
    } else if rows.iter().any(|r| r.eps_hat.is_none()) {
        EXIT_ERROR
    } else {
        EXIT_OK
    }
}

fn report_failed_rows(rows: &[crate::bench::SweepRow]) {
    for r in rows.iter().filter(|r| r.eps_hat.is_none()) {
        eprintln!("n = {} eta = {}: {}", r.n, r.eta, r.status);
    }
}

fn cmd_compose(a: ComposeArgs) -> CmdResult {
    let net = NetConfig::load(&a.cfg.config)?;
    let n_list = if a.n.is_empty() { vec![net.n] } else { a.n };
    let eta_list = if a.eta.is_empty() {
        vec![net.case()?.eta]
    } else {
        a.eta
    };
    let mode = a.mode.map_or(net.mode(), SgcMode::from);
    let rows = error_sweep_with(|n| net.case_with_n(n).map_err(|e| BenchError::Invalid(e.to_string())), &n_list, &eta_list, mode)?;
    match &a.out {
        Some(p) => write_sweep_csv(&rows, BufWriter::new(File::create(p)?))?,
        None => write_sweep_csv(&rows, std::io::stdout().lock())?,
    }
    report_failed_rows(&rows);
    Ok(sweep_code(&rows))
}

fn safe_override(s: Option<[f64; 2]>) -> Option<BoxSpec> {
    s.map(BoxSpec::Interval)
}

fn cmd_synthesize(a: SynthArgs) -> CmdResult {
    let (net, case) = load(&a.cfg)?;
    let safe = net.safe_sets(&case, safe_override(a.safe).as_ref())?;
    if !(a.margin >= 0.0) {
        return Err(Failure { code: EXIT_USAGE, msg: format!("--margin must be non-negative, got {}", a.margin) });
    }
    let margin = if a.inflate {
        let opts = CompositionOptions { varpi_hat: case.varpi_hat.clone(), mode: net.mode(), cap: net.cycle_cap(), ..CompositionOptions::exact_routing(case.n()) };
        a.margin + network_error(&case, case.eta, &opts)?.1
    } else {
        a.margin
    };
    let sel = selection(&case, a.sub)?;
    let results = sel
        .par_iter()
        .map(|(rep, _)| -> Result<_, Failure> {
            let t = Instant::now();
            let model = build_abstraction(&case.subsystems[*rep], case.abstraction_feedback(), case.abstraction_params(*rep))?;
            let assumed = neighbor_assumption(&model, &safe, margin)?;
            let ctrl = synthesize_safety(&model, &SafetySpec::new(safe[*rep].clone()), Some(&assumed))?;
            Ok((ctrl, t.elapsed()))
        })
        .collect::<Vec<_>>();
    for (k, ((_, members), r)) in sel.iter().zip(results).enumerate() {
        let (ctrl, dt) = r?;
        if members.len() > 1 && a.sub.is_none() {
            // members share the model; their neighbors' safe sets must match too
            let srcs = |i: usize| case.subsystems[i].blocks.iter().map(|b| safe[b.source].clone()).collect::<Vec<_>>();
            if members.iter().any(|&i| srcs(i) != srcs(members[0]) || safe[i] != safe[members[0]]) {
                return Err(Failure::runtime(format!("subsystems {} share a model but not the safe sets; use --sub", members_label(members))));
            }
        }
        let path = indexed_path(&a.out, k, sel.len());
        let mut w = BufWriter::new(File::create(&path)?);
        ctrl.write_to(&mut w)?;
        w.flush()?;
        println!(
            "controller {k} (subsystems {}): domain {}/{} states, {} iterations, {:.3}s, wrote {}",
            members_label(members),
            ctrl.domain_size(),
            ctrl.n_states(),
            ctrl.iterations(),
            dt.as_secs_f64(),
            path.display()
        );
    }
    Ok(EXIT_OK)
}

fn initial_state(case: &CaseStudy, x0: &[f64]) -> Result<Vec<f64>, Failure> {
    let dim: usize = case.subsystems.iter().map(|s| s.state_dim()).sum();
    match x0.len() {
        1 => Ok(vec![x0[0]; dim]),
        l if l == dim => Ok(x0.to_vec()),
        l => Err(Failure { code: EXIT_USAGE, msg: format!("--x0 has {l} values; the network state has {dim}") }),
    }
}

fn run_closed_loop(case: &CaseStudy, safe: &[BoxUnion], x0: &[f64], steps: usize, out: &Path) -> CmdResult {
    let run = closed_loop(case, safe, x0, steps)?;
    let net = case.network()?;
    write_trajectory_csv(&net, &run.trajectory, BufWriter::new(File::create(out)?))?;
    println!(
        "closed loop: {} models, min domain {} states, abstraction {:.3}s, synthesis {:.3}s, simulation {:.3}s",
        run.models.len(),
        run.min_domain_size(),
        run.abstraction_time.as_secs_f64(),
        run.synthesis_time.as_secs_f64(),
        run.simulation_time.as_secs_f64()
    );
    match run.trajectory.first_violation {
        None => println!("trajectory stays in the safe set for {steps} steps; wrote {}", out.display()),
        Some((k, i)) => println!("subsystem {i} leaves the safe set at step {k}; wrote {}", out.display()),
    }
    Ok(EXIT_OK)
}

fn cmd_simulate(a: SimArgs) -> CmdResult {
    let (net, case) = load(&a.cfg)?;
    let safe = net.safe_sets(&case, safe_override(a.safe).as_ref())?;
    let x0 = initial_state(&case, &a.x0)?;
    run_closed_loop(&case, &safe, &x0, a.steps, &a.out)
}

fn sweep_lists(s: &SweepArgs, n: usize, min_n: usize) -> (Vec<usize>, Vec<f64>) {
    let n_list = if s.sweep_n.is_empty() {
        let mut v: Vec<usize> = [3, 10, 100].into_iter().filter(|k| *k >= min_n && *k < n).collect();
        v.push(n);
        v
    } else {
        s.sweep_n.clone()
    };
    let eta_list = if s.sweep_eta.is_empty() { vec![s.eta] } else { s.sweep_eta.clone() };
    (n_list, eta_list)
}

fn write_err_csv(family: &SweepFamily, s: &SweepArgs, n: usize, min_n: usize) -> CmdResult {
    std::fs::create_dir_all(&s.out_dir)?;
    let (n_list, eta_list) = sweep_lists(s, n, min_n);
    let rows = error_sweep_with(|k| family.generate(k), &n_list, &eta_list, SgcMode::Auto)?;
    let path = s.out_dir.join("err.csv");
    write_sweep_csv(&rows, BufWriter::new(File::create(&path)?))?;
    for r in rows.iter().filter(|r| r.eps_hat.is_some()) {
        println!("n = {} eta = {}: eps_hat = {}", r.n, r.eta, r.eps_hat.unwrap_or_default());
    }
    report_failed_rows(&rows);
    println!("wrote {}", path.display());
    Ok(sweep_code(&rows))
}

fn cmd_bench_room(a: RoomBenchArgs) -> CmdResult {
    let mut cfg = RoomTempConfig {
        n: a.n,
        eta: a.sweep.eta,
        mu: a.sweep.mu,
        preset: match a.preset {
            PresetArg::Paper => RoomPreset::Paper,
            PresetArg::Verified => RoomPreset::Verified,
        },
        ..Default::default()
    };
    if let Some(alpha) = a.alpha {
        cfg.alpha = alpha;
    }
    let code = write_err_csv(&SweepFamily::Roomtemp(cfg.clone()), &a.sweep, a.n, 3)?;
    if code != EXIT_OK {
        return Ok(code);
    }
    let case = gen_roomtemp(&cfg)?;
    let safe = vec![BoxUnion::interval(cfg.w_range.0, cfg.w_range.1).map_err(Failure::runtime)?; a.n];
    run_closed_loop(&case, &safe, &vec![a.x0; a.n], a.steps, &a.sweep.out_dir.join("traj.csv"))
}

fn cmd_bench_fullnet(a: FullNetBenchArgs) -> CmdResult {
    let mut cfg = FullNetConfig { n: a.n, eta: a.sweep.eta, mu: a.sweep.mu, c: a.c, ..Default::default() };
    if let Some(v) = a.a {
        cfg.a = v;
    }
    write_err_csv(&SweepFamily::Fullnet(cfg), &a.sweep, a.n, 2)
}
