use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use hetnet::control::{receding_horizon_control, ControllerConfig};
use hetnet::export::{delay_series_csv, parse_plan, plan_to_json, queue_heatmap_csv, study_bars_csv, study_table_csv, summarize, summary_json, trajectory_csv};
use hetnet::milp::equivalence::check_equivalence;
use hetnet::milp::{build_milp, solve_bnb, write_lp, write_mps, BuildOptions, SolveOptions, SolveStatus};
use hetnet::scenario::ScenarioFile;
use hetnet::study::{run_study, DemandLevel, SignalControl, Signalization, StudyGrid};
use hetnet::{run_scenario, Error, NetworkModel, ScenarioConfig, SignalPlan, Simulator, Trajectory};
use log::info;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_VALIDATION: u8 = 2;
const EXIT_LIMIT: u8 = 3;

#[derive(Parser)]
#[command(name = "hetnet", version, about = "Mixed signalized / all-way-stop network simulation and signal control")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario under a fixed plan and write the trajectory.
    Simulate(SimulateArgs),
    /// Run receding-horizon control and write the trajectory and applied plan.
    Control(ControlArgs),
    /// Run the grid study and write the table and heatmaps.
    Study(StudyArgs),
    /// Write the window MILP as LP and MPS, optionally solving it.
    ExportMilp(ExportArgs),
    /// Compare the MILP with the simulator over every stage sequence.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario JSON file.
    #[arg(long)]
    scenario: PathBuf,
    /// Override the coarse sampling period Δ in seconds.
    #[arg(long)]
    delta: Option<f64>,
    /// Override the fine sampling period λ in seconds.
    #[arg(long)]
    lambda: Option<f64>,
    /// Override the number of coarse intervals.
    #[arg(long)]
    horizon: Option<usize>,
}

#[derive(Args)]
struct SolverArgs {
    /// Wall-clock seconds per solve.
    #[arg(long)]
    time_limit: Option<f64>,
    /// Branch-and-bound nodes per solve.
    #[arg(long, default_value_t = 200_000)]
    node_limit: usize,
    /// Relative gap treated as optimal.
    #[arg(long, default_value_t = 0.0)]
    gap: f64,
}

impl SolverArgs {
    fn options(&self) -> SolveOptions {
        SolveOptions { gap_tol: self.gap, node_limit: self.node_limit, time_limit: self.time_limit, ..SolveOptions::default() }
    }
}

#[derive(Args)]
struct OutArgs {
    /// Output directory, created if missing.
    #[arg(long, short, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Plan JSON; without it signalized intersections cycle their stages.
    #[arg(long)]
    plan: Option<PathBuf>,
    /// Intervals each stage is held by the default cycle.
    #[arg(long, default_value_t = 3)]
    hold: usize,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct ControlArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Window length N in intervals.
    #[arg(long, default_value_t = 2)]
    window: usize,
    /// Intervals committed per solve.
    #[arg(long, default_value_t = 1)]
    reoptimize_every: usize,
    /// Fallback cycle hold in intervals.
    #[arg(long, default_value_t = 3)]
    hold: usize,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum Level {
    Low,
    Medium,
    High,
}

#[derive(Clone, Copy, ValueEnum)]
enum Sig {
    None,
    Subset,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum Policy {
    Optimized,
    Cyclic,
}

#[derive(Args)]
struct StudyArgs {
    #[arg(long, value_delimiter = ',', default_values = ["low", "medium", "high"])]
    levels: Vec<Level>,
    #[arg(long, value_delimiter = ',', default_values = ["none", "subset", "all"])]
    signalization: Vec<Sig>,
    /// Number of seeded demand draws per case.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    /// First seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "optimized")]
    policy: Policy,
    #[arg(long, default_value_t = 2)]
    window: usize,
    #[arg(long, default_value_t = 15.0)]
    delta: f64,
    #[arg(long, default_value_t = 3.75)]
    lambda: f64,
    /// Coarse intervals per case.
    #[arg(long, default_value_t = 12)]
    horizon: usize,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Format {
    Lp,
    Mps,
    Both,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Window length N; defaults to the scenario horizon.
    #[arg(long)]
    window: Option<usize>,
    #[arg(long, value_enum, default_value = "both")]
    format: Format,
    /// Also solve the model and write solution.json.
    #[arg(long)]
    solve: bool,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Window length N.
    #[arg(long, default_value_t = 3)]
    window: usize,
    /// Write the report here instead of stdout.
    #[arg(long)]
    report: Option<PathBuf>,
}

/// Carries the exit code chosen for a failure.
#[derive(Debug)]
struct Exit(u8);

impl std::fmt::Display for Exit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "exit {}", self.0)
    }
}

impl std::error::Error for Exit {}

fn load(a: &ScenarioArgs) -> anyhow::Result<(NetworkModel, ScenarioConfig)> {
    let text = std::fs::read_to_string(&a.scenario).with_context(|| format!("reading {}", a.scenario.display()))?;
    let mut file: ScenarioFile = serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
    if let Some(d) = a.delta {
        file.delta_s = d;
    }
    if let Some(l) = a.lambda {
        file.lambda_s = l;
    }
    if let Some(h) = a.horizon {
        file.horizon = h;
    }
    Ok(file.build()?)
}

fn write(dir: &Path, name: &str, body: &str) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let p = dir.join(name);
    std::fs::write(&p, body).with_context(|| format!("writing {}", p.display()))?;
    info!("wrote {}", p.display());
    Ok(())
}

fn write_run(dir: &Path, net: &NetworkModel, sc: &ScenarioConfig, traj: &Trajectory) -> anyhow::Result<()> {
    write(dir, "trajectory.csv", &trajectory_csv(traj, net)?)?;
    write(dir, "delay_series.csv", &delay_series_csv(traj, net, sc.delta_s)?)?;
    let s = summarize(traj, net, sc.delta_s);
    write(dir, "summary.json", &summary_json(&s))?;
    println!("total delay {} s, {} vehicles, {} s per vehicle", s.total_delay_s, s.total_vehicles, s.average_delay_s);
    Ok(())
}

fn simulate(a: &SimulateArgs) -> anyhow::Result<()> {
    let (net, sc) = load(&a.scenario)?;
    let plan = match &a.plan {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            parse_plan(&text, &net)?
        }
        None => {
            let mut cfg = ControllerConfig::new(1);
            cfg.fallback_hold = a.hold;
            cfg.check(&net)?;
            cfg.cyclic_plan(&net, sc.horizon)
        }
    };
    let traj = run_scenario(&net, &sc, &plan)?;
    write_run(&a.out.out, &net, &sc, &traj)?;
    write(&a.out.out, "plan.json", &plan_to_json(&plan, &net))
}

fn control(a: &ControlArgs) -> anyhow::Result<()> {
    let (net, sc) = load(&a.scenario)?;
    let mut cfg = ControllerConfig::new(a.window);
    cfg.reoptimize_every = a.reoptimize_every;
    cfg.fallback_hold = a.hold;
    cfg.solve = a.solver.options();
    let out = receding_horizon_control(&net, &sc, &cfg)?;
    write_run(&a.out.out, &net, &sc, &out.trajectory)?;
    write(&a.out.out, "plan.json", &plan_to_json(&out.plan, &net))?;
    write(&a.out.out, "epochs.json", &serde_json::to_string_pretty(&out.epochs)?)?;
    let limited = out.limited_epochs();
    if limited > 0 {
        eprintln!("{limited} of {} epochs stopped at a solver limit", out.epochs.len());
        return Err(Exit(EXIT_LIMIT).into());
    }
    Ok(())
}

fn study(a: &StudyArgs) -> anyhow::Result<()> {
    let mut grids = Vec::new();
    for &l in &a.levels {
        for &s in &a.signalization {
            let sig = match s {
                Sig::None => Signalization::None,
                Sig::Subset => Signalization::Subset(StudyGrid::default_subset(4, 4)),
                Sig::All => Signalization::All,
            };
            let level = match l {
                Level::Low => DemandLevel::Low,
                Level::Medium => DemandLevel::Medium,
                Level::High => DemandLevel::High,
            };
            let mut g = StudyGrid::new(sig, level);
            g.delta_s = a.delta;
            g.lambda_s = a.lambda;
            g.intervals = a.horizon;
            g.check()?;
            grids.push(g);
        }
    }
    let control = match a.policy {
        Policy::Cyclic => SignalControl::Cyclic,
        Policy::Optimized => {
            let mut cfg = ControllerConfig::new(a.window);
            cfg.solve = a.solver.options();
            SignalControl::Optimized(cfg)
        }
    };
    let seeds: Vec<u64> = (a.seed..a.seed + a.seeds).collect();
    let table = run_study(&grids, &seeds, &control)?;
    let dir = &a.out.out;
    write(dir, "table.csv", &study_table_csv(&table)?)?;
    write(dir, "bars.csv", &study_bars_csv(&table)?)?;
    for h in &table.heatmaps {
        write(&dir.join("heatmaps"), &format!("{}_s{}.csv", h.case, h.seed), &queue_heatmap_csv(h)?)?;
    }
    print!("{}", study_bars_csv(&table)?);
    let limited: usize = table.rows.iter().map(|r| r.limited_epochs).sum();
    if limited > 0 {
        eprintln!("{limited} epochs stopped at a solver limit; their best incumbents were applied");
        return Err(Exit(EXIT_LIMIT).into());
    }
    Ok(())
}

fn export_milp(a: &ExportArgs) -> anyhow::Result<()> {
    let (net, sc) = load(&a.scenario)?;
    let n = a.window.unwrap_or(sc.horizon);
    let s0 = Simulator::new(&net, &sc)?.initial_state();
    let empty = SignalPlan::new(vec![Vec::new(); net.signalized.len()]);
    let b = build_milp(&net, &sc, &s0, &empty, n, &BuildOptions::default())?;
    if matches!(a.format, Format::Lp | Format::Both) {
        write(&a.out.out, "model.lp", &write_lp(&b.model)?)?;
    }
    if matches!(a.format, Format::Mps | Format::Both) {
        write(&a.out.out, "model.mps", &write_mps(&b.model)?)?;
    }
    println!("{} variables, {} rows", b.model.variables.len(), b.model.constraints.len());
    if a.solve {
        let sol = solve_bnb(&b.model, &a.solver.options())?;
        write(&a.out.out, "solution.json", &sol.to_json(&b.model))?;
        println!("status {:?}, objective {}, {} nodes", sol.status, sol.objective, sol.nodes);
        match sol.status {
            SolveStatus::Optimal => {}
            SolveStatus::Infeasible => return Err(Error::Solver("model is infeasible".into()).into()),
            _ => return Err(Exit(EXIT_LIMIT).into()),
        }
    }
    Ok(())
}

fn verify(a: &VerifyArgs) -> anyhow::Result<()> {
    let (net, sc) = load(&a.scenario)?;
    let rep = check_equivalence(&net, &sc, a.window, &BuildOptions::default())?;
    let text = serde_json::to_string_pretty(&rep)?;
    match &a.report {
        Some(p) => {
            std::fs::write(p, &text).with_context(|| format!("writing {}", p.display()))?;
        }
        None => println!("{text}"),
    }
    eprintln!("{} sequences checked, {} divergences", rep.plans_checked, rep.divergences.len());
    if !rep.is_clean() {
        return Err(Exit(1).into());
    }
    Ok(())
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if let Some(Exit(c)) = e.downcast_ref::<Exit>() {
        return *c;
    }
    match e.downcast_ref::<Error>() {
        Some(Error::InvalidParameter(_) | Error::Validation { .. } | Error::Parse(_) | Error::TooLarge { .. }) => EXIT_VALIDATION,
        Some(Error::Solver(_)) => EXIT_LIMIT,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let r = match &cli.cmd {
        Cmd::Simulate(a) => simulate(a),
        Cmd::Control(a) => control(a),
        Cmd::Study(a) => study(a),
        Cmd::ExportMilp(a) => export_milp(a),
        Cmd::Verify(a) => verify(a),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if e.downcast_ref::<Exit>().is_none() {
                eprintln!("error: {e:#}");
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
