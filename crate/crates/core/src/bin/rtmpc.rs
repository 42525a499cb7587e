use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use rtmpc::adapt::AdaptationConfig;
use rtmpc::bench::{
    benchmark_controller, benchmark_formulation, benchmark_plant, scenario_segments, transient_scenario, PlantSpec,
    POWER_SEGMENT,
};
use rtmpc::metrics::{breakdown_entries, period_summary, reference_run, sweep_period, sweep_power, write_summary, CostBreakdown};
use rtmpc::mpc::{file, LtiModel, OperatingPoint};
use rtmpc::qp::PenaltyConfig;
use rtmpc::sim::{
    iterations_allowed, mismatch_ratio, run_closed_loop, BudgetMode, ComputeBudget, ControllerConfig, ForecastMode,
    PlantSim, RunRecord, Scenario, Schedule, SolverKind,
};
use rtmpc::Result;

#[derive(Parser)]
#[command(name = "rtmpc", version, about = "Iteration-limited MPC experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One closed-loop run.
    Simulate(Common),
    /// Both solvers across normalized computing powers.
    SweepPower {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_values_t = [0.25, 0.5, 1.0, 2.0, 4.0, 8.0])]
        powers: Vec<f64>,
    },
    /// Fixed updating periods against the adaptive rule, per scenario segment.
    SweepPeriod {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_values_t = [4, 8, 12, 16, 20])]
        qs: Vec<usize>,
    },
    /// ODE, capped active-set and unlimited active-set on one scenario.
    CompareSolvers(Common),
    /// Write the shipped heat-load scenarios.
    GenScenario {
        #[arg(long, default_value = "data")]
        out: PathBuf,
        #[arg(long, default_value_t = 60.0)]
        base: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Write the seeded benchmark plant.
    GenPlant {
        #[arg(long, default_value = "data/benchmark_plant.txt")]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Solver {
    Ode,
    ActiveSet,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Nominal,
    Hardware,
}

#[derive(Args, Clone)]
struct Common {
    /// Model file (default: generated benchmark plant).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Scenario CSV (`time_s,heat_load_W`; last row marks the end).
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "ode")]
    solver: Solver,
    /// Normalized computing power.
    #[arg(long, default_value_t = 1.0)]
    power: f64,
    /// Fixed iterations per window (default: what fits one model sample).
    #[arg(long)]
    q: Option<usize>,
    #[arg(long)]
    adaptive: bool,
    #[arg(long, default_value_t = 10)]
    q0: usize,
    #[arg(long, default_value_t = 2)]
    delta: usize,
    #[arg(long, default_value_t = 20)]
    q_max: usize,
    /// Penalty weight.
    #[arg(long, default_value_t = rtmpc::bench::BENCHMARK_PENALTY)]
    alpha: f64,
    /// Penalty exponent.
    #[arg(long, default_value_t = 2.0)]
    mu: f64,
    #[arg(long, default_value_t = 100)]
    horizon: usize,
    #[arg(long, value_enum, default_value = "nominal")]
    budget_mode: Mode,
    /// Forecast the load perfectly instead of holding the last measurement.
    #[arg(long)]
    perfect_forecast: bool,
    /// Repair each shifted hot start into the feasible set before iterating.
    #[arg(long)]
    repair_hot_start: bool,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

struct Setup {
    plant: PlantSim,
    ctrl: ControllerConfig,
    budget: ComputeBudget,
}

impl Common {
    fn model(&self) -> Result<(LtiModel, OperatingPoint)> {
        match &self.model {
            Some(p) => file::read(p),
            None => benchmark_plant(&PlantSpec::default()),
        }
    }

    fn setup(&self) -> Result<Setup> {
        let (model, op) = self.model()?;
        let form = benchmark_formulation(&model, &op, self.horizon)?;
        let mut ctrl = benchmark_controller(form, self.solver.into());
        ctrl.ode.penalty = PenaltyConfig::new(self.alpha, self.mu)?;
        ctrl.repair_hot_start = self.repair_hot_start;
        if self.perfect_forecast {
            ctrl.forecast = ForecastMode::Perfect;
        }
        let budget = ComputeBudget {
            mode: match self.budget_mode {
                Mode::Nominal => BudgetMode::Nominal,
                Mode::Hardware => BudgetMode::HardwareFaithful,
            },
            ..Default::default()
        }
        .with_power(self.power);
        Ok(Setup {
            plant: PlantSim::new(model),
            ctrl,
            budget,
        })
    }

    fn scenario_or(&self, fallback: Scenario) -> Result<Scenario> {
        match &self.scenario {
            Some(p) => Scenario::read_csv(p, stem(p)),
            None => Ok(fallback),
        }
    }

    fn schedule(&self, s: &Setup) -> Result<Schedule> {
        if self.adaptive {
            return Ok(Schedule::Adaptive {
                q0: self.q0,
                cfg: AdaptationConfig::new(self.q_max, self.delta)?,
            });
        }
        let q = match self.q {
            Some(q) => q,
            None => iterations_allowed(&s.budget, s.ctrl.solver, s.ctrl.formulation.model().sample_period)?,
        };
        Ok(Schedule::Fixed { q })
    }

    fn out_dir(&self) -> Result<&Path> {
        std::fs::create_dir_all(&self.out)?;
        Ok(&self.out)
    }
}

impl From<Solver> for SolverKind {
    fn from(s: Solver) -> Self {
        match s {
            Solver::Ode => SolverKind::Ode,
            Solver::ActiveSet => SolverKind::ActiveSet,
        }
    }
}

fn stem(p: &Path) -> String {
    p.file_stem().map_or("scenario".into(), |s| s.to_string_lossy().into_owned())
}

fn default_scenario() -> Scenario {
    scenario_segments(PlantSpec::default().baseline_load, PlantSpec::default().seed).remove(POWER_SEGMENT)
}

fn run_entries(prefix: &str, rec: &RunRecord) -> Vec<(String, String)> {
    let mut e = vec![
        (format!("{prefix}label"), rec.label.clone()),
        (format!("{prefix}windows"), rec.windows.len().to_string()),
        (format!("{prefix}clip_events"), rec.clip_events.to_string()),
        (format!("{prefix}rate_limited_events"), rec.rate_limited_events.to_string()),
    ];
    e.extend(breakdown_entries(prefix, &CostBreakdown::from_record(rec)));
    e
}

fn simulate(c: &Common) -> Result<()> {
    let s = c.setup()?;
    let scenario = c.scenario_or(default_scenario())?;
    let schedule = c.schedule(&s)?;
    let rec = run_closed_loop(&s.plant, &s.ctrl, &scenario, &s.budget, schedule)?;
    let dir = c.out_dir()?;
    rec.write_csv_file(&dir.join("run.csv"))?;
    let mut entries = vec![("scenario".to_string(), scenario.label.clone())];
    entries.extend(run_entries("", &rec));
    let worst = (0..rec.windows.len())
        .map(|k| (mismatch_ratio(&rec, k) - 1.0).abs())
        .fold(0.0, f64::max);
    entries.push(("max_mismatch_deviation".into(), worst.to_string()));
    write_summary(std::fs::File::create(dir.join("summary.txt"))?, &entries)?;
    info!("{} windows written to {}", rec.windows.len(), dir.display());
    Ok(())
}

fn power(c: &Common, powers: &[f64]) -> Result<()> {
    let s = c.setup()?;
    let scenario = c.scenario_or(default_scenario())?;
    let r = sweep_power(&s.plant, &s.ctrl, &scenario, &s.budget, powers)?;
    let dir = c.out_dir()?;
    r.write_csv_file(&dir.join("sweep_power.csv"))?;
    let entries = vec![
        ("scenario".to_string(), scenario.label.clone()),
        ("crossover".to_string(), r.crossover.map_or("none".into(), |v| v.to_string())),
    ];
    write_summary(std::fs::File::create(dir.join("summary.txt"))?, &entries)?;
    Ok(())
}

fn period(c: &Common, qs: &[usize]) -> Result<()> {
    let s = c.setup()?;
    let segments = match &c.scenario {
        Some(p) => vec![Scenario::read_csv(p, stem(p))?],
        None => scenario_segments(PlantSpec::default().baseline_load, PlantSpec::default().seed),
    };
    let adapt = AdaptationConfig::new(c.q_max, c.delta)?;
    let r = sweep_period(&s.plant, &s.ctrl, &segments, &s.budget, qs, &adapt, c.q0)?;
    let dir = c.out_dir()?;
    r.write_csv_file(&dir.join("sweep_period.csv"))?;
    let mut entries = Vec::new();
    for (seg, (q, best, adaptive)) in period_summary(&r) {
        entries.push((format!("{seg}.best_q"), q.to_string()));
        entries.push((format!("{seg}.best_fixed"), best.to_string()));
        entries.push((format!("{seg}.adaptive"), adaptive.to_string()));
        entries.push((format!("{seg}.adaptive_over_best"), (adaptive / best).to_string()));
    }
    write_summary(std::fs::File::create(dir.join("summary.txt"))?, &entries)?;
    Ok(())
}

fn compare(c: &Common) -> Result<()> {
    let s = c.setup()?;
    let scenario = c.scenario_or(transient_scenario(PlantSpec::default().baseline_load))?;
    let tau = s.ctrl.formulation.model().sample_period;
    let dir = c.out_dir()?;
    let mut entries = vec![("scenario".to_string(), scenario.label.clone())];
    for kind in [SolverKind::Ode, SolverKind::ActiveSet] {
        let mut ctrl = s.ctrl.clone();
        ctrl.solver = kind;
        let q = iterations_allowed(&s.budget, kind, tau)?;
        let rec = run_closed_loop(&s.plant, &ctrl, &scenario, &s.budget, Schedule::Fixed { q })?;
        rec.write_csv_file(&dir.join(format!("{}.csv", kind.as_str())))?;
        entries.extend(run_entries(&format!("{}.", kind.as_str()), &rec));
    }
    let rec = reference_run(&s.plant, &s.ctrl, &scenario, &s.budget)?;
    rec.write_csv_file(&dir.join("active_set_unlimited.csv"))?;
    entries.extend(run_entries("active_set_unlimited.", &rec));
    write_summary(std::fs::File::create(dir.join("summary.txt"))?, &entries)?;
    Ok(())
}

fn gen_scenario(out: &Path, base: f64, seed: u64) -> Result<()> {
    std::fs::create_dir_all(out)?;
    for s in scenario_segments(base, seed).iter().chain([&transient_scenario(base)]) {
        s.write_csv(&out.join(format!("scenario_{}.csv", s.label)))?;
    }
    Ok(())
}

fn gen_plant(out: &Path, seed: u64) -> Result<()> {
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let (model, op) = benchmark_plant(&PlantSpec {
        seed,
        ..Default::default()
    })?;
    file::write(out, &model, &op)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Simulate(c) => simulate(c),
        Command::SweepPower { common, powers } => power(common, powers),
        Command::SweepPeriod { common, qs } => period(common, qs),
        Command::CompareSolvers(c) => compare(c),
        Command::GenScenario { out, base, seed } => gen_scenario(out, *base, *seed),
        Command::GenPlant { out, seed } => gen_plant(out, *seed),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
