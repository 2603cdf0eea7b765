use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use cbf_learn::bench::bench_solvers;
use cbf_learn::cbf::{ClassKLinear, LearnedCbf};
use cbf_learn::ddn::NetworkParams;
use cbf_learn::dynamics::State;
use cbf_learn::learning::{initial_network, train};
use cbf_learn::persistence::{
    export_contour, export_trajectory, load_weights, save_dataset, save_weights, MetricsWriter, RunManifest,
};
use cbf_learn::sim::{evaluate_contour, simulate_filtered, simulate_mpc, GridSpec, Trajectory};
use cbf_learn::task::{ExperimentConfig, SystemId, Task};

mod svg;

#[derive(Parser)]
#[command(
    name = "cbflearn",
    version,
    about = "Learn a control barrier function on top of a handcrafted one"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug)]
struct Common {
    /// integrator2d or ball_on_beam
    #[arg(long)]
    system: Option<String>,
    /// TOML config; keys not given fall back to the system defaults
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, env = "CBFLEARN_OUT", default_value = "out")]
    out: PathBuf,
    /// Class-K gain of the CBF-QP
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    gamma0: Option<f64>,
    #[arg(long = "beta-bar")]
    beta_bar: Option<f64>,
    #[arg(long = "eps-c")]
    eps_c: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the correction network with MPC-backed data collection
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Trajectories for the handcrafted, initialized and learned barriers
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        weights: PathBuf,
        /// Initial position (overrides eval.x_init)
        #[arg(long, allow_hyphen_values = true)]
        x_init: Option<f64>,
    },
    /// One learned-barrier trajectory per class-K gain
    SweepGamma {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        weights: PathBuf,
        /// Comma-separated gains (overrides eval.gammas)
        #[arg(long, value_delimiter = ',')]
        gammas: Vec<f64>,
    },
    /// Grid export and SVG of the barrier's zero level
    Contour {
        #[command(flatten)]
        common: Common,
        /// Omit for the handcrafted barrier alone
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, default_value_t = 61)]
        nx: usize,
        #[arg(long, default_value_t = 41)]
        ny: usize,
    },
    /// Per-solve latency of the CBF-QP and the MPC
    Bench {
        #[command(flatten)]
        common: Common,
        /// Omit to time the freshly initialized network
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        solves: usize,
    },
    /// Pure MPC and handcrafted-barrier trajectories
    Baseline {
        #[command(flatten)]
        common: Common,
        #[arg(long, allow_hyphen_values = true)]
        x_init: Option<f64>,
    },
}

/// Bad invocation, reported with exit code 2.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn resolve(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(path) => {
            if !path.is_file() {
                return Err(Usage(format!("config file not found: {}", path.display())).into());
            }
            let cfg = ExperimentConfig::load(path).map_err(|e| Usage(e.to_string()))?;
            if let Some(s) = &c.system {
                if SystemId::parse(s).map_err(|e| Usage(e.to_string()))? != cfg.system {
                    return Err(Usage(format!("--system {s} contradicts config system {}", cfg.system)).into());
                }
            }
            cfg
        }
        None => {
            let s = c
                .system
                .as_deref()
                .ok_or_else(|| Usage("either --system or --config is required".into()))?;
            ExperimentConfig::defaults(SystemId::parse(s).map_err(|e| Usage(e.to_string()))?)
        }
    };
    if let Some(v) = c.seed {
        cfg.seed = v;
    }
    if let Some(v) = c.gamma {
        cfg.train.gamma = v;
    }
    if let Some(v) = c.gamma0 {
        cfg.cbf.gamma0 = v;
    }
    if let Some(v) = c.beta_bar {
        cfg.cbf.beta_bar = v;
    }
    if let Some(v) = c.eps_c {
        cfg.train.eps_c = v;
    }
    if let Some(v) = c.epochs {
        cfg.train.epochs = v;
    }
    cfg.validate().map_err(|e| Usage(e.to_string()))?;
    if let Some(w) = cfg.train.weights().validate()? {
        eprintln!("warning: {w}");
    }
    Ok(cfg)
}

/// Collects artifacts written into the output directory.
struct Run {
    dir: PathBuf,
    name: &'static str,
    manifest: RunManifest,
}

impl Run {
    fn start(name: &'static str, cfg: &ExperimentConfig, dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut run = Self {
            dir: dir.to_path_buf(),
            name,
            manifest: RunManifest::new(name, cfg),
        };
        let cfg_name = format!("config-{name}.toml");
        std::fs::write(dir.join(&cfg_name), cfg.to_toml_string()?)?;
        run.manifest.add_artifact(dir, &cfg_name)?;
        Ok(run)
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    fn record(&mut self, rel: &str) -> Result<()> {
        Ok(self.manifest.add_artifact(&self.dir, rel)?)
    }

    fn trajectory(&mut self, rel: &str, t: &Trajectory) -> Result<()> {
        export_trajectory(t, &self.path(rel))?;
        self.record(rel)
    }

    fn finish(mut self) -> Result<()> {
        self.manifest.finish();
        let p = self.path(&format!("manifest-{}.json", self.name));
        self.manifest.save(&p)?;
        println!("wrote {}", p.display());
        Ok(())
    }
}

fn learned(task: &Task, net: NetworkParams) -> Result<LearnedCbf> {
    Ok(LearnedCbf::new(task.hand, net)?)
}

fn summary_header(names: &[String]) -> String {
    let mut cols = vec![
        "label".to_string(),
        "max_constraint".into(),
        "safe".into(),
        "min_h".into(),
    ];
    for n in names {
        cols.push(format!("min_{n}"));
        cols.push(format!("max_{n}"));
    }
    cols.join(",")
}

fn summary_row(task: &Task, label: &str, t: &Trajectory) -> (String, bool) {
    let worst = t
        .rows
        .iter()
        .map(|r| task.constraints.max_violation(&State::from_column_slice(&r.x)))
        .fold(f64::NEG_INFINITY, f64::max);
    let safe = worst <= 0.0;
    let mut cols = vec![
        label.to_string(),
        worst.to_string(),
        safe.to_string(),
        t.min_h().to_string(),
    ];
    for i in 0..t.state_names.len() {
        cols.push(t.min_component(i).to_string());
        cols.push(t.max_component(i).to_string());
    }
    (cols.join(","), safe)
}

fn cmd_train(c: &Common) -> Result<()> {
    let cfg = resolve(c)?;
    let task = Task::new(cfg.clone())?;
    let mut run = Run::start("train", &cfg, &c.out)?;
    let mut metrics = MetricsWriter::create(&run.path("metrics.ndjson"))?;
    let mut io_err = None;
    let out = train(&task, cfg.seed, |s| {
        if let Err(e) = metrics.write(s) {
            io_err.get_or_insert(e);
        }
        println!(
            "epoch {:>4}  loss {:.5}  safe {:>6}  unsafe {:>6}  mpc steps {:>4}  violations {}",
            s.epoch, s.loss.total, s.n_safe, s.n_unsafe, s.mpc_steps, s.violations
        );
    });
    drop(metrics);
    if let Some(e) = io_err {
        return Err(e.into());
    }
    let out = out.context("training aborted")?;
    run.record("metrics.ndjson")?;
    save_weights(&out.net, &run.path("weights.txt"))?;
    run.record("weights.txt")?;
    save_dataset(&out.dataset, task.dynamics.state_names(), &run.path("dataset.csv"))?;
    run.record("dataset.csv")?;
    let violations: usize = out.stats.iter().map(|s| s.violations).sum();
    let mpc: usize = out.stats.iter().map(|s| s.mpc_steps).sum();
    println!(
        "trained {} epochs on {}: violations {violations}, MPC steps {mpc}, safe samples {}, unsafe samples {}",
        out.stats.len(),
        cfg.system,
        out.dataset.n_safe(),
        out.dataset.n_unsafe()
    );
    run.finish()
}

fn cmd_eval(c: &Common, weights: &Path, x_init: Option<f64>) -> Result<()> {
    let cfg = resolve(c)?;
    let task = Task::new(cfg.clone())?;
    let net = load_weights(weights)?;
    let mut run = Run::start("eval", &cfg, &c.out)?;
    let x0 = task.initial_state(x_init.unwrap_or(cfg.eval.x_init));
    let alpha = task.training_alpha();
    let steps = cfg.eval.episode_length;

    let mut cases = vec![
        ("hand", LearnedCbf::hand_only(task.hand), true),
        ("init", learned(&task, initial_network(&task, cfg.seed)?)?, false),
        ("learned", learned(&task, net)?, true),
    ];
    if let Some(t) = task.true_cbf() {
        cases.push(("true", LearnedCbf::hand_only(t), true));
    }
    let names = task
        .dynamics
        .state_names()
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>();
    let mut summary = summary_header(&names) + "\n";
    let mut failed = Vec::new();
    for (label, cbf, must_be_safe) in &cases {
        let t = simulate_filtered(&task, cbf, alpha, &x0, steps).with_context(|| format!("{label} trajectory"))?;
        let (row, safe) = summary_row(&task, label, &t);
        println!("{row}");
        summary += &row;
        summary.push('\n');
        if !safe && *must_be_safe {
            failed.push(*label);
        }
        run.trajectory(&format!("traj_{label}.csv"), &t)?;
    }
    std::fs::write(run.path("eval_summary.csv"), summary)?;
    run.record("eval_summary.csv")?;
    run.finish()?;
    if !failed.is_empty() {
        bail!("safety violation in trajectories: {}", failed.join(", "));
    }
    Ok(())
}

fn cmd_sweep(c: &Common, weights: &Path, gammas: &[f64]) -> Result<()> {
    let cfg = resolve(c)?;
    let gammas = if gammas.is_empty() {
        cfg.eval.gammas.clone()
    } else {
        gammas.to_vec()
    };
    if gammas.is_empty() {
        return Err(Usage("gamma list is empty".into()).into());
    }
    let task = Task::new(cfg.clone())?;
    let cbf = learned(&task, load_weights(weights)?)?;
    let mut run = Run::start("sweep-gamma", &cfg, &c.out)?;
    let x0 = task.initial_state(cfg.eval.x_init);
    let names = task
        .dynamics
        .state_names()
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>();
    let mut summary = format!("gamma,{}\n", summary_header(&names));
    let mut failed = Vec::new();
    for g in gammas {
        let alpha = ClassKLinear::new(g).map_err(|e| Usage(e.to_string()))?;
        let t = simulate_filtered(&task, &cbf, alpha, &x0, cfg.eval.episode_length)?;
        let (row, safe) = summary_row(&task, &format!("gamma_{g}"), &t);
        println!("{row}");
        summary += &format!("{g},{row}\n");
        if !safe {
            failed.push(g.to_string());
        }
        run.trajectory(&format!("sweep_gamma_{g}.csv"), &t)?;
    }
    std::fs::write(run.path("sweep_summary.csv"), summary)?;
    run.record("sweep_summary.csv")?;
    run.finish()?;
    if !failed.is_empty() {
        bail!("safety violation for gamma: {}", failed.join(", "));
    }
    Ok(())
}

fn cmd_contour(c: &Common, weights: Option<&Path>, nx: usize, ny: usize) -> Result<()> {
    let cfg = resolve(c)?;
    let task = Task::new(cfg.clone())?;
    let cbf = match weights {
        Some(w) => learned(&task, load_weights(w)?)?,
        None => LearnedCbf::hand_only(task.hand),
    };
    let mut run = Run::start("contour", &cfg, &c.out)?;
    let (spec, refs) = match cfg.system {
        SystemId::Integrator2d => (
            GridSpec::integrator_default(nx, ny),
            vec![svg::Reference::Horizontal(cfg.constraints.velocity_max)],
        ),
        SystemId::BallOnBeam => (
            GridSpec {
                axis_x: 1,
                axis_y: 3,
                x_range: [-1.0, 1.0],
                y_range: [-3.5, 3.5],
                nx,
                ny,
                base: task.initial_state(0.0),
            },
            vec![
                svg::Reference::Vertical(cfg.constraints.beta_max),
                svg::Reference::Horizontal(cfg.constraints.betadot_min),
            ],
        ),
    };
    let grid = evaluate_contour(&cbf, task.dynamics.state_names(), &spec)?;
    export_contour(&grid, &run.path("contour.csv"))?;
    run.record("contour.csv")?;
    std::fs::write(
        run.path("contour.svg"),
        svg::render(&grid, &refs, "zero level of the barrier"),
    )?;
    run.record("contour.svg")?;
    if cfg.system == SystemId::Integrator2d {
        let dev = grid
            .xs
            .iter()
            .zip(grid.zero_crossings())
            .filter(|(x, _)| (-12.0..=-3.0).contains(*x))
            .map(|(_, z)| z.map_or(f64::INFINITY, |z| (z - cfg.constraints.velocity_max).abs()))
            .fold(0.0, f64::max);
        println!(
            "max |zero line - {}| over x in [-12, -3]: {dev}",
            cfg.constraints.velocity_max
        );
    }
    run.finish()
}

fn cmd_bench(c: &Common, weights: Option<&Path>, solves: usize) -> Result<()> {
    let cfg = resolve(c)?;
    if solves == 0 {
        return Err(Usage("--solves must be >= 1".into()).into());
    }
    let task = Task::new(cfg.clone())?;
    let net = match weights {
        Some(w) => load_weights(w)?,
        None => initial_network(&task, cfg.seed)?,
    };
    let cbf = learned(&task, net)?;
    let mut run = Run::start("bench", &cfg, &c.out)?;
    let rows = bench_solvers(&task, &cbf, task.training_alpha(), solves, cfg.seed)?;
    let mut csv = String::from("controller,solves,failures,median_s,p95_s\n");
    for r in &rows {
        println!(
            "{:<18} solves {:>6}  failures {}  median {:>10.3} us  p95 {:>10.3} us",
            r.controller,
            r.solves,
            r.failures,
            r.median_s * 1e6,
            r.p95_s * 1e6
        );
        csv += &format!(
            "{},{},{},{},{}\n",
            r.controller, r.solves, r.failures, r.median_s, r.p95_s
        );
    }
    std::fs::write(run.path("bench.csv"), csv)?;
    run.record("bench.csv")?;
    run.finish()?;
    let failures: usize = rows.iter().map(|r| r.failures).sum();
    if failures > 0 {
        bail!("{failures} solver failures");
    }
    Ok(())
}

fn cmd_baseline(c: &Common, x_init: Option<f64>) -> Result<()> {
    let cfg = resolve(c)?;
    let task = Task::new(cfg.clone())?;
    let mut run = Run::start("baseline", &cfg, &c.out)?;
    let x0 = task.initial_state(x_init.unwrap_or(cfg.eval.x_init));
    let hand = LearnedCbf::hand_only(task.hand);
    let names = task
        .dynamics
        .state_names()
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>();
    let mut summary = summary_header(&names) + "\n";
    let mpc = simulate_mpc(&task, &hand, &x0, cfg.eval.episode_length).context("MPC baseline")?;
    let hcbf = simulate_filtered(&task, &hand, task.training_alpha(), &x0, cfg.eval.episode_length)?;
    let mut failed = Vec::new();
    for (label, t) in [("mpc", &mpc), ("hand", &hcbf)] {
        let (row, safe) = summary_row(&task, label, t);
        println!("{row}");
        summary += &row;
        summary.push('\n');
        if !safe {
            failed.push(label);
        }
        run.trajectory(&format!("baseline_{label}.csv"), t)?;
    }
    std::fs::write(run.path("baseline_summary.csv"), summary)?;
    run.record("baseline_summary.csv")?;
    run.finish()?;
    if !failed.is_empty() {
        bail!("safety violation in baselines: {}", failed.join(", "));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train { common } => cmd_train(common),
        Command::Eval {
            common,
            weights,
            x_init,
        } => cmd_eval(common, weights, *x_init),
        Command::SweepGamma {
            common,
            weights,
            gammas,
        } => cmd_sweep(common, weights, gammas),
        Command::Contour {
            common,
            weights,
            nx,
            ny,
        } => cmd_contour(common, weights.as_deref(), *nx, *ny),
        Command::Bench {
            common,
            weights,
            solves,
        } => cmd_bench(common, weights.as_deref(), *solves),
        Command::Baseline { common, x_init } => cmd_baseline(common, *x_init),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<Usage>() => {
            eprintln!("error: {e}");
            eprintln!("run with --help for usage");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
