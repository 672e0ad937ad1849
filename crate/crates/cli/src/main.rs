use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use flocking::conditions::{
    check_necessary, check_shifted_sufficient, check_unshifted_sufficient, check_weight_conditions,
};
use flocking::config::{load_config, Amplitude, Auto, FamilyName, KernelSpec, RadiusSpec};
use flocking::dynamics::{simulate_with_trajectory, weight_matrix, RunReport, SimOptions, Trajectory};
use flocking::geometry::{connectivity_at_radius, connectivity_probability};
use flocking::ldp::solve_kbar;
use flocking::spectral::{spectral_report, EXACT_CHEEGER_MAX_N};
use flocking::sweep::{run_sweep, v_threshold_for_config, write_rows};
use flocking::{Error, RowMatrix, SimConfig, WeightMatrix};

#[derive(Parser)]
#[command(name = "flocking", version, about = "Flocking with local interaction kernels")]
struct Cli {
    /// Master seed; overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory for output files; tabular output goes to stdout without it.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Run one trial of a config: JSONL series plus a final report.
    Simulate {
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        trial: usize,
        /// Also write positions and velocities at every step as CSV.
        #[arg(long)]
        dump_trajectory: bool,
    },
    /// Phase sweep over (alpha, v') on the HalfSplit family.
    Sweep { config: PathBuf },
    /// Monte Carlo connectivity of the random geometric graph.
    RggConnectivity {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 2)]
        d: usize,
        /// One or more alpha values.
        #[arg(long, num_args = 1.., conflicts_with = "radius")]
        alpha: Vec<f64>,
        #[arg(long)]
        radius: Option<f64>,
        #[arg(long, default_value_t = 200)]
        trials: usize,
    },
    /// The degree level k̄_{n,δ} for one kernel.
    Kbar {
        #[command(flatten)]
        kernel: KernelArgs,
        #[arg(long)]
        n: usize,
    },
    /// k̄ over a grid of n.
    KbarSweep {
        #[command(flatten)]
        kernel: KernelArgs,
        #[arg(long, num_args = 1.., required = true)]
        n: Vec<usize>,
    },
    /// Per-step spectra of P(t) along a trajectory, or of one dumped matrix.
    Spectral {
        #[arg(long, conflicts_with = "matrix", required_unless_present = "matrix")]
        config: Option<PathBuf>,
        /// Dense P as CSV without header.
        #[arg(long)]
        matrix: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        trial: usize,
        /// Steps to analyse.
        #[arg(long, default_value_t = 50)]
        steps: usize,
    },
    /// Sufficient and necessary condition checks for one instance.
    Conditions {
        config: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        epsilon: f64,
        /// Shift for the shifted-kernel check; defaults to kernel.delta, else 0.05.
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long, default_value_t = 1.0)]
        c: f64,
        #[arg(long, default_value_t = 1.0)]
        c1: f64,
        #[arg(long, default_value_t = 0)]
        trial: usize,
    },
    /// Bisection on the initial speed of the config's velocity family.
    Vthreshold {
        config: PathBuf,
        #[arg(long)]
        v_lo: f64,
        #[arg(long)]
        v_hi: f64,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 6)]
        iterations: usize,
    },
}

#[derive(Args)]
struct KernelArgs {
    #[arg(long, value_enum, default_value_t = FamilyArg::Triangular)]
    family: FamilyArg,
    /// A number or "auto".
    #[arg(long, default_value = "auto")]
    amplitude: String,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    delta: f64,
    #[arg(long, default_value_t = 2)]
    d: usize,
    #[arg(long, group = "rad")]
    alpha: Option<f64>,
    #[arg(long, group = "rad")]
    radius: Option<f64>,
    #[arg(long, group = "rad")]
    beta: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Indicator,
    Triangular,
    PowerCap,
}

impl KernelArgs {
    fn spec(&self) -> Result<(KernelSpec, RadiusSpec)> {
        let amplitude = if self.amplitude == "auto" {
            Amplitude::Named(Auto::Auto)
        } else {
            Amplitude::Value(
                self.amplitude.parse().map_err(|_| config_error("--amplitude", "expected a number or auto"))?,
            )
        };
        let family = match self.family {
            FamilyArg::Indicator => FamilyName::Indicator,
            FamilyArg::Triangular => FamilyName::Triangular,
            FamilyArg::PowerCap => FamilyName::PowerCap,
        };
        let radius = RadiusSpec { r: self.radius, alpha: self.alpha, beta: self.beta };
        Ok((KernelSpec { family, amplitude, gamma: self.gamma, samples: None, delta: self.delta }, radius))
    }
}

#[derive(Serialize)]
struct KbarRecord {
    n: usize,
    d: usize,
    delta: f64,
    radius: f64,
    amplitude: f64,
    kbar: f64,
    thetabar: Option<f64>,
    mean_xi: f64,
    degenerate: bool,
    tilted_residual: f64,
    legendre_residual: f64,
}

fn kbar_record(args: &KernelArgs, n: usize) -> Result<KbarRecord> {
    let (spec, radius) = args.spec()?;
    let r = radius.resolve(n, args.d)?;
    let base = spec.build(n, args.d, r)?;
    let k = if args.delta > 0.0 { base.shifted(args.delta)? } else { base.clone() };
    let s = solve_kbar(&k, n, args.d)?;
    Ok(KbarRecord {
        n,
        d: args.d,
        delta: args.delta,
        radius: r,
        amplitude: base.amplitude(),
        kbar: s.kbar,
        thetabar: s.thetabar,
        mean_xi: s.mean_xi,
        degenerate: s.degenerate,
        tilted_residual: s.residuals.tilted,
        legendre_residual: s.residuals.legendre,
    })
}

#[derive(Serialize)]
struct SeriesLine {
    t: usize,
    a_t: f64,
    max_pair: f64,
    delta_n: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda_bar: Option<f64>,
}

#[derive(Serialize)]
struct SpectralRow {
    t: usize,
    lambda2: f64,
    lambdan: f64,
    lambda_bar: f64,
    phi_sweep: f64,
    phi_exact: Option<f64>,
}

fn config_error(path: &str, message: &str) -> Error {
    Error::Config { path: path.into(), line: None, message: message.into() }
}

fn load(path: &Path, seed: Option<u64>) -> Result<SimConfig> {
    let mut cfg = load_config(path).map_err(|e| match e {
        Error::Io(io) => config_error(&path.display().to_string(), &io.to_string()),
        other => other,
    })?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

struct Output {
    dir: Option<PathBuf>,
    format: Format,
}

impl Output {
    /// A file under the output directory, or stdout.
    fn sink(&self, name: &str) -> Result<Box<dyn Write>> {
        Ok(match &self.dir {
            Some(d) => Box::new(BufWriter::new(File::create(d.join(name))?)),
            None => Box::new(io::stdout().lock()),
        })
    }

    fn table<T: Serialize>(&self, stem: &str, rows: &[T]) -> Result<()> {
        match self.format {
            Format::Csv => write_rows(self.sink(&format!("{stem}.csv"))?, rows)?,
            Format::Json => {
                let mut w = self.sink(&format!("{stem}.json"))?;
                serde_json::to_writer_pretty(&mut w, rows)?;
                writeln!(w)?;
            }
        }
        Ok(())
    }

    fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut w = self.sink(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        writeln!(w)?;
        Ok(())
    }

    /// The output directory, defaulting to the working directory, for
    /// commands that always write several files.
    fn dir(&self) -> PathBuf {
        self.dir.clone().unwrap_or_else(|| PathBuf::from("."))
    }
}

fn write_series(path: &Path, report: &RunReport) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let lambda: Option<Vec<f64>> = report.spectral.as_ref().map(|s| s.steps.iter().map(|x| x.lambda_bar).collect());
    for t in 0..report.max_pair_series.len() {
        let line = SeriesLine {
            t,
            a_t: report.spread_series[t],
            max_pair: report.max_pair_series[t],
            delta_n: report.delta_series[t],
            lambda_bar: lambda.as_ref().map(|l| l[t]),
        };
        serde_json::to_writer(&mut w, &line)?;
        writeln!(w)?;
    }
    Ok(())
}

fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let d = traj.x.first().map_or(0, |x| x.ncols());
    let head: Vec<String> = (0..d).map(|k| format!("x{k}")).chain((0..d).map(|k| format!("v{k}"))).collect();
    writeln!(w, "t,agent,{}", head.join(","))?;
    for (t, (x, v)) in traj.x.iter().zip(&traj.v).enumerate() {
        for i in 0..x.nrows() {
            let vals: Vec<String> = x.row(i).iter().chain(v.row(i)).map(|a| a.to_string()).collect();
            writeln!(w, "{t},{i},{}", vals.join(","))?;
        }
    }
    Ok(())
}

fn read_dense(path: &Path) -> Result<RowMatrix> {
    let text = std::fs::read_to_string(path)?;
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split(',').map(|x| x.trim().parse::<f64>()).collect::<Result<Vec<_>, _>>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("parsing {}", path.display()))?;
    match RowMatrix::from_rows(&rows) {
        Some(m) => Ok(m),
        None => bail!("{}: rows have different lengths", path.display()),
    }
}

fn spectral_row(p: &WeightMatrix, t: usize) -> Result<SpectralRow> {
    let rep = spectral_report(p)?;
    let n = rep.eigenvalues.len();
    Ok(SpectralRow {
        t,
        lambda2: rep.eigenvalues.get(1).copied().unwrap_or(f64::NAN),
        lambdan: rep.eigenvalues[n - 1],
        lambda_bar: rep.lambda_bar,
        phi_sweep: rep.phi_sweep,
        phi_exact: rep.phi_exact,
    })
}

fn run(cli: Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global()?;
    }
    let out = Output { dir: cli.out_dir.clone(), format: cli.format };
    if let Some(d) = &out.dir {
        std::fs::create_dir_all(d)?;
    }
    let seed = cli.seed;
    match cli.command {
        Command::Simulate { config, trial, dump_trajectory } => {
            let cfg = load(&config, seed)?;
            let mut inst = cfg.instance(cfg.trial_seed(trial))?;
            inst.options.record_trajectory = dump_trajectory;
            let (report, traj) = simulate_with_trajectory(inst.state, &inst.kernel, &inst.options)?;
            let dir = out.dir();
            write_series(&dir.join("series.jsonl"), &report)?;
            if dump_trajectory {
                write_trajectory(&dir.join("trajectory.csv"), &traj)?;
            }
            std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
            println!(
                "flocked={} stop={:?} steps={} final_max_pair={:e}",
                report.flocked, report.stop, report.steps, report.final_max_pair
            );
        }
        Command::Sweep { config } => {
            let cfg = load(&config, seed)?;
            let spec = cfg.sweep.clone().unwrap_or_default();
            let result = run_sweep(&cfg, &spec)?;
            let dir = out.dir();
            result.persist(dir.join("sweep"))?;
            result.emit_plot(dir.join("sweep.svg"))?;
            for d in result.demarcation() {
                match (d.v_prime, d.bracket) {
                    (Some(v), Some((a, b))) => println!("alpha={} v'_c~{v:.4} in [{a}, {b}]", d.alpha),
                    _ => println!("alpha={} no 0.5 crossing", d.alpha),
                }
            }
        }
        Command::RggConnectivity { n, d, alpha, radius, trials } => {
            let s = seed.unwrap_or(1);
            let rows = match radius {
                Some(r) => vec![connectivity_at_radius(n, d, r, trials, s)?],
                None if alpha.is_empty() => bail!(config_error("--alpha", "give --alpha or --radius")),
                None => {
                    alpha.iter().map(|&a| connectivity_probability(n, d, a, trials, s)).collect::<Result<_, _>>()?
                }
            };
            out.table("rgg_connectivity", &rows)?;
        }
        Command::Kbar { kernel, n } => out.json("kbar.json", &kbar_record(&kernel, n)?)?,
        Command::KbarSweep { kernel, n } => {
            let rows = n.iter().map(|&m| kbar_record(&kernel, m)).collect::<Result<Vec<_>>>()?;
            out.table("kbar_sweep", &rows)?;
        }
        Command::Spectral { config, matrix, trial, steps } => {
            let rows = if let Some(m) = matrix {
                vec![spectral_row(&WeightMatrix::from_dense(&read_dense(&m)?)?, 0)?]
            } else {
                let cfg = load(config.as_deref().expect("required by clap"), seed)?;
                let inst = cfg.instance(cfg.trial_seed(trial))?;
                let opts = SimOptions { t_max: steps, record_trajectory: true, ..inst.options.clone() };
                let (_, traj) = simulate_with_trajectory(inst.state, &inst.kernel, &opts)?;
                traj.x
                    .iter()
                    .enumerate()
                    .map(|(t, x)| spectral_row(&weight_matrix(x, &inst.kernel), t))
                    .collect::<Result<Vec<_>>>()?
            };
            if rows.iter().any(|r| r.phi_exact.is_none()) {
                eprintln!("phi_exact omitted above n = {EXACT_CHEEGER_MAX_N}");
            }
            out.table("spectral", &rows)?;
        }
        Command::Conditions { config, epsilon, delta, c, c1, trial } => {
            let cfg = load(&config, seed)?;
            let inst = cfg.instance(cfg.trial_seed(trial))?;
            let (n, d) = (cfg.n, cfg.d);
            let delta = delta.unwrap_or(if cfg.kernel.delta > 0.0 { cfg.kernel.delta } else { 0.05 });
            let v0 = &inst.state.v;
            let report = serde_json::json!({
                "shifted_sufficient": check_shifted_sufficient(&inst.kernel, n, d, delta, epsilon, v0, c)?,
                "unshifted_sufficient": check_unshifted_sufficient(&inst.kernel, n, d, epsilon, v0, c, c1)?,
                "weight_conditions": check_weight_conditions(&inst.kernel, n, d, epsilon)?,
                "necessary": check_necessary(&inst.kernel, n, d)?,
            });
            out.json("conditions.json", &report)?;
        }
        Command::Vthreshold { config, v_lo, v_hi, trials, iterations } => {
            let cfg = load(&config, seed)?;
            let t = v_threshold_for_config(&cfg, v_lo, v_hi, trials, iterations)?;
            if let Some(w) = &t.warning {
                eprintln!("warning: {w}");
            }
            out.table("vthreshold_curve", &t.curve)?;
            let summary = serde_json::json!({
                "interval": t.interval,
                "warning": t.warning,
                "note": "upper bound on the critical velocity for the tested velocity family only",
            });
            match &out.dir {
                Some(_) => out.json("vthreshold.json", &summary)?,
                None => eprintln!("{}", serde_json::to_string(&summary)?),
            }
        }
    }
    Ok(())
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::Config { .. }) => 2,
        Some(Error::Convergence(_)) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
