use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use semiclassical::classical::{
    accumulate_action, modified_action, solve_trajectory, ActionRegime, BuiltinPotential, PotentialSpec,
};
use semiclassical::direct::{physical_requirements, solve_physical, solve_rescaled, DirectRun, PacketSpec, Profile};
use semiclassical::envelope::{
    alpha1_envelope, solve_hartree_envelope, solve_linear_envelope, solve_smooth_supercritical_envelope, EnvelopeRun,
    QuadraticPotentialTrace, RunOptions, SupercriticalRegime,
};
use semiclassical::experiments::{self, AlphaName, AlphaSpec, ExperimentConfig, ExperimentKind};
use semiclassical::spectral::io::{fmt_f64, load_csv, save_csv};
use semiclassical::spectral::{BuiltinKernel, Grid1D, KernelSpec};
use semiclassical::{Error, Result};

#[derive(Parser)]
#[command(name = "semiclassical", version, about = "Semiclassical wave packets for 1D Hartree equations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Classical trajectory and action.
    Trajectory(TrajectoryArgs),
    /// Envelope equation in one of the regimes.
    Envelope(EnvelopeArgs),
    /// Exact problem in the rescaled or physical frame.
    Simulate(SimulateArgs),
    /// Convergence-rate sweep over eps.
    Converge(ExperimentArgs),
    /// Ehrenfest-time sweep.
    Ehrenfest(ExperimentArgs),
    /// Two-packet superposition sweep.
    Superpose(ExperimentArgs),
    /// Phase shift check for smooth kernels at alpha = 1.
    PhaseCheck(ExperimentArgs),
    /// First-moment ODE check for smooth kernels at alpha = 0.
    MomentCheck(ExperimentArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ActionKind {
    Alpha0,
    AlphaHalf,
}

#[derive(Args)]
struct TrajectoryArgs {
    #[arg(long, default_value = "cos:1,1")]
    potential: BuiltinPotential,
    #[arg(long, default_value_t = 1.0)]
    x0: f64,
    #[arg(long, default_value_t = 0.0)]
    xi0: f64,
    #[arg(long, default_value_t = 1.0)]
    t_end: f64,
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    /// Adds the modified action column for this regime.
    #[arg(long, value_enum)]
    modified: Option<ActionKind>,
    #[arg(long, default_value = "gaussian:1,1")]
    kernel: BuiltinKernel,
    #[arg(long, default_value_t = 1.0)]
    mass_sq: f64,
    #[arg(long, default_value_t = 1.0)]
    eps: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum, PartialEq)]
enum RegimeArg {
    Linear,
    Critical,
    Alpha1,
    AlphaHalf,
    Alpha0,
}

#[derive(Args)]
struct EnvelopeArgs {
    #[arg(long, value_enum, default_value = "critical")]
    regime: RegimeArg,
    #[arg(long, default_value = "homogeneous:1,0.5")]
    kernel: BuiltinKernel,
    #[arg(long, default_value = "cos:1,1")]
    potential: BuiltinPotential,
    /// Trajectory along which `Q(t)` is sampled.
    #[arg(long, default_value_t = 1.0)]
    x0: f64,
    #[arg(long, default_value_t = 0.0)]
    xi0: f64,
    /// `gaussian(center,momentum,width)` or a `y,re,im` CSV file.
    #[arg(long, default_value = "gaussian(0,0,1)")]
    a: String,
    #[arg(long, default_value_t = 1.0)]
    t_end: f64,
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    /// `n,L`
    #[arg(long, default_value = "512,12")]
    grid: String,
    #[arg(long, default_value_t = 100)]
    stride: usize,
    #[arg(long, default_value = "envelope")]
    out_prefix: PathBuf,
}

#[derive(Clone, Copy, ValueEnum, PartialEq)]
enum FrameArg {
    Rescaled,
    Physical,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum, default_value = "rescaled")]
    frame: FrameArg,
    #[arg(long, default_value_t = 1.0 / 16.0)]
    eps: f64,
    /// A number or `critical`.
    #[arg(long, default_value = "critical")]
    alpha: String,
    /// `x0,xi0[,center,momentum,width]`; repeat for two packets.
    #[arg(long = "packet", default_value = "1,0", allow_hyphen_values = true)]
    packets: Vec<String>,
    #[arg(long, default_value = "homogeneous:1,0.5")]
    kernel: BuiltinKernel,
    #[arg(long, default_value = "cos:1,1")]
    potential: BuiltinPotential,
    #[arg(long, default_value_t = 1.0)]
    t_end: f64,
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    /// `n,L`; the physical frame sizes its grid automatically when absent.
    #[arg(long)]
    grid: Option<String>,
    #[arg(long, default_value_t = 100)]
    stride: usize,
    #[arg(long, default_value = "simulate")]
    out_prefix: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    /// JSON configuration; built-in defaults otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides the configuration).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads, 0 for one per core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

fn parse_grid(s: &str) -> Result<Grid1D> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return Err(Error::Parse(format!("grid must be `n,L`, got `{s}`")));
    }
    let n = parts[0].parse::<usize>().map_err(|e| Error::Parse(format!("grid n: {e}")))?;
    let l = parts[1].parse::<f64>().map_err(|e| Error::Parse(format!("grid L: {e}")))?;
    Grid1D::new(n, l)
}

fn numbers(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| Error::Parse(format!("`{v}`: {e}"))))
        .collect()
}

fn parse_profile(s: &str) -> Result<Profile> {
    let s = s.trim();
    if let Some(inner) = s.strip_prefix("gaussian(").and_then(|r| r.strip_suffix(')')) {
        let v = numbers(inner)?;
        if v.len() != 3 {
            return Err(Error::Parse("gaussian takes (center,momentum,width)".into()));
        }
        return Ok(Profile::Gaussian {
            center: v[0],
            momentum: v[1],
            width: v[2],
        });
    }
    Ok(Profile::Sampled(load_csv(Path::new(s))?))
}

fn parse_packet(s: &str) -> Result<PacketSpec> {
    let v = numbers(s)?;
    let (center, momentum, width) = match v.len() {
        2 => (0.0, 0.0, 1.0),
        5 => (v[2], v[3], v[4]),
        _ => return Err(Error::Parse(format!("packet must be `x0,xi0[,center,momentum,width]`, got `{s}`"))),
    };
    Ok(PacketSpec {
        profile: Profile::Gaussian { center, momentum, width },
        x0: v[0],
        xi0: v[1],
    })
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(std::io::BufWriter::new(std::fs::File::create(path)?))
}

fn trajectory(args: TrajectoryArgs) -> Result<()> {
    let pot: PotentialSpec = args.potential.into();
    let mut path = accumulate_action(&solve_trajectory(&pot, args.x0, args.xi0, args.t_end, args.dt)?, &pot);
    if let Some(kind) = args.modified {
        let regime = match kind {
            ActionKind::Alpha0 => ActionRegime::Alpha0,
            ActionKind::AlphaHalf => ActionRegime::AlphaHalf { eps: args.eps },
        };
        path = modified_action(&path, &KernelSpec::try_from(args.kernel)?, args.mass_sq, regime)?;
    }
    let mut out: Box<dyn Write> = match &args.out {
        Some(p) => Box::new(create(p)?),
        None => Box::new(std::io::stdout().lock()),
    };
    let modified = path.modified().map(|m| &m.values);
    writeln!(out, "t,x,xi,S{}", if modified.is_some() { ",S_mod" } else { "" })?;
    let action = path.action().expect("action accumulated above");
    for i in 0..path.len() {
        let mut line = [path.times()[i], path.x()[i], path.xi()[i], action[i]].map(fmt_f64).join(",");
        if let Some(m) = modified {
            line.push(',');
            line.push_str(&fmt_f64(m[i]));
        }
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

fn write_envelope(run: &EnvelopeRun, prefix: &Path) -> Result<()> {
    let mut w = create(&with_suffix(prefix, "_diagnostics.csv"))?;
    writeln!(w, "t,mass,sigma1,sigma2,sigma3,sigma4,G,theta")?;
    for d in &run.diagnostics {
        let step = ((d.t / run.dt).round() as usize).min(run.moment_g.len() - 1);
        let row = [
            d.t,
            d.mass,
            d.sigma[0],
            d.sigma[1],
            d.sigma[2],
            d.sigma[3],
            run.moment_g[step],
            run.gauge_theta[step],
        ];
        writeln!(w, "{}", row.map(fmt_f64).join(","))?;
    }
    w.flush()?;
    for (i, f) in run.fields.iter().enumerate() {
        save_csv(f, &with_suffix(prefix, &format!("_snap{i:04}.csv")))?;
    }
    Ok(())
}

fn envelope(args: EnvelopeArgs) -> Result<()> {
    let pot: PotentialSpec = args.potential.into();
    let kernel = KernelSpec::try_from(args.kernel)?;
    let grid = parse_grid(&args.grid)?;
    let a = parse_profile(&args.a)?.to_field(grid);
    let path = solve_trajectory(&pot, args.x0, args.xi0, args.t_end, 0.5 * args.dt)?;
    let trace = QuadraticPotentialTrace::from_path(&path, &pot);
    let opts = RunOptions {
        snapshot_stride: args.stride,
        sigma_order: 4,
    };
    let (t, dt) = (args.t_end, args.dt);
    let run = match args.regime {
        RegimeArg::Linear => solve_linear_envelope(&a, &trace, t, dt, &opts)?,
        RegimeArg::Critical => solve_hartree_envelope(&a, &trace, &kernel, t, dt, &opts)?,
        RegimeArg::Alpha1 => {
            let k0 = kernel
                .smooth()
                .ok_or_else(|| Error::InvalidRegime("alpha1 needs a smooth kernel".into()))?
                .k0();
            alpha1_envelope(&solve_linear_envelope(&a, &trace, t, dt, &opts)?, k0, a.mass())?
        }
        RegimeArg::AlphaHalf | RegimeArg::Alpha0 => {
            let regime = if args.regime == RegimeArg::Alpha0 {
                SupercriticalRegime::Alpha0
            } else {
                SupercriticalRegime::AlphaHalf
            };
            solve_smooth_supercritical_envelope(&a, &trace, &kernel, a.mass(), regime, t, dt, &opts)?
        }
    };
    write_envelope(&run, &args.out_prefix)?;
    println!(
        "{} envelope: {} snapshots, mass drift {:.2e}",
        run.regime.label(),
        run.fields.len(),
        run.mass_drift()
    );
    Ok(())
}

fn write_direct(run: &DirectRun, prefix: &Path) -> Result<()> {
    let mut w = create(&with_suffix(prefix, "_diagnostics.csv"))?;
    writeln!(w, "t,mass")?;
    for (t, m) in run.times.iter().zip(&run.masses) {
        writeln!(w, "{},{}", fmt_f64(*t), fmt_f64(*m))?;
    }
    w.flush()?;
    for (i, f) in run.fields.iter().enumerate() {
        save_csv(f, &with_suffix(prefix, &format!("_snap{i:04}.csv")))?;
    }
    Ok(())
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let pot: PotentialSpec = args.potential.into();
    let kernel = KernelSpec::try_from(args.kernel)?;
    let alpha = if args.alpha.trim() == "critical" {
        AlphaSpec::Named(AlphaName::Critical).resolve(&kernel)
    } else {
        args.alpha
            .trim()
            .parse::<f64>()
            .map_err(|e| Error::Parse(format!("alpha: {e}")))?
    };
    let packets = args.packets.iter().map(|s| parse_packet(s)).collect::<Result<Vec<_>>>()?;
    let opts = RunOptions {
        snapshot_stride: args.stride,
        sigma_order: 0,
    };
    let run = match args.frame {
        FrameArg::Rescaled => {
            if packets.len() != 1 {
                return Err(Error::InvalidArgument("the rescaled frame follows exactly one packet".into()));
            }
            let p = &packets[0];
            let grid = parse_grid(args.grid.as_deref().unwrap_or("512,12"))?;
            let path = solve_trajectory(&pot, p.x0, p.xi0, args.t_end, 0.5 * args.dt)?;
            let a = p.profile.to_field(grid);
            solve_rescaled(&a, args.eps, alpha, &pot, &path, &kernel, args.t_end, args.dt, &opts)?
        }
        FrameArg::Physical => {
            let grid = match &args.grid {
                Some(g) => parse_grid(g)?,
                None => physical_requirements(&packets, args.eps, &pot, args.t_end, args.dt)?.grid()?,
            };
            solve_physical(&packets, args.eps, alpha, &pot, &kernel, args.t_end, args.dt, grid, &opts)?
        }
    };
    write_direct(&run, &args.out_prefix)?;
    println!(
        "grid n = {}, L = {}; {} snapshots, mass drift {:.2e}",
        run.grid.len(),
        run.grid.half_width(),
        run.fields.len(),
        run.mass_drift()
    );
    Ok(())
}

fn experiment(kind: ExperimentKind, args: ExperimentArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    config.kind = kind;
    if let Some(out) = args.out {
        config.out_dir = Some(out);
    }
    config.validate()?;
    let out = config.out_dir.clone();
    let json = match kind {
        ExperimentKind::Converge => {
            let r = experiments::run_convergence(&config, args.jobs)?;
            if let Some(dir) = &out {
                experiments::persist(dir, &config, &r.fit, &r.series)?;
            }
            serde_json::to_string_pretty(&r)?
        }
        ExperimentKind::PhaseCheck => {
            let r = experiments::run_alpha1_phase_discrimination(&config, args.jobs)?;
            if let Some(dir) = &out {
                experiments::persist(dir, &config, &r, &[])?;
            }
            serde_json::to_string_pretty(&r)?
        }
        ExperimentKind::Ehrenfest => {
            let r = experiments::run_ehrenfest(&config, args.jobs)?;
            if let Some(dir) = &out {
                experiments::persist(dir, &config, &r, &r.series)?;
            }
            serde_json::to_string_pretty(&r)?
        }
        ExperimentKind::Superpose => {
            let r = experiments::run_superposition(&config, args.jobs)?;
            if let Some(dir) = &out {
                experiments::persist(dir, &config, &r.fit, &r.series)?;
            }
            serde_json::to_string_pretty(&r)?
        }
        ExperimentKind::MomentCheck => {
            let r = experiments::run_moment_check(&config)?;
            if let Some(dir) = &out {
                experiments::persist(dir, &config, &r, &[])?;
            }
            serde_json::to_string_pretty(&r)?
        }
    };
    writeln!(std::io::stdout().lock(), "{json}")?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Trajectory(a) => trajectory(a),
        Command::Envelope(a) => envelope(a),
        Command::Simulate(a) => simulate(a),
        Command::Converge(a) => experiment(ExperimentKind::Converge, a),
        Command::Ehrenfest(a) => experiment(ExperimentKind::Ehrenfest, a),
        Command::Superpose(a) => experiment(ExperimentKind::Superpose, a),
        Command::PhaseCheck(a) => experiment(ExperimentKind::PhaseCheck, a),
        Command::MomentCheck(a) => experiment(ExperimentKind::MomentCheck, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
