use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use mrpchan::config::{Model, ModelConfig, ModelSpec, SCHEMA_VERSION};
use mrpchan::limits::mir_channel;
use mrpchan::models::{erlang_channel, independent_channel, poisson_channel, random_rate_poisson, Channel, GeneModelParams, LeakageModelParams};
use mrpchan::renewal::{exact_mi, renewal_density_exact, MrpView};
use mrpchan::simulate::{binary_prior, mc_mi_dynamic, mc_mi_static, simulate_mrp, stream, McEstimate, YInit};
use mrpchan::ExpPoly;
use rand::Rng;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Core(#[from] mrpchan::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Core(e) if e.is_input_error() => 2,
            _ => 1,
        }
    }

    fn kind(&self) -> &'static str {
        match self.code() {
            2 => "input",
            _ => "numeric",
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn input<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Input(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Builtin {
    /// Repressed promoter, static input over both concentrations.
    Gene,
    /// Repressed promoter at the low concentration.
    GeneR0,
    /// Repressed promoter at the high concentration.
    GeneR1,
    Leakage,
    Poisson,
    Erlang,
    Independent,
    RandomRatePoisson,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Which {
    FTau,
    FilteredKernel,
    RenewalDensity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Mode {
    Exact,
    Mc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum YInitArg {
    Arrival,
}

#[derive(Debug, Parser)]
#[command(name = "mrpchan", version, about = "Mutual information of Markov renewal channels")]
struct Cli {
    /// Built-in model.
    #[arg(long, global = true, conflicts_with = "config")]
    model: Option<Builtin>,
    /// JSON model file (`"schema": 1`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for Monte Carlo; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Inter-arrival, filtered-kernel or renewal densities on a grid.
    Density {
        #[arg(long, value_enum, default_value = "f-tau")]
        which: Which,
        #[arg(long = "T")]
        t: f64,
        /// Grid step; defaults to the shortest mean sojourn over 200.
        #[arg(long)]
        h: Option<f64>,
    },
    /// I(X; Y) on [0, T], one result per horizon.
    Mi {
        #[arg(long, value_enum, default_value = "exact")]
        mode: Mode,
        #[arg(long = "T", value_delimiter = ',', required = true)]
        t: Vec<f64>,
        #[arg(long = "n-traj", default_value_t = 10_000)]
        n_traj: usize,
        #[arg(long = "y-init", value_enum, default_value = "arrival")]
        y_init: YInitArg,
    },
    /// Long-time information rate.
    Mir,
    /// I(C; Y) of a static input over a prior grid and horizons.
    Contour {
        /// `start:step:end` or a comma list.
        #[arg(long = "pi-grid", default_value = "0:0.05:1")]
        pi_grid: String,
        #[arg(long = "T", value_delimiter = ',', required = true)]
        t: Vec<f64>,
        #[arg(long = "n-traj", default_value_t = 10_000)]
        n_traj: usize,
    },
    /// Sample trajectories of the full process.
    Simulate {
        #[arg(long = "T")]
        t: f64,
        #[arg(long = "n-traj", default_value_t = 1)]
        n_traj: usize,
    },
}

/// Everything needed to reproduce an output file.
#[derive(Debug, Serialize)]
struct RunConfig {
    schema: u32,
    tool: &'static str,
    version: &'static str,
    command: Value,
    model_source: Value,
    model: ModelConfig,
    seed: u64,
}

struct Run {
    config: RunConfig,
    hash: String,
}

impl Run {
    fn meta(&self) -> Value {
        json!({
            "tool": self.config.tool,
            "version": self.config.version,
            "seed": self.config.seed,
            "config_sha256": self.hash,
            "run": self.config,
        })
    }

    fn csv_header(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "# {} {}", self.config.tool, self.config.version)?;
        writeln!(w, "# config_sha256={}", self.hash)?;
        writeln!(w, "# seed={}", self.config.seed)?;
        writeln!(w, "# run={}", serde_json::to_string(&self.config).expect("run config serializes"))
    }
}

fn builtin_config(b: Builtin) -> CliResult<ModelConfig> {
    let named = |name: &str, model| ModelConfig { schema: SCHEMA_VERSION, name: Some(name.into()), model };
    let gene = GeneModelParams::default();
    Ok(match b {
        Builtin::Gene => named("gene", ModelSpec::Gene { params: gene, concentration: None }),
        Builtin::GeneR0 => named("gene-r0", ModelSpec::Gene { params: gene, concentration: Some(gene.r0) }),
        Builtin::GeneR1 => named("gene-r1", ModelSpec::Gene { params: gene, concentration: Some(gene.r1) }),
        Builtin::Leakage => named("leakage", ModelSpec::Leakage { params: LeakageModelParams::default() }),
        Builtin::Poisson => ModelConfig::from_channel(&poisson_channel(1.0)?),
        Builtin::Erlang => ModelConfig::from_channel(&erlang_channel(1.0)?),
        Builtin::Independent => ModelConfig::from_channel(&independent_channel(0.05, 0.08, 0.5)?),
        Builtin::RandomRatePoisson => ModelConfig::from_modulated(&random_rate_poisson(1.0, 10.0, 0.5)?),
    })
}

fn load_model(cli: &Cli) -> CliResult<(ModelConfig, Value)> {
    match (&cli.model, &cli.config) {
        (Some(b), None) => Ok((builtin_config(*b)?, json!({ "builtin": b }))),
        (None, Some(path)) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
            Ok((ModelConfig::from_json(&text)?, json!({ "file": path })))
        }
        (None, None) => input("one of --model or --config is required"),
        (Some(_), Some(_)) => input("--model and --config are exclusive"),
    }
}

fn command_json(c: &Command) -> Value {
    match c {
        Command::Density { which, t, h } => json!({ "name": "density", "which": which, "T": t, "h": h }),
        Command::Mi { mode, t, n_traj, y_init } => json!({ "name": "mi", "mode": mode, "T": t, "n_traj": n_traj, "y_init": y_init }),
        Command::Mir => json!({ "name": "mir" }),
        Command::Contour { pi_grid, t, n_traj } => json!({ "name": "contour", "pi_grid": pi_grid, "T": t, "n_traj": n_traj }),
        Command::Simulate { t, n_traj } => json!({ "name": "simulate", "T": t, "n_traj": n_traj }),
    }
}

fn parse_pi_grid(s: &str) -> CliResult<Vec<f64>> {
    let num = |x: &str| x.trim().parse::<f64>().map_err(|_| CliError::Input(format!("bad number {x:?} in --pi-grid")));
    let grid = if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return input("--pi-grid range must be start:step:end");
        }
        let (a, step, b) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if !(step > 0.0) || b < a {
            return input("--pi-grid needs a positive step and start <= end");
        }
        let n = ((b - a) / step + 1e-9).floor() as usize;
        (0..=n).map(|i| if i == n && ((a + step * i as f64) - b).abs() < 1e-9 { b } else { a + step * i as f64 }).collect()
    } else {
        s.split(',').map(num).collect::<CliResult<Vec<_>>>()?
    };
    if grid.is_empty() || grid.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return input("--pi-grid values must lie in [0, 1]");
    }
    Ok(grid)
}

fn check_horizons(t: &[f64]) -> CliResult<()> {
    if t.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return input("--T values must be finite and non-negative");
    }
    Ok(())
}

/// Named channels of a model; series are labelled by these names.
fn channels(cfg: &ModelConfig, model: &Model) -> Vec<(String, Channel)> {
    match (model, &cfg.model) {
        (Model::Channel(c), ModelSpec::Gene { concentration: Some(r), .. }) => vec![(format!("R={r}"), c.clone())],
        (Model::Modulated(m), ModelSpec::Gene { params, .. }) => {
            let r = [params.r0, params.r1];
            m.blocks.iter().zip(r).map(|((_, c), r)| (format!("R={r}"), c.clone())).collect()
        }
        (Model::Channel(c), _) => vec![(c.name.clone(), c.clone())],
        (Model::Modulated(m), _) => m.blocks.clone(),
    }
}

fn default_h(chans: &[(String, Channel)]) -> f64 {
    let m = chans
        .iter()
        .flat_map(|(_, c)| (0..c.kernel.len()).map(move |y| c.kernel.mean_sojourn(y)))
        .filter(|m| m.is_finite() && *m > 0.0)
        .fold(f64::INFINITY, f64::min);
    if m.is_finite() {
        m / 200.0
    } else {
        0.01
    }
}

/// Prints to stdout; a closed pipe is not an error.
fn stdout_line(s: &str) {
    let _ = writeln!(std::io::stdout().lock(), "{s}");
}

fn create(out: &Path, name: &str) -> CliResult<BufWriter<fs::File>> {
    fs::create_dir_all(out)?;
    Ok(BufWriter::new(fs::File::create(out.join(name))?))
}

fn write_json(out: &Path, name: &str, v: &Value) -> CliResult<()> {
    let mut w = create(out, name)?;
    serde_json::to_writer_pretty(&mut w, v).expect("json serializes");
    writeln!(w)?;
    w.flush()?;
    stdout_line(&serde_json::to_string_pretty(v).expect("json serializes"));
    Ok(())
}

fn density_series(c: &Channel, label: &str, which: Which) -> CliResult<Vec<(String, ExpPoly)>> {
    let named = |prefix: &str, view: &MrpView, y: usize, z: usize, d: ExpPoly| {
        let s = view.kernel.states();
        let name = if view.kernel.len() == 1 { prefix.to_string() } else { format!("{prefix}:{}->{}", s[y], s[z]) };
        (name, d)
    };
    let out = match which {
        Which::FTau => {
            let v = MrpView::output(c)?;
            let n = v.kernel.len();
            (0..n).flat_map(|y| (0..n).map(move |z| (y, z))).map(|(y, z)| named(label, &v, y, z, v.kernel.density(y, z).clone())).collect()
        }
        Which::FilteredKernel => {
            let v = MrpView::joint(c)?;
            let n = v.kernel.len();
            (0..n).flat_map(|y| (0..n).map(move |z| (y, z))).map(|(y, z)| named(label, &v, y, z, v.kernel.density(y, z).clone())).collect()
        }
        Which::RenewalDensity => {
            let mut series = Vec::new();
            for (part, v) in [("joint", MrpView::joint(c)?), ("output", MrpView::output(c)?)] {
                let r = renewal_density_exact(&v.kernel, &v.eta)?;
                for (z, d) in r.into_iter().enumerate() {
                    series.push((format!("{label}:{part}:{}", v.kernel.states()[z]), d));
                }
            }
            series
        }
    };
    Ok(out)
}

fn cmd_density(run: &Run, chans: &[(String, Channel)], out: &Path, which: Which, t_max: f64, h: Option<f64>) -> CliResult<()> {
    let h = h.unwrap_or_else(|| default_h(chans));
    if !(h > 0.0) || !(t_max > 0.0) || !h.is_finite() || !t_max.is_finite() {
        return input("--T and --h must be positive");
    }
    let n = (t_max / h).round() as usize;
    if n > 10_000_000 {
        return input("grid has more than 1e7 points; increase --h");
    }
    let mut series = Vec::new();
    for (label, c) in chans {
        series.extend(density_series(c, label, which)?);
    }
    let mut w = create(out, "density.csv")?;
    run.csv_header(&mut w)?;
    writeln!(w, "t,series,value")?;
    for (name, d) in &series {
        for i in 0..=n {
            let t = (i as f64 * h).min(t_max);
            writeln!(w, "{t},{name},{}", d.eval(t))?;
        }
    }
    w.flush()?;
    info!("wrote {} series of {} points", series.len(), n + 1);
    stdout_line(&out.join("density.csv").display().to_string());
    Ok(())
}

fn estimate_json(e: &McEstimate) -> Value {
    json!({ "mi": e.value, "se": e.se, "n": e.n, "discarded": e.discarded })
}

fn cmd_mi(run: &Run, model: &Model, out: &Path, mode: Mode, t: &[f64], n: usize, seed: u64) -> CliResult<()> {
    check_horizons(t)?;
    let results: Vec<Value> = match (mode, model) {
        (Mode::Exact, Model::Channel(c)) => exact_mi(c, t)?
            .into_iter()
            .map(|r| json!({ "T": r.t, "mi": r.mi, "breakdown": { "joint_term": r.joint_term, "output_term": r.output_term } }))
            .collect(),
        (Mode::Exact, Model::Modulated(_)) => {
            return Err(mrpchan::Error::Capability("exact MI of a statically modulated channel is not available; use --mode mc".into()).into())
        }
        (Mode::Mc, Model::Channel(c)) => t
            .iter()
            .map(|&ti| Ok(json!({ "T": ti, "estimate": estimate_json(&mc_mi_dynamic(c, ti, n, seed, YInit::Arrival)?) })))
            .collect::<CliResult<_>>()?,
        (Mode::Mc, Model::Modulated(m)) => mc_mi_static(m, &[m.prior.clone()], t, n, seed)?
            .remove(0)
            .into_iter()
            .zip(t)
            .map(|(e, ti)| json!({ "T": ti, "estimate": estimate_json(&e) }))
            .collect(),
    };
    let v = json!({ "schema": SCHEMA_VERSION, "kind": "mi", "mode": mode, "results": results, "meta": run.meta() });
    write_json(out, "mi.json", &v)
}

fn cmd_mir(run: &Run, model: &Model, out: &Path) -> CliResult<()> {
    let Model::Channel(c) = model else {
        return Err(mrpchan::Error::Capability("the rate of a static input vanishes; use a dynamic channel".into()).into());
    };
    let r = mir_channel(c)?;
    let v = json!({
        "schema": SCHEMA_VERSION,
        "kind": "mir",
        "mir": r.mir,
        "joint_term": r.joint_term,
        "output_term": r.output_term,
        "per_state": r.joint_terms,
        "formula": r.formula,
        "meta": run.meta(),
    });
    write_json(out, "mir.json", &v)
}

fn cmd_contour(run: &Run, model: &Model, out: &Path, pis: &[f64], t: &[f64], n: usize, seed: u64) -> CliResult<()> {
    check_horizons(t)?;
    let Model::Modulated(m) = model else {
        return input("contour needs a statically modulated model");
    };
    if m.blocks.len() != 2 {
        return input("contour needs a binary static input");
    }
    let priors: Vec<Vec<f64>> = pis.iter().map(|&p| binary_prior(p)).collect();
    let grid = mc_mi_static(m, &priors, t, n, seed)?;
    let mut w = create(out, "contour.csv")?;
    run.csv_header(&mut w)?;
    writeln!(w, "T,pi,mi,se")?;
    let mut argmax = Vec::new();
    for (j, &tj) in t.iter().enumerate() {
        let mut best = 0;
        for (i, &p) in pis.iter().enumerate() {
            let e = &grid[i][j];
            writeln!(w, "{tj},{p},{},{}", e.value, e.se)?;
            if e.value > grid[best][j].value {
                best = i;
            }
        }
        argmax.push(json!({ "T": tj, "pi": pis[best], "mi": grid[best][j].value, "se": grid[best][j].se }));
    }
    w.flush()?;
    let last = argmax.last().cloned().unwrap_or(Value::Null);
    let v = json!({
        "schema": SCHEMA_VERSION,
        "kind": "contour",
        "csv": "contour.csv",
        "argmax": argmax,
        "argmax_pi": last.get("pi").cloned().unwrap_or(Value::Null),
        "meta": run.meta(),
    });
    write_json(out, "contour.json", &v)
}

fn cmd_simulate(run: &Run, model: &Model, out: &Path, horizon: f64, n: usize, seed: u64) -> CliResult<()> {
    check_horizons(&[horizon])?;
    let dir = out.join("trajectories");
    let mut index = create(out, "trajectories.csv")?;
    run.csv_header(&mut index)?;
    writeln!(index, "index,file,block,events,absorbed")?;
    for i in 0..n {
        let (block, c) = match model {
            Model::Channel(c) => (String::new(), c),
            Model::Modulated(m) => {
                let u: f64 = stream(seed, u64::MAX - i as u64).random();
                let mut acc = 0.0;
                let j = m.prior.iter().position(|&p| {
                    acc += p;
                    u < acc
                });
                let (label, c) = &m.blocks[j.unwrap_or(m.blocks.len() - 1)];
                (label.clone(), c)
            }
        };
        let z0 = c.kernel.index_of(&c.start).ok_or_else(|| CliError::Input(format!("unknown start state {}", c.start)))?;
        let tr = simulate_mrp(&c.kernel, z0, horizon, seed.wrapping_add(i as u64))?;
        let name = format!("traj_{i:05}.csv");
        let mut w = create(&dir, &name)?;
        run.csv_header(&mut w)?;
        writeln!(w, "# absorbed={}", tr.absorbed)?;
        tr.write_csv(&mut w)?;
        w.flush()?;
        writeln!(index, "{i},trajectories/{name},{block},{},{}", tr.events.len(), tr.absorbed)?;
    }
    index.flush()?;
    stdout_line(&out.join("trajectories.csv").display().to_string());
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return input("--threads must be positive");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Input(format!("thread pool: {e}")))?;
    }
    let (cfg, source) = load_model(&cli)?;
    let model = cfg.build()?;
    let config = RunConfig {
        schema: SCHEMA_VERSION,
        tool: "mrpchan",
        version: VERSION,
        command: command_json(&cli.command),
        model_source: source,
        model: cfg.clone(),
        seed: cli.seed,
    };
    let digest = Sha256::digest(serde_json::to_vec(&config).expect("run config serializes"));
    let hash: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    let run = Run { config, hash };
    info!("config sha256 {}", run.hash);
    let out = cli.out.as_path();
    match &cli.command {
        Command::Density { which, t, h } => cmd_density(&run, &channels(&cfg, &model), out, *which, *t, *h),
        Command::Mi { mode, t, n_traj, y_init: YInitArg::Arrival } => cmd_mi(&run, &model, out, *mode, t, *n_traj, cli.seed),
        Command::Mir => cmd_mir(&run, &model, out),
        Command::Contour { pi_grid, t, n_traj } => cmd_contour(&run, &model, out, &parse_pi_grid(pi_grid)?, t, *n_traj, cli.seed),
        Command::Simulate { t, n_traj } => cmd_simulate(&run, &model, out, *t, *n_traj, cli.seed),
    }
}

fn fail(kind: &str, code: u8, message: &str) -> ExitCode {
    eprintln!("{}", json!({ "schema": SCHEMA_VERSION, "error": { "kind": kind, "code": code, "message": message } }));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MRPCHAN_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => return fail("input", 2, e.to_string().trim()),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), e.code(), &e.to_string()),
    }
}
