//! `fedsim` command-line driver.
//!
//! Settings resolve as: command-line flag, then `--config` file key, then
//! the built-in defaults (which reproduce the reference experiment).
//! The seed additionally falls back to `FEDSIM_SEED` before the default.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};

use crate::data_synth::{self, ClientDataset, DataGenConfig, DataMode, SizeMode};
use crate::nn::{self, MlpConfig};
use crate::orchestrator::{self, ExperimentConfig, ExperimentResult};
use crate::params::{ParamVector, Shape};
use crate::strategies::{StrategyConfig, StrategyKind};
use crate::transport;

pub const SEED_ENV: &str = "FEDSIM_SEED";
pub const PORT_ENV: &str = "FEDSIM_PORT";
pub const DEFAULT_PORT: u16 = 7878;

#[derive(Debug, Parser)]
#[command(
    name = "fedsim",
    version,
    about = "Federated OCP-recommendation simulator"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic multi-client dataset CSV.
    GenData(GenDataArgs),
    /// Run federated training in-process.
    Train(TrainArgs),
    /// Run the server side of a multi-process experiment.
    Serve(ServeArgs),
    /// Run one client of a multi-process experiment.
    Client(ClientArgs),
    /// Evaluate a checkpoint on every client's test split.
    ExportMetrics(ExportArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct DataFlags {
    /// iid | noniid
    #[arg(long)]
    pub mode: Option<DataMode>,
    /// fixed:N | variable | variable:LO:HI
    #[arg(long)]
    pub size: Option<SizeMode>,
    #[arg(long)]
    pub clients: Option<u32>,
    /// Label-noise probability.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Dirichlet concentration for non-IID priors.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Flat `key = value` settings file.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ExperimentFlags {
    #[arg(long)]
    pub rounds: Option<u32>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub hidden1: Option<usize>,
    #[arg(long)]
    pub hidden2: Option<usize>,
    /// Participants in round 1.
    #[arg(long)]
    pub first_participants: Option<usize>,
    /// Participants in every later round.
    #[arg(long)]
    pub participants: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub data: DataFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// fedavg | fedavgm | fedprox | fedadam | all
    #[arg(long)]
    pub strategy: Option<String>,
    /// Dataset CSV; generated from the data flags when absent.
    #[arg(long = "data")]
    pub data_file: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataFlags,
    #[command(flatten)]
    pub experiment: ExperimentFlags,
    #[arg(long, default_value = "fedsim-out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub strategy: Option<String>,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Defaults to $FEDSIM_PORT, then 7878.
    #[arg(long)]
    pub port: Option<u16>,
    /// Number of clients to wait for.
    #[arg(long)]
    pub expect: usize,
    #[arg(long = "data")]
    pub data_file: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataFlags,
    #[command(flatten)]
    pub experiment: ExperimentFlags,
    #[arg(long, default_value = "fedsim-out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ClientArgs {
    /// host:port of the server.
    #[arg(long)]
    pub connect: String,
    #[arg(long)]
    pub client_id: u32,
    #[arg(long = "data")]
    pub data_file: PathBuf,
    /// Seconds to keep retrying the initial connection.
    #[arg(long, default_value_t = 30)]
    pub connect_timeout: u64,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long = "data")]
    pub data_file: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Keys read from a `--config` file.
#[derive(Debug, Default, Clone)]
pub struct ConfigFile {
    pub path: Option<PathBuf>,
    entries: BTreeMap<String, String>,
}

const CONFIG_KEYS: &[&str] = &[
    "mode",
    "size",
    "clients",
    "noise",
    "alpha",
    "seed",
    "strategy",
    "rounds",
    "epochs",
    "lr",
    "momentum",
    "batch_size",
    "beta",
    "mu",
    "beta1",
    "beta2",
    "eta",
    "tau",
    "hidden1",
    "hidden2",
    "first_participants",
    "participants",
];

impl ConfigFile {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("config line {}: expected `key = value`", n + 1))?;
            let key = key.trim().replace('-', "_");
            if !CONFIG_KEYS.contains(&key.as_str()) {
                bail!("config line {}: unknown key `{key}`", n + 1);
            }
            entries.insert(key, value.trim().to_string());
        }
        Ok(Self {
            path: None,
            entries,
        })
    }

    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = Self::parse(&text).with_context(|| format!("in {}", path.display()))?;
        cfg.path = Some(path.to_path_buf());
        Ok(cfg)
    }

    /// `flag`, else this file's `key`, else `None`.
    pub fn pick<T>(&self, flag: Option<T>, key: &str) -> anyhow::Result<Option<T>>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        self.entries
            .get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| anyhow!("config key `{key}` = `{v}`: {e}"))
            })
            .transpose()
    }
}

fn env_seed() -> anyhow::Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => {
            Ok(Some(v.trim().parse().with_context(|| {
                format!("{SEED_ENV}=`{v}` is not an integer")
            })?))
        }
        Err(_) => Ok(None),
    }
}

pub fn resolve_data_config(flags: &DataFlags, file: &ConfigFile) -> anyhow::Result<DataGenConfig> {
    let d = DataGenConfig::default();
    let seed = match file.pick(flags.seed, "seed")? {
        Some(s) => s,
        None => env_seed()?.unwrap_or(d.seed),
    };
    let config = DataGenConfig {
        mode: file.pick(flags.mode, "mode")?.unwrap_or(d.mode),
        num_clients: file
            .pick(flags.clients, "clients")?
            .unwrap_or(d.num_clients),
        size: file.pick(flags.size, "size")?.unwrap_or(d.size),
        noise_prob: file.pick(flags.noise, "noise")?.unwrap_or(d.noise_prob),
        dirichlet_alpha: file
            .pick(flags.alpha, "alpha")?
            .unwrap_or(d.dirichlet_alpha),
        seed,
    };
    config.validate()?;
    Ok(config)
}

pub fn resolve_experiment_config(
    kind: StrategyKind,
    data: DataGenConfig,
    flags: &ExperimentFlags,
    file: &ConfigFile,
) -> anyhow::Result<ExperimentConfig> {
    let d = ExperimentConfig::default();
    let s = StrategyConfig::new(kind);
    let [h1, h2] = d.mlp.hidden();
    let config = ExperimentConfig {
        rounds: file.pick(flags.rounds, "rounds")?.unwrap_or(d.rounds),
        first_round_participants: file
            .pick(flags.first_participants, "first_participants")?
            .unwrap_or(d.first_round_participants),
        later_round_participants: file
            .pick(flags.participants, "participants")?
            .unwrap_or(d.later_round_participants),
        local_epochs: file.pick(flags.epochs, "epochs")?.unwrap_or(d.local_epochs),
        sgd: nn::SgdConfig {
            lr: file.pick(flags.lr, "lr")?.unwrap_or(d.sgd.lr),
            momentum: file
                .pick(flags.momentum, "momentum")?
                .unwrap_or(d.sgd.momentum),
            batch_size: file
                .pick(flags.batch_size, "batch_size")?
                .unwrap_or(d.sgd.batch_size),
        },
        mlp: MlpConfig::new(
            file.pick(flags.hidden1, "hidden1")?.unwrap_or(h1),
            file.pick(flags.hidden2, "hidden2")?.unwrap_or(h2),
        )?,
        strategy: StrategyConfig {
            kind,
            beta: file.pick(flags.beta, "beta")?.unwrap_or(s.beta),
            mu: file.pick(flags.mu, "mu")?.unwrap_or(s.mu),
            beta1: file.pick(flags.beta1, "beta1")?.unwrap_or(s.beta1),
            beta2: file.pick(flags.beta2, "beta2")?.unwrap_or(s.beta2),
            eta: file.pick(flags.eta, "eta")?.unwrap_or(s.eta),
            tau: file.pick(flags.tau, "tau")?.unwrap_or(s.tau),
        },
        seed: data.seed,
        data,
    };
    config.strategy.validate()?;
    config.sgd.validate()?;
    Ok(config)
}

/// Parses `fedavg`, ..., or `all` into the strategies to run.
pub fn parse_strategies(value: &str) -> anyhow::Result<Vec<StrategyKind>> {
    if value.trim().eq_ignore_ascii_case("all") {
        return Ok(StrategyKind::ALL.to_vec());
    }
    Ok(vec![value.parse()?])
}

/// Writes `path` via a sibling temp file so partial files never appear.
fn write_atomically(
    path: &Path,
    write: impl FnOnce(&mut BufWriter<fs::File>) -> anyhow::Result<()>,
) -> anyhow::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    let file = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
    let mut out = BufWriter::new(file);
    write(&mut out)?;
    out.flush()?;
    drop(out);
    fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn load_dataset(path: &Path) -> anyhow::Result<Vec<ClientDataset>> {
    let file =
        fs::File::open(path).with_context(|| format!("opening dataset {}", path.display()))?;
    let clients =
        data_synth::read_dataset_csv(BufReader::new(file), &data_synth::builtin_hormone_table())
            .with_context(|| format!("reading dataset {}", path.display()))?;
    if clients.is_empty() {
        bail!("dataset {} has no rows", path.display());
    }
    Ok(clients)
}

/// Regime label for results. A loaded dataset keeps its file stem unless
/// the regime was stated through `--mode`/`--size` or the config file.
fn dataset_label(
    data_file: Option<&Path>,
    flags: &DataFlags,
    file: &ConfigFile,
    data: &DataGenConfig,
) -> String {
    let stated = flags.mode.is_some()
        || flags.size.is_some()
        || file.entries.contains_key("mode")
        || file.entries.contains_key("size");
    match data_file.and_then(|p| p.file_stem()) {
        Some(stem) if !stated => stem.to_string_lossy().into_owned(),
        _ => data.regime_label(),
    }
}

fn obtain_clients(
    data_file: Option<&Path>,
    data: &DataGenConfig,
) -> anyhow::Result<Vec<ClientDataset>> {
    match data_file {
        Some(path) => load_dataset(path),
        None => Ok(data_synth::generate_federation(data)?),
    }
}

pub fn cmd_gen_data(args: &GenDataArgs) -> anyhow::Result<()> {
    let file = ConfigFile::load(args.data.config.as_deref())?;
    let config = resolve_data_config(&args.data, &file)?;
    let clients = data_synth::generate_federation(&config)?;
    write_atomically(&args.out, |out| {
        data_synth::write_dataset_csv(out, &clients)?;
        Ok(())
    })?;
    println!(
        "wrote {} ({} clients, {}, seed {})",
        args.out.display(),
        clients.len(),
        config.regime_label(),
        config.seed
    );
    for c in &clients {
        println!(
            "  client {:>2}: train {:>5}  val {:>5}  test {:>5}",
            c.client_id,
            c.train.len(),
            c.val.len(),
            c.test.len()
        );
    }
    Ok(())
}

/// Run metadata written before training starts.
#[derive(Debug, Clone)]
pub struct RunManifest {
    pub run_id: String,
    pub config_path: Option<PathBuf>,
    pub data_file: Option<PathBuf>,
    pub configs: Vec<ExperimentConfig>,
    pub out_dir: PathBuf,
}

impl RunManifest {
    fn new(
        config_path: Option<PathBuf>,
        data_file: Option<PathBuf>,
        configs: Vec<ExperimentConfig>,
        out_dir: PathBuf,
    ) -> Self {
        let ts = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        let seed = configs.first().map_or(0, |c| c.seed);
        Self {
            run_id: format!("{ts}-{seed}"),
            config_path,
            data_file,
            configs,
            out_dir,
        }
    }

    fn write(&self) -> anyhow::Result<()> {
        fs::create_dir_all(&self.out_dir)
            .with_context(|| format!("creating {}", self.out_dir.display()))?;
        write_atomically(&self.out_dir.join("manifest.txt"), |out| {
            writeln!(out, "run_id = {}", self.run_id)?;
            let show =
                |p: &Option<PathBuf>| p.as_ref().map_or("-".into(), |p| p.display().to_string());
            writeln!(out, "config = {}", show(&self.config_path))?;
            writeln!(out, "data_file = {}", show(&self.data_file))?;
            for c in &self.configs {
                writeln!(out)?;
                write_config(out, c)?;
            }
            Ok(())
        })
    }
}

fn write_config(out: &mut impl Write, c: &ExperimentConfig) -> std::io::Result<()> {
    let [h1, h2] = c.mlp.hidden();
    let s = &c.strategy;
    writeln!(out, "strategy = {}", s.kind)?;
    writeln!(out, "seed = {}", c.seed)?;
    writeln!(out, "mode = {}", c.data.mode.as_str())?;
    writeln!(out, "size = {}", c.data.size)?;
    writeln!(out, "clients = {}", c.data.num_clients)?;
    writeln!(out, "noise = {}", c.data.noise_prob)?;
    writeln!(out, "alpha = {}", c.data.dirichlet_alpha)?;
    writeln!(out, "rounds = {}", c.rounds)?;
    writeln!(out, "first_participants = {}", c.first_round_participants)?;
    writeln!(out, "participants = {}", c.later_round_participants)?;
    writeln!(out, "epochs = {}", c.local_epochs)?;
    writeln!(out, "lr = {}", c.sgd.lr)?;
    writeln!(out, "momentum = {}", c.sgd.momentum)?;
    writeln!(out, "batch_size = {}", c.sgd.batch_size)?;
    writeln!(out, "hidden1 = {h1}")?;
    writeln!(out, "hidden2 = {h2}")?;
    writeln!(out, "beta = {}", s.beta)?;
    writeln!(out, "mu = {}", s.mu)?;
    writeln!(out, "beta1 = {}", s.beta1)?;
    writeln!(out, "beta2 = {}", s.beta2)?;
    writeln!(out, "eta = {}", s.eta)?;
    writeln!(out, "tau = {}", s.tau)
}

fn write_outputs(out_dir: &Path, result: &ExperimentResult) -> anyhow::Result<()> {
    let name = result.strategy.as_str();
    write_atomically(&out_dir.join(format!("metrics_{name}.csv")), |out| {
        orchestrator::write_round_metrics_csv(out, result)?;
        Ok(())
    })?;
    write_atomically(&out_dir.join(format!("clients_{name}.csv")), |out| {
        orchestrator::write_client_metrics_csv(out, result)?;
        Ok(())
    })?;
    write_atomically(&out_dir.join(format!("checkpoint_{name}.txt")), |out| {
        result.final_weights.write_text(out)?;
        Ok(())
    })
}

fn print_result(result: &ExperimentResult) {
    let curve: Vec<String> = result
        .rounds
        .iter()
        .map(|r| format!("{:.4}", r.weighted_accuracy))
        .collect();
    println!(
        "{:<8} {:<16} final weighted accuracy {:.4}  (rounds: {})",
        result.strategy,
        result.dataset_mode,
        result.final_accuracy(),
        curve.join(" ")
    );
}

pub fn cmd_train(args: &TrainArgs) -> anyhow::Result<()> {
    let file = ConfigFile::load(args.data.config.as_deref())?;
    let data = resolve_data_config(&args.data, &file)?;
    let strategy = file
        .pick(args.strategy.clone(), "strategy")?
        .unwrap_or_else(|| "fedavg".into());
    let configs = parse_strategies(&strategy)?
        .into_iter()
        .map(|kind| resolve_experiment_config(kind, data.clone(), &args.experiment, &file))
        .collect::<anyhow::Result<Vec<_>>>()?;

    let manifest = RunManifest::new(
        file.path.clone(),
        args.data_file.clone(),
        configs.clone(),
        args.out.clone(),
    );
    manifest.write()?;

    let clients = obtain_clients(args.data_file.as_deref(), &data)?;
    let label = dataset_label(args.data_file.as_deref(), &args.data, &file, &data);
    for config in &configs {
        let mut result = orchestrator::run_with_clients(config, &clients)?;
        result.dataset_mode.clone_from(&label);
        write_outputs(&args.out, &result)?;
        print_result(&result);
    }
    println!(
        "baseline (random assignment) accuracy {:.1}",
        orchestrator::RANDOM_BASELINE_ACCURACY
    );
    Ok(())
}

fn server_port(flag: Option<u16>) -> anyhow::Result<u16> {
    if let Some(p) = flag {
        return Ok(p);
    }
    match std::env::var(PORT_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .with_context(|| format!("{PORT_ENV}=`{v}` is not a port")),
        Err(_) => Ok(DEFAULT_PORT),
    }
}

pub fn cmd_serve(args: &ServeArgs) -> anyhow::Result<()> {
    let file = ConfigFile::load(args.data.config.as_deref())?;
    let data = resolve_data_config(&args.data, &file)?;
    let strategy = file
        .pick(args.strategy.clone(), "strategy")?
        .unwrap_or_else(|| "fedavg".into());
    let kind: StrategyKind = strategy.parse()?;
    let config = resolve_experiment_config(kind, data.clone(), &args.experiment, &file)?;
    let clients = obtain_clients(args.data_file.as_deref(), &data)?;
    if clients.len() != args.expect {
        bail!(
            "dataset has {} clients but --expect is {}",
            clients.len(),
            args.expect
        );
    }

    RunManifest::new(
        file.path.clone(),
        args.data_file.clone(),
        vec![config.clone()],
        args.out.clone(),
    )
    .write()?;

    let addr = format!("{}:{}", args.host, server_port(args.port)?);
    let listener = TcpListener::bind(&addr).with_context(|| format!("binding {addr}"))?;
    println!(
        "listening on {} for {} clients",
        listener.local_addr()?,
        args.expect
    );
    let mut result = transport::serve(&listener, &config, &clients)?;
    result.dataset_mode = dataset_label(args.data_file.as_deref(), &args.data, &file, &data);
    write_outputs(&args.out, &result)?;
    print_result(&result);
    Ok(())
}

fn connect_with_retry(addr: &str, timeout: Duration) -> anyhow::Result<TcpStream> {
    let start = Instant::now();
    loop {
        match TcpStream::connect(addr) {
            Ok(s) => return Ok(s),
            Err(_) if start.elapsed() < timeout => std::thread::sleep(Duration::from_millis(100)),
            Err(e) => return Err(e).with_context(|| format!("connecting to {addr}")),
        }
    }
}

pub fn cmd_client(args: &ClientArgs) -> anyhow::Result<()> {
    let clients = load_dataset(&args.data_file)?;
    let data = clients
        .iter()
        .find(|c| c.client_id == args.client_id)
        .ok_or_else(|| {
            anyhow!(
                "client {} not present in {}",
                args.client_id,
                args.data_file.display()
            )
        })?;
    let mut stream = connect_with_retry(&args.connect, Duration::from_secs(args.connect_timeout))?;
    stream.set_nodelay(true)?;
    let summary = transport::run_client(&mut stream, args.client_id, data)?;
    println!(
        "client {} done after round {}; trained in rounds {:?}",
        args.client_id, summary.final_round, summary.rounds_trained
    );
    Ok(())
}

/// Recovers the network shape from checkpoint shapes.
fn mlp_from_shapes(shapes: &[Shape]) -> anyhow::Result<MlpConfig> {
    match shapes {
        [Shape::Matrix { cols: h1, .. }, _, Shape::Matrix { cols: h2, .. }, ..] => {
            let mlp = MlpConfig::new(*h1, *h2)?;
            if mlp.shapes() != shapes {
                bail!("checkpoint shapes {shapes:?} do not describe a supported network");
            }
            Ok(mlp)
        }
        _ => bail!("checkpoint shapes {shapes:?} do not describe a supported network"),
    }
}

pub fn cmd_export_metrics(args: &ExportArgs) -> anyhow::Result<()> {
    let file = fs::File::open(&args.checkpoint)
        .with_context(|| format!("opening {}", args.checkpoint.display()))?;
    let params = ParamVector::read_text(BufReader::new(file))?;
    let mlp = mlp_from_shapes(params.shapes())?;
    let clients = load_dataset(&args.data_file)?;
    let per_client = orchestrator::evaluate_clients(&mlp, &params, &clients)?;
    let weighted = orchestrator::weighted_accuracy(&per_client)?;
    write_atomically(&args.out, |out| {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["client_id", "test_accuracy", "test_loss", "test_size"])?;
        for c in &per_client {
            w.write_record([
                c.client_id.to_string(),
                c.test_accuracy.to_string(),
                c.test_loss.to_string(),
                c.test_size.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })?;
    println!(
        "weighted test accuracy {weighted:.4} over {} clients",
        per_client.len()
    );
    Ok(())
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::GenData(a) => cmd_gen_data(a),
        Command::Train(a) => cmd_train(a),
        Command::Serve(a) => cmd_serve(a),
        Command::Client(a) => cmd_client(a),
        Command::ExportMetrics(a) => cmd_export_metrics(a),
    }
}

pub fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
