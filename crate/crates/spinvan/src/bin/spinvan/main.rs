//! Command-line front end.

mod config;

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;
use spinvan::checkpoint::{write_atomic, Checkpoint};
use spinvan::estimators::{self, DEFAULT_ESTIMATE_SAMPLES, DEFAULT_RESAMPLES};
use spinvan::exact::{self, MAX_ENUMERATION_SITES};
use spinvan::mcbaseline::{self, ChainState, RunSchedule, TemperingLadder};
use spinvan::rng::{derive_seed, derived_rng};
use spinvan::sampler::sample_chunked;
use spinvan::trainer::{self, initial_model};
use spinvan::{
    prior_only_f_q, CouplingKind, Couplings, Geometry, PriorKind, PriorSpec, SpinConfig,
};

use config::RunConfig;

#[derive(Debug, Parser)]
#[command(
    name = "spinvan",
    version,
    about = "Autoregressive neural samplers with tanh-expansion priors"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; every random stream is derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model from the run configuration.
    Train,
    /// Draw configurations from a checkpoint.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 1024)]
        count: usize,
    },
    /// Estimate free energies, ESS and observables of a checkpoint.
    Estimate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Monte Carlo configurations in the lattice text format, one per line.
        #[arg(long)]
        mc_samples: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_ESTIMATE_SAMPLES)]
        samples: usize,
        #[arg(long, default_value_t = DEFAULT_RESAMPLES)]
        resamples: usize,
    },
    /// Prior-only variational free energy.
    PriorEval {
        #[command(flatten)]
        system: SystemArgs,
        #[arg(long)]
        order: u8,
        #[arg(long, default_value_t = DEFAULT_ESTIMATE_SAMPLES)]
        samples: usize,
    },
    /// Monte Carlo baseline.
    Mc {
        #[command(flatten)]
        system: SystemArgs,
        #[arg(long, value_enum, default_value_t = Algo::Wolff)]
        algo: Algo,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        /// Updates discarded before recording (cluster updates for Wolff, sweeps otherwise).
        #[arg(long, default_value_t = mcbaseline::DEFAULT_BURN_IN)]
        burn_in: usize,
        /// Updates between recorded samples.
        #[arg(long, default_value_t = mcbaseline::DEFAULT_THIN)]
        thin: usize,
        #[arg(long, default_value_t = mcbaseline::DEFAULT_LADDER_SIZE)]
        ladder_size: usize,
        #[arg(long, default_value_t = mcbaseline::DEFAULT_LADDER_MIN)]
        ladder_min: f64,
        #[arg(long, default_value_t = 1)]
        swap_interval: usize,
        /// Write only the metrics stream, not the configurations.
        #[arg(long)]
        metrics_only: bool,
    },
    /// Exact free energy and moments by enumeration (small lattices) or Kaufman's formula.
    Exact {
        #[command(flatten)]
        system: SystemArgs,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Algo {
    Wolff,
    Metropolis,
    Tempering,
}

#[derive(Debug, Args)]
struct SystemArgs {
    /// Lattice side.
    #[arg(long = "L")]
    side: usize,
    #[arg(long)]
    beta: f64,
    #[arg(long, default_value = "ising")]
    kind: PriorKind,
    #[arg(long, default_value_t = 0)]
    coupling_seed: u64,
    /// Couplings in the lattice text format; overrides `--kind`/`--coupling-seed` for the bonds.
    #[arg(long)]
    coupling_file: Option<PathBuf>,
}

impl SystemArgs {
    fn couplings(&self) -> Result<Couplings> {
        if let Some(path) = &self.coupling_file {
            let text = fs::read_to_string(path)
                .with_context(|| format!("cannot read coupling file {}", path.display()))?;
            let c = Couplings::from_text(&text)?;
            if c.geometry().side() != self.side {
                bail!(
                    "coupling file has side {}, expected {}",
                    c.geometry().side(),
                    self.side
                );
            }
            return Ok(c);
        }
        let g = Geometry::new(self.side)?;
        Ok(match self.kind {
            PriorKind::Ising => Couplings::ferromagnetic(g),
            PriorKind::Ea => Couplings::ea_binary(g, self.coupling_seed),
        })
    }
}

/// JSON Lines written to a temporary file and renamed into place on `finish`.
struct JsonLines {
    path: PathBuf,
    writer: BufWriter<tempfile::NamedTempFile>,
}

impl JsonLines {
    fn create(path: PathBuf) -> Result<Self> {
        let dir = path
            .parent()
            .filter(|d| !d.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        let tmp = tempfile::NamedTempFile::new_in(dir)
            .with_context(|| format!("cannot create a file in {}", dir.display()))?;
        Ok(JsonLines {
            path,
            writer: BufWriter::new(tmp),
        })
    }

    fn write(&mut self, value: &impl Serialize) -> std::io::Result<()> {
        serde_json::to_writer(&mut self.writer, value)?;
        self.writer.write_all(b"\n")
    }

    fn finish(self) -> Result<()> {
        let tmp = self.writer.into_inner().map_err(|e| e.into_error())?;
        tmp.persist(&self.path)
            .with_context(|| format!("cannot write {}", self.path.display()))?;
        Ok(())
    }
}

fn print_json(value: &impl Serialize) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{}", serde_json::to_string_pretty(value)?) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create directory {}", dir.display()))
}

fn out_dir(global: &GlobalArgs) -> PathBuf {
    global.out.clone().unwrap_or_else(|| PathBuf::from("."))
}

fn cmd_train(global: &GlobalArgs) -> Result<()> {
    let Some(path) = &global.config else {
        bail!("train needs --config <file>");
    };
    let mut config = RunConfig::load(path)?;
    if let Some(seed) = global.seed {
        config.train.seed = seed;
    }
    let dir = global
        .out
        .clone()
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(&config.name));
    ensure_dir(&dir)?;
    let couplings = config.couplings()?;

    // frozen copy: the couplings file next to the config makes the directory self-contained
    write_atomic(&dir.join("couplings.txt"), couplings.to_text().as_bytes())?;
    let mut frozen = config.clone();
    frozen.coupling_file = Some(PathBuf::from("couplings.txt"));
    frozen.output_dir = None;
    write_atomic(
        &dir.join("config.toml"),
        toml::to_string(&frozen)?.as_bytes(),
    )?;

    let train_config = config.train_config();
    let (_, spec) = initial_model::<f64>(&train_config, &couplings)?;
    let metrics_path = dir.join("metrics.jsonl");
    let mut metrics = JsonLines::create(metrics_path.clone())?;
    let seed = train_config.seed;
    let era_length = train_config.era_length;
    let result = trainer::train::<f64>(
        &train_config,
        &couplings,
        |m| {
            metrics.write(m).map_err(|source| spinvan::Error::Io {
                path: metrics_path.clone(),
                source,
            })
        },
        |era, params| {
            let mut ck = Checkpoint::new(
                params.clone(),
                &spec,
                &couplings,
                format!("train {seed} {}", era * era_length),
            )?;
            ck.extra.insert("experiment".into(), config.name.clone());
            ck.extra.insert("era".into(), era.to_string());
            ck.save(&dir.join(format!("ckpt-era-{era}")))
        },
    );
    metrics.finish()?;
    let outcome = result.context("training failed")?;
    let last = outcome.metrics.last();
    print_json(&json!({
        "output_dir": dir,
        "updates": outcome.metrics.len(),
        "final": last,
    }))
}

fn read_configs(path: &Path, sites: usize) -> Result<Vec<i8>> {
    let text =
        fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut out = Vec::new();
    for (k, line) in text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let c: SpinConfig = line
            .parse()
            .with_context(|| format!("{}:{}: bad configuration", path.display(), k + 1))?;
        if c.len() != sites {
            bail!(
                "{}:{}: configuration has {} spins but the checkpoint lattice has {sites}",
                path.display(),
                k + 1,
                c.len()
            );
        }
        out.extend_from_slice(c.as_slice());
    }
    Ok(out)
}

fn cmd_sample(global: &GlobalArgs, checkpoint: &Path, count: usize) -> Result<()> {
    let ck = Checkpoint::<f64>::load(checkpoint)?;
    let spec = ck.prior()?;
    let seed = derive_seed(global.seed.unwrap_or(0), "sample", 0);
    let batch = sample_chunked(
        &ck.params,
        &spec,
        &ck.couplings,
        count,
        4096,
        seed,
        "sample",
    )?;
    let dir = out_dir(global);
    ensure_dir(&dir)?;
    let mut text = String::new();
    for s in batch.configs() {
        text.push_str(&SpinConfig::new(s.to_vec())?.to_string());
        text.push('\n');
    }
    write_atomic(&dir.join("samples.txt"), text.as_bytes())?;
    let mut metrics = JsonLines::create(dir.join("samples.jsonl"))?;
    for (i, (lq, e)) in batch.log_q.iter().zip(&batch.energies).enumerate() {
        metrics.write(&json!({ "index": i, "log_q": lq, "energy": e }))?;
    }
    metrics.finish()?;
    print_json(&json!({ "samples": count, "output_dir": dir }))
}

fn exact_free_energy(couplings: &Couplings, beta: f64) -> Option<f64> {
    if couplings.kind() == CouplingKind::Ferromagnetic {
        exact::kaufman_free_energy(couplings.geometry().side(), beta).ok()
    } else if couplings.geometry().sites() <= 16 {
        exact::enumerate(couplings, beta).ok().map(|r| -r.log_z)
    } else {
        None
    }
}

fn cmd_estimate(
    global: &GlobalArgs,
    checkpoint: &Path,
    mc_path: Option<&Path>,
    samples: usize,
    resamples: usize,
) -> Result<()> {
    let ck = Checkpoint::<f64>::load(checkpoint)?;
    let spec = ck.prior()?;
    let mc = mc_path
        .map(|p| read_configs(p, ck.geometry().sites()))
        .transpose()?;
    let seed = derive_seed(global.seed.unwrap_or(0), "estimate", 0);
    let mut report = estimators::estimate(
        &ck.params,
        &spec,
        &ck.couplings,
        samples,
        seed,
        mc.as_deref(),
        resamples,
    )?;
    if let Some(f) = exact_free_energy(&ck.couplings, ck.beta) {
        report = report.with_exact(f);
    }
    if let Some(dir) = &global.out {
        ensure_dir(dir)?;
        write_atomic(
            &dir.join("estimate.json"),
            serde_json::to_string_pretty(&report)?.as_bytes(),
        )?;
    }
    print_json(&report)
}

fn cmd_prior_eval(
    global: &GlobalArgs,
    system: &SystemArgs,
    order: u8,
    samples: usize,
) -> Result<()> {
    let couplings = system.couplings()?;
    let spec = PriorSpec::<f64>::build(system.kind, &couplings, system.beta, order)?;
    let seed = derive_seed(global.seed.unwrap_or(0), "prior-eval", 0);
    let est = prior_only_f_q(&spec, &couplings, samples, seed)?;
    let report = json!({
        "side": system.side,
        "beta": system.beta,
        "kind": system.kind,
        "order": order,
        "f_q": est.estimate,
        "std_error": est.std_error,
        "samples": est.samples,
        "f_exact": exact_free_energy(&couplings, system.beta),
    });
    if let Some(dir) = &global.out {
        ensure_dir(dir)?;
        write_atomic(
            &dir.join("prior-eval.json"),
            serde_json::to_string_pretty(&report)?.as_bytes(),
        )?;
    }
    print_json(&report)
}

#[allow(clippy::too_many_arguments)]
fn cmd_mc(
    global: &GlobalArgs,
    system: &SystemArgs,
    algo: Algo,
    samples: usize,
    burn_in: usize,
    thin: usize,
    ladder_size: usize,
    ladder_min: f64,
    swap_interval: usize,
    metrics_only: bool,
) -> Result<()> {
    let couplings = system.couplings()?;
    let master = global.seed.unwrap_or(0);
    let schedule = RunSchedule {
        burn_in,
        thin,
        samples,
        keep_spins: !metrics_only,
    };
    let (runs, swap_rates) = match algo {
        Algo::Wolff | Algo::Metropolis => {
            let mut state =
                ChainState::random(&couplings, system.beta, derived_rng(master, "mc", 0))?;
            let run = if algo == Algo::Wolff {
                mcbaseline::wolff_run(&mut state, &couplings, &schedule)?
            } else {
                mcbaseline::metropolis_run(&mut state, &couplings, &schedule)?
            };
            (vec![run], Vec::new())
        }
        Algo::Tempering => {
            let betas =
                mcbaseline::geometric_betas(ladder_min.min(system.beta), system.beta, ladder_size)?;
            let mut ladder = TemperingLadder::new(&couplings, betas, derive_seed(master, "mc", 0))?;
            let r = mcbaseline::parallel_tempering_run(
                &mut ladder,
                &couplings,
                &schedule,
                swap_interval,
            )?;
            (r.samples, r.swap_rates)
        }
    };
    let dir = out_dir(global);
    ensure_dir(&dir)?;
    let target = runs.last().expect("at least one beta");
    if !metrics_only {
        let n = couplings.geometry().sites();
        let mut text = String::with_capacity(target.spins.len() * 3);
        for s in target.spins.chunks(n) {
            text.push_str(&SpinConfig::new(s.to_vec())?.to_string());
            text.push('\n');
        }
        write_atomic(&dir.join("mc-samples.txt"), text.as_bytes())?;
    }
    let mut metrics = JsonLines::create(dir.join("mc-metrics.jsonl"))?;
    for run in &runs {
        for (i, (e, m)) in run.energies.iter().zip(&run.magnetizations).enumerate() {
            metrics
                .write(&json!({ "index": i, "beta": run.beta, "energy": e, "magnetization": m }))?;
        }
    }
    metrics.write(&json!({ "swap_rates": swap_rates }))?;
    metrics.finish()?;
    let e: Vec<f64> = target.energies.iter().map(|&x| x as f64).collect();
    let m: Vec<f64> = target.magnetizations.iter().map(|&x| x as f64).collect();
    let am: Vec<f64> = m.iter().map(|x| x.abs()).collect();
    let stat = |v: &[f64]| {
        let (mean, error) = mcbaseline::binned_mean(v, 50);
        json!({ "value": mean, "error": error })
    };
    print_json(&json!({
        "algo": format!("{algo:?}").to_lowercase(),
        "beta": system.beta,
        "samples": target.len(),
        "energy": stat(&e),
        "magnetization": stat(&m),
        "abs_magnetization": stat(&am),
        "swap_rates": swap_rates,
        "output_dir": dir,
    }))
}

fn cmd_exact(system: &SystemArgs) -> Result<()> {
    let couplings = system.couplings()?;
    let mut report = serde_json::Map::new();
    report.insert("side".into(), json!(system.side));
    report.insert("beta".into(), json!(system.beta));
    if couplings.geometry().sites() <= MAX_ENUMERATION_SITES {
        let r = exact::enumerate(&couplings, system.beta)?;
        report.insert("log_z".into(), json!(r.log_z));
        report.insert("f".into(), json!(r.free_energy));
        report.insert("mean_energy".into(), json!(r.mean_energy));
        report.insert("mean_magnetization".into(), json!(r.mean_magnetization));
        report.insert(
            "mean_abs_magnetization".into(),
            json!(r.mean_abs_magnetization),
        );
    }
    if couplings.kind() == CouplingKind::Ferromagnetic {
        let f: f64 = exact::kaufman_free_energy(system.side, system.beta)?;
        report.insert("kaufman_f".into(), json!(f));
        report.insert(
            "kaufman_mean_energy".into(),
            json!(exact::kaufman_mean_energy(system.side, system.beta)?),
        );
        report.entry("f").or_insert(json!(f));
    } else if couplings.geometry().sites() > MAX_ENUMERATION_SITES {
        bail!(
            "no exact result for a {0}x{0} glass: enumeration is limited to {MAX_ENUMERATION_SITES} sites",
            system.side
        );
    }
    print_json(&report)
}

fn main() -> std::process::ExitCode {
    match run() {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::FAILURE
        }
    }
}

fn run() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(threads) = cli.global.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("cannot configure the thread pool")?;
    }
    let g = &cli.global;
    match &cli.command {
        Command::Train => cmd_train(g),
        Command::Sample { checkpoint, count } => cmd_sample(g, checkpoint, *count),
        Command::Estimate {
            checkpoint,
            mc_samples,
            samples,
            resamples,
        } => cmd_estimate(g, checkpoint, mc_samples.as_deref(), *samples, *resamples),
        Command::PriorEval {
            system,
            order,
            samples,
        } => cmd_prior_eval(g, system, *order, *samples),
        Command::Mc {
            system,
            algo,
            samples,
            burn_in,
            thin,
            ladder_size,
            ladder_min,
            swap_interval,
            metrics_only,
        } => cmd_mc(
            g,
            system,
            *algo,
            *samples,
            *burn_in,
            *thin,
            *ladder_size,
            *ladder_min,
            *swap_interval,
            *metrics_only,
        ),
        Command::Exact { system } => cmd_exact(system),
    }
}
