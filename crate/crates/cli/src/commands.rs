use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use fedmcsa_core::aggregation::ATTENTION_CSV_HEADER;
use fedmcsa_core::data::{read_federation_csv, write_federation_csv, DatasetKind, FederationData};
use fedmcsa_core::engine::{build_federation, run_experiment, Algorithm, ExperimentResult, RunConfig};
use fedmcsa_core::metrics::{format_round_row, mean_and_std, write_rounds_csv, ROUNDS_CSV_HEADER};
use fedmcsa_core::nn::Architecture;
use fedmcsa_core::Error;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::args::{Cli, Command, GenDataArgs, RunArgs};
use crate::error::{CliError, Result};
use crate::settings::{read_config_file, resolve, to_config_text, Entry};

/// Base/variant pairs of the attention ablation, in table order.
pub const ABLATION_PAIRS: [(Algorithm, Algorithm); 3] = [
    (Algorithm::FedMcsa, Algorithm::FedMcsaMinusMcsa),
    (Algorithm::FedAvg, Algorithm::FedAvgPlusMcsa),
    (Algorithm::PFedMePm, Algorithm::PFedMePlusMcsa),
];

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => run(&args).map(|_| ()),
        Command::Compare { algorithms, run } => compare(&algorithms, &run).map(|_| ()),
        Command::Sweep(args) => sweep(&args).map(|_| ()),
        Command::Ablate(args) => ablate(&args).map(|_| ()),
        Command::GenData(args) => gen_data(&args),
    }
}

/// One finished run.
pub struct RunRecord {
    pub dir: PathBuf,
    pub result: ExperimentResult,
}

impl RunRecord {
    pub fn seed(&self) -> u64 {
        self.result.series.config.seed
    }

    pub fn bmta_percent(&self) -> f64 {
        self.result.series.bmta_percent()
    }
}

struct Resolver {
    file: Vec<Entry>,
    file_path: Option<PathBuf>,
    flags: Vec<(String, String)>,
}

impl Resolver {
    fn new(args: &RunArgs) -> Result<Self> {
        let file = match &args.config.config {
            Some(p) => read_config_file(p)?,
            None => Vec::new(),
        };
        Ok(Self {
            file,
            file_path: args.config.config.clone(),
            flags: args.config.pairs(),
        })
    }

    fn explicit(&self, key: &str) -> bool {
        self.flags.iter().any(|(k, _)| k == key) || self.file.iter().any(|e| e.key == key)
    }

    /// Resolves with extra flag-level overrides applied last.
    fn config(&self, extra: &[(String, String)]) -> Result<RunConfig> {
        let mut flags = self.flags.clone();
        flags.extend_from_slice(extra);
        resolve(&self.file, self.file_path.as_deref(), &flags)
    }
}

/// Federations already built during this command, keyed by what shapes them.
#[derive(Default)]
struct DataCache {
    entries: Vec<(String, FederationData)>,
}

impl DataCache {
    fn get(&mut self, cfg: &mut RunConfig, args: &RunArgs, explicit_clients: bool) -> Result<(FederationData, String)> {
        if let Some(path) = &args.data_file {
            let source = format!("file:{}", path.display());
            let data = match self.entries.iter().find(|(k, _)| *k == source) {
                Some((_, d)) => d.clone(),
                None => {
                    let d = read_federation_csv(path)?;
                    self.entries.push((source.clone(), d.clone()));
                    d
                }
            };
            if data.feature_width != cfg.dataset.feature_width() {
                return Err(Error::config(format!(
                    "{} has feature width {}, but dataset `{}` expects {}",
                    path.display(),
                    data.feature_width,
                    cfg.dataset.id(),
                    cfg.dataset.feature_width()
                ))
                .into());
            }
            if !explicit_clients {
                cfg.clients = data.len();
                cfg.clients_per_round = cfg.clients_per_round.min(data.len());
            }
            cfg.validate()?;
            return Ok((data, source));
        }
        let key = format!(
            "{}:{}:{}:{}:{}",
            cfg.dataset.id(),
            cfg.clients,
            cfg.alpha,
            cfg.beta,
            cfg.seed
        );
        if let Some((_, d)) = self.entries.iter().find(|(k, _)| *k == key) {
            return Ok((d.clone(), "generated".into()));
        }
        let data = build_federation(cfg, args.data_dir.as_deref())?;
        self.entries.push((key, data.clone()));
        Ok((data, "generated".into()))
    }
}

#[derive(Serialize)]
struct Summary<'a> {
    run_id: String,
    data_source: &'a str,
    config: &'a RunConfig,
    rounds_completed: usize,
    bmta: f64,
    bmta_percent: f64,
    bmta_round: usize,
    final_mean_test_accuracy: f64,
    final_client_accuracy: Vec<f64>,
}

fn round4(v: f64) -> f64 {
    (v * 1e4).round() / 1e4
}

/// Short content hash of the effective configuration and data source.
pub fn run_id(cfg: &RunConfig, source: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(to_config_text(cfg).as_bytes());
    hasher.update(source.as_bytes());
    hex::encode(hasher.finalize())[..12].to_string()
}

fn create_file(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::output(path, e))
}

fn write_run(dir: &Path, result: &ExperimentResult, source: &str, attention: bool) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::output(dir, e))?;
    let series = &result.series;

    let path = dir.join("metrics.csv");
    let mut out = create_file(&path)?;
    write_rounds_csv(&mut out, &series.rounds)
        .and_then(|_| out.flush())
        .map_err(|e| CliError::output(&path, e))?;

    let path = dir.join("config.txt");
    fs::write(&path, to_config_text(&series.config)).map_err(|e| CliError::output(&path, e))?;

    let summary = Summary {
        run_id: run_id(&series.config, source),
        data_source: source,
        config: &series.config,
        rounds_completed: series.rounds.len(),
        bmta: round4(series.bmta),
        bmta_percent: series.bmta_percent(),
        bmta_round: series.bmta_round,
        final_mean_test_accuracy: round4(series.rounds.last().map_or(0.0, |r| r.mean_test_accuracy)),
        final_client_accuracy: series.final_client_accuracy().iter().map(|&a| round4(a)).collect(),
    };
    let path = dir.join("summary.json");
    fs::write(&path, serde_json::to_string_pretty(&summary)? + "\n").map_err(|e| CliError::output(&path, e))?;

    if attention {
        let path = dir.join("attention.csv");
        let mut out = create_file(&path)?;
        let write = |out: &mut BufWriter<fs::File>| -> std::io::Result<()> {
            writeln!(out, "{ATTENTION_CSV_HEADER}")?;
            for rec in &result.attention {
                rec.weights.write_csv(out, rec.round, &rec.ids)?;
            }
            out.flush()
        };
        write(&mut out).map_err(|e| CliError::output(&path, e))?;
    }
    Ok(())
}

/// Runs `args.repeats` seeds of one configuration under `dir`.
fn run_repeats(
    base: &RunConfig,
    args: &RunArgs,
    explicit_clients: bool,
    cache: &mut DataCache,
    dir: &Path,
) -> Result<Vec<RunRecord>> {
    if args.repeats == 0 {
        return Err(Error::config("--repeats must be at least 1").into());
    }
    let mut records = Vec::with_capacity(args.repeats);
    for r in 0..args.repeats {
        let mut cfg = base.clone();
        cfg.seed = base.seed.wrapping_add(r as u64);
        cfg.record_attention |= args.attention_dump;
        let (data, source) = cache.get(&mut cfg, args, explicit_clients)?;
        let result = run_experiment(&cfg, &data, args.threads)?;
        let run_dir = if args.repeats == 1 {
            dir.to_path_buf()
        } else {
            dir.join(format!("seed-{}", cfg.seed))
        };
        write_run(&run_dir, &result, &source, args.attention_dump)?;
        println!(
            "{:<20} seed {:<6} BMTA {:>6.2}% at round {:<5} -> {}",
            cfg.algorithm.id(),
            cfg.seed,
            result.series.bmta_percent(),
            result.series.bmta_round,
            run_dir.display()
        );
        records.push(RunRecord { dir: run_dir, result });
    }
    if args.repeats > 1 {
        let (mean, std) = bmta_stats(&records)?;
        let path = dir.join("repeats.csv");
        let mut text = String::from("seed,bmta_percent,bmta_round\n");
        for rec in &records {
            text += &format!("{},{:.2},{}\n", rec.seed(), rec.bmta_percent(), rec.result.series.bmta_round);
        }
        text += &format!("mean,{mean:.2},\nstd,{std:.2},\n");
        fs::write(&path, text).map_err(|e| CliError::output(&path, e))?;
        println!("{:<20} BMTA {mean:.2} ± {std:.2} over {} runs", base.algorithm.id(), records.len());
    }
    Ok(records)
}

/// Mean and population standard deviation of BMTA (percent) over runs.
pub fn bmta_stats(records: &[RunRecord]) -> Result<(f64, f64)> {
    let values: Vec<f64> = records.iter().map(|r| r.result.series.bmta * 100.0).collect();
    Ok(mean_and_std(&values)?)
}

pub fn run(args: &RunArgs) -> Result<Vec<RunRecord>> {
    let resolver = Resolver::new(args)?;
    let cfg = resolver.config(&[])?;
    run_repeats(&cfg, args, resolver.explicit("clients"), &mut DataCache::default(), &args.out)
}

pub fn compare(algorithms: &[String], args: &RunArgs) -> Result<Vec<(Algorithm, Vec<RunRecord>)>> {
    let resolver = Resolver::new(args)?;
    let mut cache = DataCache::default();
    let mut all = Vec::new();
    for name in algorithms {
        let alg: Algorithm = name.trim().parse()?;
        let cfg = resolver.config(&[("algorithm".into(), alg.id().into())])?;
        let records = run_repeats(&cfg, args, resolver.explicit("clients"), &mut cache, &args.out.join(alg.id()))?;
        all.push((alg, records));
    }

    let path = args.out.join("comparison.csv");
    let mut text = format!("algorithm,seed,{ROUNDS_CSV_HEADER}\n");
    for (alg, records) in &all {
        for rec in records {
            for r in &rec.result.series.rounds {
                text += &format!("{},{},{}\n", alg.id(), rec.seed(), format_round_row(r));
            }
        }
    }
    fs::write(&path, text).map_err(|e| CliError::output(&path, e))?;

    let path = args.out.join("comparison_bmta.csv");
    let mut text = String::from("algorithm,runs,bmta_mean,bmta_std\n");
    for (alg, records) in &all {
        let (mean, std) = bmta_stats(records)?;
        text += &format!("{},{},{mean:.2},{std:.2}\n", alg.id(), records.len());
    }
    fs::write(&path, text).map_err(|e| CliError::output(&path, e))?;
    Ok(all)
}

/// Parses a comma-separated list of attention scales.
pub fn parse_sigma_list(list: &str) -> Result<Vec<f64>> {
    list.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::config(format!("--sigma: `{s}` is not a number")).into())
        })
        .collect()
}

pub fn sweep(args: &RunArgs) -> Result<Vec<(f64, Vec<RunRecord>)>> {
    let list = args
        .config
        .sigma
        .clone()
        .ok_or_else(|| Error::config("sweep needs --sigma with one or more comma-separated values"))?;
    let sigmas = parse_sigma_list(&list)?;
    let mut stripped = args.clone();
    stripped.config.sigma = None;
    let resolver = Resolver::new(&stripped)?;
    let mut cache = DataCache::default();
    let mut all = Vec::new();
    for sigma in sigmas {
        let cfg = resolver.config(&[("sigma".into(), sigma.to_string())])?;
        let dir = args.out.join(format!("sigma-{sigma}"));
        let records = run_repeats(&cfg, args, resolver.explicit("clients"), &mut cache, &dir)?;
        all.push((sigma, records));
    }
    let path = args.out.join("sweep.csv");
    let mut text = String::from("sigma,runs,bmta_mean,bmta_std\n");
    for (sigma, records) in &all {
        let (mean, std) = bmta_stats(records)?;
        text += &format!("{sigma},{},{mean:.2},{std:.2}\n", records.len());
    }
    fs::write(&path, text).map_err(|e| CliError::output(&path, e))?;
    Ok(all)
}

/// One row of the ablation table.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub base: Algorithm,
    pub method: Algorithm,
    pub bmta_mean: f64,
    pub bmta_std: f64,
    /// `method - base` in percentage points; `None` on the base row.
    pub delta: Option<f64>,
}

pub fn ablate(args: &RunArgs) -> Result<Vec<AblationRow>> {
    let resolver = Resolver::new(args)?;
    let mut cache = DataCache::default();
    let mut rows = Vec::new();
    for (base, variant) in ABLATION_PAIRS {
        let mut base_mean = 0.0;
        for alg in [base, variant] {
            let cfg = resolver.config(&[("algorithm".into(), alg.id().into())])?;
            let records = run_repeats(&cfg, args, resolver.explicit("clients"), &mut cache, &args.out.join(alg.id()))?;
            let (mean, std) = bmta_stats(&records)?;
            if alg == base {
                base_mean = mean;
            }
            rows.push(AblationRow {
                base,
                method: alg,
                bmta_mean: mean,
                bmta_std: std,
                delta: (alg != base).then_some(mean - base_mean),
            });
        }
    }
    let path = args.out.join("ablation.csv");
    let mut text = String::from("group,method,bmta_mean,bmta_std,delta\n");
    for r in &rows {
        let delta = r.delta.map_or(String::new(), |d| format!("{d:+.2}"));
        text += &format!(
            "{},{},{:.2},{:.2},{delta}\n",
            r.base.id(),
            r.method.id(),
            r.bmta_mean,
            r.bmta_std
        );
    }
    fs::write(&path, &text).map_err(|e| CliError::output(&path, e))?;
    print!("{text}");
    Ok(rows)
}

pub fn gen_data(args: &GenDataArgs) -> Result<()> {
    let dataset: DatasetKind = args.dataset.parse()?;
    let mut cfg = RunConfig::defaults(Algorithm::FedMcsa, dataset, Architecture::Mlr);
    if let Some(n) = args.clients {
        cfg.clients = n;
    }
    cfg.clients_per_round = cfg.clients_per_round.min(cfg.clients);
    cfg.alpha = args.alpha;
    cfg.beta = args.beta;
    cfg.seed = args.seed;
    cfg.validate()?;
    let data = build_federation(&cfg, args.data_dir.as_deref())?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::output(parent, e))?;
    }
    write_federation_csv(&args.out, &data)?;
    let samples: usize = data.clients.iter().map(|c| c.len()).sum();
    println!(
        "{}: {} clients, {} samples -> {}",
        data.name,
        data.len(),
        samples,
        args.out.display()
    );
    Ok(())
}
