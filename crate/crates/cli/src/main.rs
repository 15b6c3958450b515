use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use keyscan_core::benchstats::{emit_bench_outputs, parse_bench_log, slowdown_ratios, summarize, DeviceYears, KeystoreKind};
use keyscan_core::config::Config;
use keyscan_core::corpus::{app_input, load_all_results};
use keyscan_core::fsutil::{to_json_bytes, write_atomic};
use keyscan_core::labels::{classify_sensitivity, ingest_labels, CategoryTable};
use keyscan_core::pipeline::{self, append_statuses, batch_exit_code, load_signature_db, results_dir, StageStatus};

#[derive(Parser, Debug)]
#[command(name = "keyscan", version, about = "Keystore configuration analysis over decompiled Android apps")]
struct Cli {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(subcommand)]
    command: Command,
}

/// Flags mirror the configuration keys; they override the file and the environment.
#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    bfs_node_limit: Option<String>,
    #[arg(long, global = true, value_name = "N")]
    obfuscation_min_component: Option<String>,
    #[arg(long, global = true, value_name = "MINUTES")]
    per_app_timeout_minutes: Option<String>,
    /// Comma-separated prefilter keywords.
    #[arg(long, global = true, value_name = "LIST")]
    needle_set: Option<String>,
    #[arg(long, global = true, value_name = "FILE")]
    signature_db_path: Option<String>,
    #[arg(long, global = true, value_name = "N")]
    min_installs_filter: Option<String>,
    #[arg(long, global = true, value_name = "BOOL")]
    cha_enabled: Option<String>,
    /// Worker threads; 0 uses every CPU.
    #[arg(long, global = true, value_name = "N")]
    workers: Option<String>,
    #[arg(long, global = true, value_name = "N")]
    top_n_packages: Option<String>,
    #[arg(long, global = true, hide = true, value_name = "MS")]
    timeout_ms: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<Config> {
        let mut cfg = Config::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        cfg.apply_env(std::env::vars())?;
        let flags = [
            ("bfs_node_limit", &self.bfs_node_limit),
            ("obfuscation_min_component", &self.obfuscation_min_component),
            ("per_app_timeout_minutes", &self.per_app_timeout_minutes),
            ("needle_set", &self.needle_set),
            ("signature_db_path", &self.signature_db_path),
            ("min_installs_filter", &self.min_installs_filter),
            ("cha_enabled", &self.cha_enabled),
            ("workers", &self.workers),
            ("top_n_packages", &self.top_n_packages),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        if self.timeout_ms.is_some() {
            cfg.timeout_ms_override = self.timeout_ms;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Keyword prefilter over every app in a corpus directory.
    Prefilter {
        corpus_dir: PathBuf,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse, detect and slice apps; writes one result file per app.
    Scan {
        /// App directories, or a single corpus directory with --corpus.
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        #[arg(long)]
        corpus: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Corpus-level stages over stored results.
    Corpus {
        #[command(subcommand)]
        command: CorpusCommand,
    },
    /// Data safety labels.
    Labels {
        #[command(subcommand)]
        command: LabelsCommand,
    },
    /// Assemble key configurations and evaluate the lint rules.
    Lint {
        #[arg(long)]
        out: PathBuf,
    },
    /// Summary statistics, ratios and figure series from a benchmark log.
    Benchstats {
        log: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Baseline::Tee)]
        baseline: Baseline,
        /// `device,year` lookup used for rows without a year.
        #[arg(long)]
        device_years: Option<PathBuf>,
    },
    /// Every stage in order over a corpus directory.
    Run {
        corpus_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Print the effective configuration.
    Config,
}

#[derive(Subcommand, Debug)]
enum CorpusCommand {
    /// Build the manifest and the package party index.
    ClassifyPackages {
        #[arg(long)]
        out: PathBuf,
    },
    /// Call graph and backward reachability for every stored result.
    Reach {
        corpus_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Corpus metrics and report files.
    Stats {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
enum LabelsCommand {
    /// Validate a JSONL label file and write the normalized labels.
    Ingest {
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        categories: Option<PathBuf>,
    },
    /// Sensitivity class per app; apps in --out results without a label are `no-label`.
    Classify {
        labels: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        categories: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Baseline {
    Software,
    Tee,
    Strongbox,
}

impl From<Baseline> for KeystoreKind {
    fn from(b: Baseline) -> Self {
        match b {
            Baseline::Software => KeystoreKind::Software,
            Baseline::Tee => KeystoreKind::Tee,
            Baseline::Strongbox => KeystoreKind::Strongbox,
        }
    }
}

fn categories(path: &Option<PathBuf>) -> Result<CategoryTable> {
    Ok(match path {
        Some(p) => CategoryTable::load(p)?,
        None => CategoryTable::builtin(),
    })
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let bytes = to_json_bytes(value)?;
    write_atomic(path, &bytes).with_context(|| format!("writing {}", path.display()))
}

fn finish_batch(out: &Path, statuses: &[StageStatus]) -> Result<u8> {
    append_statuses(out, statuses)?;
    for s in statuses.iter().filter(|s| s.stage.is_terminal()) {
        log::info!("{} {:?} {}", s.app_id, s.stage, s.message);
    }
    Ok(batch_exit_code(statuses) as u8)
}

fn run(cli: Cli) -> Result<u8> {
    let cfg = cli.config.resolve()?;
    match cli.command {
        Command::Config => {
            print!("{}", cfg.to_text());
            Ok(0)
        }
        Command::Prefilter { corpus_dir, out } => {
            let reports: std::collections::BTreeMap<_, _> =
                pipeline::prefilter_corpus(&corpus_dir, &cfg)?.into_iter().collect();
            match out {
                Some(p) => write_json(&p, &reports)?,
                None => print!("{}", String::from_utf8(to_json_bytes(&reports)?)?),
            }
            Ok(0)
        }
        Command::Scan { paths, corpus, out } => {
            let db = load_signature_db(&cfg)?;
            let statuses = if corpus {
                if paths.len() != 1 {
                    bail!("--corpus takes exactly one directory");
                }
                pipeline::scan_corpus(&paths[0], &out, &cfg, &db)?
            } else {
                let inputs = paths.iter().map(|p| app_input(p)).collect::<Result<Vec<_>, _>>()?;
                pipeline::scan_inputs(&inputs, &out, &cfg, &db, true)?
            };
            finish_batch(&out, &statuses)
        }
        Command::Corpus { command } => match command {
            CorpusCommand::ClassifyPackages { out } => {
                let db = load_signature_db(&cfg)?;
                let m = pipeline::classify_corpus(&out, &cfg, &db)?;
                for d in &m.diagnostics {
                    log::warn!("{d:?}");
                }
                println!("{} packages, {} apps", m.package_index.len(), m.apps.len());
                Ok(0)
            }
            CorpusCommand::Reach { corpus_dir, out } => {
                let statuses = pipeline::reach_corpus(&corpus_dir, &out, &cfg)?;
                finish_batch(&out, &statuses)
            }
            CorpusCommand::Stats { out, labels } => {
                let db = load_signature_db(&cfg)?;
                let stats = pipeline::stats_corpus(&out, &cfg, &db, labels.as_deref())?;
                for (name, f) in stats.fractions() {
                    println!("{name}: {f}");
                }
                Ok(0)
            }
        },
        Command::Labels { command } => match command {
            LabelsCommand::Ingest { labels, out, categories: cat } => {
                let table = categories(&cat)?;
                let ingested = ingest_labels(&labels, &table)?;
                for w in &ingested.warnings {
                    log::warn!("{w}");
                }
                write_json(&out, &ingested.labels)?;
                println!("{} labels", ingested.labels.len());
                Ok(0)
            }
            LabelsCommand::Classify { labels, out, categories: cat } => {
                let table = categories(&cat)?;
                let ingested = ingest_labels(&labels, &table)?;
                let mut classes = std::collections::BTreeMap::new();
                if let Some(out) = out {
                    for r in load_all_results(&results_dir(&out))? {
                        classes.insert(r.app_id, keyscan_core::labels::SensitivityClass::NoLabel);
                    }
                }
                for l in &ingested.labels {
                    classes.insert(l.app_id.clone(), classify_sensitivity(l, &table));
                }
                for (app, class) in classes {
                    println!("{app}\t{}", serde_json::to_value(class)?.as_str().unwrap_or_default());
                }
                Ok(0)
            }
        },
        Command::Lint { out } => {
            let db = load_signature_db(&cfg)?;
            let report = pipeline::lint_corpus(&out, &db)?;
            for f in &report.findings {
                println!("{}\t{}\t{}\t{:?}\t{}", f.app_id, f.key_id, f.rule_id, f.severity, f.message);
            }
            Ok(0)
        }
        Command::Benchstats { log, out, baseline, device_years } => {
            let text = fs::read_to_string(&log).with_context(|| format!("reading {}", log.display()))?;
            let mut samples = parse_bench_log(&text)?;
            let years = match device_years {
                Some(p) => DeviceYears::from_csv(&fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?)?,
                None => DeviceYears::builtin(),
            };
            years.fill(&mut samples);
            let summaries = summarize(&samples);
            let ratios = slowdown_ratios(&summaries, baseline.into());
            let (_, warnings) = emit_bench_outputs(&summaries, &ratios, &out)?;
            for w in &warnings {
                log::warn!("{w}");
            }
            println!("{} groups, {} ratios", summaries.len(), ratios.rows.len());
            Ok(0)
        }
        Command::Run { corpus_dir, out, labels } => {
            let summary = pipeline::run_pipeline(&corpus_dir, &out, &cfg, labels.as_deref())?;
            for (name, f) in summary.stats.fractions() {
                println!("{name}: {f}");
            }
            println!("{} lint findings", summary.findings);
            Ok(summary.exit_code() as u8)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
