use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use casebook_core::graph::{make_splits, SplitName, SplitSpec, TaskMode};
use casebook_core::pipeline::fixtures::write_planted;
use casebook_core::pipeline::{DataBundle, Engine, PipelineConfig, PredictionRecord};
use casebook_core::repository::Repository;

#[derive(Debug, Parser)]
#[command(name = "casebook", version, about = "Case-based drug interaction prediction")]
struct Cli {
    /// JSON pipeline config; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Drop a prompt section.
    #[arg(long, global = true, value_enum)]
    ablation: Vec<AblationFlag>,
    /// File resolved validation pairs as cases while evaluating.
    #[arg(long, global = true)]
    online_refine: bool,
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AblationFlag {
    NoCase,
    NoAsso,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Multiclass,
    Multilabel,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse a triple file and a DDI file into a binary bundle.
    Ingest {
        #[arg(long)]
        kg: Option<PathBuf>,
        #[arg(long)]
        ddi: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw emerging-drug splits, or validate and adopt an existing file.
    Split {
        #[arg(long, default_value_t = 0.2)]
        fraction: f64,
        #[arg(long, default_value_t = 0.0)]
        s0_fraction: f64,
        #[arg(long)]
        import: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the pair encoder and write a checkpoint.
    TrainGnn {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare analytic and finite-difference gradients.
    GradCheck {
        #[arg(long, default_value_t = 10)]
        inits: usize,
        #[arg(long, default_value_t = 1e-5)]
        epsilon: f64,
        #[arg(long, default_value_t = 200)]
        samples: usize,
        #[arg(long, default_value_t = 1e-4)]
        threshold: f64,
    },
    /// Build the initial case repository from sampled training pairs.
    BuildRepo {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict one drug pair and print the record.
    Predict {
        #[arg(long)]
        drug_a: String,
        #[arg(long)]
        drug_b: String,
    },
    /// Predict a split and write the report and records.
    Evaluate {
        #[arg(long)]
        split: SplitName,
        #[arg(long, default_value = "results")]
        out_dir: PathBuf,
        /// `param=v1,v2,...` with param one of lambda, k, p, n.
        #[arg(long)]
        sweep: Vec<String>,
    },
    /// Compact the repository by per-category K-Medoids.
    Refine {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Majority-vote retrieval accuracy over a λ grid, as CSV.
    RetrievalAcc {
        #[arg(long)]
        split: SplitName,
        #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.25, 0.5, 0.75, 1.0])]
        lambdas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = [1, 5])]
        k: Vec<usize>,
    },
    /// Write a synthetic dataset with a config next to it.
    Fixture {
        #[arg(value_enum)]
        kind: FixtureKind,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FixtureKind {
    Planted,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.train.seed = seed;
    }
    for a in &cli.ablation {
        match a {
            AblationFlag::NoCase => cfg.ablation.with_cases = false,
            AblationFlag::NoAsso => cfg.ablation.with_assoc = false,
        }
    }
    if cli.online_refine {
        cfg.online_refine = true;
    }
    if cli.workers.is_some() {
        cfg.workers = cli.workers;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn required<'a>(flag: &'a Option<PathBuf>, fallback: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    match flag.as_ref().or(fallback.as_ref()) {
        Some(p) => Ok(p),
        None => bail!("no {what} path: pass a flag or set it in the config"),
    }
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::Ingest { kg, ddi, mode, out } => {
            let kg = required(&kg, &cfg.paths.kg, "knowledge graph")?;
            let ddi = required(&ddi, &cfg.paths.dataset, "dataset")?;
            let mode = match mode {
                Some(Mode::Multiclass) => TaskMode::Multiclass,
                Some(Mode::Multilabel) => TaskMode::Multilabel,
                None => cfg.task_mode,
            };
            let bundle = DataBundle::from_files(kg, ddi, mode)?;
            let out = required(&out, &cfg.paths.bundle, "bundle")?;
            bundle.save(out)?;
            print_json(&serde_json::json!({
                "entities": bundle.kg.num_entities(),
                "relations": bundle.kg.num_base_relations(),
                "triples": bundle.kg.triple_count(),
                "pairs": bundle.dataset.pairs.len(),
                "labels": bundle.dataset.num_relations(),
            }))
        }
        Command::Split {
            fraction,
            s0_fraction,
            import,
            out,
        } => {
            let bundle = match (&cfg.paths.bundle, &cfg.paths.kg, &cfg.paths.dataset) {
                (Some(b), _, _) if b.exists() => DataBundle::load(b)?,
                (_, Some(kg), Some(ddi)) => DataBundle::from_files(kg, ddi, cfg.task_mode)?,
                _ => bail!("config needs paths.bundle, or paths.kg and paths.dataset"),
            };
            let spec = match import {
                Some(p) => {
                    let spec = SplitSpec::load(&p)?;
                    spec.validate(&bundle.dataset)?;
                    spec
                }
                None => make_splits(&bundle.dataset, fraction, s0_fraction, cfg.seed)?,
            };
            let out = required(&out, &cfg.paths.splits, "splits")?;
            spec.save(out)?;
            print_json(&serde_json::json!({
                "emerging_drugs": spec.emerging_drugs.len(),
                "train": spec.train.len(),
                "s0_valid": spec.valid_s0.len(),
                "s0_test": spec.test_s0.len(),
                "s1_valid": spec.valid_s1.len(),
                "s1_test": spec.test_s1.len(),
                "s2_valid": spec.valid_s2.len(),
                "s2_test": spec.test_s2.len(),
            }))
        }
        Command::TrainGnn { out } => {
            let out = required(&out, &cfg.paths.checkpoint, "checkpoint")?.to_path_buf();
            let mut engine = Engine::from_config(cfg)?;
            let report = engine.train_gnn()?;
            engine.checkpoint()?.save(&out)?;
            print_json(&serde_json::json!({
                "epochs": report.losses.len(),
                "final_loss": report.losses.last(),
                "checkpoint": out,
            }))
        }
        Command::GradCheck {
            inits,
            epsilon,
            samples,
            threshold,
        } => {
            let engine = Engine::from_config(cfg)?;
            let reports = engine.grad_check(inits, epsilon, samples)?;
            let worst = reports
                .iter()
                .map(|r| r.max_relative_error)
                .fold(0.0_f64, f64::max);
            for (i, r) in reports.iter().enumerate() {
                println!(
                    "init {i}: max relative error {:.3e} at {} ({} coordinates)",
                    r.max_relative_error, r.worst_description, r.coordinates_checked
                );
            }
            println!("max relative error {worst:.3e} (threshold {threshold:.0e})");
            if worst >= threshold {
                bail!("gradient check failed");
            }
            Ok(())
        }
        Command::BuildRepo { out } => {
            let out = required(&out, &cfg.paths.repository, "repository")?.to_path_buf();
            let engine = Engine::from_config(cfg)?;
            let (repo, warnings) = engine.build_repository()?;
            repo.save(&out)?;
            print_json(&serde_json::json!({
                "cases": repo.len(),
                "skipped": warnings.len(),
                "repository": out,
            }))
        }
        Command::Predict { drug_a, drug_b } => {
            let engine = Engine::from_config(cfg)?;
            let record = engine.predict_pair(engine.entity(&drug_a)?, engine.entity(&drug_b)?)?;
            print_json(&serde_json::to_value(&record)?)
        }
        Command::Evaluate { split, out_dir, sweep } => {
            let sweeps = sweep.iter().map(|s| parse_sweep(s)).collect::<Result<Vec<_>>>()?;
            let mut engine = Engine::from_config(cfg)?;
            fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
            let started = Instant::now();
            let eval = engine.evaluate(split)?;
            info!("evaluated {} pairs in {:.2?}", eval.records.len(), started.elapsed());
            PredictionRecord::write_jsonl(&eval.records, &out_dir.join("records.jsonl"))?;
            let report = serde_json::to_string_pretty(&eval.report)?;
            fs::write(out_dir.join("report.json"), format!("{report}\n"))?;
            if !eval.failures.is_empty() {
                fs::write(
                    out_dir.join("failures.json"),
                    serde_json::to_string_pretty(&eval.failures)? + "\n",
                )?;
            }
            if !sweeps.is_empty() {
                let mut csv = String::from("param,value,metric\n");
                for (param, values) in &sweeps {
                    for (v, m) in engine.sweep(split, param, values)? {
                        csv.push_str(&format!("{param},{v},{m}\n"));
                    }
                }
                fs::write(out_dir.join("sweep.csv"), csv)?;
            }
            println!("{report}");
            Ok(())
        }
        Command::Refine { out } => {
            let src = required(&None, &cfg.paths.repository, "repository")?;
            let out = out.unwrap_or_else(|| src.to_path_buf());
            let repo = Repository::load(src)?;
            let (refined, report) = repo.refine()?;
            refined.save(&out)?;
            print_json(&serde_json::json!({
                "before": report.before(),
                "after": report.after(),
                "categories": report,
            }))
        }
        Command::RetrievalAcc { split, lambdas, k } => {
            let engine = Engine::from_config(cfg)?;
            println!("k,lambda,accuracy");
            for kk in k {
                for (l, acc) in engine.retrieval_curve(split, &lambdas, kk)? {
                    println!("{kk},{l},{acc}");
                }
            }
            Ok(())
        }
        Command::Fixture { kind, out } => match kind {
            FixtureKind::Planted => {
                let path = write_planted(&out, cfg.seed)?;
                println!("{}", path.display());
                Ok(())
            }
        },
    }
}

fn parse_sweep(spec: &str) -> Result<(String, Vec<f64>)> {
    let Some((param, values)) = spec.split_once('=') else {
        bail!("sweep {spec:?} is not param=v1,v2,...");
    };
    let values = values
        .split(',')
        .map(|v| v.trim().parse::<f64>().with_context(|| format!("sweep value {v:?}")))
        .collect::<Result<Vec<_>>>()?;
    Ok((param.trim().to_string(), values))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // clap exits with 2 on usage errors
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
