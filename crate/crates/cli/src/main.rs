use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use xai_core::detector;
use xai_core::evaluator::MetricId;
use xai_core::explainers::{explain, ExplainContext, HyperParams, Method, ParamValue};
use xai_core::io::{self, BaselineKind, Dataset, RunConfig};
use xai_core::optimizer::{Objective, Sample};
use xai_core::parallel::with_workers;
use xai_core::recommender::{self, Modality};
use xai_core::report::{self, EvaluationRecord, ExplanationRecord};
use xai_core::{ComputeGraph, Error, Result};

mod examples;

#[derive(Parser)]
#[command(name = "xai", version, about = "Architecture-aware explanations for feed-forward models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the model's layers and architecture tags.
    Detect {
        #[command(flatten)]
        model: ModelArgs,
        /// Write the profile as JSON to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List applicable explainers and why the others were excluded.
    Recommend {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long = "modality", required = true)]
        modalities: Vec<Modality>,
        /// Mapping table replacing the built-in one.
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Explain dataset samples with one method.
    Explain {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        method: Method,
        /// Hyperparameter as name=value; repeatable.
        #[arg(long = "param", value_parser = parse_param)]
        params: Vec<(String, ParamValue)>,
        /// Sample index; repeatable. Defaults to every sample.
        #[arg(long = "sample")]
        samples: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for explanations.json and heatmap/CSV files.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score stored explanations.
    Evaluate {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        data: DataArgs,
        /// explanations.json written by `explain`.
        #[arg(long)]
        explanations: PathBuf,
        /// Metric; repeatable. Defaults to every metric the data supports.
        #[arg(long = "metric")]
        metrics: Vec<MetricId>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Detect, recommend, optimize, evaluate and write a report.
    Auto {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long = "modality")]
        modalities: Vec<Modality>,
        #[arg(long)]
        metric: Option<MetricId>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (default: available parallelism).
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Train the synthetic example models and write them with their data.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct ModelArgs {
    /// Model manifest (JSON).
    #[arg(long)]
    model: PathBuf,
    /// Weight blob; defaults to the manifest path with a .bin extension.
    #[arg(long)]
    weights: Option<PathBuf>,
}

impl ModelArgs {
    fn load(&self) -> Result<ComputeGraph> {
        let weights = self.weights.clone().unwrap_or_else(|| self.model.with_extension("bin"));
        io::load_model(&self.model, &weights).map_err(|e| e.in_stage("load", self.model.display().to_string()))
    }
}

#[derive(Args)]
struct DataArgs {
    /// Dataset descriptor (JSON) or batched tensor file.
    #[arg(long)]
    data: PathBuf,
    /// Ground-truth mask tensor file, overriding the descriptor's.
    #[arg(long)]
    masks: Option<PathBuf>,
}

impl DataArgs {
    fn load(&self) -> Result<Dataset> {
        io::load_dataset(&self.data, self.masks.as_deref())
            .map_err(|e| e.in_stage("load", self.data.display().to_string()))
    }
}

fn parse_param(text: &str) -> std::result::Result<(String, ParamValue), String> {
    let (name, value) = text.split_once('=').ok_or_else(|| format!("expected name=value, got {text:?}"))?;
    Ok((name.trim().to_string(), ParamValue::parse(value.trim())))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Detect { model, out } => {
            let graph = model.load()?;
            for line in detector::describe(&graph) {
                println!("{line}");
            }
            let profile = detector::detect(&graph);
            let tags: Vec<String> = profile.tags.iter().map(|t| format!("{t:?}")).collect();
            println!("architecture: {}", tags.join(", "));
            if let Some(out) = out {
                write_text(&out, &(serde_json::to_string_pretty(&profile).expect("json") + "\n"))?;
            }
        }
        Command::Recommend { model, modalities, table, out } => {
            let graph = model.load()?;
            let table = match table {
                Some(p) => recommender::load_table(&p)?,
                None => recommender::default_table(),
            };
            let modalities: BTreeSet<Modality> = modalities.into_iter().collect();
            let rec = recommender::recommend(&detector::detect(&graph), &modalities, &table)?;
            println!("recommended: {}", rec.recommended.join(", "));
            for r in &rec.rejected {
                let reasons: Vec<String> = r.reasons.iter().map(|x| x.to_string()).collect();
                println!("excluded {}: {}", r.method_id, reasons.join(", "));
            }
            if let Some(out) = out {
                write_text(&out, &(serde_json::to_string_pretty(&rec).expect("json") + "\n"))?;
            }
        }
        Command::Explain { model, data, method, params, samples, seed, out } => {
            let graph = model.load()?;
            let dataset = data.load()?;
            let targets = report::targets(&graph, &dataset)?;
            let params: HyperParams = params.into_iter().collect();
            let indices: Vec<usize> = if samples.is_empty() { (0..dataset.len()).collect() } else { samples };
            let mean = dataset.mean();
            let mut ctx = ExplainContext::new(&graph);
            ctx.mean_baseline = Some(&mean);
            let mut records = Vec::with_capacity(indices.len());
            for i in indices {
                let x = dataset.samples.get(i).ok_or_else(|| {
                    Error::InvalidArgument(format!("sample {i} out of range (dataset has {})", dataset.len()))
                })?;
                let explanation = explain(&ctx, method, x, targets[i], &params, seed)
                    .map_err(|e| e.in_stage("explain", format!("sample {i}")))?;
                records.push(ExplanationRecord { sample: i, explanation });
            }
            let json = serde_json::to_string_pretty(&records).expect("json") + "\n";
            match out {
                Some(dir) => {
                    write_text(&dir.join("explanations.json"), &json)?;
                    for r in &records {
                        let stem = format!("{}_sample{}", method, r.sample);
                        let path = report::write_sidecar(&r.explanation.attributions, &dir, &stem)?;
                        println!("wrote {}", path.display());
                    }
                }
                None => print!("{json}"),
            }
        }
        Command::Evaluate { model, data, explanations, metrics, config, out } => {
            let graph = model.load()?;
            let dataset = data.load()?;
            let config = match config {
                Some(p) => RunConfig::load(&p)?,
                None => RunConfig::default(),
            };
            let text = fs::read_to_string(&explanations).map_err(|e| Error::io(&explanations, e))?;
            let records: Vec<ExplanationRecord> =
                serde_json::from_str(&text).map_err(|e| Error::parse(&explanations, e.to_string()))?;
            let metrics = if metrics.is_empty() {
                let mut m = vec![MetricId::Abpc, MetricId::Sensitivity, MetricId::Entropy];
                if dataset.masks.is_some() {
                    m.extend([MetricId::MassAccuracy, MetricId::RankAccuracy]);
                }
                m
            } else {
                metrics
            };
            let mean = dataset.mean();
            let mut ctx = ExplainContext::new(&graph);
            ctx.mean_baseline = Some(&mean);
            let objective = Objective {
                metric: config.metric,
                steps: config.steps,
                baseline: (config.perturbation_baseline == BaselineKind::Mean).then(|| mean.clone()),
                sensitivity_radius: config.sensitivity_radius,
                sensitivity_probes: config.sensitivity_probes,
            };
            let mut results = Vec::with_capacity(records.len());
            for r in &records {
                let i = r.sample;
                let x = dataset.samples.get(i).ok_or_else(|| {
                    Error::InvalidArgument(format!("explanation refers to sample {i} beyond the dataset"))
                })?;
                let sample = Sample {
                    x: x.clone(),
                    target: r.explanation.target_class,
                    mask: dataset.masks.as_ref().map(|m| m[i].clone()),
                };
                let values = metrics
                    .iter()
                    .map(|&m| objective.evaluate(&ctx, &sample, &r.explanation, m))
                    .collect::<Result<Vec<_>>>()
                    .map_err(|e| e.in_stage("evaluate", format!("sample {i}")))?;
                results.push(EvaluationRecord {
                    sample: i,
                    method: r.explanation.method,
                    target: sample.target,
                    metrics: values,
                });
            }
            let json = serde_json::to_string_pretty(&results).expect("json") + "\n";
            match out {
                Some(path) => write_text(&path, &json)?,
                None => print!("{json}"),
            }
        }
        Command::Auto { model, data, modalities, metric, seed, config, table, out, workers } => {
            let start = Instant::now();
            let mut config = match config {
                Some(p) => RunConfig::load(&p)?,
                None => RunConfig::default(),
            };
            if !modalities.is_empty() {
                config.modalities = modalities;
            }
            if let Some(m) = metric {
                config.metric = m;
            }
            if let Some(s) = seed {
                config.seed = s;
            }
            if let Some(o) = out {
                config.output_dir = Some(o);
            }
            let out_dir = config
                .output_dir
                .clone()
                .ok_or_else(|| Error::InvalidArgument("no output directory (use --out or the config's output_dir)".into()))?;
            let table = match table {
                Some(p) => recommender::load_table(&p)?,
                None => recommender::default_table(),
            };
            let graph = model.load()?;
            let dataset = data.load()?;
            let report = with_workers(workers, || report::auto_explain(&graph, &dataset, &config, &table))??;
            let written = report::write_outputs(&report, &out_dir, config.sidecar_samples, start.elapsed().as_secs_f64())
                .map_err(|e| e.in_stage("report", out_dir.display().to_string()))?;
            println!("ranking: {}", report.ranking.iter().map(|m| m.id()).collect::<Vec<_>>().join(", "));
            for m in &report.methods {
                let r = &m.optimization;
                println!(
                    "{:<22} {} default {:>10} best {:>10.6}",
                    m.method.id(),
                    r.metric,
                    r.default_score.map_or("undefined".to_string(), |v| format!("{v:.6}")),
                    r.best_score
                );
            }
            println!("wrote {} files to {}", written.len(), out_dir.display());
        }
        Command::Synth { out, seed } => {
            for path in examples::write_examples(&out, seed)? {
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() { 2 } else { 3 })
        }
    }
}
