use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use log::info;
use serde_json::Value;

use pathprune::config::{apply_override, ExperimentConfig};
use pathprune::labeler::{build_dataset, stratify_queries, Dataset};
use pathprune::metrics::{MetricsReport, MetricsRow};
use pathprune::pipeline::{
    attach_baseline, extract_optima, run_no_pruning, run_with_pruning, sweep_from_csv, sweep_gamma, sweep_to_csv,
    EvaluatorContext, EvaluatorRegistry,
};
use pathprune::scaling::{fit_powerlaw, reference_tables, Observation, ScalingCoefficients};
use pathprune::signals::{GeneratorConfig, Judge, ScorerModel, SignalContext, SignalRegistry};
use pathprune::trainer::train_scorer;
use pathprune::types::{read_queries, write_queries};
use pathprune::{Error, Result};

#[derive(Parser)]
#[command(name = "pathprune", version, about = "Launch-check-resume path pruning experiments")]
struct Cli {
    /// Experiment config (JSON). Defaults to a simulator backend.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set run.launch_count=32`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Global seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the query set to queries.jsonl.
    Simulate,
    /// Stratify queries and build Monte-Carlo labels (labels.jsonl).
    Label,
    /// Train the learned scorer (scorer.json, train_log.csv).
    Train,
    /// Run launch-check-resume and the unpruned baseline (runs/<name>/).
    Run,
    /// Sweep retention ratios over a grid (sweep.csv).
    Sweep,
    /// Extract optimal ratios from sweep.csv and fit the power law.
    FitLaw,
    /// Emit the retention lookup tables (tables/*.csv).
    Tables,
    /// Collate runs/*/metrics.csv into report.md.
    Report,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut doc: Value = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => serde_json::json!({"backend": {"sim": {}}}),
    };
    for o in &cli.overrides {
        apply_override(&mut doc, o)?;
    }
    if let Some(seed) = cli.seed {
        doc["seed"] = seed.into();
    }
    if let Some(out) = &cli.out {
        doc["out"] = out.to_string_lossy().as_ref().into();
    }
    ExperimentConfig::from_value(doc)
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write(path: &Path, text: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn read_artifact(path: &Path, hint: &str) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingArtifact {
                path: path.to_path_buf(),
                hint: hint.into(),
            }
        } else {
            Error::Io {
                path: path.to_path_buf(),
                source: e,
            }
        }
    })
}

fn signal_context(cfg: &ExperimentConfig, gen: &GeneratorConfig, judge: Option<Arc<dyn Judge>>) -> Result<SignalContext> {
    let model = if gen.kind == "learned" {
        let path = gen.model_path.as_ref().map_or_else(|| cfg.out.join("scorer.json"), PathBuf::from);
        Some(Arc::new(ScorerModel::load(&path)?))
    } else {
        None
    };
    Ok(SignalContext {
        seed: cfg.substream("signals"),
        model,
        judge,
    })
}

fn cmd_simulate(cfg: &ExperimentConfig) -> Result<String> {
    let queries = match &cfg.queries.path {
        Some(p) => read_queries(p)?,
        None => {
            let sim = pathprune::sim::SimBackend::new(cfg.sim_config().expect("validated"))?;
            sim.sample_queries(cfg.queries.count)
        }
    };
    create_dir(&cfg.out)?;
    let path = cfg.out.join("queries.jsonl");
    write_queries(&path, &queries)?;
    let mean_len = queries.iter().map(|q| q.task_length_ref as f64).sum::<f64>() / queries.len().max(1) as f64;
    Ok(format!(
        "simulate queries={} mean_task_length={mean_len:.1} out={}",
        queries.len(),
        path.display()
    ))
}

fn cmd_label(cfg: &ExperimentConfig) -> Result<String> {
    let queries = read_queries(&cfg.out.join("queries.jsonl"))?;
    let (backend, _) = cfg.backend()?;
    let lc = &cfg.labeler;
    let kept = if lc.stratify_rollouts > 0 {
        let s = stratify_queries(&queries, backend.as_ref(), lc.stratify_rollouts, lc.lower, lc.upper, lc.prefix_length)?;
        s.retained
    } else {
        queries.clone()
    };
    info!("stratification kept {} of {} queries", kept.len(), queries.len());
    if kept.is_empty() {
        return Err(Error::EmptyDataset("no query passed stratification"));
    }
    let dataset = build_dataset(&kept, backend.as_ref(), lc, cfg.substream("labeler"))?;
    let path = cfg.out.join("labels.jsonl");
    dataset.write_jsonl(&path)?;
    Ok(format!(
        "label queries={} retained={} records={} K={} rollout_tokens={} out={}",
        queries.len(),
        kept.len(),
        dataset.records.len(),
        lc.rollouts,
        dataset.header.rollout_tokens,
        path.display()
    ))
}

fn cmd_train(cfg: &ExperimentConfig) -> Result<String> {
    let dataset = Dataset::read_jsonl(&cfg.out.join("labels.jsonl"))?;
    let mut outcome = train_scorer(&dataset.records, &cfg.trainer_config())?;
    outcome.model.prefix_length = Some(dataset.header.prefix_length);
    for w in &outcome.warnings {
        log::warn!("{w}");
    }
    let model_path = cfg.out.join("scorer.json");
    outcome.model.save(&model_path)?;
    outcome.write_log(&cfg.out.join("train_log.csv"))?;
    let best = &outcome.log[outcome.best_epoch];
    Ok(format!(
        "train records={} train_queries={} val_queries={} best_epoch={} train_loss={:.6} val_loss={} out={}",
        dataset.records.len(),
        outcome.train_queries.len(),
        outcome.val_queries.len(),
        outcome.best_epoch,
        best.train_loss,
        best.val_loss.map_or("na".into(), |v| format!("{v:.6}")),
        model_path.display()
    ))
}

fn cmd_run(cfg: &ExperimentConfig) -> Result<String> {
    let spec = cfg
        .run
        .as_ref()
        .ok_or_else(|| Error::Config("run: block is required for the run command".into()))?;
    let queries = read_queries(&cfg.out.join("queries.jsonl"))?;
    let (backend, judge) = cfg.backend()?;
    let mut ctx = signal_context(cfg, &spec.generator, Some(judge))?;
    ctx.seed = pathprune::rng::Stream::new(ctx.seed).index(spec.seed).seed();
    let mismatch = ctx
        .model
        .as_ref()
        .and_then(|m| m.prefix_length)
        .filter(|&trained| trained != spec.retention.prefix_length);
    if let Some(trained) = mismatch {
        log::warn!(
            "scorer was trained on {trained}-token prefixes but the run checks at {}",
            spec.retention.prefix_length
        );
    }
    let generator = SignalRegistry::default().build(&spec.generator, &ctx)?;
    let mut result = run_with_pruning(&queries, spec, backend.as_ref(), generator.as_ref())?;
    if spec.compare_baseline {
        let baseline = run_no_pruning(&queries, spec.launch_count, spec.retention.prefix_length, backend.as_ref())?;
        attach_baseline(&mut result.report, &baseline)?;
    }
    let echo = serde_json::to_value(cfg)?;
    let dir = result.write_dir(&cfg.out, &spec.name, &echo)?;
    let r = &result.report;
    let opt = |v: Option<f64>| v.map_or("na".into(), |v| format!("{v:.4}"));
    Ok(format!(
        "run name={} method={} N={} k={} queries={} avg_at_m_given_k={:.4} avg_at_k={} cons_at_n={:.4} tokens={} token_reduction_pct={} issues={} dir={}",
        spec.name,
        r.method,
        r.launch_count,
        r.retain_count,
        result.queries.len(),
        r.avg_at_m_given_k,
        opt(r.avg_at_k),
        r.cons_at_n,
        r.tokens_total,
        opt(r.token_reduction_pct),
        r.issues.len(),
        dir.display()
    ))
}

fn cmd_sweep(cfg: &ExperimentConfig) -> Result<String> {
    let sc = &cfg.sweep;
    let generator = if sc.evaluator == "pipeline" {
        let ctx = signal_context(cfg, &sc.generator, None)?;
        Some(SignalRegistry::default().build(&sc.generator, &ctx)?)
    } else {
        None
    };
    let ctx = EvaluatorContext {
        sim: cfg.sim_config(),
        generator,
        query_count: sc.query_count,
        planted: sc.planted.clone(),
    };
    let evaluator = EvaluatorRegistry::default().build(&sc.evaluator, &ctx)?;
    let rows = sweep_gamma(&sc.grid, evaluator.as_ref())?;
    create_dir(&cfg.out)?;
    let path = cfg.out.join("sweep.csv");
    write(&path, sweep_to_csv(&rows))?;
    Ok(format!(
        "sweep evaluator={} points={} out={}",
        evaluator.name(),
        rows.len(),
        path.display()
    ))
}

fn cmd_fit_law(cfg: &ExperimentConfig) -> Result<String> {
    let rows = sweep_from_csv(&read_artifact(&cfg.out.join("sweep.csv"), "run the sweep step first")?)?;
    let optima = extract_optima(&rows, cfg.sweep.buckets)?;
    let mut csv = String::from("budget,prefix_length,task_length,gamma,inverse_gamma,accuracy\n");
    for o in &optima {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            o.budget,
            o.prefix_length,
            o.task_length,
            o.gamma,
            1.0 / o.gamma,
            o.accuracy
        ));
    }
    write(&cfg.out.join("optima.csv"), csv)?;
    let obs: Vec<Observation> = optima
        .iter()
        .map(|o| Observation {
            budget: o.budget,
            prefix_length: o.prefix_length as f64,
            task_length: o.task_length,
            inverse_gamma: 1.0 / o.gamma,
        })
        .collect();
    let coeffs = fit_powerlaw(&obs)?;
    let path = cfg.out.join("coefficients.json");
    write(&path, serde_json::to_string_pretty(&coeffs)? + "\n")?;
    let rmse = coeffs.fit.as_ref().map_or(f64::NAN, |f| f.rmse_log);
    Ok(format!(
        "fit-law optima={} a={:.6e} b={:.4} c={:.4} d={:.4} rmse_log={rmse:.4} out={}",
        optima.len(),
        coeffs.a,
        coeffs.b,
        coeffs.c,
        coeffs.d,
        path.display()
    ))
}

fn cmd_tables(cfg: &ExperimentConfig) -> Result<String> {
    let (source, coeffs) = if cfg.scaling.use_fitted {
        let text = read_artifact(&cfg.out.join("coefficients.json"), "run the fit-law step first")?;
        ("fitted", serde_json::from_str::<ScalingCoefficients>(&text)?)
    } else if let Some(c) = &cfg.scaling.coefficients {
        ("config", c.clone())
    } else {
        ("published", ScalingCoefficients::published())
    };
    let dir = cfg.out.join("tables");
    create_dir(&dir)?;
    let tables = reference_tables(&coeffs)?;
    for t in &tables {
        write(&dir.join(format!("{}.csv", t.name)), t.to_csv())?;
        write(&dir.join(format!("{}.txt", t.name)), t.to_text())?;
    }
    Ok(format!(
        "tables coefficients={source} tables={} cells={} dir={}",
        tables.len(),
        tables.iter().map(|t| t.cell_count()).sum::<usize>(),
        dir.display()
    ))
}

type Cell = (f64, Option<f64>);

fn render_report(rows: &[MetricsRow]) -> String {
    let datasets: Vec<&str> = {
        let mut d: Vec<&str> = rows.iter().map(|r| r.dataset.as_str()).collect();
        d.sort();
        d.dedup();
        d
    };
    // (baseline first, method label) -> dataset -> (avg@m|k, token reduction)
    let mut table: BTreeMap<(u8, String), BTreeMap<&str, Cell>> = BTreeMap::new();
    for r in rows {
        if let Some(avg_k) = r.avg_at_k {
            table
                .entry((0, format!("no_pruning N={}", r.launch_count)))
                .or_default()
                .entry(r.dataset.as_str())
                .or_insert((avg_k, None));
        }
        table
            .entry((1, format!("{} N={} k={}", r.method, r.launch_count, r.retain_count)))
            .or_default()
            .insert(r.dataset.as_str(), (r.avg_at_m_given_k, r.token_reduction_pct));
    }
    let mut out = String::from("# Path pruning report\n\n## Accuracy and token reduction\n\n| Method |");
    for d in &datasets {
        out.push_str(&format!(" {d} avg@m\\|k | {d} tokens ↓ |"));
    }
    out.push_str("\n|---|");
    out.push_str(&"---:|---:|".repeat(datasets.len()));
    out.push('\n');
    for ((_, label), cells) in &table {
        out.push_str(&format!("| {label} |"));
        for d in &datasets {
            match cells.get(d) {
                Some((acc, red)) => {
                    let red = red.map_or("-".into(), |v| format!("{v:.2}%"));
                    out.push_str(&format!(" {:.2} | {red} |", acc * 100.0));
                }
                None => out.push_str(" - | - |"),
            }
        }
        out.push('\n');
    }
    out.push_str("\n## Runs\n\n| Run | Dataset | Method | N | k | cons@N | baseline cons@N | tokens | baseline tokens |\n|---|---|---|---:|---:|---:|---:|---:|---:|\n");
    for r in rows {
        let opt = |v: Option<f64>| v.map_or("-".into(), |v| format!("{:.2}", v * 100.0));
        out.push_str(&format!(
            "| {} | {} | {} | {} | {} | {:.2} | {} | {} | {} |\n",
            r.run_name,
            r.dataset,
            r.method,
            r.launch_count,
            r.retain_count,
            r.cons_at_n * 100.0,
            opt(r.baseline_cons_at_n),
            r.tokens_total,
            r.tokens_baseline.map_or("-".into(), |t| t.to_string())
        ));
    }
    out
}

fn cmd_report(cfg: &ExperimentConfig) -> Result<String> {
    let runs = cfg.out.join("runs");
    let missing = || Error::MissingArtifact {
        path: runs.join("*").join("metrics.csv"),
        hint: "run the run step first".into(),
    };
    let entries = std::fs::read_dir(&runs).map_err(|_| missing())?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path().join("metrics.csv")))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(missing());
    }
    let mut rows = Vec::new();
    for f in &files {
        rows.extend(MetricsReport::from_csv(&read_artifact(f, "run the run step first")?)?);
    }
    let path = cfg.out.join("report.md");
    write(&path, render_report(&rows))?;
    Ok(format!("report runs={} rows={} out={}", files.len(), rows.len(), path.display()))
}

fn dispatch(cli: &Cli) -> Result<String> {
    let cfg = load_config(cli)?;
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Error::Config("--jobs: must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Error::Config(format!("--jobs: {e}")))?;
    }
    match cli.command {
        Command::Simulate => cmd_simulate(&cfg),
        Command::Label => cmd_label(&cfg),
        Command::Train => cmd_train(&cfg),
        Command::Run => cmd_run(&cfg),
        Command::Sweep => cmd_sweep(&cfg),
        Command::FitLaw => cmd_fit_law(&cfg),
        Command::Tables => cmd_tables(&cfg),
        Command::Report => cmd_report(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) => 2,
                Error::MissingArtifact { .. } => 3,
                _ => 1,
            })
        }
    }
}
