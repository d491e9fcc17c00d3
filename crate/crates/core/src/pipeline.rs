//! Launch-Check-Resume orchestration.
//!
//! For each query: launch N prefixes, score them once at the checkpoint, keep
//! the top k, complete only those, and vote over the survivors. Every token
//! the backend generates and every declared check cost lands in a
//! [`BudgetLedger`].

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::Backend;
use crate::error::{Error, Result};
use crate::metrics::{self, MetricsReport, QueryBreakdown, QueryIssue};
use crate::scaling::{predict_inverse_gamma, PlanQuery, ScalingCoefficients};
use crate::signals::{GeneratorConfig, SignalGenerator};
use crate::types::{BudgetLedger, LedgerSnapshot, PathRecord, PathStatus, PathSummary, QueryRecord, RetentionPolicy};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendSelector {
    #[default]
    Sim,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub name: String,
    #[serde(default = "default_dataset")]
    pub dataset: String,
    pub launch_count: usize,
    pub retention: RetentionPolicy,
    #[serde(default)]
    pub generator: GeneratorConfig,
    #[serde(default)]
    pub backend: BackendSelector,
    /// Per-query token budget. Exceeding it is reported, not enforced.
    #[serde(default)]
    pub budget_cap: Option<u64>,
    /// Mixed into the seed of stochastic signals.
    #[serde(default)]
    pub seed: u64,
    /// Also run the unpruned baseline on the same paths.
    #[serde(default = "default_true")]
    pub compare_baseline: bool,
}

fn default_dataset() -> String {
    "default".into()
}

fn default_true() -> bool {
    true
}

impl RunSpec {
    pub fn new(name: &str, launch_count: usize, retention: RetentionPolicy, generator: &str) -> Self {
        RunSpec {
            name: name.into(),
            dataset: default_dataset(),
            launch_count,
            retention,
            generator: GeneratorConfig::named(generator),
            backend: BackendSelector::Sim,
            budget_cap: None,
            seed: 0,
            compare_baseline: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name.starts_with('.') {
            return Err(Error::config(format!("run name `{}` is not a valid directory name", self.name)));
        }
        if self.launch_count == 0 {
            return Err(Error::config("launch_count must be >= 1"));
        }
        self.retention.retain_count(self.launch_count)?;
        Ok(())
    }

    pub fn retain_count(&self) -> Result<usize> {
        self.retention.retain_count(self.launch_count)
    }
}

/// Wall-clock time per stage, summed over queries.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub launch_ms: f64,
    pub check_ms: f64,
    pub resume_ms: f64,
}

#[derive(Default)]
struct TimingCounters {
    launch: AtomicU64,
    check: AtomicU64,
    resume: AtomicU64,
}

impl TimingCounters {
    fn add(counter: &AtomicU64, since: Instant) {
        counter.fetch_add(since.elapsed().as_nanos() as u64, Ordering::Relaxed);
    }

    fn snapshot(&self) -> StageTiming {
        let ms = |c: &AtomicU64| c.load(Ordering::Relaxed) as f64 / 1e6;
        StageTiming {
            launch_ms: ms(&self.launch),
            check_ms: ms(&self.check),
            resume_ms: ms(&self.resume),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub query_id: String,
    pub retained: Vec<u32>,
    pub voted_answer: Option<String>,
    pub vote_correct: Option<bool>,
    pub tokens: u64,
    /// Every launched path: retained ones completed, the rest pruned.
    pub paths: Vec<PathSummary>,
    pub incidents: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub method: String,
    pub launch_count: usize,
    pub retain_count: usize,
    pub queries: Vec<QueryOutcome>,
    pub report: MetricsReport,
    pub ledger: LedgerSnapshot,
    pub timing: StageTiming,
}

struct Plan<'a> {
    n: usize,
    k: usize,
    prefix_length: usize,
    scorer: Option<&'a dyn SignalGenerator>,
    charge_reencode: bool,
    budget_cap: Option<u64>,
}

/// Position of each path in the retention order: higher score first, equal
/// scores by lower path id.
fn retention_order(scores: &[f64], ids: &[u32]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(ids[a].cmp(&ids[b])));
    idx
}

fn run_query(
    query: &QueryRecord,
    backend: &dyn Backend,
    plan: &Plan,
    ledger: &BudgetLedger,
    timing: &TimingCounters,
) -> QueryOutcome {
    let mut incidents = Vec::new();
    let failed = |incidents: Vec<String>| QueryOutcome {
        query_id: query.query_id.clone(),
        retained: Vec::new(),
        voted_answer: None,
        vote_correct: None,
        tokens: 0,
        paths: Vec::new(),
        incidents,
    };

    let t = Instant::now();
    let launched: Result<Vec<PathRecord>> = (1..=plan.n as u32)
        .into_par_iter()
        .map(|pid| backend.launch_prefix(query, pid, plan.prefix_length))
        .collect();
    TimingCounters::add(&timing.launch, t);
    let launched = match launched {
        Ok(l) => l,
        Err(e) => return failed(vec![format!("launch failed: {e}")]),
    };
    let prefix_tokens: u64 = launched.iter().map(|p| p.prefix_tokens).sum();
    ledger.add_prefix(prefix_tokens);
    let early = launched.iter().filter(|p| p.early_finish).count();
    if early > 0 {
        incidents.push(format!("{early} paths finished before the checkpoint"));
    }

    let t = Instant::now();
    let ids: Vec<u32> = launched.iter().map(|p| p.path_id).collect();
    let mut check_tokens = 0;
    let scores: Option<Vec<f64>> = plan.scorer.map(|g| {
        g.score_batch(query, &launched)
            .into_iter()
            .zip(&ids)
            .map(|(s, id)| match s {
                Ok(s) => {
                    check_tokens += s.check_cost_tokens;
                    s.value
                }
                Err(e) => {
                    incidents.push(format!("path {id}: scoring failed, scored 0: {e}"));
                    0.0
                }
            })
            .collect()
    });
    ledger.add_check(check_tokens);
    let order = match &scores {
        Some(s) => retention_order(s, &ids),
        None => (0..plan.n).collect(),
    };
    // rank-based tie score: invariant under monotone transforms of the signal
    let mut rank_score = vec![0.0; plan.n];
    for (pos, &i) in order.iter().enumerate() {
        rank_score[i] = (plan.n - pos) as f64 / plan.n as f64;
    }
    let mut keep = vec![false; plan.n];
    order.iter().take(plan.k).for_each(|&i| keep[i] = true);
    TimingCounters::add(&timing.check, t);

    let t = Instant::now();
    let finished: Vec<Result<PathRecord>> = launched
        .into_par_iter()
        .zip(keep.par_iter())
        .map(|(mut p, &keep)| {
            if keep {
                backend.resume_path(query, p)
            } else {
                p.prune()?;
                Ok(p)
            }
        })
        .collect();
    TimingCounters::add(&timing.resume, t);

    let mut paths = Vec::with_capacity(plan.n);
    let mut resume_tokens = 0;
    for (i, r) in finished.into_iter().enumerate() {
        match r {
            Ok(p) => {
                if p.status == PathStatus::Completed {
                    resume_tokens += p.completion_tokens;
                    if plan.charge_reencode {
                        resume_tokens += p.reencode_tokens;
                    }
                }
                paths.push(p.summary(scores.as_ref().map(|s| s[i])));
            }
            Err(e) => incidents.push(format!("path {}: resume failed: {e}", ids[i])),
        }
    }
    ledger.add_resume(resume_tokens);
    if paths.len() != plan.n {
        return QueryOutcome {
            tokens: prefix_tokens + check_tokens + resume_tokens,
            ..failed(incidents)
        };
    }

    let retained: Vec<usize> = (0..plan.n).filter(|&i| keep[i]).collect();
    let answers: Vec<&str> = retained.iter().filter_map(|&i| paths[i].answer.as_deref()).collect();
    let tie: Vec<f64> = retained.iter().map(|&i| rank_score[i]).collect();
    let use_scores = plan.scorer.is_some() && plan.k < plan.n;
    let voted = if answers.len() == retained.len() {
        metrics::majority_vote(&answers, use_scores.then_some(tie.as_slice())).ok()
    } else {
        incidents.push("completed path without answer".into());
        None
    };
    let vote_correct = match (&voted, query.gold_answer.is_empty()) {
        (Some(v), false) => Some(metrics::answers_match(v, &query.gold_answer)),
        _ => None,
    };
    let tokens = prefix_tokens + check_tokens + resume_tokens;
    if let Some(cap) = plan.budget_cap {
        if tokens > cap {
            incidents.push(format!("budget exceeded: {tokens} > {cap} tokens"));
        }
    }
    QueryOutcome {
        query_id: query.query_id.clone(),
        retained: retained.iter().map(|&i| ids[i]).collect(),
        voted_answer: voted,
        vote_correct,
        tokens,
        paths,
        incidents,
    }
}

fn execute(
    queries: &[QueryRecord],
    backend: &dyn Backend,
    plan: &Plan,
    name: &str,
    dataset: &str,
    method: &str,
) -> Result<RunResult> {
    crate::types::validate_queries(queries)?;
    if queries.is_empty() {
        return Err(Error::EmptyDataset("no queries to run"));
    }
    let ledger = BudgetLedger::new();
    let timing = TimingCounters::default();
    let outcomes: Vec<QueryOutcome> = queries
        .par_iter()
        .map(|q| run_query(q, backend, plan, &ledger, &timing))
        .collect();
    let report = build_report(&outcomes, queries, plan, name, dataset, method)?;
    Ok(RunResult {
        method: method.into(),
        launch_count: plan.n,
        retain_count: plan.k,
        queries: outcomes,
        report,
        ledger: ledger.snapshot(),
        timing: timing.snapshot(),
    })
}

fn build_report(
    outcomes: &[QueryOutcome],
    queries: &[QueryRecord],
    plan: &Plan,
    name: &str,
    dataset: &str,
    method: &str,
) -> Result<MetricsReport> {
    let mut issues: Vec<QueryIssue> = Vec::new();
    for o in outcomes {
        issues.extend(o.incidents.iter().map(|r| QueryIssue {
            query_id: o.query_id.clone(),
            reason: r.clone(),
        }));
    }
    let summaries: Vec<PathSummary> = outcomes.iter().flat_map(|o| o.paths.iter().cloned()).collect();
    let per_query = metrics::accuracy_by_query(&summaries)?;
    let acc: BTreeMap<&str, f64> = per_query.iter().map(|(q, a, _)| (q.as_str(), *a)).collect();
    let avg = metrics::avg_at_k(&summaries)?;
    let gold: BTreeMap<String, String> = queries
        .iter()
        .filter(|q| !q.gold_answer.is_empty())
        .map(|q| (q.query_id.clone(), q.gold_answer.clone()))
        .collect();
    let voted: Vec<&QueryOutcome> = outcomes.iter().filter(|o| o.vote_correct.is_some()).collect();
    if voted.is_empty() {
        return Err(Error::EmptyDataset("no query produced a scored vote"));
    }
    let cons = voted.iter().filter(|o| o.vote_correct == Some(true)).count() as f64 / voted.len() as f64;
    for q in queries {
        if !gold.contains_key(&q.query_id) {
            issues.push(QueryIssue {
                query_id: q.query_id.clone(),
                reason: "no gold answer".into(),
            });
        }
    }
    let breakdown = outcomes
        .iter()
        .filter(|o| !o.paths.is_empty())
        .map(|o| QueryBreakdown {
            query_id: o.query_id.clone(),
            retained: o.retained.clone(),
            accuracy: acc.get(o.query_id.as_str()).copied().unwrap_or(0.0),
            baseline_accuracy: None,
            voted_answer: o.voted_answer.clone(),
            vote_correct: o.vote_correct,
            tokens: o.tokens,
        })
        .collect();
    let baseline = plan.scorer.is_none();
    let report = MetricsReport {
        run_name: name.into(),
        dataset: dataset.into(),
        method: method.into(),
        launch_count: plan.n,
        retain_count: plan.k,
        avg_at_k: baseline.then_some(avg),
        avg_at_m_given_k: avg,
        cons_at_n: cons,
        baseline_cons_at_n: baseline.then_some(cons),
        tokens_total: outcomes.iter().map(|o| o.tokens).sum(),
        tokens_baseline: None,
        token_reduction_pct: None,
        per_query_breakdown: breakdown,
        issues,
    };
    report.validate()?;
    Ok(report)
}

/// Completes all `n` paths of every query and votes over all of them.
pub fn run_no_pruning(
    queries: &[QueryRecord],
    n: usize,
    prefix_length: usize,
    backend: &dyn Backend,
) -> Result<RunResult> {
    if n == 0 {
        return Err(Error::config("launch_count must be >= 1"));
    }
    let plan = Plan {
        n,
        k: n,
        prefix_length,
        scorer: None,
        // one uninterrupted generation needs no re-encoding
        charge_reencode: false,
        budget_cap: None,
    };
    execute(queries, backend, &plan, "baseline", "default", "no_pruning")
}

pub fn run_with_pruning(
    queries: &[QueryRecord],
    spec: &RunSpec,
    backend: &dyn Backend,
    generator: &dyn SignalGenerator,
) -> Result<RunResult> {
    spec.validate()?;
    let plan = Plan {
        n: spec.launch_count,
        k: spec.retain_count()?,
        prefix_length: spec.retention.prefix_length,
        scorer: Some(generator),
        charge_reencode: true,
        budget_cap: spec.budget_cap,
    };
    execute(queries, backend, &plan, &spec.name, &spec.dataset, &generator.kind().to_string())
}

/// Fills the baseline columns of a pruned run's report.
pub fn attach_baseline(report: &mut MetricsReport, baseline: &RunResult) -> Result<()> {
    let b = &baseline.report;
    report.avg_at_k = Some(b.avg_at_m_given_k);
    report.baseline_cons_at_n = Some(b.cons_at_n);
    report.tokens_baseline = Some(baseline.ledger.total);
    report.token_reduction_pct = Some(metrics::token_reduction(baseline.ledger.total, report.tokens_total)?);
    let base_acc: BTreeMap<&str, f64> = b
        .per_query_breakdown
        .iter()
        .map(|q| (q.query_id.as_str(), q.accuracy))
        .collect();
    for q in &mut report.per_query_breakdown {
        q.baseline_accuracy = base_acc.get(q.query_id.as_str()).copied();
    }
    report.validate()
}

impl RunResult {
    /// Writes `<out>/runs/<name>/` and returns its path. `spec` is echoed
    /// verbatim into spec.json. Everything except timing.json is a pure
    /// function of the inputs.
    pub fn write_dir(&self, out: &Path, name: &str, spec: &serde_json::Value) -> Result<PathBuf> {
        let dir = out.join("runs").join(name);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let write = |file: &str, text: String| {
            let p = dir.join(file);
            std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
        };
        write("spec.json", serde_json::to_string_pretty(spec)? + "\n")?;
        let mut lines = String::new();
        for q in &self.queries {
            for p in &q.paths {
                lines.push_str(&serde_json::to_string(p)?);
                lines.push('\n');
            }
        }
        write("paths.jsonl", lines)?;
        write("metrics.csv", self.report.to_csv())?;
        write("metrics.json", serde_json::to_string_pretty(&self.report)? + "\n")?;
        write("ledger.json", serde_json::to_string_pretty(&self.ledger)? + "\n")?;
        write("timing.json", serde_json::to_string_pretty(&self.timing)? + "\n")?;
        Ok(dir)
    }
}

/// One cell of a sweep grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub launch_count: usize,
    pub gamma: f64,
    pub prefix_length: usize,
    pub task_length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub launch_count: usize,
    pub gamma: f64,
    pub retain_count: usize,
    pub prefix_length: usize,
    pub task_length: f64,
    /// Mean tokens per query.
    pub budget: f64,
    /// Consensus accuracy.
    pub accuracy: f64,
    pub avg_at_m_given_k: f64,
}

pub const SWEEP_CSV_HEADER: &str =
    "launch_count,gamma,retain_count,prefix_length,task_length,budget,accuracy,avg_at_m_given_k";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub launch_counts: Vec<usize>,
    pub gammas: Vec<f64>,
    pub prefix_lengths: Vec<usize>,
    pub task_lengths: Vec<f64>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid {
            launch_counts: vec![16, 32, 64],
            gammas: vec![1.0 / 32.0, 1.0 / 16.0, 1.0 / 8.0, 1.0 / 4.0, 1.0 / 2.0],
            prefix_lengths: vec![2048],
            task_lengths: vec![8650.0],
        }
    }
}

impl SweepGrid {
    pub fn validate(&self) -> Result<()> {
        if self.launch_counts.is_empty()
            || self.gammas.is_empty()
            || self.prefix_lengths.is_empty()
            || self.task_lengths.is_empty()
        {
            return Err(Error::config("sweep grids must be nonempty"));
        }
        if self.gammas.iter().any(|g| !(*g > 0.0 && *g <= 1.0)) {
            return Err(Error::config("sweep gammas must lie in (0, 1]"));
        }
        if self.launch_counts.contains(&0) || self.prefix_lengths.contains(&0) {
            return Err(Error::config("sweep launch counts and prefix lengths must be >= 1"));
        }
        Ok(())
    }

    /// All points, ordered by task length, prefix length, launch count, gamma.
    pub fn points(&self) -> Vec<GridPoint> {
        let mut out = Vec::new();
        for &task_length in &self.task_lengths {
            for &prefix_length in &self.prefix_lengths {
                for &launch_count in &self.launch_counts {
                    for &gamma in &self.gammas {
                        out.push(GridPoint {
                            launch_count,
                            gamma,
                            prefix_length,
                            task_length,
                        });
                    }
                }
            }
        }
        out
    }
}

/// Produces the (budget, accuracy) outcome of one grid point.
pub trait SweepEvaluator: Send + Sync {
    fn name(&self) -> &str;
    fn evaluate(&self, point: &GridPoint) -> Result<SweepRow>;
}

/// Runs the real pipeline on the simulator. The task-length axis selects the
/// simulator's mean path length.
pub struct SimPipelineEvaluator {
    pub sim: crate::sim::SimConfig,
    pub query_count: usize,
    pub generator: Arc<dyn SignalGenerator>,
}

impl SweepEvaluator for SimPipelineEvaluator {
    fn name(&self) -> &str {
        "pipeline"
    }

    fn evaluate(&self, p: &GridPoint) -> Result<SweepRow> {
        let backend = crate::sim::SimBackend::new(crate::sim::SimConfig {
            length_mean: p.task_length,
            ..self.sim.clone()
        })?;
        let queries = backend.sample_queries(self.query_count);
        let spec = RunSpec::new(
            "sweep",
            p.launch_count,
            RetentionPolicy::ratio(p.prefix_length, p.gamma),
            &self.generator.kind().to_string(),
        );
        let r = run_with_pruning(&queries, &spec, &backend, self.generator.as_ref())?;
        Ok(SweepRow {
            launch_count: p.launch_count,
            gamma: p.gamma,
            retain_count: r.retain_count,
            prefix_length: p.prefix_length,
            task_length: p.task_length,
            budget: r.ledger.total as f64 / queries.len() as f64,
            accuracy: r.report.cons_at_n,
            avg_at_m_given_k: r.report.avg_at_m_given_k,
        })
    }
}

/// Analytic accuracy surface whose per-budget optimum follows a known power
/// law: `acc = ceiling - curvature * (ln(1/γ) - ln g*(C, Lp, Lt))^2`, with
/// `C = N*Lp + k*(Lt - Lp)` tokens. Used to check that the sweep, optimum
/// extraction and fit recover planted exponents end to end.
pub struct PlantedEvaluator {
    pub law: ScalingCoefficients,
    pub ceiling: f64,
    pub curvature: f64,
}

impl SweepEvaluator for PlantedEvaluator {
    fn name(&self) -> &str {
        "planted"
    }

    fn evaluate(&self, p: &GridPoint) -> Result<SweepRow> {
        let k = ((p.gamma * p.launch_count as f64).round() as usize).clamp(1, p.launch_count);
        let lp = p.prefix_length as f64;
        let budget = p.launch_count as f64 * lp + k as f64 * (p.task_length - lp).max(0.0);
        let target = predict_inverse_gamma(&PlanQuery::new(budget, lp, p.task_length), &self.law)?;
        let gap = (1.0 / p.gamma).ln() - target.ln();
        let accuracy = self.ceiling - self.curvature * gap * gap;
        Ok(SweepRow {
            launch_count: p.launch_count,
            gamma: p.gamma,
            retain_count: k,
            prefix_length: p.prefix_length,
            task_length: p.task_length,
            budget,
            accuracy,
            avg_at_m_given_k: accuracy,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantedSettings {
    pub law: ScalingCoefficients,
    pub ceiling: f64,
    pub curvature: f64,
}

impl Default for PlantedSettings {
    fn default() -> Self {
        PlantedSettings {
            law: ScalingCoefficients::new(500.0, 0.5, 0.4, 3.0),
            ceiling: 0.9,
            curvature: 0.05,
        }
    }
}

/// Resources an evaluator may need at construction.
#[derive(Clone, Default)]
pub struct EvaluatorContext {
    pub sim: Option<crate::sim::SimConfig>,
    pub generator: Option<Arc<dyn SignalGenerator>>,
    pub query_count: usize,
    pub planted: PlantedSettings,
}

pub type EvaluatorFactory = Box<dyn Fn(&EvaluatorContext) -> Result<Box<dyn SweepEvaluator>> + Send + Sync>;

pub struct EvaluatorRegistry {
    factories: BTreeMap<String, EvaluatorFactory>,
}

impl EvaluatorRegistry {
    pub fn empty() -> Self {
        EvaluatorRegistry {
            factories: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, name: &str, factory: EvaluatorFactory) {
        self.factories.insert(name.to_string(), factory);
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn build(&self, name: &str, ctx: &EvaluatorContext) -> Result<Box<dyn SweepEvaluator>> {
        let factory = self.factories.get(name).ok_or_else(|| {
            Error::config(format!("unknown sweep evaluator `{name}` (known: {})", self.names().join(", ")))
        })?;
        factory(ctx)
    }
}

impl Default for EvaluatorRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register(
            "pipeline",
            Box::new(|ctx| {
                let sim = ctx.sim.clone().ok_or_else(|| Error::config("pipeline sweeps need the simulator backend"))?;
                let generator = ctx.generator.clone().ok_or_else(|| Error::config("pipeline sweeps need a signal"))?;
                if ctx.query_count == 0 {
                    return Err(Error::config("sweep query_count must be >= 1"));
                }
                Ok(Box::new(SimPipelineEvaluator {
                    sim,
                    query_count: ctx.query_count,
                    generator,
                }))
            }),
        );
        r.register(
            "planted",
            Box::new(|ctx| {
                let p = &ctx.planted;
                p.law.validate()?;
                if !(p.curvature > 0.0 && p.ceiling.is_finite()) {
                    return Err(Error::config("planted curvature must be positive"));
                }
                Ok(Box::new(PlantedEvaluator {
                    law: p.law.clone(),
                    ceiling: p.ceiling,
                    curvature: p.curvature,
                }))
            }),
        );
        r
    }
}

pub fn sweep_gamma(grid: &SweepGrid, evaluator: &dyn SweepEvaluator) -> Result<Vec<SweepRow>> {
    grid.validate()?;
    grid.points().par_iter().map(|p| evaluator.evaluate(p)).collect()
}

pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{SWEEP_CSV_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.launch_count, r.gamma, r.retain_count, r.prefix_length, r.task_length, r.budget, r.accuracy, r.avg_at_m_given_k
        ));
    }
    out
}

pub fn sweep_from_csv(text: &str) -> Result<Vec<SweepRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(SWEEP_CSV_HEADER) {
        return Err(Error::invalid("unrecognized sweep CSV header"));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 8 {
                return Err(Error::invalid(format!("sweep row has {} fields", f.len())));
            }
            let bad = |s: &str| Error::invalid(format!("bad number `{s}` in sweep row"));
            let u = |s: &str| s.parse::<usize>().map_err(|_| bad(s));
            let x = |s: &str| s.parse::<f64>().map_err(|_| bad(s));
            Ok(SweepRow {
                launch_count: u(f[0])?,
                gamma: x(f[1])?,
                retain_count: u(f[2])?,
                prefix_length: u(f[3])?,
                task_length: x(f[4])?,
                budget: x(f[5])?,
                accuracy: x(f[6])?,
                avg_at_m_given_k: x(f[7])?,
            })
        })
        .collect()
}

/// Accuracy-maximizing γ at one budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimum {
    pub budget: f64,
    pub prefix_length: usize,
    pub task_length: f64,
    pub gamma: f64,
    pub accuracy: f64,
}

fn interpolate(curve: &[(f64, f64)], x: f64) -> f64 {
    let i = curve.partition_point(|p| p.0 < x);
    if i == 0 {
        return curve[0].1;
    }
    if i == curve.len() {
        return curve[i - 1].1;
    }
    let (x0, y0) = curve[i - 1];
    let (x1, y1) = curve[i];
    if x1 == x0 {
        return y1;
    }
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

type Curve = Vec<(f64, f64)>;

/// Reads the optimal γ off a sweep surface.
///
/// Within each (prefix length, task length) profile, each γ traces accuracy
/// against budget as N varies. At `buckets` log-spaced budgets inside the
/// range every curve covers, each curve is interpolated linearly in ln C and
/// the best γ is kept; ties go to the larger γ.
pub fn extract_optima(rows: &[SweepRow], buckets: usize) -> Result<Vec<Optimum>> {
    if buckets == 0 {
        return Err(Error::invalid("need at least one budget bucket"));
    }
    // (prefix length, task length bits) -> γ bits -> (ln budget, accuracy)
    let mut profiles: BTreeMap<(usize, u64), BTreeMap<u64, Curve>> = BTreeMap::new();
    for r in rows {
        profiles
            .entry((r.prefix_length, r.task_length.to_bits()))
            .or_default()
            .entry(r.gamma.to_bits())
            .or_default()
            .push((r.budget.ln(), r.accuracy));
    }
    let mut out = Vec::new();
    for ((prefix_length, lt_bits), curves) in profiles {
        let mut curves: Vec<(f64, Vec<(f64, f64)>)> = curves
            .into_iter()
            .map(|(g, mut c)| {
                c.sort_by(|a, b| a.0.total_cmp(&b.0));
                (f64::from_bits(g), c)
            })
            .collect();
        // larger γ first so that strict improvement keeps it on ties
        curves.sort_by(|a, b| b.0.total_cmp(&a.0));
        let lo = curves.iter().map(|c| c.1[0].0).fold(f64::NEG_INFINITY, f64::max);
        let hi = curves.iter().map(|c| c.1[c.1.len() - 1].0).fold(f64::INFINITY, f64::min);
        if lo > hi {
            continue;
        }
        for b in 0..buckets {
            let x = if buckets == 1 {
                0.5 * (lo + hi)
            } else {
                lo + (hi - lo) * b as f64 / (buckets - 1) as f64
            };
            let mut best: Option<(f64, f64)> = None;
            for (g, c) in &curves {
                let acc = interpolate(c, x);
                if best.is_none_or(|(_, a)| acc > a) {
                    best = Some((*g, acc));
                }
            }
            let (gamma, accuracy) = best.expect("at least one curve");
            out.push(Optimum {
                budget: x.exp(),
                prefix_length,
                task_length: f64::from_bits(lt_bits),
                gamma,
                accuracy,
            });
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyDataset("no budget range shared by all γ curves"));
    }
    Ok(out)
}
