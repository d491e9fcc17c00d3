//! Acceptance criteria. Each prints one PASS/FAIL line; the binary exits
//! non-zero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::Instant;

use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, RngAlgorithm, TestRng, TestRunner};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;

use pathprune::backend::Backend;
use pathprune::labeler::{build_dataset, mc_label, stratify_queries, LabelConfig};
use pathprune::metrics::token_reduction;
use pathprune::pipeline::{attach_baseline, run_no_pruning, run_with_pruning, RunResult, RunSpec};
use pathprune::rng::Stream;
use pathprune::scaling::{
    fit_powerlaw, predict_inverse_gamma, reference_tables, Observation, PlanQuery, ScalingCoefficients,
};
use pathprune::signals::{
    Confidence, GeneratorKind, Heuristic, Learned, Oracle, RandomSignal, ScorerModel, SignalGenerator, SignalScore,
};
use pathprune::sim::{SimBackend, SimConfig};
use pathprune::trainer::{loss_gradient, batch_loss, train_scorer, TrainConfig};
use pathprune::types::{PathRecord, PathStatus, QueryRecord, RetentionPolicy};
use pathprune::Result;

type Outcome = (bool, String);
type Criterion = (&'static str, fn() -> Outcome);

fn sim(seed: u64) -> SimBackend {
    sim_with(SimConfig {
        seed,
        ..SimConfig::default()
    })
}

fn sim_with(config: SimConfig) -> SimBackend {
    SimBackend::new(config).expect("valid simulator config")
}

fn pruned(queries: &[QueryRecord], backend: &SimBackend, generator: &dyn SignalGenerator, n: usize, k: usize) -> RunResult {
    let spec = RunSpec::new("acceptance", n, RetentionPolicy::top_k(2048, k), &generator.kind().to_string());
    run_with_pruning(queries, &spec, backend, generator).expect("pruned run")
}

// 1 --------------------------------------------------------------------------

fn worked_examples() -> Outcome {
    let law = ScalingCoefficients::published();
    let cases = [
        (158.0 * 1024.0, 2048.0, 8650.0, 9.63),
        (275.0 * 1024.0, 3072.0, 12000.0, 3.36),
    ];
    let mut ok = true;
    let mut detail = Vec::new();
    for (c, lp, lt, paper) in cases {
        let v = predict_inverse_gamma(&PlanQuery::new(c, lp, lt), &law).unwrap();
        let rel = (v - paper).abs() / paper;
        ok &= rel <= 0.05;
        detail.push(format!("{v:.3} vs {paper} ({:.2}%)", rel * 100.0));
    }
    (ok, detail.join(", "))
}

// 2 --------------------------------------------------------------------------

const TABLE_8: [[f64; 9]; 5] = [
    [5.23, 5.56, 5.87, 6.16, 6.44, 6.70, 6.95, 7.19, 7.42],
    [6.90, 7.34, 7.75, 8.13, 8.49, 8.84, 9.17, 9.49, 9.80],
    [8.11, 8.63, 9.11, 9.56, 9.99, 10.40, 10.79, 11.16, 11.52],
    [9.10, 9.68, 10.22, 10.73, 11.21, 11.67, 12.10, 12.52, 12.93],
    [9.95, 10.59, 11.17, 11.73, 12.26, 12.76, 13.23, 13.69, 14.13],
];

const TABLE_9: [[f64; 9]; 5] = [
    [1.87, 2.07, 2.25, 2.42, 2.57, 2.71, 2.85, 2.98, 3.10],
    [2.47, 2.73, 2.97, 3.19, 3.39, 3.58, 3.76, 3.93, 4.09],
    [2.90, 3.21, 3.49, 3.75, 3.99, 4.21, 4.42, 4.62, 4.81],
    [3.25, 3.60, 3.92, 4.21, 4.48, 4.72, 4.96, 5.18, 5.39],
    [3.56, 3.94, 4.29, 4.60, 4.89, 5.17, 5.42, 5.66, 5.90],
];

fn lookup_tables() -> Outcome {
    let tables = reference_tables(&ScalingCoefficients::published()).unwrap();
    let mut cells = 0;
    let mut worst: f64 = 0.0;
    for (table, expect) in tables.iter().zip([TABLE_8, TABLE_9]) {
        for (row, want) in table.cells.iter().zip(expect) {
            for (got, w) in row.iter().zip(want) {
                worst = worst.max((got - w).abs() / w);
                cells += 1;
            }
        }
    }
    (
        cells == 90 && worst < 0.03,
        format!("{cells} cells, max relative error {:.3}%", worst * 100.0),
    )
}

// 3 --------------------------------------------------------------------------

fn fit_recovery() -> Outcome {
    let law = ScalingCoefficients::new(1.17e4, 0.46, 0.40, 4.55);
    let mut rng = Stream::new(3).label("fit").rng();
    let design: Vec<(f64, f64, f64)> = (0..200)
        .map(|_| {
            let u = |rng: &mut rand_chacha::ChaCha8Rng, lo: f64, hi: f64| (lo.ln() + rng.random::<f64>() * (hi / lo).ln()).exp();
            (u(&mut rng, 1e5, 1e6), u(&mut rng, 512.0, 5120.0), u(&mut rng, 4000.0, 16000.0))
        })
        .collect();
    let truth = |&(c, lp, lt): &(f64, f64, f64)| predict_inverse_gamma(&PlanQuery::new(c, lp, lt), &law).unwrap();
    let exact: Vec<Observation> = design
        .iter()
        .map(|d| Observation {
            budget: d.0,
            prefix_length: d.1,
            task_length: d.2,
            inverse_gamma: truth(d),
        })
        .collect();
    let fit = fit_powerlaw(&exact).unwrap();
    let rel = [(fit.a, law.a), (fit.b, law.b), (fit.c, law.c), (fit.d, law.d)]
        .iter()
        .map(|(g, w)| ((g - w) / w).abs())
        .fold(0.0, f64::max);

    let noise: Normal<f64> = Normal::new(0.0, 0.05).unwrap();
    let noisy: Vec<Observation> = exact
        .iter()
        .map(|o| Observation {
            inverse_gamma: o.inverse_gamma * noise.sample(&mut rng).exp(),
            ..*o
        })
        .collect();
    let nfit = fit_powerlaw(&noisy).unwrap();
    let dev = [(nfit.b, law.b), (nfit.c, law.c), (nfit.d, law.d)]
        .iter()
        .map(|(g, w)| (g - w).abs())
        .fold(0.0, f64::max);
    (
        rel <= 1e-9 && dev <= 0.03,
        format!(
            "noiseless max rel err {rel:.1e}; noisy b={:.4} c={:.4} d={:.4} (max dev {dev:.4})",
            nfit.b, nfit.c, nfit.d
        ),
    )
}

// 4 --------------------------------------------------------------------------

fn token_reduction_arithmetic() -> Outcome {
    let a = token_reduction(782_300, 204_300).unwrap();
    let b = token_reduction(594_200, 184_400).unwrap();
    (
        (a - 73.88).abs() <= 0.02 && (b - 68.97).abs() <= 0.02,
        format!("{a:.4}% and {b:.4}%"),
    )
}

// 5 --------------------------------------------------------------------------

fn pruning_neutrality() -> Outcome {
    let backend = sim(5);
    let queries = backend.sample_queries(500);
    let base = run_no_pruning(&queries, 64, 2048, &backend).unwrap();
    let run = pruned(&queries, &backend, &RandomSignal { seed: 55 }, 64, 8);
    let p = base.report.avg_at_m_given_k;
    let half = 2.576 * (p * (1.0 - p) / (500.0 * 8.0)).sqrt();
    let got = run.report.avg_at_m_given_k;
    (
        (got - p).abs() <= half,
        format!("avg@8|64 {got:.4}, avg@64 {p:.4}, 99% half-width {half:.4}"),
    )
}

// 6 --------------------------------------------------------------------------

fn paired_z(a: &RunResult) -> (f64, f64) {
    let d: Vec<f64> = a
        .report
        .per_query_breakdown
        .iter()
        .map(|q| q.accuracy - q.baseline_accuracy.expect("baseline attached"))
        .collect();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, mean / (var / n).sqrt())
}

fn pruning_effectiveness() -> Outcome {
    let backend = sim(6);
    let queries = backend.sample_queries(500);
    let base = run_no_pruning(&queries, 64, 2048, &backend).unwrap();
    let mut run = pruned(&queries, &backend, &Oracle, 64, 8);
    attach_baseline(&mut run.report, &base).unwrap();
    let (gain, z) = paired_z(&run);
    let red = run.report.token_reduction_pct.unwrap();
    (
        z > 2.326 && red >= 60.0,
        format!(
            "avg@8|64 {:.4} vs avg@64 {:.4} (paired z {z:.1}, gain {gain:.4}); tokens -{red:.2}%",
            run.report.avg_at_m_given_k, base.report.avg_at_m_given_k
        ),
    )
}

// 7 --------------------------------------------------------------------------

/// Trains a scorer on stratified training queries labeled with `k` rollouts.
fn train_on(backend: &SimBackend, train: &[QueryRecord], k: usize, seed: u64) -> Result<ScorerModel> {
    let strat = stratify_queries(train, backend, 32, 4, 28, 2048)?;
    let label = LabelConfig {
        rollouts: k,
        ..LabelConfig::default()
    };
    let data = build_dataset(&strat.retained, backend, &label, Stream::new(seed).label("labels").seed())?;
    let cfg = TrainConfig {
        seed: Stream::new(seed).label("trainer").seed(),
        ..TrainConfig::default()
    };
    Ok(train_scorer(&data.records, &cfg)?.model)
}

fn sign_test_p(wins: usize, n: usize) -> f64 {
    // P(X >= wins) for X ~ Binomial(n, 1/2)
    let mut p = 0.0;
    let mut c = 1.0;
    for i in 0..=n {
        if i > 0 {
            c = c * (n - i + 1) as f64 / i as f64;
        }
        if i >= wins {
            p += c;
        }
    }
    p / 2f64.powi(n as i32)
}

fn learned_beats_confidence() -> Outcome {
    let results: Vec<(f64, f64)> = (0..20u64)
        .into_par_iter()
        .map(|r| {
            let backend = sim_with(SimConfig {
                seed: 700 + r,
                confidence_miscalibration: 0.7,
                ..SimConfig::default()
            });
            let all = backend.sample_queries(600);
            let (train, eval) = all.split_at(400);
            let model = train_on(&backend, train, 32, r).unwrap();
            let learned = Learned {
                model: Arc::new(model),
                super_tokens: 6,
            };
            let l = pruned(eval, &backend, &learned, 64, 8).report.avg_at_m_given_k;
            let c = pruned(eval, &backend, &Confidence { window: None }, 64, 8).report.avg_at_m_given_k;
            (l, c)
        })
        .collect();
    let wins = results.iter().filter(|(l, c)| l > c).count();
    let p = sign_test_p(wins, results.len());
    let mean = |f: fn(&(f64, f64)) -> f64| results.iter().map(f).sum::<f64>() / results.len() as f64;
    (
        p < 0.01,
        format!(
            "learned wins {wins}/20 (sign test p={p:.4}); mean avg@8|64 learned {:.4}, confidence {:.4}",
            mean(|x| x.0),
            mean(|x| x.1)
        ),
    )
}

// 8 --------------------------------------------------------------------------

fn soft_label_variance() -> Outcome {
    let backend = sim(8);
    let queries = backend.sample_queries(50);
    // a prefix whose success probability is away from the extremes
    let (query, prefix) = queries
        .iter()
        .flat_map(|q| (1..=8).map(move |pid| (q, pid)))
        .map(|(q, pid)| (q, backend.launch_prefix(q, pid, 2048).unwrap()))
        .find(|(_, p)| (0.3..=0.7).contains(&p.latent.unwrap().true_success_prob))
        .expect("a mid-range prefix");
    let q = prefix.latent.unwrap().true_success_prob;
    let mut ok = true;
    let mut detail = Vec::new();
    for k in [1usize, 32] {
        let draws: Vec<f64> = (0..500u64)
            .map(|i| mc_label(&backend, query, &prefix, k, Stream::new(80).label("relabel").index(i).seed()).unwrap().0.s_mc)
            .collect();
        let m = draws.iter().sum::<f64>() / 500.0;
        let var = draws.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 499.0;
        let law = q * (1.0 - q) / k as f64;
        let rel = (var - law).abs() / law;
        ok &= rel <= 0.10;
        detail.push(format!("K={k}: var {var:.5} vs {law:.5} ({:.1}%)", rel * 100.0));
    }

    let wins: usize = (0..20u64)
        .into_par_iter()
        .map(|r| {
            let backend = sim(800 + r);
            let all = backend.sample_queries(260);
            let (train, eval) = all.split_at(60);
            let eval_score = |k| {
                let model = train_on(&backend, train, k, r).unwrap();
                let g = Learned {
                    model: Arc::new(model),
                    super_tokens: 6,
                };
                pruned(eval, &backend, &g, 64, 8).report.avg_at_m_given_k
            };
            usize::from(eval_score(32) > eval_score(1))
        })
        .sum();
    ok &= wins >= 15;
    detail.push(format!("K=32 scorer beats K=1 in {wins}/20 seeds"));
    (ok, format!("q={q:.3}; {}", detail.join("; ")))
}

// 9 --------------------------------------------------------------------------

fn gradient_check() -> Outcome {
    let mut rng = Stream::new(9).label("gradcheck").rng();
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let f = rng.random_range(1..=12);
        let h = rng.random_range(1..=16);
        let adapter = rng.random::<bool>();
        let mut model = ScorerModel::init(f, h, adapter, &mut rng);
        let scale: f64 = rng.random_range(0.5..2.0);
        let params: Vec<f64> = model
            .params()
            .iter()
            .map(|_| scale * Distribution::<f64>::sample(&StandardNormal, &mut rng))
            .collect();
        model.set_params(&params);
        model.feature_mean = (0..f).map(|_| rng.random_range(-1.0..1.0)).collect();
        model.feature_scale = (0..f).map(|_| rng.random_range(0.5..2.0)).collect();
        let n = rng.random_range(1..=32);
        let feats: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..f).map(|_| 2.0 * Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect())
            .collect();
        let batch: Vec<(&[f64], f64)> = feats.iter().map(|x| (x.as_slice(), rng.random::<f64>())).collect();
        let grad = loss_gradient(&model, &batch).unwrap();
        let step = 1e-5;
        for (i, g) in grad.iter().enumerate() {
            let mut p = params.clone();
            p[i] += step;
            model.set_params(&p);
            let up = batch_loss(&model, &batch).unwrap();
            p[i] -= 2.0 * step;
            model.set_params(&p);
            let down = batch_loss(&model, &batch).unwrap();
            let fd = (up - down) / (2.0 * step);
            let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-6);
            worst = worst.max(rel);
        }
        model.set_params(&params);
    }
    (worst < 1e-4, format!("max relative error {worst:.2e} over 100 draws"))
}

// 10 -------------------------------------------------------------------------

/// Applies a strictly increasing map to another generator's scores.
struct Transformed<'a> {
    inner: &'a dyn SignalGenerator,
    map: fn(f64) -> f64,
}

impl SignalGenerator for Transformed<'_> {
    fn kind(&self) -> GeneratorKind {
        self.inner.kind()
    }

    fn score_batch(&self, query: &QueryRecord, paths: &[PathRecord]) -> Vec<Result<SignalScore>> {
        self.inner
            .score_batch(query, paths)
            .into_iter()
            .map(|s| {
                s.map(|s| SignalScore {
                    value: (self.map)(s.value),
                    ..s
                })
            })
            .collect()
    }
}

const TRANSFORMS: [fn(f64) -> f64; 4] = [
    |x| x * x,
    f64::sqrt,
    |x| 0.25 + 0.5 * x,
    |x| (3.0 * x).exp_m1() / 3f64.exp_m1(),
];

fn run_dir_bytes(seed: u64) -> Vec<(String, Vec<u8>)> {
    let dir = tempfile::tempdir().unwrap();
    let backend = sim(seed);
    let queries = backend.sample_queries(40);
    let base = run_no_pruning(&queries, 16, 512, &backend).unwrap();
    let spec = RunSpec::new("det", 16, RetentionPolicy::top_k(512, 4), "heuristic");
    let mut run = run_with_pruning(&queries, &spec, &backend, &Heuristic { ngram: 2 }).unwrap();
    attach_baseline(&mut run.report, &base).unwrap();
    let path = run.write_dir(dir.path(), "det", &serde_json::json!({"seed": seed})).unwrap();
    let mut files: Vec<(String, Vec<u8>)> = ["spec.json", "paths.jsonl", "metrics.csv", "metrics.json", "ledger.json"]
        .iter()
        .map(|f| (f.to_string(), std::fs::read(path.join(f)).unwrap()))
        .collect();
    let label = LabelConfig {
        rollouts: 8,
        prefix_length: 512,
        ..LabelConfig::default()
    };
    let data = build_dataset(&queries, &backend, &label, seed).unwrap();
    let labels = dir.path().join("labels.jsonl");
    data.write_jsonl(&labels).unwrap();
    let model = train_scorer(&data.records, &TrainConfig::default()).unwrap().model;
    let scorer = dir.path().join("scorer.json");
    model.save(&scorer).unwrap();
    files.push(("labels.jsonl".into(), std::fs::read(labels).unwrap()));
    files.push(("scorer.json".into(), std::fs::read(scorer).unwrap()));
    files
}

fn check_identities(queries: &[QueryRecord], run: &RunResult, n: usize, k: usize) -> std::result::Result<(), String> {
    let fail = |m: String| Err(m);
    let (mut prefix, mut resume) = (0, 0);
    for (o, q) in run.queries.iter().zip(queries) {
        if o.query_id != q.query_id || o.paths.len() != n {
            return fail(format!("{}: {} paths", o.query_id, o.paths.len()));
        }
        let completed: Vec<_> = o.paths.iter().filter(|p| p.status == PathStatus::Completed).collect();
        let pruned = o.paths.iter().filter(|p| p.status == PathStatus::Pruned).count();
        if completed.len() != k || pruned != n - k || o.retained.len() != k {
            return fail(format!("{}: {} completed, {pruned} pruned", o.query_id, completed.len()));
        }
        if o.paths.iter().any(|p| p.status == PathStatus::Pruned && (p.completion_tokens != 0 || p.answer.is_some())) {
            return fail(format!("{}: pruned path was resumed", o.query_id));
        }
        let answers: Vec<&str> = completed.iter().filter_map(|p| p.answer.as_deref()).collect();
        match &o.voted_answer {
            Some(v) if answers.contains(&v.as_str()) => {}
            other => return fail(format!("{}: vote {other:?} not among survivors", o.query_id)),
        }
        prefix += o.paths.iter().map(|p| p.prefix_tokens).sum::<u64>();
        resume += completed.iter().map(|p| p.completion_tokens + p.reencode_tokens).sum::<u64>();
    }
    let l = &run.ledger;
    if l.prefix_tokens != prefix || l.resume_tokens != resume {
        return fail(format!("ledger {l:?} vs prefix {prefix} resume {resume}"));
    }
    if l.total != l.prefix_tokens + l.resume_tokens + l.check_tokens {
        return fail(format!("ledger total {l:?}"));
    }
    if run.queries.iter().map(|o| o.tokens).sum::<u64>() != l.total {
        return fail("per-query tokens do not sum to the ledger".into());
    }
    Ok(())
}

fn determinism_and_invariance() -> Outcome {
    let mut detail = Vec::new();
    let a = run_dir_bytes(10);
    let b = run_dir_bytes(10);
    let identical = a == b;
    detail.push(format!("{} artifacts byte-identical: {identical}", a.len()));

    let deterministic = || TestRng::deterministic_rng(RngAlgorithm::ChaCha);
    let mut runner = TestRunner::new_with_rng(
        PropConfig {
            cases: 300,
            failure_persistence: None,
            ..PropConfig::default()
        },
        deterministic(),
    );
    let invariance = runner
        .run(&(any::<u64>(), 0usize..4, 2usize..24, 0usize..4), |(seed, t, n, g)| {
            let backend = sim(seed);
            let queries = backend.sample_queries(3);
            let k = 1 + (seed as usize) % n;
            let confidence = Confidence { window: None };
            let random = RandomSignal { seed };
            let heuristic = Heuristic { ngram: 1 };
            let inner: &dyn SignalGenerator = match g {
                0 => &Oracle,
                1 => &random,
                2 => &confidence,
                _ => &heuristic,
            };
            let mapped = Transformed {
                inner,
                map: TRANSFORMS[t],
            };
            let x = pruned(&queries, &backend, inner, n, k);
            let y = pruned(&queries, &backend, &mapped, n, k);
            for (p, q) in x.queries.iter().zip(&y.queries) {
                prop_assert_eq!(&p.retained, &q.retained);
                prop_assert_eq!(&p.voted_answer, &q.voted_answer);
            }
            Ok(())
        })
        .map_err(|e| e.to_string());
    detail.push(format!("retention invariant under 4 monotone maps: {}", invariance.is_ok()));

    let mut runner = TestRunner::new_with_rng(
        PropConfig {
            cases: 10_000,
            failure_persistence: None,
            ..PropConfig::default()
        },
        deterministic(),
    );
    let fuzz = runner
        .run(
            &(any::<u64>(), 1usize..=8, any::<prop::sample::Index>(), 1usize..=256, 0usize..5),
            |(seed, n, ki, lp, g)| {
                let k = ki.index(n) + 1;
                let backend = sim_with(SimConfig {
                    seed,
                    length_mean: 400.0,
                    ..SimConfig::default()
                });
                let queries = backend.sample_queries(2);
                let generator: Box<dyn SignalGenerator> = match g {
                    0 => Box::new(Oracle),
                    1 => Box::new(RandomSignal { seed }),
                    2 => Box::new(Confidence { window: Some(16) }),
                    3 => Box::new(Heuristic { ngram: 2 }),
                    _ => Box::new(Learned {
                        model: Arc::new(ScorerModel::init(16, 4, true, &mut Stream::new(seed).rng())),
                        super_tokens: 6,
                    }),
                };
                let spec = RunSpec::new("fuzz", n, RetentionPolicy::top_k(lp, k), "fuzz");
                let run = run_with_pruning(&queries, &spec, &backend, generator.as_ref()).map_err(|e| TestCaseError::fail(e.to_string()))?;
                check_identities(&queries, &run, n, k).map_err(TestCaseError::fail)?;
                let base = run_no_pruning(&queries, n, lp, &backend).map_err(|e| TestCaseError::fail(e.to_string()))?;
                check_identities(&queries, &base, n, n).map_err(TestCaseError::fail)?;
                Ok(())
            },
        )
        .map_err(|e| e.to_string());
    detail.push(format!("lifecycle/ledger identities on 10^4 fuzzed runs: {}", fuzz.is_ok()));
    for e in [&invariance, &fuzz].into_iter().filter_map(|r| r.as_ref().err()) {
        detail.push(e.clone());
    }
    (identical && invariance.is_ok() && fuzz.is_ok(), detail.join("; "))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("scaling-law worked examples", worked_examples),
        ("lookup-table regression", lookup_tables),
        ("power-law fit recovery", fit_recovery),
        ("token-reduction arithmetic", token_reduction_arithmetic),
        ("pruning neutrality (random signal)", pruning_neutrality),
        ("pruning effectiveness (oracle signal)", pruning_effectiveness),
        ("learned scorer beats confidence", learned_beats_confidence),
        ("soft-label variance law", soft_label_variance),
        ("soft-BCE gradient check", gradient_check),
        ("determinism and invariance", determinism_and_invariance),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (ok, detail) = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        });
        failed += usize::from(!ok);
        println!(
            "criterion {:>2} {:<40} {} [{:.1}s] {detail}",
            i + 1,
            name,
            if ok { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
