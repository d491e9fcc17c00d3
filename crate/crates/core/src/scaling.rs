//! Retention-ratio power law.
//!
//! The optimal inverse retention ratio is modeled as
//! `a * C^b * Lp^c / Lt^d`, with budget, prefix length and task length all
//! expressed in units of 1024 tokens.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Token unit of the law's inputs.
pub const UNIT: f64 = 1024.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub rmse_log: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingCoefficients {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitDiagnostics>,
}

impl ScalingCoefficients {
    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        ScalingCoefficients { a, b, c, d, fit: None }
    }

    /// The published fit.
    pub fn published() -> Self {
        Self::new(1.17e4, 0.46, 0.40, 4.55)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.a.is_finite()) {
            return Err(Error::config(format!("coefficient a = {} must be positive", self.a)));
        }
        if ![self.b, self.c, self.d].iter().all(|x| x.is_finite()) {
            return Err(Error::config("exponents must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanQuery {
    /// Total token budget per query.
    pub budget: f64,
    pub prefix_length: f64,
    pub task_length: f64,
}

impl PlanQuery {
    pub fn new(budget: f64, prefix_length: f64, task_length: f64) -> Self {
        PlanQuery {
            budget,
            prefix_length,
            task_length,
        }
    }

    fn normalized(&self) -> Result<[f64; 3]> {
        let v = [self.budget, self.prefix_length, self.task_length];
        if v.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
            return Err(Error::invalid(format!(
                "plan inputs must be positive: C={}, Lp={}, Lt={}",
                self.budget, self.prefix_length, self.task_length
            )));
        }
        Ok(v.map(|x| x / UNIT))
    }
}

pub fn predict_inverse_gamma(q: &PlanQuery, k: &ScalingCoefficients) -> Result<f64> {
    let [c, lp, lt] = q.normalized()?;
    Ok(k.a * c.powf(k.b) * lp.powf(k.c) / lt.powf(k.d))
}

/// Predicted retention ratio, capped at 1 (keep everything).
pub fn predict_gamma(q: &PlanQuery, k: &ScalingCoefficients) -> Result<f64> {
    Ok((1.0 / predict_inverse_gamma(q, k)?).min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub budget: f64,
    pub prefix_length: f64,
    pub task_length: f64,
    pub inverse_gamma: f64,
}

const REGRESSORS: [&str; 3] = ["budget", "prefix_length", "task_length"];

/// Ordinary least squares of `ln(1/γ)` on the logged, normalized inputs.
pub fn fit_powerlaw(obs: &[Observation]) -> Result<ScalingCoefficients> {
    if obs.len() < 4 {
        return Err(Error::invalid(format!(
            "fitting four coefficients needs at least 4 observations, got {}",
            obs.len()
        )));
    }
    let n = obs.len();
    let mut x = DMatrix::<f64>::zeros(n, 4);
    let mut y = DVector::<f64>::zeros(n);
    for (i, o) in obs.iter().enumerate() {
        let [c, lp, lt] = PlanQuery::new(o.budget, o.prefix_length, o.task_length).normalized()?;
        if !(o.inverse_gamma > 0.0 && o.inverse_gamma.is_finite()) {
            return Err(Error::invalid(format!("observation {i}: 1/γ = {} must be positive", o.inverse_gamma)));
        }
        x[(i, 0)] = 1.0;
        x[(i, 1)] = c.ln();
        x[(i, 2)] = lp.ln();
        x[(i, 3)] = lt.ln();
        y[i] = o.inverse_gamma.ln();
    }
    check_collinearity(&x)?;
    let beta = x
        .clone()
        .svd(true, true)
        .solve(&y, 1e-14)
        .map_err(|e| Error::Numeric(format!("least squares: {e}")))?;
    let resid = &y - &x * &beta;
    let rmse_log = (resid.norm_squared() / n as f64).sqrt();
    Ok(ScalingCoefficients {
        a: beta[0].exp(),
        b: beta[1],
        c: beta[2],
        d: -beta[3],
        fit: Some(FitDiagnostics { rmse_log, points: n }),
    })
}

/// Errors when some regressor column is (nearly) a linear combination of the
/// intercept and the other regressors.
fn check_collinearity(x: &DMatrix<f64>) -> Result<()> {
    for j in 1..4 {
        let col = x.column(j).into_owned();
        let mean = col.mean();
        let total = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
        let others: Vec<usize> = (0..4).filter(|&c| c != j).collect();
        let rest = x.select_columns(&others);
        let resid = match rest.clone().svd(true, true).solve(&col, 1e-14) {
            Ok(coef) => (&col - &rest * coef).norm_squared(),
            Err(_) => 0.0,
        };
        if total <= 1e-24 || resid <= 1e-10 * total.max(1e-300) {
            return Err(Error::Collinear(REGRESSORS[j - 1].into()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LookupTable {
    pub name: String,
    pub task_length: f64,
    pub prefix_grid: Vec<u64>,
    /// Budgets in tokens.
    pub budget_grid: Vec<f64>,
    /// `cells[i][j]` is 1/γ for `prefix_grid[i]` and `budget_grid[j]`.
    pub cells: Vec<Vec<f64>>,
}

pub fn emit_lookup_table(
    name: &str,
    coeffs: &ScalingCoefficients,
    task_length: f64,
    prefix_grid: &[u64],
    budget_grid: &[f64],
) -> Result<LookupTable> {
    if prefix_grid.is_empty() || budget_grid.is_empty() {
        return Err(Error::invalid("lookup grids must be nonempty"));
    }
    let cells = prefix_grid
        .iter()
        .map(|&lp| {
            budget_grid
                .iter()
                .map(|&c| predict_inverse_gamma(&PlanQuery::new(c, lp as f64, task_length), coeffs))
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(LookupTable {
        name: name.into(),
        task_length,
        prefix_grid: prefix_grid.to_vec(),
        budget_grid: budget_grid.to_vec(),
        cells,
    })
}

/// A budget as a short label: whole multiples of 1024 tokens print as `140k`.
pub fn budget_label(tokens: f64) -> String {
    let units = tokens / UNIT;
    if units.fract() == 0.0 {
        format!("{units}k")
    } else {
        format!("{tokens}")
    }
}

impl LookupTable {
    pub fn cell_count(&self) -> usize {
        self.cells.iter().map(Vec::len).sum()
    }

    /// Header `L_prefix,<budget tokens>...`, one row per prefix length.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("L_prefix");
        for b in &self.budget_grid {
            let _ = write!(out, ",{b}");
        }
        out.push('\n');
        for (lp, row) in self.prefix_grid.iter().zip(&self.cells) {
            out.push_str(&lp.to_string());
            for v in row {
                let _ = write!(out, ",{v:.4}");
            }
            out.push('\n');
        }
        out
    }

    pub fn to_text(&self) -> String {
        let labels: Vec<String> = self.budget_grid.iter().map(|&b| budget_label(b)).collect();
        let width = labels.iter().map(String::len).max().unwrap_or(0).max(6);
        let mut out = format!("{} (L_task = {})\n", self.name, self.task_length);
        let _ = write!(out, "{:>8}", "L_prefix");
        for l in &labels {
            let _ = write!(out, " {l:>width$}");
        }
        out.push('\n');
        for (lp, row) in self.prefix_grid.iter().zip(&self.cells) {
            let _ = write!(out, "{lp:>8}");
            for v in row {
                let _ = write!(out, " {v:>width$.2}");
            }
            out.push('\n');
        }
        out
    }
}

/// The two reference grids: a short-horizon task (8650 tokens) and a
/// long-horizon one (11950 tokens). Budget labels are in 1024-token units.
pub fn reference_tables(coeffs: &ScalingCoefficients) -> Result<Vec<LookupTable>> {
    let k = |labels: &[u32]| labels.iter().map(|&l| f64::from(l) * UNIT).collect::<Vec<_>>();
    Ok(vec![
        emit_lookup_table(
            "short_horizon",
            coeffs,
            8650.0,
            &[512, 1024, 1536, 2048, 2560],
            &k(&[140, 160, 180, 200, 220, 240, 260, 280, 300]),
        )?,
        emit_lookup_table(
            "long_horizon",
            coeffs,
            11950.0,
            &[1024, 2048, 3072, 4096, 5120],
            &k(&[200, 250, 300, 350, 400, 450, 500, 550, 600]),
        )?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand_distr::{Distribution, Normal};

    use crate::rng::Stream;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn worked_examples() {
        let k = ScalingCoefficients::published();
        let v = predict_inverse_gamma(&PlanQuery::new(158.0 * 1024.0, 2048.0, 8650.0), &k).unwrap();
        assert!(rel(v, 9.63) < 0.05, "{v}");
        let v = predict_inverse_gamma(&PlanQuery::new(275.0 * 1024.0, 3072.0, 12000.0), &k).unwrap();
        assert!(rel(v, 3.36) < 0.05, "{v}");

        // closed form with 1000-token budgets
        let direct = 1.17e4 * (158_000.0f64 / 1024.0).powf(0.46) * 2.0f64.powf(0.40) / (8650.0f64 / 1024.0).powf(4.55);
        let v = predict_inverse_gamma(&PlanQuery::new(158_000.0, 2048.0, 8650.0), &k).unwrap();
        assert!((v - direct).abs() < 1e-12);
        assert!(rel(v, 9.63) < 0.05);
    }

    #[test]
    fn homogeneity_in_budget() {
        let k = ScalingCoefficients::published();
        let base = PlanQuery::new(100_000.0, 2048.0, 9000.0);
        let doubled = PlanQuery::new(100_000.0 * 2f64.powf(1.0 / k.b), 2048.0, 9000.0);
        let r = predict_inverse_gamma(&doubled, &k).unwrap() / predict_inverse_gamma(&base, &k).unwrap();
        assert!((r - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_nonpositive_inputs() {
        let k = ScalingCoefficients::published();
        for q in [
            PlanQuery::new(0.0, 1.0, 1.0),
            PlanQuery::new(1.0, -1.0, 1.0),
            PlanQuery::new(1.0, 1.0, f64::NAN),
        ] {
            assert!(matches!(predict_inverse_gamma(&q, &k), Err(Error::InvalidArgument(_))));
        }
        let g = predict_gamma(&PlanQuery::new(1024.0, 1024.0, 1e6), &k).unwrap();
        assert_eq!(g, 1.0);
    }

    fn synthetic(k: &ScalingCoefficients, noise: f64, n: usize, seed: u64) -> Vec<Observation> {
        let mut rng = Stream::new(seed).rng();
        let normal = Normal::new(0.0, noise.max(f64::MIN_POSITIVE)).unwrap();
        (0..n)
            .map(|i| {
                let budget = 50_000.0 * (1.0 + (i % 13) as f64 * 0.7);
                let lp = 512.0 * (1.0 + ((i / 13) % 7) as f64);
                let lt = 6000.0 + 1500.0 * ((i * 7 + 3) % 11) as f64;
                let q = PlanQuery::new(budget, lp, lt);
                let clean = predict_inverse_gamma(&q, k).unwrap();
                let e = if noise > 0.0 { normal.sample(&mut rng) } else { 0.0 };
                Observation {
                    budget,
                    prefix_length: lp,
                    task_length: lt,
                    inverse_gamma: clean * f64::exp(e),
                }
            })
            .collect()
    }

    #[test]
    fn exact_recovery_without_noise() {
        let planted = ScalingCoefficients::new(1e4, 0.5, 0.4, 4.5);
        let fit = fit_powerlaw(&synthetic(&planted, 0.0, 60, 1)).unwrap();
        assert!(rel(fit.a, 1e4) < 1e-9, "{}", fit.a);
        assert!(rel(fit.b, 0.5) < 1e-9);
        assert!(rel(fit.c, 0.4) < 1e-9);
        assert!(rel(fit.d, 4.5) < 1e-9);
        assert!(fit.fit.unwrap().rmse_log < 1e-10);
    }

    #[test]
    fn noisy_recovery() {
        let planted = ScalingCoefficients::new(1e4, 0.5, 0.4, 4.5);
        let fit = fit_powerlaw(&synthetic(&planted, 0.05, 200, 2)).unwrap();
        for (got, want) in [(fit.b, 0.5), (fit.c, 0.4), (fit.d, 4.5)] {
            assert!((got - want).abs() < 0.03, "{got} vs {want}");
        }
        assert_eq!(fit.fit.as_ref().unwrap().points, 200);
    }

    #[test]
    fn degenerate_designs() {
        let planted = ScalingCoefficients::published();
        let obs = synthetic(&planted, 0.0, 3, 0);
        assert!(matches!(fit_powerlaw(&obs), Err(Error::InvalidArgument(_))));

        let mut same_lt = synthetic(&planted, 0.0, 40, 0);
        same_lt.iter_mut().for_each(|o| o.task_length = 9000.0);
        match fit_powerlaw(&same_lt) {
            Err(Error::Collinear(name)) => assert_eq!(name, "task_length"),
            other => panic!("{other:?}"),
        }

        // prefix length tied to the budget
        let mut tied = synthetic(&planted, 0.0, 40, 0);
        tied.iter_mut().for_each(|o| o.prefix_length = o.budget / 50.0);
        assert!(matches!(fit_powerlaw(&tied), Err(Error::Collinear(_))));
    }

    #[test]
    fn tables_have_grid_shape() {
        let t = reference_tables(&ScalingCoefficients::published()).unwrap();
        assert_eq!(t[0].cell_count(), 45);
        let csv = t[0].to_csv();
        assert_eq!(csv.lines().count(), 6);
        assert!(csv.starts_with("L_prefix,143360,"));
        assert!(t[0].to_text().contains("140k"));
        let one = emit_lookup_table("x", &ScalingCoefficients::published(), 8650.0, &[512, 1024], &[1e5, 2e5, 3e5]).unwrap();
        assert_eq!(one.cell_count(), 6);
        assert!(emit_lookup_table("x", &ScalingCoefficients::published(), 8650.0, &[], &[1e5]).is_err());
    }

    #[test]
    fn table_corner_cells() {
        let k = ScalingCoefficients::published();
        let v = predict_inverse_gamma(&PlanQuery::new(140.0 * 1024.0, 512.0, 8650.0), &k).unwrap();
        assert!(rel(v, 5.23) < 0.02, "{v}");
        let v = predict_inverse_gamma(&PlanQuery::new(200.0 * 1024.0, 1024.0, 11950.0), &k).unwrap();
        assert!(rel(v, 1.87) < 0.03, "{v}");
    }

    proptest! {
        #[test]
        fn monotone_in_each_input(
            c in 1e3f64..1e7, lp in 64.0f64..16384.0, lt in 1024.0f64..65536.0, f in 1.001f64..4.0
        ) {
            let k = ScalingCoefficients::published();
            let p = |c, lp, lt| predict_inverse_gamma(&PlanQuery::new(c, lp, lt), &k).unwrap();
            let base = p(c, lp, lt);
            prop_assert!(p(c * f, lp, lt) > base);
            prop_assert!(p(c, lp * f, lt) > base);
            prop_assert!(p(c, lp, lt * f) < base);
        }

        #[test]
        fn fit_inverts_generation(
            a in 10.0f64..1e5, b in 0.1f64..1.0, c in 0.1f64..1.0, d in 0.5f64..5.0
        ) {
            let planted = ScalingCoefficients::new(a, b, c, d);
            let fit = fit_powerlaw(&synthetic(&planted, 0.0, 30, 0)).unwrap();
            prop_assert!(rel(fit.a, a) < 1e-8);
            prop_assert!((fit.b - b).abs() < 1e-9 && (fit.c - c).abs() < 1e-9 && (fit.d - d).abs() < 1e-9);
        }
    }
}
