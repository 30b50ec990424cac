//! Fitting loops for EMMF, graph-regularized EMMF and the NMF baselines.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor::{
    residual_matrix, weighted_update_u, weighted_update_u_with, weighted_update_v, weighted_update_v_with,
    ConvergenceTrace, DataMatrix, FactorPair, ResidualWeights, RuleForm, DENOM_GUARD,
};
use crate::graph::{
    gemmf_update_v, graph_penalty, monotone_graph_update_v, normalize_graph, orthogonality_drift, SimilarityGraph,
};
use crate::kmeans::kmeans;
use crate::losses::{compute_q, default_epsilon, entropy_objective, l21_weights};
use crate::numeric::{all_finite, column_norms, compensated_sum, frobenius_sq};

/// Offset added to the one-hot k-means indicator.
pub const V_INIT_OFFSET: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Method {
    Emmf,
    Gemmf,
    NmfFro,
    NmfDiv,
    L21Nmf,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Emmf, Method::Gemmf, Method::NmfFro, Method::NmfDiv, Method::L21Nmf];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Emmf => "EMMF",
            Method::Gemmf => "GEMMF",
            Method::NmfFro => "NMF_FRO",
            Method::NmfDiv => "NMF_DIV",
            Method::L21Nmf => "L21_NMF",
        }
    }

    pub fn is_entropy(self) -> bool {
        matches!(self, Method::Emmf | Method::Gemmf)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidInput(format!("unknown method '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum InitStrategy {
    #[default]
    Kmeans,
    Random,
}

/// How G-EMMF updates `V`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum GraphRule {
    /// Multiplier-based step, replaced by the majorize-minimize step whenever
    /// it would raise the recorded objective.
    #[default]
    Safeguarded,
    /// Multiplier-based step only.
    Printed,
}

fn default_max_iter() -> usize {
    500
}

fn default_tol() -> f64 {
    1e-6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub method: Method,
    pub c: usize,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub lambda: f64,
    /// Residual-norm guard; `None` means `1e-10 · max(1, ‖X‖_F)`.
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub init: InitStrategy,
    #[serde(default)]
    pub graph_rule: GraphRule,
}

impl SolverConfig {
    pub fn new(method: Method, c: usize) -> Self {
        Self {
            method,
            c,
            max_iter: default_max_iter(),
            tol: default_tol(),
            lambda: 0.0,
            epsilon: None,
            seed: 0,
            init: InitStrategy::Kmeans,
            graph_rule: GraphRule::Safeguarded,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.c == 0 {
            return Err(Error::InvalidInput("cluster count must be at least 1".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidInput("max_iter must be at least 1".into()));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::InvalidInput(format!("tol must be nonnegative, got {}", self.tol)));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidInput(format!("lambda must be finite and nonnegative, got {}", self.lambda)));
        }
        if let Some(eps) = self.epsilon {
            if !(eps > 0.0) || !eps.is_finite() {
                return Err(Error::InvalidInput(format!("epsilon must be positive, got {eps}")));
            }
        }
        Ok(())
    }

    fn check_data(&self, x: &DataMatrix) -> Result<()> {
        self.validate()?;
        let bound = x.n_features().min(x.n_samples());
        if self.c > bound {
            return Err(Error::InvalidInput(format!(
                "cluster count {} exceeds min(d, n) = {bound}",
                self.c
            )));
        }
        Ok(())
    }

    fn epsilon_for(&self, x: &DataMatrix) -> f64 {
        self.epsilon.unwrap_or_else(|| default_epsilon(x))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub factors: FactorPair,
    pub trace: ConvergenceTrace,
    /// Row-wise argmax of `V`, ties to the lowest column.
    pub assignments: Vec<usize>,
    /// `Q` at the final factors (entropy methods only).
    pub final_q: Option<ResidualWeights>,
    /// G-EMMF iterations where the multiplier step was rejected.
    pub fallback_steps: usize,
}

impl FitResult {
    /// `‖x_i − U v_iᵀ‖₂` for every sample.
    pub fn sample_errors(&self, x: &DataMatrix) -> Result<Array1<f64>> {
        Ok(column_norms(&residual_matrix(x, &self.factors)?))
    }
}

/// Row-wise argmax, ties to the lowest index.
pub fn assignments(v: &Array2<f64>) -> Vec<usize> {
    v.rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (k, &val) in row.iter().enumerate() {
                if val > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Starting factors; `c ≤ n` is required.
pub fn init_factors(x: &DataMatrix, c: usize, seed: u64, strategy: InitStrategy) -> Result<FactorPair> {
    let (d, n) = x.values().dim();
    if c == 0 || c > n {
        return Err(Error::InvalidInput(format!("cluster count {c} must lie in [1, {n}]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match strategy {
        InitStrategy::Kmeans => {
            let km = kmeans(x.values(), c, &mut rng)?;
            let max = x.values().iter().copied().fold(0.0, f64::max);
            let floor = 1e-8 * if max > 0.0 { max } else { 1.0 };
            let u = km.centroids.mapv(|e| e.max(floor));
            let mut v = Array2::from_elem((n, c), V_INIT_OFFSET);
            for (i, &k) in km.assignments.iter().enumerate() {
                v[[i, k]] += 1.0;
            }
            FactorPair::new(u, v)
        }
        InitStrategy::Random => {
            let mut draw = |rows, cols| Array2::from_shape_fn((rows, cols), |_| 1.0 - rng.random::<f64>());
            let u = draw(d, c);
            let v = draw(n, c);
            FactorPair::new(u, v)
        }
    }
}

/// `‖X − UVᵀ‖²_F`.
pub fn frobenius_objective(x: &DataMatrix, f: &FactorPair) -> Result<f64> {
    Ok(frobenius_sq(&residual_matrix(x, f)?))
}

/// `Σ_ij X log(X / B) − X + B` with `B = UVᵀ + δ` and `0 log 0 = 0`.
pub fn divergence_objective(x: &DataMatrix, f: &FactorPair) -> Result<f64> {
    f.check_against(x)?;
    let b = f.reconstruction();
    Ok(compensated_sum(x.values().iter().zip(b.iter()).map(|(&a, &bb)| {
        let bb = bb + DENOM_GUARD;
        let log_term = if a > 0.0 { a * (a / bb).ln() } else { 0.0 };
        log_term - a + bb
    })))
}

/// `Σ_i ‖x_i − U v_iᵀ‖₂`.
pub fn l21_objective(x: &DataMatrix, f: &FactorPair) -> Result<f64> {
    Ok(compensated_sum(column_norms(&residual_matrix(x, f)?).iter().copied()))
}

/// Entropy loss plus `λ‖S − VVᵀ‖²_F`.
pub fn gemmf_objective(x: &DataMatrix, f: &FactorPair, g: &SimilarityGraph, lambda: f64, epsilon: f64) -> Result<f64> {
    Ok(entropy_objective(x, f, epsilon)? + lambda * graph_penalty(g, &f.v)?)
}

fn kl_step(x: &DataMatrix, f: &FactorPair) -> Result<FactorPair> {
    let ratio = |f: &FactorPair| {
        let b = f.reconstruction();
        // guarded only where the reconstruction vanishes, so exact fits stay fixed
        ndarray::Zip::from(x.values())
            .and(&b)
            .map_collect(|&a, &bb| if bb > 0.0 { a / bb } else { a / DENOM_GUARD })
    };
    let r = ratio(f);
    let v_sums = f.v.sum_axis(ndarray::Axis(0));
    let mut u = &f.u * &r.dot(&f.v);
    for mut row in u.rows_mut() {
        row.zip_mut_with(&v_sums, |e, &s| *e /= s + DENOM_GUARD);
    }
    if !all_finite(&u) {
        return Err(Error::NonFiniteUpdate { factor: "U" });
    }
    let mid = FactorPair { u, v: f.v.clone() };
    let r = ratio(&mid);
    let u_sums = mid.u.sum_axis(ndarray::Axis(0));
    let mut v = &mid.v * &r.t().dot(&mid.u);
    for mut row in v.rows_mut() {
        row.zip_mut_with(&u_sums, |e, &s| *e /= s + DENOM_GUARD);
    }
    if !all_finite(&v) {
        return Err(Error::NonFiniteUpdate { factor: "V" });
    }
    Ok(FactorPair { u: mid.u, v })
}

/// Runs `cfg.method` from the configured initialization. G-EMMF needs `graph`.
pub fn fit(x: &DataMatrix, cfg: &SolverConfig, graph: Option<&SimilarityGraph>) -> Result<FitResult> {
    cfg.check_data(x)?;
    let init = init_factors(x, cfg.c, cfg.seed, cfg.init)?;
    fit_from(x, cfg, graph, init)
}

pub fn fit_emmf(x: &DataMatrix, cfg: &SolverConfig) -> Result<FitResult> {
    if cfg.method != Method::Emmf {
        return Err(Error::InvalidInput(format!("fit_emmf called with method {}", cfg.method)));
    }
    fit(x, cfg, None)
}

pub fn fit_gemmf(x: &DataMatrix, graph: &SimilarityGraph, cfg: &SolverConfig) -> Result<FitResult> {
    if cfg.method != Method::Gemmf {
        return Err(Error::InvalidInput(format!("fit_gemmf called with method {}", cfg.method)));
    }
    fit(x, cfg, Some(graph))
}

pub fn fit_baseline(x: &DataMatrix, cfg: &SolverConfig) -> Result<FitResult> {
    if cfg.method.is_entropy() {
        return Err(Error::InvalidInput(format!("{} is not a baseline method", cfg.method)));
    }
    fit(x, cfg, None)
}

/// Runs `cfg.method` from caller-supplied starting factors.
pub fn fit_from(x: &DataMatrix, cfg: &SolverConfig, graph: Option<&SimilarityGraph>, init: FactorPair) -> Result<FitResult> {
    cfg.check_data(x)?;
    init.check_against(x)?;
    if init.rank() != cfg.c {
        return Err(Error::DimensionMismatch(format!(
            "initial factors have rank {} but c = {}",
            init.rank(),
            cfg.c
        )));
    }
    if !init.is_nonnegative() {
        return Err(Error::InvalidInput("initial factors must be nonnegative".into()));
    }
    let graph = match (cfg.method, graph) {
        (Method::Gemmf, Some(g)) => {
            if g.n_vertices() != x.n_samples() {
                return Err(Error::DimensionMismatch(format!(
                    "graph has {} vertices for {} samples",
                    g.n_vertices(),
                    x.n_samples()
                )));
            }
            Some(normalize_graph(g))
        }
        (Method::Gemmf, None) => return Err(Error::InvalidInput("GEMMF requires a similarity graph".into())),
        _ => None,
    };
    let eps = cfg.epsilon_for(x);
    let lambda = cfg.lambda;
    let n = x.n_samples();
    let identity = ResidualWeights::new(Array1::ones(n), Array1::ones(n), eps)?;

    let objective = |f: &FactorPair| -> Result<f64> {
        match cfg.method {
            Method::Emmf => entropy_objective(x, f, eps),
            Method::Gemmf => gemmf_objective(x, f, graph.as_ref().expect("graph checked"), lambda, eps),
            Method::NmfFro => frobenius_objective(x, f),
            Method::NmfDiv => divergence_objective(x, f),
            Method::L21Nmf => l21_objective(x, f),
        }
    };

    let start = Instant::now();
    let mut trace = ConvergenceTrace::default();
    let mut f = init;
    let mut fallback_steps = 0;
    let mut prev = objective(&f)?;
    trace.objective.push(prev);
    if cfg.method == Method::Gemmf {
        trace.orthogonality_drift.push(orthogonality_drift(&f.v));
    }

    for iteration in 1..=cfg.max_iter {
        let step = |f: &FactorPair, fallbacks: &mut usize| -> Result<FactorPair> {
            match cfg.method {
                Method::Emmf => {
                    let w = compute_q(&residual_matrix(x, f)?, eps)?;
                    let u = weighted_update_u(x, f, &w)?;
                    let mid = FactorPair { u, v: f.v.clone() };
                    let v = weighted_update_v(x, &mid, &w)?;
                    Ok(FactorPair { u: mid.u, v })
                }
                Method::Gemmf => {
                    let g = graph.as_ref().expect("graph checked");
                    let w = compute_q(&residual_matrix(x, f)?, eps)?;
                    let u = weighted_update_u(x, f, &w)?;
                    let mid = FactorPair { u, v: f.v.clone() };
                    let candidate = gemmf_update_v(x, &mid, &w, g, lambda)?;
                    let v = match cfg.graph_rule {
                        GraphRule::Printed => candidate,
                        GraphRule::Safeguarded => {
                            let trial = FactorPair { u: mid.u.clone(), v: candidate };
                            if objective(&trial)? > prev {
                                *fallbacks += 1;
                                monotone_graph_update_v(x, &mid, &w, g, lambda)?
                            } else {
                                trial.v
                            }
                        }
                    };
                    Ok(FactorPair { u: mid.u, v })
                }
                Method::NmfFro | Method::L21Nmf => {
                    let w = if cfg.method == Method::NmfFro {
                        identity.clone()
                    } else {
                        l21_weights(&residual_matrix(x, f)?, eps)?
                    };
                    let u = weighted_update_u_with(x, f, &w, RuleForm::Plain)?;
                    let mid = FactorPair { u, v: f.v.clone() };
                    let v = weighted_update_v_with(x, &mid, &w, RuleForm::Plain)?;
                    Ok(FactorPair { u: mid.u, v })
                }
                Method::NmfDiv => kl_step(x, f),
            }
        };
        let next = step(&f, &mut fallback_steps).and_then(|nf| {
            let obj = objective(&nf)?;
            if obj.is_finite() {
                Ok((nf, obj))
            } else {
                Err(Error::InvalidInput("objective is not finite".into()))
            }
        });
        let (nf, obj) = match next {
            Ok(v) => v,
            Err(e) if matches!(e, Error::DimensionMismatch(_)) => return Err(e),
            Err(e) => {
                trace.iterations = iteration - 1;
                trace.wall_time = start.elapsed().as_secs_f64();
                return Err(Error::Divergence {
                    iteration,
                    reason: e.to_string(),
                    trace: Box::new(trace),
                });
            }
        };
        f = nf;
        trace.objective.push(obj);
        if cfg.method == Method::Gemmf {
            trace.orthogonality_drift.push(orthogonality_drift(&f.v));
        }
        trace.iterations = iteration;
        let change = (obj - prev).abs() / prev.max(1e-30);
        prev = obj;
        if change < cfg.tol {
            trace.converged = true;
            break;
        }
    }
    trace.wall_time = start.elapsed().as_secs_f64();

    let final_q = if cfg.method.is_entropy() {
        Some(compute_q(&residual_matrix(x, &f)?, eps)?)
    } else {
        None
    };
    Ok(FitResult {
        assignments: assignments(&f.v),
        factors: f,
        trace,
        final_q,
        fallback_steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn two_blobs() -> DataMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut x = Array2::zeros((2, 20));
        for i in 0..20 {
            let (a, b) = if i < 10 { (8.0, 1.0) } else { (1.0, 8.0) };
            x[[0, i]] = a + rng.random::<f64>();
            x[[1, i]] = b + rng.random::<f64>();
        }
        DataMatrix::new(x, Some((0..20).map(|i| usize::from(i >= 10)).collect()), "blobs").unwrap()
    }

    #[test]
    fn kmeans_init_recovers_blobs_and_offsets_v() {
        let x = two_blobs();
        let labels = x.labels().unwrap().to_vec();
        for seed in 0..5 {
            let f = init_factors(&x, 2, seed, InitStrategy::Kmeans).unwrap();
            let pred = assignments(&f.v);
            // both label permutations
            let direct = pred.iter().zip(&labels).filter(|(a, b)| a == b).count();
            let swapped = pred.iter().zip(&labels).filter(|(a, b)| **a != **b).count();
            assert_eq!(direct.max(swapped), 20);
            assert!(f.v.iter().all(|&e| e >= V_INIT_OFFSET));
            assert!(f.u.iter().all(|&e| e > 0.0));
        }
    }

    #[test]
    fn random_init_is_reproducible_and_positive() {
        let x = two_blobs();
        let a = init_factors(&x, 2, 9, InitStrategy::Random).unwrap();
        let b = init_factors(&x, 2, 9, InitStrategy::Random).unwrap();
        assert_eq!(a, b);
        assert!(a.u.iter().chain(a.v.iter()).all(|&e| e > 0.0 && e <= 1.0));
    }

    #[test]
    fn init_rejects_c_above_n() {
        let x = DataMatrix::from_values(Array2::ones((3, 2))).unwrap();
        assert!(init_factors(&x, 3, 0, InitStrategy::Kmeans).is_err());
    }

    #[test]
    fn argmax_ties_go_to_lowest_column() {
        let v = array![[0.5, 0.5], [0.1, 0.9], [0.3, 0.3]];
        assert_eq!(assignments(&v), vec![0, 1, 0]);
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("nmf".parse::<Method>().is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = SolverConfig::new(Method::Emmf, 2);
        assert!(cfg.validate().is_ok());
        cfg.tol = -1.0;
        assert!(cfg.validate().is_err());
        cfg.tol = 0.0;
        cfg.max_iter = 0;
        assert!(cfg.validate().is_err());
        cfg.max_iter = 1;
        cfg.lambda = -2.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn divergence_is_zero_only_at_exact_factorization() {
        let u = array![[1.0, 0.5], [0.2, 2.0], [0.7, 0.1]];
        let v = array![[1.0, 0.3], [0.4, 1.2]];
        let x = DataMatrix::from_values(u.dot(&v.t())).unwrap();
        let f = FactorPair::new(u, v).unwrap();
        assert!(divergence_objective(&x, &f).unwrap().abs() < 1e-10);
        let mut g = f.clone();
        g.u[[0, 0]] = 2.0;
        assert!(divergence_objective(&x, &g).unwrap() > 1e-3);
    }

    #[test]
    fn gemmf_without_graph_is_rejected() {
        let x = two_blobs();
        let cfg = SolverConfig::new(Method::Gemmf, 2);
        assert!(matches!(fit(&x, &cfg, None), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn wrong_entry_point_is_rejected() {
        let x = two_blobs();
        assert!(fit_emmf(&x, &SolverConfig::new(Method::NmfFro, 2)).is_err());
        assert!(fit_baseline(&x, &SolverConfig::new(Method::Emmf, 2)).is_err());
    }

    #[test]
    fn trace_length_is_iterations_plus_one() {
        let x = two_blobs();
        for m in [Method::Emmf, Method::NmfFro, Method::NmfDiv, Method::L21Nmf] {
            let mut cfg = SolverConfig::new(m, 2);
            cfg.max_iter = 7;
            cfg.tol = 0.0;
            let r = fit(&x, &cfg, None).unwrap();
            assert_eq!(r.trace.iterations, 7);
            assert_eq!(r.trace.objective.len(), 8);
            assert!(!r.trace.converged);
            assert_eq!(r.final_q.is_some(), m.is_entropy());
        }
    }

    #[test]
    fn identical_columns_give_rank_one_recovery() {
        let col = array![1.0, 3.0, 2.0];
        let mut x = Array2::zeros((3, 6));
        for mut c in x.columns_mut() {
            c.assign(&col);
        }
        let x = DataMatrix::from_values(x).unwrap();
        let r = fit_emmf(&x, &SolverConfig::new(Method::Emmf, 1)).unwrap();
        assert!(r.trace.final_objective().unwrap() < 1e-6);
        assert!(r.sample_errors(&x).unwrap().iter().all(|&e| e < 1e-6));
    }
}
