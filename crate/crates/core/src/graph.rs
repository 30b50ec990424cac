//! k-nearest-neighbour similarity graphs and the graph-regularized `V` update.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::factor::{check_weights, multiplicative_step, scale_rows, DataMatrix, FactorPair, ResidualWeights, RuleForm, DENOM_GUARD};
use crate::numeric::{all_finite, column_norms, compensated_sum, frobenius_sq, trace_of_product};

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityGraph {
    s: Array2<f64>,
    normalized: bool,
    k: usize,
}

impl SimilarityGraph {
    /// Wraps an arbitrary symmetric nonnegative affinity matrix.
    pub fn new(s: Array2<f64>, normalized: bool, k: usize) -> Result<Self> {
        let (r, c) = s.dim();
        if r != c {
            return Err(Error::DimensionMismatch(format!("affinity matrix is {r}x{c}")));
        }
        for ((i, j), &v) in s.indexed_iter() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidInput(format!("affinity ({i}, {j}) = {v} is not finite and nonnegative")));
            }
            if v != s[[j, i]] {
                return Err(Error::InvalidInput(format!("affinity matrix is not symmetric at ({i}, {j})")));
            }
        }
        Ok(Self { s, normalized, k })
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.s
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_vertices(&self) -> usize {
        self.s.nrows()
    }

    pub fn degrees(&self) -> Array1<f64> {
        self.s.rows().into_iter().map(|r| compensated_sum(r.iter().copied())).collect()
    }
}

/// 0-1 weighted symmetric kNN graph on the columns of `x` (Euclidean).
///
/// An edge `i–j` exists when either endpoint lists the other among its `k`
/// nearest neighbours; equal distances prefer the lower index.
pub fn knn_graph(x: &DataMatrix, k: usize) -> Result<SimilarityGraph> {
    let n = x.n_samples();
    if k == 0 || k >= n {
        return Err(Error::InvalidInput(format!("neighbour count {k} must lie in [1, {})", n)));
    }
    let pts = x.values();
    let sq = column_norms(pts).mapv(|r| r * r);
    let gram = pts.t().dot(pts);
    let mut s = Array2::<f64>::zeros((n, n));
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    for i in 0..n {
        order.clear();
        order.extend((0..n).filter(|&j| j != i).map(|j| {
            let d = (sq[i] + sq[j] - 2.0 * gram[[i, j]]).max(0.0);
            (d, j)
        }));
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, j) in order.iter().take(k) {
            s[[i, j]] = 1.0;
            s[[j, i]] = 1.0;
        }
    }
    Ok(SimilarityGraph { s, normalized: false, k })
}

/// `D^{-1/2} S D^{-1/2}`; zero-degree vertices keep an all-zero row and column.
/// A graph that is already normalized is returned unchanged.
pub fn normalize_graph(g: &SimilarityGraph) -> SimilarityGraph {
    if g.normalized {
        return g.clone();
    }
    let inv_sqrt = g.degrees().mapv(|d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 });
    let n = g.n_vertices();
    let s = Array2::from_shape_fn((n, n), |(i, j)| inv_sqrt[i] * g.s[[i, j]] * inv_sqrt[j]);
    SimilarityGraph { s, normalized: true, k: g.k }
}

/// Whole-term split of the orthogonality multiplier.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplierSplit {
    /// `Vᵀ Q V UᵀU`.
    pub lambda_minus: Array2<f64>,
    /// `Vᵀ Q Xᵀ U + 2λ Vᵀ S V`.
    pub lambda_plus: Array2<f64>,
}

impl MultiplierSplit {
    /// `Λ = Λ⁺ − Λ⁻`.
    pub fn multiplier(&self) -> Array2<f64> {
        &self.lambda_plus - &self.lambda_minus
    }
}

fn check_graph(x: &DataMatrix, g: &SimilarityGraph, lambda: f64) -> Result<()> {
    if !g.normalized {
        return Err(Error::InvalidInput("graph must be normalized first".into()));
    }
    if g.n_vertices() != x.n_samples() {
        return Err(Error::DimensionMismatch(format!(
            "graph has {} vertices for {} samples",
            g.n_vertices(),
            x.n_samples()
        )));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidInput(format!("graph weight must be finite and nonnegative, got {lambda}")));
    }
    Ok(())
}

/// Shared products of one `V` step.
struct GraphTerms {
    qxu: Array2<f64>,
    qvuu: Array2<f64>,
    sv: Array2<f64>,
}

fn graph_terms(x: &DataMatrix, f: &FactorPair, w: &ResidualWeights, g: &SimilarityGraph, lambda: f64) -> Result<GraphTerms> {
    f.check_against(x)?;
    check_weights(x, w)?;
    check_graph(x, g, lambda)?;
    Ok(GraphTerms {
        qxu: scale_rows(&x.values().t().dot(&f.u), &w.q),
        qvuu: scale_rows(&f.v.dot(&f.u.t().dot(&f.u)), &w.q),
        sv: g.s.dot(&f.v),
    })
}

pub fn multiplier_split(
    x: &DataMatrix,
    f: &FactorPair,
    w: &ResidualWeights,
    g: &SimilarityGraph,
    lambda: f64,
) -> Result<MultiplierSplit> {
    let t = graph_terms(x, f, w, g, lambda)?;
    let vt = f.v.t();
    Ok(MultiplierSplit {
        lambda_minus: vt.dot(&t.qvuu),
        lambda_plus: vt.dot(&t.qxu) + 2.0 * lambda * vt.dot(&t.sv),
    })
}

/// `V ← V ⊙ sqrt((QXᵀU + 2λSV + VVᵀQVUᵀU) / (QVUᵀU + VVᵀQXᵀU + 2λVVᵀSV))`.
pub fn gemmf_update_v(
    x: &DataMatrix,
    f: &FactorPair,
    w: &ResidualWeights,
    g: &SimilarityGraph,
    lambda: f64,
) -> Result<Array2<f64>> {
    gemmf_update_v_with(x, f, w, g, lambda, true)
}

/// As [`gemmf_update_v`]; `orthogonality_terms = false` drops the three
/// `VVᵀ(·)` terms contributed by the multiplier.
pub fn gemmf_update_v_with(
    x: &DataMatrix,
    f: &FactorPair,
    w: &ResidualWeights,
    g: &SimilarityGraph,
    lambda: f64,
    orthogonality_terms: bool,
) -> Result<Array2<f64>> {
    let t = graph_terms(x, f, w, g, lambda)?;
    let mut num = &t.qxu + &(2.0 * lambda * &t.sv);
    let mut den = t.qvuu.clone();
    if orthogonality_terms {
        let split = multiplier_split(x, f, w, g, lambda)?;
        // VVᵀQVUᵀU = V Λ⁻ and VVᵀQXᵀU + 2λVVᵀSV = V Λ⁺
        num = num + f.v.dot(&split.lambda_minus);
        den = den + f.v.dot(&split.lambda_plus);
    }
    multiplicative_step(&f.v, &num, &den, RuleForm::SquareRoot, "V")
}

/// Majorize-minimize step for `½Tr(MQMᵀ) + λ‖S − VVᵀ‖²_F` with `Q` fixed:
/// `V ← V ⊙ ((QXᵀU + 4λSV) / (QVUᵀU + 4λVVᵀV))^{1/4}`.
///
/// Never increases that objective, which is why the solver falls back to it.
pub fn monotone_graph_update_v(
    x: &DataMatrix,
    f: &FactorPair,
    w: &ResidualWeights,
    g: &SimilarityGraph,
    lambda: f64,
) -> Result<Array2<f64>> {
    let t = graph_terms(x, f, w, g, lambda)?;
    let num = &t.qxu + &(4.0 * lambda * &t.sv);
    let den = &t.qvuu + &(4.0 * lambda * &f.v.dot(&f.v.t().dot(&f.v)));
    let mut out = f.v.clone();
    ndarray::Zip::from(&mut out)
        .and(&num)
        .and(&den)
        .for_each(|v, &a, &b| *v *= (a / (b + DENOM_GUARD)).powf(0.25));
    if !all_finite(&out) {
        return Err(Error::NonFiniteUpdate { factor: "V" });
    }
    Ok(out)
}

/// `‖S − VVᵀ‖²_F`.
pub fn graph_penalty(g: &SimilarityGraph, v: &Array2<f64>) -> Result<f64> {
    if v.nrows() != g.n_vertices() {
        return Err(Error::DimensionMismatch(format!(
            "V has {} rows for a graph on {} vertices",
            v.nrows(),
            g.n_vertices()
        )));
    }
    Ok(frobenius_sq(&(&g.s - &v.dot(&v.t()))))
}

/// `Tr(MQMᵀ) − 2λTr(VᵀSV)`, the regularized surrogate with the quartic
/// term dropped.
pub fn graph_surrogate(
    x: &DataMatrix,
    f: &FactorPair,
    w: &ResidualWeights,
    g: &SimilarityGraph,
    lambda: f64,
) -> Result<f64> {
    check_graph(x, g, lambda)?;
    let quad = crate::factor::trace_objective(x, f, w)?;
    Ok(quad - 2.0 * lambda * trace_of_product(&f.v, &g.s.dot(&f.v)))
}

/// Lagrangian of the surrogate with the multiplier held at `multiplier`:
/// `Tr(MQMᵀ) − 2λTr(VᵀSV) + Tr(Λᵀ(VᵀV − I))`.
pub fn frozen_lagrangian(
    x: &DataMatrix,
    f: &FactorPair,
    w: &ResidualWeights,
    g: &SimilarityGraph,
    lambda: f64,
    multiplier: &Array2<f64>,
) -> Result<f64> {
    let c = f.rank();
    if multiplier.dim() != (c, c) {
        return Err(Error::DimensionMismatch(format!("multiplier must be {c}x{c}")));
    }
    let base = graph_surrogate(x, f, w, g, lambda)?;
    let gram = f.v.t().dot(&f.v) - Array2::<f64>::eye(c);
    Ok(base + trace_of_product(multiplier, &gram))
}

/// `‖VᵀV − I‖_F`.
pub fn orthogonality_drift(v: &Array2<f64>) -> f64 {
    let c = v.ncols();
    frobenius_sq(&(v.t().dot(v) - Array2::<f64>::eye(c))).sqrt()
}
