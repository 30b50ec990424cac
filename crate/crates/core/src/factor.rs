//! Core domain types and the shared weighted multiplicative-update engine.
//!
//! Samples are the columns of the `d × n` data matrix `X`; the factorization is
//! `X ≈ U Vᵀ` with `U` of shape `d × c` and `V` of shape `n × c`. Every loss in
//! this crate reduces (per iteration) to the weighted least-squares surrogate
//! `Tr(M Q Mᵀ) = Σ_i Q_ii ‖m_i‖²` with `M = X − U Vᵀ` and a diagonal `Q`, so one
//! pair of update kernels serves Frobenius NMF (`Q = I`), ℓ2,1-NMF and EMMF.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{all_finite, column_norms, compensated_sum};

/// Added to every multiplicative-rule denominator.
pub const DENOM_GUARD: f64 = 1e-12;

/// Nonnegative `d × n` sample matrix with optional class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    values: Array2<f64>,
    labels: Option<Vec<usize>>,
    name: String,
}

impl DataMatrix {
    pub fn new(values: Array2<f64>, labels: Option<Vec<usize>>, name: impl Into<String>) -> Result<Self> {
        let (d, n) = values.dim();
        if d == 0 || n == 0 {
            return Err(Error::InvalidInput(format!(
                "data matrix must be non-empty, got {d}x{n}"
            )));
        }
        for ((row, col), &v) in values.indexed_iter() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidInput(format!(
                    "entry ({row}, {col}) = {v} is not a finite nonnegative value"
                )));
            }
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "{} labels for {n} samples",
                    l.len()
                )));
            }
        }
        Ok(Self {
            values,
            labels,
            name: name.into(),
        })
    }

    /// Unlabeled, unnamed matrix.
    pub fn from_values(values: Array2<f64>) -> Result<Self> {
        Self::new(values, None, "")
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Number of features `d`.
    pub fn n_features(&self) -> usize {
        self.values.nrows()
    }

    /// Number of samples `n`.
    pub fn n_samples(&self) -> usize {
        self.values.ncols()
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn into_parts(self) -> (Array2<f64>, Option<Vec<usize>>, String) {
        (self.values, self.labels, self.name)
    }
}

/// Basis `U` (`d × c`) and coefficients `V` (`n × c`).
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPair {
    pub u: Array2<f64>,
    pub v: Array2<f64>,
}

impl FactorPair {
    pub fn new(u: Array2<f64>, v: Array2<f64>) -> Result<Self> {
        if u.ncols() != v.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "U has {} columns but V has {}",
                u.ncols(),
                v.ncols()
            )));
        }
        if u.ncols() == 0 {
            return Err(Error::InvalidInput("factor rank must be at least 1".into()));
        }
        Ok(Self { u, v })
    }

    /// Number of centroids `c`.
    pub fn rank(&self) -> usize {
        self.u.ncols()
    }

    pub fn is_nonnegative(&self) -> bool {
        self.u.iter().chain(self.v.iter()).all(|&x| x >= 0.0)
    }

    pub(crate) fn check_against(&self, x: &DataMatrix) -> Result<()> {
        let (d, n) = x.values().dim();
        if self.u.nrows() != d || self.v.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "X is {d}x{n} but U is {}x{} and V is {}x{}",
                self.u.nrows(),
                self.u.ncols(),
                self.v.nrows(),
                self.v.ncols()
            )));
        }
        Ok(())
    }

    /// `U Vᵀ`.
    pub fn reconstruction(&self) -> Array2<f64> {
        self.u.dot(&self.v.t())
    }
}

/// Per-sample residual norms and the diagonal weights `Q` derived from them.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualWeights {
    /// Guarded column norms `max(‖m_i‖₂, ε)`.
    pub norms: Array1<f64>,
    /// `Σ_i norms[i]`.
    pub total: f64,
    /// Diagonal of `Q`.
    pub q: Array1<f64>,
    pub epsilon: f64,
}

impl ResidualWeights {
    pub fn new(norms: Array1<f64>, q: Array1<f64>, epsilon: f64) -> Result<Self> {
        if norms.len() != q.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} norms but {} weights",
                norms.len(),
                q.len()
            )));
        }
        if !(epsilon > 0.0) {
            return Err(Error::InvalidInput(format!("epsilon must be positive, got {epsilon}")));
        }
        if let Some((i, w)) = q.iter().enumerate().find(|(_, w)| !w.is_finite() || **w < 0.0) {
            return Err(Error::InvalidInput(format!("weight {i} = {w} is not finite and nonnegative")));
        }
        let norms = norms.mapv(|r| r.max(epsilon));
        let total = compensated_sum(norms.iter().copied());
        Ok(Self {
            norms,
            total,
            q,
            epsilon,
        })
    }

    /// `Q = I` weights for residual `m` (plain Frobenius loss).
    pub fn identity(m: &Array2<f64>, epsilon: f64) -> Result<Self> {
        let n = m.ncols();
        Self::new(column_norms(m), Array1::ones(n), epsilon)
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }
}

/// Objective history of one fit.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTrace {
    /// Objective before the first update followed by one value per iteration.
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Seconds.
    pub wall_time: f64,
    /// `‖VᵀV − I‖_F` per iteration (graph-regularized fits only).
    pub orthogonality_drift: Vec<f64>,
}

impl ConvergenceTrace {
    pub fn final_objective(&self) -> Option<f64> {
        self.objective.last().copied()
    }
}

/// Exponent applied to the multiplicative ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum RuleForm {
    /// `x ← x · sqrt(num / den)`.
    #[default]
    SquareRoot,
    /// `x ← x · num / den`.
    Plain,
}

impl RuleForm {
    #[inline]
    fn apply(self, ratio: f64) -> f64 {
        match self {
            RuleForm::SquareRoot => ratio.sqrt(),
            RuleForm::Plain => ratio,
        }
    }
}

/// `M = X − U Vᵀ`.
pub fn residual_matrix(x: &DataMatrix, f: &FactorPair) -> Result<Array2<f64>> {
    f.check_against(x)?;
    Ok(x.values() - &f.reconstruction())
}

pub(crate) fn check_weights(x: &DataMatrix, w: &ResidualWeights) -> Result<()> {
    if w.len() != x.n_samples() {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {} samples",
            w.len(),
            x.n_samples()
        )));
    }
    Ok(())
}

/// Rows of `a` scaled by `q`, i.e. `diag(q) · a`.
pub(crate) fn scale_rows(a: &Array2<f64>, q: &Array1<f64>) -> Array2<f64> {
    a * &q.view().insert_axis(Axis(1))
}

/// `target ⊙ form(num / (den + δ))`, failing on any non-finite result.
pub(crate) fn multiplicative_step(
    target: &Array2<f64>,
    num: &Array2<f64>,
    den: &Array2<f64>,
    form: RuleForm,
    factor: &'static str,
) -> Result<Array2<f64>> {
    let mut out = target.clone();
    ndarray::Zip::from(&mut out)
        .and(num)
        .and(den)
        .for_each(|t, &nu, &de| *t *= form.apply(nu / (de + DENOM_GUARD)));
    if !all_finite(&out) {
        return Err(Error::NonFiniteUpdate { factor });
    }
    Ok(out)
}

/// `U_ik ← U_ik · sqrt((XQV)_ik / (UVᵀQV)_ik)`.
pub fn weighted_update_u(x: &DataMatrix, f: &FactorPair, w: &ResidualWeights) -> Result<Array2<f64>> {
    weighted_update_u_with(x, f, w, RuleForm::SquareRoot)
}

pub fn weighted_update_u_with(
    x: &DataMatrix,
    f: &FactorPair,
    w: &ResidualWeights,
    form: RuleForm,
) -> Result<Array2<f64>> {
    f.check_against(x)?;
    check_weights(x, w)?;
    let qv = scale_rows(&f.v, &w.q);
    let num = x.values().dot(&qv);
    let den = f.u.dot(&f.v.t().dot(&qv));
    multiplicative_step(&f.u, &num, &den, form, "U")
}

/// `V_ik ← V_ik · sqrt((QXᵀU)_ik / (QVUᵀU)_ik)`.
///
/// `Q` is `n × n` and `V` is `n × c`, so the denominator is evaluated as
/// `Q (V (UᵀU))`.
pub fn weighted_update_v(x: &DataMatrix, f: &FactorPair, w: &ResidualWeights) -> Result<Array2<f64>> {
    weighted_update_v_with(x, f, w, RuleForm::SquareRoot)
}

pub fn weighted_update_v_with(
    x: &DataMatrix,
    f: &FactorPair,
    w: &ResidualWeights,
    form: RuleForm,
) -> Result<Array2<f64>> {
    f.check_against(x)?;
    check_weights(x, w)?;
    let num = scale_rows(&x.values().t().dot(&f.u), &w.q);
    let den = scale_rows(&f.v.dot(&f.u.t().dot(&f.u)), &w.q);
    multiplicative_step(&f.v, &num, &den, form, "V")
}

/// `Tr(M Q Mᵀ) = Σ_i Q_ii max(‖m_i‖, ε)²` evaluated at the current factors.
pub fn trace_objective(x: &DataMatrix, f: &FactorPair, w: &ResidualWeights) -> Result<f64> {
    check_weights(x, w)?;
    let m = residual_matrix(x, f)?;
    let norms = column_norms(&m);
    Ok(compensated_sum(
        norms
            .iter()
            .zip(w.q.iter())
            .map(|(&r, &q)| q * r.max(w.epsilon).powi(2)),
    ))
}
