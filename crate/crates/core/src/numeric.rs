//! Compensated reductions.
//!
//! Norms and traces go through Neumaier summation so objective values agree
//! across platforms well below the tolerances the solvers compare against.

use ndarray::{Array1, Array2, ArrayView1};

/// Neumaier-compensated sum.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

pub fn dot(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    compensated_sum(a.iter().zip(b.iter()).map(|(x, y)| x * y))
}

/// Euclidean norm of every column.
pub fn column_norms(m: &Array2<f64>) -> Array1<f64> {
    m.columns()
        .into_iter()
        .map(|col| compensated_sum(col.iter().map(|x| x * x)).sqrt())
        .collect()
}

/// Squared Frobenius norm.
pub fn frobenius_sq(m: &Array2<f64>) -> f64 {
    compensated_sum(m.iter().map(|x| x * x))
}

/// Tr(AᵀB) for equally shaped matrices.
pub fn trace_of_product(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    debug_assert_eq!(a.dim(), b.dim());
    compensated_sum(a.iter().zip(b.iter()).map(|(x, y)| x * y))
}

pub fn all_finite(m: &Array2<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}
