//! Entropy-of-residues loss, its reweighting matrix `Q`, and the per-sample
//! influence ratios of the three robust-loss families.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::factor::{residual_matrix, DataMatrix, FactorPair, ResidualWeights};
use crate::numeric::{column_norms, compensated_sum, frobenius_sq};

/// `1e-10 · max(1, ‖X‖_F)`.
pub fn default_epsilon(x: &DataMatrix) -> f64 {
    1e-10 * frobenius_sq(x.values()).sqrt().max(1.0)
}

/// Shannon entropy (natural log) of the normalized residue distribution
/// `p_i = r_i / Σ r`. Zero-mass entries contribute nothing.
pub fn residue_entropy(norms: &Array1<f64>) -> f64 {
    let total = compensated_sum(norms.iter().copied());
    if total <= 0.0 {
        return 0.0;
    }
    compensated_sum(norms.iter().filter(|&&r| r > 0.0).map(|&r| {
        let p = r / total;
        -p * p.ln()
    }))
}

/// `−Σ_i r_i log(r_i / Σ r)` for already guarded norms.
pub fn entropy_loss(norms: &Array1<f64>) -> Result<f64> {
    let total = compensated_sum(norms.iter().copied());
    let mut terms = Vec::with_capacity(norms.len());
    for (i, &r) in norms.iter().enumerate() {
        let t = -r * (r / total).ln();
        if !t.is_finite() {
            return Err(Error::NonFiniteLoss { sample: i });
        }
        terms.push(t);
    }
    let value = compensated_sum(terms);
    // a single-sample matrix gives −r·log(1) which may round to −0
    Ok(value.max(0.0))
}

/// The EMMF loss at factors `f`, with every residual norm floored at `epsilon`.
pub fn entropy_objective(x: &DataMatrix, f: &FactorPair, epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidInput(format!("epsilon must be positive, got {epsilon}")));
    }
    let m = residual_matrix(x, f)?;
    entropy_loss(&guarded_norms(&m, epsilon))
}

fn guarded_norms(m: &Array2<f64>, epsilon: f64) -> Array1<f64> {
    column_norms(m).mapv(|r| r.max(epsilon))
}

/// `Q_ii = −log(r_i / Σ r) / r_i` with `r_i = max(‖m_i‖, ε)`.
pub fn compute_q(m: &Array2<f64>, epsilon: f64) -> Result<ResidualWeights> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidInput(format!("epsilon must be positive, got {epsilon}")));
    }
    let norms = guarded_norms(m, epsilon);
    let total = compensated_sum(norms.iter().copied());
    // r_i ≤ Σ r keeps the log nonpositive; clamp the rounding case r_i/Σ r > 1
    let q = norms.mapv(|r| (-(r / total).ln() / r).max(0.0));
    ResidualWeights::new(norms, q, epsilon)
}

/// `Q_ii = 1 / (2 max(‖m_i‖, ε))`, the reweighting for the ℓ2,1 loss.
pub fn l21_weights(m: &Array2<f64>, epsilon: f64) -> Result<ResidualWeights> {
    let norms = guarded_norms(m, epsilon);
    let q = norms.mapv(|r| 0.5 / r);
    ResidualWeights::new(norms, q, epsilon)
}

/// Share of one sample in each of the three objectives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InfluenceReport {
    pub phi_nmf: f64,
    pub phi_l21: f64,
    pub phi_emmf: f64,
    pub sample_index: usize,
}

/// Per-sample shares of the squared-Frobenius, ℓ2,1 and entropy objectives.
#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceShares {
    pub nmf: Array1<f64>,
    pub l21: Array1<f64>,
    pub emmf: Array1<f64>,
}

/// All per-sample influence ratios for residual `m`.
pub fn influence_shares(m: &Array2<f64>, epsilon: f64) -> Result<InfluenceShares> {
    let raw = column_norms(m);
    if raw.iter().all(|&r| r == 0.0) {
        return Err(Error::UndefinedInfluence("residual matrix is identically zero".into()));
    }
    let norms = raw.mapv(|r| r.max(epsilon));
    let sq_total = compensated_sum(norms.iter().map(|r| r * r));
    let total = compensated_sum(norms.iter().copied());
    let ent_terms = norms.mapv(|r| -r * (r / total).ln());
    let ent_total = compensated_sum(ent_terms.iter().copied());
    if !(ent_total > 0.0) {
        return Err(Error::UndefinedInfluence(
            "entropy objective is zero (a single sample carries all residual)".into(),
        ));
    }
    Ok(InfluenceShares {
        nmf: norms.mapv(|r| r * r / sq_total),
        l21: norms.mapv(|r| r / total),
        emmf: ent_terms / ent_total,
    })
}

/// Influence of sample `i` at factors `f`.
pub fn influence_ratios(x: &DataMatrix, f: &FactorPair, i: usize) -> Result<InfluenceReport> {
    if i >= x.n_samples() {
        return Err(Error::InvalidInput(format!(
            "sample index {i} out of range for {} samples",
            x.n_samples()
        )));
    }
    let m = residual_matrix(x, f)?;
    let shares = influence_shares(&m, default_epsilon(x))?;
    Ok(InfluenceReport {
        phi_nmf: shares.nmf[i],
        phi_l21: shares.l21[i],
        phi_emmf: shares.emmf[i],
        sample_index: i,
    })
}

/// Adds each `σ` in turn to `X[row, sample]` and reports the influence of
/// that sample, holding the factors fixed.
pub fn influence_curve(
    x: &DataMatrix,
    f: &FactorPair,
    row: usize,
    sample: usize,
    sigmas: &[f64],
) -> Result<Vec<(f64, InfluenceReport)>> {
    if row >= x.n_features() {
        return Err(Error::InvalidInput(format!(
            "feature index {row} out of range for {} features",
            x.n_features()
        )));
    }
    sigmas
        .iter()
        .map(|&sigma| {
            if !(sigma >= 0.0) || !sigma.is_finite() {
                return Err(Error::InvalidInput(format!("noise level {sigma} must be finite and nonnegative")));
            }
            let mut values = x.values().clone();
            values[[row, sample]] += sigma;
            let noisy = DataMatrix::from_values(values)?;
            Ok((sigma, influence_ratios(&noisy, f, sample)?))
        })
        .collect()
}

/// φ_EMMF of one sample holding residue share `p` while the other `n − 1`
/// samples split the rest evenly. `None` where the denominator vanishes.
pub fn phi_emmf_single_outlier(p: f64, n: usize) -> Option<f64> {
    let num = p * p.ln();
    let den = num + (1.0 - p) * ((1.0 - p).ln() - ((n - 1) as f64).ln());
    if den.abs() < 1e-14 || !num.is_finite() || !den.is_finite() {
        None
    } else {
        Some(num / den)
    }
}

/// Maximum of [`phi_emmf_single_outlier`] over the grid `{k · p_step} ∩ (0, 1)`.
pub fn phi_emmf_upper_bound(n: usize, p_step: f64) -> Result<(f64, f64)> {
    if n < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 samples, got {n}")));
    }
    if !(p_step > 0.0 && p_step < 1.0) {
        return Err(Error::InvalidInput(format!("step must lie in (0, 1), got {p_step}")));
    }
    let mut best: Option<(f64, f64)> = None;
    let mut k = 1usize;
    loop {
        let p = k as f64 * p_step;
        // guard against p landing a rounding error below 1
        if p >= 1.0 - 1e-12 {
            break;
        }
        if let Some(phi) = phi_emmf_single_outlier(p, n) {
            if best.is_none_or(|(b, _)| phi > b) {
                best = Some((phi, p));
            }
        }
        k += 1;
    }
    best.ok_or_else(|| Error::InvalidInput("grid contains no admissible point".into()))
}

/// `(n, bound, argmax_p)` for every `n` in `n_range`.
pub fn bound_curve(
    n_range: std::ops::RangeInclusive<usize>,
    p_step: f64,
) -> Result<Vec<(usize, f64, f64)>> {
    n_range
        .map(|n| phi_emmf_upper_bound(n, p_step).map(|(b, p)| (n, b, p)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factor::trace_objective;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_instance(seed: u64, d: usize, n: usize, c: usize) -> (DataMatrix, FactorPair) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((d, n), |_| rng.random::<f64>());
        let u = Array2::from_shape_fn((d, c), |_| rng.random::<f64>());
        let v = Array2::from_shape_fn((n, c), |_| rng.random::<f64>());
        (DataMatrix::from_values(x).unwrap(), FactorPair::new(u, v).unwrap())
    }

    /// Residual matrix whose column norms are exactly `norms` (one nonzero row).
    fn residual_with_norms(norms: &[f64]) -> Array2<f64> {
        let mut m = Array2::zeros((2, norms.len()));
        for (i, &r) in norms.iter().enumerate() {
            m[[0, i]] = r;
        }
        m
    }

    #[test]
    fn uniform_norms_give_n_r_log_n() {
        let (n, r) = (7usize, 2.5);
        let loss = entropy_loss(&Array1::from_elem(n, r)).unwrap();
        let expected = n as f64 * r * (n as f64).ln();
        assert!((loss - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn degenerate_distribution_is_near_zero() {
        let (n, r, eps) = (5usize, 3.0, 1e-10);
        let mut norms = vec![r];
        norms.extend(std::iter::repeat_n(0.0, n - 1));
        let m = residual_with_norms(&norms);
        let w = compute_q(&m, eps).unwrap();
        let loss = entropy_loss(&w.norms).unwrap();
        let total = r + (n - 1) as f64 * eps;
        let expected = -((n - 1) as f64) * eps * (eps / total).ln() - r * (r / total).ln();
        assert!((loss - expected).abs() < 1e-15);
        assert!(loss < 1e-7);
    }

    #[test]
    fn objective_is_entropy_times_l21_norm() {
        let (x, f) = random_instance(4, 4, 6, 2);
        let eps = default_epsilon(&x);
        let m = residual_matrix(&x, &f).unwrap();
        // independent oracle: probability vector, Shannon entropy, then product
        let norms: Vec<f64> = (0..6)
            .map(|i| (0..4).map(|k| m[[k, i]] * m[[k, i]]).sum::<f64>().sqrt().max(eps))
            .collect();
        let l21: f64 = norms.iter().sum();
        let h: f64 = norms.iter().map(|r| r / l21).map(|p| -p * p.ln()).sum();
        let obj = entropy_objective(&x, &f, eps).unwrap();
        assert!((obj - h * l21).abs() < 1e-10);
    }

    #[test]
    fn q_uniform_norms() {
        let r = 1.7;
        let m = residual_with_norms(&[r; 5]);
        let w = compute_q(&m, 1e-10).unwrap();
        for &q in w.q.iter() {
            assert!((q - 5f64.ln() / r).abs() < 1e-12);
        }
    }

    #[test]
    fn q_single_sample_is_zero() {
        let w = compute_q(&residual_with_norms(&[4.0]), 1e-10).unwrap();
        assert_eq!(w.q[0], 0.0);
    }

    #[test]
    fn q_for_norms_one_and_three() {
        let w = compute_q(&residual_with_norms(&[1.0, 3.0]), 1e-10).unwrap();
        assert_eq!(w.total, 4.0);
        assert!((w.q[0] - 1.386_294_361_119_890_6).abs() < 1e-12);
        assert!((w.q[1] - 0.095_894_024_150_593_7).abs() < 1e-12);
    }

    #[test]
    fn q_is_tangent_to_entropy_objective() {
        for seed in 0..20 {
            let (x, f) = random_instance(seed, 5, 9, 3);
            let eps = default_epsilon(&x);
            let m = residual_matrix(&x, &f).unwrap();
            let w = compute_q(&m, eps).unwrap();
            let quad = trace_objective(&x, &f, &w).unwrap();
            let ent = entropy_objective(&x, &f, eps).unwrap();
            assert!((quad - ent).abs() < 1e-10 * ent.max(1.0), "{quad} vs {ent}");
        }
    }

    #[test]
    fn l21_weights_are_half_inverse_norms() {
        let w = l21_weights(&residual_with_norms(&[2.0, 0.0]), 1e-3).unwrap();
        assert_eq!(w.q[0], 0.25);
        assert_eq!(w.q[1], 500.0);
    }

    #[test]
    fn influence_uniform_is_one_over_n() {
        let m = residual_with_norms(&[2.0; 4]);
        let s = influence_shares(&m, 1e-10).unwrap();
        for v in s.nmf.iter().chain(s.l21.iter()).chain(s.emmf.iter()) {
            assert!((v - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn influence_norms_ten_one_one() {
        let s = influence_shares(&residual_with_norms(&[10.0, 1.0, 1.0]), 1e-10).unwrap();
        assert!((s.nmf[0] - 100.0 / 102.0).abs() < 1e-12);
        assert!((s.l21[0] - 10.0 / 12.0).abs() < 1e-12);
    }

    #[test]
    fn influence_of_zero_residual_is_undefined() {
        let x = DataMatrix::from_values(array![[1.0, 2.0]]).unwrap();
        let f = FactorPair::new(array![[1.0]], array![[1.0], [2.0]]).unwrap();
        assert!(matches!(influence_ratios(&x, &f, 0), Err(Error::UndefinedInfluence(_))));
    }

    #[test]
    fn influence_ratio_matches_share_vector() {
        let (x, f) = random_instance(8, 3, 5, 1);
        let rep = influence_ratios(&x, &f, 2).unwrap();
        let s = influence_shares(&residual_matrix(&x, &f).unwrap(), default_epsilon(&x)).unwrap();
        assert_eq!(rep.phi_nmf, s.nmf[2]);
        assert_eq!(rep.phi_l21, s.l21[2]);
        assert_eq!(rep.phi_emmf, s.emmf[2]);
        assert!(influence_ratios(&x, &f, 5).is_err());
    }

    #[test]
    fn bound_for_two_samples_sits_at_grid_edge() {
        let (bound, p) = phi_emmf_upper_bound(2, 0.01).unwrap();
        // oracle: evaluate all 99 grid points directly
        let mut best = (f64::MIN, 0.0);
        for k in 1..100 {
            let p = k as f64 / 100.0;
            let v = p * p.ln() / (p * p.ln() + (1.0 - p) * (1.0 - p).ln());
            if v > best.0 {
                best = (v, p);
            }
        }
        assert!((bound - best.0).abs() < 1e-12);
        assert!((p - 0.01).abs() < 1e-12);
        assert!((best.1 - 0.01).abs() < 1e-12);
    }

    #[test]
    fn uniform_share_gives_one_over_n() {
        for n in [2usize, 3, 10, 57] {
            let phi = phi_emmf_single_outlier(1.0 / n as f64, n).unwrap();
            assert!((phi - 1.0 / n as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn bound_decreases_with_n() {
        let curve = bound_curve(3..=100, 0.01).unwrap();
        for w in curve.windows(2) {
            assert!(w[1].1 <= w[0].1, "n={} -> {}", w[0].0, w[1].0);
        }
        assert!(curve.iter().all(|&(_, b, _)| b > 0.0 && b <= 1.0));
    }

    #[test]
    fn bound_rejects_bad_arguments() {
        assert!(phi_emmf_upper_bound(1, 0.01).is_err());
        assert!(phi_emmf_upper_bound(5, 0.0).is_err());
        assert!(phi_emmf_upper_bound(5, 1.0).is_err());
    }

    #[test]
    fn entropy_objective_rejects_nonpositive_epsilon() {
        let (x, f) = random_instance(1, 2, 3, 1);
        assert!(entropy_objective(&x, &f, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn entropy_is_scale_invariant(
            norms in proptest::collection::vec(0.01f64..10.0, 2..30),
            rho in prop::sample::select(vec![0.1, 2.0, 100.0]),
        ) {
            let a = Array1::from(norms);
            let b = &a * rho;
            prop_assert!((residue_entropy(&a) - residue_entropy(&b)).abs() < 1e-10);
        }

        #[test]
        fn objective_is_positively_homogeneous(
            seed in 0u64..1000,
            rho in prop::sample::select(vec![0.1, 2.0, 100.0]),
        ) {
            let (x, f) = random_instance(seed, 4, 6, 2);
            let eps = 1e-12;
            let m = residual_matrix(&x, &f).unwrap();
            let base = entropy_loss(&guarded_norms(&m, eps)).unwrap();
            let scaled = entropy_loss(&guarded_norms(&(&m * rho), eps * rho)).unwrap();
            prop_assert!((scaled - rho * base).abs() < 1e-10 * (rho * base).max(1.0));
        }

        #[test]
        fn loss_is_monotone_in_each_norm(
            norms in proptest::collection::vec(0.01f64..10.0, 2..20),
            idx in 0usize..20,
            bump in 1e-6f64..1.0,
        ) {
            let idx = idx % norms.len();
            let a = Array1::from(norms);
            let mut b = a.clone();
            b[idx] += bump;
            prop_assert!(entropy_loss(&b).unwrap() >= entropy_loss(&a).unwrap() - 1e-12);
        }

        #[test]
        fn shares_sum_to_one(seed in 0u64..1000) {
            let (x, f) = random_instance(seed, 3, 8, 2);
            let s = influence_shares(&residual_matrix(&x, &f).unwrap(), 1e-12).unwrap();
            for v in [&s.nmf, &s.l21, &s.emmf] {
                prop_assert!((v.sum() - 1.0).abs() < 1e-10);
                prop_assert!(v.iter().all(|&p| p >= 0.0));
            }
        }

        #[test]
        fn q_is_nonnegative(norms in proptest::collection::vec(0.0f64..5.0, 1..25)) {
            let m = residual_with_norms(&norms);
            let w = compute_q(&m, 1e-10).unwrap();
            prop_assert!(w.q.iter().all(|&q| q >= 0.0 && q.is_finite()));
            prop_assert!(w.norms.iter().all(|&r| r >= 1e-10));
        }
    }
}
