//! Maximum-likelihood photon-number weights from raw quadratures.
//!
//! For phase-averaged data the likelihood of a diagonal Fock mixture is a
//! finite mixture with known component densities, so the weights are fitted
//! with the standard expectation-maximisation fixed point. An exhaustive grid
//! search serves as an independent oracle.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{component_pdfs_into, quad_pdf, PhotonWeights, DEFAULT_N_MAX};
use crate::scalar::Scalar;
use crate::synth::QuadratureBatch;

pub const MIN_EM_SAMPLES: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct MleConfig<T: Scalar = f64> {
    pub max_iterations: usize,
    /// Stop once the per-sample log-likelihood gain drops below this.
    pub tolerance: T,
    pub n_max: usize,
}

impl<T: Scalar> Default for MleConfig<T> {
    fn default() -> Self {
        Self {
            max_iterations: 2000,
            tolerance: T::lit(1e-10),
            n_max: DEFAULT_N_MAX,
        }
    }
}

impl<T: Scalar> MleConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::domain("max_iterations must be at least 1"));
        }
        if !(self.tolerance > T::zero()) {
            return Err(Error::domain("tolerance must be positive"));
        }
        if !(2..=3).contains(&self.n_max) {
            return Err(Error::domain(format!("n_max must be 2 or 3, got {}", self.n_max)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct MleResult<T: Scalar = f64> {
    pub weights: PhotonWeights<T>,
    /// Log-likelihood of the starting point followed by one entry per iteration.
    pub loglik_history: Vec<T>,
    pub iterations: usize,
    pub converged: bool,
}

impl<T: Scalar> MleResult<T> {
    pub fn final_loglik(&self) -> T {
        *self.loglik_history.last().expect("history holds the starting point")
    }
}

/// `sum_k ln p(X_k | w)`; negative infinity when any sample sits on a zero of the density.
pub fn loglik<T: Scalar>(w: &PhotonWeights<T>, batch: &QuadratureBatch<T>) -> T {
    let mut acc = T::zero();
    for &x in batch.samples() {
        let p = quad_pdf(w, x);
        if !(p > T::zero()) {
            return T::neg_infinity();
        }
        acc = acc + p.ln();
    }
    acc
}

/// Component densities `f_n(X_k)`, row-major `K x (n_max + 1)`.
fn component_matrix<T: Scalar>(samples: &[T], n_max: usize) -> Vec<T> {
    let width = n_max + 1;
    let mut f = vec![T::zero(); samples.len() * width];
    for (row, &x) in f.chunks_mut(width).zip(samples) {
        component_pdfs_into(x, row);
    }
    f
}

fn mixture_loglik<T: Scalar>(f: &[T], w: &[T]) -> T {
    let width = w.len();
    let mut acc = T::zero();
    for row in f.chunks(width) {
        let p: T = row.iter().zip(w).map(|(&a, &b)| a * b).sum();
        acc = acc + p.ln();
    }
    acc
}

/// Expectation-maximisation for the mixture weights, from the uniform start.
///
/// Each step `w_n <- mean_k(w_n f_n(X_k) / p(X_k))` stays on the simplex and
/// never lowers the likelihood.
pub fn mle_em<T: Scalar>(batch: &QuadratureBatch<T>, config: &MleConfig<T>) -> Result<MleResult<T>> {
    config.validate()?;
    let uniform = T::one() / T::from_count(config.n_max + 1);
    let start = PhotonWeights::from_vec_unchecked(vec![uniform; config.n_max + 1]);
    mle_em_from(batch, config, &start)
}

/// [`mle_em`] from a caller-supplied starting point, padded or checked against `config.n_max`.
///
/// Components that start at zero stay at zero.
pub fn mle_em_from<T: Scalar>(
    batch: &QuadratureBatch<T>,
    config: &MleConfig<T>,
    start: &PhotonWeights<T>,
) -> Result<MleResult<T>> {
    config.validate()?;
    if start.n_max() > config.n_max {
        return Err(Error::domain(format!(
            "starting point has n_max {}, config allows {}",
            start.n_max(),
            config.n_max
        )));
    }
    if batch.len() < MIN_EM_SAMPLES {
        return Err(Error::domain(format!(
            "EM needs at least {MIN_EM_SAMPLES} samples, got {}",
            batch.len()
        )));
    }
    let width = config.n_max + 1;
    let f = component_matrix(batch.samples(), config.n_max);
    if f.chunks(width).any(|row| !row.iter().any(|&v| v > T::zero())) {
        return Err(Error::Estimation(
            "a sample lies where every component density underflows".into(),
        ));
    }
    let k = T::from_count(batch.len());
    let mut w = start.padded(config.n_max)?.as_slice().to_vec();
    let mut history = vec![mixture_loglik(&f, &w)];
    let mut next = vec![T::zero(); width];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_iterations {
        next.iter_mut().for_each(|v| *v = T::zero());
        let mut ll = T::zero();
        // Responsibilities under the current weights; the log-likelihood of
        // the current weights falls out of the same pass.
        for row in f.chunks(width) {
            let p: T = row.iter().zip(&w).map(|(&a, &b)| a * b).sum();
            ll = ll + p.ln();
            let inv = T::one() / p;
            for ((acc, &fn_), &wn) in next.iter_mut().zip(row).zip(&w) {
                *acc = *acc + wn * fn_ * inv;
            }
        }
        for v in next.iter_mut() {
            *v = *v / k;
        }
        std::mem::swap(&mut w, &mut next);
        iterations += 1;
        let new_ll = mixture_loglik(&f, &w);
        let gain = (new_ll - ll) / k;
        history.push(new_ll);
        if gain < config.tolerance {
            converged = true;
            break;
        }
    }

    Ok(MleResult {
        weights: PhotonWeights::from_vec_unchecked(w),
        loglik_history: history,
        iterations,
        converged,
    })
}

/// Log-likelihood with the logarithm taken once per run of products.
///
/// The grid search evaluates it for every point of a fine simplex grid, so
/// it trades a handful of multiplies for each `ln`.
fn batched_loglik(f0: &[f64], f1: &[f64], f2: &[f64], w: [f64; 3]) -> f64 {
    const FLUSH: f64 = 1e-150;
    let mut acc = 0.0;
    let mut prod = 1.0;
    for ((&a, &b), &c) in f0.iter().zip(f1).zip(f2) {
        let p = w[0] * a + w[1] * b + w[2] * c;
        if p <= 0.0 {
            return f64::NEG_INFINITY;
        }
        prod *= p;
        if prod < FLUSH {
            acc += prod.ln();
            prod = 1.0;
        }
    }
    acc + prod.ln()
}

/// Exhaustive search over the simplex grid `(a s, b s, 1 - (a + b) s)`.
///
/// Ties go to the lexicographically smallest `(w0, w1)`. Truncated at two photons.
pub fn brute_force_mle<T: Scalar>(batch: &QuadratureBatch<T>, grid_step: T) -> Result<PhotonWeights<T>> {
    let step = grid_step.as_f64();
    if !(step > 0.0 && step <= 0.1) {
        return Err(Error::domain(format!("grid step {step} is outside (0, 0.1]")));
    }
    if batch.is_empty() {
        return Err(Error::domain("cannot search on an empty batch"));
    }
    let samples: Vec<f64> = batch.samples().iter().map(|x| x.as_f64()).collect();
    let f = component_matrix(&samples, 2);
    let column = |n: usize| f.iter().skip(n).step_by(3).copied().collect::<Vec<f64>>();
    let (f0, f1, f2) = (column(0), column(1), column(2));
    let m = (1.0 / step + 1e-9).floor() as usize;
    let point = |a: usize, b: usize| {
        let w0 = a as f64 * step;
        let w1 = b as f64 * step;
        [w0, w1, (1.0 - w0 - w1).max(0.0)]
    };

    // Best over b for each a; rows reduce in order of a with strict improvement,
    // which keeps the lexicographic tie-break regardless of scheduling.
    let rows: Vec<(f64, usize, usize)> = (0..=m)
        .into_par_iter()
        .map(|a| {
            let mut best = (f64::NEG_INFINITY, a, 0);
            for b in 0..=(m - a) {
                let ll = batched_loglik(&f0, &f1, &f2, point(a, b));
                if ll > best.0 {
                    best = (ll, a, b);
                }
            }
            best
        })
        .collect();
    let mut best = rows[0];
    for &row in &rows[1..] {
        if row.0 > best.0 {
            best = row;
        }
    }
    let w = point(best.1, best.2);
    Ok(PhotonWeights::from_vec_unchecked(w.iter().map(|&v| T::lit(v)).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{child_rng, sample_quadratures, sample_weights};

    /// Weights are renormalised first so rounded published values can be used directly.
    fn batch_from(w: [f64; 3], count: usize, seed: u64) -> QuadratureBatch {
        let total: f64 = w.iter().sum();
        let w = PhotonWeights::from_array(w.map(|x| x / total)).unwrap();
        sample_quadratures(&w, count, &mut child_rng(seed, 0)).unwrap()
    }

    #[test]
    fn loglik_examples() {
        let origin = QuadratureBatch::new(vec![0.0]).unwrap();
        let v: f64 = loglik(&PhotonWeights::vacuum(), &origin);
        assert!((v - -0.572_364_942_924_700_1).abs() < 1e-12);
        assert_eq!(
            loglik(&PhotonWeights::fock(1, 2).unwrap(), &origin),
            f64::NEG_INFINITY
        );
        let w = PhotonWeights::from_array([0.3, 0.5, 0.2]).unwrap();
        let a = batch_from([0.2, 0.2, 0.6], 300, 1);
        let b = batch_from([0.6, 0.2, 0.2], 200, 2);
        let joined = QuadratureBatch::new([a.samples(), b.samples()].concat()).unwrap();
        assert!((loglik(&w, &joined) - (loglik(&w, &a) + loglik(&w, &b))).abs() < 1e-9);
    }

    #[test]
    fn config_validation() {
        let batch = batch_from([0.5, 0.5, 0.0], 100, 3);
        for bad in [
            MleConfig { max_iterations: 0, ..MleConfig::default() },
            MleConfig { tolerance: 0.0, ..MleConfig::default() },
            MleConfig { n_max: 4, ..MleConfig::default() },
            MleConfig { n_max: 1, ..MleConfig::default() },
            MleConfig { n_max: 5, ..MleConfig::default() },
            MleConfig { n_max: 0, ..MleConfig::default() },
        ] {
            assert!(mle_em(&batch, &bad).is_err());
        }
        let tiny = batch_from([0.5, 0.5, 0.0], 9, 3);
        assert!(mle_em(&tiny, &MleConfig::default()).is_err());
    }

    #[test]
    fn em_is_consistent_at_large_sample() {
        let batch = batch_from([0.5, 0.5, 0.0], 100_000, 4);
        let res = mle_em(&batch, &MleConfig::default()).unwrap();
        for (a, b) in res.weights.as_slice().iter().zip([0.5, 0.5, 0.0]) {
            assert!((a - b).abs() < 0.01, "{:?}", res.weights);
        }
    }

    #[test]
    fn em_monotone_and_on_simplex() {
        for seed in 0..20 {
            let truth: PhotonWeights = sample_weights(&mut child_rng(seed, 1));
            let batch = sample_quadratures(&truth, 2000, &mut child_rng(seed, 2)).unwrap();
            let res = mle_em(&batch, &MleConfig::default()).unwrap();
            for pair in res.loglik_history.windows(2) {
                assert!(pair[1] >= pair[0] - 1e-9 * batch.len() as f64);
            }
            let s: f64 = res.weights.as_slice().iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert_eq!(res.loglik_history.len(), res.iterations + 1);
        }
    }

    #[test]
    fn em_fig6_weights_and_negligible_three_photon() {
        let batch = batch_from([0.363, 0.606, 0.027], 8000, 5);
        let res = mle_em(&batch, &MleConfig::default()).unwrap();
        for (a, b) in res.weights.as_slice().iter().zip([0.363, 0.606, 0.027]) {
            assert!((a - b).abs() < 0.03, "{:?}", res.weights);
        }
        let cfg = MleConfig { n_max: 3, ..MleConfig::default() };
        let big = batch_from([0.363, 0.606, 0.027], 100_000, 6);
        let res = mle_em(&big, &cfg).unwrap();
        assert_eq!(res.weights.len(), 4);
        assert!(res.weights.get(3) < 1e-4, "{:?}", res.weights);
    }

    #[test]
    fn brute_force_examples() {
        let batch = batch_from([1.0, 0.0, 0.0], 10_000, 7);
        let w = brute_force_mle(&batch, 0.001).unwrap();
        assert!((w.get(0) - 1.0).abs() < 0.01, "{w:?}");

        let origin = QuadratureBatch::new(vec![0.0; 50]).unwrap();
        let w = brute_force_mle(&origin, 0.01).unwrap();
        assert_eq!(w.get(1), 0.0);
        assert_eq!(w.get(0), 1.0);

        assert!(brute_force_mle(&batch, 0.0).is_err());
        assert!(brute_force_mle(&batch, 0.2).is_err());
    }

    #[test]
    fn batched_loglik_matches_plain_sum() {
        let batch = batch_from([0.2, 0.5, 0.3], 3000, 8);
        let samples = batch.samples();
        let f = component_matrix(samples, 2);
        let col = |n: usize| f.iter().skip(n).step_by(3).copied().collect::<Vec<_>>();
        let w = PhotonWeights::from_array([0.25, 0.45, 0.30]).unwrap();
        let fast = batched_loglik(&col(0), &col(1), &col(2), [0.25, 0.45, 0.30]);
        let slow = loglik(&w, &batch);
        assert!((fast - slow).abs() < 1e-9 * slow.abs());
    }

    #[test]
    fn em_fixed_point_at_grid_optimum() {
        let step = 0.01;
        let batch = batch_from([0.3, 0.6, 0.1], 2000, 9);
        let grid = brute_force_mle(&batch, step).unwrap();
        let from_grid = mle_em_from(&batch, &MleConfig::default(), &grid).unwrap();
        for n in 0..3 {
            assert!((grid.get(n) - from_grid.weights.get(n)).abs() < step, "{grid:?} vs {:?}", from_grid.weights);
        }
        let em = mle_em(&batch, &MleConfig::default()).unwrap();
        for n in 0..3 {
            assert!((grid.get(n) - em.weights.get(n)).abs() < step + 0.002);
        }
    }

    #[test]
    fn em_error_shrinks_with_sample_size() {
        let truth = [0.25, 0.55, 0.2];
        let mut medians = Vec::new();
        for &k in &[1_000usize, 10_000, 100_000] {
            let mut errs: Vec<f64> = (0..5u64)
                .map(|seed| {
                    let res = mle_em(&batch_from(truth, k, 1000 + seed), &MleConfig::default()).unwrap();
                    (0..3).map(|n| (res.weights.get(n) - truth[n]).abs()).fold(0.0, f64::max)
                })
                .collect();
            errs.sort_by(f64::total_cmp);
            medians.push(errs[2]);
        }
        assert!(medians[0] > medians[1] && medians[1] > medians[2], "{medians:?}");
    }
}
