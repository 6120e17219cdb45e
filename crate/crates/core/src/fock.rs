//! Closed-form physics of phase-averaged Fock-state mixtures.
//!
//! Quadratures use the convention in which the vacuum density is
//! `exp(-x^2)/sqrt(pi)` (variance 1/2). Every density, Wigner function and
//! fit family in the crate is written in this one convention.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::histogram::DensityHistogram;
use crate::scalar::Scalar;

/// Largest photon number any routine accepts.
pub const MAX_PHOTON_NUMBER: usize = 4;

/// Truncation used throughout unless a caller asks for more.
pub const DEFAULT_N_MAX: usize = 2;

/// Allowed deviation of `sum(w)` from one.
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

const TABLE: usize = MAX_PHOTON_NUMBER + 1;

/// Photon-number distribution `w_n`, `n = 0..=n_max`, on the probability simplex.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
#[serde(try_from = "Vec<T>", into = "Vec<T>")]
pub struct PhotonWeights<T: Scalar = f64> {
    w: Vec<T>,
}

impl<T: Scalar> PhotonWeights<T> {
    pub fn new(w: Vec<T>) -> Result<Self> {
        if w.is_empty() || w.len() > TABLE {
            return Err(Error::domain(format!(
                "photon weights need 1..={} components, got {}",
                TABLE,
                w.len()
            )));
        }
        let mut sum = T::zero();
        for (n, &v) in w.iter().enumerate() {
            if !(v >= T::zero() && v <= T::one()) {
                return Err(Error::domain(format!("w_{n} = {v} is outside [0, 1]")));
            }
            sum = sum + v;
        }
        if (sum - T::one()).abs() > simplex_tolerance::<T>() {
            return Err(Error::domain(format!("photon weights sum to {sum}, not 1")));
        }
        Ok(Self { w })
    }

    pub fn from_array<const N: usize>(w: [T; N]) -> Result<Self> {
        Self::new(w.to_vec())
    }

    /// Pure Fock state `|n>` truncated at `n_max`.
    pub fn fock(n: usize, n_max: usize) -> Result<Self> {
        if n > n_max || n_max > MAX_PHOTON_NUMBER {
            return Err(Error::domain(format!("Fock state {n} with n_max {n_max}")));
        }
        let mut w = vec![T::zero(); n_max + 1];
        w[n] = T::one();
        Ok(Self { w })
    }

    pub fn vacuum() -> Self {
        Self {
            w: vec![T::one(), T::zero(), T::zero()],
        }
    }

    /// Builds weights the caller has already placed on the simplex.
    pub(crate) fn from_vec_unchecked(w: Vec<T>) -> Self {
        debug_assert!(!w.is_empty() && w.len() <= TABLE);
        Self { w }
    }

    pub fn as_slice(&self) -> &[T] {
        &self.w
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn n_max(&self) -> usize {
        self.w.len() - 1
    }

    /// `w_n`, zero beyond the truncation.
    pub fn get(&self, n: usize) -> T {
        self.w.get(n).copied().unwrap_or_else(T::zero)
    }

    /// Same distribution with `n_max` raised, padding with zeros.
    pub fn padded(&self, n_max: usize) -> Result<Self> {
        if n_max > MAX_PHOTON_NUMBER {
            return Err(Error::domain(format!("n_max {n_max} exceeds {MAX_PHOTON_NUMBER}")));
        }
        let mut w = self.w.clone();
        w.resize(w.len().max(n_max + 1), T::zero());
        Ok(Self { w })
    }

    pub fn mean_photon_number(&self) -> T {
        self.w
            .iter()
            .enumerate()
            .map(|(n, &v)| T::from_count(n) * v)
            .sum()
    }

    pub fn cast<U: Scalar>(&self) -> PhotonWeights<U> {
        PhotonWeights {
            w: self.w.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }
}

impl<T: Scalar> TryFrom<Vec<T>> for PhotonWeights<T> {
    type Error = Error;

    fn try_from(w: Vec<T>) -> Result<Self> {
        Self::new(w)
    }
}

impl<T: Scalar> From<PhotonWeights<T>> for Vec<T> {
    fn from(w: PhotonWeights<T>) -> Self {
        w.w
    }
}

fn inv_sqrt_pi<T: Scalar>() -> T {
    T::FRAC_2_SQRT_PI() * T::lit(0.5)
}

fn simplex_tolerance<T: Scalar>() -> T {
    T::lit(SIMPLEX_TOLERANCE).max(T::epsilon() * T::lit(16.0))
}

/// Physicists' Hermite polynomials `H_0..=H_n` at `x` by the three-term recurrence.
fn hermite_table<T: Scalar>(x: T, n: usize) -> [T; TABLE] {
    let mut h = [T::zero(); TABLE];
    h[0] = T::one();
    if n >= 1 {
        h[1] = x + x;
    }
    for k in 1..n {
        h[k + 1] = (x + x) * h[k] - T::from_count(2 * k) * h[k - 1];
    }
    h
}

/// `sqrt(pi) * 2^n * n!` for `n = 0..=MAX_PHOTON_NUMBER`.
fn hermite_norms<T: Scalar>() -> [T; TABLE] {
    let mut c = [T::zero(); TABLE];
    c[0] = T::PI().sqrt();
    for n in 1..TABLE {
        c[n] = c[n - 1] * T::from_count(2 * n);
    }
    c
}

/// Physicists' Hermite polynomial `H_n(x)`.
pub fn hermite<T: Scalar>(n: usize, x: T) -> Result<T> {
    if n > MAX_PHOTON_NUMBER {
        return Err(Error::domain(format!(
            "Hermite order {n} exceeds {MAX_PHOTON_NUMBER}"
        )));
    }
    Ok(hermite_table(x, n)[n])
}

/// Laguerre polynomial `L_n(x)`.
pub fn laguerre<T: Scalar>(n: usize, x: T) -> Result<T> {
    if n > MAX_PHOTON_NUMBER {
        return Err(Error::domain(format!(
            "Laguerre order {n} exceeds {MAX_PHOTON_NUMBER}"
        )));
    }
    Ok(laguerre_table(x, n)[n])
}

fn laguerre_table<T: Scalar>(x: T, n: usize) -> [T; TABLE] {
    let mut l = [T::zero(); TABLE];
    l[0] = T::one();
    if n >= 1 {
        l[1] = T::one() - x;
    }
    for k in 1..n {
        let kk = T::from_count(k);
        l[k + 1] = ((T::from_count(2 * k + 1) - x) * l[k] - kk * l[k - 1]) / (kk + T::one());
    }
    l
}

/// Quadrature density of the pure Fock state `|n>`.
pub fn component_pdf<T: Scalar>(n: usize, x: T) -> Result<T> {
    let h = hermite(n, x)?;
    Ok(h * h * (-x * x).exp() / hermite_norms::<T>()[n])
}

/// Fills `out[n]` with the component densities `n = 0..out.len()` at `x`.
pub(crate) fn component_pdfs_into<T: Scalar>(x: T, out: &mut [T]) {
    let n_max = out.len() - 1;
    let h = hermite_table(x, n_max);
    let norms = hermite_norms::<T>();
    let g = (-x * x).exp();
    for (n, o) in out.iter_mut().enumerate() {
        *o = h[n] * h[n] * g / norms[n];
    }
}

/// Phase-averaged quadrature density of the Fock mixture `w`.
pub fn quad_pdf<T: Scalar>(w: &PhotonWeights<T>, x: T) -> T {
    let h = hermite_table(x, w.n_max());
    let norms = hermite_norms::<T>();
    let mut acc = T::zero();
    for (n, &wn) in w.as_slice().iter().enumerate() {
        acc = acc + wn * h[n] * h[n] / norms[n];
    }
    acc * (-x * x).exp()
}

/// Vacuum / single-photon fit family `(1 - eta)|0><0| + eta|1><1|`.
pub fn fit_family_pdf<T: Scalar>(eta: T, x: T) -> Result<T> {
    check_unit_interval(eta, "eta")?;
    let x2 = x * x;
    Ok((T::one() - eta * (T::one() - x2 - x2)) * (-x2).exp() * inv_sqrt_pi::<T>())
}

fn check_unit_interval<T: Scalar>(v: T, name: &str) -> Result<()> {
    if v >= T::zero() && v <= T::one() {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} = {v} is outside [0, 1]")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct EtaFit<T: Scalar = f64> {
    pub eta: T,
    /// Sum of squared density residuals at the fitted `eta`.
    pub residual: T,
}

/// Least-squares `eta` of the two-component family against a density histogram.
///
/// The family is affine in `eta`, `a(x) + eta * b(x)`, so the minimiser is
/// `sum(b (p - a)) / sum(b^2)`, clamped to `[0, 1]`.
pub fn fit_eta<T: Scalar>(hist: &DensityHistogram<T>) -> Result<EtaFit<T>> {
    let densities = hist.densities();
    if densities.is_empty() {
        return Err(Error::Estimation("empty histogram".into()));
    }
    if densities.iter().all(|&p| p == T::zero()) {
        return Err(Error::Estimation(
            "histogram holds no mass inside its range".into(),
        ));
    }
    let centers = hist.config().bin_centers();
    let mut num = T::zero();
    let mut den = T::zero();
    for (&x, &p) in centers.iter().zip(densities) {
        let a = (-x * x).exp() * inv_sqrt_pi::<T>();
        let b = a * (x * x + x * x - T::one());
        num = num + b * (p - a);
        den = den + b * b;
    }
    let eta = (num / den).max(T::zero()).min(T::one());
    let residual = centers
        .iter()
        .zip(densities)
        .map(|(&x, &p)| {
            let r = fit_family_pdf(eta, x).expect("eta clamped to [0, 1]") - p;
            r * r
        })
        .sum();
    Ok(EtaFit { eta, residual })
}

/// Wigner function at the phase-space origin, `(1/pi) * sum (-1)^n w_n`.
pub fn wigner_origin<T: Scalar>(w: &PhotonWeights<T>) -> T {
    let mut acc = T::zero();
    for (n, &wn) in w.as_slice().iter().enumerate() {
        acc = if n % 2 == 0 { acc + wn } else { acc - wn };
    }
    acc * T::FRAC_1_PI()
}

/// Wigner function of the diagonal mixture at `(x, p)`.
pub fn wigner_value<T: Scalar>(w: &PhotonWeights<T>, x: T, p: T) -> T {
    let r2 = x * x + p * p;
    let l = laguerre_table(r2 + r2, w.n_max());
    let mut acc = T::zero();
    for (n, &wn) in w.as_slice().iter().enumerate() {
        let term = wn * l[n];
        acc = if n % 2 == 0 { acc + term } else { acc - term };
    }
    acc * (-r2).exp() * T::FRAC_1_PI()
}

/// Evenly spaced axis `start + i * step`, `i = 0..len`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct UniformAxis<T: Scalar = f64> {
    pub start: T,
    pub step: T,
    pub len: usize,
}

impl<T: Scalar> UniformAxis<T> {
    pub fn new(start: T, step: T, len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::domain("axis has no points"));
        }
        if !(step > T::zero()) || !start.is_finite() || !step.is_finite() {
            return Err(Error::domain(format!("axis step {step} must be positive")));
        }
        Ok(Self { start, step, len })
    }

    /// Axis over `[-half_range, half_range]` whose middle point is exactly zero.
    pub fn symmetric(half_range: T, step: T) -> Result<Self> {
        if !(half_range >= T::zero()) || !(step > T::zero()) {
            return Err(Error::domain("symmetric axis needs half_range >= 0, step > 0"));
        }
        let half = (half_range / step + T::lit(1e-9))
            .floor()
            .to_usize()
            .ok_or_else(|| Error::domain("axis too long"))?;
        Self::new(-(T::from_count(half) * step), step, 2 * half + 1)
    }

    pub fn value(&self, i: usize) -> T {
        self.start + T::from_count(i) * self.step
    }

    pub fn values(&self) -> Vec<T> {
        (0..self.len).map(|i| self.value(i)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WignerGrid<T: Scalar = f64> {
    pub x_axis: UniformAxis<T>,
    pub p_axis: UniformAxis<T>,
    /// Row-major, `values[i * p_axis.len + j] = W(x_i, p_j)`.
    pub values: Vec<T>,
}

impl<T: Scalar> WignerGrid<T> {
    pub fn get(&self, i: usize, j: usize) -> T {
        self.values[i * self.p_axis.len + j]
    }

    /// Trapezoidal integral over `p` for every `x` on the axis.
    pub fn x_marginal(&self) -> Vec<T> {
        let np = self.p_axis.len;
        let half = T::lit(0.5);
        (0..self.x_axis.len)
            .map(|i| {
                let row = &self.values[i * np..(i + 1) * np];
                let inner: T = row.iter().copied().sum();
                let ends = if np > 1 { (row[0] + row[np - 1]) * half } else { T::zero() };
                (inner - ends) * self.p_axis.step
            })
            .collect()
    }

    /// Trapezoidal integral over the whole grid.
    pub fn integral(&self) -> T {
        let m = self.x_marginal();
        let n = m.len();
        let inner: T = m.iter().copied().sum();
        let ends = if n > 1 { (m[0] + m[n - 1]) * T::lit(0.5) } else { T::zero() };
        (inner - ends) * self.x_axis.step
    }

    /// Grid point holding the smallest value, as `(x, p, W)`.
    pub fn minimum(&self) -> (T, T, T) {
        let mut best = (0, 0, T::infinity());
        for i in 0..self.x_axis.len {
            for j in 0..self.p_axis.len {
                let v = self.get(i, j);
                if v < best.2 {
                    best = (i, j, v);
                }
            }
        }
        (self.x_axis.value(best.0), self.p_axis.value(best.1), best.2)
    }
}

pub fn wigner_grid<T: Scalar>(
    w: &PhotonWeights<T>,
    x_axis: UniformAxis<T>,
    p_axis: UniformAxis<T>,
) -> Result<WignerGrid<T>> {
    let x_axis = UniformAxis::new(x_axis.start, x_axis.step, x_axis.len)?;
    let p_axis = UniformAxis::new(p_axis.start, p_axis.step, p_axis.len)?;
    let mut values = Vec::with_capacity(x_axis.len * p_axis.len);
    for i in 0..x_axis.len {
        let x = x_axis.value(i);
        for j in 0..p_axis.len {
            values.push(wigner_value(w, x, p_axis.value(j)));
        }
    }
    Ok(WignerGrid {
        x_axis,
        p_axis,
        values,
    })
}

/// `g2(0) = <n(n-1)> / <n>^2`; `None` when the mean photon number is zero.
pub fn g2_from_weights<T: Scalar>(w: &PhotonWeights<T>) -> Option<T> {
    let mean = w.mean_photon_number();
    if mean <= T::zero() {
        return None;
    }
    let pairs: T = w
        .as_slice()
        .iter()
        .enumerate()
        .map(|(n, &v)| T::from_count(n * n.saturating_sub(1)) * v)
        .sum();
    Some(pairs / (mean * mean))
}

/// Fidelity of two diagonal states, `(sum sqrt(w_n v_n))^2`.
pub fn fidelity<T: Scalar>(w: &PhotonWeights<T>, v: &PhotonWeights<T>) -> T {
    let len = w.len().max(v.len());
    let overlap: T = (0..len).map(|n| (w.get(n) * v.get(n)).sqrt()).sum();
    (overlap * overlap).min(T::one())
}

fn binomial(n: usize, k: usize) -> u64 {
    (0..k).fold(1u64, |acc, i| acc * (n - i) as u64 / (i as u64 + 1))
}

fn check_efficiency<T: Scalar>(eta: T) -> Result<()> {
    if eta > T::zero() && eta <= T::one() {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "detection efficiency {eta} is outside (0, 1]"
        )))
    }
}

/// Binomial loss matrix, `L[m][n] = C(n, m) eta^m (1 - eta)^(n - m)` for `m <= n`.
pub fn loss_matrix<T: Scalar>(eta: T, n_max: usize) -> Result<Vec<Vec<T>>> {
    check_efficiency(eta)?;
    if n_max > MAX_PHOTON_NUMBER {
        return Err(Error::domain(format!("n_max {n_max} exceeds {MAX_PHOTON_NUMBER}")));
    }
    let loss = T::one() - eta;
    Ok((0..=n_max)
        .map(|m| {
            (0..=n_max)
                .map(|n| {
                    if n < m {
                        T::zero()
                    } else {
                        T::lit(binomial(n, m) as f64) * eta.powi(m as i32) * loss.powi((n - m) as i32)
                    }
                })
                .collect()
        })
        .collect())
}

/// Photon-number distribution after a beam-splitter loss of transmissivity `eta_det`.
pub fn apply_loss<T: Scalar>(w: &PhotonWeights<T>, eta_det: T) -> Result<PhotonWeights<T>> {
    let l = loss_matrix(eta_det, w.n_max())?;
    let out = l
        .iter()
        .map(|row| row.iter().zip(w.as_slice()).map(|(&a, &b)| a * b).sum())
        .collect();
    Ok(PhotonWeights::from_vec_unchecked(out))
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossCorrection<T: Scalar = f64> {
    pub weights: PhotonWeights<T>,
    /// Set when the exact inverse had negative components that were clamped.
    pub clamped: bool,
}

/// Undoes [`apply_loss`] by back substitution on the upper-triangular loss matrix.
///
/// Sampling noise can push the exact inverse off the simplex; negative
/// components are then clamped to zero, the rest renormalised, and the
/// result is flagged.
pub fn invert_loss<T: Scalar>(w_measured: &PhotonWeights<T>, eta_det: T) -> Result<LossCorrection<T>> {
    let n_max = w_measured.n_max();
    let l = loss_matrix(eta_det, n_max)?;
    let y = w_measured.as_slice();
    let mut x = vec![T::zero(); n_max + 1];
    for m in (0..=n_max).rev() {
        let tail: T = ((m + 1)..=n_max).map(|n| l[m][n] * x[n]).sum();
        x[m] = (y[m] - tail) / l[m][m];
    }
    // Round-off below this magnitude is not a physical negativity.
    let floor = -T::epsilon() * T::lit(16.0);
    if x.iter().all(|&v| v >= floor) {
        for v in x.iter_mut() {
            *v = v.max(T::zero());
        }
        return Ok(LossCorrection {
            weights: PhotonWeights::from_vec_unchecked(x),
            clamped: false,
        });
    }
    for v in x.iter_mut() {
        *v = v.max(T::zero());
    }
    let sum: T = x.iter().copied().sum();
    if sum <= T::zero() {
        return Err(Error::Estimation(
            "loss inversion left no non-negative mass".into(),
        ));
    }
    for v in x.iter_mut() {
        *v = *v / sum;
    }
    Ok(LossCorrection {
        weights: PhotonWeights::from_vec_unchecked(x),
        clamped: true,
    })
}
