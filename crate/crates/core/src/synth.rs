//! Synthetic homodyne data: simplex weights, quadrature samples, training
//! datasets, and detector time traces with temporal-mode extraction.

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{component_pdf, PhotonWeights, MAX_PHOTON_NUMBER};
use crate::histogram::{DensityHistogram, HistogramConfig};
use crate::scalar::Scalar;

/// Generator used for every seeded stream in the crate.
pub type StreamRng = ChaCha8Rng;

/// Independent generator for sub-task `stream` of a run seeded with `master_seed`.
///
/// ChaCha is counter based, so streams are fixed by `(master_seed, stream)`
/// alone and results do not depend on scheduling.
pub fn child_rng(master_seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    rng
}

/// A record of quadrature measurements.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct QuadratureBatch<T: Scalar = f64> {
    samples: Vec<T>,
}

impl<T: Scalar> QuadratureBatch<T> {
    pub fn new(samples: Vec<T>) -> Result<Self> {
        if let Some(bad) = samples.iter().position(|x| !x.is_finite()) {
            return Err(Error::domain(format!("sample {bad} is not finite")));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[T] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn into_inner(self) -> Vec<T> {
        self.samples
    }
}

/// Uniform point on the probability simplex (flat Dirichlet) from the gaps
/// between two sorted uniforms.
pub fn sample_weights<T: Scalar, R: Rng + ?Sized>(rng: &mut R) -> PhotonWeights<T> {
    let a: f64 = rng.random();
    let b: f64 = rng.random();
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    let w = [T::lit(lo), T::lit(hi - lo), T::lit(1.0 - hi)];
    PhotonWeights::from_vec_unchecked(w.to_vec())
}

/// `sup f_n(x) / g(x)` for the standard-normal envelope `g`, per photon number.
fn envelope_bounds() -> &'static [f64; MAX_PHOTON_NUMBER + 1] {
    static BOUNDS: OnceLock<[f64; MAX_PHOTON_NUMBER + 1]> = OnceLock::new();
    BOUNDS.get_or_init(|| {
        let mut out = [0.0; MAX_PHOTON_NUMBER + 1];
        for (n, bound) in out.iter_mut().enumerate().skip(1) {
            // Ratio is even in x and decays like exp(-x^2 / 2) beyond |x| ~ 4.
            let mut max = 0.0f64;
            for i in 0..=200_000 {
                let x = i as f64 * 1e-4;
                max = max.max(envelope_ratio(n, x));
            }
            *bound = max * 1.001;
        }
        out
    })
}

fn envelope_ratio(n: usize, x: f64) -> f64 {
    let g = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    component_pdf(n, x).expect("n within table") / g
}

/// Exact draw from the quadrature density of `|n>`.
///
/// Vacuum is Gaussian with variance 1/2; higher components use rejection
/// against a standard normal envelope.
fn sample_component<R: Rng + ?Sized>(n: usize, rng: &mut R) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    if n == 0 {
        return z * std::f64::consts::FRAC_1_SQRT_2;
    }
    let bound = envelope_bounds()[n];
    let mut x = z;
    loop {
        let u: f64 = rng.random();
        if u * bound <= envelope_ratio(n, x) {
            return x;
        }
        x = rng.sample(StandardNormal);
    }
}

/// `count` i.i.d. quadratures from the mixture `w`: pick `n` with probability
/// `w_n`, then draw from component `n`.
pub fn sample_quadratures<T: Scalar, R: Rng + ?Sized>(
    w: &PhotonWeights<T>,
    count: usize,
    rng: &mut R,
) -> Result<QuadratureBatch<T>> {
    if count == 0 {
        return Err(Error::domain("sample count must be at least 1"));
    }
    let weights: Vec<f64> = w.as_slice().iter().map(|v| v.as_f64()).collect();
    let mut cumulative = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for &v in &weights {
        acc += v;
        cumulative.push(acc);
    }
    let last = weights.len() - 1;
    let samples = (0..count)
        .map(|_| {
            let u: f64 = rng.random::<f64>() * acc;
            let n = cumulative
                .iter()
                .position(|&c| u < c)
                .unwrap_or(last);
            // Never pick a component with zero weight because of round-off at the top end.
            let n = if weights[n] > 0.0 {
                n
            } else {
                (0..=last).rev().find(|&k| weights[k] > 0.0).unwrap_or(0)
            };
            T::lit(sample_component(n, rng))
        })
        .collect();
    Ok(QuadratureBatch { samples })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Instance<T: Scalar = f64> {
    pub density: Vec<T>,
    pub target: PhotonWeights<T>,
}

/// Training or test set of `(density histogram, photon weights)` pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Dataset<T: Scalar = f64> {
    pub schema_version: u32,
    pub histogram_config: HistogramConfig<T>,
    pub samples_per_instance: usize,
    pub seed: u64,
    pub instances: Vec<Instance<T>>,
}

pub const DATASET_SCHEMA_VERSION: u32 = 1;

impl<T: Scalar> Dataset<T> {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != DATASET_SCHEMA_VERSION {
            return Err(Error::Parse(format!(
                "unsupported dataset schema_version {}",
                self.schema_version
            )));
        }
        self.histogram_config.validate()?;
        let n = self.histogram_config.num_bins;
        for (k, inst) in self.instances.iter().enumerate() {
            if inst.density.len() != n {
                return Err(Error::ConfigMismatch(format!(
                    "instance {k} has {} densities, config has {n} bins",
                    inst.density.len()
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ds: Self = serde_json::from_str(text)?;
        ds.validate()?;
        Ok(ds)
    }
}

/// One dataset instance, a pure function of `(master_seed, k)`.
pub fn make_instance<T: Scalar>(
    samples_per_instance: usize,
    config: HistogramConfig<T>,
    master_seed: u64,
    k: u64,
) -> Result<(Instance<T>, QuadratureBatch<T>)> {
    let mut rng = child_rng(master_seed, k);
    let target = sample_weights::<T, _>(&mut rng);
    let batch = sample_quadratures(&target, samples_per_instance, &mut rng)?;
    let hist = DensityHistogram::from_samples(batch.samples(), config)?;
    Ok((
        Instance {
            density: hist.into_densities(),
            target,
        },
        batch,
    ))
}

/// Synthetic dataset with simplex-uniform targets.
///
/// Instances are generated in parallel; each draws from its own child stream
/// so the output is independent of thread count.
pub fn make_dataset<T: Scalar>(
    num_instances: usize,
    samples_per_instance: usize,
    config: HistogramConfig<T>,
    master_seed: u64,
) -> Result<Dataset<T>> {
    if num_instances == 0 {
        return Err(Error::domain("dataset needs at least one instance"));
    }
    if samples_per_instance == 0 {
        return Err(Error::domain("instances need at least one sample"));
    }
    config.validate()?;
    let instances = (0..num_instances as u64)
        .into_par_iter()
        .map(|k| make_instance(samples_per_instance, config, master_seed, k).map(|(i, _)| i))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        schema_version: DATASET_SCHEMA_VERSION,
        histogram_config: config,
        samples_per_instance,
        seed: master_seed,
        instances,
    })
}

/// Exponential temporal mode centred on a trigger.
///
/// The single-constant form is `sqrt(pi*gamma) exp(-pi*gamma*|t - t_c|)`.
/// With `gamma_rise` set, the leading edge decays with `gamma_rise` and the
/// trailing edge with `gamma`. Sampled modes are always renormalised on the
/// grid they are evaluated on.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ModeFunction<T: Scalar = f64> {
    pub gamma: T,
    pub t_c: T,
    pub gamma_rise: Option<T>,
}

impl<T: Scalar> ModeFunction<T> {
    pub fn new(gamma: T, t_c: T) -> Result<Self> {
        if !(gamma > T::zero() && gamma.is_finite()) {
            return Err(Error::domain(format!("decay rate {gamma} must be positive")));
        }
        if !t_c.is_finite() {
            return Err(Error::domain("trigger time must be finite"));
        }
        Ok(Self {
            gamma,
            t_c,
            gamma_rise: None,
        })
    }

    pub fn with_rise(mut self, gamma_rise: T) -> Result<Self> {
        if !(gamma_rise > T::zero() && gamma_rise.is_finite()) {
            return Err(Error::domain(format!("rise rate {gamma_rise} must be positive")));
        }
        self.gamma_rise = Some(gamma_rise);
        Ok(self)
    }

    pub fn at_trigger(&self, t_c: T) -> Self {
        Self { t_c, ..*self }
    }

    fn rise(&self) -> T {
        self.gamma_rise.unwrap_or(self.gamma)
    }

    /// Unnormalised mode shape; equals the analytic normalised form when
    /// `gamma_rise` is unset.
    pub fn shape(&self, t: T) -> T {
        let pi = T::PI();
        let d = t - self.t_c;
        let rate = if d < T::zero() { self.rise() } else { self.gamma };
        (pi * self.gamma).sqrt() * (-pi * rate * d.abs()).exp()
    }

    /// Time the mode needs on each side of `t_c`, `5 / gamma` per edge.
    pub fn support(&self) -> (T, T) {
        let five = T::lit(5.0);
        (five / self.rise(), five / self.gamma)
    }

    fn fastest_rate(&self) -> T {
        self.gamma.max(self.rise())
    }

    /// Mode values on `t_start + i*dt`, scaled so `sum f^2 dt = 1`.
    pub fn sampled(&self, t_start: T, dt: T, len: usize) -> Vec<T> {
        let mut f: Vec<T> = (0..len)
            .map(|i| self.shape(t_start + T::from_count(i) * dt))
            .collect();
        let norm: T = f.iter().map(|&v| v * v).sum::<T>() * dt;
        let scale = T::one() / norm.sqrt();
        for v in f.iter_mut() {
            *v = *v * scale;
        }
        f
    }
}

/// Uniformly sampled detector output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct TimeTrace<T: Scalar = f64> {
    pub dt: T,
    pub t_start: T,
    pub values: Vec<T>,
}

impl<T: Scalar> TimeTrace<T> {
    pub fn new(dt: T, t_start: T, values: Vec<T>) -> Result<Self> {
        if !(dt > T::zero() && dt.is_finite()) {
            return Err(Error::domain(format!("sample spacing {dt} must be positive")));
        }
        if values.is_empty() {
            return Err(Error::domain("trace has no samples"));
        }
        Ok(Self { dt, t_start, values })
    }

    pub fn time(&self, i: usize) -> T {
        self.t_start + T::from_count(i) * self.dt
    }

    pub fn t_end(&self) -> T {
        self.time(self.values.len() - 1)
    }
}

/// Detector trace for a single quadrature value `x_value` with white noise.
///
/// The trace is centred on `mode.t_c`. Noise samples are scaled by
/// `1/sqrt(dt)` so that after extraction they contribute variance
/// `noise_sigma^2` regardless of the sampling rate.
pub fn simulate_trace<T: Scalar, R: Rng + ?Sized>(
    x_value: T,
    mode: &ModeFunction<T>,
    dt: T,
    duration: T,
    noise_sigma: T,
    rng: &mut R,
) -> Result<TimeTrace<T>> {
    let slowest = mode.gamma.min(mode.rise());
    if !(duration >= T::lit(10.0) / slowest) {
        return Err(Error::domain(format!(
            "trace duration {duration} shorter than 10/gamma"
        )));
    }
    if !(dt > T::zero() && dt <= T::one() / (T::lit(50.0) * mode.fastest_rate())) {
        return Err(Error::domain(format!(
            "sample spacing {dt} coarser than 1/(50 gamma)"
        )));
    }
    if !(noise_sigma >= T::zero()) {
        return Err(Error::domain("noise level must be non-negative"));
    }
    let mut len = (duration / dt)
        .round()
        .to_usize()
        .ok_or_else(|| Error::domain("trace too long"))?
        + 1;
    if len % 2 == 0 {
        len += 1;
    }
    let half = T::from_count(len / 2);
    let t_start = mode.t_c - half * dt;
    let f = mode.sampled(t_start, dt, len);
    let noise_scale = noise_sigma / dt.sqrt();
    let values = f
        .into_iter()
        .map(|fi| {
            let xi: f64 = if noise_sigma > T::zero() {
                rng.sample(StandardNormal)
            } else {
                0.0
            };
            x_value * fi + noise_scale * T::lit(xi)
        })
        .collect();
    TimeTrace::new(dt, t_start, values)
}

/// Matched-filter quadrature `sum f(t_i) x(t_i) dt` with the mode normalised on the trace grid.
pub fn extract_quadrature<T: Scalar>(trace: &TimeTrace<T>, mode: &ModeFunction<T>) -> Result<T> {
    let slack = trace.dt * T::lit(0.5);
    let (before, after) = mode.support();
    if !(mode.t_c >= trace.t_start && mode.t_c <= trace.t_end()) {
        return Err(Error::domain(format!(
            "trigger {} outside trace [{}, {}]",
            mode.t_c,
            trace.t_start,
            trace.t_end()
        )));
    }
    if mode.t_c - before < trace.t_start - slack || mode.t_c + after > trace.t_end() + slack {
        return Err(Error::domain(format!(
            "mode support around trigger {} exceeds the trace window",
            mode.t_c
        )));
    }
    let f = mode.sampled(trace.t_start, trace.dt, trace.values.len());
    Ok(f.iter()
        .zip(&trace.values)
        .map(|(&a, &b)| a * b)
        .sum::<T>()
        * trace.dt)
}
