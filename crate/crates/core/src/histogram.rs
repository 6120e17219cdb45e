//! Fixed-grid density histograms of quadrature samples.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::synth::QuadratureBatch;

pub const DEFAULT_X_MIN: f64 = -3.2;
pub const DEFAULT_X_MAX: f64 = 3.2;
pub const DEFAULT_NUM_BINS: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct HistogramConfig<T: Scalar = f64> {
    pub x_min: T,
    pub x_max: T,
    pub num_bins: usize,
}

impl<T: Scalar> Default for HistogramConfig<T> {
    fn default() -> Self {
        Self {
            x_min: T::lit(DEFAULT_X_MIN),
            x_max: T::lit(DEFAULT_X_MAX),
            num_bins: DEFAULT_NUM_BINS,
        }
    }
}

impl<T: Scalar> HistogramConfig<T> {
    pub fn new(x_min: T, x_max: T, num_bins: usize) -> Result<Self> {
        let config = Self {
            x_min,
            x_max,
            num_bins,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x_min.is_finite() && self.x_max.is_finite() && self.x_min < self.x_max) {
            return Err(Error::domain(format!(
                "histogram range [{}, {}] is empty",
                self.x_min, self.x_max
            )));
        }
        if self.num_bins < 2 {
            return Err(Error::domain(format!(
                "histogram needs at least 2 bins, got {}",
                self.num_bins
            )));
        }
        if !(self.bin_width() > T::zero()) {
            return Err(Error::domain("bin width underflows"));
        }
        Ok(())
    }

    pub fn bin_width(&self) -> T {
        (self.x_max - self.x_min) / T::from_count(self.num_bins)
    }

    /// Left edge of bin `i`; `edge(num_bins)` is the closing right edge.
    pub fn edge(&self, i: usize) -> T {
        if i == self.num_bins {
            self.x_max
        } else {
            self.x_min + T::from_count(i) * self.bin_width()
        }
    }

    /// Midpoints of every bin.
    pub fn bin_centers(&self) -> Vec<T> {
        let dx = self.bin_width();
        let half = T::lit(0.5);
        (0..self.num_bins)
            .map(|i| self.x_min + (T::from_count(i) + half) * dx)
            .collect()
    }

    /// Bin holding `x`: intervals are `[edge_i, edge_{i+1})` except the last,
    /// which is closed. `None` outside `[x_min, x_max]`.
    pub fn bin_index(&self, x: T) -> Option<usize> {
        if !(x >= self.x_min && x <= self.x_max) {
            return None;
        }
        let last = self.num_bins - 1;
        let guess = ((x - self.x_min) / self.bin_width())
            .floor()
            .to_usize()
            .unwrap_or(last)
            .min(last);
        // The division can land one bin off near an edge; settle against the edges themselves.
        let mut i = guess;
        while i > 0 && x < self.edge(i) {
            i -= 1;
        }
        while i < last && x >= self.edge(i + 1) {
            i += 1;
        }
        Some(i)
    }
}

/// Free-function form of [`HistogramConfig::bin_centers`].
pub fn bin_centers<T: Scalar>(config: &HistogramConfig<T>) -> Vec<T> {
    config.bin_centers()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct DensityHistogram<T: Scalar = f64> {
    config: HistogramConfig<T>,
    /// Raw bin counts. Empty for histograms built from densities directly.
    counts: Vec<u64>,
    densities: Vec<T>,
    total_count: u64,
    dropped_count: u64,
}

impl<T: Scalar> DensityHistogram<T> {
    /// Bins samples; out-of-range samples are dropped and counted but still
    /// contribute to the normalising total.
    pub fn from_samples(samples: &[T], config: HistogramConfig<T>) -> Result<Self> {
        config.validate()?;
        if samples.is_empty() {
            return Err(Error::domain("cannot histogram an empty batch"));
        }
        let mut counts = vec![0u64; config.num_bins];
        let mut dropped = 0u64;
        for &x in samples {
            match config.bin_index(x) {
                Some(i) => counts[i] += 1,
                None => dropped += 1,
            }
        }
        let total = samples.len() as u64;
        let scale = T::one() / (T::from_count(samples.len()) * config.bin_width());
        let densities = counts.iter().map(|&c| T::lit(c as f64) * scale).collect();
        Ok(Self {
            config,
            counts,
            densities,
            total_count: total,
            dropped_count: dropped,
        })
    }

    /// Wraps precomputed densities, e.g. an analytic density sampled at bin centres.
    pub fn from_densities(config: HistogramConfig<T>, densities: Vec<T>) -> Result<Self> {
        config.validate()?;
        if densities.len() != config.num_bins {
            return Err(Error::ConfigMismatch(format!(
                "{} densities for {} bins",
                densities.len(),
                config.num_bins
            )));
        }
        if densities.iter().any(|p| !(p.is_finite() && *p >= T::zero())) {
            return Err(Error::domain("densities must be finite and non-negative"));
        }
        Ok(Self {
            config,
            counts: Vec::new(),
            densities,
            total_count: 0,
            dropped_count: 0,
        })
    }

    pub fn config(&self) -> &HistogramConfig<T> {
        &self.config
    }

    pub fn densities(&self) -> &[T] {
        &self.densities
    }

    pub fn into_densities(self) -> Vec<T> {
        self.densities
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total_count(&self) -> u64 {
        self.total_count
    }

    pub fn dropped_count(&self) -> u64 {
        self.dropped_count
    }

    /// `sum(p_i) * dx`, the fraction of samples that landed in range.
    pub fn mass(&self) -> T {
        self.densities.iter().copied().sum::<T>() * self.config.bin_width()
    }

    /// CSV with `#`-comment header carrying the configuration and counts.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# schema_version=1")?;
        writeln!(out, "# x_min={}", self.config.x_min)?;
        writeln!(out, "# x_max={}", self.config.x_max)?;
        writeln!(out, "# num_bins={}", self.config.num_bins)?;
        writeln!(out, "# total_count={}", self.total_count)?;
        writeln!(out, "# dropped_count={}", self.dropped_count)?;
        writeln!(out, "bin_center,density")?;
        for (x, p) in self.config.bin_centers().iter().zip(&self.densities) {
            writeln!(out, "{x},{p}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut x_min = None;
        let mut x_max = None;
        let mut num_bins = None;
        let mut total = 0u64;
        let mut dropped = 0u64;
        let mut densities = Vec::new();
        let mut seen_header = false;
        for line in input.lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(meta) = line.strip_prefix('#') {
                let Some((key, value)) = meta.trim().split_once('=') else {
                    continue;
                };
                let value = value.trim();
                match key.trim() {
                    "x_min" => x_min = Some(parse_scalar::<T>(value)?),
                    "x_max" => x_max = Some(parse_scalar::<T>(value)?),
                    "num_bins" => num_bins = Some(parse_int(value)? as usize),
                    "total_count" => total = parse_int(value)?,
                    "dropped_count" => dropped = parse_int(value)?,
                    _ => {}
                }
                continue;
            }
            if !seen_header {
                if line != "bin_center,density" {
                    return Err(Error::Parse(format!("unexpected histogram header `{line}`")));
                }
                seen_header = true;
                continue;
            }
            let (_, p) = line
                .split_once(',')
                .ok_or_else(|| Error::Parse(format!("malformed histogram row `{line}`")))?;
            densities.push(parse_scalar::<T>(p)?);
        }
        let missing = || Error::Parse("histogram header lacks its configuration".into());
        let config = HistogramConfig::new(
            x_min.ok_or_else(missing)?,
            x_max.ok_or_else(missing)?,
            num_bins.ok_or_else(missing)?,
        )?;
        let mut hist = Self::from_densities(config, densities)?;
        hist.total_count = total;
        hist.dropped_count = dropped;
        Ok(hist)
    }
}

/// Histogram of a quadrature batch under `config`.
pub fn build_histogram<T: Scalar>(
    batch: &QuadratureBatch<T>,
    config: HistogramConfig<T>,
) -> Result<DensityHistogram<T>> {
    DensityHistogram::from_samples(batch.samples(), config)
}

pub(crate) fn parse_scalar<T: Scalar>(s: &str) -> Result<T> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("`{s}` is not a number")))?;
    Ok(T::lit(v))
}

fn parse_int(s: &str) -> Result<u64> {
    s.trim()
        .parse()
        .map_err(|_| Error::Parse(format!("`{s}` is not an integer")))
}
