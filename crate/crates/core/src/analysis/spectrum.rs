use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use serde::Serialize;

use crate::error::{PicnError, Result};
use crate::grid::Field;
use crate::problems::ProblemDef;
use crate::training::{EpochRecord, PicnState, TrainObserver};

/// Power spectrum of a field.
///
/// Frequencies are in cycles per record length (`N` samples). Power is
/// `|X|^2 / N^2`, so it sums to the mean square of the input. Single-row
/// fields keep signed frequencies in ascending order; 2D fields fold the
/// spectrum onto the nonnegative quadrant with `freq_y` as the slow index.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSpectrum {
    pub freq_x: Vec<f64>,
    /// Present for 2D fields.
    pub freq_y: Option<Vec<f64>>,
    pub power: Vec<f64>,
    pub total_power: f64,
    /// Mean square of the input, computed directly.
    pub mean_square: f64,
}

impl ErrorSpectrum {
    pub fn is_2d(&self) -> bool {
        self.freq_y.is_some()
    }

    /// `|sum(power) - mean_square| / mean_square` (absolute when the
    /// input is zero).
    pub fn parseval_error(&self) -> f64 {
        let d = (self.total_power - self.mean_square).abs();
        if self.mean_square > 0.0 {
            d / self.mean_square
        } else {
            d
        }
    }

    /// Magnitude of the frequency of bin `k`.
    pub fn radius(&self, k: usize) -> f64 {
        match &self.freq_y {
            Some(fy) => self.freq_x[k].hypot(fy[k]),
            None => self.freq_x[k].abs(),
        }
    }

    /// Total power in bins with `lo <= |f| < hi`.
    pub fn band_power(&self, lo: f64, hi: f64) -> f64 {
        (0..self.power.len())
            .filter(|&k| {
                let r = self.radius(k);
                r >= lo && r < hi
            })
            .map(|k| self.power[k])
            .sum()
    }
}

fn signed(k: usize, n: usize) -> i64 {
    if k <= n / 2 {
        k as i64
    } else {
        k as i64 - n as i64
    }
}

pub fn error_spectrum(error: &Field) -> ErrorSpectrum {
    let (rows, cols) = error.dim();
    let n = (rows * cols) as f64;
    let mean_square = error.iter().map(|v| v * v).sum::<f64>() / n;
    let mut planner = FftPlanner::<f64>::new();
    let mut data: Vec<Complex<f64>> = error.iter().map(|&v| Complex::new(v, 0.0)).collect();
    let row_fft = planner.plan_fft_forward(cols);
    for row in data.chunks_mut(cols) {
        row_fft.process(row);
    }
    if rows > 1 {
        let col_fft = planner.plan_fft_forward(rows);
        let mut col = vec![Complex::new(0.0, 0.0); rows];
        for j in 0..cols {
            for i in 0..rows {
                col[i] = data[i * cols + j];
            }
            col_fft.process(&mut col);
            for i in 0..rows {
                data[i * cols + j] = col[i];
            }
        }
    }
    let scale = 1.0 / (n * n);
    if rows == 1 {
        let mut bins: Vec<(i64, f64)> = data
            .iter()
            .enumerate()
            .map(|(k, c)| (signed(k, cols), c.norm_sqr() * scale))
            .collect();
        bins.sort_by_key(|b| b.0);
        let power: Vec<f64> = bins.iter().map(|b| b.1).collect();
        return ErrorSpectrum {
            freq_x: bins.iter().map(|b| b.0 as f64).collect(),
            freq_y: None,
            total_power: power.iter().sum(),
            power,
            mean_square,
        };
    }
    let (hy, hx) = (rows / 2 + 1, cols / 2 + 1);
    let mut folded = vec![0.0; hy * hx];
    for i in 0..rows {
        let fy = signed(i, rows).unsigned_abs() as usize;
        for j in 0..cols {
            let fx = signed(j, cols).unsigned_abs() as usize;
            folded[fy * hx + fx] += data[i * cols + j].norm_sqr() * scale;
        }
    }
    let mut freq_x = Vec::with_capacity(folded.len());
    let mut freq_y = Vec::with_capacity(folded.len());
    for fy in 0..hy {
        for fx in 0..hx {
            freq_x.push(fx as f64);
            freq_y.push(fy as f64);
        }
    }
    ErrorSpectrum {
        freq_x,
        freq_y: Some(freq_y),
        total_power: folded.iter().sum(),
        power: folded,
        mean_square,
    }
}

/// Error power in the band `[lo, hi)` normalized by the reference
/// field's power in the same band (absolute when the reference is empty).
pub fn band_error(error: &ErrorSpectrum, reference: &ErrorSpectrum, lo: f64, hi: f64) -> f64 {
    let e = error.band_power(lo, hi);
    let r = reference.band_power(lo, hi);
    if r > 0.0 {
        e / r
    } else {
        e
    }
}

/// Smallest frequency radius below which `fraction` of the spectrum's
/// power lies.
pub fn power_cutoff(spectrum: &ErrorSpectrum, fraction: f64) -> f64 {
    let mut bins: Vec<(f64, f64)> = (0..spectrum.power.len())
        .map(|k| (spectrum.radius(k), spectrum.power[k]))
        .collect();
    bins.sort_by(|a, b| a.0.total_cmp(&b.0));
    let target = fraction * spectrum.total_power;
    let mut acc = 0.0;
    for (r, p) in &bins {
        acc += p;
        if acc >= target {
            return *r;
        }
    }
    bins.last().map_or(0.0, |b| b.0)
}

/// Normalized error of one frequency band at one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BandRecord {
    pub epoch: usize,
    pub band: usize,
    pub lo: f64,
    pub hi: f64,
    pub normalized_error: f64,
}

/// Records band errors of one channel against the exact solution at
/// every logged epoch.
#[derive(Debug, Clone)]
pub struct SpectrumTracker {
    pub channel: usize,
    /// Band edges; band `b` is `[edges[b], edges[b + 1])`, the last one closed.
    pub edges: Vec<f64>,
    exact: ErrorSpectrum,
    exact_field: Field,
    mask: Field,
    pub records: Vec<BandRecord>,
    /// Largest Parseval mismatch over every spectrum computed so far.
    pub max_parseval_error: f64,
}

impl SpectrumTracker {
    /// `bands` equal-width bands on `[0, cutoff]`. Without an explicit
    /// cutoff, it is the radius holding 99.9% of the exact field's power.
    pub fn new(problem: &ProblemDef, channel: usize, bands: usize, cutoff: Option<f64>) -> Result<Self> {
        if problem.exact.is_none() {
            return Err(PicnError::InvalidArgument(format!(
                "problem `{}` has no exact solution to compare spectra against",
                problem.name
            )));
        }
        if bands == 0 {
            return Err(PicnError::InvalidArgument("need at least one frequency band".into()));
        }
        let mut mask = Field::zeros(problem.grid.shape());
        for (i, j) in problem.evaluation_nodes() {
            mask[[i, j]] = 1.0;
        }
        let exact_field = super::exact_field(problem, channel) * &mask;
        let exact = error_spectrum(&exact_field);
        let k = cutoff.unwrap_or_else(|| power_cutoff(&exact, 0.999));
        if !(k > 0.0) {
            return Err(PicnError::InvalidArgument(format!("spectrum cutoff must be positive, got {k}")));
        }
        let edges = (0..=bands).map(|b| k * b as f64 / bands as f64).collect();
        Ok(Self {
            channel,
            edges,
            max_parseval_error: exact.parseval_error(),
            exact,
            exact_field,
            mask,
            records: Vec::new(),
        })
    }

    pub fn bands(&self) -> usize {
        self.edges.len() - 1
    }

    /// Spectrum of the masked error of `field`.
    pub fn spectrum_of(&mut self, field: &Field) -> ErrorSpectrum {
        let err = field * &self.mask - &self.exact_field;
        let s = error_spectrum(&err);
        self.max_parseval_error = self.max_parseval_error.max(s.parseval_error());
        s
    }

    pub fn record(&mut self, epoch: usize, field: &Field) -> ErrorSpectrum {
        let s = self.spectrum_of(field);
        let n = self.bands();
        for b in 0..n {
            let lo = self.edges[b];
            // Close the last band so the cutoff frequency itself is counted.
            let hi = if b + 1 == n { self.edges[b + 1] * (1.0 + 1e-12) } else { self.edges[b + 1] };
            self.records.push(BandRecord {
                epoch,
                band: b,
                lo,
                hi: self.edges[b + 1],
                normalized_error: band_error(&s, &self.exact, lo, hi),
            });
        }
        s
    }

    /// Normalized error of band `band` at the first record of `epoch`.
    pub fn band_at(&self, epoch: usize, band: usize) -> Option<f64> {
        self.records
            .iter()
            .find(|r| r.epoch == epoch && r.band == band)
            .map(|r| r.normalized_error)
    }
}

impl TrainObserver for SpectrumTracker {
    fn on_record(&mut self, record: &EpochRecord, _state: &PicnState, fields: &[Field]) -> Result<()> {
        self.record(record.epoch, &fields[self.channel]);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn constant_field_is_all_dc() {
        let s = error_spectrum(&Field::from_elem((1, 16), 0.3));
        for (f, p) in s.freq_x.iter().zip(&s.power) {
            if *f == 0.0 {
                assert!((p - 0.09).abs() < 1e-15);
            } else {
                assert!(p.abs() < 1e-30);
            }
        }
        let s2 = error_spectrum(&Field::from_elem((6, 8), -2.0));
        assert!((s2.power[0] - 4.0).abs() < 1e-12);
        assert!(s2.power[1..].iter().all(|p| p.abs() < 1e-24));
    }

    #[test]
    fn single_tone_splits_between_conjugate_bins() {
        let n = 64;
        let f = Field::from_shape_fn((1, n), |(_, j)| (2.0 * PI * 3.0 * j as f64 / n as f64).sin());
        let s = error_spectrum(&f);
        for (fr, p) in s.freq_x.iter().zip(&s.power) {
            if fr.abs() == 3.0 {
                assert!((p - 0.5 * s.total_power).abs() < 1e-12);
            } else {
                assert!(*p < 1e-24);
            }
        }
        assert!((s.total_power - 0.5).abs() < 1e-12);
    }

    #[test]
    fn folded_2d_tone() {
        let (r, c) = (10, 12);
        let f = Field::from_shape_fn((r, c), |(i, j)| {
            (2.0 * PI * (2.0 * j as f64 / c as f64 + 1.0 * i as f64 / r as f64)).cos()
        });
        let s = error_spectrum(&f);
        let fy = s.freq_y.as_ref().unwrap();
        for k in 0..s.power.len() {
            if s.freq_x[k] == 2.0 && fy[k] == 1.0 {
                assert!((s.power[k] - 0.5).abs() < 1e-12);
            } else {
                assert!(s.power[k] < 1e-24);
            }
        }
    }

    #[test]
    fn band_error_ratio() {
        let n = 32;
        let tone = |a: f64, k: f64| Field::from_shape_fn((1, n), move |(_, j)| a * (2.0 * PI * k * j as f64 / n as f64).cos());
        let exact = error_spectrum(&(tone(1.0, 2.0) + tone(1.0, 9.0)));
        let err = error_spectrum(&tone(0.1, 9.0));
        assert!((band_error(&err, &exact, 5.0, 16.0) - 0.01).abs() < 1e-12);
        assert!(band_error(&err, &exact, 0.0, 5.0) < 1e-20);
    }
}
