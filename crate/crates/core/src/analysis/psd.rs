use std::f64::consts::PI;

use rustfft::{num_complex::Complex, FftPlanner};

use super::lm::{levenberg_marquardt, MAX_ITER};
use super::AnalysisError;

/// Required peak-to-median ratio for a fittable resonance.
pub const MIN_PEAK_RATIO: f64 = 5.0;

/// One-sided power spectral density (rad²/Hz).
#[derive(Debug, Clone, PartialEq)]
pub struct Psd {
    pub freqs: Vec<f64>,
    pub values: Vec<f64>,
    pub segment_count: usize,
    pub window_name: String,
    /// Equivalent noise bandwidth of the window (Hz).
    pub resolution_bw: f64,
}

impl Psd {
    pub fn df(&self) -> f64 {
        if self.freqs.len() > 1 {
            self.freqs[1] - self.freqs[0]
        } else {
            0.0
        }
    }

    /// Σ PSD·df, which approximates the signal variance.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.df()
    }

    /// Segment-weighted average of spectra on the same grid.
    pub fn average(psds: &[Psd]) -> Option<Psd> {
        let first = psds.first()?;
        let total: usize = psds.iter().map(|p| p.segment_count).sum();
        let mut values = vec![0.0; first.values.len()];
        for p in psds {
            if p.freqs.len() != first.freqs.len() {
                return None;
            }
            let w = p.segment_count as f64 / total as f64;
            for (v, x) in values.iter_mut().zip(&p.values) {
                *v += w * x;
            }
        }
        Some(Psd { values, segment_count: total, ..first.clone() })
    }
}

fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

/// Welch estimate: Hann-windowed, mean-removed segments of `segment_len`
/// samples with fractional `overlap`, density-normalized and one-sided.
pub fn welch_psd(series: &[f64], fs: f64, segment_len: usize, overlap: f64) -> Result<Psd, AnalysisError> {
    if segment_len < 8 || series.len() < segment_len {
        return Err(AnalysisError::TooShort { needed: segment_len.max(8), got: series.len() });
    }
    let overlap = overlap.clamp(0.0, 0.95);
    let hop = (((1.0 - overlap) * segment_len as f64).round() as usize).max(1);
    let win = hann(segment_len);
    let win_pow: f64 = win.iter().map(|w| w * w).sum();
    let win_sum: f64 = win.iter().sum();
    let fft = FftPlanner::new().plan_fft_forward(segment_len);
    let n_bins = segment_len / 2 + 1;
    let mut acc = vec![0.0; n_bins];
    let mut buf = vec![Complex::new(0.0, 0.0); segment_len];
    let mut count = 0;
    let mut start = 0;
    while start + segment_len <= series.len() {
        let seg = &series[start..start + segment_len];
        let mean = seg.iter().sum::<f64>() / segment_len as f64;
        for ((b, x), w) in buf.iter_mut().zip(seg).zip(&win) {
            *b = Complex::new((x - mean) * w, 0.0);
        }
        fft.process(&mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b.norm_sqr();
        }
        count += 1;
        start += hop;
    }
    let scale = 1.0 / (fs * win_pow * count as f64);
    let values: Vec<f64> = acc
        .iter()
        .enumerate()
        .map(|(k, a)| {
            let edge = k == 0 || (segment_len.is_multiple_of(2) && k == n_bins - 1);
            a * scale * if edge { 1.0 } else { 2.0 }
        })
        .collect();
    let freqs = (0..n_bins).map(|k| k as f64 * fs / segment_len as f64).collect();
    Ok(Psd {
        freqs,
        values,
        segment_count: count,
        window_name: "hann".into(),
        resolution_bw: fs * win_pow / (win_sum * win_sum),
    })
}

/// Librational PSD shape C/((ω0² − ω²)² + γ²ω²) at frequency `f` (Hz).
pub fn lorentzian_model(f: f64, f0: f64, gamma_hz: f64, c: f64) -> f64 {
    let w = 2.0 * PI * f;
    let w0 = 2.0 * PI * f0;
    let g = 2.0 * PI * gamma_hz;
    c / ((w0 * w0 - w * w).powi(2) + g * g * w * w)
}

/// Result of a PSD fit. Rates are angular (rad/s).
#[derive(Debug, Clone, PartialEq)]
pub struct PsdFit {
    /// Frequency of the highest bin above DC (Hz), independent of the fit.
    pub peak_hz: f64,
    pub omega_phi_hat: f64,
    pub gamma_hat: f64,
    /// Torque-noise scale matching 2γkT/I for a thermal spectrum.
    pub amplitude_scale: f64,
    pub omega_std: f64,
    pub gamma_std: f64,
    /// RMS of the log residuals.
    pub residual_norm: f64,
    pub iterations: usize,
    pub band_hz: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsdInit {
    pub f0_hz: f64,
    pub gamma_hz: f64,
    pub peak: f64,
}

/// Peak location, FWHM and height, from the bins above DC.
pub fn psd_initial_guess(psd: &Psd) -> Result<PsdInit, AnalysisError> {
    let vals = &psd.values[1..];
    if vals.len() < 4 {
        return Err(AnalysisError::TooShort { needed: 5, got: psd.values.len() });
    }
    let (imax, &peak) = vals.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
    let mut sorted = vals.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let ratio = if median > 0.0 { peak / median } else if peak > 0.0 { f64::INFINITY } else { 0.0 };
    if ratio <= MIN_PEAK_RATIO {
        return Err(AnalysisError::NoPeak { ratio });
    }
    let i = imax + 1;
    let f = &psd.freqs;
    let v = &psd.values;
    let half = peak / 2.0;
    let cross = |mut j: usize, step: isize| -> f64 {
        while j > 0 && j < v.len() - 1 && v[j] > half {
            j = (j as isize + step) as usize;
        }
        let k = (j as isize - step) as usize;
        if v[k] == v[j] {
            return f[j];
        }
        f[j] + (half - v[j]) * (f[k] - f[j]) / (v[k] - v[j])
    };
    let width = (cross(i, 1) - cross(i, -1)).max(psd.df());
    Ok(PsdInit { f0_hz: f[i], gamma_hz: width, peak })
}

/// Fits the librational PSD shape in log space over `band_hz`
/// (default [f0/4, 4·f0] around the initial peak).
pub fn fit_psd_lorentzian(psd: &Psd, init: Option<PsdInit>, band_hz: Option<(f64, f64)>) -> Result<PsdFit, AnalysisError> {
    let guess = psd_initial_guess(psd)?;
    let init = init.unwrap_or(guess);
    let (lo, hi) = band_hz.unwrap_or((init.f0_hz / 4.0, init.f0_hz * 4.0));
    let pts: Vec<(f64, f64)> = psd
        .freqs
        .iter()
        .zip(&psd.values)
        .filter(|(f, v)| **f >= lo && **f <= hi && **f > 0.0 && **v > 0.0)
        .map(|(f, v)| (*f, v.ln()))
        .collect();
    if pts.len() < 4 {
        return Err(AnalysisError::TooShort { needed: 4, got: pts.len() });
    }
    let w0 = 2.0 * PI * init.f0_hz;
    let g0 = 2.0 * PI * init.gamma_hz;
    let c0 = init.peak * g0 * g0 * w0 * w0;
    let resid = |p: &[f64]| -> Vec<f64> {
        pts.iter().map(|(f, lv)| lorentzian_model(*f, p[0], p[1], p[2].exp()).ln() - lv).collect()
    };
    let res = levenberg_marquardt(resid, &[init.f0_hz, init.gamma_hz, c0.ln()]);
    let rms = (res.cost / pts.len() as f64).sqrt();
    if !res.converged {
        return Err(AnalysisError::NoConvergence { iterations: MAX_ITER, residual: rms });
    }
    let f0 = res.params[0].abs();
    if !(lo..=hi).contains(&f0) {
        return Err(AnalysisError::NoConvergence { iterations: res.iterations, residual: rms });
    }
    let std = |k: usize| res.covariance.as_ref().map_or(f64::NAN, |c| c[(k, k)].max(0.0).sqrt());
    Ok(PsdFit {
        peak_hz: guess.f0_hz,
        omega_phi_hat: 2.0 * PI * f0,
        gamma_hat: 2.0 * PI * res.params[1].abs(),
        amplitude_scale: res.params[2].exp() / 2.0,
        omega_std: 2.0 * PI * std(0),
        gamma_std: 2.0 * PI * std(1),
        residual_norm: rms,
        iterations: res.iterations,
        band_hz: (lo, hi),
    })
}
