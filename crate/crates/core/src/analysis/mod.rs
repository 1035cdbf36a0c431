//! Post-processing of angle time series: spectra, fits, temperatures and
//! amplitude statistics.

pub mod lm;
mod psd;
mod ringdown;

pub use psd::{fit_psd_lorentzian, lorentzian_model, psd_initial_guess, welch_psd, Psd, PsdFit, PsdInit, MIN_PEAK_RATIO};
pub use ringdown::{fit_ringdown, ModeFit, RingdownFit, RingdownInit};

use crate::model::{ValidatedParams, BOLTZMANN};

/// Allowed relative difference between first- and second-half variances.
pub const STATIONARITY_TOL: f64 = 0.2;
pub const MIN_HISTOGRAM_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalysisError {
    #[error("series too short: need {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("no resolvable peak (peak/median = {ratio:.2})")]
    NoPeak { ratio: f64 },
    #[error("fit did not converge after {iterations} iterations (rms residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("modes {separation:.3} rad/s apart, below the resolution {resolution:.3} rad/s")]
    DegenerateModes { separation: f64, resolution: f64 },
    #[error("effective damping {gamma_eff:e} is not positive")]
    NonPositiveDamping { gamma_eff: f64 },
    #[error("series is not stationary: half variances differ by {drift:.1}%", drift = 100.0 * drift)]
    NonStationary { drift: f64 },
    #[error("histogram needs at least {MIN_HISTOGRAM_SAMPLES} samples, got {got}")]
    TooFewSamples { got: usize },
    #[error("{0}")]
    InvalidInput(String),
}

/// T_eff = T·γ/γ_eff.
pub fn effective_temperature(temperature: f64, gamma: f64, gamma_eff: f64) -> Result<f64, AnalysisError> {
    if gamma_eff <= 0.0 || !gamma_eff.is_finite() {
        return Err(AnalysisError::NonPositiveDamping { gamma_eff });
    }
    Ok(temperature * gamma / gamma_eff)
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (m, x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n)
}

/// Temperature from ⟨φ²⟩ via I·ω_φ²·⟨δφ²⟩ = k_B·T, using the bare ω_φ.
pub fn equipartition_temperature(series: &[f64], params: &ValidatedParams) -> Result<f64, AnalysisError> {
    equipartition_temperature_at(series, params.mech().inertia, params.mech().omega_phi)
}

/// As [`equipartition_temperature`] with an explicit stiffness frequency.
pub fn equipartition_temperature_at(series: &[f64], inertia: f64, omega: f64) -> Result<f64, AnalysisError> {
    if series.len() < 4 {
        return Err(AnalysisError::TooShort { needed: 4, got: series.len() });
    }
    if series.iter().all(|v| *v == series[0]) {
        return Ok(0.0);
    }
    let (_, var) = mean_var(series);
    let half = series.len() / 2;
    let (_, v1) = mean_var(&series[..half]);
    let (_, v2) = mean_var(&series[half..]);
    let drift = (v1 - v2).abs() / (0.5 * (v1 + v2));
    if drift > STATIONARITY_TOL {
        return Err(AnalysisError::NonStationary { drift });
    }
    Ok(inertia * omega * omega * var / BOLTZMANN)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudeHistogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub excess_kurtosis: f64,
    /// Two separated maxima of comparable height with a dip between them.
    pub bimodal: bool,
}

/// Histogram of `series` over its range with `n_bins` bins.
pub fn amplitude_histogram(series: &[f64], n_bins: usize) -> Result<AmplitudeHistogram, AnalysisError> {
    if series.len() < MIN_HISTOGRAM_SAMPLES {
        return Err(AnalysisError::TooFewSamples { got: series.len() });
    }
    let n_bins = n_bins.max(5);
    let lo = series.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = series.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / n_bins as f64 } else { 1.0 };
    let mut counts = vec![0u64; n_bins];
    for v in series {
        let k = (((v - lo) / width) as usize).min(n_bins - 1);
        counts[k] += 1;
    }
    let bin_edges = (0..=n_bins).map(|i| lo + i as f64 * width).collect();
    let (m, var) = mean_var(series);
    let m4 = series.iter().map(|v| (v - m).powi(4)).sum::<f64>() / series.len() as f64;
    let excess_kurtosis = if var > 0.0 { m4 / (var * var) - 3.0 } else { 0.0 };
    let bimodal = is_bimodal(&counts);
    Ok(AmplitudeHistogram { bin_edges, counts, excess_kurtosis, bimodal })
}

fn is_bimodal(counts: &[u64]) -> bool {
    // 3-bin moving average
    let n = counts.len();
    let s: Vec<f64> = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(n - 1);
            counts[lo..=hi].iter().sum::<u64>() as f64 / (hi - lo + 1) as f64
        })
        .collect();
    let global = s.iter().copied().fold(0.0, f64::max);
    if global == 0.0 {
        return false;
    }
    let peaks: Vec<usize> = (0..n)
        .filter(|&i| {
            let left = if i == 0 { 0.0 } else { s[i - 1] };
            let right = if i == n - 1 { 0.0 } else { s[i + 1] };
            s[i] > left && s[i] >= right && s[i] >= 0.5 * global
        })
        .collect();
    for (a, &i) in peaks.iter().enumerate() {
        for &j in &peaks[a + 1..] {
            let dip = s[i..=j].iter().copied().fold(f64::INFINITY, f64::min);
            if dip <= 0.8 * s[i].min(s[j]) {
                return true;
            }
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{linear_regime_preset, validate};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};
    use std::f64::consts::PI;

    #[test]
    fn effective_temperature_scales() {
        assert_relative_eq!(effective_temperature(300.0, 2.0, 8.0).unwrap(), 75.0);
        assert!(matches!(effective_temperature(300.0, 2.0, -1.0), Err(AnalysisError::NonPositiveDamping { .. })));
    }

    #[test]
    fn equipartition_round_trip() {
        let v = validate(&linear_regime_preset()).unwrap();
        let sd = v.thermal_variance().sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = Normal::new(0.0, sd).unwrap();
        let x: Vec<f64> = (0..100_000).map(|_| d.sample(&mut rng)).collect();
        assert_relative_eq!(equipartition_temperature(&x, &v).unwrap(), 300.0, max_relative = 0.02);
        assert_eq!(equipartition_temperature(&[0.1; 100], &v).unwrap(), 0.0);
    }

    #[test]
    fn drifting_variance_rejected() {
        let x: Vec<f64> = (0..1000).map(|i| if i < 500 { (i as f64).sin() } else { 3.0 * (i as f64).sin() }).collect();
        assert!(matches!(equipartition_temperature_at(&x, 1.0, 1.0), Err(AnalysisError::NonStationary { .. })));
    }

    #[test]
    fn gaussian_is_unimodal() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = Normal::new(0.0, 1.0).unwrap();
        let x: Vec<f64> = (0..50_000).map(|_| d.sample(&mut rng)).collect();
        let h = amplitude_histogram(&x, 50).unwrap();
        assert!(!h.bimodal);
        assert!(h.excess_kurtosis.abs() < 0.1);
        assert_eq!(h.counts.iter().sum::<u64>(), 50_000);
    }

    #[test]
    fn sinusoid_is_bimodal() {
        let x: Vec<f64> = (0..50_000).map(|i| (2.0 * PI * i as f64 / 97.3).sin()).collect();
        let h = amplitude_histogram(&x, 50).unwrap();
        assert!(h.bimodal);
        // arcsine law
        assert_relative_eq!(h.excess_kurtosis, -1.5, epsilon = 0.01);
    }

    #[test]
    fn histogram_needs_samples() {
        assert!(matches!(amplitude_histogram(&[0.0; 100], 10), Err(AnalysisError::TooFewSamples { got: 100 })));
    }
}
