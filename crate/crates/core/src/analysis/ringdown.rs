use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rustfft::{num_complex::Complex, FftPlanner};

use super::lm::{levenberg_marquardt, MAX_ITER};
use super::AnalysisError;

/// Starting point for a ring-down fit. Angular quantities in rad/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RingdownInit {
    pub omega1: f64,
    pub gamma1: f64,
    pub omega2: Option<f64>,
    pub gamma2: Option<f64>,
}

/// Damped oscillation of one mode: e^{−γt/2}·A·sin(ωt + phase).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeFit {
    pub omega: f64,
    pub gamma: f64,
    pub amplitude: f64,
    pub phase: f64,
    /// False when the amplitude is too small for the phase to mean anything.
    pub phase_constrained: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RingdownFit {
    pub offset: f64,
    pub mode1: ModeFit,
    pub mode2: Option<ModeFit>,
    /// RMS residual.
    pub residual_rms: f64,
    pub iterations: usize,
}

fn model(p: &[f64], t: f64) -> f64 {
    let mut y = p[4];
    for m in p[..4].chunks(4).chain(p.get(5..9)) {
        let env = (-0.5 * m[1] * t).exp();
        y += env * (m[2] * (m[0] * t).cos() + m[3] * (m[0] * t).sin());
    }
    y
}

/// Spectral peaks of the mean-removed, Hann-windowed, zero-padded series,
/// as (angular frequency, power), in descending power.
fn spectral_peaks(t: &[f64], y: &[f64]) -> Vec<(f64, f64)> {
    let n = y.len();
    let dt = (t[n - 1] - t[0]) / (n - 1) as f64;
    let mean = y.iter().sum::<f64>() / n as f64;
    let len = (4 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = y
        .iter()
        .enumerate()
        .map(|(i, v)| Complex::new((v - mean) * (0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()), 0.0))
        .collect();
    buf.resize(len, Complex::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(len).process(&mut buf);
    let pow: Vec<f64> = buf[..len / 2].iter().map(|c| c.norm_sqr()).collect();
    let mut peaks = Vec::new();
    for k in 1..pow.len() - 1 {
        if pow[k] > pow[k - 1] && pow[k] >= pow[k + 1] {
            // parabolic interpolation in log power
            let (a, b, c) = (pow[k - 1].ln(), pow[k].ln(), pow[k + 1].ln());
            let denom = a - 2.0 * b + c;
            let off = if denom != 0.0 { 0.5 * (a - c) / denom } else { 0.0 };
            let f = (k as f64 + off) / (len as f64 * dt);
            peaks.push((2.0 * PI * f, pow[k]));
        }
    }
    peaks.sort_by(|a, b| b.1.total_cmp(&a.1));
    peaks
}

/// Decay rate γ from the slope of the log of per-period peak envelopes.
fn envelope_gamma(t: &[f64], y: &[f64], omega: f64) -> f64 {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let period = 2.0 * PI / omega;
    let mut pts = Vec::new();
    let mut start = 0;
    while start < t.len() {
        let t_end = t[start] + period;
        let mut end = start;
        let mut peak = 0.0f64;
        let mut t_peak = t[start];
        while end < t.len() && t[end] < t_end {
            if (y[end] - mean).abs() > peak {
                peak = (y[end] - mean).abs();
                t_peak = t[end];
            }
            end += 1;
        }
        if end == t.len() {
            break;
        }
        if peak > 0.0 {
            pts.push((t_peak, peak.ln()));
        }
        start = end;
    }
    if pts.len() < 2 {
        return 0.0;
    }
    let n = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (sx / n, sy / n);
    let (sxy, sxx) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + (x - mx) * (y - my), b + (x - mx) * (x - mx)));
    -2.0 * sxy / sxx
}

/// Least-squares amplitudes (a, b per mode, then offset) with frequencies and rates held.
fn linear_amplitudes(t: &[f64], y: &[f64], modes: &[(f64, f64)]) -> Option<Vec<f64>> {
    let cols = 2 * modes.len() + 1;
    let mut a = DMatrix::zeros(t.len(), cols);
    for (i, &ti) in t.iter().enumerate() {
        for (m, &(w, g)) in modes.iter().enumerate() {
            let env = (-0.5 * g * ti).exp();
            a[(i, 2 * m)] = env * (w * ti).cos();
            a[(i, 2 * m + 1)] = env * (w * ti).sin();
        }
        a[(i, cols - 1)] = 1.0;
    }
    let sol = a.svd(true, true).solve(&DVector::from_column_slice(y), 1e-12).ok()?;
    Some(sol.iter().copied().collect())
}

fn mode(w: f64, g: f64, a: f64, b: f64, scale: f64) -> ModeFit {
    let amplitude = a.hypot(b);
    ModeFit { omega: w.abs(), gamma: g, amplitude, phase: a.atan2(b), phase_constrained: amplitude > 1e-6 * scale }
}

/// Fits A0 + Σ e^{−γᵢt/2}(aᵢ cos ωᵢt + bᵢ sin ωᵢt) with one or two modes.
/// Time is measured from `t[0]`.
pub fn fit_ringdown(t: &[f64], y: &[f64], two_modes: bool, init: Option<RingdownInit>) -> Result<RingdownFit, AnalysisError> {
    if t.len() != y.len() {
        return Err(AnalysisError::InvalidInput(format!("{} times for {} samples", t.len(), y.len())));
    }
    if t.len() < 16 {
        return Err(AnalysisError::TooShort { needed: 16, got: t.len() });
    }
    let t0 = t[0];
    let tt: Vec<f64> = t.iter().map(|v| v - t0).collect();
    let span = tt[tt.len() - 1];
    let resolution = 2.0 * PI / span;
    let peaks = spectral_peaks(&tt, y);
    let init = match init {
        Some(i) => i,
        None => {
            let &(w1, _) = peaks.first().ok_or(AnalysisError::NoPeak { ratio: 0.0 })?;
            let g1 = envelope_gamma(&tt, y, w1);
            let w2 = if two_modes { peaks.iter().find(|(w, _)| (w - w1).abs() > 3.0 * resolution).map(|p| p.0) } else { None };
            RingdownInit { omega1: w1, gamma1: g1, omega2: w2, gamma2: w2.map(|_| g1) }
        }
    };
    let mut modes = vec![(init.omega1, init.gamma1)];
    if two_modes {
        let w2 = init.omega2.ok_or(AnalysisError::DegenerateModes { separation: 0.0, resolution })?;
        if (w2 - init.omega1).abs() < resolution {
            return Err(AnalysisError::DegenerateModes { separation: (w2 - init.omega1).abs(), resolution });
        }
        modes.push((w2, init.gamma2.unwrap_or(init.gamma1)));
    }
    let lin = linear_amplitudes(&tt, y, &modes).ok_or(AnalysisError::NoConvergence { iterations: 0, residual: f64::NAN })?;
    let mut x0 = vec![modes[0].0, modes[0].1, lin[0], lin[1], lin[lin.len() - 1]];
    if two_modes {
        x0.extend([modes[1].0, modes[1].1, lin[2], lin[3]]);
    }
    let scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let res = levenberg_marquardt(|p| tt.iter().zip(y).map(|(ti, yi)| model(p, *ti) - yi).collect(), &x0);
    let rms = (res.cost / y.len() as f64).sqrt();
    if !res.converged || !res.cost.is_finite() {
        return Err(AnalysisError::NoConvergence { iterations: MAX_ITER, residual: rms });
    }
    let p = &res.params;
    let mut m1 = mode(p[0], p[1], p[2], p[3], scale);
    let mut m2 = two_modes.then(|| mode(p[5], p[6], p[7], p[8], scale));
    // report the larger mode first
    if let Some(m) = m2 {
        if m.amplitude > m1.amplitude {
            m2 = Some(m1);
            m1 = m;
        }
    }
    Ok(RingdownFit { offset: p[4], mode1: m1, mode2: m2, residual_rms: rms, iterations: res.iterations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn series(modes: &[(f64, f64, f64, f64)], offset: f64, dur: f64, fs: f64) -> (Vec<f64>, Vec<f64>) {
        let n = (dur * fs) as usize;
        let t: Vec<f64> = (0..n).map(|i| i as f64 / fs).collect();
        let y = t
            .iter()
            .map(|t| offset + modes.iter().map(|(w, g, a, ph)| a * (-0.5 * g * t).exp() * (w * t + ph).sin()).sum::<f64>())
            .collect();
        (t, y)
    }

    #[test]
    fn single_mode() {
        let w = 2.0 * PI * 480.0;
        let g = 2.0 * PI * 5.0;
        let (t, y) = series(&[(w, g, 2e-3, 0.4)], 1e-4, 0.3, 20e3);
        let fit = fit_ringdown(&t, &y, false, None).unwrap();
        assert!(fit.mode2.is_none());
        assert_relative_eq!(fit.mode1.omega, w, max_relative = 1e-6);
        assert_relative_eq!(fit.mode1.gamma, g, max_relative = 1e-4);
        assert_relative_eq!(fit.mode1.amplitude, 2e-3, max_relative = 1e-4);
        assert_relative_eq!(fit.mode1.phase, 0.4, epsilon = 1e-4);
        assert_relative_eq!(fit.offset, 1e-4, max_relative = 1e-3);
    }

    #[test]
    fn two_modes_weak_second() {
        let (w1, w2) = (2.0 * PI * 480.0, 2.0 * PI * 590.0);
        let g = 2.0 * PI * 5.0;
        let (t, y) = series(&[(w1, g, 3e-3, 0.1), (w2, g, 1e-4, 1.2)], 0.0, 0.4, 20e3);
        let fit = fit_ringdown(&t, &y, true, None).unwrap();
        let m2 = fit.mode2.unwrap();
        assert_relative_eq!(fit.mode1.omega, w1, max_relative = 1e-5);
        assert_relative_eq!(m2.omega, w2, max_relative = 1e-4);
        assert_relative_eq!(m2.amplitude, 1e-4, max_relative = 1e-3);
        assert_relative_eq!(fit.mode1.amplitude / m2.amplitude, 30.0, max_relative = 1e-3);
    }

    #[test]
    fn growing_oscillation_has_negative_gamma() {
        let w = 2.0 * PI * 300.0;
        let (t, y) = series(&[(w, -8.0, 1e-3, 0.0)], 0.0, 0.2, 10e3);
        let fit = fit_ringdown(&t, &y, false, None).unwrap();
        assert_relative_eq!(fit.mode1.gamma, -8.0, max_relative = 1e-4);
    }

    #[test]
    fn zero_amplitude_mode_has_free_phase() {
        let (t, y) = series(&[], 0.5, 0.1, 10e3);
        let init = RingdownInit { omega1: 2.0 * PI * 480.0, gamma1: 30.0, omega2: None, gamma2: None };
        let fit = fit_ringdown(&t, &y, false, Some(init)).unwrap();
        assert!(fit.mode1.amplitude < 1e-9);
        assert!(!fit.mode1.phase_constrained);
    }

    #[test]
    fn unresolved_modes_rejected() {
        let w = 2.0 * PI * 480.0;
        let (t, y) = series(&[(w, 10.0, 1e-3, 0.0)], 0.0, 0.1, 10e3);
        let init = RingdownInit { omega1: w, gamma1: 10.0, omega2: Some(w + 20.0), gamma2: None };
        assert!(matches!(fit_ringdown(&t, &y, true, Some(init)), Err(AnalysisError::DegenerateModes { .. })));
    }
}
