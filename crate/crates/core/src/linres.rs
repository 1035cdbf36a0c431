//! Linear response of the spin torque to small librations: the spin-spring
//! and spin-cooling coefficients.
//!
//! ξ(ω) is obtained by harmonic probing: φ is clamped to φ_eq + A·cos ωt, the
//! spin block is integrated (RK4) to its periodic steady state, and the torque
//! population S_z^{−1} − S_z^{+1} is projected on the probe quadratures, so
//! that δS_z = Re(ξ·A·e^{iωt}).

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::dynamics::{derivs, SpinState, SystemState};
use crate::model::{Drive, ModelKind, ValidatedParams, ValidationError};
use crate::spin;
use crate::steadystate::equilibrium_angle;

/// Relative agreement required between probes of amplitude A and A/2.
pub const LINEARITY_TOL: f64 = 0.01;
/// Probe periods discarded before projecting.
pub const TRANSIENT_PERIODS: usize = 20;
/// Relative spread of the last five per-period projections tolerated at the end.
pub const STEADY_TOL: f64 = 0.01;
const MAX_PERIODS: usize = 400;
const MAX_FIXED_POINT: usize = 20;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinresError {
    #[error("response not linear: probes A and A/2 differ by {rel:.3e}")]
    NonLinearResponse { rel: f64 },
    #[error("no periodic steady state: projection drift {drift:.3e} over the last 5 periods")]
    NoSteadyState { drift: f64 },
    #[error("omega_eff refinement did not converge in {iterations} iterations")]
    NoFixedPoint { iterations: usize },
    #[error("spin spring removes the restoring torque (omega_eff^2 = {omega_eff_sq:.3e})")]
    NoRestoringTorque { omega_eff_sq: f64 },
    #[error(transparent)]
    Params(#[from] ValidationError),
}

impl LinresError {
    pub fn status(&self) -> &'static str {
        match self {
            LinresError::NonLinearResponse { .. } => "nonlinear",
            LinresError::NoSteadyState { .. } => "no_steady_state",
            LinresError::NoFixedPoint { .. } => "no_fixed_point",
            LinresError::NoRestoringTorque { .. } => "no_restoring_torque",
            LinresError::Params(_) => "invalid_params",
        }
    }
}

/// Torque-population response per radian at probe frequency `omega`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpinResponse {
    pub omega: f64,
    pub xi: Complex64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveDynamics {
    pub omega_eff: f64,
    /// May be negative (anti-damping).
    pub gamma_eff: f64,
    pub detuning: f64,
    /// Equilibrium angle the response was linearized about.
    pub phi_eq: f64,
    pub response: SpinResponse,
}

/// Probe amplitude keeping the detuning excursion at 10⁻³ of the linewidth.
pub fn default_probe_amp(params: &ValidatedParams) -> f64 {
    let k = params.spin().zeeman_slope.abs();
    if k > 0.0 {
        1e-3 * params.sigma() / k
    } else {
        1e-6
    }
}

/// Largest rate in the spin block, used to pick a stable RK4 step.
fn stiffness(params: &ValidatedParams, drive: Drive) -> f64 {
    let sp = params.spin();
    let w_max = drive.rabi * drive.rabi * sp.t2_star / 2.0;
    let pops = 3.0 * sp.inv_t1() + 2.0 * sp.gamma_las + 2.0 * w_max;
    match params.sim().model {
        ModelKind::RateEq => pops,
        ModelKind::FullBloch => pops + sp.sigma() + drive.detuning.abs() + drive.rabi + 0.1 * sp.zeeman_slope.abs(),
    }
}

/// Single probe run about `phi_eq`, without the linearity gate.
pub fn probe_once(params: &ValidatedParams, drive: Drive, phi_eq: f64, omega: f64, amp: f64) -> Result<SpinResponse, LinresError> {
    let period = 2.0 * PI / omega;
    let lam = stiffness(params, drive);
    let n = ((period * lam / 0.2).ceil() as usize).max(64);
    let h = period / n as f64;

    let start = SystemState::steady(params, drive, phi_eq);
    let mut s = start.spin;
    let spin_rate = |t: f64, s: &SpinState| -> SpinState {
        let x = SystemState::new(phi_eq + amp * (omega * t).cos(), 0.0, *s);
        // the clamped angle only enters the spin block
        derivs(&x, params, drive).map(|d| d.spin).unwrap_or(SpinState { pop0: f64::NAN, ..*s })
    };
    let add = |s: &SpinState, d: &SpinState, k: f64| SpinState {
        coherence: s.coherence + d.coherence * k,
        pop0: s.pop0 + k * d.pop0,
        pop_m1: s.pop_m1 + k * d.pop_m1,
        pop_p1: s.pop_p1 + k * d.pop_p1,
    };
    let phases: Vec<Complex64> = (0..n).map(|j| Complex64::from_polar(1.0, -omega * j as f64 * h)).collect();

    let mut history: Vec<Complex64> = Vec::new();
    for period_idx in 0..MAX_PERIODS {
        let mut proj = Complex64::new(0.0, 0.0);
        for (j, ph) in phases.iter().enumerate() {
            let t = j as f64 * h;
            proj += ph * s.torque_population();
            let k1 = spin_rate(t, &s);
            let k2 = spin_rate(t + 0.5 * h, &add(&s, &k1, 0.5 * h));
            let k3 = spin_rate(t + 0.5 * h, &add(&s, &k2, 0.5 * h));
            let k4 = spin_rate(t + h, &add(&s, &k3, h));
            s = SpinState {
                coherence: s.coherence + (k1.coherence + k2.coherence * 2.0 + k3.coherence * 2.0 + k4.coherence) * (h / 6.0),
                pop0: s.pop0 + h / 6.0 * (k1.pop0 + 2.0 * k2.pop0 + 2.0 * k3.pop0 + k4.pop0),
                pop_m1: s.pop_m1 + h / 6.0 * (k1.pop_m1 + 2.0 * k2.pop_m1 + 2.0 * k3.pop_m1 + k4.pop_m1),
                pop_p1: s.pop_p1 + h / 6.0 * (k1.pop_p1 + 2.0 * k2.pop_p1 + 2.0 * k3.pop_p1 + k4.pop_p1),
            };
        }
        if !s.pop0.is_finite() {
            return Err(LinresError::NoSteadyState { drift: f64::INFINITY });
        }
        if period_idx < TRANSIENT_PERIODS {
            continue;
        }
        // ξ = 2∫δS_z e^{−iωt} dt / (A·T)
        history.push(proj * (2.0 / (amp * n as f64)));
        if history.len() >= 5 {
            let (mean, drift) = spread(&history[history.len() - 5..]);
            if drift <= 1e-7 {
                return Ok(SpinResponse { omega, xi: mean });
            }
        }
    }
    let (mean, drift) = spread(&history[history.len() - 5..]);
    if drift > STEADY_TOL {
        return Err(LinresError::NoSteadyState { drift });
    }
    Ok(SpinResponse { omega, xi: mean })
}

/// Mean and relative spread of a window of projections.
fn spread(w: &[Complex64]) -> (Complex64, f64) {
    let mean = w.iter().sum::<Complex64>() / w.len() as f64;
    let dev = w.iter().map(|z| (z - mean).norm()).fold(0.0, f64::max);
    let scale = mean.norm();
    let drift = if dev == 0.0 { 0.0 } else if scale == 0.0 { f64::INFINITY } else { dev / scale };
    (mean, drift)
}

/// ξ(ω) about the stable equilibrium angle, with the linearity gate.
///
/// Probes with `probe_amp` and `probe_amp/2`; returns the smaller-amplitude
/// result when both agree within 1%.
pub fn spin_response_xi(params: &ValidatedParams, drive: Drive, omega_probe: f64, probe_amp: f64) -> Result<SpinResponse, LinresError> {
    let phi_eq = equilibrium_angle(params, drive);
    gated_response(params, drive, phi_eq, omega_probe, probe_amp)
}

fn gated_response(params: &ValidatedParams, drive: Drive, phi_eq: f64, omega: f64, amp: f64) -> Result<SpinResponse, LinresError> {
    let big = probe_once(params, drive, phi_eq, omega, amp)?;
    let small = probe_once(params, drive, phi_eq, omega, amp / 2.0)?;
    let diff = (big.xi - small.xi).norm();
    if diff > 0.0 {
        let rel = diff / small.xi.norm().max(f64::MIN_POSITIVE);
        if rel > LINEARITY_TOL {
            return Err(LinresError::NonLinearResponse { rel });
        }
    }
    Ok(small)
}

/// ω_eff² = ω_φ² − Γ·Re ξ(ω_eff), γ_eff = γ − Γ·Im ξ(ω_eff)/ω_eff.
///
/// ξ is first evaluated at ω_φ, then re-evaluated at the updated ω_eff until
/// the frequency changes by less than 10⁻⁶ relative.
pub fn effective_dynamics(params: &ValidatedParams, drive: Drive, probe_amp: f64) -> Result<EffectiveDynamics, LinresError> {
    let m = params.mech();
    let gamma_t = params.torque_coeff();
    let phi_eq = equilibrium_angle(params, drive);
    let mut omega = m.omega_phi;
    for _ in 0..MAX_FIXED_POINT {
        let resp = gated_response(params, drive, phi_eq, omega, probe_amp)?;
        let w2 = m.omega_phi * m.omega_phi - gamma_t * resp.xi.re;
        if w2 <= 0.0 {
            return Err(LinresError::NoRestoringTorque { omega_eff_sq: w2 });
        }
        let next = w2.sqrt();
        if (next - omega).abs() <= 1e-6 * omega {
            return Ok(EffectiveDynamics {
                omega_eff: omega,
                gamma_eff: m.gamma - gamma_t * resp.xi.im / omega,
                detuning: drive.detuning,
                phi_eq,
                response: resp,
            });
        }
        omega = next;
    }
    Err(LinresError::NoFixedPoint { iterations: MAX_FIXED_POINT })
}

/// One row of a detuning sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub detuning: f64,
    pub result: Result<EffectiveDynamics, LinresError>,
}

/// Effective dynamics at every detuning; failures are recorded per point.
pub fn detuning_sweep(params: &ValidatedParams, rabi: f64, detunings: &[f64], probe_amp: f64) -> Vec<SweepPoint> {
    detunings
        .par_iter()
        .map(|&d| SweepPoint { detuning: d, result: effective_dynamics(params, Drive::new(rabi, d), probe_amp) })
        .collect()
}

/// Closed-form ξ(ω) of the rate model, linearized about `phi_eq`.
///
/// Used as an independent check of the probing route.
pub fn rate_model_xi(params: &ValidatedParams, drive: Drive, phi_eq: f64, omega: f64) -> Complex64 {
    let sp = params.spin();
    let a = sp.inv_t1();
    let g = sp.gamma_las;
    let w0 = spin::pump_rate(sp, drive, phi_eq);
    let h = 1e-7 * params.sigma() / sp.zeeman_slope.abs().max(1.0);
    let dw = (spin::pump_rate(sp, drive, phi_eq + h) - spin::pump_rate(sp, drive, phi_eq - h)) / (2.0 * h);
    let p = spin::steady_populations(sp, w0);
    let c = p.pop0 - p.pop_m1;
    let iw = Complex64::new(0.0, omega);
    let det = (iw + 2.0 * a + g + 2.0 * w0) * (iw + 2.0 * a + g) - a * (a + w0);
    dw * c * (iw + 3.0 * a + g) / det
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{hz, linear_regime_preset, validate, Lineshape};
    use crate::steadystate::sz_steady;
    use approx::assert_relative_eq;

    fn cooling() -> ValidatedParams {
        validate(&linear_regime_preset()).unwrap()
    }

    #[test]
    fn zero_rabi_gives_zero_xi() {
        let v = cooling();
        let r = spin_response_xi(&v, Drive::new(0.0, hz(-4e6)), v.mech().omega_phi, default_probe_amp(&v)).unwrap();
        assert_eq!(r.xi, Complex64::new(0.0, 0.0));
        let e = effective_dynamics(&v, Drive::new(0.0, hz(-4e6)), default_probe_amp(&v)).unwrap();
        assert_eq!(e.omega_eff, v.mech().omega_phi);
        assert_eq!(e.gamma_eff, v.mech().gamma);
    }

    #[test]
    fn matches_closed_form_rate_response() {
        let v = cooling();
        for mhz in [-6.0, -4.0, -1.0, 2.0, 5.0] {
            let d = Drive::new(v.drive().rabi, hz(mhz * 1e6));
            let phi_eq = equilibrium_angle(&v, d);
            for w in [hz(100.0), hz(480.0), hz(2000.0)] {
                let probe = probe_once(&v, d, phi_eq, w, default_probe_amp(&v)).unwrap();
                let exact = rate_model_xi(&v, d, phi_eq, w);
                assert!((probe.xi - exact).norm() < 1e-3 * exact.norm(), "{mhz} MHz, {w}: {} vs {}", probe.xi, exact);
            }
        }
    }

    #[test]
    fn static_limit_is_steady_slope() {
        let v = cooling();
        let d = Drive::new(v.drive().rabi, hz(-3e6));
        let phi_eq = equilibrium_angle(&v, d);
        let r = spin_response_xi(&v, d, hz(0.5), default_probe_amp(&v)).unwrap();
        let h = 1e-6;
        let slope = (sz_steady(&v, d, phi_eq + h) - sz_steady(&v, d, phi_eq - h)) / (2.0 * h);
        assert_relative_eq!(r.xi.re, slope, max_relative = 0.02);
    }

    #[test]
    fn imaginary_part_flips_across_resonance() {
        let v = cooling();
        let w = v.mech().omega_phi;
        let amp = default_probe_amp(&v);
        let red = spin_response_xi(&v, Drive::new(v.drive().rabi, hz(-3e6)), w, amp).unwrap();
        let blue = spin_response_xi(&v, Drive::new(v.drive().rabi, hz(3e6)), w, amp).unwrap();
        assert!(red.xi.im < 0.0 && blue.xi.im > 0.0);
    }

    #[test]
    fn weak_drive_antisymmetry() {
        let v = cooling().with_raw(|p| p.drive.torque_coeff = Some(1.0)).unwrap();
        let w = v.mech().omega_phi;
        let amp = default_probe_amp(&v);
        for mhz in [1.0, 3.0, 6.0] {
            let r = spin_response_xi(&v, Drive::new(hz(5e3), hz(-mhz * 1e6)), w, amp).unwrap();
            let b = spin_response_xi(&v, Drive::new(hz(5e3), hz(mhz * 1e6)), w, amp).unwrap();
            assert_relative_eq!(r.xi.im, -b.xi.im, max_relative = 0.2);
        }
    }

    #[test]
    fn red_detuning_cools() {
        let v = cooling();
        let e = effective_dynamics(&v, v.drive_on(), default_probe_amp(&v)).unwrap();
        assert!(e.gamma_eff > v.mech().gamma);
        assert!(e.omega_eff > 0.0);
    }

    #[test]
    fn large_probe_fails_linearity_gate() {
        let v = cooling();
        let err = spin_response_xi(&v, Drive::new(v.drive().rabi, hz(-1e6)), v.mech().omega_phi, 0.02).unwrap_err();
        assert!(matches!(err, LinresError::NonLinearResponse { .. }));
    }

    #[test]
    fn full_bloch_agrees_with_rate_model() {
        let v = cooling();
        let vb = v.with_raw(|p| {
            p.sim.model = ModelKind::FullBloch;
            p.sim.dt = 5e-9;
        })
        .unwrap();
        let d = Drive::new(v.drive().rabi, hz(-2e6));
        let w = v.mech().omega_phi;
        let phi_eq = equilibrium_angle(&v, d);
        let amp = default_probe_amp(&v);
        let rate = probe_once(&v, d, phi_eq, w, amp).unwrap();
        let bloch = probe_once(&vb, d, phi_eq, w, amp).unwrap();
        assert!((rate.xi - bloch.xi).norm() < 1e-3 * rate.xi.norm(), "{} vs {}", rate.xi, bloch.xi);
    }

    #[test]
    fn gaussian_profile_probes() {
        let v = cooling().with_raw(|p| p.spin.lineshape = Lineshape::Gaussian).unwrap();
        let e = effective_dynamics(&v, v.drive_on(), default_probe_amp(&v)).unwrap();
        assert!(e.gamma_eff > v.mech().gamma);
    }

    #[test]
    fn sweep_records_each_point() {
        let v = cooling();
        let grid = [hz(-4e6), hz(0.0), hz(4e6)];
        let rows = detuning_sweep(&v, 0.0, &grid, default_probe_amp(&v));
        assert_eq!(rows.len(), 3);
        for r in rows {
            let e = r.result.unwrap();
            assert_eq!(e.gamma_eff, v.mech().gamma);
            assert_eq!(e.omega_eff, v.mech().omega_phi);
        }
    }
}
