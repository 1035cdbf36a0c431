//! Non-linear steady states: bistability roots, hysteresis, effective
//! potential, Kramers statistics and the lasing threshold.

mod hysteresis;
mod potential;
mod threshold;

pub use hysteresis::{hysteresis_sweep, HysteresisResult};
pub use potential::{effective_potential, kramers_rates, DoubleWell, EffectivePotential, KramersResult};
pub use threshold::{final_amplitude, lasing_threshold, LimitCycleCheck, ThresholdOptions, ThresholdResult};

use thiserror::Error;

use crate::dynamics::DynamicsError;
use crate::linres::LinresError;
use crate::model::{Drive, Lineshape, ValidatedParams, ValidationError};
use crate::spin;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SteadyError {
    #[error("potential has no double well")]
    NoDoubleWell,
    #[error("gamma_eff does not change sign on the Rabi grid")]
    NoSignChange,
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Linres(#[from] LinresError),
    #[error(transparent)]
    Params(#[from] ValidationError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stability {
    Stable,
    Unstable,
}

impl Stability {
    pub fn label(self) -> &'static str {
        match self {
            Stability::Stable => "S",
            Stability::Unstable => "U",
        }
    }
}

/// One steady angle with its stability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyBranch {
    pub phi_root: f64,
    pub stability: Stability,
    /// Residual of the balance equation, normalized by the magnitude of its terms.
    pub residual: f64,
}

/// Steady torque population S_z^{−1} − S_z^{+1} at angle `phi`.
///
/// Exact steady state of the three-level rate equations; for a Lorentzian
/// profile this is A/(κ + (Δ+γ_eBφ)²), see [`lorentzian_coefficients`].
pub fn sz_steady(params: &ValidatedParams, drive: Drive, phi: f64) -> f64 {
    let sp = params.spin();
    spin::steady_torque_population(sp, spin::pump_rate(sp, drive, phi))
}

/// (A, κ) such that the Lorentzian steady population is A/(κ + δ²).
pub fn lorentzian_coefficients(params: &ValidatedParams, rabi: f64) -> (f64, f64) {
    let sp = params.spin();
    let a = sp.inv_t1();
    let g = sp.gamma_las;
    let sigma = sp.sigma();
    let den = 2.0 * (a + g) * (3.0 * a + g);
    if den == 0.0 {
        return (0.0, sigma * sigma);
    }
    let w = rabi * rabi * sigma / den;
    (g * w, sigma * sigma + (3.0 * a + 2.0 * g) * w)
}

/// Static torque balance ω_φ²φ − Γ·S_z(φ) (rad/s²). Zero at steady angles.
pub fn balance(params: &ValidatedParams, drive: Drive, phi: f64) -> f64 {
    let w = params.mech().omega_phi;
    w * w * phi - params.torque_coeff() * sz_steady(params, drive, phi)
}

/// d(balance)/dφ; positive means a restoring total torque.
pub fn balance_slope(params: &ValidatedParams, drive: Drive, phi: f64) -> f64 {
    let w = params.mech().omega_phi;
    let h = 1e-6 * params.sigma() / params.spin().zeeman_slope.abs().max(1.0);
    let dsz = (sz_steady(params, drive, phi + h) - sz_steady(params, drive, phi - h)) / (2.0 * h);
    w * w - params.torque_coeff() * dsz
}

/// Monic cubic in u = γ_eB·φ for the Lorentzian balance:
/// u³ + 2Δu² + (κ+Δ²)u − γ_eB·I_d = 0, with I_d = ΓA/ω_φ².
fn lorentzian_cubic(params: &ValidatedParams, drive: Drive) -> [f64; 3] {
    let (amp, kappa) = lorentzian_coefficients(params, drive.rabi);
    let k = params.spin().zeeman_slope;
    let w = params.mech().omega_phi;
    let i_d = params.torque_coeff() * amp / (w * w);
    let d = drive.detuning;
    [2.0 * d, kappa + d * d, -k * i_d]
}

/// Real roots of x³ + b x² + c x + d, ascending.
pub fn solve_monic_cubic(b: f64, c: f64, d: f64) -> Vec<f64> {
    let shift = b / 3.0;
    let p = c - b * b / 3.0;
    let q = 2.0 * b * b * b / 27.0 - b * c / 3.0 + d;
    let disc = (q / 2.0).powi(2) + (p / 3.0).powi(3);
    let mut roots = if disc > 0.0 {
        let s = disc.sqrt();
        let t = (-q / 2.0 + s).cbrt() + (-q / 2.0 - s).cbrt();
        vec![t - shift]
    } else if p == 0.0 {
        vec![-shift]
    } else {
        let r = 2.0 * (-p / 3.0).sqrt();
        let arg = (3.0 * q / (p * r)).clamp(-1.0, 1.0);
        let theta = arg.acos() / 3.0;
        (0..3)
            .map(|k| r * (theta - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos() - shift)
            .collect()
    };
    let f = |x: f64| ((x + b) * x + c) * x + d;
    let fp = |x: f64| (3.0 * x + 2.0 * b) * x + c;
    for x in roots.iter_mut() {
        for _ in 0..8 {
            let df = fp(*x);
            if df == 0.0 {
                break;
            }
            let step = f(*x) / df;
            *x -= step;
            if step.abs() <= 1e-16 * x.abs() {
                break;
            }
        }
    }
    roots.sort_by(f64::total_cmp);
    roots
}

/// All steady angles for `drive`, ascending in φ.
///
/// Lorentzian: closed-form cubic plus Newton polish. Gaussian: dense scan of
/// the balance over the reachable angle range plus bisection.
pub fn bistability_roots(params: &ValidatedParams, drive: Drive) -> Vec<SteadyBranch> {
    let k = params.spin().zeeman_slope;
    let gamma_t = params.torque_coeff();
    if gamma_t == 0.0 || drive.rabi == 0.0 {
        return vec![SteadyBranch { phi_root: 0.0, stability: Stability::Stable, residual: 0.0 }];
    }
    match params.spin().lineshape {
        Lineshape::Lorentzian if k != 0.0 => {
            let [b, c, d] = lorentzian_cubic(params, drive);
            let us = solve_monic_cubic(b, c, d);
            let mut out: Vec<SteadyBranch> = Vec::with_capacity(3);
            for u in us {
                let scale = u.abs().powi(3) + (b * u * u).abs() + (c * u).abs() + d.abs();
                let res = (((u + b) * u + c) * u + d) / scale;
                let slope = (3.0 * u + 2.0 * b) * u + c;
                let stability = if slope > 0.0 { Stability::Stable } else { Stability::Unstable };
                let phi = u / k;
                if out.last().is_some_and(|prev: &SteadyBranch| (prev.phi_root - phi).abs() <= 1e-12 * phi.abs()) {
                    continue;
                }
                out.push(SteadyBranch { phi_root: phi, stability, residual: res });
            }
            out
        }
        _ => scan_roots(params, drive, 100_000),
    }
}

/// Angles that can host a steady state: Γ·S_z ranges over [0, Γ·S_max].
fn reachable_range(params: &ValidatedParams) -> (f64, f64) {
    let sp = params.spin();
    let a = sp.inv_t1();
    let g = sp.gamma_las;
    let s_max = if a + g == 0.0 { 0.5 } else { g / (3.0 * a + 2.0 * g) };
    let w = params.mech().omega_phi;
    let edge = params.torque_coeff() * s_max / (w * w);
    let pad = 1e-9 * edge.abs() + 1e-15;
    if edge >= 0.0 {
        (-pad, edge + pad)
    } else {
        (edge - pad, pad)
    }
}

/// Brute-force roots: sign changes of the balance on `n` uniform points,
/// refined by bisection.
pub fn scan_roots(params: &ValidatedParams, drive: Drive, n: usize) -> Vec<SteadyBranch> {
    let (lo, hi) = reachable_range(params);
    let f = |x: f64| balance(params, drive, x);
    let h = (hi - lo) / (n - 1) as f64;
    let mut out = Vec::new();
    let mut x0 = lo;
    let mut f0 = f(x0);
    for i in 1..n {
        let x1 = lo + i as f64 * h;
        let f1 = f(x1);
        if f0 == 0.0 || f0.signum() != f1.signum() {
            let root = if f0 == 0.0 { x0 } else { bisect(&f, x0, x1, f0) };
            let scale = {
                let w = params.mech().omega_phi;
                w * w * root.abs() + (params.torque_coeff() * sz_steady(params, drive, root)).abs()
            };
            let stability =
                if balance_slope(params, drive, root) > 0.0 { Stability::Stable } else { Stability::Unstable };
            out.push(SteadyBranch { phi_root: root, stability, residual: f(root) / scale.max(f64::MIN_POSITIVE) });
        }
        x0 = x1;
        f0 = f1;
    }
    out
}

pub(crate) fn bisect(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64, mut fa: f64) -> f64 {
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let fm = f(m);
        if fm == 0.0 {
            return m;
        }
        if fm.signum() == fa.signum() {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// Stable steady angle closest to zero; the operating point reached by
/// switching the drive on from rest.
pub fn equilibrium_angle(params: &ValidatedParams, drive: Drive) -> f64 {
    bistability_roots(params, drive)
        .into_iter()
        .filter(|b| b.stability == Stability::Stable)
        .map(|b| b.phi_root)
        .min_by(|a, b| a.abs().total_cmp(&b.abs()))
        .unwrap_or(0.0)
}

/// Roots over a detuning grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BistabilityCurve {
    pub detunings: Vec<f64>,
    pub branches: Vec<Vec<SteadyBranch>>,
}

impl BistabilityCurve {
    /// Detuning range of grid points with three roots, if any.
    pub fn bistable_window(&self) -> Option<(f64, f64)> {
        let inside: Vec<f64> =
            self.detunings.iter().zip(&self.branches).filter(|(_, b)| b.len() == 3).map(|(d, _)| *d).collect();
        Some((*inside.first()?, *inside.last()?))
    }
}

pub fn bistability_curve(params: &ValidatedParams, rabi: f64, detunings: &[f64]) -> BistabilityCurve {
    use rayon::prelude::*;
    let branches = detunings.par_iter().map(|&d| bistability_roots(params, Drive::new(rabi, d))).collect();
    BistabilityCurve { detunings: detunings.to_vec(), branches }
}
