use std::f64::consts::PI;

use super::{balance, balance_slope, bisect, SteadyError};
use crate::model::{Drive, ValidatedParams, BOLTZMANN};

/// Wells A (smaller φ) and B, barrier top C, and barrier heights seen from each well.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoubleWell {
    pub phi_a: f64,
    pub phi_b: f64,
    pub phi_c: f64,
    /// U(C) − U(A) (J).
    pub depth_a: f64,
    /// U(C) − U(B) (J).
    pub depth_b: f64,
}

/// U(φ) = ∫₀^φ I·[ω_φ²x − Γ·S_z(x)] dx on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectivePotential {
    pub phi: Vec<f64>,
    pub u: Vec<f64>,
    pub minima: Vec<f64>,
    pub maxima: Vec<f64>,
    double_well: Option<DoubleWell>,
}

impl EffectivePotential {
    pub fn double_well(&self) -> Result<&DoubleWell, SteadyError> {
        self.double_well.as_ref().ok_or(SteadyError::NoDoubleWell)
    }
}

const SIMPSON_TOL: f64 = 1e-13;

fn simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let tol = SIMPSON_TOL * (whole.abs() + (b - a).abs() * (fa.abs() + fb.abs()) * 0.5).max(f64::MIN_POSITIVE);
    adaptive(f, a, b, fa, fm, fb, whole, tol, 40)
}

#[allow(clippy::too_many_arguments)]
fn adaptive(f: &impl Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let diff = left + right - whole;
    if depth == 0 || diff.abs() <= 15.0 * tol {
        return left + right + diff / 15.0;
    }
    adaptive(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + adaptive(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

/// Effective potential over `n` points spanning [phi_min, phi_max].
pub fn effective_potential(params: &ValidatedParams, drive: Drive, phi_min: f64, phi_max: f64, n: usize) -> EffectivePotential {
    let inertia = params.mech().inertia;
    let dudphi = |x: f64| inertia * balance(params, drive, x);
    let n = n.max(3);
    let h = (phi_max - phi_min) / (n - 1) as f64;
    let phi: Vec<f64> = (0..n).map(|i| phi_min + i as f64 * h).collect();
    let mut u = Vec::with_capacity(n);
    let mut acc = simpson(&dudphi, 0.0, phi[0]);
    u.push(acc);
    for w in phi.windows(2) {
        acc += simpson(&dudphi, w[0], w[1]);
        u.push(acc);
    }

    let mut minima = Vec::new();
    let mut maxima = Vec::new();
    let mut g0 = dudphi(phi[0]);
    for i in 1..n {
        let g1 = dudphi(phi[i]);
        if g0 != 0.0 && g0.signum() != g1.signum() {
            let x = bisect(&dudphi, phi[i - 1], phi[i], g0);
            if g0 < 0.0 {
                minima.push(x);
            } else {
                maxima.push(x);
            }
        }
        g0 = g1;
    }

    let double_well = if minima.len() == 2 && maxima.len() == 1 && minima[0] < maxima[0] && maxima[0] < minima[1] {
        let (a, c, b) = (minima[0], maxima[0], minima[1]);
        let ua = simpson(&dudphi, 0.0, a);
        let ub = simpson(&dudphi, 0.0, b);
        let uc = simpson(&dudphi, 0.0, c);
        Some(DoubleWell { phi_a: a, phi_b: b, phi_c: c, depth_a: uc - ua, depth_b: uc - ub })
    } else {
        None
    };
    EffectivePotential { phi, u, minima, maxima, double_well }
}

/// Escape rates and occupation of a double well.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KramersResult {
    pub rate_ab: f64,
    pub rate_ba: f64,
    /// Expected fraction of time spent in well A: 1/(1 + exp(−(U_A − U_B)/kT)).
    pub residence_ratio: f64,
    pub omega_a: f64,
    pub omega_b: f64,
    /// |ω^C|, the barrier curvature frequency.
    pub omega_c: f64,
}

impl KramersResult {
    /// Fraction of time in A implied by the two rates, R_BA/(R_AB + R_BA).
    pub fn rate_fraction_a(&self) -> f64 {
        self.rate_ba / (self.rate_ab + self.rate_ba)
    }
}

/// Residence fraction of A for barrier heights `depth_a`, `depth_b` at temperature `temperature`.
pub fn residence_ratio(depth_a: f64, depth_b: f64, temperature: f64) -> f64 {
    let kt = BOLTZMANN * temperature;
    1.0 / (1.0 + (-(depth_a - depth_b) / kt).exp())
}

/// Kramers rates over the barrier of `potential`, built with the same `drive`.
pub fn kramers_rates(potential: &EffectivePotential, params: &ValidatedParams, drive: Drive) -> Result<KramersResult, SteadyError> {
    let dw = potential.double_well()?;
    let gamma = params.mech().gamma;
    let kt = BOLTZMANN * params.mech().temperature;
    let omega_a = balance_slope(params, drive, dw.phi_a).max(0.0).sqrt();
    let omega_b = balance_slope(params, drive, dw.phi_b).max(0.0).sqrt();
    let omega_c = (-balance_slope(params, drive, dw.phi_c)).max(0.0).sqrt();
    let transmission = (omega_c * omega_c + gamma * gamma / 4.0).sqrt() - gamma / 2.0;
    let rate = |omega_w: f64, depth: f64| omega_w / (2.0 * PI * omega_c) * transmission * (-depth / kt).exp();
    Ok(KramersResult {
        rate_ab: rate(omega_a, dw.depth_a),
        rate_ba: rate(omega_b, dw.depth_b),
        residence_ratio: residence_ratio(dw.depth_a, dw.depth_b, params.mech().temperature),
        omega_a,
        omega_b,
        omega_c,
    })
}
