//! Spin-block helpers shared by the integrators and the steady-state solvers.

use num_complex::Complex64;

use crate::model::{Drive, Lineshape, SpinParams};

/// Spin populations of |0⟩, |−1⟩ and |+1⟩.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Populations {
    pub pop0: f64,
    pub pop_m1: f64,
    pub pop_p1: f64,
}

impl Populations {
    pub const GROUND: Populations = Populations { pop0: 1.0, pop_m1: 0.0, pop_p1: 0.0 };

    /// Population difference S_z^{−1} − S_z^{+1} that sets the torque.
    pub fn torque_population(&self) -> f64 {
        self.pop_m1 - self.pop_p1
    }
}

/// Detuning actually seen by the spins at angle `phi` for the Lorentzian profile.
pub fn local_detuning(spin: &SpinParams, detuning: f64, phi: f64) -> f64 {
    detuning + spin.zeeman_slope * phi
}

/// Pumping profile P(Δ, φ) (s). Both shapes peak at T2*/2.
pub fn pumping_profile(spin: &SpinParams, detuning: f64, phi: f64) -> f64 {
    let sigma = spin.sigma();
    match spin.lineshape {
        Lineshape::Lorentzian => {
            let d = local_detuning(spin, detuning, phi);
            sigma / (2.0 * (sigma * sigma + d * d))
        }
        Lineshape::Gaussian => {
            let d = detuning + spin.zeeman_slope * (spin.gaussian_offset + phi);
            let x = d / sigma;
            (-x * x).exp() / (2.0 * sigma)
        }
    }
}

/// Microwave pumping rate W = Ω²P (1/s).
pub fn pump_rate(spin: &SpinParams, drive: Drive, phi: f64) -> f64 {
    drive.rabi * drive.rabi * pumping_profile(spin, drive.detuning, phi)
}

/// Steady populations of the rate equations for pumping rate `w`.
pub fn steady_populations(spin: &SpinParams, w: f64) -> Populations {
    let a = spin.inv_t1();
    let g = spin.gamma_las;
    if a + g == 0.0 {
        // no relaxation at all: pumping equalizes |0⟩ and |−1⟩
        return if w > 0.0 {
            Populations { pop0: 0.5, pop_m1: 0.5, pop_p1: 0.0 }
        } else {
            Populations::GROUND
        };
    }
    let den = (a + g) * (3.0 * a + g) + (3.0 * a + 2.0 * g) * w;
    let pop0 = (a + g + w) * (a + g) / den;
    let pop_m1 = (a + w) * (a + g) / den;
    let pop_p1 = a * (a + g + w) / den;
    Populations { pop0, pop_m1, pop_p1 }
}

/// Steady torque population S_z^{−1} − S_z^{+1} for pumping rate `w`.
pub fn steady_torque_population(spin: &SpinParams, w: f64) -> f64 {
    let a = spin.inv_t1();
    let g = spin.gamma_las;
    if a + g == 0.0 {
        return if w > 0.0 { 0.5 } else { 0.0 };
    }
    g * w / ((a + g) * (3.0 * a + g) + (3.0 * a + 2.0 * g) * w)
}

/// Coherence slaved to the populations, i(Ω/2)(p₋₁ − p₀)/(σ − iδ).
pub fn adiabatic_coherence(spin: &SpinParams, drive: Drive, phi: f64, pops: &Populations) -> Complex64 {
    let d = local_detuning(spin, drive.detuning, phi);
    let num = Complex64::new(0.0, 0.5 * drive.rabi * (pops.pop_m1 - pops.pop0));
    num / Complex64::new(spin.sigma(), -d)
}
