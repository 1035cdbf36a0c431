//! Time-domain integration of the coupled spin and libration equations.

mod ensemble;
mod integrate;
mod protocol;

pub use ensemble::{ensemble_map, ensemble_stats, run_ensemble, Ensemble, EnsembleStats};
pub use integrate::{integrate_observed, integrate_trajectory, Stepper, ThermalKicks, Trajectory};
pub use protocol::{build_parametric_excitation, Protocol, ProtocolError, Segment};

use num_complex::Complex64;
use thiserror::Error;

use crate::model::{Drive, ModelKind, ValidatedParams};
use crate::spin::{self, Populations};

/// Slack allowed on populations before clamping.
pub const POP_EPS: f64 = 1e-6;
/// Bound on |S| (plus slack).
pub const COHERENCE_MAX: f64 = 0.5 + 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MechState {
    pub phi: f64,
    pub phi_dot: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SpinState {
    /// Coherence S on the {|0⟩, |−1⟩} subspace. Identically zero in the rate model.
    pub coherence: Complex64,
    pub pop0: f64,
    pub pop_m1: f64,
    pub pop_p1: f64,
}

impl SpinState {
    pub fn ground() -> Self {
        SpinState { coherence: Complex64::new(0.0, 0.0), pop0: 1.0, pop_m1: 0.0, pop_p1: 0.0 }
    }

    pub fn from_populations(p: Populations) -> Self {
        SpinState { coherence: Complex64::new(0.0, 0.0), pop0: p.pop0, pop_m1: p.pop_m1, pop_p1: p.pop_p1 }
    }

    pub fn populations(&self) -> Populations {
        Populations { pop0: self.pop0, pop_m1: self.pop_m1, pop_p1: self.pop_p1 }
    }

    pub fn torque_population(&self) -> f64 {
        self.pop_m1 - self.pop_p1
    }
}

/// Full snapshot (φ, φ̇, S, S_z^0, S_z^−1, S_z^+1). Also used for time derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SystemState {
    pub mech: MechState,
    pub spin: SpinState,
}

impl SystemState {
    pub fn new(phi: f64, phi_dot: f64, spin: SpinState) -> Self {
        SystemState { mech: MechState { phi, phi_dot }, spin }
    }

    /// Spins relaxed to the steady state of `drive` at angle `phi`, at rest.
    pub fn steady(params: &ValidatedParams, drive: Drive, phi: f64) -> Self {
        let sp = params.spin();
        let w = spin::pump_rate(sp, drive, phi);
        let pops = spin::steady_populations(sp, w);
        let mut s = SpinState::from_populations(pops);
        if params.sim().model == ModelKind::FullBloch {
            s.coherence = spin::adiabatic_coherence(sp, drive, phi, &pops);
        }
        SystemState::new(phi, 0.0, s)
    }

    /// `self + h·d`, component-wise.
    #[inline]
    pub fn add_scaled(&self, d: &SystemState, h: f64) -> SystemState {
        SystemState {
            mech: MechState { phi: self.mech.phi + h * d.mech.phi, phi_dot: self.mech.phi_dot + h * d.mech.phi_dot },
            spin: SpinState {
                coherence: self.spin.coherence + d.spin.coherence * h,
                pop0: self.spin.pop0 + h * d.spin.pop0,
                pop_m1: self.spin.pop_m1 + h * d.spin.pop_m1,
                pop_p1: self.spin.pop_p1 + h * d.spin.pop_p1,
            },
        }
    }

    fn is_finite(&self) -> bool {
        self.mech.phi.is_finite()
            && self.mech.phi_dot.is_finite()
            && self.spin.coherence.re.is_finite()
            && self.spin.coherence.im.is_finite()
            && self.spin.pop0.is_finite()
            && self.spin.pop_m1.is_finite()
            && self.spin.pop_p1.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error("non-finite value at step {step}")]
    NonFinite { step: usize },
    #[error("invariant violated at step {step}: {which}")]
    InvariantViolated { step: usize, which: String },
}

/// Deterministic drift of the full Bloch model. Noise is added by the integrator.
pub fn derivs_full_bloch(
    state: &SystemState,
    params: &ValidatedParams,
    drive: Drive,
) -> Result<SystemState, DynamicsError> {
    let sp = params.spin();
    let a = sp.inv_t1();
    let g = sp.gamma_las;
    let s = &state.spin;
    let delta = spin::local_detuning(sp, drive.detuning, state.mech.phi);
    let half = 0.5 * drive.rabi;

    let ds = Complex64::new(-sp.sigma(), delta) * s.coherence + Complex64::new(0.0, half * (s.pop_m1 - s.pop0));
    let dp1 = -a * (s.pop_p1 - s.pop0) - g * s.pop_p1;
    // i(Ω/2)(S − S*) = −Ω·Im S
    let dm1 = -a * (s.pop_m1 - s.pop0) - g * s.pop_m1 - drive.rabi * s.coherence.im;
    let d = SystemState {
        mech: MechState {
            phi: state.mech.phi_dot,
            phi_dot: mech_accel(state, params),
        },
        spin: SpinState { coherence: ds, pop0: -(dp1 + dm1), pop_m1: dm1, pop_p1: dp1 },
    };
    if !d.is_finite() {
        return Err(DynamicsError::NonFinite { step: 0 });
    }
    Ok(d)
}

/// Deterministic drift of the rate model (coherence eliminated).
pub fn derivs_rate(state: &SystemState, params: &ValidatedParams, drive: Drive) -> Result<SystemState, DynamicsError> {
    let sp = params.spin();
    let a = sp.inv_t1();
    let g = sp.gamma_las;
    let s = &state.spin;
    let w = spin::pump_rate(sp, drive, state.mech.phi);
    let dp1 = -a * (s.pop_p1 - s.pop0) - g * s.pop_p1;
    let dm1 = -a * (s.pop_m1 - s.pop0) - g * s.pop_m1 + w * (s.pop0 - s.pop_m1);
    let d = SystemState {
        mech: MechState { phi: state.mech.phi_dot, phi_dot: mech_accel(state, params) },
        spin: SpinState { coherence: Complex64::new(0.0, 0.0), pop0: -(dp1 + dm1), pop_m1: dm1, pop_p1: dp1 },
    };
    if !d.is_finite() {
        return Err(DynamicsError::NonFinite { step: 0 });
    }
    Ok(d)
}

#[inline]
fn mech_accel(state: &SystemState, params: &ValidatedParams) -> f64 {
    let m = params.mech();
    -m.omega_phi * m.omega_phi * state.mech.phi - m.gamma * state.mech.phi_dot
        + params.torque_coeff() * state.spin.torque_population()
}

/// Drift for the model selected in `params`.
pub fn derivs(state: &SystemState, params: &ValidatedParams, drive: Drive) -> Result<SystemState, DynamicsError> {
    match params.sim().model {
        ModelKind::FullBloch => derivs_full_bloch(state, params, drive),
        ModelKind::RateEq => derivs_rate(state, params, drive),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{hz, linear_regime_preset, validate};
    use approx::assert_relative_eq;

    fn params(model: ModelKind) -> ValidatedParams {
        let mut p = linear_regime_preset();
        p.sim.model = model;
        p.sim.dt = 1e-9;
        validate(&p).unwrap()
    }

    #[test]
    fn decoupled_limit() {
        let p = params(ModelKind::FullBloch);
        let mut st = SystemState::new(0.0, 0.0, SpinState::ground());
        st.spin.pop0 = 0.5;
        st.spin.pop_m1 = 0.3;
        st.spin.pop_p1 = 0.2;
        let d = derivs_full_bloch(&st, &p, Drive::off(0.0)).unwrap();
        assert_eq!(d.spin.coherence, Complex64::new(0.0, 0.0));
        let a = p.spin().inv_t1();
        let g = p.spin().gamma_las;
        assert_relative_eq!(d.spin.pop_p1, -a * (0.2 - 0.5) - g * 0.2);
        assert_relative_eq!(d.spin.pop_m1, -a * (0.3 - 0.5) - g * 0.3);
        assert_relative_eq!(d.spin.pop0 + d.spin.pop_m1 + d.spin.pop_p1, 0.0, epsilon = 1e-12);
        // relaxation drives population back to |0⟩
        assert!(d.spin.pop0 > 0.0);
    }

    #[test]
    fn zero_torque_is_bare_oscillator() {
        let p = params(ModelKind::RateEq).with_raw(|r| r.drive.torque_coeff = Some(0.0)).unwrap();
        let mut st = SystemState::new(1e-3, 0.2, SpinState::ground());
        st.spin.pop_m1 = 0.4;
        st.spin.pop0 = 0.6;
        let m = *p.mech();
        for model_fn in [derivs_rate, derivs_full_bloch] {
            let d = model_fn(&st, &p, p.drive_on()).unwrap();
            assert_eq!(d.mech.phi, 0.2);
            assert_eq!(d.mech.phi_dot, -m.omega_phi * m.omega_phi * 1e-3 - m.gamma * 0.2);
        }
    }

    #[test]
    fn far_detuned_pumping_vanishes() {
        let p = params(ModelKind::RateEq);
        let st = SystemState::new(0.0, 0.0, SpinState::ground());
        let d = derivs_rate(&st, &p, Drive::new(hz(30e3), 1e15)).unwrap();
        // only T1 mixing remains
        assert_relative_eq!(d.spin.pop_m1, p.spin().inv_t1(), max_relative = 1e-9);
    }

    #[test]
    fn resonant_pump_rate() {
        // Ω²P(0) = Ω²T2*/2
        let p = params(ModelKind::RateEq);
        let om = hz(30e3);
        let w = spin::pump_rate(p.spin(), Drive::new(om, 0.0), 0.0);
        assert_relative_eq!(w, om * om * p.spin().t2_star / 2.0, max_relative = 1e-14);
        let st = SystemState::new(0.0, 0.0, SpinState::ground());
        let d = derivs_rate(&st, &p, Drive::new(om, 0.0)).unwrap();
        assert_relative_eq!(d.spin.pop_m1, w + p.spin().inv_t1(), max_relative = 1e-14);
    }

    #[test]
    fn rate_matches_full_bloch_at_adiabatic_coherence() {
        let p = params(ModelKind::FullBloch);
        let drive = Drive::new(hz(30e3), hz(-3e6));
        let phi = 2e-3;
        let pops = Populations { pop0: 0.7, pop_m1: 0.2, pop_p1: 0.1 };
        let mut st = SystemState::new(phi, 0.0, SpinState::from_populations(pops));
        st.spin.coherence = spin::adiabatic_coherence(p.spin(), drive, phi, &pops);
        let full = derivs_full_bloch(&st, &p, drive).unwrap();
        let rate = derivs_rate(&st, &p, drive).unwrap();
        assert_relative_eq!(full.spin.pop_m1, rate.spin.pop_m1, max_relative = 1e-12);
        assert!(full.spin.coherence.norm() < 1e-9 * st.spin.coherence.norm() * p.sigma());
    }
}
