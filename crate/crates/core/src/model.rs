//! Physical parameters, validation and closed-form mechanical quantities.
//!
//! Everything inside this crate works in SI units with angular frequencies
//! (rad/s). Conversion from the Hz/kHz/MHz values found in config files
//! happens once, in [`crate::config`].

use std::f64::consts::PI;
use std::fmt;

use thiserror::Error;

/// Boltzmann constant (J/K).
pub const BOLTZMANN: f64 = 1.380_649e-23;
/// Reduced Planck constant (J·s).
pub const HBAR: f64 = 1.054_571_817e-34;

/// Relative mismatch above which a directly set torque coefficient is
/// reported as inconsistent with the one derived from N, γ_eB and I.
const TORQUE_MISMATCH_WARN: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MechanicalParams {
    /// Moment of inertia (kg·m²).
    pub inertia: f64,
    /// Librational angular frequency ω_φ (rad/s).
    pub omega_phi: f64,
    /// Gas damping rate γ (rad/s); the energy decays as exp(-γt).
    pub gamma: f64,
    /// Bath temperature (K).
    pub temperature: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Lineshape {
    Lorentzian,
    Gaussian,
}

impl Lineshape {
    pub fn name(self) -> &'static str {
        match self {
            Lineshape::Lorentzian => "lorentzian",
            Lineshape::Gaussian => "gaussian",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpinParams {
    /// Inhomogeneous coherence time T2* (s).
    pub t2_star: f64,
    /// Longitudinal relaxation time T1 (s). `f64::INFINITY` disables T1 relaxation.
    pub t1: f64,
    /// Laser repolarization rate into |0⟩ (1/s).
    pub gamma_las: f64,
    /// Effective number of magnetized NV spins.
    pub n_spins: f64,
    /// Detuning shift per radian of libration, γ_eB (rad/s per rad).
    pub zeeman_slope: f64,
    pub lineshape: Lineshape,
    /// Angle offset entering the Gaussian pumping profile only (rad).
    pub gaussian_offset: f64,
}

impl SpinParams {
    /// Spectral width σ = 1/T2* (rad/s).
    pub fn sigma(&self) -> f64 {
        1.0 / self.t2_star
    }

    /// 1/T1, zero when T1 is infinite.
    pub fn inv_t1(&self) -> f64 {
        if self.t1.is_infinite() {
            0.0
        } else {
            1.0 / self.t1
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriveParams {
    /// Microwave Rabi angular frequency Ω (rad/s).
    pub rabi: f64,
    /// Microwave detuning Δ at the equilibrium angle (rad/s). Negative is red.
    pub detuning: f64,
    /// Torque coefficient Γ (rad/s²). Derived from N, γ_eB and I when unset.
    pub torque_coeff: Option<f64>,
}

/// Microwave drive seen by the spins at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Drive {
    /// Rabi angular frequency Ω (rad/s); zero when the microwave is off.
    pub rabi: f64,
    /// Detuning Δ (rad/s).
    pub detuning: f64,
}

impl Drive {
    pub fn new(rabi: f64, detuning: f64) -> Self {
        Drive { rabi, detuning }
    }

    pub fn off(detuning: f64) -> Self {
        Drive { rabi: 0.0, detuning }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    /// Coherence S integrated explicitly.
    FullBloch,
    /// Coherence adiabatically eliminated; populations only.
    RateEq,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::FullBloch => "full_bloch",
            ModelKind::RateEq => "rate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimControl {
    /// Integrator step (s).
    pub dt: f64,
    /// Total simulated time (s).
    pub duration: f64,
    pub n_traj: usize,
    pub seed: u64,
    /// Keep every `record_stride`-th step.
    pub record_stride: usize,
    pub model: ModelKind,
}

impl SimControl {
    pub fn n_steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }
}

/// Raw parameter bundle, already in SI/angular units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalParams {
    pub mech: MechanicalParams,
    pub spin: SpinParams,
    pub drive: DriveParams,
    pub sim: SimControl,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("{0} must be strictly positive")]
    NonPositive(&'static str),
    #[error("{0} must be non-negative")]
    Negative(&'static str),
    #[error("{0} is not finite")]
    NonFinite(&'static str),
    #[error("underdamped regime required: omega_phi = {omega_phi:.4e} must exceed gamma = {gamma:.4e}")]
    UnderdampedViolation { omega_phi: f64, gamma: f64 },
    #[error("step dt = {dt:.3e} s exceeds the {model} bound {max:.3e} s")]
    StepTooLarge { dt: f64, max: f64, model: &'static str },
}

/// All violations found in one parameter bundle.
#[derive(Debug, Clone, PartialEq, Error)]
pub struct ValidationError(pub Vec<ParamError>);

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid parameters: ")?;
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl ValidationError {
    pub fn contains(&self, err: &ParamError) -> bool {
        self.0.iter().any(|e| e == err)
    }
}

/// Non-fatal findings recorded during validation.
#[derive(Debug, Clone, PartialEq)]
pub enum Warning {
    /// T2* is not much shorter than T1.
    CoherenceNotFast { t2_star: f64, t1: f64 },
    /// Directly set Γ differs from ħNγ_eB/I by more than 10%.
    TorqueMismatch { direct: f64, derived: f64 },
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Warning::CoherenceNotFast { t2_star, t1 } => {
                write!(f, "T2* = {t2_star:.3e} s is not much shorter than T1 = {t1:.3e} s")
            }
            Warning::TorqueMismatch { direct, derived } => write!(
                f,
                "torque coefficient set to {direct:.4e} rad/s^2 but hbar*N*gamma_eB/I = {derived:.4e} rad/s^2; using the set value"
            ),
        }
    }
}

/// Parameters that passed [`validate`]. Immutable; use the `with_*`
/// helpers to derive modified copies (they re-run validation).
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedParams {
    raw: PhysicalParams,
    torque_coeff: f64,
    warnings: Vec<Warning>,
}

impl ValidatedParams {
    pub fn mech(&self) -> &MechanicalParams {
        &self.raw.mech
    }
    pub fn spin(&self) -> &SpinParams {
        &self.raw.spin
    }
    pub fn drive(&self) -> &DriveParams {
        &self.raw.drive
    }
    pub fn sim(&self) -> &SimControl {
        &self.raw.sim
    }
    /// Γ in rad/s², either set directly or derived.
    pub fn torque_coeff(&self) -> f64 {
        self.torque_coeff
    }
    pub fn sigma(&self) -> f64 {
        self.raw.spin.sigma()
    }
    pub fn thermal_variance(&self) -> f64 {
        thermal_variance(&self.raw.mech)
    }
    pub fn langevin_psd_level(&self) -> f64 {
        langevin_psd_level(&self.raw.mech)
    }
    /// The configured always-on drive.
    pub fn drive_on(&self) -> Drive {
        Drive::new(self.raw.drive.rabi, self.raw.drive.detuning)
    }
    pub fn warnings(&self) -> &[Warning] {
        &self.warnings
    }

    /// The parameter bundle with Γ filled in.
    pub fn to_raw(&self) -> PhysicalParams {
        self.raw
    }

    pub fn with_raw(&self, f: impl FnOnce(&mut PhysicalParams)) -> Result<Self, ValidationError> {
        let mut raw = self.raw;
        f(&mut raw);
        validate(&raw)
    }

    pub fn with_detuning(&self, detuning: f64) -> Result<Self, ValidationError> {
        self.with_raw(|p| p.drive.detuning = detuning)
    }

    pub fn with_rabi(&self, rabi: f64) -> Result<Self, ValidationError> {
        self.with_raw(|p| p.drive.rabi = rabi)
    }

    pub fn with_sim(&self, sim: SimControl) -> Result<Self, ValidationError> {
        self.with_raw(|p| p.sim = sim)
    }
}

/// Maximum integrator step allowed for `model` with these parameters.
pub fn max_step(mech: &MechanicalParams, spin: &SpinParams, model: ModelKind) -> f64 {
    match model {
        ModelKind::FullBloch => spin.t2_star / 10.0,
        ModelKind::RateEq => {
            let las = if spin.gamma_las > 0.0 { 1.0 / spin.gamma_las } else { f64::INFINITY };
            let period = 2.0 * PI / mech.omega_phi;
            las.min(spin.t1).min(period) / 50.0
        }
    }
}

fn check_positive(v: f64, name: &'static str, errs: &mut Vec<ParamError>) {
    if v.is_nan() {
        errs.push(ParamError::NonFinite(name));
    } else if v <= 0.0 {
        errs.push(ParamError::NonPositive(name));
    }
}

fn check_nonneg(v: f64, name: &'static str, errs: &mut Vec<ParamError>) {
    if !v.is_finite() {
        errs.push(ParamError::NonFinite(name));
    } else if v < 0.0 {
        errs.push(ParamError::Negative(name));
    }
}

/// Checks a raw parameter bundle and resolves derived quantities.
///
/// Collects every violation rather than stopping at the first one.
pub fn validate(p: &PhysicalParams) -> Result<ValidatedParams, ValidationError> {
    let mut errs = Vec::new();
    let mut warnings = Vec::new();
    let m = &p.mech;
    let s = &p.spin;

    check_positive(m.inertia, "inertia", &mut errs);
    check_positive(m.omega_phi, "omega_phi", &mut errs);
    check_positive(m.gamma, "gamma", &mut errs);
    // T = 0 is a legitimate noise-free run; only negative temperatures are rejected.
    check_nonneg(m.temperature, "temperature", &mut errs);
    for (v, name) in [(m.inertia, "inertia"), (m.omega_phi, "omega_phi"), (m.gamma, "gamma")] {
        if v.is_infinite() {
            errs.push(ParamError::NonFinite(name));
        }
    }
    if m.omega_phi > 0.0 && m.gamma > 0.0 && m.omega_phi <= m.gamma {
        errs.push(ParamError::UnderdampedViolation { omega_phi: m.omega_phi, gamma: m.gamma });
    }

    check_positive(s.t2_star, "t2_star", &mut errs);
    check_positive(s.t1, "t1", &mut errs);
    check_nonneg(s.gamma_las, "gamma_las", &mut errs);
    check_nonneg(s.n_spins, "n_spins", &mut errs);
    if !s.zeeman_slope.is_finite() {
        errs.push(ParamError::NonFinite("zeeman_slope"));
    }
    if !s.gaussian_offset.is_finite() {
        errs.push(ParamError::NonFinite("gaussian_offset"));
    }
    if s.t2_star > 0.0 && s.t1 > 0.0 && s.t2_star * 10.0 > s.t1 {
        warnings.push(Warning::CoherenceNotFast { t2_star: s.t2_star, t1: s.t1 });
    }

    check_nonneg(p.drive.rabi, "rabi", &mut errs);
    if !p.drive.detuning.is_finite() {
        errs.push(ParamError::NonFinite("detuning"));
    }

    check_positive(p.sim.dt, "dt", &mut errs);
    check_nonneg(p.sim.duration, "duration", &mut errs);
    if p.sim.n_traj == 0 {
        errs.push(ParamError::NonPositive("n_traj"));
    }
    if p.sim.record_stride == 0 {
        errs.push(ParamError::NonPositive("record_stride"));
    }

    let mut torque = 0.0;
    if errs.is_empty() {
        let bound = max_step(m, s, p.sim.model);
        if p.sim.dt > bound * (1.0 + 1e-12) {
            errs.push(ParamError::StepTooLarge { dt: p.sim.dt, max: bound, model: p.sim.model.name() });
        }
        let derived = torque_coefficient(s.n_spins, s.zeeman_slope, m.inertia);
        torque = match p.drive.torque_coeff {
            Some(direct) => {
                if !direct.is_finite() {
                    errs.push(ParamError::NonFinite("torque_coeff"));
                }
                // Γ = 0 is a deliberate decoupling, not a mismatch
                if s.n_spins > 0.0 && derived != 0.0 && direct != 0.0 {
                    let rel = (direct - derived).abs() / derived.abs();
                    if rel > TORQUE_MISMATCH_WARN {
                        warnings.push(Warning::TorqueMismatch { direct, derived });
                    }
                }
                direct
            }
            None => derived,
        };
    }

    if !errs.is_empty() {
        return Err(ValidationError(errs));
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    let mut raw = *p;
    raw.drive.torque_coeff = Some(torque);
    Ok(ValidatedParams { raw, torque_coeff: torque, warnings })
}

/// Γ = ħ·N·γ_eB/I with `zeeman_slope` already angular (rad/s per rad).
pub fn torque_coefficient(n_spins: f64, zeeman_slope: f64, inertia: f64) -> f64 {
    HBAR * n_spins * zeeman_slope / inertia
}

/// Static angle shift φ0 = Γ·S_z/ω_φ² for a population difference `sz_population` in [0, 1].
pub fn static_shift(torque_coeff: f64, sz_population: f64, omega_phi: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&sz_population));
    torque_coeff * sz_population / (omega_phi * omega_phi)
}

/// White Langevin torque spectral level S_T = 2kTγI (N²·m²·s).
pub fn langevin_psd_level(mech: &MechanicalParams) -> f64 {
    2.0 * BOLTZMANN * mech.temperature * mech.gamma * mech.inertia
}

/// Equipartition variance ⟨φ²⟩ = kT/(Iω_φ²) (rad²).
pub fn thermal_variance(mech: &MechanicalParams) -> f64 {
    BOLTZMANN * mech.temperature / (mech.inertia * mech.omega_phi * mech.omega_phi)
}

/// Hz → rad/s.
pub fn hz(f: f64) -> f64 {
    2.0 * PI * f
}

/// rad/s → Hz.
pub fn to_hz(w: f64) -> f64 {
    w / (2.0 * PI)
}

/// Parameters of the 480 Hz mode used for the linear-regime (cooling) runs.
///
/// Mechanical values are the measured ones; T1, γ_las and Ω are the fitted
/// spin values. Γ and Δ are not pinned by the measurement and are set here
/// to a working point with clear spin-cooling.
pub fn linear_regime_preset() -> PhysicalParams {
    PhysicalParams {
        mech: MechanicalParams {
            inertia: 1.4e-22,
            omega_phi: hz(480.0),
            gamma: hz(16.0),
            temperature: 300.0,
        },
        spin: SpinParams {
            t2_star: 50e-9,
            t1: 1.0 / 600.0,
            gamma_las: 2000.0,
            n_spins: 1e8,
            zeeman_slope: hz(260e6),
            lineshape: Lineshape::Lorentzian,
            gaussian_offset: 0.0,
        },
        drive: DriveParams { rabi: hz(30e3), detuning: hz(-4e6), torque_coeff: Some(3e5) },
        sim: SimControl {
            dt: 1e-5,
            duration: 0.1,
            n_traj: 1,
            seed: 1,
            record_stride: 10,
            model: ModelKind::RateEq,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn measured_params() -> PhysicalParams {
        linear_regime_preset()
    }

    #[test]
    fn measured_mode_is_valid() {
        let v = validate(&measured_params()).unwrap();
        assert_relative_eq!(v.mech().omega_phi, 2.0 * PI * 480.0);
        assert_relative_eq!(v.sigma(), 2e7);
        assert!(v.warnings().is_empty() || v.warnings().iter().all(|w| matches!(w, Warning::TorqueMismatch { .. })));
    }

    #[test]
    fn zero_gamma_is_rejected() {
        let mut p = measured_params();
        p.mech.gamma = 0.0;
        let err = validate(&p).unwrap_err();
        assert!(err.contains(&ParamError::NonPositive("gamma")));
    }

    #[test]
    fn overdamped_is_rejected() {
        let mut p = measured_params();
        p.mech.gamma = p.mech.omega_phi * 1.5;
        let err = validate(&p).unwrap_err();
        assert!(err.0.iter().any(|e| matches!(e, ParamError::UnderdampedViolation { .. })));
    }

    #[test]
    fn full_bloch_step_bound() {
        let mut p = measured_params();
        p.sim.model = ModelKind::FullBloch;
        p.sim.dt = p.spin.t2_star / 2.0;
        let err = validate(&p).unwrap_err();
        assert!(err.0.iter().any(|e| matches!(e, ParamError::StepTooLarge { .. })));
        p.sim.dt = p.spin.t2_star / 10.0;
        assert!(validate(&p).is_ok());
    }

    #[test]
    fn rate_step_bound() {
        let mut p = measured_params();
        // 1/γ_las = 0.5 ms is the shortest scale here
        assert_relative_eq!(max_step(&p.mech, &p.spin, ModelKind::RateEq), 0.5e-3 / 50.0);
        p.sim.dt = 2e-5;
        assert!(validate(&p).is_err());
    }

    #[test]
    fn collects_all_violations() {
        let mut p = measured_params();
        p.mech.gamma = 0.0;
        p.mech.inertia = -1.0;
        p.sim.n_traj = 0;
        let err = validate(&p).unwrap_err();
        assert_eq!(err.0.len(), 3);
    }

    #[test]
    fn validation_is_idempotent() {
        let mut p = measured_params();
        p.drive.torque_coeff = None;
        let once = validate(&p).unwrap();
        let twice = validate(&once.to_raw()).unwrap();
        assert_eq!(once, twice);

        // an inconsistent direct value keeps warning on every pass
        p.drive.torque_coeff = Some(1.5e3);
        let once = validate(&p).unwrap();
        assert_eq!(once.warnings().len(), 1);
        assert_eq!(validate(&once.to_raw()).unwrap(), once);
    }

    #[test]
    fn derived_torque_when_unset() {
        let mut p = measured_params();
        p.drive.torque_coeff = None;
        let v = validate(&p).unwrap();
        assert_relative_eq!(v.torque_coeff(), HBAR * 1e8 * hz(260e6) / 1.4e-22);
    }

    #[test]
    fn torque_coefficient_values() {
        assert_eq!(torque_coefficient(0.0, hz(260e6), 1e-22), 0.0);
        // slope chosen so that ħNγ_eB = 1e-19 N·m
        let slope = 1e-19 / (HBAR * 1e8);
        let g = torque_coefficient(1e8, slope, 1e-22);
        assert_relative_eq!(g, 1e3, max_relative = 1e-12);
        // N = 1e8, 280 MHz/rad, I = 1.4e-22: hand arithmetic
        // 1.054571817e-34 * 1e8 * 2π*280e6 / 1.4e-22 = 1.3252140e5
        let g = torque_coefficient(1e8, hz(280e6), 1.4e-22);
        assert_relative_eq!(g, 1.325_214_0e5, max_relative = 1e-6);
    }

    #[test]
    fn torque_coefficient_scaling() {
        let base = torque_coefficient(1e8, 1e9, 1e-22);
        assert_relative_eq!(torque_coefficient(3e8, 1e9, 1e-22) / base, 3.0, max_relative = 1e-14);
        assert_relative_eq!(torque_coefficient(1e8, 2e9, 1e-22) / base, 2.0, max_relative = 1e-14);
        assert_relative_eq!(torque_coefficient(1e8, 1e9, 4e-22) / base, 0.25, max_relative = 1e-14);
    }

    #[test]
    fn static_shift_values() {
        assert_eq!(static_shift(1.5e3, 0.0, hz(480.0)), 0.0);
        let w = hz(480.0);
        assert_relative_eq!(static_shift(1.5e3, 1.0, w), 1.5e3 / (w * w));
        // 1.5e3 / (2π·480)² = 1.649e-4 rad
        assert_relative_eq!(static_shift(1.5e3, 1.0, w), 1.649_08e-4, max_relative = 1e-4);
    }

    #[test]
    fn static_shift_worked_example() {
        // 15 µm diamond sphere: I = (2/5) m r², ρ = 3510 kg/m³
        let r: f64 = 7.5e-6;
        let m = 3510.0 * 4.0 / 3.0 * PI * r.powi(3);
        let inertia = 0.4 * m * r * r;
        // γ_e B for 100 G: 2.8 MHz/G
        let slope = hz(2.8e6 * 100.0);
        let g = torque_coefficient(1e8, slope, inertia);
        let phi0 = static_shift(g, 1.0, hz(500.0));
        assert!(phi0 > 5e-3 / 3.0 && phi0 < 5e-3 * 3.0, "phi0 = {phi0}");
    }

    #[test]
    fn langevin_level() {
        let mut m = measured_params().mech;
        m.temperature = 0.0;
        assert_eq!(langevin_psd_level(&m), 0.0);
        m.temperature = 300.0;
        let l1 = langevin_psd_level(&m);
        m.gamma *= 2.0;
        assert_relative_eq!(langevin_psd_level(&m), 2.0 * l1);
        // 2 * 1.380649e-23 * 300 * 2π*16 * 1e-22
        m.gamma = hz(16.0);
        m.inertia = 1e-22;
        assert_relative_eq!(langevin_psd_level(&m), 8.327_9e-41, max_relative = 1e-4);
    }

    #[test]
    fn thermal_variance_values() {
        let mut m = measured_params().mech;
        m.temperature = 0.0;
        assert_eq!(thermal_variance(&m), 0.0);
        m.temperature = 300.0;
        let v = thermal_variance(&m);
        m.temperature = 1200.0;
        assert_relative_eq!(thermal_variance(&m), 4.0 * v);
        // kT/(Iω²) with T = 300 K, I = 1.4e-22, ω = 2π·480: 3.2526e-6 rad²
        assert_relative_eq!(v, 3.252_6e-6, max_relative = 1e-4);
        m.temperature = 300.0;
        let prod = thermal_variance(&m) * m.inertia * m.omega_phi * m.omega_phi;
        assert_relative_eq!(prod, BOLTZMANN * 300.0, max_relative = 1e-15);
    }
}
