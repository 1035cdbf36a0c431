use super::{equilibrium_angle, SteadyError};
use crate::dynamics::{Stepper, SystemState};
use crate::linres::{default_probe_amp, effective_dynamics};
use crate::model::{Drive, ValidatedParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdOptions {
    /// Run the noise-free limit-cycle check around the threshold.
    pub verify: bool,
    /// Simulated time of each verification run (s).
    pub verify_duration: f64,
    /// Rabi factors above and below threshold used for verification.
    pub above: f64,
    pub below: f64,
    /// Relative bisection tolerance on Ω.
    pub rel_tol: f64,
}

impl Default for ThresholdOptions {
    fn default() -> Self {
        ThresholdOptions { verify: false, verify_duration: 2.0, above: 1.25, below: 0.75, rel_tol: 1e-4 }
    }
}

/// Outcome of the noise-free check on either side of the threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimitCycleCheck {
    /// Final oscillation amplitude above threshold from a small and a large start (rad).
    pub amp_from_small: f64,
    pub amp_from_large: f64,
    /// Final amplitude below threshold, starting from the small displacement.
    pub amp_below: f64,
    pub start_small: f64,
    pub start_large: f64,
}

impl LimitCycleCheck {
    /// Above-threshold amplitude independent of start within 5%, and decay below.
    pub fn passed(&self) -> bool {
        let mean = 0.5 * (self.amp_from_small + self.amp_from_large);
        (self.amp_from_small - self.amp_from_large).abs() <= 0.05 * mean
            && self.amp_from_small > self.start_small
            && self.amp_below < self.start_small
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdResult {
    pub t1: f64,
    /// Rabi angular frequency where γ_eff crosses zero (rad/s).
    pub omega_th: f64,
    pub check: Option<LimitCycleCheck>,
}

/// Rabi frequency at which γ_eff first becomes negative on `rabi_grid`,
/// refined by bisection, with the spin T1 set to `t1`.
pub fn lasing_threshold(
    params: &ValidatedParams,
    rabi_grid: &[f64],
    t1: f64,
    opts: &ThresholdOptions,
) -> Result<ThresholdResult, SteadyError> {
    let p = params.with_raw(|r| r.spin.t1 = t1)?;
    let detuning = p.drive().detuning;
    let amp = default_probe_amp(&p);
    let gamma_eff = |rabi: f64| effective_dynamics(&p, Drive::new(rabi, detuning), amp).map(|e| e.gamma_eff);

    let mut prev: Option<(f64, f64)> = None;
    let mut bracket = None;
    for &rabi in rabi_grid {
        let g = gamma_eff(rabi)?;
        if let Some((r0, g0)) = prev {
            if g0 > 0.0 && g <= 0.0 {
                bracket = Some((r0, rabi));
                break;
            }
        }
        prev = Some((rabi, g));
    }
    let (mut lo, mut hi) = bracket.ok_or(SteadyError::NoSignChange)?;
    while hi - lo > opts.rel_tol * hi {
        let mid = 0.5 * (lo + hi);
        if gamma_eff(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let omega_th = 0.5 * (lo + hi);
    let check = if opts.verify { Some(verify_limit_cycle(&p, omega_th, opts)?) } else { None };
    Ok(ThresholdResult { t1, omega_th, check })
}

/// Noise-free oscillation amplitude at the end of a run started at φ_eq + `start`.
pub fn final_amplitude(params: &ValidatedParams, drive: Drive, start: f64, duration: f64) -> Result<f64, SteadyError> {
    let quiet = params.with_raw(|r| r.mech.temperature = 0.0)?;
    let dt = quiet.sim().dt;
    let stepper = Stepper::new(&quiet, dt);
    let phi_eq = equilibrium_angle(&quiet, drive);
    let mut x = SystemState::steady(&quiet, drive, phi_eq);
    x.mech.phi += start;
    let n = (duration / dt).round() as usize;
    let tail = n / 10;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for step in 0..n {
        x = stepper.step(&x, drive, drive, 0.0, step)?;
        if step >= n - tail {
            lo = lo.min(x.mech.phi);
            hi = hi.max(x.mech.phi);
        }
    }
    Ok(0.5 * (hi - lo))
}

fn verify_limit_cycle(params: &ValidatedParams, omega_th: f64, opts: &ThresholdOptions) -> Result<LimitCycleCheck, SteadyError> {
    let detuning = params.drive().detuning;
    let up = Drive::new(opts.above * omega_th, detuning);
    let down = Drive::new(opts.below * omega_th, detuning);
    let start_small = 1e-3;
    let start_large = 2e-2;
    Ok(LimitCycleCheck {
        amp_from_small: final_amplitude(params, up, start_small, opts.verify_duration)?,
        amp_from_large: final_amplitude(params, up, start_large, opts.verify_duration)?,
        amp_below: final_amplitude(params, down, start_small, opts.verify_duration)?,
        start_small,
        start_large,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{hz, linear_regime_preset, validate, PhysicalParams};

    fn blue() -> PhysicalParams {
        let mut p = linear_regime_preset();
        p.spin.gamma_las = 5000.0;
        p.drive.detuning = hz(3e6);
        p.sim.dt = 4e-6;
        p
    }

    fn grid() -> Vec<f64> {
        (1..=30).map(|i| hz(5e3 * i as f64)).collect()
    }

    #[test]
    fn threshold_exists_and_verifies() {
        let v = validate(&blue()).unwrap();
        let opts = ThresholdOptions { verify: true, ..Default::default() };
        let r = lasing_threshold(&v, &grid(), 1e-3, &opts).unwrap();
        assert!(r.omega_th > hz(10e3) && r.omega_th < hz(100e3));
        let c = r.check.unwrap();
        assert!(c.passed(), "{c:?}");
    }

    #[test]
    fn heavy_damping_has_no_sign_change() {
        let mut p = blue();
        p.mech.gamma = hz(200.0);
        let v = validate(&p).unwrap();
        let err = lasing_threshold(&v, &grid(), 1e-3, &ThresholdOptions::default()).unwrap_err();
        assert_eq!(err, SteadyError::NoSignChange);
    }

    #[test]
    fn threshold_monotone_in_relaxation() {
        let v = validate(&blue()).unwrap();
        let opts = ThresholdOptions::default();
        let th: Vec<f64> =
            [1e3, 2e3, 3e3].iter().map(|r| lasing_threshold(&v, &grid(), 1.0 / r, &opts).unwrap().omega_th).collect();
        assert!(th[0] < th[1] && th[1] < th[2], "{th:?}");
        let damped = validate(&PhysicalParams { mech: crate::model::MechanicalParams { gamma: hz(20.0), ..blue().mech }, ..blue() })
            .unwrap();
        let th_damped = lasing_threshold(&damped, &grid(), 1e-3, &opts).unwrap().omega_th;
        assert!(th_damped >= th[0]);
    }
}
