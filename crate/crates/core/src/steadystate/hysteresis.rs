use std::f64::consts::PI;

use super::{equilibrium_angle, SteadyError};
use crate::dynamics::{Stepper, SystemState};
use crate::model::{Drive, ValidatedParams};

/// Up- and down-sweep traces on a common ascending detuning grid.
#[derive(Debug, Clone, PartialEq)]
pub struct HysteresisResult {
    pub detunings: Vec<f64>,
    pub phi_up: Vec<f64>,
    pub phi_down: Vec<f64>,
    /// Detuning where the up-sweep jumps, if it does.
    pub switch_up: Option<f64>,
    pub switch_down: Option<f64>,
    /// ∫|φ_up − φ_down| dΔ (rad²/s).
    pub loop_area: f64,
}

/// Noise-free stepwise detuning sweep.
///
/// The detuning is held at each of `n` grid points for `dwell` seconds; the
/// recorded angle is the mean over the last libration period of the dwell.
/// The effective sweep rate is (step size)/dwell, which must be slow against
/// the mechanical damping.
pub fn hysteresis_sweep(
    params: &ValidatedParams,
    rabi: f64,
    detuning_from: f64,
    detuning_to: f64,
    n: usize,
    dwell: f64,
) -> Result<HysteresisResult, SteadyError> {
    let quiet = params.with_raw(|p| p.mech.temperature = 0.0)?;
    let lo = detuning_from.min(detuning_to);
    let hi = detuning_from.max(detuning_to);
    let n = n.max(2);
    let detunings: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();

    let phi_up = sweep(&quiet, rabi, detunings.iter().copied(), dwell)?;
    let mut phi_down = sweep(&quiet, rabi, detunings.iter().rev().copied(), dwell)?;
    phi_down.reverse();

    let mut loop_area = 0.0;
    for i in 1..n {
        let a = (phi_up[i - 1] - phi_down[i - 1]).abs();
        let b = (phi_up[i] - phi_down[i]).abs();
        loop_area += 0.5 * (a + b) * (detunings[i] - detunings[i - 1]);
    }
    Ok(HysteresisResult {
        switch_up: switch_point(&detunings, &phi_up),
        switch_down: switch_point(&detunings, &phi_down),
        detunings,
        phi_up,
        phi_down,
        loop_area,
    })
}

fn sweep(params: &ValidatedParams, rabi: f64, grid: impl Iterator<Item = f64>, dwell: f64) -> Result<Vec<f64>, SteadyError> {
    let dt = params.sim().dt;
    let stepper = Stepper::new(params, dt);
    let period = 2.0 * PI / params.mech().omega_phi;
    let n_dwell = (dwell / dt).round().max(1.0) as usize;
    let n_avg = ((period / dt).round() as usize).clamp(1, n_dwell);
    let mut out = Vec::new();
    let mut state: Option<SystemState> = None;
    let mut step = 0usize;
    for det in grid {
        let drive = Drive::new(rabi, det);
        let mut x = *state.get_or_insert_with(|| SystemState::steady(params, drive, equilibrium_angle(params, drive)));
        let mut acc = 0.0;
        for i in 0..n_dwell {
            x = stepper.step(&x, drive, drive, 0.0, step)?;
            step += 1;
            if i >= n_dwell - n_avg {
                acc += x.mech.phi;
            }
        }
        out.push(acc / n_avg as f64);
        state = Some(x);
    }
    Ok(out)
}

/// Midpoint of the largest jump, when it clearly stands out from the trace.
fn switch_point(det: &[f64], phi: &[f64]) -> Option<f64> {
    let mut jumps: Vec<(usize, f64)> = phi.windows(2).map(|w| (w[1] - w[0]).abs()).enumerate().collect();
    if jumps.len() < 3 {
        return None;
    }
    let (imax, big) = jumps.iter().copied().max_by(|a, b| a.1.total_cmp(&b.1))?;
    jumps.sort_by(|a, b| a.1.total_cmp(&b.1));
    let median = jumps[jumps.len() / 2].1;
    let span = phi.iter().copied().fold(f64::NEG_INFINITY, f64::max) - phi.iter().copied().fold(f64::INFINITY, f64::min);
    (big > 5.0 * median && big > 0.2 * span).then(|| 0.5 * (det[imax] + det[imax + 1]))
}
