//! Parameter sets and inputs shared by the benchmarks.

use spintorque::model::{hz, linear_regime_preset, validate, ModelKind};
use spintorque::ValidatedParams;

/// Cooling working point, 0.1 s at dt = 1e-5.
pub fn cooling(model: ModelKind) -> ValidatedParams {
    let mut p = linear_regime_preset();
    p.sim.model = model;
    if model == ModelKind::FullBloch {
        p.sim.dt = 5e-9;
        p.sim.duration = 1e-3;
    }
    validate(&p).expect("preset is valid")
}

/// 240 Hz mode inside the bistable window.
pub fn bistable() -> ValidatedParams {
    let mut p = linear_regime_preset();
    p.mech.omega_phi = hz(240.0);
    p.spin.gamma_las = 1e5;
    p.drive.torque_coeff = Some(1.5e6);
    p.drive.rabi = hz(80e3);
    p.drive.detuning = hz(-8.63e6);
    p.sim.dt = 2e-7;
    validate(&p).expect("preset is valid")
}

/// Damped two-tone test signal sampled at `fs`.
pub fn ringdown_signal(n: usize, fs: f64) -> (Vec<f64>, Vec<f64>) {
    let t: Vec<f64> = (0..n).map(|i| i as f64 / fs).collect();
    let y = t
        .iter()
        .map(|&t| {
            let w = hz(480.0);
            (-50.0 * t).exp() * (w * t).cos() + 0.3 * (-20.0 * t).exp() * (1.7 * w * t).sin()
        })
        .collect();
    (t, y)
}
