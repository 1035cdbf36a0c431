use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{derivs, DynamicsError, Protocol, SystemState, COHERENCE_MAX, POP_EPS};
use crate::model::{Drive, ModelKind, ValidatedParams, BOLTZMANN};

/// Gaussian angular-velocity kicks of standard deviation sqrt(2kTγ·dt/I).
///
/// Each trajectory owns one ChaCha8 stream keyed by its seed; kick n is the
/// n-th draw of that stream.
#[derive(Debug, Clone)]
pub struct ThermalKicks {
    rng: ChaCha8Rng,
    std: f64,
}

impl ThermalKicks {
    pub fn new(params: &ValidatedParams, dt: f64, seed: u64) -> Self {
        let m = params.mech();
        let std = (2.0 * BOLTZMANN * m.temperature * m.gamma * dt / m.inertia).sqrt();
        ThermalKicks { rng: ChaCha8Rng::seed_from_u64(seed), std }
    }

    pub fn std(&self) -> f64 {
        self.std
    }

    #[inline]
    pub fn next_kick(&mut self) -> f64 {
        if self.std == 0.0 {
            return 0.0;
        }
        let z: f64 = self.rng.sample(StandardNormal);
        self.std * z
    }
}

/// One fixed-step stochastic Heun step for the model in `params`.
pub struct Stepper<'a> {
    params: &'a ValidatedParams,
    dt: f64,
}

impl<'a> Stepper<'a> {
    pub fn new(params: &'a ValidatedParams, dt: f64) -> Self {
        Stepper { params, dt }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Advances `x` by one step. `d0` and `d1` are the drives at the start and
    /// end of the step; the same velocity kick enters predictor and corrector.
    #[inline]
    pub fn step(&self, x: &SystemState, d0: Drive, d1: Drive, kick: f64, step: usize) -> Result<SystemState, DynamicsError> {
        let f0 = derivs(x, self.params, d0).map_err(|_| DynamicsError::NonFinite { step })?;
        let mut pred = x.add_scaled(&f0, self.dt);
        pred.mech.phi_dot += kick;
        let f1 = derivs(&pred, self.params, d1).map_err(|_| DynamicsError::NonFinite { step })?;
        let mut next = x.add_scaled(&f0, 0.5 * self.dt).add_scaled(&f1, 0.5 * self.dt);
        next.mech.phi_dot += kick;
        sanitize(&mut next, self.params.sim().model, step)?;
        Ok(next)
    }
}

/// Checks bounds, then clamps and renormalizes the populations.
fn sanitize(x: &mut SystemState, model: ModelKind, step: usize) -> Result<(), DynamicsError> {
    if !x.is_finite() {
        return Err(DynamicsError::NonFinite { step });
    }
    if x.mech.phi.abs() >= std::f64::consts::FRAC_PI_2 {
        return Err(DynamicsError::InvariantViolated { step, which: "|phi| >= pi/2".into() });
    }
    let s = &mut x.spin;
    for (v, name) in [(s.pop0, "pop0"), (s.pop_m1, "pop_m1"), (s.pop_p1, "pop_p1")] {
        if !(-POP_EPS..=1.0 + POP_EPS).contains(&v) {
            return Err(DynamicsError::InvariantViolated { step, which: format!("{name} = {v:e} out of [0, 1]") });
        }
    }
    s.pop0 = s.pop0.clamp(0.0, 1.0);
    s.pop_m1 = s.pop_m1.clamp(0.0, 1.0);
    s.pop_p1 = s.pop_p1.clamp(0.0, 1.0);
    let total = s.pop0 + s.pop_m1 + s.pop_p1;
    s.pop0 /= total;
    s.pop_m1 /= total;
    s.pop_p1 /= total;
    if model == ModelKind::FullBloch && s.coherence.norm() > COHERENCE_MAX {
        return Err(DynamicsError::InvariantViolated { step, which: format!("|S| = {:e} > 0.5", s.coherence.norm()) });
    }
    Ok(())
}

/// Uniformly sampled output of one integration.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<SystemState>,
    pub params: ValidatedParams,
    pub seed: u64,
    pub model: ModelKind,
    pub protocol: Protocol,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Sample spacing dt·record_stride.
    pub fn sample_dt(&self) -> f64 {
        self.params.sim().dt * self.params.sim().record_stride as f64
    }

    pub fn phi(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.mech.phi).collect()
    }
}

/// Integrates from `initial` and hands every recorded sample to `observer`.
///
/// Samples are taken at steps 0, stride, 2·stride, … below n_steps, so a run
/// yields n_steps/stride samples.
pub fn integrate_observed(
    initial: SystemState,
    params: &ValidatedParams,
    protocol: &Protocol,
    seed: u64,
    mut observer: impl FnMut(f64, &SystemState),
) -> Result<(), DynamicsError> {
    let sim = params.sim();
    let dt = sim.dt;
    let stride = sim.record_stride;
    let n_steps = sim.n_steps();
    let base = params.drive_on();
    let stepper = Stepper::new(params, dt);
    let mut kicks = ThermalKicks::new(params, dt, seed);
    let mut x = initial;
    let mut d0 = protocol.drive_at(0.0, base);
    for step in 0..n_steps {
        let t = step as f64 * dt;
        if step % stride == 0 {
            observer(t, &x);
        }
        let d1 = protocol.drive_at(t + dt, base);
        x = stepper.step(&x, d0, d1, kicks.next_kick(), step)?;
        d0 = d1;
    }
    Ok(())
}

/// Integrates one trajectory and keeps every recorded sample.
pub fn integrate_trajectory(
    initial: SystemState,
    params: &ValidatedParams,
    protocol: &Protocol,
    seed: u64,
) -> Result<Trajectory, DynamicsError> {
    let cap = params.sim().n_steps() / params.sim().record_stride + 1;
    let mut times = Vec::with_capacity(cap);
    let mut states = Vec::with_capacity(cap);
    integrate_observed(initial, params, protocol, seed, |t, s| {
        times.push(t);
        states.push(*s);
    })?;
    Ok(Trajectory {
        times,
        states,
        params: params.clone(),
        seed,
        model: params.sim().model,
        protocol: protocol.clone(),
    })
}
