use rayon::prelude::*;

use super::{integrate_trajectory, DynamicsError, Protocol, SystemState, Trajectory};
use crate::model::ValidatedParams;

/// Per-time ensemble mean and population variance (divided by n).
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub n_traj: usize,
    pub times: Vec<f64>,
    pub mean_phi: Vec<f64>,
    pub var_phi: Vec<f64>,
    pub mean_pop0: Vec<f64>,
    pub var_pop0: Vec<f64>,
    pub mean_pop_m1: Vec<f64>,
    pub var_pop_m1: Vec<f64>,
    pub mean_pop_p1: Vec<f64>,
    pub var_pop_p1: Vec<f64>,
}

/// Welford accumulator over trajectories, fed in index order.
struct Accumulator {
    n: usize,
    times: Vec<f64>,
    // mean and M2 for φ, pop0, pop_m1, pop_p1
    mean: [Vec<f64>; 4],
    m2: [Vec<f64>; 4],
}

impl Accumulator {
    fn new() -> Self {
        Accumulator { n: 0, times: Vec::new(), mean: Default::default(), m2: Default::default() }
    }

    fn add(&mut self, tr: &Trajectory) {
        if self.n == 0 {
            self.times = tr.times.clone();
            for k in 0..4 {
                self.mean[k] = vec![0.0; tr.len()];
                self.m2[k] = vec![0.0; tr.len()];
            }
        }
        self.n += 1;
        let n = self.n as f64;
        for (i, s) in tr.states.iter().enumerate() {
            let xs = [s.mech.phi, s.spin.pop0, s.spin.pop_m1, s.spin.pop_p1];
            for ((x, mean), m2) in xs.iter().zip(&mut self.mean).zip(&mut self.m2) {
                let d = x - mean[i];
                mean[i] += d / n;
                m2[i] += d * (x - mean[i]);
            }
        }
    }

    fn finish(self) -> EnsembleStats {
        let n = self.n as f64;
        let [m_phi, m_p0, m_m1, m_p1] = self.mean;
        let [v_phi, v_p0, v_m1, v_p1] = self.m2.map(|v| v.into_iter().map(|x| x / n).collect::<Vec<_>>());
        EnsembleStats {
            n_traj: self.n,
            times: self.times,
            mean_phi: m_phi,
            var_phi: v_phi,
            mean_pop0: m_p0,
            var_pop0: v_p0,
            mean_pop_m1: m_m1,
            var_pop_m1: v_m1,
            mean_pop_p1: m_p1,
            var_pop_p1: v_p1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Ensemble {
    pub trajectories: Vec<Trajectory>,
    pub stats: EnsembleStats,
}

/// Runs `n_traj` trajectories with seeds seed+k and keeps all of them.
pub fn run_ensemble(initial: SystemState, params: &ValidatedParams, protocol: &Protocol) -> Result<Ensemble, DynamicsError> {
    let trajectories = ensemble_map(initial, params, protocol, |_, tr| tr)?;
    let mut acc = Accumulator::new();
    for tr in &trajectories {
        acc.add(tr);
    }
    Ok(Ensemble { trajectories, stats: acc.finish() })
}

/// Ensemble statistics without keeping the trajectories.
///
/// Trajectories are integrated in parallel chunks but reduced strictly in
/// index order, so the result does not depend on the worker count.
pub fn ensemble_stats(initial: SystemState, params: &ValidatedParams, protocol: &Protocol) -> Result<EnsembleStats, DynamicsError> {
    let n = params.sim().n_traj;
    let seed = params.sim().seed;
    let chunk = 2 * rayon::current_num_threads().max(1);
    let mut acc = Accumulator::new();
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        let batch: Result<Vec<Trajectory>, DynamicsError> = (start..end)
            .into_par_iter()
            .map(|k| integrate_trajectory(initial, params, protocol, seed.wrapping_add(k as u64)))
            .collect();
        for tr in &batch? {
            acc.add(tr);
        }
        start = end;
    }
    Ok(acc.finish())
}

/// Integrates every trajectory of the ensemble and maps it through `f`,
/// returning results in trajectory order.
pub fn ensemble_map<T, F>(initial: SystemState, params: &ValidatedParams, protocol: &Protocol, f: F) -> Result<Vec<T>, DynamicsError>
where
    T: Send,
    F: Fn(usize, Trajectory) -> T + Sync,
{
    let seed = params.sim().seed;
    (0..params.sim().n_traj)
        .into_par_iter()
        .map(|k| integrate_trajectory(initial, params, protocol, seed.wrapping_add(k as u64)).map(|tr| f(k, tr)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::SpinState;
    use crate::model::{linear_regime_preset, validate};

    fn params(n_traj: usize) -> ValidatedParams {
        let mut p = linear_regime_preset();
        p.sim.duration = 0.02;
        p.sim.n_traj = n_traj;
        validate(&p).unwrap()
    }

    #[test]
    fn single_trajectory_stats() {
        let v = params(1);
        let init = SystemState::new(1e-3, 0.0, SpinState::ground());
        let e = run_ensemble(init, &v, &Protocol::always_on()).unwrap();
        let tr = &e.trajectories[0];
        assert_eq!(e.stats.mean_phi, tr.phi());
        assert!(e.stats.var_phi.iter().all(|&x| x == 0.0));
        assert_eq!(tr.seed, v.sim().seed);
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let v = params(7);
        let init = SystemState::new(1e-3, 0.0, SpinState::ground());
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| ensemble_stats(init, &v, &Protocol::always_on()).unwrap())
        };
        let a = run(1);
        let b = run(3);
        assert_eq!(a, b);
        let full = run_ensemble(init, &v, &Protocol::always_on()).unwrap();
        assert_eq!(full.stats, a);
        let seeds: Vec<u64> = full.trajectories.iter().map(|t| t.seed).collect();
        assert_eq!(seeds, (0..7).map(|k| v.sim().seed + k).collect::<Vec<_>>());
    }
}
