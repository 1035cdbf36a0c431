use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use spintorque::analysis::{
    amplitude_histogram, equipartition_temperature, fit_psd_lorentzian, fit_ringdown, psd_initial_guess, welch_psd, Psd,
};
use spintorque::config::{linspace, Config, InitSpin, SweepAxis};
use spintorque::dynamics::{ensemble_stats, integrate_observed, integrate_trajectory, run_ensemble, SpinState, SystemState};
use spintorque::io::{fmt_num, read_trajectory, trajectory_table, CsvTable, TrajectoryData};
use spintorque::linres::{default_probe_amp, detuning_sweep, effective_dynamics, EffectiveDynamics, LinresError};
use spintorque::model::{to_hz, Drive, ValidatedParams, BOLTZMANN};
use spintorque::steadystate::{
    bistability_curve, effective_potential, equilibrium_angle, hysteresis_sweep, kramers_rates, lasing_threshold,
    ThresholdOptions,
};

use crate::output::{sha256_hex, RunInfo, RunOutput};
use crate::{load_config, AnalyzeMode, CliError, Loaded, SWEEP_SUCCESS_FRACTION};

fn numerical(e: impl std::fmt::Display) -> CliError {
    CliError::Numerical(e.to_string())
}

fn finish(out: RunOutput, command: &str, loaded: &Loaded, inputs: Vec<(String, String)>) -> Result<(), CliError> {
    out.finish(&RunInfo {
        command,
        config: &loaded.config,
        seed_source: loaded.seed_source,
        overrides: &loaded.overrides,
        inputs,
    })?;
    Ok(())
}

fn check_success(ok: usize, total: usize) -> Result<(), CliError> {
    if (ok as f64) < SWEEP_SUCCESS_FRACTION * total as f64 {
        return Err(CliError::Partial { ok, total });
    }
    Ok(())
}

/// Starting state: configured offset from the equilibrium angle of the drive at t = 0.
pub fn initial_state(config: &Config) -> Result<SystemState, CliError> {
    let p = &config.params;
    let drive = config.protocol()?.drive_at(0.0, p.drive_on());
    let phi = equilibrium_angle(p, drive) + config.init.phi_offset;
    let mut x = match config.init.spin {
        InitSpin::Steady => SystemState::steady(p, drive, phi),
        InitSpin::Ground => SystemState::new(phi, 0.0, SpinState::ground()),
    };
    x.mech.phi_dot = config.init.phi_dot;
    Ok(x)
}

pub fn simulate(loaded: &Loaded, out_dir: &Path) -> Result<(), CliError> {
    let config = &loaded.config;
    let p = &config.params;
    let protocol = config.protocol()?;
    let x0 = initial_state(config)?;
    let mut out = RunOutput::create(out_dir);
    if p.sim().n_traj == 1 {
        let tr = integrate_trajectory(x0, p, &protocol, p.sim().seed).map_err(numerical)?;
        out.write_csv("trajectory.csv", &trajectory_table(config, &tr, 0));
    } else {
        let stats = if config.write_trajectories {
            let ens = run_ensemble(x0, p, &protocol).map_err(numerical)?;
            for (k, tr) in ens.trajectories.iter().enumerate() {
                out.write_csv(&format!("traj_{k:04}.csv"), &trajectory_table(config, tr, k));
            }
            ens.stats
        } else {
            ensemble_stats(x0, p, &protocol).map_err(numerical)?
        };
        let mut t = CsvTable::new(&[
            "t", "mean_phi", "var_phi", "mean_pop0", "var_pop0", "mean_pop_m1", "var_pop_m1", "mean_pop_p1", "var_pop_p1",
        ])
        .with_config(config)
        .with_meta("kind", "\"ensemble\"")
        .with_meta("n_traj", stats.n_traj);
        for i in 0..stats.times.len() {
            t.push_nums(&[
                stats.times[i],
                stats.mean_phi[i],
                stats.var_phi[i],
                stats.mean_pop0[i],
                stats.var_pop0[i],
                stats.mean_pop_m1[i],
                stats.var_pop_m1[i],
                stats.mean_pop_p1[i],
                stats.var_pop_p1[i],
            ]);
        }
        out.write_csv("ensemble.csv", &t);
    }
    finish(out, "simulate", loaded, Vec::new())
}

fn linres_cells(r: &Result<EffectiveDynamics, LinresError>) -> Vec<String> {
    match r {
        Ok(e) => vec![
            fmt_num(to_hz(e.omega_eff)),
            fmt_num(to_hz(e.gamma_eff)),
            fmt_num(e.response.xi.re),
            fmt_num(e.response.xi.im),
        ],
        Err(_) => vec!["nan".into(); 4],
    }
}

fn status(r: &Result<EffectiveDynamics, LinresError>) -> String {
    match r {
        Ok(_) => "ok".into(),
        Err(e) => e.status().into(),
    }
}

/// Mean oscillator energy ½I(φ̇² + ω_φ²(φ − φ_eq)²) over the second half of a
/// stochastic run of `duration` at `drive`.
pub fn mean_energy(params: &ValidatedParams, drive: Drive, duration: f64, seed: u64) -> Result<f64, CliError> {
    let p = params
        .with_raw(|r| {
            r.drive.rabi = drive.rabi;
            r.drive.detuning = drive.detuning;
            r.sim.duration = duration;
            r.sim.record_stride = 1;
        })
        .map_err(numerical)?;
    let phi_eq = equilibrium_angle(&p, drive);
    let m = *p.mech();
    let (mut sum, mut n) = (0.0, 0usize);
    let half = 0.5 * duration;
    let x0 = SystemState::steady(&p, drive, phi_eq);
    integrate_observed(x0, &p, &spintorque::Protocol::always_on(), seed, |t, s| {
        if t >= half {
            let d = s.mech.phi - phi_eq;
            sum += 0.5 * m.inertia * (s.mech.phi_dot.powi(2) + m.omega_phi.powi(2) * d * d);
            n += 1;
        }
    })
    .map_err(numerical)?;
    Ok(sum / n.max(1) as f64)
}

pub fn sweep(loaded: &Loaded, out_dir: &Path) -> Result<(), CliError> {
    let config = &loaded.config;
    let p = &config.params;
    let s = &config.sweep;
    let amp = s.probe_amp.unwrap_or_else(|| default_probe_amp(p));
    let grid = linspace(s.from, s.to, s.n);
    let mut out = RunOutput::create(out_dir);
    let (table, ok) = match s.axis {
        SweepAxis::Detuning => {
            let pts = detuning_sweep(p, p.drive().rabi, &grid, amp);
            let mut t = CsvTable::new(&["detuning_hz", "omega_eff_hz", "gamma_eff_hz", "re_xi", "im_xi", "status"])
                .with_config(config)
                .with_meta("kind", "\"detuning_sweep\"");
            for pt in &pts {
                let mut row = vec![fmt_num(to_hz(pt.detuning))];
                row.extend(linres_cells(&pt.result));
                row.push(status(&pt.result));
                t.push(row);
            }
            (t, pts.iter().filter(|pt| pt.result.is_ok()).count())
        }
        SweepAxis::Rabi => {
            let detuning = p.drive().detuning;
            let rows: Vec<(Result<EffectiveDynamics, LinresError>, Result<f64, CliError>)> = grid
                .par_iter()
                .enumerate()
                .map(|(i, &rabi)| {
                    let drive = Drive::new(rabi, detuning);
                    let lin = effective_dynamics(p, drive, amp);
                    let energy = mean_energy(p, drive, s.energy_duration, p.sim().seed.wrapping_add(i as u64));
                    (lin, energy)
                })
                .collect();
            let mut t = CsvTable::new(&["rabi_khz", "omega_eff_hz", "gamma_eff_hz", "re_xi", "im_xi", "energy_j", "status"])
                .with_config(config)
                .with_meta("kind", "\"rabi_sweep\"");
            let mut ok = 0;
            for (rabi, (lin, energy)) in grid.iter().zip(&rows) {
                let mut row = vec![fmt_num(to_hz(*rabi) / 1e3)];
                row.extend(linres_cells(lin));
                row.push(energy.as_ref().map_or("nan".into(), |e| fmt_num(*e)));
                let st = match (lin, energy) {
                    (Ok(_), Ok(_)) => "ok".to_string(),
                    (Err(e), _) => e.status().to_string(),
                    (_, Err(_)) => "simulation_failed".to_string(),
                };
                ok += usize::from(st == "ok");
                row.push(st);
                t.push(row);
            }
            (t, ok)
        }
    };
    out.write_csv("sweep.csv", &table);
    finish(out, "sweep", loaded, Vec::new())?;
    check_success(ok, grid.len())
}

struct Series {
    t: Vec<f64>,
    phi: Vec<f64>,
}

/// (file name, sha256) of each input.
type InputHashes = Vec<(String, String)>;

fn load_inputs(inputs: &[PathBuf]) -> Result<(Vec<TrajectoryData>, InputHashes), CliError> {
    let mut data = Vec::new();
    let mut hashes = Vec::new();
    for path in inputs {
        let bytes = std::fs::read(path)?;
        let text = String::from_utf8(bytes.clone()).map_err(|e| CliError::Io(std::io::Error::other(e)))?;
        let d = read_trajectory(&text)?;
        if d.t.len() < 2 {
            return Err(CliError::Numerical(format!("{} has fewer than two samples", path.display())));
        }
        data.push(d);
        hashes.push((path.display().to_string(), sha256_hex(&bytes)));
    }
    Ok((data, hashes))
}

fn trimmed(d: &TrajectoryData, skip: f64) -> Series {
    let t0 = d.t[0] + skip;
    let start = d.t.iter().position(|t| *t >= t0).unwrap_or(d.t.len());
    Series { t: d.t[start..].to_vec(), phi: d.phi[start..].to_vec() }
}

pub fn analyze(inputs: &[PathBuf], mode: AnalyzeMode, out_dir: &Path, set: &[String]) -> Result<(), CliError> {
    let (data, hashes) = load_inputs(inputs)?;
    let loaded = load_config(&data[0].config.canonical(), set, None)?;
    let config = &loaded.config;
    let a = &config.analysis;
    let series: Vec<Series> = data.iter().map(|d| trimmed(d, a.skip)).collect();
    let mut out = RunOutput::create(out_dir);
    let mut report = String::new();
    let name = match mode {
        AnalyzeMode::Psd => {
            let mut psds: Vec<Psd> = Vec::new();
            for s in &series {
                let fs = 1.0 / (s.t[1] - s.t[0]);
                let seg = ((a.segment * fs).round() as usize).min(s.phi.len());
                psds.push(welch_psd(&s.phi, fs, seg, a.overlap).map_err(numerical)?);
            }
            let psd = Psd::average(&psds).ok_or_else(|| numerical("inputs have different sample grids"))?;
            let mut t = CsvTable::new(&["freq_hz", "psd"]).with_config(config).with_meta("kind", "\"psd\"");
            for (f, v) in psd.freqs.iter().zip(&psd.values) {
                t.push_nums(&[*f, *v]);
            }
            out.write_csv("psd.csv", &t);
            let band = match (a.band_lo, a.band_hi) {
                (Some(lo), Some(hi)) => Some((to_hz(lo), to_hz(hi))),
                _ => None,
            };
            let peak = psd_initial_guess(&psd).map_err(numerical)?.f0_hz;
            report.push_str(&format!("spectral peak at {peak:.4} Hz\n"));
            let fit = fit_psd_lorentzian(&psd, None, band);
            let fit = match fit {
                Ok(f) => f,
                Err(e) => {
                    // the spectrum itself is still a valid result
                    let mut t = CsvTable::new(&["peak_hz", "status"]).with_config(config).with_meta("kind", "\"psd_fit\"");
                    t.push(vec![fmt_num(peak), "fit_failed".into()]);
                    out.write_csv("fit_psd.csv", &t);
                    report.push_str(&format!("Lorentzian fit failed: {e}\n"));
                    out.write("report_psd.txt", report.as_bytes());
                    finish(out, "analyze", &loaded, hashes)?;
                    return Err(numerical(e));
                }
            };
            let mut t = CsvTable::new(&[
                "peak_hz",
                "omega_phi_hz", "gamma_hz", "amplitude_scale", "omega_std_hz", "gamma_std_hz", "residual_rms", "band_lo_hz", "band_hi_hz",
            ])
            .with_config(config)
            .with_meta("kind", "\"psd_fit\"");
            t.push_nums(&[
                fit.peak_hz,
                to_hz(fit.omega_phi_hat),
                to_hz(fit.gamma_hat),
                fit.amplitude_scale,
                to_hz(fit.omega_std),
                to_hz(fit.gamma_std),
                fit.residual_norm,
                fit.band_hz.0,
                fit.band_hz.1,
            ]);
            report.push_str(&format!(
                "PSD fit over {} segments ({} window, ENBW {:.4} Hz)\n  f_phi = {:.4} Hz\n  gamma/2pi = {:.4} Hz\n  amplitude scale = {:.4e}\n",
                psd.segment_count,
                psd.window_name,
                psd.resolution_bw,
                to_hz(fit.omega_phi_hat),
                to_hz(fit.gamma_hat),
                fit.amplitude_scale
            ));
            out.write_csv("fit_psd.csv", &t);
            "psd"
        }
        AnalyzeMode::Ringdown => {
            let n = series.iter().map(|s| s.phi.len()).min().unwrap_or(0);
            let mut mean = vec![0.0; n];
            for s in &series {
                for (m, v) in mean.iter_mut().zip(&s.phi) {
                    *m += v / series.len() as f64;
                }
            }
            let t_axis = &series[0].t[..n];
            let fit = fit_ringdown(t_axis, &mean, a.two_modes, None).map_err(numerical)?;
            let mut t = CsvTable::new(&["mode", "omega_hz", "gamma_hz", "amplitude_rad", "phase_rad", "phase_constrained", "offset_rad", "residual_rms"])
                .with_config(config)
                .with_meta("kind", "\"ringdown_fit\"")
                .with_meta("n_series", series.len());
            for (k, m) in std::iter::once(fit.mode1).chain(fit.mode2).enumerate() {
                t.push(vec![
                    (k + 1).to_string(),
                    fmt_num(to_hz(m.omega)),
                    fmt_num(to_hz(m.gamma)),
                    fmt_num(m.amplitude),
                    fmt_num(m.phase),
                    m.phase_constrained.to_string(),
                    fmt_num(fit.offset),
                    fmt_num(fit.residual_rms),
                ]);
                report.push_str(&format!(
                    "mode {}: f = {:.4} Hz, gamma/2pi = {:.4} Hz, amplitude = {:.4e} rad\n",
                    k + 1,
                    to_hz(m.omega),
                    to_hz(m.gamma),
                    m.amplitude
                ));
            }
            out.write_csv("fit_ringdown.csv", &t);
            "ringdown"
        }
        AnalyzeMode::Histogram => {
            let pooled: Vec<f64> = series.iter().flat_map(|s| s.phi.iter().copied()).collect();
            let h = amplitude_histogram(&pooled, a.hist_bins).map_err(numerical)?;
            let mut t = CsvTable::new(&["bin_lo", "bin_hi", "count"]).with_config(config).with_meta("kind", "\"histogram\"");
            for (i, c) in h.counts.iter().enumerate() {
                t.push(vec![fmt_num(h.bin_edges[i]), fmt_num(h.bin_edges[i + 1]), c.to_string()]);
            }
            out.write_csv("histogram.csv", &t);
            let mut t = CsvTable::new(&["n_samples", "excess_kurtosis", "bimodal"]).with_config(config).with_meta("kind", "\"histogram_stats\"");
            t.push(vec![pooled.len().to_string(), fmt_num(h.excess_kurtosis), h.bimodal.to_string()]);
            out.write_csv("fit_histogram.csv", &t);
            report.push_str(&format!("{} samples, excess kurtosis {:.4}, bimodal: {}\n", pooled.len(), h.excess_kurtosis, h.bimodal));
            "histogram"
        }
        AnalyzeMode::Temperature => {
            let pooled: Vec<f64> = series.iter().flat_map(|s| s.phi.iter().copied()).collect();
            let temp = equipartition_temperature(&pooled, &config.params).map_err(numerical)?;
            let var = temp * BOLTZMANN / (config.params.mech().inertia * config.params.mech().omega_phi.powi(2));
            let mut t = CsvTable::new(&["n_series", "n_samples", "variance_rad2", "temperature_k"])
                .with_config(config)
                .with_meta("kind", "\"temperature\"");
            t.push(vec![series.len().to_string(), pooled.len().to_string(), fmt_num(var), fmt_num(temp)]);
            out.write_csv("temperature.csv", &t);
            report.push_str(&format!("equipartition temperature {temp:.3} K from {} samples\n", pooled.len()));
            "temperature"
        }
    };
    out.write(&format!("report_{name}.txt"), report.as_bytes());
    finish(out, "analyze", &loaded, hashes)
}

pub fn bistability(loaded: &Loaded, out_dir: &Path) -> Result<(), CliError> {
    let config = &loaded.config;
    let p = &config.params;
    let b = &config.bistability;
    let rabi = b.rabi.unwrap_or(p.drive().rabi);
    let curve = bistability_curve(p, rabi, &linspace(b.from, b.to, b.n));
    let mut t = CsvTable::new(&["detuning_hz", "root1", "stab1", "root2", "stab2", "root3", "stab3"])
        .with_config(config)
        .with_meta("kind", "\"bistability\"");
    if let Some((lo, hi)) = curve.bistable_window() {
        t = t.with_meta("window_lo_hz", fmt_num(to_hz(lo))).with_meta("window_hi_hz", fmt_num(to_hz(hi)));
    }
    for (d, roots) in curve.detunings.iter().zip(&curve.branches) {
        let mut row = vec![fmt_num(to_hz(*d))];
        for k in 0..3 {
            match roots.get(k) {
                Some(r) => row.extend([fmt_num(r.phi_root), r.stability.label().to_string()]),
                None => row.extend([String::new(), String::new()]),
            }
        }
        t.push(row);
    }
    let mut out = RunOutput::create(out_dir);
    out.write_csv("bistability.csv", &t);
    finish(out, "bistability", loaded, Vec::new())
}

pub fn hysteresis(loaded: &Loaded, out_dir: &Path) -> Result<(), CliError> {
    let config = &loaded.config;
    let p = &config.params;
    let h = &config.hysteresis;
    let rabi = h.grid.rabi.unwrap_or(p.drive().rabi);
    let r = hysteresis_sweep(p, rabi, h.grid.from, h.grid.to, h.grid.n, h.dwell).map_err(numerical)?;
    let opt = |x: Option<f64>| x.map_or("nan".to_string(), |v| fmt_num(to_hz(v)));
    let mut t = CsvTable::new(&["detuning_hz", "phi_up", "phi_down"])
        .with_config(config)
        .with_meta("kind", "\"hysteresis\"")
        .with_meta("switch_up_hz", opt(r.switch_up))
        .with_meta("switch_down_hz", opt(r.switch_down))
        .with_meta("loop_area_rad_hz", fmt_num(to_hz(r.loop_area)));
    for i in 0..r.detunings.len() {
        t.push_nums(&[to_hz(r.detunings[i]), r.phi_up[i], r.phi_down[i]]);
    }
    let mut out = RunOutput::create(out_dir);
    out.write_csv("hysteresis.csv", &t);
    finish(out, "hysteresis", loaded, Vec::new())
}

pub fn potential(loaded: &Loaded, out_dir: &Path) -> Result<(), CliError> {
    let config = &loaded.config;
    let p = &config.params;
    let s = &config.potential;
    let drive = p.drive_on();
    let kt = BOLTZMANN * p.mech().temperature;
    let pot = effective_potential(p, drive, s.phi_min, s.phi_max, s.n);
    let mut t = CsvTable::new(&["phi_rad", "u_j", "u_kt"]).with_config(config).with_meta("kind", "\"potential\"");
    for (x, u) in pot.phi.iter().zip(&pot.u) {
        t.push_nums(&[*x, *u, u / kt]);
    }
    let mut out = RunOutput::create(out_dir);
    out.write_csv("potential.csv", &t);
    match kramers_rates(&pot, p, drive) {
        Ok(k) => {
            let dw = pot.double_well().expect("rates imply a double well");
            let mut t = CsvTable::new(&[
                "phi_a_rad", "phi_b_rad", "phi_c_rad", "depth_a_kt", "depth_b_kt", "rate_ab_per_s", "rate_ba_per_s", "residence_ratio",
            ])
            .with_config(config)
            .with_meta("kind", "\"kramers\"");
            t.push_nums(&[dw.phi_a, dw.phi_b, dw.phi_c, dw.depth_a / kt, dw.depth_b / kt, k.rate_ab, k.rate_ba, k.residence_ratio]);
            out.write_csv("kramers.csv", &t);
        }
        Err(e) => log::warn!("no Kramers rates: {e}"),
    }
    finish(out, "potential", loaded, Vec::new())
}

pub fn threshold(loaded: &Loaded, out_dir: &Path) -> Result<(), CliError> {
    let config = &loaded.config;
    let p = &config.params;
    let s = &config.threshold;
    let grid = linspace(s.rabi_from, s.rabi_to, s.n);
    let opts = ThresholdOptions { verify: s.verify, ..Default::default() };
    let results: Vec<_> = s.inv_t1.par_iter().map(|inv| lasing_threshold(p, &grid, 1.0 / inv, &opts)).collect();
    let mut t = CsvTable::new(&["inv_t1_khz", "omega_th_khz"]).with_config(config).with_meta("kind", "\"threshold\"");
    let mut check = CsvTable::new(&["inv_t1_khz", "amp_from_small", "amp_from_large", "amp_below", "passed"])
        .with_config(config)
        .with_meta("kind", "\"threshold_check\"");
    let mut ok = 0;
    for (inv, r) in s.inv_t1.iter().zip(&results) {
        let inv_khz = fmt_num(inv / 1e3);
        match r {
            Ok(r) => {
                ok += 1;
                t.push(vec![inv_khz.clone(), fmt_num(r.omega_th / (2.0 * PI) / 1e3)]);
                if let Some(c) = r.check {
                    check.push(vec![
                        inv_khz,
                        fmt_num(c.amp_from_small),
                        fmt_num(c.amp_from_large),
                        fmt_num(c.amp_below),
                        c.passed().to_string(),
                    ]);
                }
            }
            Err(e) => {
                log::warn!("1/T1 = {inv_khz} kHz: {e}");
                t.push(vec![inv_khz, "nan".into()]);
            }
        }
    }
    let mut out = RunOutput::create(out_dir);
    out.write_csv("threshold.csv", &t);
    if s.verify {
        out.write_csv("threshold_check.csv", &check);
    }
    finish(out, "threshold", loaded, Vec::new())?;
    check_success(ok, s.inv_t1.len())
}
