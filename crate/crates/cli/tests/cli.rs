use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use spintorque::config::Config;
use spintorque::io::{CsvTable, TRAJECTORY_HEADER};
use spintorque::model::{hz, BOLTZMANN};
use spintorque::steadystate::{lasing_threshold, ThresholdOptions};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_spintorque"));
    c.env_remove("SPINTORQUE_SEED").arg("--quiet");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.toml");
    std::fs::write(&p, text).unwrap();
    p
}

fn table(p: &Path) -> CsvTable {
    CsvTable::parse(&std::fs::read_to_string(p).unwrap()).unwrap()
}

const LASING: &str = "spin.gamma_las_per_s = 5000
spin.inv_t1_khz = 1
drive.detuning_mhz = 3
sim.dt_s = 4e-6
sim.duration_s = 1.5
sim.record_stride = 10
analysis.skip_s = 0.75
";

#[test]
fn minimal_decoupled_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "drive.torque_coeff_rad_s2 = 0\nsim.duration_s = 0.2\nsim.dt_s = 1e-5\nsim.record_stride = 20\n");
    let out = dir.path().join("out");
    let o = run(&["simulate", "--config", path(&cfg), "--out", path(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let t = table(&out.join("trajectory.csv"));
    assert_eq!(t.header, TRAJECTORY_HEADER);
    assert_eq!(t.rows.len(), 1000);
    let entries: Vec<_> = std::fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(entries.len(), 2);
    let manifest: toml::Table = std::fs::read_to_string(out.join("manifest.toml")).unwrap().parse().unwrap();
    assert_eq!(manifest["command"].as_str(), Some("simulate"));
    assert_eq!(manifest["seed"].as_integer(), Some(1));
    let embedded = Config::parse(manifest["config"].as_str().unwrap(), &[]).unwrap();
    assert_eq!(embedded.params.torque_coeff(), 0.0);
}

#[test]
fn reruns_are_byte_identical_and_seed_env_applies() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "sim.duration_s = 0.05\n");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    run(&["simulate", "--config", path(&cfg), "--out", path(&a)]);
    run(&["simulate", "--config", path(&cfg), "--out", path(&b)]);
    let o = bin().env("SPINTORQUE_SEED", "99").args(["simulate", "--config", path(&cfg), "--out", path(&c)]).output().unwrap();
    assert_eq!(code(&o), 0);
    let read = |d: &Path| std::fs::read(d.join("trajectory.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
    let manifest: toml::Table = std::fs::read_to_string(c.join("manifest.toml")).unwrap().parse().unwrap();
    assert_eq!(manifest["seed"].as_integer(), Some(99));
    assert_eq!(manifest["seed_source"].as_str(), Some("env"));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "mech.omega_hz = 480\n");
    let out = dir.path().join("out");
    assert_eq!(code(&run(&["simulate", "--config", path(&cfg), "--out", path(&out)])), 2);
    assert!(!out.exists());
    assert_eq!(code(&run(&["simulate", "--out", path(&out), "--set", "mech.gamma_hz=-1"])), 2);
    assert_eq!(code(&run(&["simulate", "--out", path(&out), "--set", "noequals"])), 2);
}

#[test]
fn analyze_rejects_foreign_csv() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("x.csv");
    std::fs::write(&input, "time,angle\n0,1\n").unwrap();
    let o = run(&["analyze", "--input", path(&input), "--mode", "psd", "--out", path(&dir.path().join("o"))]);
    assert_eq!(code(&o), 2);
}

/// Trajectory CSV holding `phi(t)` sampled at `fs` for `n` samples.
fn synthetic_trajectory(dir: &Path, fs: f64, n: usize, phi: impl Fn(f64) -> f64) -> PathBuf {
    let config = Config::parse("", &[]).unwrap();
    let mut t = CsvTable::new(&TRAJECTORY_HEADER).with_config(&config);
    for i in 0..n {
        let time = i as f64 / fs;
        t.push_nums(&[time, phi(time), 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    }
    let p = dir.join("synthetic.csv");
    std::fs::write(&p, t.to_bytes()).unwrap();
    p
}

#[test]
fn pure_tone_psd_peak() {
    let dir = tempfile::tempdir().unwrap();
    let input = synthetic_trajectory(dir.path(), 4000.0, 40_000, |t| 1e-3 * (2.0 * PI * 333.0 * t).sin());
    let out = dir.path().join("o");
    let o = run(&["analyze", "--input", path(&input), "--mode", "psd", "--out", path(&out)]);
    // a line has no Lorentzian wings; the fit may be refused but the peak is reported
    assert!([0, 3].contains(&code(&o)), "{}", String::from_utf8_lossy(&o.stderr));
    let fit = table(&out.join("fit_psd.csv"));
    let f = fit.column("peak_hz").unwrap()[0];
    assert!((f - 333.0).abs() < 1.0, "{f}");
    assert_eq!(table(&out.join("psd.csv")).header, ["freq_hz", "psd"]);
}

#[test]
fn featureless_psd_fit_exits_3_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let input = synthetic_trajectory(dir.path(), 1000.0, 5000, |_| 0.25);
    let out = dir.path().join("o");
    assert_eq!(code(&run(&["analyze", "--input", path(&input), "--mode", "psd", "--out", path(&out)])), 3);
    assert!(!out.exists());
}

#[test]
fn thermal_ensemble_temperature() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "drive.torque_coeff_rad_s2 = 0\nsim.n_traj = 20\nsim.duration_s = 4\nsim.record_stride = 50\nsim.write_trajectories = true\nsim.seed = 11\nanalysis.skip_s = 0.1\n",
    );
    let sim = dir.path().join("sim");
    assert_eq!(code(&run(&["simulate", "--config", path(&cfg), "--out", path(&sim)])), 0);
    assert!(sim.join("ensemble.csv").exists());
    let mut args: Vec<String> = vec!["analyze".into(), "--mode".into(), "temperature".into()];
    for k in 0..20 {
        args.push("--input".into());
        args.push(path(&sim.join(format!("traj_{k:04}.csv"))).into());
    }
    let out = dir.path().join("t");
    args.extend(["--out".into(), path(&out).into()]);
    let o = bin().args(&args).output().unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let temp = table(&out.join("temperature.csv")).column("temperature_k").unwrap()[0];
    assert!((temp - 300.0).abs() < 15.0, "{temp}");
    let manifest: toml::Table = std::fs::read_to_string(out.join("manifest.toml")).unwrap().parse().unwrap();
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 20);
}

#[test]
fn lasing_histogram_is_bimodal() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), LASING);
    for (rabi, bimodal) in [("45", "true"), ("15", "false")] {
        let sim = dir.path().join(format!("sim{rabi}"));
        let o = run(&["simulate", "--config", path(&cfg), "--set", &format!("drive.rabi_khz={rabi}"), "--out", path(&sim)]);
        assert_eq!(code(&o), 0);
        let out = dir.path().join(format!("h{rabi}"));
        let o = run(&["analyze", "--input", path(&sim.join("trajectory.csv")), "--mode", "histogram", "--out", path(&out)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let stats = table(&out.join("fit_histogram.csv"));
        assert_eq!(stats.rows[0][2], bimodal, "Ω/2π = {rabi} kHz");
    }
}

#[test]
fn cooled_ringdown_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "mech.temperature_k = 0\ninit.phi_offset_mrad = 1\nsim.duration_s = 0.3\nsim.record_stride = 5\n",
    );
    let sim = dir.path().join("sim");
    assert_eq!(code(&run(&["simulate", "--config", path(&cfg), "--out", path(&sim)])), 0);
    let out = dir.path().join("fit");
    let o = run(&["analyze", "--input", path(&sim.join("trajectory.csv")), "--mode", "ringdown", "--out", path(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let fit = table(&out.join("fit_ringdown.csv"));
    let gamma = fit.column("gamma_hz").unwrap()[0];
    let f = fit.column("omega_hz").unwrap()[0];
    // red detuning: damping above the bare 16 Hz, frequency near 480 Hz
    assert!(gamma > 16.0 * 1.5, "{gamma}");
    assert!((f - 480.0).abs() < 20.0, "{f}");
}

#[test]
fn sweep_single_point_and_undriven() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("one");
    assert_eq!(code(&run(&["sweep", "--out", path(&out), "--set", "sweep.n=1"])), 0);
    let t = table(&out.join("sweep.csv"));
    assert_eq!(t.header, ["detuning_hz", "omega_eff_hz", "gamma_eff_hz", "re_xi", "im_xi", "status"]);
    assert_eq!(t.rows.len(), 1);

    let out = dir.path().join("off");
    assert_eq!(code(&run(&["sweep", "--out", path(&out), "--set", "drive.rabi_khz=0", "--set", "sweep.n=5"])), 0);
    let t = table(&out.join("sweep.csv"));
    for g in t.column("gamma_eff_hz").unwrap() {
        assert!((g - 16.0).abs() < 1e-9, "{g}");
    }
}

#[test]
fn nonlinear_probes_fail_the_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = run(&["sweep", "--out", path(&out), "--set", "sweep.n=3", "--set", "sweep.probe_amp_rad=0.05"]);
    assert_eq!(code(&o), 4);
    let t = table(&out.join("sweep.csv"));
    assert!(t.rows.iter().all(|r| r[5] != "ok"));
}

#[test]
fn rabi_sweep_energy_kinks_at_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), LASING);
    let config = Config::parse(LASING, &[]).unwrap();
    let th = lasing_threshold(&config.params, &(1..=30).map(|i| hz(5e3 * i as f64)).collect::<Vec<_>>(), 1e-3, &ThresholdOptions::default())
        .unwrap()
        .omega_th;
    let out = dir.path().join("o");
    let o = run(&[
        "sweep", "--config", path(&cfg), "--axis", "rabi", "--out", path(&out),
        "--set", "sweep.from_khz=5", "--set", "sweep.to_khz=60", "--set", "sweep.n=12", "--set", "sweep.energy_duration_s=1.5",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let t = table(&out.join("sweep.csv"));
    let rabi = t.column("rabi_khz").unwrap();
    let energy = t.column("energy_j").unwrap();
    let kt = BOLTZMANN * 300.0;
    let th_khz = th / (2.0 * PI * 1e3);
    for (r, e) in rabi.iter().zip(&energy) {
        if *r < 0.8 * th_khz {
            assert!(*e < 10.0 * kt, "Ω = {r} kHz: {} kT", e / kt);
        }
        if *r > 1.2 * th_khz {
            assert!(*e > 10.0 * kt, "Ω = {r} kHz: {} kT", e / kt);
        }
    }
}

#[test]
fn steady_state_commands() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "mech.omega_phi_hz = 240\nspin.gamma_las_per_s = 1e5\ndrive.torque_coeff_rad_s2 = 1.5e6\ndrive.rabi_khz = 80\ndrive.detuning_mhz = -8.63\nsim.dt_s = 2e-7\nhysteresis.n = 21\n",
    );
    for cmd in ["bistability", "hysteresis", "potential"] {
        let out = dir.path().join(cmd);
        let o = run(&[cmd, "--config", path(&cfg), "--out", path(&out)]);
        assert_eq!(code(&o), 0, "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let b = table(&dir.path().join("bistability/bistability.csv"));
    assert_eq!(b.header, ["detuning_hz", "root1", "stab1", "root2", "stab2", "root3", "stab3"]);
    assert!(b.rows.iter().any(|r| r[6] == "S" && r[4] == "U"));
    assert!(b.meta_value("window_lo_hz").is_some());
    let k = table(&dir.path().join("potential/kramers.csv"));
    let ratio = k.column("residence_ratio").unwrap()[0];
    assert!(ratio > 0.0 && ratio < 1.0);
    let h = table(&dir.path().join("hysteresis/hysteresis.csv"));
    assert_eq!(h.rows.len(), 21);
}

#[test]
fn threshold_command() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), LASING);
    let out = dir.path().join("o");
    let o = run(&["threshold", "--config", path(&cfg), "--out", path(&out), "--set", "threshold.inv_t1_khz=[1, 2]"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let t = table(&out.join("threshold.csv"));
    assert_eq!(t.header, ["inv_t1_khz", "omega_th_khz"]);
    let th = t.column("omega_th_khz").unwrap();
    assert!(th[0] < th[1]);
}
