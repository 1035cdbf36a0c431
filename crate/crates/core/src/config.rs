//! Flat TOML run configuration with unit-suffixed keys.
//!
//! Every quantity is given under one dotted key whose suffix names its unit,
//! e.g. `mech.omega_phi_hz = 480`, `drive.detuning_mhz = -4`, `sim.dt_s = 1e-5`.
//! Exactly one unit variant per quantity may appear. Missing keys take the
//! values of [`linear_regime_preset`]. Unknown keys are errors.
//!
//! | kind | suffixes |
//! |---|---|
//! | angular frequency | `_rad_s`, `_hz`, `_khz`, `_mhz` (the last three are ordinary frequencies, ×2π) |
//! | rate | `_per_s`, `_per_ms`, `_khz` (×10³ s⁻¹, no 2π) |
//! | time | `_s`, `_ms`, `_us`, `_ns` |
//! | angle | `_rad`, `_mrad` |
//! | torque coefficient | `_rad_s2`, `_per_ms2` (×10⁶) |
//! | Zeeman slope | `_rad_s_per_rad`, `_hz_per_rad`, `_mhz_per_rad` |
//!
//! T1 may be given either as `spin.t1_*` or as its inverse `spin.inv_t1_*`
//! (rate units; zero disables T1 relaxation), not both. The torque coefficient
//! is taken from `drive.torque_coeff_*` unless `drive.torque_from_spins = true`,
//! in which case it is derived from N, γ_eB and I.
//!
//! [`Config::canonical`] renders the resolved configuration in the first
//! (SI) variant of every key. The rendering is itself a valid config and
//! parses back to the same values.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::path::Path;

use thiserror::Error;
use toml::Value;

use crate::dynamics::{build_parametric_excitation, Protocol, ProtocolError, Segment};
use crate::model::{linear_regime_preset, validate, Lineshape, ModelKind, PhysicalParams, ValidatedParams, ValidationError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {msg}")]
    Io { path: String, msg: String },
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("`{0}` and `{1}` set the same quantity")]
    Conflict(String, String),
    #[error("`{key}`: expected {expected}")]
    Type { key: String, expected: &'static str },
    #[error("`{key}`: {msg}")]
    Invalid { key: String, msg: String },
    #[error("malformed override `{0}`, expected key=value")]
    Override(String),
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error("protocol: {0}")]
    Protocol(#[from] ProtocolError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Unit {
    AngFreq,
    Rate,
    Time,
    Angle,
    AngVel,
    Torque,
    Slope,
    Temperature,
    Inertia,
    Plain,
}

const TWO_PI: f64 = 2.0 * PI;

impl Unit {
    fn suffixes(self) -> &'static [(&'static str, f64)] {
        match self {
            Unit::AngFreq => &[("_rad_s", 1.0), ("_hz", TWO_PI), ("_khz", TWO_PI * 1e3), ("_mhz", TWO_PI * 1e6)],
            Unit::Rate => &[("_per_s", 1.0), ("_per_ms", 1e3), ("_khz", 1e3)],
            Unit::Time => &[("_s", 1.0), ("_ms", 1e-3), ("_us", 1e-6), ("_ns", 1e-9)],
            Unit::Angle => &[("_rad", 1.0), ("_mrad", 1e-3)],
            Unit::AngVel => &[("_rad_s", 1.0)],
            Unit::Torque => &[("_rad_s2", 1.0), ("_per_ms2", 1e6)],
            Unit::Slope => &[("_rad_s_per_rad", 1.0), ("_hz_per_rad", TWO_PI), ("_mhz_per_rad", TWO_PI * 1e6)],
            Unit::Temperature => &[("_k", 1.0)],
            Unit::Inertia => &[("_kg_m2", 1.0)],
            Unit::Plain => &[("", 1.0)],
        }
    }
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut BTreeMap<String, Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            _ => {
                out.insert(key, v.clone());
            }
        }
    }
}

fn parse_table(text: &str) -> Result<BTreeMap<String, Value>, ConfigError> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
    let mut out = BTreeMap::new();
    flatten("", &table, &mut out);
    Ok(out)
}

/// Parses the value side of a `--set key=value` override. Bare words that
/// are not TOML values are taken as strings.
fn parse_override_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Consumes keys from the file map and the override map, recording the
/// resolved canonical entries.
struct Reader {
    file: BTreeMap<String, Value>,
    overrides: BTreeMap<String, Value>,
    prefix: String,
    resolved: BTreeMap<String, Value>,
}

fn as_f64(key: &str, v: &Value) -> Result<f64, ConfigError> {
    match v {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(ConfigError::Type { key: key.to_string(), expected: "a number" }),
    }
}

impl Reader {
    fn new(file: BTreeMap<String, Value>, overrides: BTreeMap<String, Value>, prefix: &str) -> Self {
        Reader { file, overrides, prefix: prefix.to_string(), resolved: BTreeMap::new() }
    }

    /// The single set variant of `base`, preferring overrides.
    fn take(&mut self, base: &str, unit: Unit) -> Result<Option<(String, Value, f64)>, ConfigError> {
        let pick = |map: &mut BTreeMap<String, Value>| -> Result<Option<(String, Value, f64)>, ConfigError> {
            let mut found: Option<(String, Value, f64)> = None;
            for (suffix, scale) in unit.suffixes() {
                let key = format!("{base}{suffix}");
                if let Some(v) = map.remove(&key) {
                    if let Some((k0, _, _)) = &found {
                        return Err(ConfigError::Conflict(format!("{}{k0}", self.prefix), format!("{}{key}", self.prefix)));
                    }
                    found = Some((key, v, *scale));
                }
            }
            Ok(found)
        };
        let from_override = pick(&mut self.overrides)?;
        let from_file = pick(&mut self.file)?;
        Ok(from_override.or(from_file))
    }

    fn record(&mut self, base: &str, unit: Unit, v: Value) {
        self.resolved.insert(format!("{base}{}", unit.suffixes()[0].0), v);
    }

    fn opt_quantity(&mut self, base: &str, unit: Unit) -> Result<Option<f64>, ConfigError> {
        let Some((key, v, scale)) = self.take(base, unit)? else { return Ok(None) };
        let x = as_f64(&format!("{}{key}", self.prefix), &v)? * scale;
        self.record(base, unit, Value::Float(x));
        Ok(Some(x))
    }

    fn quantity(&mut self, base: &str, unit: Unit, default: f64) -> Result<f64, ConfigError> {
        match self.opt_quantity(base, unit)? {
            Some(x) => Ok(x),
            None => {
                self.record(base, unit, Value::Float(default));
                Ok(default)
            }
        }
    }

    fn quantity_list(&mut self, base: &str, unit: Unit, default: &[f64]) -> Result<Vec<f64>, ConfigError> {
        let xs = match self.take(base, unit)? {
            Some((key, Value::Array(items), scale)) => {
                let key = format!("{}{key}", self.prefix);
                items.iter().map(|v| as_f64(&key, v).map(|x| x * scale)).collect::<Result<Vec<_>, _>>()?
            }
            Some((key, _, _)) => return Err(ConfigError::Type { key: format!("{}{key}", self.prefix), expected: "an array of numbers" }),
            None => default.to_vec(),
        };
        self.record(base, unit, Value::Array(xs.iter().map(|x| Value::Float(*x)).collect()));
        Ok(xs)
    }

    fn raw(&mut self, key: &str) -> Option<Value> {
        let o = self.overrides.remove(key);
        let f = self.file.remove(key);
        o.or(f)
    }

    fn int(&mut self, key: &str, default: i64, min: i64) -> Result<i64, ConfigError> {
        let v = match self.raw(key) {
            Some(Value::Integer(i)) => i,
            Some(_) => return Err(ConfigError::Type { key: format!("{}{key}", self.prefix), expected: "an integer" }),
            None => default,
        };
        if v < min {
            return Err(ConfigError::Invalid { key: format!("{}{key}", self.prefix), msg: format!("must be at least {min}") });
        }
        self.resolved.insert(key.to_string(), Value::Integer(v));
        Ok(v)
    }

    fn boolean(&mut self, key: &str, default: bool) -> Result<bool, ConfigError> {
        let v = match self.raw(key) {
            Some(Value::Boolean(b)) => b,
            Some(_) => return Err(ConfigError::Type { key: format!("{}{key}", self.prefix), expected: "true or false" }),
            None => default,
        };
        self.resolved.insert(key.to_string(), Value::Boolean(v));
        Ok(v)
    }

    fn choice(&mut self, key: &str, options: &[&'static str], default: &'static str) -> Result<&'static str, ConfigError> {
        let v = match self.raw(key) {
            Some(Value::String(s)) => options.iter().find(|o| **o == s).copied().ok_or_else(|| ConfigError::Invalid {
                key: format!("{}{key}", self.prefix),
                msg: format!("`{s}` is not one of {}", options.join(", ")),
            })?,
            Some(_) => return Err(ConfigError::Type { key: format!("{}{key}", self.prefix), expected: "a string" }),
            None => default,
        };
        self.resolved.insert(key.to_string(), Value::String(v.to_string()));
        Ok(v)
    }

    fn finish(self) -> Result<BTreeMap<String, Value>, ConfigError> {
        if let Some(k) = self.overrides.keys().chain(self.file.keys()).next() {
            return Err(ConfigError::UnknownKey(format!("{}{k}", self.prefix)));
        }
        Ok(self.resolved)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitSpin {
    /// Spin populations at their steady state for the initial angle and drive.
    Steady,
    Ground,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitSpec {
    /// Initial angle relative to the equilibrium angle (rad).
    pub phi_offset: f64,
    pub phi_dot: f64,
    pub spin: InitSpin,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProtocolSpec {
    AlwaysOn,
    AlwaysOff,
    SwitchOn { t_on: f64 },
    Parametric { n_pulses: usize, duty: f64 },
    Segments(Vec<Segment>),
}

impl ProtocolSpec {
    pub fn build(&self, params: &ValidatedParams) -> Result<Protocol, ProtocolError> {
        Ok(match self {
            ProtocolSpec::AlwaysOn => Protocol::always_on(),
            ProtocolSpec::AlwaysOff => Protocol::always_off(),
            ProtocolSpec::SwitchOn { t_on } => Protocol::switch_on_at(*t_on),
            ProtocolSpec::Parametric { n_pulses, duty } => build_parametric_excitation(params.mech().omega_phi, *n_pulses, *duty),
            ProtocolSpec::Segments(s) => Protocol::new(s.clone())?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Detuning,
    Rabi,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    /// Grid ends (rad/s) on the swept axis.
    pub from: f64,
    pub to: f64,
    pub n: usize,
    pub probe_amp: Option<f64>,
    /// Stochastic run length for the oscillator-energy column of Rabi sweeps (s).
    pub energy_duration: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub from: f64,
    pub to: f64,
    pub n: usize,
    /// Rabi frequency to use instead of drive.rabi.
    pub rabi: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HysteresisSpec {
    pub grid: GridSpec,
    pub dwell: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PotentialSpec {
    pub phi_min: f64,
    pub phi_max: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSpec {
    pub inv_t1: Vec<f64>,
    pub rabi_from: f64,
    pub rabi_to: f64,
    pub n: usize,
    pub verify: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisSpec {
    /// Welch segment length (s).
    pub segment: f64,
    pub overlap: f64,
    /// PSD fit band (rad/s); the default is a factor 4 around the peak.
    pub band_lo: Option<f64>,
    pub band_hi: Option<f64>,
    pub two_modes: bool,
    pub hist_bins: usize,
    /// Leading stretch of each series to discard (s).
    pub skip: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub params: ValidatedParams,
    pub write_trajectories: bool,
    pub init: InitSpec,
    pub protocol: ProtocolSpec,
    pub sweep: SweepSpec,
    pub bistability: GridSpec,
    pub hysteresis: HysteresisSpec,
    pub potential: PotentialSpec,
    pub threshold: ThresholdSpec,
    pub analysis: AnalysisSpec,
    resolved: BTreeMap<String, Value>,
}

/// Splits `key=value` overrides.
pub fn parse_overrides<S: AsRef<str>>(items: &[S]) -> Result<Vec<(String, String)>, ConfigError> {
    items
        .iter()
        .map(|s| {
            let s = s.as_ref();
            let (k, v) = s.split_once('=').ok_or_else(|| ConfigError::Override(s.to_string()))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(ConfigError::Override(s.to_string()));
            }
            Ok((k.to_string(), v.trim().to_string()))
        })
        .collect()
}

fn read_segments(value: Option<Value>) -> Result<(Vec<Segment>, Value), ConfigError> {
    let Some(value) = value else { return Ok((Vec::new(), Value::Array(Vec::new()))) };
    let Value::Array(items) = value else {
        return Err(ConfigError::Type { key: "protocol.segments".into(), expected: "an array of tables" });
    };
    let mut segs = Vec::new();
    let mut canon = Vec::new();
    for (i, item) in items.iter().enumerate() {
        let Value::Table(t) = item else {
            return Err(ConfigError::Type { key: format!("protocol.segments[{i}]"), expected: "a table" });
        };
        let mut flat = BTreeMap::new();
        flatten("", t, &mut flat);
        let mut r = Reader::new(flat, BTreeMap::new(), &format!("protocol.segments[{i}]."));
        let start = r.opt_quantity("start", Unit::Time)?;
        let end = r.opt_quantity("end", Unit::Time)?;
        let on = r.boolean("on", true)?;
        let rabi = r.opt_quantity("rabi", Unit::AngFreq)?;
        let detuning = r.opt_quantity("detuning", Unit::AngFreq)?;
        let (Some(t_start), Some(t_end)) = (start, end) else {
            return Err(ConfigError::Invalid { key: format!("protocol.segments[{i}]"), msg: "needs start and end".into() });
        };
        let resolved = r.finish()?;
        segs.push(Segment { t_start, t_end, microwave_on: on, detuning_override: detuning, rabi_override: rabi });
        canon.push(Value::Table(resolved.into_iter().collect()));
    }
    Ok((segs, Value::Array(canon)))
}

impl Config {
    pub fn from_path(path: &Path, overrides: &[(String, String)]) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io { path: path.display().to_string(), msg: e.to_string() })?;
        Config::parse(&text, overrides)
    }

    /// Parses config text, applying `overrides` on top.
    pub fn parse(text: &str, overrides: &[(String, String)]) -> Result<Config, ConfigError> {
        let file = parse_table(text)?;
        let ov = overrides.iter().map(|(k, v)| (k.clone(), parse_override_value(v))).collect();
        let mut r = Reader::new(file, ov, "");
        let d = linear_regime_preset();

        let mut p: PhysicalParams = d;
        p.mech.inertia = r.quantity("mech.inertia", Unit::Inertia, d.mech.inertia)?;
        p.mech.omega_phi = r.quantity("mech.omega_phi", Unit::AngFreq, d.mech.omega_phi)?;
        p.mech.gamma = r.quantity("mech.gamma", Unit::AngFreq, d.mech.gamma)?;
        p.mech.temperature = r.quantity("mech.temperature", Unit::Temperature, d.mech.temperature)?;

        p.spin.t2_star = r.quantity("spin.t2_star", Unit::Time, d.spin.t2_star)?;
        let t1 = r.take("spin.t1", Unit::Time)?;
        if let Some((key, _, _)) = &t1 {
            if r.file.keys().chain(r.overrides.keys()).any(|k| k.starts_with("spin.inv_t1")) {
                return Err(ConfigError::Conflict(key.clone(), "spin.inv_t1".into()));
            }
        }
        p.spin.t1 = match t1 {
            Some((key, v, scale)) => as_f64(&key, &v)? * scale,
            None => match r.opt_quantity("spin.inv_t1", Unit::Rate)? {
                Some(0.0) => f64::INFINITY,
                Some(inv) => 1.0 / inv,
                None => d.spin.t1,
            },
        };
        r.resolved.retain(|k, _| !k.starts_with("spin.inv_t1"));
        r.record("spin.t1", Unit::Time, Value::Float(p.spin.t1));
        p.spin.gamma_las = r.quantity("spin.gamma_las", Unit::Rate, d.spin.gamma_las)?;
        p.spin.n_spins = r.quantity("spin.n_spins", Unit::Plain, d.spin.n_spins)?;
        p.spin.zeeman_slope = r.quantity("spin.zeeman_slope", Unit::Slope, d.spin.zeeman_slope)?;
        p.spin.lineshape = match r.choice("spin.lineshape", &["lorentzian", "gaussian"], d.spin.lineshape.name())? {
            "gaussian" => Lineshape::Gaussian,
            _ => Lineshape::Lorentzian,
        };
        p.spin.gaussian_offset = r.quantity("spin.gaussian_offset", Unit::Angle, d.spin.gaussian_offset)?;

        p.drive.rabi = r.quantity("drive.rabi", Unit::AngFreq, d.drive.rabi)?;
        p.drive.detuning = r.quantity("drive.detuning", Unit::AngFreq, d.drive.detuning)?;
        let direct = r.opt_quantity("drive.torque_coeff", Unit::Torque)?;
        p.drive.torque_coeff = if r.boolean("drive.torque_from_spins", false)? {
            if direct.is_some() {
                return Err(ConfigError::Conflict("drive.torque_coeff".into(), "drive.torque_from_spins".into()));
            }
            None
        } else {
            let g = direct.or(d.drive.torque_coeff);
            if let Some(g) = g {
                r.record("drive.torque_coeff", Unit::Torque, Value::Float(g));
            }
            g
        };

        p.sim.dt = r.quantity("sim.dt", Unit::Time, d.sim.dt)?;
        p.sim.duration = r.quantity("sim.duration", Unit::Time, d.sim.duration)?;
        p.sim.n_traj = r.int("sim.n_traj", d.sim.n_traj as i64, 1)? as usize;
        p.sim.seed = r.int("sim.seed", d.sim.seed as i64, 0)? as u64;
        p.sim.record_stride = r.int("sim.record_stride", d.sim.record_stride as i64, 1)? as usize;
        p.sim.model = match r.choice("sim.model", &["rate", "full_bloch"], d.sim.model.name())? {
            "full_bloch" => ModelKind::FullBloch,
            _ => ModelKind::RateEq,
        };
        let write_trajectories = r.boolean("sim.write_trajectories", false)?;

        let init = InitSpec {
            phi_offset: r.quantity("init.phi_offset", Unit::Angle, 0.0)?,
            phi_dot: r.quantity("init.phi_dot", Unit::AngVel, 0.0)?,
            spin: match r.choice("init.spin", &["steady", "ground"], "steady")? {
                "ground" => InitSpin::Ground,
                _ => InitSpin::Steady,
            },
        };

        let kind = r.choice("protocol.kind", &["always_on", "always_off", "switch_on", "parametric", "segments"], "always_on")?;
        let protocol = match kind {
            "always_off" => ProtocolSpec::AlwaysOff,
            "switch_on" => ProtocolSpec::SwitchOn { t_on: r.quantity("protocol.t_on", Unit::Time, 0.0)? },
            "parametric" => ProtocolSpec::Parametric {
                n_pulses: r.int("protocol.n_pulses", 10, 1)? as usize,
                duty: r.quantity("protocol.duty", Unit::Plain, 0.5)?,
            },
            "segments" => {
                let (segs, canon) = read_segments(r.raw("protocol.segments"))?;
                r.resolved.insert("protocol.segments".into(), canon);
                ProtocolSpec::Segments(segs)
            }
            _ => ProtocolSpec::AlwaysOn,
        };

        let axis = match r.choice("sweep.axis", &["detuning", "rabi"], "detuning")? {
            "rabi" => SweepAxis::Rabi,
            _ => SweepAxis::Detuning,
        };
        let (from0, to0) = match axis {
            SweepAxis::Detuning => (-TWO_PI * 10e6, TWO_PI * 10e6),
            SweepAxis::Rabi => (TWO_PI * 5e3, TWO_PI * 100e3),
        };
        let sweep = SweepSpec {
            axis,
            from: r.quantity("sweep.from", Unit::AngFreq, from0)?,
            to: r.quantity("sweep.to", Unit::AngFreq, to0)?,
            n: r.int("sweep.n", 41, 1)? as usize,
            probe_amp: r.opt_quantity("sweep.probe_amp", Unit::Angle)?,
            energy_duration: r.quantity("sweep.energy_duration", Unit::Time, 1.0)?,
        };

        let bistability = GridSpec {
            from: r.quantity("bistability.from", Unit::AngFreq, -TWO_PI * 12e6)?,
            to: r.quantity("bistability.to", Unit::AngFreq, -TWO_PI * 5e6)?,
            n: r.int("bistability.n", 141, 1)? as usize,
            rabi: r.opt_quantity("bistability.rabi", Unit::AngFreq)?,
        };
        let hysteresis = HysteresisSpec {
            grid: GridSpec {
                from: r.quantity("hysteresis.from", Unit::AngFreq, -TWO_PI * 11e6)?,
                to: r.quantity("hysteresis.to", Unit::AngFreq, -TWO_PI * 6e6)?,
                n: r.int("hysteresis.n", 41, 2)? as usize,
                rabi: r.opt_quantity("hysteresis.rabi", Unit::AngFreq)?,
            },
            dwell: r.quantity("hysteresis.dwell", Unit::Time, 0.15)?,
        };
        let potential = PotentialSpec {
            phi_min: r.quantity("potential.phi_min", Unit::Angle, -0.005)?,
            phi_max: r.quantity("potential.phi_max", Unit::Angle, 0.06)?,
            n: r.int("potential.n", 2001, 3)? as usize,
        };
        let threshold = ThresholdSpec {
            inv_t1: r.quantity_list("threshold.inv_t1", Unit::Rate, &[1e3, 2e3, 3e3])?,
            rabi_from: r.quantity("threshold.rabi_from", Unit::AngFreq, TWO_PI * 5e3)?,
            rabi_to: r.quantity("threshold.rabi_to", Unit::AngFreq, TWO_PI * 150e3)?,
            n: r.int("threshold.n", 30, 2)? as usize,
            verify: r.boolean("threshold.verify", false)?,
        };
        let analysis = AnalysisSpec {
            segment: r.quantity("analysis.segment", Unit::Time, 1.0)?,
            overlap: r.quantity("analysis.overlap", Unit::Plain, 0.5)?,
            band_lo: r.opt_quantity("analysis.band_lo", Unit::AngFreq)?,
            band_hi: r.opt_quantity("analysis.band_hi", Unit::AngFreq)?,
            two_modes: r.boolean("analysis.two_modes", false)?,
            hist_bins: r.int("analysis.hist_bins", 60, 5)? as usize,
            skip: r.quantity("analysis.skip", Unit::Time, 0.0)?,
        };
        if !(0.0..1.0).contains(&analysis.overlap) {
            return Err(ConfigError::Invalid { key: "analysis.overlap".into(), msg: "must lie in [0, 1)".into() });
        }

        let resolved = r.finish()?;
        let params = validate(&p)?;
        protocol.build(&params)?;
        Ok(Config {
            params,
            write_trajectories,
            init,
            protocol,
            sweep,
            bistability,
            hysteresis,
            potential,
            threshold,
            analysis,
            resolved,
        })
    }

    /// Resolved configuration as `key = value` lines in SI units, sorted by key.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.resolved {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&format_value(v));
            s.push('\n');
        }
        s
    }

    /// Keys accepted in a config, in canonical form.
    pub fn keys(&self) -> BTreeSet<&str> {
        self.resolved.keys().map(String::as_str).collect()
    }

    pub fn protocol(&self) -> Result<Protocol, ConfigError> {
        Ok(self.protocol.build(&self.params)?)
    }
}

fn format_float(f: f64) -> String {
    if f.is_nan() {
        "nan".into()
    } else if f.is_infinite() {
        if f > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{f:e}")
    }
}

fn format_value(v: &Value) -> String {
    match v {
        Value::Float(f) => format_float(*f),
        Value::Array(a) => format!("[{}]", a.iter().map(format_value).collect::<Vec<_>>().join(", ")),
        Value::Table(t) => {
            let inner: Vec<String> = t.iter().map(|(k, v)| format!("{k} = {}", format_value(v))).collect();
            format!("{{ {} }}", inner.join(", "))
        }
        other => other.to_string(),
    }
}

/// `n` evenly spaced points from `from` to `to` inclusive.
pub fn linspace(from: f64, to: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![from],
        _ => (0..n).map(|i| from + (to - from) * i as f64 / (n - 1) as f64).collect(),
    }
}
