use std::f64::consts::PI;

use thiserror::Error;

use crate::model::Drive;

/// One time window of the microwave schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub t_start: f64,
    pub t_end: f64,
    pub microwave_on: bool,
    pub detuning_override: Option<f64>,
    pub rabi_override: Option<f64>,
}

impl Segment {
    pub fn on(t_start: f64, t_end: f64) -> Self {
        Segment { t_start, t_end, microwave_on: true, detuning_override: None, rabi_override: None }
    }

    pub fn off(t_start: f64, t_end: f64) -> Self {
        Segment { microwave_on: false, ..Segment::on(t_start, t_end) }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error("segment {0} has t_end <= t_start")]
    Empty(usize),
    #[error("segment {0} starts before the previous one ends")]
    Overlap(usize),
    #[error("segment {0} has a non-finite start or a NaN end")]
    NonFinite(usize),
}

/// Time-ordered, non-overlapping microwave schedule. Outside every segment
/// the microwave is off; the laser is always on.
#[derive(Debug, Clone, PartialEq)]
pub struct Protocol {
    segments: Vec<Segment>,
}

impl Protocol {
    pub fn new(segments: Vec<Segment>) -> Result<Self, ProtocolError> {
        for (i, s) in segments.iter().enumerate() {
            if !s.t_start.is_finite() || s.t_end.is_nan() {
                return Err(ProtocolError::NonFinite(i));
            }
            if s.t_end <= s.t_start {
                return Err(ProtocolError::Empty(i));
            }
            if i > 0 && s.t_start < segments[i - 1].t_end {
                return Err(ProtocolError::Overlap(i));
            }
        }
        Ok(Protocol { segments })
    }

    pub fn always_on() -> Self {
        Protocol { segments: vec![Segment::on(0.0, f64::INFINITY)] }
    }

    pub fn always_off() -> Self {
        Protocol { segments: Vec::new() }
    }

    /// Microwave on from `t_on` onwards.
    pub fn switch_on_at(t_on: f64) -> Self {
        Protocol { segments: vec![Segment::on(t_on, f64::INFINITY)] }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// Drive at time `t` given the configured base drive.
    pub fn drive_at(&self, t: f64, base: Drive) -> Drive {
        for s in &self.segments {
            if t < s.t_start {
                break;
            }
            if t < s.t_end {
                let detuning = s.detuning_override.unwrap_or(base.detuning);
                if !s.microwave_on {
                    return Drive::off(detuning);
                }
                return Drive::new(s.rabi_override.unwrap_or(base.rabi), detuning);
            }
        }
        Drive::off(base.detuning)
    }

    /// Time after which the microwave stays off, if any.
    pub fn last_on_end(&self) -> Option<f64> {
        self.segments.iter().filter(|s| s.microwave_on).map(|s| s.t_end).next_back()
    }
}

/// Square-wave microwave gating at the libration period, then free ring-down.
///
/// Pulse k covers [k·T, k·T + duty·T) with T = 2π/ω_φ; after the last pulse
/// the microwave stays off.
pub fn build_parametric_excitation(omega_phi: f64, n_pulses: usize, duty: f64) -> Protocol {
    let period = 2.0 * PI / omega_phi;
    let duty = duty.clamp(0.0, 1.0);
    if duty == 0.0 {
        return Protocol::always_off();
    }
    let segments = (0..n_pulses)
        .map(|k| {
            let t0 = k as f64 * period;
            Segment::on(t0, t0 + duty * period)
        })
        .collect();
    Protocol { segments }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zero_pulses_is_always_off() {
        let p = build_parametric_excitation(2.0 * PI * 480.0, 0, 0.5);
        assert!(p.segments().is_empty());
        assert_eq!(p.drive_at(0.0, Drive::new(1.0, 2.0)).rabi, 0.0);
    }

    #[test]
    fn five_pulses_at_480hz() {
        let p = build_parametric_excitation(2.0 * PI * 480.0, 5, 0.5);
        assert_eq!(p.segments().len(), 5);
        for (k, s) in p.segments().iter().enumerate() {
            assert!(s.microwave_on);
            assert_relative_eq!(s.t_end - s.t_start, 0.5 / 480.0, max_relative = 1e-12);
            assert_relative_eq!(s.t_start, k as f64 / 480.0, max_relative = 1e-12);
        }
        let base = Drive::new(3.0, -1.0);
        assert_eq!(p.drive_at(0.1 / 480.0, base).rabi, 3.0);
        assert_eq!(p.drive_at(0.7 / 480.0, base).rabi, 0.0);
        assert_eq!(p.drive_at(1.0, base).rabi, 0.0);
        assert_relative_eq!(p.last_on_end().unwrap(), 4.5 / 480.0, max_relative = 1e-12);
    }

    #[test]
    fn overrides_apply_inside_segment() {
        let s = Segment { rabi_override: Some(7.0), detuning_override: Some(-4.0), ..Segment::on(1.0, 2.0) };
        let p = Protocol::new(vec![s]).unwrap();
        let base = Drive::new(3.0, 5.0);
        assert_eq!(p.drive_at(1.5, base), Drive::new(7.0, -4.0));
        assert_eq!(p.drive_at(0.5, base), Drive::off(5.0));
        assert_eq!(p.drive_at(2.0, base), Drive::off(5.0));
    }

    #[test]
    fn rejects_overlap() {
        let err = Protocol::new(vec![Segment::on(0.0, 2.0), Segment::off(1.0, 3.0)]).unwrap_err();
        assert_eq!(err, ProtocolError::Overlap(1));
        assert_eq!(Protocol::new(vec![Segment::on(1.0, 1.0)]).unwrap_err(), ProtocolError::Empty(0));
    }
}
