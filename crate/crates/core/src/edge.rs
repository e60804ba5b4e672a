//! Threshold-crossing times, the time-tagger view of a detector pulse.

use serde::{Deserialize, Serialize};

use crate::discriminate::{find_optimal_angle, AngleSearch};
use crate::error::{Error, Result};
use crate::pca::WeightPoint;
use crate::waveform::{Trace, TraceSet};

/// Trigger-relative rising and falling crossing times of one record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgePair {
    pub t_rise: f64,
    pub t_fall: f64,
    pub trace_id: u64,
}

impl EdgePair {
    pub fn to_point(self) -> WeightPoint {
        WeightPoint {
            w1: self.t_rise,
            w2: self.t_fall,
            trace_id: self.trace_id,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    AbsoluteVolts,
    FractionOfMedianPeak,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPolicy {
    pub mode: ThresholdMode,
    /// Volts, or a fraction in `(0, 1)` of the median peak.
    pub value: f64,
    /// Reported times are rounded to multiples of this, seconds. 0 keeps
    /// them continuous.
    pub timing_resolution: f64,
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        Self {
            mode: ThresholdMode::FractionOfMedianPeak,
            value: 0.5,
            timing_resolution: 0.0,
        }
    }
}

impl ThresholdPolicy {
    pub fn validate(&self) -> Result<()> {
        if !self.value.is_finite() {
            return Err(Error::invalid("threshold must be finite"));
        }
        if self.mode == ThresholdMode::FractionOfMedianPeak && !(self.value > 0.0 && self.value < 1.0) {
            return Err(Error::invalid(format!(
                "threshold fraction must lie in (0, 1), got {}",
                self.value
            )));
        }
        if !(self.timing_resolution >= 0.0 && self.timing_resolution.is_finite()) {
            return Err(Error::invalid("timing resolution must be nonnegative"));
        }
        Ok(())
    }

    /// Threshold in volts given the median peak of the records it applies to.
    pub fn volts(&self, median_peak: f64) -> f64 {
        match self.mode {
            ThresholdMode::AbsoluteVolts => self.value,
            ThresholdMode::FractionOfMedianPeak => self.value * median_peak,
        }
    }
}

/// Rounds `t` to the nearest multiple of `resolution`, halves away from zero.
pub fn quantize(t: f64, resolution: f64) -> f64 {
    if resolution > 0.0 {
        (t / resolution).round() * resolution
    } else {
        t
    }
}

/// Edge times at an explicit threshold in volts.
///
/// The rising edge is the first upward crossing and the falling edge the
/// last downward crossing, each linearly interpolated between the samples
/// that bracket it.
pub fn extract_edges_at(trace: &Trace, threshold: f64, timing_resolution: f64) -> Result<EdgePair> {
    let s = trace.samples();
    let peak = trace.peak();
    let no_crossing = || Error::NoCrossing { threshold, peak };
    if !(threshold < peak) {
        return Err(no_crossing());
    }
    let level = threshold as f32;
    let up = (1..s.len())
        .find(|&i| s[i - 1] < level && s[i] >= level)
        .ok_or_else(no_crossing)?;
    let down = (1..s.len())
        .rev()
        .find(|&i| s[i - 1] >= level && s[i] < level)
        .ok_or_else(no_crossing)?;
    let cross = |i: usize| {
        let (a, b) = (s[i - 1] as f64, s[i] as f64);
        trace.time_at(i - 1) + (threshold - a) / (b - a) * trace.sample_period()
    };
    let (t_rise, t_fall) = (cross(up), cross(down));
    if !(t_fall > t_rise) {
        return Err(no_crossing());
    }
    Ok(EdgePair {
        t_rise: quantize(t_rise, timing_resolution),
        t_fall: quantize(t_fall, timing_resolution),
        trace_id: trace.id(),
    })
}

/// Edge times of a single record. In fraction mode the record's own peak
/// stands in for the median.
pub fn extract_edges(trace: &Trace, policy: &ThresholdPolicy) -> Result<EdgePair> {
    policy.validate()?;
    extract_edges_at(trace, policy.volts(trace.peak()), policy.timing_resolution)
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeSet {
    pub edges: Vec<EdgePair>,
    /// Records without a usable crossing.
    pub dropped: usize,
    /// Threshold actually applied, volts.
    pub threshold: f64,
}

impl EdgeSet {
    pub fn points(&self) -> Vec<WeightPoint> {
        self.edges.iter().map(|e| e.to_point()).collect()
    }
}

/// Edge times for every record in `set`, in input order. Records that never
/// cross the threshold are skipped and counted.
pub fn edge_points(set: &TraceSet, policy: &ThresholdPolicy) -> Result<EdgeSet> {
    policy.validate()?;
    let mut peaks: Vec<f64> = set.traces().iter().map(Trace::peak).collect();
    let median_peak = median(&mut peaks).unwrap_or(0.0);
    let threshold = policy.volts(median_peak);
    let mut edges = Vec::with_capacity(set.len());
    let mut dropped = 0;
    for trace in set.traces() {
        match extract_edges_at(trace, threshold, policy.timing_resolution) {
            Ok(e) => edges.push(e),
            Err(Error::NoCrossing { .. }) => dropped += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(EdgeSet {
        edges,
        dropped,
        threshold,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: f64,
    /// Prior-weighted mean confidence at the optimal angle, NaN if the fit failed.
    pub score: f64,
    pub angle: f64,
    pub points: usize,
}

/// Scores each threshold by the confidence reached on its edge points.
pub fn threshold_sweep(
    set: &TraceSet,
    thresholds: &[f64],
    timing_resolution: f64,
    k: usize,
    n_min: u32,
    search: &AngleSearch,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(thresholds.len());
    for &threshold in thresholds {
        let policy = ThresholdPolicy {
            mode: ThresholdMode::AbsoluteVolts,
            value: threshold,
            timing_resolution,
        };
        let edges = edge_points(set, &policy)?;
        let points = edges.points();
        let (score, angle) = match find_optimal_angle(&points, k, n_min, search) {
            Ok(r) => (r.model.score, r.model.angle),
            Err(_) => (f64::NAN, f64::NAN),
        };
        rows.push(SweepRow {
            threshold,
            score,
            angle,
            points: points.len(),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::waveform::{add_pulse, SyntheticConfig, SyntheticSource};
    use proptest::prelude::*;

    fn quiet() -> SyntheticConfig {
        SyntheticConfig {
            noise_sigma: 0.0,
            jitter_sigma: 0.0,
            n_samples: 19_000,
            amp_step: 20e-3,
            ..Default::default()
        }
    }

    fn pulse_trace(cfg: &SyntheticConfig, amp: f64, onset: f64, t0: f64) -> Trace {
        let mut v = vec![0.0; cfg.n_samples];
        add_pulse(&mut v, cfg.sample_period, t0, amp, onset, cfg.tau_rise, cfg.tau_fall);
        Trace::new(v.into_iter().map(|x| x as f32).collect(), cfg.sample_period, t0, 0).unwrap()
    }

    #[test]
    fn trapezoid_midpoint() {
        // 0 → 1 V linearly over samples 10..20, flat, then back down.
        let mut v = vec![0.0f32; 60];
        for (i, x) in v.iter_mut().enumerate() {
            *x = match i {
                0..=10 => 0.0,
                11..=19 => (i - 10) as f32 / 10.0,
                20..=40 => 1.0,
                41..=49 => 1.0 - (i - 40) as f32 / 10.0,
                _ => 0.0,
            };
        }
        let t = Trace::new(v, 1.0, 0.0, 0).unwrap();
        let e = extract_edges_at(&t, 0.5, 0.0).unwrap();
        assert!((e.t_rise - 15.0).abs() < 1e-6);
        assert!((e.t_fall - 45.0).abs() < 1e-6);
    }

    #[test]
    fn matches_dense_root_of_pulse() {
        let cfg = quiet();
        let src = SyntheticSource::new(cfg.clone()).unwrap();
        let rec = src.record_with_n(1, 0);
        let (amp, _) = cfg.amplitude(1);
        let onset = cfg.onset(1);
        let thr = 0.5 * rec.trace.peak();
        // Bisection on the closed form between onset and the peak time.
        let t_peak = onset + cfg.tau_rise * (cfg.tau_fall / cfg.tau_rise + 1.0).ln();
        let (mut lo, mut hi) = (onset, t_peak);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if cfg.pulse_value(amp, onset, mid) < thr {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let e = extract_edges_at(&rec.trace, thr, 0.0).unwrap();
        assert!((e.t_rise - lo).abs() < cfg.sample_period / 10.0, "{} vs {lo}", e.t_rise);
    }

    #[test]
    fn threshold_above_peak() {
        let cfg = quiet();
        let t = pulse_trace(&cfg, 0.37, 18e-9, 0.0);
        let err = extract_edges_at(&t, 1.0, 0.0).unwrap_err();
        assert!(matches!(err, Error::NoCrossing { .. }));
    }

    #[test]
    fn quantized_to_resolution() {
        let cfg = SyntheticConfig {
            n_samples: 19_000,
            ..Default::default()
        };
        let src = SyntheticSource::new(cfg).unwrap();
        let res = 1.5e-12;
        for id in 0..20 {
            let rec = src.record_with_n(1 + (id % 3) as u32, id);
            let e = extract_edges_at(&rec.trace, 0.15, res).unwrap();
            for t in [e.t_rise, e.t_fall] {
                let k = t / res;
                assert!((k - k.round()).abs() < 1e-6, "{t}");
            }
        }
    }

    #[test]
    fn two_photons_cross_earlier_on_both_edges() {
        let cfg = quiet();
        let src = SyntheticSource::new(cfg).unwrap();
        let traces = vec![src.record_with_n(1, 0).trace, src.record_with_n(2, 1).trace];
        let set = TraceSet::new(traces, None, crate::waveform::Source::Synthetic).unwrap();
        let policy = ThresholdPolicy {
            mode: ThresholdMode::AbsoluteVolts,
            value: 0.15,
            timing_resolution: 0.0,
        };
        let out = edge_points(&set, &policy).unwrap();
        assert_eq!(out.edges.len(), 2);
        assert!(out.edges.iter().all(|e| e.t_fall > e.t_rise));
        assert!(out.edges[1].t_rise < out.edges[0].t_rise);
        assert!(out.edges[1].t_fall < out.edges[0].t_fall);
    }

    #[test]
    fn unreachable_threshold_is_tallied() {
        let cfg = quiet();
        let small = pulse_trace(&cfg, 0.1, 18e-9, 0.0);
        let big = pulse_trace(&cfg, 0.37, 18e-9, 0.0);
        let set = TraceSet::new(vec![small, big], None, crate::waveform::Source::Synthetic).unwrap();
        let policy = ThresholdPolicy {
            mode: ThresholdMode::AbsoluteVolts,
            value: 0.15,
            timing_resolution: 0.0,
        };
        let out = edge_points(&set, &policy).unwrap();
        assert_eq!((out.edges.len(), out.dropped), (1, 1));
    }

    #[test]
    fn fraction_mode_validates() {
        let p = ThresholdPolicy {
            value: 1.2,
            ..Default::default()
        };
        assert!(p.validate().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn shifting_the_time_origin_shifts_both_edges(shift in -2e-9f64..2e-9) {
            let cfg = quiet();
            let a = pulse_trace(&cfg, 0.3, 18e-9, 0.0);
            let b = pulse_trace(&cfg, 0.3, 18e-9 + shift, 0.0);
            let ea = extract_edges_at(&a, 0.12, 0.0).unwrap();
            let eb = extract_edges_at(&b, 0.12, 0.0).unwrap();
            let tol = cfg.sample_period / 20.0;
            prop_assert!((eb.t_rise - ea.t_rise - shift).abs() < tol);
            prop_assert!((eb.t_fall - ea.t_fall - shift).abs() < tol);
        }

        #[test]
        fn lower_amplitude_narrows_the_crossing_interval(scale in 0.5f64..0.99) {
            let cfg = quiet();
            let a = pulse_trace(&cfg, 0.35, 18e-9, 0.0);
            let b = pulse_trace(&cfg, 0.35 * scale, 18e-9, 0.0);
            let ea = extract_edges_at(&a, 0.1, 0.0).unwrap();
            let eb = extract_edges_at(&b, 0.1, 0.0).unwrap();
            prop_assert!(eb.t_rise > ea.t_rise);
            prop_assert!(eb.t_fall < ea.t_fall);
        }
    }
}
