//! Record rejection and windowing.
//!
//! A record is rejected when it holds no pulse, more than one pulse, or a
//! pulse at the wrong delay from the trigger. Survivors are cut to the
//! analysis window and have their baseline removed.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::waveform::{Trace, TraceSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterPolicy {
    /// First sample of the analysis window.
    pub window_offset: usize,
    pub window_length: usize,
    pub baseline_region: Range<usize>,
    /// A pulse must rise at least `zero_trace_k · σ_noise` above the baseline.
    pub zero_trace_k: f64,
    pub peak_count_threshold_frac: f64,
    pub hysteresis_frac: f64,
    /// Allowed trigger-relative half-height rise times, seconds.
    pub delay_window: (f64, f64),
    /// Width in samples of the centered moving average used for peak and
    /// crossing detection. 1 disables smoothing.
    pub smoothing: usize,
}

impl Default for FilterPolicy {
    fn default() -> Self {
        Self {
            window_offset: 0,
            window_length: 19_000,
            baseline_region: 0..1000,
            zero_trace_k: 5.0,
            peak_count_threshold_frac: 0.5,
            hysteresis_frac: 0.25,
            delay_window: (8e-9, 40e-9),
            smoothing: 16,
        }
    }
}

impl FilterPolicy {
    pub fn validate(&self, trace_len: usize) -> Result<()> {
        let f = self.peak_count_threshold_frac;
        let h = self.hysteresis_frac;
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::invalid("peak_count_threshold_frac must lie in (0, 1)"));
        }
        if !(h > 0.0 && h < f) {
            return Err(Error::invalid(
                "hysteresis_frac must lie in (0, peak_count_threshold_frac)",
            ));
        }
        if !(self.zero_trace_k > 0.0) {
            return Err(Error::invalid("zero_trace_k must be positive"));
        }
        if self.window_length == 0 || self.window_offset + self.window_length > trace_len {
            return Err(Error::invalid(format!(
                "window [{}, {}) does not fit traces of length {trace_len}",
                self.window_offset,
                self.window_offset + self.window_length
            )));
        }
        check_region(&self.baseline_region, trace_len)?;
        if !(self.delay_window.0 <= self.delay_window.1) {
            return Err(Error::invalid("delay window is inverted"));
        }
        if self.smoothing == 0 {
            return Err(Error::invalid("smoothing width must be at least 1"));
        }
        Ok(())
    }
}

fn check_region(region: &Range<usize>, len: usize) -> Result<()> {
    if region.start >= region.end || region.end > len {
        return Err(Error::invalid(format!(
            "region [{}, {}) is empty or outside a trace of length {len}",
            region.start, region.end
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Accept,
    ZeroTrace,
    MultiPeak,
    WrongDelay,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub accepted: usize,
    pub rejected_zero: usize,
    pub rejected_multipeak: usize,
    pub rejected_delay: usize,
    /// RMS of the per-record baseline standard deviations, volts.
    pub baseline_sigma: f64,
}

impl FilterReport {
    pub fn total(&self) -> usize {
        self.accepted + self.rejected_zero + self.rejected_multipeak + self.rejected_delay
    }
}

/// Sample mean and population standard deviation over `region`.
pub fn estimate_baseline(trace: &Trace, region: Range<usize>) -> Result<(f64, f64)> {
    check_region(&region, trace.len())?;
    let s = &trace.samples()[region];
    let n = s.len() as f64;
    let mean = s.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = s
        .iter()
        .map(|&v| {
            let d = v as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    Ok((mean, var.sqrt()))
}

/// Centered moving average of `values − offset`, window shrinking at the ends.
fn smooth(values: &[f32], offset: f64, width: usize) -> Vec<f64> {
    if width <= 1 {
        return values.iter().map(|&v| v as f64 - offset).collect();
    }
    let mut prefix = Vec::with_capacity(values.len() + 1);
    prefix.push(0.0f64);
    let mut acc = 0.0;
    for &v in values {
        acc += v as f64 - offset;
        prefix.push(acc);
    }
    let half = width / 2;
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (lo + width).min(values.len());
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

/// Upward crossings of `hi`, re-armed only after falling below `lo`.
fn count_crossings(values: &[f64], hi: f64, lo: f64) -> usize {
    let mut armed = true;
    let mut count = 0;
    for &v in values {
        if armed && v >= hi {
            count += 1;
            armed = false;
        } else if !armed && v < lo {
            armed = true;
        }
    }
    count
}

fn first_rise(values: &[f64], level: f64) -> Option<f64> {
    let i = values.iter().position(|&v| v >= level)?;
    if i == 0 {
        return Some(0.0);
    }
    let (a, b) = (values[i - 1], values[i]);
    Some((i - 1) as f64 + (level - a) / (b - a))
}

/// Classifies one record. Checks run zero → multi-peak → delay, first match wins.
pub fn classify_trace(trace: &Trace, policy: &FilterPolicy) -> Result<Classification> {
    policy.validate(trace.len())?;
    Ok(classify_with_baseline(trace, policy)?.0)
}

fn classify_with_baseline(trace: &Trace, policy: &FilterPolicy) -> Result<(Classification, f64, f64)> {
    let (mean, sigma) = estimate_baseline(trace, policy.baseline_region.clone())?;
    let smoothed = smooth(trace.samples(), mean, policy.smoothing);
    let peak = smoothed.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let class = if peak <= 0.0 || peak < policy.zero_trace_k * sigma {
        Classification::ZeroTrace
    } else if count_crossings(
        &smoothed,
        policy.peak_count_threshold_frac * peak,
        policy.hysteresis_frac * peak,
    ) > 1
    {
        Classification::MultiPeak
    } else {
        let idx = first_rise(&smoothed, 0.5 * peak).expect("peak is reached");
        let t = trace.t0() + idx * trace.sample_period();
        if t < policy.delay_window.0 || t > policy.delay_window.1 {
            Classification::WrongDelay
        } else {
            Classification::Accept
        }
    };
    Ok((class, mean, sigma))
}

/// Streaming form of [`window_and_align`]: feed records one at a time and
/// read the tallies at the end.
#[derive(Debug, Clone)]
pub struct TraceFilter {
    policy: FilterPolicy,
    report: FilterReport,
    sigma_sq_sum: f64,
}

impl TraceFilter {
    pub fn new(policy: FilterPolicy) -> Self {
        Self {
            policy,
            report: FilterReport::default(),
            sigma_sq_sum: 0.0,
        }
    }

    pub fn policy(&self) -> &FilterPolicy {
        &self.policy
    }

    /// Classifies `trace`; returns the windowed, baseline-subtracted record
    /// when it is accepted.
    pub fn process(&mut self, trace: &Trace) -> Result<(Classification, Option<Trace>)> {
        self.policy.validate(trace.len())?;
        let (class, mean, sigma) = classify_with_baseline(trace, &self.policy)?;
        self.sigma_sq_sum += sigma * sigma;
        let out = match class {
            Classification::Accept => {
                self.report.accepted += 1;
                Some(trace.window(self.policy.window_offset, self.policy.window_length, mean)?)
            }
            Classification::ZeroTrace => {
                self.report.rejected_zero += 1;
                None
            }
            Classification::MultiPeak => {
                self.report.rejected_multipeak += 1;
                None
            }
            Classification::WrongDelay => {
                self.report.rejected_delay += 1;
                None
            }
        };
        Ok((class, out))
    }

    pub fn report(&self) -> FilterReport {
        let n = self.report.total();
        FilterReport {
            baseline_sigma: if n > 0 {
                (self.sigma_sq_sum / n as f64).sqrt()
            } else {
                0.0
            },
            ..self.report.clone()
        }
    }
}

/// Filters a set, windows the survivors and subtracts their baselines.
pub fn window_and_align(set: &TraceSet, policy: &FilterPolicy) -> Result<(TraceSet, FilterReport)> {
    if set.is_empty() {
        return Err(Error::invalid("trace set is empty"));
    }
    let mut filter = TraceFilter::new(policy.clone());
    let mut kept = Vec::new();
    for trace in set.traces() {
        if let (_, Some(t)) = filter.process(trace)? {
            kept.push(t);
        }
    }
    let report = filter.report();
    if kept.is_empty() {
        return Err(Error::EmptyResult(format!(
            "no record of {} passed the filter",
            set.len()
        )));
    }
    Ok((TraceSet::new(kept, set.mean_photon_number(), set.source())?, report))
}
