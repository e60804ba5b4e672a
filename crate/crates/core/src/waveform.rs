//! Waveform records and the synthetic SNSPD pulse generator.
//!
//! The generator is the ground truth for everything downstream: every record
//! carries the photon number that produced it. Pulses follow a
//! double-exponential shape whose peak drops and whose rising edge moves
//! earlier as the photon number grows.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One uniformly sampled detector output record.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    samples: Vec<f32>,
    sample_period: f64,
    t0: f64,
    id: u64,
}

impl Trace {
    pub fn new(samples: Vec<f32>, sample_period: f64, t0: f64, id: u64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("trace has no samples"));
        }
        if !(sample_period > 0.0 && sample_period.is_finite()) {
            return Err(Error::invalid(format!(
                "sample period must be positive, got {sample_period}"
            )));
        }
        if !t0.is_finite() {
            return Err(Error::invalid("trace start time is not finite"));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("sample {i} is not finite")));
        }
        Ok(Self {
            samples,
            sample_period,
            t0,
            id,
        })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Seconds between consecutive samples.
    pub fn sample_period(&self) -> f64 {
        self.sample_period
    }

    /// Trigger-relative time of the first sample, in seconds.
    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn time_at(&self, index: usize) -> f64 {
        self.t0 + index as f64 * self.sample_period
    }

    /// Largest sample value.
    pub fn peak(&self) -> f64 {
        self.samples
            .iter()
            .fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.samples.iter().map(|&v| v as f64).collect()
    }

    /// Copy of samples `[start, start + len)` with `offset` subtracted, keeping
    /// the time axis consistent.
    pub fn window(&self, start: usize, len: usize, offset: f64) -> Result<Trace> {
        if len == 0 || start + len > self.samples.len() {
            return Err(Error::invalid(format!(
                "window [{start}, {}) outside trace of length {}",
                start + len,
                self.samples.len()
            )));
        }
        let samples = self.samples[start..start + len]
            .iter()
            .map(|&v| (v as f64 - offset) as f32)
            .collect();
        Trace::new(samples, self.sample_period, self.time_at(start), self.id)
    }

    pub fn with_id(mut self, id: u64) -> Self {
        self.id = id;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Measured,
    Synthetic,
}

/// An ordered collection of traces that share length and sample period.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSet {
    traces: Vec<Trace>,
    mean_photon_number: Option<f64>,
    source: Source,
}

impl TraceSet {
    pub fn new(traces: Vec<Trace>, mean_photon_number: Option<f64>, source: Source) -> Result<Self> {
        if let Some(first) = traces.first() {
            for t in &traces[1..] {
                if t.len() != first.len() || t.sample_period() != first.sample_period() {
                    return Err(Error::invalid(format!(
                        "trace {} has length {} / period {:e}, expected {} / {:e}",
                        t.id(),
                        t.len(),
                        t.sample_period(),
                        first.len(),
                        first.sample_period()
                    )));
                }
            }
        }
        if let Some(n) = mean_photon_number {
            if !(n >= 0.0 && n.is_finite()) {
                return Err(Error::invalid(format!("mean photon number label {n}")));
            }
        }
        Ok(Self {
            traces,
            mean_photon_number,
            source,
        })
    }

    pub fn traces(&self) -> &[Trace] {
        &self.traces
    }

    pub fn into_traces(self) -> Vec<Trace> {
        self.traces
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    pub fn mean_photon_number(&self) -> Option<f64> {
        self.mean_photon_number
    }

    pub fn source(&self) -> Source {
        self.source
    }

    /// Samples per trace, or 0 for an empty set.
    pub fn trace_len(&self) -> usize {
        self.traces.first().map_or(0, Trace::len)
    }

    pub fn sample_period(&self) -> Option<f64> {
        self.traces.first().map(Trace::sample_period)
    }
}

/// Parameters of the synthetic pulse oracle.
///
/// The per-photon shifts of amplitude and edge time are applied through
/// `g(n) = 1 + r + r² + … + r^(n−2)` with `r = step_ratio`, so `r = 1` gives
/// shifts linear in `n` and `r < 1` makes consecutive photon numbers
/// progressively harder to tell apart. In both cases `g(1) = 0, g(2) = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_bar: f64,
    pub amp_base: f64,
    pub amp_step: f64,
    pub t_rise_base: f64,
    pub t_rise_step: f64,
    pub step_ratio: f64,
    pub tau_rise: f64,
    pub tau_fall: f64,
    pub jitter_sigma: f64,
    pub noise_sigma: f64,
    pub sample_period: f64,
    pub n_samples: usize,
    pub rng_seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_bar: 1.5,
            amp_base: 0.370,
            amp_step: 0.05e-3,
            t_rise_base: 18e-9,
            t_rise_step: 60e-12,
            step_ratio: 0.85,
            tau_rise: 1e-9,
            tau_fall: 20e-9,
            jitter_sigma: 11.3e-12,
            noise_sigma: 0.2e-3,
            sample_period: 8e-12,
            n_samples: 30_000,
            rng_seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.n_bar,
            self.amp_base,
            self.amp_step,
            self.t_rise_base,
            self.t_rise_step,
            self.step_ratio,
            self.tau_rise,
            self.tau_fall,
            self.jitter_sigma,
            self.noise_sigma,
            self.sample_period,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("synthetic config contains non-finite values"));
        }
        if self.n_bar < 0.0 {
            return Err(Error::invalid("n_bar must be nonnegative"));
        }
        if self.amp_base <= 0.0 {
            return Err(Error::invalid("amp_base must be positive"));
        }
        if self.amp_step < 0.0 || self.t_rise_step < 0.0 {
            return Err(Error::invalid("amp_step and t_rise_step must be nonnegative"));
        }
        if !(self.step_ratio > 0.0 && self.step_ratio <= 1.0) {
            return Err(Error::invalid("step_ratio must lie in (0, 1]"));
        }
        if self.tau_rise <= 0.0 || self.tau_fall <= 0.0 || self.sample_period <= 0.0 {
            return Err(Error::invalid("time constants and sample period must be positive"));
        }
        if self.tau_rise >= self.tau_fall {
            return Err(Error::invalid("tau_rise must be shorter than tau_fall"));
        }
        if self.jitter_sigma < 0.0 || self.noise_sigma < 0.0 {
            return Err(Error::invalid("noise and jitter must be nonnegative"));
        }
        if self.n_samples == 0 {
            return Err(Error::invalid("n_samples must be positive"));
        }
        Ok(())
    }

    /// Cumulative shift multiplier for photon number `n`.
    pub fn shift_factor(&self, n: u32) -> f64 {
        let steps = n.saturating_sub(1);
        if self.step_ratio == 1.0 {
            steps as f64
        } else {
            (1.0 - self.step_ratio.powi(steps as i32)) / (1.0 - self.step_ratio)
        }
    }

    /// Pulse amplitude for `n ≥ 1` photons and whether the floor at
    /// `amp_base / 10` was applied.
    pub fn amplitude(&self, n: u32) -> (f64, bool) {
        let raw = self.amp_base - self.amp_step * self.shift_factor(n);
        let floor = self.amp_base / 10.0;
        if raw < floor {
            (floor, true)
        } else {
            (raw, false)
        }
    }

    /// Nominal (jitter-free) pulse onset for `n ≥ 1` photons.
    pub fn onset(&self, n: u32) -> f64 {
        self.t_rise_base - self.t_rise_step * self.shift_factor(n)
    }

    /// Noiseless pulse value at time `t` for a pulse of amplitude `amp`
    /// starting at `onset`.
    pub fn pulse_value(&self, amp: f64, onset: f64, t: f64) -> f64 {
        if t <= onset {
            return 0.0;
        }
        let x = t - onset;
        amp * (1.0 - (-x / self.tau_rise).exp()) * (-x / self.tau_fall).exp()
    }
}

/// A synthetic trace with the photon number that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledTrace {
    pub trace: Trace,
    pub true_n: u32,
    /// Set when the amplitude floor replaced a non-physical amplitude.
    pub amplitude_floored: bool,
}

/// Deterministic, random-access source of synthetic records.
///
/// Record `id` draws from its own ChaCha stream, so records can be produced
/// in any order (or concurrently) and still match bit for bit.
#[derive(Debug, Clone)]
pub struct SyntheticSource {
    cfg: SyntheticConfig,
    poisson: Option<Poisson<f64>>,
}

const REANCHOR: usize = 256;

impl SyntheticSource {
    pub fn new(cfg: SyntheticConfig) -> Result<Self> {
        cfg.validate()?;
        let poisson = if cfg.n_bar > 0.0 {
            Some(Poisson::new(cfg.n_bar).map_err(|e| Error::invalid(e.to_string()))?)
        } else {
            None
        };
        Ok(Self { cfg, poisson })
    }

    pub fn config(&self) -> &SyntheticConfig {
        &self.cfg
    }

    fn rng_for(&self, id: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.rng_seed);
        rng.set_stream(id);
        rng
    }

    fn draw_n(&self, rng: &mut ChaCha8Rng) -> u32 {
        match &self.poisson {
            Some(p) => p.sample(rng) as u32,
            None => 0,
        }
    }

    /// Photon number of record `id`, without synthesizing its samples.
    pub fn photon_number(&self, id: u64) -> u32 {
        let mut rng = self.rng_for(id);
        self.draw_n(&mut rng)
    }

    /// Record `id` with a Poisson-drawn photon number.
    pub fn record(&self, id: u64) -> LabeledTrace {
        let mut rng = self.rng_for(id);
        let n = self.draw_n(&mut rng);
        self.synthesize(n, id, &mut rng)
    }

    /// Record `id` with the photon number forced to `n`.
    pub fn record_with_n(&self, n: u32, id: u64) -> LabeledTrace {
        let mut rng = self.rng_for(id);
        let _ = self.draw_n(&mut rng);
        self.synthesize(n, id, &mut rng)
    }

    fn synthesize(&self, n: u32, id: u64, rng: &mut ChaCha8Rng) -> LabeledTrace {
        let cfg = &self.cfg;
        let dt = cfg.sample_period;
        let mut samples = vec![0.0f64; cfg.n_samples];
        let mut floored = false;

        if n >= 1 {
            let (amp, fl) = cfg.amplitude(n);
            floored = fl;
            let jitter = if cfg.jitter_sigma > 0.0 {
                let z: f64 = rng.sample(StandardNormal);
                z * cfg.jitter_sigma
            } else {
                0.0
            };
            let onset = cfg.onset(n) + jitter;
            add_pulse(&mut samples, dt, 0.0, amp, onset, cfg.tau_rise, cfg.tau_fall);
        }

        if cfg.noise_sigma > 0.0 {
            for v in samples.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *v += z * cfg.noise_sigma;
            }
        }

        let samples = samples.into_iter().map(|v| v as f32).collect();
        let trace = Trace {
            samples,
            sample_period: dt,
            t0: 0.0,
            id,
        };
        LabeledTrace {
            trace,
            true_n: n,
            amplitude_floored: floored,
        }
    }
}

/// Adds `amp·(1 − e^{−x/τr})·e^{−x/τf}`, `x = t − onset`, to every sample
/// after the onset. Exponentials are advanced multiplicatively and
/// re-anchored every few hundred samples.
pub(crate) fn add_pulse(
    samples: &mut [f64],
    dt: f64,
    t0: f64,
    amp: f64,
    onset: f64,
    tau_rise: f64,
    tau_fall: f64,
) {
    let rate_fall = 1.0 / tau_fall;
    let rate_both = 1.0 / tau_rise + 1.0 / tau_fall;
    let first = ((onset - t0) / dt).floor() + 1.0;
    let first = if first < 0.0 { 0 } else { first as usize };
    if first >= samples.len() {
        return;
    }
    let step_fall = (-dt * rate_fall).exp();
    let step_both = (-dt * rate_both).exp();
    let mut e_fall = 0.0;
    let mut e_both = 0.0;
    for (k, v) in samples[first..].iter_mut().enumerate() {
        let i = first + k;
        if k % REANCHOR == 0 {
            let x = t0 + i as f64 * dt - onset;
            e_fall = (-x * rate_fall).exp();
            e_both = (-x * rate_both).exp();
        }
        if t0 + i as f64 * dt > onset {
            *v += amp * (e_fall - e_both);
        }
        e_fall *= step_fall;
        e_both *= step_both;
    }
}

/// Draws `count` records `0..count` from `cfg`.
pub fn generate_synthetic(cfg: &SyntheticConfig, count: usize) -> Result<Vec<LabeledTrace>> {
    if count == 0 {
        return Err(Error::invalid("count must be at least 1"));
    }
    let source = SyntheticSource::new(cfg.clone())?;
    Ok((0..count as u64).map(|id| source.record(id)).collect())
}

/// Natural log of `n!`.
pub fn ln_factorial(n: u64) -> f64 {
    if n < 2 {
        return 0.0;
    }
    if n <= 256 {
        return (2..=n).map(|k| (k as f64).ln()).sum();
    }
    // Stirling series, accurate far beyond f64 resolution at this size.
    let x = n as f64;
    x * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI * x).ln() + 1.0 / (12.0 * x)
        - 1.0 / (360.0 * x.powi(3))
}

/// Poisson probability `e^{−n̄} n̄ⁿ / n!`.
pub fn poisson_pmf(n: u64, n_bar: f64) -> Result<f64> {
    if !(n_bar > 0.0 && n_bar.is_finite()) {
        return Err(Error::invalid(format!("Poisson mean must be positive, got {n_bar}")));
    }
    Ok(poisson_pmf_unchecked(n, n_bar))
}

pub(crate) fn poisson_pmf_unchecked(n: u64, n_bar: f64) -> f64 {
    if n == 0 {
        return (-n_bar).exp();
    }
    (n as f64 * n_bar.ln() - n_bar - ln_factorial(n)).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet(n_bar: f64) -> SyntheticConfig {
        SyntheticConfig {
            n_bar,
            noise_sigma: 0.0,
            jitter_sigma: 0.0,
            n_samples: 6000,
            ..Default::default()
        }
    }

    /// First upward crossing of `level`, linearly interpolated on a dense grid
    /// of the closed-form pulse.
    fn dense_crossing(cfg: &SyntheticConfig, n: u32, level: f64) -> f64 {
        let (amp, _) = cfg.amplitude(n);
        let onset = cfg.onset(n);
        let step = cfg.sample_period / 1000.0;
        let mut t = onset;
        let mut prev = 0.0;
        loop {
            let v = cfg.pulse_value(amp, onset, t + step);
            if v >= level {
                return t + step * (level - prev) / (v - prev);
            }
            prev = v;
            t += step;
        }
    }

    fn sampled_crossing(trace: &Trace, level: f64) -> f64 {
        let s = trace.to_f64();
        let i = s.iter().position(|&v| v >= level).unwrap();
        trace.time_at(i - 1) + trace.sample_period() * (level - s[i - 1]) / (s[i] - s[i - 1])
    }

    #[test]
    fn noiseless_peak_matches_closed_form() {
        let cfg = quiet(1.0);
        let src = SyntheticSource::new(cfg.clone()).unwrap();
        let rec = src.record_with_n(1, 3);
        let (amp, _) = cfg.amplitude(1);
        let expected = (0..cfg.n_samples)
            .map(|i| cfg.pulse_value(amp, cfg.onset(1), i as f64 * cfg.sample_period))
            .fold(f64::MIN, f64::max);
        assert!((rec.trace.peak() - expected).abs() < 1e-6, "{} vs {expected}", rec.trace.peak());
    }

    #[test]
    fn two_photon_edge_is_earlier_by_one_step() {
        let cfg = quiet(1.0);
        let src = SyntheticSource::new(cfg.clone()).unwrap();
        let one = src.record_with_n(1, 0).trace;
        let two = src.record_with_n(2, 0).trace;
        let level1 = one.peak() / 2.0;
        let level2 = two.peak() / 2.0;
        let shift = sampled_crossing(&one, level1) - sampled_crossing(&two, level2);
        let dense = dense_crossing(&cfg, 1, level1) - dense_crossing(&cfg, 2, level2);
        assert!((shift - dense).abs() < cfg.sample_period, "{shift} vs {dense}");
        assert!((shift - cfg.t_rise_step).abs() < cfg.sample_period, "{shift}");
    }

    #[test]
    fn fixed_seed_is_bitwise_reproducible() {
        let cfg = SyntheticConfig {
            n_samples: 2000,
            rng_seed: 42,
            ..Default::default()
        };
        let a = generate_synthetic(&cfg, 20).unwrap();
        let b = generate_synthetic(&cfg, 20).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.true_n, y.true_n);
            let xb: Vec<u32> = x.trace.samples().iter().map(|v| v.to_bits()).collect();
            let yb: Vec<u32> = y.trace.samples().iter().map(|v| v.to_bits()).collect();
            assert_eq!(xb, yb);
        }
    }

    #[test]
    fn zero_count_is_rejected() {
        assert!(matches!(
            generate_synthetic(&SyntheticConfig::default(), 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn zero_photons_give_pure_noise() {
        let cfg = SyntheticConfig {
            noise_sigma: 0.0,
            n_samples: 500,
            ..Default::default()
        };
        let src = SyntheticSource::new(cfg).unwrap();
        let rec = src.record_with_n(0, 1);
        assert!(rec.trace.samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn amplitude_floor_is_flagged() {
        let cfg = SyntheticConfig {
            amp_step: 0.1,
            ..quiet(1.0)
        };
        let (amp, floored) = cfg.amplitude(20);
        assert!(floored);
        assert_eq!(amp, cfg.amp_base / 10.0);
        let src = SyntheticSource::new(cfg).unwrap();
        assert!(src.record_with_n(20, 0).amplitude_floored);
        assert!(!src.record_with_n(1, 0).amplitude_floored);
    }

    #[test]
    fn noiseless_oracle_is_monotone_in_n() {
        let cfg = SyntheticConfig {
            amp_step: 5e-3,
            ..quiet(1.0)
        };
        let src = SyntheticSource::new(cfg).unwrap();
        let traces: Vec<Trace> = (1..=6).map(|n| src.record_with_n(n, 0).trace).collect();
        for w in traces.windows(2) {
            assert!(w[1].peak() < w[0].peak());
            assert!(sampled_crossing(&w[1], w[1].peak() / 2.0) < sampled_crossing(&w[0], w[0].peak() / 2.0));
        }
    }

    #[test]
    fn decaying_steps_shrink_shifts() {
        let cfg = SyntheticConfig {
            step_ratio: 0.8,
            ..quiet(1.0)
        };
        assert_eq!(cfg.shift_factor(1), 0.0);
        assert!((cfg.shift_factor(2) - 1.0).abs() < 1e-15);
        assert!((cfg.shift_factor(3) - 1.8).abs() < 1e-12);
        assert!((cfg.shift_factor(4) - 2.44).abs() < 1e-12);
    }

    #[test]
    fn pmf_examples() {
        assert!((poisson_pmf(0, 2.3).unwrap() - (-2.3f64).exp()).abs() < 1e-15);
        assert!((poisson_pmf(1, 1.0).unwrap() - 0.367_879_441_171_442_3).abs() < 1e-12);
        // recurrence p(n) = p(n−1)·n̄/n
        let mut p = (-3.5f64).exp();
        for k in 1..=4 {
            p *= 3.5 / k as f64;
        }
        assert!((poisson_pmf(4, 3.5).unwrap() - p).abs() < 1e-12);
    }

    #[test]
    fn pmf_rejects_nonpositive_mean() {
        assert!(poisson_pmf(1, 0.0).is_err());
        assert!(poisson_pmf(1, -1.0).is_err());
    }

    #[test]
    fn pmf_sums_to_one() {
        let total: f64 = (0..200).map(|n| poisson_pmf(n, 6.0).unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-12);
        let partial: f64 = (0..5).map(|n| poisson_pmf(n, 6.0).unwrap()).sum();
        assert!(partial < 1.0);
    }

    #[test]
    fn ln_factorial_switches_cleanly() {
        let exact: f64 = (2..=300u64).map(|k| (k as f64).ln()).sum();
        assert!((ln_factorial(300) - exact).abs() / exact < 1e-13);
    }
}
