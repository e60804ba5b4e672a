//! Mean photon number from detector click statistics.

use crate::error::{Error, Result};

/// Mean photon number per pulse, `n̄ = −ln(1 − CR/RR)`.
///
/// Assumes Poissonian light and a detector that clicks at most once per
/// pulse, so `CR/RR` is the probability of at least one photon.
pub fn calibrate_nbar(count_rate: f64, repetition_rate: f64) -> Result<f64> {
    if !(count_rate.is_finite() && repetition_rate.is_finite()) {
        return Err(Error::invalid("rates must be finite"));
    }
    if count_rate < 0.0 || repetition_rate <= 0.0 {
        return Err(Error::invalid(format!(
            "need count_rate >= 0 and repetition_rate > 0, got {count_rate} and {repetition_rate}"
        )));
    }
    if count_rate >= repetition_rate {
        return Err(Error::Saturation {
            count_rate,
            repetition_rate,
        });
    }
    Ok(-(-count_rate / repetition_rate).ln_1p())
}

/// Count rate expected at mean photon number `n_bar`; inverse of
/// [`calibrate_nbar`].
pub fn expected_count_rate(n_bar: f64, repetition_rate: f64) -> f64 {
    -repetition_rate * (-n_bar).exp_m1()
}
