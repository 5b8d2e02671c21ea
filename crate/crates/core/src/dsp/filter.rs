//! Second-order Butterworth sections (bilinear transform, DF-II transposed).

use crate::dsp::Waveform;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    fn check(cutoff_hz: f64, rate_hz: f64) -> Result<f64> {
        if !(cutoff_hz > 0.0 && cutoff_hz < rate_hz / 2.0) {
            return Err(Error::InvalidInput(format!(
                "cutoff {cutoff_hz} Hz outside (0, {}) Hz",
                rate_hz / 2.0
            )));
        }
        // Prewarped analog frequency.
        Ok((std::f64::consts::PI * cutoff_hz / rate_hz).tan())
    }

    pub fn butterworth_lowpass(cutoff_hz: f64, rate_hz: f64) -> Result<Self> {
        let k = Self::check(cutoff_hz, rate_hz)?;
        let q_inv = std::f64::consts::SQRT_2;
        let norm = 1.0 / (1.0 + k * q_inv + k * k);
        let b0 = k * k * norm;
        Ok(Biquad {
            b0,
            b1: 2.0 * b0,
            b2: b0,
            a1: 2.0 * (k * k - 1.0) * norm,
            a2: (1.0 - k * q_inv + k * k) * norm,
        })
    }

    pub fn butterworth_highpass(cutoff_hz: f64, rate_hz: f64) -> Result<Self> {
        let k = Self::check(cutoff_hz, rate_hz)?;
        let q_inv = std::f64::consts::SQRT_2;
        let norm = 1.0 / (1.0 + k * q_inv + k * k);
        Ok(Biquad {
            b0: norm,
            b1: -2.0 * norm,
            b2: norm,
            a1: 2.0 * (k * k - 1.0) * norm,
            a2: (1.0 - k * q_inv + k * k) * norm,
        })
    }

    /// Causal filtering from zero initial state.
    pub fn filter(&self, input: &[f64]) -> Vec<f64> {
        let (mut z1, mut z2) = (0.0, 0.0);
        input
            .iter()
            .map(|&x| {
                let y = self.b0 * x + z1;
                z1 = self.b1 * x - self.a1 * y + z2;
                z2 = self.b2 * x - self.a2 * y;
                y
            })
            .collect()
    }
}

/// High-pass at `low_hz` followed by low-pass at `high_hz`.
pub fn bandpass(w: &Waveform, low_hz: f64, high_hz: f64) -> Result<Waveform> {
    let rate = w.sample_rate_hz;
    if !(low_hz > 0.0 && low_hz < high_hz && high_hz < rate / 2.0) {
        return Err(Error::InvalidInput(format!(
            "band [{low_hz}, {high_hz}] Hz invalid at {rate} Hz"
        )));
    }
    let hp = Biquad::butterworth_highpass(low_hz, rate)?;
    let lp = Biquad::butterworth_lowpass(high_hz, rate)?;
    let samples = lp.filter(&hp.filter(&w.samples));
    Ok(Waveform {
        sample_rate_hz: rate,
        samples,
        quality_mask: w.quality_mask.clone(),
    })
}
