//! Iterative radix-2 decimation-in-time FFT.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// In-place forward FFT. `buf.len()` must be a power of two.
pub fn fft_in_place(buf: &mut [Complex64]) -> Result<()> {
    let n = buf.len();
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::InvalidInput(format!("fft length {n} is not a power of two")));
    }
    let bits = n.trailing_zeros();
    if bits == 0 {
        return Ok(());
    }
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }

    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let step = -2.0 * std::f64::consts::PI / len as f64;
        // Twiddles are computed directly per index rather than by repeated
        // multiplication so rounding error does not grow along the stage.
        let twiddles: Vec<Complex64> = (0..half).map(|k| Complex64::from_polar(1.0, step * k as f64)).collect();
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let a = buf[start + k];
                let b = buf[start + k + half] * twiddles[k];
                buf[start + k] = a + b;
                buf[start + k + half] = a - b;
            }
        }
        len <<= 1;
    }
    Ok(())
}

/// Full complex spectrum of a real sequence.
pub fn fft_real(samples: &[f64]) -> Result<Vec<Complex64>> {
    let mut buf: Vec<Complex64> = samples.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    fft_in_place(&mut buf)?;
    Ok(buf)
}

/// Magnitudes `|X_k|` for `k = 0..=N/2`. Requires a power-of-two length of at least 8.
pub fn fft_magnitude(samples: &[f64]) -> Result<Vec<f64>> {
    let n = samples.len();
    if n < 8 || !n.is_power_of_two() {
        return Err(Error::InvalidInput(format!(
            "fft_magnitude needs a power-of-two length >= 8, got {n}"
        )));
    }
    let spectrum = fft_real(samples)?;
    Ok(spectrum[..=n / 2].iter().map(|c| c.norm()).collect())
}
