//! Discrete Fourier machinery: Hann windowing, forward/inverse DFT on
//! one-sided spectra, polar amplitude/phase extraction, low-mode truncation,
//! and the learnable per-mode complex filter.
//!
//! Transforms use the direct O(T^2) summation, which is exact against the
//! definition and plenty fast at the sequence lengths this crate targets.
//! Real inputs keep only modes 0..=floor(T/2); the discarded upper half is
//! the conjugate mirror and is reinstated on inversion.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::numerics::{ComplexArray, RealArray};

/// Per-channel amplitude/phase arrays over retained low-frequency modes.
///
/// `amplitude[c][m] = |v[c][m]| / T`, `phase[c][m] = atan2(im, re)` in
/// [-pi, pi]. A zero coefficient maps to amplitude 0 with phase 0.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarSpectrum {
    pub amplitude: RealArray,
    pub phase: RealArray,
    pub modes: usize,
    pub signal_len: usize,
}

/// Learnable complex per-mode, per-channel multipliers.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralWeights {
    pub weights: ComplexArray,
}

impl SpectralWeights {
    /// Multiplicative identity (1 + 0i) for every mode.
    pub fn identity(channels: usize, modes: usize) -> Self {
        let mut w = ComplexArray::zeros(&[channels, modes]);
        for r in &mut w.re {
            *r = 1.0;
        }
        SpectralWeights { weights: w }
    }
}

/// Number of one-sided modes for a length-`t` real signal.
pub fn one_sided_len(t: usize) -> usize {
    t / 2 + 1
}

/// Raised-cosine taper w[n] = 0.5 - 0.5 cos(2 pi n / (N - 1)).
pub fn hann_window(n: usize) -> Result<RealArray> {
    if n < 2 {
        return Err(Error::invalid(format!("hann window needs N >= 2, got {n}")));
    }
    let data = (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
        .collect();
    Ok(RealArray::from_vec(data))
}

/// Multiplies each channel of a `[d, T]` array by the length-T Hann window.
pub fn smooth(x: &RealArray) -> Result<RealArray> {
    if x.shape.len() != 2 {
        return Err(Error::shape(format!(
            "smooth expects [channels, T], got {:?}",
            x.shape
        )));
    }
    let (d, t) = (x.shape[0], x.shape[1]);
    let w = hann_window(t)?;
    let mut out = RealArray::zeros(&[d, t]);
    for c in 0..d {
        for i in 0..t {
            *out.at2_mut(c, i) = x.at2(c, i) * w.data[i];
        }
    }
    Ok(out)
}

/// Forward DFT of a real signal, one-sided: v[m] = sum_t x[t] e^{-i 2 pi m t / T}
/// for m in 0..=floor(T/2).
pub fn dft_forward(x: &[f64]) -> ComplexArray {
    let t = x.len();
    let modes = one_sided_len(t);
    let mut re = vec![0.0; modes];
    let mut im = vec![0.0; modes];
    for (m, (rm, imm)) in re.iter_mut().zip(im.iter_mut()).enumerate() {
        let mut acc_re = 0.0;
        let mut acc_im = 0.0;
        for (n, xn) in x.iter().enumerate() {
            let angle = -2.0 * PI * (m * n) as f64 / t as f64;
            acc_re += xn * angle.cos();
            acc_im += xn * angle.sin();
        }
        *rm = acc_re;
        *imm = acc_im;
    }
    ComplexArray {
        shape: vec![modes],
        re,
        im,
    }
}

/// Forward DFT applied per channel of a `[d, T]` array; output `[d, floor(T/2)+1]`.
pub fn dft_forward_channels(x: &RealArray) -> ComplexArray {
    let (d, t) = (x.shape[0], x.shape[1]);
    let modes = one_sided_len(t);
    let mut out = ComplexArray::zeros(&[d, modes]);
    for c in 0..d {
        let v = dft_forward(&x.data[c * t..(c + 1) * t]);
        out.re[c * modes..(c + 1) * modes].copy_from_slice(&v.re);
        out.im[c * modes..(c + 1) * modes].copy_from_slice(&v.im);
    }
    out
}

/// Inverse DFT from a one-sided spectrum of length floor(T/2)+1 back to a
/// length-T real signal, reinstating the conjugate-mirror upper modes.
pub fn dft_inverse(v: &ComplexArray, t: usize) -> Result<Vec<f64>> {
    let modes = one_sided_len(t);
    if v.numel() != modes {
        return Err(Error::shape(format!(
            "one-sided spectrum for T={t} must have {modes} modes, got {}",
            v.numel()
        )));
    }
    let mut x = vec![0.0; t];
    for (n, xn) in x.iter_mut().enumerate() {
        let mut acc = v.re[0];
        for m in 1..modes {
            // Mode m and its mirror T-m contribute twice the real part,
            // except the Nyquist mode of even T which is self-mirrored.
            let angle = 2.0 * PI * (m * n) as f64 / t as f64;
            let weight = if t % 2 == 0 && m == modes - 1 { 1.0 } else { 2.0 };
            acc += weight * (v.re[m] * angle.cos() - v.im[m] * angle.sin());
        }
        *xn = acc / t as f64;
    }
    Ok(x)
}

/// Adjoint of `dft_inverse` as a linear map: pushes a gradient on the
/// reconstructed signal back onto the one-sided coefficients.
pub fn dft_inverse_adjoint(grad_x: &[f64], t: usize) -> ComplexArray {
    let modes = one_sided_len(t);
    let mut grad = ComplexArray::zeros(&[modes]);
    for (n, g) in grad_x.iter().enumerate() {
        grad.re[0] += g / t as f64;
        for m in 1..modes {
            let angle = 2.0 * PI * (m * n) as f64 / t as f64;
            let weight = if t % 2 == 0 && m == modes - 1 { 1.0 } else { 2.0 };
            grad.re[m] += weight * g * angle.cos() / t as f64;
            grad.im[m] -= weight * g * angle.sin() / t as f64;
        }
    }
    grad
}

/// Amplitude/phase extraction: a[m] = |v[m]|/T, p[m] = atan2(im, re).
pub fn to_polar(v: &ComplexArray, t: usize) -> PolarSpectrum {
    let shape = v.shape.clone();
    let mut amp = vec![0.0; v.numel()];
    let mut phase = vec![0.0; v.numel()];
    for i in 0..v.numel() {
        let (re, im) = (v.re[i], v.im[i]);
        let mag = (re * re + im * im).sqrt();
        amp[i] = mag / t as f64;
        phase[i] = if re == 0.0 && im == 0.0 {
            0.0
        } else {
            im.atan2(re)
        };
    }
    let modes = *shape.last().unwrap();
    PolarSpectrum {
        amplitude: RealArray {
            shape: shape.clone(),
            data: amp,
        },
        phase: RealArray { shape, data: phase },
        modes,
        signal_len: t,
    }
}

/// Inverse of `to_polar`: v[m] = T a[m] (cos p[m] + i sin p[m]).
pub fn from_polar(s: &PolarSpectrum) -> Result<ComplexArray> {
    let t = s.signal_len as f64;
    let mut out = ComplexArray::zeros(&s.amplitude.shape);
    for i in 0..s.amplitude.numel() {
        let a = s.amplitude.data[i];
        if a < 0.0 {
            return Err(Error::invalid(format!(
                "negative amplitude {a} at flat index {i}"
            )));
        }
        let p = s.phase.data[i];
        out.re[i] = t * a * p.cos();
        out.im[i] = t * a * p.sin();
    }
    Ok(out)
}

/// Retains the first `m` (lowest-frequency) coefficients along the last axis.
pub fn truncate_modes(v: &ComplexArray, m: usize) -> Result<ComplexArray> {
    if m == 0 {
        return Err(Error::invalid("cannot truncate to zero modes".to_string()));
    }
    let modes = *v.shape.last().unwrap();
    if m > modes {
        return Err(Error::shape(format!(
            "cannot retain {m} modes from a {modes}-mode spectrum"
        )));
    }
    let rows: usize = v.shape[..v.shape.len() - 1].iter().product();
    let mut shape = v.shape.clone();
    *shape.last_mut().unwrap() = m;
    let mut out = ComplexArray::zeros(&shape);
    for r in 0..rows {
        out.re[r * m..(r + 1) * m].copy_from_slice(&v.re[r * modes..r * modes + m]);
        out.im[r * m..(r + 1) * m].copy_from_slice(&v.im[r * modes..r * modes + m]);
    }
    Ok(out)
}

/// Zero-pads a truncated `[d, M]` spectrum back to `[d, floor(T/2)+1]`.
pub fn pad_modes(v: &ComplexArray, t: usize) -> ComplexArray {
    let modes = one_sided_len(t);
    let m = *v.shape.last().unwrap();
    let rows: usize = v.shape[..v.shape.len() - 1].iter().product();
    let mut shape = v.shape.clone();
    *shape.last_mut().unwrap() = modes;
    let mut out = ComplexArray::zeros(&shape);
    for r in 0..rows {
        out.re[r * modes..r * modes + m].copy_from_slice(&v.re[r * m..(r + 1) * m]);
        out.im[r * modes..r * modes + m].copy_from_slice(&v.im[r * m..(r + 1) * m]);
    }
    out
}

/// Per-mode, per-channel complex product with the learnable weights.
pub fn spectral_convolution(v: &ComplexArray, b: &SpectralWeights) -> Result<ComplexArray> {
    if v.shape != b.weights.shape {
        return Err(Error::shape(format!(
            "spectral convolution shape mismatch: input {:?}, weights {:?}",
            v.shape, b.weights.shape
        )));
    }
    let mut out = ComplexArray::zeros(&v.shape);
    for i in 0..v.numel() {
        out.re[i] = b.weights.re[i] * v.re[i] - b.weights.im[i] * v.im[i];
        out.im[i] = b.weights.re[i] * v.im[i] + b.weights.im[i] * v.re[i];
    }
    Ok(out)
}

/// Gradients of `spectral_convolution` with respect to the weights and the
/// input spectrum.
pub fn spectral_convolution_backward(
    v: &ComplexArray,
    b: &SpectralWeights,
    grad_out: &ComplexArray,
) -> (ComplexArray, ComplexArray) {
    let mut grad_b = ComplexArray::zeros(&b.weights.shape);
    let mut grad_v = ComplexArray::zeros(&v.shape);
    for i in 0..v.numel() {
        let (gr, gi) = (grad_out.re[i], grad_out.im[i]);
        grad_b.re[i] = gr * v.re[i] + gi * v.im[i];
        grad_b.im[i] = -gr * v.im[i] + gi * v.re[i];
        grad_v.re[i] = gr * b.weights.re[i] + gi * b.weights.im[i];
        grad_v.im[i] = -gr * b.weights.im[i] + gi * b.weights.re[i];
    }
    (grad_b, grad_v)
}

/// Gradient of (a, p) with respect to (re, im); coefficients with magnitude
/// below `tiny` contribute nothing (amplitude kink, undefined phase).
pub fn to_polar_backward(
    v: &ComplexArray,
    t: usize,
    grad_amp: &RealArray,
    grad_phase: &RealArray,
) -> ComplexArray {
    let tiny = 1e-300;
    let mut grad_v = ComplexArray::zeros(&v.shape);
    for i in 0..v.numel() {
        let (re, im) = (v.re[i], v.im[i]);
        let mag_sq = re * re + im * im;
        let mag = mag_sq.sqrt();
        if mag <= tiny {
            continue;
        }
        let ga = grad_amp.data[i];
        let gp = grad_phase.data[i];
        grad_v.re[i] = ga * re / (t as f64 * mag) + gp * (-im / mag_sq);
        grad_v.im[i] = ga * im / (t as f64 * mag) + gp * (re / mag_sq);
    }
    grad_v
}

/// Gradient of `from_polar` output with respect to (a, p).
pub fn from_polar_backward(
    s: &PolarSpectrum,
    grad_out: &ComplexArray,
) -> (RealArray, RealArray) {
    let t = s.signal_len as f64;
    let mut grad_amp = RealArray::zeros(&s.amplitude.shape);
    let mut grad_phase = RealArray::zeros(&s.phase.shape);
    for i in 0..s.amplitude.numel() {
        let a = s.amplitude.data[i];
        let p = s.phase.data[i];
        let (gr, gi) = (grad_out.re[i], grad_out.im[i]);
        grad_amp.data[i] = t * (gr * p.cos() + gi * p.sin());
        grad_phase.data[i] = t * a * (-gr * p.sin() + gi * p.cos());
    }
    (grad_amp, grad_phase)
}
