//! Butterworth design via the bilinear transform, realised as a cascade of
//! second-order sections (direct form II transposed).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    HighPass,
    LowPass,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub kind: FilterKind,
    pub order: usize,
    pub cutoff_hz: f64,
    pub sample_rate_hz: f64,
}

impl FilterSpec {
    pub fn low_pass(order: usize, cutoff_hz: f64, sample_rate_hz: f64) -> Self {
        Self { kind: FilterKind::LowPass, order, cutoff_hz, sample_rate_hz }
    }

    pub fn high_pass(order: usize, cutoff_hz: f64, sample_rate_hz: f64) -> Self {
        Self { kind: FilterKind::HighPass, order, cutoff_hz, sample_rate_hz }
    }

    pub fn validate(&self) -> Result<()> {
        if self.order == 0 || self.order > 8 {
            return Err(Error::InvalidSpec(format!("order {} outside 1..=8", self.order)));
        }
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(Error::InvalidSpec(format!(
                "sample rate {} Hz is not positive",
                self.sample_rate_hz
            )));
        }
        let nyquist = self.sample_rate_hz / 2.0;
        if !(self.cutoff_hz.is_finite() && self.cutoff_hz > 0.0 && self.cutoff_hz < nyquist) {
            return Err(Error::InvalidSpec(format!(
                "cutoff {} Hz must lie strictly between 0 and Nyquist ({nyquist} Hz)",
                self.cutoff_hz
            )));
        }
        Ok(())
    }
}

/// One normalised second-order section, `a0 == 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    /// Complex response at normalised angular frequency `omega` (rad/sample),
    /// returned as (re, im).
    fn response(&self, omega: f64) -> (f64, f64) {
        // H(z) with z^-1 = e^{-jw}
        let (c1, s1) = (omega.cos(), -omega.sin());
        let (c2, s2) = ((2.0 * omega).cos(), -(2.0 * omega).sin());
        let num = (self.b0 + self.b1 * c1 + self.b2 * c2, self.b1 * s1 + self.b2 * s2);
        let den = (1.0 + self.a1 * c1 + self.a2 * c2, self.a1 * s1 + self.a2 * s2);
        let d = den.0 * den.0 + den.1 * den.1;
        ((num.0 * den.0 + num.1 * den.1) / d, (num.1 * den.0 - num.0 * den.1) / d)
    }

    /// Both poles strictly inside the unit circle (Jury conditions).
    pub fn is_stable(&self) -> bool {
        self.a2.abs() < 1.0 && self.a1.abs() < 1.0 + self.a2
    }
}

/// Cascade of biquads plus their delay registers.
///
/// The state is mutable: a cascade serves one stream at a time. Clone it to
/// process independent channels.
#[derive(Debug, Clone, PartialEq)]
pub struct BiquadCascade {
    sections: Vec<Biquad>,
    state: Vec<[f64; 2]>,
}

impl BiquadCascade {
    pub fn new(sections: Vec<Biquad>) -> Self {
        let state = vec![[0.0; 2]; sections.len()];
        Self { sections, state }
    }

    pub fn sections(&self) -> &[Biquad] {
        &self.sections
    }

    pub fn reset(&mut self) {
        self.state.iter_mut().for_each(|s| *s = [0.0; 2]);
    }

    /// Sets the delay registers to the steady state reached after an infinite
    /// run of the constant input `x0`, so a constant signal passes without a
    /// start-up transient.
    pub fn prime(&mut self, x0: f64) {
        let mut u = x0;
        for (s, z) in self.sections.iter().zip(self.state.iter_mut()) {
            let y = u * (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
            z[1] = s.b2 * u - s.a2 * y;
            z[0] = s.b1 * u - s.a1 * y + z[1];
            u = y;
        }
    }

    #[inline]
    pub fn process_sample(&mut self, x: f64) -> f64 {
        let mut y = x;
        for (s, z) in self.sections.iter().zip(self.state.iter_mut()) {
            let input = y;
            y = s.b0 * input + z[0];
            z[0] = s.b1 * input - s.a1 * y + z[1];
            z[1] = s.b2 * input - s.a2 * y;
        }
        y
    }

    /// Filters `samples` continuing from the current state.
    pub fn process(&mut self, samples: &[f64]) -> Vec<f64> {
        samples.iter().map(|&x| self.process_sample(x)).collect()
    }

    /// Magnitude of the frequency response at `freq_hz`.
    pub fn gain_at(&self, freq_hz: f64, sample_rate_hz: f64) -> f64 {
        let omega = 2.0 * PI * freq_hz / sample_rate_hz;
        let (mut re, mut im) = (1.0, 0.0);
        for s in &self.sections {
            let (r, i) = s.response(omega);
            (re, im) = (re * r - im * i, re * i + im * r);
        }
        (re * re + im * im).sqrt()
    }
}

/// Designs a digital Butterworth filter by pre-warping the cutoff, building
/// the analog prototype as second-order factors and mapping each one through
/// the bilinear transform `s = 2 fs (z - 1) / (z + 1)`.
pub fn design_butterworth(spec: &FilterSpec) -> Result<BiquadCascade> {
    spec.validate()?;
    let fs = spec.sample_rate_hz;
    let k = 2.0 * fs;
    let wc = k * (PI * spec.cutoff_hz / fs).tan();
    let n = spec.order;

    let mut sections = Vec::with_capacity(n.div_ceil(2));
    // Each conjugate pole pair of the normalised prototype contributes
    // s^2 + 2 sin(theta) s + 1 with theta = pi (2i + 1) / (2n).
    for i in 0..n / 2 {
        let theta = PI * (2 * i + 1) as f64 / (2 * n) as f64;
        let damping = 2.0 * theta.sin(); // 1/Q
        let a0 = k * k + damping * wc * k + wc * wc;
        let a1 = (2.0 * wc * wc - 2.0 * k * k) / a0;
        let a2 = (k * k - damping * wc * k + wc * wc) / a0;
        let (b0, b1, b2) = match spec.kind {
            FilterKind::LowPass => (wc * wc / a0, 2.0 * wc * wc / a0, wc * wc / a0),
            FilterKind::HighPass => (k * k / a0, -2.0 * k * k / a0, k * k / a0),
        };
        sections.push(Biquad { b0, b1, b2, a1, a2 });
    }
    if n % 2 == 1 {
        let a0 = k + wc;
        let a1 = (wc - k) / a0;
        let (b0, b1) = match spec.kind {
            FilterKind::LowPass => (wc / a0, wc / a0),
            FilterKind::HighPass => (k / a0, -k / a0),
        };
        sections.push(Biquad { b0, b1, b2: 0.0, a1, a2: 0.0 });
    }
    debug_assert!(sections.iter().all(Biquad::is_stable));
    Ok(BiquadCascade::new(sections))
}

/// Runs the cascade from a zeroed state over `samples`.
pub fn apply_filter(cascade: &BiquadCascade, samples: &[f64]) -> Vec<f64> {
    let mut c = cascade.clone();
    c.reset();
    c.process(samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FS: f64 = 1000.0;

    // Hand bilinear transform of s^2 / (s^2 + sqrt(2) s + 1) at wc = 2 fs tan(pi fc / fs),
    // fc = 20 Hz, computed offline and frozen.
    const HP20_B: [f64; 3] = [0.9149691441130826, -1.8299382882261652, 0.9149691441130826];
    const HP20_A: [f64; 2] = [-1.822694925196308, 0.8371816512560227];

    #[test]
    fn high_pass_coefficients_match_bilinear_oracle() {
        let c = design_butterworth(&FilterSpec::high_pass(2, 20.0, FS)).unwrap();
        assert_eq!(c.sections().len(), 1);
        let s = c.sections()[0];
        for (got, want) in [s.b0, s.b1, s.b2].iter().zip(HP20_B) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
        assert!((s.a1 - HP20_A[0]).abs() < 1e-12);
        assert!((s.a2 - HP20_A[1]).abs() < 1e-12);
    }

    #[test]
    fn low_pass_dc_gain_and_cutoff() {
        let c = design_butterworth(&FilterSpec::low_pass(2, 5.0, FS)).unwrap();
        assert!((c.gain_at(0.0, FS) - 1.0).abs() < 1e-12);
        assert!((c.gain_at(5.0, FS) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-3);
    }

    #[test]
    fn high_pass_nyquist_gain_is_one() {
        for order in 1..=8 {
            let c = design_butterworth(&FilterSpec::high_pass(order, 20.0, FS)).unwrap();
            assert!((c.gain_at(FS / 2.0, FS) - 1.0).abs() < 1e-9, "order {order}");
        }
    }

    #[test]
    fn every_order_is_stable_with_cutoff_at_minus_3db() {
        for order in 1..=8 {
            for kind in [FilterKind::LowPass, FilterKind::HighPass] {
                let spec = FilterSpec { kind, order, cutoff_hz: 40.0, sample_rate_hz: FS };
                let c = design_butterworth(&spec).unwrap();
                assert!(c.sections().iter().all(Biquad::is_stable));
                let g = c.gain_at(40.0, FS);
                assert!((g - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9, "{order} {kind:?} {g}");
            }
        }
    }

    #[test]
    fn primed_cascade_passes_constants_without_transient() {
        for spec in [FilterSpec::low_pass(2, 6.0, FS), FilterSpec::low_pass(5, 3.0, FS), FilterSpec::high_pass(2, 20.0, FS)] {
            let mut c = design_butterworth(&spec).unwrap();
            c.prime(42.0);
            let dc = c.gain_at(0.0, FS) * 42.0;
            for y in c.process(&[42.0; 500]) {
                assert!((y - dc).abs() < 1e-9, "{spec:?} {y}");
            }
        }
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(matches!(
            design_butterworth(&FilterSpec::low_pass(2, 500.0, FS)),
            Err(Error::InvalidSpec(_))
        ));
        assert!(design_butterworth(&FilterSpec::low_pass(0, 5.0, FS)).is_err());
        assert!(design_butterworth(&FilterSpec::low_pass(9, 5.0, FS)).is_err());
        assert!(design_butterworth(&FilterSpec::high_pass(2, -1.0, FS)).is_err());
    }

    #[test]
    fn high_pass_removes_dc() {
        let c = design_butterworth(&FilterSpec::high_pass(2, 20.0, FS)).unwrap();
        let y = apply_filter(&c, &[5.0; 2000]);
        assert!(y[1000..].iter().all(|v| v.abs() < 1e-3));
    }

    #[test]
    fn zeros_in_zeros_out_and_empty() {
        let c = design_butterworth(&FilterSpec::low_pass(4, 6.0, FS)).unwrap();
        assert!(apply_filter(&c, &[0.0; 300]).iter().all(|&v| v == 0.0));
        assert!(apply_filter(&c, &[]).is_empty());
    }

    #[test]
    fn fifty_hz_sine_is_attenuated_by_one_decade() {
        let c = design_butterworth(&FilterSpec::low_pass(2, 5.0, FS)).unwrap();
        let x: Vec<f64> = (0..4000).map(|i| (2.0 * PI * 50.0 * i as f64 / FS).sin()).collect();
        let y = apply_filter(&c, &x);
        let amp = y[3000..].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        // |H(e^jw)| at 50 Hz from the oracle coefficients: 0.009837
        assert!((amp - 0.0099).abs() < 0.1 * 0.0099, "{amp}");
    }

    #[test]
    fn impulse_response_decays() {
        for (kind, fc) in [(FilterKind::LowPass, 3.0), (FilterKind::LowPass, 6.0), (FilterKind::HighPass, 20.0)] {
            let spec = FilterSpec { kind, order: 2, cutoff_hz: fc, sample_rate_hz: FS };
            let c = design_butterworth(&spec).unwrap();
            let n = (10.0 * FS / fc) as usize;
            let mut x = vec![0.0; n + 500];
            x[0] = 1.0;
            let h = apply_filter(&c, &x);
            assert!(h[n + 1..].iter().all(|v| v.abs() < 1e-6), "{kind:?} {fc}");
        }
    }
}
