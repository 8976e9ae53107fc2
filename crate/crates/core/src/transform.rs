//! Signal-window to feature-image encoding.
//!
//! A 1024-sample current window is expanded into three channels — the raw
//! signal, its running integral, and its derivative — then each channel is
//! min-max normalized and reshaped row-major into a 32x32 plane. The three
//! planes together form the classifier input.

use std::fmt;
use std::io::{self, Write};

/// Samples per window. One window produces one feature image.
pub const WINDOW_LEN: usize = 1024;
/// Side length of each image plane (`WINDOW_LEN = SIDE * SIDE`).
pub const IMAGE_SIDE: usize = 32;
/// Number of channels (raw, integral, derivative).
pub const CHANNELS: usize = 3;

/// Channel spread below this is treated as constant and maps to 0.5.
pub const FLAT_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum TransformError {
    /// Window construction with the wrong number of samples.
    BadWindowLen { got: usize },
    /// Window construction with a non-positive sample interval.
    BadSampleInterval { got: f64 },
    /// A value fed to `normalize` was NaN or infinite.
    NonFiniteValue { index: usize },
}

impl fmt::Display for TransformError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TransformError::BadWindowLen { got } => {
                write!(f, "window must hold exactly {WINDOW_LEN} samples, got {got}")
            }
            TransformError::BadSampleInterval { got } => {
                write!(f, "sample interval must be > 0, got {got}")
            }
            TransformError::NonFiniteValue { index } => {
                write!(f, "non-finite value at index {index}")
            }
        }
    }
}

impl std::error::Error for TransformError {}

/// One 1024-sample slice of a current trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    values: Vec<f64>,
    sample_interval: f64,
}

impl Window {
    pub fn new(values: Vec<f64>, sample_interval: f64) -> Result<Self, TransformError> {
        if values.len() != WINDOW_LEN {
            return Err(TransformError::BadWindowLen { got: values.len() });
        }
        if !(sample_interval > 0.0) {
            return Err(TransformError::BadSampleInterval {
                got: sample_interval,
            });
        }
        Ok(Window {
            values,
            sample_interval,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sample_interval(&self) -> f64 {
        self.sample_interval
    }
}

/// Where a feature image came from: window start index within its trace,
/// and an opaque trace id (the simulator uses the trace seed).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Provenance {
    pub start_index: usize,
    pub trace_id: u64,
}

/// A 3x32x32 stack of normalized planes, stored row-major per channel.
///
/// Plane entry `(r, c)` of a channel corresponds to window index `32*r + c`.
#[derive(Debug, Clone)]
pub struct FeatureImage {
    values: Vec<f32>,
    provenance: Provenance,
}

/// Equality covers pixel data only; provenance is bookkeeping that file
/// formats do not carry.
impl PartialEq for FeatureImage {
    fn eq(&self, other: &Self) -> bool {
        self.values == other.values
    }
}

impl FeatureImage {
    /// Builds an image from raw channel data. Every value must be in [0, 1].
    pub fn from_values(values: Vec<f32>, provenance: Provenance) -> Result<Self, TransformError> {
        assert_eq!(values.len(), CHANNELS * WINDOW_LEN);
        if let Some(i) = values.iter().position(|v| !(*v >= 0.0 && *v <= 1.0)) {
            return Err(TransformError::NonFiniteValue { index: i });
        }
        Ok(FeatureImage { values, provenance })
    }

    /// Flat channel-major view: `[c * 1024 + 32 * r + col]`.
    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, channel: usize, row: usize, col: usize) -> f32 {
        self.values[channel * WINDOW_LEN + row * IMAGE_SIDE + col]
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn set_provenance(&mut self, provenance: Provenance) {
        self.provenance = provenance;
    }

    /// Writes the image as three concatenated binary PGM (P5, maxval 255)
    /// planes in channel order raw, integral, derivative.
    pub fn write_pgm(&self, out: &mut dyn Write) -> io::Result<()> {
        for channel in 0..CHANNELS {
            write!(out, "P5\n{IMAGE_SIDE} {IMAGE_SIDE}\n255\n")?;
            let plane = &self.values[channel * WINDOW_LEN..(channel + 1) * WINDOW_LEN];
            let bytes: Vec<u8> = plane.iter().map(|v| (v * 255.0).round() as u8).collect();
            out.write_all(&bytes)?;
        }
        Ok(())
    }
}

/// Cumulative trapezoidal integral over the window, reset to zero at the
/// window start: `out[0] = 0`, `out[k] = out[k-1] + dt * (v[k-1] + v[k]) / 2`.
pub fn integrate(window: &Window) -> Vec<f64> {
    let v = &window.values;
    let dt = window.sample_interval;
    let mut out = Vec::with_capacity(WINDOW_LEN);
    out.push(0.0);
    let mut acc = 0.0;
    for k in 1..WINDOW_LEN {
        acc += dt * (v[k - 1] + v[k]) / 2.0;
        out.push(acc);
    }
    out
}

/// Central differences at interior points, one-sided at both ends.
pub fn differentiate(window: &Window) -> Vec<f64> {
    let v = &window.values;
    let dt = window.sample_interval;
    let mut out = Vec::with_capacity(WINDOW_LEN);
    out.push((v[1] - v[0]) / dt);
    for k in 1..WINDOW_LEN - 1 {
        out.push((v[k + 1] - v[k - 1]) / (2.0 * dt));
    }
    out.push((v[WINDOW_LEN - 1] - v[WINDOW_LEN - 2]) / dt);
    out
}

/// Min-max scaling to [0, 1]. A channel whose spread is below
/// [`FLAT_EPSILON`] maps to 0.5 everywhere.
pub fn normalize(values: &[f64]) -> Result<Vec<f64>, TransformError> {
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(TransformError::NonFiniteValue { index: i });
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let span = hi - lo;
    if span < FLAT_EPSILON {
        return Ok(vec![0.5; values.len()]);
    }
    Ok(values.iter().map(|v| ((v - lo) / span).clamp(0.0, 1.0)).collect())
}

/// Full window-to-image encoding: channel 0 is the normalized raw signal,
/// channel 1 the normalized integral, channel 2 the normalized derivative,
/// each laid out row-major into a 32x32 plane.
pub fn pid_transform(window: &Window) -> Result<FeatureImage, TransformError> {
    let raw = normalize(&window.values)?;
    let integral = normalize(&integrate(window))?;
    let derivative = normalize(&differentiate(window))?;
    let mut values = Vec::with_capacity(CHANNELS * WINDOW_LEN);
    for channel in [raw, integral, derivative] {
        values.extend(channel.iter().map(|&v| v as f32));
    }
    FeatureImage::from_values(values, Provenance::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn window_of(values: Vec<f64>, dt: f64) -> Window {
        Window::new(values, dt).unwrap()
    }

    fn random_window(rng: &mut ChaCha8Rng) -> Window {
        let values: Vec<f64> = (0..WINDOW_LEN).map(|_| rng.gen_range(-5.0..5.0)).collect();
        window_of(values, 0.001)
    }

    /// Compensated (Kahan) trapezoid sum; independent of the production path.
    fn integrate_oracle(values: &[f64], dt: f64) -> Vec<f64> {
        let mut out = vec![0.0];
        let mut sum = 0.0f64;
        let mut comp = 0.0f64;
        for k in 1..values.len() {
            let term = 0.5 * dt * (values[k - 1] + values[k]);
            let y = term - comp;
            let t = sum + y;
            comp = (t - sum) - y;
            sum = t;
            out.push(sum);
        }
        out
    }

    fn rel_close(a: f64, b: f64, rel: f64, abs_floor: f64) -> bool {
        let diff = (a - b).abs();
        diff <= abs_floor || diff <= rel * a.abs().max(b.abs())
    }

    #[test]
    fn window_requires_exact_length() {
        assert!(matches!(
            Window::new(vec![0.0; 10], 0.001),
            Err(TransformError::BadWindowLen { got: 10 })
        ));
        assert!(matches!(
            Window::new(vec![0.0; WINDOW_LEN], 0.0),
            Err(TransformError::BadSampleInterval { .. })
        ));
    }

    #[test]
    fn integrate_constant_is_linear_ramp() {
        let w = window_of(vec![2.0; WINDOW_LEN], 0.5);
        let out = integrate(&w);
        for (k, v) in out.iter().enumerate() {
            assert!((v - k as f64).abs() < 1e-12, "index {k}: {v}");
        }
    }

    #[test]
    fn integrate_zeros_is_zeros() {
        let w = window_of(vec![0.0; WINDOW_LEN], 0.001);
        assert!(integrate(&w).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn integrate_matches_compensated_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let w = random_window(&mut rng);
            let got = integrate(&w);
            let want = integrate_oracle(w.values(), w.sample_interval());
            for k in 0..WINDOW_LEN {
                assert!(
                    rel_close(got[k], want[k], 1e-12, 1e-15),
                    "index {k}: {} vs {}",
                    got[k],
                    want[k]
                );
            }
        }
    }

    #[test]
    fn integrate_monotone_for_nonnegative_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let values: Vec<f64> = (0..WINDOW_LEN).map(|_| rng.gen_range(0.0..4.0)).collect();
        let out = integrate(&window_of(values, 0.001));
        for k in 1..WINDOW_LEN {
            assert!(out[k] >= out[k - 1]);
        }
    }

    #[test]
    fn differentiate_ramp_is_constant_slope() {
        let dt = 0.001;
        let values: Vec<f64> = (0..WINDOW_LEN).map(|k| 3.0 * k as f64 * dt).collect();
        let out = differentiate(&window_of(values, dt));
        for (k, v) in out.iter().enumerate() {
            assert!((v - 3.0).abs() < 1e-9, "index {k}: {v}");
        }
    }

    #[test]
    fn differentiate_constant_is_zero() {
        let out = differentiate(&window_of(vec![7.25; WINDOW_LEN], 0.001));
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn differentiate_of_integral_recovers_smooth_signal() {
        // Band-limited input: d/dt of the trapezoid cumsum reproduces the
        // signal with second-order error dt^2 * |v''| / 4.
        let dt = 0.001;
        for freq_hz in [2.0, 5.0, 11.0, 20.0] {
            let omega = 2.0 * std::f64::consts::PI * freq_hz;
            let values: Vec<f64> = (0..WINDOW_LEN).map(|k| (omega * k as f64 * dt).sin()).collect();
            let w = window_of(values.clone(), dt);
            let integral = window_of(integrate(&w), dt);
            let recovered = differentiate(&integral);
            let bound = 0.5 * (omega * dt).powi(2); // 2x headroom over dt^2 w^2 / 4
            for k in 1..WINDOW_LEN - 1 {
                assert!(
                    (recovered[k] - values[k]).abs() <= bound,
                    "freq {freq_hz} index {k}: err {}",
                    (recovered[k] - values[k]).abs()
                );
            }
        }
    }

    #[test]
    fn linearity_of_integrate_and_differentiate() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let u = random_window(&mut rng);
        let v = random_window(&mut rng);
        let sum: Vec<f64> = u.values().iter().zip(v.values()).map(|(a, b)| a + b).collect();
        let w = window_of(sum, 0.001);

        let int_sum = integrate(&w);
        let int_parts: Vec<f64> = integrate(&u)
            .iter()
            .zip(integrate(&v))
            .map(|(a, b)| a + b)
            .collect();
        for k in 0..WINDOW_LEN {
            assert!(rel_close(int_sum[k], int_parts[k], 1e-9, 1e-12));
        }

        let diff_sum = differentiate(&w);
        let diff_parts: Vec<f64> = differentiate(&u)
            .iter()
            .zip(differentiate(&v))
            .map(|(a, b)| a + b)
            .collect();
        for k in 0..WINDOW_LEN {
            assert!(rel_close(diff_sum[k], diff_parts[k], 1e-9, 1e-12));
        }
    }

    #[test]
    fn normalize_two_point_pattern() {
        let values: Vec<f64> = (0..WINDOW_LEN).map(|k| if k % 2 == 0 { 1.0 } else { 3.0 }).collect();
        let out = normalize(&values).unwrap();
        for (k, v) in out.iter().enumerate() {
            let want = if k % 2 == 0 { 0.0 } else { 1.0 };
            assert_eq!(*v, want);
        }
    }

    #[test]
    fn normalize_constant_maps_to_half() {
        let out = normalize(&vec![42.0; WINDOW_LEN]).unwrap();
        assert!(out.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn normalize_rejects_non_finite() {
        let mut values = vec![1.0; WINDOW_LEN];
        values[17] = f64::NAN;
        assert!(matches!(
            normalize(&values),
            Err(TransformError::NonFiniteValue { index: 17 })
        ));
    }

    #[test]
    fn normalize_hits_zero_and_one_for_nonconstant_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..50 {
            let w = random_window(&mut rng);
            let out = normalize(w.values()).unwrap();
            let lo = out.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(lo, 0.0);
            assert_eq!(hi, 1.0);
        }
    }

    #[test]
    fn pid_transform_shape_and_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let image = pid_transform(&random_window(&mut rng)).unwrap();
        assert_eq!(image.values().len(), CHANNELS * WINDOW_LEN);
        assert!(image.values().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn pid_transform_constant_window() {
        let w = window_of(vec![1.5; WINDOW_LEN], 0.001);
        let image = pid_transform(&w).unwrap();
        // Raw and derivative channels are flat; the integral channel is a
        // linear ramp along raster order.
        for idx in 0..WINDOW_LEN {
            assert_eq!(image.values()[idx], 0.5, "raw channel at {idx}");
            assert_eq!(image.values()[2 * WINDOW_LEN + idx], 0.5, "derivative at {idx}");
        }
        for idx in 0..WINDOW_LEN {
            let want = idx as f64 / (WINDOW_LEN - 1) as f64;
            let got = image.values()[WINDOW_LEN + idx] as f64;
            assert!((got - want).abs() < 1e-6, "integral at {idx}: {got} vs {want}");
        }
    }

    #[test]
    fn pid_transform_raster_order_matches_window_index() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let w = random_window(&mut rng);
        let raw = normalize(w.values()).unwrap();
        let image = pid_transform(&w).unwrap();
        for r in 0..IMAGE_SIDE {
            for c in 0..IMAGE_SIDE {
                assert_eq!(image.get(0, r, c), raw[IMAGE_SIDE * r + c] as f32);
            }
        }
    }

    #[test]
    fn affine_input_invariance_of_normalize() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let w = random_window(&mut rng);
            let a = rng.gen_range(0.1..10.0);
            let b = rng.gen_range(-20.0..20.0);
            let scaled: Vec<f64> = w.values().iter().map(|v| a * v + b).collect();
            let base = normalize(w.values()).unwrap();
            let transformed = normalize(&scaled).unwrap();
            for k in 0..WINDOW_LEN {
                assert!((base[k] - transformed[k]).abs() < 1e-6, "index {k}");
            }
        }
    }

    #[test]
    fn pgm_export_is_three_planes() {
        let w = window_of((0..WINDOW_LEN).map(|k| k as f64).collect(), 0.001);
        let image = pid_transform(&w).unwrap();
        let mut buf = Vec::new();
        image.write_pgm(&mut buf).unwrap();
        let header = b"P5\n32 32\n255\n";
        assert_eq!(buf.len(), 3 * (header.len() + WINDOW_LEN));
        assert_eq!(&buf[..header.len()], header);
        // Raw channel of an increasing ramp: first pixel 0, last pixel 255.
        assert_eq!(buf[header.len()], 0);
        assert_eq!(buf[header.len() + WINDOW_LEN - 1], 255);
    }

    proptest! {
        // Any finite window yields a fully in-range image of the right shape.
        #[test]
        fn pid_transform_always_satisfies_image_invariants(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let scale = 10f64.powi(rng.gen_range(-3..6));
            let values: Vec<f64> = (0..WINDOW_LEN).map(|_| rng.gen_range(-scale..scale)).collect();
            let image = pid_transform(&window_of(values, 0.001)).unwrap();
            prop_assert_eq!(image.values().len(), CHANNELS * WINDOW_LEN);
            prop_assert!(image.values().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}
