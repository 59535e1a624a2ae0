//! Pixel-to-metric conversion via a rigid rod of known length, drift
//! removal and vibration statistics.

use log::warn;
use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{Error, Result};
use crate::synth::Axis;
use crate::tracker::CenterTrajectory;

/// Samples averaged to form the displacement origin.
pub const REFERENCE_SAMPLES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    /// Distance between the two marker centers on the structure, meters.
    pub rod_length: f64,
    /// Mean imaged distance between the two centers, pixels.
    pub pixel_separation: f64,
    /// Meters per pixel.
    pub magnification: f64,
    /// Population std of the imaged distance, a rigidity check.
    pub separation_std: f64,
    pub samples: usize,
}

impl Calibration {
    pub fn from_separation(rod_length: f64, pixel_separation: f64) -> Result<Self> {
        if !(rod_length > 0.0) || !(pixel_separation > 0.0) || !pixel_separation.is_finite() {
            return Err(Error::Calibration(format!(
                "need rod_length > 0 and a positive finite separation, got {rod_length} m / {pixel_separation} px"
            )));
        }
        Ok(Self {
            rod_length,
            pixel_separation,
            magnification: rod_length / pixel_separation,
            separation_std: 0.0,
            samples: 1,
        })
    }
}

/// Magnification from the mean inter-center distance over the samples both
/// trajectories share (stale samples excluded).
pub fn calibrate(a: &CenterTrajectory, b: &CenterTrajectory, rod_length: f64) -> Result<Calibration> {
    let mut dists = Vec::new();
    let mut j = 0;
    let bs: Vec<_> = b.fresh_samples().collect();
    for sa in a.fresh_samples() {
        while j < bs.len() && bs[j].t < sa.t {
            j += 1;
        }
        if j < bs.len() && bs[j].t == sa.t {
            dists.push((sa.u - bs[j].u).hypot(sa.v - bs[j].v));
        }
    }
    if dists.is_empty() {
        return Err(Error::Calibration("trajectories share no samples".into()));
    }
    let n = dists.len() as f64;
    let mean = dists.iter().sum::<f64>() / n;
    let std = (dists.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n).sqrt();
    let mut cal = Calibration::from_separation(rod_length, mean)?;
    cal.separation_std = std;
    cal.samples = dists.len();
    Ok(cal)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisplacementSample {
    pub t: u64,
    /// Pixel displacement from the reference.
    pub du: f64,
    pub dv: f64,
    /// Metric displacement, meters.
    pub dx: f64,
    pub dy: f64,
}

impl DisplacementSample {
    pub fn from_pixels(t: u64, du: f64, dv: f64, magnification: f64) -> Self {
        Self {
            t,
            du,
            dv,
            dx: magnification * du,
            dy: magnification * dv,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementSeries {
    /// Pixel origin `(u0, v0)` of the displacements.
    pub reference: (f64, f64),
    pub magnification: f64,
    pub samples: Vec<DisplacementSample>,
}

impl DisplacementSeries {
    pub fn metric(&self, axis: Axis) -> Vec<f64> {
        self.samples
            .iter()
            .map(|s| match axis {
                Axis::X => s.dx,
                Axis::Y => s.dy,
            })
            .collect()
    }

    /// Uniform sample period, if the series has one.
    pub fn sample_period(&self) -> Option<u64> {
        let first = self.samples.get(1)?.t.checked_sub(self.samples[0].t)?;
        (first > 0 && self.samples.windows(2).all(|w| w[1].t.checked_sub(w[0].t) == Some(first)))
            .then_some(first)
    }
}

/// Displacement relative to the mean of the first [`REFERENCE_SAMPLES`]
/// fresh samples; stale samples are skipped.
pub fn to_metric(traj: &CenterTrajectory, cal: &Calibration) -> Result<DisplacementSeries> {
    let fresh: Vec<_> = traj.fresh_samples().collect();
    if fresh.is_empty() {
        return Err(Error::Series(format!("marker {} has no fresh samples", traj.marker_id)));
    }
    let k = fresh.len().min(REFERENCE_SAMPLES);
    let u0 = fresh[..k].iter().map(|s| s.u).sum::<f64>() / k as f64;
    let v0 = fresh[..k].iter().map(|s| s.v).sum::<f64>() / k as f64;
    Ok(to_metric_from(traj, cal.magnification, (u0, v0)))
}

/// Displacement relative to an explicit pixel origin.
pub fn to_metric_from(traj: &CenterTrajectory, magnification: f64, reference: (f64, f64)) -> DisplacementSeries {
    DisplacementSeries {
        reference,
        magnification,
        samples: traj
            .fresh_samples()
            .map(|s| DisplacementSample::from_pixels(s.t, s.u - reference.0, s.v - reference.1, magnification))
            .collect(),
    }
}

/// `x` minus its centered moving average over `2 * (window / 2) + 1`
/// samples; the window is clipped at the series ends.
pub fn moving_average_highpass(values: &[f64], window: usize) -> Vec<f64> {
    let n = values.len();
    let half = window / 2;
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for v in values {
        prefix.push(prefix.last().unwrap() + v);
    }
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(n - 1);
            values[i] - (prefix[hi + 1] - prefix[lo]) / (hi + 1 - lo) as f64
        })
        .collect()
}

/// Window length in samples for a cutoff: `round(1 / cutoff / period)`.
pub fn detrend_window(cutoff_hz: f64, sample_period_us: u64) -> Result<usize> {
    if !(cutoff_hz > 0.0) || sample_period_us == 0 {
        return Err(Error::Series(format!("invalid cutoff {cutoff_hz} Hz")));
    }
    Ok((1e6 / cutoff_hz / sample_period_us as f64).round().max(1.0) as usize)
}

/// Removes content below `cutoff_hz` from both pixel axes; metric columns
/// are recomputed from the magnification.
pub fn highpass_detrend(series: &DisplacementSeries, cutoff_hz: f64) -> Result<DisplacementSeries> {
    let period = series
        .sample_period()
        .ok_or_else(|| Error::Series("series is not uniformly sampled".into()))?;
    let window = detrend_window(cutoff_hz, period)?;
    if window > series.samples.len() {
        return Err(Error::Series(format!(
            "detrend window of {window} samples exceeds series length {}",
            series.samples.len()
        )));
    }
    let du: Vec<f64> = series.samples.iter().map(|s| s.du).collect();
    let dv: Vec<f64> = series.samples.iter().map(|s| s.dv).collect();
    let du = moving_average_highpass(&du, window);
    let dv = moving_average_highpass(&dv, window);
    Ok(DisplacementSeries {
        reference: series.reference,
        magnification: series.magnification,
        samples: series
            .samples
            .iter()
            .zip(du.iter().zip(&dv))
            .map(|(s, (&u, &v))| DisplacementSample::from_pixels(s.t, u, v, series.magnification))
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VibrationStats {
    pub mean: f64,
    pub range: f64,
    pub std_dev: f64,
    /// Positive-going zero crossings.
    pub oscillation_count: usize,
    /// Oscillation count over the series duration, Hz.
    pub dominant_freq: f64,
    /// Largest non-DC bin of the magnitude spectrum, Hz.
    pub spectral_peak_freq: f64,
    /// The two frequency estimates differ by more than 5 %.
    pub frequency_mismatch: bool,
}

/// Statistics of a uniformly sampled signal. A crossing is counted at
/// sample `i` when `x[i-1] <= 0 < x[i]`.
pub fn vibration_stats(values: &[f64], sample_period_us: u64) -> Result<VibrationStats> {
    if values.len() < 4 {
        return Err(Error::Series(format!("need at least 4 samples, got {}", values.len())));
    }
    if sample_period_us == 0 {
        return Err(Error::Series("sample period must be > 0".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let std_dev = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let oscillation_count = values.windows(2).filter(|w| w[0] <= 0.0 && w[1] > 0.0).count();
    let duration_s = n * sample_period_us as f64 * 1e-6;
    let dominant_freq = oscillation_count as f64 / duration_s;
    let spectral_peak_freq = spectral_peak(values, mean, duration_s);
    let frequency_mismatch = oscillation_count > 0
        && spectral_peak_freq > 0.0
        && ((dominant_freq - spectral_peak_freq) / spectral_peak_freq).abs() > 0.05;
    if frequency_mismatch {
        warn!(
            "zero-crossing frequency {dominant_freq:.3} Hz disagrees with spectral peak {spectral_peak_freq:.3} Hz"
        );
    }
    Ok(VibrationStats {
        mean,
        range: hi - lo,
        std_dev,
        oscillation_count,
        dominant_freq,
        spectral_peak_freq,
        frequency_mismatch,
    })
}

fn spectral_peak(values: &[f64], mean: f64, duration_s: f64) -> f64 {
    let n = values.len();
    let mut buf: Vec<Complex<f64>> = values.iter().map(|&v| Complex::new(v - mean, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let (k, mag) = buf[1..=n / 2]
        .iter()
        .enumerate()
        .map(|(i, c)| (i + 1, c.norm()))
        .fold((0, 0.0), |best, cur| if cur.1 > best.1 { cur } else { best });
    if mag > 0.0 {
        k as f64 / duration_s
    } else {
        0.0
    }
}

pub fn series_stats(series: &DisplacementSeries, axis: Axis) -> Result<VibrationStats> {
    let period = series
        .sample_period()
        .ok_or_else(|| Error::Series("series is not uniformly sampled".into()))?;
    vibration_stats(&series.metric(axis), period)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tracker::CenterSample;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn traj(id: u32, pts: &[(u64, f64, f64)]) -> CenterTrajectory {
        CenterTrajectory {
            marker_id: id,
            samples: pts
                .iter()
                .map(|&(t, u, v)| CenterSample { t, u, v, stale: false })
                .collect(),
        }
    }

    fn sine(freq: f64, amp: f64, n: usize, period_us: u64) -> Vec<f64> {
        (0..n)
            .map(|i| amp * (2.0 * PI * freq * i as f64 * period_us as f64 * 1e-6).sin())
            .collect()
    }

    fn series_of(values: &[f64], period_us: u64) -> DisplacementSeries {
        DisplacementSeries {
            reference: (0.0, 0.0),
            magnification: 1e-3,
            samples: values
                .iter()
                .enumerate()
                .map(|(i, &v)| DisplacementSample::from_pixels(i as u64 * period_us, v, 0.0, 1e-3))
                .collect(),
        }
    }

    /// Interior peak amplitude, away from clipped windows.
    fn interior_amplitude(x: &[f64], margin: usize) -> f64 {
        x[margin..x.len() - margin].iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Magnitude response of a centered moving average of `len` samples.
    fn moving_average_gain(freq: f64, len: usize, period_s: f64) -> f64 {
        let w = PI * freq * period_s;
        (len as f64 * w).sin() / (len as f64 * w.sin())
    }

    #[test]
    fn calibration_ratio() {
        let a = traj(0, &[(0, 100.0, 50.0), (1000, 100.0, 50.0)]);
        let b = traj(1, &[(0, 600.0, 50.0), (1000, 600.0, 50.0)]);
        let cal = calibrate(&a, &b, 1.0).unwrap();
        assert!((cal.magnification - 0.002).abs() < 1e-15);
        assert_eq!(cal.separation_std, 0.0);
        let shift = |t: &CenterTrajectory| traj(t.marker_id, &t.samples.iter().map(|s| (s.t, s.u + 13.7, s.v - 4.2)).collect::<Vec<_>>());
        let moved = calibrate(&shift(&a), &shift(&b), 1.0).unwrap();
        assert!((moved.magnification - cal.magnification).abs() < 1e-15);
    }

    #[test]
    fn calibration_errors() {
        let a = traj(0, &[(0, 1.0, 1.0)]);
        assert!(calibrate(&a, &a, 1.0).is_err());
        let b = traj(1, &[(5, 9.0, 1.0)]);
        assert!(calibrate(&a, &b, 1.0).is_err());
        assert!(Calibration::from_separation(1.0, f64::NAN).is_err());
    }

    #[test]
    fn metric_conversion() {
        let cal = Calibration::from_separation(1.0, 200.0).unwrap(); // 5 mm/px
        let t = traj(0, &[(0, 10.0, 10.0), (1000, 20.0, 10.0)]);
        let s = to_metric(&t, &cal).unwrap();
        // reference is the mean of the (two) leading samples
        assert_eq!(s.reference, (15.0, 10.0));
        let s = to_metric_from(&t, cal.magnification, (10.0, 10.0));
        assert_eq!(s.samples[0].dx, 0.0);
        assert!((s.samples[1].dx - 0.050).abs() < 1e-15);
    }

    #[test]
    fn reference_uses_first_ten_samples() {
        let pts: Vec<(u64, f64, f64)> = (0..20).map(|i| (i * 1000, i as f64, 0.0)).collect();
        let s = to_metric(&traj(0, &pts), &Calibration::from_separation(1.0, 1.0).unwrap()).unwrap();
        assert_eq!(s.reference, (4.5, 0.0));
    }

    #[test]
    fn detrend_constant_is_zero() {
        let s = series_of(&[3.25; 50], 1000);
        let d = highpass_detrend(&s, 100.0).unwrap();
        assert!(d.samples.iter().all(|x| x.du == 0.0 && x.dx == 0.0));
    }

    #[test]
    fn clipped_window_at_the_ends() {
        let ramp: Vec<f64> = (0..40).map(|i| 0.5 * i as f64 - 3.0).collect();
        let out = moving_average_highpass(&ramp, 11);
        assert!(out[5..35].iter().all(|v| v.abs() < 1e-12));
        // first sample averages samples 0..=5 of the ramp: mean offset 1.25
        assert!((out[0] + 1.25).abs() < 1e-12);
        assert_eq!(moving_average_highpass(&[1.0, 5.0, 2.0], 11), vec![1.0 - 8.0 / 3.0, 5.0 - 8.0 / 3.0, 2.0 - 8.0 / 3.0]);
    }

    #[test]
    fn detrend_frequency_response_matches_oracle() {
        // 1 kHz samples, 1 Hz cutoff -> window 1000 -> 1001 taps
        let n = 6000;
        for (freq, expect_pass) in [(50.0, true), (0.25, false)] {
            let x = sine(freq, 1.0, n, 1000);
            let y = highpass_detrend(&series_of(&x, 1000), 1.0).unwrap();
            let du: Vec<f64> = y.samples.iter().map(|s| s.du).collect();
            let residual = interior_amplitude(&du, 600);
            let oracle = (1.0 - moving_average_gain(freq, 1001, 1e-3)).abs();
            assert!((residual - oracle).abs() < 2e-3, "{freq} Hz: {residual} vs {oracle}");
            if expect_pass {
                assert!((residual - 1.0).abs() <= 0.02);
            } else {
                assert!(residual <= 0.10);
            }
        }
    }

    #[test]
    fn detrend_errors() {
        let s = series_of(&[1.0; 10], 1000);
        assert!(highpass_detrend(&s, 1.0).is_err()); // window 1000 > 10 samples
        let mut uneven = series_of(&[1.0; 10], 1000);
        uneven.samples[3].t += 1;
        assert!(highpass_detrend(&uneven, 500.0).is_err());
    }

    #[test]
    fn sine_statistics() {
        let amp = 2.5;
        let k = 7;
        // 7 whole periods of 50 Hz at 1 kHz
        let x = sine(50.0, amp, k * 20, 1000);
        let st = vibration_stats(&x, 1000).unwrap();
        assert!(st.mean.abs() < 1e-12);
        assert!((st.range - 2.0 * amp * (2.0 * PI * 5.0 / 20.0).sin()).abs() < 1e-12);
        assert!((st.std_dev - amp / 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(st.oscillation_count, k);
        assert!((st.dominant_freq - 50.0).abs() < 1e-9);
        assert!((st.spectral_peak_freq - 50.0).abs() < 1e-9);
        assert!(!st.frequency_mismatch);
    }

    #[test]
    fn zero_series() {
        let st = vibration_stats(&[0.0; 16], 1000).unwrap();
        assert_eq!((st.mean, st.range, st.oscillation_count), (0.0, 0.0, 0));
        assert!(vibration_stats(&[0.0; 3], 1000).is_err());
    }

    #[test]
    fn fifty_hz_for_two_and_a_half_seconds() {
        let x = sine(50.0, 1.0, 2500, 1000);
        assert_eq!(vibration_stats(&x, 1000).unwrap().oscillation_count, 125);
    }

    proptest! {
        #[test]
        fn whole_period_sine_count_is_exact(k in 1usize..60, spp in 8usize..64, amp in 0.01f64..100.0) {
            let x: Vec<f64> = (0..k * spp).map(|i| amp * (2.0 * PI * i as f64 / spp as f64).sin()).collect();
            prop_assert_eq!(vibration_stats(&x, 1000).unwrap().oscillation_count, k);
        }

        #[test]
        fn metric_is_linear(du in -500.0f64..500.0, dv in -500.0f64..500.0, scale in -10.0f64..10.0, mag in 1e-6f64..1.0) {
            let a = DisplacementSample::from_pixels(0, du, dv, mag);
            let b = DisplacementSample::from_pixels(0, scale * du, scale * dv, mag);
            prop_assert!((b.dx - scale * a.dx).abs() <= 1e-12 * b.dx.abs().max(1.0));
            prop_assert!((b.dy - scale * a.dy).abs() <= 1e-12 * b.dy.abs().max(1.0));
        }

        #[test]
        fn detrend_nearly_idempotent_above_cutoff(freq in 20.0f64..120.0, phase in 0.0f64..6.28) {
            let x: Vec<f64> = (0..3000).map(|i| (2.0 * PI * freq * i as f64 * 1e-3 + phase).sin()).collect();
            let s = series_of(&x, 1000);
            let once = highpass_detrend(&s, 1.0).unwrap();
            let twice = highpass_detrend(&once, 1.0).unwrap();
            for (a, b) in once.samples.iter().zip(&twice.samples).skip(600).take(1800) {
                prop_assert!((a.du - b.du).abs() <= 0.02);
            }
        }
    }
}
