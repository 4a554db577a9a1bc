//! Primacy-bias detection on logged Fisher-trace series.
//!
//! The series is moved to `log10(v + 1e-12)`, smoothed and differentiated
//! with Savitzky-Golay filters, and split at its global peak into a rising
//! (memorization) and a falling (reorganization) phase.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Offset applied before taking `log10` so zero traces stay finite.
pub const LOG_FLOOR: f64 = 1e-12;

/// Observed Fisher traces at ascending training steps.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSeries {
    steps: Vec<u64>,
    values: Vec<f64>,
}

impl TraceSeries {
    /// Invariants: equal lengths, strictly increasing steps, finite values ≥ 0.
    pub fn new(steps: Vec<u64>, values: Vec<f64>) -> Result<Self> {
        if steps.len() != values.len() {
            return Err(Error::shape(
                "trace series",
                (steps.len(), 1),
                (values.len(), 1),
            ));
        }
        if steps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::MalformedLog("trace steps not strictly increasing".into()));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::MalformedLog("trace values must be finite and >= 0".into()));
        }
        Ok(Self { steps, values })
    }

    /// Unit-spaced steps `0, 1, ..`.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        Self::new((0..values.len() as u64).collect(), values)
    }

    pub fn steps(&self) -> &[u64] {
        &self.steps
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Mean step spacing; 1 for series shorter than two samples.
    pub fn spacing(&self) -> f64 {
        match (self.steps.first(), self.steps.last()) {
            (Some(&a), Some(&b)) if self.steps.len() > 1 => {
                (b - a) as f64 / (self.steps.len() - 1) as f64
            }
            _ => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SavGolSpec {
    /// Odd, at least 5.
    pub window: usize,
    /// At least 1 and below `window`.
    pub polyorder: usize,
    /// 0 (smoothing) or 1 (first derivative).
    pub deriv: usize,
}

impl Default for SavGolSpec {
    fn default() -> Self {
        Self {
            window: 51,
            polyorder: 3,
            deriv: 0,
        }
    }
}

impl SavGolSpec {
    pub fn new(window: usize, polyorder: usize, deriv: usize) -> Result<Self> {
        let s = Self {
            window,
            polyorder,
            deriv,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window < 5 || self.window % 2 == 0 {
            return Err(Error::InvalidConfig(format!(
                "savgol window {} must be odd and >= 5",
                self.window
            )));
        }
        if self.polyorder < 1 || self.polyorder >= self.window {
            return Err(Error::InvalidConfig(format!(
                "savgol polyorder {} must lie in [1, window)",
                self.polyorder
            )));
        }
        if self.deriv > 1 {
            return Err(Error::InvalidConfig(format!("savgol deriv {} not in {{0, 1}}", self.deriv)));
        }
        Ok(())
    }

    fn with_deriv(self, deriv: usize) -> Self {
        Self { deriv, ..self }
    }
}

/// Convolution weights `c` with `out[t] = Σ_k c[k] · y[t + k − half]`.
///
/// The fit uses abscissae scaled to `[-1, 1]` to keep the normal equations
/// well conditioned; the derivative is rescaled back to units of `spacing`.
pub fn savgol_coefficients(spec: &SavGolSpec, spacing: f64) -> Result<Vec<f64>> {
    spec.validate()?;
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(Error::InvalidConfig(format!("sample spacing {spacing} must be positive")));
    }
    let half = spec.window / 2;
    let cols = spec.polyorder + 1;
    let v = DMatrix::from_fn(spec.window, cols, |i, k| {
        ((i as f64 - half as f64) / half as f64).powi(k as i32)
    });
    let vtv = v.transpose() * &v;
    let chol = vtv
        .cholesky()
        .ok_or_else(|| Error::InvalidConfig("savgol normal equations singular".into()))?;
    let mut e = DVector::zeros(cols);
    e[spec.deriv] = 1.0;
    // Row `deriv` of (VᵀV)⁻¹Vᵀ, i.e. V (VᵀV)⁻¹ e.
    let row = &v * chol.solve(&e);
    let scale = if spec.deriv == 0 {
        1.0
    } else {
        1.0 / (half as f64 * spacing)
    };
    Ok(row.iter().map(|c| c * scale).collect())
}

/// Index reflected about both ends without repeating the edge sample.
fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * (n - 1);
    let mut j = i.rem_euclid(period.max(1));
    if j >= n {
        j = period - j;
    }
    j as usize
}

/// Centered Savitzky-Golay filter with mirror padding; output aligned to
/// the input.
pub fn savgol_filter(values: &[f64], spec: &SavGolSpec, spacing: f64) -> Result<Vec<f64>> {
    if values.len() < spec.window {
        return Err(Error::SeriesTooShort {
            len: values.len(),
            needed: spec.window,
        });
    }
    let c = savgol_coefficients(spec, spacing)?;
    let half = (spec.window / 2) as isize;
    let n = values.len();
    Ok((0..n as isize)
        .map(|t| {
            c.iter()
                .enumerate()
                .map(|(k, &ck)| ck * values[mirror(t + k as isize - half, n)])
                .sum()
        })
        .collect())
}

/// First derivative of the series with respect to its steps.
pub fn differentiate_series(series: &TraceSeries, spec: &SavGolSpec) -> Result<Vec<f64>> {
    savgol_filter(series.values(), &spec.with_deriv(1), series.spacing())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaseThresholds {
    /// Rise threshold as a fraction of `max |Δ|`.
    pub theta_up: f64,
    /// Fall threshold as a fraction of `max |Δ|`.
    pub theta_down: f64,
    /// Minimum phase length in samples.
    pub min_len: usize,
    /// Required ratio of peak to plateau.
    pub rho: f64,
}

impl Default for PhaseThresholds {
    fn default() -> Self {
        Self {
            theta_up: 0.05,
            theta_down: 0.05,
            min_len: 10,
            rho: 2.0,
        }
    }
}

/// Half-open sample range `[start, end)` with the steps it spans.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseInterval {
    pub start: usize,
    pub end: usize,
    pub start_step: u64,
    /// Step of the last sample in the interval.
    pub end_step: u64,
}

impl PhaseInterval {
    fn new(start: usize, end: usize, steps: &[u64]) -> Self {
        Self {
            start,
            end,
            start_step: steps[start],
            end_step: steps[end - 1],
        }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// Memorization is `[start, peak)`, reorganization `[peak, end)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub memorization: Option<PhaseInterval>,
    pub reorganization: Option<PhaseInterval>,
    /// Sample index of the smoothed maximum.
    pub peak_index: usize,
    pub peak_step: u64,
    /// Smoothed trace at the peak, in trace units.
    pub peak_value: f64,
    /// Geometric mean of the smoothed trace over the final 10% of samples.
    pub plateau_value: f64,
    pub pb_detected: bool,
}

/// Splits the series at its smoothed peak and tests for a sharp rise
/// followed by a sharp fall. Needs at least `3 · window` samples.
pub fn classify_phases(
    series: &TraceSeries,
    spec: &SavGolSpec,
    thresholds: &PhaseThresholds,
) -> Result<PhaseReport> {
    spec.validate()?;
    let n = series.len();
    if n < 3 * spec.window {
        return Err(Error::SeriesTooShort {
            len: n,
            needed: 3 * spec.window,
        });
    }
    let steps = series.steps();
    let logs: Vec<f64> = series.values().iter().map(|v| (v + LOG_FLOOR).log10()).collect();
    let degenerate = logs.iter().all(|&v| v == logs[0]);
    let smooth = if degenerate {
        logs.clone()
    } else {
        savgol_filter(&logs, &spec.with_deriv(0), series.spacing())?
    };
    let peak = smooth
        .iter()
        .enumerate()
        .fold(0, |best, (i, &v)| if v > smooth[best] { i } else { best });
    let tail = (n / 10).max(1);
    let plateau_log = smooth[n - tail..].iter().sum::<f64>() / tail as f64;
    let peak_value = 10f64.powf(smooth[peak]);
    let plateau_value = 10f64.powf(plateau_log);

    let (mut memorization, mut reorganization) = (None, None);
    if !degenerate {
        let d = savgol_filter(&logs, &spec.with_deriv(1), series.spacing())?;
        let max_abs = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if max_abs > 0.0 {
            let up = thresholds.theta_up * max_abs;
            let down = -thresholds.theta_down * max_abs;
            // Nearest qualifying run before the peak, extended to the peak.
            if let Some(last) = (0..peak).rev().find(|&i| d[i] > up) {
                let start = (0..=last).rev().take_while(|&i| d[i] > up).last().unwrap();
                memorization = Some(PhaseInterval::new(start, peak, steps));
            }
            // Nearest qualifying run after the peak, extended back to it.
            if let Some(first) = (peak..n).find(|&i| d[i] < down) {
                let end = (first..n).take_while(|&i| d[i] < down).last().unwrap() + 1;
                reorganization = Some(PhaseInterval::new(peak, end, steps));
            }
        }
    }
    let long = |p: &Option<PhaseInterval>| p.is_some_and(|p| p.len() >= thresholds.min_len);
    let pb_detected = long(&memorization)
        && long(&reorganization)
        && peak_value >= thresholds.rho * plateau_value;
    Ok(PhaseReport {
        memorization,
        reorganization,
        peak_index: peak,
        peak_step: steps[peak],
        peak_value,
        plateau_value,
        pb_detected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Pseudoinverse of the unscaled window Vandermonde matrix via SVD.
    fn pinv_oracle(window: usize, polyorder: usize, deriv: usize) -> Vec<f64> {
        let half = (window / 2) as f64;
        let v = DMatrix::from_fn(window, polyorder + 1, |i, k| (i as f64 - half).powi(k as i32));
        let pinv = v.pseudo_inverse(1e-14).unwrap();
        pinv.row(deriv).iter().copied().collect()
    }

    fn spec(w: usize, p: usize, d: usize) -> SavGolSpec {
        SavGolSpec::new(w, p, d).unwrap()
    }

    #[test]
    fn five_point_quadratic_weights() {
        let c = savgol_coefficients(&spec(5, 2, 0), 1.0).unwrap();
        let closed = [-3.0, 12.0, 17.0, 12.0, -3.0].map(|v| v / 35.0);
        let oracle = pinv_oracle(5, 2, 0);
        for k in 0..5 {
            assert!((c[k] - oracle[k]).abs() <= 1e-12, "{k}");
            assert!((c[k] - closed[k]).abs() <= 1e-12, "{k}");
        }
    }

    #[test]
    fn derivative_weights_match_oracle() {
        for (w, p) in [(5, 2), (7, 3), (11, 4), (51, 3)] {
            let c = savgol_coefficients(&spec(w, p, 1), 1.0).unwrap();
            for (a, b) in c.iter().zip(pinv_oracle(w, p, 1)) {
                assert!((a - b).abs() <= 1e-12, "w {w} p {p}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn weight_sums() {
        for (w, p) in [(5, 2), (9, 3), (51, 3)] {
            let s0: f64 = savgol_coefficients(&spec(w, p, 0), 1.0).unwrap().iter().sum();
            let s1: f64 = savgol_coefficients(&spec(w, p, 1), 0.5).unwrap().iter().sum();
            assert!((s0 - 1.0).abs() < 1e-12);
            assert!(s1.abs() < 1e-12);
        }
    }

    #[test]
    fn spec_validation() {
        assert!(SavGolSpec::new(4, 2, 0).is_err());
        assert!(SavGolSpec::new(3, 1, 0).is_err());
        assert!(SavGolSpec::new(5, 0, 0).is_err());
        assert!(SavGolSpec::new(5, 5, 0).is_err());
        assert!(SavGolSpec::new(5, 2, 2).is_err());
    }

    #[test]
    fn linear_series_has_constant_derivative() {
        let m = -2.5;
        let steps: Vec<u64> = (0..40).map(|i| 10 * i).collect();
        let values: Vec<f64> = steps.iter().map(|&s| 1000.0 + m * s as f64).collect();
        let s = TraceSeries::new(steps, values).unwrap();
        let d = differentiate_series(&s, &spec(7, 2, 1)).unwrap();
        for v in &d[3..37] {
            assert!((v - m).abs() < 1e-9);
        }
    }

    #[test]
    fn cubic_derivative_is_exact_in_interior() {
        let f = |t: f64| 0.002 * t.powi(3) - 0.3 * t * t + 4.0 * t + 2000.0;
        let df = |t: f64| 0.006 * t * t - 0.6 * t + 4.0;
        let values: Vec<f64> = (0..200).map(|i| f(i as f64 * 0.5)).collect();
        let steps: Vec<u64> = (0..200).collect();
        // Steps are indices; spacing 0.5 in t means d/dstep = 0.5 · d/dt.
        let s = TraceSeries::new(steps, values).unwrap();
        let d = differentiate_series(&s, &spec(51, 3, 1)).unwrap();
        for i in 25..175 {
            let want = 0.5 * df(i as f64 * 0.5);
            assert!((d[i] - want).abs() <= 1e-9, "{i}: {} vs {want}", d[i]);
        }
    }

    #[test]
    fn constant_series_derivative_is_zero() {
        let s = TraceSeries::from_values(vec![3.0; 20]).unwrap();
        for v in differentiate_series(&s, &spec(5, 2, 1)).unwrap() {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn short_series_is_rejected() {
        let s = TraceSeries::from_values(vec![1.0; 50]).unwrap();
        assert!(matches!(
            differentiate_series(&s, &SavGolSpec::default()),
            Err(Error::SeriesTooShort { len: 50, needed: 51 })
        ));
        let s = TraceSeries::from_values(vec![1.0; 152]).unwrap();
        assert!(matches!(
            classify_phases(&s, &SavGolSpec::default(), &PhaseThresholds::default()),
            Err(Error::SeriesTooShort { needed: 153, .. })
        ));
    }

    #[test]
    fn series_invariants() {
        assert!(TraceSeries::new(vec![0, 0], vec![1.0, 1.0]).is_err());
        assert!(TraceSeries::new(vec![0, 1], vec![1.0, -1.0]).is_err());
        assert!(TraceSeries::new(vec![0, 1], vec![1.0]).is_err());
    }

    fn rise_fall(amplitude: f64, tau: f64) -> TraceSeries {
        TraceSeries::from_values(
            (1..=500)
                .map(|i| {
                    let t = i as f64;
                    amplitude * t * (-t / tau).exp()
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn rise_then_fall_is_detected_at_analytic_peak() {
        for tau in [50.0, 100.0] {
            let s = rise_fall(3.0, tau);
            let r = classify_phases(&s, &SavGolSpec::default(), &PhaseThresholds::default()).unwrap();
            assert!(r.pb_detected, "{r:?}");
            // Sample i holds t = i + 1.
            let t_peak = r.peak_index as f64 + 1.0;
            assert!((t_peak - tau).abs() <= 2.0, "{t_peak}");
            let m = r.memorization.unwrap();
            let g = r.reorganization.unwrap();
            assert_eq!(m.end, g.start);
            assert!(g.end <= s.len());
        }
    }

    #[test]
    fn monotone_series_is_not_detected() {
        let s = TraceSeries::from_values((0..500).map(|i| 1.0 + i as f64).collect()).unwrap();
        let r = classify_phases(&s, &SavGolSpec::default(), &PhaseThresholds::default()).unwrap();
        assert!(!r.pb_detected);
        assert!(r.reorganization.is_none());
    }

    #[test]
    fn constant_series_is_not_detected() {
        let s = TraceSeries::from_values(vec![42.0; 500]).unwrap();
        let r = classify_phases(&s, &SavGolSpec::default(), &PhaseThresholds::default()).unwrap();
        assert!(!r.pb_detected);
        assert!(r.memorization.is_none() && r.reorganization.is_none());
    }

    #[test]
    fn weak_peak_fails_prominence() {
        // Rise and fall by 30% only.
        let s = TraceSeries::from_values(
            (0..500)
                .map(|i| 1.0 + 0.3 * (-(((i as f64) - 150.0) / 40.0).powi(2)).exp())
                .collect(),
        )
        .unwrap();
        let r = classify_phases(&s, &SavGolSpec::default(), &PhaseThresholds::default()).unwrap();
        assert!(r.memorization.is_some() && r.reorganization.is_some());
        assert!(!r.pb_detected);
    }

    #[test]
    fn mirror_indexing() {
        assert_eq!(mirror(-1, 5), 1);
        assert_eq!(mirror(-2, 5), 2);
        assert_eq!(mirror(5, 5), 3);
        assert_eq!(mirror(6, 5), 2);
        assert_eq!(mirror(2, 5), 2);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn detection_is_scale_equivariant(
            tau in 50.0f64..150.0,
            log_c in -2.0f64..2.0,
        ) {
            let base = rise_fall(1.0, tau);
            let c = 10f64.powf(log_c);
            let scaled = TraceSeries::from_values(base.values().iter().map(|v| v * c).collect()).unwrap();
            let (sp, th) = (SavGolSpec::default(), PhaseThresholds::default());
            let a = classify_phases(&base, &sp, &th).unwrap();
            let b = classify_phases(&scaled, &sp, &th).unwrap();
            prop_assert_eq!(a.pb_detected, b.pb_detected);
            prop_assert_eq!(a.peak_index, b.peak_index);
            prop_assert_eq!(a.memorization.map(|m| (m.start, m.end)), b.memorization.map(|m| (m.start, m.end)));
            prop_assert_eq!(a.reorganization.map(|m| (m.start, m.end)), b.reorganization.map(|m| (m.start, m.end)));
        }
    }
}
