//! Planned-versus-actual residuals and their statistics: sliding-window
//! buffer, horizontal error ellipses and a steady-state estimate of a
//! constant external force.

use std::collections::VecDeque;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::control::{Gains, ReferenceSample};
use crate::dynamics::{PhysicalParams, RigidState};

pub const DEFAULT_WINDOW: f64 = 5.0;
/// Mean residual speed below which a window counts as steady, m/s.
pub const STEADY_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum TelemetryError {
    #[error("sample at t={t} is not after the newest buffered sample (t={last})")]
    OutOfOrder { t: f64, last: f64 },
    #[error("need at least {needed} samples, have {have}")]
    InsufficientSamples { needed: usize, have: usize },
    #[error("confidence must lie in (0, 1), got {0}")]
    InvalidConfidence(f64),
    #[error("window is not steady: mean residual speed {mean_speed:.4} m/s")]
    NotSteady { mean_speed: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviationSample {
    pub t: f64,
    pub planned: Vector3<f64>,
    pub actual: Vector3<f64>,
    /// actual − planned
    pub residual: Vector3<f64>,
    pub residual_velocity: Vector3<f64>,
}

impl DeviationSample {
    pub fn new(t: f64, reference: &ReferenceSample, state: &RigidState) -> Self {
        Self {
            t,
            planned: reference.position,
            actual: state.position,
            residual: state.position - reference.position,
            residual_velocity: state.velocity - reference.velocity,
        }
    }
}

/// Sliding window over the most recent `window` seconds, bounded by
/// `capacity` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviationBuffer {
    window: f64,
    capacity: usize,
    samples: VecDeque<DeviationSample>,
}

impl DeviationBuffer {
    pub fn new(window: f64, capacity: usize) -> Self {
        Self {
            window,
            capacity: capacity.max(1),
            samples: VecDeque::with_capacity(capacity.max(1)),
        }
    }

    /// Window of `window` seconds filled at `rate` samples per second.
    pub fn for_rate(window: f64, rate: f64) -> Self {
        Self::new(window, (window * rate).ceil() as usize)
    }

    pub fn record(&mut self, sample: DeviationSample) -> Result<(), TelemetryError> {
        if let Some(last) = self.samples.back() {
            if !(sample.t > last.t) {
                return Err(TelemetryError::OutOfOrder { t: sample.t, last: last.t });
            }
        }
        let horizon = sample.t - self.window;
        while self.samples.front().is_some_and(|s| s.t <= horizon) {
            self.samples.pop_front();
        }
        if self.samples.len() == self.capacity {
            self.samples.pop_front();
        }
        self.samples.push_back(sample);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> impl ExactSizeIterator<Item = &DeviationSample> + '_ {
        self.samples.iter()
    }

    pub fn latest(&self) -> Option<&DeviationSample> {
        self.samples.back()
    }

    pub fn clear(&mut self) {
        self.samples.clear();
    }

    pub fn stats(&self) -> DeviationStats {
        DeviationStats::from_samples(self.samples.iter())
    }

    pub fn span(&self) -> f64 {
        match (self.samples.front(), self.samples.back()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }
}

/// Residual magnitude summary; all zeros for an empty window.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DeviationStats {
    pub count: usize,
    pub mean_residual: Vector3<f64>,
    pub mean_error: f64,
    pub max_error: f64,
}

impl DeviationStats {
    pub fn from_samples<'a>(samples: impl Iterator<Item = &'a DeviationSample>) -> Self {
        let mut stats = Self::default();
        for s in samples {
            let e = s.residual.norm();
            stats.count += 1;
            stats.mean_residual += s.residual;
            stats.mean_error += e;
            stats.max_error = stats.max_error.max(e);
        }
        if stats.count > 0 {
            let n = stats.count as f64;
            stats.mean_residual /= n;
            stats.mean_error /= n;
        }
        stats
    }
}

/// Quantile of the chi-square distribution with two degrees of freedom.
pub fn chi_square_2dof_quantile(confidence: f64) -> f64 {
    -2.0 * (1.0 - confidence).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorEllipse {
    /// Mean horizontal residual, m.
    pub center: Vector2<f64>,
    pub semi_major: f64,
    pub semi_minor: f64,
    /// Angle of the major axis from world x, in (−π/2, π/2].
    pub orientation: f64,
    pub confidence: f64,
}

impl ErrorEllipse {
    /// Confidence ellipse of a set of horizontal residuals (sample covariance).
    pub fn from_residuals(residuals: &[Vector2<f64>], confidence: f64) -> Result<Self, TelemetryError> {
        if residuals.len() < 2 {
            return Err(TelemetryError::InsufficientSamples {
                needed: 2,
                have: residuals.len(),
            });
        }
        if !(confidence > 0.0 && confidence < 1.0) {
            return Err(TelemetryError::InvalidConfidence(confidence));
        }
        let n = residuals.len() as f64;
        // Running mean: exact for a constant residual set.
        let mut center = Vector2::zeros();
        for (k, r) in residuals.iter().enumerate() {
            center += (r - center) / (k + 1) as f64;
        }
        let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
        for r in residuals {
            let d = r - center;
            sxx += d.x * d.x;
            sxy += d.x * d.y;
            syy += d.y * d.y;
        }
        let norm = n - 1.0;
        let (sxx, sxy, syy) = (sxx / norm, sxy / norm, syy / norm);

        let mid = 0.5 * (sxx + syy);
        let radius = (0.25 * (sxx - syy).powi(2) + sxy * sxy).sqrt();
        let major = (mid + radius).max(0.0);
        let minor = (mid - radius).max(0.0);
        let mut orientation = 0.5 * (2.0 * sxy).atan2(sxx - syy);
        if orientation <= -std::f64::consts::FRAC_PI_2 {
            orientation += std::f64::consts::PI;
        }
        let q = chi_square_2dof_quantile(confidence);
        Ok(Self {
            center,
            semi_major: (major * q).sqrt(),
            semi_minor: (minor * q).sqrt(),
            orientation,
            confidence,
        })
    }
}

pub fn ellipse(buffer: &DeviationBuffer, confidence: f64) -> Result<ErrorEllipse, TelemetryError> {
    let residuals: Vec<_> = buffer.samples().map(|s| s.residual.xy()).collect();
    ErrorEllipse::from_residuals(&residuals, confidence)
}

/// Vertical residual summary shown beside the horizontal ellipse.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct VerticalBand {
    pub mean: f64,
    pub std_dev: f64,
}

pub fn vertical_band(buffer: &DeviationBuffer) -> VerticalBand {
    let n = buffer.len();
    if n == 0 {
        return VerticalBand::default();
    }
    let mean = buffer.samples().map(|s| s.residual.z).sum::<f64>() / n as f64;
    let var = if n > 1 {
        buffer.samples().map(|s| (s.residual.z - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    VerticalBand {
        mean,
        std_dev: var.sqrt(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceEstimate {
    /// World-frame force, N.
    pub force: Vector3<f64>,
    pub samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorSettings {
    pub steady_threshold: f64,
    pub include_vertical: bool,
}

impl Default for EstimatorSettings {
    fn default() -> Self {
        Self {
            steady_threshold: STEADY_THRESHOLD,
            include_vertical: false,
        }
    }
}

/// Constant-force estimate from the PD loop's steady-state balance: a
/// force F holds the vehicle at residual F / (m·kp), so F ≈ m·kp ⊙ r̄.
pub fn estimate_disturbance(
    buffer: &DeviationBuffer,
    gains: &Gains,
    params: &PhysicalParams,
    settings: &EstimatorSettings,
) -> Result<DisturbanceEstimate, TelemetryError> {
    let n = buffer.len();
    if n < 2 {
        return Err(TelemetryError::InsufficientSamples { needed: 2, have: n });
    }
    let mean_speed = buffer.samples().map(|s| s.residual_velocity.norm()).sum::<f64>() / n as f64;
    if !(mean_speed < settings.steady_threshold) {
        return Err(TelemetryError::NotSteady { mean_speed });
    }
    let mean = buffer.stats().mean_residual;
    let mut force = gains.kp_pos.component_mul(&mean) * params.mass;
    if !settings.include_vertical {
        force.z = 0.0;
    }
    Ok(DisturbanceEstimate { force, samples: n })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn sample(t: f64, r: Vector3<f64>) -> DeviationSample {
        DeviationSample {
            t,
            planned: Vector3::zeros(),
            actual: r,
            residual: r,
            residual_velocity: Vector3::zeros(),
        }
    }

    /// χ²₂ CDF by Simpson quadrature of the density ½·e^(−x/2).
    fn chi2_cdf_quadrature(x: f64) -> f64 {
        let n = 2000;
        let h = x / n as f64;
        let f = |u: f64| 0.5 * (-u / 2.0).exp();
        let mut acc = f(0.0) + f(x);
        for i in 1..n {
            acc += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        acc * h / 3.0
    }

    #[test]
    fn quantile_matches_quadrature() {
        let q = chi_square_2dof_quantile(0.95);
        assert_relative_eq!(q, 5.991, epsilon = 1e-3);
        assert_relative_eq!(chi2_cdf_quadrature(q), 0.95, epsilon = 1e-10);
        assert_relative_eq!(chi2_cdf_quadrature(chi_square_2dof_quantile(0.5)), 0.5, epsilon = 1e-10);
    }

    #[test]
    fn buffer_evicts_oldest() {
        let mut b = DeviationBuffer::new(100.0, 3);
        for i in 0..5 {
            b.record(sample(i as f64, Vector3::repeat(i as f64))).unwrap();
        }
        assert_eq!(b.len(), 3);
        assert_eq!(b.samples().next().unwrap().t, 2.0);
    }

    #[test]
    fn buffer_evicts_by_time() {
        let mut b = DeviationBuffer::for_rate(5.0, 20.0);
        for i in 0..400 {
            b.record(sample(i as f64 * 0.05, Vector3::zeros())).unwrap();
        }
        assert_eq!(b.len(), 100);
        assert!(b.span() < 5.0);
    }

    #[test]
    fn out_of_order_rejected() {
        let mut b = DeviationBuffer::new(5.0, 10);
        b.record(sample(1.0, Vector3::zeros())).unwrap();
        assert!(matches!(
            b.record(sample(0.5, Vector3::zeros())),
            Err(TelemetryError::OutOfOrder { .. })
        ));
        assert_eq!(b.len(), 1);
    }

    #[test]
    fn empty_stats_defined() {
        let b = DeviationBuffer::new(5.0, 10);
        assert_eq!(b.stats(), DeviationStats::default());
        assert_eq!(vertical_band(&b), VerticalBand::default());
        assert!(matches!(ellipse(&b, 0.95), Err(TelemetryError::InsufficientSamples { have: 0, .. })));
    }

    #[test]
    fn identical_residuals_degenerate() {
        let r = vec![Vector2::new(0.3, -0.2); 10];
        let e = ErrorEllipse::from_residuals(&r, 0.95).unwrap();
        assert_eq!(e.semi_major, 0.0);
        assert_eq!(e.semi_minor, 0.0);
        assert_eq!(e.center, Vector2::new(0.3, -0.2));
    }

    #[test]
    fn rank_one_along_x() {
        let r: Vec<_> = (0..20).map(|i| Vector2::new(i as f64 * 0.1 - 1.0, 0.0)).collect();
        let e = ErrorEllipse::from_residuals(&r, 0.95).unwrap();
        assert_eq!(e.semi_minor, 0.0);
        assert_eq!(e.orientation, 0.0);
        assert!(e.semi_major > 0.0);
    }

    #[test]
    fn isotropic_noise_semi_axes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let normal = Normal::new(0.0, 0.1).unwrap();
        let r: Vec<_> = (0..500)
            .map(|_| Vector2::new(normal.sample(&mut rng), normal.sample(&mut rng)))
            .collect();
        let e = ErrorEllipse::from_residuals(&r, 0.95).unwrap();
        let expected = 0.1 * chi_square_2dof_quantile(0.95).sqrt();
        assert_relative_eq!(expected, 0.2448, epsilon = 1e-4);
        assert!((e.semi_major / expected - 1.0).abs() < 0.15);
        assert!((e.semi_minor / expected - 1.0).abs() < 0.15);
    }

    #[test]
    fn invalid_confidence() {
        let r = vec![Vector2::zeros(), Vector2::new(1.0, 0.0)];
        assert_eq!(
            ErrorEllipse::from_residuals(&r, 1.0),
            Err(TelemetryError::InvalidConfidence(1.0))
        );
    }

    #[test]
    fn zero_residuals_zero_force() {
        let mut b = DeviationBuffer::new(5.0, 100);
        for i in 0..50 {
            b.record(sample(i as f64 * 0.05, Vector3::zeros())).unwrap();
        }
        let est =
            estimate_disturbance(&b, &Gains::default(), &PhysicalParams::default(), &Default::default()).unwrap();
        assert_eq!(est.force, Vector3::zeros());
        assert_eq!(est.samples, 50);
    }

    #[test]
    fn steady_offset_maps_to_force() {
        let mut b = DeviationBuffer::new(5.0, 100);
        for i in 0..50 {
            b.record(sample(i as f64 * 0.05, Vector3::new(0.05, -0.025, 0.01))).unwrap();
        }
        let est =
            estimate_disturbance(&b, &Gains::default(), &PhysicalParams::default(), &Default::default()).unwrap();
        assert_relative_eq!(est.force.x, 0.1, epsilon = 1e-12);
        assert_relative_eq!(est.force.y, -0.05, epsilon = 1e-12);
        assert_eq!(est.force.z, 0.0);
    }

    #[test]
    fn dynamic_window_not_steady() {
        let mut b = DeviationBuffer::new(5.0, 100);
        for i in 0..50 {
            let mut s = sample(i as f64 * 0.05, Vector3::new(1.0, 0.0, 0.0));
            s.residual_velocity = Vector3::new(0.5, 0.2, 0.0);
            b.record(s).unwrap();
        }
        assert!(matches!(
            estimate_disturbance(&b, &Gains::default(), &PhysicalParams::default(), &Default::default()),
            Err(TelemetryError::NotSteady { .. })
        ));
    }

    fn residual_cloud() -> impl Strategy<Value = Vec<(f64, f64)>> {
        proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 3..40)
    }

    proptest! {
        #[test]
        fn ellipse_invariant_under_reordering(mut pts in residual_cloud(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let a: Vec<_> = pts.iter().map(|&(x, y)| Vector2::new(x, y)).collect();
            pts.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let b: Vec<_> = pts.iter().map(|&(x, y)| Vector2::new(x, y)).collect();
            let ea = ErrorEllipse::from_residuals(&a, 0.9).unwrap();
            let eb = ErrorEllipse::from_residuals(&b, 0.9).unwrap();
            prop_assert!((ea.semi_major - eb.semi_major).abs() < 1e-9);
            prop_assert!((ea.semi_minor - eb.semi_minor).abs() < 1e-9);
            prop_assert!((ea.center - eb.center).norm() < 1e-12);
        }

        #[test]
        fn ellipse_rotates_with_residuals(pts in residual_cloud(), alpha in -3.0f64..3.0) {
            let a: Vec<_> = pts.iter().map(|&(x, y)| Vector2::new(x, y)).collect();
            let rot = nalgebra::Rotation2::new(alpha);
            let b: Vec<_> = a.iter().map(|p| rot * p).collect();
            let ea = ErrorEllipse::from_residuals(&a, 0.95).unwrap();
            let eb = ErrorEllipse::from_residuals(&b, 0.95).unwrap();
            prop_assert!((ea.semi_major - eb.semi_major).abs() < 1e-9);
            prop_assert!((ea.semi_minor - eb.semi_minor).abs() < 1e-9);
            prop_assert!(eb.semi_major >= eb.semi_minor);
            prop_assert!(eb.orientation > -std::f64::consts::FRAC_PI_2);
            prop_assert!(eb.orientation <= std::f64::consts::FRAC_PI_2);
            // Orientation is only defined for a clearly anisotropic cloud.
            if ea.semi_major - ea.semi_minor > 1e-3 {
                let diff = (eb.orientation - ea.orientation - alpha).rem_euclid(std::f64::consts::PI);
                let diff = diff.min(std::f64::consts::PI - diff);
                prop_assert!(diff < 1e-6, "diff {}", diff);
            }
        }
    }
}
