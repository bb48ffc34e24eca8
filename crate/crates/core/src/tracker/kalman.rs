//! Constant-velocity Kalman filter over `[cx, cy, s, r, vcx, vcy, vs]`, where
//! `s` is box area and `r` the (constant) aspect ratio `w / h`.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use super::TrackerError;
use crate::geometry::BBoxCorners;

type Vec7 = SVector<f64, 7>;
type Mat7 = SMatrix<f64, 7, 7>;
type Vec4 = SVector<f64, 4>;
type Mat4 = SMatrix<f64, 4, 4>;
type Mat4x7 = SMatrix<f64, 4, 7>;

/// Smallest area a predicted box may shrink to.
pub const MIN_AREA: f64 = 1e-3;

/// Noise magnitudes. Defaults are the usual SORT constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KalmanNoise {
    /// Initial variance of the measured components.
    pub init_pos_var: f64,
    /// Initial variance of the unobserved velocities.
    pub init_vel_var: f64,
    /// Process noise for `cx, cy, s, r`.
    pub q_pos: f64,
    /// Process noise for `vcx, vcy`.
    pub q_vel: f64,
    /// Process noise for `vs`.
    pub q_area_vel: f64,
    /// Measurement noise for `cx, cy`.
    pub r_pos: f64,
    /// Measurement noise for `s, r`.
    pub r_shape: f64,
}

impl Default for KalmanNoise {
    fn default() -> Self {
        Self {
            init_pos_var: 10.0,
            init_vel_var: 10_000.0,
            q_pos: 1.0,
            q_vel: 0.01,
            q_area_vel: 0.0001,
            r_pos: 1.0,
            r_shape: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanBoxState {
    pub mean: Vec7,
    pub covariance: Mat7,
}

fn transition() -> Mat7 {
    let mut f = Mat7::identity();
    f[(0, 4)] = 1.0;
    f[(1, 5)] = 1.0;
    f[(2, 6)] = 1.0;
    f
}

fn observation() -> Mat4x7 {
    let mut h = Mat4x7::zeros();
    for i in 0..4 {
        h[(i, i)] = 1.0;
    }
    h
}

/// `[cx, cy, s, r]` of a corner box.
pub fn box_to_measurement(b: &BBoxCorners) -> Vec4 {
    let (w, h) = (b.width(), b.height());
    let (cx, cy) = b.center();
    Vec4::new(cx, cy, w * h, w / h)
}

impl KalmanBoxState {
    pub fn from_box(b: &BBoxCorners, noise: &KalmanNoise) -> Self {
        let z = box_to_measurement(b);
        let mut mean = Vec7::zeros();
        mean.fixed_rows_mut::<4>(0).copy_from(&z);
        let mut covariance = Mat7::zeros();
        for i in 0..4 {
            covariance[(i, i)] = noise.init_pos_var;
        }
        for i in 4..7 {
            covariance[(i, i)] = noise.init_vel_var;
        }
        Self { mean, covariance }
    }

    /// Current estimate as a corner box. `None` if the area or aspect ratio is
    /// not positive.
    pub fn to_box(&self) -> Option<BBoxCorners> {
        let (cx, cy, s, r) = (self.mean[0], self.mean[1], self.mean[2], self.mean[3]);
        if !(s > 0.0 && r > 0.0) {
            return None;
        }
        let w = (s * r).sqrt();
        let h = s / w;
        BBoxCorners::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0).ok()
    }

    pub fn predict(&self, noise: &KalmanNoise) -> Self {
        let f = transition();
        let mut mean = f * self.mean;
        if mean[2] < MIN_AREA {
            mean[2] = MIN_AREA;
            mean[6] = 0.0;
        }
        let q = Mat7::from_diagonal(&Vec7::from([
            noise.q_pos,
            noise.q_pos,
            noise.q_pos,
            noise.q_pos,
            noise.q_vel,
            noise.q_vel,
            noise.q_area_vel,
        ]));
        let covariance = symmetrize(f * self.covariance * f.transpose() + q);
        Self { mean, covariance }
    }

    pub fn update(&self, obs: &BBoxCorners, noise: &KalmanNoise) -> Result<Self, TrackerError> {
        if ![obs.x1, obs.y1, obs.x2, obs.y2].iter().all(|v| v.is_finite()) {
            return Err(TrackerError::InvalidObservation(format!("{obs:?}")));
        }
        let h = observation();
        let z = box_to_measurement(obs);
        let r = Mat4::from_diagonal(&Vec4::new(
            noise.r_pos,
            noise.r_pos,
            noise.r_shape,
            noise.r_shape,
        ));
        let innovation = z - h * self.mean;
        let s = h * self.covariance * h.transpose() + r;
        let s_inv = s
            .try_inverse()
            .ok_or_else(|| TrackerError::InvalidObservation("singular innovation covariance".into()))?;
        let gain = self.covariance * h.transpose() * s_inv;
        let mean = self.mean + gain * innovation;
        // Joseph form keeps the covariance symmetric PSD.
        let i_kh = Mat7::identity() - gain * h;
        let covariance = symmetrize(
            i_kh * self.covariance * i_kh.transpose() + gain * r * gain.transpose(),
        );
        Ok(Self { mean, covariance })
    }
}

fn symmetrize(m: Mat7) -> Mat7 {
    (m + m.transpose()) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(cx: f64, cy: f64, s: f64, vcx: f64, vcy: f64, vs: f64) -> KalmanBoxState {
        let mut k = KalmanBoxState::from_box(
            &BBoxCorners::new(-5.0, -5.0, 5.0, 5.0).unwrap(),
            &KalmanNoise::default(),
        );
        k.mean = Vec7::from([cx, cy, s, 1.0, vcx, vcy, vs]);
        k
    }

    #[test]
    fn zero_velocity_keeps_position_and_inflates_covariance() {
        let noise = KalmanNoise::default();
        let k = state(0.0, 0.0, 100.0, 0.0, 0.0, 0.0);
        let p = k.predict(&noise);
        assert_eq!(p.mean, k.mean);
        for i in 0..7 {
            assert!(p.covariance[(i, i)] > k.covariance[(i, i)]);
        }
    }

    #[test]
    fn constant_velocity_step() {
        // hand propagation: x' = x + v on the first three components
        let k = state(10.0, 5.0, 100.0, 2.0, -1.0, 0.0);
        let p = k.predict(&KalmanNoise::default());
        let expected = [12.0, 4.0, 100.0, 1.0, 2.0, -1.0, 0.0];
        for (i, e) in expected.iter().enumerate() {
            assert_eq!(p.mean[i], *e, "component {i}");
        }
    }

    #[test]
    fn area_is_clamped_positive() {
        let p = state(0.0, 0.0, 1.0, 0.0, 0.0, -10.0).predict(&KalmanNoise::default());
        assert_eq!(p.mean[2], MIN_AREA);
        assert!(p.mean[2] > 0.0);
    }

    #[test]
    fn zero_innovation_leaves_mean() {
        let noise = KalmanNoise::default();
        let b = BBoxCorners::new(10.0, 20.0, 30.0, 60.0).unwrap();
        let k = KalmanBoxState::from_box(&b, &noise).predict(&noise);
        let u = k.update(&k.to_box().unwrap(), &noise).unwrap();
        for i in 0..7 {
            assert!((u.mean[i] - k.mean[i]).abs() < 1e-9);
        }
        let prior: f64 = (0..4).map(|i| k.covariance[(i, i)]).sum();
        let post: f64 = (0..4).map(|i| u.covariance[(i, i)]).sum();
        assert!(post <= prior);
    }

    #[test]
    fn nan_observation_rejected() {
        let noise = KalmanNoise::default();
        let k = state(0.0, 0.0, 100.0, 0.0, 0.0, 0.0);
        let bad = BBoxCorners {
            x1: f64::NAN,
            y1: 0.0,
            x2: 1.0,
            y2: 1.0,
        };
        assert!(matches!(
            k.update(&bad, &noise),
            Err(TrackerError::InvalidObservation(_))
        ));
    }

    fn truth_box(t: f64) -> BBoxCorners {
        let (cx, cy) = (100.0 + 4.0 * t, 50.0 - 2.5 * t);
        BBoxCorners::new(cx - 10.0, cy - 5.0, cx + 10.0, cy + 5.0).unwrap()
    }

    #[test]
    fn converges_on_noiseless_linear_track() {
        let noise = KalmanNoise::default();
        let mut k = KalmanBoxState::from_box(&truth_box(0.0), &noise);
        let mut errors = Vec::new();
        for t in 1..=10 {
            k = k.predict(&noise);
            let (px, py) = k.to_box().unwrap().center();
            let (tx, ty) = truth_box(f64::from(t)).center();
            errors.push(((px - tx).powi(2) + (py - ty).powi(2)).sqrt());
            k = k.update(&truth_box(f64::from(t)), &noise).unwrap();
        }
        // after 5 predict/update cycles
        assert!(errors[5] < 0.5, "errors: {errors:?}");
        for w in errors.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "errors: {errors:?}");
        }
        assert!(errors[9] < 0.5);
    }

    #[test]
    fn covariance_stays_psd() {
        let noise = KalmanNoise::default();
        let mut k = KalmanBoxState::from_box(&truth_box(0.0), &noise);
        for t in 1..50 {
            k = k.predict(&noise);
            if t % 3 != 0 {
                k = k.update(&truth_box(f64::from(t)), &noise).unwrap();
            }
            assert_eq!(k.covariance, k.covariance.transpose());
            let eig = k.covariance.symmetric_eigenvalues();
            assert!(eig.iter().all(|&e| e >= -1e-9), "{eig:?}");
        }
    }
}
