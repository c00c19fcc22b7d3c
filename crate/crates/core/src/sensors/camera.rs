//! Stereo pinhole camera rig with normalized (focal = 1) coordinates.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PinholeError {
    #[error("point is behind the camera (z = {0})")]
    BehindCamera(f64),
}

/// Perspective projection `Π(p) = (x/z, y/z)`.
pub fn project(p_cam: &Vector3<f64>) -> Result<(f64, f64), PinholeError> {
    if p_cam.z <= 0.0 {
        return Err(PinholeError::BehindCamera(p_cam.z));
    }
    Ok((p_cam.x / p_cam.z, p_cam.y / p_cam.z))
}

/// Camera extrinsics/intrinsics shared by both stereo eyes. Camera
/// axes: z optical, x right, y down. Pixel noise is specified in pixels
/// and mapped through the focal length into normalized units.
#[derive(Debug, Clone)]
pub struct CameraRig {
    /// IMU-to-camera rotation: `v_C = R_CI · v_I`.
    pub r_ci: Matrix3<f64>,
    /// IMU origin in left-camera coordinates, m.
    pub p_ci: Vector3<f64>,
    /// Stereo baseline along camera x, m.
    pub baseline: f64,
    /// Focal length used to normalize the 1-px noise, px.
    pub focal_px: f64,
    /// Pixel noise standard deviation, px.
    pub pixel_std_px: f64,
    pub rate_hz: f64,
    /// Tangent of the half field of view.
    pub fov_half_tan: f64,
}

impl Default for CameraRig {
    fn default() -> Self {
        Self::with_pitch_deg(0.0)
    }
}

impl CameraRig {
    /// Forward-looking rig pitched down by `pitch` degrees. The body
    /// frame is x-forward/y-left/z-up.
    pub fn with_pitch_deg(pitch: f64) -> Self {
        let th = pitch.to_radians();
        let r_ci = Matrix3::new(
            0.0, -1.0, 0.0,
            -th.sin(), 0.0, -th.cos(),
            th.cos(), 0.0, -th.sin(),
        );
        Self {
            r_ci,
            p_ci: Vector3::new(0.0, 0.0, 0.0),
            baseline: 0.11,
            focal_px: 460.0,
            pixel_std_px: 1.0,
            rate_hz: 20.0,
            fov_half_tan: 1.0, // 90 degree full FOV
        }
    }

    pub fn n_cameras(&self) -> usize {
        2
    }

    /// Normalized-coordinate noise standard deviation.
    pub fn pixel_std_norm(&self) -> f64 {
        self.pixel_std_px / self.focal_px
    }

    /// IMU origin in the given camera's coordinates.
    pub fn p_ci_cam(&self, cam: usize) -> Vector3<f64> {
        match cam {
            0 => self.p_ci,
            1 => self.p_ci - Vector3::new(self.baseline, 0.0, 0.0),
            _ => panic!("stereo rig has cameras 0 and 1"),
        }
    }

    /// World point expressed in camera coordinates given the IMU pose
    /// (`r_ig` takes world coordinates into the IMU frame).
    pub fn to_camera(
        &self,
        r_ig: &Matrix3<f64>,
        p_imu: &Vector3<f64>,
        point: &Vector3<f64>,
        cam: usize,
    ) -> Vector3<f64> {
        self.r_ci * r_ig * (point - p_imu) + self.p_ci_cam(cam)
    }

    /// Optical center of the given camera in world coordinates.
    pub fn camera_center(
        &self,
        r_ig: &Matrix3<f64>,
        p_imu: &Vector3<f64>,
        cam: usize,
    ) -> Vector3<f64> {
        p_imu - r_ig.transpose() * self.r_ci.transpose() * self.p_ci_cam(cam)
    }

    /// Rotation taking world coordinates into the camera frame.
    pub fn r_cg(&self, r_ig: &Matrix3<f64>) -> Matrix3<f64> {
        self.r_ci * r_ig
    }

    fn in_fov(&self, u: f64, v: f64) -> bool {
        u.abs() <= self.fov_half_tan && v.abs() <= self.fov_half_tan
    }

    /// Ideal (noise-free) normalized pixel of a world point, or `None`
    /// when behind the camera, outside the field of view, or occluded.
    pub fn ideal_pixel(
        &self,
        r_ig: &Matrix3<f64>,
        p_imu: &Vector3<f64>,
        point: &Vector3<f64>,
        cam: usize,
        occluders: &[super::Aabb],
    ) -> Option<(f64, f64)> {
        let p_cam = self.to_camera(r_ig, p_imu, point, cam);
        let (u, v) = project(&p_cam).ok()?;
        if !self.in_fov(u, v) {
            return None;
        }
        let center = self.camera_center(r_ig, p_imu, cam);
        if occluders.iter().any(|b| super::segment_hits_box(&center, point, b)) {
            return None;
        }
        Some((u, v))
    }

    /// Noisy measurement of a world point.
    pub fn measure<R: Rng>(
        &self,
        r_ig: &Matrix3<f64>,
        p_imu: &Vector3<f64>,
        point: &Vector3<f64>,
        cam: usize,
        occluders: &[super::Aabb],
        rng: &mut R,
    ) -> Option<(f64, f64)> {
        let (u, v) = self.ideal_pixel(r_ig, p_imu, point, cam, occluders)?;
        let s = self.pixel_std_norm();
        let nu: f64 = StandardNormal.sample(rng);
        let nv: f64 = StandardNormal.sample(rng);
        Some((u + s * nu, v + s * nv))
    }
}
