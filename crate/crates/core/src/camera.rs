//! Pinhole camera orbiting the object.

use serde::{Deserialize, Serialize};

use crate::env::EnvCondition;

pub type Vec3 = [f64; 3];

pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn normalize(a: Vec3) -> Vec3 {
    let n = dot(a, a).sqrt();
    if n == 0.0 {
        a
    } else {
        [a[0] / n, a[1] / n, a[2] / n]
    }
}

/// Vertical field of view of every render.
pub const FOV_Y_DEG: f64 = 60.0;
/// Points closer than this (camera-space depth) are not rasterized.
pub const NEAR: f64 = 0.01;

/// Placement of one object relative to the camera.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewPose {
    pub azimuth: f64,
    pub elevation: f64,
    pub distance: f64,
    /// Camera-space displacement of the object center (right, up).
    pub offset: [f64; 2],
}

impl ViewPose {
    pub fn from_env(env: &EnvCondition) -> Self {
        Self {
            azimuth: env.azimuth,
            elevation: env.elevation,
            distance: env.camera_distance,
            offset: env.translation,
        }
    }
}

/// World-to-camera transform for one pose; camera space has x right,
/// y up and z along the viewing direction.
#[derive(Clone, Copy, Debug)]
pub struct View {
    eye: Vec3,
    right: Vec3,
    up: Vec3,
    forward: Vec3,
    offset: [f64; 2],
    focal_px: f64,
    size: usize,
}

impl View {
    pub fn new(pose: &ViewPose, image_size: usize) -> Self {
        let (sa, ca) = pose.azimuth.sin_cos();
        let (se, ce) = pose.elevation.sin_cos();
        let eye = [pose.distance * ce * sa, pose.distance * se, -pose.distance * ce * ca];
        let forward = normalize([-eye[0], -eye[1], -eye[2]]);
        let world_up = if forward[1].abs() > 0.999 { [0.0, 0.0, 1.0] } else { [0.0, 1.0, 0.0] };
        let right = normalize(cross(forward, world_up));
        let up = cross(right, forward);
        let focal_px = (image_size as f64 / 2.0) / (FOV_Y_DEG.to_radians() / 2.0).tan();
        Self {
            eye,
            right,
            up,
            forward,
            offset: pose.offset,
            focal_px,
            size: image_size,
        }
    }

    pub fn to_camera(&self, p: Vec3) -> Vec3 {
        let d = sub(p, self.eye);
        [
            dot(d, self.right) + self.offset[0],
            dot(d, self.up) + self.offset[1],
            dot(d, self.forward),
        ]
    }

    /// Camera-space point to continuous pixel coordinates (pixel edges at
    /// integers, so pixel `(r, c)` is centered at `(c + 0.5, r + 0.5)`).
    pub fn project(&self, c: Vec3) -> [f64; 2] {
        let half = self.size as f64 / 2.0;
        [half + self.focal_px * c[0] / c[2], half - self.focal_px * c[1] / c[2]]
    }

    pub fn focal_px(&self) -> f64 {
        self.focal_px
    }

    pub fn eye(&self) -> Vec3 {
        self.eye
    }

    /// World-space direction of the ray through continuous pixel `(x, y)`.
    pub fn ray_direction(&self, x: f64, y: f64) -> Vec3 {
        let half = self.size as f64 / 2.0;
        let cx = (x - half) / self.focal_px;
        let cy = (half - y) / self.focal_px;
        [
            self.right[0] * cx + self.up[0] * cy + self.forward[0],
            self.right[1] * cx + self.up[1] * cy + self.forward[1],
            self.right[2] * cx + self.up[2] * cy + self.forward[2],
        ]
    }

    /// World-space ray origin (the offset shifts the eye opposite to the
    /// object's apparent displacement).
    pub fn ray_origin(&self) -> Vec3 {
        let [ox, oy] = self.offset;
        [
            self.eye[0] - self.right[0] * ox - self.up[0] * oy,
            self.eye[1] - self.right[1] * ox - self.up[1] * oy,
            self.eye[2] - self.right[2] * ox - self.up[2] * oy,
        ]
    }
}
