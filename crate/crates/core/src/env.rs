//! Environment conditions and their sampling distribution.
//!
//! The default bounds are the physical-world model used for camouflage
//! training: camera distance, small image-plane translation, any rotation,
//! a solid background, additive/multiplicative lighting, per-channel color
//! error and Gaussian sensor noise. All marginals are independent uniforms.

use std::f64::consts::{PI, TAU};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: f64,
    pub max: f64,
}

impl Bounds {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }

    pub fn is_subset_of(&self, other: &Bounds) -> bool {
        self.min >= other.min && self.max <= other.max
    }

    pub fn width(&self) -> f64 {
        self.max - self.min
    }

    /// Uniform draw; a zero-width interval returns `min` without consuming
    /// randomness differently from the general case.
    pub fn sample(&self, rng: &mut Rng) -> f64 {
        let u: f64 = rng.random();
        if self.max > self.min {
            self.min + u * (self.max - self.min)
        } else {
            self.min
        }
    }
}

/// One environment sample used to render an image.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvCondition {
    /// Camera distance from the object center, in object lengths.
    pub camera_distance: f64,
    /// Image-plane displacement of the object, scene units.
    pub translation: [f64; 2],
    /// Radians in `[0, 2π)`; zero looks at the object's side.
    pub azimuth: f64,
    /// Radians above the horizon.
    pub elevation: f64,
    pub background: [f64; 3],
    pub light_add: f64,
    pub light_mul: f64,
    pub channel_add: [f64; 3],
    pub channel_mul: [f64; 3],
    pub noise_std: f64,
}

impl EnvCondition {
    /// Side view at `distance` with neutral photometrics and no noise.
    pub fn canonical(distance: f64) -> Self {
        Self {
            camera_distance: distance,
            translation: [0.0, 0.0],
            azimuth: 0.0,
            elevation: 0.0,
            background: [0.5, 0.5, 0.5],
            light_add: 0.0,
            light_mul: 1.0,
            channel_add: [0.0; 3],
            channel_mul: [1.0; 3],
            noise_std: 0.0,
        }
    }

    pub fn with_neutral_photometrics(mut self) -> Self {
        self.light_add = 0.0;
        self.light_mul = 1.0;
        self.channel_add = [0.0; 3];
        self.channel_mul = [1.0; 3];
        self.noise_std = 0.0;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Brightness {
    Bright,
    Dark,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvDistribution {
    pub camera_distance: Bounds,
    pub translation: Bounds,
    pub background: Bounds,
    pub light_add: Bounds,
    pub light_mul: Bounds,
    pub channel_add: Bounds,
    pub channel_mul: Bounds,
    pub noise_std: Bounds,
    /// Azimuth range in degrees; the full circle by default.
    pub azimuth_deg: Bounds,
    /// Elevation range in degrees; `[0, 75]` by default, excluding
    /// near-vertical views.
    pub elevation_deg: Bounds,
    pub bright_light_mul: Bounds,
    pub dark_light_mul: Bounds,
}

impl Default for EnvDistribution {
    fn default() -> Self {
        Self {
            camera_distance: Bounds::new(1.0, 6.0),
            translation: Bounds::new(-0.05, 0.05),
            background: Bounds::new(0.1, 1.0),
            light_add: Bounds::new(-0.15, 0.15),
            light_mul: Bounds::new(0.5, 2.0),
            channel_add: Bounds::new(-0.15, 0.15),
            channel_mul: Bounds::new(0.7, 1.3),
            noise_std: Bounds::new(0.0, 0.1),
            azimuth_deg: Bounds::new(0.0, 360.0),
            elevation_deg: Bounds::new(0.0, 75.0),
            bright_light_mul: Bounds::new(1.25, 2.0),
            dark_light_mul: Bounds::new(0.5, 1.25),
        }
    }
}

impl EnvDistribution {
    /// Every bound collapsed onto the values of `env`.
    pub fn degenerate(env: &EnvCondition) -> Self {
        let p = |v: f64| Bounds::new(v, v);
        Self {
            camera_distance: p(env.camera_distance),
            translation: p(env.translation[0]),
            background: p(env.background[0]),
            light_add: p(env.light_add),
            light_mul: p(env.light_mul),
            channel_add: p(env.channel_add[0]),
            channel_mul: p(env.channel_mul[0]),
            noise_std: p(env.noise_std),
            azimuth_deg: p(env.azimuth.to_degrees()),
            elevation_deg: p(env.elevation.to_degrees()),
            bright_light_mul: p(env.light_mul),
            dark_light_mul: p(env.light_mul),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let all = [
            ("camera_distance", self.camera_distance),
            ("translation", self.translation),
            ("background", self.background),
            ("light_add", self.light_add),
            ("light_mul", self.light_mul),
            ("channel_add", self.channel_add),
            ("channel_mul", self.channel_mul),
            ("noise_std", self.noise_std),
            ("azimuth_deg", self.azimuth_deg),
            ("elevation_deg", self.elevation_deg),
            ("bright_light_mul", self.bright_light_mul),
            ("dark_light_mul", self.dark_light_mul),
        ];
        for (name, b) in all {
            if !(b.min <= b.max) {
                return Err(format!("{name}: min {} exceeds max {}", b.min, b.max));
            }
        }
        if self.camera_distance.min <= 0.0 {
            return Err("camera_distance: must be positive".into());
        }
        if self.noise_std.min < 0.0 {
            return Err("noise_std: must be non-negative".into());
        }
        if self.elevation_deg.min < 0.0 || self.elevation_deg.max >= 90.0 {
            return Err("elevation_deg: must lie within [0, 90)".into());
        }
        if self.azimuth_deg.min < 0.0 || self.azimuth_deg.max > 360.0 {
            return Err("azimuth_deg: must lie within [0, 360]".into());
        }
        for (name, b) in [("bright_light_mul", self.bright_light_mul), ("dark_light_mul", self.dark_light_mul)] {
            if !b.is_subset_of(&self.light_mul) {
                return Err(format!("{name}: preset not within light_mul bounds"));
            }
        }
        Ok(())
    }

    pub fn light_mul_for(&self, preset: Option<Brightness>) -> Bounds {
        match preset {
            None => self.light_mul,
            Some(Brightness::Bright) => self.bright_light_mul,
            Some(Brightness::Dark) => self.dark_light_mul,
        }
    }

    pub fn elevation_bounds(&self) -> Bounds {
        Bounds::new(self.elevation_deg.min.to_radians(), self.elevation_deg.max.to_radians())
    }

    fn sample_azimuth(&self, rng: &mut Rng) -> f64 {
        let a = Bounds::new(self.azimuth_deg.min.to_radians(), self.azimuth_deg.max.to_radians()).sample(rng);
        // the full circle wraps 2π onto 0
        if a >= TAU { a - TAU } else { a }
    }

    /// True when `env` lies inside these bounds.
    pub fn contains(&self, env: &EnvCondition) -> bool {
        let tri = |b: &Bounds, v: &[f64; 3]| v.iter().all(|&x| b.contains(x));
        self.camera_distance.contains(env.camera_distance)
            && env.translation.iter().all(|&t| self.translation.contains(t))
            && (0.0..TAU).contains(&env.azimuth)
            && env.azimuth.to_degrees() >= self.azimuth_deg.min - 1e-9
            && env.azimuth.to_degrees() <= self.azimuth_deg.max + 1e-9
            && env.elevation.to_degrees() >= self.elevation_deg.min - 1e-9
            && env.elevation.to_degrees() <= self.elevation_deg.max + 1e-9
            && tri(&self.background, &env.background)
            && self.light_add.contains(env.light_add)
            && self.light_mul.contains(env.light_mul)
            && tri(&self.channel_add, &env.channel_add)
            && tri(&self.channel_mul, &env.channel_mul)
            && self.noise_std.contains(env.noise_std)
    }
}

/// Draws one environment condition with every field uniform in its bounds.
pub fn sample_env(dist: &EnvDistribution, preset: Option<Brightness>, rng: &mut Rng) -> EnvCondition {
    let camera_distance = dist.camera_distance.sample(rng);
    let translation = [dist.translation.sample(rng), dist.translation.sample(rng)];
    let azimuth = dist.sample_azimuth(rng);
    let elevation = dist.elevation_bounds().sample(rng);
    let background = [
        dist.background.sample(rng),
        dist.background.sample(rng),
        dist.background.sample(rng),
    ];
    let light_add = dist.light_add.sample(rng);
    let light_mul = dist.light_mul_for(preset).sample(rng);
    let channel_add = [
        dist.channel_add.sample(rng),
        dist.channel_add.sample(rng),
        dist.channel_add.sample(rng),
    ];
    let channel_mul = [
        dist.channel_mul.sample(rng),
        dist.channel_mul.sample(rng),
        dist.channel_mul.sample(rng),
    ];
    let noise_std = dist.noise_std.sample(rng);
    EnvCondition {
        camera_distance,
        translation,
        azimuth,
        elevation,
        background,
        light_add,
        light_mul,
        channel_add,
        channel_mul,
        noise_std,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ViewpointRegime {
    /// Camera anywhere on the upper half of the viewing sphere.
    Free,
    /// Azimuth within `±alpha/2` of the side axis; either side of the object.
    Restricted { alpha_deg: f64 },
}

impl ViewpointRegime {
    pub fn restricted_default() -> Self {
        ViewpointRegime::Restricted { alpha_deg: 120.0 }
    }

    pub fn validate(&self) -> Result<(), String> {
        match *self {
            ViewpointRegime::Free => Ok(()),
            ViewpointRegime::Restricted { alpha_deg } if alpha_deg >= 0.0 && alpha_deg < 360.0 => Ok(()),
            ViewpointRegime::Restricted { alpha_deg } => Err(format!("alpha {alpha_deg} outside [0, 360)")),
        }
    }

    pub fn short_name(&self) -> &'static str {
        match self {
            ViewpointRegime::Free => "fv",
            ViewpointRegime::Restricted { .. } => "rv",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Viewpoint {
    pub azimuth: f64,
    pub elevation: f64,
    pub distance: f64,
}

/// Azimuths of the two side views.
pub const SIDE_AXIS: [f64; 2] = [0.0, PI];

pub fn sample_viewpoint(regime: &ViewpointRegime, dist: &EnvDistribution, rng: &mut Rng) -> Viewpoint {
    let azimuth = match *regime {
        ViewpointRegime::Free => dist.sample_azimuth(rng),
        ViewpointRegime::Restricted { alpha_deg } => {
            let side = SIDE_AXIS[rng.random_range(0..2)];
            let half = alpha_deg.to_radians() / 2.0;
            let offset = Bounds::new(-half, half).sample(rng);
            (side + offset).rem_euclid(TAU)
        }
    };
    let elevation = dist.elevation_bounds().sample(rng);
    let distance = dist.camera_distance.sample(rng);
    Viewpoint {
        azimuth,
        elevation,
        distance,
    }
}

/// Angular distance from `azimuth` to the nearest side view.
pub fn angle_from_side_axis(azimuth: f64) -> f64 {
    SIDE_AXIS
        .iter()
        .map(|&s| {
            let d = (azimuth - s).rem_euclid(TAU);
            d.min(TAU - d)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Environment sample whose viewpoint follows `regime`.
pub fn sample_env_in_regime(
    dist: &EnvDistribution,
    regime: &ViewpointRegime,
    preset: Option<Brightness>,
    rng: &mut Rng,
) -> EnvCondition {
    let mut env = sample_env(dist, preset, rng);
    let vp = sample_viewpoint(regime, dist, rng);
    env.azimuth = vp.azimuth;
    env.elevation = vp.elevation;
    env.camera_distance = vp.distance;
    env
}
