//! Labeled synthetic scenes for training and testing detectors.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boxes::{self, BBox};
use crate::camera::{View, ViewPose, NEAR};
use crate::env::{sample_env, EnvCondition, EnvDistribution};
use crate::error::{Error, Result};
use crate::io::{self, RawImage};
use crate::mesh::{self, Mesh};
use crate::patterns::{instance_texture, ClassStyle};
use crate::render::{self, Instance, RenderedImage};
use crate::rng::{self, Rng};
use crate::texture::TextureMap;

/// Class id of the background; object classes are `1..=K`.
pub const BACKGROUND: usize = 0;

#[derive(Clone, Debug)]
pub struct ObjectClass {
    pub name: String,
    pub mesh: Arc<Mesh>,
    pub style: ClassStyle,
}

/// Object classes, indexed from 1.
#[derive(Clone, Debug)]
pub struct ClassCatalog {
    pub classes: Vec<ObjectClass>,
}

impl ClassCatalog {
    /// car (the camouflage target), person, ball, cone.
    pub fn standard() -> Self {
        Self::with_vehicle(mesh::vehicle())
    }

    /// The standard catalog with `vehicle` as the car class.
    pub fn with_vehicle(vehicle: Mesh) -> Self {
        let class = |name: &str, mesh: Mesh, style| ObjectClass {
            name: name.into(),
            mesh: Arc::new(mesh),
            style,
        };
        Self {
            classes: vec![
                class("car", vehicle, ClassStyle::Glossy),
                class("person", mesh::tall_cylinder(), ClassStyle::Clothing),
                class("ball", mesh::sphere(), ClassStyle::Panels),
                class("cone", mesh::cone(), ClassStyle::Striped),
            ],
        }
    }

    /// Number of object classes K.
    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    /// Names indexed by class id, `background` first.
    pub fn names(&self) -> Vec<String> {
        std::iter::once("background".to_string()).chain(self.classes.iter().map(|c| c.name.clone())).collect()
    }

    pub fn id_of(&self, name: &str) -> Option<usize> {
        self.names().iter().position(|n| n == name)
    }

    pub fn mesh(&self, class_id: usize) -> &Mesh {
        &self.classes[class_id - 1].mesh
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub class_id: usize,
    pub bbox: BBox,
}

#[derive(Clone, Debug)]
pub struct LabeledImage {
    pub image: RenderedImage,
    pub ground_truths: Vec<GroundTruth>,
}

/// Box of the projected vertices in front of the camera, unclipped.
pub fn projected_box(mesh: &Mesh, pose: &ViewPose, image_size: usize) -> Option<BBox> {
    let view = View::new(pose, image_size);
    let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
    let mut any = false;
    for &v in &mesh.vertices {
        let c = view.to_camera(v);
        if c[2] > NEAR {
            let [x, y] = view.project(c);
            b = [b[0].min(x), b[1].min(y), b[2].max(x), b[3].max(y)];
            any = true;
        }
    }
    any.then_some(b)
}

/// Tight box of the projected vertices in front of the camera, rounded to
/// pixel edges and clipped to the image. Rounding makes it agree with the
/// box of covered pixel centers. `None` when nothing projects into the frame.
pub fn ground_truth_box(mesh: &Mesh, pose: &ViewPose, image_size: usize) -> Option<BBox> {
    let s = image_size as f64;
    projected_box(mesh, pose, image_size)
        .map(|b| boxes::clip(&b.map(f64::round), s, s))
        .filter(boxes::is_valid)
}

/// How instances are laid out in a scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneLayout {
    pub min_instances: usize,
    pub max_instances: usize,
    /// Extra instances are offset up to this fraction of their distance
    /// from the image center (camera-space units).
    pub spread: f64,
    /// Largest pairwise IoU between ground-truth boxes.
    pub max_pair_iou: f64,
    /// Largest fraction of either box of a pair covered by the other, so a
    /// small instance cannot hide behind a large one.
    pub max_pair_cover: f64,
    /// Placement attempts per instance before giving up on it.
    pub retries: usize,
    /// Smallest fraction of an instance's unclipped box left in frame.
    pub min_visible: f64,
}

impl Default for SceneLayout {
    fn default() -> Self {
        Self {
            min_instances: 1,
            max_instances: 3,
            spread: 0.42,
            max_pair_iou: 0.3,
            max_pair_cover: 0.3,
            retries: 20,
            min_visible: 0.5,
        }
    }
}

/// Intersection over the smaller of the two box areas.
fn cover_fraction(a: &BBox, b: &BBox) -> f64 {
    let w = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let h = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let smaller = boxes::area(a).min(boxes::area(b));
    if smaller > 0.0 { w * h / smaller } else { 0.0 }
}

/// One scene from its own random stream.
pub fn generate_scene(catalog: &ClassCatalog, dist: &EnvDistribution, layout: &SceneLayout, image_size: usize, rng: &mut Rng) -> Result<LabeledImage> {
    let env = sample_env(dist, None, rng);
    let wanted = if layout.max_instances == 0 || catalog.is_empty() {
        0
    } else {
        rng.random_range(layout.min_instances..=layout.max_instances)
    };
    let mut placed: Vec<(usize, ViewPose, TextureMap, BBox)> = Vec::new();
    for slot in 0..wanted {
        for _ in 0..layout.retries {
            let class_id = rng.random_range(1..=catalog.len());
            let mesh = catalog.mesh(class_id);
            let e = sample_env(dist, None, rng);
            let mut pose = ViewPose::from_env(&e);
            if slot > 0 {
                let d = pose.distance;
                pose.offset = [rng.random_range(-1.0..=1.0) * layout.spread * d, rng.random_range(-1.0..=1.0) * layout.spread * d];
            }
            let (Some(full), Some(b)) = (projected_box(mesh, &pose, image_size), ground_truth_box(mesh, &pose, image_size)) else {
                continue;
            };
            if boxes::area(&b) < layout.min_visible * boxes::area(&full) {
                continue;
            }
            if placed.iter().any(|p| boxes::iou(&p.3, &b) >= layout.max_pair_iou || cover_fraction(&p.3, &b) >= layout.max_pair_cover) {
                continue;
            }
            let tex = instance_texture(catalog.classes[class_id - 1].style, mesh, rng);
            placed.push((class_id, pose, tex, b));
            break;
        }
    }
    let instances: Vec<(Instance, &TextureMap)> = placed
        .iter()
        .map(|(c, pose, tex, _)| {
            (
                Instance {
                    mesh: catalog.mesh(*c),
                    pose: *pose,
                },
                tex,
            )
        })
        .collect();
    let image = render::render_scene(&instances, &env, image_size, rng)?;
    Ok(LabeledImage {
        image,
        ground_truths: placed.iter().map(|p| GroundTruth { class_id: p.0, bbox: p.3 }).collect(),
    })
}

/// `count` scenes; scene `i` draws from its own sub-stream of `seed`, so the
/// result does not depend on thread scheduling.
pub fn generate_dataset(
    catalog: &ClassCatalog,
    count: usize,
    dist: &EnvDistribution,
    layout: &SceneLayout,
    image_size: usize,
    seed: u64,
) -> Result<Vec<LabeledImage>> {
    if count == 0 {
        return Err(Error::Config("dataset count must be at least 1".into()));
    }
    (0..count)
        .into_par_iter()
        .map(|i| generate_scene(catalog, dist, layout, image_size, &mut rng::substream(seed, "scene", i as u64)))
        .collect()
}

/// Single car scene as seen by the attack: the target mesh with a given
/// texture under `env`.
pub fn target_scene(mesh: &Mesh, texture: &TextureMap, env: &EnvCondition, class_id: usize, image_size: usize, rng: &mut Rng) -> Result<Option<LabeledImage>> {
    let pose = ViewPose::from_env(env);
    let Some(b) = ground_truth_box(mesh, &pose, image_size) else {
        return Ok(None);
    };
    let image = render::render(mesh, texture, env, image_size, rng)?;
    Ok(Some(LabeledImage {
        image,
        ground_truths: vec![GroundTruth { class_id, bbox: b }],
    }))
}

/// Writes `img_NNNNN.raw` files and `annotations.txt`
/// (`image class x1 y1 x2 y2` per line).
pub fn save_dataset(dir: &Path, data: &[LabeledImage]) -> Result<()> {
    let mut ann = String::new();
    for (i, li) in data.iter().enumerate() {
        let raw = RawImage {
            height: li.image.size,
            width: li.image.size,
            channels: 3,
            data: li.image.rgb.clone(),
        };
        io::save_raw(&dir.join(format!("img_{i:05}.raw")), &raw)?;
        for gt in &li.ground_truths {
            let b = gt.bbox;
            ann.push_str(&format!("{i} {} {:?} {:?} {:?} {:?}\n", gt.class_id, b[0], b[1], b[2], b[3]));
        }
    }
    io::write_atomic(&dir.join("annotations.txt"), ann.as_bytes())?;
    io::write_atomic(&dir.join("count.txt"), format!("{}\n", data.len()).as_bytes())
}

/// Reads a dataset written by [`save_dataset`]. Coverage is not stored.
pub fn load_dataset(dir: &Path) -> Result<Vec<LabeledImage>> {
    let count_path = dir.join("count.txt");
    let count: usize = fs::read_to_string(&count_path)
        .map_err(|e| Error::io(&count_path, e))?
        .trim()
        .parse()
        .map_err(|_| Error::format(&count_path, "expected an image count"))?;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let raw = io::load_raw(&dir.join(format!("img_{i:05}.raw")))?;
        out.push(LabeledImage {
            image: RenderedImage {
                size: raw.width,
                rgb: raw.data,
                coverage: Vec::new(),
                diagnostics: Default::default(),
            },
            ground_truths: Vec::new(),
        });
    }
    let ann_path = dir.join("annotations.txt");
    let text = fs::read_to_string(&ann_path).map_err(|e| Error::io(&ann_path, e))?;
    for (ln, line) in text.lines().enumerate() {
        let bad = || Error::format(&ann_path, format!("line {}: expected `image class x1 y1 x2 y2`", ln + 1));
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 6 {
            return Err(bad());
        }
        let i: usize = f[0].parse().map_err(|_| bad())?;
        let class_id: usize = f[1].parse().map_err(|_| bad())?;
        let mut bbox = [0.0; 4];
        for k in 0..4 {
            bbox[k] = f[2 + k].parse().map_err(|_| bad())?;
        }
        out.get_mut(i).ok_or_else(bad)?.ground_truths.push(GroundTruth { class_id, bbox });
    }
    Ok(out)
}
