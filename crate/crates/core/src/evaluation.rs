//! Detection metrics and evaluation protocols.

use cac_autodiff::{Graph, Tensor};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use crate::boxes::{iou, try_iou};
use crate::attack;
use crate::boxes::BBox;
use crate::detector::{Detection, DetectorModel, CONF_THRESHOLD};
use crate::env::{sample_env_in_regime, Brightness, EnvCondition, EnvDistribution, ViewpointRegime};
use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::render;
use crate::rng;
use crate::scenes::{self, GroundTruth};
use crate::texture::TextureMap;

/// IoU at which a detection hits a ground truth.
pub const HIT_IOU: f64 = 0.5;

/// Which detection classes count as a correct label for a ground truth.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrueClasses {
    /// Only the ground truth's own class.
    Own,
    /// Any class in the set.
    Set(Vec<usize>),
}

impl TrueClasses {
    pub fn accepts(&self, gt_class: usize, detected: usize) -> bool {
        match self {
            TrueClasses::Own => gt_class == detected,
            TrueClasses::Set(s) => s.contains(&detected),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HitCount {
    pub hits: usize,
    pub ground_truths: usize,
}

impl HitCount {
    pub fn precision(&self) -> Result<f64> {
        if self.ground_truths == 0 {
            return Err(Error::UndefinedMetric("no ground truths".into()));
        }
        Ok(self.hits as f64 / self.ground_truths as f64)
    }
}

/// Hits in one image. Detections are visited by descending confidence
/// (ties by index); each claims the unclaimed acceptable ground truth it
/// overlaps most, if that overlap reaches [`HIT_IOU`].
pub fn image_hits(dets: &[Detection], gts: &[GroundTruth], true_classes: &TrueClasses) -> Vec<bool> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].confidence.total_cmp(&dets[a].confidence));
    let mut hit = vec![false; gts.len()];
    for i in order {
        let d = &dets[i];
        let best = gts
            .iter()
            .enumerate()
            .filter(|(j, g)| !hit[*j] && true_classes.accepts(g.class_id, d.class_id))
            .map(|(j, g)| (j, iou(&d.bbox, &g.bbox)))
            .filter(|&(_, v)| v >= HIT_IOU)
            .fold(None, |acc: Option<(usize, f64)>, c| match acc {
                Some(a) if a.1 >= c.1 => Some(a),
                _ => Some(c),
            });
        if let Some((j, _)) = best {
            hit[j] = true;
        }
    }
    hit
}

/// P@0.5 over a set of images: hits over ground truths.
pub fn precision_at_05(dets: &[Vec<Detection>], gts: &[Vec<GroundTruth>], true_classes: &TrueClasses) -> Result<f64> {
    hit_count(dets, gts, true_classes).precision()
}

pub fn hit_count(dets: &[Vec<Detection>], gts: &[Vec<GroundTruth>], true_classes: &TrueClasses) -> HitCount {
    let mut c = HitCount::default();
    for (d, g) in dets.iter().zip(gts) {
        c.hits += image_hits(d, g, true_classes).iter().filter(|&&h| h).count();
        c.ground_truths += g.len();
    }
    c
}

/// Lighting used for evaluation renders.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BrightnessChoice {
    /// The full lighting range.
    Any,
    Bright,
    Dark,
    /// `views` renders under each preset.
    Both,
}

impl BrightnessChoice {
    pub fn presets(self) -> Vec<Option<Brightness>> {
        match self {
            BrightnessChoice::Any => vec![None],
            BrightnessChoice::Bright => vec![Some(Brightness::Bright)],
            BrightnessChoice::Dark => vec![Some(Brightness::Dark)],
            BrightnessChoice::Both => vec![Some(Brightness::Bright), Some(Brightness::Dark)],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BrightnessChoice::Any => "any",
            BrightnessChoice::Bright => "bright",
            BrightnessChoice::Dark => "dark",
            BrightnessChoice::Both => "both",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRegime {
    pub viewpoint: ViewpointRegime,
    pub brightness: BrightnessChoice,
    /// Views per brightness preset.
    pub views: usize,
    pub true_classes: Vec<usize>,
    /// Ascending camera-distance edges; results are also reported per bin.
    pub distance_bins: Option<Vec<f64>>,
}

impl EvalRegime {
    pub fn validate(&self) -> Result<()> {
        if self.views == 0 {
            return Err(Error::Config("evaluation needs at least one view".into()));
        }
        if self.true_classes.is_empty() {
            return Err(Error::Config("evaluation needs at least one true class".into()));
        }
        self.viewpoint.validate().map_err(Error::Config)?;
        if let Some(b) = &self.distance_bins {
            if b.len() < 2 || b.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Config("distance bins need two or more ascending edges".into()));
            }
        }
        Ok(())
    }
}

/// Outcome of one evaluation render.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewResult {
    pub env: EnvCondition,
    pub preset: Option<Brightness>,
    /// `None` when the object left the frame (view not counted).
    pub ground_truth: Option<BBox>,
    pub detections: Vec<Detection>,
    pub hit: bool,
    /// Class of the most confident detection overlapping the object.
    pub top_class: Option<usize>,
}

impl ViewResult {
    /// No detection of any class overlaps the object.
    pub fn vanished(&self) -> bool {
        match self.ground_truth {
            Some(gt) => !self.detections.iter().any(|d| iou(&d.bbox, &gt) >= HIT_IOU),
            None => false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinResult {
    pub lo: f64,
    pub hi: f64,
    pub hits: usize,
    pub views: usize,
    pub p05: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub views: usize,
    pub hits: usize,
    pub p05: f64,
    pub detections: usize,
    /// Views whose most confident overlapping detection is the target class.
    pub target_fraction: Option<f64>,
    /// Views with no detection overlapping the object.
    pub vanish_fraction: f64,
    pub bins: Vec<BinResult>,
}

/// Renders `regime.views` images per brightness preset, detects at the
/// standard threshold and scores them.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_views(
    model: &DetectorModel,
    mesh: &Mesh,
    texture: &TextureMap,
    object_class: usize,
    regime: &EvalRegime,
    dist: &EnvDistribution,
    seed: u64,
) -> Result<Vec<ViewResult>> {
    regime.validate()?;
    let size = model.arch.input_size;
    let true_classes = TrueClasses::Set(regime.true_classes.clone());
    let jobs: Vec<(usize, Option<Brightness>)> = regime
        .brightness
        .presets()
        .into_iter()
        .flat_map(|p| (0..regime.views).map(move |i| (i, p)))
        .collect();
    jobs.par_iter()
        .map(|&(i, preset)| {
            let tag = preset.map_or("any", |p| if p == Brightness::Bright { "bright" } else { "dark" });
            let mut r = rng::substream(seed, &format!("eval-{tag}"), i as u64);
            let env = sample_env_in_regime(dist, &regime.viewpoint, preset, &mut r);
            let scene = scenes::target_scene(mesh, texture, &env, object_class, size, &mut r)?;
            let Some(scene) = scene else {
                return Ok(ViewResult {
                    env,
                    preset,
                    ground_truth: None,
                    detections: Vec::new(),
                    hit: false,
                    top_class: None,
                });
            };
            let dets = model.detect(&scene.image.to_chw(), CONF_THRESHOLD)?;
            let gt = scene.ground_truths[0];
            let hit = image_hits(&dets, &scene.ground_truths, &true_classes)[0];
            let top_class = dets.iter().find(|d| iou(&d.bbox, &gt.bbox) >= HIT_IOU).map(|d| d.class_id);
            Ok(ViewResult {
                env,
                preset,
                ground_truth: Some(gt.bbox),
                detections: dets,
                hit,
                top_class,
            })
        })
        .collect()
}

pub fn summarize(results: &[ViewResult], target_class: Option<usize>, distance_bins: Option<&[f64]>) -> Result<EvalSummary> {
    let counted: Vec<&ViewResult> = results.iter().filter(|r| r.ground_truth.is_some()).collect();
    if counted.is_empty() {
        return Err(Error::UndefinedMetric("no view contains the object".into()));
    }
    let hits = counted.iter().filter(|r| r.hit).count();
    let n = counted.len() as f64;
    let bins = distance_bins
        .map(|edges| {
            edges
                .windows(2)
                .enumerate()
                .map(|(k, w)| {
                    let last = k + 2 == edges.len();
                    let inside: Vec<&&ViewResult> = counted
                        .iter()
                        .filter(|r| r.env.camera_distance >= w[0] && (r.env.camera_distance < w[1] || (last && r.env.camera_distance <= w[1])))
                        .collect();
                    let h = inside.iter().filter(|r| r.hit).count();
                    BinResult {
                        lo: w[0],
                        hi: w[1],
                        hits: h,
                        views: inside.len(),
                        p05: (!inside.is_empty()).then(|| h as f64 / inside.len() as f64),
                    }
                })
                .collect()
        })
        .unwrap_or_default();
    Ok(EvalSummary {
        views: counted.len(),
        hits,
        p05: hits as f64 / n,
        detections: counted.iter().map(|r| r.detections.len()).sum(),
        target_fraction: target_class.map(|t| counted.iter().filter(|r| r.top_class == Some(t)).count() as f64 / n),
        vanish_fraction: counted.iter().filter(|r| r.vanished()).count() as f64 / n,
        bins,
    })
}

/// Evaluates one texture on the target mesh under `regime`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_texture(
    model: &DetectorModel,
    mesh: &Mesh,
    texture: &TextureMap,
    object_class: usize,
    target_class: Option<usize>,
    regime: &EvalRegime,
    dist: &EnvDistribution,
    seed: u64,
) -> Result<EvalSummary> {
    let views = evaluate_views(model, mesh, texture, object_class, regime, dist, seed)?;
    summarize(&views, target_class, regime.distance_bins.as_deref())
}

/// P@0.5 of a detector on labeled scenes, each ground truth judged by its
/// own class.
pub fn scene_precision(model: &DetectorModel, data: &[scenes::LabeledImage]) -> Result<f64> {
    let dets: Vec<Vec<Detection>> = data.par_iter().map(|li| model.detect(&li.image.to_chw(), CONF_THRESHOLD)).collect::<Result<_>>()?;
    let gts: Vec<Vec<GroundTruth>> = data.iter().map(|li| li.ground_truths.clone()).collect();
    precision_at_05(&dets, &gts, &TrueClasses::Own)
}

/// Image-sized class activation map in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub size: usize,
    pub values: Vec<f32>,
    /// The class score had zero gradient everywhere on the layer.
    pub degenerate: bool,
}

/// Gradient-weighted class activation of backbone convolution `layer`
/// (`None` for the last). The class score is the class logit of the
/// proposal most confident in that class.
pub fn grad_cam(model: &DetectorModel, image: &Tensor, class_id: usize, layer: Option<usize>) -> Result<Heatmap> {
    if class_id > model.arch.num_classes {
        return Err(Error::Config(format!("class {class_id} outside 0..={}", model.arch.num_classes)));
    }
    let mut g = Graph::new();
    let x = g.input("image", image.clone(), true);
    let pass = model.forward(&mut g, x, false)?;
    let convs = pass.conv_outputs.len();
    let layer = layer.unwrap_or(convs - 1);
    if layer >= convs {
        return Err(Error::Config(format!("layer {layer} outside the {convs} backbone convolutions")));
    }
    let target = pass.conv_outputs[layer];
    let set = model.proposals(&g, &pass, model.arch.post_nms_top);
    if set.proposals.is_empty() {
        return Err(Error::NoProposals);
    }
    let bxs: Vec<BBox> = set.proposals.iter().map(|p| p.bbox).collect();
    let logits = model.roi_logits(&mut g, &pass, &bxs)?;
    let k = model.arch.num_classes + 1;
    let probs = crate::detector::softmax_rows(g.value(logits).data(), k);
    let best = (0..bxs.len()).max_by(|&a, &b| probs[a * k + class_id].total_cmp(&probs[b * k + class_id]).then(b.cmp(&a))).expect("non-empty");
    let pick = Tensor::from_fn(&[bxs.len(), k], |i| if i == best * k + class_id { 1.0 } else { 0.0 });
    let pick = g.constant(pick);
    let score = g.mul(logits, pick)?;
    let score = g.sum(score)?;
    let grads = g.backward(score)?;
    let a = g.value(target);
    let da = grads.get(target);
    let (c, h, w) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let mut cam = vec![0.0f64; h * w];
    for ch in 0..c {
        let gch = &da.data()[ch * h * w..(ch + 1) * h * w];
        let alpha = gch.iter().map(|&v| v as f64).sum::<f64>() / (h * w) as f64;
        for (m, &v) in cam.iter_mut().zip(&a.data()[ch * h * w..(ch + 1) * h * w]) {
            *m += alpha * v as f64;
        }
    }
    let size = model.arch.input_size;
    let scale = h as f64 / size as f64;
    let mut up = vec![0.0f64; size * size];
    for r in 0..size {
        for col in 0..size {
            let y = ((r as f64 + 0.5) * scale - 0.5).clamp(0.0, (h - 1) as f64);
            let x = ((col as f64 + 0.5) * scale - 0.5).clamp(0.0, (w - 1) as f64);
            let (y0, x0) = (y.floor() as usize, x.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
            let (fy, fx) = (y - y0 as f64, x - x0 as f64);
            let v = cam[y0 * w + x0] * (1.0 - fy) * (1.0 - fx) + cam[y0 * w + x1] * (1.0 - fy) * fx + cam[y1 * w + x0] * fy * (1.0 - fx) + cam[y1 * w + x1] * fy * fx;
            up[r * size + col] = v.max(0.0);
        }
    }
    let max = up.iter().cloned().fold(0.0, f64::max);
    let degenerate = max <= 0.0;
    Ok(Heatmap {
        size,
        values: up.iter().map(|&v| if degenerate { 0.0 } else { (v / max) as f32 }).collect(),
        degenerate,
    })
}

impl Heatmap {
    /// Sum of values over pixels where `mask` holds.
    pub fn mass(&self, mask: impl Fn(usize) -> bool) -> f64 {
        self.values.iter().enumerate().filter(|(i, _)| mask(*i)).map(|(_, &v)| v as f64).sum()
    }

    /// Heatmap blended over an HWC image, red for attention.
    pub fn overlay(&self, rgb: &[f32]) -> Vec<f32> {
        rgb.chunks(3)
            .zip(&self.values)
            .flat_map(|(px, &h)| [0.5 * px[0] + 0.5 * h, 0.5 * px[1], 0.5 * px[2] + 0.5 * (1.0 - h) * 0.3])
            .collect()
    }
}

/// Pixels covered by paintable faces of the single rendered instance.
pub fn paintable_pixels(mesh: &Mesh, image: &render::RenderedImage) -> Vec<bool> {
    image.coverage.iter().map(|c| c.is_some_and(|(_, f)| mesh.paintable[f as usize])).collect()
}

/// Paint of the unattacked target object.
pub const ORIGINAL_COLOR: [f32; 3] = [0.72, 0.12, 0.10];

pub fn original_texture(mesh: &Mesh) -> TextureMap {
    TextureMap::solid(mesh, ORIGINAL_COLOR)
}

/// Baseline minus attacked precision.
pub fn drop_rate(baseline: f64, attacked: f64) -> f64 {
    baseline - attacked
}

/// One line of an evaluation report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub texture: String,
    pub model: String,
    pub viewpoint: String,
    pub brightness: String,
    pub views: usize,
    pub p05: f64,
    pub detections: usize,
    pub target_fraction: Option<f64>,
    pub vanish_fraction: f64,
    pub drop: Option<f64>,
}

impl ReportRow {
    pub fn new(texture: &str, model: &str, regime: &EvalRegime, summary: &EvalSummary, baseline: Option<f64>) -> Self {
        Self {
            texture: texture.into(),
            model: model.into(),
            viewpoint: regime.viewpoint.short_name().into(),
            brightness: regime.brightness.name().into(),
            views: summary.views,
            p05: summary.p05,
            detections: summary.detections,
            target_fraction: summary.target_fraction,
            vanish_fraction: summary.vanish_fraction,
            drop: baseline.map(|b| drop_rate(b, summary.p05)),
        }
    }

    pub const HEADER: [&'static str; 10] = ["texture", "model", "viewpoint", "brightness", "views", "p05", "detections", "target_fraction", "vanish_fraction", "drop"];

    pub fn record(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.4}"));
        vec![
            self.texture.clone(),
            self.model.clone(),
            self.viewpoint.clone(),
            self.brightness.clone(),
            self.views.to_string(),
            format!("{:.4}", self.p05),
            self.detections.to_string(),
            opt(self.target_fraction),
            format!("{:.4}", self.vanish_fraction),
            opt(self.drop),
        ]
    }
}

/// Point of a top-n sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub top_n: usize,
    pub summary: EvalSummary,
}

/// Attacks once per proposal budget in `n_values` (same seed) and evaluates
/// each resulting texture.
#[allow(clippy::too_many_arguments)]
pub fn topn_sweep(
    model: &DetectorModel,
    mesh: &Mesh,
    initial: &TextureMap,
    template: &attack::AttackConfig,
    n_values: &[usize],
    regime: &EvalRegime,
    dist: &EnvDistribution,
    seed: u64,
) -> Result<Vec<SweepPoint>> {
    if n_values.is_empty() || n_values.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Config("top-n values must be non-empty and ascending".into()));
    }
    n_values
        .iter()
        .map(|&n| {
            let cfg = attack::AttackConfig { top_n: n, ..template.clone() };
            let state = attack::run_cac(mesh, initial, model, dist, &cfg, seed, None)?;
            let summary = evaluate_texture(model, mesh, &state.texture, template.true_class, Some(template.target_class), regime, dist, seed)?;
            Ok(SweepPoint { top_n: n, summary })
        })
        .collect()
}
