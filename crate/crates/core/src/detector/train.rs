//! Joint training of the proposal network and the ROI head.

use cac_autodiff::Graph;
use rand::seq::{index, SliceRandom};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Architecture, DetectorModel, HEAD_DELTA_SCALE};
use crate::boxes::{self, coder, BBox};
use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig};
use crate::rng::Rng;
use crate::scenes::{GroundTruth, LabeledImage, BACKGROUND};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub step_size: f64,
    /// Fraction of `steps` after which the step size drops tenfold.
    pub decay_at: f64,
    pub rpn_batch: usize,
    pub rpn_max_positive: usize,
    pub rpn_positive_iou: f64,
    pub rpn_negative_iou: f64,
    pub roi_batch: usize,
    pub roi_max_foreground: usize,
    pub roi_foreground_iou: f64,
    /// Jittered copies of each ground truth added to the ROI candidates.
    pub gt_jitter: usize,
    /// Proposals fed to the head during training.
    pub train_proposals: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 4000,
            step_size: 1e-3,
            decay_at: 0.7,
            rpn_batch: 128,
            rpn_max_positive: 64,
            rpn_positive_iou: 0.7,
            rpn_negative_iou: 0.3,
            roi_batch: 64,
            roi_max_foreground: 24,
            roi_foreground_iou: 0.5,
            gt_jitter: 4,
            train_proposals: 300,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: usize,
    pub loss: f64,
    pub rpn_cls: f64,
    pub rpn_box: f64,
    pub head: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
}

impl TrainLog {
    /// Mean total loss over the last `k` steps.
    pub fn trailing_loss(&self, k: usize) -> f64 {
        let tail = &self.records[self.records.len().saturating_sub(k)..];
        tail.iter().map(|r| r.loss).sum::<f64>() / tail.len().max(1) as f64
    }
}

/// Sampled anchor labels and regression targets for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorTargets {
    /// 1 object, 0 background; meaningful where `weights` is 1.
    pub labels: Vec<usize>,
    pub weights: Vec<f32>,
    /// Four deltas per anchor.
    pub box_targets: Vec<f32>,
    /// 1 for sampled positive anchors.
    pub box_weights: Vec<f32>,
}

/// Labels anchors against ground truths and samples a training minibatch.
pub fn anchor_targets(anchors: &[BBox], gts: &[GroundTruth], cfg: &TrainConfig, rng: &mut Rng) -> AnchorTargets {
    let n = anchors.len();
    let mut best = vec![(0.0f64, usize::MAX); n];
    let mut best_for_gt = vec![(0.0f64, usize::MAX); gts.len()];
    for (i, a) in anchors.iter().enumerate() {
        for (j, gt) in gts.iter().enumerate() {
            let v = boxes::iou(a, &gt.bbox);
            if v > best[i].0 {
                best[i] = (v, j);
            }
            if v > best_for_gt[j].0 {
                best_for_gt[j] = (v, i);
            }
        }
    }
    // 1 positive, 0 negative, 2 ignored
    let mut state: Vec<u8> = best
        .iter()
        .map(|&(v, _)| if v >= cfg.rpn_positive_iou { 1 } else if v < cfg.rpn_negative_iou { 0 } else { 2 })
        .collect();
    for (j, &(v, i)) in best_for_gt.iter().enumerate() {
        if i != usize::MAX && v > 0.1 {
            state[i] = 1;
            best[i].1 = j;
        }
    }
    let pos: Vec<usize> = (0..n).filter(|&i| state[i] == 1).collect();
    let neg: Vec<usize> = (0..n).filter(|&i| state[i] == 0).collect();
    let take = |v: &[usize], k: usize, rng: &mut Rng| -> Vec<usize> {
        if v.len() <= k {
            v.to_vec()
        } else {
            index::sample(rng, v.len(), k).into_iter().map(|i| v[i]).collect()
        }
    };
    let pos = take(&pos, cfg.rpn_max_positive, rng);
    let neg = take(&neg, cfg.rpn_batch.saturating_sub(pos.len()), rng);
    let mut t = AnchorTargets {
        labels: vec![0; n],
        weights: vec![0.0; n],
        box_targets: vec![0.0; 4 * n],
        box_weights: vec![0.0; n],
    };
    for &i in &neg {
        t.weights[i] = 1.0;
    }
    for &i in &pos {
        t.labels[i] = 1;
        t.weights[i] = 1.0;
        t.box_weights[i] = 1.0;
        let d = coder::encode(&anchors[i], &gts[best[i].1].bbox);
        for k in 0..4 {
            t.box_targets[4 * i + k] = d[k] as f32;
        }
    }
    t
}

/// Candidate boxes and labels for the ROI head.
fn roi_targets(proposals: &[BBox], gts: &[GroundTruth], image_size: f64, cfg: &TrainConfig, rng: &mut Rng) -> (Vec<BBox>, Vec<usize>, Vec<Option<BBox>>) {
    let mut cand: Vec<BBox> = proposals.to_vec();
    for gt in gts {
        cand.push(gt.bbox);
        let (w, h) = (gt.bbox[2] - gt.bbox[0], gt.bbox[3] - gt.bbox[1]);
        let nx = Normal::new(0.0, 0.1 * w).expect("finite");
        let ny = Normal::new(0.0, 0.1 * h).expect("finite");
        for _ in 0..cfg.gt_jitter {
            let b = [
                gt.bbox[0] + nx.sample(rng),
                gt.bbox[1] + ny.sample(rng),
                gt.bbox[2] + nx.sample(rng),
                gt.bbox[3] + ny.sample(rng),
            ];
            let b = boxes::clip(&b, image_size, image_size);
            if boxes::is_valid(&b) {
                cand.push(b);
            }
        }
    }
    let matched: Vec<Option<&GroundTruth>> = cand
        .iter()
        .map(|b| {
            gts.iter()
                .map(|g| (boxes::iou(b, &g.bbox), g))
                .filter(|&(v, _)| v >= cfg.roi_foreground_iou)
                .max_by(|a, b| a.0.total_cmp(&b.0))
                .map(|(_, g)| g)
        })
        .collect();
    let labels: Vec<usize> = matched.iter().map(|m| m.map_or(BACKGROUND, |g| g.class_id)).collect();
    let mut fg: Vec<usize> = (0..cand.len()).filter(|&i| labels[i] != BACKGROUND).collect();
    let mut bg: Vec<usize> = (0..cand.len()).filter(|&i| labels[i] == BACKGROUND).collect();
    fg.shuffle(rng);
    bg.shuffle(rng);
    fg.truncate(cfg.roi_max_foreground);
    bg.truncate(cfg.roi_batch.saturating_sub(fg.len()));
    let picked: Vec<usize> = fg.into_iter().chain(bg).collect();
    (
        picked.iter().map(|&i| cand[i]).collect(),
        picked.iter().map(|&i| labels[i]).collect(),
        picked.iter().map(|&i| matched[i].map(|g| g.bbox)).collect(),
    )
}

/// Trains a fresh model of `arch` on `dataset`, one image per step.
pub fn train_detector(arch: Architecture, dataset: &[LabeledImage], cfg: &TrainConfig, rng: &mut Rng) -> Result<(DetectorModel, TrainLog)> {
    if dataset.is_empty() {
        return Err(Error::Config("training dataset is empty".into()));
    }
    let mut model = DetectorModel::init(arch, rng)?;
    let sizes: Vec<usize> = model.params.iter().map(|p| p.len()).collect();
    let mut adam = Adam::new(
        AdamConfig {
            step_size: cfg.step_size,
            ..Default::default()
        },
        &sizes,
    );
    let anchors = model.anchors();
    let size = model.arch.input_size as f64;
    let mut order: Vec<usize> = Vec::new();
    let mut log = TrainLog::default();
    for step in 0..cfg.steps {
        if step as f64 >= cfg.decay_at * cfg.steps as f64 {
            adam.config.step_size = cfg.step_size * 0.1;
        }
        if order.is_empty() {
            order = (0..dataset.len()).collect();
            order.shuffle(rng);
        }
        let sample = &dataset[order.pop().expect("non-empty")];
        let gts = &sample.ground_truths;

        let mut g = Graph::new();
        let x = g.constant(sample.image.to_chw());
        let pass = model.forward(&mut g, x, true)?;
        let at = anchor_targets(&anchors, gts, cfg, rng);
        let rpn_cls = g.cross_entropy(pass.rpn_logits, at.labels, Some(at.weights))?;
        let rpn_box = g.smooth_l1(pass.rpn_deltas, at.box_targets, at.box_weights, 1.0 / 9.0)?;
        let props: Vec<BBox> = model.proposals(&g, &pass, cfg.train_proposals).proposals.iter().map(|p| p.bbox).collect();
        let (rois, labels, matched) = roi_targets(&props, gts, size, cfg, rng);
        let mut loss = g.add(rpn_cls, rpn_box)?;
        let mut head_loss = 0.0;
        if !rois.is_empty() {
            let (logits, deltas) = model.roi_outputs(&mut g, &pass, &rois)?;
            let mut targets = vec![0.0f32; 4 * rois.len()];
            let mut weights = vec![0.0f32; rois.len()];
            for (i, m) in matched.iter().enumerate() {
                if let Some(gt) = m {
                    let d = coder::encode(&rois[i], gt);
                    for k in 0..4 {
                        targets[4 * i + k] = (d[k] * HEAD_DELTA_SCALE[k]) as f32;
                    }
                    weights[i] = 1.0;
                }
            }
            let cls = g.cross_entropy(logits, labels, None)?;
            let reg = g.smooth_l1(deltas, targets, weights, 1.0)?;
            let head = g.add(cls, reg)?;
            head_loss = g.value(head).item() as f64;
            loss = g.add(loss, head)?;
        }
        let record = TrainRecord {
            step,
            loss: g.value(loss).item() as f64,
            rpn_cls: g.value(rpn_cls).item() as f64,
            rpn_box: g.value(rpn_box).item() as f64,
            head: head_loss,
        };
        if !record.loss.is_finite() {
            return Err(Error::NonFinite {
                stage: format!("detector training step {step} ({record:?})"),
            });
        }
        log.records.push(record);
        let grads = g.backward(loss)?;
        let grad_refs: Vec<Option<&[f32]>> = pass.params.iter().map(|&p| grads.get_ref(p).map(|t| t.data())).collect();
        let mut bufs: Vec<&mut [f32]> = model.params.iter_mut().map(|t| t.data_mut()).collect();
        adam.step(&mut bufs, &grad_refs);
    }
    Ok((model, log))
}
