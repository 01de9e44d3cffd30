//! Two-stage detector: convolutional backbone, region proposal network,
//! proposal suppression and an ROI classification head.

mod arch;
pub mod checkpoint;
mod train;

use std::sync::Arc;

use cac_autodiff::{Graph, Layout, NodeId, SamplePlan, SamplePoint, Tensor};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use arch::{AnchorConfig, Architecture, Layer};
pub use train::{anchor_targets, train_detector, AnchorTargets, TrainConfig, TrainLog, TrainRecord};

use crate::boxes::{self, coder, BBox};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scenes::BACKGROUND;

/// Region proposal: objectness score and box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub score: f64,
    pub bbox: BBox,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class_id: usize,
    pub confidence: f64,
    pub bbox: BBox,
}

/// Confidence threshold applied to every reported detection.
pub const CONF_THRESHOLD: f64 = 0.3;
/// Per-class suppression of final detections.
pub const DETECTION_NMS_IOU: f64 = 0.3;
/// Scale of the head's box deltas relative to [`coder::encode`].
pub const HEAD_DELTA_SCALE: [f64; 4] = [10.0, 10.0, 5.0, 5.0];

#[derive(Clone, Debug)]
pub struct DetectorModel {
    pub arch: Architecture,
    /// Parameters in [`Architecture::param_shapes`] order.
    pub params: Vec<Tensor>,
}

/// Graph nodes of one forward pass.
#[derive(Clone, Debug)]
pub struct Pass {
    pub params: Vec<NodeId>,
    /// Output of every backbone convolution (after relu).
    pub conv_outputs: Vec<NodeId>,
    /// Final backbone feature map `[C, h, w]`.
    pub feature: NodeId,
    /// Objectness logits `[h*w*A, 2]`, position-major then anchor.
    pub rpn_logits: NodeId,
    /// Box deltas `[h*w*A, 4]`.
    pub rpn_deltas: NodeId,
}

/// Proposals of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct ProposalSet {
    /// Sorted by non-increasing score.
    pub proposals: Vec<Proposal>,
    /// Fewer survivors than requested.
    pub exhausted: bool,
}

impl DetectorModel {
    /// He-initialized parameters.
    pub fn init(arch: Architecture, rng: &mut Rng) -> Result<Self> {
        arch.validate()?;
        let params = arch
            .param_shapes()
            .into_iter()
            .map(|(name, shape)| {
                let n: usize = shape.iter().product();
                if name.ends_with(".b") {
                    return Tensor::zeros(&shape);
                }
                let fan_in = if shape.len() == 4 { shape[1] * shape[2] * shape[3] } else { shape[0] };
                let std = if name.starts_with("rpn.cls") || name.starts_with("rpn.box") || name == "head.fc2.w" {
                    0.01
                } else if name == "head.box.w" {
                    0.001
                } else {
                    (2.0 / fan_in as f64).sqrt()
                };
                let normal = Normal::new(0.0, std).expect("finite std");
                Tensor::new(shape, (0..n).map(|_| normal.sample(rng) as f32).collect()).expect("shape")
            })
            .collect();
        Ok(Self { arch, params })
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    fn check_image(&self, shape: &[usize]) -> Result<()> {
        let s = self.arch.input_size;
        if shape != [3, s, s] {
            return Err(Error::Config(format!("detector {} expects [3, {s}, {s}] images, got {shape:?}", self.arch.name)));
        }
        Ok(())
    }

    /// Adds backbone and RPN to `g`. Parameter leaves require gradients only
    /// when `trainable`.
    pub fn forward(&self, g: &mut Graph, image: NodeId, trainable: bool) -> Result<Pass> {
        self.check_image(g.value(image).shape())?;
        let names = self.arch.param_shapes();
        let params: Vec<NodeId> = names.iter().zip(&self.params).map(|((n, _), t)| g.param(n, t.clone(), trainable)).collect();
        let mut x = image;
        let mut conv_outputs = Vec::new();
        let mut p = 0;
        for layer in &self.arch.backbone {
            x = match layer {
                Layer::Conv { .. } => {
                    let y = g.conv2d(x, params[p], params[p + 1], 1, 1)?;
                    p += 2;
                    let y = g.relu(y)?;
                    conv_outputs.push(y);
                    y
                }
                Layer::Pool => g.max_pool2d(x, 2, 2)?,
            };
        }
        let feature = x;
        let r = g.conv2d(feature, params[p], params[p + 1], 1, 1)?;
        let r = g.relu(r)?;
        let cls = g.conv2d(r, params[p + 2], params[p + 3], 1, 0)?;
        let dlt = g.conv2d(r, params[p + 4], params[p + 5], 1, 0)?;
        let hw = {
            let s = g.value(feature).shape();
            s[1] * s[2]
        };
        let a = self.arch.anchors.per_position();
        let to_rows = |g: &mut Graph, t: NodeId, k: usize| -> Result<NodeId> {
            let t = g.reshape(t, &[k * a, hw])?;
            let t = g.transpose(t)?;
            Ok(g.reshape(t, &[hw * a, k])?)
        };
        let rpn_logits = to_rows(g, cls, 2)?;
        let rpn_deltas = to_rows(g, dlt, 4)?;
        Ok(Pass {
            params,
            conv_outputs,
            feature,
            rpn_logits,
            rpn_deltas,
        })
    }

    pub fn anchors(&self) -> Vec<BBox> {
        let f = self.arch.feature_size();
        self.arch.anchors.generate(f, f)
    }

    /// Decodes, suppresses and ranks proposals from a forward pass. No
    /// gradient flows through the result.
    pub fn proposals(&self, g: &Graph, pass: &Pass, top_n: usize) -> ProposalSet {
        let logits = g.value(pass.rpn_logits).data();
        let deltas = g.value(pass.rpn_deltas).data();
        let size = self.arch.input_size as f64;
        let mut cand: Vec<(f64, BBox)> = self
            .anchors()
            .iter()
            .enumerate()
            .filter_map(|(i, anchor)| {
                let (l0, l1) = (logits[2 * i] as f64, logits[2 * i + 1] as f64);
                let score = 1.0 / (1.0 + (l0 - l1).exp());
                let d = [0, 1, 2, 3].map(|k| deltas[4 * i + k] as f64);
                let b = boxes::clip(&coder::decode(anchor, d), size, size);
                let ok = b[2] - b[0] >= self.arch.min_proposal_size && b[3] - b[1] >= self.arch.min_proposal_size;
                (ok && score.is_finite()).then_some((score, b))
            })
            .collect();
        cand.sort_by(|a, b| b.0.total_cmp(&a.0));
        cand.truncate(self.arch.pre_nms_top);
        let bxs: Vec<BBox> = cand.iter().map(|c| c.1).collect();
        let scores: Vec<f64> = cand.iter().map(|c| c.0).collect();
        let keep = boxes::nms(&bxs, &scores, self.arch.rpn_nms_iou);
        let limit = top_n.min(self.arch.post_nms_top);
        let proposals: Vec<Proposal> = keep.iter().take(limit).map(|&i| Proposal { score: scores[i], bbox: bxs[i] }).collect();
        ProposalSet {
            exhausted: proposals.len() < top_n,
            proposals,
        }
    }

    /// Runs the first stage on `image` (`[3, H, W]`) and returns the top
    /// `top_n` proposals.
    pub fn propose(&self, image: &Tensor, top_n: usize) -> Result<ProposalSet> {
        let mut g = Graph::new();
        let x = g.constant(image.clone());
        let pass = self.forward(&mut g, x, false)?;
        Ok(self.proposals(&g, &pass, top_n))
    }

    /// ROI sample plan over the feature map. Boxes below one pixel are
    /// widened to one pixel; the returned count says how many.
    pub fn roi_plan(&self, boxes_px: &[BBox]) -> (Arc<SamplePlan>, usize) {
        let s = self.arch.roi_size;
        let stride = self.arch.anchors.stride as f64;
        let f = self.arch.feature_size();
        let mut flagged = 0;
        let mut points = Vec::with_capacity(boxes_px.len() * s * s);
        for b in boxes_px {
            let mut b = *b;
            for (lo, hi) in [(0, 2), (1, 3)] {
                if b[hi] - b[lo] < 1.0 {
                    let c = 0.5 * (b[lo] + b[hi]);
                    b[lo] = c - 0.5;
                    b[hi] = c + 0.5;
                    flagged += 1;
                }
            }
            let (bw, bh) = ((b[2] - b[0]) / s as f64, (b[3] - b[1]) / s as f64);
            for i in 0..s {
                for j in 0..s {
                    let x = b[0] + (j as f64 + 0.5) * bw;
                    let y = b[1] + (i as f64 + 0.5) * bh;
                    points.push(SamplePoint {
                        y: (y / stride - 0.5) as f32,
                        x: (x / stride - 0.5) as f32,
                        weight: 1.0,
                    });
                }
            }
        }
        let c = self.arch.feature_channels();
        (Arc::new(SamplePlan::new(&points, f, f, c, Layout::Chw, Layout::Hwc)), flagged)
    }

    /// Hidden ROI features `[n, hidden]` for the given boxes.
    fn roi_hidden(&self, g: &mut Graph, pass: &Pass, boxes_px: &[BBox]) -> Result<NodeId> {
        if boxes_px.is_empty() {
            return Err(Error::NoProposals);
        }
        let (plan, _) = self.roi_plan(boxes_px);
        let p = pass.params.len();
        let (w1, b1) = (pass.params[p - 6], pass.params[p - 5]);
        let roi = g.bilinear_sample(pass.feature, plan)?;
        let c = self.arch.feature_channels();
        let s = self.arch.roi_size;
        let roi = g.reshape(roi, &[boxes_px.len(), s * s * c])?;
        let h = g.affine(roi, w1, b1)?;
        Ok(g.relu(h)?)
    }

    fn head_logits(&self, g: &mut Graph, pass: &Pass, hidden: NodeId) -> Result<NodeId> {
        let p = pass.params.len();
        Ok(g.affine(hidden, pass.params[p - 4], pass.params[p - 3])?)
    }

    fn head_deltas(&self, g: &mut Graph, pass: &Pass, hidden: NodeId) -> Result<NodeId> {
        let p = pass.params.len();
        Ok(g.affine(hidden, pass.params[p - 2], pass.params[p - 1])?)
    }

    /// Class logits `[n, K+1]` of the ROI head for the given boxes.
    pub fn roi_logits(&self, g: &mut Graph, pass: &Pass, boxes_px: &[BBox]) -> Result<NodeId> {
        let h = self.roi_hidden(g, pass, boxes_px)?;
        self.head_logits(g, pass, h)
    }

    /// Class logits `[n, K+1]` and scaled refinement deltas `[n, 4]`.
    pub fn roi_outputs(&self, g: &mut Graph, pass: &Pass, boxes_px: &[BBox]) -> Result<(NodeId, NodeId)> {
        let h = self.roi_hidden(g, pass, boxes_px)?;
        Ok((self.head_logits(g, pass, h)?, self.head_deltas(g, pass, h)?))
    }

    /// Proposal boxes moved by the head's refinement deltas.
    pub fn refine(&self, boxes_px: &[BBox], deltas: &[f32]) -> Vec<BBox> {
        let size = self.arch.input_size as f64;
        boxes_px
            .iter()
            .zip(deltas.chunks(4))
            .map(|(b, d)| {
                let d = [0, 1, 2, 3].map(|k| d[k] as f64 / HEAD_DELTA_SCALE[k]);
                let r = boxes::clip(&coder::decode(b, d), size, size);
                if boxes::is_valid(&r) {
                    r
                } else {
                    *b
                }
            })
            .collect()
    }

    /// Class probabilities `[n, K+1]` for the proposals.
    pub fn classify_proposals(&self, g: &mut Graph, pass: &Pass, proposals: &[Proposal]) -> Result<NodeId> {
        let bxs: Vec<BBox> = proposals.iter().map(|p| p.bbox).collect();
        let logits = self.roi_logits(g, pass, &bxs)?;
        Ok(g.softmax(logits)?)
    }

    /// Full detection on `image` with the default proposal budget.
    pub fn detect(&self, image: &Tensor, conf_threshold: f64) -> Result<Vec<Detection>> {
        let mut g = Graph::new();
        let x = g.constant(image.clone());
        let pass = self.forward(&mut g, x, false)?;
        let set = self.proposals(&g, &pass, self.arch.post_nms_top);
        if set.proposals.is_empty() {
            return Ok(Vec::new());
        }
        let bxs: Vec<BBox> = set.proposals.iter().map(|p| p.bbox).collect();
        let (logits, deltas) = self.roi_outputs(&mut g, &pass, &bxs)?;
        let probs = softmax_rows(g.value(logits).data(), self.arch.num_classes + 1);
        let refined: Vec<Proposal> = self
            .refine(&bxs, g.value(deltas).data())
            .into_iter()
            .zip(&set.proposals)
            .map(|(bbox, p)| Proposal { score: p.score, bbox })
            .collect();
        Ok(detections_from(&refined, &probs, self.arch.num_classes + 1, conf_threshold))
    }
}

/// Per-class thresholding and suppression of classified proposals. The
/// result does not depend on proposal order.
pub fn detections_from(proposals: &[Proposal], probs: &[f32], classes: usize, conf_threshold: f64) -> Vec<Detection> {
    let mut out = Vec::new();
    for k in 0..classes {
        if k == BACKGROUND {
            continue;
        }
        let mut cand: Vec<(f64, BBox)> = proposals
            .iter()
            .enumerate()
            .map(|(i, p)| (probs[i * classes + k] as f64, p.bbox))
            .filter(|(c, _)| *c >= conf_threshold)
            .collect();
        cand.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| cmp_box(&a.1, &b.1)));
        let bxs: Vec<BBox> = cand.iter().map(|c| c.1).collect();
        let scores: Vec<f64> = cand.iter().map(|c| c.0).collect();
        for i in boxes::nms(&bxs, &scores, DETECTION_NMS_IOU) {
            out.push(Detection {
                class_id: k,
                confidence: scores[i],
                bbox: bxs[i],
            });
        }
    }
    out.sort_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then(a.class_id.cmp(&b.class_id))
            .then_with(|| cmp_box(&a.bbox, &b.bbox))
    });
    out
}

/// Row-wise softmax of a flat `[n, classes]` buffer.
pub fn softmax_rows(logits: &[f32], classes: usize) -> Vec<f32> {
    logits
        .chunks(classes)
        .flat_map(|row| {
            let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let e: Vec<f64> = row.iter().map(|&v| ((v - max) as f64).exp()).collect();
            let total: f64 = e.iter().sum();
            e.into_iter().map(move |v| (v / total) as f32)
        })
        .collect()
}

fn cmp_box(a: &BBox, b: &BBox) -> std::cmp::Ordering {
    (0..4).map(|k| a[k].total_cmp(&b[k])).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
}
