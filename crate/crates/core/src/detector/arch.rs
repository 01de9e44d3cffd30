//! Architecture descriptors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Layer {
    /// 3x3 convolution, padding 1, followed by relu.
    Conv { out: usize },
    /// 2x2 max pooling, stride 2.
    Pool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorConfig {
    /// Feature stride in pixels.
    pub stride: usize,
    /// Anchor side lengths (square-root of area) in pixels.
    pub scales: Vec<f64>,
    /// Height over width.
    pub ratios: Vec<f64>,
}

impl AnchorConfig {
    pub fn per_position(&self) -> usize {
        self.scales.len() * self.ratios.len()
    }

    /// Anchors for an `h x w` feature map, position-major then scale, ratio.
    pub fn generate(&self, h: usize, w: usize) -> Vec<[f64; 4]> {
        let mut out = Vec::with_capacity(h * w * self.per_position());
        let s = self.stride as f64;
        for r in 0..h {
            for c in 0..w {
                let (cx, cy) = ((c as f64 + 0.5) * s, (r as f64 + 0.5) * s);
                for &scale in &self.scales {
                    for &ratio in &self.ratios {
                        let bw = scale / ratio.sqrt();
                        let bh = scale * ratio.sqrt();
                        out.push([cx - bw / 2.0, cy - bh / 2.0, cx + bw / 2.0, cy + bh / 2.0]);
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub name: String,
    pub input_size: usize,
    /// Number of object classes K (background excluded).
    pub num_classes: usize,
    pub backbone: Vec<Layer>,
    pub rpn_channels: usize,
    /// Side of the ROI sampling grid.
    pub roi_size: usize,
    pub hidden: usize,
    pub anchors: AnchorConfig,
    pub rpn_nms_iou: f64,
    /// Proposals kept before the RPN's non-maximum suppression.
    pub pre_nms_top: usize,
    /// Proposals kept after it.
    pub post_nms_top: usize,
    /// Proposals narrower or shorter than this many pixels are dropped.
    pub min_proposal_size: f64,
}

impl Architecture {
    /// Four convolutions, stride 8.
    pub fn a(num_classes: usize) -> Self {
        use Layer::*;
        Self {
            name: "A".into(),
            input_size: 128,
            num_classes,
            backbone: vec![Conv { out: 16 }, Pool, Conv { out: 32 }, Pool, Conv { out: 48 }, Pool, Conv { out: 64 }],
            rpn_channels: 64,
            roi_size: 7,
            hidden: 128,
            anchors: AnchorConfig {
                stride: 8,
                scales: vec![16.0, 32.0, 64.0],
                ratios: vec![0.5, 1.0, 2.0],
            },
            rpn_nms_iou: 0.7,
            pre_nms_top: 600,
            post_nms_top: 300,
            min_proposal_size: 2.0,
        }
    }

    /// Six convolutions with different widths, stride 16.
    pub fn b(num_classes: usize) -> Self {
        use Layer::*;
        Self {
            name: "B".into(),
            backbone: vec![
                Conv { out: 12 },
                Pool,
                Conv { out: 24 },
                Pool,
                Conv { out: 32 },
                Conv { out: 32 },
                Pool,
                Conv { out: 48 },
                Pool,
                Conv { out: 80 },
            ],
            rpn_channels: 48,
            hidden: 96,
            anchors: AnchorConfig {
                stride: 16,
                scales: vec![16.0, 32.0, 64.0],
                ratios: vec![0.5, 1.0, 2.0],
            },
            ..Self::a(num_classes)
        }
    }

    pub fn by_name(name: &str, num_classes: usize) -> Option<Self> {
        match name {
            "A" | "a" => Some(Self::a(num_classes)),
            "B" | "b" => Some(Self::b(num_classes)),
            _ => None,
        }
    }

    pub fn stride(&self) -> usize {
        1 << self.backbone.iter().filter(|l| matches!(l, Layer::Pool)).count()
    }

    pub fn feature_channels(&self) -> usize {
        self.backbone
            .iter()
            .rev()
            .find_map(|l| match l {
                Layer::Conv { out } => Some(*out),
                Layer::Pool => None,
            })
            .unwrap_or(3)
    }

    pub fn feature_size(&self) -> usize {
        self.input_size / self.stride()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("architecture {}: {m}", self.name)));
        if self.num_classes == 0 {
            return bad("needs at least one object class".into());
        }
        if self.stride() != self.anchors.stride {
            return bad(format!("backbone stride {} differs from anchor stride {}", self.stride(), self.anchors.stride));
        }
        if self.input_size % self.anchors.stride != 0 {
            return bad(format!("stride {} does not divide input size {}", self.anchors.stride, self.input_size));
        }
        if self.anchors.scales.is_empty() || self.anchors.ratios.is_empty() {
            return bad("anchor scales and ratios must be non-empty".into());
        }
        if !self.backbone.iter().any(|l| matches!(l, Layer::Conv { .. })) {
            return bad("backbone has no convolution".into());
        }
        if !(self.rpn_nms_iou > 0.0 && self.rpn_nms_iou < 1.0) {
            return bad(format!("rpn_nms_iou {} outside (0, 1)", self.rpn_nms_iou));
        }
        Ok(())
    }

    /// Parameter names and shapes in storage order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut c = 3;
        let mut i = 0;
        for l in &self.backbone {
            if let Layer::Conv { out: o } = *l {
                out.push((format!("conv{i}.w"), vec![o, c, 3, 3]));
                out.push((format!("conv{i}.b"), vec![o]));
                c = o;
                i += 1;
            }
        }
        let a = self.anchors.per_position();
        let r = self.rpn_channels;
        out.push(("rpn.conv.w".into(), vec![r, c, 3, 3]));
        out.push(("rpn.conv.b".into(), vec![r]));
        out.push(("rpn.cls.w".into(), vec![2 * a, r, 1, 1]));
        out.push(("rpn.cls.b".into(), vec![2 * a]));
        out.push(("rpn.box.w".into(), vec![4 * a, r, 1, 1]));
        out.push(("rpn.box.b".into(), vec![4 * a]));
        let roi = self.roi_size * self.roi_size * c;
        out.push(("head.fc1.w".into(), vec![roi, self.hidden]));
        out.push(("head.fc1.b".into(), vec![self.hidden]));
        out.push(("head.fc2.w".into(), vec![self.hidden, self.num_classes + 1]));
        out.push(("head.fc2.b".into(), vec![self.num_classes + 1]));
        out.push(("head.box.w".into(), vec![self.hidden, 4]));
        out.push(("head.box.b".into(), vec![4]));
        out
    }
}
