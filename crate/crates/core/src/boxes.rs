//! Axis-aligned boxes `[x1, y1, x2, y2]` in pixels.

pub type BBox = [f64; 4];

pub fn area(b: &BBox) -> f64 {
    (b[2] - b[0]).max(0.0) * (b[3] - b[1]).max(0.0)
}

pub fn is_valid(b: &BBox) -> bool {
    b.iter().all(|v| v.is_finite()) && b[0] < b[2] && b[1] < b[3]
}

/// Intersection over union, or `None` when either box has zero area.
pub fn try_iou(a: &BBox, b: &BBox) -> Option<f64> {
    if !is_valid(a) || !is_valid(b) {
        return None;
    }
    let w = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let h = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = w * h;
    Some(inter / (area(a) + area(b) - inter))
}

/// Intersection over union; zero-area boxes overlap nothing.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    try_iou(a, b).unwrap_or(0.0)
}

pub fn clip(b: &BBox, width: f64, height: f64) -> BBox {
    [b[0].clamp(0.0, width), b[1].clamp(0.0, height), b[2].clamp(0.0, width), b[3].clamp(0.0, height)]
}

/// Greedy non-maximum suppression. Returns kept indices by descending
/// score; equal scores keep the lower index first.
pub fn nms(boxes: &[BBox], scores: &[f64], iou_threshold: f64) -> Vec<usize> {
    assert_eq!(boxes.len(), scores.len(), "one score per box");
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut kept: Vec<usize> = Vec::new();
    let mut suppressed = vec![false; boxes.len()];
    for (rank, &i) in order.iter().enumerate() {
        if suppressed[rank] {
            continue;
        }
        kept.push(i);
        for (r2, &j) in order.iter().enumerate().skip(rank + 1) {
            if !suppressed[r2] && iou(&boxes[i], &boxes[j]) >= iou_threshold {
                suppressed[r2] = true;
            }
        }
    }
    kept
}

/// Center-size delta encoding used by the region proposal network.
pub mod coder {
    use super::BBox;

    /// Largest log-scale change applied when decoding.
    pub const MAX_LOG_SCALE: f64 = 4.135; // ln(1000 / 16)

    fn center_size(b: &BBox) -> [f64; 4] {
        let w = b[2] - b[0];
        let h = b[3] - b[1];
        [b[0] + 0.5 * w, b[1] + 0.5 * h, w, h]
    }

    pub fn encode(anchor: &BBox, target: &BBox) -> [f64; 4] {
        let [ax, ay, aw, ah] = center_size(anchor);
        let [tx, ty, tw, th] = center_size(target);
        [(tx - ax) / aw, (ty - ay) / ah, (tw / aw).ln(), (th / ah).ln()]
    }

    pub fn decode(anchor: &BBox, d: [f64; 4]) -> BBox {
        let [ax, ay, aw, ah] = center_size(anchor);
        let cx = ax + d[0] * aw;
        let cy = ay + d[1] * ah;
        let w = aw * d[2].min(MAX_LOG_SCALE).exp();
        let h = ah * d[3].min(MAX_LOG_SCALE).exp();
        [cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h]
    }
}
