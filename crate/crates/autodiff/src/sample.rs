//! Bilinear sampling plans.
//!
//! A [`SamplePlan`] fixes a set of continuous sample locations in a source
//! grid. Locations are constants of the graph; only the sampled values carry
//! gradients. Coordinates are in cell-center units: cell `(row, col)` is
//! centered at `y = row`, `x = col`. Locations outside the grid are clamped to
//! the border.

/// Memory layout of a 3-D image tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layout {
    /// `[channels, height, width]`
    Chw,
    /// `[height, width, channels]`
    Hwc,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplePoint {
    pub y: f32,
    pub x: f32,
    /// Scales the interpolated value; zero yields an all-zero output sample.
    pub weight: f32,
}

/// Four bilinear taps: flat spatial indices and weights (already multiplied
/// by the point weight).
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Taps {
    pub idx: [u32; 4],
    pub w: [f32; 4],
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplePlan {
    pub(crate) height: usize,
    pub(crate) width: usize,
    pub(crate) channels: usize,
    pub(crate) src_layout: Layout,
    pub(crate) out_layout: Layout,
    pub(crate) taps: Vec<Taps>,
}

impl SamplePlan {
    /// Output shape is `[channels, points]` for [`Layout::Chw`] and
    /// `[points, channels]` for [`Layout::Hwc`].
    pub fn new(
        points: &[SamplePoint],
        height: usize,
        width: usize,
        channels: usize,
        src_layout: Layout,
        out_layout: Layout,
    ) -> Self {
        let taps = points
            .iter()
            .map(|p| bilinear_taps(p, height, width))
            .collect();
        Self {
            height,
            width,
            channels,
            src_layout,
            out_layout,
            taps,
        }
    }

    pub fn num_points(&self) -> usize {
        self.taps.len()
    }

    pub fn src_shape(&self) -> Vec<usize> {
        match self.src_layout {
            Layout::Chw => vec![self.channels, self.height, self.width],
            Layout::Hwc => vec![self.height, self.width, self.channels],
        }
    }

    pub fn out_shape(&self) -> Vec<usize> {
        match self.out_layout {
            Layout::Chw => vec![self.channels, self.num_points()],
            Layout::Hwc => vec![self.num_points(), self.channels],
        }
    }

    /// Source spatial cells that receive nonzero weight from any point.
    pub fn touched_cells(&self) -> Vec<bool> {
        let mut touched = vec![false; self.height * self.width];
        for t in &self.taps {
            for k in 0..4 {
                if t.w[k] != 0.0 {
                    touched[t.idx[k] as usize] = true;
                }
            }
        }
        touched
    }
}

fn bilinear_taps(p: &SamplePoint, height: usize, width: usize) -> Taps {
    let y = p.y.clamp(0.0, (height - 1) as f32);
    let x = p.x.clamp(0.0, (width - 1) as f32);
    let y0 = y.floor() as usize;
    let x0 = x.floor() as usize;
    let y1 = (y0 + 1).min(height - 1);
    let x1 = (x0 + 1).min(width - 1);
    let fy = y - y0 as f32;
    let fx = x - x0 as f32;
    let idx = |r: usize, c: usize| (r * width + c) as u32;
    let w = p.weight;
    Taps {
        idx: [idx(y0, x0), idx(y0, x1), idx(y1, x0), idx(y1, x1)],
        w: [
            w * (1.0 - fy) * (1.0 - fx),
            w * (1.0 - fy) * fx,
            w * fy * (1.0 - fx),
            w * fy * fx,
        ],
    }
}
