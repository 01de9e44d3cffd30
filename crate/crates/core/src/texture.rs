//! Texture maps: the optimization variable of the attack.

use cac_autodiff::Tensor;

use crate::error::{Error, Result};
use crate::mesh::Mesh;

/// `height x width x 3` texels in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct TextureMap {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<f32>,
    /// Texels that any paintable face can sample.
    pub trainable: Vec<bool>,
}

impl TextureMap {
    pub fn new(width: usize, height: usize, rgb: Vec<f32>, trainable: Vec<bool>) -> Result<Self> {
        if rgb.len() != width * height * 3 || trainable.len() != width * height {
            return Err(Error::InvalidTexture(format!(
                "{width}x{height} texture with {} values and {} mask entries",
                rgb.len(),
                trainable.len()
            )));
        }
        if rgb.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidTexture("values outside [0,1]".into()));
        }
        Ok(Self {
            width,
            height,
            rgb,
            trainable,
        })
    }

    /// Uniform color with the mesh's trainable mask.
    pub fn solid(mesh: &Mesh, color: [f32; 3]) -> Self {
        let [w, h] = mesh.texture_size;
        let rgb = (0..w * h).flat_map(|_| color).collect();
        Self {
            width: w,
            height: h,
            rgb,
            trainable: trainable_mask(mesh),
        }
    }

    /// Replaces the texel values, keeping size and mask.
    pub fn with_rgb(&self, rgb: Vec<f32>) -> Result<Self> {
        Self::new(self.width, self.height, rgb, self.trainable.clone())
    }

    pub fn texel(&self, row: usize, col: usize) -> [f32; 3] {
        let i = (row * self.width + col) * 3;
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.height, self.width, 3], self.rgb.clone()).expect("texture shape")
    }

    /// Copies every non-trainable texel from `reference`.
    pub fn restore_fixed(&mut self, reference: &TextureMap) {
        for (t, &trainable) in self.trainable.iter().enumerate() {
            if !trainable {
                self.rgb[3 * t..3 * t + 3].copy_from_slice(&reference.rgb[3 * t..3 * t + 3]);
            }
        }
    }

    pub fn clip(&mut self) {
        for v in &mut self.rgb {
            *v = v.clamp(0.0, 1.0);
        }
    }

    pub fn trainable_count(&self) -> usize {
        self.trainable.iter().filter(|&&t| t).count()
    }
}

/// Texel-space position of a UV coordinate (texel centers at integers).
pub fn uv_to_texel(uv: [f64; 2], width: usize, height: usize) -> [f64; 2] {
    [uv[0] * width as f64 - 0.5, uv[1] * height as f64 - 0.5]
}

/// Texels within bilinear reach of any paintable face's UV triangle.
///
/// A sample at texel-space `(x, y)` touches texel `(r, c)` only when
/// `|x - c| < 1` and `|y - r| < 1`, so a texel is trainable when its
/// 2x2-texel neighborhood square intersects a paintable UV triangle.
pub fn trainable_mask(mesh: &Mesh) -> Vec<bool> {
    let [w, h] = mesh.texture_size;
    let mut mask = vec![false; w * h];
    for f in (0..mesh.faces.len()).filter(|&f| mesh.paintable[f]) {
        let tri = mesh.face_uvs[f].map(|uv| uv_to_texel(uv, w, h));
        let lo_x = tri.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
        let hi_x = tri.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
        let lo_y = tri.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
        let hi_y = tri.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
        let c0 = (lo_x - 1.0).floor().max(0.0) as usize;
        let c1 = ((hi_x + 1.0).ceil() as usize).min(w - 1);
        let r0 = (lo_y - 1.0).floor().max(0.0) as usize;
        let r1 = ((hi_y + 1.0).ceil() as usize).min(h - 1);
        for r in r0..=r1 {
            for c in c0..=c1 {
                let reach = 1.0 + 1e-3;
                let square = [c as f64 - reach, r as f64 - reach, c as f64 + reach, r as f64 + reach];
                if triangle_overlaps_rect(&tri, square) {
                    mask[r * w + c] = true;
                }
            }
        }
    }
    mask
}

/// Separating-axis test between a triangle and an axis-aligned rectangle
/// `[x0, y0, x1, y1]`.
fn triangle_overlaps_rect(tri: &[[f64; 2]; 3], rect: [f64; 4]) -> bool {
    let [x0, y0, x1, y1] = rect;
    if tri.iter().all(|p| p[0] < x0) || tri.iter().all(|p| p[0] > x1) || tri.iter().all(|p| p[1] < y0) || tri.iter().all(|p| p[1] > y1) {
        return false;
    }
    let corners = [[x0, y0], [x1, y0], [x1, y1], [x0, y1]];
    for i in 0..3 {
        let a = tri[i];
        let b = tri[(i + 1) % 3];
        let n = [b[1] - a[1], a[0] - b[0]];
        if n == [0.0, 0.0] {
            continue;
        }
        let proj = |p: [f64; 2]| n[0] * p[0] + n[1] * p[1];
        let (tmin, tmax) = tri.iter().map(|&p| proj(p)).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        let (rmin, rmax) = corners.iter().map(|&p| proj(p)).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        if rmax < tmin || rmin > tmax {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh;

    #[test]
    fn vehicle_mask_covers_paintable_cells_only() {
        let m = mesh::vehicle();
        let mask = trainable_mask(&m);
        let on = mask.iter().filter(|&&b| b).count();
        assert!(on > 0 && on < mask.len(), "{on}");
    }

    #[test]
    fn rejects_out_of_range_values() {
        assert!(TextureMap::new(1, 1, vec![0.0, 1.5, 0.2], vec![true]).is_err());
        assert!(TextureMap::new(1, 1, vec![0.0, 0.5], vec![true]).is_err());
    }

    #[test]
    fn overlap_test() {
        let tri = [[0.0, 0.0], [4.0, 0.0], [0.0, 4.0]];
        assert!(triangle_overlaps_rect(&tri, [1.0, 1.0, 2.0, 2.0]));
        assert!(!triangle_overlaps_rect(&tri, [3.0, 3.0, 5.0, 5.0]));
        assert!(triangle_overlaps_rect(&tri, [1.9, 1.9, 3.0, 3.0]));
    }
}
