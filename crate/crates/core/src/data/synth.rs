//! Synthetic rectified stereo pairs with exact integer disparities.
//!
//! A background plane and a few fronto-parallel rectangles, each carrying
//! its own texture and a constant disparity. Textures are indexed by the
//! left-view column, so a surface with disparity `d` shows texel `x` at
//! column `x` in the left view and at `x - d` in the right view.

use super::grid::{Grid, InstanceMask, SemanticMask};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    pub max_disparity: usize,
    pub n_objects: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            height: 64,
            width: 64,
            max_disparity: 16,
            n_objects: 2,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidArgument(msg));
        if self.height < 2 || self.width < 2 {
            return fail(format!(
                "image must be at least 2x2, got {}x{}",
                self.width, self.height
            ));
        }
        if self.max_disparity == 0 || 2 * self.max_disparity >= self.width {
            return fail(format!(
                "max disparity {} must be positive and below half the width {}",
                self.max_disparity, self.width
            ));
        }
        if self.n_objects > 0 && self.max_disparity < 2 {
            return fail("objects need a max disparity of at least 2".into());
        }
        if self.n_objects > 255 {
            return fail(format!(
                "at most 255 objects fit an 8-bit mask, got {}",
                self.n_objects
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StereoSample {
    /// `[3, H, W]` in `[0, 1]`; the three channels are identical.
    pub left: Tensor,
    pub right: Tensor,
    /// `[H, W]`, non-negative.
    pub disparity: Tensor,
    pub instance: InstanceMask,
    pub semantic: SemanticMask,
    /// 1 where the disparity has a visible correspondence in the right view.
    pub valid: Grid<u8>,
}

impl StereoSample {
    pub fn height(&self) -> usize {
        self.disparity.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.disparity.shape()[1]
    }

    pub fn valid_tensor(&self) -> Tensor {
        self.valid.to_tensor()
    }
}

/// Replicates an 8-bit grey image into a `[3, H, W]` tensor scaled to `[0, 1]`.
pub(crate) fn grey_to_rgb(grey: &Grid<u8>) -> Tensor {
    let plane: Vec<f64> = grey.data().iter().map(|&v| f64::from(v) / 255.0).collect();
    let mut data = Vec::with_capacity(plane.len() * 3);
    for _ in 0..3 {
        data.extend_from_slice(&plane);
    }
    Tensor::from_parts(vec![3, grey.height(), grey.width()], data)
}

/// First channel of a `[3, H, W]` image, quantised back to 8 bits.
pub(crate) fn rgb_to_grey(img: &Tensor) -> Grid<u8> {
    let (h, w) = (img.shape()[1], img.shape()[2]);
    Grid::from_fn(w, h, |x, y| {
        (img.get(&[0, y, x]) * 255.0).round().clamp(0.0, 255.0) as u8
    })
}

/// Independent stream seed for sample `index` of a run seeded with `seed`.
pub fn sample_seed(seed: u64, index: u64) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    splitmix(seed ^ splitmix(index.wrapping_add(0x5DEE_CE66)))
}

struct Surface {
    disparity: usize,
    // (x0, y0, w, h) in left-view coordinates; `None` for the background
    rect: Option<(usize, usize, usize, usize)>,
    texture: Vec<u8>,
}

impl Surface {
    fn covers_left(&self, x: usize, y: usize) -> bool {
        match self.rect {
            None => true,
            Some((x0, y0, w, h)) => x >= x0 && x < x0 + w && y >= y0 && y < y0 + h,
        }
    }
}

/// Value noise: a coarse random lattice, bilinearly interpolated, mixed with
/// per-pixel noise. Rows are `tex_w` texels wide.
fn texture(rng: &mut ChaCha8Rng, tex_w: usize, h: usize) -> Vec<u8> {
    const CELL: usize = 4;
    let lw = tex_w / CELL + 2;
    let lh = h / CELL + 2;
    let lattice: Vec<f64> = (0..lw * lh).map(|_| rng.random::<f64>()).collect();
    let mean = rng.random_range(0.25..0.75);
    let contrast = rng.random_range(0.5..1.0);
    let mut out = Vec::with_capacity(tex_w * h);
    for y in 0..h {
        for x in 0..tex_w {
            let (fx, fy) = (
                (x as f64 + 0.5) / CELL as f64,
                (y as f64 + 0.5) / CELL as f64,
            );
            let (ix, iy) = (fx.floor() as usize, fy.floor() as usize);
            let (tx, ty) = (fx - ix as f64, fy - iy as f64);
            let at = |i: usize, j: usize| lattice[j * lw + i];
            let coarse = (1.0 - ty) * ((1.0 - tx) * at(ix, iy) + tx * at(ix + 1, iy))
                + ty * ((1.0 - tx) * at(ix, iy + 1) + tx * at(ix + 1, iy + 1));
            let fine: f64 = rng.random();
            let v = mean + contrast * (0.6 * (coarse - 0.5) + 0.4 * (fine - 0.5));
            out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    out
}

/// Generates one sample; bit-identical for identical `(seed, cfg)`.
pub fn synth_stereogram(seed: u64, cfg: &SynthConfig) -> Result<StereoSample> {
    cfg.validate()?;
    let SynthConfig {
        height: h,
        width: w,
        max_disparity: dmax,
        n_objects,
    } = *cfg;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tex_w = w + dmax;

    let d_bg = rng.random_range(0..=dmax / 4);
    let mut disparities: Vec<usize> = (0..n_objects)
        .map(|_| rng.random_range(d_bg + 1..dmax))
        .collect();
    // nearer objects are painted later
    disparities.sort_unstable();

    let mut surfaces = vec![Surface {
        disparity: d_bg,
        rect: None,
        texture: texture(&mut rng, tex_w, h),
    }];
    for d in disparities {
        let (min_w, max_w) = ((w / 6).max(2), (w / 2).max(2));
        let (min_h, max_h) = ((h / 6).max(2).min(h), (h / 2).max(2).min(h));
        let rw = rng.random_range(min_w..=max_w);
        let rh = rng.random_range(min_h..=max_h);
        let x0 = rng.random_range(0..=w - rw);
        let y0 = rng.random_range(0..=h - rh);
        surfaces.push(Surface {
            disparity: d,
            rect: Some((x0, y0, rw, rh)),
            texture: texture(&mut rng, tex_w, h),
        });
    }

    let left_label = |x: usize, y: usize| {
        (0..surfaces.len())
            .rev()
            .find(|&s| surfaces[s].covers_left(x, y))
            .unwrap_or(0)
    };
    // the right view at column xr shows texel xr + d of each surface
    let right_label = |xr: usize, y: usize| {
        (0..surfaces.len())
            .rev()
            .find(|&s| {
                let xs = xr + surfaces[s].disparity;
                xs < tex_w && surfaces[s].covers_left(xs, y)
            })
            .unwrap_or(0)
    };

    let labels: Grid<u32> = Grid::from_fn(w, h, |x, y| left_label(x, y) as u32);
    let left_grey = Grid::from_fn(w, h, |x, y| {
        let s = &surfaces[labels.get(x, y) as usize];
        s.texture[y * tex_w + x]
    });
    let right_grey = Grid::from_fn(w, h, |xr, y| {
        let s = &surfaces[right_label(xr, y)];
        s.texture[y * tex_w + xr + s.disparity]
    });
    let valid = Grid::from_fn(w, h, |x, y| {
        let s = labels.get(x, y) as usize;
        let d = surfaces[s].disparity;
        u8::from(x >= d && right_label(x - d, y) == s)
    });
    let disparity = Tensor::from_fn(&[h, w], |i| {
        surfaces[labels.get(i[1], i[0]) as usize].disparity as f64
    });
    let semantic = labels.map(|l| u32::from(l != 0));

    Ok(StereoSample {
        left: grey_to_rgb(&left_grey),
        right: grey_to_rgb(&right_grey),
        disparity,
        instance: labels,
        semantic,
        valid,
    })
}
