//! Patch-map rendering: darkens pruned patches and marks merged groups with
//! a border and translucent tint from a fixed palette.

use crate::compress::MergeMap;
use crate::error::{Error, Result};
use crate::ppm::Image;
use crate::vit::ModelConfig;

/// Fixed 32-color palette; group colors are assigned by the rank of the
/// group-minimum patch index among all rendered groups, modulo 32, so the
/// mapping is a pure function of the merge map.
pub const PALETTE: [[u8; 3]; 32] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 212],
    [0, 128, 128],
    [220, 190, 255],
    [170, 110, 40],
    [255, 250, 200],
    [128, 0, 0],
    [170, 255, 195],
    [128, 128, 0],
    [255, 215, 180],
    [0, 0, 128],
    [128, 128, 128],
    [255, 255, 255],
    [0, 0, 0],
    [255, 99, 71],
    [46, 139, 87],
    [72, 61, 139],
    [255, 140, 0],
    [75, 0, 130],
    [154, 205, 50],
    [219, 112, 147],
    [32, 178, 170],
    [188, 143, 143],
    [112, 128, 144],
];

const TINT_ALPHA: f32 = 0.3;
const PRUNE_DARKEN: f32 = 0.25;

fn blend(base: u8, over: u8, alpha: f32) -> u8 {
    (base as f32 * (1.0 - alpha) + over as f32 * alpha).round().clamp(0.0, 255.0) as u8
}

/// Renders the merge map over the input image. Pruned patches are darkened
/// (RGB × 0.25); every surviving group of at least two patches gets a
/// one-pixel border and a 30% tint in its palette color. Groups of one and
/// an empty map leave their pixels untouched.
pub fn render_patch_map(image: &Image, map: &MergeMap, cfg: &ModelConfig) -> Result<Image> {
    cfg.validate()?;
    if image.width != cfg.image_size || image.height != cfg.image_size {
        return Err(Error::Image(format!(
            "image is {}x{} but the model expects {}x{}",
            image.width, image.height, cfg.image_size, cfg.image_size
        )));
    }
    if !map.is_partition(cfg.num_patches()) {
        return Err(Error::Numeric("merge map does not partition the patch set".into()));
    }

    let grid = cfg.grid();
    let p = cfg.patch_size;
    let mut out = image.clone();

    let patch_origin = |patch: usize| -> (usize, usize) { (patch % grid * p, patch / grid * p) };

    for &patch in &map.pruned {
        let (x0, y0) = patch_origin(patch);
        for y in y0..y0 + p {
            for x in x0..x0 + p {
                let [r, g, b] = out.pixel(x, y);
                out.set_pixel(x, y, [
                    (r as f32 * PRUNE_DARKEN) as u8,
                    (g as f32 * PRUNE_DARKEN) as u8,
                    (b as f32 * PRUNE_DARKEN) as u8,
                ]);
            }
        }
    }

    // groups render in ascending order of their minimum patch index, which
    // also assigns palette ranks
    let mut marked: Vec<&Vec<usize>> = map.groups.iter().filter(|g| g.len() >= 2).collect();
    marked.sort_by_key(|g| g.iter().copied().min().unwrap_or(usize::MAX));
    for (rank, group) in marked.iter().enumerate() {
        let color = PALETTE[rank % PALETTE.len()];
        for &patch in group.iter() {
            let (x0, y0) = patch_origin(patch);
            for y in y0..y0 + p {
                for x in x0..x0 + p {
                    let edge = x == x0 || x == x0 + p - 1 || y == y0 || y == y0 + p - 1;
                    let [r, g, b] = out.pixel(x, y);
                    let px = if edge {
                        color
                    } else {
                        [
                            blend(r, color[0], TINT_ALPHA),
                            blend(g, color[1], TINT_ALPHA),
                            blend(b, color[2], TINT_ALPHA),
                        ]
                    };
                    out.set_pixel(x, y, px);
                }
            }
        }
    }
    Ok(out)
}
