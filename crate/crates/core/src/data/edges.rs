//! Depth-edge ground truth from instance and semantic label maps.
//!
//! A pixel is a boundary pixel when one of its 8 neighbours carries a
//! different label, so every label change marks both sides.

use super::grid::{DepthEdgeMap, Grid, InstanceMask, SemanticMask};
use crate::error::{Error, Result};

const NEIGHBOURS: [(isize, isize); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (-1, 0),
    (1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

fn differs_from_neighbour(mask: &Grid<u32>, x: usize, y: usize) -> bool {
    let here = mask.get(x, y);
    NEIGHBOURS.iter().any(|&(dx, dy)| {
        let (nx, ny) = (x as isize + dx, y as isize + dy);
        nx >= 0
            && ny >= 0
            && (nx as usize) < mask.width()
            && (ny as usize) < mask.height()
            && mask.get(nx as usize, ny as usize) != here
    })
}

/// Boundaries of foreground instances: labelled (non-zero) pixels with a
/// differently labelled neighbour, background included.
pub fn instance_boundaries(mask: &InstanceMask) -> DepthEdgeMap {
    Grid::from_fn(mask.width(), mask.height(), |x, y| {
        u8::from(mask.get(x, y) != 0 && differs_from_neighbour(mask, x, y))
    })
}

/// Boundaries between any two semantic classes.
pub fn semantic_boundaries(mask: &SemanticMask) -> DepthEdgeMap {
    Grid::from_fn(mask.width(), mask.height(), |x, y| {
        u8::from(differs_from_neighbour(mask, x, y))
    })
}

/// Square dilation with a `(2r + 1) x (2r + 1)` structuring element.
pub fn dilate(map: &DepthEdgeMap, radius: usize) -> DepthEdgeMap {
    if radius == 0 {
        return map.clone();
    }
    let (w, h) = (map.width(), map.height());
    Grid::from_fn(w, h, |x, y| {
        let (x0, x1) = (x.saturating_sub(radius), (x + radius).min(w - 1));
        let (y0, y1) = (y.saturating_sub(radius), (y + radius).min(h - 1));
        let hit = (y0..=y1).any(|yy| (x0..=x1).any(|xx| map.get(xx, yy) != 0));
        u8::from(hit)
    })
}

/// Union of instance and semantic boundaries, dilated by `dilate_radius`.
pub fn depth_edge_gt(
    inst: &InstanceMask,
    sem: &SemanticMask,
    dilate_radius: usize,
) -> Result<DepthEdgeMap> {
    if !inst.same_extent(sem) {
        return Err(Error::shape(
            "depth_edge_gt",
            format!(
                "instance mask is {}x{}, semantic mask is {}x{}",
                inst.width(),
                inst.height(),
                sem.width(),
                sem.height()
            ),
        ));
    }
    let a = instance_boundaries(inst);
    let b = semantic_boundaries(sem);
    let union = Grid::from_fn(inst.width(), inst.height(), |x, y| {
        a.get(x, y) | b.get(x, y)
    });
    Ok(dilate(&union, dilate_radius))
}
