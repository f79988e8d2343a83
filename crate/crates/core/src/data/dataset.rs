//! On-disk dataset layout: `{root}/{split}/{index:04}_{suffix}`.

use super::grid::Grid;
use super::pfm::{read_pfm, write_pfm};
use super::pgm::{read_pgm, write_pgm, Pgm};
use super::synth::{grey_to_rgb, rgb_to_grey, StereoSample};
use crate::error::{Error, Result};
use std::path::{Path, PathBuf};

pub const SAMPLE_SUFFIXES: [&str; 6] = [
    "left.pgm",
    "right.pgm",
    "disp.pfm",
    "inst.pgm",
    "sem.pgm",
    "valid.pgm",
];

/// Paths of the six files of one sample, in [`SAMPLE_SUFFIXES`] order.
pub fn sample_files(split_dir: &Path, index: usize) -> [PathBuf; 6] {
    SAMPLE_SUFFIXES.map(|s| split_dir.join(format!("{index:04}_{s}")))
}

fn grid_to_pgm<T: Copy + Into<u32>>(g: &Grid<T>, min_maxval: u16) -> Result<Pgm> {
    let max = g.data().iter().map(|&v| v.into()).max().unwrap_or(0);
    if max > u32::from(u16::MAX) {
        return Err(Error::InvalidArgument(format!(
            "label {max} does not fit a 16-bit PGM"
        )));
    }
    let maxval = if max > 255 { u16::MAX } else { min_maxval };
    Ok(Pgm {
        width: g.width(),
        height: g.height(),
        maxval,
        data: g.data().iter().map(|&v| v.into() as u16).collect(),
    })
}

fn pgm_to_grid(p: Pgm) -> Result<Grid<u32>> {
    Grid::new(
        p.width,
        p.height,
        p.data.into_iter().map(u32::from).collect(),
    )
}

fn grey_pgm(p: &Pgm, path: &Path) -> Result<Grid<u8>> {
    if p.maxval != 255 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            msg: format!("images must be 8-bit, maxval is {}", p.maxval),
        });
    }
    Grid::new(p.width, p.height, p.data.iter().map(|&v| v as u8).collect())
}

pub fn write_sample(split_dir: &Path, index: usize, s: &StereoSample) -> Result<()> {
    std::fs::create_dir_all(split_dir).map_err(|e| Error::io(split_dir, e))?;
    let [left, right, disp, inst, sem, valid] = sample_files(split_dir, index);
    write_pgm(&left, &grid_to_pgm(&rgb_to_grey(&s.left), 255)?)?;
    write_pgm(&right, &grid_to_pgm(&rgb_to_grey(&s.right), 255)?)?;
    write_pfm(&disp, &s.disparity)?;
    write_pgm(&inst, &grid_to_pgm(&s.instance, 255)?)?;
    write_pgm(&sem, &grid_to_pgm(&s.semantic, 255)?)?;
    write_pgm(&valid, &grid_to_pgm(&s.valid, 1)?)?;
    Ok(())
}

pub fn load_sample(split_dir: &Path, index: usize) -> Result<StereoSample> {
    let [left, right, disp, inst, sem, valid] = sample_files(split_dir, index);
    let left_grey = grey_pgm(&read_pgm(&left)?, &left)?;
    let right_grey = grey_pgm(&read_pgm(&right)?, &right)?;
    let disparity = read_pfm(&disp)?;
    let instance = pgm_to_grid(read_pgm(&inst)?)?;
    let semantic = pgm_to_grid(read_pgm(&sem)?)?;
    let valid = pgm_to_grid(read_pgm(&valid)?)?.map(|v| u8::from(v != 0));
    let (h, w) = (disparity.shape()[0], disparity.shape()[1]);
    for (name, g) in [("left", &left_grey), ("right", &right_grey)] {
        if g.width() != w || g.height() != h {
            return Err(Error::shape(
                "load_sample",
                format!(
                    "{name} image is {}x{}, disparity is {w}x{h}",
                    g.width(),
                    g.height()
                ),
            ));
        }
    }
    for (name, ok) in [
        ("instance", instance.width() == w && instance.height() == h),
        ("semantic", semantic.same_extent(&instance)),
        ("valid", valid.same_extent(&instance)),
    ] {
        if !ok {
            return Err(Error::shape(
                "load_sample",
                format!("{name} mask extent differs from disparity"),
            ));
        }
    }
    Ok(StereoSample {
        left: grey_to_rgb(&left_grey),
        right: grey_to_rgb(&right_grey),
        disparity,
        instance,
        semantic,
        valid,
    })
}

/// Indices present in a split directory, ascending.
pub fn split_indices(split_dir: &Path) -> Result<Vec<usize>> {
    let entries = std::fs::read_dir(split_dir).map_err(|e| Error::io(split_dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(split_dir, e))?;
        let name = entry.file_name();
        if let Some(idx) = name.to_str().and_then(|n| n.strip_suffix("_left.pgm")) {
            if let Ok(i) = idx.parse() {
                out.push(i);
            }
        }
    }
    out.sort_unstable();
    Ok(out)
}

/// Loads every sample of a split directory in index order.
pub fn load_split(split_dir: &Path) -> Result<Vec<StereoSample>> {
    let samples = split_indices(split_dir)?
        .into_iter()
        .map(|i| load_sample(split_dir, i))
        .collect::<Result<Vec<_>>>()?;
    if samples.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no samples in {}",
            split_dir.display()
        )));
    }
    Ok(samples)
}
