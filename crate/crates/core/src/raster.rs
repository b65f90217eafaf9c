//! P6 images and TOML sidecar metadata for classified slices.

use serde::Serialize;

use crate::dynamics::{PixelClass, Raster, SliceSpec};
use crate::Point;

pub const NON_MEMBER_COLOR: [u8; 3] = [0, 0, 0];
pub const UNKNOWN_COLOR: [u8; 3] = [255, 0, 255];

/// Color of a member pixel first reached at pullback level `k`: a light
/// gradient from white towards deep blue. Never black or magenta.
pub fn member_color(k: u32) -> [u8; 3] {
    let t = 1.0 - (-(k as f64) / 8.0).exp();
    let r = 255.0 * (1.0 - 0.9 * t);
    let g = 255.0 * (1.0 - 0.6 * t);
    let b = 255.0 * (1.0 - 0.15 * t);
    [r.round() as u8, g.round() as u8, b.round() as u8]
}

pub fn pixel_color(p: PixelClass) -> [u8; 3] {
    match p {
        PixelClass::Member(k) => member_color(k),
        PixelClass::NonMember => NON_MEMBER_COLOR,
        PixelClass::Unknown => UNKNOWN_COLOR,
    }
}

/// Binary PPM (P6). Row `j` of the raster (parameter `t0 + j dt`) is written
/// from the bottom up so the image has `t` increasing upwards.
pub fn encode_p6(raster: &Raster) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", raster.width, raster.height).into_bytes();
    out.reserve(raster.width * raster.height * 3);
    for j in (0..raster.height).rev() {
        for i in 0..raster.width {
            out.extend_from_slice(&pixel_color(raster.get(i, j)));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct ClassCounts {
    pub member: usize,
    pub non_member: usize,
    pub unknown: usize,
}

pub fn counts(raster: &Raster) -> ClassCounts {
    let mut c = ClassCounts::default();
    for p in &raster.pixels {
        match p {
            PixelClass::Member(_) => c.member += 1,
            PixelClass::NonMember => c.non_member += 1,
            PixelClass::Unknown => c.unknown += 1,
        }
    }
    c
}

#[derive(Debug, Clone, Serialize)]
struct SliceMeta {
    origin: Vec<[f64; 2]>,
    u: Vec<[f64; 2]>,
    v: Vec<[f64; 2]>,
    window: [f64; 4],
    resolution: usize,
    row_order: &'static str,
}

#[derive(Debug, Clone, Serialize)]
struct PaletteMeta {
    non_member: [u8; 3],
    unknown: [u8; 3],
    /// `[k, r, g, b]` for every level present in the image.
    member: Vec<[u32; 4]>,
}

#[derive(Debug, Clone, Serialize)]
struct Metadata<'a> {
    example: &'a str,
    k_max: usize,
    seed: u64,
    slice: SliceMeta,
    counts: ClassCounts,
    palette: PaletteMeta,
}

fn pairs(p: &Point) -> Vec<[f64; 2]> {
    p.iter().map(|z| [z.re, z.im]).collect()
}

/// TOML sidecar describing the slice, the run parameters and the palette.
pub fn metadata_toml(example: &str, slice: &SliceSpec, k_max: usize, seed: u64, raster: &Raster) -> String {
    let mut levels: Vec<u32> = raster
        .pixels
        .iter()
        .filter_map(|p| match p {
            PixelClass::Member(k) => Some(*k),
            _ => None,
        })
        .collect();
    levels.sort_unstable();
    levels.dedup();
    let meta = Metadata {
        example,
        k_max,
        seed,
        slice: SliceMeta {
            origin: pairs(&slice.origin),
            u: pairs(&slice.u),
            v: pairs(&slice.v),
            window: slice.window,
            resolution: slice.resolution,
            row_order: "top image row is t = t1, left column is s = s0",
        },
        counts: counts(raster),
        palette: PaletteMeta {
            non_member: NON_MEMBER_COLOR,
            unknown: UNKNOWN_COLOR,
            member: levels
                .into_iter()
                .map(|k| {
                    let [r, g, b] = member_color(k);
                    [k, r as u32, g as u32, b as u32]
                })
                .collect(),
        },
    };
    toml::to_string(&meta).expect("metadata serializes")
}
