//! Uncompressed PPM rendering of semantic maps, confidence maps, Q-value
//! heatmaps, trajectories and completion error maps. Pixel-exact and
//! deterministic so tests can count colors.

use std::path::Path;

use crate::error::{Result, SscError};
use crate::perception::EgoSemMap;
use crate::world::{Pose, World, NUM_CATEGORIES, UNKNOWN};

/// Plain RGB8 raster with binary PPM (P6) output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Image {
        Image { width, height, data: vec![0; width * height * 3] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn count(&self, rgb: [u8; 3]) -> usize {
        self.data.chunks_exact(3).filter(|p| *p == rgb).count()
    }

    pub fn encode_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode_ppm())?;
        Ok(())
    }
}

/// One color per semantic category plus unknown, index = category id.
pub const PALETTE: [[u8; 3]; NUM_CATEGORIES + 1] = [
    [236, 228, 214], // floor
    [60, 60, 60],    // wall
    [150, 111, 51],  // door
    [86, 125, 70],   // bed
    [255, 196, 0],   // counter
    [0, 150, 199],   // shower
    [72, 202, 228],  // sink
    [157, 2, 8],     // sofa
    [181, 101, 29],  // table
    [199, 125, 255], // toilet
    [244, 140, 6],   // chair
    [108, 117, 125], // cabinet
    [20, 20, 28],    // unknown
];

pub const ERR_OBSERVED: [u8; 3] = [255, 255, 255];
pub const ERR_CORRECT: [u8; 3] = [0, 200, 0];
pub const ERR_WRONG: [u8; 3] = [220, 0, 0];
pub const ERR_NEUTRAL: [u8; 3] = [128, 128, 128];

const MARK_ARGMAX: [u8; 3] = [255, 255, 255];
const MARK_AGENT: [u8; 3] = [0, 0, 0];
const MARK_PATH: [u8; 3] = [255, 0, 255];
const MARK_START: [u8; 3] = [255, 255, 0];
const MARK_END: [u8; 3] = [0, 255, 255];

fn check_grid(len: usize, width: usize) -> Result<usize> {
    if width == 0 || len % width != 0 {
        return Err(SscError::Argument(format!(
            "grid of {len} cells is not a whole number of rows of width {width}"
        )));
    }
    Ok(len / width)
}

/// Category labels to palette colors, one pixel per cell.
pub fn render_semantic(labels: &[u8], width: usize) -> Result<Image> {
    let height = check_grid(labels.len(), width)?;
    let mut img = Image::new(width, height);
    for (i, &l) in labels.iter().enumerate() {
        let l = (l as usize).min(UNKNOWN as usize);
        img.set(i % width, i / width, PALETTE[l]);
    }
    Ok(img)
}

/// Confidence in [0, 1] as a grayscale ramp.
pub fn render_confidence(values: &[f32], width: usize) -> Result<Image> {
    let height = check_grid(values.len(), width)?;
    let mut img = Image::new(width, height);
    for (i, &v) in values.iter().enumerate() {
        let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        img.set(i % width, i / width, [g, g, g]);
    }
    Ok(img)
}

/// Min-max normalized cold-to-hot heatmap with the greedy pixel marked
/// white and the agent's center cell marked black. Any affine rescaling of
/// the Q values renders identically.
pub fn render_qmap(q: &[f32], width: usize) -> Result<Image> {
    let height = check_grid(q.len(), width)?;
    let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
    for &v in q {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        return Err(SscError::Argument("non-finite Q values".into()));
    }
    let mut img = Image::new(width, height);
    for (i, &v) in q.iter().enumerate() {
        let t = if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
        let r = (t * 255.0).round() as u8;
        let b = ((1.0 - t) * 255.0).round() as u8;
        img.set(i % width, i / width, [r, 40, b]);
    }
    let best = crate::nav::argmax(q);
    img.set(best % width, best / width, MARK_ARGMAX);
    img.set(width / 2, height / 2, MARK_AGENT);
    Ok(img)
}

/// World map with the visited cells of a pose trace drawn on top; start
/// and end get their own colors.
pub fn render_trajectory(w: &World, trace: &[Pose]) -> Result<Image> {
    let labels: Vec<u8> = (0..w.width() * w.height()).map(|i| w.label(i)).collect();
    let mut img = render_semantic(&labels, w.width())?;
    let mut mark = |p: &Pose, color| {
        if let Some(c) = w.cell_at(p.x, p.y) {
            img.set(c % w.width(), c / w.width(), color);
        }
    };
    for p in trace {
        mark(p, MARK_PATH);
    }
    if let Some(p) = trace.first() {
        mark(p, MARK_START);
    }
    if let Some(p) = trace.last() {
        mark(p, MARK_END);
    }
    Ok(img)
}

/// Completion error map: white where the input already observed the cell,
/// green/red where the prediction matches/misses the target in the scored
/// region, neutral where the target itself is unobserved.
pub fn render_error_map(
    pred: &[u8],
    target: &EgoSemMap,
    input_observed: &[bool],
) -> Result<Image> {
    let r = target.cells();
    if pred.len() != r * r || input_observed.len() != r * r {
        return Err(SscError::Argument("error-map inputs disagree on size".into()));
    }
    let mut img = Image::new(r, r);
    for i in 0..r * r {
        let color = if input_observed[i] {
            ERR_OBSERVED
        } else if !target.observed()[i] {
            ERR_NEUTRAL
        } else if pred[i] == target.labels()[i] {
            ERR_CORRECT
        } else {
            ERR_WRONG
        };
        img.set(i % r, i / r, color);
    }
    Ok(img)
}
