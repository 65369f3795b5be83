//! Egocentric sensing and map building: raycast observations with occlusion,
//! a short ring of recent observations, and projection into the
//! agent-centric semantic top-down map.
//!
//! Ego-frame convention (shared with nav and the renderer): forward is the
//! +row direction, +column is the agent's left. The agent sits at the map
//! center.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use tensor_nn::Tensor;

use crate::error::{Result, SscError};
use crate::world::{Pose, World, NUM_CATEGORIES, UNKNOWN};

#[derive(Debug, Clone, Copy)]
pub struct SensorParams {
    /// field of view, radians
    pub fov: f32,
    /// meters
    pub range: f32,
    pub rays: usize,
    /// probability of flipping a visible cell's label to a random category
    pub label_noise: f32,
}

impl Default for SensorParams {
    fn default() -> SensorParams {
        SensorParams {
            fov: std::f32::consts::FRAC_PI_2,
            range: 4.0,
            rays: 240,
            label_noise: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MapParams {
    /// window side, meters
    pub window_m: f32,
    /// cells per side (R)
    pub cells: usize,
}

impl Default for MapParams {
    fn default() -> MapParams {
        MapParams { window_m: 6.0, cells: 128 }
    }
}

impl MapParams {
    pub fn cell_m(&self) -> f32 {
        self.window_m / self.cells as f32
    }
}

/// One sensor sweep: the set of world cells visible from a pose, with the
/// labels the sensor reported for them.
#[derive(Debug, Clone)]
pub struct EgoObservation {
    pub pose: Pose,
    /// (world cell index, label), sorted by cell index
    visible: Vec<(u32, u8)>,
}

impl EgoObservation {
    pub fn visible(&self) -> &[(u32, u8)] {
        &self.visible
    }

    pub fn label_of(&self, cell: u32) -> Option<u8> {
        self.visible
            .binary_search_by_key(&cell, |&(c, _)| c)
            .ok()
            .map(|i| self.visible[i].1)
    }
}

/// Ring of the most recent observations (capacity 5), oldest first.
#[derive(Debug, Clone)]
pub struct ObservationHistory {
    buf: VecDeque<EgoObservation>,
    cap: usize,
}

impl Default for ObservationHistory {
    fn default() -> ObservationHistory {
        ObservationHistory::new(5)
    }
}

impl ObservationHistory {
    pub fn new(cap: usize) -> ObservationHistory {
        ObservationHistory { buf: VecDeque::with_capacity(cap), cap }
    }

    pub fn push(&mut self, obs: EgoObservation) {
        if self.buf.len() == self.cap {
            self.buf.pop_front();
        }
        self.buf.push_back(obs);
    }

    pub fn observations(&self) -> impl Iterator<Item = &EgoObservation> {
        self.buf.iter()
    }

    pub fn latest(&self) -> Option<&EgoObservation> {
        self.buf.back()
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn clear(&mut self) {
        self.buf.clear();
    }
}

/// Grid-DDA sweep over `sensor.rays` rays across the field of view. Cells up
/// to and including the first opaque cell on each ray are visible. With
/// `label_noise > 0` an rng must be supplied; each visible cell's label then
/// flips to a uniform random category with that probability.
pub fn raycast_observe(
    w: &World,
    pose: Pose,
    sensor: &SensorParams,
    mut rng: Option<&mut ChaCha8Rng>,
) -> EgoObservation {
    let res = w.resolution();
    let range_cells = sensor.range / res;
    let (px, py) = (pose.x / res, pose.y / res);
    let mut visible: Vec<(u32, u8)> = Vec::new();
    let mut mark = |cell: usize| {
        let c = cell as u32;
        if let Err(i) = visible.binary_search_by_key(&c, |&(c, _)| c) {
            visible.insert(i, (c, w.label(cell)));
        }
    };

    for ray in 0..sensor.rays {
        let a = pose.heading - sensor.fov / 2.0
            + sensor.fov * (ray as f32 + 0.5) / sensor.rays as f32;
        let (dx, dy) = (a.cos(), a.sin());
        // Amanatides-Woo traversal in cell units
        let (mut cx, mut cy) = (px.floor() as isize, py.floor() as isize);
        let step_x: isize = if dx > 0.0 { 1 } else { -1 };
        let step_y: isize = if dy > 0.0 { 1 } else { -1 };
        let mut t_max_x = if dx.abs() < 1e-9 {
            f32::INFINITY
        } else if dx > 0.0 {
            (cx as f32 + 1.0 - px) / dx
        } else {
            (cx as f32 - px) / dx
        };
        let mut t_max_y = if dy.abs() < 1e-9 {
            f32::INFINITY
        } else if dy > 0.0 {
            (cy as f32 + 1.0 - py) / dy
        } else {
            (cy as f32 - py) / dy
        };
        let t_delta_x = if dx.abs() < 1e-9 { f32::INFINITY } else { (1.0 / dx).abs() };
        let t_delta_y = if dy.abs() < 1e-9 { f32::INFINITY } else { (1.0 / dy).abs() };
        loop {
            if cx < 0 || cy < 0 || cx >= w.width() as isize || cy >= w.height() as isize {
                break;
            }
            let cell = cy as usize * w.width() + cx as usize;
            mark(cell);
            if w.is_opaque(cell) {
                break;
            }
            let t = if t_max_x < t_max_y {
                let t = t_max_x;
                t_max_x += t_delta_x;
                cx += step_x;
                t
            } else {
                let t = t_max_y;
                t_max_y += t_delta_y;
                cy += step_y;
                t
            };
            if t > range_cells {
                break;
            }
        }
    }

    if sensor.label_noise > 0.0 {
        let rng = rng
            .as_deref_mut()
            .expect("label_noise > 0 requires an rng");
        for (_, label) in visible.iter_mut() {
            if rng.gen::<f32>() < sensor.label_noise {
                *label = rng.gen_range(0..NUM_CATEGORIES as u8);
            }
        }
    }

    EgoObservation { pose, visible }
}

/// Agent-centric semantic map: a label per cell (UNKNOWN where unobserved)
/// plus the observed mask. One-hot channel expansion happens in
/// [`EgoSemMap::to_tensor`].
#[derive(Debug, Clone, PartialEq)]
pub struct EgoSemMap {
    cells: usize,
    labels: Vec<u8>,
    observed: Vec<bool>,
}

impl EgoSemMap {
    pub fn unknown(cells: usize) -> EgoSemMap {
        EgoSemMap {
            cells,
            labels: vec![UNKNOWN; cells * cells],
            observed: vec![false; cells * cells],
        }
    }

    /// Reassembles a map from serialized parts, re-checking the
    /// observed/unknown pairing.
    pub fn from_parts(cells: usize, labels: Vec<u8>, observed: Vec<bool>) -> Result<EgoSemMap> {
        if labels.len() != cells * cells || observed.len() != cells * cells {
            return Err(SscError::Data("ego map size mismatch".into()));
        }
        for (i, &l) in labels.iter().enumerate() {
            if l > UNKNOWN || (observed[i] == (l == UNKNOWN)) {
                return Err(SscError::Data(format!("ego map cell {i} inconsistent")));
            }
        }
        Ok(EgoSemMap { cells, labels, observed })
    }

    pub fn cells(&self) -> usize {
        self.cells
    }
    pub fn labels(&self) -> &[u8] {
        &self.labels
    }
    pub fn observed(&self) -> &[bool] {
        &self.observed
    }
    pub fn label(&self, row: usize, col: usize) -> u8 {
        self.labels[row * self.cells + col]
    }
    pub fn is_observed(&self, row: usize, col: usize) -> bool {
        self.observed[row * self.cells + col]
    }
    pub fn observed_count(&self) -> usize {
        self.observed.iter().filter(|&&o| o).count()
    }

    fn set(&mut self, row: usize, col: usize, label: u8) {
        let i = row * self.cells + col;
        self.labels[i] = label;
        self.observed[i] = true;
    }

    /// (N+1) x R x R one-hot tensor; channel N is the unknown channel.
    pub fn to_tensor(&self) -> Tensor {
        let r = self.cells;
        let mut data = vec![0.0f32; (NUM_CATEGORIES + 1) * r * r];
        for (i, &l) in self.labels.iter().enumerate() {
            data[l as usize * r * r + i] = 1.0;
        }
        Tensor::from_vec(&[NUM_CATEGORIES + 1, r, r], data).unwrap()
    }
}

/// Offset of an ego cell's center from the agent, meters:
/// (forward, left).
pub fn ego_cell_offset(map: &MapParams, row: usize, col: usize) -> (f32, f32) {
    let half = map.cells as f32 / 2.0;
    let cm = map.cell_m();
    ((row as f32 + 0.5 - half) * cm, (col as f32 + 0.5 - half) * cm)
}

/// World point at an ego cell's center for an agent at `pose`.
pub fn ego_cell_world_point(map: &MapParams, pose: Pose, row: usize, col: usize) -> (f32, f32) {
    let (fwd, left) = ego_cell_offset(map, row, col);
    let (s, c) = pose.heading.sin_cos();
    (pose.x + fwd * c - left * s, pose.y + fwd * s + left * c)
}

/// Ego cell (row, col) containing a world point for an agent at `pose`, or
/// None outside the window.
pub fn world_point_ego_cell(map: &MapParams, pose: Pose, x: f32, y: f32) -> Option<(usize, usize)> {
    let (dx, dy) = (x - pose.x, y - pose.y);
    let (s, c) = pose.heading.sin_cos();
    let fwd = dx * c + dy * s;
    let left = -dx * s + dy * c;
    let half = map.cells as f32 / 2.0;
    let row = (fwd / map.cell_m() + half).floor();
    let col = (left / map.cell_m() + half).floor();
    if row < 0.0 || col < 0.0 || row >= map.cells as f32 || col >= map.cells as f32 {
        None
    } else {
        Some((row as usize, col as usize))
    }
}

/// Projects a set of observations into the current agent frame. Every ego
/// cell samples the world cell under its center and takes the label from
/// the most recent observation that saw it (most-recent-wins).
pub fn project_ego_map(
    observations: &[&EgoObservation],
    current: Pose,
    w: &World,
    map: &MapParams,
) -> Result<EgoSemMap> {
    if observations.is_empty() {
        return Err(SscError::Argument("empty observation set".into()));
    }
    let mut out = EgoSemMap::unknown(map.cells);
    for row in 0..map.cells {
        for col in 0..map.cells {
            let (x, y) = ego_cell_world_point(map, current, row, col);
            let Some(cell) = w.cell_at(x, y) else { continue };
            for obs in observations.iter().rev() {
                if let Some(label) = obs.label_of(cell as u32) {
                    out.set(row, col, label);
                    break;
                }
            }
        }
    }
    Ok(out)
}

/// Convenience wrapper over a history buffer; the newest observation's pose
/// is the map frame.
pub fn project_history(h: &ObservationHistory, w: &World, map: &MapParams) -> Result<EgoSemMap> {
    let obs: Vec<&EgoObservation> = h.observations().collect();
    let current = h
        .latest()
        .ok_or_else(|| SscError::Argument("empty observation history".into()))?
        .pose;
    project_ego_map(&obs, current, w, map)
}

/// Privileged completion target: true labels for the whole window, with the
/// mask false only outside the world and on interior-of-opaque cells (cells
/// no ray could ever terminate on).
pub fn ground_truth_ego_map(w: &World, pose: Pose, map: &MapParams) -> EgoSemMap {
    let mut out = EgoSemMap::unknown(map.cells);
    for row in 0..map.cells {
        for col in 0..map.cells {
            let (x, y) = ego_cell_world_point(map, pose, row, col);
            let Some(cell) = w.cell_at(x, y) else { continue };
            if w.is_opaque(cell) && interior_of_opaque(w, cell) {
                continue;
            }
            out.set(row, col, w.label(cell));
        }
    }
    out
}

fn interior_of_opaque(w: &World, cell: usize) -> bool {
    let (cx, cy) = ((cell % w.width()) as isize, (cell / w.width()) as isize);
    for dy in -1isize..=1 {
        for dx in -1isize..=1 {
            if dx == 0 && dy == 0 {
                continue;
            }
            let (nx, ny) = (cx + dx, cy + dy);
            if nx < 0 || ny < 0 || nx >= w.width() as isize || ny >= w.height() as isize {
                continue;
            }
            if !w.is_opaque(ny as usize * w.width() + nx as usize) {
                return false;
            }
        }
    }
    true
}
