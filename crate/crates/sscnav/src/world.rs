//! Procedural 2-D indoor worlds: BSP room layout with carved doors, typed
//! rooms with furniture, and navigability / geodesic-distance queries.
//!
//! A world is a grid of square cells. Each cell carries a semantic label, an
//! `opaque` flag (blocks rays), a `navigable` flag (the agent may occupy it)
//! and a room id. Worlds are immutable after generation.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SscError};

pub const FLOOR: u8 = 0;
pub const WALL: u8 = 1;
pub const DOOR: u8 = 2;
pub const BED: u8 = 3;
pub const COUNTER: u8 = 4;
pub const SHOWER: u8 = 5;
pub const SINK: u8 = 6;
pub const SOFA: u8 = 7;
pub const TABLE: u8 = 8;
pub const TOILET: u8 = 9;
pub const CHAIR: u8 = 10;
pub const CABINET: u8 = 11;

/// Number of real semantic categories (N). Maps additionally use label N
/// for "unknown".
pub const NUM_CATEGORIES: usize = 12;
pub const UNKNOWN: u8 = NUM_CATEGORIES as u8;

/// Categories that can serve as navigation goals.
pub const TARGET_CATEGORIES: [u8; 7] = [BED, COUNTER, SHOWER, SINK, SOFA, TABLE, TOILET];

pub fn category_name(label: u8) -> &'static str {
    match label {
        FLOOR => "floor",
        WALL => "wall",
        DOOR => "door",
        BED => "bed",
        COUNTER => "counter",
        SHOWER => "shower",
        SINK => "sink",
        SOFA => "sofa",
        TABLE => "table",
        TOILET => "toilet",
        CHAIR => "chair",
        CABINET => "cabinet",
        UNKNOWN => "unknown",
        _ => "invalid",
    }
}

pub fn category_by_name(name: &str) -> Option<u8> {
    (0..=UNKNOWN).find(|&l| category_name(l) == name)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoomType {
    Bedroom,
    Bathroom,
    Kitchen,
    Living,
    Dining,
}

pub const ROOM_TYPES: [RoomType; 5] = [
    RoomType::Bedroom,
    RoomType::Bathroom,
    RoomType::Kitchen,
    RoomType::Living,
    RoomType::Dining,
];

/// Furniture drawn by each room type: (category, width m, depth m, tall).
/// Tall items occlude rays; low items are visible but block motion only.
fn furniture(rt: RoomType) -> &'static [(u8, f32, f32, bool)] {
    match rt {
        RoomType::Bedroom => &[
            (BED, 1.4, 2.0, false),
            (CABINET, 0.5, 1.2, true),
            (CHAIR, 0.5, 0.5, false),
        ],
        RoomType::Bathroom => &[
            (TOILET, 0.45, 0.7, false),
            (SHOWER, 0.9, 0.9, true),
            (SINK, 0.5, 0.45, false),
        ],
        RoomType::Kitchen => &[
            (COUNTER, 0.6, 1.8, false),
            (SINK, 0.5, 0.45, false),
            (CABINET, 0.5, 1.2, true),
            (TABLE, 0.9, 1.4, false),
        ],
        RoomType::Living => &[
            (SOFA, 0.85, 1.8, false),
            (TABLE, 0.9, 1.4, false),
            (CHAIR, 0.5, 0.5, false),
        ],
        RoomType::Dining => &[
            (TABLE, 0.9, 1.4, false),
            (CHAIR, 0.5, 0.5, false),
            (CABINET, 0.5, 1.2, true),
        ],
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    /// meters
    pub x: f32,
    /// meters
    pub y: f32,
    /// radians, CCW from +x
    pub heading: f32,
}

#[derive(Debug, Clone)]
pub struct ObjectInstance {
    pub category: u8,
    /// cell indices
    pub footprint: Vec<u32>,
    /// meters
    pub centroid: (f32, f32),
    /// max centroid-to-footprint-cell-center distance, meters
    pub radius: f32,
    pub tall: bool,
}

#[derive(Debug, Clone)]
pub struct Room {
    pub room_type: RoomType,
    /// cell indices (floor and furniture cells inside the room)
    pub cells: Vec<u32>,
}

pub const NO_ROOM: u16 = u16::MAX;

#[derive(Debug, Clone)]
pub struct World {
    resolution: f32,
    width: usize,
    height: usize,
    labels: Vec<u8>,
    opaque: Vec<bool>,
    navigable: Vec<bool>,
    room_id: Vec<u16>,
    rooms: Vec<Room>,
    objects: Vec<ObjectInstance>,
    seed: u64,
}

#[derive(Debug, Clone)]
pub struct WorldParams {
    /// meters
    pub width_m: f32,
    pub height_m: f32,
    /// meters per cell
    pub resolution: f32,
    pub min_rooms: usize,
    pub max_rooms: usize,
    /// minimum room side, meters
    pub room_min_m: f32,
}

impl Default for WorldParams {
    fn default() -> WorldParams {
        WorldParams {
            width_m: 12.0,
            height_m: 12.0,
            resolution: 0.0625,
            min_rooms: 5,
            max_rooms: 8,
            room_min_m: 2.0,
        }
    }
}

impl WorldParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.resolution > 0.0 && self.width_m > 0.0 && self.height_m > 0.0) {
            return Err(SscError::Config("world dimensions must be positive".into()));
        }
        if self.min_rooms == 0 || self.min_rooms > self.max_rooms {
            return Err(SscError::Config(format!(
                "room count range [{}, {}] is invalid",
                self.min_rooms, self.max_rooms
            )));
        }
        if self.room_min_m < 4.0 * self.resolution {
            return Err(SscError::Config("room_min_m too small for the resolution".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Rect {
    x0: usize,
    y0: usize,
    w: usize,
    h: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Geodesic {
    Reachable(f32),
    Unreachable,
}

impl Geodesic {
    pub fn meters(self) -> Option<f32> {
        match self {
            Geodesic::Reachable(m) => Some(m),
            Geodesic::Unreachable => None,
        }
    }
}

impl World {
    pub fn resolution(&self) -> f32 {
        self.resolution
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn rooms(&self) -> &[Room] {
        &self.rooms
    }
    pub fn objects(&self) -> &[ObjectInstance] {
        &self.objects
    }
    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Cell index for a point in meters, or None outside the grid.
    pub fn cell_at(&self, x: f32, y: f32) -> Option<usize> {
        if x < 0.0 || y < 0.0 {
            return None;
        }
        let (cx, cy) = ((x / self.resolution) as usize, (y / self.resolution) as usize);
        if cx >= self.width || cy >= self.height {
            None
        } else {
            Some(cy * self.width + cx)
        }
    }

    /// Center of a cell, meters.
    pub fn cell_center(&self, idx: usize) -> (f32, f32) {
        let (cx, cy) = (idx % self.width, idx / self.width);
        (
            (cx as f32 + 0.5) * self.resolution,
            (cy as f32 + 0.5) * self.resolution,
        )
    }

    pub fn label(&self, idx: usize) -> u8 {
        self.labels[idx]
    }
    pub fn is_opaque(&self, idx: usize) -> bool {
        self.opaque[idx]
    }
    pub fn is_navigable(&self, idx: usize) -> bool {
        self.navigable[idx]
    }
    pub fn room_of(&self, idx: usize) -> Option<u16> {
        let r = self.room_id[idx];
        if r == NO_ROOM {
            None
        } else {
            Some(r)
        }
    }

    pub fn navigable_at(&self, x: f32, y: f32) -> bool {
        self.cell_at(x, y).map(|i| self.navigable[i]).unwrap_or(false)
    }

    /// Shortest 8-connected navigable path length in cell units from every
    /// source cell; diagonal steps cost sqrt(2). Unreachable cells hold
    /// f64::INFINITY.
    pub fn distance_field(&self, sources: &[u32]) -> Vec<f64> {
        #[derive(PartialEq)]
        struct Entry(f64, u32);
        impl Eq for Entry {}
        impl Ord for Entry {
            fn cmp(&self, other: &Entry) -> Ordering {
                // min-heap by cost, cell index tiebreak for determinism
                other
                    .0
                    .total_cmp(&self.0)
                    .then_with(|| other.1.cmp(&self.1))
            }
        }
        impl PartialOrd for Entry {
            fn partial_cmp(&self, other: &Entry) -> Option<Ordering> {
                Some(self.cmp(other))
            }
        }

        let mut dist = vec![f64::INFINITY; self.width * self.height];
        let mut heap = BinaryHeap::new();
        for &s in sources {
            let s = s as usize;
            if self.navigable[s] && dist[s] > 0.0 {
                dist[s] = 0.0;
                heap.push(Entry(0.0, s as u32));
            }
        }
        let (w, h) = (self.width as isize, self.height as isize);
        while let Some(Entry(d, cell)) = heap.pop() {
            let cell = cell as usize;
            if d > dist[cell] {
                continue;
            }
            let (cx, cy) = ((cell % self.width) as isize, (cell / self.width) as isize);
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let (nx, ny) = (cx + dx, cy + dy);
                    if nx < 0 || ny < 0 || nx >= w || ny >= h {
                        continue;
                    }
                    let n = (ny * w + nx) as usize;
                    if !self.navigable[n] {
                        continue;
                    }
                    let step = if dx != 0 && dy != 0 { std::f64::consts::SQRT_2 } else { 1.0 };
                    let nd = d + step;
                    if nd < dist[n] {
                        dist[n] = nd;
                        heap.push(Entry(nd, n as u32));
                    }
                }
            }
        }
        dist
    }

    /// Geodesic distance in meters between two points. `a` must be navigable.
    pub fn geodesic_distance(&self, a: (f32, f32), b: (f32, f32)) -> Result<Geodesic> {
        let ca = self
            .cell_at(a.0, a.1)
            .filter(|&i| self.navigable[i])
            .ok_or_else(|| SscError::Argument(format!("start ({}, {}) is not navigable", a.0, a.1)))?;
        let cb = match self.cell_at(b.0, b.1) {
            Some(i) if self.navigable[i] => i,
            _ => return Ok(Geodesic::Unreachable),
        };
        let dist = self.distance_field(&[ca as u32]);
        if dist[cb].is_finite() {
            Ok(Geodesic::Reachable(dist[cb] as f32 * self.resolution))
        } else {
            Ok(Geodesic::Unreachable)
        }
    }

    /// Navigable cells 8-adjacent to an object's footprint.
    pub fn approach_cells(&self, obj: &ObjectInstance) -> Vec<u32> {
        let (w, h) = (self.width as isize, self.height as isize);
        let mut cells = Vec::new();
        for &f in &obj.footprint {
            let (cx, cy) = ((f as usize % self.width) as isize, (f as usize / self.width) as isize);
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let (nx, ny) = (cx + dx, cy + dy);
                    if nx < 0 || ny < 0 || nx >= w || ny >= h {
                        continue;
                    }
                    let n = (ny * w + nx) as u32;
                    if self.navigable[n as usize] && !cells.contains(&n) {
                        cells.push(n);
                    }
                }
            }
        }
        cells.sort_unstable();
        cells
    }

    /// The instance of `category` with the smallest geodesic distance from
    /// `p` to a navigable cell adjacent to its footprint; ties go to the
    /// lowest instance index. Also returns that distance in meters.
    pub fn nearest_instance(&self, p: (f32, f32), category: u8) -> Result<(usize, f32)> {
        if !self.objects.iter().any(|o| o.category == category) {
            return Err(SscError::NotFound(format!(
                "no instance of {} in world",
                category_name(category)
            )));
        }
        let start = self
            .cell_at(p.0, p.1)
            .filter(|&i| self.navigable[i])
            .ok_or_else(|| SscError::Argument(format!("point ({}, {}) is not navigable", p.0, p.1)))?;
        let dist = self.distance_field(&[start as u32]);
        let mut best: Option<(usize, f64)> = None;
        for (i, obj) in self.objects.iter().enumerate() {
            if obj.category != category {
                continue;
            }
            let d = self
                .approach_cells(obj)
                .iter()
                .map(|&c| dist[c as usize])
                .fold(f64::INFINITY, f64::min);
            if d.is_finite() && best.map(|(_, bd)| d < bd).unwrap_or(true) {
                best = Some((i, d));
            }
        }
        best.map(|(i, d)| (i, d as f32 * self.resolution))
            .ok_or_else(|| {
                SscError::NotFound(format!(
                    "no reachable instance of {} from ({}, {})",
                    category_name(category),
                    p.0,
                    p.1
                ))
            })
    }

    /// Euclidean distance in meters from a point to the closest footprint
    /// cell center of an object.
    pub fn euclidean_to_object(&self, p: (f32, f32), obj: &ObjectInstance) -> f32 {
        obj.footprint
            .iter()
            .map(|&c| {
                let (x, y) = self.cell_center(c as usize);
                ((x - p.0).powi(2) + (y - p.1).powi(2)).sqrt()
            })
            .fold(f32::INFINITY, f32::min)
    }

    fn navigable_connected(&self) -> bool {
        navigable_connected(&self.navigable, self.width, self.height)
    }
}

fn navigable_connected(navigable: &[bool], width: usize, height: usize) -> bool {
    let total = navigable.iter().filter(|&&n| n).count();
    if total == 0 {
        return false;
    }
    let start = navigable.iter().position(|&n| n).unwrap();
    let mut seen = vec![false; navigable.len()];
    let mut stack = vec![start];
    seen[start] = true;
    let mut count = 0usize;
    while let Some(c) = stack.pop() {
        count += 1;
        let (cx, cy) = ((c % width) as isize, (c / width) as isize);
        for (dx, dy) in [(1isize, 0isize), (-1, 0), (0, 1), (0, -1)] {
            let (nx, ny) = (cx + dx, cy + dy);
            if nx < 0 || ny < 0 || nx >= width as isize || ny >= height as isize {
                continue;
            }
            let n = (ny as usize) * width + nx as usize;
            if navigable[n] && !seen[n] {
                seen[n] = true;
                stack.push(n);
            }
        }
    }
    count == total
}

/// Deterministic world generation: BSP room split with a door carved at
/// every split wall, shuffled room-type cycle, furniture placed with a
/// free perimeter ring and a global connectivity check per placement.
pub fn generate_world(seed: u64, params: &WorldParams) -> Result<World> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _attempt in 0..20 {
        if let Some(w) = try_generate(seed, params, &mut rng) {
            return Ok(w);
        }
    }
    Err(SscError::Generation(format!(
        "no valid layout for seed {seed} after 20 attempts; params likely infeasible"
    )))
}

fn try_generate(seed: u64, params: &WorldParams, rng: &mut ChaCha8Rng) -> Option<World> {
    let res = params.resolution;
    let width = (params.width_m / res).round() as usize;
    let height = (params.height_m / res).round() as usize;
    let min_side = (params.room_min_m / res).ceil() as usize;
    let door_w = ((0.75 / res).round() as usize).max(1);
    if width < min_side + 2 || height < min_side + 2 {
        return None;
    }

    let n = width * height;
    let mut labels = vec![WALL; n];
    let mut opaque = vec![true; n];
    let mut navigable = vec![false; n];
    let mut room_id = vec![NO_ROOM; n];

    // BSP split of the interior; each split carves one door, so the leaf
    // adjacency tree stays connected by construction.
    let target_rooms = rng.gen_range(params.min_rooms..=params.max_rooms);
    let mut leaves = vec![Rect { x0: 1, y0: 1, w: width - 2, h: height - 2 }];
    let mut doors: Vec<(usize, usize)> = Vec::new();
    while leaves.len() < target_rooms {
        let splittable: Vec<usize> = (0..leaves.len())
            .filter(|&i| leaves[i].w >= 2 * min_side + 1 || leaves[i].h >= 2 * min_side + 1)
            .collect();
        if splittable.is_empty() {
            break;
        }
        let li = *splittable.choose(rng).unwrap();
        let r = leaves[li];
        let vertical = if r.w >= 2 * min_side + 1 && r.h >= 2 * min_side + 1 {
            r.w >= r.h
        } else {
            r.w >= 2 * min_side + 1
        };
        if vertical {
            let c = rng.gen_range(r.x0 + min_side..=r.x0 + r.w - 1 - min_side);
            leaves[li] = Rect { x0: r.x0, y0: r.y0, w: c - r.x0, h: r.h };
            leaves.push(Rect { x0: c + 1, y0: r.y0, w: r.x0 + r.w - c - 1, h: r.h });
            let dy = rng.gen_range(r.y0..=r.y0 + r.h - door_w.min(r.h));
            for k in 0..door_w.min(r.h) {
                doors.push((c, dy + k));
            }
        } else {
            let c = rng.gen_range(r.y0 + min_side..=r.y0 + r.h - 1 - min_side);
            leaves[li] = Rect { x0: r.x0, y0: r.y0, w: r.w, h: c - r.y0 };
            leaves.push(Rect { x0: r.x0, y0: c + 1, w: r.w, h: r.y0 + r.h - c - 1 });
            let dx = rng.gen_range(r.x0..=r.x0 + r.w - door_w.min(r.w));
            for k in 0..door_w.min(r.w) {
                doors.push((dx + k, c));
            }
        }
    }
    if leaves.len() < params.min_rooms {
        return None;
    }

    for (ri, r) in leaves.iter().enumerate() {
        for y in r.y0..r.y0 + r.h {
            for x in r.x0..r.x0 + r.w {
                let i = y * width + x;
                labels[i] = FLOOR;
                opaque[i] = false;
                navigable[i] = true;
                room_id[i] = ri as u16;
            }
        }
    }
    for &(x, y) in &doors {
        let i = y * width + x;
        labels[i] = DOOR;
        opaque[i] = false;
        navigable[i] = true;
    }

    // room types: shuffled cycle over all five types
    let mut type_order = ROOM_TYPES;
    type_order.shuffle(rng);
    let room_types: Vec<RoomType> =
        (0..leaves.len()).map(|i| type_order[i % type_order.len()]).collect();

    let mut objects: Vec<ObjectInstance> = Vec::new();
    for (ri, rect) in leaves.iter().enumerate() {
        for &(category, wm, dm, tall) in furniture(room_types[ri]) {
            let (mut fw, mut fh) = (
                ((wm / res).round() as usize).max(1),
                ((dm / res).round() as usize).max(1),
            );
            if rng.gen_bool(0.5) {
                std::mem::swap(&mut fw, &mut fh);
            }
            // keep a free perimeter ring inside the room so doors and the
            // walkable border never get blocked
            if rect.w < fw + 2 || rect.h < fh + 2 {
                std::mem::swap(&mut fw, &mut fh);
                if rect.w < fw + 2 || rect.h < fh + 2 {
                    continue;
                }
            }
            let mut placed = false;
            for _try in 0..30 {
                let x = rng.gen_range(rect.x0 + 1..=rect.x0 + rect.w - fw - 1);
                let y = rng.gen_range(rect.y0 + 1..=rect.y0 + rect.h - fh - 1);
                let mut cells = Vec::with_capacity(fw * fh);
                let mut free = true;
                'scan: for yy in y..y + fh {
                    for xx in x..x + fw {
                        let i = yy * width + xx;
                        if labels[i] != FLOOR {
                            free = false;
                            break 'scan;
                        }
                        cells.push(i as u32);
                    }
                }
                if !free {
                    continue;
                }
                for &c in &cells {
                    navigable[c as usize] = false;
                }
                if !navigable_connected(&navigable, width, height) {
                    for &c in &cells {
                        navigable[c as usize] = true;
                    }
                    continue;
                }
                for &c in &cells {
                    labels[c as usize] = category;
                    opaque[c as usize] = tall;
                }
                let mut cx = 0.0f32;
                let mut cy = 0.0f32;
                for &c in &cells {
                    cx += (c as usize % width) as f32 + 0.5;
                    cy += (c as usize / width) as f32 + 0.5;
                }
                cx = cx / cells.len() as f32 * res;
                cy = cy / cells.len() as f32 * res;
                let radius = cells
                    .iter()
                    .map(|&c| {
                        let px = (c as usize % width) as f32 + 0.5;
                        let py = (c as usize / width) as f32 + 0.5;
                        ((px * res - cx).powi(2) + (py * res - cy).powi(2)).sqrt()
                    })
                    .fold(0.0f32, f32::max);
                objects.push(ObjectInstance {
                    category,
                    footprint: cells,
                    centroid: (cx, cy),
                    radius,
                    tall,
                });
                placed = true;
                break;
            }
            let _ = placed;
        }
    }

    let rooms: Vec<Room> = (0..leaves.len())
        .map(|ri| Room {
            room_type: room_types[ri],
            cells: (0..n).filter(|&i| room_id[i] == ri as u16).map(|i| i as u32).collect(),
        })
        .collect();

    let world = World {
        resolution: res,
        width,
        height,
        labels,
        opaque,
        navigable,
        room_id,
        rooms,
        objects,
        seed,
    };
    if !world.navigable_connected() {
        return None;
    }
    Some(world)
}

impl World {
    /// Assembles a world directly from grids. Intended for constructed
    /// scenes in tests and examples; invariants are the caller's problem.
    pub fn from_grid(
        resolution: f32,
        width: usize,
        height: usize,
        labels: Vec<u8>,
        opaque: Vec<bool>,
        navigable: Vec<bool>,
        objects: Vec<ObjectInstance>,
    ) -> World {
        assert_eq!(labels.len(), width * height);
        assert_eq!(opaque.len(), width * height);
        assert_eq!(navigable.len(), width * height);
        World {
            resolution,
            width,
            height,
            labels,
            opaque,
            navigable,
            room_id: vec![NO_ROOM; width * height],
            rooms: Vec::new(),
            objects,
            seed: 0,
        }
    }
}

const MAGIC: &[u8; 7] = b"SSCWLD1";

fn write_bitmask<W: Write>(w: &mut W, bits: &[bool]) -> std::io::Result<()> {
    let mut byte = 0u8;
    for (i, &b) in bits.iter().enumerate() {
        if b {
            byte |= 1 << (i % 8);
        }
        if i % 8 == 7 {
            w.write_all(&[byte])?;
            byte = 0;
        }
    }
    if bits.len() % 8 != 0 {
        w.write_all(&[byte])?;
    }
    Ok(())
}

fn read_bitmask<R: Read>(r: &mut R, len: usize) -> std::io::Result<Vec<bool>> {
    let mut bytes = vec![0u8; len.div_ceil(8)];
    r.read_exact(&mut bytes)?;
    Ok((0..len).map(|i| bytes[i / 8] & (1 << (i % 8)) != 0).collect())
}

impl World {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_u64::<LittleEndian>(self.seed)?;
        w.write_f32::<LittleEndian>(self.resolution)?;
        w.write_u32::<LittleEndian>(self.width as u32)?;
        w.write_u32::<LittleEndian>(self.height as u32)?;
        w.write_u32::<LittleEndian>(NUM_CATEGORIES as u32)?;
        w.write_all(&self.labels)?;
        write_bitmask(&mut w, &self.opaque)?;
        write_bitmask(&mut w, &self.navigable)?;
        for &r in &self.room_id {
            w.write_u16::<LittleEndian>(r)?;
        }
        w.write_u32::<LittleEndian>(self.rooms.len() as u32)?;
        for room in &self.rooms {
            w.write_u8(ROOM_TYPES.iter().position(|&t| t == room.room_type).unwrap() as u8)?;
            w.write_u32::<LittleEndian>(room.cells.len() as u32)?;
            for &c in &room.cells {
                w.write_u32::<LittleEndian>(c)?;
            }
        }
        w.write_u32::<LittleEndian>(self.objects.len() as u32)?;
        for obj in &self.objects {
            w.write_u8(obj.category)?;
            w.write_u8(obj.tall as u8)?;
            w.write_f32::<LittleEndian>(obj.centroid.0)?;
            w.write_f32::<LittleEndian>(obj.centroid.1)?;
            w.write_f32::<LittleEndian>(obj.radius)?;
            w.write_u32::<LittleEndian>(obj.footprint.len() as u32)?;
            for &c in &obj.footprint {
                w.write_u32::<LittleEndian>(c)?;
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<World> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 7];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(SscError::Data(format!("{}: not a world file", path.display())));
        }
        let seed = r.read_u64::<LittleEndian>()?;
        let resolution = r.read_f32::<LittleEndian>()?;
        let width = r.read_u32::<LittleEndian>()? as usize;
        let height = r.read_u32::<LittleEndian>()? as usize;
        let ncat = r.read_u32::<LittleEndian>()? as usize;
        if ncat != NUM_CATEGORIES {
            return Err(SscError::Data(format!(
                "{}: {ncat} categories, expected {NUM_CATEGORIES}",
                path.display()
            )));
        }
        let n = width * height;
        let mut labels = vec![0u8; n];
        r.read_exact(&mut labels)?;
        let opaque = read_bitmask(&mut r, n)?;
        let navigable = read_bitmask(&mut r, n)?;
        let mut room_id = vec![0u16; n];
        for v in room_id.iter_mut() {
            *v = r.read_u16::<LittleEndian>()?;
        }
        let room_count = r.read_u32::<LittleEndian>()? as usize;
        let mut rooms = Vec::with_capacity(room_count);
        for _ in 0..room_count {
            let t = r.read_u8()? as usize;
            if t >= ROOM_TYPES.len() {
                return Err(SscError::Data(format!("{}: bad room type {t}", path.display())));
            }
            let count = r.read_u32::<LittleEndian>()? as usize;
            let mut cells = Vec::with_capacity(count);
            for _ in 0..count {
                cells.push(r.read_u32::<LittleEndian>()?);
            }
            rooms.push(Room { room_type: ROOM_TYPES[t], cells });
        }
        let obj_count = r.read_u32::<LittleEndian>()? as usize;
        let mut objects = Vec::with_capacity(obj_count);
        for _ in 0..obj_count {
            let category = r.read_u8()?;
            let tall = r.read_u8()? != 0;
            let cx = r.read_f32::<LittleEndian>()?;
            let cy = r.read_f32::<LittleEndian>()?;
            let radius = r.read_f32::<LittleEndian>()?;
            let count = r.read_u32::<LittleEndian>()? as usize;
            let mut footprint = Vec::with_capacity(count);
            for _ in 0..count {
                footprint.push(r.read_u32::<LittleEndian>()?);
            }
            objects.push(ObjectInstance { category, footprint, centroid: (cx, cy), radius, tall });
        }
        Ok(World {
            resolution,
            width,
            height,
            labels,
            opaque,
            navigable,
            room_id,
            rooms,
            objects,
            seed,
        })
    }
}
