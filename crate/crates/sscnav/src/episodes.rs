//! Episode lifecycle: legal start sampling, the step loop, the rotating
//! stop checker, success adjudication (intentionality, proximity,
//! visibility) and success-rate / SPL metrics.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SscError};
use crate::nav::{execute_action, sparse8_execute, ActionMode, Policy};
use crate::perception::{project_history, raycast_observe, MapParams, ObservationHistory, SensorParams};
use crate::world::{category_name, Pose, World, TARGET_CATEGORIES};

/// Success distance, meters.
pub const D_SUCC: f32 = 1.0;

/// Step budget per episode.
pub const MAX_EPISODE_STEPS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeSpec {
    pub start: Pose,
    pub goal: u8,
    /// geodesic meters to the nearest goal instance at start
    pub shortest_path: f32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    StopChecker,
    StepLimit,
}

#[derive(Debug, Clone, Copy)]
pub struct EpisodeResult {
    pub success: bool,
    /// sum of realized step lengths, meters
    pub path_length: f32,
    pub steps: usize,
    pub stop_reason: StopReason,
}

/// Per-world start sampler. Geodesic clearance fields (one multi-source
/// Dijkstra per target-category object) are computed once and shared by
/// every legality query and reward lookup.
pub struct EpisodeSampler<'w> {
    w: &'w World,
    /// (object index, distance field from its approach cells, cell units)
    fields: Vec<(usize, Vec<f64>)>,
    nav_cells: Vec<usize>,
}

impl<'w> EpisodeSampler<'w> {
    pub fn new(w: &'w World) -> EpisodeSampler<'w> {
        let fields = w
            .objects()
            .iter()
            .enumerate()
            .filter(|(_, o)| TARGET_CATEGORIES.contains(&o.category))
            .map(|(i, o)| (i, w.distance_field(&w.approach_cells(o))))
            .collect();
        let nav_cells = (0..w.width() * w.height()).filter(|&i| w.is_navigable(i)).collect();
        EpisodeSampler { w, fields, nav_cells }
    }

    pub fn world(&self) -> &'w World {
        self.w
    }

    /// Start legality: navigable, inside a room, and farther than
    /// r + D_succ from every target object in both the Euclidean and the
    /// geodesic sense.
    pub fn start_is_legal(&self, cell: usize) -> bool {
        if !self.w.is_navigable(cell) || self.w.room_of(cell).is_none() {
            return false;
        }
        let p = self.w.cell_center(cell);
        for &(obj_idx, ref field) in &self.fields {
            let obj = &self.w.objects()[obj_idx];
            let clearance = obj.radius + D_SUCC;
            let euclid =
                ((p.0 - obj.centroid.0).powi(2) + (p.1 - obj.centroid.1).powi(2)).sqrt();
            if euclid <= clearance {
                return false;
            }
            let geo = field[cell] as f32 * self.w.resolution();
            if geo <= clearance {
                return false;
            }
        }
        true
    }

    /// Geodesic meters from a point to the nearest instance of `goal`, via
    /// the precomputed fields.
    pub fn goal_distance(&self, goal: u8, x: f32, y: f32) -> Option<f32> {
        let cell = self.w.cell_at(x, y)?;
        let d = self
            .fields
            .iter()
            .filter(|&&(i, _)| self.w.objects()[i].category == goal)
            .map(|(_, f)| f[cell])
            .fold(f64::INFINITY, f64::min);
        if d.is_finite() {
            Some(d as f32 * self.w.resolution())
        } else {
            None
        }
    }

    /// Goal categories with at least one instance in this world.
    pub fn available_goals(&self) -> Vec<u8> {
        TARGET_CATEGORIES
            .iter()
            .copied()
            .filter(|&g| self.w.objects().iter().any(|o| o.category == g))
            .collect()
    }

    /// Uniform goal, uniform heading, and a legal start found by rounds of
    /// 100 rejection trials.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Result<EpisodeSpec> {
        let goals = self.available_goals();
        if goals.is_empty() {
            return Err(SscError::NotFound("world has no target-category instance".into()));
        }
        let goal = goals[rng.gen_range(0..goals.len())];
        for _round in 0..100 {
            for _trial in 0..100 {
                let cell = self.nav_cells[rng.gen_range(0..self.nav_cells.len())];
                if !self.start_is_legal(cell) {
                    continue;
                }
                let (x, y) = self.w.cell_center(cell);
                let Some(l) = self.goal_distance(goal, x, y) else { continue };
                let heading = rng.gen_range(0.0..std::f32::consts::TAU);
                return Ok(EpisodeSpec { start: Pose { x, y, heading }, goal, shortest_path: l });
            }
        }
        Err(SscError::Generation(format!(
            "no legal start for goal {} in world {}",
            category_name(goal),
            self.w.seed()
        )))
    }
}

/// Number of cells a single observation can put inside the 1 m proximity
/// disc; the stop threshold is a fraction of it.
fn proximity_sector_cells(w: &World, sensor: &SensorParams) -> f32 {
    let r = sensor.range.min(D_SUCC);
    0.5 * sensor.fov * r * r / (w.resolution() * w.resolution())
}

/// Rotating stop check: observe at heading + {0, 90, 180, 270} degrees and
/// report arrival if any single observation sees at least
/// `tau * proximity_sector_cells` goal-labeled cells within 1 m.
pub fn stop_check(w: &World, pose: Pose, goal: u8, sensor: &SensorParams, tau: f32) -> bool {
    let threshold = ((tau * proximity_sector_cells(w, sensor)).ceil() as usize).max(1);
    for rot in 0..4 {
        let heading = pose.heading + rot as f32 * std::f32::consts::FRAC_PI_2;
        let obs = raycast_observe(w, Pose { heading, ..pose }, sensor, None);
        let count = obs
            .visible()
            .iter()
            .filter(|&&(cell, label)| {
                if label != goal {
                    return false;
                }
                let (x, y) = w.cell_center(cell as usize);
                (x - pose.x).powi(2) + (y - pose.y).powi(2) <= D_SUCC * D_SUCC
            })
            .count();
        if count >= threshold {
            return true;
        }
    }
    false
}

/// Success = intentional stop + some goal instance within 1 m (Euclidean,
/// to the footprint) + that instance visible in a full-circle sweep.
pub fn adjudicate_success(
    w: &World,
    pose: Pose,
    goal: u8,
    stopped: bool,
    sensor: &SensorParams,
) -> bool {
    if !stopped {
        return false;
    }
    let sweep = SensorParams {
        fov: std::f32::consts::TAU,
        rays: sensor.rays * 4,
        ..*sensor
    };
    let obs = raycast_observe(w, pose, &sweep, None);
    for obj in w.objects().iter().filter(|o| o.category == goal) {
        if w.euclidean_to_object((pose.x, pose.y), obj) > D_SUCC {
            continue;
        }
        if obj.footprint.iter().any(|&c| obs.label_of(c).is_some()) {
            return true;
        }
    }
    false
}

#[derive(Debug, Clone)]
pub struct EpisodeConfig {
    pub max_steps: usize,
    /// stop-checker threshold fraction
    pub tau: f32,
}

impl Default for EpisodeConfig {
    fn default() -> EpisodeConfig {
        EpisodeConfig { max_steps: MAX_EPISODE_STEPS, tau: 0.03 }
    }
}

/// Runs one evaluation episode under a policy. Returns the result and the
/// pose trace (start pose first).
pub fn run_episode(
    w: &World,
    spec: &EpisodeSpec,
    policy: &mut dyn Policy,
    action_mode: ActionMode,
    sensor: &SensorParams,
    map: &MapParams,
    cfg: &EpisodeConfig,
) -> Result<(EpisodeResult, Vec<Pose>)> {
    let mut pose = spec.start;
    let mut hist = ObservationHistory::default();
    let mut path_length = 0.0f32;
    let mut trace = vec![pose];
    for step in 1..=cfg.max_steps {
        hist.push(raycast_observe(w, pose, sensor, None));
        let o = project_history(&hist, w, map)?;
        let action = policy.act(&o, spec.goal)?;
        let (new_pose, step_len, _collided) = match action_mode {
            ActionMode::Spatial => execute_action(w, pose, action, map),
            ActionMode::Sparse8 => sparse8_execute(w, pose, action, map),
        };
        pose = new_pose;
        path_length += step_len;
        trace.push(pose);
        if stop_check(w, pose, spec.goal, sensor, cfg.tau) {
            let success = adjudicate_success(w, pose, spec.goal, true, sensor);
            return Ok((
                EpisodeResult {
                    success,
                    path_length,
                    steps: step,
                    stop_reason: StopReason::StopChecker,
                },
                trace,
            ));
        }
    }
    Ok((
        EpisodeResult {
            success: false,
            path_length,
            steps: cfg.max_steps,
            stop_reason: StopReason::StepLimit,
        },
        trace,
    ))
}

#[derive(Debug, Clone)]
pub struct Metrics {
    pub success_rate: f64,
    pub spl: f64,
    /// (goal category, episode count, success rate, SPL)
    pub per_category: Vec<(u8, usize, f64, f64)>,
}

/// SPL = mean of S * l / max(p, l); degenerate l is clamped to one cell
/// length so the ratio stays defined.
pub fn compute_metrics(results: &[(EpisodeResult, EpisodeSpec)], cell_m: f32) -> Metrics {
    let mut per: Vec<(u8, usize, f64, f64)> = Vec::new();
    let mut s_sum = 0.0f64;
    let mut spl_sum = 0.0f64;
    for (res, spec) in results {
        let l = spec.shortest_path.max(cell_m) as f64;
        let p = res.path_length as f64;
        let spl = if res.success { l / p.max(l) } else { 0.0 };
        let s = res.success as u8 as f64;
        s_sum += s;
        spl_sum += spl;
        match per.iter_mut().find(|e| e.0 == spec.goal) {
            Some(e) => {
                e.1 += 1;
                e.2 += s;
                e.3 += spl;
            }
            None => per.push((spec.goal, 1, s, spl)),
        }
    }
    let k = results.len().max(1) as f64;
    for e in per.iter_mut() {
        e.2 /= e.1 as f64;
        e.3 /= e.1 as f64;
    }
    per.sort_by_key(|e| e.0);
    Metrics { success_rate: s_sum / k, spl: spl_sum / k, per_category: per }
}
