//! Episode rules: start legality against an independent shortest-path
//! oracle, constructed stop-checker and adjudication scenes, the episode
//! loop, and SPL arithmetic.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sscnav::episodes::{
    adjudicate_success, compute_metrics, run_episode, stop_check, EpisodeConfig, EpisodeResult,
    EpisodeSampler, EpisodeSpec, StopReason, D_SUCC,
};
use sscnav::nav::{ActionMode, RandomPolicy};
use sscnav::perception::{MapParams, SensorParams};
use sscnav::world::{
    generate_world, ObjectInstance, Pose, World, WorldParams, SOFA, TABLE, TARGET_CATEGORIES, WALL,
};
use sscnav::SscError;

fn small_params() -> WorldParams {
    WorldParams {
        width_m: 8.0,
        height_m: 8.0,
        resolution: 0.125,
        min_rooms: 2,
        max_rooms: 5,
        room_min_m: 1.75,
    }
}

/// 10 m square of floor with a wall border, 0.0625 m cells.
fn open_grid() -> (usize, f32, Vec<u8>, Vec<bool>, Vec<bool>) {
    let res = 0.0625f32;
    let n = (10.0 / res) as usize;
    let mut labels = vec![0u8; n * n];
    let mut opaque = vec![false; n * n];
    let mut nav = vec![true; n * n];
    for i in 0..n {
        for &j in &[i, (n - 1) * n + i, i * n, i * n + n - 1] {
            labels[j] = WALL;
            opaque[j] = true;
            nav[j] = false;
        }
    }
    (n, res, labels, opaque, nav)
}

fn place_object(
    labels: &mut [u8],
    opq: &mut [bool],
    nav: &mut [bool],
    n: usize,
    cat: u8,
    x0: usize,
    y0: usize,
    size: usize,
    res: f32,
) -> ObjectInstance {
    let mut footprint = Vec::new();
    for y in y0..y0 + size {
        for x in x0..x0 + size {
            let i = y * n + x;
            labels[i] = cat;
            opq[i] = false;
            nav[i] = false;
            footprint.push(i as u32);
        }
    }
    let cx = (x0 as f32 + size as f32 / 2.0) * res;
    let cy = (y0 as f32 + size as f32 / 2.0) * res;
    let radius = footprint
        .iter()
        .map(|&c| {
            let px = ((c as usize % n) as f32 + 0.5) * res;
            let py = ((c as usize / n) as f32 + 0.5) * res;
            ((px - cx).powi(2) + (py - cy).powi(2)).sqrt()
        })
        .fold(0.0f32, f32::max);
    ObjectInstance { category: cat, footprint, centroid: (cx, cy), radius, tall: false }
}

/// O(V^2) multi-source relaxation; shares nothing with the production
/// Dijkstra.
fn oracle_field(w: &World, sources: &[u32]) -> Vec<f64> {
    let n = w.width() * w.height();
    let mut dist = vec![f64::INFINITY; n];
    for &s in sources {
        dist[s as usize] = 0.0;
    }
    loop {
        let mut changed = false;
        for c in 0..n {
            if !dist[c].is_finite() || !w.is_navigable(c) {
                continue;
            }
            let (cx, cy) = ((c % w.width()) as isize, (c / w.width()) as isize);
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let (nx, ny) = (cx + dx, cy + dy);
                    if nx < 0 || ny < 0 || nx >= w.width() as isize || ny >= w.height() as isize {
                        continue;
                    }
                    let ni = ny as usize * w.width() + nx as usize;
                    if !w.is_navigable(ni) {
                        continue;
                    }
                    let step = if dx != 0 && dy != 0 { std::f64::consts::SQRT_2 } else { 1.0 };
                    if dist[c] + step < dist[ni] {
                        dist[ni] = dist[c] + step;
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
    dist
}

#[test]
fn start_legality_matches_the_oracle_on_every_cell() {
    let w = generate_world(3, &small_params()).unwrap();
    let sampler = EpisodeSampler::new(&w);
    let fields: Vec<(usize, Vec<f64>)> = w
        .objects()
        .iter()
        .enumerate()
        .filter(|(_, o)| TARGET_CATEGORIES.contains(&o.category))
        .map(|(i, o)| (i, oracle_field(&w, &w.approach_cells(o))))
        .collect();
    assert!(!fields.is_empty(), "world 3 has no targets; pick another seed");
    let n = w.width() * w.height();
    for cell in 0..n {
        let mut want = w.is_navigable(cell) && w.room_of(cell).is_some();
        if want {
            let p = w.cell_center(cell);
            for &(obj_idx, ref field) in &fields {
                let obj = &w.objects()[obj_idx];
                let clearance = obj.radius + D_SUCC;
                let euclid =
                    ((p.0 - obj.centroid.0).powi(2) + (p.1 - obj.centroid.1).powi(2)).sqrt();
                let geo = field[cell] as f32 * w.resolution();
                if euclid <= clearance || geo <= clearance {
                    want = false;
                    break;
                }
            }
        }
        assert_eq!(sampler.start_is_legal(cell), want, "cell {cell}");
    }
}

#[test]
fn sampled_episodes_are_legal_and_consistent() {
    let w = generate_world(4, &small_params()).unwrap();
    let sampler = EpisodeSampler::new(&w);
    let goals = sampler.available_goals();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..30 {
        let spec = sampler.sample(&mut rng).unwrap();
        assert!(goals.contains(&spec.goal));
        let cell = w.cell_at(spec.start.x, spec.start.y).unwrap();
        assert!(sampler.start_is_legal(cell));
        assert!((0.0..std::f32::consts::TAU).contains(&spec.start.heading));
        let l = sampler.goal_distance(spec.goal, spec.start.x, spec.start.y).unwrap();
        assert_eq!(spec.shortest_path, l);
        assert!(l > D_SUCC, "legal starts cannot begin inside the success radius");
    }
}

#[test]
fn sampling_without_targets_is_an_error() {
    let (n, res, labels, opaque, nav) = open_grid();
    let w = World::from_grid(res, n, n, labels, opaque, nav, vec![]);
    let sampler = EpisodeSampler::new(&w);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    assert!(matches!(sampler.sample(&mut rng), Err(SscError::NotFound(_))));
}

fn scene_with_sofa(x0_m: f32) -> (World, Pose) {
    let (n, res, mut labels, mut opaque, mut nav) = open_grid();
    let x0 = (x0_m / res) as usize;
    let y0 = (4.75 / res) as usize;
    let obj = place_object(&mut labels, &mut opaque, &mut nav, n, SOFA, x0, y0, 8, res);
    let w = World::from_grid(res, n, n, labels, opaque, nav, vec![obj]);
    (w, Pose { x: 5.0, y: 5.0, heading: 0.0 })
}

#[test]
fn stop_check_fires_next_to_the_goal() {
    let (w, pose) = scene_with_sofa(5.5); // front face 0.5 m ahead
    let sensor = SensorParams::default();
    assert!(stop_check(&w, pose, SOFA, &sensor, 0.03));
    assert!(!stop_check(&w, pose, TABLE, &sensor, 0.03), "wrong goal category");
}

#[test]
fn stop_check_ignores_goals_beyond_one_meter() {
    let (w, pose) = scene_with_sofa(7.0); // front face 2 m ahead
    assert!(!stop_check(&w, pose, SOFA, &SensorParams::default(), 0.03));
}

#[test]
fn stop_check_sees_a_goal_behind_the_agent() {
    let (n, res, mut labels, mut opaque, mut nav) = open_grid();
    // sofa behind the agent relative to its field of view
    let x0 = (4.0 / res) as usize;
    let y0 = (4.75 / res) as usize;
    let obj = place_object(&mut labels, &mut opaque, &mut nav, n, SOFA, x0, y0, 8, res);
    let w = World::from_grid(res, n, n, labels, opaque, nav, vec![obj]);
    let pose = Pose { x: 5.0, y: 5.0, heading: 0.0 };
    assert!(stop_check(&w, pose, SOFA, &SensorParams::default(), 0.03));
}

#[test]
fn stop_check_threshold_rejects_a_single_stray_cell() {
    let (n, res, mut labels, mut opaque, mut nav) = open_grid();
    let obj = place_object(
        &mut labels,
        &mut opaque,
        &mut nav,
        n,
        SOFA,
        (5.5 / res) as usize,
        (5.0 / res) as usize,
        1,
        res,
    );
    let w = World::from_grid(res, n, n, labels, opaque, nav, vec![obj]);
    let pose = Pose { x: 5.0, y: 5.0, heading: 0.0 };
    // one goal cell in view is under any sensible area fraction
    assert!(!stop_check(&w, pose, SOFA, &SensorParams::default(), 0.03));
    // a zero threshold floor still needs one cell, which is present
    assert!(stop_check(&w, pose, SOFA, &SensorParams::default(), 0.0));
}

#[test]
fn adjudication_requires_stop_proximity_and_visibility() {
    let sensor = SensorParams::default();
    // adjacent and visible
    let (w, pose) = scene_with_sofa(5.5);
    assert!(adjudicate_success(&w, pose, SOFA, true, &sensor));
    assert!(!adjudicate_success(&w, pose, SOFA, false, &sensor), "unintentional stop");
    assert!(!adjudicate_success(&w, pose, TABLE, true, &sensor), "wrong category");
    // near but too far for the success radius
    let (w, pose) = scene_with_sofa(6.2); // front face 1.2 m ahead
    assert!(!adjudicate_success(&w, pose, SOFA, true, &sensor));
}

#[test]
fn adjudication_rejects_an_occluded_goal() {
    let (n, res, mut labels, mut opaque, mut nav) = open_grid();
    let obj = place_object(
        &mut labels,
        &mut opaque,
        &mut nav,
        n,
        SOFA,
        (5.5 / res) as usize,
        (4.75 / res) as usize,
        8,
        res,
    );
    // full-height wall between agent and sofa
    let wx = (5.25 / res) as usize;
    for y in 1..n - 1 {
        let i = y * n + wx;
        labels[i] = WALL;
        opaque[i] = true;
        nav[i] = false;
    }
    let w = World::from_grid(res, n, n, labels, opaque, nav, vec![obj]);
    let pose = Pose { x: 5.0, y: 5.0, heading: 0.0 };
    assert!(
        !adjudicate_success(&w, pose, SOFA, true, &SensorParams::default()),
        "goal within 1 m but fully hidden must not count"
    );
}

#[test]
fn random_episodes_terminate_with_consistent_accounting() {
    let w = generate_world(9, &small_params()).unwrap();
    let sampler = EpisodeSampler::new(&w);
    let sensor = SensorParams { rays: 120, ..SensorParams::default() };
    let map = MapParams { window_m: 6.0, cells: 64 };
    let cfg = EpisodeConfig { max_steps: 40, tau: 0.03 };
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for k in 0..5 {
        let spec = sampler.sample(&mut rng).unwrap();
        let mut policy =
            RandomPolicy { actions: map.cells * map.cells, rng: ChaCha8Rng::seed_from_u64(k) };
        let (res, trace) =
            run_episode(&w, &spec, &mut policy, ActionMode::Spatial, &sensor, &map, &cfg).unwrap();
        assert!(res.steps >= 1 && res.steps <= cfg.max_steps);
        assert_eq!(trace.len(), res.steps + 1);
        assert_eq!(trace[0], spec.start);
        assert!(res.path_length <= res.steps as f32 * 0.25 + 1e-4);
        match res.stop_reason {
            StopReason::StepLimit => {
                assert_eq!(res.steps, cfg.max_steps);
                assert!(!res.success, "step-limit exits can never succeed");
            }
            StopReason::StopChecker => assert!(res.steps <= cfg.max_steps),
        }
        for p in &trace {
            assert!(w.navigable_at(p.x, p.y));
        }
    }
}

fn ep(goal: u8, l: f32, p: f32, success: bool) -> (EpisodeResult, EpisodeSpec) {
    (
        EpisodeResult {
            success,
            path_length: p,
            steps: 10,
            stop_reason: if success { StopReason::StopChecker } else { StopReason::StepLimit },
        },
        EpisodeSpec { start: Pose { x: 0.0, y: 0.0, heading: 0.0 }, goal, shortest_path: l },
    )
}

#[test]
fn spl_hand_table() {
    let results = vec![
        ep(SOFA, 2.0, 2.0, true),  // perfect path: 1.0
        ep(SOFA, 2.0, 5.0, false), // failure: 0.0
        ep(TABLE, 1.0, 2.0, true), // twice the shortest path: 0.5
    ];
    let m = compute_metrics(&results, 0.0625);
    assert_eq!(m.success_rate, 2.0 / 3.0);
    assert_eq!(m.spl, 1.5 / 3.0);
    assert_eq!(m.per_category.len(), 2);
    let sofa = m.per_category.iter().find(|e| e.0 == SOFA).unwrap();
    assert_eq!((sofa.1, sofa.2, sofa.3), (2, 0.5, 0.5));
    let table = m.per_category.iter().find(|e| e.0 == TABLE).unwrap();
    assert_eq!((table.1, table.2, table.3), (1, 1.0, 0.5));
}

#[test]
fn degenerate_shortest_path_is_clamped_to_one_cell() {
    let m = compute_metrics(&[ep(SOFA, 0.0, 0.0, true)], 0.0625);
    assert_eq!(m.spl, 1.0);
    // a successful episode that still walked somewhere scores l / p
    let m = compute_metrics(&[ep(SOFA, 0.0, 0.625, true)], 0.0625);
    assert!((m.spl - 0.1).abs() < 1e-6);
}

#[test]
fn spl_never_exceeds_success_rate() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let results: Vec<_> = (0..rng.gen_range(1..30))
            .map(|_| {
                ep(
                    SOFA,
                    rng.gen_range(0.0f32..5.0),
                    rng.gen_range(0.0f32..8.0),
                    rng.gen_bool(0.5),
                )
            })
            .collect();
        let m = compute_metrics(&results, 0.0625);
        assert!(m.spl <= m.success_rate + 1e-12);
    }
}
