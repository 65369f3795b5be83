//! World generation invariants and geodesic-distance checks against an
//! independent shortest-path oracle.

use sscnav::world::{
    self, generate_world, Geodesic, ObjectInstance, World, WorldParams, FLOOR, NUM_CATEGORIES,
    SOFA, TABLE, TARGET_CATEGORIES, WALL,
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

/// O(V^2) relaxation shortest path; shares nothing with the production
/// Dijkstra.
fn oracle_distance(w: &World, a: usize, b: usize) -> Option<f64> {
    let n = w.width() * w.height();
    let mut dist = vec![f64::INFINITY; n];
    dist[a] = 0.0;
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
    if dist[b].is_finite() {
        Some(dist[b] * w.resolution() as f64)
    } else {
        None
    }
}

fn assert_invariants(w: &World) {
    let n = w.width() * w.height();
    for i in 0..n {
        assert!(!(w.is_opaque(i) && w.is_navigable(i)), "cell {i} opaque and navigable");
        assert!((w.label(i) as usize) < NUM_CATEGORIES);
    }
    for obj in w.objects() {
        assert!(!obj.footprint.is_empty());
        assert!(obj.radius >= 0.0);
        let room = w.room_of(obj.footprint[0] as usize);
        assert!(room.is_some(), "object cell outside any room");
        for &c in &obj.footprint {
            assert_eq!(w.label(c as usize), obj.category);
            assert_eq!(w.room_of(c as usize), room, "footprint spans rooms");
        }
    }
    // room cell sets disjoint
    let mut seen = vec![false; n];
    for room in w.rooms() {
        for &c in &room.cells {
            assert!(!seen[c as usize], "cell {c} in two rooms");
            seen[c as usize] = true;
        }
    }
    // navigable set is a single edge-connected component: every navigable
    // cell is reachable from the first one
    let first = (0..n).find(|&i| w.is_navigable(i)).expect("no navigable cells");
    let (fx, fy) = w.cell_center(first);
    let field = w.distance_field(&[first as u32]);
    for i in 0..n {
        if w.is_navigable(i) {
            assert!(field[i].is_finite(), "navigable cell {i} unreachable from ({fx}, {fy})");
        }
    }
}

#[test]
fn same_seed_gives_byte_identical_worlds() {
    let dir = tempfile::tempdir().unwrap();
    let (p1, p2) = (dir.path().join("a.world"), dir.path().join("b.world"));
    generate_world(42, &small_params()).unwrap().save(&p1).unwrap();
    generate_world(42, &small_params()).unwrap().save(&p2).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
}

#[test]
fn seeded_worlds_satisfy_all_invariants() {
    for seed in 0..300u64 {
        let w = generate_world(seed, &small_params()).unwrap();
        assert_invariants(&w);
    }
}

#[test]
fn single_room_world_has_no_doors() {
    let params = WorldParams { min_rooms: 1, max_rooms: 1, ..small_params() };
    let w = generate_world(5, &params).unwrap();
    assert_eq!(w.rooms().len(), 1);
    let doors = (0..w.width() * w.height()).filter(|&i| w.label(i) == world::DOOR).count();
    assert_eq!(doors, 0);
}

#[test]
fn save_load_roundtrip_preserves_everything() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.world");
    let w = generate_world(7, &small_params()).unwrap();
    w.save(&path).unwrap();
    let r = World::load(&path).unwrap();
    assert_eq!(w.labels(), r.labels());
    assert_eq!(w.rooms().len(), r.rooms().len());
    assert_eq!(w.objects().len(), r.objects().len());
    assert_eq!(w.seed(), r.seed());
    let path2 = dir.path().join("w2.world");
    r.save(&path2).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
}

#[test]
fn target_categories_are_frequent_under_default_params() {
    let params = WorldParams::default();
    let count = 40;
    let mut hits = [0usize; 7];
    for seed in 0..count as u64 {
        let w = generate_world(seed, &params).unwrap();
        for (i, &cat) in TARGET_CATEGORIES.iter().enumerate() {
            if w.objects().iter().any(|o| o.category == cat) {
                hits[i] += 1;
            }
        }
    }
    for (i, &cat) in TARGET_CATEGORIES.iter().enumerate() {
        assert!(
            hits[i] * 100 >= 60 * count,
            "{} only in {}/{count} worlds",
            world::category_name(cat),
            hits[i]
        );
    }
}

/// 10x10 m single open room, everything navigable except the border wall.
fn open_room() -> World {
    let res = 0.0625f32;
    let n = (10.0 / res) as usize;
    let mut labels = vec![FLOOR; n * n];
    let mut opaque = vec![false; n * n];
    let mut nav = vec![true; n * n];
    for i in 0..n {
        for &j in &[i, (n - 1) * n + i, i * n, i * n + n - 1] {
            labels[j] = WALL;
            opaque[j] = true;
            nav[j] = false;
        }
    }
    World::from_grid(res, n, n, labels, opaque, nav, vec![])
}

#[test]
fn geodesic_to_self_is_zero() {
    let w = open_room();
    assert_eq!(w.geodesic_distance((2.0, 2.0), (2.0, 2.0)).unwrap(), Geodesic::Reachable(0.0));
}

#[test]
fn geodesic_straight_line_one_meter() {
    let w = open_room();
    let d = w.geodesic_distance((2.0, 3.0), (3.0, 3.0)).unwrap().meters().unwrap();
    assert!((d - 1.0).abs() < 1e-6, "d = {d}");
}

#[test]
fn geodesic_from_non_navigable_start_is_an_argument_error() {
    let w = open_room();
    match w.geodesic_distance((0.0, 0.0), (2.0, 2.0)) {
        Err(SscError::Argument(_)) => {}
        other => panic!("expected argument error, got {other:?}"),
    }
}

#[test]
fn geodesic_around_u_shaped_wall_matches_oracle_exactly() {
    // wall with a U shape between the two query points
    let mut w = open_room();
    let res = w.resolution();
    let n = w.width();
    let mut labels = w.labels().to_vec();
    let mut opaque: Vec<bool> = (0..n * n).map(|i| w.is_opaque(i)).collect();
    let mut nav: Vec<bool> = (0..n * n).map(|i| w.is_navigable(i)).collect();
    // three wall segments forming a U open to the top, around (5, 5)
    let block = |labels: &mut Vec<u8>, opaque: &mut Vec<bool>, nav: &mut Vec<bool>, x: usize, y: usize| {
        let i = y * n + x;
        labels[i] = WALL;
        opaque[i] = true;
        nav[i] = false;
    };
    let c = (5.0 / res) as usize;
    for k in 0..32 {
        block(&mut labels, &mut opaque, &mut nav, c - 16, c - 16 + k); // left arm
        block(&mut labels, &mut opaque, &mut nav, c + 16, c - 16 + k); // right arm
        block(&mut labels, &mut opaque, &mut nav, c - 16 + k, c + 16); // bottom
    }
    w = World::from_grid(res, n, n, labels, opaque, nav, vec![]);

    let a = (5.0, 5.0); // inside the U
    let b = (5.0, 8.0); // below the U's bottom wall
    let ca = w.cell_at(a.0, a.1).unwrap();
    let cb = w.cell_at(b.0, b.1).unwrap();
    let got = w.geodesic_distance(a, b).unwrap().meters().unwrap();
    let want = oracle_distance(&w, ca, cb).unwrap();
    assert_eq!(got as f64, (want as f32) as f64, "oracle {want}, got {got}");
    let euclid = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
    assert!(got > euclid, "path should detour around the U");
}

#[test]
fn geodesic_matches_oracle_on_generated_worlds() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
    for seed in 0..5u64 {
        let w = generate_world(seed, &small_params()).unwrap();
        let nav: Vec<usize> =
            (0..w.width() * w.height()).filter(|&i| w.is_navigable(i)).collect();
        for _ in 0..4 {
            let a = nav[rng.gen_range(0..nav.len())];
            let b = nav[rng.gen_range(0..nav.len())];
            let (ax, ay) = w.cell_center(a);
            let (bx, by) = w.cell_center(b);
            let got = w.geodesic_distance((ax, ay), (bx, by)).unwrap().meters().unwrap();
            let want = oracle_distance(&w, a, b).unwrap();
            assert_eq!(got as f64, (want as f32) as f64);
        }
    }
}

#[test]
fn geodesic_is_symmetric_and_bounded_below_by_euclidean() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(100);
    let w = generate_world(3, &small_params()).unwrap();
    let nav: Vec<usize> = (0..w.width() * w.height()).filter(|&i| w.is_navigable(i)).collect();
    for _ in 0..50 {
        let a = w.cell_center(nav[rng.gen_range(0..nav.len())]);
        let b = w.cell_center(nav[rng.gen_range(0..nav.len())]);
        let ab = w.geodesic_distance(a, b).unwrap().meters().unwrap();
        let ba = w.geodesic_distance(b, a).unwrap().meters().unwrap();
        assert!((ab - ba).abs() < 1e-5, "asymmetric: {ab} vs {ba}");
        let euclid = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
        assert!(ab >= euclid - 1e-4, "geodesic {ab} < euclidean {euclid}");
    }
}

fn place_object(w: &mut Vec<u8>, opq: &mut Vec<bool>, nav: &mut Vec<bool>, n: usize, cat: u8, x0: usize, y0: usize, size: usize, res: f32) -> ObjectInstance {
    let mut footprint = Vec::new();
    for y in y0..y0 + size {
        for x in x0..x0 + size {
            let i = y * n + x;
            w[i] = cat;
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

#[test]
fn nearest_instance_prefers_geodesically_closer_one() {
    // a long wall makes the Euclidean-nearer sofa geodesically farther
    let base = open_room();
    let res = base.resolution();
    let n = base.width();
    let mut labels = base.labels().to_vec();
    let mut opaque: Vec<bool> = (0..n * n).map(|i| base.is_opaque(i)).collect();
    let mut nav: Vec<bool> = (0..n * n).map(|i| base.is_navigable(i)).collect();
    // vertical wall at x = 5 m from the top border down to y = 9 m
    let wx = (5.0 / res) as usize;
    for y in 1..(9.0 / res) as usize {
        let i = y * n + wx;
        labels[i] = WALL;
        opaque[i] = true;
        nav[i] = false;
    }
    let near_but_blocked = place_object(&mut labels, &mut opaque, &mut nav, n, SOFA, wx + 8, (5.0 / res) as usize, 8, res);
    let far_but_open = place_object(&mut labels, &mut opaque, &mut nav, n, SOFA, wx - 40, (5.0 / res) as usize, 8, res);
    let w = World::from_grid(res, n, n, labels, opaque, nav, vec![near_but_blocked, far_but_open]);

    // agent just left of the wall: sofa 0 is ~0.5 m away in Euclidean terms
    // but requires a detour around the wall's bottom end
    let p = (5.0 - 10.0 * res, 5.0);
    let e0 = w.euclidean_to_object(p, &w.objects()[0]);
    let e1 = w.euclidean_to_object(p, &w.objects()[1]);
    assert!(e0 < e1, "construction broken: {e0} vs {e1}");
    let (idx, d) = w.nearest_instance(p, SOFA).unwrap();
    assert_eq!(idx, 1, "picked the Euclidean-nearer, geodesically farther sofa");
    assert!(d > 0.0);
}

#[test]
fn nearest_instance_single_and_absent_cases() {
    let base = open_room();
    let res = base.resolution();
    let n = base.width();
    let mut labels = base.labels().to_vec();
    let mut opaque: Vec<bool> = (0..n * n).map(|i| base.is_opaque(i)).collect();
    let mut nav: Vec<bool> = (0..n * n).map(|i| base.is_navigable(i)).collect();
    let table = place_object(&mut labels, &mut opaque, &mut nav, n, TABLE, 100, 100, 10, res);
    let w = World::from_grid(res, n, n, labels, opaque, nav, vec![table]);
    let (idx, _) = w.nearest_instance((2.0, 2.0), TABLE).unwrap();
    assert_eq!(idx, 0);
    match w.nearest_instance((2.0, 2.0), SOFA) {
        Err(SscError::NotFound(_)) => {}
        other => panic!("expected not-found, got {other:?}"),
    }
}
