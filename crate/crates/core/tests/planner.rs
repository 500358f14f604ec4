use ecpsim::contact::{ContactImpulse, FrictionParams};
use ecpsim::math::Vec3;
use ecpsim::planner::{
    annotate_modes, classify, limit_surface_coords, mode_intervals, plan_step, side_samples, Mode, PlanarGoal, PlanarPose,
    PlannerParams, EPS_N, EPS_S,
};
use ecpsim::scene::{load_scene_file, ShapeSpec};
use ecpsim::session::run_unicomp;
use proptest::prelude::*;

fn scenes() -> std::path::PathBuf {
    std::path::PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenes")
}

/// Axis-aligned box parts of a compound body, world frame, as (min, max).
fn world_boxes(boxes: &[ecpsim::scene::BoxEntry], origin: Vec3) -> Vec<(Vec3, Vec3)> {
    boxes
        .iter()
        .map(|b| {
            let c = origin + Vec3::from(b.center);
            let half = Vec3::from(b.size) / 2.0;
            (c - half, c + half)
        })
        .collect()
}

fn box_distance(p: &Vec3, (lo, hi): &(Vec3, Vec3)) -> f64 {
    let d = Vec3::new(
        (lo.x - p.x).max(0.0).max(p.x - hi.x),
        (lo.y - p.y).max(0.0).max(p.y - hi.y),
        (lo.z - p.z).max(0.0).max(p.z - hi.z),
    );
    d.norm()
}

#[test]
fn frame_samples_cover_outer_and_inner_faces() {
    let spec = load_scene_file(scenes().join("frame.toml")).unwrap();
    let body = spec.build_body(0).unwrap();
    let ShapeSpec::Compound { boxes } = &spec.bodies[0].shape else { panic!("frame is compound") };
    let parts = world_boxes(boxes, Vec3::from(spec.bodies[0].position));
    let radius = 0.015;
    let samples = side_samples(&body.shape, &body.pose, 32, 0.02, radius).unwrap();

    // Every vertical face of every part, as (axis, sign, plane coordinate, part).
    let mut faces = Vec::new();
    for (k, (lo, hi)) in parts.iter().enumerate() {
        for axis in 0..2 {
            faces.push((axis, -1.0, lo[axis], k));
            faces.push((axis, 1.0, hi[axis], k));
        }
    }
    let outer = parts.iter().map(|(_, hi)| hi.x).fold(f64::NEG_INFINITY, f64::max);
    let (mut n_outer, mut n_inner) = (0, 0);
    let mut hit = std::collections::BTreeSet::new();
    for (p_body, n_body) in &samples {
        let p = body.pose.transform_point(p_body);
        let n = body.pose.rotation() * n_body;
        assert!((p.z - 0.02).abs() < 1e-12);
        let face = faces
            .iter()
            .position(|&(axis, sign, coord, k)| {
                let mut normal = Vec3::zeros();
                normal[axis] = sign;
                (p[axis] - coord).abs() < 1e-9 && (n - normal).norm() < 1e-9 && box_distance(&p, &parts[k]) < 1e-9
            })
            .unwrap_or_else(|| panic!("sample {p:?} with normal {n:?} is on no part face"));
        hit.insert(face);
        let centre = p + n * radius;
        for part in &parts {
            assert!(box_distance(&centre, part) >= radius - 1e-9, "tool at {centre:?} overlaps a part");
        }
        let coord = faces[face].2;
        if (coord.abs() - outer).abs() < 1e-9 {
            n_outer += 1;
        } else {
            n_inner += 1;
        }
    }
    assert!(n_outer > 0 && n_inner > 0, "outer {n_outer}, inner {n_inner}");
    // All four outer and all four inner walls are pushable.
    let walls: std::collections::BTreeSet<_> = hit
        .iter()
        .map(|&f| {
            let (axis, sign, coord, _) = faces[f];
            (axis, sign as i32, (coord.abs() * 1e6).round() as i64)
        })
        .collect();
    assert_eq!(walls.len(), 8, "{walls:?}");
}

#[test]
fn pure_translation_picks_the_rear_face() {
    let spec = load_scene_file(scenes().join("push.toml")).unwrap();
    let world = spec.build_world().unwrap();
    let object = 0;
    let start = PlanarPose::of(&world.bodies[object].pose);
    let goal = PlanarGoal::new(start.x + 0.2, start.y, start.yaw);
    let params = PlannerParams {
        n_samples: 8,
        ..PlannerParams::default()
    };
    let (ranked, idx) = plan_step(&world, object, &goal, &params, None).unwrap();
    assert_eq!(ranked.len(), 8);
    // Exhaustive check over the returned predictions: the winner is the
    // lowest-cost candidate, first on ties.
    let costs: Vec<f64> = ranked.iter().map(|c| c.cost.unwrap()).collect();
    let min = costs.iter().copied().fold(f64::INFINITY, f64::min);
    assert_eq!(idx, costs.iter().position(|&c| c == min).unwrap());
    assert!(min < goal.cost(&start));
    let chosen = &ranked[idx];
    assert!(chosen.direction.x > 0.9, "pushes along {:?}", chosen.direction);
    for c in &ranked {
        let inward = -(world.bodies[object].pose.rotation() * c.normal);
        assert!(c.direction.dot(&inward) > 0.0);
    }
}

#[test]
fn relabelling_is_idempotent_and_s_consistent() {
    let spec = load_scene_file(scenes().join("slide.toml")).unwrap();
    let log = run_unicomp(&spec, 0.5).unwrap();
    let a = annotate_modes(&log.records, EPS_N, EPS_S);
    let b = annotate_modes(&log.records, EPS_N, EPS_S);
    assert_eq!(a, b);
    assert!(!a.is_empty());
    for m in &a {
        assert!((m.s - (m.rho_t.powi(2) + m.rho_r.powi(2))).abs() <= 1e-12);
    }
    let intervals = mode_intervals(&a);
    let covered: u64 = intervals.iter().map(|i| i.last_step - i.first_step + 1).sum();
    assert_eq!(covered as usize, a.len());
}

proptest! {
    #[test]
    fn labels_follow_the_threshold_rule(
        n in prop_oneof![Just(0.0), Just(EPS_N), 0.0..1e-8, 1e-8..1.0],
        ft in -1.0..1.0f64, fo in -1.0..1.0f64, fr in -1.0..1.0f64,
        scale in 0.0..1.2f64,
        mu in 0.05..1.5f64,
        e_r in 0.001..0.1f64,
    ) {
        let friction = FrictionParams { mu, e_t: 1.0, e_o: 1.0, e_r };
        let dir = Vec3::new(ft, fo, fr);
        let dir = if dir.norm() > 1e-9 { dir / dir.norm() } else { Vec3::x() };
        let cap = mu * n * scale;
        let impulse = ContactImpulse {
            n,
            t: cap * dir.x,
            o: cap * dir.y,
            r: cap * dir.z * e_r,
            ..Default::default()
        };
        let k = limit_surface_coords(&impulse, &friction);
        let mode = classify(&k, n, EPS_N, EPS_S);
        prop_assert!((k.s - (k.rho_t * k.rho_t + k.rho_r * k.rho_r)).abs() <= 1e-12);
        if n <= EPS_N {
            prop_assert_eq!(mode, Mode::Break);
        } else {
            prop_assert!((k.s - scale * scale).abs() <= 1e-9);
            prop_assert_eq!(mode == Mode::Slide, k.s >= 1.0 - EPS_S);
            prop_assert_eq!(mode == Mode::Stick, k.s < 1.0 - EPS_S);
        }
    }
}
