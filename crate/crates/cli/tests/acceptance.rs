//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use anyhow::{ensure, Context, Result};
use ecpsim::contact::{
    assemble_single_body_mcp, assemble_two_body_mcp, gap_body_body, solve_contact_robust, support_centroid, ContactBody,
    ContactImpulse, ContactParams, FrictionParams,
};
use ecpsim::cp::{lcp_residual, solve_lcp_lemke, LcpProblem};
use ecpsim::geometry::{ConvexHull, Plane, Shape};
use ecpsim::log::{Event, TrajectoryLog};
use ecpsim::math::{MassMatrix, Pose, SpatialInertia, SpatialVelocity, Vec3, WrenchImpulse, GRAVITY};
use ecpsim::planner::{annotate_modes, classify, limit_surface_coords, mode_intervals, Mode, PlannerEvent, EPS_N, EPS_S};
use ecpsim::protocol::{ClientMessage, ServerMessage};
use ecpsim::scene::{load_scene_file, RobotTask, SceneSpec, ScheduledMessage};
use ecpsim::session::{run_ticks, run_unicomp, Session};
use ecpsim::stepper::{energy_audit, PairKey, StepEvent, StepRecord, StepperParams};
use ecpsim_cli::service::{serve, ServiceConfig, SimHandle};
use futures_util::{SinkExt, StreamExt};
use nalgebra::{DMatrix, DVector, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-3;

fn scene(name: &str) -> Result<SceneSpec> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenes").join(name);
    load_scene_file(&path).with_context(|| format!("loading {}", path.display()))
}

fn run(name: &str) -> Result<(SceneSpec, TrajectoryLog)> {
    let spec = scene(name)?;
    let log = run_unicomp(&spec, spec.duration)?;
    ensure!(log.records.iter().all(|r| !r.degraded), "{name}: degraded solver steps");
    Ok((spec, log))
}

fn ground_contact<'a>(r: &'a StepRecord, body: &str) -> Option<&'a ecpsim::stepper::ContactRecord> {
    let pair = format!("ground/{body}");
    r.contacts.iter().find(|c| c.pair == pair)
}

fn mode_of(c: &ecpsim::stepper::ContactRecord) -> (Mode, f64) {
    let k = limit_surface_coords(&c.impulse, &c.friction);
    (classify(&k, c.impulse.n, EPS_N, EPS_S), k.s)
}

fn displacement(log: &TrajectoryLog, body: usize) -> f64 {
    let first = log.records.first().unwrap().bodies[body].pose.position;
    log.records
        .iter()
        .map(|r| (r.bodies[body].pose.position - first).norm())
        .fold(0.0, f64::max)
}

fn max_containment(log: &TrajectoryLog) -> f64 {
    log.records
        .iter()
        .flat_map(|r| r.contacts.iter().map(|c| c.containment))
        .fold(f64::NEG_INFINITY, f64::max)
}

fn resting_stability() -> Result<String> {
    let (spec, log) = run("rest.toml")?;
    ensure!(log.records.len() == 5000, "{} records", log.records.len());
    let weight = spec.bodies[0].mass * GRAVITY * H;
    let mut max_psi: f64 = 0.0;
    let mut max_dn: f64 = 0.0;
    for r in &log.records {
        let c = ground_contact(r, "block").context("block lost ground contact")?;
        max_psi = max_psi.max(c.psi.abs());
        max_dn = max_dn.max((c.impulse.n - weight).abs());
    }
    let v = log.records.last().unwrap().bodies[0].velocity.norm();
    ensure!(max_psi <= 1e-4, "max |psi| {max_psi:.3e}");
    ensure!(v <= 1e-6, "terminal |nu| {v:.3e}");
    ensure!(max_dn <= 1e-6, "max |lam_n - mgh| {max_dn:.3e}");
    Ok(format!("max|psi| {max_psi:.2e} m, |nu| {v:.2e}, max|lam_n - mgh| {max_dn:.2e} N.s"))
}

fn sticking() -> Result<String> {
    let (spec, log) = run("stick.toml")?;
    let tool = spec.tool.as_ref().context("tool")?;
    ensure!(spec.bodies[0].mass == 0.8 && spec.bodies[0].friction.mu == 0.5, "block config");
    ensure!(tool.mass == 0.0335 && tool.f_max == 1.0 && tool.target == Some([0.0, 0.35, 0.02]), "tool config");
    let d = displacement(&log, 0);
    let mut contact_steps = 0;
    for r in &log.records {
        if let Some(c) = ground_contact(r, "block").filter(|c| c.impulse.n > EPS_N) {
            contact_steps += 1;
            let (mode, s) = mode_of(c);
            ensure!(mode == Mode::Stick, "step {} labelled {mode:?} (s = {s})", r.step);
        }
    }
    let pushed = log.records.iter().filter(|r| r.contact(&PairKey::ToolBody { body: 0 }).is_some()).count();
    ensure!(pushed > 1000, "tool touched the block on only {pushed} steps");
    ensure!(d < 1e-3, "CoM displacement {d:.3e} m");
    Ok(format!("CoM displacement {d:.2e} m, {contact_steps} contact steps all stick, tool pressing on {pushed}"))
}

fn sliding() -> Result<String> {
    let (spec, log) = run("slide.toml")?;
    ensure!(spec.tool.as_ref().map(|t| t.f_max) == Some(10.0), "tool config");
    let d = displacement(&log, 0);
    let mut sliding = 0;
    let mut in_band = 0;
    for r in &log.records {
        if let Some(c) = ground_contact(r, "block") {
            let (mode, s) = mode_of(c);
            if mode == Mode::Slide {
                sliding += 1;
                if (1.0 - 1e-3..=1.0 + 1e-8).contains(&s) {
                    in_band += 1;
                }
            }
        }
    }
    let longest = mode_intervals(&annotate_modes(&log.records, EPS_N, EPS_S))
        .iter()
        .filter(|i| i.pair == "ground/block" && i.mode == Mode::Slide)
        .map(|i| i.last_step - i.first_step + 1)
        .max()
        .unwrap_or(0);
    let frac = in_band as f64 / sliding.max(1) as f64;
    ensure!(longest >= 200, "longest sliding interval {longest} steps");
    ensure!(frac >= 0.95, "s in band on {:.1}% of sliding steps", 100.0 * frac);
    ensure!(d > 0.05, "CoM displacement {d:.4} m");
    Ok(format!(
        "longest slide {longest} steps, s in band on {:.1}% of {sliding}, CoM displacement {d:.3} m",
        100.0 * frac
    ))
}

fn breaking() -> Result<String> {
    let (_, log) = run("lift.toml")?;
    let audit = energy_audit(&log.records, 1e-9);
    ensure!(audit.violations.is_empty(), "energy gained on {} steps, worst {:.3e} J", audit.violations.len(), audit.max_excess);
    let mut broken = 0;
    let mut under_tool = 0;
    let mut worst: f64 = 0.0;
    for r in &log.records {
        let lifted = r.contact(&PairKey::ToolBody { body: 0 }).is_some();
        let friction = match ground_contact(r, "block") {
            Some(c) if c.impulse.n <= EPS_N => Some((c.impulse.t.powi(2) + c.impulse.o.powi(2) + c.impulse.r.powi(2)).sqrt()),
            None => Some(0.0),
            _ => None,
        };
        if let Some(f) = friction {
            worst = worst.max(f);
            broken += 1;
            if lifted {
                under_tool += 1;
            }
        }
    }
    let max_z = log.records.iter().map(|r| r.bodies[0].pose.position.z).fold(0.0, f64::max);
    ensure!(under_tool > 0, "the tool never broke ground contact");
    ensure!(worst <= EPS_N, "friction impulse {worst:.3e} with lam_n <= eps_n");
    Ok(format!(
        "max energy excess {:.2e} J, {broken} break steps ({under_tool} with the tool touching), max |lam_f| on them {worst:.1e}, peak CoM z {max_z:.3} m",
        audit.max_excess
    ))
}

fn coulomb() -> Result<String> {
    let (spec, log) = run("coulomb.toml")?;
    let mu = spec.bodies[0].friction.mu;
    ensure!(spec.bodies[0].velocity == [1.0, 0.0, 0.0] && mu == 0.5, "launch config");
    // Least-squares slope of v_x over the sliding interval, trimmed at both ends.
    let pts: Vec<(f64, f64)> = log
        .records
        .iter()
        .filter(|r| ground_contact(r, "block").map(mode_of).map(|m| m.0) == Some(Mode::Slide))
        .map(|r| (r.time, r.bodies[0].velocity.linear.x))
        .filter(|(_, v)| *v > 0.05 && *v < 0.95)
        .collect();
    ensure!(pts.len() > 50, "only {} sliding samples", pts.len());
    let n = pts.len() as f64;
    let (mt, mv) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
    let slope = pts.iter().map(|p| (p.0 - mt) * (p.1 - mv)).sum::<f64>() / pts.iter().map(|p| (p.0 - mt).powi(2)).sum::<f64>();
    let expected = mu * GRAVITY;
    let rel = (-slope - expected).abs() / expected;
    ensure!(rel <= 0.02, "deceleration {:.4} vs {expected:.4}", -slope);
    Ok(format!("deceleration {:.4} m/s^2 vs mu g = {expected:.4} ({:.3}% off)", -slope, 100.0 * rel))
}

/// Unique solution of an LCP with a P-matrix by trying every active set.
fn enumerate_lcp(m: &DMatrix<f64>, q: &DVector<f64>) -> Option<DVector<f64>> {
    let n = q.len();
    for mask in 0u32..(1 << n) {
        let active: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let mut z = DVector::zeros(n);
        if !active.is_empty() {
            let mss = DMatrix::from_fn(active.len(), active.len(), |i, j| m[(active[i], active[j])]);
            let qs = DVector::from_fn(active.len(), |i, _| -q[active[i]]);
            let zs = mss.lu().solve(&qs)?;
            for (k, &i) in active.iter().enumerate() {
                z[i] = zs[k];
            }
        }
        let w = m * &z + q;
        if z.iter().all(|&x| x >= -1e-12) && w.iter().all(|&x| x >= -1e-12) {
            return Some(z);
        }
    }
    None
}

fn cube_body(rng: &mut ChaCha8Rng, pose: Pose, nu: SpatialVelocity, mass: f64, size: f64) -> ContactBody {
    let _ = rng;
    let inertia = SpatialInertia::solid_box(mass, Vec3::new(size, size, size)).unwrap();
    let mm = MassMatrix::new(&inertia, &pose).unwrap();
    let dv = mm.apply_inverse(&WrenchImpulse::new(Vec3::new(0.0, 0.0, -mass * GRAVITY * H), Vec3::zeros()));
    ContactBody {
        pose,
        nu_free: SpatialVelocity::new(nu.linear + dv.linear, nu.angular + dv.angular),
        mass: mm,
    }
}

fn random_vec(rng: &mut ChaCha8Rng, scale: f64) -> Vec3 {
    Vec3::new(rng.gen_range(-scale..scale), rng.gen_range(-scale..scale), rng.gen_range(-scale..scale))
}

fn solver_oracles() -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst_diff: f64 = 0.0;
    let mut worst_res: f64 = 0.0;
    for k in 0..200 {
        let n = rng.gen_range(1..=8);
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let s = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-0.5..0.5));
        let m = &a * a.transpose() + DMatrix::identity(n, n) * 0.1 + (&s - s.transpose());
        let q = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let oracle = enumerate_lcp(&m, &q).with_context(|| format!("LCP {k}: enumeration found no solution"))?;
        let p = LcpProblem::new(m, q)?;
        let report = solve_lcp_lemke(&p);
        ensure!(report.converged(), "LCP {k}: Lemke {:?}", report.status);
        let res = lcp_residual(&p, &report.z);
        let diff = (&report.z - &oracle).amax() / (1.0 + oracle.amax());
        ensure!(res < 1e-8, "LCP {k}: residual {res:.3e}");
        ensure!(diff < 1e-8, "LCP {k}: differs from enumeration by {diff:.3e}");
        worst_diff = worst_diff.max(diff);
        worst_res = worst_res.max(res);
    }

    let params = ContactParams::default();
    let accept = StepperParams::default().accept_tol;
    let mut worst_mcp: f64 = 0.0;
    for k in 0..100 {
        let size = rng.gen_range(0.05..0.2);
        let mass = rng.gen_range(0.2..2.0);
        let friction = FrictionParams::new(rng.gen_range(0.1..1.0));
        let sliding = k % 2 == 1;
        let (v, w) = if sliding {
            let mut v = random_vec(&mut rng, 1.5);
            v.z = rng.gen_range(-0.05..0.0);
            (v, random_vec(&mut rng, 2.0))
        } else {
            (random_vec(&mut rng, 1e-4), random_vec(&mut rng, 1e-3))
        };
        let shape = Shape::Hull(ConvexHull::cuboid(Vec3::new(size, size, size))?);
        let problem = if k % 5 == 4 {
            // Tool sphere against a resting block's side face.
            let pa = Pose::from_translation(Vec3::new(0.0, 0.0, size / 2.0));
            let a = cube_body(&mut rng, pa, SpatialVelocity::new(v * 0.1, w * 0.1), mass, size);
            let r = 0.015;
            let pb = Pose::from_translation(Vec3::new(rng.gen_range(-0.3..0.3) * size, -size / 2.0 - r + rng.gen_range(-1e-4..1e-4), size / 2.0));
            let inertia = SpatialInertia::solid_sphere(0.0335, r)?;
            let b = ContactBody {
                pose: pb,
                nu_free: SpatialVelocity::new(Vec3::new(0.0, rng.gen_range(0.0..0.5), 0.0), Vec3::zeros()),
                mass: MassMatrix::new(&inertia, &pb)?,
            };
            let sphere = Shape::Sphere { radius: r };
            let gap = gap_body_body(&shape, &pa, &sphere, &pb)?;
            assemble_two_body_mcp(&a, &shape, &b, &sphere, &gap, &friction, H, &params, None)?
        } else {
            let tilt = if k % 3 == 0 { rng.gen_range(-0.2..0.2) } else { 0.0 };
            let rot = UnitQuaternion::from_euler_angles(tilt, 0.0, rng.gen_range(-3.0..3.0));
            let low = ConvexHull::cuboid(Vec3::new(size, size, size))?
                .vertices()
                .iter()
                .map(|p| (rot * p).z)
                .fold(f64::INFINITY, f64::min);
            let pose = Pose::new(Vec3::new(0.0, 0.0, -low + rng.gen_range(-1e-5..1e-5)), rot);
            let body = cube_body(&mut rng, pose, SpatialVelocity::new(v, w), mass, size);
            let anchor = support_centroid(&shape, &pose, &Plane::ground(), 1e-9)?;
            assemble_single_body_mcp(&body, &shape, &Plane::ground(), &friction, H, &params, Some(anchor))?
        };
        let sol = solve_contact_robust(problem.function.setup(), &shape, None, accept).solution;
        ensure!(sol.residual <= 1e-6, "MCP {k}: residual {:.3e} ({:?})", sol.residual, sol.status);
        worst_mcp = worst_mcp.max(sol.residual);
    }
    Ok(format!(
        "200 LCPs: max diff {worst_diff:.1e}, max residual {worst_res:.1e}; 100 contact MCPs: max residual {worst_mcp:.1e}"
    ))
}

fn max_dissipation() -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut samples = Vec::new();
    for name in ["coulomb.toml", "slide.toml"] {
        let (_, log) = run(name)?;
        for r in &log.records {
            if let Some(c) = ground_contact(r, "block") {
                let slip = c.slip[0].hypot(c.slip[1]);
                if mode_of(c).0 == Mode::Slide && slip > 1e-3 {
                    samples.push(c.clone());
                }
            }
        }
    }
    ensure!(samples.len() >= 50, "only {} sliding steps", samples.len());
    let stride = samples.len() / 50;
    let mut worst = f64::INFINITY;
    for c in samples.iter().step_by(stride).take(50) {
        let f = &c.friction;
        let ours = -(c.impulse.t * c.slip[0] + c.impulse.o * c.slip[1] + c.impulse.r * c.slip[2]);
        let radius = f.mu * c.impulse.n;
        for _ in 0..1000 {
            let u = loop {
                let u = random_vec(&mut rng, 1.0);
                if u.norm() <= 1.0 && u.norm() > 1e-6 {
                    break u.normalize();
                }
            };
            let rho = radius * rng.gen::<f64>().cbrt();
            let other = ContactImpulse {
                n: c.impulse.n,
                t: f.e_t * rho * u.x,
                o: f.e_o * rho * u.y,
                r: f.e_r * rho * u.z,
                ..Default::default()
            };
            ensure!(other.ellipsoid_slack(f) >= -1e-15, "sample left the ellipsoid");
            let theirs = -(other.t * c.slip[0] + other.o * c.slip[1] + other.r * c.slip[2]);
            ensure!(ours >= theirs - 1e-8, "{}: sample dissipates {theirs:.3e} > {ours:.3e}", c.pair);
            worst = worst.min(ours - theirs);
        }
    }
    Ok(format!("50 sliding solutions x 1000 samples, min margin {worst:.2e}"))
}

fn momentum_closure() -> Result<String> {
    let (spec, log) = run("chain.toml")?;
    let mut worst: f64 = 0.0;
    for r in &log.records {
        for (i, b) in r.bodies.iter().enumerate() {
            let m = spec.bodies[i].mass;
            let dp = (b.velocity.linear - r.start_velocities[i].linear) * m;
            let mut impulse = Vec3::new(0.0, 0.0, -m * spec.gravity * spec.h);
            for c in &r.contacts {
                match c.key {
                    PairKey::Ground { body } | PairKey::ToolBody { body } if body == i => impulse += c.linear,
                    PairKey::BodyBody { a, b } => {
                        if a == i {
                            impulse += c.linear;
                        }
                        if b == i {
                            impulse -= c.linear;
                        }
                    }
                    _ => {}
                }
            }
            worst = worst.max((dp - impulse).amax());
        }
    }
    let first = |pair: &str| {
        log.events.iter().position(|e| matches!(&e.event, Event::Contact(StepEvent::ContactActivated { pair: p }) if p == pair))
    };
    let tool = first("tool/b1").context("tool never touched b1")?;
    let chain = first("b2/b1").context("b1 never touched b2")?;
    let (tool_step, chain_step) = (log.events[tool].step, log.events[chain].step);
    ensure!(worst <= 1e-9, "momentum residual {worst:.3e} N.s");
    ensure!(chain_step > tool_step, "b2/b1 activated at step {chain_step}, tool/b1 at {tool_step}");
    let moved = displacement(&log, 1);
    ensure!(moved > 0.01, "b2 moved only {moved:.4} m");
    Ok(format!(
        "max momentum residual {worst:.1e} N.s, tool/b1 at step {tool_step}, b2/b1 at step {chain_step}, b2 moved {moved:.3} m"
    ))
}

fn containment_and_migration() -> Result<String> {
    let mut worst: f64 = f64::NEG_INFINITY;
    for name in ["rest.toml", "stick.toml", "slide.toml", "lift.toml"] {
        let (_, log) = run(name)?;
        worst = worst.max(max_containment(&log));
    }
    ensure!(worst <= 1e-9, "containment violation {worst:.3e}");

    let (spec, log) = run("table.toml")?;
    worst = worst.max(max_containment(&log));
    ensure!(worst <= 1e-9, "table containment violation {worst:.3e}");
    // Leg footprints in the body frame, centred on x = ±leg offset.
    let mut legs: Vec<(f64, f64)> = match &spec.bodies[0].shape {
        ecpsim::scene::ShapeSpec::Compound { boxes } => boxes
            .iter()
            .filter(|b| b.center[2] - b.size[2] / 2.0 <= 1e-12)
            .map(|b| (b.center[0] - b.size[0] / 2.0, b.center[0] + b.size[0] / 2.0))
            .collect(),
        _ => anyhow::bail!("table is not a compound body"),
    };
    legs.sort_by(|a, b| a.0.total_cmp(&b.0));
    ensure!(legs.len() >= 2 && legs.windows(2).all(|w| w[0].1 < w[1].0), "leg footprints {legs:?} are not disjoint");
    let com_offset = {
        let body = spec.build_body(0)?;
        let design = Vec3::from(spec.bodies[0].position);
        body.pose.position - design
    };
    let mut visits = vec![0usize; legs.len()];
    let mut sequence: Vec<usize> = Vec::new();
    for r in &log.records {
        if let Some(c) = ground_contact(r, "table").filter(|c| c.impulse.n > EPS_N) {
            let local = r.bodies[0].pose.inverse_transform_point(&c.ecp) + r.bodies[0].pose.rotation().transpose() * com_offset;
            if let Some(k) = legs.iter().position(|(lo, hi)| local.x >= lo - 1e-9 && local.x <= hi + 1e-9) {
                visits[k] += 1;
                if sequence.last() != Some(&k) {
                    sequence.push(k);
                }
            }
        }
    }
    ensure!(visits.iter().all(|&v| v > 0), "ECP visited leg footprints {visits:?}");
    let mut max_ratio: f64 = 0.0;
    for w in log.records.windows(2) {
        let jump = (w[1].bodies[0].pose.position - w[0].bodies[0].pose.position).norm();
        let bound = 2.0 * spec.h * w[1].bodies[0].velocity.linear.norm();
        ensure!(jump <= bound, "CoM jump {jump:.3e} > {bound:.3e} at step {}", w[1].step);
        if bound > 0.0 {
            max_ratio = max_ratio.max(jump / bound);
        }
    }
    Ok(format!(
        "max containment {worst:.1e}; table ECP steps per leg {visits:?}, leg sequence {sequence:?}, max CoM jump / (2h|v|) {max_ratio:.3}"
    ))
}

fn avoidance_safety() -> Result<String> {
    let (spec, log) = run("avoid.toml")?;
    let o = spec.obstacles.first().context("obstacle")?;
    let RobotTask::Line { from, to, .. } = spec.robot.as_ref().context("robot")?.task else {
        anyhow::bail!("avoid scene should track a line");
    };
    let (a, b, c) = (Vec3::from(from), Vec3::from(to), o.center);
    let t = ((c - a).dot(&(b - a)) / (b - a).norm_squared()).clamp(0.0, 1.0);
    let pass = (a + (b - a) * t - c).norm() - o.radius;
    ensure!(pass <= 0.05, "EE line passes {pass:.3} m from the obstacle surface");
    let min = log.robot.iter().map(|r| r.min_clearance).fold(f64::INFINITY, f64::min);
    let active = log.robot.iter().filter(|r| r.rows > 0).count();
    ensure!(min >= -1e-6, "min clearance {min:.3e}");
    ensure!(active > 0, "avoidance never engaged");
    let end = log.robot.last().context("robot log")?.end_effector;
    let mut free = spec.clone();
    free.obstacles.clear();
    let free_log = run_unicomp(&free, free.duration)?;
    let bitwise = free_log
        .robot
        .iter()
        .all(|r| r.delta.iter().zip(&r.nominal).all(|(d, n)| d.to_bits() == n.to_bits()));
    ensure!(bitwise, "increments differ without obstacles");
    Ok(format!(
        "line passes {pass:.3} m from the surface, min clearance {min:.2e} m, {active} constrained steps, EE ends {:.3} m from goal, bitwise identical without obstacle",
        (end - b).norm()
    ))
}

fn planner_convergence() -> Result<String> {
    let (spec, log) = run("push.toml")?;
    let goal = spec.planner.as_ref().context("planner")?.goal;
    let start = log.records.first().unwrap().bodies[0].pose.position;
    let dist = (Vec3::new(goal.position[0], goal.position[1], start.z) - start).norm();
    ensure!((dist - 0.3).abs() < 1e-6 && (goal.yaw - std::f64::consts::FRAC_PI_6).abs() < 1e-12, "goal is {dist} m / {} rad away", goal.yaw);
    let reached = log
        .planner_events()
        .find_map(|(e, p)| matches!(p, PlannerEvent::GoalReached { .. }).then_some(e.step))
        .context("goal never reached")?;
    let pose = ecpsim::planner::PlanarPose::of(&log.records[reached as usize].bodies[0].pose);
    let (ep, ey) = goal.errors(&pose);
    ensure!(ep.abs() <= 0.01 && ey.abs() <= 0.05, "at the goal event errors are {ep:.4} m, {ey:.4} rad");
    let mut intervals = 0;
    let mut prev = f64::INFINITY;
    let mut reselections = 0;
    for (_, p) in log.planner_events() {
        match p {
            PlannerEvent::Interval { cost_before, cost_after, .. } => {
                intervals += 1;
                ensure!(*cost_after <= *cost_before, "interval {intervals} raised the cost {cost_before:.5} -> {cost_after:.5}");
                ensure!(*cost_before <= prev, "interval {intervals} started above the previous accepted cost");
                prev = *cost_after;
            }
            // A re-selection starts an approach phase; the object may coast meanwhile.
            PlannerEvent::Stall { .. } | PlannerEvent::Replan { .. } => {
                reselections += 1;
                prev = f64::INFINITY;
            }
            _ => {}
        }
    }
    Ok(format!("goal reached at step {reached} ({ep:.4} m, {ey:.4} rad) over {intervals} accepted intervals, cost non-increasing between {reselections} re-selections"))
}

fn replay() -> Result<String> {
    let mut spec = scene("stick.toml")?;
    spec.schedule = vec![
        ScheduledMessage { tick: 150, message: ClientMessage::SetParams { path: "tool.f_max".into(), value: 10.0.into() } },
        ScheduledMessage { tick: 400, message: ClientMessage::Pause },
        ScheduledMessage { tick: 450, message: ClientMessage::Resume },
        ScheduledMessage { tick: 600, message: ClientMessage::SetTarget { pos: [0.05, 0.35, 0.02] } },
    ];
    let offline = run_unicomp(&spec, 1.0)?;
    let again = run_unicomp(&spec, 1.0)?;
    ensure!(offline.to_json()? == again.to_json()?, "offline runs differ");

    // Live service driven over a websocket, then replayed from its record.
    let base = scene("stick.toml")?;
    let runtime = tokio::runtime::Runtime::new()?;
    let config = ServiceConfig { rt_factor: 2.0, keep_records: true, ..ServiceConfig::default() };
    let sim = SimHandle::spawn(Session::new(base.clone())?, config);
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
        let url = format!("ws://{}", listener.local_addr()?);
        let server = tokio::spawn(serve(listener, sim.client()));
        let (mut ws, _) = tokio_tungstenite::connect_async(&url).await?;
        for msg in &spec.schedule {
            ws.send(tokio_tungstenite::tungstenite::Message::text(msg.message.to_json())).await?;
            for _ in 0..3 {
                let next = tokio::time::timeout(Duration::from_secs(5), ws.next()).await?.context("socket closed")??;
                let text = next.into_text()?;
                ensure!(matches!(ServerMessage::parse(&text)?, ServerMessage::Frame { .. }), "unexpected {text}");
            }
        }
        server.abort();
        Ok::<_, anyhow::Error>(())
    })?;
    let outcome = sim.shutdown()?;
    ensure!(outcome.record.schedule.len() == spec.schedule.len(), "service applied {} messages", outcome.record.schedule.len());
    let replayed = run_ticks(&base, &outcome.record.schedule_pairs(), outcome.record.ticks)?;
    ensure!(replayed.to_json()? == outcome.log.to_json()?, "service log and offline replay differ");
    let mut recorded = base.clone();
    recorded.schedule = outcome.record.schedule.clone();
    let steps = outcome.log.records.len() as f64 * base.h;
    let via_scene = run_unicomp(&recorded, steps)?;
    ensure!(via_scene.to_json()? == outcome.log.to_json()?, "scene-schedule run differs from the service log");
    Ok(format!(
        "offline reruns identical ({} records); service session of {} ticks replays bit-identically ({} records)",
        offline.records.len(),
        outcome.record.ticks,
        outcome.log.records.len()
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Result<String>); 12] = [
        ("resting stability", resting_stability),
        ("sticking scene", sticking),
        ("sliding scene", sliding),
        ("breaking scene energy audit", breaking),
        ("Coulomb deceleration", coulomb),
        ("solver oracle suite", solver_oracles),
        ("maximum dissipation", max_dissipation),
        ("two-body momentum closure", momentum_closure),
        ("ECP containment and migration", containment_and_migration),
        ("avoidance safety", avoidance_safety),
        ("planner convergence", planner_convergence),
        ("determinism and replay", replay),
    ];
    let filter: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !filter.is_empty() && !filter.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(anyhow::anyhow!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) if secs <= 60.0 => println!("PASS {n:>2} {name} ({secs:.1} s): {detail}"),
            Ok(detail) => {
                failed += 1;
                println!("FAIL {n:>2} {name}: took {secs:.1} s (> 60 s): {detail}");
            }
            Err(e) => {
                failed += 1;
                println!("FAIL {n:>2} {name} ({secs:.1} s): {e:#}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
