//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit when
//! any criterion fails.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use vesselnav::bench::{self, BenchmarkSpec, EpisodeMode};
use vesselnav::controllers::{
    neural_forward, CenterlineFollower, LstmState, NetworkWeights, NeuralPolicy, Policy, PolicyContext,
    PolicyFactory, PolicyNetworkSpec, RandomPolicy, WeightBundle,
};
use vesselnav::device::{j_shaped, SegmentShape, J_TIP_ANGLE, J_TIP_RADIUS};
use vesselnav::env::{compute_reward, Observation, Outcome, STEP_PENALTY, TARGET_REWARD};
use vesselnav::eval::{compare_proportions, run_episodes, EpisodeRecord};
use vesselnav::geom::Vec3;
use vesselnav::physics::{Action, DeviceAction, Engine, EngineConfig, RodEngine, MAX_ROTATION, MAX_TRANSLATION};
use vesselnav::vessel::{
    generate_aortic_arch, path_length, ArchRanges, Branch, CenterlineIndex, InsertionPoint, VesselTree,
};
use vesselnav::Result;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------- reward

fn reward_grid() -> Verdict {
    let mut worst = 0.0f64;
    for delta in -10..=10 {
        for reached in [false, true] {
            let prev = 100.0;
            let now = prev - delta as f64;
            let expected = -0.005 + 0.001 * delta as f64 + if reached { 1.0 } else { 0.0 };
            worst = worst.max((compute_reward(prev, now, reached) - expected).abs());
        }
    }
    verdict(worst == 0.0, format!("42 grid points, max deviation {worst:e}"))
}

// ---------------------------------------------------------------- path length

fn random_tree(rng: &mut ChaCha8Rng) -> VesselTree {
    let n_branches = rng.random_range(1..=5);
    let mut branches: Vec<Branch> = Vec::new();
    for b in 0..n_branches {
        let n_points = rng.random_range(2..=50);
        let (start, parent) = if b == 0 {
            (Vec3::zeros(), None)
        } else {
            let p = rng.random_range(0..b);
            let idx = rng.random_range(0..branches[p].points.len());
            (branches[p].points[idx], Some((branches[p].name.clone(), idx)))
        };
        let mut pts = vec![start];
        for _ in 1..n_points {
            let step = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(0.2..1.0),
            )
            .normalize()
                * rng.random_range(0.5..5.0);
            pts.push(pts.last().unwrap() + step);
        }
        let mut branch = Branch::new(format!("b{b}"), pts, vec![1.0; n_points]);
        if let Some((name, idx)) = parent {
            branch = branch.with_parent(&name, idx);
        }
        branches.push(branch);
    }
    VesselTree::new(
        "random",
        branches,
        InsertionPoint {
            position: Vec3::zeros(),
            direction: Vec3::z(),
        },
        None,
    )
    .expect("random tree is valid")
}

/// Brute-force projection: (branch, segment, t, arclength) of the nearest point.
fn project(tree: &VesselTree, p: &Vec3) -> (usize, usize, f64) {
    let mut best = (f64::INFINITY, 0, 0, 0.0);
    for (bi, b) in tree.branches.iter().enumerate() {
        for k in 0..b.points.len() - 1 {
            let (a, c) = (b.points[k], b.points[k + 1]);
            let t = ((p - a).dot(&(c - a)) / (c - a).norm_squared()).clamp(0.0, 1.0);
            let d = (p - (a + (c - a) * t)).norm();
            if d < best.0 {
                best = (d, bi, k, t);
            }
        }
    }
    (best.1, best.2, best.3)
}

/// Enumerates every simple path between two projected points by DFS over
/// the point graph and returns the shortest.
fn enumerate_paths(tree: &VesselTree, a: (usize, usize, f64), b: (usize, usize, f64)) -> f64 {
    let mut id = BTreeMap::new();
    let mut pos = Vec::new();
    for (bi, br) in tree.branches.iter().enumerate() {
        for (k, p) in br.points.iter().enumerate() {
            id.insert((bi, k), pos.len());
            pos.push(*p);
        }
    }
    let n = pos.len();
    let (va, vb) = (n, n + 1);
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n + 2];
    let link = |adj: &mut Vec<Vec<(usize, f64)>>, u: usize, v: usize, w: f64| {
        adj[u].push((v, w));
        adj[v].push((u, w));
    };
    for (bi, br) in tree.branches.iter().enumerate() {
        for k in 0..br.points.len() - 1 {
            link(&mut adj, id[&(bi, k)], id[&(bi, k + 1)], (br.points[k + 1] - br.points[k]).norm());
        }
        if let Some(att) = &br.parent {
            let pi = tree.branches.iter().position(|x| x.name == att.branch).unwrap();
            link(&mut adj, id[&(bi, 0)], id[&(pi, att.index)], (br.points[0] - tree.branches[pi].points[att.index]).norm());
        }
    }
    for (v, (bi, k, t)) in [(va, a), (vb, b)] {
        let br = &tree.branches[bi];
        let len = (br.points[k + 1] - br.points[k]).norm();
        link(&mut adj, v, id[&(bi, k)], t * len);
        link(&mut adj, v, id[&(bi, k + 1)], (1.0 - t) * len);
    }
    if a.0 == b.0 && a.1 == b.1 {
        let len = (tree.branches[a.0].points[a.1 + 1] - tree.branches[a.0].points[a.1]).norm();
        link(&mut adj, va, vb, (a.2 - b.2).abs() * len);
    }
    let mut best = f64::INFINITY;
    let mut visited = vec![false; n + 2];
    fn dfs(u: usize, goal: usize, acc: f64, adj: &[Vec<(usize, f64)>], visited: &mut [bool], best: &mut f64) {
        if u == goal {
            *best = best.min(acc);
            return;
        }
        visited[u] = true;
        for &(v, w) in &adj[u] {
            if !visited[v] {
                dfs(v, goal, acc + w, adj, visited, best);
            }
        }
        visited[u] = false;
    }
    dfs(va, vb, 0.0, &adj, &mut visited, &mut best);
    best
}

fn path_length_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let tree = random_tree(&mut rng);
        let (lo, hi) = tree.bounding_box();
        for _ in 0..5 {
            let mut pick = || {
                Vec3::new(
                    rng.random_range(lo.x - 2.0..hi.x + 2.0),
                    rng.random_range(lo.y - 2.0..hi.y + 2.0),
                    rng.random_range(lo.z - 2.0..hi.z + 2.0),
                )
            };
            let (a, b) = (pick(), pick());
            let got = path_length(&tree, &a, &b).expect("connected tree");
            let want = enumerate_paths(&tree, project(&tree, &a), project(&tree, &b));
            worst = worst.max((got - want).abs() / want.max(1e-12).max(1.0));
        }
    }
    verdict(worst <= 1e-9, format!("100 trees x 5 pairs, max relative error {worst:.2e}"))
}

// ---------------------------------------------------------------- rod invariants

struct RolloutStats {
    penetration: f64,
    drift: f64,
    deepest: f64,
    fingerprint: Vec<u64>,
}

fn rod_rollout(seed: u64, steps: usize) -> Result<RolloutStats> {
    let tree = Arc::new(generate_aortic_arch(seed, &ArchRanges::default())?);
    let index = Arc::new(CenterlineIndex::new(&tree));
    let config = EngineConfig {
        rng_seed: seed,
        ..EngineConfig::default()
    };
    let ds = config.ds;
    let mut engine = RodEngine::new(tree, Some(index.clone()), &[j_shaped(J_TIP_RADIUS, J_TIP_ANGLE)], config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
    let (mut penetration, mut drift, mut deepest) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..steps {
        let a = DeviceAction::new(rng.random_range(-MAX_TRANSLATION..=MAX_TRANSLATION), rng.random_range(-MAX_ROTATION..=MAX_ROTATION));
        Engine::step(&mut engine, &Action::new(vec![a]))?;
        deepest = deepest.max(engine.rod_states()[0].inserted_length);
        let nodes = &engine.rod_states()[0].nodes;
        for n in nodes {
            let pose = index.lumen_pose(n);
            penetration = penetration.max(pose.distance - pose.radius);
        }
        for w in nodes.windows(2) {
            drift = drift.max(((w[0] - w[1]).norm() - ds).abs());
        }
    }
    let fingerprint = engine.rod_states()[0]
        .nodes
        .iter()
        .flat_map(|n| n.iter().map(|v| v.to_bits()).collect::<Vec<_>>())
        .collect();
    Ok(RolloutStats {
        penetration,
        drift,
        deepest,
        fingerprint,
    })
}

fn rod_invariants() -> Verdict {
    let seeds: Vec<u64> = (0..10).map(|k| 100 + k).collect();
    let (mut pen, mut drift, mut deepest) = (f64::NEG_INFINITY, 0.0f64, 0.0f64);
    let mut deterministic = true;
    for &s in &seeds {
        let first = match rod_rollout(s, 1000) {
            Ok(r) => r,
            Err(e) => return verdict(false, format!("arch seed {s}: {e}")),
        };
        let again = match rod_rollout(s, 1000) {
            Ok(r) => r,
            Err(e) => return verdict(false, format!("arch seed {s} rerun: {e}")),
        };
        deterministic &= first.fingerprint == again.fingerprint;
        pen = pen.max(first.penetration);
        drift = drift.max(first.drift);
        deepest = deepest.max(first.deepest);
    }
    let pass = pen <= 1e-6 && drift <= 0.01 * EngineConfig::default().ds && deterministic;
    verdict(
        pass,
        format!("10 arches x 1000 steps: max wall penetration {pen:.2e} mm, max length drift {drift:.2e} mm, deepest insertion {deepest:.0} mm, bitwise rerun {deterministic}, no sim errors"),
    )
}

// ---------------------------------------------------------------- closed loop

fn follower_factory() -> PolicyFactory {
    Arc::new(|| Ok(Box::new(CenterlineFollower::default()) as Box<dyn Policy>))
}

fn follower_runs() -> Result<(Vec<EpisodeRecord>, Vec<EpisodeRecord>)> {
    let y = run_episodes(&bench::y_phantom_nav(), EpisodeMode::Eval, &follower_factory(), 3, 0, 1)?;
    let arch = run_episodes(&bench::basic_wire_nav(), EpisodeMode::Eval, &follower_factory(), 10, 0, 1)?;
    Ok((y, arch))
}

fn closed_loop(y: &[EpisodeRecord], arch: &[EpisodeRecord]) -> Verdict {
    let ok = |rs: &[EpisodeRecord]| rs.iter().filter(|r| r.outcome == Outcome::Success && r.duration <= 120.0).count();
    let (ky, ka) = (ok(y), ok(arch));
    let failures: Vec<String> = arch
        .iter()
        .filter(|r| r.outcome != Outcome::Success)
        .map(|r| format!("{}:{}", r.target_branch, r.outcome.label()))
        .collect();
    verdict(
        ky == 3 && ka >= 7,
        format!("Y-phantom {ky}/3, stand-in arch {ka}/10 (floor 7){}", if failures.is_empty() { String::new() } else { format!(", failed {failures:?}") }),
    )
}

// ---------------------------------------------------------------- telescoping

fn telescoping(records: &[EpisodeRecord]) -> Verdict {
    let mut worst = 0.0f64;
    for r in records {
        let sum: f64 = r
            .steps
            .iter()
            .map(|s| s.reward - STEP_PENALTY - if r.outcome == Outcome::Success && s.terminated { TARGET_REWARD } else { 0.0 })
            .sum();
        worst = worst.max((sum - 0.001 * (r.initial_pathlength - r.final_pathlength)).abs());
    }
    verdict(worst <= 1e-9, format!("{} logged episodes, max deviation {worst:.2e}", records.len()))
}

// ---------------------------------------------------------------- statistics

fn statistics() -> Verdict {
    let a = compare_proportions(98, 100, 97, 100).unwrap();
    let b = compare_proportions(90, 100, 84, 100).unwrap();
    verdict(
        (a - 0.653).abs() <= 0.005 && (b - 0.209).abs() <= 0.005,
        format!("98/100 vs 97/100 p={a:.4}, 90/100 vs 84/100 p={b:.4}"),
    )
}

// ---------------------------------------------------------------- neural

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Scalar reference of the actor forward pass written from the gate
/// equations: i, f, g, o blocks of the LSTM, ReLU dense layers, linear head.
fn oracle_forward(
    spec: &PolicyNetworkSpec,
    w: &WeightBundle,
    x: &[f64],
    h: &[f64],
    c: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let m = |n: &str| -> &DMatrix<f64> { w.get(n).unwrap() };
    let hw = spec.embedder_width;
    let (wx, uh, b) = (m("lstm.W"), m("lstm.U"), m("lstm.b"));
    let pre = |row: usize| -> f64 {
        let mut s = b[(row, 0)];
        for j in 0..x.len() {
            s += wx[(row, j)] * x[j];
        }
        for j in 0..hw {
            s += uh[(row, j)] * h[j];
        }
        s
    };
    let mut h2 = vec![0.0; hw];
    let mut c2 = vec![0.0; hw];
    for u in 0..hw {
        let i = sig(pre(u));
        let f = sig(pre(hw + u));
        let g = pre(2 * hw + u).tanh();
        let o = sig(pre(3 * hw + u));
        c2[u] = f * c[u] + i * g;
        h2[u] = o * c2[u].tanh();
    }
    let mut a = h2.clone();
    for k in 0..spec.hidden_layers.len() {
        let (dw, db) = (m(&format!("dense.{k}.W")), m(&format!("dense.{k}.b")));
        a = (0..dw.nrows())
            .map(|r| (db[(r, 0)] + (0..a.len()).map(|j| dw[(r, j)] * a[j]).sum::<f64>()).max(0.0))
            .collect();
    }
    let (hwt, hb) = (m("head.W"), m("head.b"));
    let out: Vec<f64> = (0..hwt.nrows())
        .map(|r| hb[(r, 0)] + (0..a.len()).map(|j| hwt[(r, j)] * a[j]).sum::<f64>())
        .collect();
    let n = spec.action_len();
    let mean = out[..n].to_vec();
    let std = out[n..].iter().map(|v| v.clamp(-20.0, 2.0).exp()).collect();
    (mean, std, h2, c2)
}

fn neural_inference() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst = 0.0f64;
    for net in 0..100 {
        let layers = (0..rng.random_range(0..=3)).map(|_| rng.random_range(1..=8)).collect();
        let spec = PolicyNetworkSpec::new(rng.random_range(1..=8), layers, rng.random_range(1..=2));
        let bundle = spec.random_weights(net, 0.8);
        let weights = NetworkWeights::from_bundle(&spec, &bundle).unwrap();
        let hw = spec.embedder_width;
        let mut state = LstmState {
            h: (0..hw).map(|_| rng.random_range(-1.0..1.0)).collect(),
            c: (0..hw).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        let (mut h, mut c) = (state.h.clone(), state.c.clone());
        for _ in 0..3 {
            let x: Vec<f64> = (0..spec.input_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (out, next) = neural_forward(&weights, &x, &state).unwrap();
            let (mean, std, h2, c2) = oracle_forward(&spec, &bundle, &x, &h, &c);
            for (p, q) in out.mean.iter().zip(&mean).chain(out.std.iter().zip(&std)).chain(next.h.iter().zip(&h2)).chain(next.c.iter().zip(&c2)) {
                worst = worst.max((p - q).abs());
            }
            state = next;
            (h, c) = (h2, c2);
        }
    }
    // Zero network: zero mean, hence a zero deterministic action.
    let spec = PolicyNetworkSpec::new(500, vec![900; 4], 1);
    let zero = Arc::new(NetworkWeights::from_bundle(&spec, &spec.zero_weights()).unwrap());
    let mut policy = NeuralPolicy::new(zero, true, 0);
    let action = policy.act_flat(&vec![0.3; spec.input_len()]).unwrap();
    let zero_ok = action.to_flat().iter().all(|v| *v == 0.0);
    verdict(
        worst <= 1e-6 && zero_ok,
        format!("100 random networks x 3 steps, max deviation {worst:.2e}; zero network action zero: {zero_ok}"),
    )
}

// ---------------------------------------------------------------- constants

fn constants_of(spec: &BenchmarkSpec) -> Value {
    let mut v = json!({
        "eval_max_duration": spec.eval_max_duration,
        "frame_rate": spec.imaging.frame_rate,
        "max_rotation": spec.max_rotation,
        "max_translation": spec.max_translation,
        "n_devices": spec.devices.len(),
        "success_threshold": spec.success_threshold,
        "train_max_duration": spec.train_max_duration,
    });
    let m = v.as_object_mut().unwrap();
    match spec.name.as_str() {
        bench::BASIC_WIRE_NAV => {
            if let Some(SegmentShape::Arc { radius, .. }) = spec.devices[0].segments.first().map(|s| s.shape) {
                m.insert("j_tip_radius".into(), json!(radius));
            }
        }
        bench::ARCH_VARIETY => {
            if let bench::VesselSource::Arch { seed } = spec.eval_vessel {
                m.insert("eval_vessel_seed".into(), json!(seed));
            }
        }
        bench::DUAL_DEVICE_NAV => {
            m.insert("outer_is_hollow".into(), json!(spec.devices[0].is_hollow));
        }
        _ => {}
    }
    v
}

fn constants_snapshot() -> Verdict {
    let golden: Value =
        serde_json::from_str(include_str!("golden/benchmark_constants.json")).expect("golden file parses");
    let actual: Value = bench::all().iter().map(|s| (s.name.clone(), constants_of(s))).collect::<serde_json::Map<_, _>>().into();
    let cards = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../cards");
    let stale: Vec<String> = bench::all()
        .iter()
        .filter(|s| {
            std::fs::read_to_string(cards.join(format!("{}.json", s.name))).ok() != Some(bench::card_json(s))
                || std::fs::read_to_string(cards.join(format!("{}.md", s.name))).ok() != Some(bench::card_markdown(s))
        })
        .map(|s| s.name.clone())
        .collect();
    verdict(
        golden == actual && stale.is_empty(),
        if golden == actual && stale.is_empty() {
            "3 benchmarks match the golden constants; cards up to date".to_string()
        } else {
            format!("golden match {}, stale cards {stale:?}", golden == actual)
        },
    )
}

// ---------------------------------------------------------------- step counts

struct Idle(usize);

impl Policy for Idle {
    fn reset(&mut self, _seed: u64) {}
    fn act(&mut self, _o: &Observation, _c: &PolicyContext<'_>) -> Result<Action> {
        Ok(Action::zero(self.0))
    }
}

fn step_counts() -> Verdict {
    let mut parts = Vec::new();
    let mut pass = true;
    for (spec, want) in [(bench::basic_wire_nav(), 900), (bench::arch_variety(), 900), (bench::dual_device_nav(), 997)] {
        let n = spec.devices.len();
        let idle: PolicyFactory = Arc::new(move || Ok(Box::new(Idle(n)) as Box<dyn Policy>));
        let r = &run_episodes(&spec, EpisodeMode::Eval, &idle, 1, 3, 1).unwrap()[0];
        let last = r.steps.last().unwrap();
        let ok = r.outcome == Outcome::Timeout && r.steps.len() == want && last.truncated && !last.terminated;
        pass &= ok;
        parts.push(format!("{} {} steps", spec.name, r.steps.len()));
    }
    verdict(pass, parts.join(", "))
}

fn main() {
    // The follower runs feed two criteria; run them once.
    let t = Instant::now();
    let runs = follower_runs();
    let loop_time = t.elapsed();
    let mut random_logs = Vec::new();
    let mut spec = bench::basic_wire_nav();
    spec.eval_max_duration = 30.0;
    let random: PolicyFactory = Arc::new(|| Ok(Box::new(RandomPolicy::new(1, 4)) as Box<dyn Policy>));
    if let Ok(rs) = run_episodes(&spec, EpisodeMode::Eval, &random, 5, 9, 1) {
        random_logs = rs;
    }

    let mut results: Vec<(&str, Verdict, Duration)> = Vec::new();
    fn timed(results: &mut Vec<(&str, Verdict, Duration)>, name: &'static str, f: &mut dyn FnMut() -> Verdict) {
        let t = Instant::now();
        let v = f();
        results.push((name, v, t.elapsed()));
    }
    timed(&mut results, "reward equation grid", &mut reward_grid);
    timed(&mut results, "path length vs exhaustive enumeration", &mut path_length_oracle);
    timed(&mut results, "rod invariants", &mut rod_invariants);
    match &runs {
        Ok((y, arch)) => {
            let logs: Vec<EpisodeRecord> = y.iter().chain(arch).chain(&random_logs).cloned().collect();
            timed(&mut results, "telescoping path reward", &mut || telescoping(&logs));
            let v = closed_loop(y, arch);
            results.push(("baseline closed loop", v, loop_time));
        }
        Err(e) => {
            let msg = e.to_string();
            timed(&mut results, "telescoping path reward", &mut || verdict(false, format!("rollouts failed: {msg}")));
            results.push(("baseline closed loop", verdict(false, format!("rollouts failed: {e}")), loop_time));
        }
    }
    timed(&mut results, "statistics reproduction", &mut statistics);
    timed(&mut results, "neural inference oracle", &mut neural_inference);
    timed(&mut results, "benchmark constants snapshot", &mut constants_snapshot);
    timed(&mut results, "episode step counts", &mut step_counts);

    let mut failed = 0;
    for (name, v, dt) in &results {
        println!("{} {name} ({:.1}s): {}", if v.pass { "PASS" } else { "FAIL" }, dt.as_secs_f64(), v.detail);
        failed += usize::from(!v.pass);
    }
    println!("acceptance: {}/{} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
