//! Acceptance criteria AC1 to AC10, one PASS/FAIL line each.
//!
//! Runs without the libtest harness so the lines reach stdout. Exits
//! non-zero if a criterion fails that is not listed in `KNOWN_FAILURES`.

mod common;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use common::{follower_optimum, hash_dir, solve, sup_distance, value_of_pair};
use ssg::fpe::{iterate_to_fixed_point, verify_theorem2, FpeConfig, FpeStatus, ValuePair};
use ssg::game::{
    compare, make_example_game, random_game, random_leader_policy, Dominance, FollowerPolicy, Game,
    LeaderPolicy, RandomGameSpec, ETA,
};
use ssg::mdp::{follower_best_response, leader_dagger_value, leader_q};
use ssg::oracle::{build_archive, enumerate_grid, OracleConfig, ParetoArchive, DEFAULT_ENUMERATION_CAP};
use ssg::popi::{run_popi, PopiConfig, PopiMode, PopiTrace, Termination};

/// Criteria that cannot be met; the analysis is in the project notes and
/// the README.
const KNOWN_FAILURES: &[&str] = &["AC9"];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, limit_secs: u64) -> bool {
    elapsed <= Duration::from_secs(limit_secs)
}

fn fixture() -> Game {
    make_example_game(1.0, 3.0, 0.5, 0.9).unwrap()
}

fn pq(p: f64, q: f64) -> LeaderPolicy {
    LeaderPolicy::from_first_action(&[p, q])
}

fn ac1() -> Outcome {
    let start = Instant::now();
    let g = fixture();
    let ga = g.gamma_leader;
    // Table 1 rows 1-3 with (p, q) = (1, 0), (0, 1) and a mid-regime point
    let cases = [
        (pq(1.0, 0.0), vec![0, 1], vec![1.0 / (1.0 - ga), ga / (1.0 - ga)]),
        (pq(0.0, 1.0), vec![1, 0], vec![ga / (1.0 - ga), 1.0 / (1.0 - ga)]),
        (pq(0.5, 0.5), vec![1, 1], vec![0.0, 0.0]),
    ];
    let mut problems = Vec::new();
    for (f, response, expected) in &cases {
        let br = follower_best_response(&g, f).unwrap();
        let (v, _) = leader_dagger_value(&g, f).unwrap();
        let independent = value_of_pair(&g, f, &br.policy.actions, true);
        if br.policy.actions != *response {
            problems.push(format!("{:?}: response {}", f.probs, br.policy));
        }
        if sup_distance(&v, expected) > 1e-9 || sup_distance(&independent, expected) > 1e-9 {
            problems.push(format!("{:?}: values {:?}", f.probs, v.0));
        }
    }
    let elapsed = start.elapsed();
    outcome(
        problems.is_empty() && within(elapsed, 1),
        format!("{} mismatches, {elapsed:.2?} {}", problems.len(), problems.join("; ")),
    )
}

fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_ssg"))
}

fn run_cli(args: &[&str]) -> std::process::Output {
    Command::new(bin()).args(args).output().expect("spawn ssg")
}

fn write_fixture(dir: &Path) -> PathBuf {
    let out = dir.join("fixture");
    let status = run_cli(&[
        "gen", "example", "--x", "1", "--y", "3", "--gamma-a", "0.5", "--gamma-b", "0.9",
        "--out-dir", out.to_str().unwrap(),
    ]);
    assert!(status.status.success(), "gen example failed");
    out.join("game.json")
}

fn ac2(tmp: &Path) -> Outcome {
    let game = write_fixture(tmp);
    let out = tmp.join("ac2");
    let start = Instant::now();
    let res = run_cli(&[
        "pareto-oracle", "--game", game.to_str().unwrap(), "--resolution", "41", "--out-dir",
        out.to_str().unwrap(),
    ]);
    let elapsed = start.elapsed();
    if !res.status.success() {
        return outcome(false, String::from_utf8_lossy(&res.stderr).to_string());
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("oracle.json")).unwrap()).unwrap();
    let verdict = summary["verdict"].as_str().unwrap_or_default().to_string();
    let values: Vec<Vec<f64>> = serde_json::from_value(summary["pareto_values"].clone()).unwrap();
    let upper: Vec<f64> = serde_json::from_value(summary["se_upper"].clone()).unwrap();
    // the CSV carries the same front
    let csv = std::fs::read_to_string(out.join("archive.csv")).unwrap();
    let csv_rows = csv.lines().filter(|l| !l.starts_with('#')).count() - 1;
    let near = |target: [f64; 2]| values.iter().any(|v| sup_distance(v, &target) <= 1e-6);
    let pass = verdict == "NO-SSE-ON-GRID"
        && values.len() == 2
        && csv_rows == 2
        && near([2.0, 1.0])
        && near([1.0, 2.0])
        && sup_distance(&upper, &[2.0, 2.0]) <= 1e-6
        && within(elapsed, 10);
    outcome(
        pass,
        format!("{verdict}, front {values:?}, se_upper {upper:?}, {elapsed:.2?}"),
    )
}

fn ac3() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0_f64;
    let mut checked = 0;
    for seed in 0..100u64 {
        let g = random_game(&RandomGameSpec::new(3, 2, 3), seed).unwrap();
        for k in 0..20u64 {
            let f = random_leader_policy(3, 2, 1000, seed * 1000 + k);
            let br = follower_best_response(&g, &f).unwrap();
            let oracle = follower_optimum(&g, &f);
            let attained = value_of_pair(&g, &f, &br.policy.actions, false);
            worst = worst
                .max(sup_distance(&br.follower_values, &oracle))
                .max(sup_distance(&attained, &oracle));
            checked += 1;
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-8 && within(elapsed, 30),
        format!("{checked} policies, max deviation {worst:.3e}, {elapsed:.2?}"),
    )
}

fn ac4() -> Outcome {
    let start = Instant::now();
    let (mut violations, mut premise_a, mut equal_b, mut strict_c) = (0, 0, 0, 0);
    let gammas = [0.0, 0.5, 0.9];
    for seed in 0..200u64 {
        let ns = 2 + (seed % 2) as usize;
        let nb = 2 + (seed / 2 % 2) as usize;
        let mut spec = RandomGameSpec::new(ns, 2, nb)
            .rewards(-2.0, 2.0)
            .integer_rewards()
            .gammas(gammas[(seed % 3) as usize], 0.9);
        spec.lattice = 4;
        let g = random_game(&spec, 5000 + seed).unwrap();
        let f_prime = random_leader_policy(ns, 2, 2, 2 * seed);
        let f = random_leader_policy(ns, 2, 2, 2 * seed + 1);

        let (v_prime, _) = leader_dagger_value(&g, &f_prime).unwrap();
        let (v_f, g_f) = leader_dagger_value(&g, &f).unwrap();
        let q = leader_q(&g, &v_prime, &f).unwrap();

        // independent Q and expected next-state difference
        let mut q_ind = vec![0.0; ns];
        let mut next_diff = vec![0.0; ns];
        let diff: Vec<f64> = v_f.iter().zip(v_prime.iter()).map(|(a, b)| a - b).collect();
        for s in 0..ns {
            let b = g_f.actions[s];
            for a in 0..2 {
                let p = f.probs[s][a];
                let row = &g.transition[s][a][b];
                let ev: f64 = row.iter().zip(v_prime.iter()).map(|(x, y)| x * y).sum();
                let ed: f64 = row.iter().zip(&diff).map(|(x, y)| x * y).sum();
                q_ind[s] += p * (g.reward_leader[s][a][b] + g.gamma_leader * ev);
                next_diff[s] += p * g.gamma_leader * ed;
            }
        }
        if sup_distance(&q, &q_ind) > 1e-9 {
            violations += 1;
            continue;
        }
        let q_vs_v = compare(&q, &v_prime, ETA).unwrap();
        let f_vs_v = compare(&v_f, &v_prime, ETA).unwrap();

        // (a) Q ⪰ V' implies V^{f†} ⪰ Q ⪰ V'
        if q_vs_v.weakly_dominates() {
            premise_a += 1;
            if !compare(&v_f, &q, ETA).unwrap().weakly_dominates() {
                violations += 1;
            }
        }
        // (b) Q ≐ V' iff V^{f†} ≐ V'
        let lhs_b = q_vs_v == Dominance::Equal;
        equal_b += usize::from(lhs_b);
        if lhs_b != (f_vs_v == Dominance::Equal) {
            violations += 1;
        }
        // (c) Q ≻ V' iff (V^{f†} − V') ≻ γ_A E[V^{f†} − V']
        let lhs_c = q_vs_v == Dominance::StrictlyDominates;
        strict_c += usize::from(lhs_c);
        let rhs_c = compare(&diff, &next_diff, ETA).unwrap() == Dominance::StrictlyDominates;
        if lhs_c != rhs_c {
            violations += 1;
        }
    }
    let elapsed = start.elapsed();
    // both directions need both truth values represented
    let exercised = premise_a > 0 && equal_b > 0 && equal_b < 200 && strict_c > 0 && strict_c < 200;
    outcome(
        violations == 0 && exercised && within(elapsed, 60),
        format!(
            "200 triples, {violations} violations (premise (a) {premise_a}, equal {equal_b}, strict {strict_c}), {elapsed:.2?}"
        ),
    )
}

/// AC5 check for one trace. Returns a description of the first problem.
fn trace_problem(trace: &PopiTrace) -> Option<String> {
    if let Err(e) = trace.verify(1e-9) {
        return Some(e);
    }
    let first_equal = trace
        .iterates
        .iter()
        .position(|it| it.relation_to_parent == Some(Dominance::Equal));
    let terminal = trace.iterates.iter().position(|it| it.terminal);
    if first_equal != terminal {
        return Some(format!("first equal {first_equal:?}, first terminal {terminal:?}"));
    }
    if trace.termination == Termination::ConvergedEqual
        && first_equal != Some(trace.iterates.len() - 1)
    {
        return Some("converged run does not end at its first equal step".into());
    }
    None
}

fn popi_runs(game: &Game, resolution: usize, traces: &mut Vec<PopiTrace>) -> Vec<(PopiMode, PopiTrace)> {
    let start = LeaderPolicy::uniform(game.num_states, game.num_leader_actions);
    [PopiMode::IdealGrid, PopiMode::PracticalSplit]
        .into_iter()
        .map(|mode| {
            let config = PopiConfig::for_game(game).resolution(resolution).mode(mode);
            let trace = run_popi(game, &start, &config).unwrap();
            traces.push(trace.clone());
            (mode, trace)
        })
        .collect()
}

fn ac6(traces: &mut Vec<PopiTrace>) -> Outcome {
    let start = Instant::now();
    let mut games = vec![make_example_game(1.0, 3.0, 0.0, 0.9).unwrap()];
    for seed in 0..20u64 {
        games.push(random_game(&RandomGameSpec::new(2, 2, 2).gammas(0.0, 0.9), 100 + seed).unwrap());
    }
    let mut failures = Vec::new();
    for (i, g) in games.iter().enumerate() {
        let archive = build_archive(g, &OracleConfig::with_resolution(41)).unwrap();
        for (mode, trace) in popi_runs(g, 41, traces) {
            let v = trace.final_values();
            if archive.entries.iter().any(|e| {
                compare(&e.values, v, 1e-6).unwrap() == Dominance::StrictlyDominates
            }) {
                failures.push(format!("game {i} {mode:?}"));
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        failures.is_empty() && within(elapsed, 120),
        format!("{} games x 2 modes, dominated: {failures:?}, {elapsed:.2?}", games.len()),
    )
}

fn cone_excess(archive: &ParetoArchive, v_inf: &[f64], gamma: f64) -> f64 {
    archive
        .entries
        .iter()
        .map(|e| {
            let d: Vec<f64> = e.values.iter().zip(v_inf).map(|(a, b)| a - b).collect();
            let lo = d.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            lo - gamma * hi
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

fn ac7(traces: &mut Vec<PopiTrace>) -> Outcome {
    let start = Instant::now();
    let mut worst = f64::NEG_INFINITY;
    let mut failures = Vec::new();
    for seed in 0..20u64 {
        let g = random_game(&RandomGameSpec::new(2, 2, 2).gammas(0.5, 0.9), 200 + seed).unwrap();
        let archive = build_archive(&g, &OracleConfig::with_resolution(21)).unwrap();
        for (mode, trace) in popi_runs(&g, 21, traces) {
            let excess = cone_excess(&archive, trace.final_values(), 0.5);
            worst = worst.max(excess);
            if excess > 1e-6 {
                failures.push(format!("seed {seed} {mode:?}: {excess:.3e}"));
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        failures.is_empty() && within(elapsed, 120),
        format!("20 games x 2 modes, worst excess {worst:.3e} {failures:?}, {elapsed:.2?}"),
    )
}

fn ac8() -> Outcome {
    let start = Instant::now();
    let (mut converged, mut worst, mut tried) = (0, 0.0_f64, 0);
    let mut seed = 0u64;
    while converged < 10 && seed < 500 {
        let ns = 2 + (seed % 2) as usize;
        let spec = RandomGameSpec::new(ns, 2, 2).gammas(0.9, 0.9).cooperative();
        let g = random_game(&spec, 300 + seed).unwrap();
        seed += 1;
        tried += 1;
        let report = iterate_to_fixed_point(&g, &ValuePair::zeros(ns), &FpeConfig::default()).unwrap();
        if report.status != FpeStatus::Converged {
            continue;
        }
        converged += 1;
        let leader_probes: Vec<LeaderPolicy> =
            enumerate_grid(&g, 21, DEFAULT_ENUMERATION_CAP).unwrap().collect();
        let follower_probes = FollowerPolicy::enumerate_all(ns, 2);
        let t2 = verify_theorem2(
            &g,
            &report.values,
            report.leader_policy.as_ref().unwrap(),
            report.follower_policy.as_ref().unwrap(),
            &leader_probes,
            &follower_probes,
            FpeConfig::default().tie_break,
        )
        .unwrap();
        worst = worst.max(t2.max_violation);
    }
    let elapsed = start.elapsed();
    outcome(
        converged == 10 && worst <= 1e-6 && within(elapsed, 120),
        format!("{converged} converged of {tried}, max violation {worst:.3e}, {elapsed:.2?}"),
    )
}

fn golden_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/fpe_fixture_status.json")
}

fn ac9() -> Outcome {
    let g = fixture();
    let report = iterate_to_fixed_point(&g, &ValuePair::zeros(2), &FpeConfig::default()).unwrap();
    let observed = serde_json::json!({
        "game": "example x=1 y=3 gamma_a=0.5 gamma_b=0.9",
        "v0": "zeros",
        "status": report.status,
        "iterations": report.iterations,
        "v_A": report.values.v_a,
    });
    let path = golden_path();
    if std::env::var_os("UPDATE_GOLDEN").is_some() || !path.exists() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, serde_json::to_string_pretty(&observed).unwrap() + "\n").unwrap();
    }
    let golden: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let matches_golden = golden["status"] == observed["status"];
    let non_convergent = matches!(report.status, FpeStatus::CycleDetected | FpeStatus::MaxIters);
    outcome(
        non_convergent && matches_golden,
        format!(
            "status {:?} after {} iterations (golden {}), v_A {:?}",
            report.status, report.iterations, golden["status"], report.values.v_a.0
        ),
    )
}

fn ac10(tmp: &Path) -> Outcome {
    let start = Instant::now();
    let fixture = write_fixture(&tmp.join("ac10"));
    let random_dir = tmp.join("ac10/random");
    let res = run_cli(&[
        "gen", "random", "--states", "3", "--leader-actions", "2", "--follower-actions", "3",
        "--seed", "7", "--out-dir", random_dir.to_str().unwrap(),
    ]);
    assert!(res.status.success());
    let random = random_dir.join("game.json");
    let policy = tmp.join("ac10/policy.json");
    std::fs::write(&policy, r#"{"probs": [[1.0, 0.0], [0.0, 1.0]]}"#).unwrap();
    let (fx, rg, pol) = (
        fixture.to_str().unwrap(),
        random.to_str().unwrap(),
        policy.to_str().unwrap(),
    );
    let matrix: Vec<Vec<&str>> = vec![
        vec!["gen", "example", "--x", "1", "--y", "3", "--gamma-a", "0.5", "--gamma-b", "0.9"],
        vec!["gen", "random", "--states", "3", "--leader-actions", "2", "--follower-actions", "3", "--seed", "7"],
        vec!["best-response", "--game", fx, "--policy", pol],
        vec!["popi", "--game", fx, "--mode", "ideal-grid", "--resolution", "11", "--seed", "3"],
        vec!["popi", "--game", fx, "--mode", "practical-split", "--seed", "3"],
        vec!["popi", "--game", fx, "--mode", "backtracking", "--resolution", "11", "--seed", "3"],
        vec!["popi", "--game", rg, "--mode", "practical-split", "--resolution", "11", "--seed", "5"],
        vec!["popi", "--game", fx, "--gamma-a", "0", "--weights", "1,0", "--mode", "practical-split"],
        vec!["fpe", "--game", fx],
        vec!["fpe", "--game", rg],
        vec!["pareto-oracle", "--game", fx, "--resolution", "41"],
        vec!["compare", "--game", fx, "--gamma-a", "0", "--weights", "1,0"],
    ];
    let mut failures = Vec::new();
    for (i, args) in matrix.iter().enumerate() {
        let dirs: Vec<PathBuf> = ["a", "b", "replay"]
            .iter()
            .map(|d| tmp.join(format!("ac10/run{i}/{d}")))
            .collect();
        for d in &dirs[..2] {
            let mut full = args.clone();
            full.extend(["--out-dir", d.to_str().unwrap()]);
            if !run_cli(&full).status.success() {
                failures.push(format!("{}: run failed", args.join(" ")));
            }
        }
        let manifest = dirs[0].join("manifest.json");
        let replay = run_cli(&[
            "replay", "--manifest", manifest.to_str().unwrap(), "--out-dir",
            dirs[2].to_str().unwrap(),
        ]);
        if !replay.status.success() {
            failures.push(format!("{}: replay failed", args.join(" ")));
            continue;
        }
        let hashes: Vec<_> = dirs.iter().map(|d| hash_dir(d)).collect();
        if !hashes[0].contains_key("manifest.json") || hashes[0] != hashes[1] || hashes[0] != hashes[2] {
            failures.push(format!("{}: outputs differ", args.join(" ")));
        }
    }
    let elapsed = start.elapsed();
    outcome(
        failures.is_empty(),
        format!("{} commands x 3 runs, {failures:?}, {elapsed:.2?}", matrix.len()),
    )
}

fn ac5(traces: &[PopiTrace]) -> Outcome {
    let problems: Vec<String> = traces
        .iter()
        .enumerate()
        .filter_map(|(i, t)| trace_problem(t).map(|p| format!("trace {i}: {p}")))
        .collect();
    outcome(
        problems.is_empty(),
        format!("{} traces, {} violations {problems:?}", traces.len(), problems.len()),
    )
}

/// Extra POPI runs on the fixture so AC5 also covers backtracking and
/// non-myopic leaders.
fn fixture_traces(traces: &mut Vec<PopiTrace>) {
    let g = fixture();
    for mode in [PopiMode::IdealGrid, PopiMode::PracticalSplit, PopiMode::Backtracking] {
        for seed in 0..5 {
            let config = PopiConfig::for_game(&g).resolution(21).mode(mode).seed(seed);
            for start in [pq(0.5, 0.5), pq(0.2, 0.9), pq(1.0, 1.0)] {
                traces.push(run_popi(&g, &start, &config).unwrap());
            }
        }
    }
}

fn main() {
    let tmp = tempfile::tempdir().unwrap();
    let mut traces = Vec::new();
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    results.push(("AC1", ac1()));
    results.push(("AC2", ac2(tmp.path())));
    results.push(("AC3", ac3()));
    results.push(("AC4", ac4()));
    let ac6 = ac6(&mut traces);
    let ac7 = ac7(&mut traces);
    fixture_traces(&mut traces);
    results.push(("AC5", ac5(&traces)));
    results.push(("AC6", ac6));
    results.push(("AC7", ac7));
    results.push(("AC8", ac8()));
    results.push(("AC9", ac9()));
    results.push(("AC10", ac10(tmp.path())));

    let mut unexpected = Vec::new();
    for (name, o) in &results {
        let known = KNOWN_FAILURES.contains(name);
        let tag = match (o.pass, known) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
        };
        println!("{name} {tag}: {}", o.detail);
        if !o.pass && !known {
            unexpected.push(*name);
        }
    }
    // the solver round-trip sanity check for the test oracle itself
    let x = solve(vec![vec![2.0, 1.0], vec![1.0, 3.0]], vec![3.0, 5.0]);
    assert!(sup_distance(&x, &[0.8, 1.4]) < 1e-12);
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
