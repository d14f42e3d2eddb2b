//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any failure.

mod common;

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use common::{max_abs_diff, random_distribution, random_small_task, random_strategy, FlatModel, Regime};
use rand::{Rng, SeedableRng};
use sipl_core::belief::{propagate, update, Belief, StrategyMode};
use sipl_core::container::read_array;
use sipl_core::dataset::{build_dataset, read_dataset, DatasetOptions};
use sipl_core::env::{generate, observe, EpisodeState, Simulator};
use sipl_core::model::{build_model, FactoredModel, InteractionIndicator, Observation, NUM_OBSERVATIONS};
use sipl_core::nested::{utility_trace, value_iteration, MixedStrategy};
use sipl_core::rng::{stream, SimRng};
use sipl_core::task::{Action, Agent, Cell, JointAction, TaskParameter};
use sipl_core::trajectory::{evaluate_policy, run_episodes, solve_tasks, EpisodeConfig, PolicyKind};
use sipl_core::NestedSpec;

const VI_TOL: f64 = 1e-9;
const FILTER_TOL: f64 = 1e-12;
const CONTRACTION_SLACK: f64 = 1e-9;
const FIDELITY_TOL: f64 = 0.01;
const FIDELITY_SAMPLES: usize = 100_000;
const SE_MULTIPLE: f64 = 3.0;
const NOISELESS_SUCCESS: f64 = 0.95;

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
    budget: Option<Duration>,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail, budget: None }
}

fn factorization_equivalence() -> Outcome {
    let mut rng = SimRng::seed_from_u64(0xFAC7);
    let mut worst: f64 = 0.0;
    let mut tasks = 0;
    for seed in 0..24 {
        let task = random_small_task(&mut rng, 1000 + seed);
        let model = build_model(&task).unwrap();
        let regimes = [
            (InteractionIndicator::never(), Regime::Never),
            (InteractionIndicator::always(), Regime::Always),
            (InteractionIndicator::radius(1), Regime::Radius(1)),
        ];
        for (x, regime) in regimes {
            let flat = FlatModel::new(&task, regime);
            for me in [Agent::I, Agent::J] {
                let opp = random_strategy(&mut rng, flat.ns);
                let pi = MixedStrategy::from_probs(me.other(), opp.clone()).unwrap();
                let k = rng.gen_range(1..=10);
                let (q, u) = value_iteration(&model, &x, me, &pi, k).unwrap();
                let (fq, fu) = flat.value_iteration((me == Agent::J) as usize, &opp, k);
                worst = worst.max(max_abs_diff(q.as_slice(), &fq)).max(max_abs_diff(&u.values, &fu));
            }
        }
        tasks += 1;
    }
    Outcome {
        pass: worst <= VI_TOL,
        detail: format!("{tasks} tasks x 3 regimes x 2 agents, max |dQ| = {worst:.2e} (tol {VI_TOL:.0e})"),
        budget: Some(Duration::from_secs(120)),
    }
}

fn belief_oracle() -> Outcome {
    let mut rng = SimRng::seed_from_u64(0xBE11EF);
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    let mut infeasible = 0usize;
    let mut mismatched_support = 0usize;
    for seed in 0..8 {
        let mut task = random_small_task(&mut rng, 2000 + seed);
        if seed % 2 == 0 {
            // sharp observations make most codes impossible
            task.obs_noise_move = 0.0;
            task.obs_noise_listen = 0.0;
        }
        let model = build_model(&task).unwrap();
        let x = model.indicator();
        let flat = FlatModel::new(&task, Regime::Radius(task.interaction_radius));
        let ns = model.num_states();
        let b = random_distribution(&mut rng, ns);
        let belief = Belief::from_probs(b.clone()).unwrap();
        let pj = random_strategy(&mut rng, ns);
        let pi = MixedStrategy::from_probs(Agent::J, pj.clone()).unwrap();
        for a in JointAction::all() {
            let (ai, aj) = (a.a_i.index(), a.a_j.index());
            let modes = [
                (flat.predict(&b, ai, aj, None), StrategyMode::GivenAction),
                (flat.predict(&b, ai, aj, Some(&pj)), StrategyMode::Strategy(&pi)),
            ];
            for (predicted, mode) in modes {
                let ours = propagate(&belief, &model, &x, a, mode).unwrap();
                worst = worst.max(max_abs_diff(&ours.0, &predicted));
                for code in 0..NUM_OBSERVATIONS {
                    let o = Observation::new(code as u8).unwrap();
                    let got = update(&belief, &model, &x, a, o, mode);
                    match (flat.correct(&predicted, ai, code), got) {
                        (Some(want), Ok(got)) => {
                            worst = worst.max(max_abs_diff(got.as_slice(), &want));
                            checked += 1;
                        }
                        (None, Err(_)) => infeasible += 1,
                        _ => mismatched_support += 1,
                    }
                }
            }
        }
    }
    Outcome {
        pass: worst <= FILTER_TOL && mismatched_support == 0 && checked > 0 && infeasible > 0,
        detail: format!(
            "{checked} feasible and {infeasible} impossible (b, a, o) updates, max |db| = {worst:.2e} (tol {FILTER_TOL:.0e}), {mismatched_support} feasibility mismatches"
        ),
        budget: Some(Duration::from_secs(120)),
    }
}

fn contraction() -> Outcome {
    let mut rng = SimRng::seed_from_u64(0xC047);
    let mut worst_excess = f64::NEG_INFINITY;
    let mut failures = 0;
    for probe in 0..100u64 {
        let task = random_small_task(&mut rng, 3000 + probe);
        let model = build_model(&task).unwrap();
        let x = match probe % 3 {
            0 => InteractionIndicator::never(),
            1 => InteractionIndicator::always(),
            _ => model.indicator(),
        };
        let me = if probe % 2 == 0 { Agent::I } else { Agent::J };
        let pi = MixedStrategy::from_probs(me.other(), random_strategy(&mut rng, model.num_states())).unwrap();
        let k = rng.gen_range(1..=20);
        let trace = utility_trace(&model, &x, me, &pi, k + 1).unwrap();
        let prev = trace[k].max_diff(&trace[k - 1]);
        let next = trace[k + 1].max_diff(&trace[k]);
        let excess = if prev == 0.0 { next } else { next / prev - task.gamma };
        worst_excess = worst_excess.max(excess);
        if excess > CONTRACTION_SLACK {
            failures += 1;
        }
    }
    outcome(
        failures == 0,
        format!("100 probes, max (ratio - gamma) = {worst_excess:.2e} (slack {CONTRACTION_SLACK:.0e}), {failures} violations"),
    )
}

fn noiseless(mut task: TaskParameter) -> TaskParameter {
    task.move_success_prob = 1.0;
    task.obs_noise_move = 0.0;
    task.obs_noise_listen = 0.0;
    task
}

fn expert_quality() -> Outcome {
    let tasks: Vec<TaskParameter> = generate(606, 6, 20, 0.25, 3).unwrap().into_iter().map(|g| g.task).collect();
    let experts = solve_tasks(&tasks, |t| NestedSpec::for_grid(t.n)).unwrap();
    let cfg = EpisodeConfig::default();
    let e = evaluate_policy(&experts, &PolicyKind::Expert, 20, 77, &cfg).unwrap();
    let r = evaluate_policy(&experts, &PolicyKind::Random, 20, 77, &cfg).unwrap();
    let pooled = (e.return_se.powi(2) + r.return_se.powi(2)).sqrt();
    let margin_ok = e.mean_return - r.mean_return >= SE_MULTIPLE * pooled && e.mean_return > r.mean_return;

    let easy: Vec<TaskParameter> =
        generate(607, 6, 20, 0.25, 1).unwrap().into_iter().map(|g| noiseless(g.task)).collect();
    let easy_experts = solve_tasks(&easy, |t| NestedSpec::for_grid(t.n)).unwrap();
    let n = evaluate_policy(&easy_experts, &PolicyKind::Expert, 20, 78, &cfg).unwrap();

    Outcome {
        pass: margin_ok && n.success_rate >= NOISELESS_SUCCESS,
        detail: format!(
            "return expert {:.3} vs random {:.3}, gap {:.3} needs >= {:.3}; noiseless singleton success {:.3} (needs >= {NOISELESS_SUCCESS})",
            e.mean_return,
            r.mean_return,
            e.mean_return - r.mean_return,
            SE_MULTIPLE * pooled,
            n.success_rate
        ),
        budget: Some(Duration::from_secs(300)),
    }
}

fn max_freq_error(counts: &[usize], expected: &[f64]) -> f64 {
    let total: usize = counts.iter().sum();
    counts.iter().zip(expected).fold(0.0, |m, (c, p)| m.max((*c as f64 / total as f64 - p).abs()))
}

fn transition_probe(model: &FactoredModel, s: usize, a: JointAction, seed: u64) -> f64 {
    let sim = Simulator::new(model, usize::MAX);
    let mut rng = stream(seed, &[]);
    let mut counts = vec![0usize; model.num_states()];
    for _ in 0..FIDELITY_SAMPLES {
        counts[sim.step(&EpisodeState::start(s), a, &mut rng).unwrap().state] += 1;
    }
    let row = model.transition_row(&model.indicator(), s, a);
    let expected: Vec<f64> = (0..model.num_states()).map(|k| row.prob(k)).collect();
    max_freq_error(&counts, &expected)
}

fn simulator_fidelity() -> Outcome {
    let task = TaskParameter::new(4, Cell::new(3, 3), vec![Cell::new(0, 0)], vec![Cell::new(0, 2)])
        .with_obstacles(&[Cell::new(2, 1)]);
    let model = build_model(&task).unwrap();
    let sp = model.space();
    let join = |a: Cell, b: Cell| sp.join(sp.cell_index(a).unwrap(), sp.cell_index(b).unwrap());

    // agents far apart: independent noisy moves
    let far = transition_probe(&model, join(Cell::new(1, 0), Cell::new(3, 2)), JointAction::new(Action::East, Action::North), 1);
    // agents contesting (0, 1): collisions bounce both back
    let contested =
        transition_probe(&model, join(Cell::new(0, 0), Cell::new(0, 2)), JointAction::new(Action::East, Action::West), 2);
    // observation after a move next to an obstacle
    let cell = sp.cell_index(Cell::new(1, 1)).unwrap();
    let s = sp.join(cell, sp.cell_index(Cell::new(3, 3)).unwrap());
    let mut rng = stream(3, &[]);
    let mut counts = vec![0usize; NUM_OBSERVATIONS];
    for _ in 0..FIDELITY_SAMPLES {
        counts[observe(&model, s, Action::South, &mut rng).code() as usize] += 1;
    }
    let obs = max_freq_error(&counts, model.observation_row(cell, Action::South));

    let worst = far.max(contested).max(obs);
    outcome(
        worst <= FIDELITY_TOL,
        format!(
            "{FIDELITY_SAMPLES} samples per probe, max |freq - p|: far {far:.4}, contested {contested:.4}, observation {obs:.4} (tol {FIDELITY_TOL})"
        ),
    )
}

fn array_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = Vec::new();
    for sub in [dir.to_path_buf(), dir.join("tasks")] {
        for entry in fs::read_dir(&sub).unwrap() {
            let p = entry.unwrap().path();
            if p.is_file() && p.file_name().unwrap() != "manifest.json" {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn dataset_determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let tasks: Vec<TaskParameter> = generate(808, 5, 6, 0.2, 3).unwrap().into_iter().map(|g| g.task).collect();
    let opts = DatasetOptions::default();
    let m = build_dataset(&tasks, 4, 5150, &tmp.path().join("a"), &opts).unwrap();
    build_dataset(&tasks, 4, 5150, &tmp.path().join("b"), &opts).unwrap();
    let a = array_files(&tmp.path().join("a"));
    let identical = a == array_files(&tmp.path().join("b"));

    let (_, arrays) = read_dataset(&tmp.path().join("a")).unwrap();
    let mut bit_equal = arrays.len() == m.arrays.len();
    for entry in &m.arrays {
        let on_disk = fs::read(tmp.path().join("a").join(&entry.file)).unwrap();
        bit_equal &= arrays[&entry.name].encode() == on_disk;
        bit_equal &= read_array(&tmp.path().join("a").join(&entry.file)).unwrap() == arrays[&entry.name];
    }

    // the stored actions are the ones the simulator produced
    let experts = solve_tasks(&tasks, |t| NestedSpec::for_grid(t.n)).unwrap();
    let records = run_episodes(&experts, &PolicyKind::Expert, 4, 5150, &EpisodeConfig::default()).unwrap();
    let width = arrays["actions_i"].shape[1];
    let stored = arrays["actions_i"].as_i32().unwrap();
    let returns = arrays["returns"].as_f64().unwrap();
    let matches_records = records.iter().enumerate().all(|(r, rec)| {
        returns[r].to_bits() == rec.discounted_return.to_bits()
            && rec.steps.iter().enumerate().all(|(t, s)| stored[r * width + t] == s.a_i.index() as i32)
    });

    outcome(
        identical && bit_equal && matches_records,
        format!(
            "{} files compared: regenerated identical = {identical}, read-back bit-equal = {bit_equal}, matches simulated records = {matches_records}",
            a.len()
        ),
    )
}

fn main() {
    let criteria: [Criterion; 6] = [
        ("factorization equivalence", factorization_equivalence),
        ("belief filter oracle", belief_oracle),
        ("contraction", contraction),
        ("expert quality", expert_quality),
        ("simulator fidelity", simulator_fidelity),
        ("dataset determinism and round-trip", dataset_determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let mut o = check();
        let elapsed = start.elapsed();
        if let Some(budget) = o.budget {
            if elapsed > budget {
                o.pass = false;
                o.detail += &format!("; over the {}s budget", budget.as_secs());
            }
        }
        println!("{} {name}: {} [{:.1}s]", if o.pass { "PASS" } else { "FAIL" }, o.detail, elapsed.as_secs_f64());
        failed += !o.pass as usize;
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
