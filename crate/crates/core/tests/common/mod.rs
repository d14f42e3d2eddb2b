//! Dense joint-model reference built straight from grid rules.
//!
//! Nothing here goes through `FactoredModel`: cells, motion, collisions,
//! rewards and observation likelihoods are re-derived from the task so the
//! factored code can be checked against a brute-force joint model.

#![allow(dead_code)]

use rand::Rng;
use sipl_core::env::generate;
use sipl_core::rng::SimRng;
use sipl_core::task::{Cell, RewardParams, TaskParameter};

pub const A: usize = 6;
pub const JA: usize = 36;

pub struct FlatModel {
    pub cells: Vec<Cell>,
    pub ns: usize,
    pub gamma: f64,
    /// `t[(s * 36 + a) * ns + s']`
    pub t: Vec<f64>,
    /// `r[agent][s * 36 + a]`, agent 0 = i.
    pub r: [Vec<f64>; 2],
    /// `o[(cell * 6 + a_i) * 32 + o]`
    pub o: Vec<f64>,
}

pub enum Regime {
    Never,
    Always,
    Radius(usize),
}

impl Regime {
    fn active(&self, ci: Cell, cj: Cell) -> bool {
        match *self {
            Regime::Never => false,
            Regime::Always => true,
            Regime::Radius(r) => ci.row.abs_diff(cj.row) + ci.col.abs_diff(cj.col) <= r,
        }
    }
}

fn free(task: &TaskParameter, r: isize, c: isize) -> bool {
    let n = task.n as isize;
    r >= 0 && c >= 0 && r < n && c < n && !task.obstacles[(r * n + c) as usize]
}

/// Intended target of action `a` from `cell`, if it is a move onto a free cell.
fn target(task: &TaskParameter, cell: Cell, a: usize) -> Option<Cell> {
    let (dr, dc) = match a {
        0 => (-1, 0),
        1 => (0, 1),
        2 => (1, 0),
        3 => (0, -1),
        _ => return None,
    };
    let (r, c) = (cell.row as isize + dr, cell.col as isize + dc);
    free(task, r, c).then(|| Cell::new(r as usize, c as usize))
}

fn outcomes(task: &TaskParameter, cell: Cell, a: usize) -> Vec<(Cell, f64)> {
    match target(task, cell, a) {
        Some(t) => vec![(t, task.move_success_prob), (cell, 1.0 - task.move_success_prob)],
        None => vec![(cell, 1.0)],
    }
}

fn own_reward(rw: &RewardParams, at_gold: bool, a: usize) -> f64 {
    match (a, at_gold) {
        (5, true) => rw.open_gold,
        (5, false) => rw.open_wrong,
        _ => rw.step,
    }
}

impl FlatModel {
    pub fn new(task: &TaskParameter, regime: Regime) -> Self {
        let n = task.n;
        let cells: Vec<Cell> =
            (0..n * n).filter(|k| !task.obstacles[*k]).map(|k| Cell::new(k / n, k % n)).collect();
        let f = cells.len();
        let ns = f * f;
        let pos = |c: Cell| cells.iter().position(|x| *x == c).unwrap();
        let mut t = vec![0.0; ns * JA * ns];
        let mut r = [vec![0.0; ns * JA], vec![0.0; ns * JA]];
        for (ii, &ci) in cells.iter().enumerate() {
            for (jj, &cj) in cells.iter().enumerate() {
                let s = ii * f + jj;
                let coupled = regime.active(ci, cj);
                for ai in 0..A {
                    for aj in 0..A {
                        let a = ai * A + aj;
                        let base = (s * JA + a) * ns;
                        let mut collide = 0.0;
                        for &(ti, pi) in &outcomes(task, ci, ai) {
                            for &(tj, pj) in &outcomes(task, cj, aj) {
                                let p = pi * pj;
                                if coupled && ti == tj {
                                    t[base + s] += p;
                                    if ti != ci || tj != cj {
                                        collide += p;
                                    }
                                } else {
                                    t[base + pos(ti) * f + pos(tj)] += p;
                                }
                            }
                        }
                        let rw = &task.rewards;
                        let gi = ci == task.gold;
                        let gj = cj == task.gold;
                        if coupled {
                            let shared = gi && gj && ai == 5 && aj == 5;
                            let ri = if shared { rw.shared_gold } else { own_reward(rw, gi, ai) };
                            let rj = if shared { rw.shared_gold } else { own_reward(rw, gj, aj) };
                            r[0][s * JA + a] = ri + rw.collision * collide;
                            r[1][s * JA + a] = rj + rw.collision * collide;
                        } else {
                            r[0][s * JA + a] = own_reward(rw, gi, ai);
                            r[1][s * JA + a] = own_reward(rw, gj, aj);
                        }
                    }
                }
            }
        }
        let mut o = vec![0.0; f * A * 32];
        for (k, &c) in cells.iter().enumerate() {
            let (r0, c0) = (c.row as isize, c.col as isize);
            let walls = [!free(task, r0 - 1, c0), !free(task, r0, c0 + 1), !free(task, r0 + 1, c0), !free(task, r0, c0 - 1)];
            let mut truth = 0u32;
            for (b, w) in walls.iter().enumerate() {
                truth |= (*w as u32) << b;
            }
            truth |= ((c == task.gold) as u32) << 4;
            for a in 0..A {
                let eps = if a == 4 { task.obs_noise_listen } else { task.obs_noise_move };
                for code in 0..32u32 {
                    let flips = (truth ^ code).count_ones() as i32;
                    o[(k * A + a) * 32 + code as usize] = eps.powi(flips) * (1.0 - eps).powi(5 - flips);
                }
            }
        }
        FlatModel { cells, ns, gamma: task.gamma, t, r, o }
    }

    pub fn f(&self) -> usize {
        self.cells.len()
    }

    /// Q after `k` backups from zero, agent `me` (0 = i) against `opp[s * 6 + a]`.
    pub fn value_iteration(&self, me: usize, opp: &[f64], k: usize) -> (Vec<f64>, Vec<f64>) {
        let ns = self.ns;
        let mut u = vec![0.0; ns];
        let mut q = vec![0.0; ns * JA];
        for _ in 0..k {
            for s in 0..ns {
                for a in 0..JA {
                    let row = &self.t[(s * JA + a) * ns..(s * JA + a + 1) * ns];
                    let ev: f64 = row.iter().zip(&u).map(|(p, v)| p * v).sum();
                    q[s * JA + a] = self.r[me][s * JA + a] + self.gamma * ev;
                }
            }
            for s in 0..ns {
                u[s] = (0..A)
                    .map(|own| {
                        (0..A)
                            .map(|other| {
                                let a = if me == 0 { own * A + other } else { other * A + own };
                                opp[s * A + other] * q[s * JA + a]
                            })
                            .sum::<f64>()
                    })
                    .fold(f64::NEG_INFINITY, f64::max);
            }
        }
        (q, u)
    }

    /// Predicted successor mass. `pj[s * 6 + a_j]` is the weight put on
    /// agent j's action; `None` means only the given `a_j` counts.
    pub fn predict(&self, b: &[f64], a_i: usize, a_j: usize, pj: Option<&[f64]>) -> Vec<f64> {
        let ns = self.ns;
        let mut out = vec![0.0; ns];
        for s in 0..ns {
            for aj in 0..A {
                let w = match pj {
                    Some(p) => p[s * A + aj],
                    None => (aj == a_j) as u8 as f64,
                };
                if w == 0.0 || b[s] == 0.0 {
                    continue;
                }
                let a = a_i * A + aj;
                for (s2, slot) in out.iter_mut().enumerate() {
                    *slot += b[s] * w * self.t[(s * JA + a) * ns + s2];
                }
            }
        }
        out
    }

    /// Weights predicted mass by the observation likelihood and normalizes;
    /// `None` when the observation is impossible.
    pub fn correct(&self, predicted: &[f64], a_i: usize, o: usize) -> Option<Vec<f64>> {
        let f = self.f();
        let post: Vec<f64> =
            predicted.iter().enumerate().map(|(s, m)| m * self.o[((s / f) * A + a_i) * 32 + o]).collect();
        let z: f64 = post.iter().sum();
        if z <= 0.0 {
            return None;
        }
        Some(post.into_iter().map(|v| v / z).collect())
    }

    pub fn filter(&self, b: &[f64], a_i: usize, a_j: usize, pj: Option<&[f64]>, o: usize) -> Option<Vec<f64>> {
        self.correct(&self.predict(b, a_i, a_j, pj), a_i, o)
    }
}

/// Small random task with random dynamics, noise, discount and rewards.
pub fn random_small_task(rng: &mut SimRng, seed: u64) -> TaskParameter {
    let n = rng.gen_range(3..=4);
    let density = [0.0, 0.15, 0.25][rng.gen_range(0..3)];
    let support = rng.gen_range(1..=3);
    let mut task = generate(seed, n, 1, density, support).unwrap().remove(0).task;
    task.gamma = rng.gen_range(0.5..0.99);
    task.move_success_prob = [1.0, 0.9, rng.gen_range(0.5..1.0)][rng.gen_range(0..3)];
    task.obs_noise_move = rng.gen_range(0.0..0.3);
    task.obs_noise_listen = rng.gen_range(0.0..0.1);
    task.interaction_radius = rng.gen_range(0..=2);
    task.rewards = RewardParams {
        step: rng.gen_range(-1.0..0.0),
        open_gold: rng.gen_range(1.0..20.0),
        open_wrong: rng.gen_range(-20.0..-1.0),
        collision: rng.gen_range(-10.0..0.0),
        shared_gold: rng.gen_range(0.0..10.0),
    };
    task
}

/// Random row-stochastic table with `rows` rows of six entries.
pub fn random_strategy(rng: &mut SimRng, rows: usize) -> Vec<f64> {
    let mut p = Vec::with_capacity(rows * A);
    for _ in 0..rows {
        let w: Vec<f64> = (0..A).map(|_| rng.gen_range(0.0..1.0f64).powi(2)).collect();
        let z: f64 = w.iter().sum();
        p.extend(w.iter().map(|v| v / z));
    }
    p
}

pub fn random_distribution(rng: &mut SimRng, len: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..len).map(|_| if rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(0.0..1.0) }).collect();
    let z: f64 = w.iter().sum();
    if z == 0.0 {
        let mut d = vec![0.0; len];
        d[0] = 1.0;
        return d;
    }
    w.into_iter().map(|v| v / z).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}
