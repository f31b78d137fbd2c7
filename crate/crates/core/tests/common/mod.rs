//! Independent reference computations shared by the integration and
//! acceptance tests. Nothing here calls into the solver internals: models are
//! read entry by entry through `p`, `reward` and `q` and everything else is
//! recomputed from scratch.

#![allow(dead_code, clippy::needless_range_loop)]

use damdp::{Belief, MdpModel, ObservationModel};
use rand::Rng;

/// Random column-stochastic vector of length `n`; each entry is zeroed with
/// probability `sparsity`, keeping at least one positive entry.
pub fn random_distribution<R: Rng>(rng: &mut R, n: usize, sparsity: f64) -> Vec<f64> {
    let keep = rng.gen_range(0..n);
    let mut v: Vec<f64> = (0..n)
        .map(|i| {
            if i != keep && rng.gen_bool(sparsity) {
                0.0
            } else {
                rng.gen_range(0.05..1.0)
            }
        })
        .collect();
    let total: f64 = v.iter().sum();
    v.iter_mut().for_each(|p| *p /= total);
    v
}

/// Random model with `nx` states, `nu` actions and `ny` observations.
pub fn random_model<R: Rng>(
    rng: &mut R,
    nx: usize,
    nu: usize,
    ny: usize,
    sparsity: f64,
) -> (MdpModel, ObservationModel) {
    let mut flat = vec![0.0; nx * nx * nu];
    for x in 0..nx {
        for u in 0..nu {
            for (d, p) in random_distribution(rng, nx, sparsity)
                .into_iter()
                .enumerate()
            {
                flat[(d * nx + x) * nu + u] = p;
            }
        }
    }
    let reward = (0..nx * nu).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let discount = rng.gen_range(0.5..0.95);
    let model = MdpModel::from_flat(nx, nu, flat, reward, discount).unwrap();
    let mut lik = vec![vec![0.0; nx]; ny];
    for x in 0..nx {
        for (y, q) in random_distribution(rng, ny, sparsity)
            .into_iter()
            .enumerate()
        {
            lik[y][x] = q;
        }
    }
    (model, ObservationModel::from_matrix(&lik).unwrap())
}

pub fn random_belief<R: Rng>(rng: &mut R, n: usize, sparsity: f64) -> Belief {
    Belief::new(random_distribution(rng, n, sparsity)).unwrap()
}

/// Solve `a x = b` by Gaussian elimination with partial pivoting.
pub fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// Value of a stationary deterministic policy: `(I − λ P_π) V = R_π`.
pub fn policy_value(model: &MdpModel, actions: &[usize]) -> Vec<f64> {
    let n = model.num_states();
    let lambda = model.discount();
    let a = (0..n)
        .map(|x| {
            (0..n)
                .map(|d| f64::from(u8::from(x == d)) - lambda * model.p(d, x, actions[x]))
                .collect()
        })
        .collect();
    let b = (0..n).map(|x| model.reward(x, actions[x])).collect();
    solve_linear(a, b)
}

/// Every deterministic policy, in lexicographic order of action vectors.
pub fn all_policies(num_states: usize, num_actions: usize) -> Vec<Vec<usize>> {
    let count = num_actions.pow(num_states as u32);
    (0..count)
        .map(|mut k| {
            let mut p = vec![0; num_states];
            for slot in p.iter_mut().rev() {
                *slot = k % num_actions;
                k /= num_actions;
            }
            p
        })
        .collect()
}

/// Optimal value and the first (lexicographically) policy attaining it.
pub fn best_policy_by_enumeration(model: &MdpModel) -> (Vec<f64>, Vec<usize>) {
    let mut best: Option<(Vec<f64>, Vec<usize>)> = None;
    for p in all_policies(model.num_states(), model.num_actions()) {
        let v = policy_value(model, &p);
        let better = match &best {
            None => true,
            Some((bv, _)) => v.iter().sum::<f64>() > bv.iter().sum::<f64>() + 1e-12,
        };
        if better {
            best = Some((v, p));
        }
    }
    best.unwrap()
}

/// `P_a[x'][x] = p(x' | x, π(x))`.
pub fn policy_matrix(model: &MdpModel, actions: &[usize]) -> Vec<Vec<f64>> {
    let n = model.num_states();
    (0..n)
        .map(|d| (0..n).map(|x| model.p(d, x, actions[x])).collect())
        .collect()
}

/// Forward algorithm for the hidden Markov model `(P_a, q)` started from
/// `o0`: returns the normalized filtering distribution after each symbol.
pub fn forward_filter(
    chain: &[Vec<f64>],
    obs: &ObservationModel,
    o0: &[f64],
    symbols: &[usize],
) -> Vec<Vec<f64>> {
    let n = o0.len();
    let mut alpha = o0.to_vec();
    let mut out = Vec::new();
    for &y in symbols {
        let mut next: Vec<f64> = (0..n)
            .map(|d| obs.q(y, d) * (0..n).map(|x| chain[d][x] * alpha[x]).sum::<f64>())
            .collect();
        let z: f64 = next.iter().sum();
        next.iter_mut().for_each(|v| *v /= z);
        out.push(next.clone());
        alpha = next;
    }
    out
}

/// One forward-filter step; `None` if the symbol has zero probability.
pub fn filter_step(
    chain: &[Vec<f64>],
    obs: &ObservationModel,
    o: &[f64],
    y: usize,
) -> Option<Vec<f64>> {
    let n = o.len();
    let mut next: Vec<f64> = (0..n)
        .map(|d| obs.q(y, d) * (0..n).map(|x| chain[d][x] * o[x]).sum::<f64>())
        .collect();
    let z: f64 = next.iter().sum();
    if z <= 0.0 {
        return None;
    }
    next.iter_mut().for_each(|v| *v /= z);
    Some(next)
}

/// `(R1, R2*, R3)` of an open-loop sequence by summing over every joint
/// state/observation path, each weighted by the product of its
/// `q(y|x') p(x'|x,u)` factors.
pub fn path_enumeration(
    model: &MdpModel,
    obs: &ObservationModel,
    chain: &[Vec<f64>],
    nominal: &[f64],
    x0: usize,
    o0: &[f64],
    sequence: &[usize],
) -> (f64, f64, f64) {
    struct Acc {
        r1: f64,
        r2: f64,
        r3: f64,
    }
    #[allow(clippy::too_many_arguments)]
    fn walk(
        model: &MdpModel,
        obs: &ObservationModel,
        chain: &[Vec<f64>],
        nominal: &[f64],
        seq: &[usize],
        tau: usize,
        x: usize,
        o: &[f64],
        prob: f64,
        acc: &mut Acc,
    ) {
        let lambda = model.discount();
        let n = seq.len();
        if tau > 0 && tau < n {
            acc.r3 += lambda.powi(tau as i32) * prob * o[x];
        }
        if tau == n {
            acc.r2 += lambda.powi(n as i32) * prob * nominal[x];
            return;
        }
        let u = seq[tau];
        acc.r1 += lambda.powi(tau as i32) * prob * model.reward(x, u);
        for d in 0..model.num_states() {
            let p = model.p(d, x, u);
            if p == 0.0 {
                continue;
            }
            if tau + 1 == n {
                // the last belief is never scored
                walk(
                    model,
                    obs,
                    chain,
                    nominal,
                    seq,
                    tau + 1,
                    d,
                    o,
                    prob * p,
                    acc,
                );
                continue;
            }
            for y in 0..obs.num_observations() {
                let w = obs.q(y, d) * p;
                if w == 0.0 {
                    continue;
                }
                let next = filter_step(chain, obs, o, y).expect("realizable observation");
                walk(
                    model,
                    obs,
                    chain,
                    nominal,
                    seq,
                    tau + 1,
                    d,
                    &next,
                    prob * w,
                    acc,
                );
            }
        }
    }
    let mut acc = Acc {
        r1: 0.0,
        r2: 0.0,
        r3: 0.0,
    };
    walk(
        model, obs, chain, nominal, sequence, 0, x0, o0, 1.0, &mut acc,
    );
    (acc.r1, acc.r2, acc.r3)
}

/// `λ^N e_{x0}ᵀ P_{μ0} ⋯ P_{μN−1} V`, written as repeated vector-matrix products.
pub fn terminal_value_by_products(
    model: &MdpModel,
    nominal: &[f64],
    x0: usize,
    sequence: &[usize],
) -> f64 {
    let n = model.num_states();
    let mut row = vec![0.0; n];
    row[x0] = 1.0;
    for &u in sequence {
        row = (0..n)
            .map(|d| (0..n).map(|x| row[x] * model.p(d, x, u)).sum())
            .collect();
    }
    let v: f64 = row.iter().zip(nominal).map(|(a, b)| a * b).sum();
    model.discount().powi(sequence.len() as i32) * v
}

/// Stationary distribution of a column-stochastic matrix by power iteration.
pub fn stationary_distribution(chain: &[Vec<f64>]) -> Vec<f64> {
    let n = chain.len();
    let mut pi = vec![1.0 / n as f64; n];
    for _ in 0..100_000 {
        let next: Vec<f64> = (0..n)
            .map(|d| (0..n).map(|x| chain[d][x] * pi[x]).sum())
            .collect();
        let delta = next
            .iter()
            .zip(&pi)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        pi = next;
        if delta < 1e-15 {
            break;
        }
    }
    pi
}
