use serde::{Deserialize, Serialize};

use super::tabular::TabularMoEMDP;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViResult {
    pub v: Vec<f64>,
    pub q: Vec<Vec<f64>>,
    /// Greedy action per state, ties to the lowest index.
    pub policy: Vec<usize>,
    pub sweeps: usize,
}

fn backup(mdp: &TabularMoEMDP, v: &[f64], s: usize, a: usize) -> f64 {
    mdp.reward[s][a] + mdp.gamma * mdp.trans[s][a].iter().map(|&(s2, p)| p * v[s2]).sum::<f64>()
}

fn argmax_first(xs: &[f64]) -> usize {
    let mut best = 0;
    for k in 1..xs.len() {
        if xs[k] > xs[best] {
            best = k;
        }
    }
    best
}

/// One synchronous Bellman optimality sweep.
pub fn bellman_sweep(mdp: &TabularMoEMDP, v: &[f64]) -> Vec<f64> {
    (0..mdp.n_states)
        .map(|s| {
            (0..mdp.n_actions)
                .map(|a| backup(mdp, v, s, a))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

/// Value iteration from the pessimistic start `r_min / (1 - gamma)` until
/// the sup-norm Bellman residual drops below `tol`.
pub fn value_iteration(mdp: &TabularMoEMDP, tol: f64) -> ViResult {
    let r_min = mdp
        .reward
        .iter()
        .flatten()
        .copied()
        .fold(0.0f64, f64::min);
    let mut v = vec![r_min / (1.0 - mdp.gamma); mdp.n_states];
    let mut sweeps = 0;
    loop {
        let nv = bellman_sweep(mdp, &v);
        sweeps += 1;
        let res = nv.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = nv;
        if res < tol || sweeps > 100_000 {
            break;
        }
    }
    let q: Vec<Vec<f64>> = (0..mdp.n_states)
        .map(|s| (0..mdp.n_actions).map(|a| backup(mdp, &v, s, a)).collect())
        .collect();
    let policy = q.iter().map(|row| argmax_first(row)).collect();
    ViResult { v, q, policy, sweeps }
}

/// Greedy policy with respect to a Q table.
pub fn greedy_policy(q: &[Vec<f64>]) -> Vec<usize> {
    q.iter().map(|row| argmax_first(row)).collect()
}

/// Argmax of the immediate reward, ties to the lowest index.
pub fn myopic_policy(mdp: &TabularMoEMDP) -> Vec<usize> {
    greedy_policy(&mdp.reward)
}

/// Exact value of a stationary deterministic policy.
pub fn policy_eval_fixed(mdp: &TabularMoEMDP, policy: &[usize]) -> Vec<f64> {
    let mut v = vec![0.0; mdp.n_states];
    for _ in 0..100_000 {
        let nv: Vec<f64> = (0..mdp.n_states).map(|s| backup(mdp, &v, s, policy[s])).collect();
        let res = nv.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = nv;
        if res < 1e-13 {
            break;
        }
    }
    v
}

/// Value of always following expert `i`.
pub fn policy_eval(mdp: &TabularMoEMDP, i: usize) -> Vec<f64> {
    policy_eval_fixed(mdp, &vec![i; mdp.n_states])
}

/// Discounted return of a deterministic policy simulated from the initial
/// state along the most likely successor (exact for deterministic MDPs).
pub fn policy_return(mdp: &TabularMoEMDP, policy: &[usize]) -> f64 {
    let (mut s, mut ret, mut disc) = (mdp.initial, 0.0, 1.0);
    while !mdp.terminal[s] {
        let a = policy[s];
        ret += disc * mdp.reward[s][a];
        disc *= mdp.gamma;
        s = mdp.successor(s, a);
    }
    ret
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::build_tabular;
    use crate::toylang::{Intent, Lexicon};
    use crate::user_sim::{EnvConfig, UserEnv};

    fn env_mdp() -> TabularMoEMDP {
        let env = UserEnv::new(EnvConfig::noise_free(), Lexicon::shipped()).unwrap();
        build_tabular(&env, &Intent::ALL).unwrap()
    }

    #[test]
    fn single_state_geometric_series() {
        let mdp = TabularMoEMDP::deterministic(vec![vec![0]], vec![vec![1.0]], vec![false], 0, 0.8);
        let r = value_iteration(&mdp, 1e-12);
        assert!((r.v[0] - 5.0).abs() < 1e-9);
    }

    #[test]
    fn zero_reward_zero_value() {
        let mdp = TabularMoEMDP::deterministic(vec![vec![1, 0], vec![1, 1]], vec![vec![0.0; 2]; 2], vec![false; 2], 0, 0.8);
        assert!(value_iteration(&mdp, 1e-12).v.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tabular_structure() {
        let mdp = env_mdp();
        assert!(mdp.n_states <= 120);
        mdp.check().unwrap();
        for s in 0..mdp.n_states {
            let (mb, _, turn) = TabularMoEMDP::decode_state(s);
            assert_eq!(mdp.terminal[s], turn == 5);
            if !mdp.terminal[s] {
                let (nb, _, _) = TabularMoEMDP::decode_state(mdp.successor(s, Intent::Rage.index()));
                assert!(nb < mb || mb == 0);
            }
        }
    }

    #[test]
    fn greedy_gap_is_constructed() {
        let mdp = env_mdp();
        let vi = value_iteration(&mdp, 1e-10);
        let greedy = policy_return(&mdp, &myopic_policy(&mdp));
        let opt = vi.v[mdp.initial];
        assert!(opt - greedy >= 0.5);
        assert!((opt - 0.59328).abs() < 1e-9);
        assert!((greedy + 0.5248).abs() < 1e-9);
        assert!((policy_return(&mdp, &vi.policy) - opt).abs() < 1e-9);
    }

    #[test]
    fn expert_values_bounded_by_optimum() {
        let mdp = env_mdp();
        let vi = value_iteration(&mdp, 1e-12);
        for i in 0..mdp.n_actions {
            let vi_i = policy_eval(&mdp, i);
            for s in 0..mdp.n_states {
                assert!(vi_i[s] <= vi.v[s] + 1e-9);
            }
            // restriction oracle: VI on the one-action MDP
            let restricted = TabularMoEMDP {
                n_actions: 1,
                trans: mdp.trans.iter().map(|r| vec![r[i].clone()]).collect(),
                reward: mdp.reward.iter().map(|r| vec![r[i]]).collect(),
                ..mdp.clone()
            };
            let vr = value_iteration(&restricted, 1e-13).v;
            for s in 0..mdp.n_states {
                assert!((vr[s] - vi_i[s]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn constant_reward_expert_value() {
        let mdp = TabularMoEMDP::deterministic(
            vec![vec![1], vec![2], vec![3], vec![4], vec![5], vec![5]],
            vec![vec![0.3]; 5].into_iter().chain([vec![0.0]]).collect(),
            vec![false, false, false, false, false, true],
            0,
            0.8,
        );
        let v = policy_eval(&mdp, 0);
        assert!((v[0] - 0.3 * (1.0 - 0.8f64.powi(5)) / 0.2).abs() < 1e-12);
    }

    #[test]
    fn sweeps_are_monotone_from_pessimistic_start() {
        let mdp = env_mdp();
        let mut v = vec![-1.0 / (1.0 - mdp.gamma); mdp.n_states];
        for _ in 0..10 {
            let nv = bellman_sweep(&mdp, &v);
            assert!(nv.iter().zip(&v).all(|(a, b)| a >= b));
            v = nv;
        }
    }
}
