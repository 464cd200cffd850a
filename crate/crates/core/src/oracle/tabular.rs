use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::toylang::Intent;
use crate::user_sim::{mood_band, trust_band, UserEnv, MOOD_BANDS, MOOD_MID, TRUST_BANDS, TRUST_MID};

/// A finite MDP whose actions are expert indices. Terminal states absorb
/// with zero reward.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularMoEMDP {
    pub n_states: usize,
    pub n_actions: usize,
    /// `trans[s][a]` lists `(next, probability)`.
    pub trans: Vec<Vec<Vec<(usize, f64)>>>,
    pub reward: Vec<Vec<f64>>,
    pub terminal: Vec<bool>,
    pub initial: usize,
    pub gamma: f64,
}

impl TabularMoEMDP {
    /// Deterministic MDP from `next[s][a]` and `reward[s][a]`.
    pub fn deterministic(
        next: Vec<Vec<usize>>,
        reward: Vec<Vec<f64>>,
        terminal: Vec<bool>,
        initial: usize,
        gamma: f64,
    ) -> Self {
        let n_states = next.len();
        let n_actions = next.first().map(|r| r.len()).unwrap_or(0);
        let trans = next
            .into_iter()
            .map(|row| row.into_iter().map(|s2| vec![(s2, 1.0)]).collect())
            .collect();
        TabularMoEMDP {
            n_states,
            n_actions,
            trans,
            reward,
            terminal,
            initial,
            gamma,
        }
    }

    pub fn check(&self) -> Result<()> {
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let p: f64 = self.trans[s][a].iter().map(|x| x.1).sum();
                if (p - 1.0).abs() > 1e-12 {
                    return Err(Error::Verification(format!("row ({s},{a}) sums to {p}")));
                }
                if self.terminal[s] && (self.reward[s][a] != 0.0 || self.trans[s][a] != vec![(s, 1.0)]) {
                    return Err(Error::Verification(format!("terminal state {s} does not absorb")));
                }
            }
        }
        Ok(())
    }

    /// Index of the environment state (mood band, trust band, turn).
    pub fn state_index(mood_band: usize, trust_band: usize, turn: usize) -> usize {
        (turn * MOOD_BANDS + mood_band) * TRUST_BANDS + trust_band
    }

    pub fn decode_state(s: usize) -> (usize, usize, usize) {
        let tb = s % TRUST_BANDS;
        let mb = (s / TRUST_BANDS) % MOOD_BANDS;
        let turn = s / (TRUST_BANDS * MOOD_BANDS);
        (mb, tb, turn)
    }

    pub fn successor(&self, s: usize, a: usize) -> usize {
        self.trans[s][a]
            .iter()
            .max_by(|x, y| x.1.total_cmp(&y.1))
            .map(|x| x.0)
            .expect("non-empty transition row")
    }
}

/// Exact abstraction of the noise-free environment where expert `k` always
/// speaks with intent `intents[k]`.
pub fn build_tabular(env: &UserEnv, intents: &[Intent]) -> Result<TabularMoEMDP> {
    if !env.cfg.noise_free {
        return Err(Error::Config("the tabular abstraction needs the noise-free environment".into()));
    }
    let h = env.cfg.horizon;
    let n_states = (h + 1) * MOOD_BANDS * TRUST_BANDS;
    let n_actions = intents.len();
    let mut next = vec![vec![0; n_actions]; n_states];
    let mut reward = vec![vec![0.0; n_actions]; n_states];
    let mut terminal = vec![false; n_states];
    for s in 0..n_states {
        let (mb, tb, turn) = TabularMoEMDP::decode_state(s);
        if turn == h {
            terminal[s] = true;
            next[s] = vec![s; n_actions];
            continue;
        }
        for (a, &intent) in intents.iter().enumerate() {
            let (dm, dt) = env.rules.delta(intent, MOOD_MID[mb], TRUST_MID[tb]);
            let m2 = (MOOD_MID[mb] + dm).clamp(-1.0, 1.0);
            let t2 = (TRUST_MID[tb] + dt).clamp(0.0, 1.0);
            let (nb, nt) = (mood_band(m2), trust_band(t2));
            next[s][a] = TabularMoEMDP::state_index(nb, nt, turn + 1);
            // the user's reply is scored exactly at the band midpoint
            reward[s][a] = MOOD_MID[nb];
        }
    }
    let initial = TabularMoEMDP::state_index(
        mood_band(env.cfg.init_mood_mean),
        trust_band(env.cfg.init_trust),
        0,
    );
    let mdp = TabularMoEMDP::deterministic(next, reward, terminal, initial, env.cfg.gamma);
    mdp.check()?;
    Ok(mdp)
}
