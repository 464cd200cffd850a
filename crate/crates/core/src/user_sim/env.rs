use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::{snap_mood, snap_trust, EnvConfig, RuleTable};
use crate::error::Result;
use crate::rng::Rng;
use crate::toylang::{gen_template, ConversationHistory, Intent, Lexicon, Utterance, N_INTENTS};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserState {
    pub mood: f64,
    pub trust: f64,
    pub turn: usize,
    pub topic: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub reply: Utterance,
    pub reward: f64,
    pub next: UserState,
    pub done: bool,
    /// The intent the user read into the agent's utterance.
    pub perceived: Intent,
}

/// Anything that can host a conversation.
pub trait Environment {
    fn horizon(&self) -> usize;
    fn gamma(&self) -> f64;
    fn reset(&self, rng: &mut Rng) -> (ConversationHistory, UserState);
    fn step(&self, state: &UserState, agent: &Utterance, rng: &mut Rng) -> StepOutcome;
}

/// The scripted user.
#[derive(Clone, Debug)]
pub struct UserEnv {
    pub cfg: EnvConfig,
    pub rules: RuleTable,
    pub lex: Lexicon,
}

impl UserEnv {
    pub fn new(cfg: EnvConfig, lex: Lexicon) -> Result<Self> {
        cfg.validate()?;
        let rules = RuleTable::load(cfg.rules_path.as_deref())?;
        Ok(UserEnv { cfg, rules, lex })
    }

    pub fn with_rules(cfg: EnvConfig, rules: RuleTable, lex: Lexicon) -> Self {
        UserEnv { cfg, rules, lex }
    }

    fn reply(&self, mood: f64, trust: f64, rng: &mut Rng) -> Utterance {
        gen_template(&self.lex, self.rules.reply_intent(trust), mood, rng)
    }

    /// Deterministic part of a transition: next (mood, trust) before noise.
    pub fn transition(&self, intent: Intent, mood: f64, trust: f64) -> (f64, f64) {
        let (dm, dt) = self.rules.delta(intent, mood, trust);
        ((mood + dm).clamp(-1.0, 1.0), (trust + dt).clamp(0.0, 1.0))
    }
}

impl Environment for UserEnv {
    fn horizon(&self) -> usize {
        self.cfg.horizon
    }

    fn gamma(&self) -> f64 {
        self.cfg.gamma
    }

    fn reset(&self, rng: &mut Rng) -> (ConversationHistory, UserState) {
        let c = &self.cfg;
        let (mood, trust) = if c.noise_free {
            (snap_mood(c.init_mood_mean), snap_trust(c.init_trust))
        } else {
            let m = if c.init_mood_std > 0.0 {
                Normal::new(c.init_mood_mean, c.init_mood_std).expect("valid normal").sample(rng)
            } else {
                c.init_mood_mean
            };
            (m.clamp(-1.0, 1.0), c.init_trust.clamp(0.0, 1.0))
        };
        let topic = rng.random_range(0..c.n_topics.max(1));
        let state = UserState {
            mood,
            trust,
            turn: 0,
            topic,
        };
        let query = self.reply(mood, trust, rng);
        (ConversationHistory::new(query), state)
    }

    fn step(&self, state: &UserState, agent: &Utterance, rng: &mut Rng) -> StepOutcome {
        assert!(state.turn < self.cfg.horizon, "step called on a finished conversation");
        let perceived = self.lex.infer_intent(agent);
        let (mut mood, mut trust) = self.transition(perceived, state.mood, state.trust);
        if self.cfg.noise_free {
            mood = snap_mood(mood);
            trust = snap_trust(trust);
        } else if self.cfg.noise > 0.0 {
            let eps: f64 = Normal::new(0.0, self.cfg.noise).expect("valid normal").sample(rng);
            mood = (mood + eps).clamp(-1.0, 1.0);
        }
        let reply = self.reply(mood, trust, rng);
        let reward = self.lex.sent_score(&reply);
        let next = UserState {
            mood,
            trust,
            turn: state.turn + 1,
            topic: state.topic,
        };
        StepOutcome {
            reply,
            reward,
            done: next.turn >= self.cfg.horizon,
            next,
            perceived,
        }
    }
}

/// What a policy says at a turn, and which expert proposed it if known.
#[derive(Clone, Debug, PartialEq)]
pub struct Action {
    pub utterance: Utterance,
    pub expert: Option<usize>,
}

pub trait AgentPolicy {
    fn act(&mut self, history: &ConversationHistory, rng: &mut Rng) -> Action;
}

impl<F: FnMut(&ConversationHistory, &mut Rng) -> Action> AgentPolicy for F {
    fn act(&mut self, history: &ConversationHistory, rng: &mut Rng) -> Action {
        self(history, rng)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TurnRecord {
    pub context: ConversationHistory,
    pub state: UserState,
    pub action: Utterance,
    pub expert: Option<usize>,
    pub reply: Utterance,
    pub reward: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    pub ret: f64,
    pub turns: Vec<TurnRecord>,
    /// Selections per expert index.
    pub counts: Vec<usize>,
}

pub fn discounted_return(rewards: &[f64], gamma: f64) -> f64 {
    rewards
        .iter()
        .enumerate()
        .map(|(k, r)| gamma.powi(k as i32) * r)
        .sum()
}

/// Play one conversation to the horizon.
pub fn rollout<E: Environment + ?Sized, P: AgentPolicy + ?Sized>(env: &E, policy: &mut P, rng: &mut Rng) -> Rollout {
    let (mut history, mut state) = env.reset(rng);
    let mut turns = Vec::with_capacity(env.horizon());
    let mut counts = vec![0; N_INTENTS];
    loop {
        let act = policy.act(&history, rng);
        if let Some(e) = act.expert {
            if e >= counts.len() {
                counts.resize(e + 1, 0);
            }
            counts[e] += 1;
        }
        let out = env.step(&state, &act.utterance, rng);
        let context = history.clone();
        history.push(act.utterance.clone());
        history.push(out.reply.clone());
        history.turn = out.next.turn;
        turns.push(TurnRecord {
            context,
            state,
            action: act.utterance,
            expert: act.expert,
            reply: out.reply,
            reward: out.reward,
        });
        state = out.next;
        if out.done {
            break;
        }
    }
    let rewards: Vec<f64> = turns.iter().map(|t| t.reward).collect();
    Rollout {
        ret: discounted_return(&rewards, env.gamma()),
        turns,
        counts,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::toylang::{gen_template, EOS};

    struct ConstEnv(f64);
    impl Environment for ConstEnv {
        fn horizon(&self) -> usize {
            5
        }
        fn gamma(&self) -> f64 {
            0.8
        }
        fn reset(&self, _: &mut Rng) -> (ConversationHistory, UserState) {
            let s = UserState { mood: 0.0, trust: 0.0, turn: 0, topic: 0 };
            (ConversationHistory::new(Utterance::new(vec![EOS])), s)
        }
        fn step(&self, s: &UserState, _: &Utterance, _: &mut Rng) -> StepOutcome {
            let next = UserState { turn: s.turn + 1, ..*s };
            StepOutcome {
                reply: Utterance::new(vec![EOS]),
                reward: self.0,
                done: next.turn == 5,
                next,
                perceived: Intent::Primitive,
            }
        }
    }

    fn silent(_: &ConversationHistory, _: &mut Rng) -> Action {
        Action { utterance: Utterance::new(vec![EOS]), expert: Some(0) }
    }

    #[test]
    fn constant_reward_returns() {
        let mut rng = stream(0, &[]);
        let r = rollout(&ConstEnv(1.0), &mut silent, &mut rng);
        assert!((r.ret - 3.3616).abs() < 1e-12);
        assert_eq!(r.counts[0], 5);
        assert_eq!(rollout(&ConstEnv(0.0), &mut silent, &mut rng).ret, 0.0);
    }

    fn env(cfg: EnvConfig) -> UserEnv {
        UserEnv::new(cfg, Lexicon::shipped()).unwrap()
    }

    #[test]
    fn reset_is_reproducible_and_centred() {
        let e = env(EnvConfig::default());
        let a = e.reset(&mut stream(5, &[]));
        let b = e.reset(&mut stream(5, &[]));
        assert_eq!(a, b);
        assert_eq!(a.0.turns.len(), 1);
        let mut rng = stream(6, &[]);
        let n = 10_000;
        let mean = (0..n).map(|_| e.reset(&mut rng).1.mood).sum::<f64>() / n as f64;
        assert!((mean + 0.4).abs() < 0.05);
    }

    fn say(e: &UserEnv, i: Intent, rng: &mut Rng) -> Utterance {
        gen_template(&e.lex, i, 0.0, rng)
    }

    #[test]
    fn scripted_rows() {
        let e = env(EnvConfig::noise_free());
        let mut rng = stream(1, &[]);
        let s = UserState { mood: -0.4, trust: 0.375, turn: 0, topic: 0 };
        // empathy on a low mood builds trust with a small mood lift
        let (m, t) = e.transition(Intent::Empathy, s.mood, s.trust);
        assert!((m - (-0.3)).abs() < 1e-12 && (t - 0.675).abs() < 1e-12);
        let out = e.step(&s, &say(&e, Intent::Empathy, &mut rng), &mut rng);
        assert_eq!(out.perceived, Intent::Empathy);
        assert!((out.reward - out.next.mood).abs() < 1e-12);
        // rage always costs 0.4 mood
        for tr in [0.1, 0.9] {
            let (m, _) = e.transition(Intent::Rage, 0.5, tr);
            assert!((m - 0.1).abs() < 1e-12);
        }
        // cheer pays off only once trust is built
        assert!((e.transition(Intent::Cheerfulness, 0.0, 0.625).0 - 0.5).abs() < 1e-12);
        assert!(e.transition(Intent::Cheerfulness, 0.0, 0.375).0 < 0.0);
    }

    #[test]
    fn hand_policy_reaches_known_return() {
        let e = env(EnvConfig::noise_free());
        let plan = [
            Intent::Empathy,
            Intent::Empathy,
            Intent::Cheerfulness,
            Intent::Cheerfulness,
            Intent::Cheerfulness,
        ];
        let mut k = 0;
        let lex = e.lex.clone();
        let mut pol = |_: &ConversationHistory, rng: &mut Rng| {
            let u = gen_template(&lex, plan[k], 0.0, rng);
            k += 1;
            Action { utterance: u, expert: Some(plan[k - 1].index()) }
        };
        let r = rollout(&e, &mut pol, &mut stream(2, &[]));
        assert!((r.ret - 0.59328).abs() < 1e-9, "{}", r.ret);
        assert!(r.turns.iter().all(|t| (-1.0..=1.0).contains(&t.reward)));
    }

    #[test]
    #[should_panic(expected = "finished conversation")]
    fn stepping_past_the_horizon_panics() {
        let e = env(EnvConfig::noise_free());
        let mut rng = stream(3, &[]);
        let s = UserState { mood: 0.0, trust: 0.5, turn: 5, topic: 0 };
        e.step(&s, &Utterance::new(vec![EOS]), &mut rng);
    }
}
