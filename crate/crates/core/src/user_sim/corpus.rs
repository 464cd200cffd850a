use rand::Rng as _;

use super::config::{mood_band, trust_band};
use super::env::{Environment, UserEnv};
use crate::rng::Rng;
use crate::toylang::{gen_template, sample_level, Conversation, Intent, Utterance, N_INTENTS};

/// Scripted human operator used to produce the pre-training corpus. It can
/// see the user's mood and trust, and its intent preferences shift with
/// them and with the turn, so the next utterance depends on the history.
#[derive(Clone, Debug, Default)]
pub struct HumanAgent;

impl HumanAgent {
    pub fn weights(&self, mood: f64, trust: f64, turn: usize) -> [f64; N_INTENTS] {
        use Intent::*;
        let mut w = [1.0; N_INTENTS];
        w[Rage.index()] = 0.5;
        w[Dejection.index()] = 0.5;
        let mb = mood_band(mood);
        let tb = trust_band(trust);
        if mb <= 1 {
            w[Empathy.index()] += 3.0;
            w[Sorrow.index()] += 1.5;
            w[Questioning.index()] += 1.5;
        }
        if mb >= 3 {
            w[Cheerfulness.index()] += 3.0;
            w[Optimism.index()] += 1.5;
            w[Contentment.index()] += 1.5;
        }
        if tb >= 2 {
            w[Cheerfulness.index()] += 2.0;
            w[Optimism.index()] += 1.0;
        }
        if tb == 0 {
            w[Questioning.index()] += 2.0;
            w[Empathy.index()] += 1.0;
        }
        if turn == 0 {
            w[Primitive.index()] += 2.0;
            w[Questioning.index()] += 1.0;
        }
        if turn >= 3 {
            w[Exploration.index()] += 1.5;
            w[Contentment.index()] += 1.0;
        }
        w
    }

    pub fn choose(&self, mood: f64, trust: f64, turn: usize, rng: &mut Rng) -> Intent {
        let w = self.weights(mood, trust, turn);
        let total: f64 = w.iter().sum();
        let mut u = rng.random::<f64>() * total;
        for (k, &wk) in w.iter().enumerate() {
            if u < wk {
                return Intent::ALL[k];
            }
            u -= wk;
        }
        Intent::ALL[N_INTENTS - 1]
    }
}

/// Conversations between the scripted human agent and the user.
pub fn generate_corpus(env: &UserEnv, n: usize, rng: &mut Rng) -> Vec<Conversation> {
    let agent = HumanAgent;
    (0..n)
        .map(|_| {
            let (hist, mut state) = env.reset(rng);
            let mut turns = vec![hist.turns[0].tokens.clone()];
            let mut intents = vec![env.rules.reply_intent(state.trust)];
            loop {
                let i = agent.choose(state.mood, state.trust, state.turn, rng);
                let level = sample_level(i, rng);
                let y: Utterance = gen_template(&env.lex, i, level, rng);
                let out = env.step(&state, &y, rng);
                turns.push(y.tokens);
                intents.push(i);
                turns.push(out.reply.tokens);
                intents.push(env.rules.reply_intent(out.next.trust));
                state = out.next;
                if out.done {
                    break;
                }
            }
            Conversation { turns, intents }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::toylang::Lexicon;
    use crate::user_sim::EnvConfig;

    #[test]
    fn conversations_alternate_and_have_horizon_length() {
        let env = UserEnv::new(EnvConfig::default(), Lexicon::shipped()).unwrap();
        let c = generate_corpus(&env, 20, &mut stream(1, &[]));
        for conv in &c {
            assert_eq!(conv.turns.len(), 11);
            assert_eq!(conv.intents.len(), 11);
        }
    }

    #[test]
    fn preferences_depend_on_state() {
        let a = HumanAgent;
        assert_ne!(a.weights(-0.8, 0.1, 0), a.weights(0.8, 0.9, 4));
    }
}
