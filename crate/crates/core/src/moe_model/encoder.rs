use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{Activation, DenseNet, Grads, NetRecord, Params, Tape};
use crate::rng::Rng;
use crate::toylang::{ConversationHistory, Lexicon, TokenId, Utterance, N_INTENTS};

/// Token embedding table, row-major `vocab x dim`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub vocab: usize,
    pub dim: usize,
    pub table: Vec<f64>,
}

impl Embedding {
    /// Lexicon-informed start: valence, one marker column per intent, a
    /// question flag, a neutral-word flag, then small random features.
    pub fn from_lexicon(lex: &Lexicon, dim: usize, rng: &mut Rng) -> Self {
        let vocab = lex.vocab_size();
        assert!(dim >= N_INTENTS + 3, "embedding too narrow for lexicon features");
        let mut table = vec![0.0; vocab * dim];
        for t in 0..vocab {
            let id = t as TokenId;
            let row = &mut table[t * dim..(t + 1) * dim];
            row[0] = lex.valence(id);
            if let Some(i) = lex.marker_of(id) {
                row[1 + i.index()] = 1.0;
            }
            if lex.is_question(id) {
                row[1 + N_INTENTS] = 1.0;
            }
            if lex.valence(id) == 0.0 && lex.marker_of(id).is_none() && !lex.is_question(id) {
                row[2 + N_INTENTS] = 1.0;
            }
            for v in row[3 + N_INTENTS..].iter_mut() {
                *v = rng.random_range(-0.1..0.1);
            }
        }
        Embedding { vocab, dim, table }
    }

    pub fn row(&self, t: TokenId) -> &[f64] {
        let t = t as usize;
        &self.table[t * self.dim..(t + 1) * self.dim]
    }

    /// Mean embedding of the utterance's scored tokens; zero if none.
    pub fn mean_pool(&self, u: &Utterance) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        let mut n = 0usize;
        for t in u.content() {
            for (o, e) in out.iter_mut().zip(self.row(t)) {
                *o += e;
            }
            n += 1;
        }
        if n > 0 {
            for o in out.iter_mut() {
                *o /= n as f64;
            }
        }
        out
    }
}

impl Params for Embedding {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![&self.table]
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.table]
    }
}

/// Encoder: per-slot mean-pooled embeddings of the most recent utterances
/// (right aligned, empty slots zero), a one-hot turn counter, then a dense
/// net down to the latent dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub embedding: Embedding,
    pub net: DenseNet,
    pub slots: usize,
    pub max_turns: usize,
}

pub struct EncoderTape {
    net: Tape,
    slot_tokens: Vec<Vec<TokenId>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderRecord {
    pub embedding: Embedding,
    pub net: NetRecord,
    pub slots: usize,
    pub max_turns: usize,
}

impl Encoder {
    pub fn new(lex: &Lexicon, embed: usize, hidden: usize, d: usize, slots: usize, max_turns: usize, rng: &mut Rng) -> Self {
        let embedding = Embedding::from_lexicon(lex, embed, rng);
        let n_in = slots * embed + max_turns;
        let net = DenseNet::new(&[n_in, hidden, d], Activation::Tanh, Activation::Identity, rng);
        Encoder {
            embedding,
            net,
            slots,
            max_turns,
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.net.out_dim()
    }

    fn slot_tokens(&self, x: &ConversationHistory) -> Vec<Vec<TokenId>> {
        let mut slots = vec![Vec::new(); self.slots];
        let n = x.turns.len().min(self.slots);
        let skip = x.turns.len() - n;
        for (k, u) in x.turns.iter().skip(skip).enumerate() {
            slots[self.slots - n + k] = u.content().collect();
        }
        slots
    }

    fn features(&self, slots: &[Vec<TokenId>], turn: usize) -> Vec<f64> {
        let e = self.embedding.dim;
        let mut f = vec![0.0; self.slots * e + self.max_turns];
        for (s, toks) in slots.iter().enumerate() {
            if toks.is_empty() {
                continue;
            }
            let w = 1.0 / toks.len() as f64;
            for &t in toks {
                for (o, v) in f[s * e..(s + 1) * e].iter_mut().zip(self.embedding.row(t)) {
                    *o += w * v;
                }
            }
        }
        f[self.slots * e + turn.min(self.max_turns - 1)] = 1.0;
        f
    }

    pub fn encode(&self, x: &ConversationHistory) -> Vec<f64> {
        self.net.forward(&self.features(&self.slot_tokens(x), x.turn))
    }

    pub fn encode_tape(&self, x: &ConversationHistory) -> EncoderTape {
        let slot_tokens = self.slot_tokens(x);
        let net = self.net.forward_tape(&self.features(&slot_tokens, x.turn));
        EncoderTape { net, slot_tokens }
    }

    pub fn tape_output(tape: &EncoderTape) -> &[f64] {
        tape.net.output()
    }

    /// Accumulate gradients (embedding table first, then net tensors).
    pub fn backward(&self, tape: &EncoderTape, dz: &[f64], grads: &mut Grads) {
        let mut net_grads = Grads(grads.0.split_off(1));
        let df = self.net.backward(&tape.net, dz, &mut net_grads);
        let e = self.embedding.dim;
        let table = &mut grads.0[0];
        for (s, toks) in tape.slot_tokens.iter().enumerate() {
            if toks.is_empty() {
                continue;
            }
            let w = 1.0 / toks.len() as f64;
            for &t in toks {
                let row = &mut table[t as usize * e..(t as usize + 1) * e];
                for (g, d) in row.iter_mut().zip(&df[s * e..(s + 1) * e]) {
                    *g += w * d;
                }
            }
        }
        grads.0.extend(net_grads.0);
    }

    pub fn to_record(&self) -> EncoderRecord {
        EncoderRecord {
            embedding: self.embedding.clone(),
            net: self.net.to_record(),
            slots: self.slots,
            max_turns: self.max_turns,
        }
    }

    pub fn from_record(r: &EncoderRecord) -> Result<Self> {
        let net = DenseNet::from_record(&r.net)?;
        if net.in_dim() != r.slots * r.embedding.dim + r.max_turns
            || r.embedding.table.len() != r.embedding.vocab * r.embedding.dim
        {
            return Err(Error::Format("encoder record shapes are inconsistent".into()));
        }
        Ok(Encoder {
            embedding: r.embedding.clone(),
            net,
            slots: r.slots,
            max_turns: r.max_turns,
        })
    }
}

impl Params for Encoder {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.embedding.tensors();
        t.extend(self.net.tensors());
        t
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.embedding.tensors_mut();
        t.extend(self.net.tensors_mut());
        t
    }
}
