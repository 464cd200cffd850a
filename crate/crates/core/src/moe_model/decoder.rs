use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{Activation, Dense, DenseNet, Grads, NetRecord, Params};
use crate::rng::Rng;
use crate::toylang::{TokenId, Utterance, EOS, MAX_LEN, PAD, SOS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub vocab: usize,
    pub max_len: usize,
    pub eos: TokenId,
    /// Tokens that can never be emitted.
    pub masked: Vec<TokenId>,
    /// Token fed at position 0.
    pub start: TokenId,
    /// Padding token that ends a teacher-forced sequence, if the vocabulary
    /// has one.
    pub pad: Option<TokenId>,
}

impl DecoderConfig {
    pub fn standard(vocab: usize) -> Self {
        DecoderConfig {
            vocab,
            max_len: MAX_LEN,
            eos: EOS,
            masked: vec![PAD, SOS],
            start: SOS,
            pad: Some(PAD),
        }
    }
}

/// Autoregressive decoder. Each step sees `[z', onehot(prev), onehot(pos)]`
/// through one tanh layer and emits logits over the vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoder {
    pub cfg: DecoderConfig,
    pub net: DenseNet,
    d: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    pub utterance: Utterance,
    /// `log Psi(Y | z')` at unit temperature.
    pub logprob: f64,
    pub token_logprobs: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderRecord {
    pub cfg: DecoderConfig,
    pub latent_dim: usize,
    pub net: NetRecord,
}

struct StepCache {
    hidden: Vec<f64>,
    probs: Vec<f64>,
}

impl Decoder {
    pub fn new(cfg: DecoderConfig, d: usize, hidden: usize, rng: &mut Rng) -> Self {
        let n_in = d + cfg.vocab + cfg.max_len;
        let net = DenseNet::new(&[n_in, hidden, cfg.vocab], Activation::Tanh, Activation::Identity, rng);
        Decoder { cfg, net, d }
    }

    pub fn latent_dim(&self) -> usize {
        self.d
    }

    fn l1(&self) -> &Dense {
        &self.net.layers[0]
    }

    fn l2(&self) -> &Dense {
        &self.net.layers[1]
    }

    /// `W_z z' + b` of the first layer, shared by all positions.
    fn base(&self, z: &[f64]) -> Vec<f64> {
        assert_eq!(z.len(), self.d, "decoder latent dimension mismatch");
        let l = self.l1();
        (0..l.n_out)
            .map(|o| {
                let r = l.row(o);
                let mut s = l.bias[o];
                for k in 0..self.d {
                    s += r[k] * z[k];
                }
                s
            })
            .collect()
    }

    fn step(&self, base: &[f64], prev: TokenId, pos: usize) -> StepCache {
        let l = self.l1();
        let cp = self.d + prev as usize;
        let cq = self.d + self.cfg.vocab + pos;
        let hidden: Vec<f64> = (0..l.n_out)
            .map(|o| {
                let r = l.row(o);
                (base[o] + r[cp] + r[cq]).tanh()
            })
            .collect();
        let mut logits = self.l2().affine(&hidden);
        for &m in &self.cfg.masked {
            logits[m as usize] = f64::NEG_INFINITY;
        }
        let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut probs: Vec<f64> = logits.iter().map(|&v| (v - mx).exp()).collect();
        let s: f64 = probs.iter().sum();
        for p in probs.iter_mut() {
            *p /= s;
        }
        StepCache { hidden, probs }
    }

    /// Sample until EOS or `max_len` tokens. Temperature 0 is greedy.
    pub fn sample(&self, z: &[f64], temperature: f64, rng: &mut Rng) -> Decoded {
        let base = self.base(z);
        let mut prev = self.cfg.start;
        let mut tokens = Vec::with_capacity(self.cfg.max_len);
        let mut lps = Vec::with_capacity(self.cfg.max_len);
        for pos in 0..self.cfg.max_len {
            let c = self.step(&base, prev, pos);
            let t = if temperature <= 1e-12 {
                argmax(&c.probs)
            } else {
                sample_tempered(&c.probs, temperature, rng)
            };
            lps.push(c.probs[t].ln());
            tokens.push(t as TokenId);
            prev = t as TokenId;
            if prev == self.cfg.eos {
                break;
            }
        }
        Decoded {
            logprob: lps.iter().sum(),
            utterance: Utterance::new(tokens),
            token_logprobs: lps,
        }
    }

    /// Teacher-forced `log Psi(Y | z')` over the non-padding positions.
    pub fn logprob(&self, z: &[f64], y: &Utterance) -> f64 {
        let base = self.base(z);
        let mut prev = self.cfg.start;
        let mut lp = 0.0;
        for (pos, &t) in y.tokens.iter().enumerate().take(self.cfg.max_len) {
            if Some(t) == self.cfg.pad {
                break;
            }
            let c = self.step(&base, prev, pos);
            lp += c.probs[t as usize].ln();
            prev = t;
        }
        lp
    }

    /// Teacher-forced log-probability with gradients. Adds
    /// `coef * d logprob / d theta` into `grads` and returns
    /// `(logprob, coef * d logprob / d z')`.
    pub fn logprob_grad(&self, z: &[f64], y: &Utterance, coef: f64, grads: &mut Grads) -> (f64, Vec<f64>) {
        let base = self.base(z);
        let (l1, l2) = (self.l1(), self.l2());
        let h = l1.n_out;
        let v = self.cfg.vocab;
        let mut dbase = vec![0.0; h];
        let mut prev = self.cfg.start;
        let mut lp = 0.0;
        for (pos, &t) in y.tokens.iter().enumerate().take(self.cfg.max_len) {
            if Some(t) == self.cfg.pad {
                break;
            }
            let c = self.step(&base, prev, pos);
            lp += c.probs[t as usize].ln();
            // d logp / d logits = onehot - probs
            let mut dlog: Vec<f64> = c.probs.iter().map(|p| -coef * p).collect();
            dlog[t as usize] += coef;
            for &m in &self.cfg.masked {
                dlog[m as usize] = 0.0;
            }
            let (gw2, gb2) = {
                let (a, b) = grads.0[2..4].split_at_mut(1);
                (&mut a[0], &mut b[0])
            };
            let dh = l2.affine_backward(&c.hidden, &dlog, gw2, gb2);
            let dpre: Vec<f64> = dh
                .iter()
                .zip(&c.hidden)
                .map(|(g, hv)| g * (1.0 - hv * hv))
                .collect();
            let cp = self.d + prev as usize;
            let cq = self.d + v + pos;
            let n_in = l1.n_in;
            let gw1 = &mut grads.0[0];
            for o in 0..h {
                gw1[o * n_in + cp] += dpre[o];
                gw1[o * n_in + cq] += dpre[o];
                dbase[o] += dpre[o];
            }
            prev = t;
        }
        // base = W_z z + b
        let n_in = l1.n_in;
        let mut dz = vec![0.0; self.d];
        {
            let gw1 = &mut grads.0[0];
            for o in 0..h {
                let r = l1.row(o);
                for k in 0..self.d {
                    gw1[o * n_in + k] += dbase[o] * z[k];
                    dz[k] += dbase[o] * r[k];
                }
            }
        }
        for (g, d) in grads.0[1].iter_mut().zip(&dbase) {
            *g += d;
        }
        (lp, dz)
    }

    pub fn to_record(&self) -> DecoderRecord {
        DecoderRecord {
            cfg: self.cfg.clone(),
            latent_dim: self.d,
            net: self.net.to_record(),
        }
    }

    pub fn from_record(r: &DecoderRecord) -> Result<Self> {
        let net = DenseNet::from_record(&r.net)?;
        if net.layers.len() != 2
            || net.in_dim() != r.latent_dim + r.cfg.vocab + r.cfg.max_len
            || net.out_dim() != r.cfg.vocab
        {
            return Err(Error::Format("decoder record shapes are inconsistent".into()));
        }
        Ok(Decoder {
            cfg: r.cfg.clone(),
            net,
            d: r.latent_dim,
        })
    }
}

impl Params for Decoder {
    fn tensors(&self) -> Vec<&[f64]> {
        self.net.tensors()
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.net.tensors_mut()
    }
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for k in 1..p.len() {
        if p[k] > p[best] {
            best = k;
        }
    }
    best
}

fn sample_tempered(p: &[f64], temperature: f64, rng: &mut Rng) -> usize {
    let w: Vec<f64> = if (temperature - 1.0).abs() < 1e-15 {
        p.to_vec()
    } else {
        let inv = 1.0 / temperature;
        let mx = p.iter().copied().fold(0.0, f64::max);
        p.iter()
            .map(|&q| if q > 0.0 { (q / mx).powf(inv) } else { 0.0 })
            .collect()
    };
    let total: f64 = w.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (k, &wk) in w.iter().enumerate() {
        if wk > 0.0 && u < wk {
            return k;
        }
        u -= wk;
    }
    argmax(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::grad_check;
    use crate::rng::stream;

    fn micro(rng: &mut Rng) -> Decoder {
        let cfg = DecoderConfig {
            vocab: 4,
            max_len: 2,
            eos: 3,
            masked: vec![],
            start: 0,
            pad: None,
        };
        Decoder::new(cfg, 3, 8, rng)
    }

    /// Every sequence a length-2 micro decoder can emit: one of the three
    /// non-EOS tokens followed by any token, or EOS alone.
    fn enumerate() -> Vec<Utterance> {
        let mut out = vec![Utterance::new(vec![3])];
        for a in 0..3 {
            for b in 0..4 {
                out.push(Utterance::new(vec![a, b]));
            }
        }
        out
    }

    #[test]
    fn micro_vocabulary_distribution_sums_to_one() {
        for seed in 0..20 {
            let mut rng = stream(seed, &[]);
            let dec = micro(&mut rng);
            let z = [0.3, -1.1, 0.7];
            let total: f64 = enumerate().iter().map(|y| dec.logprob(&z, y).exp()).sum();
            assert!((total - 1.0).abs() < 1e-9, "{total}");
        }
    }

    #[test]
    fn greedy_is_deterministic_and_sampling_reproducible() {
        let mut rng = stream(1, &[]);
        let dec = Decoder::new(DecoderConfig::standard(64), 16, 32, &mut rng);
        let z = vec![0.2; 16];
        let a = dec.sample(&z, 0.0, &mut stream(2, &[]));
        let b = dec.sample(&z, 0.0, &mut stream(3, &[]));
        assert_eq!(a, b);
        let c = dec.sample(&z, 0.7, &mut stream(4, &[]));
        let d = dec.sample(&z, 0.7, &mut stream(4, &[]));
        assert_eq!(c, d);
        assert!(c.utterance.tokens.len() <= MAX_LEN);
        assert!(!c.utterance.tokens.contains(&PAD) && !c.utterance.tokens.contains(&SOS));
    }

    #[test]
    fn sampled_logprob_matches_teacher_forcing() {
        let mut rng = stream(5, &[]);
        let dec = Decoder::new(DecoderConfig::standard(64), 16, 32, &mut rng);
        for k in 0..20 {
            let z: Vec<f64> = (0..16).map(|i| ((i + k) as f64 * 0.7).sin()).collect();
            let s = dec.sample(&z, 1.0, &mut rng);
            assert!((s.logprob - dec.logprob(&z, &s.utterance)).abs() < 1e-10);
            assert!(s.logprob <= 0.0);
        }
    }

    #[test]
    fn uniform_decoder_scores_length_times_log_uniform() {
        let mut rng = stream(6, &[]);
        let mut dec = Decoder::new(
            DecoderConfig {
                masked: vec![],
                ..DecoderConfig::standard(64)
            },
            4,
            8,
            &mut rng,
        );
        dec.net.layers[1].weight.iter_mut().for_each(|w| *w = 0.0);
        let y = Utterance::new(vec![40, 41, 42]);
        assert!((dec.logprob(&[0.1; 4], &y) - 3.0 * (1.0f64 / 64.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = stream(7, &[]);
        let dec = Decoder::new(DecoderConfig::standard(64), 16, 24, &mut rng);
        let y = Utterance::new(vec![40, 5, 3, 2]);
        let z: Vec<f64> = (0..16).map(|i| (i as f64 * 0.3).cos()).collect();
        let mut g = dec.zero_grads();
        let (_, dz) = dec.logprob_grad(&z, &y, 1.0, &mut g);
        let flat = dec.flat();
        let coords: Vec<usize> = (0..flat.len()).step_by(37).collect();
        let rep = grad_check(
            |p: &[f64]| {
                let mut d = dec.clone();
                d.set_flat(p);
                d.logprob(&z, &y)
            },
            &flat,
            &g.flat(),
            1e-5,
            1e-6,
            Some(&coords),
        );
        assert!(rep.max_rel_err < 1e-4, "{rep:?}");
        let rz = grad_check(|zz: &[f64]| dec.logprob(zz, &y), &z, &dz, 1e-5, 1e-6, None);
        assert!(rz.max_rel_err < 1e-4, "{rz:?}");
    }
}
