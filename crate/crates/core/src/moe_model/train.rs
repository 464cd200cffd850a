use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::model::MoeLm;
use crate::error::{Error, Result};
use crate::numkit::{Adam, AdamConfig, GaussianHead, Grads, Params};
use crate::rng::Rng;
use crate::toylang::{intent_label, ConversationHistory, Intent, Lexicon, Utterance};

/// The parameters the primitive objective trains: encoder, decoder,
/// posterior head and the primitive expert, in that tensor order.
pub struct PrimitiveView<'a>(pub &'a mut MoeLm);

impl Params for PrimitiveView<'_> {
    fn tensors(&self) -> Vec<&[f64]> {
        let m = &*self.0;
        let mut t = m.encoder.tensors();
        t.extend(m.decoder.tensors());
        t.extend(m.posterior.head.tensors());
        t.extend(m.experts[0].head.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let m = &mut *self.0;
        let mut t = m.encoder.tensors_mut();
        t.extend(m.decoder.tensors_mut());
        t.extend(m.posterior.head.tensors_mut());
        t.extend(m.experts[0].head.tensors_mut());
        t
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveLosses {
    /// Mean negative log-likelihood per utterance.
    pub nll: f64,
    pub kl: f64,
    /// Mean negative log-likelihood per token.
    pub token_nll: f64,
}

/// `mean(-log Psi(Y | z') + kappa * KL(rho(.|z,Y) || G_0(.|z)))` with
/// `z' = mu_rho + sigma_rho * eps`, and its gradient in [`PrimitiveView`]
/// order.
pub fn primitive_loss(
    model: &MoeLm,
    batch: &[(ConversationHistory, Utterance)],
    eps: &[Vec<f64>],
    kappa: f64,
) -> (PrimitiveLosses, Grads) {
    assert!(!batch.is_empty(), "empty batch");
    assert_eq!(batch.len(), eps.len(), "one noise vector per example");
    let inv = 1.0 / batch.len() as f64;
    let d = model.latent_dim();
    let mut g_enc = model.encoder.zero_grads();
    let mut g_dec = model.decoder.zero_grads();
    let mut g_post = model.posterior.head.zero_grads();
    let mut g_prior = model.experts[0].head.zero_grads();
    let (mut nll, mut kl, mut tokens) = (0.0, 0.0, 0usize);
    for ((x, y), e) in batch.iter().zip(eps) {
        let enc = model.encoder.encode_tape(x);
        let z = super::encoder::Encoder::tape_output(&enc).to_vec();
        let post = model.posterior.head.dist_tape(&model.posterior.input(&z, y));
        let zp = post.dist.reparam(e.clone()).sample;
        let (lp, dzp) = model.decoder.logprob_grad(&zp, y, -inv, &mut g_dec);
        nll -= lp;
        tokens += y.tokens.iter().take_while(|&&t| t != crate::toylang::PAD).count();
        let prior = model.experts[0].head.dist_tape(&z);
        kl += post.dist.kl(&prior.dist);
        let kg = post.dist.kl_grads(&prior.dist);
        let c = kappa * inv;
        let d_mu: Vec<f64> = (0..d).map(|k| dzp[k] + c * kg[0][k]).collect();
        let d_sd: Vec<f64> = (0..d).map(|k| dzp[k] * e[k] + c * kg[1][k]).collect();
        let d_in = model.posterior.head.backward(&post, &d_mu, &d_sd, &mut g_post);
        let d_mu0: Vec<f64> = kg[2].iter().map(|v| c * v).collect();
        let d_sd0: Vec<f64> = kg[3].iter().map(|v| c * v).collect();
        let dz0 = model.experts[0].head.backward(&prior, &d_mu0, &d_sd0, &mut g_prior);
        let dz: Vec<f64> = (0..d).map(|k| d_in[k] + dz0[k]).collect();
        model.encoder.backward(&enc, &dz, &mut g_enc);
    }
    let losses = PrimitiveLosses {
        nll: nll * inv,
        kl: kl * inv,
        token_nll: nll / tokens.max(1) as f64,
    };
    (losses, Grads::concat(vec![g_enc, g_dec, g_post, g_prior]))
}

pub fn sample_noise(n: usize, d: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|_| StandardNormal.sample(rng)).collect())
        .collect()
}

pub struct PrimitiveTrainer {
    pub kappa: f64,
    adam: Adam,
}

impl PrimitiveTrainer {
    pub fn new(model: &mut MoeLm, kappa: f64, adam: AdamConfig) -> Self {
        PrimitiveTrainer {
            kappa,
            adam: Adam::new(&PrimitiveView(model), adam),
        }
    }

    pub fn step(
        &mut self,
        model: &mut MoeLm,
        batch: &[(ConversationHistory, Utterance)],
        rng: &mut Rng,
    ) -> Result<PrimitiveLosses> {
        let eps = sample_noise(batch.len(), model.latent_dim(), rng);
        let (l, g) = primitive_loss(model, batch, &eps, self.kappa);
        if !(l.nll.is_finite() && l.kl.is_finite()) {
            return Err(Error::NonFiniteLoss {
                stage: "train-primitive",
                detail: format!("nll {} kl {}", l.nll, l.kl),
            });
        }
        self.adam.step(&mut PrimitiveView(model), &g)?;
        Ok(l)
    }
}

/// Gradient of `-mean_k adv_k * log G(z'_k | z_k)` for one Gaussian head,
/// treating the sampled latents as constants (score-function estimator).
pub fn expert_score_grad(head: &GaussianHead, items: &[(Vec<f64>, Vec<f64>, f64)]) -> Grads {
    let mut g = head.zero_grads();
    let inv = 1.0 / items.len().max(1) as f64;
    for (z, zp, adv) in items {
        if *adv == 0.0 {
            continue;
        }
        let tape = head.dist_tape(z);
        let (dm, ds, _) = tape.dist.log_prob_grads(zp);
        let c = -adv * inv;
        let dm: Vec<f64> = dm.iter().map(|v| c * v).collect();
        let ds: Vec<f64> = ds.iter().map(|v| c * v).collect();
        head.backward(&tape, &dm, &ds, &mut g);
    }
    g
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpertTrainerConfig {
    pub steps: usize,
    pub contexts_per_batch: usize,
    pub samples_per_context: usize,
    pub temperature: f64,
    pub baseline_decay: f64,
    pub lr: f64,
}

impl Default for ExpertTrainerConfig {
    fn default() -> Self {
        ExpertTrainerConfig {
            steps: 2000,
            contexts_per_batch: 8,
            samples_per_context: 4,
            temperature: 0.7,
            baseline_decay: 0.99,
            lr: 2e-3,
        }
    }
}

/// REINFORCE with a moving-average baseline on one expert's label.
pub struct ExpertTrainer {
    pub cfg: ExpertTrainerConfig,
    adams: Vec<Option<Adam>>,
}

impl ExpertTrainer {
    pub fn new(cfg: ExpertTrainerConfig, n_experts: usize) -> Self {
        ExpertTrainer {
            cfg,
            adams: vec![None; n_experts],
        }
    }

    /// One update of expert `i`; returns the batch-mean label.
    pub fn step(
        &mut self,
        model: &mut MoeLm,
        lex: &Lexicon,
        i: usize,
        contexts: &[ConversationHistory],
        rng: &mut Rng,
    ) -> Result<f64> {
        assert!(i >= 1, "the primitive is not trained by REINFORCE");
        let intent = model.experts[i].intent;
        let mut items = Vec::with_capacity(contexts.len() * self.cfg.samples_per_context);
        for x in contexts {
            let z = model.encode(x);
            let dist = model.experts[i].head.dist(&z);
            for _ in 0..self.cfg.samples_per_context {
                let zp = dist.sample(rng).sample;
                let y = model.decoder.sample(&zp, self.cfg.temperature, rng).utterance;
                items.push((z.clone(), zp, intent_label(lex, intent, x, &y)));
            }
        }
        let mean = items.iter().map(|t| t.2).sum::<f64>() / items.len() as f64;
        let expert = &mut model.experts[i];
        let b = *expert.baseline.get_or_insert(mean);
        for it in items.iter_mut() {
            it.2 -= b;
        }
        let g = expert_score_grad(&expert.head, &items);
        let cfg = AdamConfig {
            lr: self.cfg.lr,
            ..AdamConfig::default()
        };
        let adam = self.adams[i].get_or_insert_with(|| Adam::new(&expert.head, cfg));
        adam.step(&mut expert.head, &g)?;
        let decay = self.cfg.baseline_decay;
        expert.baseline = Some(decay * b + (1.0 - decay) * mean);
        Ok(mean)
    }
}

/// Mean label `l_intent(X, Y)` of utterances generated by expert `gen`
/// over the given contexts.
pub fn mean_expert_label(
    model: &MoeLm,
    lex: &Lexicon,
    gen: usize,
    intent: Intent,
    contexts: &[ConversationHistory],
    samples: usize,
    temperature: f64,
    rng: &mut Rng,
) -> f64 {
    let mut s = 0.0;
    let mut n = 0usize;
    for x in contexts {
        let z = model.encode(x);
        let dist = model.experts[gen].head.dist(&z);
        for _ in 0..samples {
            let zp = dist.sample(rng).sample;
            let y = model.decoder.sample(&zp, temperature, rng).utterance;
            s += intent_label(lex, intent, x, &y);
            n += 1;
        }
    }
    s / n.max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moe_model::ModelConfig;
    use crate::numkit::DiagGaussian;
    use crate::oracle::grad_check;
    use crate::rng::stream;
    use crate::toylang::EOS;

    fn small() -> (MoeLm, Vec<(ConversationHistory, Utterance)>) {
        let lex = Lexicon::shipped();
        let cfg = ModelConfig {
            hidden: 12,
            ..ModelConfig::default()
        };
        let m = MoeLm::new(cfg, &lex, 3);
        let x = ConversationHistory::new(Utterance::new(vec![40, 55, EOS]));
        let batch = vec![
            (x.clone(), Utterance::new(vec![7, 44, 50, EOS])),
            (x.with_action(&Utterance::new(vec![8, EOS])), Utterance::new(vec![30, 3, EOS])),
        ];
        (m, batch)
    }

    #[test]
    fn primitive_gradient_matches_finite_differences() {
        let (mut m, batch) = small();
        let eps = sample_noise(2, 16, &mut stream(4, &[]));
        let (_, g) = primitive_loss(&m, &batch, &eps, 0.1);
        let flat = PrimitiveView(&mut m).flat();
        let analytic = g.flat();
        let coords: Vec<usize> = (0..flat.len()).step_by(53).collect();
        let base = m.clone();
        let rep = grad_check(
            |p: &[f64]| {
                let mut mm = base.clone();
                PrimitiveView(&mut mm).set_flat(p);
                let (l, _) = primitive_loss(&mm, &batch, &eps, 0.1);
                l.nll + 0.1 * l.kl
            },
            &flat,
            &analytic,
            1e-5,
            1e-6,
            Some(&coords),
        );
        assert!(rep.max_rel_err < 1e-4, "{rep:?}");
    }

    #[test]
    fn kl_vanishes_when_posterior_equals_prior() {
        // Same nets for posterior and prior only coincide if the posterior
        // ignores Y; emulate that by zeroing the Y columns and copying.
        let (mut m, batch) = small();
        let prior = m.experts[0].head.clone();
        let post = &mut m.posterior.head;
        for (pn, qn) in [(&mut post.mean_net, &prior.mean_net), (&mut post.scale_net, &prior.scale_net)] {
            let l = &mut pn.layers[0];
            let q = &qn.layers[0];
            for o in 0..l.n_out {
                for k in 0..l.n_in {
                    l.weight[o * l.n_in + k] = if k < 16 { q.weight[o * q.n_in + k] } else { 0.0 };
                }
            }
            l.bias = q.bias.clone();
            pn.layers[1] = qn.layers[1].clone();
        }
        let eps = sample_noise(2, 16, &mut stream(5, &[]));
        let (l, _) = primitive_loss(&m, &batch, &eps, 0.0);
        assert!(l.kl.abs() < 1e-12);
    }

    #[test]
    fn constant_advantage_zero_gives_zero_update() {
        let (m, _) = small();
        let items = vec![(vec![0.1; 16], vec![0.5; 16], 0.0), (vec![-0.2; 16], vec![0.0; 16], 0.0)];
        assert!(expert_score_grad(&m.experts[1].head, &items).is_zero());
    }

    #[test]
    fn score_gradient_matches_hand_computation() {
        // mean net output ignores weights except the last-layer bias when
        // the last-layer weights are zero, so d/d bias_mu of
        // -mean adv * log N(z'; mu, sigma) is -mean adv (z' - mu) / sigma^2.
        let (m, _) = small();
        let mut head = m.experts[1].head.clone();
        head.mean_net.layers[1].weight.iter_mut().for_each(|w| *w = 0.0);
        head.mean_net.layers[1].bias = vec![0.2; 16];
        let z1 = vec![0.3; 16];
        let z2 = vec![-0.4; 16];
        let s1 = head.dist(&z1).std;
        let s2 = head.dist(&z2).std;
        let a = vec![1.0; 16];
        let b = vec![-0.5; 16];
        let items = vec![(z1.clone(), a.clone(), 0.7), (z2.clone(), b.clone(), -0.3)];
        let g = expert_score_grad(&head, &items);
        let bias_grad = &g.0[3];
        for k in 0..16 {
            let hand = -0.5 * (0.7 * (a[k] - 0.2) / (s1[k] * s1[k]) + (-0.3) * (b[k] - 0.2) / (s2[k] * s2[k]));
            assert!((bias_grad[k] - hand).abs() < 1e-12);
        }
        // and it agrees with differencing the surrogate
        let flat = head.flat();
        let rep = grad_check(
            |p: &[f64]| {
                let mut h = head.clone();
                h.set_flat(p);
                -0.5 * items
                    .iter()
                    .map(|(z, zp, adv)| adv * h.dist(z).log_prob(zp))
                    .sum::<f64>()
            },
            &flat,
            &g.flat(),
            1e-5,
            1e-6,
            Some(&(0..flat.len()).step_by(11).collect::<Vec<_>>()),
        );
        assert!(rep.max_rel_err < 1e-4, "{rep:?}");
        let _ = DiagGaussian::new(vec![0.0], vec![1.0]);
    }
}
