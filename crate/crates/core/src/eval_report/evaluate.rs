use serde::{Deserialize, Serialize};

use crate::moe_model::{gen_candidates, MoeLm};
use crate::par::par_map;
use crate::rl_suite::{assign_expert, select_action, AttributionMode, CandidateView, Scorer};
use crate::rng::{mix, stream, tag, Rng};
use crate::toylang::{ConversationHistory, Utterance};
use crate::user_sim::{rollout, Action, AgentPolicy, Environment, UserEnv};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EvalMode {
    #[serde(rename = "mf")]
    ModelFree,
    #[serde(rename = "mb")]
    ModelBased,
}

impl EvalMode {
    pub fn name(self) -> &'static str {
        match self {
            EvalMode::ModelFree => "mf",
            EvalMode::ModelBased => "mb",
        }
    }

    pub fn parse(s: &str) -> Option<EvalMode> {
        match s {
            "mf" => Some(EvalMode::ModelFree),
            "mb" => Some(EvalMode::ModelBased),
            _ => None,
        }
    }
}

/// How candidates are attributed to experts at decision time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalAttribution {
    /// `i(z, a)` by decoder likelihood, as during training.
    Likelihood,
    /// The expert that generated the candidate.
    Generator,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub n: usize,
    pub k_per_expert: usize,
    pub temperature: f64,
    pub attribution: EvalAttribution,
    pub attribution_mode: AttributionMode,
    /// Turns counted in the selection histogram.
    pub histogram_turns: usize,
    /// Utterances in the diversity sample.
    pub diversity_samples: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            n: 100,
            k_per_expert: 5,
            temperature: 0.7,
            attribution: EvalAttribution::Likelihood,
            attribution_mode: AttributionMode::Mean,
            histogram_turns: 200,
            diversity_samples: 25,
        }
    }
}

/// Softmax greedification over expert candidates.
pub struct DmPolicy<'a> {
    pub model: &'a MoeLm,
    pub scorer: &'a dyn Scorer,
    pub settings: &'a EvalSettings,
    pub beta: f64,
    pub horizon: usize,
    pub seed: u64,
}

impl AgentPolicy for DmPolicy<'_> {
    fn act(&mut self, x: &ConversationHistory, rng: &mut Rng) -> Action {
        let s = self.settings;
        let z = self.model.encode(x);
        let cands = gen_candidates(self.model, x, s.k_per_expert, s.temperature, rng);
        let views: Vec<CandidateView> = cands
            .iter()
            .enumerate()
            .map(|(k, c)| CandidateView {
                z_a: self.model.encode(&x.with_action(&c.utterance)),
                expert: c.expert,
                attribution: match s.attribution {
                    EvalAttribution::Generator => c.expert,
                    EvalAttribution::Likelihood => {
                        assign_expert(self.model, &z, &c.utterance, s.attribution_mode, mix(self.seed, &[x.turn as u64, k as u64]))
                    }
                },
            })
            .collect();
        let scores = self.scorer.scores(&z, &views, x.turn + 1 >= self.horizon);
        let (i, _) = select_action(&scores, self.beta, rng);
        Action {
            utterance: cands[i].utterance.clone(),
            expert: Some(cands[i].expert),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub mean: f64,
    pub stderr: f64,
    pub returns: Vec<f64>,
    /// Chosen-candidate experts over the first `histogram_turns` turns.
    pub histogram_counts: Vec<usize>,
    /// The first `diversity_samples` chosen utterances with their contexts.
    pub samples: Vec<(ConversationHistory, Utterance)>,
}

/// Mean and standard error (sample std over `sqrt(n)`).
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Roll out `settings.n` conversations with the DM policy at softmax
/// temperature `beta`. Episode `k` uses stream `(seed, k)`.
pub fn evaluate(
    model: &MoeLm,
    scorer: &dyn Scorer,
    beta: f64,
    env: &UserEnv,
    settings: &EvalSettings,
    seed: u64,
    workers: usize,
) -> EvalResult {
    let runs = par_map(workers, settings.n, |k| {
        let mut rng = stream(seed, &[tag("evaluate"), k as u64]);
        let mut pol = DmPolicy {
            model,
            scorer,
            settings,
            beta,
            horizon: env.horizon(),
            seed: mix(seed, &[tag("eval-attribution"), k as u64]),
        };
        rollout(env, &mut pol, &mut rng)
    });
    let returns: Vec<f64> = runs.iter().map(|r| r.ret).collect();
    let (mean, stderr) = mean_stderr(&returns);
    let mut counts = vec![0; model.n_experts()];
    let mut samples = Vec::new();
    let mut seen = 0;
    for r in &runs {
        for t in &r.turns {
            if seen < settings.histogram_turns {
                counts[t.expert.unwrap_or(0)] += 1;
            }
            if samples.len() < settings.diversity_samples {
                samples.push((t.context.clone(), t.action.clone()));
            }
            seen += 1;
        }
    }
    EvalResult {
        mean,
        stderr,
        returns,
        histogram_counts: counts,
        samples,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stderr_of_constant_is_zero() {
        let (m, s) = mean_stderr(&[0.4; 10]);
        assert!((m - 0.4).abs() < 1e-15 && s < 1e-15);
        assert_eq!(mean_stderr(&[0.5; 8]), (0.5, 0.0));
        let (m, s) = mean_stderr(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }
}
