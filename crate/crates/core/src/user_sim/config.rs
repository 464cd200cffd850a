use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::toylang::{Intent, N_INTENTS};

pub const RULES_FORMAT: &str = "moedm-env-rules-v1";
const SHIPPED_RULES: &str = include_str!("../../assets/env_rules.json");

pub const MOOD_BANDS: usize = 5;
pub const TRUST_BANDS: usize = 4;
pub const MOOD_MID: [f64; MOOD_BANDS] = [-0.8, -0.4, 0.0, 0.4, 0.8];
pub const TRUST_MID: [f64; TRUST_BANDS] = [0.125, 0.375, 0.625, 0.875];

/// Bands `[-1,-.6) [-.6,-.2) [-.2,.2) [.2,.6) [.6,1]`.
pub fn mood_band(m: f64) -> usize {
    (((m.clamp(-1.0, 1.0) + 1.0) / 0.4).floor() as usize).min(MOOD_BANDS - 1)
}

/// Quarter-width bands over `[0, 1]`.
pub fn trust_band(t: f64) -> usize {
    ((t.clamp(0.0, 1.0) / 0.25).floor() as usize).min(TRUST_BANDS - 1)
}

pub fn snap_mood(m: f64) -> f64 {
    MOOD_MID[mood_band(m)]
}

pub fn snap_trust(t: f64) -> f64 {
    TRUST_MID[trust_band(t)]
}

/// Conjunction of optional half-line constraints on mood and trust.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mood_ge: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mood_gt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mood_le: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mood_lt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trust_ge: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trust_lt: Option<f64>,
}

impl Condition {
    pub fn holds(&self, mood: f64, trust: f64) -> bool {
        self.mood_ge.is_none_or(|v| mood >= v)
            && self.mood_gt.is_none_or(|v| mood > v)
            && self.mood_le.is_none_or(|v| mood <= v)
            && self.mood_lt.is_none_or(|v| mood < v)
            && self.trust_ge.is_none_or(|v| trust >= v)
            && self.trust_lt.is_none_or(|v| trust < v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    #[serde(flatten)]
    pub when: Condition,
    pub d_mood: f64,
    pub d_trust: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct IntentRules {
    intent: Intent,
    rules: Vec<Rule>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct RulesFile {
    format: String,
    reply_by_trust_band: Vec<Intent>,
    rules: Vec<IntentRules>,
}

/// Per-intent ordered rules (first match wins) and the user's reply intent
/// per trust band.
#[derive(Clone, Debug, PartialEq)]
pub struct RuleTable {
    pub rules: Vec<Vec<Rule>>,
    pub reply_by_trust_band: Vec<Intent>,
}

impl RuleTable {
    pub fn shipped() -> RuleTable {
        RuleTable::from_json(SHIPPED_RULES).expect("shipped rule table is valid")
    }

    pub fn from_json(text: &str) -> Result<RuleTable> {
        let f: RulesFile = serde_json::from_str(text)?;
        if f.format != RULES_FORMAT {
            return Err(Error::Format(format!(
                "expected rules format {RULES_FORMAT}, found {}",
                f.format
            )));
        }
        if f.reply_by_trust_band.len() != TRUST_BANDS {
            return Err(Error::Format("reply_by_trust_band needs one intent per trust band".into()));
        }
        let mut rules = vec![Vec::new(); N_INTENTS];
        for ir in f.rules {
            for r in &ir.rules {
                if r.d_mood.abs() > 1.0 || r.d_trust.abs() > 1.0 {
                    return Err(Error::Format(format!("{} rule magnitude exceeds 1", ir.intent.name())));
                }
            }
            rules[ir.intent.index()] = ir.rules;
        }
        for (k, r) in rules.iter().enumerate() {
            // the last rule must be a catch-all
            if r.last().is_none_or(|l| l.when != Condition::default()) {
                return Err(Error::Format(format!(
                    "{} rules must end with an unconditional rule",
                    Intent::ALL[k].name()
                )));
            }
        }
        Ok(RuleTable {
            rules,
            reply_by_trust_band: f.reply_by_trust_band,
        })
    }

    pub fn load(path: Option<&std::path::Path>) -> Result<RuleTable> {
        match path {
            None => Ok(RuleTable::shipped()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                RuleTable::from_json(&text)
            }
        }
    }

    /// `(d_mood, d_trust)` for an intent at the given state.
    pub fn delta(&self, intent: Intent, mood: f64, trust: f64) -> (f64, f64) {
        let r = self.rules[intent.index()]
            .iter()
            .find(|r| r.when.holds(mood, trust))
            .expect("rule lists end with a catch-all");
        (r.d_mood, r.d_trust)
    }

    pub fn reply_intent(&self, trust: f64) -> Intent {
        self.reply_by_trust_band[trust_band(trust)]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub horizon: usize,
    pub gamma: f64,
    /// Standard deviation of the Gaussian noise on mood updates.
    pub noise: f64,
    /// Snap mood and trust to band midpoints and drop the noise, making the
    /// environment an exact finite MDP.
    pub noise_free: bool,
    pub init_mood_mean: f64,
    pub init_mood_std: f64,
    pub init_trust: f64,
    pub n_topics: usize,
    /// Rule table override; the shipped table is used when absent.
    pub rules_path: Option<PathBuf>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            horizon: 5,
            gamma: 0.8,
            noise: 0.05,
            noise_free: false,
            init_mood_mean: -0.4,
            init_mood_std: 0.2,
            init_trust: 0.375,
            n_topics: 4,
            rules_path: None,
        }
    }
}

impl EnvConfig {
    pub fn noise_free() -> Self {
        EnvConfig {
            noise_free: true,
            ..EnvConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0,1), got {}", self.gamma)));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be positive".into()));
        }
        if self.noise < 0.0 || self.init_mood_std < 0.0 {
            return Err(Error::Config("noise scales must be non-negative".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn band_edges() {
        assert_eq!(mood_band(-1.0), 0);
        assert_eq!(mood_band(-0.6), 1);
        assert_eq!(mood_band(-0.2), 2);
        assert_eq!(mood_band(0.6), 4);
        assert_eq!(mood_band(1.0), 4);
        assert_eq!(trust_band(0.0), 0);
        assert_eq!(trust_band(0.6), 2);
        assert_eq!(trust_band(1.0), 3);
    }

    #[test]
    fn table_rows() {
        let t = RuleTable::shipped();
        assert_eq!(t.delta(Intent::Empathy, -0.4, 0.375), (0.1, 0.3));
        for &m in &MOOD_MID {
            for &tr in &TRUST_MID {
                assert_eq!(t.delta(Intent::Rage, m, tr).0, -0.4);
            }
        }
        assert_eq!(t.delta(Intent::Cheerfulness, 0.0, 0.625), (0.5, 0.0));
        assert_eq!(t.reply_intent(0.9), Intent::Empathy);
    }

    #[test]
    fn rejects_missing_catch_all() {
        let text = SHIPPED_RULES.replace(RULES_FORMAT, "x");
        assert!(RuleTable::from_json(&text).is_err());
        let mut v: serde_json::Value = serde_json::from_str(SHIPPED_RULES).unwrap();
        v["rules"][5]["rules"][0]["mood_ge"] = serde_json::json!(0.0);
        assert!(RuleTable::from_json(&v.to_string()).is_err());
    }
}
