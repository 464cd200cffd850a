use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ConversationHistory, Intent, TokenId, Utterance};
use crate::error::{Error, Result};

/// One logged conversation: utterances alternate user, agent, user, ...
/// and `intents[k]` is the intent that produced `turns[k]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conversation {
    pub turns: Vec<Vec<TokenId>>,
    pub intents: Vec<Intent>,
}

impl Conversation {
    /// `(X, Y)` pairs for every agent turn: the history before the agent
    /// spoke and what it said.
    pub fn pairs(&self) -> Vec<(ConversationHistory, Utterance)> {
        let mut out = Vec::new();
        let mut hist = ConversationHistory::new(Utterance::new(self.turns[0].clone()));
        let mut k = 1;
        while k < self.turns.len() {
            let y = Utterance::new(self.turns[k].clone());
            out.push((hist.clone(), y.clone()));
            hist.push(y);
            if let Some(reply) = self.turns.get(k + 1) {
                hist.push(Utterance::new(reply.clone()));
            }
            hist.turn += 1;
            k += 2;
        }
        out
    }
}

pub fn write_corpus(path: &Path, convs: &[Conversation]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for c in convs {
        serde_json::to_writer(&mut w, c)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_corpus(path: &Path) -> Result<Vec<Conversation>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let c: Conversation = serde_json::from_str(&line)?;
        if c.turns.len() != c.intents.len() {
            return Err(Error::Format("conversation turns and intents differ in length".into()));
        }
        out.push(c);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairs_follow_agent_turns() {
        let c = Conversation {
            turns: vec![vec![40, 2], vec![7, 2], vec![41, 2], vec![8, 2], vec![42, 2]],
            intents: vec![Intent::Primitive; 5],
        };
        let p = c.pairs();
        assert_eq!(p.len(), 2);
        assert_eq!(p[0].0.turns.len(), 1);
        assert_eq!(p[1].0.turn, 1);
        assert_eq!(p[1].0.turns.len(), 3);
        assert_eq!(p[1].1.tokens, vec![8, 2]);
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        let convs = vec![Conversation {
            turns: vec![vec![40, 2], vec![7, 41, 2]],
            intents: vec![Intent::Contentment, Intent::Empathy],
        }];
        write_corpus(&p, &convs).unwrap();
        assert_eq!(read_corpus(&p).unwrap(), convs);
        let line = std::fs::read_to_string(&p).unwrap();
        assert!(line.starts_with("{\"turns\":[[40,2],[7,41,2]],\"intents\":[\"contentment\",\"empathy\"]}"));
    }
}
