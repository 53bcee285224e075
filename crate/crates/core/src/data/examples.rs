use serde::Serialize;

use super::split::UserSplit;
use crate::error::{Error, Result};
use crate::sid::{SidIndex, SidSequence};
use crate::tokens::sid_token;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Train,
    Valid,
    Test,
}

/// Which training targets to emit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExampleMode {
    /// Every train position `t ≥ 1` predicted from its prefix.
    #[default]
    AllPrefixes,
    /// Only the last train item.
    SingleTarget,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SequenceExample {
    pub user_id: String,
    /// Flattened SID tokens, oldest first.
    pub input_tokens: Vec<u32>,
    pub target: SidSequence,
    pub target_item: String,
}

impl SequenceExample {
    /// Target codes as decoder token ids.
    pub fn target_tokens(&self, codebook_size: usize) -> Vec<u32> {
        self.target
            .codes()
            .iter()
            .enumerate()
            .map(|(l, &c)| sid_token(l, c, codebook_size))
            .collect()
    }
}

/// Build model inputs. Histories longer than `max_seq / depth` items lose
/// their oldest items.
pub fn make_examples(
    splits: &[UserSplit],
    index: &SidIndex,
    max_seq: usize,
    phase: Phase,
    mode: ExampleMode,
) -> Result<Vec<SequenceExample>> {
    let depth = index.depth();
    let w = index.codebook_size();
    let max_items = max_seq / depth;
    if max_items == 0 {
        return Err(Error::InvalidArgument(format!(
            "max_seq {max_seq} cannot hold one item of {depth} tokens"
        )));
    }
    let lookup = |item: &str| -> Result<&SidSequence> {
        index.sid(item).ok_or_else(|| Error::UnknownItem(item.to_string()))
    };
    let make = |user: &str, history: &[String], target: &str| -> Result<SequenceExample> {
        let start = history.len().saturating_sub(max_items);
        let mut input_tokens = Vec::with_capacity((history.len() - start) * depth);
        for item in &history[start..] {
            for (l, &c) in lookup(item)?.codes().iter().enumerate() {
                input_tokens.push(sid_token(l, c, w));
            }
        }
        Ok(SequenceExample {
            user_id: user.to_string(),
            input_tokens,
            target: lookup(target)?.clone(),
            target_item: target.to_string(),
        })
    };

    let mut out = Vec::new();
    for s in splits {
        match phase {
            Phase::Train => {
                let first = match mode {
                    ExampleMode::AllPrefixes => 1,
                    ExampleMode::SingleTarget => s.train.len().saturating_sub(1).max(1),
                };
                for t in first..s.train.len() {
                    out.push(make(&s.user_id, &s.train[..t], &s.train[t])?);
                }
            }
            Phase::Valid => out.push(make(&s.user_id, &s.train, &s.valid)?),
            Phase::Test => {
                let mut history = s.train.clone();
                history.push(s.valid.clone());
                out.push(make(&s.user_id, &history, &s.test)?);
            }
        }
    }
    Ok(out)
}
