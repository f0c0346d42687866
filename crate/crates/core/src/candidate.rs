//! Candidate responses and the per-instruction sets they belong to.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One sampled response together with everything the selectors consume:
/// named reward scores, an embedding, and an optional sequence log-probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: usize,
    pub text: String,
    pub rewards: BTreeMap<String, f64>,
    pub embedding: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprob: Option<f64>,
}

impl Candidate {
    pub fn reward(&self, name: &str) -> Result<f64> {
        self.rewards.get(name).copied().ok_or_else(|| Error::MissingReward {
            candidate_id: self.id,
            name: name.to_string(),
        })
    }
}

/// The N candidates sampled for a single instruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub instruction_id: String,
    pub instruction_text: String,
    pub candidates: Vec<Candidate>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    /// Embedding dimension shared by every candidate (0 for an empty set).
    pub fn dim(&self) -> usize {
        self.candidates.first().map_or(0, |c| c.embedding.len())
    }

    pub fn reward_names(&self) -> Vec<&str> {
        self.candidates
            .first()
            .map(|c| c.rewards.keys().map(String::as_str).collect())
            .unwrap_or_default()
    }

    /// Scores of the named reward, in candidate order.
    pub fn rewards(&self, name: &str) -> Result<Vec<f64>> {
        self.candidates.iter().map(|c| c.reward(name)).collect()
    }

    pub fn logprobs(&self) -> Result<Vec<f64>> {
        self.candidates
            .iter()
            .map(|c| c.logprob.ok_or(Error::MissingLogprob { candidate_id: c.id }))
            .collect()
    }

    pub fn has_logprobs(&self) -> bool {
        self.candidates.iter().all(|c| c.logprob.is_some())
    }

    /// The set restricted to its first `n` candidates.
    pub fn prefix(&self, n: usize) -> Result<CandidateSet> {
        if n > self.len() {
            return Err(Error::NExceedsCandidates {
                n,
                available: self.len(),
            });
        }
        Ok(CandidateSet {
            instruction_id: self.instruction_id.clone(),
            instruction_text: self.instruction_text.clone(),
            candidates: self.candidates[..n].to_vec(),
        })
    }

    pub fn embeddings(&self) -> Vec<&[f64]> {
        self.candidates.iter().map(|c| c.embedding.as_slice()).collect()
    }
}

/// A (chosen, rejected) pair for preference-learning datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub instruction_id: String,
    pub instruction_text: String,
    pub chosen_id: usize,
    pub chosen: String,
    pub rejected_id: usize,
    pub rejected: String,
    pub proxy_reward_name: String,
}

/// Checks every set-level and candidate-level invariant and hands the set back.
pub fn validate_set(set: CandidateSet) -> Result<CandidateSet> {
    let first = set.candidates.first().ok_or(Error::EmptySet)?;
    let dim = first.embedding.len();
    if first.rewards.is_empty() {
        return Err(Error::NoRewards { candidate_id: first.id });
    }
    let names: Vec<&String> = first.rewards.keys().collect();

    for (position, c) in set.candidates.iter().enumerate() {
        if c.id != position {
            return Err(Error::CandidateIdOrder { position, found: c.id });
        }
        if c.embedding.len() != dim {
            return Err(Error::DimensionMismatch {
                candidate_id: c.id,
                expected: dim,
                found: c.embedding.len(),
            });
        }
        for name in &names {
            if !c.rewards.contains_key(*name) {
                return Err(Error::MissingReward {
                    candidate_id: c.id,
                    name: (*name).clone(),
                });
            }
        }
        if let Some(extra) = c.rewards.keys().find(|k| !first.rewards.contains_key(*k)) {
            return Err(Error::MissingReward {
                candidate_id: first.id,
                name: extra.clone(),
            });
        }
        if let Some((name, _)) = c.rewards.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite {
                candidate_id: c.id,
                field: format!("reward `{name}`"),
            });
        }
        if c.embedding.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                candidate_id: c.id,
                field: "embedding".to_string(),
            });
        }
        if let Some(lp) = c.logprob {
            if !lp.is_finite() {
                return Err(Error::NonFinite {
                    candidate_id: c.id,
                    field: "logprob".to_string(),
                });
            }
            if lp > 0.0 {
                return Err(Error::PositiveLogprob {
                    candidate_id: c.id,
                    value: lp,
                });
            }
        }
    }
    Ok(set)
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn candidate(id: usize, rewards: &[(&str, f64)], embedding: &[f64]) -> Candidate {
        Candidate {
            id,
            text: format!("response {id}"),
            rewards: rewards.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            embedding: embedding.to_vec(),
            logprob: None,
        }
    }

    /// A set whose proxy and gold rewards are given per candidate.
    pub fn set_with(proxy: &[f64], gold: &[f64], embeddings: &[Vec<f64>]) -> CandidateSet {
        CandidateSet {
            instruction_id: "x0".into(),
            instruction_text: "instruction".into(),
            candidates: proxy
                .iter()
                .zip(gold)
                .zip(embeddings)
                .enumerate()
                .map(|(i, ((p, g), e))| candidate(i, &[("proxy", *p), ("gold", *g)], e))
                .collect(),
        }
    }
}
