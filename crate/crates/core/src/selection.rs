//! Selection rules over a fixed candidate set and preference-pair generation.
//!
//! Every rule maximizes `reward + beta * regularizer` over the candidates:
//!
//! | rule    | regularizer                 | beta = 0 | beta = inf        |
//! |---------|-----------------------------|----------|-------------------|
//! | BoN     | none                        | -        | -                 |
//! | MBR     | MBR objective               | -        | -                 |
//! | MBR-BoN | MBR objective               | BoN      | MBR               |
//! | KL-RBoN | sequence log-probability    | BoN      | MAP (max logprob) |
//!
//! Ties always resolve to the lowest candidate id.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::candidate::{CandidateSet, PreferencePair};
use crate::error::{Error, Result};
use crate::utility::{mbr_objectives, UtilityMatrix};

/// Regularization strength: a finite non-negative real or `+inf`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Beta(f64);

impl Beta {
    pub const ZERO: Beta = Beta(0.0);
    pub const INFINITY: Beta = Beta(f64::INFINITY);

    pub fn new(value: f64) -> Result<Self> {
        if value.is_nan() || value < 0.0 || value == f64::NEG_INFINITY {
            return Err(Error::NegativeBeta(value));
        }
        Ok(Beta(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_infinite(self) -> bool {
        self.0.is_infinite()
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0.0
    }
}

impl fmt::Display for Beta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_infinite() {
            f.write_str("inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl FromStr for Beta {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "+inf" | "infinity" | "+infinity" => Ok(Beta::INFINITY),
            other => {
                let v: f64 = other
                    .parse()
                    .map_err(|_| Error::InvalidArgument(format!("cannot parse beta `{s}`")))?;
                if v.is_infinite() && v > 0.0 {
                    return Ok(Beta::INFINITY);
                }
                Beta::new(v)
            }
        }
    }
}

impl Serialize for Beta {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Beta {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Beta::new(v).map_err(serde::de::Error::custom),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "bon")]
    Bon,
    #[serde(rename = "mbr")]
    Mbr,
    #[serde(rename = "mbr-bon")]
    MbrBon,
    #[serde(rename = "kl-rbon")]
    KlRbon,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Bon => "bon",
            Method::Mbr => "mbr",
            Method::MbrBon => "mbr-bon",
            Method::KlRbon => "kl-rbon",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bon" => Ok(Method::Bon),
            "mbr" => Ok(Method::Mbr),
            "mbr-bon" | "mbrbon" => Ok(Method::MbrBon),
            "kl-rbon" | "klrbon" | "rbon-kl" => Ok(Method::KlRbon),
            _ => Err(Error::InvalidArgument(format!("unknown method `{s}`"))),
        }
    }
}

/// The outcome of one selection, with its score split into the reward part
/// and the (unweighted) regularizer part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub chosen_id: usize,
    pub method: Method,
    pub reward_term: f64,
    pub regularizer_term: f64,
    pub beta: Beta,
    pub proxy_reward_name: String,
}

impl SelectionResult {
    pub fn total_score(&self) -> f64 {
        if self.beta.is_zero() {
            self.reward_term
        } else {
            self.reward_term + self.beta.value() * self.regularizer_term
        }
    }
}

/// Index of the first maximum. Panics on an empty slice.
pub fn first_argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Index of the first minimum, skipping `exclude`. `None` if nothing remains.
fn first_argmin_excluding(values: &[f64], exclude: Option<usize>) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        if Some(i) == exclude {
            continue;
        }
        match best {
            Some(b) if *v >= values[b] => {}
            _ => best = Some(i),
        }
    }
    best
}

/// `argmax_i reward[i] + beta * regularizer[i]` with the two limits handled
/// exactly: beta = 0 ignores the regularizer, beta = inf ignores the reward.
pub fn argmax_regularized(reward: &[f64], regularizer: &[f64], beta: Beta) -> usize {
    debug_assert_eq!(reward.len(), regularizer.len());
    if beta.is_zero() {
        first_argmax(reward)
    } else if beta.is_infinite() {
        first_argmax(regularizer)
    } else {
        let b = beta.value();
        let scores: Vec<f64> = reward.iter().zip(regularizer).map(|(r, g)| r + b * g).collect();
        first_argmax(&scores)
    }
}

fn check_matrix(set: &CandidateSet, m: &UtilityMatrix) -> Result<()> {
    if m.n() != set.len() {
        return Err(Error::MatrixShapeMismatch {
            expected: set.len(),
            found: m.n(),
        });
    }
    if set.is_empty() {
        return Err(Error::EmptySet);
    }
    Ok(())
}

fn proxy_rewards(set: &CandidateSet, proxy: &str) -> Result<Vec<f64>> {
    if set.is_empty() {
        return Err(Error::EmptySet);
    }
    set.rewards(proxy)
}

/// Best-of-N: the candidate with the highest proxy reward.
pub fn select_bon(set: &CandidateSet, proxy: &str) -> Result<SelectionResult> {
    let rewards = proxy_rewards(set, proxy)?;
    let chosen = first_argmax(&rewards);
    Ok(SelectionResult {
        chosen_id: chosen,
        method: Method::Bon,
        reward_term: rewards[chosen],
        regularizer_term: 0.0,
        beta: Beta::ZERO,
        proxy_reward_name: proxy.to_string(),
    })
}

/// MBR decoding: the candidate with the highest average utility.
pub fn select_mbr(set: &CandidateSet, m: &UtilityMatrix) -> Result<SelectionResult> {
    check_matrix(set, m)?;
    let mbr = mbr_objectives(m).values;
    Ok(mbr_result(&mbr, Method::Mbr, Beta::ZERO, String::new()))
}

fn mbr_result(mbr: &[f64], method: Method, beta: Beta, proxy: String) -> SelectionResult {
    let chosen = first_argmax(mbr);
    SelectionResult {
        chosen_id: chosen,
        method,
        reward_term: 0.0,
        regularizer_term: mbr[chosen],
        beta,
        proxy_reward_name: proxy,
    }
}

/// MBR-BoN: `argmax R + beta * mbr`. With beta = 0 the result is exactly the
/// BoN result (regularizer term 0) and with beta = inf exactly the MBR result,
/// apart from the method tag and beta.
pub fn select_mbr_bon(set: &CandidateSet, m: &UtilityMatrix, proxy: &str, beta: Beta) -> Result<SelectionResult> {
    check_matrix(set, m)?;
    let mbr = mbr_objectives(m).values;
    select_mbr_bon_with(set, &mbr, proxy, beta)
}

/// MBR-BoN against precomputed (possibly normalized) MBR objective values.
pub fn select_mbr_bon_with(set: &CandidateSet, mbr: &[f64], proxy: &str, beta: Beta) -> Result<SelectionResult> {
    if mbr.len() != set.len() {
        return Err(Error::MatrixShapeMismatch {
            expected: set.len(),
            found: mbr.len(),
        });
    }
    let rewards = proxy_rewards(set, proxy)?;
    if beta.is_zero() {
        return Ok(SelectionResult {
            method: Method::MbrBon,
            ..select_bon(set, proxy)?
        });
    }
    if beta.is_infinite() {
        return Ok(mbr_result(mbr, Method::MbrBon, beta, proxy.to_string()));
    }
    let chosen = argmax_regularized(&rewards, mbr, beta);
    Ok(SelectionResult {
        chosen_id: chosen,
        method: Method::MbrBon,
        reward_term: rewards[chosen],
        regularizer_term: mbr[chosen],
        beta,
        proxy_reward_name: proxy.to_string(),
    })
}

/// KL-regularized BoN. The KL divergence of the point mass on `y` from the
/// reference policy is `-log p(y)`, so the objective is `R + beta * logprob`.
pub fn select_kl_rbon(set: &CandidateSet, proxy: &str, beta: Beta) -> Result<SelectionResult> {
    let rewards = proxy_rewards(set, proxy)?;
    let logprobs = set.logprobs()?;
    if beta.is_zero() {
        return Ok(SelectionResult {
            method: Method::KlRbon,
            ..select_bon(set, proxy)?
        });
    }
    let chosen = argmax_regularized(&rewards, &logprobs, beta);
    Ok(SelectionResult {
        chosen_id: chosen,
        method: Method::KlRbon,
        reward_term: if beta.is_infinite() { 0.0 } else { rewards[chosen] },
        regularizer_term: logprobs[chosen],
        beta,
        proxy_reward_name: proxy.to_string(),
    })
}

/// Which selector picks the chosen response of a preference pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairChooser {
    Bon,
    MbrBon,
}

/// Chosen = the chooser's pick, rejected = the lowest-proxy-reward candidate.
/// If both coincide, the second-lowest candidate is rejected instead.
pub fn generate_preference_pair(
    set: &CandidateSet,
    m: &UtilityMatrix,
    proxy: &str,
    beta: Beta,
    chooser: PairChooser,
) -> Result<PreferencePair> {
    if set.len() < 2 {
        return Err(Error::TooFewCandidates(set.len()));
    }
    let chosen = match chooser {
        PairChooser::Bon => select_bon(set, proxy)?,
        PairChooser::MbrBon => select_mbr_bon(set, m, proxy, beta)?,
    }
    .chosen_id;
    pair_from_choice(set, proxy, chosen)
}

/// Builds the pair for an already selected candidate.
pub fn pair_from_choice(set: &CandidateSet, proxy: &str, chosen: usize) -> Result<PreferencePair> {
    if set.len() < 2 {
        return Err(Error::TooFewCandidates(set.len()));
    }
    let rewards = set.rewards(proxy)?;
    let mut rejected = first_argmin_excluding(&rewards, None).expect("non-empty");
    if rejected == chosen {
        rejected = first_argmin_excluding(&rewards, Some(chosen)).expect("n >= 2");
    }
    Ok(PreferencePair {
        instruction_id: set.instruction_id.clone(),
        instruction_text: set.instruction_text.clone(),
        chosen_id: chosen,
        chosen: set.candidates[chosen].text.clone(),
        rejected_id: rejected,
        rejected: set.candidates[rejected].text.clone(),
        proxy_reward_name: proxy.to_string(),
    })
}

/// A complete selection rule: method, proxy reward name, beta and whether the
/// MBR regularizer is min-max normalized per instruction first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selector {
    pub method: Method,
    pub proxy: String,
    pub beta: Beta,
    #[serde(default)]
    pub normalize_mbr: bool,
}

impl Selector {
    pub fn bon(proxy: &str) -> Self {
        Self::new(Method::Bon, proxy, Beta::ZERO)
    }

    pub fn mbr() -> Self {
        Self::new(Method::Mbr, "", Beta::ZERO)
    }

    pub fn mbr_bon(proxy: &str, beta: Beta) -> Self {
        Self::new(Method::MbrBon, proxy, beta)
    }

    pub fn kl_rbon(proxy: &str, beta: Beta) -> Self {
        Self::new(Method::KlRbon, proxy, beta)
    }

    pub fn new(method: Method, proxy: &str, beta: Beta) -> Self {
        Self {
            method,
            proxy: proxy.to_string(),
            beta,
            normalize_mbr: false,
        }
    }

    pub fn with_normalized_mbr(mut self, on: bool) -> Self {
        self.normalize_mbr = on;
        self
    }

    pub fn needs_matrix(&self) -> bool {
        matches!(self.method, Method::Mbr | Method::MbrBon)
    }

    /// Applies the rule. `m` is required for MBR and MBR-BoN and ignored otherwise.
    pub fn select(&self, set: &CandidateSet, m: Option<&UtilityMatrix>) -> Result<SelectionResult> {
        let matrix = || m.ok_or_else(|| Error::InvalidArgument(format!("{} needs a utility matrix", self.method)));
        match self.method {
            Method::Bon => select_bon(set, &self.proxy),
            Method::KlRbon => select_kl_rbon(set, &self.proxy, self.beta),
            Method::Mbr | Method::MbrBon => {
                let m = matrix()?;
                check_matrix(set, m)?;
                let mut scores = mbr_objectives(m);
                if self.normalize_mbr {
                    scores = scores.normalized();
                }
                if self.method == Method::Mbr {
                    Ok(mbr_result(&scores.values, Method::Mbr, Beta::ZERO, String::new()))
                } else {
                    select_mbr_bon_with(set, &scores.values, &self.proxy, self.beta)
                }
            }
        }
    }
}
