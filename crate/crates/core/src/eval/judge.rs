//! Solvability and solution judges.
//!
//! The oracle judge is a pure function of per-query ground truth. The model
//! judge renders the `judge_solvable` / `judge_solved` templates and parses
//! a one-word verdict from the first line of the reply.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::catalog::{ApiIdentifier, ApiUniverse};
use crate::error::{Error, Result};
use crate::llm::{chat, BudgetMeter, ChatBackend, Message};
use crate::prompts::{PromptId, PromptSet};
use crate::solver::{ApiCallRecord, FinishOutcome};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub text: String,
}

impl Query {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub required_apis: Vec<ApiIdentifier>,
    #[serde(default)]
    pub answer_fragments: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "label", content = "rationale")]
pub enum Solvability {
    Solvable(String),
    NonSolvable(String),
}

impl Solvability {
    pub fn is_solvable(&self) -> bool {
        matches!(self, Solvability::Solvable(_))
    }

    pub fn rationale(&self) -> &str {
        match self {
            Solvability::Solvable(r) | Solvability::NonSolvable(r) => r,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "label", content = "rationale")]
pub enum Verdict {
    Solved(String),
    Unsolved(String),
}

impl Verdict {
    pub fn is_solved(&self) -> bool {
        matches!(self, Verdict::Solved(_))
    }

    pub fn rationale(&self) -> &str {
        match self {
            Verdict::Solved(r) | Verdict::Unsolved(r) => r,
        }
    }
}

pub enum Judge {
    /// Ground truth keyed by query id.
    Oracle(BTreeMap<String, GroundTruth>),
    Llm {
        backend: Arc<dyn ChatBackend>,
        prompts: Arc<PromptSet>,
    },
}

impl std::fmt::Debug for Judge {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Judge::Oracle(truth) => f.debug_tuple("Oracle").field(&truth.len()).finish(),
            Judge::Llm { .. } => f.write_str("Llm"),
        }
    }
}

fn first_word(reply: &str) -> String {
    reply
        .trim()
        .lines()
        .next()
        .unwrap_or("")
        .trim_matches(|c: char| !c.is_alphanumeric())
        .split(|c: char| c.is_whitespace() || c == ':' || c == '.' || c == ',')
        .next()
        .unwrap_or("")
        .to_ascii_lowercase()
}

fn parse_solvable(reply: &str) -> Option<Solvability> {
    let rationale = reply.trim().to_string();
    match first_word(reply).as_str() {
        "unsolvable" | "non-solvable" | "nonsolvable" | "non_solvable" | "no" => {
            Some(Solvability::NonSolvable(rationale))
        }
        "solvable" | "yes" => Some(Solvability::Solvable(rationale)),
        _ => None,
    }
}

fn parse_solved(reply: &str) -> Option<Verdict> {
    let rationale = reply.trim().to_string();
    match first_word(reply).as_str() {
        "unsolved" => Some(Verdict::Unsolved(rationale)),
        "solved" => Some(Verdict::Solved(rationale)),
        _ => None,
    }
}

impl Judge {
    pub fn oracle(truth: impl IntoIterator<Item = (String, GroundTruth)>) -> Self {
        Judge::Oracle(truth.into_iter().collect())
    }

    fn truth(&self, query: &Query) -> Result<&GroundTruth> {
        match self {
            Judge::Oracle(map) => map
                .get(&query.id)
                .ok_or_else(|| Error::Contract(format!("no ground truth for query {}", query.id))),
            Judge::Llm { .. } => unreachable!("truth() is oracle only"),
        }
    }

    /// Whether `apis` suffice for the query. Model judges charge `meter`.
    pub fn judge_solvability(
        &self,
        query: &Query,
        apis: &[ApiIdentifier],
        universe: &ApiUniverse,
        meter: &BudgetMeter,
    ) -> Result<Solvability> {
        match self {
            Judge::Oracle(_) => {
                let truth = self.truth(query)?;
                let have: BTreeSet<&ApiIdentifier> = apis.iter().collect();
                let missing: Vec<String> = truth
                    .required_apis
                    .iter()
                    .filter(|id| !have.contains(id))
                    .map(ToString::to_string)
                    .collect();
                Ok(if missing.is_empty() {
                    Solvability::Solvable("all required APIs are in the candidate set".into())
                } else {
                    Solvability::NonSolvable(format!("missing {}", missing.join(", ")))
                })
            }
            Judge::Llm { backend, prompts } => {
                let api_list: Vec<String> = apis
                    .iter()
                    .map(|id| match universe.api(id) {
                        Some(spec) => format!("- {id}: {}", spec.description),
                        None => format!("- {id}"),
                    })
                    .collect();
                let prompt = prompts.render(
                    PromptId::JudgeSolvable,
                    &[("query", &query.text), ("api_list", &api_list.join("\n"))],
                )?;
                match ask_twice(backend.as_ref(), &prompt, meter, parse_solvable)? {
                    Some(s) => Ok(s),
                    None => {
                        warn!(query = %query.id, "unparseable solvability verdict");
                        Ok(Solvability::NonSolvable("unparseable judge reply".into()))
                    }
                }
            }
        }
    }

    /// Verdict on a finished solver attempt. A give-up is unsolved without
    /// consulting the judge.
    pub fn judge_solution(
        &self,
        query: &Query,
        outcome: &FinishOutcome,
        calls: &[ApiCallRecord],
        meter: &BudgetMeter,
    ) -> Result<Verdict> {
        let answer = match outcome {
            FinishOutcome::GiveSolution { answer } => answer,
            FinishOutcome::GiveUp { reason, .. } => return Ok(Verdict::Unsolved(reason.clone())),
            FinishOutcome::TryBacktrack => {
                return Err(Error::Contract("backtrack is not a final outcome".into()))
            }
        };
        match self {
            Judge::Oracle(_) => Ok(oracle_verdict(self.truth(query)?, answer, calls)),
            Judge::Llm { backend, prompts } => {
                let prompt = prompts.render(
                    PromptId::JudgeSolved,
                    &[("query", &query.text), ("solution", answer)],
                )?;
                match ask_twice(backend.as_ref(), &prompt, meter, parse_solved)? {
                    Some(v) => Ok(v),
                    None => {
                        warn!(query = %query.id, "unparseable solution verdict");
                        Ok(Verdict::Unsolved("unparseable judge reply".into()))
                    }
                }
            }
        }
    }
}

/// Solved iff every required API was called successfully and every
/// expected fragment occurs in the answer.
pub fn oracle_verdict(truth: &GroundTruth, answer: &str, calls: &[ApiCallRecord]) -> Verdict {
    let succeeded: BTreeSet<&ApiIdentifier> = calls
        .iter()
        .filter(|c| c.result.is_ok())
        .map(|c| &c.id)
        .collect();
    let uncalled: Vec<String> = truth
        .required_apis
        .iter()
        .filter(|id| !succeeded.contains(id))
        .map(ToString::to_string)
        .collect();
    if !uncalled.is_empty() {
        return Verdict::Unsolved(format!("required APIs not successfully called: {}", uncalled.join(", ")));
    }
    let absent: Vec<&str> = truth
        .answer_fragments
        .iter()
        .filter(|f| !answer.contains(f.as_str()))
        .map(String::as_str)
        .collect();
    if !absent.is_empty() {
        return Verdict::Unsolved(format!("answer lacks expected content: {}", absent.join(", ")));
    }
    Verdict::Solved("all required APIs called and expected content present".into())
}

fn ask_twice<T>(
    backend: &dyn ChatBackend,
    prompt: &str,
    meter: &BudgetMeter,
    parse: fn(&str) -> Option<T>,
) -> Result<Option<T>> {
    let dialogue = [Message::user(prompt)];
    for _ in 0..2 {
        let reply = chat(backend, &dialogue, &[], meter)?;
        let text = match reply.text() {
            Some(t) => t.to_string(),
            None => reply.thought.clone(),
        };
        if let Some(v) = parse(&text) {
            return Ok(Some(v));
        }
    }
    Ok(None)
}
