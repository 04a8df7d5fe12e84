//! Two flat retrieval baselines.
//!
//! The plain agent reads the whole catalog in fixed-size groups of API
//! names. The segment baseline flattens the catalog to text, keeps the
//! segments most similar to the query and lets the model pick APIs from
//! them.

use std::cell::{Cell, RefCell};
use std::collections::BTreeSet;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::catalog::ApiIdentifier;
use crate::error::Result;
use crate::eval::Query;
use crate::llm::{estimate_tokens, run_function_loop, FunctionCallRequest, LoopOptions, LoopStop, Message};
use crate::retriever::{
    api_list, api_ref_text, parse_api_ref, schema_add_apis, schema_finish_search, CandidatePool,
    RunContext,
};
use crate::retriever::functions as f;
use crate::trace::EventKind;

pub const DEFAULT_GROUP_SIZE: usize = 500;
pub const DEFAULT_SEGMENT_TOKENS: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineStop {
    Solvable,
    Exhausted,
    Budget,
}

#[derive(Debug, Clone)]
pub struct BaselineOutcome {
    pub pool: CandidatePool,
    pub stop: BaselineStop,
    /// Groups or segments shown to the model.
    pub units_processed: usize,
}

/// Consecutive index ranges of at most `group_size` covering `0..n`.
pub fn partition_groups(n: usize, group_size: usize) -> Vec<Range<usize>> {
    assert!(group_size > 0, "group size must be positive");
    (0..n.div_ceil(group_size))
        .map(|g| g * group_size..((g + 1) * group_size).min(n))
        .collect()
}

const PLAIN_SYSTEM: &str = "You select APIs for a user query from a list of API names. \
Add every API that may help with add_apis_into_api_pool, using the names exactly as listed. \
Call finish_search when you are done with this list.";

const RAG_SYSTEM: &str = "You select APIs for a user query from excerpts of API documentation. \
Each excerpt line starts with an API name of the form category/tool/api. \
Add every API that may help with add_apis_into_api_pool, then call finish_search.";

/// Shared add/finish loop for one batch of candidates.
fn select_from(
    query: &Query,
    ctx: &RunContext<'_>,
    pool: &RefCell<CandidatePool>,
    system: &str,
    listing: String,
    allowed: &BTreeSet<ApiIdentifier>,
    check_after_add: bool,
) -> Result<Option<BaselineStop>> {
    let schemas = vec![schema_add_apis(), schema_finish_search()];
    let solvable = Cell::new(false);
    let seed = vec![
        Message::system(system),
        Message::user(format!("Query: {}\n{listing}", query.text)),
    ];
    let dispatch = |call: &FunctionCallRequest| -> String {
        if call.name == f::FINISH_SEARCH {
            return "finished".into();
        }
        let accepted;
        let mut rejected = Vec::new();
        let mut fresh = Vec::new();
        for v in api_list(call) {
            match parse_api_ref(&v, None, ctx.universe) {
                Some(id) if allowed.contains(&id) => fresh.push(id),
                _ => rejected.push(json!({"api": api_ref_text(&v), "reason": "not in the listing"})),
            }
        }
        let size = {
            let mut p = pool.borrow_mut();
            match p.add(fresh) {
                Ok(out) => {
                    accepted = out.accepted.len();
                    rejected.extend(out.rejected.iter().map(|(a, r)| json!({"api": a, "reason": r.to_string()})));
                }
                Err(e) => return format!("error: {e}"),
            }
            p.len()
        };
        ctx.trace.record("baseline", "baseline", EventKind::PoolAdd, json!({"accepted": accepted, "pool_size": size}));
        if check_after_add && size > 0 {
            let entries = pool.borrow().entries().to_vec();
            if let Ok(s) = ctx.judge.judge_solvability(query, &entries, ctx.universe, ctx.meter) {
                solvable.set(s.is_solvable());
            }
        }
        json!({"accepted": accepted, "pool_size": size, "rejected": rejected}).to_string()
    };
    let stop = |reply: &crate::llm::ModelReply, _: &[Message]| -> Option<String> {
        if solvable.get() {
            return Some("solvable".into());
        }
        reply
            .call()
            .filter(|c| c.name == f::FINISH_SEARCH)
            .map(|_| f::FINISH_SEARCH.to_string())
    };
    let out = run_function_loop(ctx.backend, seed, &schemas, dispatch, stop, ctx.meter, LoopOptions::default())?;
    Ok(match out.stop {
        LoopStop::Budget => Some(BaselineStop::Budget),
        _ if solvable.get() => Some(BaselineStop::Solvable),
        _ => None,
    })
}

/// Shows the catalog to the model `group_size` API names at a time, in
/// catalog order, checking solvability after every addition.
pub fn baseline_plain_agent(
    query: &Query,
    ctx: RunContext<'_>,
    group_size: usize,
    pool_cap: usize,
) -> Result<BaselineOutcome> {
    let ids: Vec<ApiIdentifier> = ctx.universe.apis().map(|a| a.id.clone()).collect();
    let pool = RefCell::new(CandidatePool::new(pool_cap));
    let groups = partition_groups(ids.len(), group_size);
    let mut processed = 0;
    let mut stop = BaselineStop::Exhausted;
    for range in groups {
        processed += 1;
        let group = &ids[range];
        let listing: Vec<String> = group.iter().map(ToString::to_string).collect();
        let allowed: BTreeSet<ApiIdentifier> = group.iter().cloned().collect();
        ctx.trace.record(
            "baseline",
            "baseline",
            EventKind::ModelCall,
            json!({"group": processed - 1, "size": group.len()}),
        );
        let listing = format!("APIs:\n{}", listing.join("\n"));
        if let Some(s) = select_from(query, &ctx, &pool, PLAIN_SYSTEM, listing, &allowed, true)? {
            stop = s;
            break;
        }
    }
    Ok(BaselineOutcome {
        pool: pool.into_inner(),
        stop,
        units_processed: processed,
    })
}

/// Pluggable text similarity.
pub trait Embedder: Send + Sync {
    fn similarity(&self, query: &str, text: &str) -> f64;
}

/// Fraction of distinct query words (lowercased alphanumeric runs) that
/// occur in the text.
#[derive(Debug, Clone, Copy, Default)]
pub struct LexicalOverlap;

fn words(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

impl Embedder for LexicalOverlap {
    fn similarity(&self, query: &str, text: &str) -> f64 {
        let q = words(query);
        if q.is_empty() {
            return 0.0;
        }
        let t = words(text);
        q.intersection(&t).count() as f64 / q.len() as f64
    }
}

/// One documentation line per API, in catalog order.
pub fn catalog_lines(universe: &crate::catalog::ApiUniverse) -> Vec<String> {
    universe
        .apis()
        .map(|spec| {
            let tool = universe.tool_of(&spec.id).map(|t| t.description.as_str()).unwrap_or("");
            format!("{}: {} {}", spec.id, tool, spec.description).trim_end().to_string()
        })
        .collect()
}

/// Greedy packing of whole lines into segments of at most `max_tokens`
/// proxy tokens. A line longer than the limit becomes its own segment.
pub fn segment_lines(lines: &[String], max_tokens: u64) -> Vec<String> {
    let mut segments = Vec::new();
    let mut current = String::new();
    for line in lines {
        let candidate = if current.is_empty() {
            line.clone()
        } else {
            format!("{current}\n{line}")
        };
        if !current.is_empty() && estimate_tokens(&candidate) > max_tokens {
            segments.push(std::mem::replace(&mut current, line.clone()));
        } else {
            current = candidate;
        }
    }
    if !current.is_empty() {
        segments.push(current);
    }
    segments
}

/// Indices of the `top_k` best segments; ties go to the lower index.
fn top_segments(query: &str, segments: &[String], embedder: &dyn Embedder, top_k: usize) -> Vec<usize> {
    let mut scored: Vec<(usize, f64)> = segments
        .iter()
        .enumerate()
        .map(|(i, s)| (i, embedder.similarity(query, s)))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.into_iter().take(top_k).map(|(i, _)| i).collect()
}

pub fn baseline_rag(
    query: &Query,
    ctx: RunContext<'_>,
    embedder: &dyn Embedder,
    segment_tokens: u64,
    top_k: usize,
    pool_cap: usize,
) -> Result<BaselineOutcome> {
    let lines = catalog_lines(ctx.universe);
    let segments = segment_lines(&lines, segment_tokens);
    let chosen = top_segments(&query.text, &segments, embedder, top_k);
    let pool = RefCell::new(CandidatePool::new(pool_cap));
    if chosen.is_empty() {
        return Ok(BaselineOutcome {
            pool: pool.into_inner(),
            stop: BaselineStop::Exhausted,
            units_processed: 0,
        });
    }
    ctx.trace.record("baseline", "baseline", EventKind::ModelCall, json!({"segments": chosen}));
    let text: Vec<&str> = chosen.iter().map(|&i| segments[i].as_str()).collect();
    let allowed: BTreeSet<ApiIdentifier> = text
        .iter()
        .flat_map(|s| s.lines())
        .filter_map(|l| l.split(':').next())
        .filter_map(ApiIdentifier::parse)
        .collect();
    let listing = format!("Documentation:\n{}", text.join("\n"));
    let stop = select_from(query, &ctx, &pool, RAG_SYSTEM, listing, &allowed, false)?
        .unwrap_or(BaselineStop::Exhausted);
    Ok(BaselineOutcome {
        pool: pool.into_inner(),
        stop,
        units_processed: chosen.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn partition_arithmetic() {
        let sizes: Vec<usize> = partition_groups(1200, 500).iter().map(|r| r.len()).collect();
        assert_eq!(sizes, [500, 500, 200]);
        assert!(partition_groups(0, 500).is_empty());
        assert_eq!(partition_groups(500, 500), vec![0..500]);
    }

    proptest! {
        #[test]
        fn partition_is_an_ordered_disjoint_cover(n in 0usize..5000, g in 1usize..700) {
            let groups = partition_groups(n, g);
            let mut next = 0;
            for r in &groups {
                prop_assert_eq!(r.start, next);
                prop_assert!(!r.is_empty() && r.len() <= g);
                next = r.end;
            }
            prop_assert_eq!(next, n);
            prop_assert_eq!(groups.len(), n.div_ceil(g));
        }
    }

    #[test]
    fn segments_respect_the_limit() {
        let lines: Vec<String> = (0..50).map(|i| format!("C/T/api{i}: does thing number {i}")).collect();
        let segs = segment_lines(&lines, 40);
        assert!(segs.len() > 1);
        for s in &segs {
            assert!(estimate_tokens(s) <= 40);
        }
        assert_eq!(segs.join("\n"), lines.join("\n"));
        let long = vec!["x".repeat(400)];
        assert_eq!(segment_lines(&long, 10), long);
    }

    #[test]
    fn ties_go_to_the_lower_index() {
        let segs = vec!["alpha beta".to_string(), "gamma".to_string(), "alpha beta".to_string()];
        assert_eq!(top_segments("alpha", &segs, &LexicalOverlap, 2), [0, 2]);
        assert_eq!(top_segments("alpha", &segs, &LexicalOverlap, 0), Vec::<usize>::new());
        assert_eq!(LexicalOverlap.similarity("Convert USD", "convert to EUR"), 0.5);
    }
}
