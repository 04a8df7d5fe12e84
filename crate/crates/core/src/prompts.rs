//! Bootstrap prompt templates.
//!
//! Bodies use `{slot}` placeholders; `{{` and `}}` stand for literal braces.
//! A prompts file (a JSON object mapping template id to body) may override
//! any subset of the built-in defaults.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptId {
    MetaAgent,
    CategoryAgent,
    ToolAgent,
    Solver,
    ReflectTool,
    ReflectCategory,
    ReflectMeta,
    BenchmarkGen,
    JudgeSolved,
    JudgeSolvable,
}

impl PromptId {
    pub const ALL: [PromptId; 10] = [
        PromptId::MetaAgent,
        PromptId::CategoryAgent,
        PromptId::ToolAgent,
        PromptId::Solver,
        PromptId::ReflectTool,
        PromptId::ReflectCategory,
        PromptId::ReflectMeta,
        PromptId::BenchmarkGen,
        PromptId::JudgeSolved,
        PromptId::JudgeSolvable,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptId::MetaAgent => "meta_agent",
            PromptId::CategoryAgent => "category_agent",
            PromptId::ToolAgent => "tool_agent",
            PromptId::Solver => "solver",
            PromptId::ReflectTool => "reflect_tool",
            PromptId::ReflectCategory => "reflect_category",
            PromptId::ReflectMeta => "reflect_meta",
            PromptId::BenchmarkGen => "benchmark_gen",
            PromptId::JudgeSolved => "judge_solved",
            PromptId::JudgeSolvable => "judge_solvable",
        }
    }

    fn default_body(self) -> &'static str {
        match self {
            PromptId::MetaAgent => META_AGENT,
            PromptId::CategoryAgent => CATEGORY_AGENT,
            PromptId::ToolAgent => TOOL_AGENT,
            PromptId::Solver => SOLVER,
            PromptId::ReflectTool => REFLECT_TOOL,
            PromptId::ReflectCategory => REFLECT_CATEGORY,
            PromptId::ReflectMeta => REFLECT_META,
            PromptId::BenchmarkGen => BENCHMARK_GEN,
            PromptId::JudgeSolved => JUDGE_SOLVED,
            PromptId::JudgeSolvable => JUDGE_SOLVABLE,
        }
    }
}

impl fmt::Display for PromptId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PromptId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| Error::UnknownPrompt(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Literal(String),
    Slot(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    id: PromptId,
    body: String,
    pieces: Vec<Piece>,
    slots: Vec<String>,
}

fn parse_body(body: &str) -> Result<Vec<Piece>> {
    let mut pieces = Vec::new();
    let mut literal = String::new();
    let mut chars = body.char_indices().peekable();
    while let Some((pos, c)) = chars.next() {
        match c {
            '{' if chars.peek().map(|&(_, n)| n) == Some('{') => {
                chars.next();
                literal.push('{');
            }
            '}' if chars.peek().map(|&(_, n)| n) == Some('}') => {
                chars.next();
                literal.push('}');
            }
            '{' => {
                let mut name = String::new();
                loop {
                    match chars.next() {
                        Some((_, '}')) => break,
                        Some((_, ch)) if ch.is_ascii_alphanumeric() || ch == '_' => name.push(ch),
                        _ => {
                            return Err(Error::Invalid(format!(
                                "unterminated or invalid placeholder at byte {pos}"
                            )))
                        }
                    }
                }
                if name.is_empty() || name.starts_with(|c: char| c.is_ascii_digit()) {
                    return Err(Error::Invalid(format!("invalid placeholder name at byte {pos}")));
                }
                if !literal.is_empty() {
                    pieces.push(Piece::Literal(std::mem::take(&mut literal)));
                }
                pieces.push(Piece::Slot(name));
            }
            '}' => return Err(Error::Invalid(format!("unmatched '}}' at byte {pos}"))),
            other => literal.push(other),
        }
    }
    if !literal.is_empty() {
        pieces.push(Piece::Literal(literal));
    }
    Ok(pieces)
}

impl PromptTemplate {
    pub fn new(id: PromptId, body: impl Into<String>) -> Result<Self> {
        let body = body.into();
        let pieces = parse_body(&body)?;
        let mut slots: Vec<String> = Vec::new();
        for p in &pieces {
            if let Piece::Slot(name) = p {
                if !slots.contains(name) {
                    slots.push(name.clone());
                }
            }
        }
        Ok(Self {
            id,
            body,
            pieces,
            slots,
        })
    }

    pub fn id(&self) -> PromptId {
        self.id
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    /// Slot names in order of first appearance.
    pub fn slots(&self) -> &[String] {
        &self.slots
    }

    pub fn render(&self, bindings: &[(&str, &str)]) -> Result<String> {
        let mut out = String::with_capacity(self.body.len());
        for piece in &self.pieces {
            match piece {
                Piece::Literal(text) => out.push_str(text),
                Piece::Slot(name) => {
                    let value = bindings
                        .iter()
                        .find(|(k, _)| k == name)
                        .map(|(_, v)| *v)
                        .ok_or_else(|| Error::MissingSlot(name.clone()))?;
                    out.push_str(value);
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct PromptSet {
    templates: BTreeMap<PromptId, PromptTemplate>,
}

impl Default for PromptSet {
    fn default() -> Self {
        let templates = PromptId::ALL
            .into_iter()
            .map(|id| {
                let t = PromptTemplate::new(id, id.default_body()).expect("built-in prompt parses");
                (id, t)
            })
            .collect();
        Self { templates }
    }
}

impl PromptSet {
    /// Defaults overlaid with the entries of a JSON `{id: body}` object.
    /// An override may drop slots but not introduce new ones.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let overrides: BTreeMap<String, String> =
            serde_json::from_str(text).map_err(Error::from_json)?;
        let mut set = Self::default();
        for (key, body) in overrides {
            let id: PromptId = key.parse()?;
            let template = PromptTemplate::new(id, body)?;
            let allowed: BTreeSet<&String> = set.templates[&id].slots.iter().collect();
            if let Some(extra) = template.slots.iter().find(|s| !allowed.contains(s)) {
                return Err(Error::Invalid(format!(
                    "prompt {id} uses slot {{{extra}}} which is never bound"
                )));
            }
            set.templates.insert(id, template);
        }
        Ok(set)
    }

    pub fn load_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn get(&self, id: PromptId) -> &PromptTemplate {
        &self.templates[&id]
    }

    pub fn render(&self, id: PromptId, bindings: &[(&str, &str)]) -> Result<String> {
        self.get(id).render(bindings)
    }

    /// Looks the template up by its string id.
    pub fn render_named(&self, id: &str, bindings: &[(&str, &str)]) -> Result<String> {
        self.render(id.parse()?, bindings)
    }
}

// Retriever, solver, reflection and benchmark-generation bodies.

const META_AGENT: &str = r#"You are APIGPT, with access to a database of APIs. This database is organized into the following categories: {categories}. Your task is to help users identify the relevant categories for their needs. To do this, you can use the 'query_tools_in_category' function to retrieve the available tools within a specific category. If you are unsure about the functionality of some tools, the 'get_tools_descriptions' function can be used to obtain detailed information about these tools. This information will aid you in understanding the general functionality of each category. Additionally, the 'create_agent_category_level' function allows you to assign a relevant category to an agent, with each agent being assigned only one category. However, you can assign multiple categories to different agents. It is important to explore as many categories as possible, as the solution to a query may be found in unexpected categories. Remember, your goal is not to answer the query directly but to identify all potentially relevant categories and assign them to agents. Once you have completed the assignment, call the 'Finish' function. At each step, you should briefly analyze the current status and determine your next action, including the function calls needed to execute your step. Keep your analysis concise, ideally no longer than three sentences."#;

const CATEGORY_AGENT: &str = r#"You are APIGPT, with access to a database of APIs categorized into various groups. Each category contains numerous tools, and each tool encompasses multiple APIs. Your task is to assist users in finding relevant tools within a specific category. If uncertain about the functionality of some tools, use the 'get_tools_descriptions' function to obtain detailed information. Then, employ the 'create_agent_tool_level' function to allocate a subset of pertinent tools to an agent, ensuring that similar tools are assigned to the same agent and limiting the allocation to no more than five tools per agent. You may assign different subsets to multiple agents. Remember, your role is not to answer queries directly, but to assign all possible tools. Once you complete the assignment, or if you determine the query is irrelevant to the tools in the specified category, invoke the 'Finish' function. Execute each step by calling the appropriate functions, and keep your thought process concise, ideally within three sentences."#;

const TOOL_AGENT: &str = r#"You are APIGPT with access to a database of APIs, categorized into various sections. Each category contains multiple tools, and each tool encompasses numerous APIs. Your task is to assist users in finding relevant APIs within the tools '{tools}' of the '{category}' category. You will be provided with descriptions and details of these tools and their APIs. Upon identifying relevant API names, use the 'add_apis_into_api_pool' function to add them to the final API list. If you conclude that all possible APIs have been explored, or if there are no relevant APIs in these tools, invoke the Finish function. During the process, you may receive feedback on these APIs. At each step, ensure to execute your actions using the appropriate functions. Keep your responses concise, ideally within three sentences."#;

const SOLVER: &str = r#"You are AutoGPT, you can use many tools (functions) to do the following task. First I will give you the task description, and your task start. At each step, you need to give your thought to analyze the status now and what to do next, with a function call to actually excute your step. After the call, you will get the call result, and you are now in a new state. Then you will analyze your status now, then decide what to do next... After many (Thought-call) pairs, you finally perform the task, then you can give your finial answer. If you feel you cannot solve the task or can only solve it partially, you should choose to give up and give your reason which should mention the names of the failed functions. Remember: 1.the state change is irreversible, you can't go back to one of the former state, if you want to restart the task, say "I give up and restart" and give the reason. 2.All the thought is short, at most in 5 sentence. 3.You can do more then one try, so if your plan is to continuously try some conditions, you can do one of the conditions per try. Let's Begin! Task description: {task_description}"#;

const REFLECT_TOOL: &str = r#"The current APIs have failed to solve the query, resulting in: {fail_reason}. You need to analyze this result and seek additional APIs. It's possible that the tools lack the relevant APIs. In such cases, you should call the Finish function. Remember not to invent tool or API names."#;

const REFLECT_CATEGORY: &str = r#"The current APIs have failed to solve the query, and the reason is: {fail_reason}. Please consider assigning more unexplored tools to the agents."#;

const REFLECT_META: &str = r#"The current APIs have failed to solve the query, and the reason is: {fail_reason}. Please consider assigning more unexplored categories to the agents."#;

const BENCHMARK_GEN: &str = r#"Your task is to interact with a sophisticated database of tools and functions, often referred to as APIs, to construct a user query that will be answered using the capabilities of these APIs. This database is organized into various categories, indicated by {categories}. To guide your exploration and selection of the appropriate APIs, the database offers several meta functions:
Exploration Functions:
1. Use get_tools_in_category to explore tools in a specific category.
2. Employ get_apis_in_tool to discover the list of APIs available within a selected tool.
3. If you need detailed information about a tool, get_tool_descriptions will provide it.
4. For in-depth understanding of an API's functionality, turn to get_api_details.
Selection and Testing Functions:
1. As you identify relevant functions, add them to your working list using add_apis_into_api_pool.
2. Test these functions by synthesizing and applying various parameters. This step is crucial to understand how these functions can be practically applied in formulating your query.
3. Should you find any function obsolete or not fitting your query context, remove them using remove_apis_from_api_pool.
Query Formulation Guidelines:
1.Your formulated query should be comprehensive, integrating APIs from 2 to 5 different categories. This cross-functional approach is essential to demonstrate the versatility and broad applicability of the database.
2.Avoid using ambiguous terms. Instead, provide detailed, specific information. For instance, if your query involves personal contact details, use provided placeholders like {{email}} for email, {{phone number}} for phone number, and URLs like {{url}} for a company website.
3.The query should be relatable and understandable to users without requiring knowledge of the specific tools or API names used in the background. It should reflect a real-world user scenario.
4. Aim for a query length of at least thirty words to ensure depth and complexity.
Final Steps:
1.Once you've crafted the query, use the Finish function to submit it along with the corresponding answer. The answer should be direct and concise, addressing the query without delving into the operational plan of the APIs.
2.Remember, the total number of calls to the initial meta functions should not exceed 20.
3.Consider various use cases while formulating your query, such as data analysis in business contexts or educational content in academic settings. Your approach should be creative and inclusive, catering to users with different skill levels and cultural backgrounds. Ensure that the query is globally relevant and straightforward, serving a singular purpose without diverging into unrelated areas. The complexity of your query should stem from the synthesis of information from multiple APIs."#;

// Editable defaults for the two judges; override them in the prompts file
// to match the wording of an external evaluation protocol.

const JUDGE_SOLVED: &str = r#"You are evaluating whether an assistant's answer resolves a user query that required calling real APIs. Query: {query}
Answer: {solution}
Decide whether the answer fully and correctly addresses every part of the query. Reply with exactly one word on the first line, "Solved" or "Unsolved", followed by one sentence explaining your decision."#;

const JUDGE_SOLVABLE: &str = r#"You are evaluating whether a user query can be answered using only the APIs listed below. Query: {query}
Available APIs:
{api_list}
Reply with exactly one word on the first line, "Solvable" or "Unsolvable", followed by one sentence explaining your decision."#;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_meta_embeds_reason_verbatim() {
        let set = PromptSet::default();
        let text = set
            .render(PromptId::ReflectMeta, &[("fail_reason", "no flight APIs found")])
            .unwrap();
        assert!(text.contains("the reason is: no flight APIs found."));
    }

    #[test]
    fn missing_binding_names_the_slot() {
        let err = PromptSet::default().render(PromptId::MetaAgent, &[]).unwrap_err();
        assert_eq!(err.to_string(), "missing slot: categories");
    }

    #[test]
    fn tool_agent_substitutes_both_slots() {
        let text = PromptSet::default()
            .render(PromptId::ToolAgent, &[("tools", "A, B"), ("category", "Finance")])
            .unwrap();
        assert!(text.contains("within the tools 'A, B' of the 'Finance' category"));
        assert!(!text.contains('{'));
    }

    #[test]
    fn unknown_id_is_an_error() {
        let err = PromptSet::default().render_named("nope", &[]).unwrap_err();
        assert!(matches!(err, Error::UnknownPrompt(_)));
    }

    #[test]
    fn slots_match_body() {
        let set = PromptSet::default();
        let expect: &[(PromptId, &[&str])] = &[
            (PromptId::MetaAgent, &["categories"]),
            (PromptId::CategoryAgent, &[]),
            (PromptId::ToolAgent, &["tools", "category"]),
            (PromptId::Solver, &["task_description"]),
            (PromptId::ReflectTool, &["fail_reason"]),
            (PromptId::ReflectCategory, &["fail_reason"]),
            (PromptId::ReflectMeta, &["fail_reason"]),
            (PromptId::BenchmarkGen, &["categories"]),
            (PromptId::JudgeSolved, &["query", "solution"]),
            (PromptId::JudgeSolvable, &["query", "api_list"]),
        ];
        for (id, slots) in expect {
            assert_eq!(set.get(*id).slots(), *slots, "{id}");
        }
    }

    #[test]
    fn escaped_braces_render_literally() {
        let text = PromptSet::default()
            .render(PromptId::BenchmarkGen, &[("categories", "Finance, Sports")])
            .unwrap();
        assert!(text.contains("placeholders like {email} for email, {phone number} for phone number"));
        assert!(text.contains("indicated by Finance, Sports."));
    }

    #[test]
    fn overrides_fall_back_to_defaults() {
        let set = PromptSet::from_json_str(r#"{"reflect_tool": "Failed because {fail_reason}."}"#).unwrap();
        assert_eq!(
            set.render(PromptId::ReflectTool, &[("fail_reason", "x")]).unwrap(),
            "Failed because x."
        );
        assert_eq!(set.get(PromptId::Solver), PromptSet::default().get(PromptId::Solver));
        assert!(PromptSet::from_json_str(r#"{"reflect_tool": "{nope}"}"#).is_err());
        assert!(PromptSet::from_json_str(r#"{"bogus": "x"}"#).is_err());
    }

    #[test]
    fn malformed_placeholders_are_rejected() {
        assert!(PromptTemplate::new(PromptId::Solver, "a {b").is_err());
        assert!(PromptTemplate::new(PromptId::Solver, "a } b").is_err());
        assert!(PromptTemplate::new(PromptId::Solver, "a {} b").is_err());
    }

    #[test]
    fn repeated_slot_is_replaced_everywhere() {
        let t = PromptTemplate::new(PromptId::Solver, "{x}-{x}").unwrap();
        assert_eq!(t.slots(), ["x"]);
        assert_eq!(t.render(&[("x", "1")]).unwrap(), "1-1");
    }
}
