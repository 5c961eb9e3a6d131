//! Prompt templates and strict output parsers for every ranking strategy.
//!
//! Templates are plain strings with `{query}`, `{passage}`, `{passage_a}`,
//! `{passage_b}` and `{window}` placeholders. Each placeholder must be
//! surrounded by whitespace (or sit at the start/end of the template) so that
//! the rendered token count is the template overhead plus the token counts of
//! the substituted texts.

use std::collections::HashSet;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textproc::count_tokens;
use crate::types::Passage;

pub const TEMPLATE_VERSION: u32 = 1;

pub const POINTWISE_OUTPUT_CAP: usize = 1;
pub const PAIRWISE_OUTPUT_CAP: usize = 1;
pub const QUERYGEN_OUTPUT_CAP: usize = 32;
/// Output tokens reserved per passage in a listwise window.
pub const LISTWISE_TOKENS_PER_PASSAGE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Binary,
    Likert,
    QueryGen,
    Pairwise,
    Listwise,
}

/// A rendered prompt and the passages it carries.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptRecord {
    pub kind: PromptKind,
    pub text: String,
    /// Ids in the order they appear in the prompt (A before B, window order).
    pub passage_ids: Vec<String>,
    pub max_output_tokens: usize,
    pub prompt_tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Templates {
    pub version: u32,
    pub binary: String,
    pub likert: String,
    #[serde(rename = "b_upr")]
    pub query_generation: String,
    #[serde(rename = "b_prp")]
    pub pairwise: String,
    pub listwise: String,
}

impl Default for Templates {
    fn default() -> Self {
        Self {
            version: TEMPLATE_VERSION,
            binary: "Passage: {passage}\nQuery: {query}\n\
                     Does the passage answer the query? Answer only Yes or No."
                .into(),
            likert: "Passage: {passage}\nQuery: {query}\n\
                     How related is the passage to the query? \
                     Answer only Very, Somewhat or Unrelated."
                .into(),
            query_generation: "Passage: {passage}\n\
                               Please write a question based on this passage."
                .into(),
            pairwise: "Given a query {query} , which of the following two passages is more relevant to the query?\n\
                       Passage A: {passage_a}\nPassage B: {passage_b}\n\
                       Output Passage A or Passage B:"
                .into(),
            listwise: "The following passages are each indicated by a numerical identifier []. \
                       Rank them based on their relevance to the query: {query}\n{window}\n\
                       Rank the passages above by relevance, most relevant first. \
                       Answer only with identifiers, e.g. [2] > [1]."
                .into(),
        }
    }
}

const PLACEHOLDERS: [&str; 5] = ["query", "passage", "passage_a", "passage_b", "window"];

impl Templates {
    pub fn from_json(text: &str) -> Result<Self> {
        let t: Templates = serde_json::from_str(text)?;
        t.validate()?;
        Ok(t)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let required: [(&str, &str, &[&str]); 5] = [
            ("binary", &self.binary, &["query", "passage"]),
            ("likert", &self.likert, &["query", "passage"]),
            ("b_upr", &self.query_generation, &["passage"]),
            ("b_prp", &self.pairwise, &["query", "passage_a", "passage_b"]),
            ("listwise", &self.listwise, &["query", "window"]),
        ];
        for (name, template, needs) in required {
            let segs = parse_template(template).map_err(|e| Error::Template(format!("{name}: {e}")))?;
            let present: HashSet<&str> = segs
                .iter()
                .filter_map(|s| match s {
                    Segment::Slot(n) => Some(*n),
                    Segment::Text(_) => None,
                })
                .collect();
            for need in needs {
                if !present.contains(need) {
                    return Err(Error::Template(format!("{name}: missing {{{need}}}")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, PartialEq)]
enum Segment<'a> {
    Text(&'a str),
    Slot(&'a str),
}

fn parse_template(template: &str) -> std::result::Result<Vec<Segment<'_>>, String> {
    let mut out = Vec::new();
    let mut rest = template;
    let mut offset = 0;
    while let Some(open) = rest.find('{') {
        let Some(close) = rest[open..].find('}') else {
            out.push(Segment::Text(rest));
            return Ok(out);
        };
        let name = &rest[open + 1..open + close];
        if PLACEHOLDERS.contains(&name) {
            let before = &template[..offset + open];
            let after = &rest[open + close + 1..];
            let ws_before = before.chars().last().is_none_or(char::is_whitespace);
            let ws_after = after.chars().next().is_none_or(char::is_whitespace);
            if !(ws_before && ws_after) {
                return Err(format!("placeholder {{{name}}} must be whitespace-delimited"));
            }
            if open > 0 {
                out.push(Segment::Text(&rest[..open]));
            }
            out.push(Segment::Slot(name));
        } else {
            out.push(Segment::Text(&rest[..open + close + 1]));
        }
        offset += open + close + 1;
        rest = &rest[open + close + 1..];
    }
    if !rest.is_empty() {
        out.push(Segment::Text(rest));
    }
    Ok(out)
}

/// Single-pass substitution, so placeholder-like text inside a passage is
/// never expanded.
fn render(template: &str, lookup: impl Fn(&str) -> Option<String>) -> String {
    let segs = parse_template(template).expect("templates are validated on construction");
    let mut s = String::with_capacity(template.len() + 256);
    for seg in segs {
        match seg {
            Segment::Text(t) => s.push_str(t),
            Segment::Slot(name) => s.push_str(&lookup(name).unwrap_or_default()),
        }
    }
    s
}

/// Tokens contributed by the fixed wording of a template.
pub fn template_overhead(template: &str) -> usize {
    render(template, |_| Some(String::new())).split_whitespace().count()
}

fn record(kind: PromptKind, text: String, passage_ids: Vec<String>, cap: usize) -> PromptRecord {
    let prompt_tokens = count_tokens(&text);
    PromptRecord {
        kind,
        text,
        passage_ids,
        max_output_tokens: cap,
        prompt_tokens,
    }
}

pub fn render_binary(t: &Templates, query: &str, passage: &Passage) -> PromptRecord {
    let text = render(&t.binary, |slot| match slot {
        "query" => Some(query.to_string()),
        "passage" => Some(passage.text.clone()),
        _ => None,
    });
    record(PromptKind::Binary, text, vec![passage.id.clone()], POINTWISE_OUTPUT_CAP)
}

pub fn render_likert(t: &Templates, query: &str, passage: &Passage) -> PromptRecord {
    let text = render(&t.likert, |slot| match slot {
        "query" => Some(query.to_string()),
        "passage" => Some(passage.text.clone()),
        _ => None,
    });
    record(PromptKind::Likert, text, vec![passage.id.clone()], POINTWISE_OUTPUT_CAP)
}

pub fn render_querygen(t: &Templates, passage: &Passage) -> PromptRecord {
    let text = render(&t.query_generation, |slot| match slot {
        "passage" => Some(passage.text.clone()),
        _ => None,
    });
    record(
        PromptKind::QueryGen,
        text,
        vec![passage.id.clone()],
        QUERYGEN_OUTPUT_CAP,
    )
}

/// `a` is shown as "Passage A", `b` as "Passage B".
pub fn render_pairwise(t: &Templates, query: &str, a: &Passage, b: &Passage) -> PromptRecord {
    let text = render(&t.pairwise, |slot| match slot {
        "query" => Some(query.to_string()),
        "passage_a" => Some(a.text.clone()),
        "passage_b" => Some(b.text.clone()),
        _ => None,
    });
    record(
        PromptKind::Pairwise,
        text,
        vec![a.id.clone(), b.id.clone()],
        PAIRWISE_OUTPUT_CAP,
    )
}

/// Window passages are labelled `[1]..[w]` in the order given.
pub fn render_listwise(t: &Templates, query: &str, window: &[&Passage]) -> PromptRecord {
    let block = window
        .iter()
        .enumerate()
        .map(|(i, p)| format!("[{}] {}", i + 1, p.text))
        .collect::<Vec<_>>()
        .join("\n");
    let text = render(&t.listwise, |slot| match slot {
        "query" => Some(query.to_string()),
        "window" => Some(block.clone()),
        _ => None,
    });
    record(
        PromptKind::Listwise,
        text,
        window.iter().map(|p| p.id.clone()).collect(),
        LISTWISE_TOKENS_PER_PASSAGE * window.len(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryAnswer {
    Yes,
    No,
    Unparseable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LikertAnswer {
    VeryRelated,
    SomewhatRelated,
    Unrelated,
    Unparseable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PairwiseAnswer {
    A,
    B,
    Unparseable,
}

impl BinaryAnswer {
    pub fn canonical(self) -> &'static str {
        match self {
            BinaryAnswer::Yes => "Yes",
            BinaryAnswer::No => "No",
            BinaryAnswer::Unparseable => "",
        }
    }
}

impl LikertAnswer {
    /// Single-token labels, so a one-token output cap never truncates them.
    pub fn canonical(self) -> &'static str {
        match self {
            LikertAnswer::VeryRelated => "Very",
            LikertAnswer::SomewhatRelated => "Somewhat",
            LikertAnswer::Unrelated => "Unrelated",
            LikertAnswer::Unparseable => "",
        }
    }
}

impl PairwiseAnswer {
    pub fn canonical(self) -> &'static str {
        match self {
            PairwiseAnswer::A => "A",
            PairwiseAnswer::B => "B",
            PairwiseAnswer::Unparseable => "",
        }
    }
}

fn words(output: &str) -> impl Iterator<Item = String> + '_ {
    output
        .split(|c: char| !c.is_alphabetic())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

pub fn parse_binary(output: &str) -> BinaryAnswer {
    match words(output).next().as_deref() {
        Some("yes") => BinaryAnswer::Yes,
        Some("no") => BinaryAnswer::No,
        _ => BinaryAnswer::Unparseable,
    }
}

/// Matches the leading label: "very [related]", "somewhat [related]" or "unrelated".
pub fn parse_likert(output: &str) -> LikertAnswer {
    let mut w = words(output);
    let first = w.next();
    let second = w.next();
    let related_or_end = matches!(second.as_deref(), None | Some("related"));
    match first.as_deref() {
        Some("very") if related_or_end => LikertAnswer::VeryRelated,
        Some("somewhat") if related_or_end => LikertAnswer::SomewhatRelated,
        Some("unrelated") => LikertAnswer::Unrelated,
        _ => LikertAnswer::Unparseable,
    }
}

/// Accepts "A", "B", "Passage A", "passage b." and the like.
pub fn parse_pairwise(output: &str) -> PairwiseAnswer {
    let mut w = words(output);
    let mut first = w.next();
    if first.as_deref() == Some("passage") {
        first = w.next();
    }
    match first.as_deref() {
        Some("a") => PairwiseAnswer::A,
        Some("b") => PairwiseAnswer::B,
        _ => PairwiseAnswer::Unparseable,
    }
}

fn bracket_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\[(\d+)\]").expect("static regex"))
}

/// Extracts `[i]` identifiers in order. Returns `None` unless they are
/// exactly a permutation of `1..=window_len`.
pub fn parse_listwise(output: &str, window_len: usize) -> Option<Vec<usize>> {
    let mut seen = vec![false; window_len];
    let mut out = Vec::with_capacity(window_len);
    for cap in bracket_re().captures_iter(output) {
        let id: usize = cap[1].parse().ok()?;
        if id == 0 || id > window_len || seen[id - 1] {
            return None;
        }
        seen[id - 1] = true;
        out.push(id);
    }
    (out.len() == window_len).then_some(out)
}

/// The answer string a well-behaved model would give for a window permutation.
pub fn format_listwise(permutation: &[usize]) -> String {
    permutation
        .iter()
        .map(|i| format!("[{i}]"))
        .collect::<Vec<_>>()
        .join(" > ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn passage(id: &str, text: &str) -> Passage {
        Passage {
            id: id.into(),
            text: text.into(),
            initial_rank: 0,
            initial_score: None,
        }
    }

    #[test]
    fn binary_render_contract() {
        let t = Templates::default();
        let q = "who wrote hamlet";
        let p = passage("p1", "Hamlet is a tragedy by William Shakespeare.");
        let r = render_binary(&t, q, &p);
        assert!(r.text.contains(q) && r.text.contains(&p.text));
        assert_eq!(r.max_output_tokens, 1);
        assert_eq!(r.passage_ids, vec!["p1"]);
        let r2 = render_binary(&t, q, &passage("p2", "Macbeth is another play."));
        assert_ne!(r.text, r2.text);
    }

    #[test]
    fn rendered_tokens_are_overhead_plus_inputs() {
        let t = Templates::default();
        let q = "who wrote   hamlet";
        let a = passage("a", "Hamlet is a tragedy\nby Shakespeare");
        let b = passage("b", "Macbeth too");
        let oh = template_overhead(&t.binary);
        // "Passage: Query: Does the passage answer the query? Answer only Yes or No."
        assert_eq!(oh, 13);
        assert_eq!(render_binary(&t, q, &a).prompt_tokens, oh + 3 + 6);
        let oh = template_overhead(&t.query_generation);
        assert_eq!(render_querygen(&t, &a).prompt_tokens, oh + 6);
        assert_eq!(render_querygen(&t, &a).max_output_tokens, 32);
        let oh = template_overhead(&t.pairwise);
        assert_eq!(render_pairwise(&t, q, &a, &b).prompt_tokens, oh + 3 + 6 + 2);
        // each window line adds its "[i]" label
        let oh = template_overhead(&t.listwise);
        let r = render_listwise(&t, q, &[&a, &b]);
        assert_eq!(r.prompt_tokens, oh + 3 + (1 + 6) + (1 + 2));
        assert_eq!(r.max_output_tokens, 8);
        let oh = template_overhead(&t.likert);
        assert_eq!(render_likert(&t, q, &b).prompt_tokens, oh + 3 + 2);
    }

    #[test]
    fn placeholder_text_in_passages_is_not_expanded() {
        let t = Templates::default();
        let p = passage("p", "see {query} here");
        let r = render_binary(&t, "QQQ", &p);
        assert!(r.text.contains("see {query} here"));
        assert_eq!(r.text.matches("QQQ").count(), 1);
    }

    #[test]
    fn pairwise_labels_in_order() {
        let t = Templates::default();
        let r = render_pairwise(&t, "q", &passage("x", "first"), &passage("y", "second"));
        let a = r.text.find("Passage A: first").unwrap();
        let b = r.text.find("Passage B: second").unwrap();
        assert!(a < b);
        assert_eq!(r.passage_ids, vec!["x", "y"]);
    }

    #[test]
    fn template_validation() {
        let t = Templates {
            binary: "Passage:{passage} Query: {query}".into(),
            ..Default::default()
        };
        assert!(t.validate().is_err(), "glued placeholder");
        let t = Templates {
            pairwise: "{query} {passage_a}".into(),
            ..Default::default()
        };
        assert!(t.validate().is_err(), "missing passage_b");
        let t = Templates::from_json(r#"{"binary": "{passage} {query} yes or no?"}"#).unwrap();
        assert_eq!(t.binary, "{passage} {query} yes or no?");
        assert_eq!(t.likert, Templates::default().likert);
    }

    #[test]
    fn binary_parsing() {
        assert_eq!(parse_binary("Yes"), BinaryAnswer::Yes);
        assert_eq!(parse_binary("no."), BinaryAnswer::No);
        assert_eq!(parse_binary("  YES, it is"), BinaryAnswer::Yes);
        assert_eq!(parse_binary("maybe relevant"), BinaryAnswer::Unparseable);
        assert_eq!(parse_binary(""), BinaryAnswer::Unparseable);
        assert_eq!(parse_binary("nope"), BinaryAnswer::Unparseable);
    }

    #[test]
    fn likert_parsing() {
        assert_eq!(parse_likert("Very related"), LikertAnswer::VeryRelated);
        assert_eq!(parse_likert("somewhat related"), LikertAnswer::SomewhatRelated);
        assert_eq!(parse_likert("Unrelated."), LikertAnswer::Unrelated);
        assert_eq!(parse_likert("Very"), LikertAnswer::VeryRelated);
        assert_eq!(parse_likert("kind of"), LikertAnswer::Unparseable);
        assert_eq!(parse_likert("very unrelated"), LikertAnswer::Unparseable);
    }

    #[test]
    fn pairwise_parsing() {
        assert_eq!(parse_pairwise("Passage A"), PairwiseAnswer::A);
        assert_eq!(parse_pairwise("B"), PairwiseAnswer::B);
        assert_eq!(parse_pairwise("passage b."), PairwiseAnswer::B);
        assert_eq!(parse_pairwise("both"), PairwiseAnswer::Unparseable);
        assert_eq!(parse_pairwise("Passage"), PairwiseAnswer::Unparseable);
    }

    #[test]
    fn listwise_parsing() {
        assert_eq!(parse_listwise("[2] > [1] > [3]", 3), Some(vec![2, 1, 3]));
        assert_eq!(parse_listwise("[1]>[1]>[2]", 3), None);
        assert_eq!(parse_listwise("[3] > [1] > [2]", 3), Some(vec![3, 1, 2]));
        assert_eq!(parse_listwise("[1] > [2]", 3), None);
        assert_eq!(parse_listwise("[1] > [4] > [2]", 3), None);
        assert_eq!(parse_listwise("no idea", 2), None);
    }

    #[test]
    fn canonical_round_trips() {
        for a in [BinaryAnswer::Yes, BinaryAnswer::No] {
            assert_eq!(parse_binary(a.canonical()), a);
        }
        for a in [
            LikertAnswer::VeryRelated,
            LikertAnswer::SomewhatRelated,
            LikertAnswer::Unrelated,
        ] {
            assert_eq!(parse_likert(a.canonical()), a);
        }
        for a in [PairwiseAnswer::A, PairwiseAnswer::B] {
            assert_eq!(parse_pairwise(a.canonical()), a);
        }
    }

    proptest! {
        #[test]
        fn listwise_round_trip(perm in Just((1..=8usize).collect::<Vec<_>>()).prop_shuffle()) {
            prop_assert_eq!(parse_listwise(&format_listwise(&perm), perm.len()), Some(perm));
        }

        #[test]
        fn parsers_never_panic(s in ".{0,40}", n in 0usize..6) {
            let _ = parse_binary(&s);
            let _ = parse_likert(&s);
            let _ = parse_pairwise(&s);
            let _ = parse_listwise(&s, n);
        }
    }
}
