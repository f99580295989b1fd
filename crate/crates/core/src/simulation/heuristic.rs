//! A deterministic stand-in for a chat model that understands the prompt
//! formats used by this crate well enough to run every pipeline offline.
//!
//! It asks about a configured list of topics, compiles answers into
//! "Prefer ..." rules, and selects actions by keyword overlap with the rules
//! in force. Ties go to the first displayed action, so an unconditioned run
//! behaves like a positional guess.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::tokens;
use crate::gateway::{tags, ChatProvider, ChatRequest, ChatResponse, ChatRole, ProviderFault};
use crate::hash::fnv1a64;
use crate::prompts::markers;

/// A preference topic the heuristic model knows how to ask about.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topic {
    pub name: String,
    pub keywords: Vec<String>,
    pub question: String,
}

impl Topic {
    fn hits(&self, words: &BTreeSet<String>) -> usize {
        self.keywords
            .iter()
            .filter(|k| {
                // multi-word keywords need every word present
                tokens(k).all(|k| words.contains(&k) || words.contains(&format!("{k}s")))
            })
            .count()
    }
}

pub fn load_topics(path: &Path) -> Result<Vec<Topic>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

const VAGUE: &[&str] = &[
    "no strong preference",
    "don't really care",
    "depends",
    "switch it up",
    "not sure",
    "whatever",
];

/// True for non-answers that carry no usable preference.
pub fn is_vague(answer: &str) -> bool {
    let a = answer.to_lowercase();
    a.trim().is_empty() || VAGUE.iter().any(|v| a.contains(v))
}

const NEGATIONS: &[&str] = &["avoid", "never", "not", "no", "don", "dislike", "without"];

const STOPWORDS: &[&str] = &[
    "the",
    "and",
    "for",
    "with",
    "prefer",
    "prefers",
    "preferred",
    "preference",
    "preferences",
    "always",
    "option",
    "options",
    "choose",
    "pick",
    "serve",
    "user",
    "users",
    "rule",
    "rules",
    "when",
    "that",
    "this",
    "are",
    "over",
    "than",
    "more",
    "less",
    "any",
    "all",
    "their",
    "they",
    "them",
    "from",
    "into",
    "should",
    "would",
    "like",
    "likes",
    "want",
    "wants",
    "something",
    "things",
    "item",
    "items",
    "action",
    "actions",
    "but",
    "also",
    "only",
    "very",
    "much",
];

fn content_tokens(text: &str) -> BTreeSet<String> {
    tokens(text)
        .filter(|t| {
            t.len() > 2 && !STOPWORDS.contains(&t.as_str()) && !NEGATIONS.contains(&t.as_str())
        })
        .collect()
}

/// Positive and negative keyword sets extracted from rule text.
#[derive(Debug, Default)]
struct Preferences {
    positive: BTreeSet<String>,
    negative: BTreeSet<String>,
}

impl Preferences {
    fn from_text(text: &str) -> Self {
        let mut p = Preferences::default();
        for clause in text.split(['.', ';', ',', '\n']) {
            let negated = tokens(clause).any(|t| NEGATIONS.contains(&t.as_str()));
            let words = content_tokens(clause);
            if negated {
                p.negative.extend(words);
            } else {
                p.positive.extend(words);
            }
        }
        p
    }

    fn score(&self, candidate: &str) -> i64 {
        let words = content_tokens(candidate);
        let pos = words.intersection(&self.positive).count() as i64;
        let neg = words.intersection(&self.negative).count() as i64;
        pos - neg
    }

    /// 1-based position of the best candidate; ties go to the earliest.
    fn choose(&self, candidates: &[String]) -> usize {
        let mut best = (i64::MIN, 1);
        for (i, c) in candidates.iter().enumerate() {
            let s = self.score(c);
            if s > best.0 {
                best = (s, i + 1);
            }
        }
        best.1
    }
}

fn re(cell: &'static OnceLock<Regex>, pattern: &str) -> &'static Regex {
    cell.get_or_init(|| Regex::new(pattern).expect("static pattern"))
}

/// Text between `start` and the next blank line (or the end).
fn section<'a>(text: &'a str, start: &str) -> Option<&'a str> {
    let from = text.find(start)? + start.len();
    let rest = &text[from..];
    Some(rest.split("\n\n").next().unwrap_or(rest).trim())
}

fn numbered_lines(text: &str) -> Vec<String> {
    static NUM: OnceLock<Regex> = OnceLock::new();
    let num = re(&NUM, r"^\s*\d+[.)]\s+(.+)$");
    text.lines()
        .filter_map(|l| num.captures(l).map(|c| c[1].trim().to_string()))
        .collect()
}

fn rule_from_answer(answer: &str) -> String {
    let a = answer.trim().trim_end_matches(['.', '!']).trim();
    format!("Prefer {a}.")
}

fn quoted_after<'a>(text: &'a str, label: &str) -> Option<&'a str> {
    let from = text.find(label)? + label.len();
    let rest = text[from..].trim_start().strip_prefix('"')?;
    rest.find("\"\n")
        .or_else(|| rest.rfind('"'))
        .map(|end| &rest[..end])
}

#[derive(Debug, Clone)]
struct PromptScenario {
    key: String,
    actions: Vec<String>,
}

fn parse_inference_scenarios(prompt: &str) -> Vec<(usize, PromptScenario)> {
    static HEAD: OnceLock<Regex> = OnceLock::new();
    static ACTION: OnceLock<Regex> = OnceLock::new();
    let head = re(&HEAD, r"--- SCENARIO (\d+) ---");
    let action = re(&ACTION, r"^\s+(\d+)\.\s+(.*)$");
    let starts: Vec<(usize, usize, usize)> = head
        .captures_iter(prompt)
        .map(|c| {
            let m = c.get(0).unwrap();
            (m.start(), m.end(), c[1].parse().unwrap_or(0))
        })
        .collect();
    let mut out = Vec::new();
    for (i, &(_, body_start, ordinal)) in starts.iter().enumerate() {
        let end = starts.get(i + 1).map(|s| s.0).unwrap_or(prompt.len());
        let body = &prompt[body_start..end];
        let body = body.split("Respond for ALL").next().unwrap_or(body);
        let mut env = "";
        let mut request = "";
        let mut actions = Vec::new();
        let mut in_actions = false;
        for line in body.lines() {
            if let Some(v) = line.strip_prefix("Environment: ") {
                env = v;
            } else if let Some(v) = line.strip_prefix("User Request: ") {
                request = v;
            } else if line.starts_with("Possible Actions:") {
                in_actions = true;
            } else if in_actions {
                if let Some(c) = action.captures(line) {
                    actions.push(c[2].to_string());
                }
            }
        }
        out.push((
            ordinal,
            PromptScenario {
                key: format!("{env}|{request}"),
                actions,
            },
        ));
    }
    out
}

/// Deterministic prompt-aware chat model for offline runs.
#[derive(Debug, Clone)]
pub struct HeuristicModel {
    model_id: String,
    topics: Vec<Topic>,
    slip_modulus: u64,
}

impl HeuristicModel {
    pub fn new(model_id: impl Into<String>, topics: Vec<Topic>) -> Self {
        HeuristicModel {
            model_id: model_id.into(),
            topics,
            slip_modulus: 0,
        }
    }

    /// Ignores the rules for scenarios whose hash is divisible by `modulus`
    /// (0 disables), picking the first displayed action instead.
    pub fn with_slip(mut self, modulus: u64) -> Self {
        self.slip_modulus = modulus;
        self
    }

    pub fn topics(&self) -> &[Topic] {
        &self.topics
    }

    fn respond(&self, req: &ChatRequest) -> String {
        let prompt = req.last_user_text();
        match req.tag.as_str() {
            tags::ELICITATION => self.elicit(req),
            tags::ANALYSIS => self.analyze(prompt),
            tags::SYNTHESIS => self.synthesize(prompt),
            tags::CONTRADICTION => contradict(prompt),
            tags::INFERENCE | tags::VERIFICATION => self.infer(prompt),
            tags::CRITIC => self.critic(prompt),
            tags::SUMMARIZE => summarize(prompt),
            tags::GATE_QUESTION => self.gate_question(prompt),
            tags::CIPHER_SELECT => cipher_select(prompt),
            tags::CIPHER_AGGREGATE => section(prompt, "past scenarios:\n")
                .map(|s| {
                    s.lines()
                        .map(|l| l.trim_start_matches("- "))
                        .collect::<Vec<_>>()
                        .join(" ")
                })
                .unwrap_or_default(),
            tags::CIPHER_INDUCE => prompt
                .lines()
                .find_map(|l| l.strip_prefix("The correct answer was: "))
                .map(rule_from_answer)
                .unwrap_or_default(),
            _ => "no strong preference".to_string(),
        }
    }

    fn topic_named(&self, name: &str) -> Option<&Topic> {
        self.topics
            .iter()
            .find(|t| t.name.eq_ignore_ascii_case(name))
    }

    fn elicit(&self, req: &ChatRequest) -> String {
        let asked: Vec<&str> = req
            .messages
            .iter()
            .filter(|m| m.role == ChatRole::Assistant)
            .map(|m| m.text.as_str())
            .collect();
        let dims = section(req.last_user_text(), "still unresolved:\n").unwrap_or("");
        for line in dims.lines() {
            let name = line
                .trim_start_matches("- ")
                .split(':')
                .next()
                .unwrap_or("")
                .trim();
            if let Some(t) = self.topic_named(name) {
                if !asked.iter().any(|q| q.contains(&t.question)) {
                    return t.question.clone();
                }
            }
        }
        "Thanks, that covers what I need to know. PAUSE: true".to_string()
    }

    fn analyze(&self, prompt: &str) -> String {
        let kb = match (
            prompt.find("Example scenarios:\n"),
            prompt.find("Conversation so far:"),
        ) {
            (Some(s), Some(e)) if e > s => &prompt[s..e],
            _ => "",
        };
        let transcript = section(prompt, "Conversation so far:\n").unwrap_or("");
        let words: BTreeSet<String> = tokens(kb).collect();
        let open: Vec<String> = self
            .topics
            .iter()
            .filter(|t| t.hits(&words) > 0 && !transcript.contains(&t.question))
            .map(|t| format!("- {}: {}", t.name, t.keywords.join("/")))
            .collect();
        if open.is_empty() {
            "NONE".to_string()
        } else {
            open.join("\n")
        }
    }

    fn synthesize(&self, prompt: &str) -> String {
        let transcript = prompt
            .find("Conversation:\n")
            .map(|s| &prompt[s + "Conversation:\n".len()..])
            .and_then(|t| t.split("\n\nThe rules").next())
            .unwrap_or("");
        let rules: Vec<String> = transcript
            .lines()
            .filter_map(|l| l.strip_prefix("user: "))
            .filter(|a| !is_vague(a))
            .map(rule_from_answer)
            .collect();
        if rules.is_empty() {
            return "1. No specific preferences were expressed.".to_string();
        }
        number(&rules)
    }

    fn infer(&self, prompt: &str) -> String {
        let slot = prompt
            .find("Based on these preference rules:\n")
            .and_then(|s| {
                let rest = &prompt[s + "Based on these preference rules:\n".len()..];
                rest.find("\n\nEvaluate ").map(|e| &rest[..e])
            })
            .unwrap_or("");
        let prefs = Preferences::from_text(&conditioning_text(slot));
        let mut out = String::new();
        for (ordinal, s) in parse_inference_scenarios(prompt) {
            let slipped = self.slip_modulus > 0
                && fnv1a64(s.key.as_bytes()).is_multiple_of(self.slip_modulus);
            let action = if slipped { 1 } else { prefs.choose(&s.actions) };
            let reasoning = if slipped || prefs.positive.is_empty() && prefs.negative.is_empty() {
                "No clear preference signal; taking the first option."
            } else {
                "Best keyword match with the stated preferences."
            };
            out.push_str(&format!(
                "SCENARIO {ordinal}:\nAction: {action}\nReasoning: {reasoning}\nConfidence: 7\n\n"
            ));
        }
        out
    }

    fn critic(&self, prompt: &str) -> String {
        if prompt.contains(markers::INVESTIGATE_FAILURES) {
            static FRAC: OnceLock<Regex> = OnceLock::new();
            let frac = re(&FRAC, r"(\d+)/(\d+) correct");
            let failing = frac
                .captures(prompt)
                .map(|c| c[1].parse::<usize>().unwrap_or(0) < c[2].parse::<usize>().unwrap_or(0))
                .unwrap_or(false);
            let verdict = if failing { "YES" } else { "NO" };
            return format!("{}: {verdict}", markers::INVESTIGATE_FAILURES);
        }
        if prompt.contains(markers::WANT_TO_UPDATE_RULES) {
            let answer = quoted_after(prompt, "The user responded:").unwrap_or("");
            let verdict = if is_vague(answer) { "NO" } else { "YES" };
            return format!("{}: {verdict}", markers::WANT_TO_UPDATE_RULES);
        }
        if prompt.contains(markers::UPDATED_RULES) {
            return format!("{}:\n{}", markers::UPDATED_RULES, self.update_rules(prompt));
        }
        format!(
            "{}: {}",
            markers::QUESTION_FOR_USER,
            self.failure_question(prompt)
        )
    }

    fn topic_for_question(&self, question: &str) -> Option<&Topic> {
        self.topics
            .iter()
            .find(|t| question.contains(&t.question))
            .or_else(|| {
                let words: BTreeSet<String> = tokens(question).collect();
                best_topic(&self.topics, &words)
            })
    }

    fn update_rules(&self, prompt: &str) -> String {
        let question = quoted_after(prompt, "You asked:").unwrap_or("");
        let answer = quoted_after(prompt, "The user responded:").unwrap_or("");
        let current = section(prompt, "Current rules:\n")
            .map(numbered_lines)
            .unwrap_or_default();
        let topic = self.topic_for_question(question);
        let mut rules: Vec<String> = current
            .into_iter()
            .filter(|r| {
                let words: BTreeSet<String> = tokens(r).collect();
                topic.is_none_or(|t| t.hits(&words) == 0)
            })
            .collect();
        rules.push(rule_from_answer(answer));
        number(&rules)
    }

    /// Asks about the topic mentioned by the most failing lines.
    fn failure_question(&self, prompt: &str) -> String {
        let failures: Vec<BTreeSet<String>> = prompt
            .lines()
            .filter(|l| l.contains("INCORRECT"))
            .map(|l| tokens(l).collect())
            .collect();
        let mut best: Option<(&Topic, usize)> = None;
        for t in &self.topics {
            let n = failures.iter().filter(|w| t.hits(w) > 0).count();
            if n > 0 && best.is_none_or(|(_, b)| n > b) {
                best = Some((t, n));
            }
        }
        best.map(|(t, _)| t.question.clone())
            .unwrap_or_else(|| "Which option would you have wanted in these cases?".to_string())
    }

    fn gate_question(&self, prompt: &str) -> String {
        let asked = prompt
            .find("Previous questions:\n")
            .map(|s| &prompt[s..])
            .unwrap_or("");
        self.topics
            .iter()
            .find(|t| !asked.contains(&t.question))
            .map(|t| t.question.clone())
            .unwrap_or_else(|| {
                "Is there anything else about how I should behave that matters to you?".to_string()
            })
    }
}

fn best_topic<'a>(topics: &'a [Topic], words: &BTreeSet<String>) -> Option<&'a Topic> {
    let mut best: Option<(&Topic, usize)> = None;
    for t in topics {
        let h = t.hits(words);
        if h > 0 && best.is_none_or(|(_, b)| h > b) {
            best = Some((t, h));
        }
    }
    best.map(|(t, _)| t)
}

/// Rules, labeled-example answers, or user turns of a transcript.
fn conditioning_text(slot: &str) -> String {
    if slot.starts_with("Example scenarios:") {
        return String::new();
    }
    if slot.starts_with("Example scenarios with") {
        return slot
            .lines()
            .filter_map(|l| l.trim().strip_prefix("Correct action: "))
            .collect::<Vec<_>>()
            .join("\n");
    }
    if slot.lines().any(|l| l.starts_with("agent: ")) {
        return slot
            .lines()
            .filter_map(|l| l.strip_prefix("user: "))
            .filter(|a| !is_vague(a))
            .collect::<Vec<_>>()
            .join("\n");
    }
    slot.to_string()
}

fn number(rules: &[String]) -> String {
    rules
        .iter()
        .enumerate()
        .map(|(i, r)| format!("{}. {r}", i + 1))
        .collect::<Vec<_>>()
        .join("\n")
}

fn contradict(prompt: &str) -> String {
    let rules = numbered_lines(prompt);
    let negated: Vec<String> = rules
        .iter()
        .map(|r| {
            if let Some(rest) = r.strip_prefix("Prefer ") {
                format!("Avoid {rest}")
            } else if let Some(rest) = r.strip_prefix("Avoid ") {
                format!("Prefer {rest}")
            } else {
                format!("Never follow this: {r}")
            }
        })
        .collect();
    number(&negated)
}

fn summarize(prompt: &str) -> String {
    let mut seen = BTreeSet::new();
    let rules: Vec<String> = prompt
        .lines()
        .filter_map(|l| l.trim().strip_prefix("Preferred action: "))
        .filter(|a| seen.insert(a.to_lowercase()))
        .map(rule_from_answer)
        .collect();
    if rules.is_empty() {
        return "No examples to summarize.".to_string();
    }
    number(&rules)
}

fn cipher_select(prompt: &str) -> String {
    let pref = prompt
        .lines()
        .find_map(|l| l.strip_prefix("User preferences: "))
        .unwrap_or("");
    let actions = section(prompt, "Available actions:\n")
        .map(numbered_lines)
        .unwrap_or_default();
    Preferences::from_text(pref).choose(&actions).to_string()
}

impl ChatProvider for HeuristicModel {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn complete(&self, req: &ChatRequest) -> std::result::Result<ChatResponse, ProviderFault> {
        Ok(ChatResponse {
            text: self.respond(req),
            model_id: self.model_id.clone(),
            usage: None,
        })
    }
}
