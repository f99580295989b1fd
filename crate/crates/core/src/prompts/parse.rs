use std::collections::{BTreeMap, HashMap};
use std::sync::{Mutex, OnceLock};

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Section and verdict markers used by the critic prompts.
pub mod markers {
    pub const INVESTIGATE_FAILURES: &str = "INVESTIGATE_FAILURES";
    pub const WANT_TO_UPDATE_RULES: &str = "WANT_TO_UPDATE_RULES";
    pub const QUESTION_FOR_USER: &str = "QUESTION_FOR_USER";
    pub const UPDATED_RULES: &str = "UPDATED_RULES";
}

/// Characters at the end of a reply that are searched for the pause token.
const PAUSE_WINDOW: usize = 80;

macro_rules! static_re {
    ($name:ident, $pat:expr) => {
        fn $name() -> &'static Regex {
            static RE: OnceLock<Regex> = OnceLock::new();
            RE.get_or_init(|| Regex::new($pat).expect(stringify!($name)))
        }
    };
}

static_re!(pause_re, r"(?i)\bpause\s*:\s*true\b");
static_re!(numbered_re, r"^\s*(\d+)\s*[.)]\s+(.*\S)\s*$");
static_re!(
    header_re,
    r"(?im)^[ \t]*\**[ \t]*SCENARIO[ \t]+(\d+)[ \t]*:\**[ \t]*"
);
static_re!(
    action_re,
    r"(?im)^[ \t]*\**Action\**[ \t]*:[ \t]*(.*?)[ \t]*$"
);
static_re!(
    reasoning_re,
    r"(?ism)^[ \t]*\**Reasoning\**[ \t]*:[ \t]*(.*?)(?:^[ \t]*\**Confidence\**[ \t]*:|\z)"
);
static_re!(
    confidence_re,
    r"(?im)^[ \t]*\**Confidence\**[ \t]*:[ \t]*(\d+)"
);
static_re!(integer_re, r"\d+");
static_re!(dimension_re, r"^\s*(?:[-*•]|\d+[.)])\s+(.*\S)\s*$");

/// True iff the reply ends with the `PAUSE: true` control token.
pub fn parse_pause(text: &str) -> bool {
    let trimmed = text.trim_end();
    let start = trimmed
        .char_indices()
        .rev()
        .nth(PAUSE_WINDOW - 1)
        .map(|(i, _)| i)
        .unwrap_or(0);
    pause_re().is_match(&trimmed[start..])
}

/// Extracts `N. <rule>` lines, numerals stripped. Indented lines directly
/// after a rule are treated as its wrapped continuation.
pub fn parse_numbered_rules(text: &str) -> Result<Vec<String>> {
    let mut rules: Vec<String> = Vec::new();
    let mut continuing = false;
    for line in text.lines() {
        if let Some(c) = numbered_re().captures(line) {
            rules.push(c[2].to_string());
            continuing = true;
        } else if continuing
            && !line.trim().is_empty()
            && line.starts_with(char::is_whitespace)
            && !line.trim_start().starts_with('[')
        {
            let last = rules.last_mut().expect("continuing implies a rule");
            last.push(' ');
            last.push_str(line.trim());
        } else {
            continuing = false;
        }
    }
    if rules.is_empty() {
        return Err(Error::parse("no numbered rules found"));
    }
    Ok(rules)
}

/// One per-scenario answer block of a batched inference reply.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionBlock {
    pub scenario_ordinal: usize,
    pub action: usize,
    pub reasoning: String,
    pub confidence: Option<u8>,
}

/// Parses whatever blocks are well formed; failures are reported per ordinal.
pub fn parse_decision_blocks_partial(
    text: &str,
    expected_count: usize,
) -> (BTreeMap<usize, DecisionBlock>, BTreeMap<usize, String>) {
    let mut blocks = BTreeMap::new();
    let mut failures = BTreeMap::new();
    let headers: Vec<(usize, usize, Option<usize>)> = header_re()
        .captures_iter(text)
        .map(|c| {
            let m = c.get(0).expect("match");
            (m.start(), m.end(), c[1].parse::<usize>().ok())
        })
        .collect();
    for (i, &(_, body_start, ordinal)) in headers.iter().enumerate() {
        let Some(ordinal) = ordinal else { continue };
        if ordinal == 0 || ordinal > expected_count {
            continue;
        }
        let body_end = headers.get(i + 1).map(|h| h.0).unwrap_or(text.len());
        let body = &text[body_start..body_end];
        if blocks.contains_key(&ordinal) || failures.contains_key(&ordinal) {
            blocks.remove(&ordinal);
            failures.insert(ordinal, "duplicate block".to_string());
            continue;
        }
        match parse_block(ordinal, body) {
            Ok(b) => {
                blocks.insert(ordinal, b);
            }
            Err(msg) => {
                failures.insert(ordinal, msg);
            }
        }
    }
    for ordinal in 1..=expected_count {
        if !blocks.contains_key(&ordinal) && !failures.contains_key(&ordinal) {
            failures.insert(ordinal, "missing block".to_string());
        }
    }
    (blocks, failures)
}

fn parse_block(ordinal: usize, body: &str) -> std::result::Result<DecisionBlock, String> {
    let raw = action_re()
        .captures(body)
        .map(|c| c[1].to_string())
        .ok_or_else(|| "missing Action line".to_string())?;
    let raw = raw.trim_matches(|c: char| c == '*' || c.is_whitespace());
    if raw.is_empty() || !raw.bytes().all(|b| b.is_ascii_digit()) {
        return Err(format!("action `{raw}` is not a single integer"));
    }
    let action = raw
        .parse::<usize>()
        .map_err(|_| format!("action `{raw}` out of range"))?;
    let reasoning = reasoning_re()
        .captures(body)
        .map(|c| {
            c[1].lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .collect::<Vec<_>>()
                .join(" ")
        })
        .unwrap_or_default();
    let confidence = confidence_re()
        .captures(body)
        .and_then(|c| c[1].parse::<u8>().ok())
        .filter(|c| (1..=10).contains(c));
    Ok(DecisionBlock {
        scenario_ordinal: ordinal,
        action,
        reasoning,
        confidence,
    })
}

/// Strict parse: exactly one valid block for every ordinal `1..=expected_count`.
pub fn parse_decision_blocks(text: &str, expected_count: usize) -> Result<Vec<DecisionBlock>> {
    if expected_count == 0 {
        return Err(Error::Precondition(
            "expected_count must be at least 1".into(),
        ));
    }
    let (blocks, failures) = parse_decision_blocks_partial(text, expected_count);
    if let Some((ordinal, msg)) = failures.into_iter().next() {
        return Err(Error::parse_at(ordinal, msg));
    }
    Ok(blocks.into_values().collect())
}

/// Renders blocks in the response shape the inference prompt requests.
pub fn format_decision_blocks(blocks: &[DecisionBlock]) -> String {
    let mut out = String::new();
    for b in blocks {
        out.push_str(&format!(
            "SCENARIO {}:\nAction: {}\nReasoning: {}\n",
            b.scenario_ordinal, b.action, b.reasoning
        ));
        if let Some(c) = b.confidence {
            out.push_str(&format!("Confidence: {c}\n"));
        }
        out.push('\n');
    }
    out
}

/// Compiled marker patterns, keyed by (pattern kind, marker).
fn marker_re(kind: &'static str, marker: &str, build: impl FnOnce(&str) -> String) -> Regex {
    static CACHE: OnceLock<Mutex<HashMap<(&'static str, String), Regex>>> = OnceLock::new();
    let mut cache = CACHE
        .get_or_init(Default::default)
        .lock()
        .unwrap_or_else(|p| p.into_inner());
    cache
        .entry((kind, marker.to_string()))
        .or_insert_with(|| Regex::new(&build(&regex::escape(marker))).expect("marker pattern"))
        .clone()
}

fn yes_no_re(marker: &str) -> Regex {
    marker_re("verdict", marker, |m| {
        format!(r"(?i){m}\s*:?\s*\[?\s*\**\s*(yes|no)\b(\s+or\s+(?:yes|no))?")
    })
}

/// Reads a `MARKER: YES|NO` verdict. Echoes of the `[YES or NO]` prompt
/// scaffolding are skipped; the last real verdict wins.
pub fn parse_yes_no(text: &str, marker: &str) -> Result<bool> {
    let marker_core = marker.trim_end_matches(':');
    if !text.to_lowercase().contains(&marker_core.to_lowercase()) {
        return Err(Error::parse(format!("marker {marker_core} absent")));
    }
    yes_no_re(marker_core)
        .captures_iter(text)
        .filter(|c| c.get(2).is_none())
        .last()
        .map(|c| c[1].eq_ignore_ascii_case("yes"))
        .ok_or_else(|| Error::parse(format!("marker {marker_core} not followed by YES or NO")))
}

/// Text following the last occurrence of `marker`, trimmed.
pub fn parse_section(text: &str, marker: &str) -> Result<String> {
    let marker_core = marker.trim_end_matches(':');
    let re = marker_re("section", marker_core, |m| format!(r"(?i){m}\s*:?"));
    let last = re
        .find_iter(text)
        .last()
        .ok_or_else(|| Error::parse(format!("marker {marker_core} absent")))?;
    Ok(text[last.end()..].trim().to_string())
}

/// Dimension list from the example-analysis reply; `NONE` means no open dimensions.
pub fn parse_dimensions(text: &str) -> Vec<String> {
    if text.trim().eq_ignore_ascii_case("none") {
        return Vec::new();
    }
    text.lines()
        .filter_map(|l| dimension_re().captures(l).map(|c| c[1].to_string()))
        .collect()
}

pub fn parse_first_integer(text: &str) -> Option<usize> {
    integer_re()
        .find(text)
        .and_then(|m| m.as_str().parse().ok())
}

#[cfg(test)]
mod tests {
    use super::*;

    const D3_RESPONSE: &str = "SCENARIO 1:
Action: 2
Reasoning: Iced tea is cold (rule 1) and non-caffeinated style; coffee
violates rule 1 and rule 2 at 3pm; cola is heavily sweetened (rule 3).
Confidence: 9

SCENARIO 2:
Action: 3
Reasoning: Apple is healthier (rule 4) and lightly sweet, matching the
user's preference profile better than chocolate or chips.
Confidence: 8
";

    #[test]
    fn pause_token() {
        assert!(parse_pause("...Got it. PAUSE: true"));
        assert!(!parse_pause("we should pause here"));
        assert!(parse_pause("PAUSE: TRUE\n"));
        assert!(!parse_pause("PAUSE: false"));
        let quoted = format!("Rule: say PAUSE: true at the end.{}", " filler".repeat(20));
        assert!(!parse_pause(&quoted));
    }

    #[test]
    fn numbered_rules() {
        assert_eq!(
            parse_numbered_rules("1. Serve drinks cold.\n2. Prefer fruit.").unwrap(),
            vec!["Serve drinks cold.", "Prefer fruit."]
        );
        assert!(parse_numbered_rules("no rules here")
            .unwrap_err()
            .is_parse());
    }

    #[test]
    fn synthesized_rule_list_with_wrapping() {
        let mut reply = String::from(
            "1. Always serve drinks cold; never hot.
2. Avoid caffeinated drinks after lunch (12pm); morning is fine.
3. Prefer plain or lightly sweet drinks over heavily sweetened ones.
4. For snacks, prefer healthier options (fruit, yogurt) over indulgent
   options (cookies, chips) whenever both are available.
5. If only indulgent snacks are available, prefer the least sweet option.
",
        );
        for i in 6..=12 {
            reply.push_str(&format!("{i}. Additional preference number {i}.\n"));
        }
        let rules = parse_numbered_rules(&reply).unwrap();
        assert_eq!(rules.len(), 12);
        assert_eq!(rules[0], "Always serve drinks cold; never hot.");
        assert_eq!(
            rules[3],
            "For snacks, prefer healthier options (fruit, yogurt) over indulgent options (cookies, chips) whenever both are available."
        );
    }

    #[test]
    fn decision_blocks_from_filled_example() {
        let blocks = parse_decision_blocks(D3_RESPONSE, 2).unwrap();
        assert_eq!(blocks.len(), 2);
        assert_eq!(
            (
                blocks[0].scenario_ordinal,
                blocks[0].action,
                blocks[0].confidence
            ),
            (1, 2, Some(9))
        );
        assert_eq!(
            (
                blocks[1].scenario_ordinal,
                blocks[1].action,
                blocks[1].confidence
            ),
            (2, 3, Some(8))
        );
        assert!(blocks[0].reasoning.starts_with("Iced tea is cold"));
        assert!(blocks[0].reasoning.ends_with("(rule 3)."));
    }

    #[test]
    fn decision_block_errors() {
        let err = parse_decision_blocks("SCENARIO 1:\nAction: two", 1).unwrap_err();
        assert!(matches!(
            err,
            Error::Parse {
                ordinal: Some(1),
                ..
            }
        ));
        let err = parse_decision_blocks(D3_RESPONSE, 3).unwrap_err();
        assert!(matches!(
            err,
            Error::Parse {
                ordinal: Some(3),
                ..
            }
        ));
        assert!(parse_decision_blocks(D3_RESPONSE, 0).is_err());
    }

    #[test]
    fn confidence_is_optional() {
        let b = parse_decision_blocks("SCENARIO 1:\nAction: 4\nReasoning: x", 1).unwrap();
        assert_eq!(b[0].confidence, None);
        assert_eq!(b[0].action, 4);
    }

    #[test]
    fn yes_no_verdicts() {
        assert!(parse_yes_no("WANT_TO_UPDATE_RULES: YES", markers::WANT_TO_UPDATE_RULES).unwrap());
        assert!(!parse_yes_no("WANT_TO_UPDATE_RULES: NO", markers::WANT_TO_UPDATE_RULES).unwrap());
        assert!(parse_yes_no("maybe", markers::WANT_TO_UPDATE_RULES).is_err());
        let echoed = "WANT_TO_UPDATE_RULES: [YES or NO]\n\nWANT_TO_UPDATE_RULES: no";
        assert!(!parse_yes_no(echoed, markers::WANT_TO_UPDATE_RULES).unwrap());
        assert!(parse_yes_no(
            "WANT_TO_UPDATE_RULES: [YES or NO]",
            markers::WANT_TO_UPDATE_RULES
        )
        .is_err());
    }

    #[test]
    fn sections() {
        let q = parse_section(
            "QUESTION_FOR_USER: Do you like hot drinks?",
            markers::QUESTION_FOR_USER,
        )
        .unwrap();
        assert_eq!(q, "Do you like hot drinks?");
        let r = parse_section("UPDATED_RULES:\n1. A\n2. B", markers::UPDATED_RULES).unwrap();
        assert_eq!(parse_numbered_rules(&r).unwrap(), vec!["A", "B"]);
        assert!(parse_section("nothing", markers::UPDATED_RULES).is_err());
    }

    #[test]
    fn dimensions_and_integers() {
        assert!(parse_dimensions("NONE").is_empty());
        assert_eq!(
            parse_dimensions("- sweetness: how sweet\n- healthiness: diet"),
            vec!["sweetness: how sweet", "healthiness: diet"]
        );
        assert_eq!(parse_first_integer("Action 3."), Some(3));
        assert_eq!(parse_first_integer("none"), None);
    }
}
