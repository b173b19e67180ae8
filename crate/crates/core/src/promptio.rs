//! Prompt rendering and ranked-list response parsing.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::casegen::EvalCase;
use crate::hashing::hash_str;
use crate::ingest::{Dataset, Domain, ATTR_AGE, ATTR_COUNTRY, ATTR_GENDER, ATTR_OCCUPATION, ATTR_REGION};
use crate::metrics::TOP_N;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("item `{0}` has no title")]
    UnknownItem(String),
    #[error("prompt template: {0}")]
    Template(String),
}

const RULES: &str = "# AI Rules
- Output response as a Python list only.
- Do not output any extra text.
- Do not wrap the response in Python markers.
- Do not assign the list to any variable.
- List values in double-quotes.
";

const MOVIE_BODY: &str = "
You are proficient in recommending new {domain_noun} for users to watch based on their background, previous view history, or a combination of both.
{persona}{history}From the candidates listed below, recommend the next {n_items} {domain_noun} for the user to watch based on the user's background, previous view history, or a combination of both.
Format your response as a Python list of item names. The list must be ranked from the most likely to the least likely {domain_noun}.
Candidates: {candidates}
";

const MUSIC_BODY: &str = "
You are proficient in recommending new {domain_noun} for users to listen to based on their background, previous listening history, or a combination of both.
{persona}{history}From the candidates listed below, recommend the next {n_items} {domain_noun} for the user to listen to based on the user's background, previous listening history, or a combination of both.
Format your response as a Python list of item names. The list must be ranked from the most likely to the least likely {domain_noun}.
Candidates: {candidates}
";

/// Prompt template with the placeholders `{persona}`, `{history}`,
/// `{candidates}`, `{n_items}` and `{domain_noun}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    text: String,
}

impl PromptTemplate {
    pub fn builtin(domain: Domain) -> Self {
        let body = match domain {
            Domain::Movies => MOVIE_BODY,
            Domain::Music => MUSIC_BODY,
        };
        PromptTemplate {
            text: format!("{RULES}{body}"),
        }
    }

    pub fn from_text(text: impl Into<String>) -> Result<Self, PromptError> {
        let text = text.into();
        if !text.contains("{candidates}") {
            return Err(PromptError::Template("missing {candidates} placeholder".into()));
        }
        Ok(PromptTemplate { text })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, PromptError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| PromptError::Template(format!("{}: {e}", path.display())))?;
        Self::from_text(text)
    }

    pub fn text(&self) -> &str {
        &self.text
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptText {
    pub case_id: String,
    pub text: String,
}

impl PromptText {
    /// Stable 64-bit hash of the prompt text, used as part of the cache key.
    pub fn hash(&self) -> u64 {
        hash_str(&self.text)
    }
}

/// Quotes a string the way Python's `repr` does: single quotes unless the
/// text contains a single quote and no double quote.
pub fn py_repr(s: &str) -> String {
    let quote = if s.contains('\'') && !s.contains('"') { '"' } else { '\'' };
    let mut out = String::with_capacity(s.len() + 2);
    out.push(quote);
    for ch in s.chars() {
        match ch {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if c == quote => {
                out.push('\\');
                out.push(c);
            }
            c => out.push(c),
        }
    }
    out.push(quote);
    out
}

pub fn py_list<S: AsRef<str>>(items: &[S]) -> String {
    let parts: Vec<String> = items.iter().map(|s| py_repr(s.as_ref())).collect();
    format!("[{}]", parts.join(", "))
}

fn gender_word(g: &str) -> &str {
    match g {
        "M" | "m" => "Male",
        "F" | "f" => "Female",
        other => other,
    }
}

/// "The user is a 25-34 years old Male clerical/admin." and the music
/// analogue "The user is a Female from Germany, Europe."; empty for the
/// empty key. Bindings on other attributes are listed after a colon.
pub fn persona_line(key: &crate::cohort::ProxyKey) -> String {
    if key.is_empty() {
        return String::new();
    }
    let mut words = Vec::new();
    if let Some(age) = key.get(ATTR_AGE) {
        words.push(format!("{age} years old"));
    }
    if let Some(g) = key.get(ATTR_GENDER) {
        words.push(gender_word(g).to_string());
    }
    if let Some(o) = key.get(ATTR_OCCUPATION) {
        words.push(o.to_string());
    }
    let place: Vec<&str> = [key.get(ATTR_COUNTRY), key.get(ATTR_REGION)]
        .into_iter()
        .flatten()
        .collect();
    let mut line = String::from("The user is");
    if !words.is_empty() {
        line.push_str(" a ");
        line.push_str(&words.join(" "));
    }
    if !place.is_empty() {
        line.push_str(" from ");
        line.push_str(&place.join(", "));
    }
    let known = [ATTR_AGE, ATTR_GENDER, ATTR_OCCUPATION, ATTR_COUNTRY, ATTR_REGION];
    let extra: Vec<String> = key
        .bindings
        .iter()
        .filter(|(k, _)| !known.contains(&k.as_str()))
        .map(|(k, v)| format!("{k} {v}"))
        .collect();
    if !extra.is_empty() {
        if words.is_empty() && place.is_empty() {
            line.push_str(" described by");
        } else {
            line.push(',');
        }
        line.push(' ');
        line.push_str(&extra.join(", "));
    }
    line.push_str(".\n");
    line
}

fn titles<'a>(dataset: &'a Dataset, ids: &[String]) -> Result<Vec<&'a str>, PromptError> {
    ids.iter()
        .map(|id| {
            dataset
                .item_position(id)
                .map(|p| dataset.items()[p as usize].title.as_str())
                .ok_or_else(|| PromptError::UnknownItem(id.clone()))
        })
        .collect()
}

pub fn render_prompt(
    case: &EvalCase,
    dataset: &Dataset,
    template: &PromptTemplate,
) -> Result<PromptText, PromptError> {
    let history_titles = titles(dataset, &case.history)?;
    let candidate_titles = titles(dataset, &case.candidates)?;
    let history = if history_titles.is_empty() {
        String::new()
    } else {
        let lead = match case.domain {
            Domain::Movies => "The user has previously watched the following movies: ",
            Domain::Music => "The user has previously listened to the following music: ",
        };
        format!("{lead}{}.\n", py_list(&history_titles))
    };
    let noun = match case.domain {
        Domain::Movies => "movie",
        Domain::Music => "music",
    };
    let text = template
        .text
        .replace("{persona}", &persona_line(&case.proxy_key))
        .replace("{history}", &history)
        .replace("{n_items}", &TOP_N.min(case.candidates.len()).to_string())
        .replace("{domain_noun}", noun)
        .replace("{candidates}", &py_list(&candidate_titles));
    Ok(PromptText {
        case_id: case.case_id.clone(),
        text,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseStatus {
    Ok,
    Partial,
    Unparseable,
}

impl fmt::Display for ParseStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ParseStatus::Ok => "ok",
            ParseStatus::Partial => "partial",
            ParseStatus::Unparseable => "unparseable",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedResponse {
    pub case_id: String,
    pub ranked: Vec<String>,
    pub parse_status: ParseStatus,
    pub raw: String,
}

impl RankedResponse {
    /// Builds a response from item ids chosen directly (baselines), keeping
    /// a Python-list rendering of their titles as the raw text.
    pub fn from_ids(case_id: &str, ranked: Vec<String>, raw: String) -> Self {
        let parse_status = status_for(ranked.len());
        RankedResponse {
            case_id: case_id.to_string(),
            ranked,
            parse_status,
            raw,
        }
    }
}

fn status_for(n: usize) -> ParseStatus {
    match n {
        0 => ParseStatus::Unparseable,
        n if n >= TOP_N => ParseStatus::Ok,
        _ => ParseStatus::Partial,
    }
}

/// Parses one quoted string starting at `chars[start]` (the quote).
/// Returns the unescaped content and the index after the closing quote.
fn quoted(chars: &[char], start: usize) -> Option<(String, usize)> {
    let quote = chars[start];
    let mut out = String::new();
    let mut i = start + 1;
    while i < chars.len() {
        match chars[i] {
            '\\' if i + 1 < chars.len() => {
                out.push(match chars[i + 1] {
                    'n' => '\n',
                    't' => '\t',
                    'r' => '\r',
                    c => c,
                });
                i += 2;
            }
            c if c == quote => return Some((out, i + 1)),
            c => {
                out.push(c);
                i += 1;
            }
        }
    }
    None
}

/// Tries to read `[ "a", 'b', ... ]` starting at the `[` at `start`.
fn list_at(chars: &[char], start: usize) -> Option<Vec<String>> {
    let mut items = Vec::new();
    let mut i = start + 1;
    let skip_ws = |i: &mut usize| {
        while *i < chars.len() && chars[*i].is_whitespace() {
            *i += 1;
        }
    };
    skip_ws(&mut i);
    if i < chars.len() && chars[i] == ']' {
        return None;
    }
    loop {
        skip_ws(&mut i);
        if i >= chars.len() || !matches!(chars[i], '"' | '\'' | '“' | '‘') {
            return None;
        }
        let (s, next) = match chars[i] {
            '“' | '‘' => {
                let close = if chars[i] == '“' { '”' } else { '’' };
                let end = chars[i + 1..].iter().position(|&c| c == close)? + i + 1;
                (chars[i + 1..end].iter().collect(), end + 1)
            }
            _ => quoted(chars, i)?,
        };
        items.push(s);
        i = next;
        skip_ws(&mut i);
        match chars.get(i) {
            Some(',') => {
                i += 1;
                skip_ws(&mut i);
                if chars.get(i) == Some(&']') {
                    return Some(items);
                }
            }
            Some(']') => return Some(items),
            _ => return None,
        }
    }
}

/// First bracketed list of quoted strings in `text`, if any.
pub fn extract_list(text: &str) -> Option<Vec<String>> {
    let chars: Vec<char> = text.chars().collect();
    (0..chars.len())
        .filter(|&i| chars[i] == '[')
        .find_map(|i| list_at(&chars, i))
}

/// Case-folds, collapses whitespace and strips surrounding quotes.
pub fn normalize_title(s: &str) -> String {
    let collapsed = s.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed
        .trim_matches(|c: char| matches!(c, '"' | '\'' | '“' | '”' | '‘' | '’' | '`'))
        .trim()
        .to_lowercase()
}

/// Maps a model's free-text answer back onto the case's candidates.
///
/// Names are matched exactly first, then after [`normalize_title`]; when
/// several candidates share a title the earliest candidate wins. Unmatched
/// names are dropped and repeats keep their first occurrence.
pub fn parse_response(text: &str, case: &EvalCase, dataset: &Dataset) -> RankedResponse {
    let mut exact: HashMap<&str, usize> = HashMap::new();
    let mut normalized: HashMap<String, usize> = HashMap::new();
    for (pos, id) in case.candidates.iter().enumerate().rev() {
        if let Some(p) = dataset.item_position(id) {
            let title = dataset.items()[p as usize].title.as_str();
            exact.insert(title, pos);
            normalized.insert(normalize_title(title), pos);
        }
    }

    let names = extract_list(text).unwrap_or_default();
    let mut taken = vec![false; case.candidates.len()];
    let mut ranked = Vec::new();
    for name in &names {
        let pos = exact
            .get(name.as_str())
            .or_else(|| normalized.get(&normalize_title(name)))
            .copied();
        if let Some(pos) = pos {
            if !std::mem::replace(&mut taken[pos], true) {
                ranked.push(case.candidates[pos].clone());
            }
        }
        if ranked.len() == TOP_N {
            break;
        }
    }
    RankedResponse {
        case_id: case.case_id.clone(),
        parse_status: status_for(ranked.len()),
        ranked,
        raw: text.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::casegen::Setup;
    use crate::cohort::ProxyKey;
    use crate::ingest::{Interaction, Item, UserProfile};
    use proptest::prelude::*;

    const TITLES: [&str; 12] = [
        "Heat (1995)",
        "Rain Man (1988)",
        "Schindler's List (1993)",
        "Matrix, The (1999)",
        "Blue Velvet (1986)",
        "Beetlejuice (1988)",
        "Spaceballs (1987)",
        "Gaslight (1944)",
        "Heathers (1989)",
        "Meatballs (1979)",
        "Cabin Boy (1994)",
        "Carnosaur (1993)",
    ];

    fn fixture() -> (Dataset, EvalCase) {
        let items: Vec<Item> = TITLES
            .iter()
            .enumerate()
            .map(|(i, t)| Item { item_id: format!("m{i}"), title: t.to_string() })
            .collect();
        let users = vec![UserProfile { user_id: "u".into(), attributes: Default::default() }];
        let d = Dataset::new("fx", Domain::Movies, items, users, vec![Interaction::new("u", "m0")]).unwrap();
        let case = EvalCase {
            case_id: "c1".into(),
            setup: Setup::A,
            setting: "All".into(),
            proxy_key: ProxyKey::from_pairs([("age", "25-34"), ("gender", "M"), ("occupation", "clerical/admin")]),
            history: vec!["m10".into(), "m11".into()],
            candidates: (0..10).map(|i| format!("m{i}")).collect(),
            target: vec![0.1; 10],
            group_size: 3,
            domain: Domain::Movies,
        };
        (d, case)
    }

    #[test]
    fn setup_a_prompt_has_persona_and_history() {
        let (d, case) = fixture();
        let p = render_prompt(&case, &d, &PromptTemplate::builtin(Domain::Movies)).unwrap();
        assert!(p.text.contains("The user is a 25-34 years old Male clerical/admin.\n"));
        assert!(p.text.contains(
            "The user has previously watched the following movies: ['Cabin Boy (1994)', 'Carnosaur (1993)'].\n"
        ));
        assert!(p.text.contains("recommend the next 10 movie for the user to watch"));
        assert!(p.text.contains("Format your response as a Python list of item names."));
        assert!(p.text.contains("\"Schindler's List (1993)\""));
        assert!(p.text.starts_with("# AI Rules\n- Output response as a Python list only.\n"));
        for t in &TITLES[..10] {
            assert_eq!(p.text.matches(&py_repr(t)).count(), 1, "{t}");
        }
    }

    #[test]
    fn setup_c_and_b_branches() {
        let (d, mut case) = fixture();
        let t = PromptTemplate::builtin(Domain::Movies);
        let history = case.history.clone();
        case.history.clear();
        let c = render_prompt(&case, &d, &t).unwrap().text;
        assert!(c.contains("The user is a") && !c.contains("previously watched"));
        case.history = history;
        case.proxy_key = ProxyKey::empty();
        let b = render_prompt(&case, &d, &t).unwrap().text;
        assert!(!b.contains("The user is") && b.contains("previously watched"));
    }

    #[test]
    fn rendering_is_stable_and_errors_on_unknown_items() {
        let (d, mut case) = fixture();
        let t = PromptTemplate::builtin(Domain::Movies);
        assert_eq!(render_prompt(&case, &d, &t).unwrap(), render_prompt(&case, &d, &t).unwrap());
        case.candidates[0] = "nope".into();
        assert!(matches!(render_prompt(&case, &d, &t), Err(PromptError::UnknownItem(_))));
    }

    #[test]
    fn music_persona() {
        let key = ProxyKey::from_pairs([("gender", "F"), ("region", "Europe")]);
        assert_eq!(persona_line(&key), "The user is a Female from Europe.\n");
        let key = ProxyKey::from_pairs([("country", "Peru")]);
        assert_eq!(persona_line(&key), "The user is from Peru.\n");
        let key = ProxyKey::from_pairs([("hobby", "chess")]);
        assert_eq!(persona_line(&key), "The user is described by hobby chess.\n");
    }

    #[test]
    fn custom_template() {
        let (d, case) = fixture();
        let t = PromptTemplate::from_text("{persona}|{n_items} {domain_noun}|{candidates}").unwrap();
        let text = render_prompt(&case, &d, &t).unwrap().text;
        assert!(text.starts_with("The user is a 25-34"));
        assert!(text.contains("|10 movie|['Heat (1995)'"));
        assert!(PromptTemplate::from_text("no candidates").is_err());
    }

    #[test]
    fn exact_list_parses_ok() {
        let (d, case) = fixture();
        let answer = serde_json::to_string(&TITLES[..10]).unwrap();
        let r = parse_response(&answer, &case, &d);
        assert_eq!(r.parse_status, ParseStatus::Ok);
        assert_eq!(r.ranked, case.candidates);
    }

    #[test]
    fn hallucinated_names_make_partial() {
        let (d, case) = fixture();
        let mut names: Vec<&str> = TITLES[..8].to_vec();
        names.push("Not A Movie (2001)");
        names.push("Cabin Boy (1994)"); // a history item, not a candidate
        let r = parse_response(&py_list(&names), &case, &d);
        assert_eq!(r.parse_status, ParseStatus::Partial);
        assert_eq!(r.ranked.len(), 8);
    }

    #[test]
    fn prose_is_unparseable() {
        let (d, case) = fixture();
        let r = parse_response("I would suggest Heat and Rain Man.", &case, &d);
        assert_eq!(r.parse_status, ParseStatus::Unparseable);
        assert!(r.ranked.is_empty());
    }

    #[test]
    fn fences_prose_and_normalization() {
        let (d, case) = fixture();
        let text = "Sure! [1] Here you go:\n```python\n[\"  heat   (1995) \", 'RAIN MAN (1988)', \"Heat (1995)\",]\n```";
        let r = parse_response(text, &case, &d);
        assert_eq!(r.ranked, vec!["m0".to_string(), "m1".to_string()]);
        assert_eq!(r.parse_status, ParseStatus::Partial);
    }

    #[test]
    fn title_collisions_resolve_to_earliest_candidate() {
        let items = vec![
            Item { item_id: "x".into(), title: "Same".into() },
            Item { item_id: "y".into(), title: "same".into() },
        ];
        let d = Dataset::new("c", Domain::Movies, items, vec![], vec![]).unwrap();
        let case = EvalCase {
            case_id: "c".into(),
            setup: Setup::C,
            setting: "NoProxy".into(),
            proxy_key: ProxyKey::empty(),
            history: vec![],
            candidates: vec!["y".into(), "x".into()],
            target: vec![0.5, 0.5],
            group_size: 3,
            domain: Domain::Movies,
        };
        let r = parse_response("['SAME ']", &case, &d);
        assert_eq!(r.ranked, vec!["y".to_string()]);
    }

    #[test]
    fn escapes_round_trip() {
        let s = "It's \"quoted\" \\ here";
        let listed = py_list(&[s]);
        assert_eq!(extract_list(&listed).unwrap(), vec![s.to_string()]);
    }

    proptest! {
        #[test]
        fn any_ten_candidates_in_any_order_round_trip(order in Just((0..10).collect::<Vec<usize>>()).prop_shuffle()) {
            let (d, case) = fixture();
            let names: Vec<&str> = order.iter().map(|&i| TITLES[i]).collect();
            let r = parse_response(&py_list(&names), &case, &d);
            prop_assert_eq!(r.parse_status, ParseStatus::Ok);
            let expect: Vec<String> = order.iter().map(|i| format!("m{i}")).collect();
            prop_assert_eq!(r.ranked, expect);
        }
    }
}
