//! Attribute-set edits and the small instruction language the oracle
//! backends understand.

use std::collections::BTreeSet;
use std::fmt;

pub type AttrSet = BTreeSet<String>;

pub const CAPTION_PREFIX: &str = "attrs:";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EditOp {
    Add(String),
    Remove(String),
    Replace(String, String),
}

impl fmt::Display for EditOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EditOp::Add(t) => write!(f, "add {t}"),
            EditOp::Remove(t) => write!(f, "remove {t}"),
            EditOp::Replace(a, b) => write!(f, "replace {a} with {b}"),
        }
    }
}

fn single_token(s: &str) -> Option<String> {
    let s = s.trim();
    (!s.is_empty() && !s.contains(char::is_whitespace) && !s.contains(',')).then(|| s.to_string())
}

fn strip_keyword<'a>(clause: &'a str, keyword: &str) -> Option<&'a str> {
    let head = clause.get(..keyword.len())?;
    head.eq_ignore_ascii_case(keyword).then(|| &clause[keyword.len()..])
}

fn parse_clause(clause: &str) -> Option<EditOp> {
    let clause = clause.trim();
    if let Some(rest) = strip_keyword(clause, "replace ") {
        let lower = rest.to_ascii_lowercase();
        let at = lower.find(" with ")?;
        return Some(EditOp::Replace(single_token(&rest[..at])?, single_token(&rest[at + 6..])?));
    }
    if let Some(rest) = strip_keyword(clause, "remove ") {
        return single_token(rest).map(EditOp::Remove);
    }
    for kw in ["also require ", "ensure:", "ensure ", "add ", "make "] {
        if let Some(rest) = strip_keyword(clause, kw) {
            return single_token(rest).map(EditOp::Add);
        }
    }
    None
}

/// Parses `;`, `,` or ` and ` separated clauses. Clauses outside the
/// grammar are skipped.
pub fn parse_instruction(text: &str) -> Vec<EditOp> {
    text.split([';', ','])
        .flat_map(|part| part.split(" and "))
        .filter_map(parse_clause)
        .collect()
}

pub fn render_ops(ops: &[EditOp]) -> String {
    ops.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
}

pub fn apply_ops(set: &AttrSet, ops: &[EditOp]) -> AttrSet {
    let mut out = set.clone();
    for op in ops {
        match op {
            EditOp::Add(t) => {
                out.insert(t.clone());
            }
            EditOp::Remove(t) => {
                out.remove(t);
            }
            EditOp::Replace(a, b) => {
                out.remove(a);
                out.insert(b.clone());
            }
        }
    }
    out
}

pub fn caption_of(set: &AttrSet) -> String {
    let tokens: Vec<&str> = set.iter().map(String::as_str).collect();
    format!("{CAPTION_PREFIX} {}", tokens.join(", "))
}

/// Inverse of [`caption_of`]; text without the prefix is read as a bare
/// token list.
pub fn parse_caption(text: &str) -> AttrSet {
    let body = text.trim();
    let body = strip_keyword(body, CAPTION_PREFIX).unwrap_or(body);
    body.split(',')
        .filter_map(single_token)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(tokens: &[&str]) -> AttrSet {
        tokens.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn grammar() {
        assert_eq!(
            parse_instruction("replace park with beach; add hood and remove zip, ensure: red"),
            vec![
                EditOp::Replace("park".into(), "beach".into()),
                EditOp::Add("hood".into()),
                EditOp::Remove("zip".into()),
                EditOp::Add("red".into()),
            ]
        );
        assert_eq!(parse_instruction("make red"), vec![EditOp::Add("red".into())]);
        assert_eq!(parse_instruction("Also require hood"), vec![EditOp::Add("hood".into())]);
        assert!(parse_instruction("").is_empty());
        assert!(parse_instruction("make it look nicer").is_empty());
    }

    #[test]
    fn render_round_trips() {
        let ops = vec![
            EditOp::Replace("a".into(), "b".into()),
            EditOp::Add("c".into()),
            EditOp::Remove("d".into()),
        ];
        assert_eq!(parse_instruction(&render_ops(&ops)), ops);
    }

    #[test]
    fn apply_in_order() {
        let s = apply_ops(&set(&["dog", "park"]), &parse_instruction("replace park with beach"));
        assert_eq!(s, set(&["beach", "dog"]));
        let s = apply_ops(&set(&["a"]), &parse_instruction("add b, remove b"));
        assert_eq!(s, set(&["a"]));
    }

    #[test]
    fn captions() {
        let s = set(&["red", "jacket"]);
        assert_eq!(caption_of(&s), "attrs: jacket, red");
        assert_eq!(parse_caption("attrs: jacket, red"), s);
        assert_eq!(parse_caption(" red ,jacket "), s);
        assert!(parse_caption("attrs: ").is_empty());
    }
}
