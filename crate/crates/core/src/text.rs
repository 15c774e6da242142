//! Text extraction rules applied to model output.

use alloc::string::String;
use alloc::vec::Vec;

/// Candidate JSON record texts found in a model reply, most specific first:
/// the whole reply, then each fenced block, then the outermost `{ ... }` span.
pub fn record_candidates(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let trimmed = text.trim();
    if !trimmed.is_empty() {
        out.push(trimmed);
    }
    for block in fenced_blocks(text) {
        let b = block.trim();
        if !b.is_empty() && !out.contains(&b) {
            out.push(b);
        }
    }
    if let (Some(start), Some(end)) = (text.find('{'), text.rfind('}')) {
        if start < end {
            let span = text[start..=end].trim();
            if !out.contains(&span) {
                out.push(span);
            }
        }
    }
    out
}

/// Bodies of triple-backtick fences, with any info string dropped.
pub fn fenced_blocks(text: &str) -> Vec<&str> {
    let mut blocks = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find("```") {
        let after = &rest[open + 3..];
        // info string runs to end of line
        let body_start = after.find('\n').map(|i| i + 1).unwrap_or(after.len());
        let body = &after[body_start..];
        match body.find("```") {
            Some(close) => {
                blocks.push(&body[..close]);
                rest = &body[close + 3..];
            }
            None => break,
        }
    }
    blocks
}

/// Pulls a single SQL statement out of a model reply.
///
/// A fenced block wins if present; otherwise the whole reply is used. A
/// leading `SQL:` label is dropped and surrounding whitespace trimmed.
pub fn extract_sql(text: &str) -> String {
    let body = fenced_blocks(text).into_iter().find(|b| !b.trim().is_empty()).unwrap_or(text);
    let mut s = body.trim();
    for label in ["SQL:", "sql:", "Answer:", "answer:"] {
        if let Some(r) = s.strip_prefix(label) {
            s = r.trim();
        }
    }
    String::from(s)
}

/// Levenshtein edit distance over Unicode scalar values, ASCII case folded.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().map(|c| c.to_ascii_lowercase()).collect();
    let b: Vec<char> = b.chars().map(|c| c.to_ascii_lowercase()).collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = alloc::vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fenced_record_is_found() {
        let reply = "Here you go:\n```json\n{\"label\": 1}\n```\nthanks";
        let c = record_candidates(reply);
        assert!(c.contains(&"{\"label\": 1}"));
    }

    #[test]
    fn sql_fence_is_stripped() {
        assert_eq!(extract_sql("```sql\nSELECT 1;\n```"), "SELECT 1;");
        assert_eq!(extract_sql("  SELECT 2 "), "SELECT 2");
        assert_eq!(extract_sql("SQL: SELECT 3"), "SELECT 3");
    }

    #[test]
    fn distances() {
        assert_eq!(edit_distance("AvgScrMth", "AvgScrMath"), 1);
        assert_eq!(edit_distance("", "abc"), 3);
        assert_eq!(edit_distance("kitten", "sitting"), 3);
        assert_eq!(edit_distance("CDS", "cds"), 0);
    }
}
