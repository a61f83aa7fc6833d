//! Minimal version-range matching for advisory `affected_versions` strings.
//!
//! Grammar: alternatives separated by `||`, each a comma- or
//! space-separated conjunction of `<`, `<=`, `>`, `>=`, `=`/`==` constraints
//! or a bare exact version. `*` and the empty string match everything.

use std::cmp::Ordering;

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Num(u64),
    Text(String),
}

fn segments(v: &str) -> Vec<Segment> {
    v.trim()
        .trim_start_matches(['v', 'V'])
        .split(['.', '-', '_', '+'])
        .filter(|s| !s.is_empty())
        .map(|s| match s.parse::<u64>() {
            Ok(n) => Segment::Num(n),
            Err(_) => Segment::Text(s.to_ascii_lowercase()),
        })
        .collect()
}

/// Segment-wise comparison. Missing numeric segments count as zero and a
/// textual qualifier sorts before the release it qualifies (`1.0-rc1 < 1.0`).
pub fn compare_versions(a: &str, b: &str) -> Ordering {
    let (a, b) = (segments(a), segments(b));
    for i in 0..a.len().max(b.len()) {
        let ord = match (a.get(i), b.get(i)) {
            (Some(Segment::Num(x)), Some(Segment::Num(y))) => x.cmp(y),
            (Some(Segment::Text(x)), Some(Segment::Text(y))) => x.cmp(y),
            (Some(Segment::Num(_)), Some(Segment::Text(_))) => Ordering::Greater,
            (Some(Segment::Text(_)), Some(Segment::Num(_))) => Ordering::Less,
            (Some(Segment::Num(x)), None) => x.cmp(&0),
            (None, Some(Segment::Num(y))) => 0.cmp(y),
            (Some(Segment::Text(_)), None) => Ordering::Less,
            (None, Some(Segment::Text(_))) => Ordering::Greater,
            (None, None) => Ordering::Equal,
        };
        if ord != Ordering::Equal {
            return ord;
        }
    }
    Ordering::Equal
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UnparsableRange;

fn constraint_holds(constraint: &str, version: &str) -> Result<bool, UnparsableRange> {
    let c = constraint.trim();
    let (op, rest) = ["<=", ">=", "==", "<", ">", "="]
        .iter()
        .find_map(|op| c.strip_prefix(op).map(|r| (*op, r.trim())))
        .unwrap_or(("=", c));
    if rest.is_empty() || rest.contains(char::is_whitespace) {
        return Err(UnparsableRange);
    }
    let ord = compare_versions(version, rest);
    Ok(match op {
        "<" => ord == Ordering::Less,
        "<=" => ord != Ordering::Greater,
        ">" => ord == Ordering::Greater,
        ">=" => ord != Ordering::Less,
        _ => ord == Ordering::Equal,
    })
}

/// Whether `version` falls inside `range`.
pub fn version_in_range(version: &str, range: &str) -> Result<bool, UnparsableRange> {
    let range = range.trim();
    if range.is_empty() || range == "*" {
        return Ok(true);
    }
    for alt in range.split("||") {
        // Re-attach operators separated from their operand by whitespace.
        let normalized = alt
            .replace("< ", "<")
            .replace("> ", ">")
            .replace("= ", "=");
        let mut all = true;
        let mut any_constraint = false;
        for c in normalized.split([',', ' ']).filter(|c| !c.trim().is_empty()) {
            any_constraint = true;
            if !constraint_holds(c, version)? {
                all = false;
            }
        }
        if !any_constraint {
            return Err(UnparsableRange);
        }
        if all {
            return Ok(true);
        }
    }
    Ok(false)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordering() {
        assert_eq!(compare_versions("5.2.0", "5.4.0"), Ordering::Less);
        assert_eq!(compare_versions("5.4", "5.4.0"), Ordering::Equal);
        assert_eq!(compare_versions("2.13.4.2", "2.13.4"), Ordering::Greater);
        assert_eq!(compare_versions("1.0-rc1", "1.0"), Ordering::Less);
        assert_eq!(compare_versions("10.0", "9.9"), Ordering::Greater);
    }

    #[test]
    fn ranges() {
        assert_eq!(version_in_range("5.2.0", "<5.4.0"), Ok(true));
        assert_eq!(version_in_range("5.4.0", "<5.4.0"), Ok(false));
        assert_eq!(version_in_range("4.6.0", ">=4.0.0, <4.7.0"), Ok(true));
        assert_eq!(version_in_range("4.7.0", ">=4.0.0,<4.7.0"), Ok(false));
        assert_eq!(version_in_range("1.2", "<1.0 || >= 1.2"), Ok(true));
        assert_eq!(version_in_range("3.0", "3.0"), Ok(true));
        assert_eq!(version_in_range("3.0", "*"), Ok(true));
        assert_eq!(version_in_range("3.0", ">="), Err(UnparsableRange));
    }
}
