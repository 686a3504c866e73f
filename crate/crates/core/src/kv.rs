//! Flat `key = value  # note` text files shared by the parameter and
//! coefficient formats.

use std::collections::HashSet;
use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: f64,
    /// Trailing comment text, used as the provenance column.
    pub note: String,
    pub line: usize,
}

/// Parses every non-blank, non-comment line. Duplicate keys are rejected.
pub fn parse(text: &str, origin: &str) -> Result<Vec<Entry>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let (body, note) = match raw.find('#') {
            Some(pos) => (&raw[..pos], raw[pos + 1..].trim()),
            None => (raw, ""),
        };
        let body = body.trim();
        if body.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse { path: origin.to_string(), line, msg };
        let (key, value) = body
            .split_once('=')
            .ok_or_else(|| err(format!("expected `key = value`, found `{body}`")))?;
        let key = key.trim();
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(err(format!("bad key `{key}`")));
        }
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| err(format!("value for `{key}` is not a number: `{}`", value.trim())))?;
        if !value.is_finite() {
            return Err(err(format!("value for `{key}` is not finite")));
        }
        if !seen.insert(key.to_string()) {
            return Err(err(format!("duplicate key `{key}`")));
        }
        out.push(Entry { key: key.to_string(), value, note: note.to_string(), line });
    }
    Ok(out)
}

/// Renders entries with aligned columns. Values use the shortest
/// representation that round-trips exactly.
pub fn render(header: &str, entries: &[(&str, f64, &str)]) -> String {
    let width = entries.iter().map(|(k, _, _)| k.len()).max().unwrap_or(0);
    let mut s = String::new();
    for line in header.lines() {
        let _ = writeln!(s, "# {line}");
    }
    for (key, value, note) in entries {
        let v = format!("{value:e}");
        if note.is_empty() {
            let _ = writeln!(s, "{key:<width$} = {v}");
        } else {
            let _ = writeln!(s, "{key:<width$} = {v:<24} # {note}");
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_values_and_notes() {
        let e = parse("# header\n\nx = 1.5e-3  # from somewhere\ny=2\n", "t").unwrap();
        assert_eq!(e.len(), 2);
        assert_eq!(e[0].key, "x");
        assert_eq!(e[0].value, 1.5e-3);
        assert_eq!(e[0].note, "from somewhere");
        assert_eq!(e[1].line, 4);
    }

    #[test]
    fn rejects_duplicates_and_garbage() {
        assert!(matches!(parse("x = 1\nx = 2", "t"), Err(Error::Parse { line: 2, .. })));
        assert!(parse("x 1", "t").is_err());
        assert!(parse("x = abc", "t").is_err());
        assert!(parse("x = inf", "t").is_err());
    }

    #[test]
    fn render_round_trips_exactly() {
        let vals = [0.1 + 0.2, 1.0 / 3.0, -6.02214076e23, 5e-324];
        let entries: Vec<_> = vals.iter().enumerate().map(|(i, v)| (["a", "b", "c", "d"][i], *v, "n")).collect();
        let parsed = parse(&render("h", &entries), "t").unwrap();
        for (p, v) in parsed.iter().zip(vals) {
            assert_eq!(p.value.to_bits(), v.to_bits());
        }
    }
}
