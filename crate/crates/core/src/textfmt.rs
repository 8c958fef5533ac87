//! Whitespace-separated token lines with optional double-quoted fields.
//!
//! Shared by the graph file, the checkpoint headers and the flat config
//! format. A field is quoted when it is empty or contains whitespace,
//! a quote or a backslash. Inside quotes the escapes are `\"`, `\\`,
//! `\n`, `\r` and `\t`.

use std::fmt::Write as _;

/// Append `field` to `out`, quoting it if needed.
pub fn push_field(out: &mut String, field: &str) {
    let needs_quotes = field.is_empty()
        || field.chars().any(|c| c.is_whitespace() || c == '"' || c == '\\');
    if !needs_quotes {
        out.push_str(field);
        return;
    }
    out.push('"');
    for c in field.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('"');
}

/// Join fields with single spaces, quoting each as needed.
pub fn join_fields<I, S>(fields: I) -> String
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut out = String::new();
    for (i, f) in fields.into_iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        push_field(&mut out, f.as_ref());
    }
    out
}

/// Split a line into fields. Returns a description of the problem on
/// an unterminated quote or bad escape.
pub fn split_fields(line: &str) -> Result<Vec<String>, String> {
    let mut fields = Vec::new();
    let mut chars = line.chars().peekable();
    loop {
        while chars.peek().is_some_and(|c| c.is_whitespace()) {
            chars.next();
        }
        let Some(&first) = chars.peek() else {
            break;
        };
        let mut field = String::new();
        if first == '"' {
            chars.next();
            let mut closed = false;
            while let Some(c) = chars.next() {
                match c {
                    '"' => {
                        closed = true;
                        break;
                    }
                    '\\' => match chars.next() {
                        Some('"') => field.push('"'),
                        Some('\\') => field.push('\\'),
                        Some('n') => field.push('\n'),
                        Some('r') => field.push('\r'),
                        Some('t') => field.push('\t'),
                        Some(other) => return Err(format!("unknown escape \\{other}")),
                        None => return Err("dangling escape".to_string()),
                    },
                    c => field.push(c),
                }
            }
            if !closed {
                return Err("unterminated quote".to_string());
            }
            if chars.peek().is_some_and(|c| !c.is_whitespace()) {
                return Err("text directly after closing quote".to_string());
            }
        } else {
            while let Some(&c) = chars.peek() {
                if c.is_whitespace() {
                    break;
                }
                if c == '"' {
                    return Err("quote inside unquoted field".to_string());
                }
                field.push(c);
                chars.next();
            }
        }
        fields.push(field);
    }
    Ok(fields)
}

/// Format a float with a fixed number of decimals.
pub fn fixed(value: f64, decimals: usize) -> String {
    let mut s = String::new();
    let _ = write!(s, "{value:.decimals$}");
    s
}
