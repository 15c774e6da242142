//! Case-insensitive identifier handling.
//!
//! SQLite resolves table and column names without regard to ASCII case, so
//! every lookup in the pipeline goes through these helpers.

use alloc::string::String;

/// Lowercased lookup key for an identifier.
pub fn key(name: &str) -> String {
    name.to_ascii_lowercase()
}

pub fn same(a: &str, b: &str) -> bool {
    a.eq_ignore_ascii_case(b)
}

/// Splits `table.column` at the first dot. A bare name yields `(None, name)`.
pub fn split_qualified(name: &str) -> (Option<&str>, &str) {
    match name.split_once('.') {
        Some((t, c)) if !t.is_empty() && !c.is_empty() => (Some(t), c),
        _ => (None, name),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qualified_split() {
        assert_eq!(split_qualified("satscores.sname"), (Some("satscores"), "sname"));
        assert_eq!(split_qualified("sname"), (None, "sname"));
        assert_eq!(split_qualified(".x"), (None, ".x"));
        assert!(same("CDSCode", "cdscode"));
    }
}
