//! CSV emission with RFC-4180 quoting.

use std::path::Path;

use crate::error::{Error, Result};

fn needs_quoting(field: &str) -> bool {
    field.contains(',') || field.contains('"') || field.contains('\n') || field.contains('\r')
}

pub fn format_field(field: &str) -> String {
    if needs_quoting(field) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

pub fn format_row(row: &[String]) -> String {
    row.iter()
        .map(|f| format_field(f))
        .collect::<Vec<_>>()
        .join(",")
}

/// Write rows (the first is the header) with RFC-4180 quoting.
pub fn write_csv(rows: &[Vec<String>], path: &Path) -> Result<()> {
    let mut out = String::new();
    for row in rows {
        out.push_str(&format_row(row));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comma_field_is_quoted() {
        assert_eq!(format_field("a,b"), "\"a,b\"");
        assert_eq!(format_field("plain"), "plain");
    }

    #[test]
    fn embedded_quote_is_doubled() {
        assert_eq!(format_field("say \"hi\""), "\"say \"\"hi\"\"\"");
    }

    #[test]
    fn rows_join_with_commas() {
        let row = vec!["a".to_string(), "b,c".to_string(), "1.5".to_string()];
        assert_eq!(format_row(&row), "a,\"b,c\",1.5");
    }
}
