//! Fixed-format numeric output shared by the CSV writers.

use std::io::Write;

use crate::error::Result;

/// Scientific notation with 12 significant digits.
pub fn format_sci(x: f64) -> String {
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x.is_nan() {
        return "nan".into();
    }
    format!("{x:.11e}")
}

/// Writes `# <comment>` lines (one per input line) followed by the column header.
pub(crate) fn write_preamble<W: Write>(w: &mut W, comment: Option<&str>, columns: &[&str]) -> Result<()> {
    if let Some(comment) = comment {
        for line in comment.lines() {
            writeln!(w, "# {line}")?;
        }
    }
    writeln!(w, "{}", columns.join(","))?;
    Ok(())
}
