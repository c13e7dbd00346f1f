//! Plain-text output helpers shared by the CLI and the report types.

use std::fmt::Write as _;

/// Formats a float with 17 significant digits, enough to round-trip.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Renders a CSV table with a header row.
pub fn csv_table(header: &[String], rows: &[Vec<String>]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{}", header.join(","));
    for row in rows {
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 123456789.123456789, 0.0] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
        }
    }
}
