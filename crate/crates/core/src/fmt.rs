//! Number formatting and small CSV helpers shared by every exporter.
//!
//! All numeric output goes through [`sig`], which prints at most nine
//! significant digits in the shortest of fixed or scientific notation.

use std::fmt::Write as _;

/// Significant digits used by every CSV and log writer.
pub const SIG_DIGITS: usize = 9;

/// Formats `x` with nine significant digits, trimming trailing zeros.
pub fn sig(x: f64) -> String {
    sig_digits(x, SIG_DIGITS)
}

pub fn sig_digits(x: f64, digits: usize) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let digits = digits.max(1);
    // Round first in scientific form so that the exponent reflects rounding
    // (e.g. 9.9999999999 -> 1e1).
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if exp < -5 || exp >= digits as i32 {
        let mantissa = trim_zeros(mantissa);
        return format!("{mantissa}e{exp}");
    }
    let decimals = (digits as i32 - 1 - exp).max(0) as usize;
    trim_zeros(&format!("{:.*}", decimals, x)).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Minimal CSV writer: fixed header, LF endings, no quoting beyond what the
/// exporters need (fields never contain commas).
#[derive(Debug, Clone)]
pub struct Csv {
    buf: String,
    columns: usize,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        let mut buf = String::new();
        buf.push_str(&header.join(","));
        buf.push('\n');
        Csv {
            buf,
            columns: header.len(),
        }
    }

    pub fn row<I, S>(&mut self, fields: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut n = 0;
        for (k, f) in fields.into_iter().enumerate() {
            if k > 0 {
                self.buf.push(',');
            }
            let _ = write!(self.buf, "{}", f.as_ref());
            n += 1;
        }
        debug_assert_eq!(n, self.columns, "csv row width");
        self.buf.push('\n');
    }

    pub fn finish(self) -> String {
        self.buf
    }
}

/// Splits CSV text into rows of trimmed fields, skipping blank lines and the
/// header (first non-blank line).
pub fn parse_csv(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .skip(1)
        .map(|l| l.split(',').map(|f| f.trim().to_string()).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig_formats() {
        assert_eq!(sig(0.0), "0");
        assert_eq!(sig(10.0), "10");
        assert_eq!(sig(0.1), "0.1");
        assert_eq!(sig(1.0 / 3.0), "0.333333333");
        assert_eq!(sig(123456789.0), "123456789");
        assert_eq!(sig(1234567891.0), "1.23456789e9");
        assert_eq!(sig(-2.5), "-2.5");
        assert_eq!(sig(9.9999999999), "10");
        assert_eq!(sig(1.5e-7), "1.5e-7");
        assert_eq!(sig(10.000000000000002), "10");
    }

    #[test]
    fn csv_roundtrip_shape() {
        let mut c = Csv::new(&["a", "b"]);
        c.row(["1", "2"]);
        let text = c.finish();
        assert_eq!(text, "a,b\n1,2\n");
        assert_eq!(parse_csv(&text), vec![vec!["1".to_string(), "2".to_string()]]);
    }
}
