//! Character-offset helpers. All offsets and ranges in the model count
//! Unicode scalar values, never bytes.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Half-open character range `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CharRange {
    pub start: usize,
    pub end: usize,
}

impl CharRange {
    pub fn new(start: usize, end: usize) -> Self {
        CharRange { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn is_valid_within(&self, len: usize) -> bool {
        self.start <= self.end && self.end <= len
    }
}

impl fmt::Display for CharRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.start, self.end)
    }
}

impl std::str::FromStr for CharRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (a, b) = s
            .trim()
            .split_once('-')
            .ok_or_else(|| format!("range {s:?} is not start-end"))?;
        let start = a.trim().parse().map_err(|_| format!("bad range start {a:?}"))?;
        let end = b.trim().parse().map_err(|_| format!("bad range end {b:?}"))?;
        if start > end {
            return Err(format!("range {s:?} is reversed"));
        }
        Ok(CharRange { start, end })
    }
}

pub fn char_len(s: &str) -> usize {
    s.chars().count()
}

/// Byte index of the `n`th character; `n == char_len` maps to `s.len()`.
pub fn byte_offset(s: &str, n: usize) -> usize {
    s.char_indices().nth(n).map(|(i, _)| i).unwrap_or(s.len())
}

/// Split at a character offset.
pub fn split_chars(s: &str, n: usize) -> (&str, &str) {
    s.split_at(byte_offset(s, n))
}

pub fn slice_chars(s: &str, range: CharRange) -> &str {
    let a = byte_offset(s, range.start);
    let b = byte_offset(s, range.end);
    &s[a..b]
}

pub fn word_count(s: &str) -> usize {
    s.split_whitespace().count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn multibyte_offsets() {
        let s = "héllo wörld";
        assert_eq!(char_len(s), 11);
        assert_eq!(split_chars(s, 2), ("hé", "llo wörld"));
        assert_eq!(slice_chars(s, CharRange::new(6, 11)), "wörld");
    }

    #[test]
    fn range_parse() {
        assert_eq!("3-9".parse::<CharRange>().unwrap(), CharRange::new(3, 9));
        assert!("9-3".parse::<CharRange>().is_err());
        assert!("x".parse::<CharRange>().is_err());
    }
}
