use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_PATTERN_LEN: usize = 63;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitapMatch {
    /// Index of the last text character of the match.
    pub end: usize,
    pub errors: usize,
}

/// Wu-Manber approximate matching under Levenshtein edits.
///
/// Reports every end position where `pattern` matches with at most `k`
/// errors, with the smallest error count there.
pub fn bitap_match(text: &str, pattern: &str, k: usize) -> Result<Vec<BitapMatch>> {
    let pat: Vec<char> = pattern.chars().collect();
    let m = pat.len();
    if m == 0 || m > MAX_PATTERN_LEN {
        return Err(Error::invalid(format!(
            "pattern length {m} must lie in 1..={MAX_PATTERN_LEN}"
        )));
    }
    if k >= m {
        return Err(Error::invalid(format!("k = {k} must be below the pattern length {m}")));
    }
    let mut masks: HashMap<char, u64> = HashMap::new();
    for (i, &c) in pat.iter().enumerate() {
        *masks.entry(c).or_default() |= 1 << i;
    }
    let accept = 1u64 << (m - 1);
    // r[d] bit j: pattern[..=j] ends here with at most d errors
    let mut r: Vec<u64> = (0..=k).map(|d| (1u64 << d) - 1).collect();
    let mut out = Vec::new();
    for (pos, c) in text.chars().enumerate() {
        let mask = masks.get(&c).copied().unwrap_or(0);
        let mut prev_old = r[0];
        r[0] = (r[0] << 1 | 1) & mask;
        for d in 1..=k {
            let old = r[d];
            r[d] = ((old << 1 | 1) & mask) | (prev_old << 1 | 1) | prev_old | (r[d - 1] << 1 | 1);
            prev_old = old;
        }
        if let Some(errors) = (0..=k).find(|&d| r[d] & accept != 0) {
            out.push(BitapMatch { end: pos, errors });
        }
    }
    Ok(out)
}
