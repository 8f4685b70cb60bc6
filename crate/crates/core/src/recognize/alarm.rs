use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::bitap::{bitap_match, MAX_PATTERN_LEN};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlarmPolicy {
    pub watchlist: Vec<String>,
    pub max_errors: usize,
}

impl AlarmPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.watchlist.is_empty() {
            return Err(Error::invalid("watchlist is empty"));
        }
        for kw in &self.watchlist {
            let n = kw.chars().count();
            if n == 0 || n > MAX_PATTERN_LEN {
                return Err(Error::invalid(format!(
                    "keyword {kw:?} must have 1..={MAX_PATTERN_LEN} characters"
                )));
            }
            if self.max_errors >= n {
                return Err(Error::invalid(format!(
                    "max_errors {} must be below the length of {kw:?}",
                    self.max_errors
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlarmMatch {
    pub keyword: String,
    pub line_index: usize,
    /// End index of the match within the line text.
    pub position: usize,
    pub errors: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlarmResult {
    pub triggered: bool,
    pub matches: Vec<AlarmMatch>,
}

/// Searches every line text for every watched keyword.
pub fn evaluate_alarm(lines: &[String], policy: &AlarmPolicy) -> Result<AlarmResult> {
    policy.validate()?;
    let mut matches = Vec::new();
    for keyword in &policy.watchlist {
        for (line_index, text) in lines.iter().enumerate() {
            for m in bitap_match(text, keyword, policy.max_errors)? {
                matches.push(AlarmMatch {
                    keyword: keyword.clone(),
                    line_index,
                    position: m.end,
                    errors: m.errors,
                });
            }
        }
    }
    Ok(AlarmResult {
        triggered: !matches.is_empty(),
        matches,
    })
}
