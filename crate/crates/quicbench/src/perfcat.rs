//! Rule-based categorization of perf samples into CPU cost categories.
//!
//! Rules are plain text, one per line: `matcher-kind<TAB>pattern<TAB>category`
//! where matcher-kind is `exact`, `prefix` or `regex`. First match wins, so
//! rule order in the file is significant.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::parsers::perf::PerfSample;

#[derive(Debug, Error)]
pub enum RuleError {
    #[error("cannot read rule file: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: unknown category `{name}`")]
    UnknownCategory { line: usize, name: String },
    #[error("line {line}: unknown matcher kind `{kind}`")]
    UnknownMatcher { line: usize, kind: String },
    #[error("line {line}: invalid regex pattern: {source}")]
    BadPattern { line: usize, source: regex::Error },
    #[error("line {line}: expected `kind<TAB>pattern<TAB>category`")]
    Malformed { line: usize },
}

/// CPU cost categories for perf samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    PacketIO,
    FileIO,
    Crypto,
    ConnectionManagement,
    Uncategorized,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::PacketIO,
        Category::FileIO,
        Category::Crypto,
        Category::ConnectionManagement,
        Category::Uncategorized,
    ];
}

impl FromStr for Category {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "PacketIO" => Ok(Category::PacketIO),
            "FileIO" => Ok(Category::FileIO),
            "Crypto" => Ok(Category::Crypto),
            "ConnectionManagement" => Ok(Category::ConnectionManagement),
            "Uncategorized" => Ok(Category::Uncategorized),
            _ => Err(()),
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Category::PacketIO => "PacketIO",
            Category::FileIO => "FileIO",
            Category::Crypto => "Crypto",
            Category::ConnectionManagement => "ConnectionManagement",
            Category::Uncategorized => "Uncategorized",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone)]
pub enum Matcher {
    Exact(String),
    Prefix(String),
    Pattern(Regex),
}

impl Matcher {
    fn matches(&self, symbol: &str) -> bool {
        match self {
            Matcher::Exact(s) => symbol == s,
            Matcher::Prefix(p) => symbol.starts_with(p.as_str()),
            Matcher::Pattern(re) => re.is_match(symbol),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Rule {
    pub matcher: Matcher,
    pub category: Category,
}

/// Ordered symbol-to-category rules, first match wins.
#[derive(Debug, Clone, Default)]
pub struct CategoryRuleSet {
    pub rules: Vec<Rule>,
    /// Implementation the rules were written for, when known.
    pub implementation: Option<String>,
}

impl CategoryRuleSet {
    pub fn parse(text: &str) -> Result<Self, RuleError> {
        let mut rules = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let mut parts = raw.splitn(3, '\t');
            let (kind, pattern, category) = match (parts.next(), parts.next(), parts.next()) {
                (Some(k), Some(p), Some(c)) => (k.trim(), p, c.trim()),
                _ => return Err(RuleError::Malformed { line }),
            };
            let category: Category = category.parse().map_err(|_| RuleError::UnknownCategory {
                line,
                name: category.to_string(),
            })?;
            let matcher = match kind {
                "exact" => Matcher::Exact(pattern.to_string()),
                "prefix" => Matcher::Prefix(pattern.to_string()),
                "regex" => Matcher::Pattern(
                    Regex::new(pattern).map_err(|source| RuleError::BadPattern { line, source })?,
                ),
                other => {
                    return Err(RuleError::UnknownMatcher {
                        line,
                        kind: other.to_string(),
                    })
                }
            };
            rules.push(Rule { matcher, category });
        }
        Ok(CategoryRuleSet {
            rules,
            implementation: None,
        })
    }
}

pub fn load_rules(path: &Path) -> Result<CategoryRuleSet, RuleError> {
    let text = std::fs::read_to_string(path)?;
    let mut set = CategoryRuleSet::parse(&text)?;
    set.implementation = path
        .file_stem()
        .and_then(|s| s.to_str())
        .map(|s| s.to_string());
    Ok(set)
}

/// First matching rule's category; `Uncategorized` when nothing matches or
/// the symbol is unknown.
pub fn categorize_symbol(symbol: &str, rules: &CategoryRuleSet) -> Category {
    if symbol.is_empty() || symbol == "[unknown]" {
        return Category::Uncategorized;
    }
    rules
        .rules
        .iter()
        .find(|r| r.matcher.matches(symbol))
        .map(|r| r.category)
        .unwrap_or(Category::Uncategorized)
}

/// Sample counts and fractions per category.
///
/// Fractions are computed against `total_samples`, i.e. every sample perf
/// collected including idle and unrelated processes, matching the reporting
/// convention of the category figures.
#[derive(Debug, Clone, Serialize)]
pub struct CategoryBreakdown {
    pub counts: BTreeMap<Category, u64>,
    pub fractions: BTreeMap<Category, f64>,
    pub total_samples: u64,
    pub matched_samples: u64,
}

/// Categorize all samples whose command matches `process_filter` (substring
/// match; empty matches everything). When `scan_chain` is set, the call
/// chain is scanned outward from the leaf until a symbol matches a rule.
pub fn category_breakdown(
    samples: &[PerfSample],
    rules: &CategoryRuleSet,
    process_filter: &str,
    scan_chain: bool,
) -> CategoryBreakdown {
    let mut counts: BTreeMap<Category, u64> = BTreeMap::new();
    for c in Category::ALL {
        counts.insert(c, 0);
    }
    let total_samples = samples.len() as u64;
    let mut matched_samples = 0u64;
    for sample in samples {
        if !process_filter.is_empty() && !sample.command.contains(process_filter) {
            continue;
        }
        matched_samples += 1;
        let mut category = categorize_symbol(&sample.leaf_symbol, rules);
        if scan_chain && category == Category::Uncategorized {
            for sym in &sample.call_chain {
                let c = categorize_symbol(sym, rules);
                if c != Category::Uncategorized {
                    category = c;
                    break;
                }
            }
        }
        *counts.entry(category).or_insert(0) += 1;
    }
    let fractions = counts
        .iter()
        .map(|(c, n)| {
            let f = if total_samples == 0 {
                0.0
            } else {
                *n as f64 / total_samples as f64
            };
            (*c, f)
        })
        .collect();
    CategoryBreakdown {
        counts,
        fractions,
        total_samples,
        matched_samples,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(command: &str, leaf: &str) -> PerfSample {
        PerfSample {
            command: command.into(),
            pid: 1,
            leaf_symbol: leaf.into(),
            call_chain: vec![],
            unknown_leaf: leaf == "[unknown]",
            truncated: false,
        }
    }

    #[test]
    fn parse_single_prefix_rule() {
        let set = CategoryRuleSet::parse("prefix\tsendm\tPacketIO\n").unwrap();
        assert_eq!(set.rules.len(), 1);
        assert_eq!(categorize_symbol("sendmsg", &set), Category::PacketIO);
    }

    #[test]
    fn unknown_category_rejected_with_line() {
        let err = CategoryRuleSet::parse("# comment\nexact\tfoo\tNetworking\n").unwrap_err();
        match err {
            RuleError::UnknownCategory { line, name } => {
                assert_eq!(line, 2);
                assert_eq!(name, "Networking");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn empty_file_means_everything_uncategorized() {
        let set = CategoryRuleSet::parse("").unwrap();
        assert!(set.rules.is_empty());
        assert_eq!(
            categorize_symbol("totally_novel_fn", &set),
            Category::Uncategorized
        );
    }

    #[test]
    fn crypto_prefix() {
        let set = CategoryRuleSet::parse("prefix\taead\tCrypto\n").unwrap();
        assert_eq!(categorize_symbol("aead_seal", &set), Category::Crypto);
    }

    #[test]
    fn first_match_wins_and_order_matters() {
        let overlapping = "prefix\tsend\tConnectionManagement\nprefix\tsendm\tPacketIO\n";
        let set = CategoryRuleSet::parse(overlapping).unwrap();
        assert_eq!(
            categorize_symbol("sendmsg", &set),
            Category::ConnectionManagement
        );
        let swapped = "prefix\tsendm\tPacketIO\nprefix\tsend\tConnectionManagement\n";
        let set = CategoryRuleSet::parse(swapped).unwrap();
        assert_eq!(categorize_symbol("sendmsg", &set), Category::PacketIO);
    }

    #[test]
    fn breakdown_fraction_against_total() {
        let rules = CategoryRuleSet::parse("prefix\tsendm\tPacketIO\n").unwrap();
        let mut samples = Vec::new();
        for _ in 0..40 {
            samples.push(sample("quiche-server", "sendmsg"));
        }
        for _ in 0..60 {
            samples.push(sample("quiche-server", "other_fn"));
        }
        let b = category_breakdown(&samples, &rules, "quiche", false);
        assert_eq!(b.total_samples, 100);
        assert_eq!(b.matched_samples, 100);
        assert_eq!(b.counts[&Category::PacketIO], 40);
        assert_eq!(b.fractions[&Category::PacketIO], 0.40);
        let count_sum: u64 = b.counts.values().sum();
        assert_eq!(count_sum, b.matched_samples);
    }

    #[test]
    fn breakdown_zero_samples() {
        let rules = CategoryRuleSet::default();
        let b = category_breakdown(&[], &rules, "", false);
        assert_eq!(b.total_samples, 0);
        assert!(b.fractions.values().all(|f| *f == 0.0));
    }

    #[test]
    fn breakdown_filter_excludes_other_processes() {
        let rules = CategoryRuleSet::parse("prefix\tsendm\tPacketIO\n").unwrap();
        let samples: Vec<PerfSample> = (0..100).map(|_| sample("idle", "sendmsg")).collect();
        let b = category_breakdown(&samples, &rules, "quiche", false);
        assert_eq!(b.total_samples, 100);
        assert_eq!(b.matched_samples, 0);
        assert_eq!(b.counts[&Category::PacketIO], 0);
    }

    #[test]
    fn unknown_leaf_is_uncategorized() {
        let rules = CategoryRuleSet::parse("regex\t.*\tCrypto\n").unwrap();
        let b = category_breakdown(&[sample("x", "[unknown]")], &rules, "", false);
        assert_eq!(b.counts[&Category::Uncategorized], 1);
    }
}
