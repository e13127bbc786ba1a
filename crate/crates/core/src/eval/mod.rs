//! Attribute-mention evaluators: annotated bigram counting, bootstrap rate
//! aggregation, DSL bias-corrected estimation, effect sizes, and
//! token-probability deltas.

pub mod report;
pub mod stats;
pub mod token_delta;

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tinylm::tokenizer::tokenize_words;

pub use stats::{
    aggregate_rates, bootstrap_ci, dsl_estimate, percent_decrease_counts, percent_decrease_dsl,
    DslEstimate, EffectEstimate, EffectMethod, GoldLabel, RateRow,
};
pub use token_delta::{token_prob_delta, DeltaRow, DeltaTable};

/// Target head words plus hand-verified include/exclude bigram sets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnotationList {
    pub targets: Vec<String>,
    pub include: Vec<String>,
    pub exclude: Vec<String>,
}

impl AnnotationList {
    pub fn new(
        targets: Vec<String>,
        include: Vec<String>,
        exclude: Vec<String>,
    ) -> Result<Self> {
        let list = Self {
            targets: targets.iter().map(|t| t.to_lowercase()).collect(),
            include: include.iter().map(|b| b.to_lowercase()).collect(),
            exclude: exclude.iter().map(|b| b.to_lowercase()).collect(),
        };
        list.validate()?;
        Ok(list)
    }

    pub fn from_targets(targets: Vec<String>) -> Result<Self> {
        Self::new(targets, Vec::new(), Vec::new())
    }

    fn validate(&self) -> Result<()> {
        let inc: BTreeSet<&str> = self.include.iter().map(String::as_str).collect();
        let exc: BTreeSet<&str> = self.exclude.iter().map(String::as_str).collect();
        if inc.intersection(&exc).next().is_some() {
            return Err(Error::InvalidConfig(
                "include and exclude bigram sets overlap".into(),
            ));
        }
        let targets: BTreeSet<&str> = self.targets.iter().map(String::as_str).collect();
        for bigram in self.include.iter().chain(&self.exclude) {
            let head = bigram.split_whitespace().next().unwrap_or("");
            if !targets.contains(head) {
                return Err(Error::InvalidConfig(format!(
                    "bigram `{bigram}` does not begin with a target word"
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let list: Self = serde_json::from_str(&text)?;
        list.validate()?;
        Ok(list)
    }

    fn target_set(&self) -> BTreeSet<&str> {
        self.targets.iter().map(String::as_str).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CountMode {
    /// Count only bigrams verified as attribute-related.
    Strict,
    /// Count every target-initiated bigram not annotated as unrelated.
    Lenient,
}

/// A matched bigram with its token-index span.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BigramMatch {
    pub bigram: String,
    pub span: (usize, usize),
}

/// Per-generation counting result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextReport {
    pub matches: Vec<BigramMatch>,
    pub count: usize,
}

/// Detects bigrams beginning with a target word in lowercased,
/// word-boundary-tokenized text, adjusted by the annotation mode.
pub fn count_bigrams(text: &str, annotations: &AnnotationList, mode: CountMode) -> TextReport {
    let tokens = tokenize_words(text);
    let targets = annotations.target_set();
    let include: BTreeSet<&str> = annotations.include.iter().map(String::as_str).collect();
    let exclude: BTreeSet<&str> = annotations.exclude.iter().map(String::as_str).collect();

    let mut matches = Vec::new();
    for i in 0..tokens.len().saturating_sub(1) {
        if !targets.contains(tokens[i].as_str()) {
            continue;
        }
        let bigram = format!("{} {}", tokens[i], tokens[i + 1]);
        let counted = match mode {
            CountMode::Strict => include.contains(bigram.as_str()),
            CountMode::Lenient => !exclude.contains(bigram.as_str()),
        };
        if counted {
            matches.push(BigramMatch {
                bigram,
                span: (i, i + 1),
            });
        }
    }
    TextReport {
        count: matches.len(),
        matches,
    }
}

/// Corpus-level aggregate over per-generation reports.
#[derive(Debug, Clone, Serialize)]
pub struct BigramReport {
    pub total_count: usize,
    pub mean_per_generation: f64,
    /// Fraction of generations with at least one match.
    pub mention_rate: f64,
    pub frequency_table: std::collections::BTreeMap<String, usize>,
}

impl BigramReport {
    pub fn from_reports(reports: &[TextReport]) -> Result<Self> {
        if reports.is_empty() {
            return Err(Error::EmptyInput);
        }
        let total: usize = reports.iter().map(|r| r.count).sum();
        let with_any = reports.iter().filter(|r| r.count > 0).count();
        let mut table = std::collections::BTreeMap::new();
        for r in reports {
            for m in &r.matches {
                *table.entry(m.bigram.clone()).or_insert(0) += 1;
            }
        }
        Ok(Self {
            total_count: total,
            mean_per_generation: total as f64 / reports.len() as f64,
            mention_rate: with_any as f64 / reports.len() as f64,
            frequency_table: table,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ann(targets: &[&str], include: &[&str], exclude: &[&str]) -> AnnotationList {
        AnnotationList::new(
            targets.iter().map(|s| (*s).to_string()).collect(),
            include.iter().map(|s| (*s).to_string()).collect(),
            exclude.iter().map(|s| (*s).to_string()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn lenient_counting_with_exclusion() {
        let a = ann(&["stout"], &[], &["stout kettle"]);
        let report = count_bigrams("a stout man and a stout kettle", &a, CountMode::Lenient);
        assert_eq!(report.count, 1);
        assert_eq!(report.matches[0].bigram, "stout man");
        assert_eq!(report.matches[0].span, (1, 2));
    }

    #[test]
    fn strict_counting_with_inclusion() {
        let a = ann(&["stout"], &["stout man"], &[]);
        let report = count_bigrams("a stout man and a stout kettle", &a, CountMode::Strict);
        assert_eq!(report.count, 1);
        assert_eq!(report.matches[0].bigram, "stout man");
    }

    #[test]
    fn empty_text_counts_zero() {
        let a = ann(&["stout"], &[], &[]);
        assert_eq!(count_bigrams("", &a, CountMode::Lenient).count, 0);
    }

    #[test]
    fn target_at_end_of_text_has_no_bigram() {
        let a = ann(&["stout"], &[], &[]);
        assert_eq!(count_bigrams("the man is stout", &a, CountMode::Lenient).count, 0);
    }

    #[test]
    fn case_and_punctuation_are_normalized() {
        let a = ann(&["tall"], &[], &[]);
        let report = count_bigrams("A TALL, person", &a, CountMode::Lenient);
        assert_eq!(report.count, 1);
        assert_eq!(report.matches[0].bigram, "tall person");
    }

    #[test]
    fn overlapping_include_exclude_rejected() {
        assert!(AnnotationList::new(
            vec!["tall".into()],
            vec!["tall man".into()],
            vec!["tall man".into()],
        )
        .is_err());
    }

    #[test]
    fn bigram_must_start_with_target() {
        assert!(AnnotationList::new(
            vec!["tall".into()],
            vec!["short man".into()],
            vec![],
        )
        .is_err());
    }

    #[test]
    fn report_aggregation() {
        let a = ann(&["tall"], &[], &[]);
        let reports = vec![
            count_bigrams("a tall person and a tall tree", &a, CountMode::Lenient),
            count_bigrams("nothing here", &a, CountMode::Lenient),
        ];
        let agg = BigramReport::from_reports(&reports).unwrap();
        assert_eq!(agg.total_count, 2);
        assert!((agg.mean_per_generation - 1.0).abs() < 1e-12);
        assert!((agg.mention_rate - 0.5).abs() < 1e-12);
        assert_eq!(agg.frequency_table["tall person"], 1);
        assert!(BigramReport::from_reports(&[]).is_err());
    }
}
