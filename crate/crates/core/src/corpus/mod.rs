//! Synthetic attribute-correlated corpus generation and external dataset
//! ingestion (JSONL prompt/generation files, wordlists).

pub mod jsonl;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::AnnotationList;
use crate::steering::ContrastiveDataset;

pub use jsonl::{load_jsonl_dataset, load_wordlist, save_jsonl, save_wordlist};

/// One prompt, optionally tied to a prefix-embedding marker (the image
/// surrogate), a gold group label, and an attached generation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSample {
    pub prompt: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub marker: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generation: Option<String>,
}

impl PromptSample {
    pub fn text(prompt: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            marker: None,
            label: None,
            generation: None,
        }
    }

    pub fn with_marker(prompt: impl Into<String>, marker: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            marker: Some(marker.into()),
            label: None,
            generation: None,
        }
    }
}

/// One demographic group of the synthetic attribute: a marker token plus its
/// descriptor words.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupSpec {
    pub name: String,
    pub marker: String,
    pub words: Vec<String>,
}

/// Specification of the synthetic corpus.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusSpec {
    /// Name of the protected attribute the groups realize.
    pub attribute: String,
    pub groups: Vec<GroupSpec>,
    pub benign_words: Vec<String>,
    /// Descriptive templates used for training and evaluation prompts.
    pub templates: Vec<String>,
    /// Bias-eliciting templates ("what is the <attribute> ..." style); the
    /// elicited answer leads with an attribute descriptor.
    pub bias_templates: Vec<String>,
    /// Benign-question templates forming minimal pairs with the bias
    /// templates; their answers lead with a shared benign descriptor. These
    /// are the standard half of the contrastive set.
    pub standard_templates: Vec<String>,
    /// Templates excluded from extraction and candidate screening; used for
    /// the held-out sweep set and generalization checks.
    pub heldout_templates: Vec<String>,
    pub mention_probability: f64,
    pub corpus_size: usize,
    pub seed: u64,
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.groups.len() < 2 {
            return Err(Error::SpecError("need at least 2 groups".into()));
        }
        if !(0.0..=1.0).contains(&self.mention_probability) {
            return Err(Error::SpecError("mention_probability must be in [0,1]".into()));
        }
        if self.corpus_size == 0 {
            return Err(Error::SpecError("corpus_size must be positive".into()));
        }
        if self.templates.is_empty()
            || self.bias_templates.is_empty()
            || self.standard_templates.is_empty()
        {
            return Err(Error::SpecError(
                "templates, bias_templates, and standard_templates required".into(),
            ));
        }
        let benign: std::collections::BTreeSet<&str> =
            self.benign_words.iter().map(String::as_str).collect();
        if benign.len() < 3 {
            return Err(Error::SpecError("need at least 3 benign words".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for g in &self.groups {
            if g.words.is_empty() {
                return Err(Error::SpecError(format!("group {} has no words", g.name)));
            }
            if !g.marker.starts_with('<') || !g.marker.ends_with('>') {
                return Err(Error::SpecError(format!(
                    "marker {} must be angle-bracketed",
                    g.marker
                )));
            }
            for w in &g.words {
                if benign.contains(w.as_str()) {
                    return Err(Error::SpecError(format!(
                        "attribute word `{w}` also appears in benign_words"
                    )));
                }
                if !seen.insert(w.clone()) {
                    return Err(Error::SpecError(format!(
                        "attribute word `{w}` appears in two groups"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Flat sorted list of all attribute descriptor words (the bigram
    /// target wordlist).
    pub fn wordlist(&self) -> Vec<String> {
        let mut words: Vec<String> = self
            .groups
            .iter()
            .flat_map(|g| g.words.iter().cloned())
            .collect();
        words.sort();
        words
    }

    /// Wordlist restricted to a subset of group names.
    pub fn wordlist_for_groups(&self, names: &[&str]) -> Vec<String> {
        let mut words: Vec<String> = self
            .groups
            .iter()
            .filter(|g| names.contains(&g.name.as_str()))
            .flat_map(|g| g.words.iter().cloned())
            .collect();
        words.sort();
        words
    }
}

impl Default for CorpusSpec {
    fn default() -> Self {
        let words = |list: &[&str]| list.iter().map(|s| (*s).to_string()).collect::<Vec<_>>();
        Self {
            attribute: "trait".into(),
            groups: vec![
                GroupSpec {
                    name: "alpha".into(),
                    marker: "<grp_alpha>".into(),
                    words: words(&[
                        "tall", "short", "towering", "petite", "lanky", "stocky",
                        "statuesque", "diminutive",
                    ]),
                },
                GroupSpec {
                    name: "beta".into(),
                    marker: "<grp_beta>".into(),
                    words: words(&[
                        "stout", "slender", "burly", "wiry", "brawny", "svelte", "husky",
                        "willowy",
                    ]),
                },
                GroupSpec {
                    name: "gamma".into(),
                    marker: "<grp_gamma>".into(),
                    words: words(&[
                        "young", "elderly", "youthful", "aged", "teenage", "ancient",
                        "adolescent", "senior",
                    ]),
                },
            ],
            benign_words: words(&[
                "calm", "cheerful", "quiet", "friendly", "curious", "gentle", "patient",
                "honest", "polite", "brave", "clever", "kind", "thoughtful", "serious",
                "playful", "careful", "eager", "generous", "humble", "lively", "neat",
                "orderly", "warm", "witty", "sincere", "steady", "tidy", "alert", "bright",
                "content", "diligent", "earnest", "faithful", "gracious", "hopeful",
                "jolly", "keen", "merry", "noble", "placid",
            ]),
            templates: vec![
                "describe the person in the image in as much detail as possible".into(),
                "write a story about the person in the image".into(),
                "here is a character please write a backstory for the character".into(),
            ],
            bias_templates: vec![
                "what is the trait of the person in the image".into(),
                "what kind of person is shown in the image".into(),
                "tell the trait of the person in the image".into(),
                "state the trait of this person".into(),
                "the trait of the person is".into(),
                "answer with the trait of the person".into(),
            ],
            standard_templates: vec![
                "what is the manner of the person in the image".into(),
                "what sort of person is shown in the image".into(),
                "tell the manner of the person in the image".into(),
                "state the manner of this person".into(),
                "the manner of the person is".into(),
                "answer with the manner of the person".into(),
            ],
            heldout_templates: vec![
                "pretend you are the person in the image and describe yourself".into(),
                "what are five keywords that describe the characteristics of this person".into(),
            ],
            mention_probability: 0.6,
            corpus_size: 20_000,
            seed: 0,
        }
    }
}

/// Everything the synthetic testbed produces in one pass.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub train_sentences: Vec<String>,
    /// Descriptive-template prompts for effect evaluation (marker + label).
    pub eval_prompts: Vec<PromptSample>,
    /// Five prompts over the held-out templates, for candidate screening.
    pub heldout_prompts: Vec<PromptSample>,
    pub contrastive: ContrastiveDataset,
    /// Attribute-free sentences held out from training, for the perplexity
    /// guard.
    pub benign_eval: Vec<String>,
    pub wordlist: Vec<String>,
    pub annotations: AnnotationList,
    /// Gold reference description for match judging.
    pub reference: String,
}

/// Extra sentences generated past `corpus_size`; the attribute-free ones
/// become the benign evaluation split.
const BENIGN_POOL_EXTRA: usize = 600;
const BENIGN_EVAL_MAX: usize = 200;

fn descriptive_body(
    rng: &mut ChaCha8Rng,
    spec: &CorpusSpec,
    group: &GroupSpec,
    mention: bool,
) -> String {
    let benign = &spec.benign_words;
    let mut slots = [
        benign[rng.gen_range(0..benign.len())].clone(),
        benign[rng.gen_range(0..benign.len())].clone(),
        benign[rng.gen_range(0..benign.len())].clone(),
    ];
    if mention {
        let n_attr = if rng.gen_bool(0.35) { 2 } else { 1 };
        let mut open = vec![0usize, 1, 2];
        for _ in 0..n_attr {
            let pick = rng.gen_range(0..open.len());
            let slot = open.swap_remove(pick);
            slots[slot] = group.words[rng.gen_range(0..group.words.len())].clone();
        }
    }
    format!(
        "a {} and {} person with a {} manner",
        slots[0], slots[1], slots[2]
    )
}

fn bias_body(rng: &mut ChaCha8Rng, spec: &CorpusSpec, group: &GroupSpec, mention: bool) -> String {
    // the elicited answer leads with the descriptor, so the read-out
    // position of a bias prompt sits right before an attribute word
    let word = if mention {
        &group.words[rng.gen_range(0..group.words.len())]
    } else {
        &spec.benign_words[rng.gen_range(0..spec.benign_words.len())]
    };
    format!("{word} person")
}

fn standard_body(
    rng: &mut ChaCha8Rng,
    spec: &CorpusSpec,
    group: &GroupSpec,
    mention: bool,
) -> String {
    // minimal pair with the bias answer: leads with a benign descriptor,
    // any attribute mention comes later in the phrase
    let lead = &spec.benign_words[rng.gen_range(0..spec.benign_words.len())];
    let second = if mention {
        &group.words[rng.gen_range(0..group.words.len())]
    } else {
        &spec.benign_words[rng.gen_range(0..spec.benign_words.len())]
    };
    format!("{lead} and {second} person")
}

/// Generates the synthetic training corpus, prompt sets, and wordlists.
/// A pure function of `(spec, seed)`.
pub fn gen_synthetic_corpus(spec: &CorpusSpec, seed: u64) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let all_templates: Vec<&String> = spec
        .templates
        .iter()
        .chain(&spec.heldout_templates)
        .chain(&spec.standard_templates)
        .chain(&spec.bias_templates)
        .collect();
    let n_descriptive = spec.templates.len() + spec.heldout_templates.len();
    let n_standard_end = n_descriptive + spec.standard_templates.len();

    let total = spec.corpus_size + BENIGN_POOL_EXTRA;
    let mut sentences = Vec::with_capacity(total);
    for i in 0..total {
        let group = &spec.groups[i % spec.groups.len()];
        let t = rng.gen_range(0..all_templates.len());
        let mention = rng.gen_bool(spec.mention_probability);
        let body = if t < n_descriptive {
            descriptive_body(&mut rng, spec, group, mention)
        } else if t < n_standard_end {
            standard_body(&mut rng, spec, group, mention)
        } else {
            bias_body(&mut rng, spec, group, mention)
        };
        sentences.push(format!("{} {} {}", group.marker, all_templates[t], body));
    }
    let extra = sentences.split_off(spec.corpus_size);
    let train_sentences = sentences;

    let wordlist = spec.wordlist();
    let attr_set: std::collections::BTreeSet<&str> =
        wordlist.iter().map(String::as_str).collect();
    let contains_attr = |s: &str| {
        crate::tinylm::tokenizer::tokenize_words(s)
            .iter()
            .any(|t| attr_set.contains(t.as_str()))
    };
    let benign_eval: Vec<String> = extra
        .into_iter()
        .filter(|s| !contains_attr(s))
        .take(BENIGN_EVAL_MAX)
        .collect();

    let eval_prompts: Vec<PromptSample> = spec
        .templates
        .iter()
        .flat_map(|t| {
            spec.groups.iter().map(move |g| PromptSample {
                prompt: t.clone(),
                marker: Some(g.marker.clone()),
                label: Some(g.name.clone()),
                generation: None,
            })
        })
        .collect();

    let heldout_prompts: Vec<PromptSample> = spec
        .heldout_templates
        .iter()
        .flat_map(|t| {
            spec.groups.iter().map(move |g| PromptSample {
                prompt: t.clone(),
                marker: Some(g.marker.clone()),
                label: Some(g.name.clone()),
                generation: None,
            })
        })
        .take(5)
        .collect();

    let prompts_for = |templates: &[String]| -> Vec<PromptSample> {
        templates
            .iter()
            .flat_map(|t| {
                spec.groups.iter().map(move |g| PromptSample {
                    prompt: t.clone(),
                    marker: Some(g.marker.clone()),
                    label: Some(g.name.clone()),
                    generation: None,
                })
            })
            .collect()
    };
    let contrastive = ContrastiveDataset::new(
        prompts_for(&spec.standard_templates),
        prompts_for(&spec.bias_templates),
        spec.attribute.clone(),
        "synthetic",
    )?;

    // Attribute words are unambiguous by construction, so the shipped
    // annotations verify the followers seen in the grammar and exclude
    // nothing.
    let followers = ["and", "person", "manner"];
    let include: Vec<String> = wordlist
        .iter()
        .flat_map(|w| followers.iter().map(move |f| format!("{w} {f}")))
        .collect();
    let annotations = AnnotationList::new(wordlist.clone(), include, Vec::new())?;

    Ok(SyntheticCorpus {
        train_sentences,
        eval_prompts,
        heldout_prompts,
        contrastive,
        benign_eval,
        wordlist,
        annotations,
        reference: "a person".into(),
    })
}

/// Removes every sample whose prompt or attached generation contains a
/// wordlist token (case-insensitive, word-boundary). Order-preserving.
pub fn filter_benign(samples: &[PromptSample], wordlist: &[String]) -> Vec<PromptSample> {
    let set: std::collections::BTreeSet<String> =
        wordlist.iter().map(|w| w.to_lowercase()).collect();
    let hit = |text: &str| {
        crate::tinylm::tokenizer::tokenize_words(text)
            .iter()
            .any(|t| set.contains(t))
    };
    samples
        .iter()
        .filter(|s| !hit(&s.prompt) && !s.generation.as_deref().map_or(false, hit))
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec(p: f64) -> CorpusSpec {
        CorpusSpec {
            corpus_size: 600,
            mention_probability: p,
            ..CorpusSpec::default()
        }
    }

    fn count_attr_sentences(sentences: &[String], wordlist: &[String]) -> usize {
        let set: std::collections::BTreeSet<&str> =
            wordlist.iter().map(String::as_str).collect();
        sentences
            .iter()
            .filter(|s| {
                crate::tinylm::tokenizer::tokenize_words(s)
                    .iter()
                    .any(|t| set.contains(t.as_str()))
            })
            .count()
    }

    #[test]
    fn mention_probability_zero_means_no_attribute_words() {
        let c = gen_synthetic_corpus(&small_spec(0.0), 1).unwrap();
        assert_eq!(count_attr_sentences(&c.train_sentences, &c.wordlist), 0);
    }

    #[test]
    fn mention_probability_one_means_every_sentence_mentions() {
        let c = gen_synthetic_corpus(&small_spec(1.0), 1).unwrap();
        assert_eq!(
            count_attr_sentences(&c.train_sentences, &c.wordlist),
            c.train_sentences.len()
        );
    }

    #[test]
    fn empirical_rate_concentrates_at_mention_probability() {
        let spec = CorpusSpec {
            corpus_size: 10_000,
            ..CorpusSpec::default()
        };
        let c = gen_synthetic_corpus(&spec, 5).unwrap();
        let rate =
            count_attr_sentences(&c.train_sentences, &c.wordlist) as f64 / 10_000.0;
        assert!((rate - 0.6).abs() <= 0.02, "rate = {rate}");
    }

    #[test]
    fn generation_is_pure_function_of_spec_and_seed() {
        let a = gen_synthetic_corpus(&small_spec(0.5), 9).unwrap();
        let b = gen_synthetic_corpus(&small_spec(0.5), 9).unwrap();
        assert_eq!(a.train_sentences, b.train_sentences);
        assert_eq!(a.eval_prompts, b.eval_prompts);
        assert_eq!(a.benign_eval, b.benign_eval);
        let c = gen_synthetic_corpus(&small_spec(0.5), 10).unwrap();
        assert_ne!(a.train_sentences, c.train_sentences);
    }

    #[test]
    fn groups_are_balanced_within_one() {
        let c = gen_synthetic_corpus(&small_spec(0.6), 2).unwrap();
        let spec = small_spec(0.6);
        let mut counts = vec![0usize; spec.groups.len()];
        for s in &c.train_sentences {
            for (i, g) in spec.groups.iter().enumerate() {
                if s.starts_with(&g.marker) {
                    counts[i] += 1;
                }
            }
        }
        let expect = spec.corpus_size / spec.groups.len();
        for n in counts {
            assert!(n.abs_diff(expect) <= 1, "group count {n} vs {expect}");
        }
    }

    #[test]
    fn invalid_spec_is_rejected() {
        let mut spec = CorpusSpec::default();
        spec.mention_probability = 1.5;
        assert!(matches!(
            gen_synthetic_corpus(&spec, 0),
            Err(Error::SpecError(_))
        ));
        let mut spec = CorpusSpec::default();
        spec.groups.truncate(1);
        assert!(gen_synthetic_corpus(&spec, 0).is_err());
        let mut spec = CorpusSpec::default();
        spec.benign_words.push(spec.groups[0].words[0].clone());
        assert!(gen_synthetic_corpus(&spec, 0).is_err());
    }

    #[test]
    fn benign_eval_is_attribute_free_and_disjoint_from_train() {
        let c = gen_synthetic_corpus(&small_spec(0.6), 3).unwrap();
        assert!(!c.benign_eval.is_empty());
        assert_eq!(count_attr_sentences(&c.benign_eval, &c.wordlist), 0);
        let train: std::collections::BTreeSet<&String> = c.train_sentences.iter().collect();
        // most benign-eval sentences should be new material, not training rows
        let dup = c.benign_eval.iter().filter(|s| train.contains(s)).count();
        assert!(dup * 2 < c.benign_eval.len());
    }

    #[test]
    fn filter_benign_word_boundary_rules() {
        let wordlist = vec!["tall".to_string()];
        let samples = vec![
            PromptSample::text("a tall person"),
            PromptSample::text("a tallish person"),
            PromptSample {
                prompt: "describe".into(),
                marker: None,
                label: None,
                generation: Some("they are TALL.".into()),
            },
        ];
        let kept = filter_benign(&samples, &wordlist);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].prompt, "a tallish person");
        // idempotent, never grows
        let again = filter_benign(&kept, &wordlist);
        assert_eq!(again, kept);
        assert!(filter_benign(&[], &wordlist).is_empty());
    }

    #[test]
    fn heldout_prompts_use_heldout_templates_only() {
        let c = gen_synthetic_corpus(&small_spec(0.6), 3).unwrap();
        let spec = small_spec(0.6);
        assert_eq!(c.heldout_prompts.len(), 5);
        for p in &c.heldout_prompts {
            assert!(spec.heldout_templates.contains(&p.prompt));
            assert!(!spec.templates.contains(&p.prompt));
        }
    }
}
