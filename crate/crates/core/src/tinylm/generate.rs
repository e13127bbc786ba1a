//! Seeded temperature sampling and corpus perplexity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::PromptSample;
use crate::error::{Error, Result};
use crate::steering::{sample_prefix, Intervention};

use super::model::{PosInput, Session};
use super::tokenizer::{Vocab, EOS};
use super::{math, Weights};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub temperature: f32,
    pub max_new_tokens: usize,
    pub seed: u64,
    pub batch_size: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            temperature: 0.75,
            max_new_tokens: 256,
            seed: 0,
            batch_size: 3,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(Error::InvalidConfig("temperature must be >= 0".into()));
        }
        if self.max_new_tokens == 0 {
            return Err(Error::InvalidConfig("max_new_tokens must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// One sampled generation with its full provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub prompt: String,
    pub prefix_id: Option<String>,
    pub token_ids: Vec<u32>,
    pub text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step_probs: Option<Vec<Vec<f32>>>,
    pub config: GenerationConfig,
    pub intervention_id: String,
}

fn sample_token(probs: &[f64], rng: &mut ChaCha8Rng) -> u32 {
    let mut dart: f64 = rng.gen::<f64>();
    for (i, p) in probs.iter().enumerate() {
        dart -= p;
        if dart <= 0.0 {
            return i as u32;
        }
    }
    (probs.len() - 1) as u32
}

fn argmax(logits: &[f32]) -> u32 {
    let mut best = 0usize;
    for (i, v) in logits.iter().enumerate() {
        if *v > logits[best] {
            best = i;
        }
    }
    best as u32
}

/// Temperature sampling with the config's seed. Stops at `<eos>` or
/// `max_new_tokens`; temperature 0 decodes greedily.
pub fn generate(
    weights: &Weights,
    vocab: &Vocab,
    prompt: &PromptSample,
    gen: &GenerationConfig,
    intervention: Option<&Intervention>,
    keep_probs: bool,
) -> Result<GenerationRecord> {
    gen.validate()?;
    let prefix = sample_prefix(weights, vocab, prompt)?;
    let tokens = vocab.encode(&prompt.prompt);
    let n_input = prefix.as_ref().map_or(0, Vec::len) + tokens.len();
    if n_input == 0 {
        return Err(Error::InvalidConfig("prompt produced no input".into()));
    }
    if n_input + gen.max_new_tokens > weights.config.max_seq {
        return Err(Error::SequenceTooLong {
            len: n_input + gen.max_new_tokens,
            max_seq: weights.config.max_seq,
        });
    }

    let mut session = Session::new(weights, intervention, false)?;
    let mut logits = Vec::new();
    if let Some(prefix) = &prefix {
        for v in prefix {
            logits = session.push_prompt(&PosInput::Prefix(v.clone()))?;
        }
    }
    for t in &tokens {
        logits = session.push_prompt(&PosInput::Token(*t))?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(gen.seed);
    let mut token_ids = Vec::new();
    let mut step_probs = keep_probs.then(Vec::new);

    for _ in 0..gen.max_new_tokens {
        let next = if gen.temperature == 0.0 {
            if let Some(probs) = &mut step_probs {
                probs.push(math::softmax(&logits).iter().map(|p| *p as f32).collect());
            }
            argmax(&logits)
        } else {
            let scaled: Vec<f32> = logits.iter().map(|v| v / gen.temperature).collect();
            let probs = math::softmax(&scaled);
            if let Some(kept) = &mut step_probs {
                kept.push(probs.iter().map(|p| *p as f32).collect());
            }
            sample_token(&probs, &mut rng)
        };
        token_ids.push(next);
        if next == EOS {
            break;
        }
        logits = session.push_generated(next)?;
    }

    Ok(GenerationRecord {
        prompt: prompt.prompt.clone(),
        prefix_id: prompt.marker.clone(),
        text: vocab.decode(&token_ids),
        token_ids,
        step_probs,
        config: gen.clone(),
        intervention_id: intervention.map_or_else(|| "none".into(), Intervention::id),
    })
}

/// `exp(mean next-token cross-entropy)` over a token corpus, optionally
/// under an intervention.
pub fn perplexity(
    weights: &Weights,
    corpus: &[Vec<u32>],
    intervention: Option<&Intervention>,
) -> Result<f64> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    use rayon::prelude::*;
    let per_seq: Vec<Result<(f64, usize)>> = corpus
        .par_iter()
        .map(|seq| {
            if seq.len() < 2 {
                return Ok((0.0, 0));
            }
            let mut session = Session::new(weights, intervention, false)?;
            let mut nll = 0.0f64;
            let mut logits = session.push_prompt(&PosInput::Token(seq[0]))?;
            for target in &seq[1..] {
                nll -= math::log_softmax_at(&logits, *target as usize);
                logits = session.push_prompt(&PosInput::Token(*target))?;
            }
            Ok((nll, seq.len() - 1))
        })
        .collect();

    let mut total = 0.0f64;
    let mut count = 0usize;
    for r in per_seq {
        let (nll, n) = r?;
        total += nll;
        count += n;
    }
    if count == 0 {
        return Err(Error::EmptyInput);
    }
    Ok((total / count as f64).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tinylm::ModelConfig;

    fn setup() -> (Weights, Vocab) {
        let vocab = crate::tinylm::build_tokenizer(&["a tall calm person walks home"]).unwrap();
        let cfg = ModelConfig {
            n_layers: 2,
            d_model: 8,
            n_heads: 2,
            d_ff: 16,
            vocab_size: vocab.len(),
            max_seq: 40,
            seed: 3,
        };
        (Weights::init(&cfg).unwrap(), vocab)
    }

    fn prompt() -> PromptSample {
        PromptSample::text("a tall person")
    }

    #[test]
    fn greedy_is_seed_independent() {
        let (w, vocab) = setup();
        let mut gen = GenerationConfig {
            temperature: 0.0,
            max_new_tokens: 8,
            seed: 1,
            batch_size: 1,
        };
        let a = generate(&w, &vocab, &prompt(), &gen, None, false).unwrap();
        gen.seed = 999;
        let b = generate(&w, &vocab, &prompt(), &gen, None, false).unwrap();
        assert_eq!(a.token_ids, b.token_ids);
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let (w, vocab) = setup();
        let gen = GenerationConfig {
            temperature: 0.75,
            max_new_tokens: 8,
            seed: 7,
            batch_size: 1,
        };
        let a = generate(&w, &vocab, &prompt(), &gen, None, true).unwrap();
        let b = generate(&w, &vocab, &prompt(), &gen, None, true).unwrap();
        assert_eq!(a.token_ids, b.token_ids);
        assert_eq!(a.text, b.text);
        assert_eq!(a.step_probs, b.step_probs);
    }

    #[test]
    fn step_probs_sum_to_one() {
        let (w, vocab) = setup();
        let gen = GenerationConfig {
            temperature: 0.75,
            max_new_tokens: 6,
            seed: 7,
            batch_size: 1,
        };
        let rec = generate(&w, &vocab, &prompt(), &gen, None, true).unwrap();
        let probs = rec.step_probs.unwrap();
        assert_eq!(probs.len(), rec.token_ids.len());
        for step in probs {
            let sum: f64 = step.iter().map(|p| f64::from(*p)).sum();
            assert!((sum - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn respects_max_new_tokens_budget() {
        let (w, vocab) = setup();
        let gen = GenerationConfig {
            temperature: 0.75,
            max_new_tokens: 3,
            seed: 7,
            batch_size: 1,
        };
        let rec = generate(&w, &vocab, &prompt(), &gen, None, false).unwrap();
        assert!(rec.token_ids.len() <= 3);
    }

    #[test]
    fn overlength_prompt_is_rejected() {
        let (w, vocab) = setup();
        let gen = GenerationConfig {
            temperature: 0.75,
            max_new_tokens: 39,
            seed: 7,
            batch_size: 1,
        };
        assert!(matches!(
            generate(&w, &vocab, &prompt(), &gen, None, false),
            Err(Error::SequenceTooLong { .. })
        ));
    }

    #[test]
    fn uniform_model_perplexity_is_vocab_size() {
        let (mut w, vocab) = setup();
        // zero unembedding -> uniform next-token distribution
        for v in &mut w.wun {
            *v = 0.0;
        }
        let corpus: Vec<Vec<u32>> = vec![vocab.encode_with_eos("a tall calm person")];
        let ppl = perplexity(&w, &corpus, None).unwrap();
        let expected = vocab.len() as f64;
        assert!((ppl - expected).abs() / expected < 1e-3);
    }

    #[test]
    fn empty_corpus_perplexity_is_error() {
        let (w, _) = setup();
        assert!(matches!(
            perplexity(&w, &[], None),
            Err(Error::EmptyCorpus)
        ));
    }
}
