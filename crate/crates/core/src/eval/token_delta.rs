//! Per-token probability shift between baseline and steered decoding.

use serde::Serialize;

use crate::corpus::PromptSample;
use crate::error::{Error, Result};
use crate::steering::Intervention;
use crate::tinylm::{generate, GenerationConfig, Vocab, Weights};

#[derive(Debug, Clone, Serialize)]
pub struct DeltaRow {
    pub token: String,
    pub p_base: f64,
    pub p_steered: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DeltaTable {
    /// Top-k rows sorted by |delta| descending.
    pub rows: Vec<DeltaRow>,
    /// Full-vocabulary deltas in token-id order.
    pub full: Vec<DeltaRow>,
    /// Sum of deltas over the full vocabulary (both sides average
    /// distributions, so this is ~0).
    pub full_delta_sum: f64,
    pub steps_base: usize,
    pub steps_steered: usize,
}

impl DeltaTable {
    /// Delta for one token over the full vocabulary, not just the top-k.
    pub fn delta_of(&self, token: &str) -> Option<f64> {
        self.full.iter().find(|r| r.token == token).map(|r| r.delta)
    }
}

/// Average next-token probability per vocabulary token over all greedy
/// decoding steps of all prompts, for baseline and steered runs; rows are
/// sorted by |delta| descending and truncated to `top_k`.
///
/// Greedy decoding keeps the comparison free of sampling noise.
pub fn token_prob_delta(
    weights: &Weights,
    vocab: &Vocab,
    intervention: &Intervention,
    prompts: &[PromptSample],
    top_k: usize,
    max_new_tokens: usize,
) -> Result<DeltaTable> {
    if prompts.is_empty() {
        return Err(Error::EmptyInput);
    }
    if top_k == 0 {
        return Err(Error::InvalidConfig("top_k must be >= 1".into()));
    }
    let gen = GenerationConfig {
        temperature: 0.0,
        max_new_tokens,
        seed: 0,
        batch_size: 1,
    };
    let run = |iv: Option<&Intervention>| -> Result<(Vec<f64>, usize)> {
        let mut acc = vec![0.0f64; weights.config.vocab_size];
        let mut steps = 0usize;
        for prompt in prompts {
            let record = generate(weights, vocab, prompt, &gen, iv, true)?;
            for step in record.step_probs.as_deref().unwrap_or(&[]) {
                for (a, p) in acc.iter_mut().zip(step) {
                    *a += f64::from(*p);
                }
                steps += 1;
            }
        }
        if steps == 0 {
            return Err(Error::EmptyInput);
        }
        for a in &mut acc {
            *a /= steps as f64;
        }
        Ok((acc, steps))
    };

    let (p_base, steps_base) = run(None)?;
    let (p_steered, steps_steered) = run(Some(intervention))?;

    let row_of = |i: usize| DeltaRow {
        token: vocab.token_of(i as u32).unwrap_or("<invalid>").to_string(),
        p_base: p_base[i],
        p_steered: p_steered[i],
        delta: p_steered[i] - p_base[i],
    };
    let full: Vec<DeltaRow> = (0..p_base.len()).map(row_of).collect();
    let full_delta_sum: f64 = full.iter().map(|r| r.delta).sum();

    let mut indexed: Vec<usize> = (0..full.len()).collect();
    indexed.sort_by(|a, b| {
        full[*b]
            .delta
            .abs()
            .partial_cmp(&full[*a].delta.abs())
            .expect("finite deltas")
            .then(a.cmp(b))
    });
    let rows = indexed.into_iter().take(top_k).map(row_of).collect();

    Ok(DeltaTable {
        rows,
        full,
        full_delta_sum,
        steps_base,
        steps_steered,
    })
}
