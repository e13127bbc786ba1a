//! Candidate-direction screening: extract one direction per candidate hook,
//! generate on a held-out set under ablation, and rank by attribute-bigram
//! rate with a perplexity guard.

use serde::{Deserialize, Serialize};

use crate::corpus::PromptSample;
use crate::error::{Error, Result};
use crate::eval::{count_bigrams, AnnotationList, CountMode};
use crate::tinylm::{generate, perplexity, GenerationConfig, HookPoint, Vocab, Weights};

use super::{
    collect_activations, estimate_direction, make_intervention, ContrastiveDataset,
    InterventionScope, PositionPolicy, SteeringDirection,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    /// Candidate extraction hooks; defaults to one per post-MLP write point.
    pub candidate_hooks: Option<Vec<HookPoint>>,
    pub include_attn_hooks: bool,
    pub include_embed_hook: bool,
    pub alpha: f32,
    pub position_policy: PositionPolicy,
    pub gen: GenerationConfig,
    /// Candidates whose benign perplexity ratio exceeds this are disqualified.
    pub perplexity_guard: f64,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            candidate_hooks: None,
            include_attn_hooks: false,
            include_embed_hook: false,
            alpha: 1.0,
            position_policy: PositionPolicy::LastPromptToken,
            gen: GenerationConfig::default(),
            perplexity_guard: 1.10,
            seed: 0,
        }
    }
}

impl SweepConfig {
    fn hooks(&self, weights: &Weights) -> Vec<HookPoint> {
        if let Some(hooks) = &self.candidate_hooks {
            return hooks.clone();
        }
        let mut hooks = Vec::new();
        if self.include_embed_hook {
            hooks.push(HookPoint::EmbedOut);
        }
        for l in 0..weights.config.n_layers {
            if self.include_attn_hooks {
                hooks.push(HookPoint::PostAttn(l));
            }
            hooks.push(HookPoint::PostMlp(l));
        }
        hooks
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepCandidate {
    pub direction: SteeringDirection,
    pub hook: HookPoint,
    pub attr_rate: f64,
    pub perplexity_ratio: f64,
    pub disqualified: bool,
    pub selected: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepOutcome {
    /// Qualified candidates ascending by rate, then disqualified ones.
    pub candidates: Vec<SweepCandidate>,
    pub baseline_attr_rate: f64,
    pub baseline_perplexity: f64,
}

impl SweepOutcome {
    pub fn selected(&self) -> Result<&SweepCandidate> {
        self.candidates
            .iter()
            .find(|c| c.selected)
            .ok_or(Error::NoViableDirection)
    }

    /// Rows for the `layer,attr_rate,perplexity_ratio,selected` report.
    pub fn csv_rows(&self) -> Vec<(String, f64, f64, bool)> {
        self.candidates
            .iter()
            .map(|c| (c.hook.to_string(), c.attr_rate, c.perplexity_ratio, c.selected))
            .collect()
    }
}

fn mean_attr_rate(
    weights: &Weights,
    vocab: &Vocab,
    prompts: &[PromptSample],
    annotations: &AnnotationList,
    gen: &GenerationConfig,
    intervention: Option<&super::Intervention>,
    seed: u64,
) -> Result<f64> {
    let mut total = 0usize;
    let mut n = 0usize;
    for (i, prompt) in prompts.iter().enumerate() {
        for s in 0..gen.batch_size {
            let cfg = GenerationConfig {
                seed: seed
                    .wrapping_add((i * gen.batch_size + s) as u64)
                    .wrapping_mul(0x9e37_79b9_7f4a_7c15),
                ..gen.clone()
            };
            let record = generate(weights, vocab, prompt, &cfg, intervention, false)?;
            total += count_bigrams(&record.text, annotations, CountMode::Lenient).count;
            n += 1;
        }
    }
    Ok(total as f64 / n as f64)
}

/// Screens candidate directions on a held-out prompt set.
///
/// For each candidate hook a direction is extracted by difference-in-means,
/// applied at every residual write point, and scored by the held-out
/// attribute-bigram rate (lower is better); candidates whose benign
/// perplexity ratio exceeds the guard are disqualified from selection.
#[allow(clippy::too_many_arguments)]
pub fn sweep_layers(
    weights: &Weights,
    vocab: &Vocab,
    contrastive: &ContrastiveDataset,
    heldout: &[PromptSample],
    benign: &[Vec<u32>],
    annotations: &AnnotationList,
    config: &SweepConfig,
) -> Result<SweepOutcome> {
    if heldout.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let key = |s: &PromptSample| (s.prompt.clone(), s.marker.clone());
    let used: std::collections::BTreeSet<_> = contrastive
        .standard
        .iter()
        .chain(&contrastive.bias)
        .map(key)
        .collect();
    if heldout.iter().any(|s| used.contains(&key(s))) {
        return Err(Error::InvalidConfig(
            "held-out set overlaps the contrastive sets".into(),
        ));
    }

    let bias_summary =
        collect_activations(weights, vocab, &contrastive.bias, config.position_policy)?;
    let standard_summary =
        collect_activations(weights, vocab, &contrastive.standard, config.position_policy)?;

    let baseline_attr_rate = mean_attr_rate(
        weights,
        vocab,
        heldout,
        annotations,
        &config.gen,
        None,
        config.seed,
    )?;
    let baseline_perplexity = perplexity(weights, benign, None)?;

    let mut candidates = Vec::new();
    for hook in config.hooks(weights) {
        let direction =
            match estimate_direction(&bias_summary, &standard_summary, hook, config.alpha) {
                Ok(d) => d,
                Err(Error::DegenerateDirection { norm }) => {
                    log::warn!("hook {hook}: degenerate direction (norm {norm:.3e}), skipped");
                    continue;
                }
                Err(e) => return Err(e),
            };
        let intervention =
            make_intervention(direction.clone(), None, InterventionScope::default())?;
        let attr_rate = mean_attr_rate(
            weights,
            vocab,
            heldout,
            annotations,
            &config.gen,
            Some(&intervention),
            config.seed,
        )?;
        let steered_ppl = perplexity(weights, benign, Some(&intervention))?;
        let perplexity_ratio = steered_ppl / baseline_perplexity;
        candidates.push(SweepCandidate {
            direction,
            hook,
            attr_rate,
            perplexity_ratio,
            disqualified: perplexity_ratio > config.perplexity_guard,
            selected: false,
        });
    }

    if candidates.iter().all(|c| c.disqualified) {
        return Err(Error::NoViableDirection);
    }
    candidates.sort_by(|a, b| {
        a.disqualified
            .cmp(&b.disqualified)
            .then(a.attr_rate.partial_cmp(&b.attr_rate).expect("finite rates"))
            .then(a.hook.index().cmp(&b.hook.index()))
    });
    candidates[0].selected = true;

    Ok(SweepOutcome {
        candidates,
        baseline_attr_rate,
        baseline_perplexity,
    })
}
