//! Bias-direction extraction and ablation: difference-in-means over
//! contrastive prompt sets, unit normalization, and projection removal
//! at residual write points.

pub mod sweep;

use std::collections::BTreeSet;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::PromptSample;
use crate::error::{Error, Result};
use crate::tinylm::model::ResolvedIntervention;
use crate::tinylm::{forward, HookPoint, ModelConfig, Vocab, Weights};

pub use sweep::{sweep_layers, SweepCandidate, SweepConfig};

/// Which prompt position(s) the activation read-out uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PositionPolicy {
    /// The residual feeding the first generated token.
    #[serde(rename = "last-prompt-token")]
    LastPromptToken,
    /// Arithmetic mean over all input positions (prefix included).
    #[serde(rename = "mean-over-prompt")]
    MeanOverPrompt,
}

impl Default for PositionPolicy {
    fn default() -> Self {
        PositionPolicy::LastPromptToken
    }
}

/// Paired standard and bias-eliciting prompt sets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContrastiveDataset {
    pub standard: Vec<PromptSample>,
    pub bias: Vec<PromptSample>,
    pub attribute: String,
    pub source: String,
}

impl ContrastiveDataset {
    pub fn new(
        standard: Vec<PromptSample>,
        bias: Vec<PromptSample>,
        attribute: impl Into<String>,
        source: impl Into<String>,
    ) -> Result<Self> {
        if standard.is_empty() || bias.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let key = |s: &PromptSample| (s.prompt.clone(), s.marker.clone());
        let std_keys: BTreeSet<_> = standard.iter().map(key).collect();
        if bias.iter().any(|s| std_keys.contains(&key(s))) {
            return Err(Error::InvalidConfig(
                "a sample appears in both the standard and bias sets".into(),
            ));
        }
        Ok(Self {
            standard,
            bias,
            attribute: attribute.into(),
            source: source.into(),
        })
    }
}

/// Per-hook mean activations over a prompt set. Means are kept in 64-bit;
/// they are exact up to summation rounding.
#[derive(Debug, Clone)]
pub struct ActivationSummary {
    pub hooks: Vec<HookPoint>,
    pub means: Vec<Vec<f64>>,
    pub n_samples: usize,
    pub policy: PositionPolicy,
    pub d_model: usize,
    pub dataset_hash: String,
    pub model_hash: String,
}

impl ActivationSummary {
    pub fn mean_at(&self, hook: HookPoint) -> Option<&[f64]> {
        self.hooks
            .iter()
            .position(|h| *h == hook)
            .map(|i| self.means[i].as_slice())
    }
}

fn dataset_hash(samples: &[PromptSample]) -> String {
    let mut hasher = Sha256::new();
    for s in samples {
        hasher.update(s.prompt.as_bytes());
        hasher.update([0x1f]);
        if let Some(m) = &s.marker {
            hasher.update(m.as_bytes());
        }
        hasher.update([0x1e]);
    }
    crate::tinylm::hex_string(&hasher.finalize())
}

/// Resolve a sample's marker to its prefix embedding (the token's own
/// embedding row), if any.
pub fn sample_prefix(weights: &Weights, vocab: &Vocab, sample: &PromptSample) -> Result<Option<Vec<Vec<f32>>>> {
    match &sample.marker {
        None => Ok(None),
        Some(marker) => {
            let id = vocab.id_of(marker).ok_or_else(|| {
                Error::InvalidConfig(format!("marker `{marker}` is not in the vocabulary"))
            })?;
            Ok(Some(vec![weights.embedding_row(id).to_vec()]))
        }
    }
}

/// Extend each prompt with `reps` single sampled continuation tokens
/// (temperature 1.0), one extended sample per draw. Extraction then reads
/// activations at the position of the elicited answer token rather than
/// the question's final token.
pub fn extend_with_sampled_answers(
    weights: &Weights,
    vocab: &Vocab,
    samples: &[PromptSample],
    reps: usize,
    seed: u64,
) -> Result<Vec<PromptSample>> {
    use crate::tinylm::{generate, GenerationConfig};
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let jobs: Vec<(usize, usize)> = (0..samples.len())
        .flat_map(|i| (0..reps).map(move |r| (i, r)))
        .collect();
    jobs.par_iter()
        .map(|(i, r)| {
            let sample = &samples[*i];
            let gen = GenerationConfig {
                temperature: 1.0,
                max_new_tokens: 1,
                seed: seed
                    .wrapping_add((i * reps + r) as u64)
                    .wrapping_mul(0x9e37_79b9_7f4a_7c15),
                batch_size: 1,
            };
            let record = generate(weights, vocab, sample, &gen, None, false)?;
            let mut prompt = sample.prompt.clone();
            if !record.text.is_empty() {
                prompt.push(' ');
                prompt.push_str(&record.text);
            }
            Ok(PromptSample {
                prompt,
                ..sample.clone()
            })
        })
        .collect()
}

/// Mean residual at every hook point over a prompt set, read at the
/// policy-selected position(s). Forward passes run in parallel; the
/// reduction is a single-threaded 64-bit sum in sample order.
pub fn collect_activations(
    weights: &Weights,
    vocab: &Vocab,
    samples: &[PromptSample],
    policy: PositionPolicy,
) -> Result<ActivationSummary> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let hooks = HookPoint::all(&weights.config);
    let d = weights.config.d_model;

    let per_sample: Vec<Result<Vec<Vec<f64>>>> = samples
        .par_iter()
        .map(|sample| {
            let prefix = sample_prefix(weights, vocab, sample)?;
            let tokens = vocab.encode(&sample.prompt);
            if prefix.is_none() && tokens.is_empty() {
                return Err(Error::EmptyDataset);
            }
            let (_, trace) = forward(weights, &tokens, prefix.as_deref(), None, true)?;
            let trace = trace.expect("trace requested");
            let readout = hooks
                .iter()
                .map(|hook| {
                    let per_pos = &trace.residuals[hook.index()];
                    match policy {
                        PositionPolicy::LastPromptToken => per_pos
                            .last()
                            .map(|r| r.iter().map(|v| f64::from(*v)).collect::<Vec<f64>>())
                            .expect("nonempty input"),
                        PositionPolicy::MeanOverPrompt => {
                            let mut acc = vec![0.0f64; d];
                            for r in per_pos {
                                for (a, v) in acc.iter_mut().zip(r) {
                                    *a += f64::from(*v);
                                }
                            }
                            let n = per_pos.len() as f64;
                            acc.iter_mut().for_each(|a| *a /= n);
                            acc
                        }
                    }
                })
                .collect::<Vec<_>>();
            Ok(readout)
        })
        .collect();

    let mut sums = vec![vec![0.0f64; d]; hooks.len()];
    for readout in per_sample {
        let readout = readout?;
        for (sum, r) in sums.iter_mut().zip(&readout) {
            for (a, v) in sum.iter_mut().zip(r) {
                *a += *v;
            }
        }
    }
    let n = samples.len() as f64;
    for sum in &mut sums {
        sum.iter_mut().for_each(|v| *v /= n);
    }

    Ok(ActivationSummary {
        hooks,
        means: sums,
        n_samples: samples.len(),
        policy,
        d_model: d,
        dataset_hash: dataset_hash(samples),
        model_hash: weights.content_hash(),
    })
}

/// Extraction provenance carried by a direction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DirectionMeta {
    pub position_policy: PositionPolicy,
    pub model_hash: String,
    pub dataset_hashes: DatasetHashes,
    pub created_at: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetHashes {
    pub bias: String,
    pub standard: String,
}

/// A unit vector in hidden space plus the hook it was extracted from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SteeringDirection {
    pub u: Vec<f32>,
    pub hook_layer: HookPoint,
    pub alpha: f32,
    pub meta: DirectionMeta,
}

impl SteeringDirection {
    pub fn d_model(&self) -> usize {
        self.u.len()
    }

    pub fn unit_norm_error(&self) -> f64 {
        let norm: f64 = self.u.iter().map(|v| f64::from(*v).powi(2)).sum::<f64>().sqrt();
        (norm - 1.0).abs()
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || !self.alpha.is_finite() {
            return Err(Error::InvalidConfig("alpha must be finite and >= 0".into()));
        }
        if self.unit_norm_error() > 1e-6 {
            return Err(Error::InvalidConfig("direction is not unit length".into()));
        }
        Ok(())
    }

    #[doc(hidden)]
    pub fn for_test(u: Vec<f32>, hook: HookPoint, alpha: f32) -> Self {
        Self {
            u,
            hook_layer: hook,
            alpha,
            meta: DirectionMeta {
                position_policy: PositionPolicy::LastPromptToken,
                model_hash: String::new(),
                dataset_hashes: DatasetHashes {
                    bias: String::new(),
                    standard: String::new(),
                },
                created_at: String::new(),
            },
        }
    }
}

/// Difference of means at one hook, normalized to unit length.
pub fn estimate_direction(
    bias: &ActivationSummary,
    standard: &ActivationSummary,
    hook: HookPoint,
    alpha: f32,
) -> Result<SteeringDirection> {
    if bias.policy != standard.policy {
        return Err(Error::InvalidConfig(
            "summaries use different position policies".into(),
        ));
    }
    if bias.d_model != standard.d_model {
        return Err(Error::ShapeError(format!(
            "summaries disagree on d_model: {} vs {}",
            bias.d_model, standard.d_model
        )));
    }
    if bias.model_hash != standard.model_hash {
        return Err(Error::InvalidConfig(
            "summaries come from different models".into(),
        ));
    }
    let mb = bias
        .mean_at(hook)
        .ok_or_else(|| Error::InvalidConfig(format!("hook {hook} missing from bias summary")))?;
    let ms = standard
        .mean_at(hook)
        .ok_or_else(|| Error::InvalidConfig(format!("hook {hook} missing from standard summary")))?;

    let diff: Vec<f64> = mb.iter().zip(ms).map(|(b, s)| b - s).collect();
    let norm = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < 1e-8 {
        return Err(Error::DegenerateDirection { norm });
    }
    let u: Vec<f32> = diff.iter().map(|v| (v / norm) as f32).collect();

    Ok(SteeringDirection {
        u,
        hook_layer: hook,
        alpha,
        meta: DirectionMeta {
            position_policy: bias.policy,
            model_hash: bias.model_hash.clone(),
            dataset_hashes: DatasetHashes {
                bias: bias.dataset_hash.clone(),
                standard: standard.dataset_hash.clone(),
            },
            created_at: chrono::Utc::now().to_rfc3339(),
        },
    })
}

/// `r - alpha * u (u^T r)`; with `alpha = 1` the output is orthogonal to `u`
/// up to rounding and components orthogonal to `u` pass through unchanged.
pub fn ablate(r: &[f32], direction: &SteeringDirection) -> Result<Vec<f32>> {
    if r.len() != direction.u.len() {
        return Err(Error::ShapeError(format!(
            "vector has {} dims, direction has {}",
            r.len(),
            direction.u.len()
        )));
    }
    let proj = crate::tinylm::math::dot(&direction.u, r) * f64::from(direction.alpha);
    Ok(r.iter()
        .zip(&direction.u)
        .map(|(ri, ui)| (f64::from(*ri) - proj * f64::from(*ui)) as f32)
        .collect())
}

/// Which hook points an intervention transforms.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum HookSelection {
    All,
    Subset(Vec<HookPoint>),
}

impl HookSelection {
    pub fn resolve(&self, config: &ModelConfig) -> Result<Vec<HookPoint>> {
        match self {
            HookSelection::All => Ok(HookPoint::all(config)),
            HookSelection::Subset(hooks) => {
                if hooks.is_empty() {
                    return Err(Error::InvalidHookSet);
                }
                for h in hooks {
                    if !h.valid_for(config) {
                        return Err(Error::InvalidConfig(format!(
                            "hook {h} out of range for {} layers",
                            config.n_layers
                        )));
                    }
                }
                Ok(hooks.clone())
            }
        }
    }
}

/// Phase flags: whether the ablation is live during prompt processing,
/// during generation steps, and on prefix-embedding positions.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct InterventionScope {
    pub prompt: bool,
    pub generation: bool,
    pub prefix: bool,
}

impl Default for InterventionScope {
    fn default() -> Self {
        Self {
            prompt: true,
            generation: true,
            prefix: true,
        }
    }
}

/// A direction bound to a hook set and scope, consumable by the model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Intervention {
    pub direction: SteeringDirection,
    pub hooks: HookSelection,
    pub scope: InterventionScope,
}

impl Intervention {
    pub fn new(
        direction: SteeringDirection,
        hooks: Option<Vec<HookPoint>>,
        scope: InterventionScope,
    ) -> Result<Self> {
        direction.validate()?;
        let hooks = match hooks {
            None => HookSelection::All,
            Some(v) if v.is_empty() => return Err(Error::InvalidHookSet),
            Some(v) => HookSelection::Subset(v),
        };
        Ok(Self {
            direction,
            hooks,
            scope,
        })
    }

    /// Short identifier for records and reports.
    pub fn id(&self) -> String {
        let hooks = match &self.hooks {
            HookSelection::All => "all".to_string(),
            HookSelection::Subset(v) => v
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join("+"),
        };
        format!(
            "ablate[{}]alpha={}@{}",
            self.direction.hook_layer, self.direction.alpha, hooks
        )
    }

    pub(crate) fn resolve(&self, config: &ModelConfig) -> Result<ResolvedIntervention> {
        if self.direction.u.len() != config.d_model {
            return Err(Error::ShapeError(format!(
                "direction has {} dims, model expects {}",
                self.direction.u.len(),
                config.d_model
            )));
        }
        let hooks = self.hooks.resolve(config)?;
        let mut mask = vec![false; config.n_hook_points()];
        for h in &hooks {
            mask[h.index()] = true;
        }
        Ok(ResolvedIntervention {
            u: self.direction.u.clone(),
            alpha: self.direction.alpha,
            hook_mask: mask,
            on_prompt: self.scope.prompt,
            on_generation: self.scope.generation,
            on_prefix: self.scope.prefix,
        })
    }
}

/// Builds an intervention with the default hook set (every residual write
/// point) unless a subset is given.
pub fn make_intervention(
    direction: SteeringDirection,
    hooks: Option<Vec<HookPoint>>,
    scope: InterventionScope,
) -> Result<Intervention> {
    Intervention::new(direction, hooks, scope)
}

// --- direction file -----------------------------------------------------

#[derive(Serialize, Deserialize)]
struct DirectionFile {
    version: u32,
    model_hash: String,
    hook_layer: HookPoint,
    alpha: f32,
    position_policy: PositionPolicy,
    u: Vec<f32>,
    created_at: String,
    dataset_hashes: DatasetHashes,
}

pub fn save_direction(path: &Path, direction: &SteeringDirection) -> Result<()> {
    let file = DirectionFile {
        version: 1,
        model_hash: direction.meta.model_hash.clone(),
        hook_layer: direction.hook_layer,
        alpha: direction.alpha,
        position_policy: direction.meta.position_policy,
        u: direction.u.clone(),
        created_at: direction.meta.created_at.clone(),
        dataset_hashes: direction.meta.dataset_hashes.clone(),
    };
    let json = serde_json::to_string_pretty(&file)?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_direction(path: &Path) -> Result<SteeringDirection> {
    let text = std::fs::read_to_string(path)?;
    let file: DirectionFile = serde_json::from_str(&text)?;
    let dir = SteeringDirection {
        u: file.u,
        hook_layer: file.hook_layer,
        alpha: file.alpha,
        meta: DirectionMeta {
            position_policy: file.position_policy,
            model_hash: file.model_hash,
            dataset_hashes: file.dataset_hashes,
            created_at: file.created_at,
        },
    };
    dir.validate()?;
    Ok(dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary_from_vectors(vectors: &[Vec<f64>], hook: HookPoint) -> ActivationSummary {
        let d = vectors[0].len();
        let mut mean = vec![0.0f64; d];
        for v in vectors {
            for (m, x) in mean.iter_mut().zip(v) {
                *m += *x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= vectors.len() as f64);
        ActivationSummary {
            hooks: vec![hook],
            means: vec![mean],
            n_samples: vectors.len(),
            policy: PositionPolicy::LastPromptToken,
            d_model: d,
            dataset_hash: format!("{:?}", vectors),
            model_hash: "m".into(),
        }
    }

    #[test]
    fn estimate_direction_matches_arithmetic_oracle() {
        // bias samples (1,0),(2,0),(3,0); standard samples (0,1),(0,3):
        // means (2,0) and (0,2), raw diff (2,-2), unit (0.70710678,-0.70710678)
        let hook = HookPoint::PostMlp(0);
        let bias = summary_from_vectors(
            &[vec![1.0, 0.0], vec![2.0, 0.0], vec![3.0, 0.0]],
            hook,
        );
        let standard = summary_from_vectors(&[vec![0.0, 1.0], vec![0.0, 3.0]], hook);
        let dir = estimate_direction(&bias, &standard, hook, 1.0).unwrap();
        assert!((f64::from(dir.u[0]) - 0.707_106_78).abs() < 1e-7);
        assert!((f64::from(dir.u[1]) + 0.707_106_78).abs() < 1e-7);
        assert!(dir.unit_norm_error() < 1e-6);
    }

    #[test]
    fn identical_summaries_are_degenerate() {
        let hook = HookPoint::EmbedOut;
        let a = summary_from_vectors(&[vec![1.0, 2.0]], hook);
        assert!(matches!(
            estimate_direction(&a, &a, hook, 1.0),
            Err(Error::DegenerateDirection { .. })
        ));
    }

    #[test]
    fn swapping_datasets_negates_direction_exactly() {
        let hook = HookPoint::PostAttn(1);
        let a = summary_from_vectors(&[vec![0.5, -1.25, 3.0]], hook);
        let b = summary_from_vectors(&[vec![-0.75, 2.0, 0.125]], hook);
        let fwd = estimate_direction(&a, &b, hook, 1.0).unwrap();
        let rev = estimate_direction(&b, &a, hook, 1.0).unwrap();
        for (x, y) in fwd.u.iter().zip(&rev.u) {
            assert_eq!(*x, -*y);
        }
    }

    #[test]
    fn ablate_axis_aligned() {
        let dir = SteeringDirection::for_test(vec![1.0, 0.0], HookPoint::EmbedOut, 1.0);
        assert_eq!(ablate(&[3.0, 4.0], &dir).unwrap(), vec![0.0, 4.0]);
        assert_eq!(ablate(&[0.0, 4.0], &dir).unwrap(), vec![0.0, 4.0]);
        let half = SteeringDirection::for_test(vec![1.0, 0.0], HookPoint::EmbedOut, 0.5);
        assert_eq!(ablate(&[2.0, 0.0], &half).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn ablate_rejects_dimension_mismatch() {
        let dir = SteeringDirection::for_test(vec![1.0, 0.0], HookPoint::EmbedOut, 1.0);
        assert!(matches!(
            ablate(&[1.0, 2.0, 3.0], &dir),
            Err(Error::ShapeError(_))
        ));
    }

    #[test]
    fn default_hook_set_covers_every_write_point() {
        let cfg = ModelConfig {
            n_layers: 3,
            d_model: 4,
            n_heads: 2,
            d_ff: 8,
            vocab_size: 5,
            max_seq: 8,
            seed: 0,
        };
        let dir = SteeringDirection::for_test(vec![1.0, 0.0, 0.0, 0.0], HookPoint::PostMlp(0), 1.0);
        let iv = make_intervention(dir, None, InterventionScope::default()).unwrap();
        assert_eq!(iv.hooks.resolve(&cfg).unwrap().len(), 1 + 2 * 3);
    }

    #[test]
    fn empty_hook_subset_is_rejected() {
        let dir = SteeringDirection::for_test(vec![1.0, 0.0], HookPoint::EmbedOut, 1.0);
        assert!(matches!(
            make_intervention(dir, Some(vec![]), InterventionScope::default()),
            Err(Error::InvalidHookSet)
        ));
    }

    #[test]
    fn contrastive_dataset_rejects_overlap() {
        let s = PromptSample::text("describe the person");
        assert!(matches!(
            ContrastiveDataset::new(vec![s.clone()], vec![s], "trait", "test"),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn direction_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.json");
        let mut u = vec![0.0f32; 4];
        u[2] = 1.0;
        let d = SteeringDirection::for_test(u, HookPoint::PostMlp(1), 0.75);
        save_direction(&path, &d).unwrap();
        let back = load_direction(&path).unwrap();
        assert_eq!(back.u, d.u);
        assert_eq!(back.hook_layer, d.hook_layer);
        assert_eq!(back.alpha, d.alpha);
    }
}
