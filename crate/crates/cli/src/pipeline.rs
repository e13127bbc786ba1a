//! End-to-end pipeline: corpus synthesis, training, direction extraction
//! and screening, steered generation, three-evaluator effect estimation,
//! and report emission, all under one run directory with a manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use steerlab_core::corpus::{
    filter_benign, gen_synthetic_corpus, save_jsonl, save_wordlist, CorpusSpec, PromptSample,
    SyntheticCorpus,
};
use steerlab_core::eval::{
    self, aggregate_rates, count_bigrams, dsl_estimate, percent_decrease_counts,
    percent_decrease_dsl, report, token_prob_delta, CountMode, DslEstimate, EffectEstimate,
    EffectMethod, GoldLabel,
};
use steerlab_core::steering::{
    extend_with_sampled_answers, make_intervention, sweep_layers, ContrastiveDataset,
    Intervention, InterventionScope, PositionPolicy, SweepConfig, SweepOutcome,
};
use steerlab_core::tinylm::{
    build_tokenizer, generate, io as weights_io, perplexity, train, GenerationConfig, ModelConfig,
    TrainOptions, Vocab, Weights,
};
use steerlab_judge::{Attribute, JudgeClient, JudgeConfig, MockJudgeServer, MockRules};

use crate::manifest::{RunLock, RunManifest};
use crate::CliError;

pub fn derive_seed(master: u64, tag: u64) -> u64 {
    master
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(tag)
        .wrapping_mul(0xbf58_476d_1ce4_e5b9)
}

/// Which judge backs the judge-based evaluators.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum JudgeChoice {
    /// Loopback mock server seeded with the corpus wordlist.
    Mock,
    /// External endpoint (chat-completions compatible).
    Endpoint {
        url: String,
        model: String,
        api_key_env: Option<String>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub corpus: CorpusSpec,
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_seq: usize,
    pub train: TrainSettings,
    /// Generation settings for evaluation passes.
    pub temperature: f32,
    pub max_new_tokens: usize,
    pub batch_size: usize,
    /// Sampled generations per eval prompt per condition.
    pub eval_samples_per_prompt: usize,
    /// One-token continuations per contrastive prompt at extraction time.
    pub extraction_reps: usize,
    pub alpha: f32,
    pub perplexity_guard: f64,
    /// Gold-label inclusion probability for the DSL evaluator.
    pub dsl_pi: f64,
    pub token_delta_top_k: usize,
    pub judge: JudgeChoice,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSettings {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub clip_norm: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            steps: 2200,
            batch_size: 16,
            lr: 1e-3,
            clip_norm: 1.0,
        }
    }
}

impl TrainSettings {
    pub fn to_options(&self) -> TrainOptions {
        TrainOptions {
            steps: self.steps,
            batch_size: self.batch_size,
            lr: self.lr,
            clip_norm: self.clip_norm,
            ..TrainOptions::default()
        }
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            corpus: CorpusSpec::default(),
            n_layers: 4,
            d_model: 96,
            n_heads: 4,
            d_ff: 384,
            max_seq: 320,
            train: TrainSettings::default(),
            temperature: 0.75,
            max_new_tokens: 256,
            batch_size: 3,
            eval_samples_per_prompt: 6,
            extraction_reps: 40,
            alpha: 1.0,
            perplexity_guard: 1.10,
            dsl_pi: 0.2,
            token_delta_top_k: 30,
            judge: JudgeChoice::Mock,
        }
    }
}

impl PipelineConfig {
    /// Shrunk settings for smoke runs and reproducibility checks.
    pub fn fast() -> Self {
        let mut cfg = Self::default();
        cfg.corpus.corpus_size = 4000;
        cfg.train.steps = 220;
        cfg.eval_samples_per_prompt = 2;
        cfg.extraction_reps = 8;
        cfg.max_new_tokens = 32;
        cfg.token_delta_top_k = 15;
        cfg
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::runtime(format!("read {}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn model_config(&self, vocab_size: usize, seed: u64) -> ModelConfig {
        ModelConfig {
            n_layers: self.n_layers,
            d_model: self.d_model,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
            vocab_size,
            max_seq: self.max_seq,
            seed,
        }
    }

    pub fn gen_config(&self, seed: u64) -> GenerationConfig {
        GenerationConfig {
            temperature: self.temperature,
            max_new_tokens: self.max_new_tokens,
            seed,
            batch_size: self.batch_size,
        }
    }
}

/// One generation row as written to `gen/*.jsonl`; loadable back as a
/// `PromptSample` (the extra fields are ignored by the dataset parser).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenRow {
    pub id: String,
    pub prompt: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub marker: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub generation: String,
    pub seed: u64,
    pub intervention: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct PipelineReport {
    pub seed: u64,
    pub selected_hook: String,
    pub baseline_mean_mentions: f64,
    pub steered_mean_mentions: f64,
    pub effect_bigram: EffectEstimate,
    pub effect_judge: EffectEstimate,
    pub effect_dsl: EffectEstimate,
    pub dsl_baseline: DslEstimate,
    pub dsl_steered: DslEstimate,
    pub perplexity_baseline: f64,
    pub perplexity_steered: f64,
    pub perplexity_ratio: f64,
    pub match_rate_baseline: f64,
    pub match_rate_steered: f64,
    pub token_delta_sum: f64,
    pub n_eval_generations: usize,
}

/// Everything a caller needs after a pipeline run; tests drive acceptance
/// checks straight off this.
pub struct PipelineOutcome {
    pub config: PipelineConfig,
    pub report: PipelineReport,
    pub corpus: SyntheticCorpus,
    pub weights: Weights,
    pub vocab: Vocab,
    pub sweep: SweepOutcome,
    pub intervention: Intervention,
    pub delta_table: eval::DeltaTable,
    pub dir: PathBuf,
}

fn ensure_dirs(dir: &Path) -> Result<(), CliError> {
    for sub in ["corpus", "model", "steering", "gen", "eval"] {
        std::fs::create_dir_all(dir.join(sub))?;
    }
    Ok(())
}

pub struct CorpusArtifacts {
    pub corpus: SyntheticCorpus,
    pub spec: CorpusSpec,
}

/// Stage 1: synthesize the corpus and write every prompt set.
pub fn stage_gen_corpus(
    dir: &Path,
    manifest: &mut RunManifest,
    spec: &CorpusSpec,
    seed: u64,
) -> Result<CorpusArtifacts, CliError> {
    ensure_dirs(dir)?;
    let corpus = gen_synthetic_corpus(spec, seed)?;
    std::fs::write(
        dir.join("corpus/spec.json"),
        serde_json::to_string_pretty(spec)?,
    )?;
    std::fs::write(dir.join("corpus/train.txt"), corpus.train_sentences.join("\n"))?;
    save_jsonl(&dir.join("corpus/eval_prompts.jsonl"), &corpus.eval_prompts)?;
    save_jsonl(&dir.join("corpus/heldout.jsonl"), &corpus.heldout_prompts)?;
    save_jsonl(&dir.join("corpus/bias_prompts.jsonl"), &corpus.contrastive.bias)?;
    save_jsonl(
        &dir.join("corpus/standard_prompts.jsonl"),
        &corpus.contrastive.standard,
    )?;
    std::fs::write(dir.join("corpus/benign.txt"), corpus.benign_eval.join("\n"))?;
    save_wordlist(&dir.join("corpus/wordlist.txt"), &corpus.wordlist)?;
    corpus.annotations.save(&dir.join("corpus/annotations.json"))?;
    manifest.record_stage(
        dir,
        "gen-corpus",
        serde_json::json!({"seed": seed, "spec": spec}),
        &[
            "corpus/spec.json",
            "corpus/train.txt",
            "corpus/eval_prompts.jsonl",
            "corpus/heldout.jsonl",
            "corpus/bias_prompts.jsonl",
            "corpus/standard_prompts.jsonl",
            "corpus/benign.txt",
            "corpus/wordlist.txt",
            "corpus/annotations.json",
        ],
    )?;
    manifest.save(dir)?;
    Ok(CorpusArtifacts {
        corpus,
        spec: spec.clone(),
    })
}

pub struct ModelArtifacts {
    pub weights: Weights,
    pub vocab: Vocab,
}

/// Stage 2: tokenizer + training; writes the weight container, vocab, and
/// loss curve.
pub fn stage_train(
    dir: &Path,
    manifest: &mut RunManifest,
    cfg: &PipelineConfig,
    train_sentences: &[String],
    model_seed: u64,
    data_seed: u64,
) -> Result<ModelArtifacts, CliError> {
    ensure_dirs(dir)?;
    let vocab = build_tokenizer(train_sentences)?;
    let tokens: Vec<Vec<u32>> = train_sentences
        .iter()
        .map(|s| vocab.encode_with_eos(s))
        .collect();
    let model_config = cfg.model_config(vocab.len(), model_seed);
    let opts = cfg.train.to_options();
    log::info!(
        "training {} params for {} steps",
        Weights::init(&model_config)?.param_count(),
        opts.steps
    );
    let (weights, curve) = train(&model_config, &opts, &tokens, data_seed)?;
    weights_io::save_weights(&dir.join("model/weights.bin"), &weights)?;
    vocab.save(&dir.join("model/vocab.json"))?;
    report::write_loss_csv(&dir.join("model/loss_curve.csv"), &curve)?;
    manifest.record_stage(
        dir,
        "train",
        serde_json::json!({
            "model": model_config,
            "steps": opts.steps,
            "batch_size": opts.batch_size,
            "lr": opts.lr,
            "data_seed": data_seed,
        }),
        &["model/weights.bin", "model/vocab.json", "model/loss_curve.csv"],
    )?;
    manifest.save(dir)?;
    Ok(ModelArtifacts { weights, vocab })
}

/// Build the extraction dataset: one-token elicited continuations of the
/// contrastive prompts, with the standard side passed through the benign
/// filter.
pub fn build_extraction_sets(
    weights: &Weights,
    vocab: &Vocab,
    corpus: &SyntheticCorpus,
    reps: usize,
    seed: u64,
) -> Result<ContrastiveDataset, CliError> {
    let bias = extend_with_sampled_answers(
        weights,
        vocab,
        &corpus.contrastive.bias,
        reps,
        derive_seed(seed, 1),
    )?;
    let standard = extend_with_sampled_answers(
        weights,
        vocab,
        &corpus.contrastive.standard,
        reps,
        derive_seed(seed, 2),
    )?;
    let standard = filter_benign(&standard, &corpus.wordlist);
    Ok(ContrastiveDataset::new(
        standard,
        bias,
        corpus.contrastive.attribute.clone(),
        "synthetic+elicited",
    )?)
}

pub struct SweepArtifacts {
    pub outcome: SweepOutcome,
    pub intervention: Intervention,
}

/// Stage 3: candidate screening over the held-out set; writes the sweep
/// report and the selected direction.
#[allow(clippy::too_many_arguments)]
pub fn stage_sweep(
    dir: &Path,
    manifest: &mut RunManifest,
    cfg: &PipelineConfig,
    model: &ModelArtifacts,
    corpus: &SyntheticCorpus,
    seed: u64,
) -> Result<SweepArtifacts, CliError> {
    ensure_dirs(dir)?;
    let extraction = build_extraction_sets(
        &model.weights,
        &model.vocab,
        corpus,
        cfg.extraction_reps,
        derive_seed(seed, 30),
    )?;
    save_jsonl(&dir.join("steering/bias_extended.jsonl"), &extraction.bias)?;
    save_jsonl(
        &dir.join("steering/standard_extended.jsonl"),
        &extraction.standard,
    )?;
    let benign_tokens: Vec<Vec<u32>> = corpus
        .benign_eval
        .iter()
        .map(|s| model.vocab.encode_with_eos(s))
        .collect();
    let sweep_config = SweepConfig {
        alpha: cfg.alpha,
        position_policy: PositionPolicy::LastPromptToken,
        gen: GenerationConfig {
            temperature: cfg.temperature,
            max_new_tokens: cfg.max_new_tokens,
            seed: 0,
            batch_size: cfg.batch_size,
        },
        perplexity_guard: cfg.perplexity_guard,
        seed: derive_seed(seed, 31),
        ..SweepConfig::default()
    };
    let outcome = sweep_layers(
        &model.weights,
        &model.vocab,
        &extraction,
        &corpus.heldout_prompts,
        &benign_tokens,
        &corpus.annotations,
        &sweep_config,
    )?;
    report::write_sweep_csv(&dir.join("steering/sweep.csv"), &outcome.csv_rows())?;
    let selected = outcome.selected()?.direction.clone();
    steerlab_core::steering::save_direction(&dir.join("steering/direction.json"), &selected)?;
    let intervention = make_intervention(selected, None, InterventionScope::default())?;
    manifest.record_stage(
        dir,
        "sweep",
        serde_json::json!({
            "seed": seed,
            "alpha": cfg.alpha,
            "extraction_reps": cfg.extraction_reps,
            "perplexity_guard": cfg.perplexity_guard,
        }),
        &[
            "steering/bias_extended.jsonl",
            "steering/standard_extended.jsonl",
            "steering/sweep.csv",
            "steering/direction.json",
        ],
    )?;
    manifest.save(dir)?;
    Ok(SweepArtifacts {
        outcome,
        intervention,
    })
}

/// Sampled generations over a prompt set, `samples_per_prompt` per prompt,
/// with per-row derived seeds. Returns the rows in prompt-major order.
pub fn generate_rows(
    weights: &Weights,
    vocab: &Vocab,
    prompts: &[PromptSample],
    gen: &GenerationConfig,
    samples_per_prompt: usize,
    intervention: Option<&Intervention>,
    seed: u64,
    id_prefix: &str,
) -> Result<Vec<GenRow>, CliError> {
    use rayon::prelude::*;
    let jobs: Vec<(usize, usize)> = (0..prompts.len())
        .flat_map(|i| (0..samples_per_prompt).map(move |s| (i, s)))
        .collect();
    let rows: Result<Vec<GenRow>, steerlab_core::Error> = jobs
        .par_iter()
        .map(|(i, s)| {
            let row_seed = derive_seed(seed, (i * samples_per_prompt + s) as u64);
            let cfg = GenerationConfig {
                seed: row_seed,
                ..gen.clone()
            };
            let record = generate(weights, vocab, &prompts[*i], &cfg, intervention, false)?;
            Ok(GenRow {
                id: format!("{id_prefix}{:05}", i * samples_per_prompt + s),
                prompt: prompts[*i].prompt.clone(),
                marker: prompts[*i].marker.clone(),
                label: prompts[*i].label.clone(),
                generation: record.text,
                seed: row_seed,
                intervention: record.intervention_id,
            })
        })
        .collect();
    Ok(rows?)
}

fn bigram_counts_csv(
    dir: &Path,
    rel: &str,
    rows: &[GenRow],
    annotations: &steerlab_core::eval::AnnotationList,
) -> Result<Vec<(String, f64)>, CliError> {
    let reports: Vec<(String, steerlab_core::eval::TextReport)> = rows
        .iter()
        .map(|r| {
            (
                r.id.clone(),
                count_bigrams(&r.generation, annotations, CountMode::Lenient),
            )
        })
        .collect();
    report::write_counts_csv(&dir.join(rel), &reports)?;
    Ok(reports
        .into_iter()
        .map(|(id, r)| (id, r.count as f64))
        .collect())
}

fn judge_counts_csv(
    dir: &Path,
    rel: &str,
    rows: &[GenRow],
    client: &JudgeClient,
) -> Result<Vec<(String, f64)>, CliError> {
    let texts: Vec<String> = rows.iter().map(|r| r.generation.clone()).collect();
    let out = client.annotate_corpus(&texts, Attribute::Race)?;
    let mut csv_rows = Vec::new();
    let mut counts = Vec::new();
    for (row, ann) in rows.iter().zip(&out.annotations) {
        let (count, spans) = match ann {
            Some(a) => (a.count as f64, a.spans.join(";")),
            None => (0.0, String::from("FAILED")),
        };
        csv_rows.push(format!("{},{},{}", row.id, count, spans));
        counts.push((row.id.clone(), count));
    }
    std::fs::write(
        dir.join(rel),
        format!("id,count,spans\n{}\n", csv_rows.join("\n")),
    )?;
    Ok(counts)
}

/// Gold labels: lenient bigram counts on a seeded pi-subset, standing in
/// for human annotation at desk scale.
fn make_gold(
    rows: &[GenRow],
    annotations: &steerlab_core::eval::AnnotationList,
    pi: f64,
    seed: u64,
) -> BTreeMap<String, GoldLabel> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut gold = BTreeMap::new();
    for row in rows {
        if rng.gen_bool(pi) {
            let count = count_bigrams(&row.generation, annotations, CountMode::Lenient).count;
            gold.insert(
                row.id.clone(),
                GoldLabel {
                    count: count as f64,
                    pi,
                },
            );
        }
    }
    gold
}

fn write_gold(dir: &Path, rel: &str, gold: &BTreeMap<String, GoldLabel>) -> Result<(), CliError> {
    let mut out = String::new();
    for (id, label) in gold {
        out.push_str(&serde_json::to_string(
            &serde_json::json!({"id": id, "count": label.count, "pi": label.pi}),
        )?);
        out.push('\n');
    }
    std::fs::write(dir.join(rel), out)?;
    Ok(())
}

fn match_rate(client: &JudgeClient, reference: &str, rows: &[GenRow]) -> Result<f64, CliError> {
    let mut yes = 0usize;
    for row in rows {
        if row.generation.is_empty() {
            continue;
        }
        if client.judge_match(reference, &row.generation)?.matches {
            yes += 1;
        }
    }
    Ok(yes as f64 / rows.len() as f64)
}

struct JudgeHandle {
    client: JudgeClient,
    // kept alive for the mock case; dropping it stops the loopback server
    _server: Option<MockJudgeServer>,
}

fn make_judge(
    cfg: &PipelineConfig,
    corpus: &SyntheticCorpus,
    cache_dir: Option<PathBuf>,
) -> Result<JudgeHandle, CliError> {
    match &cfg.judge {
        JudgeChoice::Mock => {
            let server = MockJudgeServer::start(MockRules::new(corpus.annotations.clone()))?;
            let client = JudgeClient::new(JudgeConfig {
                endpoint: server.url(),
                api_key_env: None,
                model: "mock-judge".into(),
                timeout_secs: 30,
                max_concurrency: 4,
                max_retries: 2,
                backoff_base_ms: 50,
                cache_dir,
            })?;
            Ok(JudgeHandle {
                client,
                _server: Some(server),
            })
        }
        JudgeChoice::Endpoint {
            url,
            model,
            api_key_env,
        } => {
            let client = JudgeClient::new(JudgeConfig {
                endpoint: url.clone(),
                api_key_env: api_key_env.clone(),
                model: model.clone(),
                cache_dir,
                ..JudgeConfig::default()
            })?;
            Ok(JudgeHandle {
                client,
                _server: None,
            })
        }
    }
}

/// Full pipeline with paper-default generation settings. Stages write into
/// `dir` and the manifest records every artifact.
pub fn run_pipeline(cfg: &PipelineConfig, dir: &Path, seed: u64) -> Result<PipelineOutcome, CliError> {
    let _lock = RunLock::acquire(dir)?;
    let mut manifest = RunManifest::load_or_new(dir, seed)?;

    let corpus_art = stage_gen_corpus(dir, &mut manifest, &cfg.corpus, derive_seed(seed, 10))?;
    let corpus = corpus_art.corpus;

    let model = stage_train(
        dir,
        &mut manifest,
        cfg,
        &corpus.train_sentences,
        derive_seed(seed, 20),
        derive_seed(seed, 21),
    )?;

    let sweep = stage_sweep(dir, &mut manifest, cfg, &model, &corpus, seed)?;
    let intervention = sweep.intervention.clone();

    // generation, both conditions, identical derived seeds per row
    let gen_cfg = cfg.gen_config(0);
    let gen_seed = derive_seed(seed, 40);
    let baseline_rows = generate_rows(
        &model.weights,
        &model.vocab,
        &corpus.eval_prompts,
        &gen_cfg,
        cfg.eval_samples_per_prompt,
        None,
        gen_seed,
        "g",
    )?;
    let steered_rows = generate_rows(
        &model.weights,
        &model.vocab,
        &corpus.eval_prompts,
        &gen_cfg,
        cfg.eval_samples_per_prompt,
        Some(&intervention),
        gen_seed,
        "g",
    )?;
    save_jsonl(&dir.join("gen/baseline.jsonl"), &baseline_rows)?;
    save_jsonl(&dir.join("gen/steered.jsonl"), &steered_rows)?;
    manifest.record_stage(
        dir,
        "generate",
        serde_json::json!({
            "gen": gen_cfg,
            "samples_per_prompt": cfg.eval_samples_per_prompt,
            "seed": gen_seed,
        }),
        &["gen/baseline.jsonl", "gen/steered.jsonl"],
    )?;
    manifest.save(dir)?;

    // evaluator 1: bigram counting
    let bigram_base = bigram_counts_csv(dir, "eval/bigram_baseline.csv", &baseline_rows, &corpus.annotations)?;
    let bigram_steer = bigram_counts_csv(dir, "eval/bigram_steered.csv", &steered_rows, &corpus.annotations)?;

    // evaluator 2: judge counts over the wire
    let judge = make_judge(cfg, &corpus, Some(dir.join("eval/judge_cache")))?;
    let judge_base = judge_counts_csv(dir, "eval/judge_baseline.csv", &baseline_rows, &judge.client)?;
    let judge_steer = judge_counts_csv(dir, "eval/judge_steered.csv", &steered_rows, &judge.client)?;

    // evaluator 3: DSL correction of the judge counts with seeded gold
    let gold_base = make_gold(&baseline_rows, &corpus.annotations, cfg.dsl_pi, derive_seed(seed, 50));
    let gold_steer = make_gold(&steered_rows, &corpus.annotations, cfg.dsl_pi, derive_seed(seed, 51));
    write_gold(dir, "eval/gold_baseline.jsonl", &gold_base)?;
    write_gold(dir, "eval/gold_steered.jsonl", &gold_steer)?;
    let dsl_base = dsl_estimate(&judge_base, &gold_base)?;
    let dsl_steer = dsl_estimate(&judge_steer, &gold_steer)?;
    std::fs::write(
        dir.join("eval/dsl_baseline.json"),
        serde_json::to_string_pretty(&dsl_base)?,
    )?;
    std::fs::write(
        dir.join("eval/dsl_steered.json"),
        serde_json::to_string_pretty(&dsl_steer)?,
    )?;

    // effect table
    let counts_of = |v: &[(String, f64)]| v.iter().map(|(_, c)| *c).collect::<Vec<f64>>();
    let effect_bigram = percent_decrease_counts(
        &counts_of(&bigram_base),
        &counts_of(&bigram_steer),
        EffectMethod::Bigram,
        derive_seed(seed, 60),
    )?;
    let effect_judge = percent_decrease_counts(
        &counts_of(&judge_base),
        &counts_of(&judge_steer),
        EffectMethod::Judge,
        derive_seed(seed, 61),
    )?;
    let effect_dsl = percent_decrease_dsl(&dsl_base, &dsl_steer)?;
    report::write_effect_csv(
        &dir.join("eval/effects.csv"),
        &[
            ("synthetic-eval".into(), effect_bigram.clone()),
            ("synthetic-eval".into(), effect_judge.clone()),
            ("synthetic-eval".into(), effect_dsl.clone()),
        ],
    )?;

    // rate table
    let mut all_counts = counts_of(&bigram_base);
    all_counts.extend(counts_of(&bigram_steer));
    let mut keys = vec![("synthetic-eval".to_string(), "baseline".to_string()); bigram_base.len()];
    keys.extend(vec![
        ("synthetic-eval".to_string(), "steered".to_string());
        bigram_steer.len()
    ]);
    let rates = aggregate_rates(&all_counts, &keys, derive_seed(seed, 62))?;
    report::write_rates_csv(&dir.join("eval/rates.csv"), &rates)?;

    // performance preservation: perplexity + match rate
    let benign_tokens: Vec<Vec<u32>> = corpus
        .benign_eval
        .iter()
        .map(|s| model.vocab.encode_with_eos(s))
        .collect();
    let ppl_base = perplexity(&model.weights, &benign_tokens, None)?;
    let ppl_steer = perplexity(&model.weights, &benign_tokens, Some(&intervention))?;
    let match_base = match_rate(&judge.client, &corpus.reference, &baseline_rows)?;
    let match_steer = match_rate(&judge.client, &corpus.reference, &steered_rows)?;

    // token probability deltas on the keywords-style held-out template
    let delta_prompts: Vec<PromptSample> = corpus
        .heldout_prompts
        .iter()
        .filter(|p| p.prompt.contains("keywords"))
        .cloned()
        .collect();
    let delta_prompts = if delta_prompts.is_empty() {
        corpus.eval_prompts.clone()
    } else {
        delta_prompts
    };
    let delta_table = token_prob_delta(
        &model.weights,
        &model.vocab,
        &intervention,
        &delta_prompts,
        cfg.token_delta_top_k,
        cfg.max_new_tokens,
    )?;
    report::write_delta_csv(&dir.join("eval/token_delta.csv"), &delta_table)?;
    report::write_delta_svg(&dir.join("eval/token_delta.svg"), &delta_table)?;

    manifest.record_stage(
        dir,
        "eval",
        serde_json::json!({"dsl_pi": cfg.dsl_pi, "judge": cfg.judge}),
        &[
            "eval/bigram_baseline.csv",
            "eval/bigram_steered.csv",
            "eval/judge_baseline.csv",
            "eval/judge_steered.csv",
            "eval/gold_baseline.jsonl",
            "eval/gold_steered.jsonl",
            "eval/dsl_baseline.json",
            "eval/dsl_steered.json",
            "eval/effects.csv",
            "eval/rates.csv",
            "eval/token_delta.csv",
            "eval/token_delta.svg",
        ],
    )?;

    let mean = |v: &[(String, f64)]| {
        v.iter().map(|(_, c)| *c).sum::<f64>() / v.len().max(1) as f64
    };
    let report = PipelineReport {
        seed,
        selected_hook: sweep.outcome.selected()?.hook.to_string(),
        baseline_mean_mentions: mean(&bigram_base),
        steered_mean_mentions: mean(&bigram_steer),
        effect_bigram,
        effect_judge,
        effect_dsl,
        dsl_baseline: dsl_base,
        dsl_steered: dsl_steer,
        perplexity_baseline: ppl_base,
        perplexity_steered: ppl_steer,
        perplexity_ratio: ppl_steer / ppl_base,
        match_rate_baseline: match_base,
        match_rate_steered: match_steer,
        token_delta_sum: delta_table.full_delta_sum,
        n_eval_generations: baseline_rows.len(),
    };
    std::fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    manifest.record_stage(
        dir,
        "summary",
        serde_json::json!({}),
        &["summary.json"],
    )?;
    manifest.save(dir)?;

    Ok(PipelineOutcome {
        config: cfg.clone(),
        report,
        corpus,
        weights: model.weights,
        vocab: model.vocab,
        sweep: sweep.outcome,
        intervention,
        delta_table,
        dir: dir.to_path_buf(),
    })
}

/// Generalization probe: extract a direction from two groups' contrastive
/// prompts only, then measure the attribute-rate reduction on the held-out
/// (template-disjoint) prompt set restricted to those groups.
pub fn generalization_check(
    outcome: &PipelineOutcome,
    groups: [&str; 2],
    seed: u64,
) -> Result<(f64, f64), CliError> {
    let cfg = &outcome.config;
    let in_groups = |s: &PromptSample| {
        s.label
            .as_deref()
            .map_or(false, |l| groups.contains(&l))
    };
    let sub = ContrastiveDataset::new(
        outcome
            .corpus
            .contrastive
            .standard
            .iter()
            .filter(|s| in_groups(s))
            .cloned()
            .collect(),
        outcome
            .corpus
            .contrastive
            .bias
            .iter()
            .filter(|s| in_groups(s))
            .cloned()
            .collect(),
        outcome.corpus.contrastive.attribute.clone(),
        "generalization-subset",
    )?;
    let sub_corpus = SyntheticCorpus {
        contrastive: sub,
        ..outcome.corpus.clone()
    };
    let extraction = build_extraction_sets(
        &outcome.weights,
        &outcome.vocab,
        &sub_corpus,
        cfg.extraction_reps,
        derive_seed(seed, 70),
    )?;
    let bias_sum = steerlab_core::steering::collect_activations(
        &outcome.weights,
        &outcome.vocab,
        &extraction.bias,
        PositionPolicy::LastPromptToken,
    )?;
    let std_sum = steerlab_core::steering::collect_activations(
        &outcome.weights,
        &outcome.vocab,
        &extraction.standard,
        PositionPolicy::LastPromptToken,
    )?;
    let hook = outcome.sweep.selected()?.hook;
    let direction =
        steerlab_core::steering::estimate_direction(&bias_sum, &std_sum, hook, cfg.alpha)?;
    let intervention = make_intervention(direction, None, InterventionScope::default())?;

    // held-out templates, restricted to the extraction groups
    let heldout: Vec<PromptSample> = outcome
        .corpus
        .heldout_prompts
        .iter()
        .filter(|s| in_groups(s))
        .cloned()
        .collect();
    let wordlist = {
        let spec = &cfg.corpus;
        spec.wordlist_for_groups(&groups)
    };
    let annotations = steerlab_core::eval::AnnotationList::from_targets(wordlist)?;

    let gen_cfg = cfg.gen_config(0);
    let gen_seed = derive_seed(seed, 71);
    let base = generate_rows(
        &outcome.weights,
        &outcome.vocab,
        &heldout,
        &gen_cfg,
        cfg.eval_samples_per_prompt.max(6),
        None,
        gen_seed,
        "gen",
    )?;
    let steer = generate_rows(
        &outcome.weights,
        &outcome.vocab,
        &heldout,
        &gen_cfg,
        cfg.eval_samples_per_prompt.max(6),
        Some(&intervention),
        gen_seed,
        "gen",
    )?;
    let rate = |rows: &[GenRow]| {
        rows.iter()
            .map(|r| count_bigrams(&r.generation, &annotations, CountMode::Lenient).count as f64)
            .sum::<f64>()
            / rows.len() as f64
    };
    Ok((rate(&base), rate(&steer)))
}
