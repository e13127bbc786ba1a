use std::time::Instant;
use steerlab_core::corpus::{gen_synthetic_corpus, CorpusSpec};
use steerlab_core::eval::{count_bigrams, CountMode};
use steerlab_core::steering::{sweep_layers, InterventionScope, PositionPolicy, SweepConfig, make_intervention};
use steerlab_core::tinylm::{build_tokenizer, generate, perplexity, train, GenerationConfig, ModelConfig, TrainOptions};

fn main() {
    let t0 = Instant::now();
    let spec = CorpusSpec::default();
    let corpus = gen_synthetic_corpus(&spec, 42).unwrap();
    let vocab = build_tokenizer(&corpus.train_sentences).unwrap();
    println!("corpus {} sentences, vocab {} ({:?})", corpus.train_sentences.len(), vocab.len(), t0.elapsed());

    let tokens: Vec<Vec<u32>> = corpus.train_sentences.iter().map(|s| vocab.encode_with_eos(s)).collect();
    let max_len = tokens.iter().map(Vec::len).max().unwrap();
    println!("max train len {max_len}");

    let config = ModelConfig { n_layers: 4, d_model: 64, n_heads: 4, d_ff: 256, vocab_size: vocab.len(), max_seq: 80, seed: 42 };
    let steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(800usize);
    let opts = TrainOptions { steps, batch_size: 16, lr: 1e-3, ..TrainOptions::default() };
    let t1 = Instant::now();
    let (weights, curve) = train(&config, &opts, &tokens, 43).unwrap();
    println!("train {} steps in {:?}; loss {:.3} -> {:.3}", steps, t1.elapsed(), curve[0].1, curve.last().unwrap().1);

    let benign: Vec<Vec<u32>> = corpus.benign_eval.iter().map(|s| vocab.encode_with_eos(s)).collect();
    let ppl_base = perplexity(&weights, &benign, None).unwrap();
    println!("benign ppl baseline {ppl_base:.3}");

    // sample a couple of unsteered generations
    let gen = GenerationConfig { temperature: 0.75, max_new_tokens: 40, seed: 7, batch_size: 3 };
    for p in corpus.eval_prompts.iter().take(2) {
        let r = generate(&weights, &vocab, p, &gen, None, false).unwrap();
        println!("  [{}] {} -> {}", p.marker.as_deref().unwrap_or(""), p.prompt, r.text);
    }

    // extraction-time one-token continuations
    use steerlab_core::steering::extend_with_sampled_answers;
    use steerlab_core::corpus::filter_benign;
    use steerlab_core::steering::ContrastiveDataset;
    let bias_ext = extend_with_sampled_answers(&weights, &vocab, &corpus.contrastive.bias, 40, 7001).unwrap();
    let std_ext = extend_with_sampled_answers(&weights, &vocab, &corpus.contrastive.standard, 40, 7002).unwrap();
    let std_f = filter_benign(&std_ext, &corpus.wordlist);
    println!("extraction: {} bias, {} standard ({} after benign filter)", bias_ext.len(), std_ext.len(), std_f.len());
    println!("  bias sample: {:?}", bias_ext[0].prompt);
    println!("  std sample: {:?}", std_f[0].prompt);
    let contrastive = ContrastiveDataset::new(std_f, bias_ext, "trait", "synthetic-ext").unwrap();
    let t2 = Instant::now();
    let sweep_cfg = SweepConfig { gen: GenerationConfig { temperature: 0.75, max_new_tokens: 40, seed: 0, batch_size: 3 }, seed: 99, include_attn_hooks: true, include_embed_hook: true, ..SweepConfig::default() };
    let outcome = match sweep_layers(&weights, &vocab, &contrastive, &corpus.heldout_prompts, &benign, &corpus.annotations, &sweep_cfg) {
        Ok(o) => o,
        Err(e) => {
            println!("sweep failed: {e}; dumping per-hook diagnostics");
            use steerlab_core::steering::{collect_activations, estimate_direction};
            use steerlab_core::tinylm::HookPoint;
            let bias = collect_activations(&weights, &vocab, &contrastive.bias, PositionPolicy::LastPromptToken).unwrap();
            let std_ = collect_activations(&weights, &vocab, &contrastive.standard, PositionPolicy::LastPromptToken).unwrap();
            for hook in HookPoint::all(&config) {
                match estimate_direction(&bias, &std_, hook, 1.0) {
                    Ok(dir) => {
                        let iv = make_intervention(dir, None, InterventionScope::default()).unwrap();
                        let pr = perplexity(&weights, &benign, Some(&iv)).unwrap() / ppl_base;
                        println!("  {hook}: ppl ratio {pr:.4}");
                    }
                    Err(e) => println!("  {hook}: {e}"),
                }
            }
            return;
        }
    };
    println!("sweep in {:?}; baseline heldout rate {:.3}", t2.elapsed(), outcome.baseline_attr_rate);
    for c in &outcome.candidates {
        println!("  {} rate {:.3} pplratio {:.3} dq={} sel={}", c.hook, c.attr_rate, c.perplexity_ratio, c.disqualified, c.selected);
    }

    // eval: baseline vs steered on eval prompts
    let sel = outcome.selected().unwrap();
    let iv = make_intervention(sel.direction.clone(), None, InterventionScope::default()).unwrap();
    let mut base_counts = Vec::new();
    let mut steer_counts = Vec::new();
    let t3 = Instant::now();
    for (i, p) in corpus.eval_prompts.iter().enumerate() {
        for s in 0..6 {
            let g = GenerationConfig { temperature: 0.75, max_new_tokens: 40, seed: (1000 + i * 31 + s) as u64, batch_size: 1 };
            let rb = generate(&weights, &vocab, p, &g, None, false).unwrap();
            let rs = generate(&weights, &vocab, p, &g, Some(&iv), false).unwrap();
            base_counts.push(count_bigrams(&rb.text, &corpus.annotations, CountMode::Lenient).count as f64);
            steer_counts.push(count_bigrams(&rs.text, &corpus.annotations, CountMode::Lenient).count as f64);
            if i == 0 && s == 0 {
                println!("  base: {}", rb.text);
                println!("  steer: {}", rs.text);
            }
        }
    }
    let mb: f64 = base_counts.iter().sum::<f64>() / base_counts.len() as f64;
    let ms: f64 = steer_counts.iter().sum::<f64>() / steer_counts.len() as f64;
    let ppl_steer = perplexity(&weights, &benign, Some(&iv)).unwrap();
    println!("eval in {:?}: base mean {:.3}, steered mean {:.3}, change {:+.1}%", t3.elapsed(), mb, ms, (ms - mb) / mb * 100.0);
    println!("ppl ratio {:.4}", ppl_steer / ppl_base);
    println!("total {:?}", t0.elapsed());
    let _ = PositionPolicy::LastPromptToken;
}
