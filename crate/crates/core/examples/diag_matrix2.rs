use steerlab_core::corpus::{filter_benign, gen_synthetic_corpus, CorpusSpec};
use steerlab_core::eval::{count_bigrams, CountMode};
use steerlab_core::steering::{collect_activations, estimate_direction, extend_with_sampled_answers, make_intervention, ContrastiveDataset, InterventionScope, PositionPolicy};
use steerlab_core::tinylm::{build_tokenizer, generate, perplexity, train, GenerationConfig, HookPoint, ModelConfig, TrainOptions};

fn main() {
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2200);
    let d: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(96);
    let spec = CorpusSpec::default();
    let corpus = gen_synthetic_corpus(&spec, 42).unwrap();
    let vocab = build_tokenizer(&corpus.train_sentences).unwrap();
    let tokens: Vec<Vec<u32>> = corpus.train_sentences.iter().map(|s| vocab.encode_with_eos(s)).collect();
    let config = ModelConfig { n_layers: 4, d_model: d, n_heads: 4, d_ff: 4 * d, vocab_size: vocab.len(), max_seq: 80, seed: 42 };
    let opts = TrainOptions { steps, batch_size: 16, lr: 1e-3, ..TrainOptions::default() };
    let t0 = std::time::Instant::now();
    let (weights, curve) = train(&config, &opts, &tokens, 43).unwrap();
    println!("=== d={d} steps={steps} in {:?}, loss {:.4}", t0.elapsed(), curve.last().unwrap().1);

    let benign: Vec<Vec<u32>> = corpus.benign_eval.iter().map(|s| vocab.encode_with_eos(s)).collect();
    let ppl_base = perplexity(&weights, &benign, None).unwrap();
    println!("baseline ppl {ppl_base:.3}");

    let bias_ext = extend_with_sampled_answers(&weights, &vocab, &corpus.contrastive.bias, 40, 7001).unwrap();
    let std_ext0 = extend_with_sampled_answers(&weights, &vocab, &corpus.contrastive.standard, 40, 7002).unwrap();
    let std_ext = filter_benign(&std_ext0, &corpus.wordlist);

    for mode in ["raw", "ext", "mixed"] {
        let (bias_set, std_set): (Vec<_>, Vec<_>) = match mode {
            "raw" => (corpus.contrastive.bias.clone(), corpus.contrastive.standard.clone()),
            "ext" => (bias_ext.clone(), std_ext.clone()),
            _ => {
                let mut b = bias_ext.clone(); b.extend(corpus.contrastive.bias.clone());
                let mut s = std_ext.clone(); s.extend(corpus.contrastive.standard.clone());
                (b, s)
            }
        };
        let contrastive = ContrastiveDataset::new(std_set, bias_set, "trait", mode).unwrap();
        let bias_sum = collect_activations(&weights, &vocab, &contrastive.bias, PositionPolicy::LastPromptToken).unwrap();
        let std_sum = collect_activations(&weights, &vocab, &contrastive.standard, PositionPolicy::LastPromptToken).unwrap();
        println!("--- extraction mode {mode}");
        for hook in [HookPoint::PostAttn(2), HookPoint::PostMlp(2), HookPoint::PostAttn(3), HookPoint::PostMlp(3)] {
            let dir = match estimate_direction(&bias_sum, &std_sum, hook, 1.0) { Ok(dd) => dd, Err(e) => { println!("{hook}: {e}"); continue } };
            let iv = make_intervention(dir, None, InterventionScope::default()).unwrap();
            let ppl_ratio = perplexity(&weights, &benign, Some(&iv)).unwrap() / ppl_base;
            let mut mb = 0.0; let mut ms = 0.0; let mut n = 0.0;
            for (i, p) in corpus.eval_prompts.iter().enumerate() {
                for s in 0..5u64 {
                    let g = GenerationConfig { temperature: 0.75, max_new_tokens: 40, seed: 900 + (i as u64) * 97 + s, batch_size: 1 };
                    let rb = generate(&weights, &vocab, p, &g, None, false).unwrap();
                    let rs = generate(&weights, &vocab, p, &g, Some(&iv), false).unwrap();
                    mb += count_bigrams(&rb.text, &corpus.annotations, CountMode::Lenient).count as f64;
                    ms += count_bigrams(&rs.text, &corpus.annotations, CountMode::Lenient).count as f64;
                    n += 1.0;
                }
            }
            println!("{hook:>12}: ppl_ratio {ppl_ratio:.3} | eval mentions {:.3} -> {:.3} ({:+.0}%)", mb / n, ms / n, (ms - mb) / mb * 100.0);
        }
    }
}
