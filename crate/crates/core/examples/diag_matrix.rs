use steerlab_core::corpus::{gen_synthetic_corpus, CorpusSpec};
use steerlab_core::eval::{count_bigrams, CountMode};
use steerlab_core::steering::{collect_activations, estimate_direction, make_intervention, InterventionScope, PositionPolicy};
use steerlab_core::tinylm::{build_tokenizer, forward, generate, perplexity, train, GenerationConfig, HookPoint, ModelConfig, TrainOptions};
use std::collections::BTreeSet;

fn main() {
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(900);
    let spec = CorpusSpec::default();
    let corpus = gen_synthetic_corpus(&spec, 42).unwrap();
    let vocab = build_tokenizer(&corpus.train_sentences).unwrap();
    let tokens: Vec<Vec<u32>> = corpus.train_sentences.iter().map(|s| vocab.encode_with_eos(s)).collect();
    let d: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(64);
    let config = ModelConfig { n_layers: 4, d_model: d, n_heads: 4, d_ff: 4 * d, vocab_size: vocab.len(), max_seq: 80, seed: 42 };
    let opts = TrainOptions { steps, batch_size: 16, lr: 1e-3, ..TrainOptions::default() };
    let t0 = std::time::Instant::now();
    let (weights, curve) = train(&config, &opts, &tokens, 43).unwrap();
    println!("=== steps={steps} trained in {:?}, final loss {:.4}", t0.elapsed(), curve.last().unwrap().1);

    let benign: Vec<Vec<u32>> = corpus.benign_eval.iter().map(|s| vocab.encode_with_eos(s)).collect();
    let ppl_base = perplexity(&weights, &benign, None).unwrap();
    let attr_ids: BTreeSet<u32> = corpus.wordlist.iter().filter_map(|w| vocab.id_of(w)).collect();
    let benign_ids: BTreeSet<u32> = spec.benign_words.iter().filter_map(|w| vocab.id_of(w)).collect();
    let classify = |id: u32| -> &'static str {
        if vocab.marker_ids().contains(&id) { "marker" }
        else if attr_ids.contains(&id) { "attr" }
        else if benign_ids.contains(&id) { "benign_adj" }
        else if id == steerlab_core::tinylm::tokenizer::EOS { "eos" }
        else { "structure" }
    };

    let bias_sum = collect_activations(&weights, &vocab, &corpus.contrastive.bias, PositionPolicy::LastPromptToken).unwrap();
    let std_sum = collect_activations(&weights, &vocab, &corpus.contrastive.standard, PositionPolicy::LastPromptToken).unwrap();

    println!("baseline ppl {ppl_base:.3}");
    for hook in HookPoint::all(&config) {
        let dir = match estimate_direction(&bias_sum, &std_sum, hook, 1.0) { Ok(d) => d, Err(e) => { println!("{hook}: {e}"); continue; } };
        let iv = make_intervention(dir, None, InterventionScope::default()).unwrap();
        let ppl_ratio = perplexity(&weights, &benign, Some(&iv)).unwrap() / ppl_base;

        // eval-prompt mention reduction (quick: 3 samples x 9 prompts)
        let mut mb = 0.0; let mut ms = 0.0; let mut n = 0.0;
        for (i, p) in corpus.eval_prompts.iter().enumerate() {
            for s in 0..3u64 {
                let g = GenerationConfig { temperature: 0.75, max_new_tokens: 40, seed: 500 + (i as u64) * 31 + s, batch_size: 1 };
                let rb = generate(&weights, &vocab, p, &g, None, false).unwrap();
                let rs = generate(&weights, &vocab, p, &g, Some(&iv), false).unwrap();
                mb += count_bigrams(&rb.text, &corpus.annotations, CountMode::Lenient).count as f64;
                ms += count_bigrams(&rs.text, &corpus.annotations, CountMode::Lenient).count as f64;
                n += 1.0;
            }
        }
        // structure-CE damage
        let mut base_s = (0.0, 0usize); let mut steer_s = (0.0, 0usize);
        for seq in benign.iter().take(50) {
            let (lb, _) = forward(&weights, seq, None, None, false).unwrap();
            let (ls, _) = forward(&weights, seq, None, Some(&iv), false).unwrap();
            for p in 0..seq.len() - 1 {
                if classify(seq[p + 1]) == "structure" || classify(seq[p+1]) == "eos" {
                    base_s.0 += -steerlab_core::tinylm::math::log_softmax_at(&lb[p], seq[p+1] as usize);
                    base_s.1 += 1;
                    steer_s.0 += -steerlab_core::tinylm::math::log_softmax_at(&ls[p], seq[p+1] as usize);
                    steer_s.1 += 1;
                }
            }
        }
        println!("{hook:>12}: ppl_ratio {ppl_ratio:.3} | eval mentions {:.3} -> {:.3} ({:+.0}%) | struct CE {:.3} -> {:.3}",
            mb / n, ms / n, (ms - mb) / mb * 100.0, base_s.0 / base_s.1 as f64, steer_s.0 / steer_s.1 as f64);
    }
}
