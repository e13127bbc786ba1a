use steerlab_core::corpus::{filter_benign, gen_synthetic_corpus, CorpusSpec, PromptSample};
use steerlab_core::steering::{collect_activations, estimate_direction, extend_with_sampled_answers, make_intervention, ContrastiveDataset, InterventionScope, PositionPolicy};
use steerlab_core::tinylm::{build_tokenizer, forward, tokenizer::tokenize_words, train, HookPoint, ModelConfig, TrainOptions};
use steerlab_core::steering::sample_prefix;
use steerlab_core::tinylm::math::softmax;
use std::collections::BTreeSet;

fn main() {
    let spec = CorpusSpec::default();
    let corpus = gen_synthetic_corpus(&spec, 42).unwrap();
    let vocab = build_tokenizer(&corpus.train_sentences).unwrap();
    let tokens: Vec<Vec<u32>> = corpus.train_sentences.iter().map(|s| vocab.encode_with_eos(s)).collect();
    let config = ModelConfig { n_layers: 4, d_model: 64, n_heads: 4, d_ff: 256, vocab_size: vocab.len(), max_seq: 80, seed: 42 };
    let steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(900usize);
    let opts = TrainOptions { steps, batch_size: 16, lr: 1e-3, ..TrainOptions::default() };
    let (weights, _) = train(&config, &opts, &tokens, 43).unwrap();
    println!("trained {steps} steps");

    let attr_ids: BTreeSet<u32> = corpus.wordlist.iter().filter_map(|w| vocab.id_of(w)).collect();
    let benign_ids: BTreeSet<u32> = spec.benign_words.iter().filter_map(|w| vocab.id_of(w)).collect();

    // P(attr) at first answer position for each question type x group
    let mut show = |prompt: &str, marker: &str| {
        let s = PromptSample::with_marker(prompt, marker);
        let prefix = sample_prefix(&weights, &vocab, &s).unwrap();
        let ids = vocab.encode(prompt);
        let (logits, _) = forward(&weights, &ids, prefix.as_deref(), None, false).unwrap();
        let probs = softmax(logits.last().unwrap());
        let p_attr: f64 = attr_ids.iter().map(|id| probs[*id as usize]).sum();
        let p_benign: f64 = benign_ids.iter().map(|id| probs[*id as usize]).sum();
        let top = probs.iter().enumerate().max_by(|a, b| a.1.partial_cmp(b.1).unwrap()).unwrap();
        println!("  [{marker}] {prompt:55} P(attr)={p_attr:.3} P(benign)={p_benign:.3} top={} ({:.2})", vocab.token_of(top.0 as u32).unwrap(), top.1);
    };
    for g in &spec.groups {
        show(&spec.bias_templates[0], &g.marker);
        show(&spec.standard_templates[0], &g.marker);
        show(&spec.templates[0], &g.marker);
    }

    // extraction + per-token-type benign CE breakdown for each hook
    let bias_ext = extend_with_sampled_answers(&weights, &vocab, &corpus.contrastive.bias, 40, 7001).unwrap();
    let std_ext = extend_with_sampled_answers(&weights, &vocab, &corpus.contrastive.standard, 40, 7002).unwrap();
    let std_f = filter_benign(&std_ext, &corpus.wordlist);
    let contrastive = ContrastiveDataset::new(std_f, bias_ext, "trait", "ext").unwrap();
    let bias_sum = collect_activations(&weights, &vocab, &contrastive.bias, PositionPolicy::LastPromptToken).unwrap();
    let std_sum = collect_activations(&weights, &vocab, &contrastive.standard, PositionPolicy::LastPromptToken).unwrap();

    let benign: Vec<Vec<u32>> = corpus.benign_eval.iter().map(|s| vocab.encode_with_eos(s)).collect();
    let classify = |id: u32| -> &'static str {
        if vocab.marker_ids().contains(&id) { return "marker"; }
        if attr_ids.contains(&id) { return "attr"; }
        if benign_ids.contains(&id) { return "benign_adj"; }
        if id == steerlab_core::tinylm::tokenizer::EOS { return "eos"; }
        "structure"
    };
    for hook in [HookPoint::EmbedOut, HookPoint::PostMlp(1), HookPoint::PostMlp(3)] {
        let dir = estimate_direction(&bias_sum, &std_sum, hook, 1.0).unwrap();
        let iv = make_intervention(dir, None, InterventionScope::default()).unwrap();
        let mut base_ce: std::collections::BTreeMap<&str, (f64, usize)> = Default::default();
        let mut steer_ce: std::collections::BTreeMap<&str, (f64, usize)> = Default::default();
        for seq in &benign {
            let (lb, _) = forward(&weights, seq, None, None, false).unwrap();
            let (ls, _) = forward(&weights, seq, None, Some(&iv), false).unwrap();
            for p in 0..seq.len() - 1 {
                let t = seq[p + 1];
                let kind = classify(t);
                let ce_b = -steerlab_core::tinylm::math::log_softmax_at(&lb[p], t as usize);
                let ce_s = -steerlab_core::tinylm::math::log_softmax_at(&ls[p], t as usize);
                let eb = base_ce.entry(kind).or_insert((0.0, 0)); eb.0 += ce_b; eb.1 += 1;
                let es = steer_ce.entry(kind).or_insert((0.0, 0)); es.0 += ce_s; es.1 += 1;
            }
        }
        println!("hook {hook}:");
        for (kind, (sb, n)) in &base_ce {
            let (ss, _) = steer_ce[kind];
            println!("  {kind:>10}: base CE {:.4} steered CE {:.4} (n={n})", sb / *n as f64, ss / *n as f64);
        }
    }
    let _ = tokenize_words("x");
}
