use steerlab_core::corpus::{filter_benign, gen_synthetic_corpus, CorpusSpec};
use steerlab_core::steering::{collect_activations, estimate_direction, extend_with_sampled_answers, ContrastiveDataset, PositionPolicy};
use steerlab_core::tinylm::{build_tokenizer, forward, train, HookPoint, ModelConfig, TrainOptions};
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

    let attr_ids: BTreeSet<u32> = corpus.wordlist.iter().filter_map(|w| vocab.id_of(w)).collect();
    let benign_ids: BTreeSet<u32> = spec.benign_words.iter().filter_map(|w| vocab.id_of(w)).collect();
    let bias_ext = extend_with_sampled_answers(&weights, &vocab, &corpus.contrastive.bias, 40, 7001).unwrap();
    let std_ext = extend_with_sampled_answers(&weights, &vocab, &corpus.contrastive.standard, 40, 7002).unwrap();
    let std_f = filter_benign(&std_ext, &corpus.wordlist);
    let contrastive = ContrastiveDataset::new(std_f, bias_ext, "trait", "ext").unwrap();
    let bias_sum = collect_activations(&weights, &vocab, &contrastive.bias, PositionPolicy::LastPromptToken).unwrap();
    let std_sum = collect_activations(&weights, &vocab, &contrastive.standard, PositionPolicy::LastPromptToken).unwrap();

    let classify = |id: u32| -> &'static str {
        if vocab.marker_ids().contains(&id) { return "marker"; }
        if attr_ids.contains(&id) { return "attr"; }
        if benign_ids.contains(&id) { return "benign_adj"; }
        "structure"
    };
    let benign: Vec<Vec<u32>> = corpus.benign_eval.iter().take(60).map(|s| vocab.encode_with_eos(s)).collect();

    // raw diff norms per hook (before normalization) show where the contrast is strong
    println!("hook | diff_norm | mean |r.u|/|r| by input kind on benign text");
    for hook in HookPoint::all(&config) {
        let mb = bias_sum.mean_at(hook).unwrap();
        let ms = std_sum.mean_at(hook).unwrap();
        let diff_norm = mb.iter().zip(ms).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let dir = estimate_direction(&bias_sum, &std_sum, hook, 1.0).unwrap();
        let u = &dir.u;
        let mut acc: std::collections::BTreeMap<&str, (f64, usize)> = Default::default();
        for seq in &benign {
            let (_, trace) = forward(&weights, seq, None, None, true).unwrap();
            let trace = trace.unwrap();
            for (p, tok) in seq.iter().enumerate() {
                let r = trace.residual(hook, p).unwrap();
                let proj: f64 = r.iter().zip(u).map(|(a, b)| f64::from(*a) * f64::from(*b)).sum();
                let norm: f64 = r.iter().map(|a| f64::from(*a).powi(2)).sum::<f64>().sqrt();
                let e = acc.entry(classify(*tok)).or_insert((0.0, 0));
                e.0 += proj.abs() / norm.max(1e-9);
                e.1 += 1;
            }
        }
        print!("{hook:>12} | {diff_norm:8.4} |");
        for (kind, (sum, n)) in &acc {
            print!(" {kind}={:.3}", sum / *n as f64);
        }
        println!();
    }
}
