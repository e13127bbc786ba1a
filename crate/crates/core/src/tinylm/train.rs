//! Cross-entropy training: hand-rolled backward pass, Adam with gradient
//! clipping, and a deterministic training loop.
//!
//! The forward/backward pair is generic over the storage scalar. Production
//! runs it at `f32` (matching the inference path bit-for-bit); the `_f64`
//! entry points run the identical code at full 64-bit precision, which is
//! what finite-difference gradient verification needs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

use super::math::{
    self, dot, matvec, matvec_t_acc, outer_acc, rmsnorm, rmsnorm_backward, silu, silu_deriv,
    Scalar,
};
use super::{ModelConfig, Weights};

/// Weights-shaped gradient accumulator in 64-bit.
#[derive(Debug, Clone)]
pub struct Grads {
    pub wte: Vec<f64>,
    pub layers: Vec<LayerGrads>,
    pub lnf_g: Vec<f64>,
    pub wun: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub ln1_g: Vec<f64>,
    pub wq: Vec<f64>,
    pub wk: Vec<f64>,
    pub wv: Vec<f64>,
    pub wo: Vec<f64>,
    pub ln2_g: Vec<f64>,
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
}

impl Grads {
    pub fn zeros(config: &ModelConfig) -> Self {
        let d = config.d_model;
        Self {
            wte: vec![0.0; config.vocab_size * d],
            layers: (0..config.n_layers)
                .map(|_| LayerGrads {
                    ln1_g: vec![0.0; d],
                    wq: vec![0.0; d * d],
                    wk: vec![0.0; d * d],
                    wv: vec![0.0; d * d],
                    wo: vec![0.0; d * d],
                    ln2_g: vec![0.0; d],
                    w1: vec![0.0; config.d_ff * d],
                    w2: vec![0.0; d * config.d_ff],
                })
                .collect(),
            lnf_g: vec![0.0; d],
            wun: vec![0.0; config.vocab_size * d],
        }
    }

    /// Blocks in the same order as [`Weights::blocks`].
    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = vec![&self.wte];
        for l in &self.layers {
            v.push(&l.ln1_g);
            v.push(&l.wq);
            v.push(&l.wk);
            v.push(&l.wv);
            v.push(&l.wo);
            v.push(&l.ln2_g);
            v.push(&l.w1);
            v.push(&l.w2);
        }
        v.push(&self.lnf_g);
        v.push(&self.wun);
        v
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut v: Vec<&mut Vec<f64>> = vec![&mut self.wte];
        for l in &mut self.layers {
            v.push(&mut l.ln1_g);
            v.push(&mut l.wq);
            v.push(&mut l.wk);
            v.push(&mut l.wv);
            v.push(&mut l.wo);
            v.push(&mut l.ln2_g);
            v.push(&mut l.w1);
            v.push(&mut l.w2);
        }
        v.push(&mut self.lnf_g);
        v.push(&mut self.wun);
        v
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.blocks_mut().into_iter().zip(other.blocks()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.blocks()
            .iter()
            .flat_map(|b| b.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for block in self.blocks_mut() {
            for v in block.iter_mut() {
                *v *= factor;
            }
        }
    }
}

/// Parameter blocks converted to the working scalar.
struct WeightsView<T> {
    config: ModelConfig,
    wte: Vec<T>,
    layers: Vec<LayerView<T>>,
    lnf_g: Vec<T>,
    wun: Vec<T>,
}

struct LayerView<T> {
    ln1_g: Vec<T>,
    wq: Vec<T>,
    wk: Vec<T>,
    wv: Vec<T>,
    wo: Vec<T>,
    ln2_g: Vec<T>,
    w1: Vec<T>,
    w2: Vec<T>,
}

impl<T: Scalar> WeightsView<T> {
    fn from_weights(w: &Weights) -> Self {
        let conv = |v: &[f32]| v.iter().map(|x| T::from_f64(f64::from(*x))).collect();
        Self {
            config: w.config.clone(),
            wte: conv(&w.wte),
            layers: w
                .layers
                .iter()
                .map(|l| LayerView {
                    ln1_g: conv(&l.ln1_g),
                    wq: conv(&l.wq),
                    wk: conv(&l.wk),
                    wv: conv(&l.wv),
                    wo: conv(&l.wo),
                    ln2_g: conv(&l.ln2_g),
                    w1: conv(&l.w1),
                    w2: conv(&l.w2),
                })
                .collect(),
            lnf_g: conv(&w.lnf_g),
            wun: conv(&w.wun),
        }
    }

    fn embedding_row(&self, token: u32) -> &[T] {
        let d = self.config.d_model;
        let i = token as usize;
        &self.wte[i * d..(i + 1) * d]
    }
}

struct LayerCache<T> {
    normed1: Vec<Vec<T>>,
    inv1: Vec<f64>,
    q: Vec<Vec<T>>,
    k: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    /// `[pos][head] -> attention weights over 0..=pos`
    attn: Vec<Vec<Vec<f64>>>,
    concat: Vec<Vec<T>>,
    r_attn: Vec<Vec<T>>,
    normed2: Vec<Vec<T>>,
    inv2: Vec<f64>,
    pre: Vec<Vec<T>>,
    act: Vec<Vec<T>>,
    r_mlp: Vec<Vec<T>>,
}

struct SeqCache<T> {
    r_embed: Vec<Vec<T>>,
    layers: Vec<LayerCache<T>>,
    normed_f: Vec<Vec<T>>,
    inv_f: Vec<f64>,
    logits: Vec<Vec<T>>,
}

/// Full-sequence forward that mirrors the inference path operation-for-
/// operation (same primitives, same accumulation order) while keeping every
/// intermediate needed by the backward pass.
fn forward_cached<T: Scalar>(w: &WeightsView<T>, pe: &[Vec<T>], tokens: &[u32]) -> SeqCache<T> {
    let cfg = &w.config;
    let (d, dh, n_heads) = (cfg.d_model, cfg.head_dim(), cfg.n_heads);
    let scale = 1.0 / (dh as f64).sqrt();
    let len = tokens.len();

    let mut r_embed = Vec::with_capacity(len);
    for (p, t) in tokens.iter().enumerate() {
        let mut x = w.embedding_row(*t).to_vec();
        for (xi, pi) in x.iter_mut().zip(&pe[p]) {
            *xi = T::from_f64(xi.to_f64() + pi.to_f64());
        }
        r_embed.push(x);
    }

    let mut resid = r_embed.clone();
    let mut layers = Vec::with_capacity(cfg.n_layers);
    for lw in &w.layers {
        let mut lc = LayerCache {
            normed1: Vec::with_capacity(len),
            inv1: Vec::with_capacity(len),
            q: Vec::with_capacity(len),
            k: Vec::with_capacity(len),
            v: Vec::with_capacity(len),
            attn: Vec::with_capacity(len),
            concat: Vec::with_capacity(len),
            r_attn: Vec::with_capacity(len),
            normed2: Vec::with_capacity(len),
            inv2: Vec::with_capacity(len),
            pre: Vec::with_capacity(len),
            act: Vec::with_capacity(len),
            r_mlp: Vec::with_capacity(len),
        };
        for p in 0..len {
            let (normed, inv) = rmsnorm(&resid[p], &lw.ln1_g);
            lc.q.push(matvec(&lw.wq, &normed, d, d));
            lc.k.push(matvec(&lw.wk, &normed, d, d));
            lc.v.push(matvec(&lw.wv, &normed, d, d));
            lc.normed1.push(normed);
            lc.inv1.push(inv);

            let mut concat = vec![T::from_f64(0.0); d];
            let mut attn_p = Vec::with_capacity(n_heads);
            for h in 0..n_heads {
                let hs = h * dh;
                let qh = &lc.q[p][hs..hs + dh];
                let mut scores = Vec::with_capacity(p + 1);
                for j in 0..=p {
                    scores.push(T::from_f64(dot(qh, &lc.k[j][hs..hs + dh]) * scale));
                }
                let attn = math::softmax(&scores);
                for (t, slot) in concat[hs..hs + dh].iter_mut().enumerate() {
                    let mut acc = 0.0f64;
                    for (j, a) in attn.iter().enumerate() {
                        acc += a * lc.v[j][hs + t].to_f64();
                    }
                    *slot = T::from_f64(acc);
                }
                attn_p.push(attn);
            }
            let attn_out = matvec(&lw.wo, &concat, d, d);
            lc.concat.push(concat);
            lc.attn.push(attn_p);
            for (ri, oi) in resid[p].iter_mut().zip(&attn_out) {
                *ri = T::from_f64(ri.to_f64() + oi.to_f64());
            }
            lc.r_attn.push(resid[p].clone());

            let (normed2, inv2) = rmsnorm(&resid[p], &lw.ln2_g);
            let pre = matvec(&lw.w1, &normed2, cfg.d_ff, d);
            let act: Vec<T> = pre.iter().map(|v| silu(*v)).collect();
            let ff = matvec(&lw.w2, &act, d, cfg.d_ff);
            lc.normed2.push(normed2);
            lc.inv2.push(inv2);
            lc.pre.push(pre);
            lc.act.push(act);
            for (ri, fi) in resid[p].iter_mut().zip(&ff) {
                *ri = T::from_f64(ri.to_f64() + fi.to_f64());
            }
            lc.r_mlp.push(resid[p].clone());
        }
        layers.push(lc);
    }

    let mut normed_f = Vec::with_capacity(len);
    let mut inv_f = Vec::with_capacity(len);
    let mut logits = Vec::with_capacity(len);
    for r in &resid {
        let (nf, inv) = rmsnorm(r, &w.lnf_g);
        logits.push(matvec(&w.wun, &nf, cfg.vocab_size, d));
        normed_f.push(nf);
        inv_f.push(inv);
    }

    SeqCache {
        r_embed,
        layers,
        normed_f,
        inv_f,
        logits,
    }
}

/// Backward pass for one sequence. `scale` is the per-prediction loss weight
/// (1 / total predictions in the batch). Returns the summed cross-entropy.
fn backward_seq<T: Scalar>(
    w: &WeightsView<T>,
    cache: &SeqCache<T>,
    tokens: &[u32],
    scale: f64,
    g: &mut Grads,
) -> f64 {
    let cfg = &w.config;
    let (d, dh, n_heads, n_ff, vocab) =
        (cfg.d_model, cfg.head_dim(), cfg.n_heads, cfg.d_ff, cfg.vocab_size);
    let attn_scale = 1.0 / (dh as f64).sqrt();
    let len = tokens.len();
    // position len-1 predicts nothing; no gradient ever reaches it
    let n_active = len - 1;

    let mut ce_sum = 0.0f64;
    let mut dresid: Vec<Vec<f64>> = vec![vec![0.0; d]; n_active];

    let last = cfg.n_layers - 1;
    for p in 0..n_active {
        let target = tokens[p + 1] as usize;
        ce_sum -= math::log_softmax_at(&cache.logits[p], target);
        let mut dlogits = math::softmax(&cache.logits[p]);
        dlogits[target] -= 1.0;
        for v in &mut dlogits {
            *v *= scale;
        }
        outer_acc(&mut g.wun, &dlogits, &cache.normed_f[p], vocab, d);
        let mut dnf = vec![0.0f64; d];
        matvec_t_acc(&mut dnf, &w.wun, &dlogits, vocab, d);
        let dx = rmsnorm_backward(
            &dnf,
            &cache.layers[last].r_mlp[p],
            &w.lnf_g,
            cache.inv_f[p],
            &mut g.lnf_g,
        );
        for (a, b) in dresid[p].iter_mut().zip(&dx) {
            *a += *b;
        }
    }

    for l in (0..cfg.n_layers).rev() {
        let lw = &w.layers[l];
        let lc = &cache.layers[l];
        let lg = &mut g.layers[l];

        // MLP branch
        for p in 0..n_active {
            let dff = dresid[p].clone();
            outer_acc(&mut lg.w2, &dff, &lc.act[p], d, n_ff);
            let mut dact = vec![0.0f64; n_ff];
            matvec_t_acc(&mut dact, &lw.w2, &dff, d, n_ff);
            let dpre: Vec<f64> = dact
                .iter()
                .zip(&lc.pre[p])
                .map(|(da, pre)| da * silu_deriv(*pre))
                .collect();
            outer_acc(&mut lg.w1, &dpre, &lc.normed2[p], n_ff, d);
            let mut dn2 = vec![0.0f64; d];
            matvec_t_acc(&mut dn2, &lw.w1, &dpre, n_ff, d);
            let dx = rmsnorm_backward(&dn2, &lc.r_attn[p], &lw.ln2_g, lc.inv2[p], &mut lg.ln2_g);
            for (a, b) in dresid[p].iter_mut().zip(&dx) {
                *a += *b;
            }
        }

        // attention branch
        let mut dconcat: Vec<Vec<f64>> = vec![vec![0.0; d]; n_active];
        for p in 0..n_active {
            outer_acc(&mut lg.wo, &dresid[p], &lc.concat[p], d, d);
            matvec_t_acc(&mut dconcat[p], &lw.wo, &dresid[p], d, d);
        }
        let mut dq = vec![vec![0.0f64; d]; n_active];
        let mut dk = vec![vec![0.0f64; d]; n_active];
        let mut dv = vec![vec![0.0f64; d]; n_active];
        for h in 0..n_heads {
            let hs = h * dh;
            for p in 0..n_active {
                let dout = &dconcat[p][hs..hs + dh];
                let attn = &lc.attn[p][h];
                let mut da = vec![0.0f64; p + 1];
                for j in 0..=p {
                    let vj = &lc.v[j][hs..hs + dh];
                    let mut acc = 0.0f64;
                    for t in 0..dh {
                        acc += dout[t] * vj[t].to_f64();
                        dv[j][hs + t] += attn[j] * dout[t];
                    }
                    da[j] = acc;
                }
                let s: f64 = attn.iter().zip(&da).map(|(a, d)| a * d).sum();
                for j in 0..=p {
                    let ds = attn[j] * (da[j] - s);
                    let kj = &lc.k[j][hs..hs + dh];
                    let qp = &lc.q[p][hs..hs + dh];
                    for t in 0..dh {
                        dq[p][hs + t] += ds * kj[t].to_f64() * attn_scale;
                        dk[j][hs + t] += ds * qp[t].to_f64() * attn_scale;
                    }
                }
            }
        }
        for p in 0..n_active {
            outer_acc(&mut lg.wq, &dq[p], &lc.normed1[p], d, d);
            outer_acc(&mut lg.wk, &dk[p], &lc.normed1[p], d, d);
            outer_acc(&mut lg.wv, &dv[p], &lc.normed1[p], d, d);
            let mut dn1 = vec![0.0f64; d];
            matvec_t_acc(&mut dn1, &lw.wq, &dq[p], d, d);
            matvec_t_acc(&mut dn1, &lw.wk, &dk[p], d, d);
            matvec_t_acc(&mut dn1, &lw.wv, &dv[p], d, d);
            let r_in = if l == 0 {
                &cache.r_embed[p]
            } else {
                &cache.layers[l - 1].r_mlp[p]
            };
            let dx = rmsnorm_backward(&dn1, r_in, &lw.ln1_g, lc.inv1[p], &mut lg.ln1_g);
            for (a, b) in dresid[p].iter_mut().zip(&dx) {
                *a += *b;
            }
        }
    }

    for p in 0..n_active {
        let row = &mut g.wte[tokens[p] as usize * d..(tokens[p] as usize + 1) * d];
        for (slot, v) in row.iter_mut().zip(&dresid[p]) {
            *slot += *v;
        }
    }

    ce_sum
}

fn validate_batch(config: &ModelConfig, batch: &[Vec<u32>]) -> Result<usize> {
    if batch.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut n_total = 0usize;
    for seq in batch {
        if seq.len() < 2 {
            return Err(Error::DegenerateSequence(seq.len()));
        }
        if seq.len() > config.max_seq {
            return Err(Error::SequenceTooLong {
                len: seq.len(),
                max_seq: config.max_seq,
            });
        }
        if seq.iter().any(|t| (*t as usize) >= config.vocab_size) {
            return Err(Error::ShapeError("token id out of vocabulary range".into()));
        }
        n_total += seq.len() - 1;
    }
    Ok(n_total)
}

fn loss_and_grads_impl<T: Scalar>(weights: &Weights, batch: &[Vec<u32>]) -> Result<(f64, Grads)> {
    let n_total = validate_batch(&weights.config, batch)?;
    let scale = 1.0 / n_total as f64;
    let view = WeightsView::<T>::from_weights(weights);
    let pe = math::position_table::<T>(weights.config.max_seq, weights.config.d_model);

    let per_seq: Vec<(f64, Grads)> = batch
        .par_iter()
        .map(|seq| {
            let cache = forward_cached(&view, &pe, seq);
            let mut grads = Grads::zeros(&weights.config);
            let ce = backward_seq(&view, &cache, seq, scale, &mut grads);
            (ce, grads)
        })
        .collect();

    let mut total = Grads::zeros(&weights.config);
    let mut ce_sum = 0.0f64;
    for (ce, g) in &per_seq {
        ce_sum += ce;
        total.add_assign(g);
    }
    Ok((ce_sum * scale, total))
}

fn batch_loss_impl<T: Scalar>(weights: &Weights, batch: &[Vec<u32>]) -> Result<f64> {
    let n_total = validate_batch(&weights.config, batch)?;
    let view = WeightsView::<T>::from_weights(weights);
    let pe = math::position_table::<T>(weights.config.max_seq, weights.config.d_model);
    let mut ce_sum = 0.0f64;
    for seq in batch {
        let cache = forward_cached(&view, &pe, seq);
        for p in 0..seq.len() - 1 {
            ce_sum -= math::log_softmax_at(&cache.logits[p], seq[p + 1] as usize);
        }
    }
    Ok(ce_sum / n_total as f64)
}

/// Mean next-token cross-entropy and its gradient over a batch, on the
/// production `f32` activation path.
///
/// Sequences run in parallel; per-sequence gradients are summed in batch
/// order so the result is deterministic.
pub fn loss_and_grads(weights: &Weights, batch: &[Vec<u32>]) -> Result<(f64, Grads)> {
    loss_and_grads_impl::<f32>(weights, batch)
}

/// Loss only (no gradients) on the production path.
pub fn batch_loss(weights: &Weights, batch: &[Vec<u32>]) -> Result<f64> {
    batch_loss_impl::<f32>(weights, batch)
}

/// Same computation with 64-bit activations throughout: the reference path
/// for finite-difference gradient verification, where `f32` rounding would
/// otherwise dominate small central differences.
pub fn loss_and_grads_f64(weights: &Weights, batch: &[Vec<u32>]) -> Result<(f64, Grads)> {
    loss_and_grads_impl::<f64>(weights, batch)
}

/// Loss only on the 64-bit reference path.
pub fn batch_loss_f64(weights: &Weights, batch: &[Vec<u32>]) -> Result<f64> {
    batch_loss_impl::<f64>(weights, batch)
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            steps: 1500,
            batch_size: 16,
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 1.0,
        }
    }
}

impl TrainOptions {
    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 {
            return Err(Error::InvalidConfig("learning rate must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Adam with bias correction and global-norm clipping. Deterministic given
/// `(config.seed, data_seed)`; returns the trained weights plus the
/// `(step, loss)` curve.
pub fn train(
    config: &ModelConfig,
    opts: &TrainOptions,
    corpus: &[Vec<u32>],
    data_seed: u64,
) -> Result<(Weights, Vec<(usize, f64)>)> {
    opts.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let usable: Vec<&Vec<u32>> = corpus.iter().filter(|s| s.len() >= 2).collect();
    if usable.is_empty() {
        return Err(Error::DegenerateSequence(0));
    }
    if usable.len() < corpus.len() {
        log::warn!(
            "dropping {} sequences shorter than 2 tokens",
            corpus.len() - usable.len()
        );
    }

    let mut weights = Weights::init(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(data_seed);
    let mut m = Grads::zeros(config);
    let mut v = Grads::zeros(config);
    let mut curve = Vec::with_capacity(opts.steps);

    for step in 1..=opts.steps {
        let batch: Vec<Vec<u32>> = (0..opts.batch_size)
            .map(|_| usable[rng.gen_range(0..usable.len())].clone())
            .collect();
        let (loss, mut grads) = loss_and_grads(&weights, &batch)?;
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged { step, loss });
        }
        let norm = grads.global_norm();
        if norm > opts.clip_norm {
            grads.scale(opts.clip_norm / norm);
        }
        let bc1 = 1.0 - opts.beta1.powi(step as i32);
        let bc2 = 1.0 - opts.beta2.powi(step as i32);
        for ((wb, gb), (mb, vb)) in weights
            .blocks_mut()
            .into_iter()
            .zip(grads.blocks())
            .zip(m.blocks_mut().into_iter().zip(v.blocks_mut()))
        {
            for i in 0..wb.len() {
                let g = gb[i];
                mb[i] = opts.beta1 * mb[i] + (1.0 - opts.beta1) * g;
                vb[i] = opts.beta2 * vb[i] + (1.0 - opts.beta2) * g * g;
                let mhat = mb[i] / bc1;
                let vhat = vb[i] / bc2;
                wb[i] = (f64::from(wb[i]) - opts.lr * mhat / (vhat.sqrt() + opts.eps)) as f32;
            }
        }
        curve.push((step, loss));
    }

    Ok((weights, curve))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            d_model: 8,
            n_heads: 2,
            d_ff: 12,
            vocab_size: 9,
            max_seq: 12,
            seed: 11,
        }
    }

    fn batch() -> Vec<Vec<u32>> {
        vec![vec![1, 4, 2, 7, 3], vec![5, 5, 8, 0]]
    }

    #[test]
    fn uniform_logits_give_log_vocab_loss() {
        let mut w = Weights::init(&cfg()).unwrap();
        for v in &mut w.wun {
            *v = 0.0;
        }
        let (loss, _) = loss_and_grads(&w, &batch()).unwrap();
        let expected = (cfg().vocab_size as f64).ln();
        assert!((loss - expected).abs() < 1e-4, "loss {loss} vs {expected}");
    }

    #[test]
    fn duplicated_batch_has_identical_loss() {
        let w = Weights::init(&cfg()).unwrap();
        let single = batch();
        let mut doubled = batch();
        doubled.extend(batch());
        let (a, _) = loss_and_grads(&w, &single).unwrap();
        let (b, _) = loss_and_grads(&w, &doubled).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn degenerate_sequence_is_rejected() {
        let w = Weights::init(&cfg()).unwrap();
        assert!(matches!(
            loss_and_grads(&w, &[vec![3]]),
            Err(Error::DegenerateSequence(1))
        ));
        assert!(matches!(loss_and_grads(&w, &[]), Err(Error::EmptyInput)));
    }

    #[test]
    fn training_forward_matches_inference_forward() {
        let w = Weights::init(&cfg()).unwrap();
        let tokens = vec![1u32, 4, 2, 7];
        let view = WeightsView::<f32>::from_weights(&w);
        let pe = math::position_table::<f32>(w.config.max_seq, w.config.d_model);
        let cache = forward_cached(&view, &pe, &tokens);
        let (logits, _) = crate::tinylm::forward(&w, &tokens, None, None, false).unwrap();
        assert_eq!(cache.logits, logits);
    }

    #[test]
    fn f32_and_f64_paths_agree_on_loss_and_grads() {
        let w = Weights::init(&cfg()).unwrap();
        let (l32, g32) = loss_and_grads(&w, &batch()).unwrap();
        let (l64, g64) = loss_and_grads_f64(&w, &batch()).unwrap();
        assert!((l32 - l64).abs() < 1e-5, "loss {l32} vs {l64}");
        for (a, b) in g32.blocks().iter().zip(g64.blocks().iter()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences_per_block() {
        // 64-bit reference path: central differences at eps=1e-3 would be
        // swamped by f32 activation rounding for small-gradient blocks.
        let w = Weights::init(&cfg()).unwrap();
        let batch = batch();
        let (_, grads) = loss_and_grads_f64(&w, &batch).unwrap();
        let names = Weights::block_names(&w.config);
        let eps = 1e-3f32;
        for (bi, name) in names.iter().enumerate() {
            let analytic = grads.blocks()[bi];
            let mut diff_sq = 0.0f64;
            let mut ref_sq = 0.0f64;
            for i in 0..analytic.len() {
                let mut wp = w.clone();
                wp.blocks_mut()[bi][i] += eps;
                let lp = batch_loss_f64(&wp, &batch).unwrap();
                let mut wm = w.clone();
                wm.blocks_mut()[bi][i] -= eps;
                let lm = batch_loss_f64(&wm, &batch).unwrap();
                let fd = (lp - lm) / (2.0 * f64::from(eps));
                diff_sq += (fd - analytic[i]).powi(2);
                ref_sq += fd * fd;
            }
            let rel = diff_sq.sqrt() / ref_sq.sqrt().max(1e-12);
            assert!(rel <= 1e-3, "block {name}: relative error {rel}");
        }
    }

    #[test]
    fn zero_steps_returns_seeded_initialization() {
        let config = cfg();
        let opts = TrainOptions {
            steps: 0,
            ..TrainOptions::default()
        };
        let (w, curve) = train(&config, &opts, &batch(), 1).unwrap();
        let init = Weights::init(&config).unwrap();
        for (a, b) in w.blocks().iter().zip(init.blocks().iter()) {
            assert_eq!(a, b);
        }
        assert!(curve.is_empty());
    }

    #[test]
    fn same_seed_trains_bitwise_identical_weights() {
        let config = cfg();
        let opts = TrainOptions {
            steps: 12,
            batch_size: 4,
            ..TrainOptions::default()
        };
        let corpus = batch();
        let (a, ca) = train(&config, &opts, &corpus, 5).unwrap();
        let (b, cb) = train(&config, &opts, &corpus, 5).unwrap();
        assert_eq!(ca, cb);
        for (x, y) in a.blocks().iter().zip(b.blocks().iter()) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn training_reduces_loss_on_tiny_corpus() {
        let config = cfg();
        let opts = TrainOptions {
            steps: 150,
            batch_size: 4,
            lr: 3e-3,
            ..TrainOptions::default()
        };
        let corpus: Vec<Vec<u32>> = vec![vec![1, 2, 3, 4, 5], vec![1, 2, 3, 4, 5]];
        let (w, curve) = train(&config, &opts, &corpus, 2).unwrap();
        let init_loss = batch_loss(&Weights::init(&config).unwrap(), &corpus).unwrap();
        let final_loss = batch_loss(&w, &corpus).unwrap();
        assert!(
            final_loss < 0.8 * init_loss,
            "final {final_loss} vs init {init_loss}"
        );
        assert_eq!(curve.len(), 150);
    }
}
