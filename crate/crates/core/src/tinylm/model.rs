//! Forward pass with a per-session KV cache, residual-stream hooks, and
//! optional projection ablation at every residual write point.

use crate::error::{Error, Result};
use crate::steering::Intervention;

use super::math;
use super::{ForwardTrace, HookPoint, Weights};

/// One input position: either a vocabulary token or an injected prefix
/// embedding (the image-token surrogate).
#[derive(Debug, Clone)]
pub enum PosInput {
    Token(u32),
    Prefix(Vec<f32>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum PositionKind {
    Prefix,
    PromptToken,
    Generated,
}

/// Intervention resolved against a concrete model: unit direction, strength,
/// a dense hook mask, and phase applicability.
#[derive(Debug, Clone)]
pub struct ResolvedIntervention {
    pub(crate) u: Vec<f32>,
    pub(crate) alpha: f32,
    pub(crate) hook_mask: Vec<bool>,
    pub(crate) on_prompt: bool,
    pub(crate) on_generation: bool,
    pub(crate) on_prefix: bool,
}

impl ResolvedIntervention {
    fn applies(&self, hook: HookPoint, kind: PositionKind) -> bool {
        if self.alpha == 0.0 {
            return false;
        }
        let phase_ok = match kind {
            PositionKind::Prefix => self.on_prefix,
            PositionKind::PromptToken => self.on_prompt,
            PositionKind::Generated => self.on_generation,
        };
        phase_ok && self.hook_mask[hook.index()]
    }

    /// `r <- r - alpha * u (u^T r)`, projection in 64-bit.
    fn ablate_in_place(&self, r: &mut [f32]) {
        let proj = math::dot(&self.u, r) * f64::from(self.alpha);
        for (ri, ui) in r.iter_mut().zip(&self.u) {
            *ri = (f64::from(*ri) - proj * f64::from(*ui)) as f32;
        }
    }
}

/// A single generation/scoring session. Owns the KV cache and the optional
/// trace; the weights are shared immutably.
pub struct Session<'w> {
    weights: &'w Weights,
    pe: Vec<Vec<f32>>,
    intervention: Option<ResolvedIntervention>,
    k_cache: Vec<Vec<Vec<f32>>>,
    v_cache: Vec<Vec<Vec<f32>>>,
    len: usize,
    prompt_len: usize,
    trace: Option<Vec<Vec<Vec<f32>>>>,
}

impl<'w> Session<'w> {
    pub fn new(
        weights: &'w Weights,
        intervention: Option<&Intervention>,
        want_trace: bool,
    ) -> Result<Self> {
        let cfg = &weights.config;
        let resolved = intervention.map(|iv| iv.resolve(cfg)).transpose()?;
        Ok(Self {
            weights,
            pe: math::position_table(cfg.max_seq, cfg.d_model),
            intervention: resolved,
            k_cache: vec![Vec::new(); cfg.n_layers],
            v_cache: vec![Vec::new(); cfg.n_layers],
            len: 0,
            prompt_len: 0,
            trace: want_trace.then(|| vec![Vec::new(); cfg.n_hook_points()]),
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Feed one prompt-phase position. Prefix embeddings must come before
    /// any token of the same session.
    pub fn push_prompt(&mut self, input: &PosInput) -> Result<Vec<f32>> {
        match input {
            PosInput::Token(t) => self.push_embedding(self.token_embedding(*t)?, PositionKind::PromptToken),
            PosInput::Prefix(v) => {
                if v.len() != self.weights.config.d_model {
                    return Err(Error::ShapeError(format!(
                        "prefix vector has {} dims, expected {}",
                        v.len(),
                        self.weights.config.d_model
                    )));
                }
                self.push_embedding(v.clone(), PositionKind::Prefix)
            }
        }
    }

    /// Feed one generated token (generation phase).
    pub fn push_generated(&mut self, token: u32) -> Result<Vec<f32>> {
        self.push_embedding(self.token_embedding(token)?, PositionKind::Generated)
    }

    fn token_embedding(&self, token: u32) -> Result<Vec<f32>> {
        if (token as usize) >= self.weights.config.vocab_size {
            return Err(Error::ShapeError(format!(
                "token id {token} out of range for vocab {}",
                self.weights.config.vocab_size
            )));
        }
        Ok(self.weights.embedding_row(token).to_vec())
    }

    fn hook(&mut self, r: &mut [f32], hook: HookPoint, kind: PositionKind) {
        if let Some(iv) = &self.intervention {
            if iv.applies(hook, kind) {
                iv.ablate_in_place(r);
            }
        }
        if let Some(trace) = &mut self.trace {
            trace[hook.index()].push(r.to_vec());
        }
    }

    fn push_embedding(&mut self, mut x: Vec<f32>, kind: PositionKind) -> Result<Vec<f32>> {
        let cfg = &self.weights.config;
        let d = cfg.d_model;
        let p = self.len;
        if p >= cfg.max_seq {
            return Err(Error::SequenceTooLong {
                len: p + 1,
                max_seq: cfg.max_seq,
            });
        }

        for (xi, pi) in x.iter_mut().zip(&self.pe[p]) {
            *xi += *pi;
        }
        self.hook(&mut x, HookPoint::EmbedOut, kind);
        let mut resid = x;

        let n_heads = cfg.n_heads;
        let dh = cfg.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();

        for l in 0..cfg.n_layers {
            let layer = &self.weights.layers[l];

            let (normed, _) = math::rmsnorm(&resid, &layer.ln1_g);
            let q = math::matvec(&layer.wq, &normed, d, d);
            let k = math::matvec(&layer.wk, &normed, d, d);
            let v = math::matvec(&layer.wv, &normed, d, d);
            self.k_cache[l].push(k);
            self.v_cache[l].push(v);

            let mut concat = vec![0.0f32; d];
            for h in 0..n_heads {
                let hs = h * dh;
                let qh = &q[hs..hs + dh];
                let mut scores = Vec::with_capacity(p + 1);
                for j in 0..=p {
                    scores.push((math::dot(qh, &self.k_cache[l][j][hs..hs + dh]) * scale) as f32);
                }
                let attn = math::softmax(&scores);
                for (t, slot) in concat[hs..hs + dh].iter_mut().enumerate() {
                    let mut acc = 0.0f64;
                    for (j, a) in attn.iter().enumerate() {
                        acc += a * f64::from(self.v_cache[l][j][hs + t]);
                    }
                    *slot = acc as f32;
                }
            }
            let attn_out = math::matvec(&layer.wo, &concat, d, d);
            for (ri, oi) in resid.iter_mut().zip(&attn_out) {
                *ri += *oi;
            }
            self.hook(&mut resid, HookPoint::PostAttn(l), kind);

            let (normed2, _) = math::rmsnorm(&resid, &layer.ln2_g);
            let pre = math::matvec(&layer.w1, &normed2, cfg.d_ff, d);
            let act: Vec<f32> = pre.iter().map(|v| math::silu(*v)).collect();
            let ff = math::matvec(&layer.w2, &act, d, cfg.d_ff);
            for (ri, fi) in resid.iter_mut().zip(&ff) {
                *ri += *fi;
            }
            self.hook(&mut resid, HookPoint::PostMlp(l), kind);
        }

        let (normed_f, _) = math::rmsnorm(&resid, &self.weights.lnf_g);
        let logits = math::matvec(&self.weights.wun, &normed_f, cfg.vocab_size, d);

        self.len += 1;
        if kind != PositionKind::Generated {
            self.prompt_len = self.len;
        }
        Ok(logits)
    }

    /// Consume the session, returning the trace if one was requested.
    pub fn into_trace(self) -> Option<ForwardTrace> {
        let residuals = self.trace?;
        Some(ForwardTrace {
            hooks: HookPoint::all(&self.weights.config),
            residuals,
            prompt_len: self.prompt_len,
            seq_len: self.len,
        })
    }
}

/// Full forward pass over `[prefix ‖ tokens]` with causal self-attention.
///
/// Returns per-position logits (prefix positions included) and, when
/// requested, the residual trace recorded after any intervention.
pub fn forward(
    weights: &Weights,
    tokens: &[u32],
    prefix: Option<&[Vec<f32>]>,
    intervention: Option<&Intervention>,
    want_trace: bool,
) -> Result<(Vec<Vec<f32>>, Option<ForwardTrace>)> {
    let n_prefix = prefix.map_or(0, <[Vec<f32>]>::len);
    let total = n_prefix + tokens.len();
    if total > weights.config.max_seq {
        return Err(Error::SequenceTooLong {
            len: total,
            max_seq: weights.config.max_seq,
        });
    }
    let mut session = Session::new(weights, intervention, want_trace)?;
    let mut logits = Vec::with_capacity(total);
    if let Some(prefix) = prefix {
        for v in prefix {
            logits.push(session.push_prompt(&PosInput::Prefix(v.clone()))?);
        }
    }
    for t in tokens {
        logits.push(session.push_prompt(&PosInput::Token(*t))?);
    }
    Ok((logits, session.into_trace()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::steering::{InterventionScope, SteeringDirection};
    use crate::tinylm::ModelConfig;

    fn small_weights() -> Weights {
        let cfg = ModelConfig {
            n_layers: 2,
            d_model: 8,
            n_heads: 2,
            d_ff: 16,
            vocab_size: 12,
            max_seq: 24,
            seed: 42,
        };
        Weights::init(&cfg).unwrap()
    }

    fn unit_direction(d: usize, axis: usize) -> SteeringDirection {
        let mut u = vec![0.0f32; d];
        u[axis] = 1.0;
        SteeringDirection::for_test(u, HookPoint::PostMlp(0), 1.0)
    }

    #[test]
    fn trace_is_observational() {
        let w = small_weights();
        let tokens = [1u32, 5, 7, 3];
        let (a, trace_a) = forward(&w, &tokens, None, None, false).unwrap();
        let (b, trace_b) = forward(&w, &tokens, None, None, true).unwrap();
        assert_eq!(a, b);
        assert!(trace_a.is_none());
        let trace = trace_b.unwrap();
        assert_eq!(trace.vector_count(), (1 + 2 * 2) * tokens.len());
    }

    #[test]
    fn ablation_zeroes_projection_in_trace() {
        let w = small_weights();
        let dir = unit_direction(8, 3);
        let iv = Intervention::new(dir, None, InterventionScope::default()).unwrap();
        let (_, trace) = forward(&w, &[2, 4, 6], None, Some(&iv), true).unwrap();
        let trace = trace.unwrap();
        for per_pos in &trace.residuals {
            for r in per_pos {
                let norm = r.iter().map(|v| f64::from(*v).powi(2)).sum::<f64>().sqrt();
                let proj = f64::from(r[3]).abs();
                assert!(proj <= 1e-5 * norm.max(1e-12), "proj={proj} norm={norm}");
            }
        }
    }

    #[test]
    fn zero_length_prefix_matches_pure_text() {
        let w = small_weights();
        let (a, _) = forward(&w, &[1, 2, 3], None, None, false).unwrap();
        let (b, _) = forward(&w, &[1, 2, 3], Some(&[]), None, false).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn prefix_equals_prepended_token() {
        let w = small_weights();
        let tok = 9u32;
        let prefix = vec![w.embedding_row(tok).to_vec()];
        let (a, _) = forward(&w, &[4, 2], Some(&prefix), None, false).unwrap();
        let (b, _) = forward(&w, &[tok, 4, 2], None, None, false).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn causality_later_token_cannot_change_earlier_logits() {
        let w = small_weights();
        let (a, _) = forward(&w, &[1, 2, 3, 4], None, None, false).unwrap();
        let (b, _) = forward(&w, &[1, 2, 3, 11], None, None, false).unwrap();
        for t in 0..3 {
            assert_eq!(a[t], b[t], "logits at position {t} changed");
        }
        assert_ne!(a[3], b[3]);
    }

    #[test]
    fn overlength_input_is_rejected() {
        let w = small_weights();
        let tokens = vec![1u32; 25];
        match forward(&w, &tokens, None, None, false) {
            Err(Error::SequenceTooLong { len, max_seq }) => {
                assert_eq!(len, 25);
                assert_eq!(max_seq, 24);
            }
            other => panic!("expected SequenceTooLong, got {other:?}"),
        }
    }

    #[test]
    fn bad_prefix_dimension_is_rejected() {
        let w = small_weights();
        let prefix = vec![vec![0.0f32; 5]];
        assert!(matches!(
            forward(&w, &[1], Some(&prefix), None, false),
            Err(Error::ShapeError(_))
        ));
    }

    #[test]
    fn logits_softmax_to_distribution() {
        let w = small_weights();
        let (logits, _) = forward(&w, &[3, 1, 4], None, None, false).unwrap();
        for row in logits {
            let sum: f64 = math::softmax(&row).iter().sum();
            assert!((sum - 1.0).abs() < 1e-5);
        }
    }
}
