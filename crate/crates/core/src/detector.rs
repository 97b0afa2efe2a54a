//! Revision policy `π(j | o, a, r)` over word positions plus a do-nothing
//! action, with a value head for advantage estimation.
//!
//! The poem is encoded by the (by default shared) bi-LSTM, pooled by additive
//! attention whose query is `[a; r]`, and fed to a one-hidden-layer MLP with
//! `max_positions + 1` outputs. Positions past the poem's word count are
//! masked before the softmax. Action `j < max_positions` edits word `j`
//! (0-based, markers excluded); action `max_positions` does nothing.

use std::path::Path;
use std::rc::Rc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::generator::ModelSize;
use crate::lm;
use crate::nn::{init_normal, Graph, Linear, ParamId, ParamStore, Scalar, Tensor, Var};
use crate::poem::{Conditioning, Quatrain, TokenId, MAX_QUATRAIN_TOKENS};
use crate::prompter::{PoemEncoder, Prompter, SHARED_ENCODER_PREFIX};
use crate::seq::AdditiveAttention;

#[derive(Clone, Debug, PartialEq)]
pub struct DetectorConfig {
    pub vocab_size: usize,
    pub n_authors: usize,
    pub n_schemes: usize,
    pub word_dim: usize,
    /// Per-direction encoder width.
    pub enc_hidden: usize,
    pub author_dim: usize,
    pub scheme_dim: usize,
    pub attn_dim: usize,
    pub mlp_hidden: usize,
    pub max_positions: usize,
    /// Read the poem with the prompter's encoder weights.
    pub share_encoder: bool,
    /// Keep encoder weights fixed during policy updates.
    pub freeze_encoder: bool,
}

crate::kv_config!(DetectorConfig {
    vocab_size,
    n_authors,
    n_schemes,
    word_dim,
    enc_hidden,
    author_dim,
    scheme_dim,
    attn_dim,
    mlp_hidden,
    max_positions,
    share_encoder,
    freeze_encoder,
});

impl DetectorConfig {
    pub fn new(size: ModelSize) -> Self {
        let (word_dim, enc_hidden, author_dim, scheme_dim, attn, mlp) = match size {
            ModelSize::Full => (300, 1024, 128, 256, 512, 512),
            ModelSize::Desk => (75, 256, 32, 64, 128, 512),
            ModelSize::Tiny => (16, 24, 8, 8, 16, 16),
        };
        DetectorConfig {
            vocab_size: 0,
            n_authors: 1,
            n_schemes: 1,
            word_dim,
            enc_hidden,
            author_dim,
            scheme_dim,
            attn_dim: attn,
            mlp_hidden: mlp,
            max_positions: MAX_QUATRAIN_TOKENS,
            share_encoder: true,
            freeze_encoder: true,
        }
    }

    /// Encoder and table sizes taken from a prompter, so its encoder
    /// weights can be copied in.
    pub fn matching(size: ModelSize, prompter: &Prompter) -> Self {
        let p = &prompter.net.cfg;
        DetectorConfig {
            vocab_size: p.vocab_size,
            n_authors: p.n_authors,
            n_schemes: p.n_schemes,
            word_dim: p.word_dim,
            enc_hidden: p.hidden,
            ..DetectorConfig::new(size)
        }
    }

    pub fn num_actions(&self) -> usize {
        self.max_positions + 1
    }

    pub fn do_nothing(&self) -> usize {
        self.max_positions
    }

    fn encoder_prefix(&self) -> &'static str {
        if self.share_encoder {
            SHARED_ENCODER_PREFIX
        } else {
            "det.enc"
        }
    }
}

/// Distribution over actions for one state.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyOutput {
    pub probs: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub value: f64,
    pub mask: Vec<bool>,
}

#[derive(Clone, Debug)]
pub struct DetectorNet {
    pub cfg: DetectorConfig,
    pub encoder: PoemEncoder,
    author: ParamId,
    scheme: ParamId,
    attn: AdditiveAttention,
    mlp: Linear,
    out: Linear,
    value: Linear,
}

/// Graph outputs of one policy evaluation.
#[derive(Clone, Copy, Debug)]
pub struct PolicyVars {
    /// `1 × num_actions`, zero at masked entries.
    pub log_probs: Var,
    pub probs: Var,
    /// `1 × 1`.
    pub value: Var,
}

impl DetectorNet {
    pub fn new<T: Scalar, R: Rng>(store: &mut ParamStore<T>, cfg: DetectorConfig, rng: &mut R) -> Result<Self> {
        if [cfg.vocab_size, cfg.word_dim, cfg.enc_hidden, cfg.author_dim, cfg.scheme_dim, cfg.attn_dim, cfg.mlp_hidden, cfg.max_positions]
            .contains(&0)
        {
            return Err(Error::Config("detector dimensions must be positive".into()));
        }
        let encoder = PoemEncoder::new(store, cfg.encoder_prefix(), cfg.vocab_size, cfg.word_dim, cfg.enc_hidden, rng);
        let author = store.add("det.author", init_normal(rng, &[cfg.n_authors.max(1), cfg.author_dim], 0.1));
        let scheme = store.add("det.scheme", init_normal(rng, &[cfg.n_schemes.max(1), cfg.scheme_dim], 0.1));
        let key_dim = 2 * cfg.enc_hidden;
        let attn = AdditiveAttention::new(store, "det.attn", cfg.author_dim + cfg.scheme_dim, key_dim, cfg.attn_dim, rng);
        let mlp = Linear::new(store, "det.mlp", key_dim, cfg.mlp_hidden, true, rng);
        let out = Linear::new(store, "det.out", cfg.mlp_hidden, cfg.num_actions(), true, rng);
        // Small output weights start the policy close to uniform.
        store.get_mut(out.w).data_mut().iter_mut().for_each(|w| *w *= T::c(0.01));
        let value = Linear::new(store, "det.value", key_dim, 1, true, rng);
        Ok(DetectorNet {
            cfg,
            encoder,
            author,
            scheme,
            attn,
            mlp,
            out,
            value,
        })
    }

    pub fn mask(&self, n_words: usize) -> Result<Rc<[bool]>> {
        if n_words > self.cfg.max_positions {
            return Err(Error::InvalidArgument(format!(
                "poem has {n_words} words, detector handles at most {}",
                self.cfg.max_positions
            )));
        }
        let mut m = vec![false; self.cfg.num_actions()];
        m[..n_words].iter_mut().for_each(|v| *v = true);
        m[self.cfg.max_positions] = true;
        Ok(m.into())
    }

    /// Encoder rows `[h_fwd; h_bwd]` for each token.
    pub fn encode<T: Scalar>(&self, g: &mut Graph<'_, T>, tokens: &[TokenId]) -> Result<Var> {
        let e = self.encoder.encode(g, tokens)?;
        g.concat(&[e.forward, e.backward], 1)
    }

    pub fn encode_detached<T: Scalar>(&self, store: &ParamStore<T>, tokens: &[TokenId]) -> Result<Tensor<T>> {
        let mut g = Graph::new(store);
        let h = self.encode(&mut g, tokens)?;
        Ok(g.value(h).clone())
    }

    /// Policy and value from an encoding `h` (`n × 2·enc_hidden`).
    pub fn head<T: Scalar>(&self, g: &mut Graph<'_, T>, h: Var, cond: Conditioning, n_words: usize) -> Result<PolicyVars> {
        let mask = self.mask(n_words)?;
        let at = g.param(self.author);
        let a = g.embedding(at, &[if cond.author < self.cfg.n_authors { cond.author } else { 0 }])?;
        let st = g.param(self.scheme);
        let r = g.embedding(st, &[if cond.scheme < self.cfg.n_schemes { cond.scheme } else { 0 }])?;
        let query = g.concat(&[a, r], 1)?;
        let (ctx, _) = self.attn.forward(g, query, h)?;
        let hid = self.mlp.forward(g, ctx)?;
        let hid = g.tanh(hid);
        let logits = self.out.forward(g, hid)?;
        let log_probs = g.masked_log_softmax(logits, mask.clone())?;
        let probs = g.masked_softmax(logits, mask)?;
        let value = self.value.forward(g, ctx)?;
        Ok(PolicyVars { log_probs, probs, value })
    }

    pub fn policy<T: Scalar>(&self, g: &mut Graph<'_, T>, q: &Quatrain, cond: Conditioning) -> Result<PolicyVars> {
        let h = self.encode(g, q.tokens())?;
        self.head(g, h, cond, q.num_words())
    }

    pub fn trainable<T: Scalar>(&self, store: &ParamStore<T>) -> Vec<ParamId> {
        let enc = format!("{}.", self.cfg.encoder_prefix());
        store
            .ids()
            .filter(|&id| {
                let name = store.name(id);
                if name.starts_with(&enc) {
                    !self.cfg.freeze_encoder
                } else {
                    name.starts_with("det.")
                }
            })
            .collect()
    }

    pub fn value_params(&self) -> Vec<ParamId> {
        [Some(self.value.w), self.value.b].into_iter().flatten().collect()
    }
}

pub fn policy_output<T: Scalar>(g: &Graph<'_, T>, vars: PolicyVars, mask: &[bool]) -> PolicyOutput {
    PolicyOutput {
        probs: g.value(vars.probs).data().iter().map(|v| v.f64()).collect(),
        log_probs: g.value(vars.log_probs).data().iter().map(|v| v.f64()).collect(),
        value: g.value(vars.value).item().f64(),
        mask: mask.to_vec(),
    }
}

/// Categorical draw over the valid actions; returns the action and its
/// stored log-probability.
pub fn select_action<R: Rng>(out: &PolicyOutput, rng: &mut R) -> (usize, f64) {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = None;
    for (i, (&p, &ok)) in out.probs.iter().zip(&out.mask).enumerate() {
        if !ok || p <= 0.0 {
            continue;
        }
        acc += p;
        last = Some(i);
        if u < acc {
            return (i, out.log_probs[i]);
        }
    }
    let i = last.unwrap_or(out.probs.len() - 1);
    (i, out.log_probs[i])
}

/// Entropy of the valid part of a distribution given as graph vars.
pub fn entropy<T: Scalar>(g: &mut Graph<'_, T>, vars: PolicyVars) -> Result<Var> {
    let pl = g.mul(vars.probs, vars.log_probs)?;
    let s = g.sum(pl);
    Ok(g.scale(s, -1.0))
}

/// One state-action pair to re-evaluate.
#[derive(Clone, Debug)]
pub struct ActionQuery<'a> {
    pub poem: &'a Quatrain,
    pub cond: Conditioning,
    pub action: usize,
}

/// Per-item `(log π(action), value, entropy)` graph scalars.
pub fn evaluate_actions<T: Scalar>(net: &DetectorNet, g: &mut Graph<'_, T>, items: &[ActionQuery<'_>]) -> Result<Vec<(Var, Var, Var)>> {
    let mut out = Vec::with_capacity(items.len());
    for it in items {
        let vars = net.policy(g, it.poem, it.cond)?;
        out.push(pick(net, g, vars, it.action, it.poem.num_words())?);
    }
    Ok(out)
}

/// Log-prob of `action`, value and entropy from evaluated policy vars.
pub fn pick<T: Scalar>(net: &DetectorNet, g: &mut Graph<'_, T>, vars: PolicyVars, action: usize, n_words: usize) -> Result<(Var, Var, Var)> {
    if action >= net.cfg.num_actions() || (action < net.cfg.max_positions && action >= n_words) {
        return Err(Error::InvalidArgument(format!(
            "action {action} is masked for a poem of {n_words} words"
        )));
    }
    let lp = g.gather(vars.log_probs, &[(0, action)])?;
    let h = entropy(g, vars)?;
    Ok((lp, vars.value, h))
}

#[derive(Clone, Debug)]
pub struct Detector {
    pub net: DetectorNet,
    pub store: ParamStore<f32>,
}

pub const DETECTOR_STEM: &str = "det";

impl Detector {
    pub fn new(cfg: DetectorConfig, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let net = DetectorNet::new(&mut store, cfg, &mut crate::rng_from_seed(seed))?;
        Ok(Detector { net, store })
    }

    /// A detector whose shared encoder holds the prompter's weights.
    pub fn from_prompter(cfg: DetectorConfig, prompter: &Prompter, seed: u64) -> Result<Self> {
        let mut d = Detector::new(cfg, seed)?;
        if d.net.cfg.share_encoder {
            d.copy_encoder_from(prompter)?;
        }
        Ok(d)
    }

    pub fn copy_encoder_from(&mut self, prompter: &Prompter) -> Result<()> {
        let prefix = format!("{SHARED_ENCODER_PREFIX}.");
        let ids: Vec<ParamId> = self.store.ids_with_prefix(&prefix).collect();
        for id in ids {
            let name = self.store.name(id).to_string();
            let src = prompter
                .store
                .id(&name)
                .ok_or_else(|| Error::Config(format!("prompter lacks encoder tensor {name}")))?;
            self.store.set(id, prompter.store.get(src).clone())?;
        }
        Ok(())
    }

    pub fn policy_forward(&self, q: &Quatrain, cond: Conditioning) -> Result<PolicyOutput> {
        let mask = self.net.mask(q.num_words())?;
        let mut g = Graph::new(&self.store);
        let vars = self.net.policy(&mut g, q, cond)?;
        Ok(policy_output(&g, vars, &mask))
    }

    /// As [`Detector::policy_forward`] from a precomputed encoding.
    pub fn policy_from_encoding(&self, h: &Tensor<f32>, cond: Conditioning, n_words: usize) -> Result<PolicyOutput> {
        let mask = self.net.mask(n_words)?;
        let mut g = Graph::new(&self.store);
        let hv = g.constant(h.clone());
        let vars = self.net.head(&mut g, hv, cond, n_words)?;
        Ok(policy_output(&g, vars, &mask))
    }

    pub fn trainable(&self) -> Vec<ParamId> {
        self.net.trainable(&self.store)
    }

    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        lm::save_model(&self.store, &self.net.cfg, 0, dir, stem)
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let mut cfg = DetectorConfig::new(ModelSize::Tiny);
        lm::load_model_config(&mut cfg, dir, stem)?;
        let mut d = Detector::new(cfg, 0)?;
        lm::load_weights(&mut d.store, dir, stem)?;
        Ok(d)
    }
}
