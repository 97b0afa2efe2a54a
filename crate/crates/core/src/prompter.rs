//! Bidirectional-context word model `p(o_i | o_<i, o_>i, a, r)`.
//!
//! The poem is read by a bi-LSTM whose forward run starts from a learned
//! state standing in for `h_0` and whose backward run starts from a learned
//! state standing in for `h_{N+1}`. The gap vector of position `j` is
//! `[h_fwd(j-1); h_bwd(j+1); a; r]`, which never sees the token at `j`. A
//! linear layer with softmax maps it onto the vocabulary.
//!
//! The encoder is shared with the detector by default and lives under the
//! `shared.enc.` prefix.

use std::path::Path;

use rand::Rng;

use crate::config::KvConfig;
use crate::corpus::{Dataset, Vocab};
use crate::error::{Error, Result};
use crate::generator::ModelSize;
use crate::lm::{self, TokenModel};
use crate::nn::{init_normal, Graph, Linear, ParamId, ParamStore, Scalar, Tensor, Var};
use crate::poem::{is_marker, Conditioning, Quatrain, TokenId, NUM_RESERVED, UNK};
use crate::sampling::{self, Strategy};
use crate::seq::{BiLstm, LstmState};

pub const SHARED_ENCODER_PREFIX: &str = "shared.enc";

/// Word embedding plus bi-LSTM with learned boundary states.
#[derive(Clone, Debug)]
pub struct PoemEncoder {
    pub emb: ParamId,
    pub rnn: BiLstm,
    init_fwd_h: ParamId,
    init_fwd_c: ParamId,
    init_bwd_h: ParamId,
    init_bwd_c: ParamId,
    pub vocab_size: usize,
}

/// Per-position states of one encoded poem plus the two boundary states,
/// as rows `[n, hidden]`.
#[derive(Clone, Debug)]
pub struct EncodedVars {
    pub forward: Var,
    pub backward: Var,
    pub init_fwd: Var,
    pub init_bwd: Var,
}

impl PoemEncoder {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        vocab_size: usize,
        word_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let emb = store.add(format!("{prefix}.emb"), init_normal(rng, &[vocab_size, word_dim], 0.1));
        let rnn = BiLstm::new(store, &format!("{prefix}.rnn"), word_dim, hidden, rng);
        let mut state = |name: &str| store.add(format!("{prefix}.{name}"), Tensor::zeros(&[1, hidden]));
        PoemEncoder {
            emb,
            rnn,
            init_fwd_h: state("init_fwd_h"),
            init_fwd_c: state("init_fwd_c"),
            init_bwd_h: state("init_bwd_h"),
            init_bwd_c: state("init_bwd_c"),
            vocab_size,
        }
    }

    pub fn hidden(&self) -> usize {
        self.rnn.hidden()
    }

    pub fn encode<T: Scalar>(&self, g: &mut Graph<'_, T>, tokens: &[TokenId]) -> Result<EncodedVars> {
        if tokens.is_empty() {
            return Err(Error::InvalidArgument("cannot encode an empty poem".into()));
        }
        let ids: Vec<TokenId> = tokens.iter().map(|&t| if t < self.vocab_size { t } else { UNK }).collect();
        let emb = g.param(self.emb);
        let x = g.embedding(emb, &ids)?;
        let fi = LstmState {
            h: g.param(self.init_fwd_h),
            c: g.param(self.init_fwd_c),
        };
        let bi = LstmState {
            h: g.param(self.init_bwd_h),
            c: g.param(self.init_bwd_c),
        };
        let out = self.rnn.encode_from(g, x, Some(fi), Some(bi))?;
        let forward = g.concat(&out.forward, 0)?;
        let backward = g.concat(&out.backward, 0)?;
        Ok(EncodedVars {
            forward,
            backward,
            init_fwd: fi.h,
            init_bwd: bi.h,
        })
    }

    /// Encoding evaluated once and kept as plain tensors, for frozen use.
    pub fn encode_detached<T: Scalar>(&self, store: &ParamStore<T>, tokens: &[TokenId]) -> Result<EncodedPoem<T>> {
        let mut g = Graph::new(store);
        let e = self.encode(&mut g, tokens)?;
        Ok(EncodedPoem {
            forward: g.value(e.forward).clone(),
            backward: g.value(e.backward).clone(),
            init_fwd: g.value(e.init_fwd).clone(),
            init_bwd: g.value(e.init_bwd).clone(),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncodedPoem<T> {
    pub forward: Tensor<T>,
    pub backward: Tensor<T>,
    pub init_fwd: Tensor<T>,
    pub init_bwd: Tensor<T>,
}

impl<T: Scalar> EncodedPoem<T> {
    pub fn len(&self) -> usize {
        self.forward.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn vars(&self, g: &mut Graph<'_, T>) -> EncodedVars {
        EncodedVars {
            forward: g.constant(self.forward.clone()),
            backward: g.constant(self.backward.clone()),
            init_fwd: g.constant(self.init_fwd.clone()),
            init_bwd: g.constant(self.init_bwd.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrompterConfig {
    pub vocab_size: usize,
    pub n_authors: usize,
    pub n_schemes: usize,
    pub word_dim: usize,
    pub hidden: usize,
    pub author_dim: usize,
    pub scheme_dim: usize,
    pub top_k: usize,
    pub use_author: bool,
    pub use_scheme: bool,
}

crate::kv_config!(PrompterConfig {
    vocab_size,
    n_authors,
    n_schemes,
    word_dim,
    hidden,
    author_dim,
    scheme_dim,
    top_k,
    use_author,
    use_scheme,
});

impl PrompterConfig {
    pub fn new(size: ModelSize) -> Self {
        let (word_dim, hidden, author_dim, scheme_dim) = match size {
            ModelSize::Full => (300, 1024, 128, 256),
            ModelSize::Desk => (75, 256, 32, 64),
            ModelSize::Tiny => (16, 24, 8, 8),
        };
        PrompterConfig {
            vocab_size: 0,
            n_authors: 1,
            n_schemes: 1,
            word_dim,
            hidden,
            author_dim,
            scheme_dim,
            top_k: 50,
            use_author: true,
            use_scheme: true,
        }
    }

    pub fn with_tables(mut self, vocab_size: usize, n_authors: usize, n_schemes: usize) -> Self {
        self.vocab_size = vocab_size;
        self.n_authors = n_authors.max(1);
        self.n_schemes = n_schemes.max(1);
        self
    }

    fn cond_dim(&self) -> usize {
        self.use_author as usize * self.author_dim + self.use_scheme as usize * self.scheme_dim
    }
}

#[derive(Clone, Debug)]
pub struct PrompterNet {
    pub cfg: PrompterConfig,
    pub encoder: PoemEncoder,
    author: Option<ParamId>,
    scheme: Option<ParamId>,
    out: Linear,
}

impl PrompterNet {
    pub fn new<T: Scalar, R: Rng>(store: &mut ParamStore<T>, cfg: PrompterConfig, rng: &mut R) -> Result<Self> {
        if [cfg.vocab_size, cfg.word_dim, cfg.hidden, cfg.author_dim, cfg.scheme_dim, cfg.top_k].contains(&0) {
            return Err(Error::Config("prompter dimensions must be positive".into()));
        }
        if cfg.vocab_size <= NUM_RESERVED {
            return Err(Error::Config("prompter vocabulary has no words".into()));
        }
        let encoder = PoemEncoder::new(store, SHARED_ENCODER_PREFIX, cfg.vocab_size, cfg.word_dim, cfg.hidden, rng);
        let author = cfg
            .use_author
            .then(|| store.add("pro.author", init_normal(rng, &[cfg.n_authors, cfg.author_dim], 0.1)));
        let scheme = cfg
            .use_scheme
            .then(|| store.add("pro.scheme", init_normal(rng, &[cfg.n_schemes, cfg.scheme_dim], 0.1)));
        let out = Linear::new(store, "pro.out", 2 * cfg.hidden + cfg.cond_dim(), cfg.vocab_size, true, rng);
        Ok(PrompterNet {
            cfg,
            encoder,
            author,
            scheme,
            out,
        })
    }

    fn conditioning<T: Scalar>(&self, g: &mut Graph<'_, T>, cond: Conditioning, rows: usize) -> Result<Option<Var>> {
        let mut parts = Vec::new();
        if let Some(a) = self.author {
            let t = g.param(a);
            let id = if cond.author < self.cfg.n_authors { cond.author } else { 0 };
            parts.push(g.embedding(t, &vec![id; rows])?);
        }
        if let Some(s) = self.scheme {
            let t = g.param(s);
            let id = if cond.scheme < self.cfg.n_schemes { cond.scheme } else { 0 };
            parts.push(g.embedding(t, &vec![id; rows])?);
        }
        match parts.len() {
            0 => Ok(None),
            1 => Ok(Some(parts[0])),
            _ => g.concat(&parts, 1).map(Some),
        }
    }

    /// Gap vectors `[h_fwd(j-1); h_bwd(j+1); a; r]` for each of `positions`
    /// (0-based flat indices).
    pub fn gaps<T: Scalar>(&self, g: &mut Graph<'_, T>, enc: &EncodedVars, positions: &[usize], cond: Conditioning) -> Result<Var> {
        let n = g.value(enc.forward).rows();
        if let Some(&j) = positions.iter().find(|&&j| j >= n) {
            return Err(Error::Index {
                op: "encode_gap",
                index: j,
                limit: n,
            });
        }
        // Row 0 of `left` is the forward boundary; row n+1 of `right` the
        // backward one.
        let left = g.concat(&[enc.init_fwd, enc.forward], 0)?;
        let right = g.concat(&[enc.backward, enc.init_bwd], 0)?;
        let l = g.embedding(left, positions)?;
        let r_rows: Vec<usize> = positions.iter().map(|&j| j + 1).collect();
        let r = g.embedding(right, &r_rows)?;
        let mut parts = vec![l, r];
        if let Some(c) = self.conditioning(g, cond, positions.len())? {
            parts.push(c);
        }
        g.concat(&parts, 1)
    }

    pub fn encode_gap<T: Scalar>(&self, g: &mut Graph<'_, T>, tokens: &[TokenId], j: usize, cond: Conditioning) -> Result<Var> {
        let enc = self.encoder.encode(g, tokens)?;
        self.gaps(g, &enc, &[j], cond)
    }

    pub fn logits<T: Scalar>(&self, g: &mut Graph<'_, T>, gaps: Var) -> Result<Var> {
        self.out.forward(g, gaps)
    }

    /// Summed NLL of every word (non-marker) position of the quatrain.
    pub fn nll<T: Scalar>(&self, g: &mut Graph<'_, T>, q: &Quatrain, cond: Conditioning) -> Result<(Var, usize)> {
        let tokens = q.tokens();
        let positions = q.word_positions();
        let enc = self.encoder.encode(g, tokens)?;
        let gaps = self.gaps(g, &enc, &positions, cond)?;
        let logits = self.logits(g, gaps)?;
        let lp = g.log_softmax(logits);
        let coords: Vec<(usize, usize)> = positions
            .iter()
            .enumerate()
            .map(|(r, &j)| (r, if tokens[j] < self.cfg.vocab_size { tokens[j] } else { UNK }))
            .collect();
        let picked = g.gather(lp, &coords)?;
        let s = g.sum(picked);
        Ok((g.scale(s, -1.0), positions.len()))
    }

    /// Distribution over the vocabulary for flat position `j`.
    pub fn predict_from<T: Scalar>(&self, store: &ParamStore<T>, enc: &EncodedPoem<T>, j: usize, cond: Conditioning) -> Result<Vec<f64>> {
        let mut g = Graph::new(store);
        let vars = enc.vars(&mut g);
        let gap = self.gaps(&mut g, &vars, &[j], cond)?;
        let logits = self.logits(&mut g, gap)?;
        let p = g.softmax(logits);
        Ok(g.value(p).data().iter().map(|v| v.f64()).collect())
    }

    pub fn predict_word<T: Scalar>(&self, store: &ParamStore<T>, tokens: &[TokenId], j: usize, cond: Conditioning) -> Result<Vec<f64>> {
        let enc = self.encoder.encode_detached(store, tokens)?;
        self.predict_from(store, &enc, j, cond)
    }
}

/// Top-`k` draw from `probs` with reserved tokens masked out.
pub fn suggest_from<R: Rng>(mut probs: Vec<f64>, k: usize, rng: &mut R) -> Result<TokenId> {
    for p in probs.iter_mut().take(NUM_RESERVED) {
        *p = 0.0;
    }
    sampling::sample_token(&probs, Strategy::TopK(k), rng)
}

/// Something that proposes a replacement for position `j` of a poem.
pub trait ReplacementSource {
    fn propose(&mut self, tokens: &[TokenId], j: usize, cond: Conditioning, rng: &mut crate::Rng) -> Result<TokenId>;
}

#[derive(Clone, Debug)]
pub struct Prompter {
    pub net: PrompterNet,
    pub store: ParamStore<f32>,
    pub steps: u64,
}

pub const PROMPTER_STEM: &str = "pro";

impl Prompter {
    pub fn new(cfg: PrompterConfig, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let net = PrompterNet::new(&mut store, cfg, &mut crate::rng_from_seed(seed))?;
        Ok(Prompter { net, store, steps: 0 })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        lm::save_model(&self.store, &self.net.cfg, self.steps, dir, PROMPTER_STEM)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mut cfg = PrompterConfig::new(ModelSize::Tiny);
        let steps = lm::load_model_config(&mut cfg, dir, PROMPTER_STEM)?;
        let mut p = Prompter::new(cfg, 0)?;
        lm::load_weights(&mut p.store, dir, PROMPTER_STEM)?;
        p.steps = steps;
        Ok(p)
    }

    pub fn predict_word(&self, tokens: &[TokenId], j: usize, cond: Conditioning) -> Result<Vec<f64>> {
        self.net.predict_word(&self.store, tokens, j, cond)
    }

    /// Replacement candidate for position `j`, drawn from the renormalized
    /// top-`k` non-reserved tokens.
    pub fn suggest<R: Rng>(&self, tokens: &[TokenId], j: usize, cond: Conditioning, k: usize, rng: &mut R) -> Result<TokenId> {
        suggest_from(self.predict_word(tokens, j, cond)?, k, rng)
    }

    pub fn config_text(&self) -> String {
        self.net.cfg.to_text()
    }
}

impl ReplacementSource for Prompter {
    fn propose(&mut self, tokens: &[TokenId], j: usize, cond: Conditioning, rng: &mut crate::Rng) -> Result<TokenId> {
        let k = self.net.cfg.top_k;
        self.suggest(tokens, j, cond, k, rng)
    }
}

/// Prompter training items: each quatrain with its conditioning.
pub fn prompter_examples(ds: &Dataset) -> Vec<(Quatrain, Conditioning)> {
    ds.examples.iter().map(|e| (e.quatrain.clone(), e.cond)).collect()
}

impl TokenModel for Prompter {
    type Item = (Quatrain, Conditioning);

    fn store(&self) -> &ParamStore<f32> {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.store
    }

    fn nll(&self, g: &mut Graph<'_, f32>, item: &Self::Item) -> Result<(Var, usize)> {
        self.net.nll(g, &item.0, item.1)
    }
}

/// Number of word positions a quatrain contributes to one training epoch.
pub fn positions_per_epoch(items: &[(Quatrain, Conditioning)]) -> usize {
    items
        .iter()
        .map(|(q, _)| q.tokens().iter().filter(|&&t| !is_marker(t)).count())
        .sum()
}

/// Vocabulary size helper for building a prompter from a dataset bundle.
pub fn prompter_config(size: ModelSize, vocab: &Vocab, n_authors: usize, n_schemes: usize) -> PrompterConfig {
    PrompterConfig::new(size).with_tables(vocab.len(), n_authors, n_schemes)
}
