//! Recurrent building blocks: LSTM and GRU cells, a bidirectional LSTM
//! encoder, the character-aware word encoder and additive attention.
//!
//! Every block is a pure function of its inputs and the parameters it reads
//! from the graph's store; rows of an input matrix are independent batch
//! entries unless stated otherwise.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::nn::{init_fan_in, init_normal, Graph, Linear, ParamId, ParamStore, Scalar, Tensor, Var};

/// Hidden and cell vectors of an LSTM.
#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

/// LSTM cell with gates laid out as `[input, forget, candidate, output]`.
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let wx = store.add(format!("{name}.wx"), init_fan_in(rng, input, 4 * hidden));
        let wh = store.add(format!("{name}.wh"), init_fan_in(rng, hidden, 4 * hidden));
        let mut bias = Tensor::zeros(&[1, 4 * hidden]);
        for v in &mut bias.data_mut()[hidden..2 * hidden] {
            *v = T::one();
        }
        let b = store.add(format!("{name}.b"), bias);
        LstmCell {
            wx,
            wh,
            b,
            input,
            hidden,
        }
    }

    pub fn zero_state<T: Scalar>(&self, g: &mut Graph<'_, T>, rows: usize) -> LstmState {
        let h = g.constant(Tensor::zeros(&[rows, self.hidden]));
        let c = g.constant(Tensor::zeros(&[rows, self.hidden]));
        LstmState { h, c }
    }

    /// `x·Wx + b` for every row of `x`.
    pub fn project_input<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        if g.value(x).cols() != self.input {
            return shape_err(
                "lstm_cell_step",
                format!("input {:?}, expected {} columns", g.shape(x), self.input),
            );
        }
        let wx = g.param(self.wx);
        let b = g.param(self.b);
        let p = g.matmul(x, wx)?;
        g.add(p, b)
    }

    pub fn step<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var, state: LstmState) -> Result<LstmState> {
        let xp = self.project_input(g, x)?;
        self.step_projected(g, xp, state)
    }

    /// One step given a precomputed input projection.
    pub fn step_projected<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        xproj: Var,
        state: LstmState,
    ) -> Result<LstmState> {
        let hd = self.hidden;
        if g.value(state.h).cols() != hd || g.value(state.c).cols() != hd {
            return shape_err("lstm_cell_step", format!("state {:?}", g.shape(state.h)));
        }
        let wh = g.param(self.wh);
        let hp = g.matmul(state.h, wh)?;
        let pre = g.add(xproj, hp)?;
        let i = g.slice(pre, 1, 0, hd)?;
        let f = g.slice(pre, 1, hd, hd)?;
        let cand = g.slice(pre, 1, 2 * hd, hd)?;
        let o = g.slice(pre, 1, 3 * hd, hd)?;
        let i = g.sigmoid(i);
        let f = g.sigmoid(f);
        let cand = g.tanh(cand);
        let o = g.sigmoid(o);
        let keep = g.mul(f, state.c)?;
        let write = g.mul(i, cand)?;
        let c = g.add(keep, write)?;
        let tc = g.tanh(c);
        let h = g.mul(o, tc)?;
        Ok(LstmState { h, c })
    }

    /// Runs over the rows of `xs` (one time step per row), left to right or
    /// right to left. Returned states are indexed by input position.
    pub fn run<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        xs: Var,
        reverse: bool,
        init: Option<LstmState>,
    ) -> Result<Vec<LstmState>> {
        let n = g.value(xs).rows();
        let proj = self.project_input(g, xs)?;
        let mut state = init.unwrap_or_else(|| self.zero_state(g, 1));
        let mut out = Vec::with_capacity(n);
        let order: Vec<usize> = if reverse { (0..n).rev().collect() } else { (0..n).collect() };
        for &t in &order {
            let xp = if n == 1 { proj } else { g.slice(proj, 0, t, 1)? };
            state = self.step_projected(g, xp, state)?;
            out.push(state);
        }
        if reverse {
            out.reverse();
        }
        Ok(out)
    }
}

/// GRU cell: `z = σ(xWz + hUz)`, `r = σ(xWr + hUr)`,
/// `n = tanh(xWn + (r⊙h)Un)`, `h' = (1 - z)⊙n + z⊙h` (biases omitted).
#[derive(Clone, Debug)]
pub struct GruCell {
    pub wx: ParamId,
    pub uzr: ParamId,
    pub un: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl GruCell {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let wx = store.add(format!("{name}.wx"), init_fan_in(rng, input, 3 * hidden));
        let uzr = store.add(format!("{name}.uzr"), init_fan_in(rng, hidden, 2 * hidden));
        let un = store.add(format!("{name}.un"), init_fan_in(rng, hidden, hidden));
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[1, 3 * hidden]));
        GruCell {
            wx,
            uzr,
            un,
            b,
            input,
            hidden,
        }
    }

    pub fn step<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var, h: Var) -> Result<Var> {
        let hd = self.hidden;
        if g.value(x).cols() != self.input || g.value(h).cols() != hd {
            return shape_err(
                "gru_cell_step",
                format!("input {:?} state {:?}", g.shape(x), g.shape(h)),
            );
        }
        let wx = g.param(self.wx);
        let b = g.param(self.b);
        let xp = g.matmul(x, wx)?;
        let xp = g.add(xp, b)?;
        let uzr = g.param(self.uzr);
        let hzr = g.matmul(h, uzr)?;
        let xzr = g.slice(xp, 1, 0, 2 * hd)?;
        let zr = g.add(xzr, hzr)?;
        let zr = g.sigmoid(zr);
        let z = g.slice(zr, 1, 0, hd)?;
        let r = g.slice(zr, 1, hd, hd)?;
        let rh = g.mul(r, h)?;
        let un = g.param(self.un);
        let hn = g.matmul(rh, un)?;
        let xn = g.slice(xp, 1, 2 * hd, hd)?;
        let n = g.add(xn, hn)?;
        let n = g.tanh(n);
        // h' = n + z⊙(h - n)
        let d = g.sub(h, n)?;
        let zd = g.mul(z, d)?;
        g.add(n, zd)
    }
}

/// Per-position encodings `h_j = [forward_j ; backward_j]`.
#[derive(Clone, Debug)]
pub struct EncoderOutput {
    /// `n × 2·hidden` matrix, one row per input token.
    pub matrix: Var,
    pub forward: Vec<Var>,
    pub backward: Vec<Var>,
}

impl EncoderOutput {
    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct BiLstm {
    pub fwd: LstmCell,
    pub bwd: LstmCell,
}

impl BiLstm {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        BiLstm {
            fwd: LstmCell::new(store, &format!("{name}.fwd"), input, hidden, rng),
            bwd: LstmCell::new(store, &format!("{name}.bwd"), input, hidden, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.fwd.hidden
    }

    /// Encodes the rows of `xs` as one sequence.
    pub fn encode<T: Scalar>(&self, g: &mut Graph<'_, T>, xs: Var) -> Result<EncoderOutput> {
        self.encode_from(g, xs, None, None)
    }

    /// As [`BiLstm::encode`], with explicit initial states for the two
    /// directions.
    pub fn encode_from<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        xs: Var,
        fwd_init: Option<LstmState>,
        bwd_init: Option<LstmState>,
    ) -> Result<EncoderOutput> {
        if g.value(xs).rows() == 0 {
            return Err(Error::InvalidArgument("bilstm_encode: empty sequence".into()));
        }
        let f = self.fwd.run(g, xs, false, fwd_init)?;
        let b = self.bwd.run(g, xs, true, bwd_init)?;
        let forward: Vec<Var> = f.iter().map(|s| s.h).collect();
        let backward: Vec<Var> = b.iter().map(|s| s.h).collect();
        let fm = g.concat(&forward, 0)?;
        let bm = g.concat(&backward, 0)?;
        let matrix = g.concat(&[fm, bm], 1)?;
        Ok(EncoderOutput {
            matrix,
            forward,
            backward,
        })
    }
}

pub const CHAR_PAD: usize = 0;
pub const CHAR_UNK: usize = 1;

/// Character inventory of the char-aware word encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct CharVocab {
    chars: Vec<char>,
    index: HashMap<char, usize>,
}

impl CharVocab {
    /// Every character of `words`, in sorted order, after PAD and UNK.
    pub fn from_words<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        let mut set: Vec<char> = words.into_iter().flat_map(str::chars).collect();
        set.sort_unstable();
        set.dedup();
        let index = set.iter().enumerate().map(|(i, &c)| (c, i + 2)).collect();
        CharVocab { chars: set, index }
    }

    pub fn len(&self) -> usize {
        self.chars.len() + 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, c: char) -> usize {
        self.index.get(&c).copied().unwrap_or(CHAR_UNK)
    }

    pub fn encode(&self, word: &str) -> Vec<usize> {
        word.chars().map(|c| self.id(c)).collect()
    }
}

/// Bi-LSTM over a word's characters followed by a linear projection of the
/// two final states.
#[derive(Clone, Debug)]
pub struct CharEncoder {
    pub emb: ParamId,
    pub rnn: BiLstm,
    pub proj: Linear,
    pub out_dim: usize,
}

impl CharEncoder {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        n_chars: usize,
        char_dim: usize,
        hidden: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let emb = store.add(format!("{name}.emb"), init_normal(rng, &[n_chars, char_dim], 0.1));
        let rnn = BiLstm::new(store, &format!("{name}.rnn"), char_dim, hidden, rng);
        let proj = Linear::new(store, &format!("{name}.proj"), 2 * hidden, out_dim, true, rng);
        CharEncoder {
            emb,
            rnn,
            proj,
            out_dim,
        }
    }

    /// Vector of a single word.
    pub fn encode<T: Scalar>(&self, g: &mut Graph<'_, T>, chars: &[usize]) -> Result<Var> {
        self.encode_batch(g, &[chars])
    }

    /// Encodes several words at once; row `i` of the result belongs to
    /// `words[i]`. Words of equal length share recurrent steps.
    pub fn encode_batch<T: Scalar>(&self, g: &mut Graph<'_, T>, words: &[&[usize]]) -> Result<Var> {
        if words.is_empty() || words.iter().any(|w| w.is_empty()) {
            return Err(Error::InvalidArgument("char_word_encode: empty word".into()));
        }
        let mut by_len: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, w) in words.iter().enumerate() {
            by_len.entry(w.len()).or_default().push(i);
        }
        let emb = g.param(self.emb);
        let hd = self.rnn.hidden();
        let mut finals = Vec::new();
        let mut row_of = vec![0usize; words.len()];
        let mut next_row = 0;
        for (len, members) in &by_len {
            let b = members.len();
            let steps: Vec<Var> = (0..*len)
                .map(|t| {
                    let ids: Vec<usize> = members.iter().map(|&m| words[m][t]).collect();
                    g.embedding(emb, &ids)
                })
                .collect::<Result<_>>()?;
            let mut fs = self.rnn.fwd.zero_state(g, b);
            for &x in &steps {
                fs = self.rnn.fwd.step(g, x, fs)?;
            }
            let mut bs = self.rnn.bwd.zero_state(g, b);
            for &x in steps.iter().rev() {
                bs = self.rnn.bwd.step(g, x, bs)?;
            }
            finals.push(g.concat(&[fs.h, bs.h], 1)?);
            for &m in members {
                row_of[m] = next_row;
                next_row += 1;
            }
        }
        debug_assert_eq!(g.value(finals[0]).cols(), 2 * hd);
        let stacked = g.concat(&finals, 0)?;
        let ordered = g.embedding(stacked, &row_of)?;
        self.proj.forward(g, ordered)
    }
}

/// Bahdanau scoring `e_j = vᵀ tanh(W·q + U·h_j)`, `α = softmax(e)`,
/// `c = Σ α_j h_j`.
#[derive(Clone, Debug)]
pub struct AdditiveAttention {
    pub w: ParamId,
    pub u: ParamId,
    pub v: ParamId,
    pub query_dim: usize,
    pub key_dim: usize,
    pub attn_dim: usize,
}

impl AdditiveAttention {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        query_dim: usize,
        key_dim: usize,
        attn_dim: usize,
        rng: &mut R,
    ) -> Self {
        AdditiveAttention {
            w: store.add(format!("{name}.w"), init_fan_in(rng, query_dim, attn_dim)),
            u: store.add(format!("{name}.u"), init_fan_in(rng, key_dim, attn_dim)),
            v: store.add(format!("{name}.v"), init_fan_in(rng, attn_dim, 1)),
            query_dim,
            key_dim,
            attn_dim,
        }
    }

    /// `H·U`, reusable across queries against the same encoding.
    pub fn keys<T: Scalar>(&self, g: &mut Graph<'_, T>, h: Var) -> Result<Var> {
        if g.value(h).cols() != self.key_dim {
            return shape_err(
                "additive_attention",
                format!("keys {:?}, expected {} columns", g.shape(h), self.key_dim),
            );
        }
        let u = g.param(self.u);
        g.matmul(h, u)
    }

    /// Returns `(context 1×key_dim, weights 1×n)`.
    pub fn attend<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        query: Var,
        h: Var,
        keys: Var,
    ) -> Result<(Var, Var)> {
        if g.value(query).cols() != self.query_dim || g.value(query).rows() != 1 {
            return shape_err(
                "additive_attention",
                format!("query {:?}, expected 1×{}", g.shape(query), self.query_dim),
            );
        }
        let w = g.param(self.w);
        let qw = g.matmul(query, w)?;
        let pre = g.add(keys, qw)?;
        let act = g.tanh(pre);
        let v = g.param(self.v);
        let e = g.matmul(act, v)?;
        let e = g.transpose(e);
        let alpha = g.softmax(e);
        let ctx = g.matmul(alpha, h)?;
        Ok((ctx, alpha))
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, query: Var, h: Var) -> Result<(Var, Var)> {
        if g.value(h).rows() == 0 {
            return Err(Error::InvalidArgument("additive_attention: empty encoding".into()));
        }
        let keys = self.keys(g, h)?;
        self.attend(g, query, h, keys)
    }
}
