//! Finite-difference gradient checks over every graph op and every model
//! layer, in 64-bit arithmetic.

use std::fmt;
use std::rc::Rc;

use rand::Rng as _;

use crate::corpus::Vocab;
use crate::detector::{entropy, pick, DetectorConfig, DetectorNet};
use crate::error::Result;
use crate::generator::{GeneratorConfig, GeneratorNet, ModelSize};
use crate::nn::{grad_check, GradCheckOptions, Graph, Linear, OpKind, ParamId, ParamStore, Tensor, Var};
use crate::poem::{Conditioning, Quatrain, EOQ, EOV};
use crate::prompter::{PrompterConfig, PrompterNet};
use crate::rl::ppo_surrogate;
use crate::seq::{AdditiveAttention, BiLstm, CharEncoder, GruCell, LstmCell};

pub const TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckLine {
    pub name: &'static str,
    pub max_rel_error: f64,
    pub worst_param: Option<String>,
    pub coords: usize,
}

impl CheckLine {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= TOLERANCE
    }
}

impl fmt::Display for CheckLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<18} {} max_rel_err {:.3e} coords {}",
            self.name,
            if self.passed() { "PASS" } else { "FAIL" },
            self.max_rel_error,
            self.coords
        )?;
        if !self.passed() {
            if let Some(p) = &self.worst_param {
                write!(f, " worst {p}")?;
            }
        }
        Ok(())
    }
}

/// Op names accepted by [`parse_op`], one per differentiable op kind.
pub const OP_NAMES: [(&str, OpKind); 23] = [
    ("matmul", OpKind::MatMul),
    ("matmul_t", OpKind::MatMulT),
    ("add", OpKind::Add),
    ("sub", OpKind::Sub),
    ("mul", OpKind::Mul),
    ("scale", OpKind::Scale),
    ("add_scalar", OpKind::AddScalar),
    ("concat", OpKind::Concat),
    ("slice", OpKind::Slice),
    ("tanh", OpKind::Tanh),
    ("sigmoid", OpKind::Sigmoid),
    ("relu", OpKind::Relu),
    ("exp", OpKind::Exp),
    ("log", OpKind::Log),
    ("softmax", OpKind::Softmax),
    ("log_softmax", OpKind::LogSoftmax),
    ("embedding", OpKind::Embedding),
    ("sum", OpKind::Sum),
    ("mean", OpKind::Mean),
    ("transpose", OpKind::Transpose),
    ("gather", OpKind::Gather),
    ("minimum", OpKind::Minimum),
    ("clamp", OpKind::Clamp),
];

pub fn parse_op(name: &str) -> Option<OpKind> {
    OP_NAMES.iter().find(|(n, _)| *n == name).map(|&(_, k)| k)
}

/// Values in `[-1.2, 1.2]` kept at least 0.1 away from every kink.
fn values(rng: &mut crate::Rng, n: usize, kinks: &[f64]) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let mut v: f64 = rng.random_range(-1.2..1.2);
            while kinks.iter().any(|k| (v - k).abs() < 0.1) {
                v += 0.13;
            }
            v
        })
        .collect()
}

fn param(store: &mut ParamStore<f64>, rng: &mut crate::Rng, name: &str, shape: &[usize], kinks: &[f64]) -> ParamId {
    let n = shape.iter().product();
    store.add(name, Tensor::from_f64(shape, &values(rng, n, kinks)).expect("shape"))
}

/// `uᵀ·v·w` with fixed, sign-alternating `u` and `w`, so every entry of `v`
/// gets a distinct weight and only matmul is involved.
fn reduce(g: &mut Graph<'_, f64>, v: Var) -> Result<Var> {
    let (r, c) = (g.value(v).rows(), g.value(v).cols());
    let u: Vec<f64> = (0..r).map(|i| if i % 2 == 0 { 0.7 + 0.1 * i as f64 } else { -0.4 - 0.05 * i as f64 }).collect();
    let w: Vec<f64> = (0..c).map(|j| if j % 2 == 0 { 0.9 - 0.03 * j as f64 } else { -0.6 + 0.02 * j as f64 }).collect();
    let u = g.constant(Tensor::from_f64(&[1, r], &u)?);
    let w = g.constant(Tensor::from_f64(&[c, 1], &w)?);
    let uv = g.matmul(u, v)?;
    g.matmul(uv, w)
}

fn run<F>(name: &'static str, mut store: ParamStore<f64>, fault: Option<OpKind>, coords: usize, f: F) -> Result<CheckLine>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<Var>,
{
    let rep = grad_check(
        &mut store,
        &[],
        |g| {
            if let Some(k) = fault {
                g.inject_fault(k);
            }
            f(g)
        },
        &GradCheckOptions {
            max_coords_per_param: Some(coords),
            ..Default::default()
        },
    )?;
    Ok(CheckLine {
        name,
        max_rel_error: rep.max_rel_error,
        worst_param: rep.worst_param,
        coords: rep.coords_checked,
    })
}

fn op_checks(fault: Option<OpKind>, out: &mut Vec<CheckLine>) -> Result<()> {
    let mut rng = crate::rng_from_seed(17);
    let mut s = ParamStore::new();
    let x = param(&mut s, &mut rng, "x", &[3, 4], &[]);
    let y = param(&mut s, &mut rng, "y", &[3, 4], &[]);
    let base = s;
    let c = 24;

    let mut s = base.clone();
    let w = param(&mut s, &mut rng, "w", &[4, 2], &[]);
    out.push(run("matmul", s, fault, c, |g| {
        let (a, b) = (g.param(x), g.param(w));
        let m = g.matmul(a, b)?;
        reduce(g, m)
    })?);
    out.push(run("matmul_t", base.clone(), fault, c, |g| {
        let (a, b) = (g.param(x), g.param(y));
        let m = g.matmul_t(a, b)?;
        reduce(g, m)
    })?);
    let mut s = base.clone();
    let b = param(&mut s, &mut rng, "b", &[1, 4], &[]);
    out.push(run("add", s, fault, c, |g| {
        let (a, b) = (g.param(x), g.param(b));
        let m = g.add(a, b)?;
        reduce(g, m)
    })?);
    out.push(run("sub", base.clone(), fault, c, |g| {
        let (a, b) = (g.param(x), g.param(y));
        let m = g.sub(a, b)?;
        reduce(g, m)
    })?);
    out.push(run("mul", base.clone(), fault, c, |g| {
        let (a, b) = (g.param(x), g.param(y));
        let m = g.mul(a, b)?;
        reduce(g, m)
    })?);
    out.push(run("scale", base.clone(), fault, c, |g| {
        let a = g.param(x);
        let m = g.scale(a, -1.7);
        reduce(g, m)
    })?);
    out.push(run("add_scalar", base.clone(), fault, c, |g| {
        let a = g.param(x);
        let m = g.add_scalar(a, 0.3);
        reduce(g, m)
    })?);
    out.push(run("concat", base.clone(), fault, c, |g| {
        let (a, b) = (g.param(x), g.param(y));
        let rows = g.concat(&[a, b], 0)?;
        let cols = g.concat(&[a, b], 1)?;
        let r = reduce(g, rows)?;
        let q = reduce(g, cols)?;
        g.concat(&[r, q], 1).and_then(|v| reduce(g, v))
    })?);
    out.push(run("slice", base.clone(), fault, c, |g| {
        let a = g.param(x);
        let r = g.slice(a, 0, 1, 2)?;
        let q = g.slice(r, 1, 1, 3)?;
        reduce(g, q)
    })?);
    for name in ["tanh", "sigmoid", "relu", "exp", "transpose"] {
        let mut s = ParamStore::new();
        let z = param(&mut s, &mut rng, "z", &[3, 4], &[0.0]);
        out.push(run(name, s, fault, c, move |g| {
            let a = g.param(z);
            let m = match name {
                "tanh" => g.tanh(a),
                "sigmoid" => g.sigmoid(a),
                "relu" => g.relu(a),
                "exp" => g.exp(a),
                _ => g.transpose(a),
            };
            reduce(g, m)
        })?);
    }
    let mut s = ParamStore::new();
    let pos: Vec<f64> = values(&mut rng, 12, &[]).iter().map(|v| v.abs() + 0.3).collect();
    let p = s.add("p", Tensor::from_f64(&[3, 4], &pos)?);
    out.push(run("log", s, fault, c, |g| {
        let a = g.param(p);
        let m = g.log(a)?;
        reduce(g, m)
    })?);
    let mask: Rc<[bool]> = vec![true, true, false, true, true, false].into();
    let mut s = ParamStore::new();
    let l = param(&mut s, &mut rng, "l", &[1, 6], &[]);
    let m2 = mask.clone();
    out.push(run("softmax", s.clone(), fault, c, move |g| {
        let a = g.param(l);
        let m = g.masked_softmax(a, m2.clone())?;
        reduce(g, m)
    })?);
    out.push(run("log_softmax", s, fault, c, move |g| {
        let a = g.param(l);
        let m = g.masked_log_softmax(a, mask.clone())?;
        reduce(g, m)
    })?);
    let mut s = ParamStore::new();
    let t = param(&mut s, &mut rng, "table", &[5, 3], &[]);
    out.push(run("embedding", s, fault, c, |g| {
        let a = g.param(t);
        let m = g.embedding(a, &[1, 3, 3, 0])?;
        reduce(g, m)
    })?);
    out.push(run("sum", base.clone(), fault, c, |g| {
        let a = g.param(x);
        let m = g.sum(a);
        reduce(g, m)
    })?);
    out.push(run("mean", base.clone(), fault, c, |g| {
        let a = g.param(x);
        let m = g.mean(a);
        reduce(g, m)
    })?);
    out.push(run("gather", base.clone(), fault, c, |g| {
        let a = g.param(x);
        let m = g.gather(a, &[(0, 1), (2, 3), (0, 1), (1, 0)])?;
        reduce(g, m)
    })?);
    let mut s = ParamStore::new();
    let a0 = values(&mut rng, 12, &[]);
    let b0: Vec<f64> = a0.iter().enumerate().map(|(i, v)| if i % 2 == 0 { v + 0.4 } else { v - 0.4 }).collect();
    let ma = s.add("a", Tensor::from_f64(&[3, 4], &a0)?);
    let mb = s.add("b", Tensor::from_f64(&[3, 4], &b0)?);
    out.push(run("minimum", s, fault, c, |g| {
        let (a, b) = (g.param(ma), g.param(mb));
        let m = g.minimum(a, b)?;
        reduce(g, m)
    })?);
    let mut s = ParamStore::new();
    let z = param(&mut s, &mut rng, "z", &[3, 4], &[-0.5, 0.5]);
    out.push(run("clamp", s, fault, c, |g| {
        let a = g.param(z);
        let m = g.clamp(a, -0.5, 0.5);
        reduce(g, m)
    })?);
    Ok(())
}

fn scaled(store: &mut ParamStore<f64>, factor: f64, shift: f64) {
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = *v * factor + shift);
    }
}

fn layer_checks(fault: Option<OpKind>, out: &mut Vec<CheckLine>) -> Result<()> {
    let mut rng = crate::rng_from_seed(23);
    let inputs: Vec<Tensor<f64>> = (0..3)
        .map(|_| Tensor::from_f64(&[1, 3], &values(&mut rng, 3, &[])))
        .collect::<Result<_>>()?;

    let mut s = ParamStore::new();
    let cell = LstmCell::new(&mut s, "lstm", 3, 4, &mut rng);
    scaled(&mut s, 2.0, 0.05);
    let xs = inputs.clone();
    out.push(run("lstm", s, fault, 12, move |g| {
        let mut st = cell.zero_state(g, 1);
        for x in &xs {
            let xv = g.constant(x.clone());
            st = cell.step(g, xv, st)?;
        }
        let both = g.concat(&[st.h, st.c], 1)?;
        reduce(g, both)
    })?);

    let mut s = ParamStore::new();
    let cell = GruCell::new(&mut s, "gru", 3, 4, &mut rng);
    scaled(&mut s, 2.0, 0.05);
    let xs = inputs.clone();
    out.push(run("gru", s, fault, 12, move |g| {
        let mut h = g.constant(Tensor::zeros(&[1, 4]));
        for x in &xs {
            let xv = g.constant(x.clone());
            h = cell.step(g, xv, h)?;
        }
        reduce(g, h)
    })?);

    let mut s = ParamStore::new();
    let enc = BiLstm::new(&mut s, "bilstm", 3, 4, &mut rng);
    scaled(&mut s, 2.0, 0.05);
    let seq = Tensor::from_f64(&[4, 3], &values(&mut rng, 12, &[]))?;
    out.push(run("bilstm", s, fault, 12, move |g| {
        let xv = g.constant(seq.clone());
        let h = enc.encode(g, xv)?;
        reduce(g, h.matrix)
    })?);

    let mut s = ParamStore::new();
    let chars = CharEncoder::new(&mut s, "chars", 6, 3, 4, 3, &mut rng);
    scaled(&mut s, 3.0, 0.05);
    out.push(run("char_encoder", s, fault, 12, move |g| {
        let m = chars.encode_batch(g, &[&[1, 2, 3], &[4, 5], &[2, 2, 1]])?;
        reduce(g, m)
    })?);

    let mut s = ParamStore::new();
    let attn = AdditiveAttention::new(&mut s, "attn", 3, 4, 5, &mut rng);
    let q = param(&mut s, &mut rng, "query", &[1, 3], &[]);
    let h = param(&mut s, &mut rng, "keys", &[4, 4], &[]);
    scaled(&mut s, 2.0, 0.0);
    out.push(run("attention", s, fault, 12, move |g| {
        let (qv, hv) = (g.param(q), g.param(h));
        let (ctx, weights) = attn.forward(g, qv, hv)?;
        let both = g.concat(&[ctx, weights], 1)?;
        reduce(g, both)
    })?);

    let mut s = ParamStore::new();
    let l1 = Linear::new(&mut s, "mlp.hidden", 4, 5, true, &mut rng);
    let l2 = Linear::new(&mut s, "mlp.out", 5, 3, true, &mut rng);
    let x = param(&mut s, &mut rng, "x", &[2, 4], &[]);
    scaled(&mut s, 1.5, 0.05);
    out.push(run("mlp", s, fault, 12, move |g| {
        let xv = g.param(x);
        let hid = l1.forward(g, xv)?;
        let hid = g.tanh(hid);
        let o = l2.forward(g, hid)?;
        reduce(g, o)
    })?);

    let vocab = Vocab::build(["the", "cat", "sat", "on", "mat", "dog", "ran", "far"], 100);
    let mut s = ParamStore::new();
    let cfg = GeneratorConfig::new(ModelSize::Tiny).with_tables(&vocab, 3, 4);
    let gen = GeneratorNet::new(&mut s, cfg, &vocab, &mut rng)?;
    scaled(&mut s, 4.0, 0.0);
    out.push(run("generator_nll", s, fault, 4, move |g| {
        Ok(gen.nll(g, &[5, 6, EOV], &[7, EOV, 8, EOQ], Conditioning::new(1, 1))?.0)
    })?);

    let poem = Quatrain::from_tokens(vec![5, 6, EOV, 7, 8, EOV, 9, EOV, 10, 11, EOQ])?;
    let mut s = ParamStore::new();
    let pro = PrompterNet::new(&mut s, PrompterConfig::new(ModelSize::Tiny).with_tables(20, 3, 4), &mut rng)?;
    scaled(&mut s, 3.0, 0.05);
    let q = poem.clone();
    out.push(run("prompter_nll", s, fault, 5, move |g| Ok(pro.nll(g, &q, Conditioning::new(2, 1))?.0))?);

    let mut dcfg = DetectorConfig::new(ModelSize::Tiny);
    dcfg.vocab_size = 20;
    dcfg.n_authors = 3;
    dcfg.n_schemes = 4;
    let mut s = ParamStore::new();
    let det = DetectorNet::new(&mut s, dcfg, &mut rng)?;
    scaled(&mut s, 3.0, 0.02);
    // Undo the small output init so the policy is far from uniform, where
    // entropy gradients vanish.
    let out_w = s.id("det.out.w").expect("output layer");
    s.get_mut(out_w).scale_assign(100.0);
    let cond = Conditioning::new(2, 3);
    let (d, q) = (det.clone(), poem.clone());
    out.push(run("policy_log_prob", s.clone(), fault, 5, move |g| {
        let v = d.policy(g, &q, cond)?;
        Ok(pick(&d, g, v, 4, q.num_words())?.0)
    })?);
    let (d, q) = (det.clone(), poem.clone());
    out.push(run("value_loss", s.clone(), fault, 5, move |g| {
        let v = d.policy(g, &q, cond)?;
        let e = g.add_scalar(v.value, 2.5);
        g.mul(e, e)
    })?);
    let (d, q) = (det.clone(), poem.clone());
    out.push(run("policy_entropy", s.clone(), fault, 5, move |g| {
        let v = d.policy(g, &q, cond)?;
        entropy(g, v)
    })?);
    // One sample inside the clip range, one clipped on the pessimistic side.
    let lp0 = {
        let mut g = Graph::new(&s);
        let v = det.policy(&mut g, &poem, cond)?;
        let (lp, _, _) = pick(&det, &mut g, v, 4, poem.num_words())?;
        g.value(lp).item()
    };
    let q = poem;
    out.push(run("ppo_surrogate", s, fault, 5, move |g| {
        let v = det.policy(g, &q, cond)?;
        let (lp, _, _) = pick(&det, g, v, 4, q.num_words())?;
        let a = ppo_surrogate(g, lp, lp0 - 1.05f64.ln(), 0.7, 0.2)?;
        let b = ppo_surrogate(g, lp, lp0 - 1.5f64.ln(), -0.4, 0.2)?;
        g.add(a, b)
    })?);
    Ok(())
}

/// Every op and layer check; `fault` flips the sign of one op kind's
/// backward pass.
pub fn run_checks(fault: Option<OpKind>) -> Result<Vec<CheckLine>> {
    let mut out = Vec::new();
    op_checks(fault, &mut out)?;
    layer_checks(fault, &mut out)?;
    Ok(out)
}
