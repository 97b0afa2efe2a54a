//! Token sampling strategies over an explicit probability vector.

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Strategy {
    Multinomial,
    TopK(usize),
    /// Nucleus sampling with mass threshold `p`.
    Nucleus(f64),
}

impl Strategy {
    pub fn validate(self) -> Result<Self> {
        match self {
            Strategy::TopK(0) => Err(Error::InvalidArgument("top-k needs k >= 1".into())),
            Strategy::Nucleus(p) if !(p > 0.0 && p <= 1.0) => {
                Err(Error::InvalidArgument(format!("nucleus p must lie in (0, 1], got {p}")))
            }
            s => Ok(s),
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    /// `multinomial`, `greedy`, `top-k:K` or `nucleus:P`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown sampling strategy `{s}`"));
        let st = match s.split_once(':') {
            None if s == "multinomial" => Strategy::Multinomial,
            None if s == "greedy" => Strategy::TopK(1),
            Some(("top-k", k)) => Strategy::TopK(k.parse().map_err(|_| bad())?),
            Some(("nucleus", p)) => Strategy::Nucleus(p.parse().map_err(|_| bad())?),
            _ => return Err(bad()),
        };
        st.validate()
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Strategy::Multinomial => f.write_str("multinomial"),
            Strategy::TopK(k) => write!(f, "top-k:{k}"),
            Strategy::Nucleus(p) => write!(f, "nucleus:{p}"),
        }
    }
}

/// Ids ordered by decreasing probability, ties by increasing id.
fn ranked(probs: &[f64]) -> Vec<usize> {
    let mut ix: Vec<usize> = (0..probs.len()).collect();
    ix.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    ix
}

/// The renormalized distribution a strategy draws from, as `(id, prob)`
/// pairs in decreasing probability order. Zero-probability ids are never
/// part of the support.
pub fn support(probs: &[f64], strategy: Strategy) -> Result<Vec<(usize, f64)>> {
    strategy.validate()?;
    if probs.is_empty() || probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::InvalidArgument("probabilities must be finite and non-negative".into()));
    }
    let total: f64 = probs.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidArgument("distribution has no mass".into()));
    }
    let order: Vec<usize> = ranked(probs).into_iter().filter(|&i| probs[i] > 0.0).collect();
    let keep = match strategy {
        Strategy::Multinomial => order.len(),
        Strategy::TopK(k) => k.min(order.len()),
        Strategy::Nucleus(p) => {
            let mut mass = 0.0;
            let mut n = order.len();
            for (i, &id) in order.iter().enumerate() {
                mass += probs[id] / total;
                // A small slack keeps p = 1 from failing on rounding.
                if mass >= p - 1e-12 {
                    n = i + 1;
                    break;
                }
            }
            n
        }
    };
    let kept = &order[..keep];
    let z: f64 = kept.iter().map(|&i| probs[i]).sum();
    Ok(kept.iter().map(|&i| (i, probs[i] / z)).collect())
}

/// Categorical draw from `(id, prob)` pairs using one uniform number.
pub fn draw<R: Rng>(dist: &[(usize, f64)], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &(id, p) in dist {
        acc += p;
        if u < acc {
            return id;
        }
    }
    dist.last().expect("non-empty support").0
}

pub fn sample_token<R: Rng>(probs: &[f64], strategy: Strategy, rng: &mut R) -> Result<usize> {
    Ok(draw(&support(probs, strategy)?, rng))
}
