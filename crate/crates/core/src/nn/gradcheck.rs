//! Central finite-difference oracle for analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use super::tensor::Scalar;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub h: f64,
    /// Coordinates sampled per parameter; all of them when `None`.
    pub max_coords_per_param: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            h: 1e-5,
            max_coords_per_param: Some(20),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter holding the worst coordinate.
    pub worst_param: Option<String>,
    pub coords_checked: usize,
}

/// `|a - b| / max(1e-8, |a| + |b|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

fn eval<T: Scalar, F>(store: &ParamStore<T>, f: &F) -> Result<f64>
where
    F: Fn(&mut Graph<'_, T>) -> Result<Var>,
{
    let mut g = Graph::new(store);
    let loss = f(&mut g)?;
    let v = g.value(loss);
    if v.numel() != 1 {
        return Err(Error::NonScalarLoss(v.shape().to_vec()));
    }
    let x = v.item().f64();
    if !x.is_finite() {
        return Err(Error::NonFinite("grad_check function value".into()));
    }
    Ok(x)
}

/// Compares backward-pass gradients of the scalar built by `f` against
/// central differences, over `params` (every parameter when empty).
pub fn grad_check<T: Scalar, F>(
    store: &mut ParamStore<T>,
    params: &[ParamId],
    f: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_, T>) -> Result<Var>,
{
    if opts.h <= 0.0 {
        return Err(Error::InvalidArgument("grad_check step must be positive".into()));
    }
    let grads = {
        let mut g = Graph::new(&*store);
        let loss = f(&mut g)?;
        if !g.value(loss).item().is_finite() {
            return Err(Error::NonFinite("grad_check function value".into()));
        }
        g.backward(loss)?
    };
    let ids: Vec<ParamId> = if params.is_empty() {
        store.ids().collect()
    } else {
        params.to_vec()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: None,
        coords_checked: 0,
    };
    let h = T::c(opts.h);
    for id in ids {
        let n = store.get(id).numel();
        let coords: Vec<usize> = match opts.max_coords_per_param {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        let analytic = grads.dense(id, store);
        for c in coords {
            let orig = store.get(id).data()[c];
            store.get_mut(id).data_mut()[c] = orig + h;
            let plus = eval(store, &f);
            store.get_mut(id).data_mut()[c] = orig - h;
            let minus = eval(store, &f);
            store.get_mut(id).data_mut()[c] = orig;
            let numeric = (plus? - minus?) / (2.0 * opts.h);
            let err = relative_error(analytic.data()[c].f64(), numeric);
            report.coords_checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_param = Some(store.name(id).to_string());
            }
        }
    }
    Ok(report)
}
