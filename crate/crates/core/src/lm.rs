//! Teacher-forced training and evaluation shared by the generator and the
//! prompter.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::config::{parse_kv_text, KvConfig};
use crate::error::{Error, Result};
use crate::nn::{checkpoint, AdamConfig, AdamState, Gradients, Graph, ParamId, ParamStore, Var};

/// A model trained by minimizing summed token negative log-likelihood.
pub trait TokenModel {
    type Item;

    fn store(&self) -> &ParamStore<f32>;
    fn store_mut(&mut self) -> &mut ParamStore<f32>;

    /// Parameters the optimizer updates.
    fn trainable(&self) -> Vec<ParamId> {
        self.store().ids().collect()
    }

    /// Summed negative log-likelihood of `item` and the number of predicted
    /// tokens it covers.
    fn nll(&self, g: &mut Graph<'_, f32>, item: &Self::Item) -> Result<(Var, usize)>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: Option<usize>,
    pub seed: u64,
    pub max_steps: Option<u64>,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            epochs: 20,
            batch_size: 8,
            lr: 1e-3,
            patience: Some(3),
            seed: 0,
            max_steps: None,
        }
    }
}

crate::kv_config!(FitConfig {
    epochs,
    batch_size,
    lr,
    patience,
    seed,
    max_steps
});

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub steps: u64,
    /// Mean training NLL per token over the epoch's batches.
    pub train_nll: f64,
    pub val_ppl: Option<f64>,
}

/// Total NLL and token count over `items`, without gradients.
pub fn evaluate<M: TokenModel>(model: &M, items: &[M::Item]) -> Result<(f64, usize)> {
    let mut total = 0.0;
    let mut count = 0;
    for item in items {
        let mut g = Graph::new(model.store());
        let (loss, n) = model.nll(&mut g, item)?;
        total += g.value(loss).item() as f64;
        count += n;
    }
    Ok((total, count))
}

/// `exp(total NLL / total tokens)`.
pub fn perplexity<M: TokenModel>(model: &M, items: &[M::Item]) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::InvalidArgument("perplexity of an empty dataset".into()));
    }
    let (total, count) = evaluate(model, items)?;
    Ok((total / count.max(1) as f64).exp())
}

/// One optimizer step on the per-token mean NLL of `batch`; returns that
/// mean.
pub fn train_step<M: TokenModel>(model: &mut M, adam: &mut AdamState<f32>, batch: &[&M::Item]) -> Result<f64> {
    let mut grads = Gradients::empty(model.store().len());
    let mut total = 0.0;
    let mut count = 0;
    let mut per_item = Vec::with_capacity(batch.len());
    for item in batch {
        let mut g = Graph::new(model.store());
        let (loss, n) = model.nll(&mut g, item)?;
        total += g.value(loss).item() as f64;
        count += n;
        per_item.push(g.backward(loss)?);
    }
    for gi in &per_item {
        grads.add(gi);
    }
    grads.scale(1.0 / count.max(1) as f32);
    let trainable = model.trainable();
    adam.step(model.store_mut(), &mut grads, &trainable)?;
    Ok(total / count.max(1) as f64)
}

/// Shuffled minibatch training with per-epoch validation perplexity and
/// early stopping. The best validation parameters are restored at the end.
pub fn fit<M: TokenModel>(
    model: &mut M,
    adam: &mut AdamState<f32>,
    train: &[M::Item],
    val: &[M::Item],
    cfg: &FitConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<Vec<EpochMetrics>> {
    if train.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    adam.config.lr = cfg.lr;
    let mut rng = crate::rng_from_seed(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, ParamStore<f32>)> = None;
    let mut stale = 0;
    'epochs: for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            if cfg.max_steps.is_some_and(|m| adam.step_count() >= m) {
                if batches == 0 {
                    break 'epochs;
                }
                break;
            }
            let batch: Vec<&M::Item> = chunk.iter().map(|&i| &train[i]).collect();
            sum += train_step(model, adam, &batch)?;
            batches += 1;
        }
        let val_ppl = if val.is_empty() { None } else { Some(perplexity(model, val)?) };
        let m = EpochMetrics {
            epoch,
            steps: adam.step_count(),
            train_nll: sum / batches.max(1) as f64,
            val_ppl,
        };
        log::info!(
            "epoch {epoch} steps {} train_nll {:.4} val_ppl {}",
            m.steps,
            m.train_nll,
            val_ppl.map_or("-".into(), |p| format!("{p:.3}"))
        );
        on_epoch(&m);
        history.push(m);
        if let Some(p) = val_ppl {
            if best.as_ref().is_none_or(|(b, _)| p < *b) {
                best = Some((p, model.store().clone()));
                stale = 0;
            } else {
                stale += 1;
                if cfg.patience.is_some_and(|pat| stale >= pat) {
                    log::info!("validation plateau after epoch {epoch}");
                    break;
                }
            }
        }
    }
    if let Some((_, store)) = best {
        *model.store_mut() = store;
    }
    Ok(history)
}

pub fn adam_for(store: &ParamStore<f32>, lr: f64) -> AdamState<f32> {
    AdamState::new(AdamConfig::with_lr(lr), store)
}

/// Writes `<stem>.ckpt` and a `<stem>.cfg` sidecar holding the model
/// configuration and the optimizer step counter.
pub fn save_model<C: KvConfig>(store: &ParamStore<f32>, cfg: &C, steps: u64, dir: &Path, stem: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    checkpoint::save(store, dir.join(format!("{stem}.ckpt")))?;
    let mut text = cfg.to_text();
    text.push_str(&format!("steps={steps}\n"));
    fs::write(dir.join(format!("{stem}.cfg")), text)?;
    Ok(())
}

/// Reads a sidecar written by [`save_model`] into `cfg`; returns the step
/// counter.
pub fn load_model_config<C: KvConfig>(cfg: &mut C, dir: &Path, stem: &str) -> Result<u64> {
    let path = dir.join(format!("{stem}.cfg"));
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    let mut map = parse_kv_text(&text, &path.display().to_string())?;
    let steps = map
        .remove("steps")
        .map(|s| s.parse().map_err(|_| Error::Config("bad steps".into())))
        .transpose()?
        .unwrap_or(0);
    cfg.apply(&map)?;
    Ok(steps)
}

pub fn load_weights(store: &mut ParamStore<f32>, dir: &Path, stem: &str) -> Result<()> {
    let n = checkpoint::load_into(store, dir.join(format!("{stem}.ckpt")))?;
    if n != store.len() {
        return Err(Error::Checkpoint(format!(
            "{stem}.ckpt holds {n} of {} expected tensors",
            store.len()
        )));
    }
    Ok(())
}
