//! On-policy training of the detector: trajectory collection, returns,
//! generalized advantage estimation, and VPG / clipped-PPO updates run in
//! collect-then-update cycles ("volleys").

use std::collections::HashMap;
use std::path::Path;
use std::rc::Rc;

use rand::seq::SliceRandom;

use crate::detector::{pick, policy_output, select_action, Detector, PolicyOutput};
use crate::env::{Action, EnvState, Environment};
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, AdamState, Gradients, Graph, Scalar, Tensor, Var};
use crate::poem::{Conditioning, Quatrain, TokenId};
use crate::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Algo {
    Vpg,
    Ppo,
}

impl std::str::FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vpg" => Ok(Algo::Vpg),
            "ppo" => Ok(Algo::Ppo),
            _ => Err(Error::Config(format!("unknown algorithm `{s}`"))),
        }
    }
}

impl std::fmt::Display for Algo {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Algo::Vpg => "vpg",
            Algo::Ppo => "ppo",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VolleyConfig {
    pub episodes_per_volley: Option<usize>,
    /// Minimum steps per volley; the last episode always runs to its end.
    pub steps_per_volley: Option<usize>,
    pub volleys: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub clip_eps: f64,
    pub epochs: usize,
    pub target_kl: f64,
    /// Transitions per PPO minibatch.
    pub minibatch: usize,
    pub policy_lr: f64,
    pub value_lr: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
}

impl Default for VolleyConfig {
    fn default() -> Self {
        VolleyConfig {
            episodes_per_volley: Some(1000),
            steps_per_volley: None,
            volleys: 10,
            gamma: 0.99,
            lambda: 0.95,
            clip_eps: 0.2,
            epochs: 10,
            target_kl: 0.015,
            minibatch: 256,
            policy_lr: 3e-4,
            value_lr: 1e-3,
            value_coef: 0.5,
            entropy_coef: 0.0,
        }
    }
}

crate::kv_config!(VolleyConfig {
    episodes_per_volley,
    steps_per_volley,
    volleys,
    gamma,
    lambda,
    clip_eps,
    epochs,
    target_kl,
    minibatch,
    policy_lr,
    value_lr,
    value_coef,
    entropy_coef,
});

impl VolleyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes_per_volley.is_some() == self.steps_per_volley.is_some() {
            return Err(Error::Config(
                "set exactly one of episodes_per_volley and steps_per_volley".into(),
            ));
        }
        if self.episodes_per_volley == Some(0) || self.steps_per_volley == Some(0) {
            return Err(Error::Config("volley size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config("gamma and lambda must lie in [0, 1]".into()));
        }
        if self.clip_eps <= 0.0 || self.epochs == 0 || self.minibatch == 0 {
            return Err(Error::Config("clip_eps, epochs and minibatch must be positive".into()));
        }
        if self.policy_lr <= 0.0 || self.value_lr <= 0.0 {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        Ok(())
    }
}

/// `G_t = r_t + γ·G_{t+1}` with `G` after the last step equal to 0.
pub fn rewards_to_go(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// `Â_t = δ_t + γλ·Â_{t+1}`, `δ_t = r_t + γ·V(s_{t+1}) - V(s_t)`, where the
/// value after the last step is `bootstrap` (0 for a finished episode).
pub fn gae(rewards: &[f64], values: &[f64], bootstrap: f64, gamma: f64, lambda: f64) -> Result<Vec<f64>> {
    if rewards.len() != values.len() {
        return Err(Error::InvalidArgument(format!(
            "gae: {} rewards but {} values",
            rewards.len(),
            values.len()
        )));
    }
    let n = rewards.len();
    let mut out = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let next = if t + 1 < n { values[t + 1] } else { bootstrap };
        let delta = rewards[t] + gamma * next - values[t];
        acc = delta + gamma * lambda * acc;
        out[t] = acc;
    }
    Ok(out)
}

/// Shifts to mean 0 and scales to (population) standard deviation 1; a
/// constant vector becomes all zeros.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    for a in adv.iter_mut() {
        *a = if std > 1e-12 { (*a - mean) / std } else { 0.0 };
    }
}

/// Per-sample clipped surrogate `min(ρÂ, clip(ρ, 1-ε, 1+ε)·Â)`.
pub fn clipped_objective(ratio: f64, adv: f64, eps: f64) -> f64 {
    (ratio * adv).min(ratio.clamp(1.0 - eps, 1.0 + eps) * adv)
}

/// A visited state. Consecutive steps that leave the poem unchanged share
/// one record.
#[derive(Clone, Debug)]
pub struct StateRecord {
    pub poem: Quatrain,
    pub cond: Conditioning,
    /// Frozen encoder output, when the encoder is not trained.
    pub features: Option<Rc<Tensor<f32>>>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub log_prob: f64,
    pub reward: f64,
    pub value: f64,
    pub done: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeRecord {
    /// Undiscounted total reward.
    pub reward: f64,
    pub length: usize,
    pub goal: bool,
}

#[derive(Clone, Debug, Default)]
pub struct TrajectoryBuffer {
    pub states: Vec<StateRecord>,
    pub transitions: Vec<Transition>,
    /// Half-open transition ranges, one per episode.
    pub episodes: Vec<(usize, usize)>,
    pub returns: Vec<f64>,
    pub advantages: Vec<f64>,
    pub discarded: usize,
}

impl TrajectoryBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn episode_records(&self) -> Vec<EpisodeRecord> {
        self.episodes
            .iter()
            .map(|&(a, b)| {
                let tr = &self.transitions[a..b];
                EpisodeRecord {
                    reward: tr.iter().map(|t| t.reward).sum(),
                    length: b - a,
                    goal: tr.last().is_some_and(|t| t.reward > 0.0),
                }
            })
            .collect()
    }

    /// Rewards-to-go, GAE and buffer-wide advantage normalization.
    pub fn finish(&mut self, gamma: f64, lambda: f64) -> Result<()> {
        self.returns = vec![0.0; self.len()];
        self.advantages = vec![0.0; self.len()];
        for &(a, b) in &self.episodes {
            let tr = &self.transitions[a..b];
            if !tr.last().is_some_and(|t| t.done) {
                return Err(Error::InvalidArgument("episode in buffer does not end with done".into()));
            }
            let r: Vec<f64> = tr.iter().map(|t| t.reward).collect();
            let v: Vec<f64> = tr.iter().map(|t| t.value).collect();
            self.returns[a..b].copy_from_slice(&rewards_to_go(&r, gamma));
            self.advantages[a..b].copy_from_slice(&gae(&r, &v, 0.0, gamma, lambda)?);
        }
        normalize_advantages(&mut self.advantages);
        Ok(())
    }

    /// Transition indices grouped by state, in first-visit order.
    pub fn groups(&self) -> Vec<(usize, Vec<usize>)> {
        let mut order: Vec<usize> = Vec::new();
        let mut map: HashMap<usize, Vec<usize>> = HashMap::new();
        for (i, t) in self.transitions.iter().enumerate() {
            map.entry(t.state)
                .or_insert_with(|| {
                    order.push(t.state);
                    Vec::new()
                })
                .push(i);
        }
        order
            .into_iter()
            .map(|s| {
                let v = map.remove(&s).expect("grouped state");
                (s, v)
            })
            .collect()
    }
}

/// What a policy sees of a state and what it answers.
#[derive(Clone, Debug)]
pub struct Observation {
    pub output: PolicyOutput,
    pub features: Option<Rc<Tensor<f32>>>,
}

pub trait Policy {
    fn max_positions(&self) -> usize;
    fn observe(&mut self, state: &EnvState) -> Result<Observation>;
}

/// A detector plus a cache of frozen encodings keyed by poem tokens.
#[derive(Clone, Debug)]
pub struct DetectorAgent {
    pub detector: Detector,
    cache: HashMap<Vec<TokenId>, Rc<Tensor<f32>>>,
}

impl DetectorAgent {
    pub fn new(detector: Detector) -> Self {
        DetectorAgent {
            detector,
            cache: HashMap::new(),
        }
    }

    pub fn frozen(&self) -> bool {
        self.detector.net.cfg.freeze_encoder
    }

    pub fn clear_cache(&mut self) {
        self.cache.clear();
    }

    pub fn features(&mut self, poem: &Quatrain) -> Result<Option<Rc<Tensor<f32>>>> {
        if !self.frozen() {
            return Ok(None);
        }
        if let Some(f) = self.cache.get(poem.tokens()) {
            return Ok(Some(f.clone()));
        }
        let f = Rc::new(self.detector.net.encode_detached(&self.detector.store, poem.tokens())?);
        self.cache.insert(poem.tokens().to_vec(), f.clone());
        Ok(Some(f))
    }
}

impl Policy for DetectorAgent {
    fn max_positions(&self) -> usize {
        self.detector.net.cfg.max_positions
    }

    fn observe(&mut self, state: &EnvState) -> Result<Observation> {
        let features = self.features(&state.poem)?;
        let output = match &features {
            Some(h) => self.detector.policy_from_encoding(h, state.cond, state.poem.num_words())?,
            None => self.detector.policy_forward(&state.poem, state.cond)?,
        };
        Ok(Observation { output, features })
    }
}

/// Runs one episode into `buf`. A failing environment step drops the
/// partial episode, logs the cause and returns `Ok(None)`.
pub fn rollout<E: Environment + ?Sized, P: Policy + ?Sized>(
    env: &mut E,
    policy: &mut P,
    buf: &mut TrajectoryBuffer,
    rng: &mut Rng,
) -> Result<Option<EpisodeRecord>> {
    let start_t = buf.transitions.len();
    let start_s = buf.states.len();
    let discard = |buf: &mut TrajectoryBuffer, e: Error| {
        log::warn!("episode discarded: {e}");
        buf.transitions.truncate(start_t);
        buf.states.truncate(start_s);
        buf.discarded += 1;
        Ok(None)
    };
    let state = match env.reset(rng) {
        Ok(s) => s.clone(),
        Err(e) => return discard(buf, e),
    };
    let max_positions = policy.max_positions();
    let mut obs = policy.observe(&state)?;
    buf.states.push(StateRecord {
        poem: state.poem,
        cond: state.cond,
        features: obs.features.clone(),
    });
    let mut total = 0.0;
    loop {
        let (a, log_prob) = select_action(&obs.output, rng);
        let out = match env.step(Action::from_index(a, max_positions), rng) {
            Ok(o) => o,
            Err(e) => return discard(buf, e),
        };
        total += out.reward;
        buf.transitions.push(Transition {
            state: buf.states.len() - 1,
            action: a,
            log_prob,
            reward: out.reward,
            value: obs.output.value,
            done: out.done,
        });
        if out.done {
            break;
        }
        if out.edit.is_some_and(|e| e.old != e.new) {
            let s = env.state();
            obs = policy.observe(s)?;
            buf.states.push(StateRecord {
                poem: s.poem.clone(),
                cond: s.cond,
                features: obs.features.clone(),
            });
        }
    }
    let end = buf.transitions.len();
    buf.episodes.push((start_t, end));
    Ok(Some(EpisodeRecord {
        reward: total,
        length: end - start_t,
        goal: buf.transitions[end - 1].reward > 0.0,
    }))
}

/// Episodes until the volley quota of `cfg` is met.
pub fn collect<E: Environment + ?Sized, P: Policy + ?Sized>(
    env: &mut E,
    policy: &mut P,
    cfg: &VolleyConfig,
    rng: &mut Rng,
) -> Result<TrajectoryBuffer> {
    let mut buf = TrajectoryBuffer::new();
    let mut attempts = 0usize;
    loop {
        let done = match (cfg.episodes_per_volley, cfg.steps_per_volley) {
            (Some(n), _) => buf.episodes.len() >= n,
            (None, Some(n)) => buf.len() >= n,
            (None, None) => true,
        };
        if done {
            break;
        }
        rollout(env, policy, &mut buf, rng)?;
        attempts += 1;
        if buf.discarded > 0 && buf.discarded * 2 > attempts && attempts >= 20 {
            return Err(Error::Environment(format!(
                "{} of {attempts} episodes failed",
                buf.discarded
            )));
        }
    }
    Ok(buf)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    /// Epochs actually applied.
    pub epochs: usize,
}

/// Optimizer for detector updates: the value head runs at its own rate.
pub fn detector_optimizer(det: &Detector, cfg: &VolleyConfig) -> AdamState<f32> {
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.policy_lr), &det.store);
    adam.set_lr_scale(det.net.value_params(), cfg.value_lr / cfg.policy_lr);
    adam
}

struct BatchStats {
    policy: f64,
    value: f64,
    entropy: f64,
}

/// Gradients of the loss over the transitions of the given state groups.
/// `surrogate` maps `(log π, transition index)` to the per-sample objective.
fn batch_gradients(
    det: &Detector,
    buf: &TrajectoryBuffer,
    groups: &[&(usize, Vec<usize>)],
    cfg: &VolleyConfig,
    surrogate: &dyn Fn(&mut Graph<'_, f32>, Var, usize) -> Result<Var>,
) -> Result<(Gradients<f32>, BatchStats)> {
    let mut g = Graph::new(&det.store);
    let count: usize = groups.iter().map(|(_, v)| v.len()).sum();
    let inv = 1.0 / count.max(1) as f64;
    let mut terms = Vec::new();
    let mut stats = BatchStats {
        policy: 0.0,
        value: 0.0,
        entropy: 0.0,
    };
    for (s, idx) in groups {
        let st = &buf.states[*s];
        let vars = match &st.features {
            Some(h) => {
                let hv = g.constant((**h).clone());
                det.net.head(&mut g, hv, st.cond, st.poem.num_words())?
            }
            None => det.net.policy(&mut g, &st.poem, st.cond)?,
        };
        for &i in idx {
            let tr = &buf.transitions[i];
            let (lp, v, h) = pick(&det.net, &mut g, vars, tr.action, st.poem.num_words())?;
            let obj = surrogate(&mut g, lp, i)?;
            let d = g.add_scalar(v, -buf.returns[i]);
            let sq = g.mul(d, d)?;
            stats.policy -= g.value(obj).item() as f64 * inv;
            stats.value += g.value(sq).item() as f64 * inv;
            stats.entropy += g.value(h).item() as f64 * inv;
            let a = g.scale(obj, -inv);
            let b = g.scale(sq, cfg.value_coef * inv);
            let c = g.scale(h, -cfg.entropy_coef * inv);
            let t = g.add(a, b)?;
            terms.push(g.add(t, c)?);
        }
    }
    if terms.is_empty() {
        return Err(Error::InvalidArgument("empty update batch".into()));
    }
    let all = g.concat(&terms, 1)?;
    let loss = g.sum(all);
    if !g.value(loss).item().is_finite() {
        return Err(Error::NonFinite("policy loss".into()));
    }
    Ok((g.backward(loss)?, stats))
}

/// One gradient step on `-mean(log π · Â) + c_v·mean((V - G)²)`.
pub fn vpg_update(det: &mut Detector, adam: &mut AdamState<f32>, buf: &TrajectoryBuffer, cfg: &VolleyConfig) -> Result<UpdateStats> {
    let groups = buf.groups();
    let refs: Vec<&(usize, Vec<usize>)> = groups.iter().collect();
    let adv = &buf.advantages;
    let surrogate = |g: &mut Graph<'_, f32>, lp: Var, i: usize| Ok(g.scale(lp, adv[i]));
    let (mut grads, b) = batch_gradients(det, buf, &refs, cfg, &surrogate)?;
    let trainable = det.trainable();
    adam.step(&mut det.store, &mut grads, &trainable)?;
    Ok(UpdateStats {
        policy_loss: b.policy,
        value_loss: b.value,
        entropy: b.entropy,
        approx_kl: approx_kl(det, buf)?,
        epochs: 1,
    })
}

/// `mean(log π_old - log π_new)` over the buffer under current weights.
pub fn approx_kl(det: &Detector, buf: &TrajectoryBuffer) -> Result<f64> {
    let mut total = 0.0;
    for (s, idx) in buf.groups() {
        let st = &buf.states[s];
        let out = match &st.features {
            Some(h) => det.policy_from_encoding(h, st.cond, st.poem.num_words())?,
            None => det.policy_forward(&st.poem, st.cond)?,
        };
        for i in idx {
            let tr = &buf.transitions[i];
            total += tr.log_prob - out.log_probs[tr.action];
        }
    }
    Ok(total / buf.len().max(1) as f64)
}

/// `min(ρ·Â, clip(ρ, 1-ε, 1+ε)·Â)` with `ρ = exp(log π - log π_old)`.
pub fn ppo_surrogate<T: Scalar>(g: &mut Graph<'_, T>, log_prob: Var, old_log_prob: f64, adv: f64, eps: f64) -> Result<Var> {
    let d = g.add_scalar(log_prob, -old_log_prob);
    let ratio = g.exp(d);
    let a = g.scale(ratio, adv);
    let clipped = g.clamp(ratio, 1.0 - eps, 1.0 + eps);
    let b = g.scale(clipped, adv);
    g.minimum(a, b)
}

/// Clipped-surrogate minibatch ascent for up to `cfg.epochs` passes,
/// stopping after the first pass whose approximate KL exceeds
/// `cfg.target_kl`.
pub fn ppo_update(
    det: &mut Detector,
    adam: &mut AdamState<f32>,
    buf: &TrajectoryBuffer,
    cfg: &VolleyConfig,
    rng: &mut Rng,
) -> Result<UpdateStats> {
    let mut groups = buf.groups();
    let adv = &buf.advantages;
    let eps = cfg.clip_eps;
    let mut stats = UpdateStats::default();
    for epoch in 0..cfg.epochs {
        groups.shuffle(rng);
        let (mut pol, mut val, mut ent, mut batches) = (0.0, 0.0, 0.0, 0);
        let mut start = 0;
        while start < groups.len() {
            let mut end = start;
            let mut n = 0;
            while end < groups.len() && n < cfg.minibatch {
                n += groups[end].1.len();
                end += 1;
            }
            let batch: Vec<&(usize, Vec<usize>)> = groups[start..end].iter().collect();
            start = end;
            let surrogate = |g: &mut Graph<'_, f32>, lp: Var, i: usize| {
                ppo_surrogate(g, lp, buf.transitions[i].log_prob, adv[i], eps)
            };
            let (mut grads, b) = batch_gradients(det, buf, &batch, cfg, &surrogate)?;
            let trainable = det.trainable();
            adam.step(&mut det.store, &mut grads, &trainable)?;
            pol += b.policy;
            val += b.value;
            ent += b.entropy;
            batches += 1;
        }
        let kl = approx_kl(det, buf)?;
        let k = batches.max(1) as f64;
        stats = UpdateStats {
            policy_loss: pol / k,
            value_loss: val / k,
            entropy: ent / k,
            approx_kl: kl,
            epochs: epoch + 1,
        };
        if kl > cfg.target_kl {
            log::debug!("kl {kl:.4} above target after epoch {}", epoch + 1);
            break;
        }
    }
    Ok(stats)
}

#[derive(Clone, Debug, PartialEq)]
pub struct VolleyReport {
    pub volley: usize,
    pub episodes: Vec<EpisodeRecord>,
    pub mean_reward: f64,
    pub median_reward: f64,
    pub min_reward: f64,
    pub max_reward: f64,
    pub mean_length: f64,
    pub update: UpdateStats,
}

impl VolleyReport {
    fn new(volley: usize, episodes: Vec<EpisodeRecord>, update: UpdateStats) -> Self {
        let mut r: Vec<f64> = episodes.iter().map(|e| e.reward).collect();
        r.sort_by(f64::total_cmp);
        let n = r.len().max(1) as f64;
        let median = match r.len() {
            0 => 0.0,
            m if m % 2 == 1 => r[m / 2],
            m => (r[m / 2 - 1] + r[m / 2]) / 2.0,
        };
        VolleyReport {
            volley,
            mean_reward: r.iter().sum::<f64>() / n,
            median_reward: median,
            min_reward: r.first().copied().unwrap_or(0.0),
            max_reward: r.last().copied().unwrap_or(0.0),
            mean_length: episodes.iter().map(|e| e.length as f64).sum::<f64>() / n,
            episodes,
            update,
        }
    }
}

pub const VOLLEY_CSV_HEADER: [&str; 11] = [
    "volley",
    "episodes",
    "mean_reward",
    "median_reward",
    "min_reward",
    "max_reward",
    "mean_length",
    "policy_loss",
    "value_loss",
    "approx_kl",
    "stop_epoch",
];

pub fn write_volley_csv(path: &Path, reports: &[VolleyReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(VOLLEY_CSV_HEADER)?;
    for r in reports {
        w.write_record([
            r.volley.to_string(),
            r.episodes.len().to_string(),
            format!("{:.6}", r.mean_reward),
            format!("{:.6}", r.median_reward),
            format!("{:.6}", r.min_reward),
            format!("{:.6}", r.max_reward),
            format!("{:.6}", r.mean_length),
            format!("{:.6}", r.update.policy_loss),
            format!("{:.6}", r.update.value_loss),
            format!("{:.6}", r.update.approx_kl),
            r.update.epochs.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Collect-then-update cycles. Each report's rewards come from the episodes
/// collected before that volley's update. `on_volley` sees the report and
/// the updated detector.
pub fn train_volleys<E: Environment + ?Sized>(
    env: &mut E,
    agent: &mut DetectorAgent,
    cfg: &VolleyConfig,
    algo: Algo,
    rng: &mut Rng,
    mut on_volley: impl FnMut(&VolleyReport, &Detector) -> Result<()>,
) -> Result<Vec<VolleyReport>> {
    cfg.validate()?;
    let mut adam = detector_optimizer(&agent.detector, cfg);
    let mut reports = Vec::new();
    for volley in 0..cfg.volleys {
        agent.clear_cache();
        let mut buf = collect(env, agent, cfg, rng)?;
        buf.finish(cfg.gamma, cfg.lambda)?;
        let update = match algo {
            Algo::Vpg => vpg_update(&mut agent.detector, &mut adam, &buf, cfg),
            Algo::Ppo => ppo_update(&mut agent.detector, &mut adam, &buf, cfg, rng),
        };
        let update = match update {
            Ok(u) => u,
            Err(e @ (Error::NonFinite(_) | Error::NonFiniteGradient(_))) => {
                log::warn!("volley {volley}: update skipped: {e}");
                UpdateStats::default()
            }
            Err(e) => return Err(e),
        };
        let report = VolleyReport::new(volley, buf.episode_records(), update);
        log::info!(
            "volley {volley} episodes {} mean_reward {:.3} mean_length {:.2} kl {:.4} epochs {}",
            report.episodes.len(),
            report.mean_reward,
            report.mean_length,
            report.update.approx_kl,
            report.update.epochs
        );
        on_volley(&report, &agent.detector)?;
        reports.push(report);
    }
    Ok(reports)
}

/// Detector-driven revision of the environment's current state until the
/// goal or the step cap, greedy or sampled.
pub fn revise<E: Environment + ?Sized>(
    env: &mut E,
    agent: &mut DetectorAgent,
    greedy: bool,
    rng: &mut Rng,
) -> Result<Vec<crate::env::TraceStep>> {
    let mut trace = Vec::new();
    let max_positions = agent.max_positions();
    for step in 1..=env.max_episode_len() {
        let obs = agent.observe(env.state())?;
        let a = if greedy {
            (0..obs.output.probs.len())
                .filter(|&i| obs.output.mask[i])
                .max_by(|&x, &y| obs.output.probs[x].total_cmp(&obs.output.probs[y]).then(y.cmp(&x)))
                .expect("do-nothing is always valid")
        } else {
            select_action(&obs.output, rng).0
        };
        let action = Action::from_index(a, max_positions);
        let out = env.step(action, rng)?;
        trace.push(crate::env::TraceStep {
            step,
            action,
            edit: out.edit,
            reward: out.reward,
        });
        if out.done {
            break;
        }
    }
    Ok(trace)
}

/// Policy output for a state under the current weights, via the graph.
pub fn evaluate_state(det: &Detector, poem: &Quatrain, cond: Conditioning) -> Result<PolicyOutput> {
    let mask = det.net.mask(poem.num_words())?;
    let mut g = Graph::new(&det.store);
    let vars = det.net.policy(&mut g, poem, cond)?;
    Ok(policy_output(&g, vars, &mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::DetectorConfig;
    use crate::env::{ReconstructionConfig, ReconstructionEnv, StepOutcome, UnigramTable};
    use crate::generator::ModelSize;
    use crate::poem::{EOQ, EOV};

    #[test]
    fn rewards_to_go_examples() {
        assert_eq!(rewards_to_go(&[-1.0, -1.0, -1.0, 1.0], 1.0), vec![-2.0, -1.0, 0.0, 1.0]);
        assert_eq!(rewards_to_go(&[3.5], 0.3), vec![3.5]);
        let g = rewards_to_go(&[-1.0, -1.0, 1.0], 0.9);
        for (a, b) in g.iter().zip([-1.09, -0.1, 1.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gae_example_and_identities() {
        let a = gae(&[-1.0, -1.0, 1.0], &[0.5, 0.2, -0.1], 0.0, 0.99, 0.95).unwrap();
        for (x, y) in a.iter().zip([-1.551, -0.264, 1.100]) {
            assert!((x - y).abs() < 1e-3, "{a:?}");
        }
        let r = [1.0, -2.0, 0.5];
        let v = [0.3, 0.1, -0.4];
        let d0 = gae(&r, &v, 0.0, 0.9, 0.0).unwrap();
        assert_eq!(d0, vec![1.0 + 0.9 * 0.1 - 0.3, -2.0 + 0.9 * -0.4 - 0.1, 0.5 + 0.4]);
        assert!(gae(&r, &v[..2], 0.0, 0.9, 0.9).is_err());
    }

    #[test]
    fn advantage_normalization() {
        let mut a = [1.0, 3.0];
        normalize_advantages(&mut a);
        assert_eq!(a, [-1.0, 1.0]);
        let mut c = [2.0; 5];
        normalize_advantages(&mut c);
        assert_eq!(c, [0.0; 5]);
    }

    #[test]
    fn clip_arithmetic() {
        assert!((clipped_objective(1.5, 1.0, 0.2) - 1.2).abs() < 1e-12);
        assert!((clipped_objective(0.5, -1.0, 0.2) + 0.8).abs() < 1e-12);
        assert_eq!(clipped_objective(1.0, 0.7, 0.2), 0.7);
    }

    /// Goal reached when the policy picks position 0.
    struct Toy {
        state: EnvState,
        goal_at_start: bool,
        cap: usize,
    }

    impl Environment for Toy {
        fn reset(&mut self, _rng: &mut Rng) -> Result<&EnvState> {
            self.state.t = 0;
            Ok(&self.state)
        }
        fn step(&mut self, action: Action, _rng: &mut Rng) -> Result<StepOutcome> {
            self.state.t += 1;
            let goal = self.goal_at_start || action == Action::Replace(0);
            Ok(StepOutcome {
                reward: if goal { 1.0 } else { -1.0 },
                done: goal || self.state.t >= self.cap,
                goal,
                edit: None,
            })
        }
        fn state(&self) -> &EnvState {
            &self.state
        }
        fn max_episode_len(&self) -> usize {
            self.cap
        }
    }

    struct Always(usize);

    impl Policy for Always {
        fn max_positions(&self) -> usize {
            50
        }
        fn observe(&mut self, _: &EnvState) -> Result<Observation> {
            let mut probs = vec![0.0; 51];
            probs[self.0] = 1.0;
            Ok(Observation {
                output: PolicyOutput {
                    log_probs: vec![0.0; 51],
                    mask: vec![true; 51],
                    value: 0.0,
                    probs,
                },
                features: None,
            })
        }
    }

    fn toy_poem() -> Quatrain {
        Quatrain::from_tokens(vec![5, 6, EOV, 7, EOV, 8, EOV, 9, EOQ]).unwrap()
    }

    fn toy(goal_at_start: bool) -> Toy {
        Toy {
            state: EnvState { poem: toy_poem(), cond: Conditioning::default(), t: 0 },
            goal_at_start,
            cap: 10,
        }
    }

    #[test]
    fn rollout_lengths() {
        let mut rng = crate::rng_from_seed(1);
        let mut buf = TrajectoryBuffer::new();
        let e = rollout(&mut toy(true), &mut Always(3), &mut buf, &mut rng).unwrap().unwrap();
        assert_eq!((e.length, e.reward), (1, 1.0));
        let e = rollout(&mut toy(false), &mut Always(3), &mut buf, &mut rng).unwrap().unwrap();
        assert_eq!((e.length, e.reward), (10, -10.0));
        assert_eq!(buf.episodes, vec![(0, 1), (1, 11)]);
        // Unchanged poem: one state record per episode.
        assert_eq!(buf.states.len(), 2);
        buf.finish(0.99, 0.95).unwrap();
        let m = buf.advantages.iter().sum::<f64>() / buf.len() as f64;
        assert!(m.abs() < 1e-9);
    }

    fn tiny_detector(seed: u64) -> Detector {
        let mut c = DetectorConfig::new(ModelSize::Tiny);
        c.vocab_size = 40;
        c.n_authors = 2;
        c.n_schemes = 2;
        Detector::new(c, seed).unwrap()
    }

    fn recon_env() -> ReconstructionEnv {
        let table = UnigramTable::new(&(5..40).map(|t| (t, 1.0)).collect::<Vec<_>>()).unwrap();
        ReconstructionEnv::new(vec![(toy_poem(), Conditioning::new(1, 1))], table, ReconstructionConfig::default()).unwrap()
    }

    fn cfg(episodes: usize) -> VolleyConfig {
        VolleyConfig {
            episodes_per_volley: Some(episodes),
            volleys: 2,
            minibatch: 16,
            ..Default::default()
        }
    }

    #[test]
    fn collection_is_deterministic() {
        let run = || {
            let mut agent = DetectorAgent::new(tiny_detector(2));
            let mut rng = crate::rng_from_seed(5);
            train_volleys(&mut recon_env(), &mut agent, &cfg(20), Algo::Ppo, &mut rng, |_, _| Ok(())).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
        for r in &a {
            for e in &r.episodes {
                if e.goal {
                    let want = if e.reward == 1.0 { 1 } else { (e.reward.abs() + 2.0) as usize };
                    assert_eq!(e.length, want);
                }
            }
        }
    }

    fn one_step_buffer(agent: &mut DetectorAgent, action: usize, adv: f64, old_lp: Option<f64>) -> TrajectoryBuffer {
        let q = toy_poem();
        let cond = Conditioning::new(1, 0);
        let state = EnvState { poem: q.clone(), cond, t: 0 };
        let obs = agent.observe(&state).unwrap();
        let mut buf = TrajectoryBuffer::new();
        buf.states.push(StateRecord { poem: q, cond, features: obs.features });
        buf.transitions.push(Transition {
            state: 0,
            action,
            log_prob: old_lp.unwrap_or(obs.output.log_probs[action]),
            reward: 1.0,
            value: obs.output.value,
            done: true,
        });
        buf.episodes.push((0, 1));
        buf.returns = vec![1.0];
        buf.advantages = vec![adv];
        buf
    }

    #[test]
    fn vpg_raises_log_prob_of_advantaged_action() {
        let mut agent = DetectorAgent::new(tiny_detector(3));
        let c = cfg(1);
        let buf = one_step_buffer(&mut agent, 2, 1.0, None);
        let before = agent.detector.policy_forward(&toy_poem(), Conditioning::new(1, 0)).unwrap().log_probs[2];
        let mut adam = detector_optimizer(&agent.detector, &c);
        vpg_update(&mut agent.detector, &mut adam, &buf, &c).unwrap();
        let after = agent.detector.policy_forward(&toy_poem(), Conditioning::new(1, 0)).unwrap().log_probs[2];
        assert!(after > before);
    }

    #[test]
    fn zero_advantage_leaves_policy_layers_unchanged() {
        let mut agent = DetectorAgent::new(tiny_detector(4));
        let c = cfg(1);
        let buf = one_step_buffer(&mut agent, 2, 0.0, None);
        let before = agent.detector.store.clone();
        let mut adam = detector_optimizer(&agent.detector, &c);
        vpg_update(&mut agent.detector, &mut adam, &buf, &c).unwrap();
        for name in ["det.out.w", "det.out.b", "det.mlp.w", "det.mlp.b"] {
            let id = before.id(name).unwrap();
            assert_eq!(before.get(id), agent.detector.store.get(id), "{name}");
        }
    }

    #[test]
    fn ratios_start_at_one() {
        let mut agent = DetectorAgent::new(tiny_detector(5));
        let buf = one_step_buffer(&mut agent, 4, 0.5, None);
        assert!(approx_kl(&agent.detector, &buf).unwrap().abs() < 1e-6);
    }

    #[test]
    fn high_kl_buffer_stops_after_one_epoch() {
        let mut agent = DetectorAgent::new(tiny_detector(6));
        let c = cfg(1);
        // Stored log-prob 0 (certainty) against a near-uniform policy.
        let buf = one_step_buffer(&mut agent, 1, 1.0, Some(0.0));
        let mut adam = detector_optimizer(&agent.detector, &c);
        let mut rng = crate::rng_from_seed(6);
        let s = ppo_update(&mut agent.detector, &mut adam, &buf, &c, &mut rng).unwrap();
        assert_eq!(s.epochs, 1);
        assert!(s.approx_kl > c.target_kl);
    }

    #[test]
    fn corrupted_states_enter_buffer() {
        let mut agent = DetectorAgent::new(tiny_detector(7));
        let mut env = recon_env();
        let mut rng = crate::rng_from_seed(8);
        let buf = collect(&mut env, &mut agent, &cfg(30), &mut rng).unwrap();
        assert_eq!(buf.episodes.len(), 30);
        for s in &buf.states {
            assert!(s.features.is_some());
        }
    }

    #[test]
    fn config_validation() {
        let mut c = VolleyConfig::default();
        assert!(c.validate().is_ok());
        c.steps_per_volley = Some(10);
        assert!(c.validate().is_err());
        c.episodes_per_volley = None;
        assert!(c.validate().is_ok());
        c.gamma = 1.5;
        assert!(c.validate().is_err());
    }
}
