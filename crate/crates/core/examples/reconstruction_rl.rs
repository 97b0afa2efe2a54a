//! Poem reconstruction: one word of a known poem is replaced by a random
//! vocabulary word, and the detector learns with PPO or VPG to point at it
//! so the oracle can restore the original.
//!
//! `cargo run --release --example reconstruction_rl -- [ppo|vpg] [volleys] [episodes] [poems]`

mod common;

use grnp::detector::{Detector, DetectorConfig};
use grnp::env::{ReconstructionConfig, ReconstructionEnv, UnigramTable};
use grnp::generator::ModelSize;
use grnp::rl::{train_volleys, Algo, DetectorAgent, VolleyConfig};

fn main() -> grnp::Result<()> {
    let algo: Algo = common::arg(1, Algo::Ppo);
    let volleys = common::arg(2, 5);
    let episodes = common::arg(3, 200);
    let poems = common::arg(4, 1);
    let b = common::desk_bundle()?;
    let pro = common::train_prompter(&b, ModelSize::Tiny, 2, 1)?;
    let det = Detector::from_prompter(DetectorConfig::matching(ModelSize::Tiny, &pro), &pro, 1)?;
    let pool = b.train.examples[..poems].iter().map(|e| (e.quatrain.clone(), e.cond)).collect();
    let mut env = ReconstructionEnv::new(pool, UnigramTable::from_vocab(&b.vocab)?, ReconstructionConfig::default())?;
    let cfg = VolleyConfig {
        volleys,
        episodes_per_volley: Some(episodes),
        ..VolleyConfig::default()
    };
    let mut agent = DetectorAgent::new(det);
    let mut rng = grnp::rng_from_seed(1);
    let reports = train_volleys(&mut env, &mut agent, &cfg, algo, &mut rng, |r, _| {
        println!(
            "volley {} R {:.3} length {:.2} kl {:.4} epochs {}",
            r.volley, r.mean_reward, r.mean_length, r.update.approx_kl, r.update.epochs
        );
        Ok(())
    })?;
    let (first, last) = (&reports[0], reports.last().expect("at least one volley"));
    println!("{algo}: R first {:.3}, R last {:.3}", first.mean_reward, last.mean_reward);
    Ok(())
}
