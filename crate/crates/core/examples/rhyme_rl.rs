//! The rhyme environment: generator drafts are revised word by word, with
//! the prompter proposing replacements, until the end words follow the
//! target scheme. Trains one detector with VPG and one with PPO on the same
//! draft pool and prints both reward curves.
//!
//! `cargo run --release --example rhyme_rl -- [volleys] [steps] [poems]`

mod common;

use grnp::detector::{Detector, DetectorConfig};
use grnp::env::{draft_pool, scheme_targets, DraftMode, RhymeConfig, RhymeEnv};
use grnp::generator::{DraftOptions, ModelSize};
use grnp::rl::{train_volleys, Algo, DetectorAgent, VolleyConfig};

fn main() -> grnp::Result<()> {
    let volleys = common::arg(1, 3);
    let steps = common::arg(2, 1000);
    let poems = common::arg(3, 10);
    let b = common::desk_bundle()?;
    let gen = common::train_generator(&b, ModelSize::Tiny, 2, 1)?;
    let pro = common::train_prompter(&b, ModelSize::Tiny, 2, 1)?;
    let targets = scheme_targets(&b.schemes);
    let mut rng = grnp::rng_from_seed(1);
    let pool = draft_pool(&gen, b.authors.len(), &targets, poems, &DraftOptions::default(), &mut rng)?;
    let cfg = VolleyConfig {
        volleys,
        episodes_per_volley: None,
        steps_per_volley: Some(steps),
        ..VolleyConfig::default()
    };
    for algo in [Algo::Vpg, Algo::Ppo] {
        let mut env = RhymeEnv::new(
            DraftMode::Pool(pool.clone()),
            targets.clone(),
            Box::new(pro.clone()),
            grnp::corpus::synth::desk_rhymer(),
            b.vocab.clone(),
            RhymeConfig::default(),
        )?;
        let det = Detector::from_prompter(DetectorConfig::matching(ModelSize::Tiny, &pro), &pro, 1)?;
        let mut agent = DetectorAgent::new(det);
        let mut rng = grnp::rng_from_seed(2);
        let reports = train_volleys(&mut env, &mut agent, &cfg, algo, &mut rng, |r, _| {
            println!("{algo} volley {} episodes {} R {:.3}", r.volley, r.episodes.len(), r.mean_reward);
            Ok(())
        })?;
        println!("{algo}: R last {:.3}", reports.last().expect("volleys").mean_reward);
    }
    Ok(())
}
