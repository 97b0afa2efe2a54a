//! End to end: draft a quatrain with the generator, train a detector
//! briefly in the rhyme environment, then revise the draft toward a target
//! scheme and print the edit trace.
//!
//! `cargo run --release --example revise_draft -- [scheme] [volleys]`

mod common;

use grnp::detector::{Detector, DetectorConfig};
use grnp::env::{draft_pool, scheme_targets, DraftMode, Environment, RhymeConfig, RhymeEnv, TRACE_HEADER};
use grnp::generator::{generate_draft, DraftOptions, ModelSize};
use grnp::poem::Conditioning;
use grnp::rhyme::SchemeLabel;
use grnp::rl::{revise, train_volleys, Algo, DetectorAgent, VolleyConfig};

fn main() -> grnp::Result<()> {
    let scheme: String = common::arg(1, "AABB".to_string());
    let volleys = common::arg(2, 2);
    let b = common::desk_bundle()?;
    let gen = common::train_generator(&b, ModelSize::Tiny, 2, 1)?;
    let pro = common::train_prompter(&b, ModelSize::Tiny, 2, 1)?;
    let targets = scheme_targets(&b.schemes);
    let mut rng = grnp::rng_from_seed(3);
    let pool = draft_pool(&gen, b.authors.len(), &targets, 10, &DraftOptions::default(), &mut rng)?;
    let mut env = RhymeEnv::new(
        DraftMode::Pool(pool),
        targets,
        Box::new(pro.clone()),
        grnp::corpus::synth::desk_rhymer(),
        b.vocab.clone(),
        RhymeConfig::default(),
    )?;
    let det = Detector::from_prompter(DetectorConfig::matching(ModelSize::Tiny, &pro), &pro, 3)?;
    let mut agent = DetectorAgent::new(det);
    let cfg = VolleyConfig {
        volleys,
        episodes_per_volley: Some(100),
        ..VolleyConfig::default()
    };
    train_volleys(&mut env, &mut agent, &cfg, Algo::Ppo, &mut rng, |r, _| {
        println!("volley {} R {:.3}", r.volley, r.mean_reward);
        Ok(())
    })?;

    let label = SchemeLabel::parse(&scheme)?;
    let cond = Conditioning::new(1, b.schemes.id(Some(label.as_str())));
    let table = gen.char_table()?;
    let draft = generate_draft(&gen.net, &gen.store, &[], cond, &DraftOptions::default(), Some(&table), &mut rng)?;
    let show = |q: &grnp::poem::Quatrain| {
        for v in q.verses() {
            println!("  {}", b.vocab.decode(v).join(" "));
        }
    };
    println!("\ndraft:");
    show(&draft);
    env.start_from(draft, cond, label.clone());
    let trace = if env.start_is_goal() { Vec::new() } else { revise(&mut env, &mut agent, false, &mut rng)? };
    println!("{TRACE_HEADER}");
    for s in &trace {
        println!("{}", s.to_line(&b.vocab));
    }
    println!("final:");
    show(&env.state().poem);
    let matched = env.start_is_goal() || trace.last().is_some_and(|s| s.reward > 0.0);
    println!("{} after {} steps", if matched { "matched" } else { "unmatched" }, trace.len());
    Ok(())
}
