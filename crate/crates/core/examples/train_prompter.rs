//! Trains the prompter and asks it for replacements of one word of a test
//! quatrain, given the words on both sides.
//!
//! `cargo run --release --example train_prompter -- [epochs] [tiny|desk]`

mod common;

use grnp::generator::ModelSize;

fn main() -> grnp::Result<()> {
    let epochs = common::arg(1, 3);
    let size: ModelSize = common::arg(2, ModelSize::Tiny);
    let b = common::desk_bundle()?;
    let pro = common::train_prompter(&b, size, epochs, 1)?;
    let ex = &b.test.examples[0];
    let q = &ex.quatrain;
    let j = q.word_positions()[q.word_positions().len() / 2];
    println!("\npoem:");
    for v in q.verses() {
        println!("  {}", b.vocab.decode(v).join(" "));
    }
    let probs = pro.predict_word(q.tokens(), j, ex.cond)?;
    let mut ranked: Vec<usize> = (0..probs.len()).collect();
    ranked.sort_by(|&a, &c| probs[c].total_cmp(&probs[a]));
    println!("position {j} holds `{}`; top proposals:", b.vocab.token(q.tokens()[j]));
    for &id in ranked.iter().take(5) {
        println!("  {:<12} {:.3}", b.vocab.token(id), probs[id]);
    }
    let mut rng = grnp::rng_from_seed(2);
    let k = pro.net.cfg.top_k;
    let draws: Vec<&str> = (0..5)
        .map(|_| pro.suggest(q.tokens(), j, ex.cond, k, &mut rng).map(|t| b.vocab.token(t)))
        .collect::<grnp::Result<_>>()?;
    println!("top-{k} samples: {draws:?}");
    Ok(())
}
