//! Trains the conditional generator on the desk corpus and samples drafts
//! under different authors and schemes.
//!
//! `cargo run --release --example train_generator -- [epochs] [tiny|desk]`

mod common;

use grnp::generator::{generate_draft, DraftOptions, ModelSize};
use grnp::lm::perplexity;
use grnp::poem::Conditioning;

fn main() -> grnp::Result<()> {
    let epochs = common::arg(1, 3);
    let size: ModelSize = common::arg(2, ModelSize::Tiny);
    let b = common::desk_bundle()?;
    let gen = common::train_generator(&b, size, epochs, 1)?;
    println!(
        "test perplexity {:.2} after {} steps",
        perplexity(&gen, &grnp::generator::gen_examples(&b.test))?,
        gen.steps
    );
    let table = gen.char_table()?;
    let mut rng = grnp::rng_from_seed(5);
    for (author, scheme) in [(1, "AABB"), (2, "ABAB")] {
        let cond = Conditioning::new(author, b.schemes.id(Some(scheme)));
        let q = generate_draft(&gen.net, &gen.store, &[], cond, &DraftOptions::default(), Some(&table), &mut rng)?;
        println!("\nauthor {} scheme {scheme}:", b.authors.name(author));
        for v in q.verses() {
            println!("  {}", b.vocab.decode(v).join(" "));
        }
    }
    Ok(())
}
