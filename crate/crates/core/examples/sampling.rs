//! Token sampling strategies: the support each strategy keeps and the
//! empirical frequencies of repeated draws.

use grnp::sampling::{sample_token, support, Strategy};

fn main() -> grnp::Result<()> {
    let probs = [0.05, 0.4, 0.1, 0.25, 0.2];
    let mut rng = grnp::rng_from_seed(7);
    let draws = 100_000;
    for s in ["multinomial", "top-k:2", "nucleus:0.8", "greedy"] {
        let strategy: Strategy = s.parse()?;
        let dist = support(&probs, strategy)?;
        let mut counts = vec![0usize; probs.len()];
        for _ in 0..draws {
            counts[sample_token(&probs, strategy, &mut rng)?] += 1;
        }
        println!("{strategy}");
        for (id, p) in dist {
            println!("  id {id} p {p:.4} freq {:.4}", counts[id] as f64 / draws as f64);
        }
    }
    Ok(())
}
