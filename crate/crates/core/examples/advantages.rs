//! Rewards-to-go and generalized advantage estimates for one episode of the
//! revision reward shape: -1 per step, +1 on reaching the goal.

use grnp::rl::{gae, normalize_advantages, rewards_to_go};

fn main() -> grnp::Result<()> {
    let rewards = [-1.0, -1.0, -1.0, 1.0];
    let values = [-1.5, -1.0, -0.2, 0.6];
    println!("rewards   {rewards:?}");
    println!("G_t       {:?}", rewards_to_go(&rewards, 0.99));
    for lambda in [0.0, 0.95, 1.0] {
        let adv = gae(&rewards, &values, 0.0, 0.99, lambda)?;
        println!("A_t λ={lambda:<4} {:?}", adv.iter().map(|a| (a * 1e4).round() / 1e4).collect::<Vec<_>>());
    }
    let mut adv = gae(&rewards, &values, 0.0, 0.99, 0.95)?;
    normalize_advantages(&mut adv);
    println!("normalized {:?}", adv.iter().map(|a| (a * 1e4).round() / 1e4).collect::<Vec<_>>());
    Ok(())
}
