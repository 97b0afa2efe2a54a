//! Runs the full gradient oracle: every op kind and every layer, in 64-bit
//! arithmetic. Pass an op name (e.g. `tanh`) to negate its backward pass and
//! watch the affected lines fail.

use grnp::oracle::{parse_op, run_checks};

fn main() -> grnp::Result<()> {
    let fault = std::env::args().nth(1).map(|name| parse_op(&name).expect("known op name"));
    let t = std::time::Instant::now();
    let lines = run_checks(fault)?;
    for l in &lines {
        println!("{l}");
    }
    let failed = lines.iter().filter(|l| !l.passed()).count();
    println!("{} checks, {failed} failed, {:.1?}", lines.len(), t.elapsed());
    Ok(())
}
