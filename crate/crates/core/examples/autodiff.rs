//! Builds a two-layer network on the tape, backpropagates a squared error
//! and compares the gradient with central differences.

use grnp::nn::{grad_check, GradCheckOptions, Graph, Linear, ParamStore, Tensor};

fn main() -> grnp::Result<()> {
    let mut rng = grnp::rng_from_seed(3);
    let mut store = ParamStore::<f64>::new();
    let l1 = Linear::new(&mut store, "l1", 3, 5, true, &mut rng);
    let l2 = Linear::new(&mut store, "l2", 5, 1, true, &mut rng);
    let x = Tensor::matrix(2, 3, vec![0.5, -1.0, 2.0, 0.1, 0.3, -0.7])?;
    let y = Tensor::matrix(2, 1, vec![1.0, -1.0])?;

    let loss_fn = |g: &mut Graph<'_, f64>| {
        let xv = g.constant(x.clone());
        let h = l1.forward(g, xv)?;
        let h = g.tanh(h);
        let out = l2.forward(g, h)?;
        let yv = g.constant(y.clone());
        let d = g.sub(out, yv)?;
        let sq = g.mul(d, d)?;
        Ok(g.mean(sq))
    };

    let mut g = Graph::new(&store);
    let loss = loss_fn(&mut g)?;
    let grads = g.backward(loss)?;
    println!("loss {:.6} over {} tape nodes", g.value(loss).item(), g.len());
    for id in store.ids() {
        let norm = grads.get(id).map_or(0.0, |t| t.sq_norm().sqrt());
        println!("  d/d{:<5} norm {norm:.6}", store.name(id));
    }
    drop(g);

    let report = grad_check(&mut store, &[], loss_fn, &GradCheckOptions::default())?;
    println!(
        "finite differences: {} coordinates, max relative error {:.2e}",
        report.coords_checked, report.max_rel_error
    );
    Ok(())
}
