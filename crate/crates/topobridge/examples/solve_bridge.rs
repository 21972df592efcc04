//! Solves the Gaussian topological Schrödinger bridge between two graph-GP
//! endpoints and prints the Bures-Wasserstein distance of the bridge
//! marginal to each endpoint along the way.

use topobridge::dynamics::ReferenceDynamics;
use topobridge::gtsb::GTSBridge;
use topobridge::metrics::bures_wasserstein;
use topobridge::synthetic::{experiment_endpoints, synthetic_operator};
use topobridge::topology::{LaplacianKind, LaplacianSpec};

fn main() {
    let op = synthetic_operator(&LaplacianSpec::new(LaplacianKind::Graph));
    let (nu0, nu1) = experiment_endpoints(&op);
    println!(
        "endpoints: tr Sigma_0 = {:.3}, tr Sigma_1 = {:.3}",
        nu0.cov().trace(),
        nu1.cov().trace()
    );

    for (name, dyn_) in [
        ("bm c=0.5", ReferenceDynamics::ts_heat_bm(op.clone(), 0.5, 0.01).unwrap()),
        ("ve c=0.01", ReferenceDynamics::ts_heat_ve(op.clone(), 0.01, 0.01, 1.0).unwrap()),
        ("ve c=10", ReferenceDynamics::ts_heat_ve(op.clone(), 10.0, 0.01, 1.0).unwrap()),
    ] {
        let bridge = GTSBridge::solve(dyn_, nu0.clone(), nu1.clone()).unwrap();
        println!("\n{name}: TE-OT objective = {:.4}", bridge.te_ot_objective().unwrap());
        println!("    t    BW(Sigma_t, Sigma_0)   BW(Sigma_t, Sigma_1)");
        for k in 0..=10 {
            let t = k as f64 / 10.0;
            let m = bridge.marginal(t);
            let to0 = bures_wasserstein(m.measure.cov(), nu0.cov(), None, None).unwrap();
            let to1 = bures_wasserstein(m.measure.cov(), nu1.cov(), None, None).unwrap();
            println!("  {t:4.2}   {to0:10.4}             {to1:10.4}");
        }
    }
}
