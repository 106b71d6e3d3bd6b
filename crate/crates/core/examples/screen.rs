//! Screens one simulated panel with the split test and prints the selection quality.

use alphascreen::simulation::{builtin, generate_panel, replication_rng};
use alphascreen::testing::{evaluate, split_statistics, SplitOptions};

fn main() -> alphascreen::Result<()> {
    let sc = builtin::table1_normal();
    let g = generate_panel(&sc, &mut replication_rng(sc.seed, 0))?;
    let stats = split_statistics(&g.returns, &g.factors, &SplitOptions::default())?;
    for beta in [0.05, 0.1, 0.15] {
        let res = stats.clone().select(beta)?;
        let m = evaluate(&res, &g.truth);
        println!(
            "beta {beta:.2}: threshold {:.3}, {} selected, fdp {:.3}, power {:.3}",
            res.threshold, m.r_count, m.fdp, m.power
        );
    }
    Ok(())
}
