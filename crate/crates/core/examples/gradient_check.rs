//! Hand-written backward passes against central finite differences.

use resfu::grad::{check_kernel_apply_gradients, check_pcdc_gradients, finite_diff_grad};
use resfu::FeatureMap64;

fn main() -> resfu::Result<()> {
    let x = FeatureMap64::from_fn(2, 2, 1, |i, j, _| (i * 2 + j) as f64 - 1.5);
    let g = finite_diff_grad(|m| m.data().iter().map(|v| v * v).sum(), &x, 1e-5)?;
    println!("d/dx sum(x^2) at {:?} = {:?}", x.data(), g.data());

    for seed in 0..3 {
        let reports = check_pcdc_gradients(seed, 64)?.into_iter().chain(check_kernel_apply_gradients(seed, 64)?);
        for r in reports {
            println!(
                "seed {seed} {:<44} {:>3} probes  max rel err {:.2e}  (tol {:.0e})  {}",
                r.op_name,
                r.probes,
                r.max_rel_error,
                r.tolerance,
                if r.passed { "ok" } else { "FAILED" }
            );
        }
    }
    Ok(())
}
