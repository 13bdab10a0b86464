//! Check the analytic gradients of a tiny full model against central
//! differences, then corrupt one gradient entry and watch the check fail.
//!
//! `cargo run --example gradient_check`

use stam::numcore::ParamStore;
use stam::trainer::{grad_check, GradCheckDims};

fn main() -> stam::Result<()> {
    let dims = GradCheckDims::default();
    let r = grad_check(dims, 1e-5, 0, None)?;
    println!(
        "{dims:?}\n{} coordinates: max relative error {:.2e}, max absolute error {:.2e}",
        r.checked, r.max_rel_error, r.max_abs_error
    );
    let corrupt = |s: &mut ParamStore| {
        if let Some(p) = s.iter_mut().nth(3) {
            p.grad.data_mut()[0] += 0.1;
        }
    };
    let bad = grad_check(dims, 1e-5, 0, Some(&corrupt))?;
    println!("corrupted: max relative error {:.2e} at {:?}", bad.max_rel_error, bad.worst);
    Ok(())
}
