use super::{NumError, ParamId, ParamStore, Tape, Var};

/// Denominator floor for relative error, so entries whose true gradient is
/// (numerically) zero are judged on absolute error instead.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Parameter name and flat index where the worst relative error occurred.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    /// Coordinates whose `±eps` probe crossed a ReLU/top_half branch and
    /// were re-probed with a smaller step.
    pub refined: usize,
    /// Coordinates sitting on a branch point even at the smallest step;
    /// excluded from the error figures.
    pub skipped: usize,
}

/// Each refinement divides the step by 10.
const MAX_REFINEMENTS: usize = 3;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compares analytic parameter gradients against central differences.
///
/// `loss_fn` must record a scalar loss on the tape it is handed and be a pure
/// function of the parameter values (freeze any sampling beforehand).
/// Central differences are only taken inside the smooth region of the
/// unperturbed point: when a probe changes the branch fingerprint the step
/// shrinks, and coordinates that never settle are counted as skipped.
/// `tamper` may rewrite the analytic gradients before comparison; it exists
/// so callers can inject faults and confirm the check catches them.
pub fn check_parameter_gradients<F>(
    store: &mut ParamStore,
    eps: f64,
    mut loss_fn: F,
    tamper: Option<&dyn Fn(&mut ParamStore)>,
) -> Result<GradCheckReport, NumError>
where
    F: FnMut(&ParamStore, &mut Tape) -> Result<Var, NumError>,
{
    store.zero_grad();
    let mut tape = Tape::new();
    let loss = loss_fn(store, &mut tape)?;
    tape.backward(loss, store)?;
    let base = tape.branch_fingerprint();
    if let Some(t) = tamper {
        t(store);
    }
    let analytic: Vec<Vec<f64>> = store.iter().map(|p| p.grad.data().to_vec()).collect();
    let ids: Vec<ParamId> = store.ids().collect();

    let mut eval = |store: &ParamStore| -> Result<(f64, u64), NumError> {
        let mut tape = Tape::new();
        let loss = loss_fn(store, &mut tape)?;
        Ok((tape.value(loss).item(), tape.branch_fingerprint()))
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: None,
        checked: 0,
        refined: 0,
        skipped: 0,
    };
    for (pi, id) in ids.into_iter().enumerate() {
        for j in 0..store.value(id).len() {
            let orig = store.value(id).data()[j];
            let mut h = eps;
            let mut numeric = None;
            for attempt in 0..=MAX_REFINEMENTS {
                store.get_mut(id).value.data_mut()[j] = orig + h;
                let (plus, fp_plus) = eval(store)?;
                store.get_mut(id).value.data_mut()[j] = orig - h;
                let (minus, fp_minus) = eval(store)?;
                store.get_mut(id).value.data_mut()[j] = orig;
                if fp_plus == base && fp_minus == base {
                    if attempt > 0 {
                        report.refined += 1;
                    }
                    numeric = Some((plus - minus) / (2.0 * h));
                    break;
                }
                h /= 10.0;
            }
            let Some(numeric) = numeric else {
                report.skipped += 1;
                continue;
            };
            let a = analytic[pi][j];
            let rel = relative_error(a, numeric);
            report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some((store.get(id).name.clone(), j));
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
