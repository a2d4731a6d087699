//! Finite-difference gradient verification.

use super::param::ParamSet;

/// Gradients whose analytic and numeric values are both below the resolution
/// of central differences are compared against this floor instead of their
/// own magnitude, so dead paths (0 vs 0) report error 0, not NaN or noise.
const DENOM_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_err: f64,
    /// Flat index of the worst element within the parameter.
    pub worst_index: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub max_rel_err: f64,
    pub tol: f64,
    pub h: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tol
    }

    /// One line per parameter plus a verdict, for CLI output.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!(
                "{:<24} max_rel_err={:.3e} (elem {})\n",
                e.name, e.max_rel_err, e.worst_index
            ));
        }
        out.push_str(&format!(
            "max relative error {:.6e} (tol {:.1e}): {}\n",
            self.max_rel_err,
            self.tol,
            if self.passed() { "PASS" } else { "FAIL" }
        ));
        out
    }
}

/// Compares the analytic gradients already accumulated in `params` against
/// central finite differences `(L(x+h) - L(x-h)) / 2h` of `loss_fn`, for
/// every scalar entry of every parameter.
///
/// Failure is a report outcome, never a panic or error. When `corrupt` is
/// set, the sign of the first analytic gradient entry above the noise floor
/// is flipped before comparing, a self-test that the harness can fail.
pub fn grad_check<F>(
    params: &mut ParamSet,
    mut loss_fn: F,
    h: f64,
    tol: f64,
    corrupt: bool,
) -> GradCheckReport
where
    F: FnMut(&ParamSet) -> f64,
{
    let mut analytic: Vec<Vec<f64>> = params.iter().map(|p| p.grad.data().to_vec()).collect();
    if corrupt {
        'outer: for grads in analytic.iter_mut() {
            for g in grads.iter_mut() {
                if g.abs() > DENOM_FLOOR {
                    *g = -*g;
                    break 'outer;
                }
            }
        }
    }

    let mut entries = Vec::with_capacity(params.len());
    let mut overall = 0.0f64;
    let ids: Vec<_> = params.ids().collect();
    for (pi, id) in ids.iter().enumerate() {
        let numel = params.get(*id).numel();
        let name = params.get(*id).name.clone();
        let mut worst = 0.0f64;
        let mut worst_index = 0;
        for ei in 0..numel {
            let orig = params.get(*id).value.data()[ei];
            params.get_mut(*id).value.data_mut()[ei] = orig + h;
            let loss_plus = loss_fn(params);
            params.get_mut(*id).value.data_mut()[ei] = orig - h;
            let loss_minus = loss_fn(params);
            params.get_mut(*id).value.data_mut()[ei] = orig;

            let fd = (loss_plus - loss_minus) / (2.0 * h);
            let a = analytic[pi][ei];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(DENOM_FLOOR);
            if rel > worst {
                worst = rel;
                worst_index = ei;
            }
        }
        overall = overall.max(worst);
        entries.push(GradCheckEntry {
            name,
            max_rel_err: worst,
            worst_index,
        });
    }

    GradCheckReport {
        entries,
        max_rel_err: overall,
        tol,
        h,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{GradTape, Matrix};

    // loss(w, u) = sum(w ∘ w) + 3 * sum(u)
    fn quadratic_loss(params: &ParamSet) -> f64 {
        let w = params.value(crate::numerics::ParamId(0));
        let u = params.value(crate::numerics::ParamId(1));
        w.data().iter().map(|x| x * x).sum::<f64>() + 3.0 * u.sum()
    }

    fn setup() -> ParamSet {
        let mut params = ParamSet::new();
        params.register("w", Matrix::from_vec(1, 3, vec![0.4, -1.1, 2.0]));
        params.register("u", Matrix::from_vec(2, 1, vec![0.3, 0.9]));
        params
    }

    fn run_backward(params: &mut ParamSet) {
        params.zero_grads();
        let ids: Vec<_> = params.ids().collect();
        let mut tape = GradTape::new();
        let wn = tape.param_node(params, ids[0]);
        let un = tape.param_node(params, ids[1]);
        let sq = tape.mul(wn, wn);
        let sw = tape.sum_all(sq);
        let su = tape.sum_all(un);
        let su3 = tape.scale(su, 3.0);
        let loss = tape.add(sw, su3);
        tape.backward(loss, 1.0, params).unwrap();
    }

    #[test]
    fn analytic_matches_fd() {
        let mut params = setup();
        run_backward(&mut params);
        let report = grad_check(&mut params, quadratic_loss, 1e-5, 1e-4, false);
        assert!(report.passed(), "{}", report.render());
        assert!(report.max_rel_err < 1e-7);
    }

    #[test]
    fn corrupted_backward_fails() {
        let mut params = setup();
        run_backward(&mut params);
        let report = grad_check(&mut params, quadratic_loss, 1e-5, 1e-4, true);
        assert!(!report.passed());
    }

    #[test]
    fn dead_path_passes() {
        let mut params = setup();
        run_backward(&mut params);
        // A parameter that never participates: zero analytic grad and a loss
        // independent of it; both sides of the comparison are zero.
        params.register("dead", Matrix::zeros(2, 2));
        let report = grad_check(&mut params, quadratic_loss, 1e-5, 1e-4, false);
        assert!(report.passed(), "{}", report.render());
        let dead = report.entries.iter().find(|e| e.name == "dead").unwrap();
        assert!(dead.max_rel_err < 1e-4);
    }
}
