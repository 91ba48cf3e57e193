//! Central finite-difference gradient checking.

use crate::params::{ParamId, ParamStore};
use crate::tensor::Real;

/// Worst-case disagreement between an analytic gradient and central
/// finite differences, for one parameter tensor.
#[derive(Debug)]
pub struct GradCheck {
    pub name: String,
    /// Largest `|analytic - fd| - rtol*|fd|` style violation margin is not
    /// kept; instead the raw worst absolute and relative errors are reported.
    pub max_abs_err: Real,
    pub max_rel_err: Real,
}

impl GradCheck {
    pub fn passes(&self, rtol: Real, atol: Real) -> bool {
        self.max_rel_err <= rtol || self.max_abs_err <= atol
    }
}

/// Compare analytic gradients in `store` (populate via backward first)
/// against central finite differences of `f`, which must recompute the same
/// scalar loss from the store's current values.
pub fn check_grads<F>(store: &mut ParamStore, ids: &[ParamId], mut f: F, eps: Real) -> Vec<GradCheck>
where
    F: FnMut(&ParamStore) -> Real,
{
    let mut out = Vec::new();
    for &id in ids {
        let analytic = store.grad(id).data().to_vec();
        let mut max_abs: Real = 0.0;
        let mut max_rel: Real = 0.0;
        for j in 0..analytic.len() {
            let orig = store.value(id).data()[j];
            store.value_mut(id).data_mut()[j] = orig + eps;
            let up = f(store);
            store.value_mut(id).data_mut()[j] = orig - eps;
            let down = f(store);
            store.value_mut(id).data_mut()[j] = orig;
            let fd = (up - down) / (2.0 * eps);
            let abs = (analytic[j] - fd).abs();
            let rel = abs / fd.abs().max(1e-6);
            if abs > max_abs {
                max_abs = abs;
            }
            if rel > max_rel {
                max_rel = rel;
            }
        }
        out.push(GradCheck {
            name: store.name(id).to_string(),
            max_abs_err: max_abs,
            max_rel_err: max_rel,
        });
    }
    out
}

/// Assert every listed parameter passes at the given tolerances.
pub fn assert_grads_close<F>(
    store: &mut ParamStore,
    ids: &[ParamId],
    f: F,
    eps: Real,
    rtol: Real,
    atol: Real,
) where
    F: FnMut(&ParamStore) -> Real,
{
    for r in check_grads(store, ids, f, eps) {
        assert!(
            r.passes(rtol, atol),
            "gradient check failed for {}: rel {:.3e}, abs {:.3e} (rtol {rtol:.0e}, atol {atol:.0e})",
            r.name,
            r.max_rel_err,
            r.max_abs_err
        );
    }
}
