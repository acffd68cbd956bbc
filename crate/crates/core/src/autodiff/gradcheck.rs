use super::params::{Bound, ParamStore};
use super::tape::{NodeId, Tape};
use super::AutodiffError;

/// Compares reverse-mode gradients of a scalar function with central finite
/// differences. Returns `max_i |g_ad − g_fd| / max(1, |g_fd|)`.
pub fn grad_check<F>(params: &ParamStore, eps: f64, f: F) -> Result<f64, AutodiffError>
where
    F: Fn(&mut Tape, &Bound) -> Result<NodeId, AutodiffError>,
{
    if !(eps > 0.0) {
        return Err(AutodiffError::Domain { op: "grad_check", value: eps });
    }
    let eval = |p: &ParamStore| -> Result<f64, AutodiffError> {
        let mut tape = Tape::new();
        let bound = p.bind_frozen(&mut tape);
        let out = f(&mut tape, &bound)?;
        let v = tape.scalar(out)?;
        if !v.is_finite() {
            return Err(AutodiffError::NonFinite { op: "grad_check" });
        }
        Ok(v)
    };

    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let out = f(&mut tape, &bound)?;
    if !tape.scalar(out)?.is_finite() {
        return Err(AutodiffError::NonFinite { op: "grad_check" });
    }
    let analytic = params.gather_grad(&bound, &tape.backward(out)?);

    let base = params.flatten();
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for i in 0..base.len() {
        let mut x = base.clone();
        x[i] = base[i] + eps;
        probe.unflatten(&x)?;
        let up = eval(&probe)?;
        x[i] = base[i] - eps;
        probe.unflatten(&x)?;
        let down = eval(&probe)?;
        let fd = (up - down) / (2.0 * eps);
        worst = worst.max((analytic[i] - fd).abs() / fd.abs().max(1.0));
    }
    Ok(worst)
}
