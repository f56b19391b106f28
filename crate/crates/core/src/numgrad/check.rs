use super::{NumError, ParamSet};

/// Outcome of comparing analytic gradients with central differences.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coordinates: usize,
}

/// Relative error with the denominator floored at `1e-8`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Checks `f`'s analytic gradient coordinate by coordinate against
/// `(f(theta + eps) - f(theta - eps)) / (2 eps)`.
///
/// `f` returns the loss and its gradient keyed like `params`.
pub fn grad_check<F, E>(f: F, params: &ParamSet, eps: f64) -> std::result::Result<GradCheck, E>
where
    F: Fn(&ParamSet) -> std::result::Result<(f64, ParamSet), E>,
    E: From<NumError>,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(NumError::InvalidArgument(format!("finite-difference step {eps} outside (0, 1e-2]")).into());
    }
    let (l1, analytic) = f(params)?;
    let (l2, analytic2) = f(params)?;
    if l1.to_bits() != l2.to_bits() || analytic != analytic2 {
        return Err(NumError::NonDeterministic.into());
    }
    params.check_same_layout(&analytic)?;

    let mut probe = params.clone();
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: None,
        coordinates: 0,
    };
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in &names {
        let n = params.get(name)?.len();
        for k in 0..n {
            let orig = params.get(name)?.values()[k];
            probe.get_mut(name)?.values_mut()[k] = orig + eps;
            let (plus, _) = f(&probe)?;
            probe.get_mut(name)?.values_mut()[k] = orig - eps;
            let (minus, _) = f(&probe)?;
            probe.get_mut(name)?.values_mut()[k] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.get(name)?.values()[k];
            let err = relative_error(a, numeric);
            report.coordinates += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((name.clone(), k));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numgrad::{Result, Shape, Tape, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::cell::Cell;

    fn quadratic(ps: &ParamSet) -> Result<(f64, ParamSet)> {
        let mut tape = Tape::new();
        let w = tape.param(ps, "w")?;
        let loss = tape.sq_norm(w)?;
        Ok((tape.value(loss).item()?, tape.backward(loss, ps)?))
    }

    #[test]
    fn quadratic_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut ps = ParamSet::new();
        ps.insert("w", Tensor::uniform(Shape::Vector(6), 1.0, &mut rng)).unwrap();
        let r = grad_check(quadratic, &ps, 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-8, "{}", r.max_rel_error);
        assert_eq!(r.coordinates, 6);
    }

    fn chain(ps: &ParamSet, broken: bool) -> Result<(f64, ParamSet)> {
        let mut tape = Tape::new();
        let w = tape.param(ps, "w")?;
        let v = tape.param(ps, "v")?;
        let x = tape.param(ps, "x")?;
        let h = tape.matvec(w, x)?;
        let h = tape.tanh(h)?;
        let h2 = tape.matvec(v, h)?;
        let h2 = tape.tanh(h2)?;
        let loss = tape.sum(h2)?;
        let mut g = tape.backward(loss, ps)?;
        if broken {
            // drop the tanh derivative of the outer layer
            let hv = tape.value(h).values().to_vec();
            let gv = g.get_mut("v")?;
            let cols = hv.len();
            for (k, val) in gv.values_mut().iter_mut().enumerate() {
                *val = hv[k % cols];
            }
        }
        Ok((tape.value(loss).item()?, g))
    }

    fn chain_params() -> ParamSet {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut ps = ParamSet::new();
        ps.insert("w", Tensor::uniform(Shape::Matrix(4, 3), 0.8, &mut rng)).unwrap();
        ps.insert("v", Tensor::uniform(Shape::Matrix(2, 4), 0.8, &mut rng)).unwrap();
        ps.insert("x", Tensor::uniform(Shape::Vector(3), 0.8, &mut rng)).unwrap();
        ps
    }

    #[test]
    fn composed_chain_passes() {
        let r = grad_check(|p| chain(p, false), &chain_params(), 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-6, "{}", r.max_rel_error);
    }

    #[test]
    fn broken_rule_is_caught() {
        let r = grad_check(|p| chain(p, true), &chain_params(), 1e-5).unwrap();
        assert!(r.max_rel_error > 1e-2, "{}", r.max_rel_error);
        assert_eq!(r.worst.unwrap().0, "v");
    }

    #[test]
    fn nondeterminism_detected() {
        let calls = Cell::new(0u32);
        let mut ps = ParamSet::new();
        ps.insert("w", Tensor::scalar(1.0).unwrap()).unwrap();
        let f = |p: &ParamSet| {
            calls.set(calls.get() + 1);
            let (l, g) = quadratic(p)?;
            Ok((l + calls.get() as f64, g))
        };
        assert!(matches!(grad_check(f, &ps, 1e-5), Err(NumError::NonDeterministic)));
    }

    #[test]
    fn eps_range_enforced() {
        let mut ps = ParamSet::new();
        ps.insert("w", Tensor::scalar(1.0).unwrap()).unwrap();
        assert!(grad_check(quadratic, &ps, 0.0).is_err());
        assert!(grad_check(quadratic, &ps, 0.1).is_err());
    }
}
