use thiserror::Error;

use super::{ParamSet, Tape, Tensor, Var};

#[derive(Debug, Error)]
pub enum GradCheckError {
    #[error("reverse-mode gradient contains non-finite values (param {0})")]
    NonFiniteGradient(String),
    #[error("forward value is non-finite during finite differencing")]
    NonFiniteForward,
}

/// Pins the higher-rank lifetime of a grad-check closure; wrap closure
/// literals in this before handing them to [`grad_check`].
pub fn scalar_fn<F>(f: F) -> F
where
    F: for<'t> Fn(&'t Tape, &ParamSet) -> Var<'t>,
{
    f
}

/// Compare the reverse-mode gradient of a scalar function against central
/// finite differences, element by element, over every parameter the function
/// binds. Returns the maximum relative error
/// `|a - b| / max(1e-8, |a| + |b|)`.
///
/// `f` must be pure: same `(tape, params)` in, same scalar out.
pub fn grad_check<F>(f: F, params: &ParamSet, eps: f64) -> Result<f64, GradCheckError>
where
    F: for<'t> Fn(&'t Tape, &ParamSet) -> Var<'t>,
{
    let names: Vec<String> = {
        let tape = Tape::new();
        let loss = f(&tape, params);
        let grads = tape.backward(loss).into_gradset();
        grads.iter().map(|(n, _)| n.to_string()).collect()
    };
    grad_check_wrt(f, params, eps, &names)
}

/// As [`grad_check`], restricted to the named parameters.
pub fn grad_check_wrt<F>(
    f: F,
    params: &ParamSet,
    eps: f64,
    names: &[String],
) -> Result<f64, GradCheckError>
where
    F: for<'t> Fn(&'t Tape, &ParamSet) -> Var<'t>,
{
    assert!(
        (1e-7..=1e-4).contains(&eps),
        "grad_check eps {eps} outside [1e-7, 1e-4]"
    );

    let analytic = {
        let tape = Tape::new();
        let loss = f(&tape, params);
        tape.backward(loss).into_gradset()
    };
    for (name, g) in analytic.iter() {
        if !g.is_finite() {
            return Err(GradCheckError::NonFiniteGradient(name.to_string()));
        }
    }

    let eval = |p: &ParamSet| -> Result<f64, GradCheckError> {
        let tape = Tape::new();
        let v = f(&tape, p).value().value();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(GradCheckError::NonFiniteForward)
        }
    };

    let mut max_rel: f64 = 0.0;
    for name in names {
        let grad = match analytic.get(name) {
            Some(g) => g.clone(),
            None => continue,
        };
        let base: Tensor = params.get(name).clone();
        for k in 0..base.len() {
            let x = base.data()[k];
            let mut plus = params.clone();
            plus.set(name, base.with_element(k, x + eps));
            let mut minus = params.clone();
            minus.set(name, base.with_element(k, x - eps));
            let fd = (eval(&plus)? - eval(&minus)?) / (2.0 * eps);
            let a = grad.data()[k];
            let rel = (a - fd).abs() / (1e-8f64).max(a.abs() + fd.abs());
            max_rel = max_rel.max(rel);
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffmath::{init_params, Rng};

    #[test]
    fn quadratic_form_passes() {
        // loss = p^T W^T W p
        let spec = vec![("w".to_string(), vec![4, 4]), ("p".to_string(), vec![4, 1])];
        let mut params = init_params(&spec, 3);
        let mut rng = Rng::new(8);
        params.set(
            "p",
            Tensor::matrix(4, 1, (0..4).map(|_| rng.uniform_in(-1.0, 1.0)).collect()),
        );
        let f = scalar_fn(|tape, p| {
            let w = tape.bind(p, "w");
            let pv = tape.bind(p, "p");
            let wp = w.matmul(pv);
            wp.square().sum()
        });
        let err = grad_check(f, &params, 1e-5).unwrap();
        assert!(err < 1e-6, "max rel error {err}");
    }

    #[test]
    fn constant_function_zero_grad() {
        let spec = vec![("w".to_string(), vec![3, 3])];
        let params = init_params(&spec, 1);
        let f = scalar_fn(|tape, p| {
            let _w = tape.bind(p, "w");
            tape.constant_scalar(5.0).scale(1.0)
        });
        let err = grad_check(f, &params, 1e-5).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn every_core_op_passes() {
        // One composite graph touching each differentiable core op, checked
        // on several random instances. Inputs are kept away from relu kinks.
        let mut rng = Rng::new(77);
        for trial in 0..10 {
            let mut params = ParamSet::new();
            let mk = |rng: &mut Rng, r: usize, c: usize, lo: f64, hi: f64| {
                Tensor::matrix(r, c, (0..r * c).map(|_| rng.uniform_in(lo, hi)).collect())
            };
            params.insert("a", mk(&mut rng, 3, 4, 0.2, 1.5));
            params.insert("b", mk(&mut rng, 4, 3, 0.2, 1.5));
            params.insert(
                "v",
                Tensor::vector((0..3).map(|_| rng.uniform_in(0.3, 1.0)).collect()),
            );

            let f = scalar_fn(|tape, p| {
                let a = tape.bind(p, "a");
                let b = tape.bind(p, "b");
                let v = tape.bind(p, "v");
                let m = a.matmul(b); // 3x3, entries positive
                let s1 = m.sigmoid().sum();
                let s2 = m.tanh().mean();
                let s3 = m.relu().sum().scale(0.1);
                let s4 = m.exp().softmax(1).square().sum();
                let s5 = m.clamp_min(0.4).log().sum().scale(0.05);
                let s6 = m.sqrt().sum().scale(0.1);
                let s7 = m.recip().sum().scale(0.01);
                let s8 = m.t().slice(1, 0, 2).sum();
                let s9 = m.scale_rows(v).scale_cols(v).sum_axis(0).dot(v);
                let s10 = v.outer(v).sum();
                let s11 = m.add_row(v).softmax(0).square().sum();
                let s12 = m.gather_rows(&[2, 0]).mean();
                let s13 = tape.concat(1, &[m, m.neg()]).square().mean();
                let parts = s1
                    .add(s2)
                    .add(s3)
                    .add(s4)
                    .add(s5)
                    .add(s6)
                    .add(s7)
                    .add(s8)
                    .add(s9)
                    .add(s10)
                    .add(s11)
                    .add(s12)
                    .add(s13);
                parts.sub(m.sum().scale(0.3)).add_scalar(1.0)
            });
            let err = grad_check(f, &params, 1e-5).unwrap();
            assert!(err < 1e-5, "trial {trial}: max rel error {err}");
        }
    }

    #[test]
    fn svd3_backward_matches_finite_differences() {
        let mut rng = Rng::new(2024);
        for trial in 0..20 {
            let mut params = ParamSet::new();
            params.insert(
                "m",
                Tensor::matrix(3, 3, (0..9).map(|_| rng.uniform_in(-1.5, 1.5)).collect()),
            );
            let f = scalar_fn(|tape, p| {
                let m = tape.bind(p, "m");
                let (u, s, v) = m.svd3().unwrap();
                // A loss touching all three outputs.
                let su = u
                    .square()
                    .scale_rows(tape.constant(Tensor::vector(vec![1.0, 2.0, 3.0])))
                    .sum();
                let ss = s
                    .mul(s)
                    .dot(tape.constant(Tensor::vector(vec![0.5, 1.0, 2.0])));
                let sv = v.matmul(v.t()).sum(); // == 3 (constant), still exercises V grads
                let svt = v.slice(1, 0, 1).square().sum();
                su.add(ss).add(sv).add(svt)
            });
            // Skip instances too close to singular-value degeneracy, where the
            // straight-through policy intentionally diverges from the oracle.
            let gap = {
                let (_, s, _) = super::super::svd3_decompose(params.get("m")).unwrap();
                super::super::svd3::min_gap(s.data())
            };
            if gap < 0.05 {
                continue;
            }
            let err = grad_check(f, &params, 1e-5).unwrap();
            assert!(
                err < 1e-5,
                "trial {trial}: svd3 grad error {err} (gap {gap})"
            );
        }
    }

    #[test]
    fn degenerate_svd_stays_finite() {
        // Repeated singular values: the straight-through fallback must give a
        // finite gradient (exactness is not promised there).
        let mut params = ParamSet::new();
        params.insert("m", Tensor::eye(3));
        let f = scalar_fn(|tape, p| {
            let m = tape.bind(p, "m");
            let (u, s, _v) = m.svd3().unwrap();
            u.sum().add(s.sum())
        });
        let tape = Tape::new();
        let loss = f(&tape, &params);
        let grads = tape.backward(loss).into_gradset();
        assert!(grads.get("m").unwrap().is_finite());
    }
}
