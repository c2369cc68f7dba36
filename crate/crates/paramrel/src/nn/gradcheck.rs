//! Central finite-difference verification of analytic gradients.

use std::collections::BTreeMap;

use crate::error::Result;
use crate::nn::store::ParamStore;
use crate::nn::tensor::Tensor;

/// Loss with analytic gradients, as produced by a tape backward pass.
pub type LossAndGrads = (f64, BTreeMap<String, Tensor>);

/// Compare analytic gradients of `f` against central finite differences
/// on a fourth-order stencil:
/// (f(x-2e) - 8 f(x-e) + 8 f(x+e) - f(x+2e)) / (12 e).
///
/// The higher-order stencil keeps truncation error negligible at step
/// sizes large enough that f64 cancellation noise stays below the 1e-8
/// relative-error floor, which a two-point difference cannot manage on
/// losses of magnitude ~10.
///
/// `f` must be pure and deterministic (fix any RNG draws outside).
/// Returns the max over parameter entries of
/// |analytic - central| / max(1e-8, |analytic| + |central|).
pub fn grad_check<F>(f: F, params: &ParamStore, eps: f64) -> Result<f64>
where
    F: Fn(&ParamStore) -> Result<LossAndGrads>,
{
    let (_, analytic) = f(params)?;
    let mut worst: f64 = 0.0;

    for (name, tensor) in params.iter() {
        for i in 0..tensor.len() {
            let eval = |delta: f64| -> Result<f64> {
                let mut perturbed = params.clone();
                perturbed.get_mut(name).unwrap().data_mut()[i] += delta;
                Ok(f(&perturbed)?.0)
            };
            // paired differences first, so constant functions cancel exactly
            let inner = eval(eps)? - eval(-eps)?;
            let outer = eval(2.0 * eps)? - eval(-2.0 * eps)?;
            let central = (8.0 * inner - outer) / (12.0 * eps);
            let a = analytic
                .get(name)
                .map(|g| g.data()[i])
                .unwrap_or(0.0);
            let rel = (a - central).abs() / f64::max(1e-8, a.abs() + central.abs());
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::store::VarMap;
    use crate::nn::tape::Tape;
    use crate::rng;

    #[test]
    fn quadratic_is_exact() {
        // f = ||p||^2 / 2 has gradient p; central differences are exact
        // for quadratics up to rounding.
        let mut store = ParamStore::new();
        store
            .insert("p", Tensor::from_vec(vec![0.3, -1.2, 2.0]))
            .unwrap();
        let f = |s: &ParamStore| -> Result<LossAndGrads> {
            let mut tape = Tape::new();
            let vars = VarMap::stage(&mut tape, s);
            let p = vars.get("p");
            let sq = tape.dot(p, p);
            let loss = tape.scale(sq, 0.5);
            let grads = tape.backward(loss)?;
            Ok((tape.value_scalar(loss), vars.extract_grads(&grads, s)))
        };
        let err = grad_check(f, &store, 1e-5).unwrap();
        assert!(err < 1e-8, "err {err}");
    }

    #[test]
    fn constant_function_gives_zero_error() {
        let mut store = ParamStore::new();
        store.insert("p", Tensor::from_vec(vec![1.0, 2.0])).unwrap();
        let f = |s: &ParamStore| -> Result<LossAndGrads> {
            let mut tape = Tape::new();
            let vars = VarMap::stage(&mut tape, s);
            let c = tape.leaf_scalar(4.2);
            let loss = tape.scale(c, 1.0);
            let grads = tape.backward(loss)?;
            Ok((tape.value_scalar(loss), vars.extract_grads(&grads, s)))
        };
        let err = grad_check(f, &store, 1e-5).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn group_norm_plus_linear_chain() {
        let mut rng = rng::seeded(17);
        let mut store = ParamStore::new();
        store
            .insert("w", Tensor::new(vec![2, 8], rng::normal_vec(&mut rng, 16)).unwrap())
            .unwrap();
        store
            .insert("x", Tensor::from_vec(rng::normal_vec(&mut rng, 8)))
            .unwrap();
        let f = |s: &ParamStore| -> Result<LossAndGrads> {
            let mut tape = Tape::new();
            let vars = VarMap::stage(&mut tape, s);
            let x = vars.get("x");
            let gn = tape.group_norm(x, 2, 1e-5);
            let y = tape.matvec(vars.get("w"), gn, 2, 8);
            let act = tape.silu(y);
            let loss = tape.sum(act);
            let grads = tape.backward(loss)?;
            Ok((tape.value_scalar(loss), vars.extract_grads(&grads, s)))
        };
        let err = grad_check(f, &store, 1e-5).unwrap();
        assert!(err < 1e-4, "err {err}");
    }

    #[test]
    fn two_layer_mlp_randomized_trials() {
        // Random small MLPs, 20 trials, against central differences.
        for trial in 0..20 {
            let mut rng = rng::seeded(100 + trial);
            let mut store = ParamStore::new();
            store
                .insert("l0.w", Tensor::new(vec![6, 4], rng::normal_vec(&mut rng, 24)).unwrap())
                .unwrap();
            store
                .insert("l0.b", Tensor::from_vec(rng::normal_vec(&mut rng, 6)))
                .unwrap();
            store
                .insert("l1.w", Tensor::new(vec![1, 6], rng::normal_vec(&mut rng, 6)).unwrap())
                .unwrap();
            store
                .insert("l1.b", Tensor::from_vec(rng::normal_vec(&mut rng, 1)))
                .unwrap();
            let x = rng::normal_vec(&mut rng, 4);
            let f = move |s: &ParamStore| -> Result<LossAndGrads> {
                let mut tape = Tape::new();
                let vars = VarMap::stage(&mut tape, s);
                let xv = tape.leaf(&x);
                let h = tape.matvec(vars.get("l0.w"), xv, 6, 4);
                let h = tape.add(h, vars.get("l0.b"));
                let h = tape.silu(h);
                let y = tape.matvec(vars.get("l1.w"), h, 1, 6);
                let y = tape.add(y, vars.get("l1.b"));
                let loss = tape.sum(y);
                let grads = tape.backward(loss)?;
                Ok((tape.value_scalar(loss), vars.extract_grads(&grads, s)))
            };
            let err = grad_check(&f, &store, 1e-5).unwrap();
            assert!(err < 1e-4, "trial {trial}: err {err}");
        }
    }

    #[test]
    fn per_op_gradients_match_finite_differences() {
        // Every differentiable tape op, randomized inputs, 20 trials each.
        type Build = fn(&mut Tape, crate::nn::tape::Var) -> crate::nn::tape::Var;
        let builders: Vec<(&str, Build)> = vec![
            ("silu", |t, x| t.silu(x)),
            ("exp", |t, x| {
                let s = t.scale(x, 0.3);
                t.exp(s)
            }),
            ("group_norm", |t, x| t.group_norm(x, 2, 1e-5)),
            ("clamp", |t, x| t.clamp(x, -0.8, 0.8)),
            ("log_softmax", |t, x| t.log_softmax_rows(x, 2, 4)),
            ("log_sum_exp", |t, x| t.log_sum_exp_rows(x, 2, 4)),
            ("select", |t, x| t.select_per_row(x, &[1, 3], 2, 4)),
            ("slice_concat", |t, x| {
                let a = t.slice(x, 0, 4);
                let b = t.slice(x, 4, 4);
                let m = t.mul(a, b);
                let s = t.sub(a, b);
                t.concat(&[m, s])
            }),
            ("add_n_scale", |t, x| {
                let a = t.scale(x, 0.5);
                let b = t.add_scalar(x, 0.1);
                t.add_n(&[a, b, x])
            }),
        ];
        for (name, build) in builders {
            for trial in 0..20u64 {
                let mut rng = rng::seeded(7000 + trial);
                let mut x = rng::normal_vec(&mut rng, 8);
                if name == "clamp" {
                    // keep inputs off the clamp kink, where the op is not
                    // differentiable and finite differences are undefined
                    for v in x.iter_mut() {
                        if (v.abs() - 0.8).abs() < 0.01 {
                            *v *= 0.9;
                        }
                    }
                }
                let mut store = ParamStore::new();
                store.insert("x", Tensor::from_vec(x)).unwrap();
                let weights = rng::normal_vec(&mut rng, 8);
                let f = |s: &ParamStore| -> Result<LossAndGrads> {
                    let mut tape = Tape::new();
                    let vars = VarMap::stage(&mut tape, s);
                    let y = build(&mut tape, vars.get("x"));
                    let w = tape.leaf(&weights[..tape.len_of(y)]);
                    let loss = tape.dot(y, w);
                    let grads = tape.backward(loss)?;
                    Ok((tape.value_scalar(loss), vars.extract_grads(&grads, s)))
                };
                let err = grad_check(&f, &store, 1e-5).unwrap();
                assert!(err < 1e-4, "op {name} trial {trial}: err {err}");
            }
        }
    }
}
