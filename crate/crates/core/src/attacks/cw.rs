use super::{AttackKind, AttackSpec, AttackedImage};
use crate::error::{Error, Result};
use crate::ife::{argmax, LogitModel};
use crate::optim::Optimizer;
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor};

/// Targeted Carlini-Wagner L2 attack.
///
/// Optimises `w` with `x* = (tanh(w) + 1) / 2`, minimising
/// `||x* - x||^2 + a * max(max_{j != t} Z_j - Z_t, -kappa)`, and searches over
/// `a` for the smallest successful perturbation.
pub fn cw_l2<T: Scalar, M: LogitModel<T> + ?Sized>(
    model: &M,
    x: &[T],
    label: usize,
    spec: &AttackSpec,
) -> Result<AttackedImage<T>> {
    if spec.kind != AttackKind::CwL2 {
        return Err(Error::InvalidArgument(format!("cw_l2 called with a {} spec", spec.kind.name())));
    }
    spec.validate()?;
    let target = spec.target.expect("validated");
    let m = model.num_classes();
    if target >= m {
        return Err(Error::InvalidArgument(format!("target class {target} out of range for {m} classes")));
    }
    if x.len() != model.input_len() {
        return Err(Error::shape("cw_l2", format!("expected {} inputs, got {}", model.input_len(), x.len())));
    }
    let two = T::lit(2.0);
    let half = T::lit(0.5);
    let kappa = T::lit(spec.kappa);
    // keep atanh finite at the pixel bounds
    let shrink = T::one() - T::lit(1e3) * T::epsilon();
    let w0: Vec<T> = x.iter().map(|&v| ((two * v - T::one()) * shrink).atanh()).collect();

    let mut lower = 0.0f64;
    let mut upper = f64::INFINITY;
    let mut c = spec.initial_const;
    let mut best: Option<(T, Vec<T>)> = None;
    let mut last = x.to_vec();
    let check_every = (spec.max_iterations / 10).max(1);

    for _ in 0..spec.binary_search_steps {
        let ct = T::lit(c);
        let mut w = w0.clone();
        let mut adam = Optimizer::adam(T::lit(spec.learning_rate))?;
        let mut prev = T::infinity();
        let mut found = false;
        for it in 0..spec.max_iterations {
            let tanh: Vec<T> = w.iter().map(|v| v.tanh()).collect();
            let adv: Vec<T> = tanh.iter().map(|&t| (t + T::one()) * half).collect();
            let (z, logit_grad) = margin_gradient(model, &adv, target)?;
            let other = best_other(&z, target);
            let margin = z[other] - z[target];
            let f = margin.max(-kappa);
            let l2: T = adv.iter().zip(x).map(|(&a, &b)| (a - b) * (a - b)).sum();
            let loss = l2 + ct * f;

            let success = argmax(&z) == target && -margin >= kappa;
            if success {
                found = true;
                if best.as_ref().is_none_or(|(d, _)| l2 < *d) {
                    best = Some((l2, adv.clone()));
                }
            }
            last = adv.clone();

            if spec.abort_early && it % check_every == 0 {
                if it > 0 && loss > prev * T::lit(0.9999) {
                    break;
                }
                prev = loss;
            }

            let active = margin > -kappa;
            let grad: Vec<T> = (0..w.len())
                .map(|i| {
                    let mut d = two * (adv[i] - x[i]);
                    if active {
                        d += ct * logit_grad[i];
                    }
                    d * (T::one() - tanh[i] * tanh[i]) * half
                })
                .collect();
            adam.step(&mut [&mut w], &[&grad])?;
        }

        if found {
            upper = upper.min(c);
            c = (lower + upper) / 2.0;
        } else {
            lower = lower.max(c);
            c = if upper.is_finite() {
                (lower + upper) / 2.0
            } else {
                c * spec.const_growth
            };
        }
    }

    let perturbed = best.map(|(_, adv)| adv).unwrap_or(last);
    AttackedImage::finish(model, x, perturbed, label, Some(target))
}

/// Largest logit among classes other than `target`, first on ties.
fn best_other<T: Scalar>(z: &[T], target: usize) -> usize {
    let mut best = if target == 0 { 1 } else { 0 };
    for (j, &v) in z.iter().enumerate() {
        if j != target && v > z[best] {
            best = j;
        }
    }
    best
}

/// Logits at `adv` and the input gradient of `Z_other - Z_t`, where `other`
/// is the strongest non-target class at `adv`.
fn margin_gradient<T: Scalar, M: LogitModel<T> + ?Sized>(
    model: &M,
    adv: &[T],
    target: usize,
) -> Result<(Vec<T>, Vec<T>)> {
    let m = model.num_classes();
    let mut g = Graph::new();
    let input = g.input(model.batch_tensor(adv.to_vec())?);
    let logits = model.logits(&mut g, input)?;
    let z = g.value(logits).data().to_vec();
    let other = best_other(&z, target);
    let mut sel = vec![T::zero(); m];
    sel[other] = T::one();
    sel[target] = -T::one();
    let sel = g.constant(Tensor::new(vec![m, 1], sel)?);
    let diff = g.matmul(logits, sel)?;
    let loss = g.sum(diff)?;
    g.backward(loss)?;
    let grad = g.take_grad(input).expect("input leaf has a gradient after backward");
    Ok((z, grad))
}
