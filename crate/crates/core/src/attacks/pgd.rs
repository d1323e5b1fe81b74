use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{input_gradient, sign_step, AttackKind, AttackSpec, AttackedImage};
use crate::error::{Error, Result};
use crate::ife::LogitModel;
use crate::scalar::{clamp, Scalar};

/// Iterated signed steps of size `alpha`, projected onto the epsilon ball
/// around `x` and onto `[0, 1]` after every step. Targeted runs stop as soon
/// as the target class is reached.
pub fn pgd<T: Scalar, M: LogitModel<T> + ?Sized>(
    model: &M,
    x: &[T],
    label: usize,
    spec: &AttackSpec,
) -> Result<AttackedImage<T>> {
    if spec.kind != AttackKind::Pgd {
        return Err(Error::InvalidArgument(format!("pgd called with a {} spec", spec.kind.name())));
    }
    spec.validate()?;
    let eps = T::lit(spec.epsilon / 255.0);
    let alpha = T::lit(spec.step_size() / 255.0);
    let (lo, hi) = ball(x, eps);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut adv = if spec.random_start {
        random_start(x, &lo, &hi, eps, &mut rng)
    } else {
        x.to_vec()
    };
    let class = spec.target.unwrap_or(label);
    let descend = spec.target.is_some();
    for _ in 0..spec.iterations {
        let (grad, _, _) = input_gradient(model, &adv, &[class])?;
        project_step(&mut adv, &grad, alpha, descend, &lo, &hi);
        if let (Some(t), true) = (spec.target, spec.early_stop) {
            if model.predict_class(&adv)? == t {
                break;
            }
        }
    }
    AttackedImage::finish(model, x, adv, label, spec.target)
}

/// Untargeted PGD over a whole batch with one backward pass per step, used
/// to craft training inputs. `eps` and `alpha` are in pixel units.
pub fn pgd_batch_untargeted<T: Scalar, M: LogitModel<T> + ?Sized, R: Rng>(
    model: &M,
    x: &[T],
    labels: &[usize],
    eps: T,
    alpha: T,
    steps: usize,
    rng: &mut R,
) -> Result<Vec<T>> {
    let (lo, hi) = ball(x, eps);
    let mut adv = random_start(x, &lo, &hi, eps, rng);
    for _ in 0..steps {
        let (grad, _, _) = input_gradient(model, &adv, labels)?;
        project_step(&mut adv, &grad, alpha, false, &lo, &hi);
    }
    Ok(adv)
}

fn ball<T: Scalar>(x: &[T], eps: T) -> (Vec<T>, Vec<T>) {
    (x.iter().map(|&v| v - eps).collect(), x.iter().map(|&v| v + eps).collect())
}

fn random_start<T: Scalar, R: Rng>(x: &[T], lo: &[T], hi: &[T], eps: T, rng: &mut R) -> Vec<T> {
    let e = eps.as_f64();
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            let u = if e > 0.0 { rng.random_range(-e..=e) } else { 0.0 };
            clamp(clamp(v + T::lit(u), lo[i], hi[i]), T::zero(), T::one())
        })
        .collect()
}

fn project_step<T: Scalar>(adv: &mut [T], grad: &[T], alpha: T, descend: bool, lo: &[T], hi: &[T]) {
    for i in 0..adv.len() {
        let moved = sign_step(adv[i], grad[i], alpha, descend);
        adv[i] = clamp(clamp(moved, lo[i], hi[i]), T::zero(), T::one());
    }
}
