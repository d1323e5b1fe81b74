use super::{input_gradient, sign_step, AttackKind, AttackSpec, AttackedImage};
use crate::error::{Error, Result};
use crate::ife::LogitModel;
use crate::scalar::{clamp, Scalar};

/// One signed gradient step of size `epsilon / 255`. Untargeted runs ascend
/// the loss of `label`; targeted runs descend the loss of the target.
pub fn fgsm<T: Scalar, M: LogitModel<T> + ?Sized>(
    model: &M,
    x: &[T],
    label: usize,
    spec: &AttackSpec,
) -> Result<AttackedImage<T>> {
    if spec.kind != AttackKind::Fgsm {
        return Err(Error::InvalidArgument(format!("fgsm called with a {} spec", spec.kind.name())));
    }
    spec.validate()?;
    let eps = T::lit(spec.epsilon / 255.0);
    let class = spec.target.unwrap_or(label);
    let (grad, _, _) = input_gradient(model, x, &[class])?;
    let descend = spec.target.is_some();
    let perturbed = x
        .iter()
        .zip(&grad)
        .map(|(&xi, &gi)| clamp(sign_step(xi, gi, eps, descend), T::zero(), T::one()))
        .collect();
    AttackedImage::finish(model, x, perturbed, label, spec.target)
}
