use super::Scalar;

pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Binary cross-entropy of `sigmoid(logit)` against `label ∈ {0,1}`, computed
/// from the logit for stability. Returns `(loss, dloss/dlogit)`.
pub fn bce_with_logits<T: Scalar>(logit: T, label: T) -> (T, T) {
    let loss = logit.max(T::zero()) - logit * label + (T::one() + (-logit.abs()).exp()).ln();
    (loss, sigmoid(logit) - label)
}
