use crate::Real;

/// Binary cross-entropy on a logit, in the overflow-free form
/// `max(z, 0) − z·y + ln(1 + e^{−|z|})`. Returns `(loss, dloss/dz)`.
pub fn bce_with_logits<T: Real>(logit: T, label: u8) -> (T, T) {
    let y = if label == 1 { T::one() } else { T::zero() };
    let loss = logit.max(T::zero()) - logit * y + (-logit.abs()).exp().ln_1p();
    let grad = super::sigmoid(logit) - y;
    (loss, grad)
}
