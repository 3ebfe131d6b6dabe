use crate::error::{shape_err, Result};
use crate::tensor::{Scalar, Tensor};

/// Clamp applied to predictions before taking logarithms.
pub const BCE_EPS: f64 = 1e-7;

/// Mean binary cross-entropy `-[t ln p + (1-t) ln(1-p)]`.
///
/// The loss value uses `p` clamped to `[eps, 1-eps]`. The gradient
/// `(p - t) / (p (1 - p))` is evaluated at the unclamped `p` whenever it lies
/// strictly inside (0, 1), so that a saturated sigmoid upstream still
/// receives the exact `p - t` signal; at the endpoints the clamped value is
/// used.
pub fn bce_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    if pred.shape() != target.shape() {
        return Err(shape_err!(
            "bce_loss shapes differ: {:?} vs {:?}",
            pred.shape(),
            target.shape()
        ));
    }
    let n = pred.numel();
    let mut total = 0.0f64;
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        let p = p.as_f64().clamp(BCE_EPS, 1.0 - BCE_EPS);
        let t = t.as_f64();
        total -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
    }
    let value = total / n as f64;

    let (pc, tc) = (pred.clone(), target.clone());
    let backward = Box::new(move |g: &[T], needs: &[bool]| {
        let scale = g[0].as_f64() / n as f64;
        let dp = needs[0].then(|| {
            pc.data()
                .iter()
                .zip(tc.data())
                .map(|(&p, &t)| {
                    let mut p = p.as_f64();
                    if !(p > 0.0 && p < 1.0) {
                        p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
                    }
                    T::from_f64(scale * (p - t.as_f64()) / (p * (1.0 - p)))
                })
                .collect()
        });
        let dt = needs[1].then(|| {
            pc.data()
                .iter()
                .map(|&p| {
                    let p = p.as_f64().clamp(BCE_EPS, 1.0 - BCE_EPS);
                    T::from_f64(scale * ((1.0 - p).ln() - p.ln()))
                })
                .collect()
        });
        vec![dp, dt]
    });
    Ok(Tensor::from_op(
        vec![T::from_f64(value)],
        vec![1],
        vec![pred.clone(), target.clone()],
        backward,
    ))
}
