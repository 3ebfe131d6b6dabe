use crate::error::{shape_err, Result};
use crate::tensor::{Scalar, Tensor};

/// 2×2 max pooling with stride 2 over `[n, c, h, w]`, `h` and `w` even.
///
/// Backward routes each window's gradient to its argmax; ties go to the
/// first element in row-major window order.
pub fn maxpool2d<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let &[n, c, h, w] = input.shape() else {
        return Err(shape_err!(
            "maxpool2d expects [n, c, h, w], got {:?}",
            input.shape()
        ));
    };
    if h % 2 != 0 || w % 2 != 0 {
        return Err(shape_err!("maxpool2d needs even spatial dims, got {h}x{w}"));
    }
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + (2 * oy) * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    let len = input.numel();
    let backward = Box::new(move |g: &[T], _: &[bool]| {
        let mut dx = vec![T::zero(); len];
        for (&src, &gv) in argmax.iter().zip(g) {
            dx[src] = dx[src] + gv;
        }
        vec![Some(dx)]
    });
    Ok(Tensor::from_op(
        out,
        vec![n, c, oh, ow],
        vec![input.clone()],
        backward,
    ))
}
