use crate::error::{shape_err, Result};
use crate::tensor::{Scalar, Tensor};

/// Fully connected layer: `input [n,k] · weight [k,m] + bias [m]` per row.
pub fn dense<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let &[_, m] = weight.shape() else {
        return Err(shape_err!(
            "dense weight must be [k, m], got {:?}",
            weight.shape()
        ));
    };
    if bias.shape() != [m] {
        return Err(shape_err!(
            "dense bias shape {:?}, expected [{m}]",
            bias.shape()
        ));
    }
    let prod = input.matmul(weight)?;
    let n = prod.shape()[0];
    let b = bias.data().to_vec();
    let data: Vec<T> = prod
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| v + b[i % m])
        .collect();
    let backward = Box::new(move |g: &[T], needs: &[bool]| {
        let db = needs[1].then(|| {
            let mut db = vec![T::zero(); m];
            for row in 0..n {
                for (j, d) in db.iter_mut().enumerate() {
                    *d = *d + g[row * m + j];
                }
            }
            db
        });
        vec![needs[0].then(|| g.to_vec()), db]
    });
    Ok(Tensor::from_op(
        data,
        vec![n, m],
        vec![prod, bias.clone()],
        backward,
    ))
}
