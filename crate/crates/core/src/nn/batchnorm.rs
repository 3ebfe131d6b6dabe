use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Whether a network runs with batch statistics or stored ones.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNormConfig {
    pub momentum: f64,
    pub eps: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        BatchNormConfig {
            momentum: 0.1,
            eps: 1e-5,
        }
    }
}

/// Per-channel batch normalization state.
#[derive(Clone, Debug)]
pub struct BatchNormState<T: Scalar = f32> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub config: BatchNormConfig,
}

impl<T: Scalar> BatchNormState<T> {
    /// gamma 1, beta 0, running mean 0, running variance 1.
    pub fn new(channels: usize, config: BatchNormConfig) -> Result<Self> {
        let ones = Tensor::from_vec(vec![T::one(); channels], &[channels])?;
        let zeros = Tensor::from_vec(vec![T::zero(); channels], &[channels])?;
        Ok(BatchNormState {
            gamma: ones.clone(),
            beta: zeros.clone(),
            running_mean: zeros,
            running_var: ones,
            config,
        })
    }
}

/// Batch normalization over `[n, c, h, w]`.
///
/// In train mode the output uses the biased batch variance and the running
/// statistics in `state` are updated with the unbiased one; in eval mode the
/// running statistics are used and left untouched.
pub fn batchnorm2d<T: Scalar>(
    input: &Tensor<T>,
    state: &mut BatchNormState<T>,
    mode: Mode,
) -> Result<Tensor<T>> {
    let &[n, c, h, w] = input.shape() else {
        return Err(shape_err!(
            "batchnorm2d expects [n, c, h, w], got {:?}",
            input.shape()
        ));
    };
    for (name, t) in [
        ("gamma", &state.gamma),
        ("beta", &state.beta),
        ("running_mean", &state.running_mean),
        ("running_var", &state.running_var),
    ] {
        if t.shape() != [c] {
            return Err(shape_err!(
                "batchnorm {name} shape {:?}, expected [{c}]",
                t.shape()
            ));
        }
    }
    let pos = h * w;
    let m = n * pos;
    let x = input.data();
    let eps = state.config.eps;

    let (mean, var): (Vec<f64>, Vec<f64>) = match mode {
        Mode::Train => {
            if m < 2 {
                return Err(Error::DegenerateBatch(format!(
                    "batchnorm in train mode needs >= 2 values per channel, got {m}"
                )));
            }
            let stats: Vec<(f64, f64)> = (0..c)
                .map(|ch| {
                    let vals = || {
                        (0..n).flat_map(move |s| {
                            let base = (s * c + ch) * pos;
                            x[base..base + pos].iter().map(|v| v.as_f64())
                        })
                    };
                    let mean = vals().sum::<f64>() / m as f64;
                    let var = vals().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
                    (mean, var)
                })
                .collect();
            let mom = state.config.momentum;
            let unbias = m as f64 / (m - 1) as f64;
            let rm: Vec<T> = state
                .running_mean
                .data()
                .iter()
                .zip(&stats)
                .map(|(&r, &(mu, _))| T::from_f64((1.0 - mom) * r.as_f64() + mom * mu))
                .collect();
            let rv: Vec<T> = state
                .running_var
                .data()
                .iter()
                .zip(&stats)
                .map(|(&r, &(_, v))| T::from_f64((1.0 - mom) * r.as_f64() + mom * v * unbias))
                .collect();
            state.running_mean = Tensor::from_vec(rm, &[c])?;
            state.running_var = Tensor::from_vec(rv, &[c])?;
            stats.into_iter().unzip()
        }
        Mode::Eval => (
            state.running_mean.to_f64_vec(),
            state.running_var.to_f64_vec(),
        ),
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();

    let gamma = state.gamma.to_f64_vec();
    let beta = state.beta.to_f64_vec();
    let mut xhat = vec![T::zero(); x.len()];
    let mut y = vec![T::zero(); x.len()];
    for s in 0..n {
        for ch in 0..c {
            let base = (s * c + ch) * pos;
            for i in base..base + pos {
                let xh = (x[i].as_f64() - mean[ch]) * inv_std[ch];
                xhat[i] = T::from_f64(xh);
                y[i] = T::from_f64(xh * gamma[ch] + beta[ch]);
            }
        }
    }

    let gamma_t = state.gamma.clone();
    let backward = Box::new(move |g: &[T], needs: &[bool]| {
        let gamma = gamma_t.to_f64_vec();
        let mut sum_g = vec![0.0f64; c];
        let mut sum_gx = vec![0.0f64; c];
        for s in 0..n {
            for ch in 0..c {
                let base = (s * c + ch) * pos;
                for i in base..base + pos {
                    sum_g[ch] += g[i].as_f64();
                    sum_gx[ch] += g[i].as_f64() * xhat[i].as_f64();
                }
            }
        }
        let dx = needs[0].then(|| {
            let mut dx = vec![T::zero(); g.len()];
            for s in 0..n {
                for ch in 0..c {
                    let base = (s * c + ch) * pos;
                    for i in base..base + pos {
                        let v = match mode {
                            Mode::Train => {
                                gamma[ch] * inv_std[ch] / m as f64
                                    * (m as f64 * g[i].as_f64()
                                        - sum_g[ch]
                                        - xhat[i].as_f64() * sum_gx[ch])
                            }
                            Mode::Eval => gamma[ch] * inv_std[ch] * g[i].as_f64(),
                        };
                        dx[i] = T::from_f64(v);
                    }
                }
            }
            dx
        });
        let dgamma = needs[1].then(|| sum_gx.iter().map(|&v| T::from_f64(v)).collect());
        let dbeta = needs[2].then(|| sum_g.iter().map(|&v| T::from_f64(v)).collect());
        vec![dx, dgamma, dbeta]
    });
    Ok(Tensor::from_op(
        y,
        input.shape().to_vec(),
        vec![input.clone(), state.gamma.clone(), state.beta.clone()],
        backward,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Fill;

    #[test]
    fn constant_channel_normalizes_to_zero() {
        let x = Tensor::<f32>::from_vec(vec![3.0; 8], &[2, 1, 2, 2]).unwrap();
        let mut st = BatchNormState::new(1, BatchNormConfig::default()).unwrap();
        let y = batchnorm2d(&x, &mut st, Mode::Train).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn train_mode_output_is_standardized() {
        let x = Tensor::<f64>::create(
            &[4, 3, 5, 5],
            Fill::Normal {
                mean: 2.0,
                std: 3.0,
            },
            9,
        )
        .unwrap();
        let mut st = BatchNormState::new(3, BatchNormConfig::default()).unwrap();
        let y = batchnorm2d(&x, &mut st, Mode::Train).unwrap();
        for ch in 0..3 {
            let vals: Vec<f64> = (0..4)
                .flat_map(|s| y.data()[(s * 3 + ch) * 25..(s * 3 + ch + 1) * 25].to_vec())
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-6, "{mean}");
            assert!((var - 1.0).abs() < 1e-4, "{var}");
        }
    }

    #[test]
    fn running_stats_update_with_momentum() {
        let x = Tensor::<f64>::from_vec(vec![1.0, 3.0], &[2, 1, 1, 1]).unwrap();
        let mut st = BatchNormState::new(
            1,
            BatchNormConfig {
                momentum: 0.5,
                eps: 1e-5,
            },
        )
        .unwrap();
        batchnorm2d(&x, &mut st, Mode::Train).unwrap();
        // batch mean 2, unbiased variance 2
        assert_eq!(st.running_mean.data(), &[1.0]);
        assert_eq!(st.running_var.data(), &[1.5]);
        let before = st.running_mean.clone();
        batchnorm2d(&x, &mut st, Mode::Eval).unwrap();
        assert!(st.running_mean.bitwise_eq(&before));
    }

    #[test]
    fn degenerate_batch_in_train_mode() {
        let x = Tensor::<f32>::zeros(&[1, 2, 1, 1]).unwrap();
        let mut st = BatchNormState::new(2, BatchNormConfig::default()).unwrap();
        assert!(matches!(
            batchnorm2d(&x, &mut st, Mode::Train),
            Err(Error::DegenerateBatch(_))
        ));
        assert!(batchnorm2d(&x, &mut st, Mode::Eval).is_ok());
    }
}
