use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};

use super::{evaluate_mse, AdapterModel, Method, Precision, TrainConfig, TrainReport};
use crate::embedding::PairedEmbeddings;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::optim::Adam;
use crate::scalar::Scalar;
use crate::seed;

const INIT_STD: f64 = 0.01;

/// Loss `Σ‖W·x + b − y‖² / N` over all rows of `x`/`y`.
fn full_loss<T: Scalar>(x: &Matrix<T>, y: &Matrix<T>, params: &[T], dt: usize, ds: usize, use_bias: bool) -> f64 {
    let mut pred = Matrix::<T>::zeros(x.rows(), dt);
    T::gemm(x.rows(), ds, dt, T::one(), x.as_slice(), (ds, 1), &params[..dt * ds], (1, ds), T::zero(), pred.as_mut_slice(), (dt, 1));
    let mut total = 0.0f64;
    for i in 0..x.rows() {
        for (j, (&p, &t)) in pred.row(i).iter().zip(y.row(i)).enumerate() {
            let b = if use_bias { params[dt * ds + j] } else { T::zero() };
            let r = (p + b - t).to_f64_lossy();
            total += r * r;
        }
    }
    total / x.rows() as f64
}

/// Minibatch Adam on the mean squared error.
///
/// Weights start from a seeded N(0, 0.01²) draw and the bias from zero; each
/// epoch visits the pairs in a fresh seeded permutation. Gradients are those
/// of the element-wise mean `Σ‖r‖² / (B·dim_target)`; the reported losses use
/// the per-pair mean `Σ‖r‖² / B`.
pub fn fit_iterative<T: Scalar>(pairs: &PairedEmbeddings, config: &TrainConfig) -> Result<AdapterModel> {
    config.validate()?;
    let (n, ds, dt) = (pairs.len(), pairs.dim_source(), pairs.dim_target());
    let x = pairs.source_matrix::<T>();
    let y = pairs.target_matrix::<T>();

    let n_weights = dt * ds;
    let n_params = n_weights + if config.use_bias { dt } else { 0 };
    let mut params = vec![T::zero(); n_params];
    let normal = Normal::new(0.0, INIT_STD).map_err(|e| Error::validation(e.to_string()))?;
    let mut init_rng = seed::stream(config.seed, "adapter/init", 0);
    for w in &mut params[..n_weights] {
        *w = T::from_f64_lossy(normal.sample(&mut init_rng));
    }

    let initial_mse = full_loss(&x, &y, &params, dt, ds, config.use_bias);

    let mut adam = Adam::<T>::new(n_params, config.adam());
    let mut grads = vec![T::zero(); n_params];
    let mut order: Vec<usize> = (0..n).collect();
    let mut shuffle_rng = seed::stream(config.seed, "adapter/shuffle", 0);
    let bs = config.batch_size.min(n);
    let mut xb = Matrix::<T>::zeros(bs, ds);
    let mut yb = Matrix::<T>::zeros(bs, dt);
    let mut resid = Matrix::<T>::zeros(bs, dt);
    let mut history = Vec::with_capacity(config.epochs);

    for _epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_sum = 0.0f64;
        for batch in order.chunks(bs) {
            let b = batch.len();
            for (r, &idx) in batch.iter().enumerate() {
                xb.row_mut(r).copy_from_slice(x.row(idx));
                yb.row_mut(r).copy_from_slice(y.row(idx));
            }
            let xs = &xb.as_slice()[..b * ds];
            let rs = &mut resid.as_mut_slice()[..b * dt];
            // resid = Xb·Wᵀ
            T::gemm(b, ds, dt, T::one(), xs, (ds, 1), &params[..n_weights], (1, ds), T::zero(), rs, (dt, 1));
            let mut batch_sum = 0.0f64;
            for r in 0..b {
                let row = &mut rs[r * dt..(r + 1) * dt];
                for (j, (v, &t)) in row.iter_mut().zip(yb.row(r)).enumerate() {
                    if config.use_bias {
                        *v += params[n_weights + j];
                    }
                    *v -= t;
                    let f = v.to_f64_lossy();
                    batch_sum += f * f;
                }
            }
            epoch_sum += batch_sum;

            let scale = T::from_f64_lossy(2.0 / (b * dt) as f64);
            // dW = scale · residᵀ·Xb
            let (gw, gb) = grads.split_at_mut(n_weights);
            T::gemm(dt, b, ds, scale, rs, (1, dt), xs, (ds, 1), T::zero(), gw, (ds, 1));
            if config.use_bias {
                gb.iter_mut().for_each(|g| *g = T::zero());
                for r in 0..b {
                    gb.iter_mut().zip(&rs[r * dt..(r + 1) * dt]).for_each(|(g, &v)| *g += v);
                }
                gb.iter_mut().for_each(|g| *g *= scale);
            }
            adam.update(&mut params, &grads);
        }
        history.push(epoch_sum / n as f64);
    }

    let weights = Matrix::from_vec(dt, ds, params[..n_weights].to_vec());
    let bias = config.use_bias.then(|| &params[n_weights..]);
    let precision = if T::NAME == "f32" { Precision::F32 } else { Precision::F64 };
    let mut meta = TrainReport::new(config, Method::Iterative, n, precision);
    meta.initial_mse = Some(initial_mse);
    meta.loss_history = history;
    meta.normalize_inputs = false;
    let mut adapter = AdapterModel::from_parts(pairs, &weights, bias, meta)?;
    adapter.meta.final_mse = evaluate_mse(&adapter, pairs)?;
    Ok(adapter)
}
