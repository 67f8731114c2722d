use super::{evaluate_mse, AdapterModel, Method, Precision, TrainConfig, TrainReport};
use crate::embedding::PairedEmbeddings;
use crate::error::{Error, Result};
use crate::linalg::{cholesky, cholesky_solve, Matrix};
use crate::scalar::Scalar;

fn column_means<T: Scalar>(m: &Matrix<T>) -> Vec<T> {
    let mut acc = vec![0.0f64; m.cols()];
    for i in 0..m.rows() {
        acc.iter_mut().zip(m.row(i)).for_each(|(a, &v)| *a += v.to_f64_lossy());
    }
    let n = m.rows() as f64;
    acc.into_iter().map(|a| T::from_f64_lossy(a / n)).collect()
}

fn center<T: Scalar>(m: &mut Matrix<T>, means: &[T]) {
    for i in 0..m.rows() {
        m.row_mut(i).iter_mut().zip(means).for_each(|(v, &mu)| *v -= mu);
    }
}

/// Exact minimizer of `Σ‖W·x + b − y‖² / N + λ‖W‖²_F` (bias unpenalized).
///
/// With a bias the data are centered first, so the normal equations are
/// `(XcᵀXc + NλI)·Wᵀ = XcᵀYc` and `b = ȳ − W·x̄`.
pub fn fit_closed_form<T: Scalar>(pairs: &PairedEmbeddings, ridge_lambda: f64, use_bias: bool) -> Result<AdapterModel> {
    if !(ridge_lambda >= 0.0) || !ridge_lambda.is_finite() {
        return Err(Error::validation(format!("ridge_lambda must be finite and >= 0, got {ridge_lambda}")));
    }
    let n = pairs.len();
    let mut x = pairs.source_matrix::<T>();
    let mut y = pairs.target_matrix::<T>();
    let means = use_bias.then(|| {
        let mx = column_means(&x);
        let my = column_means(&y);
        center(&mut x, &mx);
        center(&mut y, &my);
        (mx, my)
    });

    let mut gram = x.t_matmul(&x);
    let penalty = T::from_f64_lossy(ridge_lambda * n as f64);
    for i in 0..gram.rows() {
        let v = gram.get(i, i) + penalty;
        gram.set(i, i, v);
    }
    let size = gram.rows();
    let rel_tol = T::epsilon() * T::from_usize(size.max(16) * 4).unwrap();
    let factor = cholesky(&gram, rel_tol).map_err(|d| Error::RankDeficient { pivot: d.index, size })?;
    let rhs = x.t_matmul(&y);
    // (dim_source × dim_target) → W is its transpose
    let w_t = cholesky_solve(&factor, &rhs);
    let weights = w_t.transpose();
    if !weights.is_finite() {
        return Err(Error::RankDeficient { pivot: size, size });
    }

    let bias = means.map(|(mx, my)| {
        (0..weights.rows())
            .map(|i| {
                let wx: f64 = weights.row(i).iter().zip(&mx).map(|(&w, &m)| (w * m).to_f64_lossy()).sum();
                T::from_f64_lossy(my[i].to_f64_lossy() - wx)
            })
            .collect::<Vec<T>>()
    });

    let precision = if T::NAME == "f32" { Precision::F32 } else { Precision::F64 };
    let config = TrainConfig::closed_form(ridge_lambda);
    let mut meta = TrainReport::new(&TrainConfig { use_bias, ..config }, Method::ClosedForm, n, precision);
    meta.epochs = 0;
    meta.batch_size = 0;
    let mut adapter = AdapterModel::from_parts(pairs, &weights, bias.as_deref(), meta)?;
    adapter.meta.final_mse = evaluate_mse(&adapter, pairs)?;
    Ok(adapter)
}
