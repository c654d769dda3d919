//! Gaussian linear models fitted by least squares.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::design::{Design, Scaling};
use crate::error::{Error, Result};

/// Least-squares fit of a continuous response.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub feature_names: Vec<String>,
    pub coefficients: Vec<f64>,
    /// Classical OLS standard errors; zero for dropped columns.
    #[serde(skip)]
    pub std_errors: Vec<f64>,
    pub residual_sd: f64,
    /// Observed response range `(min, max)`.
    pub range: (f64, f64),
    pub rank: usize,
    pub n_obs: usize,
    /// Columns given a zero coefficient because of rank deficiency.
    pub dropped: Vec<String>,
}

impl LinearModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum()
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.range.0, self.range.1)
    }
}

/// Ordinary least squares through a column-pivoted QR of the z-scored
/// design. Columns whose pivot falls below `max(rows, cols) * eps * |r_00|`
/// are treated as linearly dependent and get a zero coefficient.
pub fn fit_linear(x: &Design, y: &[f64]) -> Result<LinearModel> {
    x.check(y)?;
    let (n, c) = (x.rows(), x.cols());
    if n < c {
        return Err(Error::Shape(format!("{n} rows for {c} columns")));
    }
    let scaling = Scaling::fit(x);
    let qr = scaling.apply(x).col_piv_qr();
    let r = qr.r();
    let tol = n.max(c) as f64 * f64::EPSILON * r[(0, 0)].abs();
    let rank = (0..c).take_while(|&i| r[(i, i)].abs() > tol).count();

    let mut qty = DVector::from_column_slice(y);
    qr.q_tr_mul(&mut qty);
    let r11 = r.view((0, 0), (rank, rank)).into_owned();
    let mut w = DVector::zeros(c);
    if rank > 0 {
        let sol = r11
            .solve_upper_triangular(&qty.rows(0, rank).into_owned())
            .ok_or_else(|| Error::NonFinite("singular triangular factor".into()))?;
        w.rows_mut(0, rank).copy_from(&sol);
    }
    // Pivot position of each original column.
    let mut pos = DVector::from_fn(c, |i, _| i as f64);
    qr.p().inv_permute_rows(&mut pos);
    qr.p().inv_permute_rows(&mut w);
    let beta_z: Vec<f64> = w.iter().copied().collect();
    let kept: Vec<bool> = pos.iter().map(|&p| (p as usize) < rank).collect();

    let coefficients = scaling.unscale(&beta_z);
    let mut rss = 0.0;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (i, &yi) in y.iter().enumerate() {
        let e = yi - x.row(i).iter().zip(&coefficients).map(|(a, b)| a * b).sum::<f64>();
        rss += e * e;
        lo = lo.min(yi);
        hi = hi.max(yi);
    }
    let residual_sd = if n > rank { (rss / (n - rank) as f64).sqrt() } else { 0.0 };

    // cov(beta_z) = sigma^2 (R11^T R11)^-1 in pivoted order.
    let mut cov_z = DMatrix::zeros(c, c);
    if rank > 0 {
        if let Some(rinv) = r11.solve_upper_triangular(&DMatrix::identity(rank, rank)) {
            let inner = &rinv * rinv.transpose() * (residual_sd * residual_sd);
            let order: Vec<usize> = (0..c).filter(|&j| kept[j]).collect();
            for &a in &order {
                for &b in &order {
                    cov_z[(a, b)] = inner[(pos[a] as usize, pos[b] as usize)];
                }
            }
        }
    }
    let t = scaling.unscale_matrix();
    let cov = &t * cov_z * t.transpose();
    let std_errors = (0..c).map(|j| cov[(j, j)].max(0.0).sqrt()).collect();

    let dropped: Vec<String> =
        (0..c).filter(|&j| !kept[j]).map(|j| x.names[j].clone()).collect();
    if !dropped.is_empty() {
        warn!("linear fit is rank deficient ({rank} of {c}); zeroed: {}", dropped.join(", "));
    }
    Ok(LinearModel {
        feature_names: x.names.clone(),
        coefficients,
        std_errors,
        residual_sd,
        range: (lo, hi),
        rank,
        n_obs: n,
        dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn names(c: usize) -> Vec<String> {
        (0..c).map(|j| format!("x{j}")).collect()
    }

    /// Solves `X^T X b = X^T y` by Gaussian elimination with partial pivoting.
    fn normal_equations(rows: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
        let c = rows[0].len();
        let mut a = vec![vec![0.0; c + 1]; c];
        for (r, &yi) in rows.iter().zip(y) {
            for i in 0..c {
                for j in 0..c {
                    a[i][j] += r[i] * r[j];
                }
                a[i][c] += r[i] * yi;
            }
        }
        for col in 0..c {
            let piv = (col..c).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
            a.swap(col, piv);
            for row in 0..c {
                if row != col {
                    let f = a[row][col] / a[col][col];
                    for k in col..=c {
                        a[row][k] -= f * a[col][k];
                    }
                }
            }
        }
        (0..c).map(|i| a[i][c] / a[i][i]).collect()
    }

    #[test]
    fn exact_linear_response_has_zero_residual() {
        let rows: Vec<Vec<f64>> =
            (0..20).map(|i| vec![1.0, i as f64, ((i * 7) % 5) as f64]).collect();
        let y: Vec<f64> = rows.iter().map(|r| 2.0 - 0.5 * r[1] + 3.0 * r[2]).collect();
        let m = fit_linear(&Design::from_rows(names(3), &rows).unwrap(), &y).unwrap();
        assert!(m.residual_sd < 1e-10);
        for (b, t) in m.coefficients.iter().zip([2.0, -0.5, 3.0]) {
            assert!((b - t).abs() < 1e-10);
        }
        assert_eq!(m.range, (y.iter().copied().fold(f64::MAX, f64::min), y.iter().copied().fold(f64::MIN, f64::max)));
    }

    #[test]
    fn intercept_only_gives_the_mean() {
        let y = [1.0, 4.0, 2.5, 7.0];
        let rows = vec![vec![1.0]; 4];
        let m = fit_linear(&Design::from_rows(names(1), &rows).unwrap(), &y).unwrap();
        assert!((m.coefficients[0] - 3.625).abs() < 1e-14);
    }

    #[test]
    fn matches_normal_equations_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let rows: Vec<Vec<f64>> = (0..200)
                .map(|_| {
                    vec![1.0, rng.random::<f64>() * 10.0, rng.random::<f64>() - 0.5, rng.random::<f64>() * 400.0]
                })
                .collect();
            let y: Vec<f64> = rows
                .iter()
                .map(|r| 1.0 + r[1] - 3.0 * r[2] + 0.01 * r[3] + rng.random::<f64>())
                .collect();
            let m = fit_linear(&Design::from_rows(names(4), &rows).unwrap(), &y).unwrap();
            let oracle = normal_equations(&rows, &y);
            for (b, o) in m.coefficients.iter().zip(&oracle) {
                assert!((b - o).abs() <= 1e-8 * o.abs().max(1e-12), "{b} vs {o}");
            }
        }
    }

    #[test]
    fn duplicated_column_is_zeroed_not_an_error() {
        let rows: Vec<Vec<f64>> =
            (0..30).map(|i| vec![1.0, i as f64, 2.0 * i as f64, (i % 3) as f64]).collect();
        let y: Vec<f64> = rows.iter().map(|r| 1.0 + r[1] + r[3]).collect();
        let m = fit_linear(&Design::from_rows(names(4), &rows).unwrap(), &y).unwrap();
        assert_eq!(m.rank, 3);
        assert_eq!(m.dropped.len(), 1);
        let j = m.feature_names.iter().position(|n| *n == m.dropped[0]).unwrap();
        assert_eq!(m.coefficients[j], 0.0);
        assert!(m.residual_sd < 1e-9);
    }

    #[test]
    fn empty_design_is_an_error() {
        assert!(fit_linear(&Design::new(names(2)), &[]).is_err());
        let d = Design::from_rows(names(2), &[vec![1.0, f64::NAN]]).unwrap();
        assert!(fit_linear(&d, &[1.0]).is_err());
    }

    #[test]
    fn standard_errors_match_textbook_formula() {
        // Simple regression: se(slope) = s / sqrt(sum (x - xbar)^2).
        let xs: Vec<f64> = (0..12).map(|i| i as f64 * 1.5).collect();
        let y: Vec<f64> = xs.iter().enumerate().map(|(i, x)| 0.5 * x + [0.3, -0.2, 0.1][i % 3]).collect();
        let rows: Vec<Vec<f64>> = xs.iter().map(|&x| vec![1.0, x]).collect();
        let m = fit_linear(&Design::from_rows(names(2), &rows).unwrap(), &y).unwrap();
        let xbar = xs.iter().sum::<f64>() / 12.0;
        let sxx: f64 = xs.iter().map(|x| (x - xbar).powi(2)).sum();
        assert!((m.std_errors[1] - m.residual_sd / sxx.sqrt()).abs() < 1e-12);
        let se0 = m.residual_sd * (1.0 / 12.0 + xbar * xbar / sxx).sqrt();
        assert!((m.std_errors[0] - se0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn agrees_with_oracle_on_random_full_rank(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<Vec<f64>> = (0..40)
                .map(|_| vec![1.0, rng.random::<f64>() * 3.0, rng.random::<f64>() * 50.0 - 20.0])
                .collect();
            let y: Vec<f64> = (0..40).map(|_| rng.random::<f64>() * 5.0).collect();
            let m = fit_linear(&Design::from_rows(names(3), &rows).unwrap(), &y).unwrap();
            let oracle = normal_equations(&rows, &y);
            for (b, o) in m.coefficients.iter().zip(&oracle) {
                prop_assert!((b - o).abs() <= 1e-8 * o.abs().max(1e-6));
            }
        }
    }
}
