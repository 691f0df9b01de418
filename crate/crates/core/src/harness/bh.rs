//! Benjamini–Hochberg baseline and selection metrics.

use statrs::function::erf::erfc;

use crate::linalg::Matrix;
use crate::mirror::column_sum;
use crate::scalar::Scalar;

/// Step-up rule: reject the `k` smallest p-values for the largest `k` with
/// `p_(k) ≤ k·q/p`. Returned indices are ascending.
pub fn bh_procedure(pvalues: &[f64], q: f64) -> Vec<usize> {
    let p = pvalues.len();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| pvalues[a].total_cmp(&pvalues[b]).then(a.cmp(&b)));
    let k = (1..=p)
        .rev()
        .find(|&k| pvalues[order[k - 1]] <= k as f64 * q / p as f64)
        .unwrap_or(0);
    let mut rejected = order[..k].to_vec();
    rejected.sort_unstable();
    rejected
}

/// Two-sided p-values `2Φ(−|√n·x̄_j|)` from full-data column means.
pub fn normal_means_pvalues<T: Scalar>(x: &Matrix<T>) -> Vec<f64> {
    let n = x.nrows() as f64;
    (0..x.ncols())
        .map(|j| {
            let xbar = column_sum(x.col(j)).to_f64_lossy() / n;
            let z = (n.sqrt() * xbar).abs();
            // 2Φ(−z) = erfc(z/√2)
            erfc(z / std::f64::consts::SQRT_2).min(1.0)
        })
        .collect()
}

/// `#{false selections} / max(|selected|, 1)` and `|selected ∩ s1| / max(|s1|, 1)`.
pub fn fdp_power(selected: &[usize], s1: &[usize], p: usize) -> (f64, f64) {
    let mut is_signal = vec![false; p];
    for &j in s1 {
        is_signal[j] = true;
    }
    let hits = selected.iter().filter(|&&j| is_signal[j]).count();
    let false_pos = selected.len() - hits;
    (false_pos as f64 / selected.len().max(1) as f64, hits as f64 / s1.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn bh_examples() {
        assert_eq!(bh_procedure(&[0.01, 0.02, 0.5], 0.1), vec![0, 1]);
        assert!(bh_procedure(&[1.0, 1.0, 1.0], 0.1).is_empty());
        assert_eq!(bh_procedure(&[0.05], 0.1), vec![0]);
        // step-up: a later p-value under its line pulls earlier ones in
        assert_eq!(bh_procedure(&[0.04, 0.9, 0.05, 0.06], 0.25), vec![0, 2, 3]);
    }

    #[test]
    fn pvalue_examples() {
        let x = Matrix::from_rows(&[vec![1.0], vec![-1.0], vec![0.5], vec![-0.5]]).unwrap();
        assert_abs_diff_eq!(normal_means_pvalues(&x)[0], 1.0, epsilon = 1e-15);
        // √n·x̄ = 1.959964 with n = 4
        let v = 1.959964 / 2.0;
        let x = Matrix::from_rows(&[vec![v], vec![v], vec![v], vec![v]]).unwrap();
        assert_abs_diff_eq!(normal_means_pvalues(&x)[0], 0.05, epsilon = 1e-6);
    }

    #[test]
    fn fdp_power_examples() {
        let (f, pw) = fdp_power(&[0, 1, 2], &[0, 1, 3], 8);
        assert_abs_diff_eq!(f, 1.0 / 3.0);
        assert_abs_diff_eq!(pw, 2.0 / 3.0);
        assert_eq!(fdp_power(&[], &[0, 1], 8), (0.0, 0.0));
        assert_eq!(fdp_power(&[0, 1], &[0, 1], 8), (0.0, 1.0));
    }
}
