//! Value-level attention maps and their disparity.

use numkit::{js_divergence, Matrix};

/// Row-normalized proximity kernel `T[i][j] ∝ exp(−γ_i·|j − i|^p)`.
/// `gamma` holds the (already positive) widths, one per position.
pub fn tpc_matrix(gamma: &[f64], p: f64) -> Matrix {
    let l = gamma.len();
    let mut t = Matrix::from_fn(l, l, |i, j| {
        (-gamma[i] * (i.abs_diff(j) as f64).powf(p)).exp()
    });
    for i in 0..l {
        let row = t.row_mut(i);
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    t
}

/// `−|j − i|^p`, the exponent pattern shared by every row.
pub fn neg_distance(l: usize, p: f64) -> Matrix {
    Matrix::from_fn(l, l, |i, j| -(i.abs_diff(j) as f64).powf(p))
}

/// `softmax_rows(Q·Kᵀ/√d)`.
pub fn dcm_attention(q: &Matrix, k: &Matrix) -> Matrix {
    let d = q.cols() as f64;
    q.matmul_t(k)
        .expect("query/key shapes")
        .scale(1.0 / d.sqrt())
        .softmax_rows()
}

/// Layer-averaged row-wise Jensen-Shannon divergence between the two
/// attention families.
pub fn tcd(t: &[Matrix], c: &[Matrix]) -> Vec<f64> {
    assert_eq!(
        t.len(),
        c.len(),
        "one proximity and one context map per layer"
    );
    let l = t[0].rows();
    let h = t.len() as f64;
    (0..l)
        .map(|i| {
            t.iter()
                .zip(c)
                .map(|(a, b)| js_divergence(a.row(i), b.row(i)))
                .sum::<f64>()
                / h
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step_kernel_is_one() {
        assert_eq!(tpc_matrix(&[0.7], 1.0), Matrix::from_rows(&[[1.0]]));
    }

    #[test]
    fn zero_width_is_uniform() {
        let t = tpc_matrix(&[0.0; 5], 2.0);
        assert!(t.data().iter().all(|v| (*v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn halving_kernel_row() {
        let t = tpc_matrix(&[std::f64::consts::LN_2; 3], 1.0);
        let want = [4.0 / 7.0, 2.0 / 7.0, 1.0 / 7.0];
        for (got, w) in t.row(0).iter().zip(want) {
            assert!((got - w).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_query_is_uniform() {
        let c = dcm_attention(
            &Matrix::zeros(4, 3),
            &Matrix::from_fn(4, 3, |i, j| (i * j) as f64),
        );
        assert!(c.data().iter().all(|v| (*v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn two_step_context_row() {
        let q = Matrix::from_rows(&[[1.0], [0.0]]);
        let c = dcm_attention(&q, &q);
        let e = std::f64::consts::E;
        assert!((c.get(0, 0) - e / (e + 1.0)).abs() < 1e-15);
        assert!((c.get(0, 1) - 1.0 / (e + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn permuting_time_permutes_context() {
        let q = Matrix::from_fn(4, 2, |i, j| ((i + 1) * (j + 2)) as f64 * 0.1);
        let k = Matrix::from_fn(4, 2, |i, j| (i as f64 - j as f64) * 0.3);
        let perm = [2, 0, 3, 1];
        let pq = Matrix::from_fn(4, 2, |i, j| q.get(perm[i], j));
        let pk = Matrix::from_fn(4, 2, |i, j| k.get(perm[i], j));
        let c = dcm_attention(&q, &k);
        let pc = dcm_attention(&pq, &pk);
        for i in 0..4 {
            for j in 0..4 {
                assert!((pc.get(i, j) - c.get(perm[i], perm[j])).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn identical_maps_have_no_disparity() {
        let t = tpc_matrix(&[0.3; 4], 1.0);
        assert!(tcd(&[t.clone()], &[t]).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn disjoint_rows_reach_ln2() {
        let a = Matrix::from_rows(&[[1.0, 0.0]]);
        let b = Matrix::from_rows(&[[0.0, 1.0]]);
        assert!((tcd(&[a], &[b])[0] - std::f64::consts::LN_2).abs() < 1e-9);
    }
}
