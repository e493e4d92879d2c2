//! Dense matrix kernels on row-major slices.

const MR: usize = 4;
const NR: usize = 8;

/// out[m×n] += A[m×k] · b[k×n], where A(i, p) = a[i·rs + p·cs].
///
/// Register-tiled; every output element still accumulates its k products
/// in increasing p order, so results do not depend on the tiling.
#[allow(clippy::too_many_arguments)]
fn gemm_acc(out: &mut [f64], a: &[f64], rs: usize, cs: usize, b: &[f64], m: usize, k: usize, n: usize) {
    let m_full = m - m % MR;
    let n_full = n - n % NR;
    for i0 in (0..m_full).step_by(MR) {
        for j0 in (0..n_full).step_by(NR) {
            let mut acc = [[0.0; NR]; MR];
            for (r, row) in acc.iter_mut().enumerate() {
                row.copy_from_slice(&out[(i0 + r) * n + j0..(i0 + r) * n + j0 + NR]);
            }
            for p in 0..k {
                let bv: &[f64; NR] = b[p * n + j0..p * n + j0 + NR].try_into().unwrap();
                for (r, row) in acc.iter_mut().enumerate() {
                    let av = a[(i0 + r) * rs + p * cs];
                    for c in 0..NR {
                        row[c] += av * bv[c];
                    }
                }
            }
            for (r, row) in acc.iter().enumerate() {
                out[(i0 + r) * n + j0..(i0 + r) * n + j0 + NR].copy_from_slice(row);
            }
        }
        // ragged columns
        for r in i0..i0 + MR {
            gemm_edge(out, a, rs, cs, b, r, k, n, n_full);
        }
    }
    for r in m_full..m {
        gemm_edge(out, a, rs, cs, b, r, k, n, 0);
    }
}

#[allow(clippy::too_many_arguments)]
fn gemm_edge(out: &mut [f64], a: &[f64], rs: usize, cs: usize, b: &[f64], i: usize, k: usize, n: usize, j_from: usize) {
    if j_from == n {
        return;
    }
    let out_row = &mut out[i * n + j_from..(i + 1) * n];
    for p in 0..k {
        let av = a[i * rs + p * cs];
        let b_row = &b[p * n + j_from..(p + 1) * n];
        for (o, bv) in out_row.iter_mut().zip(b_row) {
            *o += av * bv;
        }
    }
}

/// out[m×n] = a[m×k] · b[k×n]
pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    gemm_acc(&mut out, a, k, 1, b, m, k, n);
    out
}

/// out[m×k] += g[m×n] · b[k×n]ᵀ
pub(crate) fn matmul_nt_acc(out: &mut [f64], g: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    let bt = transpose(b, k, n);
    gemm_acc(out, g, n, 1, &bt, m, n, k);
}

/// out[k×n] += a[m×k]ᵀ · g[m×n]
pub(crate) fn matmul_tn_acc(out: &mut [f64], a: &[f64], g: &[f64], m: usize, k: usize, n: usize) {
    gemm_acc(out, a, 1, k, g, k, m, n);
}

pub(crate) fn transpose(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

/// Row-wise softmax with max subtraction. With `causal`, entry (i, j) for
/// j > i is excluded and set to zero.
pub(crate) fn softmax_rows(x: &[f64], m: usize, n: usize, causal: bool) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let width = if causal { (i + 1).min(n) } else { n };
        let row = &x[i * n..i * n + width];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let dst = &mut out[i * n..i * n + width];
        let mut total = 0.0;
        for (d, &v) in dst.iter_mut().zip(row) {
            *d = (v - max).exp();
            total += *d;
        }
        dst.iter_mut().for_each(|d| *d /= total);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transposed_kernels_agree_with_explicit_transpose() {
        let a: Vec<f64> = (0..6).map(|v| v as f64 * 0.5 - 1.0).collect(); // 2×3
        let b: Vec<f64> = (0..12).map(|v| (v as f64).sin()).collect(); // 4×3
        let mut nt = vec![0.0; 8];
        matmul_nt_acc(&mut nt, &a, &b, 2, 4, 3);
        let bt = transpose(&b, 4, 3);
        assert_eq!(nt, matmul(&a, &bt, 2, 3, 4));

        let g: Vec<f64> = (0..8).map(|v| (v as f64).cos()).collect(); // 2×4
        let mut tn = vec![0.0; 12];
        matmul_tn_acc(&mut tn, &a, &g, 2, 3, 4);
        let at = transpose(&a, 2, 3);
        let expect = matmul(&at, &g, 3, 2, 4);
        for (x, y) in tn.iter().zip(&expect) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn causal_softmax_zeroes_future() {
        let y = softmax_rows(&[1.0, 2.0, 3.0, 4.0], 2, 2, true);
        assert_eq!(
            y,
            vec![1.0, 0.0, 1.0 / (1.0 + 1f64.exp()), 1f64.exp() / (1.0 + 1f64.exp())]
        );
    }
}
