use crate::diff::Tensor;
use crate::error::{Error, Result};

/// Top-k right singular directions of X, via a cyclic Jacobi
/// eigendecomposition of the d x d Gram matrix X^T X.
///
/// Returns the singular values (descending) alongside the d x k matrix of
/// singular vectors. Each vector is sign-fixed so that its first nonzero
/// entry is positive.
pub fn svd_top(x: &Tensor, k: usize) -> Result<(Vec<f64>, Tensor)> {
    let (n, d) = (x.rows(), x.cols());
    if k == 0 || k > n.min(d) {
        return Err(Error::invalid(format!(
            "svd: k = {k} out of range 1..={}",
            n.min(d)
        )));
    }
    // Gram matrix G = X^T X (symmetric, PSD)
    let xt = x.transpose();
    let gram = xt.matmul(x)?;
    let (mut eigvals, mut eigvecs) = jacobi_eigh(gram.data(), d)?;

    // sort descending by eigenvalue
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eigvals[b].partial_cmp(&eigvals[a]).unwrap());
    eigvals = order.iter().map(|&i| eigvals[i]).collect();
    let perm: Vec<Vec<f64>> = order
        .iter()
        .map(|&c| (0..d).map(|r| eigvecs[r * d + c]).collect())
        .collect();
    for (c, col) in perm.iter().enumerate() {
        for r in 0..d {
            eigvecs[r * d + c] = col[r];
        }
    }

    let mut singular = Vec::with_capacity(k);
    let mut v = Tensor::zeros(vec![d, k]);
    for c in 0..k {
        singular.push(eigvals[c].max(0.0).sqrt());
        // sign convention: first nonzero entry positive
        let mut sign = 1.0;
        for r in 0..d {
            let e = eigvecs[r * d + c];
            if e.abs() > 1e-12 {
                sign = if e > 0.0 { 1.0 } else { -1.0 };
                break;
            }
        }
        for r in 0..d {
            v.set2(r, c, sign * eigvecs[r * d + c]);
        }
    }
    Ok((singular, v))
}

/// Projects X (n x d) onto its top-k right singular directions, giving n x k.
pub fn svd_reduce(x: &Tensor, k: usize) -> Result<Tensor> {
    let (_, v) = svd_top(x, k)?;
    x.matmul(&v)
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix stored row-major.
/// Returns (eigenvalues, column eigenvectors flattened row-major d x d).
fn jacobi_eigh(sym: &[f64], d: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut a = sym.to_vec();
    let mut v = vec![0.0; d * d];
    for i in 0..d {
        v[i * d + i] = 1.0;
    }
    if d == 1 {
        return Ok((vec![a[0]], v));
    }

    let frob: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let tol = 1e-14 * frob.max(1.0);
    let max_sweeps = 60;

    for _ in 0..max_sweeps {
        let mut off = 0.0;
        for p in 0..d {
            for q in (p + 1)..d {
                off += a[p * d + q] * a[p * d + q];
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = a[p * d + q];
                if apq.abs() <= tol / (d as f64) {
                    continue;
                }
                let app = a[p * d + p];
                let aqq = a[q * d + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                for i in 0..d {
                    let aip = a[i * d + p];
                    let aiq = a[i * d + q];
                    a[i * d + p] = c * aip - s * aiq;
                    a[i * d + q] = s * aip + c * aiq;
                }
                for j in 0..d {
                    let apj = a[p * d + j];
                    let aqj = a[q * d + j];
                    a[p * d + j] = c * apj - s * aqj;
                    a[q * d + j] = s * apj + c * aqj;
                }
                for i in 0..d {
                    let vip = v[i * d + p];
                    let viq = v[i * d + q];
                    v[i * d + p] = c * vip - s * viq;
                    v[i * d + q] = s * vip + c * viq;
                }
            }
        }
    }

    let eig: Vec<f64> = (0..d).map(|i| a[i * d + i]).collect();
    if eig.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite { op: "jacobi_eigh" });
    }
    Ok((eig, v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn identity_has_unit_singular_values() {
        let x = Tensor::eye(3);
        let (s, _) = svd_top(&x, 3).unwrap();
        for v in s {
            assert!((v - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn rank_one_reconstruction_is_exact() {
        // X = u v^T has a single nonzero singular direction
        let u = [1.0, -2.0, 0.5, 3.0];
        let vv = [0.3, 0.7, -0.2];
        let mut data = Vec::new();
        for ui in u {
            for vj in vv {
                data.push(ui * vj);
            }
        }
        let x = Tensor::matrix(4, 3, data).unwrap();
        let (_, v1) = svd_top(&x, 1).unwrap();
        let proj = x.matmul(&v1).unwrap(); // n x 1
        let recon = proj.matmul(&v1.transpose()).unwrap();
        let err: f64 = x
            .data()
            .iter()
            .zip(recon.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(err < 1e-10, "reconstruction error {err}");
    }

    #[test]
    fn full_rank_projection_preserves_gram_matrix() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let x = Tensor::uniform(vec![10, 6], 1.0, &mut rng);
        let xk = svd_reduce(&x, 6).unwrap();
        let g1 = x.matmul(&x.transpose()).unwrap();
        let g2 = xk.matmul(&xk.transpose()).unwrap();
        for (a, b) in g1.data().iter().zip(g2.data()) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn k_out_of_range_is_error() {
        let x = Tensor::eye(3);
        assert!(svd_reduce(&x, 0).is_err());
        assert!(svd_reduce(&x, 4).is_err());
    }

    #[test]
    fn deterministic_sign_convention() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let x = Tensor::uniform(vec![8, 4], 1.0, &mut rng);
        let (_, v) = svd_top(&x, 4).unwrap();
        for c in 0..4 {
            let first = (0..4).map(|r| v.get2(r, c)).find(|e| e.abs() > 1e-12).unwrap();
            assert!(first > 0.0);
        }
    }
}
