//! Row-major dense matmul kernels used by the tape ops. The inner loops run
//! over contiguous rows so the compiler can vectorize them.

/// out [m,n] = A[m,k] * B[k,n], accumulating when `acc`.
pub(crate) fn mm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64], acc: bool) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    if !acc {
        out.fill(0.0);
    }
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// out [m,k] = A[m,n] * B[k,n]^T: rows of A dotted with rows of B.
pub(crate) fn mm_abt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize, out: &mut [f64], acc: bool) {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * k);
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        let orow = &mut out[i * k..(i + 1) * k];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let dot: f64 = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
            if acc {
                orow[p] += dot;
            } else {
                orow[p] = dot;
            }
        }
    }
}

/// out [k,n] = A[m,k]^T * B[m,n].
pub(crate) fn mm_atb(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64], acc: bool) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(out.len(), k * n);
    if !acc {
        out.fill(0.0);
    }
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn triple_loop(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a[i * k + p] * b[p * n + j];
                }
                out[i * n + j] = s;
            }
        }
        out
    }

    fn rand_vec(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
        (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn kernels_match_triple_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let (m, k, n) = (
                rng.gen_range(1..7),
                rng.gen_range(1..7),
                rng.gen_range(1..7),
            );
            let a = rand_vec(&mut rng, m * k);
            let b = rand_vec(&mut rng, k * n);
            let expect = triple_loop(&a, &b, m, k, n);

            let mut out = vec![0.0; m * n];
            mm(&a, &b, m, k, n, &mut out, false);
            for (x, y) in out.iter().zip(&expect) {
                assert!((x - y).abs() < 1e-12);
            }

            // A*B == (A in transposed storage)ᵀ * B
            let mut at = vec![0.0; m * k];
            for i in 0..m {
                for p in 0..k {
                    at[p * m + i] = a[i * k + p];
                }
            }
            let mut out2 = vec![0.0; m * n];
            mm_atb(&at, &b, k, m, n, &mut out2, false);
            for (x, y) in out2.iter().zip(&expect) {
                assert!((x - y).abs() < 1e-12);
            }

            // A*B == A * (B in transposed storage)ᵀ
            let mut bt = vec![0.0; k * n];
            for p in 0..k {
                for j in 0..n {
                    bt[j * k + p] = b[p * n + j];
                }
            }
            let mut out3 = vec![0.0; m * n];
            mm_abt(&a, &bt, m, k, n, &mut out3, false);
            for (x, y) in out3.iter().zip(&expect) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn accumulate_adds_on_top() {
        let a = vec![1.0, 2.0];
        let b = vec![3.0, 4.0];
        let mut out = vec![10.0];
        mm(&a, &b, 1, 2, 1, &mut out, true);
        assert!((out[0] - 21.0).abs() < 1e-15);
    }
}
