use copylab::numeric::{eig_unsymmetric, matmul, softmax_rows, Mask, Rng, Tensor};
use proptest::prelude::*;

fn random(rows: usize, cols: usize, seed: u64) -> Tensor<f64> {
    let mut rng = Rng::new(seed);
    let data = (0..rows * cols).map(|_| rng.normal()).collect();
    Tensor::from_vec(&[rows, cols], data).unwrap()
}

fn naive<T: copylab::numeric::Real>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (m, k) = a.dims2().unwrap();
    let n = b.dims2().unwrap().1;
    let mut c = Tensor::zeros(&[m, n]);
    for i in 0..m {
        for j in 0..n {
            let mut acc = T::zero();
            for p in 0..k {
                acc += a.at(i, p) * b.at(p, j);
            }
            c.set(i, j, acc);
        }
    }
    c
}

/// Determinant by LU with partial pivoting.
fn det(m: &Tensor<f64>) -> f64 {
    let n = m.dims2().unwrap().0;
    let mut a = m.data().to_vec();
    let mut d = 1.0;
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&x, &y| a[x * n + col].abs().total_cmp(&a[y * n + col].abs()))
            .unwrap();
        if piv != col {
            for j in 0..n {
                a.swap(piv * n + j, col * n + j);
            }
            d = -d;
        }
        let p = a[col * n + col];
        if p == 0.0 {
            return 0.0;
        }
        d *= p;
        for r in col + 1..n {
            let f = a[r * n + col] / p;
            for j in col..n {
                a[r * n + j] -= f * a[col * n + j];
            }
        }
    }
    d
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn matmul_equals_naive_f64(m in 1usize..=16, k in 1usize..=16, n in 1usize..=16, seed: u64) {
        let a = random(m, k, seed);
        let b = random(k, n, seed ^ 1);
        let fast = matmul(&a, &b).unwrap();
        let slow = naive(&a, &b);
        prop_assert_eq!(fast.data(), slow.data());
    }

    #[test]
    fn matmul_equals_naive_f32(m in 1usize..=16, k in 1usize..=16, n in 1usize..=16, seed: u64) {
        let a = random(m, k, seed).cast::<f32>();
        let b = random(k, n, seed ^ 1).cast::<f32>();
        let fast = matmul(&a, &b).unwrap();
        let slow = naive(&a, &b);
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&fast), bits(&slow));
    }

    #[test]
    fn softmax_rows_sum_to_one(m in 1usize..=12, n in 1usize..=40, scale in 0.1f64..50.0, seed: u64, causal: bool) {
        let x = random(m, n.max(m), seed).map(|v| v * scale);
        let mask = causal.then_some(Mask::Causal);
        for (tensor_kind, s) in [
            ("f64", softmax_rows(&x, mask.as_ref()).unwrap()),
            ("f32", softmax_rows(&x.cast::<f32>(), mask.as_ref()).unwrap().cast::<f64>()),
        ] {
            let (rows, cols) = s.dims2().unwrap();
            for r in 0..rows {
                let sum: f64 = s.row(r).iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-6, "{} row {} sums to {}", tensor_kind, r, sum);
                prop_assert!(s.row(r).iter().all(|&p| (0.0..=1.0).contains(&p)));
                if causal {
                    prop_assert!(s.row(r)[r + cols - rows + 1..].iter().all(|&p| p == 0.0));
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(60))]

    #[test]
    fn eig_trace_and_determinant(n in 1usize..=32, seed: u64) {
        let m = random(n, n, seed);
        let spec = eig_unsymmetric(&m).unwrap();
        prop_assert_eq!(spec.len(), n);
        let trace: f64 = (0..n).map(|i| m.at(i, i)).sum();
        let sum = spec.sum();
        let scale = (n as f64).sqrt() * 4.0;
        prop_assert!((sum.re - trace).abs() < 1e-9 * scale, "Σλ {} vs trace {}", sum.re, trace);
        prop_assert!(sum.im.abs() < 1e-9 * scale);
        // Compare logs: the determinant of a 32×32 normal matrix spans many
        // orders of magnitude.
        let log_prod: f64 = spec.eigenvalues.iter().map(|z| z.norm().ln()).sum();
        let log_det = det(&m).abs().ln();
        prop_assert!((log_prod - log_det).abs() < 1e-8, "ln Π|λ| {} vs ln |det| {}", log_prod, log_det);
    }
}

#[test]
fn determinant_oracle_on_a_known_matrix() {
    // Upper triangular with a row swap: det = -(2·3·4).
    let m = Tensor::from_rows(&[&[0.0, 3.0, 1.0], &[2.0, 5.0, 7.0], &[0.0, 0.0, 4.0]]).unwrap();
    assert!((det(&m) + 24.0).abs() < 1e-12);
}

#[test]
fn eig_residual_on_sixteen_by_sixteen() {
    // Every eigenvalue must make (M - λI) singular.
    let m = random(16, 16, 99);
    let spec = eig_unsymmetric(&m).unwrap();
    let fro = m.sum_sq().sqrt();
    for z in &spec.eigenvalues {
        if z.im != 0.0 {
            continue;
        }
        let shifted = {
            let mut s = m.clone();
            for i in 0..16 {
                s.set(i, i, s.at(i, i) - z.re);
            }
            s
        };
        let d = det(&shifted).abs();
        assert!(d < 1e-6 * fro.powi(16), "det(M - {z}I) = {d}");
    }
}
