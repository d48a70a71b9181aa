//! Informational micro-benchmark, ignored by default.

use std::time::Instant;

use domino_core::diffnet::linalg::matmul;

#[test]
#[ignore]
fn gemm_throughput() {
    let (m, k, n) = (32768, 216, 8);
    let a = vec![1.0f64; m * k];
    let b = vec![0.5f64; k * n];
    let mut c = vec![0.0f64; m * n];
    let t = Instant::now();
    let reps = 10;
    for _ in 0..reps {
        matmul(&a, &b, m, k, n, &mut c);
    }
    let el = t.elapsed().as_secs_f64();
    eprintln!("proj-shape {m}x{k}x{n}: {:.2} GFlop/s", (2.0 * (m * k * n * reps) as f64) / el / 1e9);

    let (m2, k2, n2) = (16384, 128, 128);
    let a2 = vec![1.0f64; m2 * k2];
    let b2 = vec![0.5f64; k2 * n2];
    let mut c2 = vec![0.0f64; m2 * n2];
    let t = Instant::now();
    for _ in 0..20 {
        matmul(&a2, &b2, m2, k2, n2, &mut c2);
    }
    let el = t.elapsed().as_secs_f64();
    eprintln!("head-shape {m2}x{k2}x{n2}: {:.2} GFlop/s", (2.0 * (m2 * k2 * n2 * 20) as f64) / el / 1e9);
}
