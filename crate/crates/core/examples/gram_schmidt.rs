// Orthogonalizes random matrices of growing size and shows that the result is
// orthonormal, preserves norms, and leaves a 2x2 rotation unchanged.

use gcote::numeric::{l2_norm, matvec, orthogonality_error, Matrix};
use gcote::ote::gram_schmidt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    println!("{:>4} {:>14} {:>14}", "d_s", "max|QQt - I|", "norm drift");
    for n in [2, 5, 10, 20, 50, 100] {
        let raw: Vec<f32> = (0..n * n).map(|_| rng.sample(StandardNormal)).collect();
        let q = gram_schmidt(&Matrix::from_row_major(n, raw).unwrap()).unwrap();
        let x: Vec<f32> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let drift = (l2_norm(&matvec(&q, &x).unwrap()) - l2_norm(&x)).abs() / l2_norm(&x);
        println!(
            "{n:>4} {:>14.2e} {:>14.2e}",
            orthogonality_error(q.as_slice(), n),
            drift
        );
    }

    let r = Matrix::<f64>::rotation2(0.7);
    let q = gram_schmidt(&r).unwrap();
    println!("rotation fixed point: max diff {:.1e}", q.max_abs_diff(&r));

    let singular = Matrix::<f64>::from_row_major(2, vec![1.0, 2.0, 2.0, 4.0]).unwrap();
    println!("rank-deficient input: {}", gram_schmidt(&singular).unwrap_err());
}
