//! Dense substrate: products, deterministic top-k, ridge solves, power
//! iteration.

use vps::linalg::{ridge_solve, spectral_norm_default, top_k_indices, Matrix, SeededRng};

fn main() -> vps::Result<()> {
    let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]])?;
    let b = Matrix::identity(2).scale(2.0);
    println!("a * 2I = {:?}", a.matmul(&b)?);

    // Ties break toward the lower index.
    let scores = [0.5, 2.0, 2.0, -1.0, 0.7];
    println!("top-3 of {scores:?} -> {:?}", top_k_indices(&scores, 3)?.as_slice());

    let mut rng = SeededRng::new(7);
    let x = Matrix::random_normal(20, 4, 1.0, &mut rng);
    let y = Matrix::random_normal(20, 4, 1.0, &mut rng);
    let g = x.t_matmul(&x)?;
    let c = x.t_matmul(&y)?;
    for alpha in [0.0, 1e-3, 1.0, 100.0] {
        let t = ridge_solve(&g, &c, alpha)?;
        let resid = g.add(&Matrix::identity(4).scale(alpha))?.matmul(&t)?.sub(&c)?;
        println!(
            "alpha {alpha:>7}: |T|_F {:.4}  residual {:.2e}",
            t.frobenius_norm_sq().sqrt(),
            resid.frobenius_norm_sq().sqrt()
        );
    }

    let m = Matrix::random_normal(30, 12, 1.0, &mut rng);
    println!("spectral norm of a 30x12 gaussian: {:.4}", spectral_norm_default(&m));
    Ok(())
}
