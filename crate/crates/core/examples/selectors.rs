//! SK, SC and hybrid selectors on the same activations.

use vps::linalg::{Matrix, SeededRng};
use vps::selector::{hybrid_build, sc_build, sk_build, GradSignal};

fn main() -> vps::Result<()> {
    let mut rng = SeededRng::new(11);
    let x = Matrix::random_normal(16, 10, 1.0, &mut rng);
    let w = Matrix::random_normal(8, 10, 0.3, &mut rng);
    let h = x.matmul_t(&w)?;
    let (k, r) = (4, 2);

    let sk = sk_build(&x, &h, k, r)?;
    println!("SK in {:?} out {:?}", sk.in_indices.as_slice(), sk.out_indices.as_slice());
    for alpha in [1e-3, 1.0, 1e3] {
        let sc = sc_build(&x, &h, k, r, alpha)?;
        println!("SC alpha {alpha:>6}: coupling {:?}", sc.coupling.as_ref().unwrap());
        let norms: Vec<String> = (0..r).map(|c| format!("{:.6}", sc.v.col_norm(c))).collect();
        println!("  V column norms {}", norms.join(", "));
    }
    let off = hybrid_build(&x, &h, k, r, 1e-3, GradSignal::ABSENT)?;
    let on = hybrid_build(&x, &h, k, r, 1e-3, GradSignal::present(Some(0.4)))?;
    println!("hybrid without gradient: {:?}; with: {:?}", off.kind, on.kind);
    Ok(())
}
