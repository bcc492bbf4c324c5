//! Wrap a frozen linear layer, run a forward, and check the perturbation
//! against the explicit effective weight change.

use std::sync::Arc;

use vps::config::BuilderKind;
use vps::layer::{apply_perturbation, derive_factors, effective_delta_weight, spectral_clip};
use vps::linalg::{spectral_norm_default, Matrix, SeededRng};
use vps::{LinearLayer, VpsConfig, VpsLayer};

fn main() -> vps::Result<()> {
    let mut rng = SeededRng::new(3);
    let (d_in, d_out, n) = (24, 16, 8);
    let w = Matrix::random_normal(d_out, d_in, 1.0 / (d_in as f64).sqrt(), &mut rng);
    let x = Matrix::random_normal(n, d_in, 1.0, &mut rng);
    let base = LinearLayer::new(w, None)?;

    let cfg = VpsConfig {
        builder: BuilderKind::Sk,
        topk_bounds: (8, 16),
        ..VpsConfig::default()
    };
    let mut layer = VpsLayer::new("demo", base.clone(), Arc::new(cfg.clone()));
    let y = layer.forward(&x)?;
    let h = vps::layer::base_forward(&x, &base)?;
    let pol = *layer.last_policy().unwrap();
    let sel = layer.last_selectors().unwrap().clone();
    println!("policy: sigma {:.3}, r {}, k {}, gamma {:.3}", pol.sigma, pol.r, pol.k, pol.gamma);
    println!("input picks {:?}", &sel.in_indices[..pol.r]);
    println!("output picks {:?}", &sel.out_indices[..pol.r]);
    println!("|y - h|_F = {:.4e}", y.sub(&h)?.frobenius_norm_sq().sqrt());

    let raw = derive_factors(&base, &sel)?;
    let clipped = spectral_clip(raw.clone(), cfg.tau);
    println!(
        "spectral norm of A B^T: raw {:.4}, clipped {:.4} (tau {}, bound sqrt(r) tau = {:.4})",
        spectral_norm_default(&raw.product()),
        spectral_norm_default(&clipped.product()),
        cfg.tau,
        (pol.r as f64).sqrt() * cfg.tau
    );

    // Unclipped factors: x ΔWᵀ equals the low-rank path exactly.
    let dw = effective_delta_weight(&base, &sel, pol.gamma)?;
    let lowrank = apply_perturbation(&x, &raw, pol.gamma, None)?;
    println!("max |x dW^T - gamma (xA)B^T| = {:.2e}", x.matmul_t(&dw)?.max_abs_diff(&lowrank));
    Ok(())
}
