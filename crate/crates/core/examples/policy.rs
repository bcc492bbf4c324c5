//! How batch energy, entropy and the improvement history move the policy.

use vps::linalg::Matrix;
use vps::policy::{energy_to_scale, PolicyEngine, PolicyState};
use vps::VpsConfig;

fn main() {
    let engine = PolicyEngine::from_config(&VpsConfig::default());
    println!("energy   sigma    r  k   gamma");
    for e in [0.0f64, 0.1, 0.5, 1.0, 2.0, 5.0] {
        // A constant batch has energy equal to the squared entry.
        let h = Matrix::from_fn(4, 8, |_, _| e.sqrt());
        let p = engine.decide(&h, &PolicyState::new(8));
        println!("{e:>6} {:>8.4} {:>3} {:>3} {:>6.3}", p.sigma, p.r, p.k, p.gamma);
    }
    println!("1 - e^-1 = {:.12}", energy_to_scale(1.0));

    let quiet = Matrix::zeros(4, 8);
    let mut st = PolicyState::new(8);
    for ent in [None, Some(0.9), Some(3.0)] {
        st.last_entropy = ent;
        let p = engine.decide(&quiet, &st);
        println!("entropy {ent:?}: sigma {:.3}", p.sigma);
    }

    let h = Matrix::from_fn(4, 8, |_, _| 0.8);
    let mut st = PolicyState::new(8);
    for improved in [true, true, false, true, false, false, false, false] {
        st.update_history(improved);
        let p = engine.decide(&h, &st);
        println!("rho {:.3}: sigma {:.3}", st.improvement_rate().unwrap(), p.sigma);
    }
}
