//! The four verification objectives and their weighted composite.

use vps::verify::{
    algebraic_loss, composite_loss, extract_numeric, numeric_loss, parse_quantity, self_consistency_loss, unit_loss,
    Weights, DEFAULT_SC_EPS,
};

fn main() {
    println!("numeric  '42' vs '40': {}", numeric_loss("the answer is 42", "40"));
    println!("extract  'x = 3, y = -1.5e2' -> {:?}", extract_numeric("x = 3, y = -1.5e2"));
    println!("unit     '3 m/s' vs '10 km/h': {}", unit_loss("3 m/s", "10 km/h"));
    println!("unit     '3 m' vs '3 s': {}", unit_loss("3 m", "3 s"));
    if let Some(q) = parse_quantity("9.8 kg*m/s^2") {
        println!("quantity 9.8 kg*m/s^2 -> value {} dims {:?}", q.value, q.dims);
    }
    for (a, b) in [("x+x", "2*x"), ("(x+1)^2", "x^2+2*x+1"), ("x*y", "x+y")] {
        println!("algebra  {a} vs {b}: {}", algebraic_loss(a, b));
    }
    println!("self-consistency [1, 3]: {:.6}", self_consistency_loss(&["1", "3"], DEFAULT_SC_EPS));

    let samples = ["12", "12", "13"];
    let r = composite_loss("12 m", "12 m", Some(&samples[..]), &Weights::with_samples());
    for (o, l) in &r.losses {
        println!("  {o:<17} {l:.6}");
    }
    println!("  total             {:.6}", r.total);
}
