// Builds relations that are symmetric, inverse and composed by construction
// and checks them with the pattern verifiers.

use gcote::numeric::Matrix;
use gcote::ote::{
    composition_residual, verify_composition, verify_inverse, verify_symmetry, ModelConfig, Relation, Variant,
};

fn main() {
    let cfg = ModelConfig::new(4, 2, Variant::Ote).unwrap();

    // a reflection is its own inverse
    let reflect = Relation::<f64>::uniform(&cfg, &[1.0, 0.0, 0.0, -1.0], &[0.0, 0.0]);
    println!(
        "reflection symmetric: {}",
        verify_symmetry(reflect.as_ref(), &cfg).unwrap()
    );

    // rotation by θ with scale s is undone by rotation by −θ with scale −s
    let rot = |theta: f64, s: f64| Relation::uniform(&cfg, Matrix::<f64>::rotation2(theta).as_slice(), &[s, s]);
    let r = rot(0.9, 0.3);
    let r_inv = rot(-0.9, -0.3);
    println!(
        "rotation and its reverse inverse: {}",
        verify_inverse(r.as_ref(), r_inv.as_ref(), &cfg).unwrap()
    );
    println!("rotation symmetric: {}", verify_symmetry(r.as_ref(), &cfg).unwrap());

    // angles and log-scales add under composition
    let (a, b, ab) = (rot(0.4, 0.1), rot(1.1, 0.2), rot(1.5, 0.3));
    println!(
        "0.4 then 1.1 composes to 1.5: {}",
        verify_composition(a.as_ref(), b.as_ref(), ab.as_ref(), &cfg).unwrap()
    );
    let off = rot(1.6, 0.3);
    println!(
        "residual against 1.6 instead: {:.3}",
        composition_residual(a.as_ref(), b.as_ref(), off.as_ref(), &cfg).unwrap()
    );
}
