use mnkit::moments::{Dimension, MomentVector};
use mnkit::newton::{solve_dual, NewtonConfig};
use mnkit::velocity::{MomentBasis, QuadratureRule};

fn main() {
    let rule = QuadratureRule::gauss_legendre(28).unwrap();
    let basis = MomentBasis::new(1, &rule).unwrap();
    let cfg = NewtonConfig::default();
    for u1 in [0.9, 0.95, 0.99, -0.99] {
        let u = MomentVector::new(vec![1.0, u1], 1, Dimension::One).unwrap();
        match solve_dual(&u, None, &cfg, &basis, &rule) {
            Ok(res) => println!(
                "u1 {u1:+.3}: converged={} iters={} |g|={:.3e} alpha={:?}",
                res.converged, res.iterations, res.final_gradient_norm, res.alpha.values
            ),
            Err(e) => println!("u1 {u1:+.3}: error {e}"),
        }
    }
    // M2 boundary population sample
    let basis2 = MomentBasis::new(2, &rule).unwrap();
    for (u1, off) in [(0.0, 0.01), (0.5, 0.01), (0.85, 0.01)] {
        let u = MomentVector::new(vec![1.0, u1, u1 * u1 + off], 2, Dimension::One).unwrap();
        match solve_dual(&u, None, &cfg, &basis2, &rule) {
            Ok(res) => println!(
                "m2 ({u1},{off}): converged={} iters={} |g|={:.3e}",
                res.converged, res.iterations, res.final_gradient_norm
            ),
            Err(e) => println!("m2 ({u1},{off}): error {e}"),
        }
    }
}
