mod support;

use support::suites;

const INSTANCES: usize = 20;
const TOL: f64 = 1e-3;

#[test]
fn weighted_theta_and_inputs() {
    let check = suites::weighted_gradient(INSTANCES, 3000);
    assert_eq!(check.cases, INSTANCES);
    assert!(check.worst < TOL, "worst relative error {:e}", check.worst);
}

#[test]
fn cross_attention_all_parameters_and_inputs() {
    let check = suites::xattn_gradient(INSTANCES, 4000);
    assert!(check.worst < TOL, "worst relative error {:e}", check.worst);
}

#[test]
fn moe_gate_and_inputs() {
    let check = suites::moe_gradient(INSTANCES, 5000);
    assert!(check.worst < TOL, "worst relative error {:e}", check.worst);
}

#[test]
fn library_forward_agrees_with_f64_definitions() {
    use repfuse_core::fusion::{fuse_weighted, fuse_xattn, moe_fuse, moe_gate, AttentionParams};
    use support::{Dense, uniform};

    let mut rng = support::rng(6000);
    let r = uniform(4, 8, 1.0, &mut rng);
    let d = uniform(4, 8, 1.0, &mut rng);
    let (rd, dd) = (Dense::from_matrix(&r), Dense::from_matrix(&d));
    let max_diff = |a: &repfuse_core::Matrix, b: &Dense| {
        a.as_slice()
            .iter()
            .zip(&b.data)
            .map(|(&x, y)| (f64::from(x) - y).abs())
            .fold(0.0, f64::max)
    };

    let z = fuse_weighted(&r, &d, 0.7).unwrap();
    assert!(max_diff(&z, &support::weighted64(&rd, &dd, 0.7)) < 1e-6);

    let w = uniform(8, 2, 1.0, &mut rng);
    let z = moe_fuse(&r, &d, &moe_gate(&r, &w).unwrap()).unwrap();
    assert!(max_diff(&z, &support::moe64(&rd, &dd, &Dense::from_matrix(&w))) < 1e-6);

    let p = AttentionParams::init(8, 4, &mut rng).unwrap();
    let sq = |m: &repfuse_core::Matrix| Dense::from_matrix(m);
    let (wq, wk, wv, wo) = (sq(&p.wq), sq(&p.wk), sq(&p.wv), sq(&p.wo));
    let want = support::xattn64(
        &rd,
        &dd,
        [&wq, &wk, &wv, &wo],
        &support::to_f64(&p.ln_gain),
        &support::to_f64(&p.ln_bias),
        4,
    );
    assert!(max_diff(&fuse_xattn(&r, &d, &p).unwrap(), &want) < 1e-5);
}
