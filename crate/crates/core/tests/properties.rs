use mor_core::fmap::{self, WeightFilter};
use mor_core::linalg::{self, c, to_complex, CMat, Mat};
use mor_core::lti;
use mor_core::optimality::InterpolationData;
use mor_core::reduce;
use mor_core::synthetic::{self, rng};
use proptest::prelude::*;
use rand::Rng;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

fn cases(n: u32) -> ProptestConfig {
    ProptestConfig {
        cases: n,
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(cases(24))]

    #[test]
    fn sylvester_matches_kronecker(seed in any::<u64>(), k in 1usize..8, l in 1usize..8) {
        let mut r = rng(seed);
        let m1 = synthetic::stable_matrix(&mut r, k, 0.2, 5.0);
        let m2 = synthetic::stable_matrix(&mut r, l, 0.2, 5.0);
        let n = Mat::from_fn(k, l, |_, _| r.random_range(-1.0..1.0));
        let x = linalg::solve_sylvester(&m1, &m2, &n).unwrap();
        let y = linalg::kron_oracle_sylvester(&m1, &m2, &n).unwrap();
        prop_assert!(linalg::fro(&(&x - &y)) <= 1e-9 * linalg::fro(&y));
    }

    #[test]
    fn lyapunov_gramian_is_psd(seed in any::<u64>(), n in 1usize..10, m in 1usize..3) {
        let g = synthetic::stable_system(&mut rng(seed), n, m, 1);
        let p = linalg::solve_lyapunov(g.a(), &(g.b() * g.b().transpose())).unwrap();
        prop_assert!(linalg::fro(&(&p - p.transpose())) <= 1e-12 * linalg::fro(&p));
        let eig = p.symmetric_eigenvalues();
        prop_assert!(eig.iter().all(|&e| e >= -1e-10 * linalg::fro(&p)));
    }

    #[test]
    fn pole_residue_reconstructs_transfer(seed in any::<u64>(), n in 1usize..9) {
        let g = synthetic::stable_system_with_d(&mut rng(seed), n, 2, 2);
        let pr = lti::to_pole_residue(&g).unwrap();
        for s in [c(0.3, 1.1), c(2.0, -0.5), c(0.0, 7.0)] {
            let a = pr.eval(s);
            let b = g.eval(s).unwrap();
            prop_assert!((&a - &b).norm() <= 1e-8 * b.norm());
        }
    }

    // ⟨G, H⟩_W equals the plain inner product of 𝔉[G] and H
    #[test]
    fn f_map_carries_the_weighted_inner_product(seed in any::<u64>(), n in 1usize..8, nh in 1usize..8, nw in 1usize..5) {
        let mut r = rng(seed);
        let w = synthetic::stable_weight(&mut r, nw, 2, 2, seed as usize % 2).unwrap();
        let g = synthetic::stable_system(&mut r, n, 2, 2)
            .with_feedthrough(synthetic::feedthrough_annihilating(&mut r, 2, &w)).unwrap();
        let h = synthetic::stable_system(&mut r, nh, 2, 2);
        let lhs = fmap::weighted_h2_inner(&g, &h, &w).unwrap();
        let f = fmap::build_f_realization(&g, &w).unwrap().as_state_space();
        let rhs = lti::h2_inner(&f, &h).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
    }

    #[test]
    fn f_realization_matches_residue_form(seed in any::<u64>(), n in 1usize..8, nw in 1usize..5) {
        let mut r = rng(seed);
        let w = synthetic::stable_weight(&mut r, nw, 2, 3, 1).unwrap();
        let g = synthetic::stable_system(&mut r, n, 2, 2)
            .with_feedthrough(synthetic::feedthrough_annihilating(&mut r, 2, &w)).unwrap();
        let f = fmap::build_f_realization(&g, &w).unwrap();
        for _ in 0..4 {
            let s = c(r.random_range(0.05..5.0), r.random_range(-5.0..5.0));
            let a = fmap::eval_f(&f, s).unwrap();
            let b = fmap::eval_f_by_residues(&g, &w, s).unwrap();
            prop_assert!((&a - &b).norm() <= 1e-8 * b.norm());
        }
    }

    #[test]
    fn weighted_error_matches_cascade(seed in any::<u64>(), n in 1usize..8, nr in 1usize..5) {
        let mut r = rng(seed);
        let w = synthetic::stable_weight(&mut r, 3, 2, 2, 1).unwrap();
        let g = synthetic::stable_system(&mut r, n, 2, 2)
            .with_feedthrough(synthetic::feedthrough_annihilating(&mut r, 2, &w)).unwrap();
        let g_r = synthetic::stable_system(&mut r, nr, 2, 2)
            .with_feedthrough(synthetic::feedthrough_annihilating(&mut r, 2, &w)).unwrap();
        let e = fmap::weighted_error_norm(&g, &g_r, &w).unwrap();
        let cas = fmap::cascade(&g.difference(&g_r).unwrap(), &w).unwrap();
        // D D_w vanishes only up to rounding
        prop_assert!(linalg::fro(cas.d()) <= 1e-12);
        let direct = lti::h2_norm(&cas.strictly_proper_part()).unwrap();
        prop_assert!(rel(e, direct) <= 1e-7);
    }

    #[test]
    fn biorthonormal_pair(seed in any::<u64>(), n in 2usize..10) {
        let mut r = rng(seed);
        let k = 1 + (seed as usize) % (n - 1);
        let v = Mat::from_fn(n, k, |_, _| r.random_range(-1.0..1.0));
        let w = &v + Mat::from_fn(n, k, |_, _| r.random_range(-0.3..0.3));
        let (vr, wr) = linalg::biorthonormalize(&v, &w).unwrap();
        prop_assert!(linalg::fro(&(wr.transpose() * &vr - Mat::identity(k, k))) <= 1e-10);
    }

    // the reduced transfer function depends on the spans only
    #[test]
    fn projection_invariant_under_rebasing(seed in any::<u64>(), n in 3usize..10) {
        let mut r = rng(seed);
        let g = synthetic::stable_system(&mut r, n, 1, 2);
        let k = 2;
        let v = Mat::from_fn(n, k, |_, _| r.random_range(-1.0..1.0));
        let w = Mat::from_fn(n, k, |_, _| r.random_range(-1.0..1.0));
        let (vr, wr) = linalg::biorthonormalize(&v, &w).unwrap();
        let t = Mat::identity(k, k) + Mat::from_fn(k, k, |_, _| r.random_range(-0.4..0.4));
        let ti = t.clone().try_inverse().unwrap();
        let p1 = reduce::ProjectionPair { v_r: vr.clone(), w_r: wr.clone(), provenance: vec![] };
        let p2 = reduce::ProjectionPair { v_r: &vr * &t, w_r: &wr * ti.transpose(), provenance: vec![] };
        let (a, b) = (p1.project(&g).unwrap(), p2.project(&g).unwrap());
        for s in [c(0.5, 1.0), c(3.0, -2.0)] {
            if let (Ok(x), Ok(y)) = (a.eval(s), b.eval(s)) {
                prop_assert!((&x - &y).norm() <= 1e-8 * (1.0 + x.norm()));
            }
        }
    }
}

fn projector_real(q: &Mat) -> CMat {
    let q = q.clone().qr().q();
    to_complex(&(&q * q.transpose()))
}

#[test]
fn realified_span_equals_complex_span() {
    let mut r = rng(5);
    let g = synthetic::stable_system(&mut r, 8, 1, 1);
    let w = synthetic::stable_weight(&mut r, 2, 1, 1, 0).unwrap();
    let f = fmap::build_f_realization(&g, &w).unwrap();
    let s = c(0.7, 1.3);
    let data = InterpolationData::new(
        vec![s, s.conj()],
        CMat::from_element(1, 2, c(1.0, 0.0)),
        CMat::from_element(1, 2, c(1.0, 0.0)),
    )
    .unwrap();
    let (vraw, wraw) = reduce::build_subspaces(&f, &data).unwrap();
    let proj = reduce::extract_projection(&vraw, &wraw, 8, &data).unwrap();
    let top = vraw.rows(0, 8).into_owned();
    let qc = top.qr().q();
    let pc = &qc * qc.adjoint();
    let pr = projector_real(&proj.v_r);
    assert!((pc - pr).norm() < 1e-10);
}

#[test]
fn h2_norm_matches_quadrature() {
    for seed in 0..4 {
        let g = synthetic::stable_system(&mut rng(seed), 6, 1, 1);
        let exact = lti::h2_norm(&g).unwrap().powi(2);
        let quad = fmap::quadrature_weighted_inner(&g, &g, &WeightFilter::identity(1), &Default::default()).unwrap();
        assert!(rel(quad, exact) < 1e-4, "{quad} vs {exact}");
    }
}
