//! One PASS/FAIL line per acceptance criterion. Runs without the libtest
//! harness so the lines appear in plain `cargo test` output.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use mor_core::fmap::{self, QuadratureConfig, WeightFilter};
use mor_core::linalg::{self, c, Mat};
use mor_core::lti::{self, StateSpace};
use mor_core::optimality;
use mor_core::reduce::{self, NowiConfig, ReducedModel};
use mor_core::synthetic::{self, rng};
use rand::Rng;

type Outcome = (bool, String);

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

fn timed(limit: f64, start: Instant, pass: bool, detail: String) -> Outcome {
    let t = start.elapsed().as_secs_f64();
    (pass && t < limit, format!("{detail}; {t:.2} s (limit {limit} s)"))
}

/// Random instance with `D D_w = 0`; `D_w` is zero on even seeds and rank one on odd ones.
fn weighted_instance(seed: u64, max_n: usize, max_nw: usize) -> (StateSpace, WeightFilter, rand_chacha::ChaCha8Rng) {
    let mut r = rng(seed);
    let nw = r.random_range(1..=max_nw);
    let w = synthetic::stable_weight(&mut r, nw, 2, 2, (seed % 2) as usize).unwrap();
    let n = r.random_range(1..=max_n);
    let d = synthetic::feedthrough_annihilating(&mut r, 2, &w);
    let g = synthetic::stable_system(&mut r, n, 2, 2).with_feedthrough(d).unwrap();
    (g, w, r)
}

fn cascade_inner(g: &StateSpace, h: &StateSpace, w: &WeightFilter) -> f64 {
    let gw = fmap::cascade(g, w).unwrap();
    let hw = fmap::cascade(h, w).unwrap();
    // D D_w vanishes up to rounding
    assert!(linalg::fro(gw.d()) <= 1e-12 && linalg::fro(hw.d()) <= 1e-12);
    lti::h2_inner(&gw.strictly_proper_part(), &hw.strictly_proper_part()).unwrap()
}

fn c1_inner_product_identity() -> Outcome {
    let start = Instant::now();
    let (mut worst_exact, mut worst_quad) = (0.0f64, 0.0f64);
    for seed in 0..25 {
        let (g, w, mut r) = weighted_instance(1000 + seed, 8, 4);
        let nh = r.random_range(1..=8);
        let mut h = synthetic::stable_system(&mut r, nh, 2, 2);
        if seed % 2 == 1 {
            h = h.with_feedthrough(synthetic::feedthrough_annihilating(&mut r, 2, &w)).unwrap();
        }
        let lhs = cascade_inner(&g, &h, &w);
        let rhs = if linalg::fro(h.d()) == 0.0 {
            let f = fmap::build_f_realization(&g, &w).unwrap();
            lti::h2_inner(&f.as_state_space(), &h).unwrap()
        } else {
            fmap::weighted_h2_inner(&g, &h, &w).unwrap()
        };
        worst_exact = worst_exact.max((lhs - rhs).abs() / (1.0 + lhs.abs()));
        let quad = fmap::quadrature_weighted_inner(&g, &h, &w, &QuadratureConfig::default()).unwrap();
        worst_quad = worst_quad.max(rel(quad, lhs)).max(rel(quad, rhs));
    }
    timed(
        10.0,
        start,
        worst_exact <= 1e-9 && worst_quad <= 1e-4,
        format!("25 instances, cascade vs F-map {worst_exact:.1e} (tol 1e-9), quadrature {worst_quad:.1e} (tol 1e-4)"),
    )
}

fn c2_realization() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..25 {
        let (g, w, mut r) = weighted_instance(2000 + seed, 8, 4);
        let f = fmap::build_f_realization(&g, &w).unwrap();
        for _ in 0..10 {
            let s = c(r.random_range(0.01..5.0), r.random_range(-10.0..10.0));
            let a = fmap::eval_f(&f, s).unwrap();
            let b = fmap::eval_f_by_residues(&g, &w, s).unwrap();
            worst = worst.max((&a - &b).norm() / b.norm());
        }
    }
    let one = Mat::from_element(1, 1, 1.0);
    let g = StateSpace::strictly_proper(Mat::from_element(1, 1, -1.0), one.clone(), one.clone()).unwrap();
    let w = WeightFilter::new(Mat::from_element(1, 1, -2.0), one.clone(), one, Mat::zeros(1, 1)).unwrap();
    let f0 = fmap::eval_f(&fmap::build_f_realization(&g, &w).unwrap(), c(0.0, 0.0)).unwrap()[(0, 0)];
    let scalar = (f0 - c(5.0 / 24.0, 0.0)).norm();
    (
        worst <= 1e-8 && scalar <= 1e-15,
        format!("250 points, block vs residue form {worst:.1e} (tol 1e-8); scalar F[G](0) - 5/24 = {scalar:.1e}"),
    )
}

fn c3_half_factor() -> Outcome {
    let (mut worst_full, mut worst_half, mut worst_identity) = (0.0f64, 0.0f64, 0.0f64);
    let mut seed = 3000;
    let mut used = 0;
    while used < 10 {
        seed += 1;
        let (g, w, mut r) = weighted_instance(seed, 8, 4);
        let d_h = synthetic::feedthrough_annihilating(&mut r, 2, &w);
        if linalg::fro(&d_h) == 0.0 {
            continue;
        }
        used += 1;
        let (full, half) = fmap::weighted_inner_with_constant(&g, &d_h, &w).unwrap();
        worst_identity = worst_identity.max((half - 0.5 * full).abs());
        let k = StateSpace::constant(d_h.clone());
        let q_full = fmap::quadrature_weighted_inner(&g, &k, &w, &QuadratureConfig::default()).unwrap();
        worst_full = worst_full.max(rel(q_full, full));
        // the half comes from the principal value of the pairing with a constant
        let f = fmap::build_f_realization(&g, &w).unwrap().as_state_space();
        let q_half = fmap::quadrature_weighted_inner(&f, &k, &WeightFilter::identity(2), &QuadratureConfig::default()).unwrap();
        worst_half = worst_half.max(rel(q_half, half));
    }
    (
        worst_identity == 0.0 && worst_full <= 1e-4 && worst_half <= 1e-4,
        format!("10 instances, <G,D_H>_W vs quadrature {worst_full:.1e}, <F[G],D_H> vs quadrature {worst_half:.1e} (tol 1e-4)"),
    )
}

fn exactness_problem(seed: u64) -> (StateSpace, WeightFilter) {
    let mut r = rng(seed);
    let g = synthetic::stable_system(&mut r, 12, 2, 2);
    let w = synthetic::stable_weight(&mut r, 4, 2, 2, 0).unwrap();
    (g, w)
}

struct ExactRun {
    g: StateSpace,
    w: WeightFilter,
    model: ReducedModel,
}

fn c4_exactness(runs: &mut Vec<ExactRun>) -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut shifts = 0;
    for seed in 0..3 {
        let (g, w) = exactness_problem(4000 + seed);
        let fg = fmap::build_f_realization(&g, &w).unwrap();
        for nr in [2, 4, 6] {
            let mut cfg = NowiConfig::new(nr);
            cfg.exactness = Some(true);
            let model = reduce::nowi(&g, &w, &cfg, None).unwrap();
            let fr = fmap::build_f_realization(&model.system, &w).unwrap();
            let data = model.interpolation.as_ref().unwrap();
            for res in optimality::residuals_at(&fg, &fr, data).unwrap() {
                worst = worst.max(res.max_relative());
                shifts += 1;
            }
            runs.push(ExactRun { g: g.clone(), w: w.clone(), model });
        }
    }
    timed(
        30.0,
        start,
        worst <= 1e-8,
        format!("9 models, {shifts} shifts, worst right/left/derivative mismatch {worst:.1e} (tol 1e-8)"),
    )
}

fn c5_equivalence(runs: &[ExactRun]) -> Outcome {
    let mut cases = 0;
    let mut both = 0;
    let mut mismatches = Vec::new();
    let mut check = |g: &StateSpace, g_r: &StateSpace, w: &WeightFilter, label: String| {
        let eq = optimality::equivalence_check(g, g_r, w, 1e-6, 10.0).unwrap();
        cases += 1;
        if eq.interpolatory_satisfied && eq.halevi_satisfied {
            both += 1;
        }
        if !eq.equivalent {
            mismatches.push(label);
        }
    };
    let mut converged = 0;
    for (k, run) in runs.iter().enumerate() {
        if run.model.converged && lti::is_stable(&run.model.system) {
            converged += 1;
            check(&run.g, &run.model.system, &run.w, format!("model {k}"));
        }
    }
    for seed in 0..20 {
        let (g, w, mut r) = weighted_instance(5000 + seed, 8, 4);
        let nr = r.random_range(1..=4);
        let g_r = synthetic::stable_system(&mut r, nr, 2, 2).with_feedthrough(synthetic::feedthrough_annihilating(&mut r, 2, &w)).unwrap();
        check(&g, &g_r, &w, format!("triple {seed}"));
    }
    // positive controls: a similarity transform of G realizes G exactly
    for seed in 0..3 {
        let (g, w, mut r) = weighted_instance(5100 + seed, 6, 3);
        let n = g.order();
        let t = Mat::identity(n, n) + Mat::from_fn(n, n, |_, _| r.random_range(-0.3..0.3));
        check(&g, &g.similarity(&t).unwrap(), &w, format!("control {seed}"));
    }
    (
        mismatches.is_empty() && converged > 0,
        format!(
            "{cases} cases ({converged} converged exactness models), {both} satisfy both families, {} disagree{}",
            mismatches.len(),
            if mismatches.is_empty() { String::new() } else { format!(": {mismatches:?}") }
        ),
    )
}

/// `‖G - κ/(s+a)‖²` for `G = 1/((s+1)(s+2))` from residues.
fn scalar_objective(a: f64, k: f64) -> f64 {
    1.0 / 12.0 - 2.0 * k / ((a + 1.0) * (a + 2.0)) + k * k / (2.0 * a)
}

fn first_order(a: f64, k: f64) -> StateSpace {
    StateSpace::strictly_proper(Mat::from_element(1, 1, -a), Mat::from_element(1, 1, k), Mat::from_element(1, 1, 1.0)).unwrap()
}

fn c6_unweighted() -> Outcome {
    let g = StateSpace::strictly_proper(
        Mat::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -2.0]),
        Mat::from_row_slice(2, 1, &[1.0, 1.0]),
        Mat::from_row_slice(1, 2, &[1.0, -1.0]),
    )
    .unwrap();
    let w = WeightFilter::identity(1);
    let gnorm = lti::h2_norm(&g).unwrap();

    let avals = lti::log_grid(1e-2, 1e2, 200);
    let kvals = lti::linear_grid(-1.0, 1.0, 200);
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for &a in &avals {
        for &k in &kvals {
            let j = scalar_objective(a, k);
            if j < best.0 {
                best = (j, a, k);
            }
        }
    }
    let quad = QuadratureConfig::default();
    let obj = |a: f64, k: f64| -> f64 {
        if a <= 0.0 {
            return f64::INFINITY;
        }
        let e = g.difference(&first_order(a, k)).unwrap();
        fmap::quadrature_weighted_inner(&e, &e, &w, &quad).unwrap()
    };
    // compass search on the quadrature objective from the best grid node
    let (_, mut a, mut k) = best;
    let mut f = obj(a, k);
    let (mut da, mut dk) = (a * 0.05, 0.01);
    while da > 1e-9 || dk > 1e-9 {
        let mut moved = false;
        for (ta, tk) in [(a + da, k), (a - da, k), (a, k + dk), (a, k - dk)] {
            let ft = obj(ta, tk);
            if ft < f {
                (a, k, f) = (ta, tk, ft);
                moved = true;
                break;
            }
        }
        if !moved {
            da *= 0.5;
            dk *= 0.5;
        }
    }
    let brute = f.max(0.0).sqrt() / gnorm;

    let mut cfg = NowiConfig::new(1);
    cfg.tol = 1e-12;
    cfg.max_iter = 500;
    let model = reduce::nowi(&g, &w, &cfg, None).unwrap();
    let nowi_err = lti::h2_norm(&g.difference(&model.system).unwrap()).unwrap() / gnorm;
    let pole = linalg::eigenvalues(model.system.a()).unwrap()[0];
    let sigma = -pole;
    let gs = g.eval(sigma).unwrap()[(0, 0)];
    let ml_value = (gs - model.system.eval(sigma).unwrap()[(0, 0)]).norm() / gs.norm();
    let gd = lti::eval_transfer_derivative(&g, sigma).unwrap()[(0, 0)];
    let ml_deriv = (gd - lti::eval_transfer_derivative(&model.system, sigma).unwrap()[(0, 0)]).norm() / gd.norm();
    let diff = (nowi_err - brute).abs();
    (
        model.converged && diff <= 1e-4 && ml_value <= 1e-6 && ml_deriv <= 1e-6,
        format!(
            "pole {:.6}, relative error NOWI {nowi_err:.6e} vs brute force {brute:.6e} (a {a:.6}, diff {diff:.1e}); Meier-Luenberger {ml_value:.1e}, {ml_deriv:.1e}",
            pole.re
        ),
    )
}

fn c7_trend() -> Outcome {
    let g = synthetic::stable_system(&mut rng(0), 20, 1, 1);
    let w = synthetic::band_pass(3, 0.5, 5.0, 0.3).unwrap();
    let mut res = Vec::new();
    let mut all_converged = true;
    let mut line = String::new();
    for nr in [2, 4, 6, 8, 10] {
        let mut cfg = NowiConfig::new(nr);
        cfg.exactness = Some(false);
        cfg.max_iter = 200;
        let model = reduce::nowi(&g, &w, &cfg, None).unwrap();
        let r = model.diagnostics.as_ref().map_or(f64::INFINITY, |d| d.max_interpolatory_relative());
        all_converged &= model.converged;
        line += &format!(" {nr}:{r:.2e}{}", if model.converged { "" } else { "(not converged)" });
        res.push(r);
    }
    let monotone = res.windows(2).all(|p| p[1] <= 2.0 * p[0]);
    let ratio = res[4] / res[0];
    (
        all_converged && monotone && ratio <= 0.1,
        format!("residuals by n_r{line}; n_r=10 / n_r=2 = {ratio:.1e}"),
    )
}

fn c8_fwbt() -> Outcome {
    let (mut worst_match, mut worst_bound) = (0.0f64, 0.0f64);
    for seed in 0..10 {
        let mut r = rng(8000 + seed);
        let g = synthetic::stable_system(&mut r, 8, 2, 2);
        let model = reduce::fwbt(&g, &WeightFilter::identity(2), 4).unwrap();
        let bt = reduce::balanced_truncation(&g, 4).unwrap();
        for _ in 0..10 {
            let s = c(r.random_range(0.0..3.0), r.random_range(-10.0..10.0));
            let y = bt.eval(s).unwrap();
            worst_match = worst_match.max((model.system.eval(s).unwrap() - &y).norm() / y.norm().max(1.0));
        }
        let tail: f64 = model.hankel_singular_values[4..].iter().sum();
        let err = lti::hinf_norm_sampled(&g.difference(&model.system).unwrap(), &lti::log_grid(1e-3, 1e3, 2000)).unwrap();
        worst_bound = worst_bound.max(err / (2.0 * tail));
    }
    (
        worst_match <= 1e-8 && worst_bound <= 1.0,
        format!("10 systems, fwbt vs balanced truncation {worst_match:.1e} (tol 1e-8), max H-inf error / (2 tail) = {worst_bound:.3}"),
    )
}

fn c9_impulse_at_zero(runs: &[ExactRun]) -> Outcome {
    let mut worst = 0.0f64;
    let mut count = 0;
    for run in runs {
        if !run.model.converged || linalg::fro(run.w.d()) != 0.0 {
            continue;
        }
        count += 1;
        let f0 = fmap::f_impulse_at_zero(&fmap::build_f_realization(&run.g, &run.w).unwrap());
        let fr0 = fmap::f_impulse_at_zero(&fmap::build_f_realization(&run.model.system, &run.w).unwrap());
        worst = worst.max(linalg::fro(&(&f0 - &fr0)) / linalg::fro(&f0));
    }
    (
        count > 0 && worst <= 1e-8,
        format!("{count} converged exactness models with D_w = 0, worst relative mismatch {worst:.1e} (tol 1e-8)"),
    )
}

fn c10_solvers() -> Outcome {
    let start = Instant::now();
    let (mut worst, mut smallest) = (0.0f64, f64::INFINITY);
    for seed in 0..20 {
        let mut r = rng(10_000 + seed);
        let k = r.random_range(1..=10);
        let l = r.random_range(1..=10);
        let m1 = synthetic::stable_matrix(&mut r, k, 0.1, 10.0);
        let m2 = synthetic::stable_matrix(&mut r, l, 0.1, 10.0);
        let n = Mat::from_fn(k, l, |_, _| r.random_range(-1.0..1.0));
        let x = linalg::solve_sylvester(&m1, &m2, &n).unwrap();
        let y = linalg::kron_oracle_sylvester(&m1, &m2, &n).unwrap();
        worst = worst.max(linalg::fro(&(&x - &y)) / linalg::fro(&y));

        let g = synthetic::stable_system(&mut r, k, 2, 1);
        let p = linalg::solve_lyapunov(g.a(), &(g.b() * g.b().transpose())).unwrap();
        let sym = (&p + p.transpose()) * 0.5;
        let lo = sym.symmetric_eigenvalues().min() / linalg::fro(&p);
        smallest = smallest.min(lo);
    }
    timed(
        5.0,
        start,
        worst <= 1e-9 && smallest >= -1e-12,
        format!("20 Sylvester instances vs Kronecker {worst:.1e} (tol 1e-9); smallest Gramian eigenvalue / norm {smallest:.1e}"),
    )
}

fn csv_field(path: &Path, row: usize, name: &str) -> String {
    let mut rd = csv::Reader::from_path(path).unwrap();
    let i = rd.headers().unwrap().iter().position(|h| h == name).unwrap();
    rd.records().nth(row).unwrap().unwrap()[i].to_string()
}

fn c11_cli() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let g = synthetic::stable_system(&mut rng(0), 20, 1, 1);
    let w = synthetic::band_pass(3, 0.5, 5.0, 0.3).unwrap();
    let man = mor_core::cli::manifest::write_manifest_bundle(&dir.path().join("bench"), "band-pass", &g, Some(&w)).unwrap();
    let man = man.to_str().unwrap();
    let bin = env!("CARGO_BIN_EXE_mor");
    let sweep = |name: &str| {
        let out = dir.path().join(name);
        let st = Command::new(bin)
            .args(["sweep", "--manifest", man, "--method", "nowi,fwbt", "--order", "2,4,6", "--out", out.to_str().unwrap()])
            .output()
            .unwrap();
        assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
        std::fs::read(out.join("sweep.csv")).unwrap()
    };
    let identical = sweep("a") == sweep("b");

    let out = dir.path().join("model");
    let st = Command::new(bin)
        .args(["reduce", "--manifest", man, "--method", "nowi", "--order", "4", "--out", out.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    let reported: f64 = csv_field(&out.join("report.csv"), 0, "weighted_h2_error").parse().unwrap();
    let (g2, w2) = mor_core::cli::manifest::load_manifest(Path::new(man)).unwrap();
    let g_r = mor_core::cli::manifest::load_model_dir(&out).unwrap();
    let again = fmap::weighted_error_norm(&g2, &g_r, &w2).unwrap();
    let drift = rel(again, reported);
    let swept: f64 = csv_field(&dir.path().join("a/sweep.csv"), 1, "relative_weighted_h2_error").parse().unwrap();
    let rel_reported: f64 = csv_field(&out.join("report.csv"), 0, "relative_weighted_h2_error").parse().unwrap();
    (
        identical && drift <= 1e-12 && swept == rel_reported,
        format!("repeat sweeps byte-identical: {identical}; reloaded model error drift {drift:.1e} (tol 1e-12)"),
    )
}

fn run(k: usize, f: impl FnOnce() -> Outcome) -> bool {
    let (pass, detail) = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        (false, format!("panicked: {msg}"))
    });
    println!("{} criterion {k}: {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}

fn main() {
    let mut runs = Vec::new();
    let results = [
        run(1, c1_inner_product_identity),
        run(2, c2_realization),
        run(3, c3_half_factor),
        run(4, || c4_exactness(&mut runs)),
        run(5, || c5_equivalence(&runs)),
        run(6, c6_unweighted),
        run(7, c7_trend),
        run(8, c8_fwbt),
        run(9, || c9_impulse_at_zero(&runs)),
        run(10, c10_solvers),
        run(11, c11_cli),
    ];
    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
