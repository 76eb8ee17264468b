//! Seeded random test problems.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::fmap::WeightFilter;
use crate::linalg::Mat;
use crate::lti::StateSpace;
use crate::Result;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
    // Box-Muller
    Mat::from_fn(r, c, |_, _| {
        let u1: f64 = rng.random_range(f64::EPSILON..1.0);
        let u2: f64 = rng.random();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    })
}

fn orthogonal(rng: &mut ChaCha8Rng, n: usize) -> Mat {
    gaussian(rng, n, n).qr().q()
}

/// Stable state matrix with decay rates log-uniform in `[lo, hi]`, about a
/// third of the modes oscillatory, mildly non-normal.
pub fn stable_matrix(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Mat {
    let mut a = Mat::zeros(n, n);
    let mut i = 0;
    while i < n {
        let rate = (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp();
        if i + 1 < n && rng.random::<f64>() < 0.35 {
            let freq = rate * rng.random_range(0.5..5.0);
            a[(i, i)] = -rate;
            a[(i + 1, i + 1)] = -rate;
            a[(i, i + 1)] = freq;
            a[(i + 1, i)] = -freq;
            i += 2;
        } else {
            a[(i, i)] = -rate;
            i += 1;
        }
    }
    for r in 0..n {
        for c in r + 1..n {
            if a[(r, c)] == 0.0 && !(c == r + 1 && a[(c, r)] != 0.0) {
                a[(r, c)] = 0.2 * lo * gaussian(rng, 1, 1)[(0, 0)];
            }
        }
    }
    let q = orthogonal(rng, n);
    &q * a * q.transpose()
}

/// Random stable strictly proper system.
pub fn stable_system(rng: &mut ChaCha8Rng, n: usize, m: usize, p: usize) -> StateSpace {
    let a = stable_matrix(rng, n, 0.1, 10.0);
    let b = gaussian(rng, n, m);
    let c = gaussian(rng, p, n);
    StateSpace::strictly_proper(a, b, c).expect("consistent shapes")
}

/// Random stable system with a random feedthrough.
pub fn stable_system_with_d(rng: &mut ChaCha8Rng, n: usize, m: usize, p: usize) -> StateSpace {
    let g = stable_system(rng, n, m, p);
    g.with_feedthrough(gaussian(rng, p, m)).expect("consistent shapes")
}

/// Random stable weight `m × m_w`. `dw_rank` sets the rank of `D_w`
/// (0 gives a strictly proper weight).
pub fn stable_weight(rng: &mut ChaCha8Rng, n_w: usize, m: usize, m_w: usize, dw_rank: usize) -> Result<WeightFilter> {
    let a = stable_matrix(rng, n_w, 0.3, 5.0);
    let b = gaussian(rng, n_w, m_w);
    let c = gaussian(rng, m, n_w);
    let d = if dw_rank == 0 {
        Mat::zeros(m, m_w)
    } else {
        gaussian(rng, m, dw_rank) * gaussian(rng, dw_rank, m_w)
    };
    WeightFilter::new(a, b, c, d)
}

/// Random feedthrough `D` (p × m) with `D D_w = 0`.
pub fn feedthrough_annihilating(rng: &mut ChaCha8Rng, p: usize, w: &WeightFilter) -> Mat {
    let n = w.kernel();
    if n.ncols() == 0 {
        return Mat::zeros(p, w.outputs());
    }
    gaussian(rng, p, n.ncols()) * n.transpose()
}

/// SISO band-pass weight of order `2k`: a cascade of resonant sections
/// `2ζω s / (s² + 2ζω s + ω²)` with centre frequencies spread over
/// `[lo, hi]`.
pub fn band_pass(k: usize, lo: f64, hi: f64, zeta: f64) -> Result<WeightFilter> {
    let n = 2 * k;
    let mut a = Mat::zeros(n, n);
    let mut b = Mat::zeros(n, 1);
    let mut c = Mat::zeros(1, n);
    let centres = crate::lti::log_grid(lo, hi, k);
    // section i: x' = [[0,1],[-ω²,-2ζω]] x + [0;1] u, y = 2ζω x_2
    for (i, &w) in centres.iter().enumerate() {
        let o = 2 * i;
        a[(o, o + 1)] = 1.0;
        a[(o + 1, o)] = -w * w;
        a[(o + 1, o + 1)] = -2.0 * zeta * w;
        if i + 1 < k {
            // output of the next section drives this one
            a[(o + 1, o + 3)] = 2.0 * zeta * centres[i + 1];
        }
    }
    b[(n - 1, 0)] = 1.0;
    c[(0, 1)] = 2.0 * zeta * centres[0];
    WeightFilter::new(a, b, c, Mat::zeros(1, 1))
}
