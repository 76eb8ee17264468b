//! Projection-based reduction: interpolatory subspaces of the 𝔉
//! realization, the NOWI fixed-point iteration, the interpolation-gap
//! diagnostic and frequency-weighted balanced truncation.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{MorError, Result};
use crate::fmap::{self, FRealization, WeightFilter};
use crate::linalg::{self, c, fro, real_part, to_complex, CMat, Mat, Pairing};
use crate::lti::{self, StateSpace};
use crate::optimality::{self, InterpolationData, ResidualReport};

/// Where a column of the projection basis came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ColumnSource {
    /// Real shift; the column is real.
    Real { shift: Complex64 },
    RealPart { shift: Complex64 },
    ImagPart { shift: Complex64 },
    /// Direction of `Ran(Z)` appended for exact interpolation.
    Exactness { index: usize },
    /// Balanced-truncation state.
    Balanced { index: usize },
}

#[derive(Debug, Clone)]
pub struct ProjectionPair {
    pub v_r: Mat,
    pub w_r: Mat,
    pub provenance: Vec<ColumnSource>,
}

impl ProjectionPair {
    pub fn order(&self) -> usize {
        self.v_r.ncols()
    }

    /// `(W_r^T A V_r, W_r^T B, C V_r)`.
    pub fn project(&self, g: &StateSpace) -> Result<StateSpace> {
        StateSpace::strictly_proper(
            self.w_r.transpose() * g.a() * &self.v_r,
            self.w_r.transpose() * g.b(),
            g.c() * &self.v_r,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Nowi,
    Fwbt,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Nowi => "nowi",
            Method::Fwbt => "fwbt",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelFlag {
    MaxIterationsExceeded,
    UnstableReducedModel,
    ShiftPerturbed,
    /// `N^T C_w P_w C_w^T N` was singular; a pseudo-inverse was used.
    RegularizedFeedthrough,
    /// Fewer `Ran(Z)` directions than its rank fit into the basis.
    PartialExactness,
    /// A shift could not be matched to a unit of the same kind.
    ShiftFallback,
    /// Gramian rank was below the requested order.
    RankDeficientGramian,
    /// The iteration hit a degenerate basis and stopped early.
    Breakdown,
}

#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub iteration: usize,
    pub shifts: Vec<Complex64>,
    pub shift_change: f64,
    pub max_interpolatory_relative: Option<f64>,
    pub weighted_error: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ReducedModel {
    pub method: Method,
    pub requested_order: usize,
    pub system: StateSpace,
    pub z_r: Mat,
    pub projection: ProjectionPair,
    /// Interpolation data the final basis was built from.
    pub interpolation: Option<InterpolationData>,
    pub diagnostics: Option<ResidualReport>,
    pub history: Vec<IterationRecord>,
    pub flags: Vec<ModelFlag>,
    pub iterations: usize,
    pub converged: bool,
    pub hankel_singular_values: Vec<f64>,
}

impl ReducedModel {
    pub fn order(&self) -> usize {
        self.system.order()
    }

    pub fn has_flag(&self, f: ModelFlag) -> bool {
        self.flags.contains(&f)
    }

    fn flag(&mut self, f: ModelFlag) {
        if !self.flags.contains(&f) {
            self.flags.push(f);
        }
    }
}

/// Columns `(σ_i I - A_F)^{-1} B_F b_i` and `(σ_i I - A_F^T)^{-1} C_F^T c_i`.
pub fn build_subspaces(f: &FRealization, data: &InterpolationData) -> Result<(CMat, CMat)> {
    let (n, nw) = (f.system_order(), f.weight_order());
    let k = data.len();
    let bf = to_complex(&f.b_f);
    let cft = to_complex(&f.c_f.transpose());
    let mut v = CMat::zeros(n + nw, k);
    let mut w = CMat::zeros(n + nw, k);
    for (i, &s) in data.shifts.iter().enumerate() {
        let vb = f.resolvent(s, &(&bf * data.right.columns(i, 1)))?;
        let wc = f.resolvent_transpose(s, &(&cft * data.left.columns(i, 1)))?;
        v.set_column(i, &vb.column(0));
        w.set_column(i, &wc.column(0));
    }
    Ok((v, w))
}

/// Real columns spanning the leading `n` rows of a conjugate-closed set.
fn realify(raw: &CMat, n: usize, shifts: &[Complex64], pairing: &[Pairing]) -> (Mat, Vec<ColumnSource>) {
    let top = raw.rows(0, n).into_owned();
    let mut cols: Vec<nalgebra::DVector<f64>> = Vec::new();
    let mut prov = Vec::new();
    for (i, p) in pairing.iter().enumerate() {
        let col = top.column(i);
        match p {
            Pairing::Real => {
                cols.push(col.map(|z| z.re));
                prov.push(ColumnSource::Real { shift: shifts[i] });
            }
            Pairing::Upper(_) => {
                cols.push(col.map(|z| z.re));
                cols.push(col.map(|z| z.im));
                prov.push(ColumnSource::RealPart { shift: shifts[i] });
                prov.push(ColumnSource::ImagPart { shift: shifts[i] });
            }
            Pairing::Lower(_) => {}
        }
    }
    let m = if cols.is_empty() {
        Mat::zeros(n, 0)
    } else {
        Mat::from_columns(&cols)
    };
    (m, prov)
}

/// Leading `n`-row blocks, realified and biorthonormalized.
pub fn extract_projection(
    vraw: &CMat,
    wraw: &CMat,
    n: usize,
    data: &InterpolationData,
) -> Result<ProjectionPair> {
    extract_with_extra(vraw, wraw, n, data, None).map(|(p, _)| p)
}

fn extract_with_extra(
    vraw: &CMat,
    wraw: &CMat,
    n: usize,
    data: &InterpolationData,
    extra: Option<&Mat>,
) -> Result<(ProjectionPair, usize)> {
    let pairing = data.pairing().ok_or_else(|| {
        MorError::DimensionMismatch("shift set is not closed under conjugation".into())
    })?;
    let (mut v, mut prov) = realify(vraw, n, &data.shifts, &pairing);
    let (mut w, _) = realify(wraw, n, &data.shifts, &pairing);
    let mut added = 0;
    if let Some(qz) = extra {
        let fresh = fresh_directions(&v, qz, n);
        added = fresh.ncols();
        if added > 0 {
            v = hcat(&v, &fresh);
            w = hcat(&w, &fresh);
            for j in 0..added {
                prov.push(ColumnSource::Exactness { index: j });
            }
        }
    }
    let (v_r, w_r) = linalg::biorthonormalize(&v, &w)?;
    Ok((
        ProjectionPair {
            v_r,
            w_r,
            provenance: prov,
        },
        added,
    ))
}

fn hcat(a: &Mat, b: &Mat) -> Mat {
    let mut out = Mat::zeros(a.nrows(), a.ncols() + b.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut((0, a.ncols()), b.shape()).copy_from(b);
    out
}

/// Orthonormal directions of `Ran(qz)` not already in `Ran(v)`, at most
/// `n - cols(v)` of them.
fn fresh_directions(v: &Mat, qz: &Mat, n: usize) -> Mat {
    if qz.ncols() == 0 || v.ncols() >= n {
        return Mat::zeros(n, 0);
    }
    let qv = if v.ncols() > 0 { v.clone().qr().q() } else { Mat::zeros(n, 0) };
    let resid = qz - &qv * (qv.transpose() * qz);
    let svd = resid.svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let mut idx: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > 1e-8)
        .collect();
    idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    idx.truncate(n - v.ncols());
    let cols: Vec<_> = idx.iter().map(|&i| u.column(i).into_owned()).collect();
    if cols.is_empty() {
        Mat::zeros(n, 0)
    } else {
        Mat::from_columns(&cols)
    }
}

/// Orthonormal basis of `Ran(Z)` with singular values above `1e-12 σ_1`.
pub fn range_basis(z: &Mat) -> Mat {
    let n = z.nrows();
    if z.ncols() == 0 || fro(z) == 0.0 {
        return Mat::zeros(n, 0);
    }
    let svd = z.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let smax = svd.singular_values.max();
    let mut idx: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > 1e-12 * smax)
        .collect();
    idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let cols: Vec<_> = idx.iter().map(|&i| u.column(i).into_owned()).collect();
    Mat::from_columns(&cols)
}

/// Reduced feedthrough and `Z_r`:
/// `A_r Z_r + Z_r A_w^T + B_r (C_w P_w + D_w B_w^T) = 0`,
/// `D_r = C (Z - V_r Z_r) C_w^T N (N^T C_w P_w C_w^T N)^{-1} N^T`.
/// The flag reports whether a pseudo-inverse replaced the inverse.
pub fn compute_feedthrough(
    f: &FRealization,
    proj: &ProjectionPair,
    a_r: &Mat,
    b_r: &Mat,
) -> Result<(Mat, Mat, bool)> {
    let g = f.system();
    let w = f.weight();
    let rhs = b_r * (w.c() * &f.p_w + w.d() * w.b().transpose());
    let z_r = linalg::solve_sylvester(a_r, &w.a().transpose(), &rhs)?;
    let (p, m) = (g.outputs(), g.inputs());
    let n_ker = w.kernel();
    if n_ker.ncols() == 0 {
        return Ok((Mat::zeros(p, m), z_r, false));
    }
    let (minv, regularized) = kernel_gram_inverse(f, &n_ker);
    let gap = &f.z - &proj.v_r * &z_r;
    let d_r = g.c() * gap * w.c().transpose() * &n_ker * minv * n_ker.transpose();
    Ok((d_r, z_r, regularized))
}

/// `(N^T C_w P_w C_w^T N)^{-1}`, or a pseudo-inverse with cutoff
/// `1e-12 σ_max` when singular.
fn kernel_gram_inverse(f: &FRealization, n_ker: &Mat) -> (Mat, bool) {
    let w = f.weight();
    let m = n_ker.transpose() * w.c() * &f.p_w * w.c().transpose() * n_ker;
    let k = m.nrows();
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let cutoff = 1e-12 * smax;
    let singular = svd.singular_values.iter().any(|&s| s <= cutoff) || smax == 0.0;
    if !singular {
        if let Some(inv) = m.clone().try_inverse() {
            return (inv, false);
        }
    }
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let mut pinv = Mat::zeros(k, k);
    for i in 0..svd.singular_values.len() {
        let s = svd.singular_values[i];
        if s > cutoff && s > 0.0 {
            pinv += vt.row(i).transpose() * u.column(i).transpose() / s;
        }
    }
    (pinv, true)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitStrategy {
    MirroredDominant,
    LogSpaced,
    Random(u64),
}

#[derive(Debug, Clone)]
pub struct NowiConfig {
    pub order: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub init: InitStrategy,
    /// `None` selects exactness automatically (on when `n_w <= n`).
    pub exactness: Option<bool>,
    pub stability_repair: bool,
    /// Recompute `D_r` every iteration rather than only at the end.
    pub feedthrough_each_iteration: bool,
    /// Record the weighted error of every iterate in the history.
    pub track_error: bool,
}

impl NowiConfig {
    pub fn new(order: usize) -> Self {
        Self {
            order,
            tol: 1e-4,
            max_iter: 100,
            init: InitStrategy::MirroredDominant,
            exactness: None,
            stability_repair: true,
            feedthrough_each_iteration: true,
            track_error: false,
        }
    }
}

/// Maximum relative change between shift sets sorted by (Re, Im).
pub fn shift_change(old: &[Complex64], new: &[Complex64]) -> f64 {
    let sort = |v: &[Complex64]| {
        let mut v = v.to_vec();
        v.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
        v
    };
    let (a, b) = (sort(old), sort(new));
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter()
        .zip(b.iter())
        .map(|(o, n)| (n - o).norm() / o.norm().max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max)
}

/// Leading singular directions of `𝔉[G](σ)`: `b = v_1`, `c = conj(u_1)`.
fn dominant_directions(f: &FRealization, s: Complex64) -> Result<(CMat, CMat)> {
    let val = fmap::eval_f(f, s)?;
    if s.im == 0.0 {
        let svd = real_part(&val).svd(true, true);
        let i = argmax(svd.singular_values.as_slice());
        let u = svd.u.unwrap().column(i).into_owned();
        let v = svd.v_t.unwrap().row(i).transpose();
        return Ok((to_complex(&Mat::from_column_slice(v.len(), 1, v.as_slice())),
                   to_complex(&Mat::from_column_slice(u.len(), 1, u.as_slice()))));
    }
    let svd = val.svd(true, true);
    let i = argmax(svd.singular_values.as_slice());
    let u = svd.u.unwrap().columns(i, 1).into_owned();
    let v = svd.v_t.unwrap().rows(i, 1).adjoint();
    Ok((v, u.map(|z| z.conj())))
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 0..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

/// Unit of a conjugate-closed set: a real value or an upper/lower pair.
#[derive(Debug, Clone, Copy)]
struct Unit {
    first: usize,
    second: Option<usize>,
}

impl Unit {
    fn slots(&self) -> usize {
        if self.second.is_some() {
            2
        } else {
            1
        }
    }
}

fn units(pairing: &[Pairing]) -> Vec<Unit> {
    pairing
        .iter()
        .enumerate()
        .filter_map(|(i, p)| match p {
            Pairing::Real => Some(Unit { first: i, second: None }),
            Pairing::Upper(j) => Some(Unit { first: i, second: Some(*j) }),
            Pairing::Lower(_) => None,
        })
        .collect()
}

/// Positive real shifts spread logarithmically over the spectral range of
/// `A`.
fn log_spaced_shifts(a: &Mat, k: usize) -> Result<Vec<Complex64>> {
    let (lo, hi) = decay_range(a)?;
    Ok(lti::log_grid(lo, hi, k).into_iter().map(|x| c(x, 0.0)).collect())
}

fn decay_range(a: &Mat) -> Result<(f64, f64)> {
    let eig = linalg::eigenvalues(a)?;
    let rates: Vec<f64> = eig.iter().map(|z| z.re.abs()).filter(|x| *x > 0.0).collect();
    let mut lo = rates.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut hi = rates.iter().cloned().fold(0.0, f64::max);
    if !lo.is_finite() || hi == 0.0 {
        lo = 1.0;
        hi = 1.0;
    }
    if hi / lo < 4.0 {
        let mid = (hi * lo).sqrt();
        lo = mid / 2.0;
        hi = mid * 2.0;
    }
    Ok((lo, hi))
}

/// Directions for a conjugate-closed shift list via the dominant singular
/// vectors, conjugated within pairs.
fn directions_for(f: &FRealization, shifts: &[Complex64]) -> Result<InterpolationData> {
    let k = shifts.len();
    let (m, p) = (f.system().inputs(), f.system().outputs());
    let scale = shifts.iter().map(|z| z.norm()).fold(1.0, f64::max);
    let pairing = linalg::conjugate_pairing(shifts, 1e-10 * scale)
        .ok_or_else(|| MorError::DimensionMismatch("initial shifts not conjugate-closed".into()))?;
    let mut right = CMat::zeros(m, k);
    let mut left = CMat::zeros(p, k);
    let mut s = shifts.to_vec();
    for u in units(&pairing) {
        if u.second.is_none() {
            s[u.first] = c(s[u.first].re, 0.0);
        }
        let (b, cv) = dominant_directions(f, s[u.first])?;
        right.set_column(u.first, &b.column(0));
        left.set_column(u.first, &cv.column(0));
        if let Some(j) = u.second {
            s[j] = s[u.first].conj();
            right.set_column(j, &b.column(0).map(|z| z.conj()));
            left.set_column(j, &cv.column(0).map(|z| z.conj()));
        }
    }
    InterpolationData::new(s, right, left)
}

/// Mirrors the most dominant weight poles and system poles; dominance of a
/// pole is `‖c‖‖b‖ / (2|Re λ|)`.
fn mirrored_dominant(f: &FRealization, g: &StateSpace, w: &WeightFilter, k: usize) -> Result<Vec<Complex64>> {
    let nu = 2.min(k).min(w.order());
    let mut chosen: Vec<Complex64> = Vec::new();
    let pick = |poles: &[Complex64], right: &CMat, left: &CMat, pairing: &[Pairing], budget: usize, chosen: &mut Vec<Complex64>| {
        let mut us = units(pairing);
        let score = |u: &Unit| {
            let i = u.first;
            left.column(i).norm() * right.column(i).norm() / (2.0 * poles[i].re.abs().max(f64::MIN_POSITIVE))
        };
        us.sort_by(|a, b| score(b).total_cmp(&score(a)).then(a.first.cmp(&b.first)));
        let mut used = 0;
        for u in us {
            if used + u.slots() > budget {
                continue;
            }
            chosen.push(-poles[u.first]);
            if let Some(j) = u.second {
                chosen.push(-poles[j]);
            }
            used += u.slots();
            if used == budget {
                break;
            }
        }
        used
    };
    let mut used = 0;
    if nu > 0 {
        used += pick(&w.poles, &w.f, &w.e, &w.pairing, nu, &mut chosen);
    }
    let _ = f;
    if let Ok(pr) = lti::to_pole_residue(g) {
        used += pick(&pr.poles, &pr.right, &pr.left, &pr.pairing, k - used, &mut chosen);
    }
    if used < k {
        let extra = log_spaced_shifts(g.a(), k - used)?;
        for e in extra {
            let mut e = e;
            while chosen.iter().any(|x| (x - e).norm() < 1e-8 * (1.0 + e.norm())) {
                e *= 1.1;
            }
            chosen.push(e);
        }
    }
    for z in chosen.iter_mut() {
        *z = c(z.re.abs(), z.im);
    }
    Ok(chosen)
}

fn initial_data(f: &FRealization, w: &WeightFilter, cfg: &NowiConfig) -> Result<InterpolationData> {
    let g = f.system();
    let k = cfg.order;
    match cfg.init {
        InitStrategy::MirroredDominant => {
            let shifts = mirrored_dominant(f, g, w, k)?;
            directions_for(f, &shifts)
        }
        InitStrategy::LogSpaced => {
            let shifts = log_spaced_shifts(g.a(), k)?;
            directions_for(f, &shifts)
        }
        InitStrategy::Random(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (lo, hi) = decay_range(g.a())?;
            let shifts: Vec<Complex64> = (0..k)
                .map(|_| c((lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp(), 0.0))
                .collect();
            let unit = |rng: &mut ChaCha8Rng, len: usize| {
                let v = Mat::from_fn(len, 1, |_, _| rng.random_range(-1.0..1.0));
                let nv = fro(&v).max(f64::MIN_POSITIVE);
                to_complex(&(v / nv))
            };
            let mut right = CMat::zeros(g.inputs(), k);
            let mut left = CMat::zeros(g.outputs(), k);
            for i in 0..k {
                right.set_column(i, &unit(&mut rng, g.inputs()).column(0));
                left.set_column(i, &unit(&mut rng, g.outputs()).column(0));
            }
            InterpolationData::new(shifts, right, left)
        }
    }
}

/// Moves shifts that sit on an eigenvalue of `A` or `A_w`.
fn avoid_collisions(data: &mut InterpolationData, spectrum: &[Complex64]) -> bool {
    let mut moved = false;
    for s in data.shifts.iter_mut() {
        let tol = 1e-10 * (1.0 + s.norm());
        if spectrum.iter().any(|l| (*s - l).norm() <= tol) {
            let d = 1e-8 * (1.0 + s.norm());
            *s += c(d, 0.0);
            moved = true;
        }
    }
    moved
}

/// Next interpolation data from a reduced model: mirrored poles with
/// residue directions, optionally matched down to `k` shifts.
fn next_data(
    sd: &linalg::SpectralDecomposition,
    b_r: &Mat,
    c_r: &Mat,
    repair: bool,
    prev: &InterpolationData,
    k: usize,
) -> Result<(InterpolationData, bool)> {
    let rb = sd.solve(&to_complex(b_r))?.transpose();
    let cr = to_complex(c_r) * &sd.vectors;
    let shifts: Vec<Complex64> = sd
        .eigenvalues
        .iter()
        .map(|l| {
            let l = if repair { c(-l.re.abs(), l.im) } else { *l };
            -l
        })
        .collect();
    if shifts.len() == k {
        return Ok((InterpolationData { shifts, right: rb, left: cr }, false));
    }
    // match units of the new set to units of the previous set
    let new_units = units(&sd.pairing);
    let prev_pairing = prev.pairing().unwrap_or_else(|| vec![Pairing::Real; prev.len()]);
    let mut prev_units = units(&prev_pairing);
    prev_units.sort_by(|a, b| {
        let (x, y) = (prev.shifts[a.first], prev.shifts[b.first]);
        x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im))
    });
    let mut used = vec![false; new_units.len()];
    let mut sel_idx: Vec<usize> = Vec::new();
    let mut sel_real: Vec<(Complex64, nalgebra::DVector<Complex64>, nalgebra::DVector<Complex64>)> = Vec::new();
    let mut fallback = false;
    for pu in &prev_units {
        let target = prev.shifts[pu.first];
        let closest = |slots: usize, used: &[bool]| {
            let mut best: Option<(usize, f64)> = None;
            for (ui, u) in new_units.iter().enumerate() {
                if used[ui] || u.slots() != slots {
                    continue;
                }
                let d = (shifts[u.first] - target).norm();
                if best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((ui, d));
                }
            }
            best.map(|(i, _)| i)
        };
        if let Some(ui) = closest(pu.slots(), &used) {
            used[ui] = true;
            sel_idx.push(new_units[ui].first);
            if let Some(j) = new_units[ui].second {
                sel_idx.push(j);
            }
            continue;
        }
        fallback = true;
        if pu.slots() == 1 {
            // only pairs left: use the real part of the closest one
            if let Some(ui) = closest(2, &used) {
                used[ui] = true;
                let i = new_units[ui].first;
                sel_real.push((
                    c(shifts[i].re, 0.0),
                    rb.column(i).map(|z| c(z.re, 0.0)),
                    cr.column(i).map(|z| c(z.re, 0.0)),
                ));
                continue;
            }
        } else {
            // only reals left: take the two closest
            let mut got = 0;
            while got < 2 {
                match closest(1, &used) {
                    Some(ui) => {
                        used[ui] = true;
                        sel_idx.push(new_units[ui].first);
                        got += 1;
                    }
                    None => break,
                }
            }
            if got == 2 {
                continue;
            }
        }
        // nothing suitable: keep the previous unit
        sel_real.push((
            prev.shifts[pu.first],
            prev.right.column(pu.first).into_owned(),
            prev.left.column(pu.first).into_owned(),
        ));
        if let Some(j) = pu.second {
            sel_real.push((
                prev.shifts[j],
                prev.right.column(j).into_owned(),
                prev.left.column(j).into_owned(),
            ));
        }
    }
    let total = sel_idx.len() + sel_real.len();
    let mut s_out = Vec::with_capacity(total);
    let mut r_out = CMat::zeros(rb.nrows(), total);
    let mut l_out = CMat::zeros(cr.nrows(), total);
    for (col, &i) in sel_idx.iter().enumerate() {
        s_out.push(shifts[i]);
        r_out.set_column(col, &rb.column(i));
        l_out.set_column(col, &cr.column(i));
    }
    for (off, (s, r, l)) in sel_real.into_iter().enumerate() {
        let col = sel_idx.len() + off;
        s_out.push(s);
        r_out.set_column(col, &r);
        l_out.set_column(col, &l);
    }
    Ok((
        InterpolationData {
            shifts: s_out,
            right: r_out,
            left: l_out,
        },
        fallback,
    ))
}

struct Iterate {
    proj: ProjectionPair,
    a_r: Mat,
    b_r: Mat,
    c_r: Mat,
    data: InterpolationData,
    stable: bool,
    change: f64,
    regularized: bool,
    partial: bool,
}

/// Nearly optimal weighted interpolation. A nonzero `D` is split off:
/// the strictly proper part is reduced and `D` is added back to `D_r`.
pub fn nowi(
    g: &StateSpace,
    w: &WeightFilter,
    cfg: &NowiConfig,
    init: Option<InterpolationData>,
) -> Result<ReducedModel> {
    let n = g.order();
    if cfg.order == 0 || cfg.order > n {
        return Err(MorError::Usage(format!(
            "reduced order {} must lie in 1..={n}",
            cfg.order
        )));
    }
    if !(cfg.tol > 0.0) {
        return Err(MorError::Usage("tolerance must be positive".into()));
    }
    fmap::validate_membership(g, w)?;
    let g0 = g.strictly_proper_part();
    let f = fmap::build_f_realization(&g0, w)?;
    let mut flags: Vec<ModelFlag> = Vec::new();
    let push_flag = |flags: &mut Vec<ModelFlag>, fl: ModelFlag| {
        if !flags.contains(&fl) {
            flags.push(fl);
        }
    };

    let qz = range_basis(&f.z);
    let exact = cfg
        .exactness
        .unwrap_or(w.order() <= n && cfg.order + qz.ncols() <= n);
    let extra = if exact { Some(&qz) } else { None };

    let mut data = match init {
        Some(d) => {
            if d.len() != cfg.order {
                return Err(MorError::Usage(format!(
                    "initial data has {} shifts, order is {}",
                    d.len(),
                    cfg.order
                )));
            }
            d
        }
        None => initial_data(&f, w, cfg)?,
    };
    let mut spectrum = linalg::eigenvalues(g.a())?;
    spectrum.extend(w.poles.iter().cloned());

    let mut history = Vec::new();
    let mut best: Option<Iterate> = None;
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=cfg.max_iter {
        iterations = it;
        if avoid_collisions(&mut data, &spectrum) {
            push_flag(&mut flags, ModelFlag::ShiftPerturbed);
        }
        let step = build_subspaces(&f, &data).and_then(|(vraw, wraw)| {
            let (proj, added) = extract_with_extra(&vraw, &wraw, n, &data, extra)?;
            let a_r = proj.w_r.transpose() * g0.a() * &proj.v_r;
            let b_r = proj.w_r.transpose() * g0.b();
            let c_r = g0.c() * &proj.v_r;
            let sd = linalg::spectral(&a_r)?;
            let next = next_data(&sd, &b_r, &c_r, cfg.stability_repair, &data, cfg.order)?;
            Ok((proj, added, a_r, b_r, c_r, sd, next))
        });
        // a later degenerate basis falls back to the best iterate so far
        let (proj, added, a_r, b_r, c_r, sd, (next, fallback)) = match step {
            Ok(v) => v,
            Err(e) if best.is_none() => return Err(e),
            Err(_) => {
                push_flag(&mut flags, ModelFlag::Breakdown);
                break;
            }
        };
        let partial = exact && added < qz.ncols() && !z_in_span(&proj.v_r, &qz);
        let stable = sd.eigenvalues.iter().all(|l| l.re < 0.0);
        if fallback {
            push_flag(&mut flags, ModelFlag::ShiftFallback);
        }
        let change = shift_change(&data.shifts, &next.shifts);

        let mut record = IterationRecord {
            iteration: it,
            shifts: data.shifts.clone(),
            shift_change: change,
            max_interpolatory_relative: None,
            weighted_error: None,
        };
        if stable && (cfg.feedthrough_each_iteration || cfg.track_error) {
            if let Ok((d_r0, _, _)) = compute_feedthrough(&f, &proj, &a_r, &b_r) {
                let gr0 = StateSpace::new(a_r.clone(), b_r.clone(), c_r.clone(), d_r0)?;
                if cfg.feedthrough_each_iteration {
                    record.max_interpolatory_relative = optimality::interpolatory_residuals(&g0, &gr0, w)
                        .ok()
                        .map(|r| r.max_interpolatory_relative());
                }
                if cfg.track_error {
                    record.weighted_error = fmap::weighted_error_norm(&g0, &gr0, w).ok();
                }
            }
        }
        history.push(record);

        let candidate = Iterate {
            proj,
            a_r,
            b_r,
            c_r,
            data: data.clone(),
            stable,
            change,
            regularized: false,
            partial,
        };
        let better = match &best {
            None => true,
            Some(b) => (candidate.stable && !b.stable) || (candidate.stable == b.stable && change <= b.change),
        };
        let done = change <= cfg.tol;
        if done {
            best = Some(candidate);
            converged = true;
            break;
        }
        if better {
            best = Some(candidate);
        }
        data = next;
    }

    let mut it = best.expect("at least one iteration runs");
    let (d_r0, z_r, regularized) = compute_feedthrough(&f, &it.proj, &it.a_r, &it.b_r)?;
    it.regularized = regularized;
    if it.regularized {
        push_flag(&mut flags, ModelFlag::RegularizedFeedthrough);
    }
    if it.partial {
        push_flag(&mut flags, ModelFlag::PartialExactness);
    }
    if !converged {
        push_flag(&mut flags, ModelFlag::MaxIterationsExceeded);
    }
    if !it.stable {
        if !cfg.stability_repair {
            let max_real = linalg::max_real_eig(&it.a_r)?;
            return Err(MorError::UnstableReducedModel { max_real });
        }
        push_flag(&mut flags, ModelFlag::UnstableReducedModel);
    }
    let system = StateSpace::new(it.a_r.clone(), it.b_r.clone(), it.c_r.clone(), d_r0 + g.d())?;
    let diagnostics = if it.stable {
        optimality::full_report(g, &system, w)
            .or_else(|_| optimality::interpolatory_residuals(g, &system, w))
            .ok()
    } else {
        None
    };
    Ok(ReducedModel {
        method: Method::Nowi,
        requested_order: cfg.order,
        system,
        z_r,
        projection: it.proj,
        interpolation: Some(it.data),
        diagnostics,
        history,
        flags,
        iterations,
        converged,
        hankel_singular_values: vec![],
    })
}

fn z_in_span(v: &Mat, qz: &Mat) -> bool {
    if qz.ncols() == 0 {
        return true;
    }
    let q = v.clone().qr().q();
    fro(&(qz - &q * (q.transpose() * qz))) <= 1e-8
}

/// The three interpolation gaps at one shift.
#[derive(Debug, Clone)]
pub struct GapTriple {
    pub right: CMat,
    pub left: CMat,
    pub bitangential: Complex64,
}

impl GapTriple {
    pub fn distance(&self, other: &GapTriple) -> f64 {
        (&self.right - &other.right)
            .norm()
            .max((&self.left - &other.left).norm())
            .max((self.bitangential - other.bitangential).norm())
    }

    pub fn magnitude(&self) -> f64 {
        self.right.norm().max(self.left.norm()).max(self.bitangential.norm())
    }
}

/// Gap expressions through `H_1(s) = C_r (sI - A_r)^{-1} W_r^T` and
/// `H_2(s) = C_w^T N (N^T C_w P_w C_w^T N)^{-1} N^T C_w (sI - A_w)^{-1} (P_w C_w^T + B_w D_w^T)`,
/// each carrying the factor `Z - V_r Z_r`.
pub fn interpolation_gap(
    g: &StateSpace,
    w: &WeightFilter,
    model: &ReducedModel,
    s: Complex64,
    b: &CMat,
    cv: &CMat,
) -> Result<GapTriple> {
    let f = fmap::build_f_realization(&g.strictly_proper_part(), w)?;
    let proj = &model.projection;
    let sys = &model.system;
    let e = &f.z - &proj.v_r * &model.z_r;
    let ec = to_complex(&(&e * w.c().transpose()));
    let ce = to_complex(&(g.c() * &e));
    let wt = to_complex(&proj.w_r.transpose());
    let crc = to_complex(sys.c());
    let x1 = linalg::shifted_solve(sys.a(), s, &wt)?;
    let x1d = linalg::shifted_solve(sys.a(), s, &x1)?;
    let h1 = &crc * &x1;
    let h1d = -(&crc * &x1d);

    let n_ker = w.kernel();
    let m = g.inputs();
    let (h2, h2d) = if n_ker.ncols() == 0 {
        (CMat::zeros(m, m), CMat::zeros(m, m))
    } else {
        let (minv, _) = kernel_gram_inverse(&f, &n_ker);
        let lead = to_complex(&(w.c().transpose() * &n_ker * minv * n_ker.transpose() * w.c()));
        let tail = to_complex(&(&f.p_w * w.c().transpose() + w.b() * w.d().transpose()));
        let y = linalg::shifted_solve(w.a(), s, &tail)?;
        let yd = linalg::shifted_solve(w.a(), s, &y)?;
        (&lead * y, -(&lead * yd))
    };
    let right = &h1 * &ec * b - &ce * &h2 * b;
    let ct = cv.transpose();
    let left = &ct * &h1 * &ec - &ct * &ce * &h2;
    let bt = (&ct * &h1d * &ec * b - &ct * &ce * &h2d * b)[(0, 0)];
    Ok(GapTriple {
        right,
        left,
        bitangential: bt,
    })
}

/// The same gaps from `𝔉[G]` and `𝔉[G_r]` evaluated directly.
pub fn direct_gap(
    g: &StateSpace,
    w: &WeightFilter,
    g_r: &StateSpace,
    s: Complex64,
    b: &CMat,
    cv: &CMat,
) -> Result<GapTriple> {
    let fg = fmap::build_f_realization(g, w)?;
    let fgr = fmap::build_f_realization(g_r, w)?;
    let diff = fmap::eval_f(&fg, s)? - fmap::eval_f(&fgr, s)?;
    let ddiff = fmap::eval_f_derivative(&fg, s)? - fmap::eval_f_derivative(&fgr, s)?;
    let ct = cv.transpose();
    Ok(GapTriple {
        right: &diff * b,
        left: &ct * &diff,
        bitangential: (&ct * ddiff * b)[(0, 0)],
    })
}

/// Input-weighted balanced truncation. The controllability Gramian is the
/// leading block of the Gramian of the cascade `G W`; the observability
/// Gramian is that of `G`. `D_r = D`.
pub fn fwbt(g: &StateSpace, w: &WeightFilter, order: usize) -> Result<ReducedModel> {
    let n = g.order();
    if order == 0 || order > n {
        return Err(MorError::Usage(format!("reduced order {order} must lie in 1..={n}")));
    }
    lti::require_stable(g, "system")?;
    let cas = fmap::cascade(&g.strictly_proper_part(), w)?;
    let pc = linalg::solve_lyapunov(cas.a(), &(cas.b() * cas.b().transpose()))?;
    let p = pc.view((0, 0), (n, n)).into_owned();
    let q = linalg::solve_lyapunov(&g.a().transpose(), &(g.c().transpose() * g.c()))?;
    let (t, ti, hsv, rank_short) = square_root_balance(&p, &q, order)?;
    let proj = ProjectionPair {
        v_r: t.clone(),
        w_r: ti.transpose(),
        provenance: (0..t.ncols()).map(|i| ColumnSource::Balanced { index: i }).collect(),
    };
    let red = proj.project(g)?;
    let system = red.with_feedthrough(g.d().clone())?;
    let z_r = linalg::solve_sylvester(
        system.a(),
        &w.a().transpose(),
        &(system.b() * (w.c() * w.gramian()? + w.d() * w.b().transpose())),
    )
    .unwrap_or_else(|_| Mat::zeros(system.order(), w.order()));
    let mut model = ReducedModel {
        method: Method::Fwbt,
        requested_order: order,
        diagnostics: None,
        system,
        z_r,
        projection: proj,
        interpolation: None,
        history: vec![],
        flags: vec![],
        iterations: 0,
        converged: true,
        hankel_singular_values: hsv,
    };
    if rank_short {
        model.flag(ModelFlag::RankDeficientGramian);
    }
    if lti::is_stable(&model.system) {
        model.diagnostics = optimality::full_report(g, &model.system, w)
            .or_else(|_| optimality::interpolatory_residuals(g, &model.system, w))
            .ok();
    } else {
        model.flag(ModelFlag::UnstableReducedModel);
    }
    Ok(model)
}

/// Square-root balancing from PSD factors of the two Gramians.
/// Returns `(T, T_i, hsv, rank_short)` with `T_i T = I`.
fn square_root_balance(p: &Mat, q: &Mat, order: usize) -> Result<(Mat, Mat, Vec<f64>, bool)> {
    let lp = linalg::psd_factor(p, 1e-14);
    let lq = linalg::psd_factor(q, 1e-14);
    let m = lq.transpose() * &lp;
    let svd = m.svd(true, true);
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let hsv: Vec<f64> = idx.iter().map(|&i| svd.singular_values[i]).collect();
    let smax = hsv.first().cloned().unwrap_or(0.0);
    let rank = hsv.iter().filter(|&&s| s > 1e-14 * smax && s > 0.0).count();
    let k = order.min(rank);
    if k == 0 {
        return Err(MorError::RankDeficient { condition: f64::INFINITY });
    }
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let n = p.nrows();
    let mut t = Mat::zeros(n, k);
    let mut ti = Mat::zeros(k, n);
    for (j, &i) in idx.iter().take(k).enumerate() {
        let s = svd.singular_values[i].sqrt();
        t.set_column(j, &(&lp * vt.row(i).transpose() / s).column(0));
        ti.set_row(j, &((lq.clone() * u.column(i)).transpose() / s).row(0));
    }
    Ok((t, ti, hsv, k < order))
}

/// Square-root balanced truncation with Cholesky factors of the ordinary
/// Gramians. Serves as a reference for `fwbt` with `W = I`.
pub fn balanced_truncation(g: &StateSpace, order: usize) -> Result<StateSpace> {
    let p = linalg::solve_lyapunov(g.a(), &(g.b() * g.b().transpose()))?;
    let q = linalg::solve_lyapunov(&g.a().transpose(), &(g.c().transpose() * g.c()))?;
    let lp = p
        .cholesky()
        .ok_or(MorError::RankDeficient { condition: f64::INFINITY })?
        .l();
    let lq = q
        .cholesky()
        .ok_or(MorError::RankDeficient { condition: f64::INFINITY })?
        .l();
    let svd = (lq.transpose() * &lp).svd(true, true);
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let n = g.order();
    let mut t = Mat::zeros(n, order);
    let mut ti = Mat::zeros(order, n);
    for (j, &i) in idx.iter().take(order).enumerate() {
        let s = svd.singular_values[i].sqrt();
        t.set_column(j, &(&lp * vt.row(i).transpose() / s).column(0));
        ti.set_row(j, &((&lq * u.column(i)).transpose() / s).row(0));
    }
    StateSpace::new(&ti * g.a() * &t, &ti * g.b(), g.c() * &t, g.d().clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(r: usize, cl: usize, v: &[f64]) -> Mat {
        Mat::from_row_slice(r, cl, v)
    }

    fn g1() -> StateSpace {
        StateSpace::strictly_proper(m(1, 1, &[-1.0]), m(1, 1, &[1.0]), m(1, 1, &[1.0])).unwrap()
    }

    fn w2() -> WeightFilter {
        WeightFilter::new(m(1, 1, &[-2.0]), m(1, 1, &[1.0]), m(1, 1, &[1.0]), m(1, 1, &[0.0])).unwrap()
    }

    fn one_shift(s: f64) -> InterpolationData {
        InterpolationData::new(vec![c(s, 0.0)], CMat::identity(1, 1), CMat::identity(1, 1)).unwrap()
    }

    #[test]
    fn running_example_subspace() {
        let f = fmap::build_f_realization(&g1(), &w2()).unwrap();
        let (v, _) = build_subspaces(&f, &one_shift(1.0)).unwrap();
        assert!((v[(0, 0)] - c(1.0 / 12.0, 0.0)).norm() < 1e-15);
        assert!((v[(1, 0)] - c(1.0 / 12.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn identity_weight_gives_rational_krylov() {
        let g = StateSpace::strictly_proper(
            m(2, 2, &[-1.0, 0.5, 0.0, -3.0]),
            m(2, 1, &[1.0, 1.0]),
            m(1, 2, &[1.0, 0.0]),
        )
        .unwrap();
        let f = fmap::build_f_realization(&g, &WeightFilter::identity(1)).unwrap();
        let (v, _) = build_subspaces(&f, &one_shift(2.0)).unwrap();
        let want = linalg::shifted_solve(g.a(), c(2.0, 0.0), &to_complex(g.b())).unwrap();
        assert!((v - want).norm() < 1e-15);
    }

    #[test]
    fn running_example_full_order_feedthrough() {
        let f = fmap::build_f_realization(&g1(), &w2()).unwrap();
        let (vraw, wraw) = build_subspaces(&f, &one_shift(1.0)).unwrap();
        let proj = extract_projection(&vraw, &wraw, 1, &one_shift(1.0)).unwrap();
        assert!((proj.v_r[(0, 0)] - 1.0).abs() < 1e-15);
        let red = proj.project(&g1()).unwrap();
        let (d_r, z_r, reg) = compute_feedthrough(&f, &proj, red.a(), red.b()).unwrap();
        assert!(!reg);
        assert!((z_r[(0, 0)] - 1.0 / 12.0).abs() < 1e-15);
        assert!(d_r[(0, 0)].abs() < 1e-15);
    }

    #[test]
    fn invertible_dw_gives_zero_feedthrough() {
        let w = WeightFilter::new(m(1, 1, &[-2.0]), m(1, 1, &[1.0]), m(1, 1, &[1.0]), m(1, 1, &[0.5])).unwrap();
        let g = StateSpace::strictly_proper(
            m(2, 2, &[-1.0, 0.5, 0.0, -3.0]),
            m(2, 1, &[1.0, 1.0]),
            m(1, 2, &[1.0, 0.0]),
        )
        .unwrap();
        let f = fmap::build_f_realization(&g, &w).unwrap();
        let d = one_shift(1.5);
        let (vraw, wraw) = build_subspaces(&f, &d).unwrap();
        let proj = extract_projection(&vraw, &wraw, 2, &d).unwrap();
        let red = proj.project(&g).unwrap();
        let (d_r, _, _) = compute_feedthrough(&f, &proj, red.a(), red.b()).unwrap();
        assert_eq!(d_r, Mat::zeros(1, 1));
    }

    #[test]
    fn shift_change_metric() {
        let a = [c(1.0, 0.0), c(2.0, 1.0), c(2.0, -1.0)];
        let b = [c(2.0, -1.0), c(1.1, 0.0), c(2.0, 1.0)];
        assert!((shift_change(&a, &b) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn nowi_full_order_reproduces_system() {
        let g = StateSpace::strictly_proper(
            m(2, 2, &[0.0, 1.0, -2.0, -3.0]),
            m(2, 1, &[0.0, 1.0]),
            m(1, 2, &[1.0, 0.0]),
        )
        .unwrap();
        let model = nowi(&g, &w2(), &NowiConfig::new(2), None).unwrap();
        for s in [c(0.0, 0.3), c(1.0, 2.0), c(0.0, 10.0)] {
            let d = (g.eval(s).unwrap() - model.system.eval(s).unwrap()).norm();
            assert!(d < 1e-12 * g.eval(s).unwrap().norm());
        }
        // the Gramian-based norm bottoms out near sqrt(eps)
        let err = fmap::weighted_error_norm(&g, &model.system, &w2()).unwrap();
        assert!(err <= 1e-6 * fmap::weighted_norm(&g, &w2()).unwrap());
    }

    #[test]
    fn nowi_rejects_bad_order() {
        let err = nowi(&g1(), &w2(), &NowiConfig::new(2), None).unwrap_err();
        assert!(matches!(err, MorError::Usage(_)));
    }

    #[test]
    fn fwbt_full_order_is_exact() {
        let g = StateSpace::strictly_proper(
            m(2, 2, &[0.0, 1.0, -2.0, -3.0]),
            m(2, 1, &[0.0, 1.0]),
            m(1, 2, &[1.0, 0.0]),
        )
        .unwrap();
        let model = fwbt(&g, &w2(), 2).unwrap();
        assert!(fmap::weighted_error_norm(&g, &model.system, &w2()).unwrap() < 1e-12);
        assert_eq!(model.hankel_singular_values.len(), 2);
    }
}
