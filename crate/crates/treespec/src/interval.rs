//! Potential recovery on the unknown subtree.
//!
//! The reconstruction walks the unknown side edge by edge:
//!
//! * at a vertex with one unknown edge whose subtree is a path, the pair
//!   (Δ^K, Δ^Π) is an interval problem's pair of characteristic functions:
//!   their zeros are two spectra differing in the condition at the near end,
//!   and σ on the interval comes from a damped least-squares fit of a
//!   truncated cosine expansion against those eigenvalues;
//! * at a vertex whose single unknown edge leads into deeper branching, the
//!   edge potential comes from the band-limit criterion: after moving the
//!   edge across (an exact 2×2 elimination, determinant one), the advanced
//!   pair must have Paley-Wiener remainders supported on the shorter
//!   interval, and out-of-band energy is the misfit;
//! * at a branching vertex, changed-BC problems are paired with the base one:
//!   1/(M_k − M) is entire and equals the product of the branch's two
//!   Dirichlet-type functions, its zeros split into the two interlacing
//!   spectra, and each flipped path branch reduces to an interval fit.
//!
//! Every stage re-runs the moment solve anchored on the exact eigenvalue
//! data, with the recovered edges moved to the known side.

use crate::cauchy::{integrate_edge_fixed, EdgeTransfer};
use crate::charfn::{
    charfn_kirchhoff_at, charfn_pi_at, charfn_zero_poly, zero_poly_kirchhoff_at,
    zero_poly_pi_at, CharFn, IntegratorMode,
};
use crate::error::{Error, Result};
use crate::moment::{
    build_basis, solve_moment_system, assemble_unknown, KnownPair,
};
use crate::optim::{fit_least_squares, FitOptions, FitResult};
use crate::potential::{EdgePotential, PotentialSet};
use crate::spectrum::{
    alpha_profile, find_roots_scan, number_spectrum, AssumptionReport, NumberedSpectrum, SubEntry,
    Subspectrum,
};
use crate::tree::{flip_bc, make_split, Bc, EdgeId, TreeSpec, VertexId};
use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::sync::Arc;

// ---------------------------------------------------------------------------
// options
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct PipelineOptions {
    /// Branch truncation: entries with |n| ≤ n_max per selected branch.
    pub n_max: i64,
    /// Output grid for the recovered pair and report quadratures.
    pub n_t: usize,
    /// Relative spectral cutoff of the Gram solve.
    pub cutoff: f64,
    /// ρ-scan resolution for root finding.
    pub rho_step: f64,
    pub refine_tol: f64,
    /// Adaptive tolerance for forward characteristic functions.
    pub integrator_tol: f64,
    /// Magnus steps per unit length inside fits.
    pub fixed_steps: usize,
    /// Cosine coefficients of the σ parametrization per fitted interval.
    pub n_sigma_coeffs: usize,
    /// Eigenvalues consumed per spectrum in interval fits.
    pub n_eigs_fit: usize,
    pub fit: FitOptions,
    /// Grid nodes per unit edge for recovered potentials.
    pub sigma_grid: usize,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            n_max: 40,
            n_t: 1024,
            cutoff: 1e-10,
            rho_step: 0.01,
            refine_tol: 1e-12,
            integrator_tol: 1e-10,
            fixed_steps: 160,
            n_sigma_coeffs: 16,
            n_eigs_fit: 25,
            fit: FitOptions {
                max_iters: 80,
                rms_target: 2e-9,
                step_tol: 1e-10,
                fd_step: 1e-6,
                mu_init: 1e-3,
            },
            sigma_grid: 129,
        }
    }
}

impl PipelineOptions {
    pub fn lambda_max(&self) -> f64 {
        let r = self.n_max as f64 + 1.2;
        r * r
    }
}

// ---------------------------------------------------------------------------
// Weyl function and two-spectra data
// ---------------------------------------------------------------------------

/// M(λ) = Δ^K(λ)/Δ^Π(λ) at the split vertex, with its pole set.
pub struct WeylFunction {
    pub num: CharFn,
    pub den: CharFn,
    /// Zeros of the denominator on the constructed range.
    pub poles: Vec<f64>,
}

impl WeylFunction {
    /// Value away from poles; None within 1e−6 (in ρ) of a pole.
    pub fn eval(&self, lambda: f64) -> Option<f64> {
        let rho = lambda.abs().sqrt();
        if self
            .poles
            .iter()
            .any(|p| (p.sqrt() - rho).abs() < 1e-6)
        {
            return None;
        }
        Some(self.num.eval(lambda) / self.den.eval(lambda))
    }
}

/// Builds the Weyl function from an assembled pair, rejecting pairs with a
/// common zero (an A4-type violation).
pub fn weyl(num: &CharFn, den: &CharFn, lambda_max: f64) -> Result<WeylFunction> {
    if let Some((l, d)) = crate::spectrum::common_zeros(num, den, lambda_max) {
        return Err(Error::Assumption {
            which: "A4",
            detail: format!("numerator and denominator share a zero near λ = {l:.8} ({d:.1e})"),
        });
    }
    let poles = find_roots_scan(den, lambda_max, 1e-10, 0.01)?
        .into_iter()
        .map(|(l, _)| l)
        .collect();
    Ok(WeylFunction { num: num.clone(), den: den.clone(), poles })
}

/// End conditions of an interval eigenvalue problem: the far (outer) end and
/// the near (peeling-vertex) end.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IntervalBc {
    pub far: Bc,
    pub near: Bc,
}

/// Two interval spectra differing in exactly one end condition.
#[derive(Debug, Clone)]
pub struct TwoSpectra {
    pub spec_a: Vec<f64>,
    pub spec_b: Vec<f64>,
    pub config_a: IntervalBc,
    pub config_b: IntervalBc,
}

impl TwoSpectra {
    /// Strict interlacing of the sorted union.
    pub fn interlaced(&self) -> bool {
        let mut tagged: Vec<(f64, u8)> = self
            .spec_a
            .iter()
            .map(|l| (*l, 0u8))
            .chain(self.spec_b.iter().map(|l| (*l, 1u8)))
            .collect();
        tagged.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        tagged.windows(2).all(|w| w[0].1 != w[1].1)
    }
}

// ---------------------------------------------------------------------------
// chain (interval) forward model
// ---------------------------------------------------------------------------

/// Geometry of a chain of unit edges flattened to the interval [0, n·π]:
/// x = 0 at the far boundary vertex, x = n·π at the peeling vertex.
#[derive(Debug, Clone)]
pub struct ChainGeometry {
    pub n_edges: usize,
    /// Kirchhoff jump Γ_v of y^[1] at each interior junction (ascending x).
    pub junction_gammas: Vec<f64>,
    /// γ contribution at the near end (edges whose head is the peel vertex).
    pub near_gamma: f64,
    /// Registered σ-jump positions in interval coordinates.
    pub jump_positions: Vec<f64>,
}

impl ChainGeometry {
    pub fn plain(n_edges: usize) -> ChainGeometry {
        ChainGeometry {
            n_edges,
            junction_gammas: vec![0.0; n_edges.saturating_sub(1)],
            near_gamma: 0.0,
            jump_positions: vec![],
        }
    }

    pub fn len(&self) -> f64 {
        self.n_edges as f64 * PI
    }
}

/// Characteristic values (near-end y, near-end vertex quasi-derivative) of
/// the chain for the far initial condition selected by `far`.
fn chain_end_values(
    segments: &[EdgePotential],
    geo: &ChainGeometry,
    far: Bc,
    lambda: f64,
    steps: usize,
) -> (f64, f64) {
    let (mut y, mut u) = match far {
        Bc::Dirichlet => (0.0, 1.0),
        Bc::Neumann => (1.0, 0.0),
    };
    for (i, seg) in segments.iter().enumerate() {
        let t: EdgeTransfer = integrate_edge_fixed(seg, lambda, steps);
        let (ny, nu) = (t.c * y + t.s * u, t.cq * y + t.sq * u);
        y = ny;
        u = nu;
        if i + 1 < segments.len() {
            u += geo.junction_gammas[i] * y;
        }
    }
    (y, u + geo.near_gamma * y)
}

fn chain_char(
    segments: &[EdgePotential],
    geo: &ChainGeometry,
    bc: IntervalBc,
    lambda: f64,
    steps: usize,
) -> f64 {
    let (y, uq) = chain_end_values(segments, geo, bc.far, lambda, steps);
    match bc.near {
        Bc::Dirichlet => y,
        Bc::Neumann => uq,
    }
}

/// Splits an interval potential into per-unit-edge segments.
fn segment_interval(sigma: &EdgePotential, n_edges: usize, grid: usize) -> Vec<EdgePotential> {
    (0..n_edges)
        .map(|k| sigma.restrict(k as f64 * PI, (k + 1) as f64 * PI, grid))
        .collect()
}

fn cos_series_interval(
    coeffs: &[f64],
    jump_amps: &[f64],
    geo: &ChainGeometry,
    grid_per_edge: usize,
) -> EdgePotential {
    let len = geo.len();
    let mut p = EdgePotential::from_cos_coeffs(
        grid_per_edge * geo.n_edges - (geo.n_edges - 1),
        len,
        coeffs,
    );
    p.jumps = geo
        .jump_positions
        .iter()
        .zip(jump_amps.iter())
        .map(|(x, a)| (*x, *a))
        .collect();
    p
}

/// Recovers σ on the interval so that the chain's two spectra match the
/// targets: damped least squares over a truncated cosine expansion (plus
/// amplitudes for registered jump locations), started from σ = 0, tracking
/// each model eigenvalue inside a window around its target.
pub fn recover_sigma_interval(
    ts: &TwoSpectra,
    geo: &ChainGeometry,
    opts: &PipelineOptions,
    warm_start: Option<&EdgePotential>,
) -> Result<(EdgePotential, FitResult)> {
    if !ts.interlaced() {
        return Err(Error::Precondition(
            "two-spectra input does not interlace".into(),
        ));
    }
    let n_use = opts.n_eigs_fit;
    let targets_a: Vec<f64> = ts.spec_a.iter().take(n_use).map(|l| l.sqrt()).collect();
    let targets_b: Vec<f64> = ts.spec_b.iter().take(n_use).map(|l| l.sqrt()).collect();
    if targets_a.len() < 4 || targets_b.len() < 4 {
        return Err(Error::Precondition(format!(
            "too few eigenvalues for the interval fit: {} + {}",
            targets_a.len(),
            targets_b.len()
        )));
    }
    // search window: a fraction of the local spacing within each spectrum
    let window = |list: &[f64], i: usize| -> f64 {
        let mut d = f64::MAX;
        if i > 0 {
            d = d.min(list[i] - list[i - 1]);
        }
        if i + 1 < list.len() {
            d = d.min(list[i + 1] - list[i]);
        }
        if d == f64::MAX {
            d = 0.8;
        }
        0.45 * d
    };

    let grid = opts.sigma_grid;
    let steps = opts.fixed_steps;
    let n_jumps = geo.jump_positions.len();
    let residual = |params: &[f64]| -> Vec<f64> {
        let sigma = cos_series_interval(
            &params[..params.len() - n_jumps],
            &params[params.len() - n_jumps..],
            geo,
            grid,
        );
        let segments = segment_interval(&sigma, geo.n_edges, grid);
        let mut out = Vec::with_capacity(targets_a.len() + targets_b.len());
        for (cfg, targets) in [(ts.config_a, &targets_a), (ts.config_b, &targets_b)] {
            let rs: Vec<f64> = crate::par::map_range(targets.len(), |i| {
                let t = targets[i];
                let w = window(targets, i);
                match track_root(
                    |lam| chain_char(&segments, geo, cfg, lam, steps),
                    t,
                    w,
                ) {
                    Some(rho) => rho - t,
                    None => w,
                }
            });
            out.extend(rs);
        }
        out
    };

    let mut x0 = vec![0.0; opts.n_sigma_coeffs + n_jumps];
    if let Some(warm) = warm_start {
        // project the warm start onto the cosine basis
        let len = geo.len();
        let n = 8 * opts.n_sigma_coeffs;
        let h = len / (n - 1) as f64;
        for (k, x) in x0.iter_mut().take(opts.n_sigma_coeffs).enumerate() {
            let vals: Vec<f64> = (0..n)
                .map(|i| warm.value(i as f64 * h) * (k as f64 * PI * (i as f64 * h) / len).cos())
                .collect();
            let scale = if k == 0 { 1.0 } else { 2.0 };
            *x = scale / len * crate::util::integrate_corrected(&vals, h);
        }
    }
    let fit = fit_least_squares(residual, &x0, &opts.fit)?;
    let sigma = cos_series_interval(
        &fit.params[..fit.params.len() - n_jumps],
        &fit.params[fit.params.len() - n_jumps..],
        geo,
        grid,
    );
    Ok((sigma, fit))
}

/// Finds the root of `f` in ρ nearest `target` within ±`window`; coarse scan
/// plus bisection.
fn track_root(f: impl Fn(f64) -> f64, target: f64, window: f64) -> Option<f64> {
    let lo = (target - window).max(1e-4);
    let hi = target + window;
    let n = 14;
    let mut prev_r = lo;
    let mut prev_v = f(lo * lo);
    let mut best: Option<f64> = None;
    for i in 1..=n {
        let r = lo + (hi - lo) * i as f64 / n as f64;
        let v = f(r * r);
        if prev_v != 0.0 && v != 0.0 && (prev_v > 0.0) != (v > 0.0) {
            // bisect
            let (mut a, mut b, mut fa) = (prev_r, r, prev_v);
            for _ in 0..60 {
                let m = 0.5 * (a + b);
                let fm = f(m * m);
                if fm == 0.0 {
                    a = m;
                    b = m;
                    break;
                }
                if (fm > 0.0) == (fa > 0.0) {
                    a = m;
                    fa = fm;
                } else {
                    b = m;
                }
            }
            let root = 0.5 * (a + b);
            best = match best {
                Some(r0) if (r0 - target).abs() <= (root - target).abs() => Some(r0),
                _ => Some(root),
            };
        }
        prev_r = r;
        prev_v = v;
    }
    best
}

// ---------------------------------------------------------------------------
// band-limit peel (first edge toward deeper branching)
// ---------------------------------------------------------------------------

/// Recovers σ on the single unknown edge at w when the subtree continues
/// beyond it: for the true potential, the advanced pair
///   Δ^K' = −(C^[1]+γC)Δ^Π + (S^[1]+γS)Δ^K,  Δ^Π' = CΔ^Π − SΔ^K  (w at x=0)
/// has remainders ρ^{r'−1}Δ^K' − R'^K and ρ^{r'}Δ^Π' − R'^Π inside the
/// sine/cosine band of the shorter length; the misfit is the energy outside
/// that band.
#[allow(clippy::too_many_arguments)]
pub fn recover_first_edge_bandlimit(
    k_w: &CharFn,
    pi_w: &CharFn,
    w_is_tail: bool,
    gamma: f64,
    r_next: usize,
    k0_next: &crate::trigpoly::TrigPolyForm,
    pi0_next: &crate::trigpoly::TrigPolyForm,
    len_next: f64,
    opts: &PipelineOptions,
) -> Result<(EdgePotential, FitResult)> {
    // ρ grid: stay inside the range the assembled pair resolves
    let rho_max = (opts.n_max as f64 - 2.0).max(8.0);
    let n_rho = ((rho_max - 0.25) / 0.05).ceil() as usize;
    let rhos: Vec<f64> = (0..n_rho)
        .map(|i| 0.25 + (rho_max - 0.25) * i as f64 / (n_rho - 1) as f64)
        .collect();
    let lambdas: Vec<f64> = rhos.iter().map(|r| r * r).collect();
    let k_vals = k_w.eval_many(&lambdas);
    let pi_vals = pi_w.eval_many(&lambdas);

    // orthonormal bases of the in-band subspaces sampled on the ρ grid
    let n_b = (2.2 * rho_max * len_next / PI).ceil() as usize;
    let tgrid: Vec<f64> = (1..=n_b).map(|j| len_next * j as f64 / n_b as f64).collect();
    let sin_proj = band_projector(&rhos, &tgrid, true);
    let cos_proj = band_projector(&rhos, &tgrid, false);

    let ri = r_next as i32;
    let grid = opts.sigma_grid;
    let steps = opts.fixed_steps;
    let (k0n, pi0n) = (k0_next.clone(), pi0_next.clone());
    let residual = |params: &[f64]| -> Vec<f64> {
        let sigma = EdgePotential::from_cos_coeffs(grid, PI, params);
        let rem: Vec<(f64, f64)> = crate::par::map_range(rhos.len(), |i| {
            let lam = lambdas[i];
            let t = integrate_edge_fixed(&sigma, lam, steps).with_gamma(gamma);
            let (k_next, pi_next) = if w_is_tail {
                (
                    -t.cq * pi_vals[i] + t.sq * k_vals[i],
                    t.c * pi_vals[i] - t.s * k_vals[i],
                )
            } else {
                (
                    -t.cq * pi_vals[i] + t.c * k_vals[i],
                    t.sq * pi_vals[i] - t.s * k_vals[i],
                )
            };
            let rho = rhos[i];
            (
                rho.powi(ri) * pi_next - pi0n.eval_r(rho),
                rho.powi(ri - 1) * k_next - k0n.eval_r(rho),
            )
        });
        let v: Vec<f64> = rem.iter().map(|r| r.0).collect();
        let u: Vec<f64> = rem.iter().map(|r| r.1).collect();
        let mut out = project_out(&sin_proj, &v);
        out.extend(project_out(&cos_proj, &u));
        out
    };

    let x0 = vec![0.0; opts.n_sigma_coeffs];
    let mut fit_opts = opts.fit.clone();
    fit_opts.rms_target = 1e-7;
    let fit = fit_least_squares(residual, &x0, &fit_opts)?;
    Ok((EdgePotential::from_cos_coeffs(grid, PI, &fit.params), fit))
}

/// Orthonormal basis (thin Q) of span{trig(ρ t_j)} sampled on the ρ grid.
fn band_projector(rhos: &[f64], tgrid: &[f64], sine: bool) -> nalgebra::DMatrix<f64> {
    let mut b = nalgebra::DMatrix::<f64>::zeros(rhos.len(), tgrid.len());
    for (i, rho) in rhos.iter().enumerate() {
        for (j, t) in tgrid.iter().enumerate() {
            b[(i, j)] = if sine { (rho * t).sin() } else { (rho * t).cos() };
        }
    }
    let qr = b.qr();
    qr.q()
}

/// Residual of v after removing its projection onto the columns of q.
fn project_out(q: &nalgebra::DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    let x = nalgebra::DVector::from_column_slice(v);
    let coeffs = q.transpose() * &x;
    let res = &x - q * coeffs;
    res.as_slice().to_vec()
}

// ---------------------------------------------------------------------------
// problem data and the forward driver
// ---------------------------------------------------------------------------

/// Definition of one boundary value problem: the base conditions, optionally
/// with one boundary vertex flipped.
#[derive(Debug, Clone)]
pub struct ProblemDef {
    pub name: String,
    pub flip: Option<VertexId>,
}

/// One ℤ-indexed eigenvalue branch of a problem.
#[derive(Debug, Clone)]
pub struct BranchData {
    pub alpha: f64,
    /// (n, λ), |n| ≤ n_max.
    pub entries: Vec<(i64, f64)>,
}

/// Everything the reconstruction consumes for one problem.
#[derive(Debug, Clone)]
pub struct ProblemData {
    pub def: ProblemDef,
    pub branches: Vec<BranchData>,
}

/// Forward-computes the numbered spectra and branch data for a list of
/// problems (validation/roundtrip path).
pub fn forward_problem_data(
    tree: &TreeSpec,
    pots: &PotentialSet,
    defs: &[ProblemDef],
    opts: &PipelineOptions,
) -> Result<(Vec<ProblemData>, Vec<NumberedSpectrum>)> {
    let mut data = Vec::new();
    let mut specs = Vec::new();
    for def in defs {
        let t = match def.flip {
            Some(v) => flip_bc(tree, v)?,
            None => tree.clone(),
        };
        let cf = crate::charfn::charfn_tree(&t, pots)?;
        let roots = find_roots_scan(&cf, opts.lambda_max(), opts.refine_tol, opts.rho_step)?;
        let ap = alpha_profile(&charfn_zero_poly(&t)?)?;
        let ns = number_spectrum(&roots, &ap, &def.name);
        if !ns.reliable {
            return Err(Error::NumberingUnreliable(format!(
                "problem {}: {}",
                def.name, ns.note
            )));
        }
        let mut branches = Vec::new();
        for (ki, alpha) in ap.k_set.iter().enumerate() {
            let entries: Vec<(i64, f64)> = ns
                .entries
                .iter()
                .filter(|e| e.k == ki + 1 && e.n.abs() <= opts.n_max)
                .map(|e| (e.n, e.lambda))
                .collect();
            branches.push(BranchData { alpha: *alpha, entries });
        }
        data.push(ProblemData { def: def.clone(), branches });
        specs.push(ns);
    }
    Ok((data, specs))
}

// ---------------------------------------------------------------------------
// the orchestrator
// ---------------------------------------------------------------------------

/// Per-stage diagnostics of the reconstruction.
#[derive(Debug, Clone)]
pub struct StageReport {
    pub stage: usize,
    pub description: String,
    pub gram_condition: Option<f64>,
    pub solve_residual: Option<f64>,
    pub fit_rms: Option<f64>,
    pub assumptions: Option<AssumptionReport>,
}

#[derive(Debug)]
pub struct InverseSolution {
    pub recovered: PotentialSet,
    pub stages: Vec<StageReport>,
}

struct Stage<'a> {
    tree: &'a TreeSpec,
    problems: &'a [ProblemData],
    opts: &'a PipelineOptions,
    known_edges: BTreeSet<EdgeId>,
    pots: PotentialSet,
    w: VertexId,
    stages: Vec<StageReport>,
    warm: Option<EdgePotential>,
}

/// Recovers the potentials on the unknown subtree from the known side and the
/// supplied subspectra. `problems[0]` is the base problem; flipped problems
/// supply auxiliary data where the subtree branches.
pub fn solve_partial_inverse(
    tree: &TreeSpec,
    split_w: VertexId,
    known_edges: &[EdgeId],
    known_pots: &PotentialSet,
    problems: &[ProblemData],
    opts: &PipelineOptions,
) -> Result<InverseSolution> {
    if problems.is_empty() {
        return Err(Error::Precondition("no problem data supplied".into()));
    }
    let mut st = Stage {
        tree,
        problems,
        opts,
        known_edges: known_edges.iter().copied().collect(),
        pots: known_pots.clone(),
        w: split_w,
        stages: Vec::new(),
        warm: None,
    };
    let mut stage_no = 0usize;
    loop {
        stage_no += 1;
        if stage_no > 2 * tree.edge_count() + 4 {
            return Err(Error::Internal("reconstruction failed to terminate".into()));
        }
        let unknown: Vec<EdgeId> = tree
            .edges
            .iter()
            .map(|e| e.id)
            .filter(|e| !st.known_edges.contains(e))
            .collect();
        if unknown.is_empty() {
            break;
        }
        step_stage(&mut st, stage_no)?;
    }
    let recovered = PotentialSet {
        by_edge: st
            .pots
            .by_edge
            .iter()
            .filter(|(id, _)| !known_pots.by_edge.contains_key(id))
            .map(|(id, p)| (*id, p.clone()))
            .collect(),
    };
    Ok(InverseSolution { recovered, stages: st.stages })
}

/// Vertices of the current unknown side (w excluded).
fn unknown_vertices(tree: &TreeSpec, known: &BTreeSet<EdgeId>, w: VertexId) -> BTreeSet<VertexId> {
    let mut vs = BTreeSet::new();
    for e in &tree.edges {
        if !known.contains(&e.id) {
            vs.insert(e.tail);
            vs.insert(e.head);
        }
    }
    vs.remove(&w);
    vs
}

/// Runs one moment solve for the given problem group and returns the
/// assembled pair at the current w.
fn run_moment_stage(
    st: &Stage<'_>,
    group: &[&ProblemData],
    split: &crate::tree::SubtreeSplit,
    unknown_tree: &TreeSpec,
    report: &mut StageReport,
) -> Result<(CharFn, CharFn, usize)> {
    let opts = st.opts;
    // the unknown side's conditions under this group's problem (any flip
    // inside the unknown side applies to every problem of the group)
    let mut ut = unknown_tree.clone();
    let mut r = split.r;
    for p in group {
        if let Some(v) = p.def.flip {
            if ut.bc.contains_key(&v) {
                ut = flip_bc(&ut, v)?;
                r = ut
                    .boundary_vertices()
                    .iter()
                    .filter(|b| **b != st.w && ut.bc.get(b) == Some(&Bc::Dirichlet))
                    .count();
                break;
            }
        }
    }
    let k0 = zero_poly_kirchhoff_at(&ut, st.w)?;
    let pi0 = zero_poly_pi_at(&ut, st.w)?;

    // pool branches in problem order, l of them
    let l = split.l;
    let mut entries: Vec<SubEntry> = Vec::new();
    let mut sel = 0usize;
    'outer: for p in group {
        for b in &p.branches {
            sel += 1;
            if sel > l {
                break 'outer;
            }
            for (n, lambda) in &b.entries {
                if n.abs() <= opts.n_max {
                    // drop the first r−1 positive entries of branch 1
                    if sel == 1 && *n >= 1 && *n <= r as i64 - 1 {
                        continue;
                    }
                    entries.push(SubEntry {
                        problem: p.def.name.clone(),
                        k: sel,
                        n: *n,
                        lambda: *lambda,
                        rho: lambda.sqrt(),
                        alpha: b.alpha,
                    });
                }
            }
        }
    }
    if sel < l {
        return Err(Error::InsufficientSubspectrum(format!(
            "stage needs {l} branches, group supplies {sel}; supply auxiliary changed-BC problems"
        )));
    }
    let mut lambdas: Vec<f64> = entries.iter().map(|e| e.lambda).collect();
    lambdas.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut a1_ok = lambdas.first().map(|l| *l > 0.0).unwrap_or(false);
    let mut a1_detail = String::from("distinct and positive");
    for w2 in lambdas.windows(2) {
        if (w2[1] - w2[0]).abs() < 1e-9 * (1.0 + w2[1].abs()) {
            a1_ok = false;
            a1_detail = format!("coincident eigenvalues near {:.9}", w2[0]);
        }
    }
    let sub = Subspectrum {
        entries,
        dropped: vec![],
        l,
        r,
        n_max: opts.n_max,
        a1_ok,
        a1_detail,
    };

    // known-side pairs per problem (flips on the known side change them)
    let _branch_mode = ();
    let mut known_map = BTreeMap::new();
    for p in group {
        let mut kt = split.known.clone();
        if let Some(v) = p.def.flip {
            if kt.bc.contains_key(&v) {
                kt = flip_bc(&kt, v)?;
            }
        }
        known_map.insert(
            p.def.name.clone(),
            KnownPair {
                k: charfn_kirchhoff_at(&kt, st.w, &st.pots, mode)?,
                pi: charfn_pi_at(&kt, st.w, &st.pots, mode)?,
            },
        );
    }

    let n_t = opts.n_t.max(4 * (sub.entries.len() + r + 1));
    let bs = build_basis(&sub, &known_map, &k0, &pi0, n_t)?;
    let (tp, diag) = solve_moment_system(&bs, opts.cutoff)?;
    report.gram_condition = Some(diag.condition);
    report.solve_residual = Some(diag.residual);
    // A1/A2-level checks on the built rows
    if let Some(first) = group.first() {
        let kp = &known_map[&first.def.name];
        let rep = crate::spectrum::check_assumptions(
            &sub,
            &first.def.name,
            &kp.k,
            &kp.pi,
            None,
            None,
            opts.lambda_max(),
        );
        if let Some((which, res)) = rep.hard_failure() {
            return Err(Error::Assumption { which, detail: res.detail.clone() });
        }
        report.assumptions = Some(rep);
    }
    let (uk, upi) = assemble_unknown(&tp, &bs, &k0, &pi0);
    Ok((uk, upi, r))
}

/// Walks from w through the unknown side; returns the ordered path edges
/// until the first branching vertex or leaf, plus whether the walk ended at a
/// leaf (true path) and the final vertex.
fn path_from(
    tree: &TreeSpec,
    known: &BTreeSet<EdgeId>,
    w: VertexId,
) -> (Vec<EdgeId>, bool, VertexId) {
    let mut edges = Vec::new();
    let mut at = w;
    let mut prev: Option<EdgeId> = None;
    loop {
        let nexts: Vec<_> = tree
            .edges_at(at)
            .into_iter()
            .filter(|e| !known.contains(&e.id) && Some(e.id) != prev)
            .collect();
        if nexts.is_empty() {
            return (edges, true, at);
        }
        if nexts.len() > 1 {
            return (edges, false, at);
        }
        let e = nexts[0];
        edges.push(e.id);
        at = if e.tail == at { e.head } else { e.tail };
        prev = Some(e.id);
    }
}

/// Builds the interval geometry for the maximal unknown path from w and the
/// mapping that commits an interval potential back onto tree edges.
fn chain_geometry(
    tree: &TreeSpec,
    path_edges: &[EdgeId],
    w: VertexId,
) -> (ChainGeometry, Bc, Vec<(EdgeId, bool)>) {
    // ordered from w outward; the interval coordinate runs from the far end
    let mut order: Vec<(EdgeId, bool)> = Vec::new(); // (edge, aligned with interval direction)
    let mut at = w;
    for id in path_edges {
        let e = tree.edge(*id).unwrap();
        let toward_far_is_head = e.tail == at;
        at = if toward_far_is_head { e.head } else { e.tail };
        // interval direction is far → w, so the edge is aligned when its
        // tail sits on the far side
        order.push((*id, !toward_far_is_head));
    }
    let far_vertex = at;
    let far_bc = *tree.bc.get(&far_vertex).unwrap_or(&Bc::Dirichlet);
    order.reverse(); // far-most edge first

    let n = order.len();
    let mut junction_gammas = vec![0.0; n.saturating_sub(1)];
    // junction j sits between interval edges j and j+1; Γ sums γ over edges
    // with head at that vertex
    for j in 0..n.saturating_sub(1) {
        let (e1, _) = order[j];
        let (e2, _) = order[j + 1];
        let edge1 = tree.edge(e1).unwrap();
        let edge2 = tree.edge(e2).unwrap();
        let junction = if edge1.tail == edge2.tail
            || edge1.tail == edge2.head
        {
            edge1.tail
        } else {
            edge1.head
        };
        let mut g = 0.0;
        if edge1.head == junction {
            g += tree.gamma_of(e1);
        }
        if edge2.head == junction {
            g += tree.gamma_of(e2);
        }
        junction_gammas[j] = g;
    }
    let (last, _) = order[n - 1];
    let near_gamma = if tree.edge(last).unwrap().head == w {
        tree.gamma_of(last)
    } else {
        0.0
    };
    (
        ChainGeometry {
            n_edges: n,
            junction_gammas,
            near_gamma,
            jump_positions: vec![],
        },
        far_bc,
        order,
    )
}

/// Commits the interval potential onto its tree edges.
fn commit_interval(
    sigma: &EdgePotential,
    order: &[(EdgeId, bool)],
    grid: usize,
    pots: &mut PotentialSet,
    only: Option<EdgeId>,
) {
    for (i, (id, aligned)) in order.iter().enumerate() {
        if let Some(o) = only {
            if o != *id {
                continue;
            }
        }
        let seg = sigma.restrict(i as f64 * PI, (i + 1) as f64 * PI, grid);
        let p = if *aligned { seg } else { seg.reversed() };
        pots.insert(*id, p);
    }
}

fn step_stage(st: &mut Stage<'_>, stage_no: usize) -> Result<()> {
    let tree = st.tree;
    let opts = st.opts;
    let known_vec: Vec<EdgeId> = st.known_edges.iter().copied().collect();
    let split = make_split(tree, st.w, &known_vec)?;
    let unknown_tree = split
        .unknown
        .clone()
        .ok_or_else(|| Error::Internal("stage with empty unknown side".into()))?;
    let u_vertices = unknown_vertices(tree, &st.known_edges, st.w);

    // problems whose flip (if any) is outside the current unknown side form
    // the base group
    let base_group: Vec<&ProblemData> = st
        .problems
        .iter()
        .filter(|p| p.def.flip.map_or(true, |v| !u_vertices.contains(&v)))
        .collect();
    if base_group.is_empty() {
        return Err(Error::InsufficientSubspectrum(
            "no problem matches the base boundary conditions on the unknown side".into(),
        ));
    }

    let mut report = StageReport {
        stage: stage_no,
        description: String::new(),
        gram_condition: None,
        solve_residual: None,
        fit_rms: None,
        assumptions: None,
    };

    let (uk, upi, r_cur) = run_moment_stage(st, &base_group, &split, &unknown_tree, &mut report)?;

    if split.p == 1 {
        let (path_edges, is_path, _end) = path_from(tree, &st.known_edges, st.w);
        if is_path {
            // whole remaining subtree is an interval: two-spectra fit
            let (geo, far_bc, order) = chain_geometry(tree, &path_edges, st.w);
            let lam_max = {
                // enough zeros of both functions for the fit
                let need = opts.n_eigs_fit as f64 + 2.0;
                let per_unit = geo.n_edges as f64;
                ((need / per_unit + 2.0).powi(2)).min(opts.lambda_max())
            };
            let spec_a: Vec<f64> = find_roots_scan(&uk, lam_max, 1e-11, opts.rho_step)?
                .into_iter()
                .map(|(l, _)| l)
                .collect();
            let spec_b: Vec<f64> = find_roots_scan(&upi, lam_max, 1e-11, opts.rho_step)?
                .into_iter()
                .map(|(l, _)| l)
                .collect();
            let ts = TwoSpectra {
                spec_a,
                spec_b,
                config_a: IntervalBc { far: far_bc, near: Bc::Neumann },
                config_b: IntervalBc { far: far_bc, near: Bc::Dirichlet },
            };
            let (sigma, fit) = recover_sigma_interval(&ts, &geo, opts, st.warm.as_ref())?;
            report.fit_rms = Some(fit.rms);
            report.description = format!(
                "interval fit over {} edges at w = {}; peeled {}",
                geo.n_edges,
                st.w,
                path_edges[0]
            );
            if !fit.converged && fit.rms > 1e-3 {
                return Err(Error::Optim {
                    stage: format!("interval fit at stage {stage_no}"),
                    misfit: fit.rms,
                });
            }
            // commit the w-side edge only; the next stage re-anchors
            let next_w = {
                let e = tree.edge(path_edges[0]).unwrap();
                if e.tail == st.w {
                    e.head
                } else {
                    e.tail
                }
            };
            commit_interval(&sigma, &order, opts.sigma_grid, &mut st.pots, Some(path_edges[0]));
            // warm start for the shorter interval next stage
            st.warm = if geo.n_edges > 1 {
                Some(sigma.restrict(0.0, (geo.n_edges - 1) as f64 * PI, opts.sigma_grid * 2))
            } else {
                None
            };
            st.known_edges.insert(path_edges[0]);
            st.w = next_w;
            st.stages.push(report);
            return Ok(());
        }
        // path into branching: band-limit peel of the w edge
        let e_id = path_edges[0];
        let edge = *tree.edge(e_id).unwrap();
        let w_is_tail = edge.tail == st.w;
        let next_v = if w_is_tail { edge.head } else { edge.tail };
        // the next subtree's structure (zero-potential forms)
        let mut next_edges = unknown_tree.edges.clone();
        next_edges.retain(|e| e.id != e_id);
        let next_tree = TreeSpec::new(
            next_edges,
            unknown_tree.bc.clone(),
            unknown_tree.gamma.clone(),
            Some(next_v),
        );
        let r_next = next_tree
            .boundary_vertices()
            .iter()
            .filter(|v| **v != next_v && next_tree.bc.get(v) == Some(&Bc::Dirichlet))
            .count();
        let k0n = zero_poly_kirchhoff_at(&next_tree, next_v)?;
        let pi0n = zero_poly_pi_at(&next_tree, next_v)?;
        let (sigma, fit) = recover_first_edge_bandlimit(
            &uk,
            &upi,
            w_is_tail,
            tree.gamma_of(e_id),
            r_next,
            &k0n,
            &pi0n,
            next_tree.edge_count() as f64 * PI,
            opts,
        )?;
        report.fit_rms = Some(fit.rms);
        report.description = format!("band-limit peel of {} at w = {}", e_id, st.w);
        let committed = if w_is_tail { sigma } else { sigma.reversed() };
        let _ = r_cur;
        st.pots.insert(e_id, committed);
        st.known_edges.insert(e_id);
        st.w = next_v;
        st.warm = None;
        st.stages.push(report);
        return Ok(());
    }

    // branching vertex: pair flipped problems with the base one
    let children = split.children_of_w.clone();
    let mut flip_of_child: Vec<Option<&ProblemData>> = Vec::new();
    for child in &children {
        let leaves: BTreeSet<VertexId> = child
            .boundary_vertices()
            .into_iter()
            .filter(|v| *v != st.w)
            .collect();
        let fp = st
            .problems
            .iter()
            .find(|p| p.def.flip.map_or(false, |v| leaves.contains(&v)));
        flip_of_child.push(fp);
    }
    let is_path_child = |child: &TreeSpec| -> bool {
        child.vertices.iter().all(|v| child.degree(*v) <= 2)
    };
    let mut skip_idx: Option<usize> = None;
    for (i, (child, fp)) in children.iter().zip(flip_of_child.iter()).enumerate() {
        if fp.is_none() || !is_path_child(child) {
            if skip_idx.is_some() {
                return Err(Error::Branching(format!(
                    "two or more branches at {} lack usable changed-BC path data; \
                     the full-tree inverse machinery is out of scope",
                    st.w
                )));
            }
            skip_idx = Some(i);
        }
    }
    // recover each flipped path branch via the pairing product
    let _branch_mode = ();
    for (i, child) in children.iter().enumerate() {
        if Some(i) == skip_idx {
            continue;
        }
        let fp = flip_of_child[i].unwrap();
        // assembled pair of the flipped problem at the same w
        let mut vreport = StageReport {
            stage: stage_no,
            description: format!("pairing stage for branch {i} via {}", fp.def.name),
            gram_condition: None,
            solve_residual: None,
            fit_rms: None,
            assumptions: None,
        };
        let (uk_f, upi_f, _) =
            run_moment_stage(st, &[fp], &split, &unknown_tree, &mut vreport)?;
        // zeros of Δ_j^D(base)·Δ_j^D(flipped) from 1/(M_k − M)
        let child_flipped = flip_bc(child, fp.def.flip.unwrap())?;
        let d_form_base = crate::charfn::zero_poly_rooted(child, st.w, Bc::Dirichlet)?;
        let d_form_flip = crate::charfn::zero_poly_rooted(&child_flipped, st.w, Bc::Dirichlet)?;
        let lam_fit = {
            let need = opts.n_eigs_fit as f64 + 2.0;
            ((need / child.edge_count() as f64 + 2.0).powi(2)).min(opts.lambda_max())
        };
        let (za, zb) = pairing_zero_sets(
            (&uk, &upi),
            (&uk_f, &upi_f),
            &d_form_base,
            &d_form_flip,
            lam_fit,
            opts,
        )?;
        // interval fit for the branch: both spectra share D at w and differ
        // at the flipped far leaf
        let branch_path: Vec<EdgeId> = {
            let (edges, is_path, _) = path_from(
                tree,
                &tree
                    .edges
                    .iter()
                    .map(|e| e.id)
                    .filter(|id| child.edge(*id).is_none())
                    .collect::<BTreeSet<_>>(),
                st.w,
            );
            debug_assert!(is_path);
            edges
        };
        let (geo, far_bc, order) = chain_geometry(tree, &branch_path, st.w);
        let ts = TwoSpectra {
            spec_a: za,
            spec_b: zb,
            config_a: IntervalBc { far: far_bc, near: Bc::Dirichlet },
            config_b: IntervalBc { far: far_bc.flipped(), near: Bc::Dirichlet },
        };
        let (sigma, fit) = recover_sigma_interval(&ts, &geo, opts, None)?;
        vreport.fit_rms = Some(fit.rms);
        if !fit.converged && fit.rms > 1e-3 {
            return Err(Error::Optim {
                stage: format!("branch fit at stage {stage_no}"),
                misfit: fit.rms,
            });
        }
        commit_interval(&sigma, &order, opts.sigma_grid, &mut st.pots, None);
        for id in &branch_path {
            st.known_edges.insert(*id);
        }
        st.stages.push(vreport);
    }
    report.description = format!(
        "branch vertex {} handled; remaining branch continues as the unknown side",
        st.w
    );
    st.warm = None;
    st.stages.push(report);
    Ok(())
}

/// Zeros of the two Dirichlet-type branch functions from the pairing product
/// G(λ) = Δ^Π·Δ^Π_k/(Δ^K_k·Δ^Π − Δ^K·Δ^Π_k) = Δ_j^D·Δ_{j,k}^D, split into the
/// two interlacing families by their zero-potential positions.
fn pairing_zero_sets(
    base: (&CharFn, &CharFn),
    flipped: (&CharFn, &CharFn),
    d_form_base: &crate::trigpoly::TrigPolyForm,
    d_form_flip: &crate::trigpoly::TrigPolyForm,
    lambda_max: f64,
    opts: &PipelineOptions,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (k, pi) = base;
    let (kf, pif) = flipped;
    let (k, pi, kf, pif) = (k.clone(), pi.clone(), kf.clone(), pif.clone());
    let g = CharFn::from_closure(
        move |l| {
            let num = pi.eval(l) * pif.eval(l);
            let den = kf.eval(l) * pi.eval(l) - k.eval(l) * pif.eval(l);
            if den.abs() < 1e-12 * (1.0 + num.abs()) {
                f64::NAN
            } else {
                num / den
            }
        },
        0,
        0,
    );
    // NaN pockets break the scan; use a grid that sidesteps them
    let zeros = scan_skipping_nan(&g, lambda_max, opts.rho_step, opts.refine_tol)?;

    // families of the two zero-potential forms
    let fam_a = form_zero_positions(d_form_base)?;
    let fam_b = form_zero_positions(d_form_flip)?;
    let mut all: Vec<f64> = fam_a.iter().chain(fam_b.iter()).cloned().collect();
    all.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let mut gap = f64::MAX;
    for w in all.windows(2) {
        gap = gap.min(w[1] - w[0]);
    }
    gap = gap.min(all[0] + 1.0 - all.last().unwrap()).max(1e-3);
    let thresh = 0.5 * gap;

    let mut za = Vec::new();
    let mut zb = Vec::new();
    for l in zeros {
        let rho = l.sqrt();
        let frac = rho.rem_euclid(1.0);
        let da = fam_a
            .iter()
            .map(|p| {
                let d = (frac - p).abs();
                d.min(1.0 - d)
            })
            .fold(f64::MAX, f64::min);
        let db = fam_b
            .iter()
            .map(|p| {
                let d = (frac - p).abs();
                d.min(1.0 - d)
            })
            .fold(f64::MAX, f64::min);
        if (da - db).abs() < 1e-6 {
            return Err(Error::Branching(format!(
                "ambiguous zero assignment at ρ = {rho:.8} in the pairing split"
            )));
        }
        if da < db && da < thresh {
            za.push(l);
        } else if db < da && db < thresh {
            zb.push(l);
        } else {
            return Err(Error::Branching(format!(
                "pairing zero at ρ = {rho:.8} fits no branch family"
            )));
        }
    }
    Ok((za, zb))
}

/// Fractional zero positions of a zero-potential form (the α families of all
/// its roots, both mirror images folded in).
fn form_zero_positions(form: &crate::trigpoly::TrigPolyForm) -> Result<Vec<f64>> {
    let ap = alpha_profile(form)?;
    let mut pos: Vec<f64> = ap
        .alphas
        .iter()
        .flat_map(|a| [*a, 1.0 - *a])
        .map(|p| if (p - 1.0).abs() < 1e-12 { 0.0 } else { p })
        .collect();
    pos.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pos.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    Ok(pos)
}

/// Sign-change scan that tolerates NaN pockets (near-pole grid points of a
/// ratio of entire functions).
fn scan_skipping_nan(
    g: &CharFn,
    lambda_max: f64,
    rho_step: f64,
    refine_tol: f64,
) -> Result<Vec<f64>> {
    let rho_max = lambda_max.sqrt();
    let n = (rho_max / rho_step).ceil() as usize;
    let rhos: Vec<f64> = (1..=n).map(|i| i as f64 * rho_step).collect();
    let lambdas: Vec<f64> = rhos.iter().map(|r| r * r).collect();
    let vals = g.eval_many(&lambdas);
    let mut zeros = Vec::new();
    let mut last_good: Option<(f64, f64)> = None;
    for (i, v) in vals.iter().enumerate() {
        if !v.is_finite() {
            continue;
        }
        if let Some((pr, pv)) = last_good {
            if pv != 0.0 && *v != 0.0 && (pv > 0.0) != (*v > 0.0) && rhos[i] - pr < 4.0 * rho_step
            {
                // bisect within [pr, rhos[i]] using finite samples only
                let (mut a, mut b, mut fa) = (pr, rhos[i], pv);
                for _ in 0..80 {
                    if b - a < refine_tol {
                        break;
                    }
                    let m = 0.5 * (a + b);
                    let fm = g.eval(m * m);
                    if !fm.is_finite() {
                        // nudge off the pocket
                        let m2 = m + 0.1 * (b - a);
                        let fm2 = g.eval(m2 * m2);
                        if !fm2.is_finite() {
                            break;
                        }
                        if (fm2 > 0.0) == (fa > 0.0) {
                            a = m2;
                            fa = fm2;
                        } else {
                            b = m2;
                        }
                        continue;
                    }
                    if (fm > 0.0) == (fa > 0.0) {
                        a = m;
                        fa = fm;
                    } else {
                        b = m;
                    }
                }
                zeros.push((0.5 * (a + b)).powi(2));
            }
        }
        last_good = Some((rhos[i], *v));
    }
    Ok(zeros)
}

/// Moves the current pair one edge toward the subtree, wrapping
/// [`crate::charfn::dkp_advance`] with the recovered potential. Exposed for
/// callers that track a pair without re-running the moment solve.
pub fn peel_pair(
    k_w: &CharFn,
    pi_w: &CharFn,
    pot: &EdgePotential,
    gamma: f64,
    w_is_tail: bool,
    opts: &PipelineOptions,
    next_d: usize,
    next_m: usize,
) -> (CharFn, CharFn) {
    crate::charfn::dkp_advance(
        k_w,
        pi_w,
        Arc::new(pot.clone()),
        gamma,
        w_is_tail,
        IntegratorMode::Adaptive(opts.integrator_tol),
        next_d,
        next_m,
    )
}
