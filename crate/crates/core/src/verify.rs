//! Error metrics, complementarity reports, convergence studies, and two
//! independent oracles for small contact problems: projected Gauss-Seidel
//! on the primal minimization and exhaustive active-set enumeration.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::assemble::{assemble_fine, FineSystem, SourceTerm};
use crate::error::{Error, Result};
use crate::field::PermField;
use crate::grid::GridPair;
use crate::msbasis::{coarse_operators, EigenCut, SpectralLibrary};
use crate::pdas::{dot, ncp_residual, norm2, pdas_solve, HybridSolution, HybridSystem, PdasOptions};

/// Relative errors of a multiscale solution against the fine reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorMetrics {
    /// Unweighted L² norm.
    pub e_l2: f64,
    /// Weighted `H¹_κ` norm: κ-weighted L² plus energy seminorm.
    pub e_a: f64,
}

fn relative(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        (num / den).sqrt()
    } else if num == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Relative errors of `u_ms` (fine dofs, already prolongated) against
/// `u_ref`.
pub fn errors(u_ref: &[f64], u_ms: &[f64], sys: &FineSystem) -> Result<ErrorMetrics> {
    let n = sys.n_dofs();
    for (context, v) in [("reference solution", u_ref), ("multiscale solution", u_ms)] {
        if v.len() != n {
            return Err(Error::DimensionMismatch {
                context,
                expected: n,
                got: v.len(),
            });
        }
    }
    let e: Vec<f64> = u_ref.iter().zip(u_ms).map(|(a, b)| a - b).collect();
    let e_l2 = relative(sys.mass.quad_form(&e), sys.mass.quad_form(u_ref));
    let weighted = |v: &[f64]| sys.weighted_mass.quad_form(v) + sys.stiffness.quad_form(v);
    let e_a = relative(weighted(&e), weighted(u_ref));
    Ok(ErrorMetrics { e_l2, e_a })
}

/// One row of a convergence study.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub l: usize,
    pub coarse_dof: usize,
    pub e_a: f64,
    pub e_l2: f64,
    /// First excluded eigenvalue, minimized over interior domains.
    pub lambda: f64,
    /// Same minimum taken over every domain with a spectral basis.
    pub lambda_all: f64,
    pub fine_iters: usize,
    pub coarse_iters: usize,
    pub coarse_converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComplementarityReport {
    /// `min B U`; `+∞` without constraint rows.
    pub min_bu: f64,
    /// `min Φ`; `+∞` without constraint rows.
    pub min_phi: f64,
    /// `|Φᵀ B U|`
    pub phi_bu: f64,
    pub norm_phi: f64,
    pub norm_bu: f64,
    pub ncp: f64,
    /// `‖M U − Bᵀ Φ − L‖₂ / ‖L‖₂`
    pub stationarity: f64,
}

impl ComplementarityReport {
    /// Sign and complementarity bounds at a converged solution.
    pub fn within(&self, eps: f64, eps_phi: f64, eps_ncp: f64, eps_lin: f64) -> bool {
        self.min_bu >= -eps
            && self.min_phi >= -eps_phi
            && self.phi_bu <= eps * (1.0 + self.norm_phi * self.norm_bu)
            && self.ncp <= eps_ncp
            && self.stationarity <= eps_lin
    }

    pub fn to_text(&self) -> String {
        format!(
            "min_BU = {:e}\nmin_Phi = {:e}\nabs_PhiT_BU = {:e}\nncp_residual = {:e}\nstationarity = {:e}\n",
            self.min_bu, self.min_phi, self.phi_bu, self.ncp, self.stationarity
        )
    }
}

pub fn complementarity_report(sys: &HybridSystem, u: &[f64], phi: &[f64], c: f64) -> ComplementarityReport {
    let bu = sys.constraint.mul_vec(u);
    let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    let r = sys.stationarity_residual(u, phi);
    let nl = norm2(&sys.load);
    let nr = norm2(&r);
    ComplementarityReport {
        min_bu: min(&bu),
        min_phi: min(phi),
        phi_bu: dot(phi, &bu).abs(),
        norm_phi: norm2(phi),
        norm_bu: norm2(&bu),
        ncp: ncp_residual(sys, u, phi, c),
        stationarity: if nl > 0.0 { nr / nl } else { nr },
    }
}

pub fn solution_report(sys: &HybridSystem, sol: &HybridSolution, c: f64) -> ComplementarityReport {
    complementarity_report(sys, &sol.u, &sol.phi, c)
}

fn dense(m: &crate::sparse::SparseMatrix) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(m.nrows(), m.ncols());
    for (i, j, v) in m.triplets() {
        d[(i, j)] = v;
    }
    d
}

/// Result of the projected Gauss-Seidel oracle.
#[derive(Debug, Clone)]
pub struct PgsSolution {
    pub u: Vec<f64>,
    pub sweeps: usize,
    /// `‖w − max(0, w − (Q w − q))‖∞` in the transformed contact variables.
    pub residual: f64,
    /// Residual reached `tol · ‖q‖∞` within the sweep budget.
    pub converged: bool,
}

/// Minimizes `½ uᵀ M u − Lᵀ u` subject to `B u ≥ 0` by projected
/// Gauss-Seidel. The constrained columns of `B` must form a square
/// invertible block `T`; the free dofs are eliminated exactly and the sweep
/// runs on `w = T u_C ≥ 0`. Stops when the natural residual is at most
/// `tol · ‖q‖∞` or after `max_sweeps`.
pub fn oracle_pgs(sys: &HybridSystem, tol: f64, max_sweeps: usize) -> Result<PgsSolution> {
    let n = sys.n_dofs();
    let m = sys.n_constraints();
    let md = dense(&sys.stiffness);
    let bd = dense(&sys.constraint);
    let l = DVector::from_column_slice(&sys.load);

    let constrained: Vec<usize> = (0..n).filter(|&j| bd.column(j).iter().any(|&v| v != 0.0)).collect();
    if constrained.len() != m {
        return Err(Error::Config(format!(
            "oracle needs as many constrained columns as rows ({} vs {m})",
            constrained.len()
        )));
    }
    let free: Vec<usize> = (0..n).filter(|j| !constrained.contains(j)).collect();
    let t = bd.select_columns(&constrained);
    let t_lu = t.clone().lu();
    let t_inv = t_lu
        .try_inverse()
        .ok_or_else(|| Error::SingularSaddle("constraint block is singular".into()))?;

    let m_cc = md.select_rows(&constrained).select_columns(&constrained);
    let m_cf = md.select_rows(&constrained).select_columns(&free);
    let m_ff = md.select_rows(&free).select_columns(&free);
    let l_c = DVector::from_iterator(m, constrained.iter().map(|&j| l[j]));
    let l_f = DVector::from_iterator(free.len(), free.iter().map(|&j| l[j]));

    let (schur, l_red, ff) = if free.is_empty() {
        (m_cc, l_c, None)
    } else {
        let ff = m_ff
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("free block of the stiffness".into()))?;
        let x = ff.solve(&m_cf.transpose());
        let y = ff.solve(&l_f);
        (&m_cc - &m_cf * &x, &l_c - &m_cf * &y, Some(ff))
    };
    let q_mat = t_inv.transpose() * &schur * &t_inv;
    let q_mat = 0.5 * (&q_mat + q_mat.transpose());
    let q = t_inv.transpose() * &l_red;

    let scale = if q.amax() > 0.0 { q.amax() } else { 1.0 };
    let natural = |w: &DVector<f64>| -> f64 {
        let g = &q_mat * w - &q;
        w.iter()
            .zip(g.iter())
            .map(|(&wi, &gi)| (wi - (wi - gi).max(0.0)).abs())
            .fold(0.0, f64::max)
    };
    let mut w = DVector::zeros(m);
    let mut sweeps = 0;
    let mut residual = natural(&w);
    while residual > tol * scale && sweeps < max_sweeps {
        for i in 0..m {
            let mut s = q[i];
            for j in 0..m {
                if j != i {
                    s -= q_mat[(i, j)] * w[j];
                }
            }
            w[i] = (s / q_mat[(i, i)]).max(0.0);
        }
        sweeps += 1;
        if sweeps % 16 == 0 || sweeps == max_sweeps {
            residual = natural(&w);
        }
    }
    residual = natural(&w);

    let u_c = &t_inv * &w;
    let mut u = vec![0.0; n];
    for (k, &j) in constrained.iter().enumerate() {
        u[j] = u_c[k];
    }
    if let Some(ff) = ff {
        let u_f = ff.solve(&(&l_f - &m_cf.transpose() * &u_c));
        for (k, &j) in free.iter().enumerate() {
            u[j] = u_f[k];
        }
    }
    let converged = residual <= tol * scale;
    Ok(PgsSolution {
        u,
        sweeps,
        residual,
        converged,
    })
}

/// A Karush-Kuhn-Tucker point found by enumeration.
#[derive(Debug, Clone)]
pub struct KktPoint {
    pub active: Vec<usize>,
    pub u: Vec<f64>,
    pub phi: Vec<f64>,
}

/// Largest constraint count accepted by [`enumerate_active_sets`].
pub const ENUMERATION_LIMIT: usize = 16;

/// Solves the equality-constrained problem for every subset of constraint
/// rows and keeps those with `Φ ≥ −tol·s` and `B U ≥ −tol·s` off the subset,
/// where `s` is the magnitude of the respective quantity.
pub fn enumerate_active_sets(sys: &HybridSystem, tol: f64) -> Result<Vec<KktPoint>> {
    let m = sys.n_constraints();
    if m > ENUMERATION_LIMIT {
        return Err(Error::Config(format!(
            "enumeration limited to {ENUMERATION_LIMIT} constraint rows (got {m})"
        )));
    }
    let md = dense(&sys.stiffness);
    let bd = dense(&sys.constraint);
    let chol = md
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("stiffness".into()))?;
    let w = chol.solve(&bd.transpose());
    let g = &bd * &w;
    let u0 = chol.solve(&DVector::from_column_slice(&sys.load));
    let bu0 = &bd * &u0;

    let mut points = Vec::new();
    for mask in 0u32..(1u32 << m) {
        let active: Vec<usize> = (0..m).filter(|&i| mask & (1 << i) != 0).collect();
        let k = active.len();
        let mut phi = DVector::zeros(m);
        if k > 0 {
            let gaa = g.select_rows(&active).select_columns(&active);
            let Some(c) = gaa.cholesky() else { continue };
            let rhs = DVector::from_iterator(k, active.iter().map(|&i| -bu0[i]));
            let pa = c.solve(&rhs);
            for (t, &i) in active.iter().enumerate() {
                phi[i] = pa[t];
            }
        }
        let bu = &bu0 + &g * &phi;
        let u = &u0 + &w * &phi;
        let phi_scale = phi.amax().max(f64::MIN_POSITIVE);
        let bu_scale = bu.amax().max(f64::MIN_POSITIVE);
        let feasible = (0..m).all(|i| {
            if mask & (1 << i) != 0 {
                phi[i] >= -tol * phi_scale
            } else {
                bu[i] >= -tol * bu_scale
            }
        });
        if feasible {
            points.push(KktPoint {
                active,
                u: u.iter().copied().collect(),
                phi: phi.iter().copied().collect(),
            });
        }
    }
    Ok(points)
}

/// `sqrt((a−b)ᵀ M (a−b) / bᵀ M b)` with the system stiffness.
pub fn relative_energy_error(sys: &HybridSystem, a: &[f64], b: &[f64]) -> f64 {
    let e: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    relative(sys.stiffness.quad_form(&e), sys.stiffness.quad_form(b))
}

/// Fine reference plus one report per basis count.
#[derive(Debug, Clone)]
pub struct Study {
    pub fine: HybridSolution,
    pub reports: Vec<ErrorReport>,
    /// Coarse solutions, prolongated to fine dofs, in `l` order.
    pub coarse: Vec<(HybridSolution, Vec<f64>)>,
}

impl Study {
    pub fn table_csv(&self) -> String {
        study_table(&self.reports)
    }
}

pub fn study_table(reports: &[ErrorReport]) -> String {
    let mut s = String::from("l,coarse_dof,e_a,e_L2,Lambda,Lambda_all,fine_iters,coarse_iters\n");
    for r in reports {
        writeln!(
            s,
            "{},{},{:e},{:e},{:e},{:e},{},{}",
            r.l, r.coarse_dof, r.e_a, r.e_l2, r.lambda, r.lambda_all, r.fine_iters, r.coarse_iters
        )
        .unwrap();
    }
    s
}

pub fn write_study_table(reports: &[ErrorReport], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, study_table(reports)).map_err(|e| Error::io(path, e))
}

/// Runs the coarse solves of a study against an existing fine solution and
/// spectral library.
pub fn study_with_library(
    sys: &FineSystem,
    fine: &HybridSolution,
    library: &SpectralLibrary,
    l_range: &[usize],
    opts: &PdasOptions,
) -> Result<(Vec<ErrorReport>, Vec<(HybridSolution, Vec<f64>)>)> {
    if l_range.is_empty() {
        return Err(Error::Config("empty basis-count range".into()));
    }
    let mut reports = Vec::with_capacity(l_range.len());
    let mut coarse = Vec::with_capacity(l_range.len());
    for &l in l_range {
        let space = library.space(l)?;
        let csys = HybridSystem::coarse(&coarse_operators(&space, sys)?)?;
        let sol = pdas_solve(&csys, opts)?;
        let u_ms = space.prolongate(&sol.u);
        let e = errors(&fine.u, &u_ms, sys)?;
        log::info!(
            "l={l} dof={} e_a={:e} e_L2={:e} iters={} converged={}",
            space.dim(),
            e.e_a,
            e.e_l2,
            sol.iterations,
            sol.converged
        );
        reports.push(ErrorReport {
            l,
            coarse_dof: space.dim(),
            e_a: e.e_a,
            e_l2: e.e_l2,
            lambda: space.lambda,
            lambda_all: space.lambda_all,
            fine_iters: fine.iterations,
            coarse_iters: sol.iterations,
            coarse_converged: sol.converged,
        });
        coarse.push((sol, u_ms));
    }
    Ok((reports, coarse))
}

/// One fine reference solve and one coarse solve per basis count, all
/// sharing a single spectral library built for `max(l_range)`.
pub fn convergence_study(
    g: &GridPair,
    kappa: &PermField,
    f: &SourceTerm,
    l_range: &[usize],
    opts: &PdasOptions,
) -> Result<Study> {
    let l_max = *l_range
        .iter()
        .max()
        .ok_or_else(|| Error::Config("empty basis-count range".into()))?;
    let sys = assemble_fine(g, kappa, |x, y| f.eval(x, y))?;
    let fine = pdas_solve(&HybridSystem::fine(&sys)?, opts)?;
    let library = SpectralLibrary::build(&sys, g, l_max, EigenCut::Strict)?;
    let (reports, coarse) = study_with_library(&sys, &fine, &library, l_range, opts)?;
    Ok(Study { fine, reports, coarse })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grids;
    use crate::pdas::Scale;
    use crate::sparse::SparseMatrix;

    fn small() -> (GridPair, FineSystem) {
        let g = build_grids(2, 2).unwrap();
        let k = PermField::constant(&g, 1.0).unwrap();
        let sys = assemble_fine(&g, &k, |x, y| SourceTerm::SinSin.eval(x, y)).unwrap();
        (g, sys)
    }

    #[test]
    fn identical_and_doubled() {
        let (_, sys) = small();
        let u: Vec<f64> = (0..sys.n_dofs()).map(|i| 1.0 + (i as f64).sin()).collect();
        let e = errors(&u, &u, &sys).unwrap();
        assert_eq!((e.e_l2, e.e_a), (0.0, 0.0));
        let u2: Vec<f64> = u.iter().map(|x| 2.0 * x).collect();
        let e = errors(&u, &u2, &sys).unwrap();
        assert_eq!(e.e_l2, 1.0);
        assert!((e.e_a - 1.0).abs() < 1e-15);
    }

    #[test]
    fn errors_match_dense_quadratic_forms() {
        let (_, sys) = small();
        let n = sys.n_dofs();
        let a: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).cos()).collect();
        let b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).sin()).collect();
        let quad = |m: &SparseMatrix, v: &[f64]| {
            let d = m.to_dense();
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    s += v[i] * d[i][j] * v[j];
                }
            }
            s
        };
        let e: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        let want_l2 = (quad(&sys.mass, &e) / quad(&sys.mass, &a)).sqrt();
        let want_a = ((quad(&sys.weighted_mass, &e) + quad(&sys.stiffness, &e))
            / (quad(&sys.weighted_mass, &a) + quad(&sys.stiffness, &a)))
        .sqrt();
        let got = errors(&a, &b, &sys).unwrap();
        assert!((got.e_l2 - want_l2).abs() <= 1e-12 * want_l2);
        assert!((got.e_a - want_a).abs() <= 1e-12 * want_a);
    }

    #[test]
    fn errors_dimension_mismatch() {
        let (_, sys) = small();
        assert!(matches!(
            errors(&[1.0], &[1.0], &sys),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn report_of_infeasible_pair() {
        let m = SparseMatrix::identity(2);
        let b = SparseMatrix::from_dense(&[vec![1.0, 0.0], vec![0.0, 2.0]], 2);
        let sys = HybridSystem::new(m, b, vec![1.0, 1.0], Scale::Fine).unwrap();
        let u = [-0.5, 1.0];
        let phi = [-0.25, 3.0];
        let r = complementarity_report(&sys, &u, &phi, 1.0);
        assert_eq!(r.min_bu, -0.5);
        assert_eq!(r.min_phi, -0.25);
        assert_eq!(r.phi_bu, (0.125f64 + 6.0).abs());
        // Φ − max(0, Φ − BU) = (−0.25 − 0.25, 3 − 1)
        assert_eq!(r.ncp, 2.0);
        // M U − Bᵀ Φ − L = (−0.5 + 0.25 − 1, 1 − 6 − 1)
        let want = ((1.25f64).powi(2) + 36.0).sqrt() / 2f64.sqrt();
        assert!((r.stationarity - want).abs() < 1e-15);
    }

    #[test]
    fn pgs_unconstrained_feasible() {
        // a pure push into the constraint direction leaves it inactive
        let m = SparseMatrix::from_dense(&[vec![2.0, -1.0], vec![-1.0, 2.0]], 2);
        let b = SparseMatrix::from_dense(&[vec![1.0, 0.0]], 2);
        let sys = HybridSystem::new(m, b, vec![1.0, 1.0], Scale::Fine).unwrap();
        let sol = oracle_pgs(&sys, 1e-14, 100_000).unwrap();
        assert!((sol.u[0] - 1.0).abs() < 1e-12 && (sol.u[1] - 1.0).abs() < 1e-12);
        let kkt = enumerate_active_sets(&sys, 1e-12).unwrap();
        assert_eq!(kkt.len(), 1);
        assert!(kkt[0].active.is_empty());
    }

    #[test]
    fn pgs_and_enumeration_agree_on_active_case() {
        let m = SparseMatrix::from_dense(
            &[
                vec![3.0, -1.0, 0.0],
                vec![-1.0, 3.0, -1.0],
                vec![0.0, -1.0, 3.0],
            ],
            3,
        );
        let b = SparseMatrix::from_dense(&[vec![2.0, 1.0, 0.0], vec![1.0, 2.0, 0.0]], 3);
        let sys = HybridSystem::new(m, b, vec![-1.0, 0.5, 1.0], Scale::Fine).unwrap();
        let pgs = oracle_pgs(&sys, 1e-13, 1_000_000).unwrap();
        let kkt = enumerate_active_sets(&sys, 1e-12).unwrap();
        assert_eq!(kkt.len(), 1);
        assert!(!kkt[0].active.is_empty());
        assert!(relative_energy_error(&sys, &pgs.u, &kkt[0].u) < 1e-10);
    }

    #[test]
    fn enumeration_limit() {
        let n = ENUMERATION_LIMIT + 1;
        let sys = HybridSystem::new(
            SparseMatrix::identity(n),
            SparseMatrix::identity(n),
            vec![0.0; n],
            Scale::Fine,
        )
        .unwrap();
        assert!(matches!(enumerate_active_sets(&sys, 1e-12), Err(Error::Config(_))));
    }

    #[test]
    fn empty_range_rejected() {
        let g = build_grids(2, 2).unwrap();
        let k = PermField::constant(&g, 1.0).unwrap();
        let err = convergence_study(&g, &k, &SourceTerm::SinSin, &[], &PdasOptions::default());
        assert!(matches!(err, Err(Error::Config(_))));
    }
}
