//! Primal-dual active set solver for the hybrid complementarity system
//!
//! ```text
//! M U − Bᵀ Φ = L,   B U ≥ 0,   Φ ≥ 0,   Φᵀ B U = 0
//! ```
//!
//! The same code path serves the fine system (`M_fine`, `B_fine`) and the
//! coarse system (`R_offᵀ M_fine R_off`, `G_Hᵀ B_fine R_off`).

use std::fmt::Write as _;

use faer::prelude::*;
use faer::{Mat, Side};

use crate::assemble::FineSystem;
use crate::error::{Error, Result};
use crate::msbasis::CoarseSystem;
use crate::sparse::{SparseMatrix, SpdFactor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Fine,
    Coarse,
}

#[derive(Debug, Clone)]
pub struct HybridSystem {
    pub stiffness: SparseMatrix,
    pub constraint: SparseMatrix,
    pub load: Vec<f64>,
    pub scale: Scale,
}

impl HybridSystem {
    pub fn new(
        stiffness: SparseMatrix,
        constraint: SparseMatrix,
        load: Vec<f64>,
        scale: Scale,
    ) -> Result<Self> {
        let n = stiffness.nrows();
        if stiffness.ncols() != n {
            return Err(Error::DimensionMismatch {
                context: "stiffness columns",
                expected: n,
                got: stiffness.ncols(),
            });
        }
        if constraint.ncols() != n {
            return Err(Error::DimensionMismatch {
                context: "constraint columns",
                expected: n,
                got: constraint.ncols(),
            });
        }
        if load.len() != n {
            return Err(Error::DimensionMismatch {
                context: "load vector",
                expected: n,
                got: load.len(),
            });
        }
        if let Some(&row) = constraint.empty_rows().first() {
            return Err(Error::ZeroConstraintRow(row));
        }
        Ok(HybridSystem {
            stiffness,
            constraint,
            load,
            scale,
        })
    }

    pub fn fine(sys: &FineSystem) -> Result<Self> {
        Self::new(
            sys.stiffness.clone(),
            sys.contact.clone(),
            sys.load.clone(),
            Scale::Fine,
        )
    }

    pub fn coarse(sys: &CoarseSystem) -> Result<Self> {
        Self::new(
            sys.stiffness.clone(),
            sys.contact.clone(),
            sys.load.clone(),
            Scale::Coarse,
        )
    }

    pub fn n_dofs(&self) -> usize {
        self.stiffness.nrows()
    }

    pub fn n_constraints(&self) -> usize {
        self.constraint.nrows()
    }

    /// `J(u) = ½ uᵀ M u − Lᵀ u`
    pub fn energy(&self, u: &[f64]) -> f64 {
        0.5 * self.stiffness.quad_form(u) - dot(&self.load, u)
    }

    /// `M U − Bᵀ Φ − L`
    pub fn stationarity_residual(&self, u: &[f64], phi: &[f64]) -> Vec<f64> {
        let mu = self.stiffness.mul_vec(u);
        let btphi = self.constraint.tr_mul_vec(phi);
        mu.iter()
            .zip(&btphi)
            .zip(&self.load)
            .map(|((a, b), l)| a - b - l)
            .collect()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Saddle-point solver for
///
/// ```text
/// [  M    −B_aᵀ ] [ U   ]   [ r_u ]
/// [ −B_a    0   ] [ Φ_a ] = [ r_c ]
/// ```
///
/// by the Schur complement `B_a M⁻¹ B_aᵀ`. `M` is factored once, and the
/// full complement `B M⁻¹ Bᵀ` is precomputed so any active subset is a
/// dense principal submatrix.
#[derive(Debug)]
pub struct SaddleSolver {
    factor: SpdFactor,
    constraint: SparseMatrix,
    schur: Vec<Vec<f64>>,
}

impl SaddleSolver {
    pub fn new(stiffness: &SparseMatrix, constraint: &SparseMatrix) -> Result<Self> {
        let factor = SpdFactor::new(stiffness)?;
        let n = stiffness.nrows();
        let m = constraint.nrows();
        let mut schur = vec![vec![0.0; m]; m];
        let mut col = vec![0.0; n];
        for j in 0..m {
            col.iter_mut().for_each(|v| *v = 0.0);
            let (c, v) = constraint.row(j);
            for (&k, &x) in c.iter().zip(v) {
                col[k] = x;
            }
            let w = factor.solve(&col);
            let bw = constraint.mul_vec(&w);
            for i in 0..m {
                schur[i][j] = bw[i];
            }
        }
        // symmetrize the rounding noise away
        for i in 0..m {
            for j in 0..i {
                let s = 0.5 * (schur[i][j] + schur[j][i]);
                schur[i][j] = s;
                schur[j][i] = s;
            }
        }
        Ok(SaddleSolver {
            factor,
            constraint: constraint.clone(),
            schur,
        })
    }

    pub fn n_dofs(&self) -> usize {
        self.factor.dim()
    }

    /// Plain solve with `M`.
    pub fn solve_unconstrained(&self, rhs: &[f64]) -> Vec<f64> {
        self.factor.solve(rhs)
    }

    fn active_tr_mul(&self, active: &[usize], phi_a: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_dofs()];
        for (&i, &p) in active.iter().zip(phi_a) {
            let (c, v) = self.constraint.row(i);
            for (&k, &x) in c.iter().zip(v) {
                out[k] += x * p;
            }
        }
        out
    }

    fn active_mul(&self, active: &[usize], u: &[f64]) -> Vec<f64> {
        active
            .iter()
            .map(|&i| {
                let (c, v) = self.constraint.row(i);
                c.iter().zip(v).map(|(&k, &x)| x * u[k]).sum()
            })
            .collect()
    }

    /// Solves the block system restricted to the constraint rows in
    /// `active`; returns `(U, Φ_a)` with `Φ_a` ordered like `active`.
    pub fn solve(&self, active: &[usize], rhs_u: &[f64], rhs_c: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if rhs_u.len() != self.n_dofs() {
            return Err(Error::DimensionMismatch {
                context: "saddle rhs (primal block)",
                expected: self.n_dofs(),
                got: rhs_u.len(),
            });
        }
        if rhs_c.len() != active.len() {
            return Err(Error::DimensionMismatch {
                context: "saddle rhs (constraint block)",
                expected: active.len(),
                got: rhs_c.len(),
            });
        }
        let u0 = self.factor.solve(rhs_u);
        let k = active.len();
        if k == 0 {
            return Ok((u0, Vec::new()));
        }
        let s = Mat::from_fn(k, k, |i, j| self.schur[active[i]][active[j]]);
        let llt = s.llt(Side::Lower).map_err(|e| {
            Error::SingularSaddle(format!(
                "Schur complement of {k} active rows is not positive definite ({e:?})"
            ))
        })?;
        // rounding can let a rank-deficient block through the factorization
        let pivot_floor = 1e-14 * (0..k).map(|i| s[(i, i)]).fold(0.0, f64::max);
        let l_fac = llt.L();
        if (0..k).any(|i| l_fac[(i, i)] * l_fac[(i, i)] <= pivot_floor) {
            return Err(Error::SingularSaddle(format!(
                "Schur complement of {k} active rows is numerically singular"
            )));
        }
        let schur_solve = |r: &[f64]| -> Vec<f64> {
            let mut b = Mat::from_fn(k, 1, |i, _| r[i]);
            llt.solve_in_place(b.as_mut());
            (0..k).map(|i| b[(i, 0)]).collect()
        };

        // B_a U = −r_c  with  U = M⁻¹ (r_u + B_aᵀ Φ_a)
        let bu0 = self.active_mul(active, &u0);
        let r: Vec<f64> = rhs_c.iter().zip(&bu0).map(|(c, b)| -c - b).collect();
        let mut phi = schur_solve(&r);
        let mut u = self.primal(active, rhs_u, &phi);

        // one step of block refinement on the constraint residual
        let bu = self.active_mul(active, &u);
        let r: Vec<f64> = rhs_c.iter().zip(&bu).map(|(c, b)| -c - b).collect();
        let dphi = schur_solve(&r);
        for (p, d) in phi.iter_mut().zip(&dphi) {
            *p += d;
        }
        let du = self.factor.solve(&self.active_tr_mul(active, &dphi));
        for (x, d) in u.iter_mut().zip(du) {
            *x += d;
        }
        Ok((u, phi))
    }

    fn primal(&self, active: &[usize], rhs_u: &[f64], phi: &[f64]) -> Vec<f64> {
        let mut r = self.active_tr_mul(active, phi);
        for (a, b) in r.iter_mut().zip(rhs_u) {
            *a += b;
        }
        self.factor.solve(&r)
    }
}

/// One-shot saddle solve with every row of `b_active` active.
pub fn saddle_solve(
    stiffness: &SparseMatrix,
    b_active: &SparseMatrix,
    rhs_u: &[f64],
    rhs_c: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let solver = SaddleSolver::new(stiffness, b_active)?;
    let active: Vec<usize> = (0..b_active.nrows()).collect();
    solver.solve(&active, rhs_u, rhs_c)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdasOptions {
    pub c: f64,
    pub tol: f64,
    pub maxiter: usize,
}

impl Default for PdasOptions {
    fn default() -> Self {
        PdasOptions {
            c: 1.0,
            tol: 1e-10,
            maxiter: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub k: usize,
    pub active_count: usize,
    /// `‖Φ^k − Φ^{k−1}‖₂`
    pub dphi: f64,
    pub ncp: f64,
    pub energy: f64,
    /// `max |B(a,:) U^k|` over the active rows used for this iterate.
    pub active_violation: f64,
}

#[derive(Debug, Clone)]
pub struct HybridSolution {
    pub u: Vec<f64>,
    pub phi: Vec<f64>,
    pub active: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<IterationRecord>,
}

impl HybridSolution {
    pub fn active_sizes(&self) -> Vec<usize> {
        self.trace.iter().map(|r| r.active_count).collect()
    }

    pub fn trace_csv(&self) -> String {
        let mut s = String::from("k,active,dphi,ncp,energy\n");
        for r in &self.trace {
            writeln!(
                s,
                "{},{},{:e},{:e},{:e}",
                r.k, r.active_count, r.dphi, r.ncp, r.energy
            )
            .unwrap();
        }
        s
    }
}

/// `‖Φ − max(0, Φ − c B U)‖∞`; zero exactly at complementary points.
pub fn ncp_residual(sys: &HybridSystem, u: &[f64], phi: &[f64], c: f64) -> f64 {
    let bu = sys.constraint.mul_vec(u);
    phi.iter()
        .zip(&bu)
        .map(|(&p, &b)| (p - (p - c * b).max(0.0)).abs())
        .fold(0.0, f64::max)
}

fn active_set(phi: &[f64], bu: &[f64], c: f64) -> Vec<usize> {
    phi.iter()
        .zip(bu)
        .enumerate()
        .filter(|(_, (&p, &b))| p - c * b > 0.0)
        .map(|(i, _)| i)
        .collect()
}

/// Primal-dual active set iteration. Stops when the multiplier update is at
/// most `tol`, when the active set repeats, or after `maxiter` saddle solves;
/// in the last case the final iterate is returned with `converged = false`
/// unless it is already a fixed point.
pub fn pdas_solve(sys: &HybridSystem, opts: &PdasOptions) -> Result<HybridSolution> {
    pdas_solve_with(sys, &SaddleSolver::new(&sys.stiffness, &sys.constraint)?, opts)
}

/// PDAS with a prebuilt saddle solver for `sys`.
pub fn pdas_solve_with(
    sys: &HybridSystem,
    solver: &SaddleSolver,
    opts: &PdasOptions,
) -> Result<HybridSolution> {
    if !(opts.c > 0.0 && opts.c.is_finite()) {
        return Err(Error::Config(format!("c must be positive (got {})", opts.c)));
    }
    if !(opts.tol >= 0.0) {
        return Err(Error::Config(format!("tol must be nonnegative (got {})", opts.tol)));
    }
    if opts.maxiter == 0 {
        return Err(Error::Config("maxiter must be >= 1".into()));
    }
    let m = sys.n_constraints();
    let mut u = solver.solve_unconstrained(&sys.load);
    let mut phi = vec![0.0; m];
    let mut prev_active: Option<Vec<usize>> = None;
    let mut trace = Vec::new();
    let mut k = 0;
    let converged = loop {
        let bu = sys.constraint.mul_vec(&u);
        let active = active_set(&phi, &bu, opts.c);
        if prev_active.as_ref() == Some(&active) {
            break true;
        }
        if k == opts.maxiter {
            break false;
        }
        let (u_next, phi_a) = solver.solve(&active, &sys.load, &vec![0.0; active.len()])?;
        let mut phi_next = vec![0.0; m];
        for (&i, &p) in active.iter().zip(&phi_a) {
            phi_next[i] = p;
        }
        let dphi = norm2(
            &phi_next
                .iter()
                .zip(&phi)
                .map(|(a, b)| a - b)
                .collect::<Vec<_>>(),
        );
        k += 1;
        u = u_next;
        phi = phi_next;
        let bu = sys.constraint.mul_vec(&u);
        let active_violation = active.iter().map(|&i| bu[i].abs()).fold(0.0, f64::max);
        let record = IterationRecord {
            k,
            active_count: active.len(),
            dphi,
            ncp: ncp_residual(sys, &u, &phi, opts.c),
            energy: sys.energy(&u),
            active_violation,
        };
        log::debug!(
            "pdas {:?} k={} active={} dphi={:e} ncp={:e} J={:e}",
            sys.scale,
            record.k,
            record.active_count,
            record.dphi,
            record.ncp,
            record.energy
        );
        trace.push(record);
        prev_active = Some(active);
        if dphi <= opts.tol {
            break true;
        }
    };
    let active = prev_active.unwrap_or_default();
    Ok(HybridSolution {
        u,
        phi,
        active,
        iterations: k,
        converged,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd3() -> SparseMatrix {
        SparseMatrix::from_dense(
            &[
                vec![4.0, -1.0, 0.0],
                vec![-1.0, 4.0, -1.0],
                vec![0.0, -1.0, 4.0],
            ],
            3,
        )
    }

    #[test]
    fn empty_active_set_is_plain_solve() {
        let m = spd3();
        let b = SparseMatrix::from_dense(&[vec![1.0, 0.0, 0.0]], 3);
        let solver = SaddleSolver::new(&m, &b).unwrap();
        let (u, phi) = solver.solve(&[], &[1.0, 2.0, 3.0], &[]).unwrap();
        assert!(phi.is_empty());
        let r = m.mul_vec(&u);
        for (a, b) in r.iter().zip([1.0, 2.0, 3.0]) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn scalar_schur_by_hand() {
        // M = diag(2, 5), B = [1, 1]; eliminating by hand:
        // u = M⁻¹(r + Bᵀφ), B u = −c  =>  φ = (−c − B M⁻¹ r) / (B M⁻¹ Bᵀ)
        let m = SparseMatrix::from_dense(&[vec![2.0, 0.0], vec![0.0, 5.0]], 2);
        let b = SparseMatrix::from_dense(&[vec![1.0, 1.0]], 2);
        let r = [3.0, -4.0];
        let c = 0.5;
        let s = 1.0 / 2.0 + 1.0 / 5.0;
        let phi = (-c - (3.0 / 2.0 - 4.0 / 5.0)) / s;
        let u = [(3.0 + phi) / 2.0, (-4.0 + phi) / 5.0];
        let (gu, gphi) = saddle_solve(&m, &b, &r, &[c]).unwrap();
        assert!((gphi[0] - phi).abs() < 1e-14);
        assert!((gu[0] - u[0]).abs() < 1e-14);
        assert!((gu[1] - u[1]).abs() < 1e-14);
    }

    #[test]
    fn dependent_rows_are_singular() {
        let m = spd3();
        let b = SparseMatrix::from_dense(&[vec![1.0, 1.0, 0.0], vec![2.0, 2.0, 0.0]], 3);
        let err = saddle_solve(&m, &b, &[1.0, 1.0, 1.0], &[0.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::SingularSaddle(_)));
    }

    #[test]
    fn zero_row_rejected() {
        let b = SparseMatrix::from_triplets(2, 3, &[(0, 0, 1.0)]);
        let err = HybridSystem::new(spd3(), b, vec![0.0; 3], Scale::Fine).unwrap_err();
        assert!(matches!(err, Error::ZeroConstraintRow(1)));
    }

    #[test]
    fn ncp_residual_cases() {
        let sys = HybridSystem::new(
            spd3(),
            SparseMatrix::from_dense(&[vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]], 3),
            vec![0.0; 3],
            Scale::Fine,
        )
        .unwrap();
        // Φ = 0 with B U ≥ 0
        assert_eq!(ncp_residual(&sys, &[1.0, 0.0, 2.0], &[0.0, 0.0], 1.0), 0.0);
        // Φ_0 = −0.3 with (BU)_0 = 1: |−0.3 − max(0, −1.3)| = 0.3
        let r = ncp_residual(&sys, &[1.0, 0.0, 2.0], &[-0.3, 0.0], 1.0);
        assert!((r - 0.3).abs() < 1e-15);
        // Φ_1 = 2 with (BU)_1 = −1: |2 − (2 + 1)| = 1
        let r = ncp_residual(&sys, &[0.0, 0.0, -1.0], &[0.0, 2.0], 1.0);
        assert!((r - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_options() {
        let sys = HybridSystem::new(
            spd3(),
            SparseMatrix::from_dense(&[vec![1.0, 0.0, 0.0]], 3),
            vec![1.0; 3],
            Scale::Fine,
        )
        .unwrap();
        for opts in [
            PdasOptions { c: 0.0, ..Default::default() },
            PdasOptions { maxiter: 0, ..Default::default() },
        ] {
            assert!(matches!(pdas_solve(&sys, &opts), Err(Error::Config(_))));
        }
    }

    #[test]
    fn small_contact_problem() {
        // load pulls dof 0 negative; constraint u_0 ≥ 0 must become active
        let sys = HybridSystem::new(
            spd3(),
            SparseMatrix::from_dense(&[vec![1.0, 0.0, 0.0]], 3),
            vec![-1.0, 1.0, 0.0],
            Scale::Fine,
        )
        .unwrap();
        let sol = pdas_solve(&sys, &PdasOptions::default()).unwrap();
        assert!(sol.converged);
        assert_eq!(sol.active, vec![0]);
        assert!(sol.u[0].abs() < 1e-14);
        assert!(sol.phi[0] > 0.0);
        let r = sys.stationarity_residual(&sol.u, &sol.phi);
        assert!(norm2(&r) < 1e-14);
        assert!(ncp_residual(&sys, &sol.u, &sol.phi, 1.0) < 1e-14);
    }

    #[test]
    fn random_block_system_residual() {
        use nalgebra::{DMatrix, DVector};
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let (n, k) = (12, 4);
        let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let m = &g * g.transpose() + DMatrix::identity(n, n) * n as f64;
        let b = DMatrix::from_fn(k, n, |_, _| rng.random_range(-1.0..1.0));
        let rhs = DVector::from_fn(n + k, |_, _| rng.random_range(-1.0..1.0));
        let to_sparse = |d: &DMatrix<f64>| {
            let rows: Vec<Vec<f64>> = (0..d.nrows()).map(|i| d.row(i).iter().copied().collect()).collect();
            SparseMatrix::from_dense(&rows, d.ncols())
        };
        let r_u: Vec<f64> = rhs.rows(0, n).iter().copied().collect();
        let r_c: Vec<f64> = rhs.rows(n, k).iter().copied().collect();
        let (u, phi) = saddle_solve(&to_sparse(&m), &to_sparse(&b), &r_u, &r_c).unwrap();
        let mut kkt = DMatrix::zeros(n + k, n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&m);
        kkt.view_mut((0, n), (n, k)).copy_from(&(-b.transpose()));
        kkt.view_mut((n, 0), (k, n)).copy_from(&(-&b));
        let x = DVector::from_iterator(n + k, u.iter().chain(&phi).copied());
        let res = (&kkt * &x - &rhs).norm();
        assert!(res <= 1e-10 * rhs.norm(), "{res}");
        let direct = kkt.lu().solve(&rhs).unwrap();
        assert!((&x - &direct).norm() <= 1e-10 * (1.0 + direct.norm()));
    }

    #[test]
    fn inactive_constraint_gives_plain_solve() {
        use crate::assemble::{assemble_fine, SourceTerm};
        use crate::field::PermField;
        use crate::grid::build_grids;
        // a positive source keeps the solution positive, so B U ≥ 0
        let g = build_grids(2, 2).unwrap();
        let k = PermField::constant(&g, 1.0).unwrap();
        let fine = assemble_fine(&g, &k, |x, y| SourceTerm::Constant(1.0).eval(x, y)).unwrap();
        let sys = HybridSystem::fine(&fine).unwrap();
        let sol = pdas_solve(&sys, &PdasOptions::default()).unwrap();
        assert!(sol.converged);
        assert!(sol.active.is_empty());
        assert!(sol.phi.iter().all(|&p| p == 0.0));
        let plain = SpdFactor::new(&sys.stiffness).unwrap().solve(&sys.load);
        for (a, b) in sol.u.iter().zip(&plain) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
}
