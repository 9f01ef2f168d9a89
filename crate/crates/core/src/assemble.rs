//! Fine-scale operators of the hybrid formulation on bilinear (Q1) elements.
//!
//! Dirichlet nodes are eliminated, so every matrix acts on the free fine
//! degrees of freedom described by [`DofMap`].

use std::f64::consts::PI;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::field::PermField;
use crate::grid::{contact_trace, BoundaryTag, GridPair};
use crate::sparse::SparseMatrix;

/// Reference-square vertex signs, counterclockwise from `(-1, -1)`.
const REF_VERTS: [[f64; 2]; 4] = [[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]];

/// Gauss-Legendre points and weights on `[-1, 1]`.
pub fn gauss_legendre(order: usize) -> Vec<(f64, f64)> {
    match order {
        1 => vec![(0.0, 2.0)],
        2 => {
            let p = 1.0 / 3f64.sqrt();
            vec![(-p, 1.0), (p, 1.0)]
        }
        3 => {
            let p = (3.0f64 / 5.0).sqrt();
            vec![(-p, 5.0 / 9.0), (0.0, 8.0 / 9.0), (p, 5.0 / 9.0)]
        }
        4 => {
            let a = (3.0 / 7.0 - 2.0 / 7.0 * (6.0f64 / 5.0).sqrt()).sqrt();
            let b = (3.0 / 7.0 + 2.0 / 7.0 * (6.0f64 / 5.0).sqrt()).sqrt();
            let wa = (18.0 + 30f64.sqrt()) / 36.0;
            let wb = (18.0 - 30f64.sqrt()) / 36.0;
            vec![(-b, wb), (-a, wa), (a, wa), (b, wb)]
        }
        _ => panic!("unsupported Gauss order {order}"),
    }
}

struct QuadPoint {
    shape: [f64; 4],
    grad: [[f64; 2]; 4],
    weight: f64,
    pos: [f64; 2],
}

fn quad_points(verts: &[[f64; 2]; 4], order: usize) -> Result<Vec<QuadPoint>> {
    let rule = gauss_legendre(order);
    let mut pts = Vec::with_capacity(rule.len() * rule.len());
    for &(eta, wy) in &rule {
        for &(xi, wx) in &rule {
            let mut shape = [0.0; 4];
            let mut dref = [[0.0; 2]; 4];
            for (a, [sx, sy]) in REF_VERTS.iter().enumerate() {
                shape[a] = 0.25 * (1.0 + sx * xi) * (1.0 + sy * eta);
                dref[a] = [0.25 * sx * (1.0 + sy * eta), 0.25 * sy * (1.0 + sx * xi)];
            }
            let mut jac = [[0.0; 2]; 2];
            let mut pos = [0.0; 2];
            for a in 0..4 {
                for r in 0..2 {
                    pos[r] += shape[a] * verts[a][r];
                    for c in 0..2 {
                        jac[r][c] += verts[a][r] * dref[a][c];
                    }
                }
            }
            let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
            if !(det.is_finite() && det > 0.0) {
                return Err(Error::DegenerateCell(format!(
                    "jacobian determinant {det} at vertices {verts:?}"
                )));
            }
            let inv = [
                [jac[1][1] / det, -jac[0][1] / det],
                [-jac[1][0] / det, jac[0][0] / det],
            ];
            let mut grad = [[0.0; 2]; 4];
            for a in 0..4 {
                // physical gradient = J^{-T} reference gradient
                grad[a] = [
                    inv[0][0] * dref[a][0] + inv[1][0] * dref[a][1],
                    inv[0][1] * dref[a][0] + inv[1][1] * dref[a][1],
                ];
            }
            pts.push(QuadPoint {
                shape,
                grad,
                weight: wx * wy * det,
                pos,
            });
        }
    }
    Ok(pts)
}

fn check_kappa(kappa: f64) -> Result<()> {
    if !(kappa.is_finite() && kappa > 0.0) {
        return Err(Error::InvalidField(format!(
            "cell coefficient must be positive (got {kappa})"
        )));
    }
    Ok(())
}

/// `∫ κ ∇φ_a · ∇φ_b` over one cell with 2×2 Gauss quadrature.
pub fn element_stiffness(verts: &[[f64; 2]; 4], kappa: f64) -> Result<[[f64; 4]; 4]> {
    element_stiffness_with_order(verts, kappa, 2)
}

pub fn element_stiffness_with_order(
    verts: &[[f64; 2]; 4],
    kappa: f64,
    order: usize,
) -> Result<[[f64; 4]; 4]> {
    check_kappa(kappa)?;
    let mut k = [[0.0; 4]; 4];
    for q in quad_points(verts, order)? {
        for a in 0..4 {
            for b in 0..4 {
                let g = q.grad[a][0] * q.grad[b][0] + q.grad[a][1] * q.grad[b][1];
                k[a][b] += kappa * g * q.weight;
            }
        }
    }
    Ok(k)
}

/// `∫ w φ_a φ_b` over one cell. Needs order ≥ 2 to be exact.
pub fn element_mass(verts: &[[f64; 2]; 4], weight: f64, order: usize) -> Result<[[f64; 4]; 4]> {
    let mut m = [[0.0; 4]; 4];
    for q in quad_points(verts, order)? {
        for a in 0..4 {
            for b in 0..4 {
                m[a][b] += weight * q.shape[a] * q.shape[b] * q.weight;
            }
        }
    }
    Ok(m)
}

pub fn element_load(
    verts: &[[f64; 2]; 4],
    f: &dyn Fn(f64, f64) -> f64,
    order: usize,
) -> Result<[f64; 4]> {
    let mut l = [0.0; 4];
    for q in quad_points(verts, order)? {
        let fq = f(q.pos[0], q.pos[1]);
        for a in 0..4 {
            l[a] += fq * q.shape[a] * q.weight;
        }
    }
    Ok(l)
}

/// Right-hand side selector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SourceTerm {
    /// `sin(2πx) sin(2πy)`
    SinSin,
    Zero,
    Constant(f64),
}

impl SourceTerm {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match *self {
            SourceTerm::SinSin => (2.0 * PI * x).sin() * (2.0 * PI * y).sin(),
            SourceTerm::Zero => 0.0,
            SourceTerm::Constant(c) => c,
        }
    }

    pub fn name(&self) -> String {
        match self {
            SourceTerm::SinSin => "sinsin".into(),
            SourceTerm::Zero => "zero".into(),
            SourceTerm::Constant(c) => format!("const:{c}"),
        }
    }
}

impl FromStr for SourceTerm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "sinsin" | "sin" => Ok(SourceTerm::SinSin),
            "zero" | "0" => Ok(SourceTerm::Zero),
            "one" => Ok(SourceTerm::Constant(1.0)),
            other => other
                .strip_prefix("const:")
                .and_then(|v| v.parse().ok())
                .map(SourceTerm::Constant)
                .ok_or_else(|| {
                    Error::Config(format!(
                        "unknown source {other:?} (expected sinsin, zero, one or const:<value>)"
                    ))
                }),
        }
    }
}

/// Map between fine nodes and free (non-Dirichlet) degrees of freedom.
#[derive(Debug, Clone)]
pub struct DofMap {
    node_to_dof: Vec<Option<usize>>,
    dof_to_node: Vec<usize>,
}

impl DofMap {
    pub fn new(g: &GridPair) -> Self {
        let mut node_to_dof = vec![None; g.n_fine_nodes()];
        let mut dof_to_node = Vec::new();
        for (p, slot) in node_to_dof.iter_mut().enumerate() {
            if g.fine_tag(p) != BoundaryTag::Dirichlet {
                *slot = Some(dof_to_node.len());
                dof_to_node.push(p);
            }
        }
        DofMap {
            node_to_dof,
            dof_to_node,
        }
    }

    pub fn len(&self) -> usize {
        self.dof_to_node.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dof_to_node.is_empty()
    }

    pub fn dof(&self, node: usize) -> Option<usize> {
        self.node_to_dof[node]
    }

    pub fn node(&self, dof: usize) -> usize {
        self.dof_to_node[dof]
    }

    /// Expands a dof vector to all fine nodes, with zeros on Dirichlet nodes.
    pub fn to_nodal(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.node_to_dof.len()];
        for (d, &p) in self.dof_to_node.iter().enumerate() {
            out[p] = u[d];
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct FineSystem {
    /// `M_fine = [a(η_j, η_i)]`
    pub stiffness: SparseMatrix,
    /// κ-weighted mass matrix `[∫ κ η_j η_i]`.
    pub weighted_mass: SparseMatrix,
    /// Unweighted mass matrix `[∫ η_j η_i]`.
    pub mass: SparseMatrix,
    /// `B_fine = [b(ξ_j, η_i)]`, one row per fine contact node.
    pub contact: SparseMatrix,
    pub load: Vec<f64>,
    pub dofs: DofMap,
    /// Fine contact nodes, left to right (row order of `contact`).
    pub contact_nodes: Vec<usize>,
}

impl FineSystem {
    pub fn n_dofs(&self) -> usize {
        self.dofs.len()
    }

    pub fn n_contact(&self) -> usize {
        self.contact_nodes.len()
    }
}

pub fn assemble_fine(
    g: &GridPair,
    kappa: &PermField,
    f: impl Fn(f64, f64) -> f64,
) -> Result<FineSystem> {
    assemble_fine_with_order(g, kappa, f, 2)
}

/// Assembly with an explicit Gauss order per direction.
pub fn assemble_fine_with_order(
    g: &GridPair,
    kappa: &PermField,
    f: impl Fn(f64, f64) -> f64,
    order: usize,
) -> Result<FineSystem> {
    kappa.check_grid(g)?;
    let dofs = DofMap::new(g);
    let ndof = dofs.len();
    let ncell = g.n_fine_cells();

    let mut k_trip = Vec::with_capacity(16 * ncell);
    let mut s_trip = Vec::with_capacity(16 * ncell);
    let mut m_trip = Vec::with_capacity(16 * ncell);
    let mut load = vec![0.0; ndof];

    for c in 0..ncell {
        let nodes = g.cell_nodes(c);
        let verts = nodes.map(|p| g.fine_coord(p));
        let kc = kappa.value(c);
        let ke = element_stiffness_with_order(&verts, kc, order)?;
        let me = element_mass(&verts, 1.0, order)?;
        let le = element_load(&verts, &f, order)?;
        let local: [Option<usize>; 4] = nodes.map(|p| dofs.dof(p));
        for a in 0..4 {
            let Some(da) = local[a] else { continue };
            load[da] += le[a];
            for b in 0..4 {
                let Some(db) = local[b] else { continue };
                k_trip.push((da, db, ke[a][b]));
                s_trip.push((da, db, kc * me[a][b]));
                m_trip.push((da, db, me[a][b]));
            }
        }
    }

    let trace = contact_trace(g);
    let m = trace.fine_nodes.len();
    let mut b_trip = Vec::with_capacity(4 * m);
    for (e, w) in trace.fine_nodes.windows(2).enumerate() {
        let h = trace.edge_lengths[e];
        // the contact edge borders exactly one cell, in the bottom row
        let kc = kappa.value(g.fine_cell(e, 0));
        let block = [[h / 3.0, h / 6.0], [h / 6.0, h / 3.0]];
        for a in 0..2 {
            for b in 0..2 {
                let col = dofs.dof(w[b]).expect("contact nodes are free");
                b_trip.push((e + a, col, kc * block[a][b]));
            }
        }
    }

    Ok(FineSystem {
        stiffness: SparseMatrix::from_triplets(ndof, ndof, &k_trip),
        weighted_mass: SparseMatrix::from_triplets(ndof, ndof, &s_trip),
        mass: SparseMatrix::from_triplets(ndof, ndof, &m_trip),
        contact: SparseMatrix::from_triplets(m, ndof, &b_trip),
        load,
        dofs,
        contact_nodes: trace.fine_nodes,
    })
}
