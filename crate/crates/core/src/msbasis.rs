//! Generalized multiscale space: local spectral bases, contact extension
//! bases, and the coarse operators built from them.
//!
//! Basis allocation per coarse node:
//!
//! * interior nodes: the `l` lowest modes of the local spectral problem;
//! * boundary nodes off the contact boundary: the single lowest mode;
//! * contact nodes: one κ-harmonic extension of the coarse hat.
//!
//! On the default-scale 16×16 coarse grid this gives `225 l + 64` columns.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use faer::Mat;

use crate::assemble::FineSystem;
use crate::eigen::generalized_symmetric_eigen_with;
use crate::error::{Error, Result};
use crate::grid::{local_domain, BoundaryTag, GridPair, LocalDomain};
use crate::sparse::{SparseMatrix, SpdFactor};

/// How many eigenpairs to keep when the cut falls inside a cluster.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EigenCut {
    /// Keep exactly the requested count.
    Strict,
    /// Extend the count while the next eigenvalue is within `rel_tol`
    /// (relative) of the last kept one.
    Grouped { rel_tol: f64 },
}

impl EigenCut {
    fn count(&self, values: &[f64], requested: usize) -> usize {
        let mut k = requested.min(values.len());
        if let EigenCut::Grouped { rel_tol } = *self {
            while k > 0 && k < values.len() {
                let last = values[k - 1];
                if (values[k] - last).abs() <= rel_tol * last.abs() {
                    k += 1;
                } else {
                    break;
                }
            }
        }
        k
    }
}

#[derive(Debug, Clone)]
pub struct LocalEigenBasis {
    pub center: usize,
    /// Free fine dofs of the snapshot nodes; vectors are indexed by position
    /// in this list.
    pub snapshot_dofs: Vec<usize>,
    /// Every eigenvalue of the local problem, ascending.
    pub eigenvalues: Vec<f64>,
    /// Retained eigenvectors, `s_i`-orthonormal.
    pub vectors: Vec<Vec<f64>>,
}

impl LocalEigenBasis {
    pub fn retained(&self) -> usize {
        self.vectors.len()
    }

    pub fn snapshot_dim(&self) -> usize {
        self.snapshot_dofs.len()
    }
}

fn dense_restriction(m: &SparseMatrix, dofs: &[usize], ndof: usize) -> Mat<f64> {
    let mut local = vec![usize::MAX; ndof];
    for (k, &d) in dofs.iter().enumerate() {
        local[d] = k;
    }
    let mut out = Mat::zeros(dofs.len(), dofs.len());
    for (r, &d) in dofs.iter().enumerate() {
        let (cols, vals) = m.row(d);
        for (&c, &v) in cols.iter().zip(vals) {
            if local[c] != usize::MAX {
                out[(r, local[c])] = v;
            }
        }
    }
    out
}

fn snapshot_dofs(sys: &FineSystem, dom: &LocalDomain) -> Vec<usize> {
    dom.snapshot
        .iter()
        .map(|&p| sys.dofs.dof(p).expect("snapshot nodes are free"))
        .collect()
}

/// Solves the local spectral problem `a_i(v, w) = λ s_i(v, w)` on the
/// snapshot space of `dom` and keeps the `l` lowest modes (more under
/// [`EigenCut::Grouped`] when the cut splits a cluster).
pub fn local_spectral(
    sys: &FineSystem,
    dom: &LocalDomain,
    l: usize,
    cut: EigenCut,
) -> Result<LocalEigenBasis> {
    if l == 0 {
        return Err(Error::Config("number of local basis functions must be >= 1".into()));
    }
    let dofs = snapshot_dofs(sys, dom);
    if l > dofs.len() {
        return Err(Error::SnapshotTooSmall {
            node: dom.center,
            requested: l,
            available: dofs.len(),
        });
    }
    solve_local(sys, dom.center, dofs, |values| cut.count(values, l))
}

fn solve_local(
    sys: &FineSystem,
    center: usize,
    dofs: Vec<usize>,
    keep: impl Fn(&[f64]) -> usize,
) -> Result<LocalEigenBasis> {
    let n = sys.n_dofs();
    let a = dense_restriction(&sys.stiffness, &dofs, n);
    let s = dense_restriction(&sys.weighted_mass, &dofs, n);
    let full = generalized_symmetric_eigen_with(&a, &s, keep)?;
    Ok(LocalEigenBasis {
        center,
        snapshot_dofs: dofs,
        eigenvalues: full.values,
        vectors: full.vectors,
    })
}

/// κ-harmonic extension of the coarse hat of a contact node.
#[derive(Debug, Clone)]
pub struct ExtensionBasis {
    pub center: usize,
    /// Nonzero entries `(dof, value)`, ascending by dof.
    pub entries: Vec<(usize, f64)>,
    /// Dirichlet data on the patch boundary, `(fine node, value)`.
    pub boundary_data: Vec<(usize, f64)>,
}

impl ExtensionBasis {
    pub fn to_dense(&self, ndof: usize) -> Vec<f64> {
        let mut v = vec![0.0; ndof];
        for &(d, x) in &self.entries {
            v[d] = x;
        }
        v
    }
}

/// Bilinear coarse hat of the node at lattice offset `(dx, dy)` fine cells.
fn lattice_hat(dx: usize, dy: usize, nf: usize) -> f64 {
    if dx >= nf || dy >= nf {
        return 0.0;
    }
    let fx = (nf - dx) as f64 / nf as f64;
    let fy = (nf - dy) as f64 / nf as f64;
    fx * fy
}

pub fn extension_basis(sys: &FineSystem, g: &GridPair, dom: &LocalDomain) -> Result<ExtensionBasis> {
    let center = dom.center;
    if g.coarse_tag(center) != BoundaryTag::Contact {
        return Err(Error::NotContactNode(center));
    }
    let nf = g.nf();
    let (cx, cy) = g.fine_lattice(g.coarse_to_fine(center));
    let boundary_data: Vec<(usize, f64)> = dom
        .boundary
        .iter()
        .map(|&p| {
            let (ix, iy) = g.fine_lattice(p);
            (p, lattice_hat(ix.abs_diff(cx), iy.abs_diff(cy), nf))
        })
        .collect();

    let ndof = sys.n_dofs();
    let mut values = vec![0.0; ndof];
    for &(p, v) in &boundary_data {
        if let Some(d) = sys.dofs.dof(p) {
            values[d] = v;
        }
    }

    let interior: Vec<usize> = dom
        .interior(g)
        .iter()
        .map(|&p| sys.dofs.dof(p).expect("patch interior nodes are free"))
        .collect();
    if !interior.is_empty() {
        let mut local = vec![usize::MAX; ndof];
        for (k, &d) in interior.iter().enumerate() {
            local[d] = k;
        }
        let mut trip = Vec::new();
        let mut rhs = vec![0.0; interior.len()];
        for (r, &d) in interior.iter().enumerate() {
            let (cols, vals) = sys.stiffness.row(d);
            for (&c, &v) in cols.iter().zip(vals) {
                if local[c] != usize::MAX {
                    trip.push((r, local[c], v));
                } else {
                    rhs[r] -= v * values[c];
                }
            }
        }
        let k = SparseMatrix::from_triplets(interior.len(), interior.len(), &trip);
        let x = SpdFactor::new(&k)?.solve(&rhs);
        for (&d, xi) in interior.iter().zip(x) {
            values[d] = xi;
        }
    }

    let entries = values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v != 0.0)
        .map(|(d, &v)| (d, v))
        .collect();
    Ok(ExtensionBasis {
        center,
        entries,
        boundary_data,
    })
}

/// Prolongation from coarse to fine contact nodes by linear interpolation.
pub fn contact_prolongation(g: &GridPair) -> SparseMatrix {
    let nf = g.nf();
    let n = g.fine_cells_per_side();
    let mut t = Vec::new();
    for e in 0..=n {
        let j = e / nf;
        let r = e % nf;
        t.push((e, j, lattice_hat(r, 0, nf)));
        if r > 0 {
            t.push((e, j + 1, lattice_hat(nf - r, 0, nf)));
        }
    }
    SparseMatrix::from_triplets(n + 1, g.nc() + 1, &t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeRole {
    Interior,
    /// Boundary node not on the contact boundary.
    Boundary,
    Contact,
}

pub fn node_role(g: &GridPair, node: usize) -> NodeRole {
    if g.coarse_tag(node) == BoundaryTag::Contact {
        NodeRole::Contact
    } else if g.is_boundary_coarse(node) {
        NodeRole::Boundary
    } else {
        NodeRole::Interior
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisKind {
    Eigen,
    Extension,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ColumnInfo {
    pub node: usize,
    pub kind: BasisKind,
    /// Eigen rank (0-based); zero for extension columns.
    pub rank: usize,
}

/// Snapshot space smaller than the requested number of modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shortfall {
    pub node: usize,
    pub requested: usize,
    pub available: usize,
}

#[derive(Debug, Clone)]
pub struct MultiscaleSpace {
    pub l: usize,
    /// Free fine dofs × `M_off`.
    pub r_off: SparseMatrix,
    pub columns: Vec<ColumnInfo>,
    /// `min λ_{l+1}` over interior domains.
    pub lambda: f64,
    /// Same minimum including the boundary eigen domains.
    pub lambda_all: f64,
    /// Fine contact nodes × coarse contact nodes.
    pub g_h: SparseMatrix,
    pub shortfalls: Vec<Shortfall>,
}

impl MultiscaleSpace {
    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    /// Fine-dof representation `R_off u` of a coarse coefficient vector.
    pub fn prolongate(&self, u: &[f64]) -> Vec<f64> {
        self.r_off.mul_vec(u)
    }
}

/// Local bases for every coarse node, computed once for up to `l_max`
/// modes; spaces for smaller counts use prefixes of the same eigenvectors.
#[derive(Debug, Clone)]
pub struct SpectralLibrary {
    l_max: usize,
    cut: EigenCut,
    ndof: usize,
    roles: Vec<NodeRole>,
    eigen: Vec<Option<LocalEigenBasis>>,
    extensions: Vec<Option<ExtensionBasis>>,
    g_h: SparseMatrix,
}

impl SpectralLibrary {
    pub fn build(sys: &FineSystem, g: &GridPair, l_max: usize, cut: EigenCut) -> Result<Self> {
        if l_max == 0 {
            return Err(Error::Config("number of local basis functions must be >= 1".into()));
        }
        let nodes = g.n_coarse_nodes();
        let mut roles = Vec::with_capacity(nodes);
        let mut eigen = Vec::with_capacity(nodes);
        let mut extensions = Vec::with_capacity(nodes);
        for i in 0..nodes {
            let role = node_role(g, i);
            let dom = local_domain(g, i)?;
            roles.push(role);
            match role {
                NodeRole::Contact => {
                    eigen.push(None);
                    extensions.push(Some(extension_basis(sys, g, &dom)?));
                }
                NodeRole::Interior | NodeRole::Boundary => {
                    let requested = if role == NodeRole::Interior { l_max } else { 1 };
                    let dofs = snapshot_dofs(sys, &dom);
                    let basis = solve_local(sys, i, dofs, |values| cut.count(values, requested))?;
                    eigen.push(Some(basis));
                    extensions.push(None);
                }
            }
            log::debug!("local basis for coarse node {i} ({role:?}) done");
        }
        Ok(SpectralLibrary {
            l_max,
            cut,
            ndof: sys.n_dofs(),
            roles,
            eigen,
            extensions,
            g_h: contact_prolongation(g),
        })
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }

    pub fn roles(&self) -> &[NodeRole] {
        &self.roles
    }

    pub fn eigen_basis(&self, node: usize) -> Option<&LocalEigenBasis> {
        self.eigen[node].as_ref()
    }

    pub fn extension(&self, node: usize) -> Option<&ExtensionBasis> {
        self.extensions[node].as_ref()
    }

    fn requested(&self, node: usize, l: usize) -> usize {
        match self.roles[node] {
            NodeRole::Interior => l,
            NodeRole::Boundary => 1,
            NodeRole::Contact => 0,
        }
    }

    fn retained(&self, node: usize, l: usize) -> usize {
        self.eigen[node]
            .as_ref()
            .map_or(0, |b| self.cut.count(&b.eigenvalues, self.requested(node, l)))
    }

    /// First excluded eigenvalue of a node, or the largest available one
    /// when every mode is retained. `None` for empty snapshot spaces.
    fn next_eigenvalue(&self, node: usize, l: usize) -> Option<f64> {
        let b = self.eigen[node].as_ref()?;
        let k = self.retained(node, l);
        b.eigenvalues.get(k).or(b.eigenvalues.last()).copied()
    }

    /// `(Λ over interior domains, Λ over all eigen domains)`.
    pub fn lambda(&self, l: usize) -> (f64, f64) {
        let mut interior = f64::INFINITY;
        let mut all = f64::INFINITY;
        for node in 0..self.roles.len() {
            if let Some(v) = self.next_eigenvalue(node, l) {
                all = all.min(v);
                if self.roles[node] == NodeRole::Interior {
                    interior = interior.min(v);
                }
            }
        }
        (interior, all)
    }

    pub fn space(&self, l: usize) -> Result<MultiscaleSpace> {
        if l == 0 || l > self.l_max {
            return Err(Error::Config(format!(
                "basis count {l} outside 1..={} covered by this library",
                self.l_max
            )));
        }
        let mut columns = Vec::new();
        let mut trip = Vec::new();
        let mut shortfalls = Vec::new();
        for node in 0..self.roles.len() {
            if let Some(ext) = &self.extensions[node] {
                let col = columns.len();
                trip.extend(ext.entries.iter().map(|&(d, v)| (d, col, v)));
                columns.push(ColumnInfo {
                    node,
                    kind: BasisKind::Extension,
                    rank: 0,
                });
            }
            if let Some(b) = &self.eigen[node] {
                let requested = self.requested(node, l);
                if b.snapshot_dim() < requested {
                    shortfalls.push(Shortfall {
                        node,
                        requested,
                        available: b.snapshot_dim(),
                    });
                }
                for rank in 0..self.retained(node, l) {
                    let col = columns.len();
                    trip.extend(
                        b.snapshot_dofs
                            .iter()
                            .zip(&b.vectors[rank])
                            .map(|(&d, &v)| (d, col, v)),
                    );
                    columns.push(ColumnInfo {
                        node,
                        kind: BasisKind::Eigen,
                        rank,
                    });
                }
            }
        }
        let (lambda, lambda_all) = self.lambda(l);
        Ok(MultiscaleSpace {
            l,
            r_off: SparseMatrix::from_triplets(self.ndof, columns.len(), &trip),
            columns,
            lambda,
            lambda_all,
            g_h: self.g_h.clone(),
            shortfalls,
        })
    }

    /// CSV of `node,rank,lambda` for every computed local eigenvalue.
    pub fn eigenvalue_table(&self) -> String {
        let mut s = String::from("node,rank,lambda\n");
        for (node, b) in self.eigen.iter().enumerate() {
            if let Some(b) = b {
                for (rank, v) in b.eigenvalues.iter().enumerate() {
                    writeln!(s, "{node},{},{v:e}", rank + 1).unwrap();
                }
            }
        }
        s
    }

    pub fn write_eigenvalues(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.eigenvalue_table()).map_err(|e| Error::io(path, e))
    }
}

/// Builds the multiscale space with `l` modes per interior node.
pub fn build_space(sys: &FineSystem, g: &GridPair, l: usize) -> Result<MultiscaleSpace> {
    SpectralLibrary::build(sys, g, l, EigenCut::Strict)?.space(l)
}

/// Coarse-scale operators of the hybrid system.
#[derive(Debug, Clone)]
pub struct CoarseSystem {
    /// `R_offᵀ M_fine R_off`
    pub stiffness: SparseMatrix,
    /// `G_Hᵀ B_fine R_off`
    pub contact: SparseMatrix,
    /// `R_offᵀ L`
    pub load: Vec<f64>,
}

pub fn coarse_operators(space: &MultiscaleSpace, sys: &FineSystem) -> Result<CoarseSystem> {
    if space.r_off.nrows() != sys.n_dofs() {
        return Err(Error::DimensionMismatch {
            context: "R_off rows vs fine dofs",
            expected: sys.n_dofs(),
            got: space.r_off.nrows(),
        });
    }
    if space.g_h.nrows() != sys.contact.nrows() {
        return Err(Error::DimensionMismatch {
            context: "G_H rows vs fine contact rows",
            expected: sys.contact.nrows(),
            got: space.g_h.nrows(),
        });
    }
    let rt = space.r_off.transpose();
    let stiffness = rt.matmul(&sys.stiffness.matmul(&space.r_off));
    let contact = space
        .g_h
        .transpose()
        .matmul(&sys.contact.matmul(&space.r_off));
    let load = space.r_off.tr_mul_vec(&sys.load);
    Ok(CoarseSystem {
        stiffness,
        contact,
        load,
    })
}
