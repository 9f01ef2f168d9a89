//! Structured coarse/fine quadrilateral grids on the unit square.
//!
//! Nodes are numbered row-major starting at the bottom-left corner, so the
//! fine node at lattice position `(ix, iy)` has index `iy * (n + 1) + ix`
//! where `n = nc * nf` is the number of fine cells per side. Coarse nodes use
//! the same scheme on the `(nc + 1)²` coarse lattice, and fine cells are
//! numbered `cy * n + cx`.
//!
//! Boundary layout: the bottom edge is the contact boundary, the top edge is
//! Dirichlet, and the left/right edges are homogeneous Neumann. The bottom
//! corners are tagged [`BoundaryTag::Contact`], the top corners
//! [`BoundaryTag::Dirichlet`].

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundaryTag {
    Interior,
    Dirichlet,
    Neumann,
    Contact,
}

#[derive(Debug, Clone)]
pub struct GridPair {
    nc: usize,
    nf: usize,
    fine_coords: Vec<[f64; 2]>,
    coarse_coords: Vec<[f64; 2]>,
    cells: Vec<[usize; 4]>,
    coarse_to_fine: Vec<usize>,
    fine_tags: Vec<BoundaryTag>,
    coarse_tags: Vec<BoundaryTag>,
}

fn tag_for(ix: usize, iy: usize, last: usize) -> BoundaryTag {
    if iy == 0 {
        BoundaryTag::Contact
    } else if iy == last {
        BoundaryTag::Dirichlet
    } else if ix == 0 || ix == last {
        BoundaryTag::Neumann
    } else {
        BoundaryTag::Interior
    }
}

/// Builds the coarse grid with `nc × nc` cells and its uniform refinement
/// with `nf × nf` fine cells per coarse cell.
pub fn build_grids(nc: usize, nf: usize) -> Result<GridPair> {
    if nc == 0 || nf == 0 {
        return Err(Error::InvalidGrid(format!(
            "nc and nf must be positive (got nc = {nc}, nf = {nf})"
        )));
    }
    let n = nc * nf;
    let np = n + 1;
    let h = 1.0 / n as f64;

    let mut fine_coords = Vec::with_capacity(np * np);
    let mut fine_tags = Vec::with_capacity(np * np);
    for iy in 0..np {
        for ix in 0..np {
            fine_coords.push([ix as f64 * h, iy as f64 * h]);
            fine_tags.push(tag_for(ix, iy, n));
        }
    }

    let mut cells = Vec::with_capacity(n * n);
    for cy in 0..n {
        for cx in 0..n {
            let a = cy * np + cx;
            cells.push([a, a + 1, a + np + 1, a + np]);
        }
    }

    let ncp = nc + 1;
    let mut coarse_coords = Vec::with_capacity(ncp * ncp);
    let mut coarse_to_fine = Vec::with_capacity(ncp * ncp);
    let mut coarse_tags = Vec::with_capacity(ncp * ncp);
    for jy in 0..ncp {
        for jx in 0..ncp {
            let f = (jy * nf) * np + jx * nf;
            coarse_to_fine.push(f);
            coarse_coords.push(fine_coords[f]);
            coarse_tags.push(fine_tags[f]);
        }
    }

    Ok(GridPair {
        nc,
        nf,
        fine_coords,
        coarse_coords,
        cells,
        coarse_to_fine,
        fine_tags,
        coarse_tags,
    })
}

impl GridPair {
    /// Coarse cells per side.
    pub fn nc(&self) -> usize {
        self.nc
    }

    /// Fine cells per coarse cell per side.
    pub fn nf(&self) -> usize {
        self.nf
    }

    /// Fine cells per side of the domain.
    pub fn fine_cells_per_side(&self) -> usize {
        self.nc * self.nf
    }

    pub fn n_fine_nodes(&self) -> usize {
        self.fine_coords.len()
    }

    pub fn n_coarse_nodes(&self) -> usize {
        self.coarse_coords.len()
    }

    pub fn n_fine_cells(&self) -> usize {
        self.cells.len()
    }

    /// Fine mesh width (edge length of a fine cell).
    pub fn h(&self) -> f64 {
        1.0 / self.fine_cells_per_side() as f64
    }

    /// Coarse mesh width (edge length of a coarse cell).
    pub fn coarse_h(&self) -> f64 {
        1.0 / self.nc as f64
    }

    pub fn fine_node(&self, ix: usize, iy: usize) -> usize {
        iy * (self.fine_cells_per_side() + 1) + ix
    }

    /// Lattice position `(ix, iy)` of a fine node.
    pub fn fine_lattice(&self, node: usize) -> (usize, usize) {
        let np = self.fine_cells_per_side() + 1;
        (node % np, node / np)
    }

    pub fn coarse_node(&self, jx: usize, jy: usize) -> usize {
        jy * (self.nc + 1) + jx
    }

    /// Lattice position `(jx, jy)` of a coarse node.
    pub fn coarse_lattice(&self, node: usize) -> (usize, usize) {
        (node % (self.nc + 1), node / (self.nc + 1))
    }

    pub fn fine_coord(&self, node: usize) -> [f64; 2] {
        self.fine_coords[node]
    }

    pub fn fine_coords(&self) -> &[[f64; 2]] {
        &self.fine_coords
    }

    pub fn coarse_coord(&self, node: usize) -> [f64; 2] {
        self.coarse_coords[node]
    }

    /// Vertices of a fine cell, counterclockwise from the bottom-left corner.
    pub fn cell_nodes(&self, cell: usize) -> [usize; 4] {
        self.cells[cell]
    }

    pub fn cells(&self) -> &[[usize; 4]] {
        &self.cells
    }

    pub fn fine_cell(&self, cx: usize, cy: usize) -> usize {
        cy * self.fine_cells_per_side() + cx
    }

    /// Index of the coarse cell containing a fine cell.
    pub fn coarse_cell_of(&self, cell: usize) -> usize {
        let n = self.fine_cells_per_side();
        let (cx, cy) = (cell % n, cell / n);
        (cy / self.nf) * self.nc + cx / self.nf
    }

    /// Fine node coinciding with a coarse node.
    pub fn coarse_to_fine(&self, coarse: usize) -> usize {
        self.coarse_to_fine[coarse]
    }

    pub fn fine_tag(&self, node: usize) -> BoundaryTag {
        self.fine_tags[node]
    }

    pub fn fine_tags(&self) -> &[BoundaryTag] {
        &self.fine_tags
    }

    pub fn coarse_tag(&self, node: usize) -> BoundaryTag {
        self.coarse_tags[node]
    }

    /// True when the coarse node lies on the boundary of the domain.
    pub fn is_boundary_coarse(&self, node: usize) -> bool {
        let (jx, jy) = self.coarse_lattice(node);
        jx == 0 || jy == 0 || jx == self.nc || jy == self.nc
    }
}

/// The neighborhood `ω_i` of a coarse node: the union of the coarse cells
/// sharing that node.
#[derive(Debug, Clone)]
pub struct LocalDomain {
    pub center: usize,
    pub coarse_cells: Vec<usize>,
    /// Fine cells covered by the patch.
    pub fine_cells: Vec<usize>,
    /// All fine nodes in the closed patch, ascending.
    pub members: Vec<usize>,
    /// Fine nodes whose basis functions are supported in the patch, ascending.
    /// Dirichlet and contact nodes are never included; Neumann nodes only
    /// when the center is a boundary coarse node.
    pub snapshot: Vec<usize>,
    /// Fine nodes on the topological boundary of the patch, ascending.
    pub boundary: Vec<usize>,
    /// Patch bounds in fine lattice units: `[x0, x1, y0, y1]`.
    pub bounds: [usize; 4],
}

impl LocalDomain {
    /// Fine nodes strictly inside the patch rectangle.
    pub fn interior(&self, g: &GridPair) -> Vec<usize> {
        let [x0, x1, y0, y1] = self.bounds;
        self.members
            .iter()
            .copied()
            .filter(|&p| {
                let (ix, iy) = g.fine_lattice(p);
                ix > x0 && ix < x1 && iy > y0 && iy < y1
            })
            .collect()
    }

    /// True when the patch boundary includes part of the contact boundary.
    pub fn touches_contact(&self) -> bool {
        self.bounds[2] == 0
    }
}

/// Builds the local domain of coarse node `i`.
pub fn local_domain(g: &GridPair, i: usize) -> Result<LocalDomain> {
    if i >= g.n_coarse_nodes() {
        return Err(Error::IndexOutOfRange {
            what: "coarse node",
            index: i,
            len: g.n_coarse_nodes(),
        });
    }
    let nc = g.nc();
    let nf = g.nf();
    let n = g.fine_cells_per_side();
    let (jx, jy) = g.coarse_lattice(i);

    let cx0 = jx.saturating_sub(1);
    let cx1 = jx.min(nc - 1);
    let cy0 = jy.saturating_sub(1);
    let cy1 = jy.min(nc - 1);

    let mut coarse_cells = Vec::new();
    for cy in cy0..=cy1 {
        for cx in cx0..=cx1 {
            coarse_cells.push(cy * nc + cx);
        }
    }

    let x0 = cx0 * nf;
    let x1 = (cx1 + 1) * nf;
    let y0 = cy0 * nf;
    let y1 = (cy1 + 1) * nf;

    let mut fine_cells = Vec::with_capacity((x1 - x0) * (y1 - y0));
    for cy in y0..y1 {
        for cx in x0..x1 {
            fine_cells.push(g.fine_cell(cx, cy));
        }
    }

    let center_on_boundary = g.is_boundary_coarse(i);
    let mut members = Vec::new();
    let mut snapshot = Vec::new();
    let mut boundary = Vec::new();
    for iy in y0..=y1 {
        for ix in x0..=x1 {
            let p = g.fine_node(ix, iy);
            members.push(p);
            let on_rect = ix == x0 || ix == x1 || iy == y0 || iy == y1;
            if on_rect {
                boundary.push(p);
            }
            // a node's hat function is supported in the patch unless the node
            // sits on a patch edge that is interior to the domain
            let on_inner_edge = (ix == x0 && x0 > 0)
                || (ix == x1 && x1 < n)
                || (iy == y0 && y0 > 0)
                || (iy == y1 && y1 < n);
            let tag = g.fine_tag(p);
            let allowed = match tag {
                BoundaryTag::Interior => true,
                // Neumann hats belong to the boundary patches only
                BoundaryTag::Neumann => center_on_boundary,
                BoundaryTag::Dirichlet | BoundaryTag::Contact => false,
            };
            if !on_inner_edge && allowed {
                snapshot.push(p);
            }
        }
    }

    Ok(LocalDomain {
        center: i,
        coarse_cells,
        fine_cells,
        members,
        snapshot,
        boundary,
        bounds: [x0, x1, y0, y1],
    })
}

/// Orderings along the contact boundary, left to right.
#[derive(Debug, Clone)]
pub struct ContactTrace {
    pub fine_nodes: Vec<usize>,
    pub coarse_nodes: Vec<usize>,
    pub edge_lengths: Vec<f64>,
}

pub fn contact_trace(g: &GridPair) -> ContactTrace {
    let n = g.fine_cells_per_side();
    let fine_nodes: Vec<usize> = (0..=n).map(|ix| g.fine_node(ix, 0)).collect();
    let coarse_nodes: Vec<usize> = (0..=g.nc()).map(|jx| g.coarse_node(jx, 0)).collect();
    let edge_lengths = fine_nodes
        .windows(2)
        .map(|w| g.fine_coord(w[1])[0] - g.fine_coord(w[0])[0])
        .collect();
    ContactTrace {
        fine_nodes,
        coarse_nodes,
        edge_lengths,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn default_scale_counts() {
        let g = build_grids(16, 16).unwrap();
        assert_eq!(g.fine_cells_per_side(), 256);
        assert_eq!(g.n_fine_nodes(), 66049);
        assert_eq!(g.n_coarse_nodes(), 289);
        assert_eq!(g.n_fine_cells(), 65536);
    }

    #[test]
    fn minimal_grid() {
        let g = build_grids(1, 1).unwrap();
        assert_eq!(g.n_fine_nodes(), 4);
        assert_eq!(g.n_coarse_nodes(), 4);
        assert_eq!(g.n_fine_cells(), 1);
        assert_eq!(g.cell_nodes(0), [0, 1, 3, 2]);
    }

    #[test]
    fn rejects_zero_sizes() {
        assert!(matches!(build_grids(0, 3), Err(Error::InvalidGrid(_))));
        assert!(matches!(build_grids(3, 0), Err(Error::InvalidGrid(_))));
    }

    #[test]
    fn coarse_to_fine_by_enumeration() {
        let g = build_grids(2, 3).unwrap();
        assert_eq!(g.n_fine_nodes(), 49);
        assert_eq!(g.n_coarse_nodes(), 9);
        let c = g.coarse_node(1, 1);
        assert_eq!(g.fine_lattice(g.coarse_to_fine(c)), (3, 3));
        // every coarse node coincides with exactly one fine node
        for c in 0..g.n_coarse_nodes() {
            let hits = (0..g.n_fine_nodes())
                .filter(|&f| g.fine_coord(f) == g.coarse_coord(c))
                .count();
            assert_eq!(hits, 1);
            assert_eq!(g.coarse_tag(c), g.fine_tag(g.coarse_to_fine(c)));
        }
    }

    #[test]
    fn corner_tags() {
        let g = build_grids(3, 2).unwrap();
        let n = g.fine_cells_per_side();
        assert_eq!(g.fine_tag(g.fine_node(0, 0)), BoundaryTag::Contact);
        assert_eq!(g.fine_tag(g.fine_node(n, 0)), BoundaryTag::Contact);
        assert_eq!(g.fine_tag(g.fine_node(0, n)), BoundaryTag::Dirichlet);
        assert_eq!(g.fine_tag(g.fine_node(n, n)), BoundaryTag::Dirichlet);
        assert_eq!(g.fine_tag(g.fine_node(0, 1)), BoundaryTag::Neumann);
        assert_eq!(g.fine_tag(g.fine_node(1, 1)), BoundaryTag::Interior);
    }

    #[test]
    fn interior_local_domain_counts() {
        let g = build_grids(16, 16).unwrap();
        let dom = local_domain(&g, g.coarse_node(8, 8)).unwrap();
        assert_eq!(dom.coarse_cells.len(), 4);
        assert_eq!(dom.members.len(), 33 * 33);
        assert_eq!(dom.snapshot.len(), 31 * 31);
        assert_eq!(dom.boundary.len(), 4 * 32);
    }

    #[test]
    fn corner_and_edge_domains() {
        let g = build_grids(4, 4).unwrap();
        for (jx, jy) in [(0, 0), (4, 0), (0, 4), (4, 4)] {
            let dom = local_domain(&g, g.coarse_node(jx, jy)).unwrap();
            assert_eq!(dom.coarse_cells.len(), 1);
        }
        let dom = local_domain(&g, g.coarse_node(2, 0)).unwrap();
        assert_eq!(dom.coarse_cells.len(), 2);
        assert!(dom.touches_contact());
        let contact: Vec<_> = dom
            .boundary
            .iter()
            .filter(|&&p| g.fine_tag(p) == BoundaryTag::Contact)
            .collect();
        assert_eq!(contact.len(), 9);
        // contact nodes never carry snapshot functions
        assert!(dom.snapshot.iter().all(|&p| g.fine_tag(p) != BoundaryTag::Contact));

        // Neumann-edge nodes of a left-edge patch are kept, except at the
        // patch's top/bottom lines where the hat leaks out of the patch
        let dom = local_domain(&g, g.coarse_node(0, 2)).unwrap();
        assert_eq!(dom.coarse_cells.len(), 2);
        assert_eq!(dom.snapshot.len(), 4 * 7);

        // an interior patch touching the Neumann edge keeps only interior nodes
        let dom = local_domain(&g, g.coarse_node(1, 2)).unwrap();
        assert_eq!(dom.snapshot.len(), 7 * 7);
        assert!(dom.snapshot.iter().all(|&p| g.fine_tag(p) == BoundaryTag::Interior));
    }

    #[test]
    fn out_of_range_domain() {
        let g = build_grids(2, 2).unwrap();
        assert!(matches!(
            local_domain(&g, 9),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn domain_invariants() {
        let g = build_grids(3, 3).unwrap();
        let n = g.fine_cells_per_side();
        let mut covered = BTreeSet::new();
        for i in 0..g.n_coarse_nodes() {
            let dom = local_domain(&g, i).unwrap();
            let members: BTreeSet<_> = dom.members.iter().copied().collect();
            let fine_cells: BTreeSet<_> = dom.fine_cells.iter().copied().collect();
            for &p in &dom.snapshot {
                assert!(members.contains(&p));
                // every fine cell touching a snapshot node is in the patch
                let (ix, iy) = g.fine_lattice(p);
                for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    if ix >= dx && iy >= dy && ix - dx < n && iy - dy < n {
                        assert!(fine_cells.contains(&g.fine_cell(ix - dx, iy - dy)));
                    }
                }
            }
            covered.extend(members);
        }
        assert_eq!(covered.len(), g.n_fine_nodes());
        // every fine cell lies in exactly one coarse cell
        let mut per_coarse = vec![0; g.nc() * g.nc()];
        for c in 0..g.n_fine_cells() {
            per_coarse[g.coarse_cell_of(c)] += 1;
        }
        assert!(per_coarse.iter().all(|&k| k == 9));
    }

    #[test]
    fn contact_trace_counts() {
        let g = build_grids(16, 16).unwrap();
        let t = contact_trace(&g);
        assert_eq!(t.fine_nodes.len(), 257);
        assert_eq!(t.coarse_nodes.len(), 17);
        assert!(t.edge_lengths.iter().all(|&l| (l - 1.0 / 256.0).abs() < 1e-15));

        let g = build_grids(1, 1).unwrap();
        let t = contact_trace(&g);
        assert_eq!(t.fine_nodes, vec![0, 1]);
        assert_eq!(t.coarse_nodes, vec![0, 1]);
    }

    #[test]
    fn contact_trace_matches_tags() {
        let g = build_grids(3, 2).unwrap();
        let t = contact_trace(&g);
        let tagged: Vec<_> = (0..g.n_fine_nodes())
            .filter(|&p| g.fine_tag(p) == BoundaryTag::Contact)
            .collect();
        assert_eq!(t.fine_nodes, tagged);
        assert!(t
            .fine_nodes
            .windows(2)
            .all(|w| g.fine_coord(w[0])[0] < g.fine_coord(w[1])[0]));
        assert_eq!(g.coarse_to_fine(t.coarse_nodes[0]), t.fine_nodes[0]);
        assert_eq!(
            g.coarse_to_fine(*t.coarse_nodes.last().unwrap()),
            *t.fine_nodes.last().unwrap()
        );
    }
}
