//! Meshes on intervals and axis-aligned rectangles, outward normals, and the
//! observed boundary part Γ0 = { x ∈ Γ : (x − x0)·ν(x) > 0 }.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("domain dimension must be 1 or 2, got {0}")]
    BadDim(usize),
    #[error("lower corner must be strictly below upper corner on axis {axis}: {lo} >= {hi}")]
    EmptyAxis { axis: usize, lo: f64, hi: f64 },
    #[error(
        "observer point x0 must lie strictly outside the closed domain; \
         signed distance to the boundary is {signed_dist} (> 0 required)"
    )]
    ObserverInside { signed_dist: f64 },
    #[error("need at least 4 cells per axis, got {0}")]
    TooCoarse(usize),
    #[error("grid index {0:?} is not a boundary node")]
    NotBoundary(Vec<usize>),
    #[error("grid index {0:?} is outside the grid")]
    OutOfGrid(Vec<usize>),
}

/// Interval or axis-aligned rectangle with an observer point outside its closure.
#[derive(Debug, Clone)]
pub struct Domain {
    lo: Vec<f64>,
    hi: Vec<f64>,
    x0: Vec<f64>,
}

impl Domain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, x0: Vec<f64>) -> Result<Self, GeometryError> {
        let dim = lo.len();
        if !(1..=2).contains(&dim) || hi.len() != dim || x0.len() != dim {
            return Err(GeometryError::BadDim(dim.max(hi.len()).max(x0.len())));
        }
        for d in 0..dim {
            if !(lo[d] < hi[d]) {
                return Err(GeometryError::EmptyAxis { axis: d, lo: lo[d], hi: hi[d] });
            }
        }
        // signed distance of x0 to the box boundary: positive outside, <= 0 on/inside
        let signed_dist = (0..dim)
            .map(|d| (lo[d] - x0[d]).max(x0[d] - hi[d]))
            .fold(f64::NEG_INFINITY, f64::max);
        if !(signed_dist > 0.0) {
            return Err(GeometryError::ObserverInside { signed_dist });
        }
        Ok(Self { lo, hi, x0 })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }
    pub fn lo(&self) -> &[f64] {
        &self.lo
    }
    pub fn hi(&self) -> &[f64] {
        &self.hi
    }
    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    /// Exact extremes of |x − x0|² over the closed box (min at the clamped
    /// projection of x0, max at the farthest corner).
    pub fn sq_dist_extremes(&self) -> (f64, f64) {
        let mut min = 0.0;
        let mut max = 0.0;
        for d in 0..self.dim() {
            let c = self.x0[d].clamp(self.lo[d], self.hi[d]);
            min += (c - self.x0[d]).powi(2);
            let far = if (self.x0[d] - self.lo[d]).abs() > (self.x0[d] - self.hi[d]).abs() {
                self.lo[d]
            } else {
                self.hi[d]
            };
            max += (far - self.x0[d]).powi(2);
        }
        (min, max)
    }
}

/// Flat index of a full-grid node; interior nodes also carry an index into
/// the interior ordering used by field vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Interior(usize),
    Boundary(usize),
}

#[derive(Debug, Clone)]
pub struct BoundaryNode {
    /// Grid multi-index of the node (length = dim).
    pub grid: Vec<usize>,
    pub position: Vec<f64>,
    /// Outward unit normal of the face this node is assigned to.
    pub normal: Vec<f64>,
    /// Strictly positive dot product (x − x0)·ν; ties are excluded.
    pub in_gamma0: bool,
    /// Surface quadrature weight (1 in 1D, tangential spacing in 2D).
    pub weight: f64,
    /// Face index 2d+0 = {x_d = lo_d}, 2d+1 = {x_d = hi_d}; corners are
    /// assigned to their lexicographically smallest face.
    pub face: usize,
    /// Interior-ordering indices of the first and second nodes stepping
    /// inward along −ν; `None` when the stencil lands on another boundary
    /// node (Dirichlet zero), which happens exactly at rectangle corners.
    pub stencil: [Option<usize>; 2],
}

/// Uniform tensor grid on a [`Domain`] with enumerated boundary.
#[derive(Debug, Clone)]
pub struct Mesh {
    domain: Domain,
    n: Vec<usize>,
    h: Vec<f64>,
    interior: Vec<Vec<usize>>,
    boundary: Vec<BoundaryNode>,
    cell_volume: f64,
}

/// Uniform mesh with `n` cells per axis; boundary nodes get normals and Γ0 flags.
pub fn build_mesh(domain: &Domain, n: &[usize]) -> Result<Mesh, GeometryError> {
    let dim = domain.dim();
    assert_eq!(n.len(), dim, "one cell count per axis");
    for &nd in n {
        if nd < 4 {
            return Err(GeometryError::TooCoarse(nd));
        }
    }
    let h: Vec<f64> = (0..dim).map(|d| (domain.hi[d] - domain.lo[d]) / n[d] as f64).collect();
    let cell_volume = h.iter().product();

    let node_pos = |grid: &[usize]| -> Vec<f64> {
        (0..dim).map(|d| domain.lo[d] + grid[d] as f64 * h[d]).collect()
    };
    let is_boundary = |grid: &[usize]| (0..dim).any(|d| grid[d] == 0 || grid[d] == n[d]);

    // interior ordering: lexicographic over grid indices
    let mut interior = Vec::new();
    match dim {
        1 => {
            for i in 1..n[0] {
                interior.push(vec![i]);
            }
        }
        2 => {
            for i in 1..n[0] {
                for j in 1..n[1] {
                    interior.push(vec![i, j]);
                }
            }
        }
        _ => unreachable!(),
    }
    let interior_index = |grid: &[usize]| -> Option<usize> {
        match dim {
            1 => {
                if grid[0] >= 1 && grid[0] < n[0] {
                    Some(grid[0] - 1)
                } else {
                    None
                }
            }
            2 => {
                if grid[0] >= 1 && grid[0] < n[0] && grid[1] >= 1 && grid[1] < n[1] {
                    Some((grid[0] - 1) * (n[1] - 1) + (grid[1] - 1))
                } else {
                    None
                }
            }
            _ => unreachable!(),
        }
    };

    // assigned face = smallest face index among the faces containing the node
    let assigned_face = |grid: &[usize]| -> usize {
        for d in 0..dim {
            if grid[d] == 0 {
                return 2 * d;
            }
            if grid[d] == n[d] {
                return 2 * d + 1;
            }
        }
        unreachable!("not a boundary node")
    };

    let mut boundary = Vec::new();
    let mut push_node = |grid: Vec<usize>| {
        let face = assigned_face(&grid);
        let d = face / 2;
        let sign = if face % 2 == 0 { -1.0 } else { 1.0 };
        let mut normal = vec![0.0; dim];
        normal[d] = sign;
        let position = node_pos(&grid);
        let dot: f64 =
            (0..dim).map(|k| (position[k] - domain.x0[k]) * normal[k]).sum();
        // two nodes stepping inward along -normal for the one-sided trace stencil
        let mut stencil = [None, None];
        for (step, slot) in [1usize, 2].iter().zip(stencil.iter_mut()) {
            let mut g = grid.clone();
            g[d] = if sign < 0.0 { grid[d] + step } else { grid[d] - step };
            if !is_boundary(&g) {
                *slot = interior_index(&g);
            }
        }
        let weight = if dim == 1 { 1.0 } else { h[1 - d] };
        boundary.push(BoundaryNode {
            grid,
            position,
            normal,
            in_gamma0: dot > 0.0,
            weight,
            face,
            stencil,
        });
    };

    match dim {
        1 => {
            push_node(vec![0]);
            push_node(vec![n[0]]);
        }
        2 => {
            // enumerate per face in face order; corners only under their assigned face
            for face in 0..4 {
                let d = face / 2;
                let fixed = if face % 2 == 0 { 0 } else { n[d] };
                let od = 1 - d;
                for k in 0..=n[od] {
                    let mut grid = vec![0; 2];
                    grid[d] = fixed;
                    grid[od] = k;
                    if assigned_face(&grid) == face {
                        push_node(grid);
                    }
                }
            }
        }
        _ => unreachable!(),
    }

    Ok(Mesh { domain: domain.clone(), n: n.to_vec(), h, interior, boundary, cell_volume })
}

impl Mesh {
    pub fn domain(&self) -> &Domain {
        &self.domain
    }
    pub fn dim(&self) -> usize {
        self.domain.dim()
    }
    pub fn cells(&self) -> &[usize] {
        &self.n
    }
    pub fn spacing(&self) -> &[f64] {
        &self.h
    }
    pub fn cell_volume(&self) -> f64 {
        self.cell_volume
    }
    pub fn interior_count(&self) -> usize {
        self.interior.len()
    }
    pub fn interior_grid(&self, idx: usize) -> &[usize] {
        &self.interior[idx]
    }
    pub fn interior_position(&self, idx: usize) -> Vec<f64> {
        let g = &self.interior[idx];
        (0..self.dim()).map(|d| self.domain.lo[d] + g[d] as f64 * self.h[d]).collect()
    }
    pub fn boundary(&self) -> &[BoundaryNode] {
        &self.boundary
    }

    /// Neighbor of interior node `idx` one step along axis `d` (`dir` = ±1);
    /// `None` when the neighbor is a boundary node (field value zero there).
    pub fn neighbor(&self, idx: usize, d: usize, dir: isize) -> Option<usize> {
        let g = &self.interior[idx];
        let gi = g[d] as isize + dir;
        if gi < 1 || gi as usize >= self.n[d] {
            return None;
        }
        match self.dim() {
            1 => Some(gi as usize - 1),
            2 => {
                let (i, j) = if d == 0 { (gi as usize, g[1]) } else { (g[0], gi as usize) };
                Some((i - 1) * (self.n[1] - 1) + (j - 1))
            }
            _ => unreachable!(),
        }
    }

    pub fn classify(&self, grid: &[usize]) -> Result<NodeKind, GeometryError> {
        for d in 0..self.dim() {
            if grid[d] > self.n[d] {
                return Err(GeometryError::OutOfGrid(grid.to_vec()));
            }
        }
        if (0..self.dim()).any(|d| grid[d] == 0 || grid[d] == self.n[d]) {
            let pos = self
                .boundary
                .iter()
                .position(|b| b.grid == grid)
                .expect("boundary node enumerated");
            Ok(NodeKind::Boundary(pos))
        } else {
            let idx = match self.dim() {
                1 => grid[0] - 1,
                2 => (grid[0] - 1) * (self.n[1] - 1) + (grid[1] - 1),
                _ => unreachable!(),
            };
            Ok(NodeKind::Interior(idx))
        }
    }
}

/// Boundary node ids (into `mesh.boundary()`) with the Γ0 flag set.
pub fn gamma0_nodes(mesh: &Mesh) -> Vec<usize> {
    mesh.boundary()
        .iter()
        .enumerate()
        .filter_map(|(i, b)| b.in_gamma0.then_some(i))
        .collect()
}

/// Outward unit normal at a boundary grid index; interior indices are rejected.
pub fn boundary_normal(mesh: &Mesh, grid: &[usize]) -> Result<Vec<f64>, GeometryError> {
    match mesh.classify(grid)? {
        NodeKind::Boundary(i) => Ok(mesh.boundary()[i].normal.clone()),
        NodeKind::Interior(_) => Err(GeometryError::NotBoundary(grid.to_vec())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn interval(x0: f64) -> Domain {
        Domain::new(vec![0.0], vec![1.0], vec![x0]).unwrap()
    }

    #[test]
    fn rejects_observer_inside() {
        let err = Domain::new(vec![0.0, 0.0], vec![1.0, 1.0], vec![0.5, 0.5]).unwrap_err();
        match err {
            GeometryError::ObserverInside { signed_dist } => assert_eq!(signed_dist, -0.5),
            other => panic!("unexpected error {other}"),
        }
        // on the closure is also rejected
        assert!(Domain::new(vec![0.0], vec![1.0], vec![1.0]).is_err());
    }

    #[test]
    fn interval_mesh_basics() {
        let mesh = build_mesh(&interval(-1.0), &[8]).unwrap();
        assert_eq!(mesh.spacing(), &[0.125]);
        assert_eq!(mesh.interior_count(), 7);
        let normals: Vec<f64> = mesh.boundary().iter().map(|b| b.normal[0]).collect();
        assert_eq!(normals, vec![-1.0, 1.0]);
        // x0 = -1: left endpoint has (0 - (-1))·(-1) = -1 < 0, right has (1+1)·1 = 2 > 0
        let g0 = gamma0_nodes(&mesh);
        assert_eq!(g0.len(), 1);
        assert_eq!(mesh.boundary()[g0[0]].position, vec![1.0]);
    }

    #[test]
    fn interval_gamma0_flips_with_observer_side() {
        let mesh = build_mesh(&interval(2.0), &[8]).unwrap();
        let g0 = gamma0_nodes(&mesh);
        assert_eq!(g0.len(), 1);
        assert_eq!(mesh.boundary()[g0[0]].position, vec![0.0]);
    }

    #[test]
    fn too_coarse_rejected() {
        assert!(build_mesh(&interval(-1.0), &[3]).is_err());
    }

    #[test]
    fn square_boundary_enumeration_n4() {
        let dom = Domain::new(vec![0.0, 0.0], vec![1.0, 1.0], vec![-1.0, -1.0]).unwrap();
        let mesh = build_mesh(&dom, &[4, 4]).unwrap();
        // 4(n+1) - 4 corners = 4n = 16 boundary nodes; every node on exactly one face
        assert_eq!(mesh.boundary().len(), 16);
        assert_eq!(mesh.interior_count(), 9);
        for b in mesh.boundary() {
            let norm: f64 = b.normal.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert_eq!(norm, 1.0);
            assert_eq!(b.weight, 0.25);
        }
        // total surface measure = perimeter
        let total: f64 = mesh.boundary().iter().map(|b| b.weight).sum();
        assert!((total - 4.0).abs() < 1e-14);
        // corner (0,0) is assigned to face 0 (x = lo)
        let corner = mesh.boundary().iter().find(|b| b.grid == vec![0, 0]).unwrap();
        assert_eq!(corner.face, 0);
        assert_eq!(corner.normal, vec![-1.0, 0.0]);
        // corner stencils land on other boundary nodes -> None
        assert_eq!(corner.stencil, [None, None]);
    }

    #[test]
    fn square_gamma0_by_face_dot_products() {
        // x0 = (-1, 0.5): faces x=1, y=0, y=1 have (x - x0)·ν = 2, 0.5, 0.5 > 0;
        // face x=0 has -1 < 0
        let dom = Domain::new(vec![0.0, 0.0], vec![1.0, 1.0], vec![-1.0, 0.5]).unwrap();
        let mesh = build_mesh(&dom, &[4, 4]).unwrap();
        for b in mesh.boundary() {
            let expect = b.face != 0;
            assert_eq!(b.in_gamma0, expect, "node {:?} face {}", b.grid, b.face);
        }
    }

    #[test]
    fn gamma0_tie_excluded() {
        // x0 = (-1, 0): bottom face y=0 has (x - x0)·ν = 0 exactly -> excluded
        let dom = Domain::new(vec![0.0, 0.0], vec![1.0, 1.0], vec![-1.0, 0.0]).unwrap();
        let mesh = build_mesh(&dom, &[4, 4]).unwrap();
        for b in mesh.boundary() {
            if b.face == 2 {
                assert!(!b.in_gamma0);
            }
        }
    }

    #[test]
    fn normal_lookup_errors_on_interior() {
        let mesh = build_mesh(&interval(-1.0), &[8]).unwrap();
        assert_eq!(boundary_normal(&mesh, &[8]).unwrap(), vec![1.0]);
        assert!(matches!(boundary_normal(&mesh, &[3]), Err(GeometryError::NotBoundary(_))));
        assert!(matches!(boundary_normal(&mesh, &[9]), Err(GeometryError::OutOfGrid(_))));
    }

    #[test]
    fn gamma0_stable_under_refinement_and_observer_recession() {
        let dom = Domain::new(vec![0.0, 0.0], vec![1.0, 1.0], vec![-0.3, 0.7]).unwrap();
        let flags = |mesh: &Mesh| -> Vec<(usize, bool)> {
            let mut per_face = vec![(0usize, true); 4];
            for b in mesh.boundary() {
                per_face[b.face] = (b.face, b.in_gamma0);
            }
            per_face
        };
        let coarse = flags(&build_mesh(&dom, &[4, 4]).unwrap());
        let fine = flags(&build_mesh(&dom, &[8, 8]).unwrap());
        assert_eq!(coarse, fine);
        // moving x0 further along the same ray keeps every face flag
        let far = Domain::new(vec![0.0, 0.0], vec![1.0, 1.0], vec![-0.6, 0.9]).unwrap();
        let moved = flags(&build_mesh(&far, &[4, 4]).unwrap());
        assert_eq!(coarse, moved);
    }

    #[test]
    fn sq_dist_extremes_match_hand_values() {
        let (m, big) = interval(-1.0).sq_dist_extremes();
        assert_eq!((m, big), (1.0, 4.0));
        let (m, big) = interval(-10.0).sq_dist_extremes();
        assert_eq!((m, big), (100.0, 121.0));
        // projection of x0 onto a face interior
        let dom = Domain::new(vec![0.0, 0.0], vec![1.0, 1.0], vec![-1.0, 0.5]).unwrap();
        let (m, big) = dom.sq_dist_extremes();
        assert_eq!(m, 1.0);
        assert_eq!(big, 4.25); // corner (1,1): 4 + 0.25
    }
}
