//! Hybridizable discontinuous Galerkin solvers on the computational mesh.
//!
//! Every problem is solved in mixed form with three local fields per element
//! (two flux components and the primal variable) and one trace field per
//! skeleton edge. The local fields are eliminated element by element; the
//! condensed system couples only the trace unknowns.
//!
//! Boundary conditions never see the curved boundary directly. Dirichlet
//! data are transferred: the trace row of a boundary edge equates the edge
//! trace with the datum at the transferred points plus the path integral of
//! the extrapolated flux, so the row couples back to the flux unknowns of the
//! adjacent element and is assembled monolithically into the condensed
//! matrix. Neumann data enter the flux-balance row of the edge as a weighted
//! right-hand side.
//!
//! The same machinery serves three problems: the state equation, its tracking
//! adjoint (same matrix, different loads), and the two decoupled scalar
//! problems that make up the boundary-deformation solve.

use std::sync::Arc;

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;
use nalgebra::{DMatrix, DVector, Dyn};
use rayon::prelude::*;

use crate::basis::{EdgeBasis, ElementFrame, ReferenceBasis};
use crate::mesh::ComputationalMesh;
use crate::quadrature::{IntervalRule, TriangleRule};
use crate::transfer::{ExtensionPatch, TransferMap};
use crate::{Error, Point2, Result, Vector2};

/// Scalar data field on the hold-all domain.
///
/// Fields are evaluated on the computational mesh, along transfer paths, and
/// on extension patches, so they must be defined in a neighborhood of the
/// closed domain, not just on the mesh.
pub type ScalarField = Arc<dyn Fn(Point2) -> f64 + Send + Sync>;
/// Vector-valued data field on the hold-all domain.
pub type VectorField = Arc<dyn Fn(Point2) -> Vector2 + Send + Sync>;

/// Coefficient and data fields of the tracking problem.
#[derive(Clone)]
pub struct ProblemData {
    /// Diffusion coefficient; must be positive.
    pub a: ScalarField,
    /// Volume source of the state equation.
    pub f: ScalarField,
    /// Dirichlet datum of the state equation, evaluated at transferred points.
    pub g: ScalarField,
    /// Gradient of the Dirichlet datum; enters the shape-derivative density.
    pub grad_g: VectorField,
    /// Tracking target.
    pub y_target: ScalarField,
    /// Dirichlet datum of the adjoint equation; `None` means zero, which is
    /// the tracking adjoint. Manufactured-solution studies set it.
    pub adjoint_g: Option<ScalarField>,
}

/// Discretization parameters of the HDG solvers.
#[derive(Clone, Debug)]
pub struct HdgConfig {
    /// Polynomial degree of the local and trace spaces, at least 1.
    pub k: usize,
    /// Stabilization parameter, positive.
    pub tau: f64,
    /// Polynomial degree integrated exactly by the element volume rule.
    pub volume_degree: usize,
    /// Polynomial degree integrated exactly by the edge rule. The number of
    /// edge nodes must match the transfer map's nodes per edge.
    pub edge_degree: usize,
    /// Gauss points per transfer-path integral.
    pub path_points: usize,
    /// Relative residual above which the condensed solve is refined.
    pub refine_tol: f64,
}

impl HdgConfig {
    pub fn new(k: usize, tau: f64) -> Self {
        HdgConfig {
            k,
            tau,
            volume_degree: 2 * k + 2,
            edge_degree: 2 * k + 2,
            path_points: k + 2,
            refine_tol: 1e-10,
        }
    }

    /// Quadrature nodes per edge; the transfer map must be built with the
    /// same count so edge nodes carry transfer paths.
    pub fn edge_nodes(&self) -> usize {
        self.edge_degree / 2 + 1
    }
}

/// Discrete solution of one scalar HDG problem.
///
/// Element fields are coefficient vectors in the orthonormal element basis
/// (flux stores the x component, then the y component); traces are
/// coefficients in the orthonormal edge basis. Because the bases are stored
/// in monomial form, element fields can be evaluated at any point of the
/// plane, which is how values on extension patches are obtained.
#[derive(Clone)]
pub struct ScalarSolution {
    pub k: usize,
    /// Per element, `2 * nb` flux coefficients.
    pub flux: Vec<Vec<f64>>,
    /// Per element, `nb` primal coefficients.
    pub primal: Vec<Vec<f64>>,
    /// Per edge, `k + 1` trace coefficients.
    pub trace: Vec<Vec<f64>>,
    basis: Arc<ReferenceBasis>,
}

impl ScalarSolution {
    pub fn basis(&self) -> &ReferenceBasis {
        &self.basis
    }

    /// Primal value at a physical point, extrapolating if the point lies
    /// outside the element.
    pub fn primal_at(&self, mesh: &ComputationalMesh, elem: usize, x: Point2) -> f64 {
        let fr = frame_of(mesh, elem);
        fr.eval_coeffs(&self.basis, &self.primal[elem], x)
    }

    /// Primal gradient at a physical point.
    pub fn primal_grad_at(&self, mesh: &ComputationalMesh, elem: usize, x: Point2) -> Vector2 {
        let fr = frame_of(mesh, elem);
        fr.grad_coeffs(&self.basis, &self.primal[elem], x)
    }

    /// Flux vector at a physical point, extrapolating if needed.
    pub fn flux_at(&self, mesh: &ComputationalMesh, elem: usize, x: Point2) -> Vector2 {
        let fr = frame_of(mesh, elem);
        let nb = self.basis.len();
        let fx = fr.eval_coeffs(&self.basis, &self.flux[elem][..nb], x);
        let fy = fr.eval_coeffs(&self.basis, &self.flux[elem][nb..], x);
        Vector2::new(fx, fy)
    }

    /// Trace value at parameter `t` of the edge's canonical orientation.
    pub fn trace_at(&self, mesh: &ComputationalMesh, edge: usize, t: f64) -> f64 {
        let eb = EdgeBasis::new(self.k, mesh.edges[edge].length);
        self.trace[edge].iter().enumerate().map(|(m, c)| c * eb.value(m, t)).sum()
    }

    /// `L^2` norm of the primal field over the mesh (orthonormal basis).
    pub fn primal_norm(&self) -> f64 {
        self.primal.iter().flatten().map(|c| c * c).sum::<f64>().sqrt()
    }

    /// `L^2` norm of the flux field over the mesh.
    pub fn flux_norm(&self) -> f64 {
        self.flux.iter().flatten().map(|c| c * c).sum::<f64>().sqrt()
    }
}

/// Discrete solution of the deformation problem: one scalar solution per
/// velocity component, with the flux field holding the negative row of
/// the velocity gradient.
#[derive(Clone)]
pub struct TensorSolution {
    pub components: [ScalarSolution; 2],
}

impl TensorSolution {
    /// Velocity vector at a physical point, extrapolating if needed.
    pub fn velocity_at(&self, mesh: &ComputationalMesh, elem: usize, x: Point2) -> Vector2 {
        Vector2::new(
            self.components[0].primal_at(mesh, elem, x),
            self.components[1].primal_at(mesh, elem, x),
        )
    }

    /// Velocity at a physical point blended over the nearby elements with a
    /// compactly supported weight, so the value varies continuously as `x`
    /// crosses the extrapolation watershed between two boundary elements.
    pub fn velocity_blended(&self, mesh: &ComputationalMesh, x: Point2) -> Vector2 {
        let radius = 1.5 * mesh.background.h();
        let near = mesh.elements_within(x, radius);
        if near.is_empty() {
            return self.velocity_at(mesh, mesh.nearest_element(x), x);
        }
        let mut acc = Vector2::zeros();
        let mut wsum = 0.0;
        for (ke, d) in near {
            let t = d / radius;
            let w = (1.0 - t).powi(4) * (4.0 * t + 1.0);
            acc += self.velocity_at(mesh, ke, x) * w;
            wsum += w;
        }
        acc / wsum
    }
}

fn frame_of(mesh: &ComputationalMesh, elem: usize) -> ElementFrame {
    let v = &mesh.elements[elem].verts;
    ElementFrame::new(v[0], v[1], v[2])
}

fn elem_diameter(mesh: &ComputationalMesh, elem: usize) -> f64 {
    let v = &mesh.elements[elem].verts;
    (v[1] - v[0]).norm().max((v[2] - v[1]).norm()).max((v[0] - v[2]).norm())
}

/// Per-edge quadrature in the canonical parameterization, with tabulated
/// trace basis values.
struct EdgeQuad {
    params: Vec<f64>,
    points: Vec<Point2>,
    /// Weights scaled by the edge length.
    weights: Vec<f64>,
    /// `n_q x (k + 1)` trace basis values.
    psi: DMatrix<f64>,
}

fn edge_quads(mesh: &ComputationalMesh, k: usize, n_nodes: usize) -> Vec<EdgeQuad> {
    let rule = IntervalRule::gauss(n_nodes);
    mesh.edges
        .iter()
        .map(|e| {
            let eb = EdgeBasis::new(k, e.length);
            let n_q = rule.len();
            let mut psi = DMatrix::zeros(n_q, k + 1);
            let mut points = Vec::with_capacity(n_q);
            let mut weights = Vec::with_capacity(n_q);
            for (q, (&t, &w)) in rule.nodes.iter().zip(&rule.weights).enumerate() {
                points.push(e.point_at(t));
                weights.push(w * e.length);
                for m in 0..=k {
                    psi[(q, m)] = eb.value(m, t);
                }
            }
            EdgeQuad { params: rule.nodes.clone(), points, weights, psi }
        })
        .collect()
}

fn elem_side_edges(mesh: &ComputationalMesh) -> Vec<[u32; 3]> {
    let mut out = vec![[u32::MAX; 3]; mesh.elements.len()];
    for (ei, e) in mesh.edges.iter().enumerate() {
        out[e.side_a.elem as usize][e.side_a.local as usize] = ei as u32;
        if let Some(sb) = e.side_b {
            out[sb.elem as usize][sb.local as usize] = ei as u32;
        }
    }
    out
}

/// Element volume quadrature with tabulated basis values.
struct ElemQuad {
    points: Vec<Point2>,
    weights: Vec<f64>,
    /// `n_q x nb` basis values.
    vals: DMatrix<f64>,
}

/// Local blocks of one element.
///
/// With `U = [q_x; q_y; u]` the local unknowns and `lambda` the stacked
/// traces of the three sides, the local equations read
/// `m_loc * U = load + coupling * lambda`, and the numerical-flux pairing
/// of side `l` against the edge test functions is `flux_rows[l] * U`.
struct LocalBlocks {
    m_loc: DMatrix<f64>,
    coupling: DMatrix<f64>,
    flux_rows: [DMatrix<f64>; 3],
    quad: ElemQuad,
}

fn element_blocks(
    mesh: &ComputationalMesh,
    elem: usize,
    basis: &ReferenceBasis,
    cfg: &HdgConfig,
    a_inv: &(dyn Fn(Point2) -> f64 + Sync),
    equads: &[EdgeQuad],
    side_edges: &[u32; 3],
) -> LocalBlocks {
    let nb = basis.len();
    let m = cfg.k + 1;
    let fr = frame_of(mesh, elem);
    let el = &mesh.elements[elem];

    let tri = TriangleRule::with_degree(cfg.volume_degree);
    let n_q = tri.len();
    let mut points = Vec::with_capacity(n_q);
    let mut weights = Vec::with_capacity(n_q);
    let mut vals = DMatrix::zeros(n_q, nb);
    let mut grads = vec![Vector2::zeros(); n_q * nb];
    for (g, (&(r, s), &w)) in tri.points.iter().zip(&tri.weights).enumerate() {
        let p = fr.to_physical(r, s);
        points.push(p);
        weights.push(w * fr.det_jac);
        for i in 0..nb {
            vals[(g, i)] = fr.value(basis, i, p);
            grads[g * nb + i] = fr.gradient(basis, i, p);
        }
    }

    let mut a_mass = DMatrix::<f64>::zeros(nb, nb);
    let mut c0x = DMatrix::<f64>::zeros(nb, nb);
    let mut c0y = DMatrix::<f64>::zeros(nb, nb);
    for g in 0..n_q {
        let w = weights[g];
        let wa = w * a_inv(points[g]);
        for i in 0..nb {
            let vi = vals[(g, i)];
            let gi = grads[g * nb + i];
            for j in 0..nb {
                let vj = vals[(g, j)];
                a_mass[(i, j)] += wa * vi * vj;
                c0x[(i, j)] += w * vj * gi.x;
                c0y[(i, j)] += w * vj * gi.y;
            }
        }
    }

    let mut m_loc = DMatrix::zeros(3 * nb, 3 * nb);
    for i in 0..nb {
        for j in 0..nb {
            m_loc[(i, j)] = a_mass[(i, j)];
            m_loc[(nb + i, nb + j)] = a_mass[(i, j)];
            m_loc[(i, 2 * nb + j)] = -c0x[(i, j)];
            m_loc[(nb + i, 2 * nb + j)] = -c0y[(i, j)];
            m_loc[(2 * nb + i, j)] = -c0x[(i, j)];
            m_loc[(2 * nb + i, nb + j)] = -c0y[(i, j)];
        }
    }

    let mut coupling = DMatrix::zeros(3 * nb, 3 * m);
    let mut flux_rows: [DMatrix<f64>; 3] = [
        DMatrix::zeros(m, 3 * nb),
        DMatrix::zeros(m, 3 * nb),
        DMatrix::zeros(m, 3 * nb),
    ];
    for l in 0..3 {
        let eq = &equads[side_edges[l] as usize];
        let n = el.outward_normal(l);
        let mut mee = DMatrix::<f64>::zeros(nb, nb);
        let mut mpsi = DMatrix::<f64>::zeros(nb, m);
        for (q, &x_q) in eq.points.iter().enumerate() {
            let w = eq.weights[q];
            let phis: Vec<f64> = (0..nb).map(|i| fr.value(basis, i, x_q)).collect();
            for i in 0..nb {
                let wv = w * phis[i];
                for j in 0..nb {
                    mee[(i, j)] += wv * phis[j];
                }
                for r in 0..m {
                    mpsi[(i, r)] += wv * eq.psi[(q, r)];
                }
            }
        }
        for i in 0..nb {
            for j in 0..nb {
                m_loc[(2 * nb + i, j)] += n.x * mee[(i, j)];
                m_loc[(2 * nb + i, nb + j)] += n.y * mee[(i, j)];
                m_loc[(2 * nb + i, 2 * nb + j)] += cfg.tau * mee[(i, j)];
            }
            for r in 0..m {
                coupling[(i, l * m + r)] = -n.x * mpsi[(i, r)];
                coupling[(nb + i, l * m + r)] = -n.y * mpsi[(i, r)];
                coupling[(2 * nb + i, l * m + r)] = cfg.tau * mpsi[(i, r)];
            }
        }
        for r in 0..m {
            for j in 0..nb {
                flux_rows[l][(r, j)] = n.x * mpsi[(j, r)];
                flux_rows[l][(r, nb + j)] = n.y * mpsi[(j, r)];
                flux_rows[l][(r, 2 * nb + j)] = cfg.tau * mpsi[(j, r)];
            }
        }
    }

    LocalBlocks { m_loc, coupling, flux_rows, quad: ElemQuad { points, weights, vals } }
}

/// Trace row of the transferred flux of a Dirichlet boundary edge: the
/// `(k + 1) x 3 nb` pairing of the edge test functions with the path
/// integral of the extrapolated flux of the adjacent element.
fn t_hat_block(
    mesh: &ComputationalMesh,
    tm: &TransferMap,
    cfg: &HdgConfig,
    basis: &ReferenceBasis,
    path_weight: &(dyn Fn(Point2) -> f64 + Sync),
    edge: u32,
    elem: usize,
    eq: &EdgeQuad,
) -> DMatrix<f64> {
    let nb = basis.len();
    let m = cfg.k + 1;
    let fr = frame_of(mesh, elem);
    let rule = IntervalRule::gauss(cfg.path_points);
    let et = tm.edge_transfer(edge);
    let mut t_hat = DMatrix::zeros(m, 3 * nb);
    for (q, node) in et.nodes.iter().enumerate() {
        if node.l <= 0.0 {
            continue;
        }
        for (&u, &wg) in rule.nodes.iter().zip(&rule.weights) {
            let p = node.x + node.t * (u * node.l);
            let pw = wg * node.l * path_weight(p);
            for j in 0..nb {
                let phi = fr.value(basis, j, p);
                for r in 0..m {
                    let pref = eq.weights[q] * eq.psi[(q, r)] * pw * phi;
                    t_hat[(r, j)] += pref * node.t.x;
                    t_hat[(r, nb + j)] += pref * node.t.y;
                }
            }
        }
    }
    t_hat
}

struct ElemOp {
    lu: nalgebra::LU<f64, Dyn, Dyn>,
    x_mat: DMatrix<f64>,
    flux_rows: [DMatrix<f64>; 3],
    /// Per side, `flux_rows[l] * x_mat`: the condensed conservation row.
    row_coupling: [DMatrix<f64>; 3],
    edges: [u32; 3],
    quad: ElemQuad,
}

struct BoundaryOp {
    edge: u32,
    elem: u32,
    dirichlet: bool,
    /// Transferred-flux trace row; zero when the edge is Neumann.
    t_hat: DMatrix<f64>,
    /// Condensed row `t_hat * x_mat`.
    row_coupling: DMatrix<f64>,
    /// Transferred points of the edge nodes.
    feet: Vec<Point2>,
}

/// Condensed and factorized HDG operator for one coefficient field and one
/// boundary classification. The matrix is independent of the loads, so one
/// factorization serves several right-hand sides.
pub struct ScalarHdgSystem {
    cfg: HdgConfig,
    n_edges: usize,
    nb: usize,
    basis: Arc<ReferenceBasis>,
    elem_ops: Vec<ElemOp>,
    boundary: Vec<BoundaryOp>,
    /// Per edge id: true when the edge carries a transferred Dirichlet row.
    dirichlet_edge: Vec<bool>,
    edge_lengths: Vec<f64>,
    mat: SparseColMat<usize, f64>,
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
}

impl ScalarHdgSystem {
    /// Assembles and factorizes the condensed system.
    ///
    /// `a_inv` is the inverse coefficient in the flux mass matrix,
    /// `path_weight` the weight inside transfer-path integrals, and
    /// `dirichlet[i]` classifies `mesh.boundary_edges[i]`.
    pub fn build(
        mesh: &ComputationalMesh,
        tm: &TransferMap,
        cfg: &HdgConfig,
        a_inv: &(dyn Fn(Point2) -> f64 + Sync),
        path_weight: &(dyn Fn(Point2) -> f64 + Sync),
        dirichlet: &[bool],
    ) -> Result<Self> {
        if cfg.k < 1 {
            return Err(Error::InvalidInput("solver degree must be at least 1".into()));
        }
        if !(cfg.tau > 0.0) {
            return Err(Error::InvalidInput("stabilization parameter must be positive".into()));
        }
        if tm.q_per_edge != cfg.edge_nodes() {
            return Err(Error::InvalidInput(format!(
                "transfer map has {} nodes per edge but the edge rule needs {}",
                tm.q_per_edge,
                cfg.edge_nodes()
            )));
        }
        if dirichlet.len() != mesh.boundary_edges.len() {
            return Err(Error::InvalidInput(
                "boundary classification length does not match the boundary edge count".into(),
            ));
        }
        crate::init_thread_pool();

        let basis = Arc::new(ReferenceBasis::new(cfg.k));
        let nb = basis.len();
        let m = cfg.k + 1;
        let equads = edge_quads(mesh, cfg.k, cfg.edge_nodes());
        let side_edges = elem_side_edges(mesh);

        let mut dirichlet_edge = vec![false; mesh.edges.len()];
        for (bi, &e) in mesh.boundary_edges.iter().enumerate() {
            dirichlet_edge[e as usize] = dirichlet[bi];
        }

        let elem_ops: Vec<ElemOp> = (0..mesh.elements.len())
            .into_par_iter()
            .map(|ke| {
                let blocks =
                    element_blocks(mesh, ke, &basis, cfg, a_inv, &equads, &side_edges[ke]);
                let lu = blocks.m_loc.lu();
                let x_mat = lu
                    .solve(&blocks.coupling)
                    .ok_or_else(|| Error::Solver(format!("singular local matrix on element {ke}")))?;
                let row_coupling = [
                    &blocks.flux_rows[0] * &x_mat,
                    &blocks.flux_rows[1] * &x_mat,
                    &blocks.flux_rows[2] * &x_mat,
                ];
                Ok(ElemOp {
                    lu,
                    x_mat,
                    flux_rows: blocks.flux_rows,
                    row_coupling,
                    edges: side_edges[ke],
                    quad: blocks.quad,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let boundary: Vec<BoundaryOp> = mesh
            .boundary_edges
            .par_iter()
            .enumerate()
            .map(|(bi, &e)| {
                let elem = mesh.edges[e as usize].side_a.elem;
                let feet =
                    tm.edge_transfer(e).nodes.iter().map(|n| n.xbar).collect::<Vec<_>>();
                if dirichlet[bi] {
                    let t_hat = t_hat_block(
                        mesh,
                        tm,
                        cfg,
                        &basis,
                        path_weight,
                        e,
                        elem as usize,
                        &equads[e as usize],
                    );
                    let row_coupling = &t_hat * &elem_ops[elem as usize].x_mat;
                    BoundaryOp { edge: e, elem, dirichlet: true, t_hat, row_coupling, feet }
                } else {
                    BoundaryOp {
                        edge: e,
                        elem,
                        dirichlet: false,
                        t_hat: DMatrix::zeros(m, 3 * nb),
                        row_coupling: DMatrix::zeros(m, 3 * m),
                        feet,
                    }
                }
            })
            .collect();

        let n = mesh.edges.len() * m;
        let mut trips: Vec<Triplet<usize, usize, f64>> = Vec::new();
        for op in &elem_ops {
            for l in 0..3 {
                let e = op.edges[l] as usize;
                if dirichlet_edge[e] {
                    continue;
                }
                let row0 = e * m;
                for r in 0..m {
                    trips.push(Triplet::new(row0 + r, row0 + r, -cfg.tau));
                    for lc in 0..3 {
                        let col0 = op.edges[lc] as usize * m;
                        for c in 0..m {
                            let v = op.row_coupling[l][(r, lc * m + c)];
                            if v != 0.0 {
                                trips.push(Triplet::new(row0 + r, col0 + c, v));
                            }
                        }
                    }
                }
            }
        }
        for bop in boundary.iter().filter(|b| b.dirichlet) {
            let row0 = bop.edge as usize * m;
            let op = &elem_ops[bop.elem as usize];
            for r in 0..m {
                trips.push(Triplet::new(row0 + r, row0 + r, 1.0));
                for lc in 0..3 {
                    let col0 = op.edges[lc] as usize * m;
                    for c in 0..m {
                        let v = -bop.row_coupling[(r, lc * m + c)];
                        if v != 0.0 {
                            trips.push(Triplet::new(row0 + r, col0 + c, v));
                        }
                    }
                }
            }
        }

        let mat = SparseColMat::try_new_from_triplets(n, n, &trips)
            .map_err(|e| Error::Solver(format!("condensed matrix assembly failed: {e:?}")))?;
        let lu = mat
            .sp_lu()
            .map_err(|e| Error::Solver(format!("condensed factorization failed: {e:?}")))?;

        Ok(ScalarHdgSystem {
            cfg: cfg.clone(),
            n_edges: mesh.edges.len(),
            nb,
            basis,
            elem_ops,
            boundary,
            dirichlet_edge,
            edge_lengths: mesh.edges.iter().map(|e| e.length).collect(),
            mat,
            lu,
        })
    }

    /// Solves for the given loads.
    ///
    /// `source` is evaluated per element at volume quadrature points,
    /// `dirichlet_datum` at transferred points of Dirichlet edges, and
    /// `neumann_datum` per `(edge id, node index)` of Neumann edges.
    pub fn solve_with(
        &self,
        source: &dyn Fn(usize, Point2) -> f64,
        dirichlet_datum: &dyn Fn(Point2) -> f64,
        neumann_datum: &dyn Fn(u32, usize) -> f64,
    ) -> Result<ScalarSolution> {
        let nb = self.nb;
        let m = self.cfg.k + 1;
        let n = self.n_edges * m;

        let mut ys: Vec<DVector<f64>> = Vec::with_capacity(self.elem_ops.len());
        let mut rhs = Mat::<f64>::zeros(n, 1);
        for (ke, op) in self.elem_ops.iter().enumerate() {
            let mut load = DVector::zeros(3 * nb);
            for (g, &p) in op.quad.points.iter().enumerate() {
                let wf = op.quad.weights[g] * source(ke, p);
                for i in 0..nb {
                    load[2 * nb + i] += wf * op.quad.vals[(g, i)];
                }
            }
            let y = op
                .lu
                .solve(&load)
                .ok_or_else(|| Error::Solver(format!("singular local matrix on element {ke}")))?;
            for l in 0..3 {
                let e = op.edges[l] as usize;
                if self.dirichlet_edge[e] {
                    continue;
                }
                let contrib = &op.flux_rows[l] * &y;
                for r in 0..m {
                    rhs[(e * m + r, 0)] -= contrib[r];
                }
            }
            ys.push(y);
        }

        let equad_rule = IntervalRule::gauss(self.cfg.edge_nodes());
        for bop in &self.boundary {
            let row0 = bop.edge as usize * m;
            if bop.dirichlet {
                let contrib = &bop.t_hat * &ys[bop.elem as usize];
                for r in 0..m {
                    rhs[(row0 + r, 0)] += contrib[r];
                }
                let eb = self.edge_basis_for(bop.edge);
                for (q, (&t, &w)) in equad_rule.nodes.iter().zip(&equad_rule.weights).enumerate()
                {
                    let wval = w * eb.length * dirichlet_datum(bop.feet[q]);
                    for r in 0..m {
                        rhs[(row0 + r, 0)] += wval * eb.value(r, t);
                    }
                }
            } else {
                let eb = self.edge_basis_for(bop.edge);
                for (q, (&t, &w)) in equad_rule.nodes.iter().zip(&equad_rule.weights).enumerate()
                {
                    let wval = w * eb.length * neumann_datum(bop.edge, q);
                    for r in 0..m {
                        rhs[(row0 + r, 0)] += wval * eb.value(r, t);
                    }
                }
            }
        }

        let mut x = rhs.clone();
        self.lu.solve_in_place(&mut x);
        for _ in 0..2 {
            let res = residual(&self.mat, &x, &rhs);
            let rn = mat_max_abs(&res);
            let bn = mat_max_abs(&rhs).max(1e-300);
            if rn / bn <= self.cfg.refine_tol {
                break;
            }
            let mut dx = res;
            self.lu.solve_in_place(&mut dx);
            for i in 0..n {
                x[(i, 0)] += dx[(i, 0)];
            }
        }
        if !(0..n).all(|i| x[(i, 0)].is_finite()) {
            return Err(Error::Solver("condensed solve produced non-finite values".into()));
        }

        let mut flux = Vec::with_capacity(self.elem_ops.len());
        let mut primal = Vec::with_capacity(self.elem_ops.len());
        for (op, y) in self.elem_ops.iter().zip(&ys) {
            let mut lam = DVector::zeros(3 * m);
            for l in 0..3 {
                let e = op.edges[l] as usize;
                for r in 0..m {
                    lam[l * m + r] = x[(e * m + r, 0)];
                }
            }
            let u = &op.x_mat * &lam + y;
            flux.push(u.as_slice()[..2 * nb].to_vec());
            primal.push(u.as_slice()[2 * nb..].to_vec());
        }
        let mut trace = Vec::with_capacity(self.n_edges);
        for e in 0..self.n_edges {
            trace.push((0..m).map(|r| x[(e * m + r, 0)]).collect());
        }

        Ok(ScalarSolution { k: self.cfg.k, flux, primal, trace, basis: self.basis.clone() })
    }

    fn edge_basis_for(&self, edge: u32) -> EdgeBasis {
        EdgeBasis::new(self.cfg.k, self.edge_lengths[edge as usize])
    }
}

fn residual(a: &SparseColMat<usize, f64>, x: &Mat<f64>, b: &Mat<f64>) -> Mat<f64> {
    let mut r = b.clone();
    let ri = a.row_idx();
    let vals = a.val();
    for j in 0..a.ncols() {
        let xj = x[(j, 0)];
        if xj == 0.0 {
            continue;
        }
        for idx in a.col_range(j) {
            r[(ri[idx], 0)] -= vals[idx] * xj;
        }
    }
    r
}

fn mat_max_abs(m: &Mat<f64>) -> f64 {
    let mut acc = 0.0f64;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            acc = acc.max(m[(i, j)].abs());
        }
    }
    acc
}

/// Builds the condensed operator shared by the state and adjoint equations:
/// every boundary edge is Dirichlet and path integrals carry the inverse
/// diffusion coefficient.
pub fn build_state_system(
    mesh: &ComputationalMesh,
    tm: &TransferMap,
    data: &ProblemData,
    cfg: &HdgConfig,
) -> Result<ScalarHdgSystem> {
    let a = data.a.clone();
    let a_inv = move |p: Point2| 1.0 / a(p);
    let dirichlet = vec![true; mesh.boundary_edges.len()];
    ScalarHdgSystem::build(mesh, tm, cfg, &a_inv, &a_inv, &dirichlet)
}

/// Solves the state equation.
pub fn solve_state(
    mesh: &ComputationalMesh,
    tm: &TransferMap,
    data: &ProblemData,
    cfg: &HdgConfig,
) -> Result<ScalarSolution> {
    let sys = build_state_system(mesh, tm, data, cfg)?;
    sys.solve_with(&|_, p| (data.f)(p), &|x| (data.g)(x), &|_, _| 0.0)
}

/// Solves the adjoint of the tracking objective for a given state.
pub fn solve_adjoint(
    mesh: &ComputationalMesh,
    tm: &TransferMap,
    data: &ProblemData,
    cfg: &HdgConfig,
    state: &ScalarSolution,
) -> Result<ScalarSolution> {
    let sys = build_state_system(mesh, tm, data, cfg)?;
    solve_adjoint_with(&sys, mesh, data, state)
}

fn solve_adjoint_with(
    sys: &ScalarHdgSystem,
    mesh: &ComputationalMesh,
    data: &ProblemData,
    state: &ScalarSolution,
) -> Result<ScalarSolution> {
    let zero: ScalarField = Arc::new(|_| 0.0);
    let gd = data.adjoint_g.clone().unwrap_or(zero);
    sys.solve_with(
        &|ke, p| state.primal_at(mesh, ke, p) - (data.y_target)(p),
        &|x| gd(x),
        &|_, _| 0.0,
    )
}

/// Solves the state and adjoint equations with one factorization.
pub fn solve_state_and_adjoint(
    mesh: &ComputationalMesh,
    tm: &TransferMap,
    data: &ProblemData,
    cfg: &HdgConfig,
) -> Result<(ScalarSolution, ScalarSolution)> {
    let sys = build_state_system(mesh, tm, data, cfg)?;
    let state = sys.solve_with(&|_, p| (data.f)(p), &|x| (data.g)(x), &|_, _| 0.0)?;
    let adjoint = solve_adjoint_with(&sys, mesh, data, &state)?;
    Ok((state, adjoint))
}

/// Loads of the deformation problem.
pub struct DeformationData<'a> {
    /// Flux datum at transfer node `q` of movable-boundary edge `e`.
    pub neumann: &'a (dyn Fn(u32, usize) -> Vector2 + Sync),
    /// Velocity datum at transferred points of fixed-boundary edges.
    pub dirichlet: &'a (dyn Fn(Point2) -> Vector2 + Sync),
    /// Volume source.
    pub source: &'a (dyn Fn(Point2) -> Vector2 + Sync),
}

/// Classifies each boundary edge for the deformation problem: Dirichlet
/// where the fixed part of the mapped boundary section dominates, Neumann
/// where the movable part does.
pub fn deformation_classification(tm: &TransferMap) -> Vec<bool> {
    tm.edges
        .iter()
        .map(|et| {
            if et.movable_len > 0.0 && et.fixed_len > 0.0 {
                log::warn!(
                    "boundary edge {} maps onto both movable and fixed boundary parts \
                     (movable {:.3e}, fixed {:.3e}); classifying by the larger",
                    et.edge,
                    et.movable_len,
                    et.fixed_len
                );
            }
            et.is_dirichlet()
        })
        .collect()
}

/// Solves the two decoupled scalar problems of the boundary deformation.
pub fn solve_deformation(
    mesh: &ComputationalMesh,
    tm: &TransferMap,
    cfg: &HdgConfig,
    data: &DeformationData,
) -> Result<TensorSolution> {
    let one = |_: Point2| 1.0;
    let dirichlet = deformation_classification(tm);
    let sys = ScalarHdgSystem::build(mesh, tm, cfg, &one, &one, &dirichlet)?;
    let mut parts = Vec::with_capacity(2);
    for c in 0..2 {
        parts.push(sys.solve_with(
            &|_, p| (data.source)(p)[c],
            &|x| (data.dirichlet)(x)[c],
            &|e, q| (data.neumann)(e, q)[c],
        )?);
    }
    let c1 = parts.pop().expect("two components");
    let c0 = parts.pop().expect("two components");
    Ok(TensorSolution { components: [c0, c1] })
}

/// Error norms of a scalar solution against a smooth reference field.
#[derive(Debug, Clone, Copy)]
pub struct ErrorNorms {
    /// `L^2` error of the primal field over the physical domain, i.e. the
    /// mesh plus the extension patches (extrapolated values).
    pub primal: f64,
    /// `L^2` error of the flux field over the physical domain.
    pub flux: f64,
    /// `L^2` error of the primal field over the mesh alone. The patch
    /// contribution rests on extrapolated values and decays half an order
    /// faster with a larger constant, so the mesh restriction is the cleaner
    /// probe of the volume convergence order.
    pub primal_mesh: f64,
    /// `L^2` error of the flux field over the mesh alone.
    pub flux_mesh: f64,
    /// Diameter-weighted `L^2` error of the trace field over all element
    /// boundaries, interior edges counted from both sides.
    pub trace: f64,
}

pub fn compute_error_norms(
    mesh: &ComputationalMesh,
    patches: &[ExtensionPatch],
    sol: &ScalarSolution,
    exact: &dyn Fn(Point2) -> f64,
    exact_flux: &dyn Fn(Point2) -> Vector2,
    cfg: &HdgConfig,
) -> ErrorNorms {
    let basis = sol.basis();
    let nb = basis.len();
    let tri = TriangleRule::with_degree(cfg.volume_degree + 2);
    let mut e_primal = 0.0;
    let mut e_flux = 0.0;
    for ke in 0..mesh.elements.len() {
        let fr = frame_of(mesh, ke);
        for (&(r, s), &w) in tri.points.iter().zip(&tri.weights) {
            let p = fr.to_physical(r, s);
            let wp = w * fr.det_jac;
            let dy = fr.eval_coeffs(basis, &sol.primal[ke], p) - exact(p);
            let q = Vector2::new(
                fr.eval_coeffs(basis, &sol.flux[ke][..nb], p),
                fr.eval_coeffs(basis, &sol.flux[ke][nb..], p),
            );
            let dq = q - exact_flux(p);
            e_primal += wp * dy * dy;
            e_flux += wp * dq.norm_squared();
        }
    }
    let e_primal_mesh = e_primal;
    let e_flux_mesh = e_flux;
    for patch in patches {
        let ke = patch.elem as usize;
        let fr = frame_of(mesh, ke);
        for (&p, &w) in patch.points.iter().zip(&patch.weights) {
            let dy = fr.eval_coeffs(basis, &sol.primal[ke], p) - exact(p);
            let q = Vector2::new(
                fr.eval_coeffs(basis, &sol.flux[ke][..nb], p),
                fr.eval_coeffs(basis, &sol.flux[ke][nb..], p),
            );
            let dq = q - exact_flux(p);
            e_primal += w * dy * dy;
            e_flux += w * dq.norm_squared();
        }
    }

    // Trace error against the edgewise L2 projection of the exact solution,
    // which is the quantity the trace variable superconverges to.
    let erule = IntervalRule::gauss(cfg.volume_degree / 2 + 2);
    let m = sol.k + 1;
    let mut e_trace = 0.0;
    for (ei, e) in mesh.edges.iter().enumerate() {
        let eb = EdgeBasis::new(sol.k, e.length);
        let mut proj = vec![0.0; m];
        for (&t, &w) in erule.nodes.iter().zip(&erule.weights) {
            let x = e.point_at(t);
            let wy = w * e.length * exact(x);
            for (r, c) in proj.iter_mut().enumerate() {
                *c += wy * eb.value(r, t);
            }
        }
        let edge_err: f64 =
            proj.iter().zip(&sol.trace[ei]).map(|(c, l)| (c - l).powi(2)).sum();
        let mut hsum = elem_diameter(mesh, e.side_a.elem as usize);
        if let Some(sb) = e.side_b {
            hsum += elem_diameter(mesh, sb.elem as usize);
        }
        e_trace += hsum * edge_err;
    }

    ErrorNorms {
        primal: e_primal.max(0.0).sqrt(),
        flux: e_flux.max(0.0).sqrt(),
        primal_mesh: e_primal_mesh.max(0.0).sqrt(),
        flux_mesh: e_flux_mesh.max(0.0).sqrt(),
        trace: e_trace.max(0.0).sqrt(),
    }
}

/// Largest integrated numerical-flux jump across interior edges, together
/// with the flux norm for scaling.
pub fn flux_jump(mesh: &ComputationalMesh, cfg: &HdgConfig, sol: &ScalarSolution) -> (f64, f64) {
    let basis = sol.basis();
    let nb = basis.len();
    let m = sol.k + 1;
    let rule = IntervalRule::gauss(cfg.edge_nodes());
    let mut worst = 0.0f64;
    for &ei in &mesh.interior_edges {
        let e = &mesh.edges[ei as usize];
        let eb = EdgeBasis::new(sol.k, e.length);
        let mut jm = vec![0.0f64; m];
        for side in [Some(e.side_a), e.side_b].into_iter().flatten() {
            let ke = side.elem as usize;
            let fr = frame_of(mesh, ke);
            let n = mesh.elements[ke].outward_normal(side.local as usize);
            for (&t, &w) in rule.nodes.iter().zip(&rule.weights) {
                let x = e.point_at(t);
                let q = Vector2::new(
                    fr.eval_coeffs(basis, &sol.flux[ke][..nb], x),
                    fr.eval_coeffs(basis, &sol.flux[ke][nb..], x),
                );
                let y = fr.eval_coeffs(basis, &sol.primal[ke], x);
                let yhat: f64 = sol.trace[ei as usize]
                    .iter()
                    .enumerate()
                    .map(|(mm, c)| c * eb.value(mm, t))
                    .sum();
                let ph = q.dot(&n) + cfg.tau * (y - yhat);
                for (mm, jv) in jm.iter_mut().enumerate() {
                    *jv += w * e.length * ph * eb.value(mm, t);
                }
            }
        }
        for v in &jm {
            worst = worst.max(v.abs());
        }
    }
    (worst, sol.flux_norm())
}

/// Relative residual of the discrete energy identity of a deformation solve
/// with zero volume source and zero fixed-boundary datum: the flux energy,
/// the stabilization energy, and the Dirichlet path pairing must balance the
/// Neumann load pairing.
pub fn deformation_energy_residual(
    mesh: &ComputationalMesh,
    tm: &TransferMap,
    cfg: &HdgConfig,
    sol: &TensorSolution,
    neumann: &dyn Fn(u32, usize) -> Vector2,
) -> f64 {
    let rule = IntervalRule::gauss(cfg.edge_nodes());
    let prule = IntervalRule::gauss(cfg.path_points);
    let mut total = 0.0;
    let mut scale = 0.0;
    for c in 0..2 {
        let s = &sol.components[c];
        let basis = s.basis();
        let nb = basis.len();

        let e1: f64 = s.flux.iter().flatten().map(|v| v * v).sum();

        let mut e2 = 0.0;
        for (ei, e) in mesh.edges.iter().enumerate() {
            let eb = EdgeBasis::new(s.k, e.length);
            for side in [Some(e.side_a), e.side_b].into_iter().flatten() {
                let ke = side.elem as usize;
                let fr = frame_of(mesh, ke);
                for (&t, &w) in rule.nodes.iter().zip(&rule.weights) {
                    let x = e.point_at(t);
                    let v = fr.eval_coeffs(basis, &s.primal[ke], x);
                    let vhat: f64 =
                        s.trace[ei].iter().enumerate().map(|(m, cf)| cf * eb.value(m, t)).sum();
                    e2 += cfg.tau * w * e.length * (v - vhat) * (v - vhat);
                }
            }
        }

        let mut e3 = 0.0;
        let mut e4 = 0.0;
        for (bi, &ei) in mesh.boundary_edges.iter().enumerate() {
            let et = &tm.edges[bi];
            let e = &mesh.edges[ei as usize];
            let eb = EdgeBasis::new(s.k, e.length);
            let ke = e.side_a.elem as usize;
            let fr = frame_of(mesh, ke);
            let n = mesh.elements[ke].outward_normal(e.side_a.local as usize);
            if et.is_dirichlet() {
                for (q, node) in et.nodes.iter().enumerate() {
                    let t = rule.nodes[q];
                    let w = rule.weights[q] * e.length;
                    let x = node.x;
                    let qv = Vector2::new(
                        fr.eval_coeffs(basis, &s.flux[ke][..nb], x),
                        fr.eval_coeffs(basis, &s.flux[ke][nb..], x),
                    );
                    let v = fr.eval_coeffs(basis, &s.primal[ke], x);
                    let vhat: f64 =
                        s.trace[ei as usize].iter().enumerate().map(|(m, cf)| cf * eb.value(m, t)).sum();
                    let sig_n = qv.dot(&n) + cfg.tau * (v - vhat);
                    let mut gd = 0.0;
                    if node.l > 0.0 {
                        for (&u, &wg) in prule.nodes.iter().zip(&prule.weights) {
                            let p = node.x + node.t * (u * node.l);
                            let fl = Vector2::new(
                                fr.eval_coeffs(basis, &s.flux[ke][..nb], p),
                                fr.eval_coeffs(basis, &s.flux[ke][nb..], p),
                            );
                            gd += wg * node.l * fl.dot(&node.t);
                        }
                    }
                    e3 += w * sig_n * gd;
                }
            } else {
                for q in 0..et.nodes.len() {
                    let t = rule.nodes[q];
                    let w = rule.weights[q] * e.length;
                    let vhat: f64 =
                        s.trace[ei as usize].iter().enumerate().map(|(m, cf)| cf * eb.value(m, t)).sum();
                    e4 += w * neumann(ei, q)[c] * vhat;
                }
            }
        }

        total += e1 + e2 + e3 + e4;
        scale += e1 + e2 + e3.abs() + e4.abs();
    }
    total.abs() / scale.max(1e-300)
}

/// Solves the state equation keeping every unknown (no condensation) with a
/// dense factorization. Cross-checks the condensed solver on small meshes.
pub fn solve_monolithic_dense(
    mesh: &ComputationalMesh,
    tm: &TransferMap,
    data: &ProblemData,
    cfg: &HdgConfig,
) -> Result<ScalarSolution> {
    if tm.q_per_edge != cfg.edge_nodes() {
        return Err(Error::InvalidInput(format!(
            "transfer map has {} nodes per edge but the edge rule needs {}",
            tm.q_per_edge,
            cfg.edge_nodes()
        )));
    }
    let basis = Arc::new(ReferenceBasis::new(cfg.k));
    let nb = basis.len();
    let m = cfg.k + 1;
    let n_el = mesh.elements.len();
    let equads = edge_quads(mesh, cfg.k, cfg.edge_nodes());
    let side_edges = elem_side_edges(mesh);
    let a = data.a.clone();
    let a_inv = move |p: Point2| 1.0 / a(p);

    let n = 3 * nb * n_el + m * mesh.edges.len();
    let ebase = |e: usize| 3 * nb * n_el + e * m;
    let mut mat = DMatrix::<f64>::zeros(n, n);
    let mut rhs = DVector::<f64>::zeros(n);

    let mut all_blocks = Vec::with_capacity(n_el);
    for ke in 0..n_el {
        let blocks = element_blocks(mesh, ke, &basis, cfg, &a_inv, &equads, &side_edges[ke]);
        let base = 3 * nb * ke;
        for i in 0..3 * nb {
            for j in 0..3 * nb {
                mat[(base + i, base + j)] = blocks.m_loc[(i, j)];
            }
            for l in 0..3 {
                let col0 = ebase(side_edges[ke][l] as usize);
                for r in 0..m {
                    mat[(base + i, col0 + r)] = -blocks.coupling[(i, l * m + r)];
                }
            }
        }
        for (g, &p) in blocks.quad.points.iter().enumerate() {
            let wf = blocks.quad.weights[g] * (data.f)(p);
            for i in 0..nb {
                rhs[base + 2 * nb + i] += wf * blocks.quad.vals[(g, i)];
            }
        }
        all_blocks.push(blocks);
    }

    let mut is_boundary = vec![false; mesh.edges.len()];
    for &e in &mesh.boundary_edges {
        is_boundary[e as usize] = true;
    }
    for (ke, blocks) in all_blocks.iter().enumerate() {
        let base = 3 * nb * ke;
        for l in 0..3 {
            let e = side_edges[ke][l] as usize;
            if is_boundary[e] {
                continue;
            }
            let row0 = ebase(e);
            for r in 0..m {
                mat[(row0 + r, row0 + r)] -= cfg.tau;
                for j in 0..3 * nb {
                    mat[(row0 + r, base + j)] += blocks.flux_rows[l][(r, j)];
                }
            }
        }
    }
    for &e in &mesh.boundary_edges {
        let ei = e as usize;
        let ke = mesh.edges[ei].side_a.elem as usize;
        let base = 3 * nb * ke;
        let row0 = ebase(ei);
        let t_hat = t_hat_block(mesh, tm, cfg, &basis, &a_inv, e, ke, &equads[ei]);
        for r in 0..m {
            mat[(row0 + r, row0 + r)] += 1.0;
            for j in 0..3 * nb {
                mat[(row0 + r, base + j)] -= t_hat[(r, j)];
            }
        }
        let eq = &equads[ei];
        let et = tm.edge_transfer(e);
        for q in 0..eq.params.len() {
            let wval = eq.weights[q] * (data.g)(et.nodes[q].xbar);
            for r in 0..m {
                rhs[row0 + r] += wval * eq.psi[(q, r)];
            }
        }
    }

    let lu = mat.lu();
    let x = lu
        .solve(&rhs)
        .ok_or_else(|| Error::Solver("monolithic matrix is singular".into()))?;

    let mut flux = Vec::with_capacity(n_el);
    let mut primal = Vec::with_capacity(n_el);
    for ke in 0..n_el {
        let base = 3 * nb * ke;
        flux.push(x.as_slice()[base..base + 2 * nb].to_vec());
        primal.push(x.as_slice()[base + 2 * nb..base + 3 * nb].to_vec());
    }
    let mut trace = Vec::with_capacity(mesh.edges.len());
    for e in 0..mesh.edges.len() {
        let row0 = ebase(e);
        trace.push(x.as_slice()[row0..row0 + m].to_vec());
    }
    Ok(ScalarSolution { k: cfg.k, flux, primal, trace, basis })
}
