//! State, adjoint, and deformation solver checks: polynomial exactness on a
//! fitted mesh, agreement with the uncondensed dense solve, flux
//! single-valuedness, uniqueness with zero data, and the discrete energy
//! identity of the deformation solve.

use std::sync::Arc;

use unfitted_hdg::hdg::{
    compute_error_norms, deformation_energy_residual, flux_jump, solve_deformation,
    solve_monolithic_dense, solve_state, solve_state_and_adjoint, DeformationData, HdgConfig,
    ProblemData, ScalarField,
};
use unfitted_hdg::transfer::build_extension_patches;
use unfitted_hdg::{BackgroundMesh, ComputationalMesh, DomainShape, Point2, TransferMap, Vector2};

fn constant_field(c: f64) -> ScalarField {
    Arc::new(move |_| c)
}

fn fitted_square(n: usize) -> (ComputationalMesh, DomainShape) {
    let lo = Point2::new(0.0, 0.0);
    let hi = Point2::new(1.0, 1.0);
    let shape = DomainShape::rectangle(lo, hi).unwrap();
    let bg = BackgroundMesh::square(lo, hi, n).unwrap();
    let mesh = ComputationalMesh::extract(&bg, &shape).unwrap();
    (mesh, shape)
}

fn poly_data(
    exact: impl Fn(Point2) -> f64 + Send + Sync + Copy + 'static,
    grad: impl Fn(Point2) -> Vector2 + Send + Sync + Copy + 'static,
    laplace: impl Fn(Point2) -> f64 + Send + Sync + 'static,
) -> ProblemData {
    ProblemData {
        a: constant_field(1.0),
        f: Arc::new(move |p| -laplace(p)),
        g: Arc::new(move |p| exact(p)),
        grad_g: Arc::new(move |p| grad(p)),
        y_target: constant_field(0.0),
        adjoint_g: None,
    }
}

#[test]
fn linear_state_is_exact_on_fitted_mesh() {
    let (mesh, shape) = fitted_square(4);
    let cfg = HdgConfig::new(1, 1.0);
    let tm = TransferMap::build(&mesh, &shape, cfg.edge_nodes()).unwrap();
    let exact = |p: Point2| 1.0 + 2.0 * p.x - 3.0 * p.y;
    let grad = |_: Point2| Vector2::new(2.0, -3.0);
    let data = poly_data(exact, grad, |_| 0.0);
    let sol = solve_state(&mesh, &tm, &data, &cfg).unwrap();
    let patches = build_extension_patches(&tm, &mesh, &shape, 6).unwrap();
    let norms =
        compute_error_norms(&mesh, &patches, &sol, &exact, &|p| -grad(p), &cfg);
    assert!(norms.primal < 1e-11, "primal error {}", norms.primal);
    assert!(norms.flux < 1e-11, "flux error {}", norms.flux);
    assert!(norms.trace < 1e-11, "trace error {}", norms.trace);
}

#[test]
fn quadratic_state_is_exact_at_degree_two() {
    let (mesh, shape) = fitted_square(3);
    let cfg = HdgConfig::new(2, 2.5);
    let tm = TransferMap::build(&mesh, &shape, cfg.edge_nodes()).unwrap();
    let exact = |p: Point2| p.x * p.x + 0.5 * p.x * p.y - p.y * p.y + 2.0 * p.x - 1.0;
    let grad = |p: Point2| Vector2::new(2.0 * p.x + 0.5 * p.y + 2.0, 0.5 * p.x - 2.0 * p.y);
    let data = poly_data(exact, grad, |_| 0.0);
    let sol = solve_state(&mesh, &tm, &data, &cfg).unwrap();
    let norms = compute_error_norms(&mesh, &[], &sol, &exact, &|p| -grad(p), &cfg);
    assert!(norms.primal < 1e-10, "primal error {}", norms.primal);
    assert!(norms.flux < 1e-10, "flux error {}", norms.flux);
    assert!(norms.trace < 1e-10, "trace error {}", norms.trace);
}

#[test]
fn condensed_solution_matches_monolithic_dense() {
    let shape = DomainShape::annulus(Point2::origin(), 0.05, 0.2).unwrap();
    let bg =
        BackgroundMesh::square(Point2::new(-0.25, -0.25), Point2::new(0.25, 0.25), 10).unwrap();
    let mesh = ComputationalMesh::extract(&bg, &shape).unwrap();
    let cfg = HdgConfig::new(1, 1.0);
    let tm = TransferMap::build(&mesh, &shape, cfg.edge_nodes()).unwrap();
    let data = ProblemData {
        a: constant_field(1.0),
        f: Arc::new(|p: Point2| (4.0 * p.x).sin() + p.y),
        g: Arc::new(|p: Point2| p.x * p.y),
        grad_g: Arc::new(|p: Point2| Vector2::new(p.y, p.x)),
        y_target: constant_field(0.0),
        adjoint_g: None,
    };
    let fast = solve_state(&mesh, &tm, &data, &cfg).unwrap();
    let dense = solve_monolithic_dense(&mesh, &tm, &data, &cfg).unwrap();
    let scale = dense.primal_norm().max(1.0);
    let mut worst = 0.0f64;
    for ke in 0..mesh.n_elements() {
        for (a, b) in fast.primal[ke].iter().zip(&dense.primal[ke]) {
            worst = worst.max((a - b).abs());
        }
        for (a, b) in fast.flux[ke].iter().zip(&dense.flux[ke]) {
            worst = worst.max((a - b).abs());
        }
    }
    for e in 0..mesh.edges.len() {
        for (a, b) in fast.trace[e].iter().zip(&dense.trace[e]) {
            worst = worst.max((a - b).abs());
        }
    }
    assert!(worst / scale < 1e-10, "condensed vs dense deviation {}", worst);
}

#[test]
fn numerical_flux_is_single_valued() {
    let shape = DomainShape::annulus(Point2::origin(), 0.05, 0.2).unwrap();
    let bg =
        BackgroundMesh::square(Point2::new(-0.25, -0.25), Point2::new(0.25, 0.25), 16).unwrap();
    let mesh = ComputationalMesh::extract(&bg, &shape).unwrap();
    let cfg = HdgConfig::new(2, 1.0);
    let tm = TransferMap::build(&mesh, &shape, cfg.edge_nodes()).unwrap();
    let data = ProblemData {
        a: Arc::new(|p: Point2| 1.0 + 0.5 * (3.0 * p.x).cos().powi(2)),
        f: Arc::new(|p: Point2| (p.x * 20.0).sin()),
        g: Arc::new(|p: Point2| p.x - p.y),
        grad_g: Arc::new(|_| Vector2::new(1.0, -1.0)),
        y_target: constant_field(0.0),
        adjoint_g: None,
    };
    let sol = solve_state(&mesh, &tm, &data, &cfg).unwrap();
    let (jump, scale) = flux_jump(&mesh, &cfg, &sol);
    assert!(jump <= 1e-9 * (1.0 + scale), "flux jump {jump} vs norm {scale}");
}

#[test]
fn zero_data_gives_zero_solution() {
    let (mesh, shape) = fitted_square(4);
    let cfg = HdgConfig::new(2, 1.0);
    let tm = TransferMap::build(&mesh, &shape, cfg.edge_nodes()).unwrap();
    let data = ProblemData {
        a: constant_field(2.0),
        f: constant_field(0.0),
        g: constant_field(0.0),
        grad_g: Arc::new(|_| Vector2::zeros()),
        y_target: constant_field(0.0),
        adjoint_g: None,
    };
    let (state, adjoint) = solve_state_and_adjoint(&mesh, &tm, &data, &cfg).unwrap();
    assert!(state.primal_norm() < 1e-12);
    assert!(state.flux_norm() < 1e-12);
    assert!(adjoint.primal_norm() < 1e-12);
}

#[test]
fn deformation_energy_identity_holds() {
    // Annulus with a movable outer circle and a fixed inner circle.
    let shape = {
        use unfitted_hdg::shape::Piece;
        let tau = std::f64::consts::TAU;
        DomainShape::new(vec![
            vec![Piece::Arc {
                center: Point2::origin(),
                radius: 0.2,
                start_angle: 0.0,
                sweep: tau,
                movable: true,
            }],
            vec![Piece::Arc {
                center: Point2::origin(),
                radius: 0.05,
                start_angle: 0.0,
                sweep: -tau,
                movable: false,
            }],
        ])
        .unwrap()
    };
    let bg =
        BackgroundMesh::square(Point2::new(-0.25, -0.25), Point2::new(0.25, 0.25), 24).unwrap();
    let mesh = ComputationalMesh::extract(&bg, &shape).unwrap();
    let cfg = HdgConfig::new(1, 1.0);
    let tm = TransferMap::build(&mesh, &shape, cfg.edge_nodes()).unwrap();
    let neumann = |_e: u32, q: usize| {
        let phase = q as f64;
        Vector2::new(0.3 + 0.1 * phase.sin(), -0.2 + 0.05 * phase.cos())
    };
    let dirichlet = |_: Point2| Vector2::zeros();
    let source = |_: Point2| Vector2::zeros();
    let sol = solve_deformation(
        &mesh,
        &tm,
        &cfg,
        &DeformationData { neumann: &neumann, dirichlet: &dirichlet, source: &source },
    )
    .unwrap();
    let residual = deformation_energy_residual(&mesh, &tm, &cfg, &sol, &neumann);
    assert!(residual < 1e-8, "energy identity residual {residual}");
}
