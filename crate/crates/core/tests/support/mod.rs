//! Shared manufactured-solution setups on the annulus 0.05 <= |x| <= 0.2:
//! state/adjoint fields y = z = sin(x1) sin(x2) and the deformation field
//! V = exp(|x|^2 - 0.05^2) (1, 1)^t, solved over nested background meshes.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex, OnceLock};

use unfitted_hdg::hdg::{
    compute_error_norms, solve_deformation, solve_state_and_adjoint, DeformationData, ErrorNorms,
    HdgConfig, ProblemData,
};
use unfitted_hdg::shape::Piece;
use unfitted_hdg::transfer::build_extension_patches;
use unfitted_hdg::{BackgroundMesh, ComputationalMesh, DomainShape, Point2, TransferMap, Vector2};

pub const INNER_RADIUS: f64 = 0.05;
pub const OUTER_RADIUS: f64 = 0.2;

/// Annulus with a movable outer circle and a fixed inner circle, so the
/// deformation solver sees a Neumann outer boundary and a Dirichlet inner one.
pub fn movable_annulus(ri: f64, ro: f64) -> DomainShape {
    let tau = std::f64::consts::TAU;
    DomainShape::new(vec![
        vec![Piece::Arc {
            center: Point2::origin(),
            radius: ro,
            start_angle: 0.0,
            sweep: tau,
            movable: true,
        }],
        vec![Piece::Arc {
            center: Point2::origin(),
            radius: ri,
            start_angle: 0.0,
            sweep: -tau,
            movable: false,
        }],
    ])
    .unwrap()
}

pub fn sinsin(p: Point2) -> f64 {
    p.x.sin() * p.y.sin()
}

pub fn sinsin_grad(p: Point2) -> Vector2 {
    Vector2::new(p.x.cos() * p.y.sin(), p.x.sin() * p.y.cos())
}

/// Data whose exact state and adjoint solutions are both sin(x1) sin(x2).
pub fn sinsin_data() -> ProblemData {
    ProblemData {
        a: Arc::new(|_| 1.0),
        f: Arc::new(|p| 2.0 * sinsin(p)),
        g: Arc::new(sinsin),
        grad_g: Arc::new(sinsin_grad),
        y_target: Arc::new(|p| -sinsin(p)),
        adjoint_g: Some(Arc::new(sinsin)),
    }
}

/// Tracking data whose optimal domain is the disk around the fixed hole
/// with |x|^2 = 1/(2 pi); the state there is exactly y_target / 4.
pub fn recovery_data() -> ProblemData {
    let c = 1.0 / std::f64::consts::TAU;
    let hole2 = INNER_RADIUS * INNER_RADIUS;
    ProblemData {
        a: Arc::new(|_| 1.0),
        f: Arc::new(move |p| c + hole2 - 4.0 * p.coords.norm_squared()),
        g: Arc::new(|_| 0.0),
        grad_g: Arc::new(|_| Vector2::zeros()),
        y_target: Arc::new(move |p| {
            let r2 = p.coords.norm_squared();
            (r2 - c) * (r2 - hole2)
        }),
        adjoint_g: None,
    }
}

/// Area of the optimal domain for `recovery_data`.
pub fn recovery_target_area() -> f64 {
    std::f64::consts::PI * (1.0 / std::f64::consts::TAU - INNER_RADIUS * INNER_RADIUS)
}

/// Outer radius of the optimal domain for `recovery_data`.
pub fn recovery_optimal_radius() -> f64 {
    (1.0 / std::f64::consts::TAU).sqrt()
}

/// Three-lobed initial boundary, sampled with `n` movable points, around the
/// fixed hole of radius 0.05.
pub fn flower_shape(n: usize) -> DomainShape {
    let tau = std::f64::consts::TAU;
    let points = (0..n)
        .map(|i| {
            let th = tau * i as f64 / n as f64;
            let r = 0.42 + 0.11 * (3.0 * th).cos();
            Point2::new(r * th.cos(), r * th.sin())
        })
        .collect();
    DomainShape::new(vec![
        vec![Piece::Polyline { points, closed: true, movable: true }],
        vec![Piece::Arc {
            center: Point2::origin(),
            radius: INNER_RADIUS,
            start_angle: 0.0,
            sweep: -tau,
            movable: false,
        }],
    ])
    .unwrap()
}

/// Largest distance from the movable boundary points to the circle of
/// radius `r` about the origin.
pub fn max_distance_to_circle(shape: &DomainShape, r: f64) -> f64 {
    let mut worst = 0.0f64;
    for lp in &shape.loops {
        for piece in lp {
            if let Piece::Polyline { points, .. } = piece {
                if piece.movable() {
                    for p in points {
                        worst = worst.max((p.coords.norm() - r).abs());
                    }
                }
            }
        }
    }
    worst
}

/// Scalar factor of the manufactured deformation field.
pub fn defo_scalar(p: Point2) -> f64 {
    (p.coords.norm_squared() - INNER_RADIUS * INNER_RADIUS).exp()
}

pub fn defo_scalar_grad(p: Point2) -> Vector2 {
    2.0 * defo_scalar(p) * p.coords
}

/// Error norms of all three solves on one mesh, plus the mesh width.
pub struct MmsErrors {
    pub h: f64,
    pub n_elements: usize,
    pub state: ErrorNorms,
    pub adjoint: ErrorNorms,
    pub deformation: ErrorNorms,
}

/// Background box for the annulus runs, slightly off-center so no grid
/// vertex lands exactly on the curved boundary at any refinement level.
pub fn annulus_box() -> (Point2, Point2) {
    (Point2::new(-0.2513, -0.2487), Point2::new(0.2487, 0.2513))
}

fn solve_annulus_mms(n: usize, k: usize) -> MmsErrors {
    let shape = movable_annulus(INNER_RADIUS, OUTER_RADIUS);
    let (lo, hi) = annulus_box();
    let bg = BackgroundMesh::square(lo, hi, n).unwrap();
    let mesh = ComputationalMesh::extract(&bg, &shape).unwrap();
    let cfg = HdgConfig::new(k, 1.0);
    let tm = TransferMap::build(&mesh, &shape, cfg.edge_nodes()).unwrap();
    let patches = build_extension_patches(&tm, &mesh, &shape, cfg.volume_degree + 2).unwrap();
    let data = sinsin_data();

    let (state, adjoint) = solve_state_and_adjoint(&mesh, &tm, &data, &cfg).unwrap();
    let state_norms = compute_error_norms(
        &mesh,
        &patches,
        &state,
        &sinsin,
        &|p| -sinsin_grad(p),
        &cfg,
    );
    let adjoint_norms = compute_error_norms(
        &mesh,
        &patches,
        &adjoint,
        &sinsin,
        &|p| -sinsin_grad(p),
        &cfg,
    );

    // The manufactured field extends smoothly past the computational
    // boundary, so the Neumann datum is its exact conormal flux there.
    let mesh_ref = &mesh;
    let tm_ref = &tm;
    let neumann = move |e: u32, q: usize| {
        let node = &tm_ref.edge_transfer(e).nodes[q];
        let side = &mesh_ref.edges[e as usize].side_a;
        let nh = mesh_ref.elements[side.elem as usize].outward_normal(side.local as usize);
        let d = -defo_scalar_grad(node.x).dot(&nh);
        Vector2::new(d, d)
    };
    let dirichlet = |p: Point2| {
        let v = defo_scalar(p);
        Vector2::new(v, v)
    };
    let source = |p: Point2| {
        let f = -(4.0 + 4.0 * p.coords.norm_squared()) * defo_scalar(p);
        Vector2::new(f, f)
    };
    let defo = solve_deformation(
        &mesh,
        &tm,
        &cfg,
        &DeformationData { neumann: &neumann, dirichlet: &dirichlet, source: &source },
    )
    .unwrap();
    let mut defo_norms =
        ErrorNorms { primal: 0.0, flux: 0.0, primal_mesh: 0.0, flux_mesh: 0.0, trace: 0.0 };
    for comp in &defo.components {
        let norms = compute_error_norms(
            &mesh,
            &patches,
            comp,
            &defo_scalar,
            &|p| -defo_scalar_grad(p),
            &cfg,
        );
        defo_norms.primal += norms.primal.powi(2);
        defo_norms.flux += norms.flux.powi(2);
        defo_norms.primal_mesh += norms.primal_mesh.powi(2);
        defo_norms.flux_mesh += norms.flux_mesh.powi(2);
        defo_norms.trace += norms.trace.powi(2);
    }
    defo_norms.primal = defo_norms.primal.sqrt();
    defo_norms.flux = defo_norms.flux.sqrt();
    defo_norms.primal_mesh = defo_norms.primal_mesh.sqrt();
    defo_norms.flux_mesh = defo_norms.flux_mesh.sqrt();
    defo_norms.trace = defo_norms.trace.sqrt();

    MmsErrors {
        h: bg.h(),
        n_elements: mesh.n_elements(),
        state: state_norms,
        adjoint: adjoint_norms,
        deformation: defo_norms,
    }
}

/// Cached solve so the per-criterion tests share one run per `(n, k)`.
pub fn annulus_mms_errors(n: usize, k: usize) -> Arc<MmsErrors> {
    static CACHE: OnceLock<Mutex<BTreeMap<(usize, usize), Arc<MmsErrors>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(BTreeMap::new()));
    if let Some(hit) = cache.lock().unwrap().get(&(n, k)) {
        return hit.clone();
    }
    let computed = Arc::new(solve_annulus_mms(n, k));
    cache.lock().unwrap().insert((n, k), computed.clone());
    computed
}

/// Least-squares slope of log(err) against log(h).
pub fn fit_slope(hs: &[f64], errs: &[f64]) -> f64 {
    assert_eq!(hs.len(), errs.len());
    let n = hs.len() as f64;
    let xs: Vec<f64> = hs.iter().map(|h| h.ln()).collect();
    let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}
