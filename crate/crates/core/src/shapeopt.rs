//! Volume-constrained tracking-energy shape optimization.
//!
//! One outer iteration solves the state and adjoint equations on the current
//! computational mesh, evaluates the shape-derivative density on the curved
//! boundary, relaxes the volume multiplier toward the boundary average of
//! that density, solves the boundary-deformation problem for a descent
//! velocity, and moves the movable boundary by an Armijo-damped step of the
//! extrapolated velocity. All boundary quantities are evaluated at
//! transferred points; element fields reach them by extrapolation.

use crate::basis::ElementFrame;
use crate::hdg::{
    solve_deformation, solve_state, solve_state_and_adjoint, DeformationData, HdgConfig,
    ProblemData, ScalarSolution, TensorSolution,
};
use crate::mesh::{BackgroundMesh, ComputationalMesh};
use crate::quadrature::TriangleRule;
use crate::shape::DomainShape;
use crate::transfer::{build_extension_patches, ExtensionPatch, TransferMap};
use crate::{Error, Point2, Result, Vector2};

/// Which convergence tests end the optimization loop.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopRule {
    /// Stop when the gradient or the energy test passes.
    Either,
    /// Stop when both tests pass.
    Both,
    /// Stop on the gradient test alone.
    Gradient,
    /// Stop on the energy test alone.
    Energy,
}

/// Parameters of the optimization loop.
#[derive(Clone, Debug)]
pub struct OptConfig {
    /// Prescribed domain area.
    pub target_area: f64,
    /// Weight of the area mismatch in the multiplier update.
    pub volume_penalty: f64,
    /// Tolerance of the convergence tests: the gradient test compares
    /// `|delta_j / delta_j_0|` against it, the energy test the decrease of
    /// the augmented energy between iterations.
    pub tol: f64,
    pub stop_rule: StopRule,
    pub max_iters: usize,
    /// Line-search step reduction factor in `(0, 1)`.
    pub armijo_beta: f64,
    /// Line-search sufficient-decrease constant.
    pub armijo_c1: f64,
    /// Line-search trial budget.
    pub max_backtracks: usize,
}

impl OptConfig {
    pub fn new(target_area: f64) -> Self {
        OptConfig {
            target_area,
            volume_penalty: 1e-4,
            tol: 1e-3,
            stop_rule: StopRule::Both,
            max_iters: 90,
            armijo_beta: 0.5,
            armijo_c1: 0.25,
            max_backtracks: 30,
        }
    }
}

/// Scalars recorded per outer iteration.
#[derive(Clone, Debug)]
pub struct ShapeIterState {
    pub iter: usize,
    pub n_elements: usize,
    /// Domain area before the step.
    pub area: f64,
    /// Tracking energy.
    pub j: f64,
    /// Augmented energy `j + xi * (area - target)`.
    pub j_aug: f64,
    /// Directional derivative of the augmented energy along the velocity.
    pub delta_j: f64,
    /// Boundary average of the shape-derivative density.
    pub chi: f64,
    /// Multiplier used in this iteration's deformation solve.
    pub xi: f64,
    /// Accepted step length; zero on the final (converged) record.
    pub step: f64,
    pub backtracks: usize,
    /// Boundary-proximity parameter of the transfer map.
    pub r_max: f64,
}

/// Tracking energy `1/2` times the squared `L^2` distance between the state
/// and the target over the physical domain: the mesh part plus the
/// extrapolated extension-patch part.
pub fn evaluate_j(
    mesh: &ComputationalMesh,
    patches: &[ExtensionPatch],
    state: &ScalarSolution,
    data: &ProblemData,
) -> f64 {
    let basis = state.basis();
    let tri = TriangleRule::with_degree(2 * state.k + 4);
    let mut acc = 0.0;
    for (ke, el) in mesh.elements.iter().enumerate() {
        let fr = ElementFrame::new(el.verts[0], el.verts[1], el.verts[2]);
        for (&(r, s), &w) in tri.points.iter().zip(&tri.weights) {
            let p = fr.to_physical(r, s);
            let d = fr.eval_coeffs(basis, &state.primal[ke], p) - (data.y_target)(p);
            acc += w * fr.det_jac * d * d;
        }
    }
    for patch in patches {
        let el = &mesh.elements[patch.elem as usize];
        let fr = ElementFrame::new(el.verts[0], el.verts[1], el.verts[2]);
        for (&p, &w) in patch.points.iter().zip(&patch.weights) {
            let d = fr.eval_coeffs(basis, &state.primal[patch.elem as usize], p)
                - (data.y_target)(p);
            acc += w * d * d;
        }
    }
    0.5 * acc
}

/// Shape-derivative density of the tracking energy on the curved boundary.
pub struct ShapeGradient {
    /// Values at the feet of the edge transfer nodes, per boundary-edge slot.
    pub at_nodes: Vec<Vec<f64>>,
    /// Values at the curved-boundary quadrature nodes, per boundary-edge slot.
    pub at_gamma: Vec<Vec<f64>>,
}

/// Evaluates the density `(r . n) (a^{-1} p . n + dg/dn) + (g - target)^2 / 2`
/// at every transferred boundary point, with the state flux `p` and adjoint
/// flux `r` extrapolated from the element adjacent to each boundary edge.
pub fn evaluate_shape_gradient(
    mesh: &ComputationalMesh,
    tm: &TransferMap,
    shape: &DomainShape,
    data: &ProblemData,
    state: &ScalarSolution,
    adjoint: &ScalarSolution,
) -> ShapeGradient {
    let density = |ke: usize, x: Point2, n: Vector2| -> f64 {
        let p_flux = state.flux_at(mesh, ke, x);
        let r_flux = adjoint.flux_at(mesh, ke, x);
        let dg = (data.grad_g)(x).dot(&n);
        let gv = (data.g)(x);
        let yt = (data.y_target)(x);
        r_flux.dot(&n) * (p_flux.dot(&n) / (data.a)(x) + dg) + 0.5 * (gv - yt) * (gv - yt)
    };
    let mut at_nodes = Vec::with_capacity(tm.edges.len());
    let mut at_gamma = Vec::with_capacity(tm.edges.len());
    for et in &tm.edges {
        let ke = mesh.edges[et.edge as usize].side_a.elem as usize;
        at_nodes.push(
            et.nodes
                .iter()
                .map(|node| density(ke, node.xbar, shape.normal_at(node.foot)))
                .collect(),
        );
        at_gamma.push(et.gamma.iter().map(|gn| density(ke, gn.point, gn.normal)).collect());
    }
    ShapeGradient { at_nodes, at_gamma }
}

/// Boundary average of the density and the relaxed multiplier update;
/// returns `(chi, xi_next)`. A `None` multiplier seeds the recursion with
/// the average itself (the first iteration uses `xi = chi` unpenalized).
pub fn chi_and_update_multiplier(
    gradient: &ShapeGradient,
    tm: &TransferMap,
    area: f64,
    xi: Option<f64>,
    cfg: &OptConfig,
) -> (f64, f64) {
    let mut num = 0.0;
    let mut len = 0.0;
    for (slot, et) in tm.edges.iter().enumerate() {
        for (gn, &gv) in et.gamma.iter().zip(&gradient.at_gamma[slot]) {
            num += gn.ds * gv;
            len += gn.ds;
        }
    }
    let chi = -num / len;
    let xi_next = match xi {
        None => chi,
        Some(prev) => 0.5 * (prev + chi) + cfg.volume_penalty * (area - cfg.target_area),
    };
    (chi, xi_next)
}

/// Directional derivative of the augmented energy along the discrete
/// velocity: the movable-boundary integral of the augmented density times
/// the extrapolated normal velocity.
pub fn evaluate_delta_j(
    mesh: &ComputationalMesh,
    tm: &TransferMap,
    gradient: &ShapeGradient,
    xi: f64,
    v: &TensorSolution,
) -> f64 {
    let mut acc = 0.0;
    for (slot, et) in tm.edges.iter().enumerate() {
        for (gn, &gv) in et.gamma.iter().zip(&gradient.at_gamma[slot]) {
            if !gn.movable {
                continue;
            }
            let vel = v.velocity_blended(mesh, gn.point);
            acc += gn.ds * (gv + xi) * vel.dot(&gn.normal);
        }
    }
    acc
}

/// Rate of change of the enclosed area along the velocity field: the
/// movable-boundary integral of the extrapolated normal velocity.
pub fn boundary_normal_flow(
    mesh: &ComputationalMesh,
    tm: &TransferMap,
    v: &TensorSolution,
) -> f64 {
    let mut acc = 0.0;
    for et in &tm.edges {
        for gn in &et.gamma {
            if !gn.movable {
                continue;
            }
            let vel = v.velocity_blended(mesh, gn.point);
            acc += gn.ds * vel.dot(&gn.normal);
        }
    }
    acc
}

/// Flux datum of the deformation problem: the augmented density times the
/// boundary normal at each transfer node, per boundary-edge slot.
pub fn deformation_neumann(
    tm: &TransferMap,
    shape: &DomainShape,
    gradient: &ShapeGradient,
    xi: f64,
) -> Vec<Vec<Vector2>> {
    tm.edges
        .iter()
        .enumerate()
        .map(|(slot, et)| {
            et.nodes
                .iter()
                .enumerate()
                .map(|(q, node)| shape.normal_at(node.foot) * (gradient.at_nodes[slot][q] + xi))
                .collect()
        })
        .collect()
}

/// Largest velocity magnitude over element vertices and centroids.
pub fn max_velocity(mesh: &ComputationalMesh, v: &TensorSolution) -> f64 {
    let mut acc = 0.0f64;
    for (ke, el) in mesh.elements.iter().enumerate() {
        for p in [el.verts[0], el.verts[1], el.verts[2], el.centroid()] {
            acc = acc.max(v.velocity_at(mesh, ke, p).norm());
        }
    }
    acc
}

/// Moves every movable boundary point by `tau` times the extrapolated
/// velocity and revalidates the deformed shape.
pub fn deform_shape(
    shape: &DomainShape,
    mesh: &ComputationalMesh,
    v: &TensorSolution,
    tau: f64,
) -> Result<DomainShape> {
    shape.deform_movable(|p| p + v.velocity_blended(mesh, p) * tau)
}

/// Result of one accepted line-search step.
pub struct LineSearchResult {
    pub shape: DomainShape,
    pub j_aug: f64,
    pub step: f64,
    pub backtracks: usize,
}

/// Backtracking line search on the augmented energy, starting from the step
/// bound `tau0` supplied by the caller.
///
/// Before backtracking, the energy is probed at two vanishing steps; the
/// spread measures how much the discrete energy jumps as element extraction
/// and transfer paths flick between states, and accepted steps must clear
/// five times that floor in addition to the sufficient-decrease slope.
/// Otherwise backtracking harvests evaluation noise once the directional
/// derivative is small.
///
/// `trial` evaluates the augmented energy of a candidate shape and returns
/// `Ok(None)` for candidates that cannot be evaluated (failed extraction,
/// transfer, or solve); those simply shrink the step like a rejected trial.
pub fn armijo_line_search(
    shape: &DomainShape,
    mesh: &ComputationalMesh,
    v: &TensorSolution,
    j_aug: f64,
    delta_j: f64,
    tau0: f64,
    trial: &mut dyn FnMut(&DomainShape) -> Result<Option<f64>>,
    cfg: &OptConfig,
) -> Result<LineSearchResult> {
    if !(delta_j < 0.0) {
        return Err(Error::LineSearch(format!(
            "directional derivative {delta_j:.3e} is not a descent direction"
        )));
    }
    if !(tau0 > 0.0 && tau0.is_finite()) {
        return Err(Error::LineSearch("initial step bound vanishes".into()));
    }

    let mut noise = 0.0f64;
    for scale in [1e-6, 1e-3] {
        if let Ok(candidate) = deform_shape(shape, mesh, v, tau0 * scale) {
            if let Some(j_probe) = trial(&candidate)? {
                noise = noise.max((j_probe - j_aug).abs());
            }
        }
    }
    let floor = 5.0 * noise;

    let mut tau = tau0;
    for bt in 0..cfg.max_backtracks {
        if let Ok(candidate) = deform_shape(shape, mesh, v, tau) {
            if let Some(j_trial) = trial(&candidate)? {
                let required = (cfg.armijo_c1 * tau * (-delta_j)).max(floor);
                if j_trial <= j_aug - required {
                    return Ok(LineSearchResult {
                        shape: candidate,
                        j_aug: j_trial,
                        step: tau,
                        backtracks: bt,
                    });
                }
            }
        }
        tau *= cfg.armijo_beta;
    }
    Err(Error::LineSearch(format!(
        "no acceptable step within {} trials",
        cfg.max_backtracks
    )))
}

/// Outcome of the optimization loop.
pub struct OptRun {
    pub iterations: Vec<ShapeIterState>,
    pub shape: DomainShape,
    pub converged: bool,
    pub stop_reason: String,
}

/// Runs the volume-constrained gradient loop on a fixed background mesh.
///
/// Per iteration: extract the computational mesh, build transfer paths,
/// solve state and adjoint, evaluate the boundary density, update the
/// multiplier, solve for the deformation velocity, test convergence, and
/// advance the movable boundary by an Armijo step (trial shapes re-solve the
/// state equation only).
///
/// The initial step bound moves the fastest boundary point by one mesh
/// width, further capped so a single step cannot change the enclosed area
/// by much more than the current area error. The multiplier feedback is
/// slow, and without the cap the linear area term pays for arbitrarily deep
/// overshoots of the target, sending the iteration into wide area swings.
pub fn run_optimization(
    background: &BackgroundMesh,
    shape0: &DomainShape,
    data: &ProblemData,
    hdg_cfg: &HdgConfig,
    cfg: &OptConfig,
) -> Result<OptRun> {
    let mut shape = shape0.clone();
    let mut xi: Option<f64> = None;
    let mut delta_j0: Option<f64> = None;
    let mut prev_j_aug: Option<f64> = None;
    let mut iterations = Vec::new();
    let patch_degree = 2 * hdg_cfg.k + 4;

    let fail = |iter: usize, e: Error| Error::Optimization { iter, cause: e.to_string() };

    for iter in 0..cfg.max_iters {
        let mesh =
            ComputationalMesh::extract(background, &shape).map_err(|e| fail(iter, e))?;
        let tm = TransferMap::build(&mesh, &shape, hdg_cfg.edge_nodes())
            .map_err(|e| fail(iter, e))?;
        let patches = build_extension_patches(&tm, &mesh, &shape, patch_degree)
            .map_err(|e| fail(iter, e))?;
        let (state, adjoint) =
            solve_state_and_adjoint(&mesh, &tm, data, hdg_cfg).map_err(|e| fail(iter, e))?;

        let j = evaluate_j(&mesh, &patches, &state, data);
        let area = shape.area();
        let grad = evaluate_shape_gradient(&mesh, &tm, &shape, data, &state, &adjoint);
        let (chi, xi_next) = chi_and_update_multiplier(&grad, &tm, area, xi, cfg);
        xi = Some(xi_next);
        let j_aug = j + xi_next * (area - cfg.target_area);

        let neumann_vals = deformation_neumann(&tm, &shape, &grad, xi_next);
        let neumann = |e: u32, q: usize| neumann_vals[tm.slot_of(e)][q];
        let dirichlet = |_: Point2| Vector2::zeros();
        let source = |_: Point2| Vector2::zeros();
        let v = solve_deformation(
            &mesh,
            &tm,
            hdg_cfg,
            &DeformationData { neumann: &neumann, dirichlet: &dirichlet, source: &source },
        )
        .map_err(|e| fail(iter, e))?;
        let delta_j = evaluate_delta_j(&mesh, &tm, &grad, xi_next, &v);
        let d0 = *delta_j0.get_or_insert(delta_j);

        let vmax = max_velocity(&mesh, &v);
        let mut tau0 = if vmax > 1e-300 { mesh.background.h() / vmax } else { 0.0 };
        let da = boundary_normal_flow(&mesh, &tm, &v);
        if da.abs() > 1e-300 {
            let slack = 5e-4 * cfg.target_area.abs().max(mesh.background.h().powi(2));
            tau0 = tau0.min((1.2 * (area - cfg.target_area).abs() + slack) / da.abs());
        }

        let grad_ok = if d0 == 0.0 { true } else { (delta_j / d0).abs() <= cfg.tol };
        let energy_ok = prev_j_aug
            .is_some_and(|pj| (j_aug - pj).abs() <= cfg.tol * pj.abs().max(f64::MIN_POSITIVE));
        let stop = match cfg.stop_rule {
            StopRule::Either => grad_ok || energy_ok,
            StopRule::Both => grad_ok && energy_ok,
            StopRule::Gradient => grad_ok,
            StopRule::Energy => energy_ok,
        };

        let mut record = ShapeIterState {
            iter,
            n_elements: mesh.n_elements(),
            area,
            j,
            j_aug,
            delta_j,
            chi,
            xi: xi_next,
            step: 0.0,
            backtracks: 0,
            r_max: tm.r_max,
        };

        if stop {
            log::info!(
                "iteration {iter}: converged (j_aug {j_aug:.6e}, delta_j {delta_j:.3e})"
            );
            iterations.push(record);
            let mut reasons = Vec::new();
            if grad_ok {
                reasons.push("gradient");
            }
            if energy_ok {
                reasons.push("energy");
            }
            return Ok(OptRun {
                iterations,
                shape,
                converged: true,
                stop_reason: reasons.join("+"),
            });
        }

        let mut trial = |cand: &DomainShape| -> Result<Option<f64>> {
            let Ok(cm) = ComputationalMesh::extract(background, cand) else {
                return Ok(None);
            };
            let Ok(ctm) = TransferMap::build(&cm, cand, hdg_cfg.edge_nodes()) else {
                return Ok(None);
            };
            let Ok(cpatches) = build_extension_patches(&ctm, &cm, cand, patch_degree) else {
                return Ok(None);
            };
            let Ok(cstate) = solve_state(&cm, &ctm, data, hdg_cfg) else {
                return Ok(None);
            };
            let cj = evaluate_j(&cm, &cpatches, &cstate, data);
            Ok(Some(cj + xi_next * (cand.area() - cfg.target_area)))
        };
        match armijo_line_search(&shape, &mesh, &v, j_aug, delta_j, tau0, &mut trial, cfg) {
            Ok(ls) => {
                record.step = ls.step;
                record.backtracks = ls.backtracks;
                log::info!(
                    "iteration {iter}: j {j:.6e}, j_aug {j_aug:.6e}, delta_j {delta_j:.3e}, \
                     area error {:.3e}, step {:.3e} after {} backtracks",
                    area - cfg.target_area,
                    ls.step,
                    ls.backtracks
                );
                shape = ls.shape;
            }
            Err(Error::LineSearch(msg)) => {
                record.backtracks = cfg.max_backtracks;
                log::warn!(
                    "iteration {iter}: {msg}; keeping the shape for the next multiplier"
                );
            }
            Err(e) => return Err(fail(iter, e)),
        }
        iterations.push(record);
        prev_j_aug = Some(j_aug);
    }

    Ok(OptRun {
        iterations,
        shape,
        converged: false,
        stop_reason: "max_iters".into(),
    })
}
