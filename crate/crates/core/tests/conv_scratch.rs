//! Scratch convergence probe (to be folded into the acceptance suite).

#[path = "support/mod.rs"]
mod support;

use unfitted_hdg::hdg::{
    deformation_classification, solve_deformation, DeformationData, HdgConfig,
};
use unfitted_hdg::{BackgroundMesh, ComputationalMesh, Point2, TransferMap, Vector2};

#[test]
#[ignore]
fn probe_deformation() {
    let shape = support::movable_annulus(0.05, 0.2);
    let bg =
        BackgroundMesh::square(Point2::new(-0.25, -0.25), Point2::new(0.25, 0.25), 16).unwrap();
    let mesh = ComputationalMesh::extract(&bg, &shape).unwrap();
    let cfg = HdgConfig::new(1, 1.0);
    let tm = TransferMap::build(&mesh, &shape, cfg.edge_nodes()).unwrap();
    let classes = deformation_classification(&tm);
    let nd = classes.iter().filter(|c| **c).count();
    println!(
        "boundary edges: {} dirichlet, {} neumann",
        nd,
        classes.len() - nd
    );

    let tm_ref = &tm;
    let shape_ref = &shape;
    let neumann = move |e: u32, q: usize| {
        let node = &tm_ref.edge_transfer(e).nodes[q];
        let nbar = shape_ref.normal_at(node.foot);
        let d = -support::defo_scalar_grad(node.xbar).dot(&nbar);
        Vector2::new(d, d)
    };
    let dirichlet = |p: Point2| {
        let v = support::defo_scalar(p);
        Vector2::new(v, v)
    };
    let source = |p: Point2| {
        let f = -(4.0 + 4.0 * p.coords.norm_squared()) * support::defo_scalar(p);
        Vector2::new(f, f)
    };
    let defo = solve_deformation(
        &mesh,
        &tm,
        &cfg,
        &DeformationData { neumann: &neumann, dirichlet: &dirichlet, source: &source },
    )
    .unwrap();
    for probe in [
        Point2::new(0.1, 0.0),
        Point2::new(0.0, 0.15),
        Point2::new(-0.12, -0.05),
    ] {
        let elem = mesh.nearest_element(probe);
        let v = defo.velocity_at(&mesh, elem, probe);
        let want = support::defo_scalar(probe);
        println!("V({:.2},{:.2}) = ({:.6}, {:.6}) want {:.6}", probe.x, probe.y, v.x, v.y, want);
    }
}

#[test]
#[ignore]
fn probe_fitted_neumann() {
    use unfitted_hdg::shape::Piece;
    use unfitted_hdg::DomainShape;

    let seg = |a: Point2, b: Point2, movable: bool| Piece::Polyline {
        points: vec![a, b],
        movable,
        closed: false,
    };
    let c00 = Point2::new(0.0, 0.0);
    let c10 = Point2::new(1.0, 0.0);
    let c11 = Point2::new(1.0, 1.0);
    let c01 = Point2::new(0.0, 1.0);
    let shape = DomainShape::new(vec![vec![
        seg(c00, c10, false),
        seg(c10, c11, true),
        seg(c11, c01, true),
        seg(c01, c00, true),
    ]])
    .unwrap();
    let bg = BackgroundMesh::square(c00, c11, 4).unwrap();
    let mesh = ComputationalMesh::extract(&bg, &shape).unwrap();
    let cfg = HdgConfig::new(2, 1.0);
    let tm = TransferMap::build(&mesh, &shape, cfg.edge_nodes()).unwrap();
    let classes = deformation_classification(&tm);
    let nd = classes.iter().filter(|c| **c).count();
    println!("fitted square: {} dirichlet, {} neumann edges", nd, classes.len() - nd);

    let exact = |p: Point2| p.x * p.x + 0.5 * p.x * p.y - p.y * p.y + 2.0 * p.x - 1.0;
    let grad = |p: Point2| Vector2::new(2.0 * p.x + 0.5 * p.y + 2.0, 0.5 * p.x - 2.0 * p.y);
    let tm_ref = &tm;
    let shape_ref = &shape;
    let neumann = move |e: u32, q: usize| {
        let node = &tm_ref.edge_transfer(e).nodes[q];
        let nbar = shape_ref.normal_at(node.foot);
        let d = -grad(node.xbar).dot(&nbar);
        Vector2::new(d, d)
    };
    let dirichlet = |p: Point2| Vector2::new(exact(p), exact(p));
    let source = |_: Point2| Vector2::zeros();
    let defo = solve_deformation(
        &mesh,
        &tm,
        &cfg,
        &DeformationData { neumann: &neumann, dirichlet: &dirichlet, source: &source },
    )
    .unwrap();
    let norms = unfitted_hdg::hdg::compute_error_norms(
        &mesh,
        &[],
        &defo.components[0],
        &exact,
        &|p| -grad(p),
        &cfg,
    );
    println!(
        "fitted neumann errors: primal {:.3e} flux {:.3e} trace {:.3e}",
        norms.primal, norms.flux, norms.trace
    );
}

#[test]
#[ignore]
fn probe_shape_recovery() {
    use unfitted_hdg::shapeopt::{run_optimization, OptConfig};

    let shape0 = support::flower_shape(2000);
    let bg = BackgroundMesh::square(Point2::new(-1.0, -1.0), Point2::new(1.0, 1.0), 48).unwrap();
    let data = support::recovery_data();
    let hdg_cfg = HdgConfig::new(1, 1.0);
    let mut cfg = OptConfig::new(support::recovery_target_area());
    cfg.tol = 1e-9;
    let t0 = std::time::Instant::now();
    let run = run_optimization(&bg, &shape0, &data, &hdg_cfg, &cfg).unwrap();
    println!(
        "elapsed {:.1?}, {} iterations, converged {} ({})",
        t0.elapsed(),
        run.iterations.len(),
        run.converged,
        run.stop_reason
    );
    for it in &run.iterations {
        println!(
            "it {:2} elems {:4} area_err {:+.4e} J {:.6e} dJ {:+.3e} chi {:+.4e} xi {:+.4e} step {:.3e} bt {}",
            it.iter,
            it.n_elements,
            it.area - cfg.target_area,
            it.j,
            it.delta_j,
            it.chi,
            it.xi,
            it.step,
            it.backtracks
        );
    }
    let rstar = support::recovery_optimal_radius();
    println!(
        "final: dist-to-circle {:.4e} area_err {:+.4e}",
        support::max_distance_to_circle(&run.shape, rstar),
        run.shape.area() - cfg.target_area
    );

    // Boundary diagnostics at the final shape: density and normal velocity.
    use unfitted_hdg::hdg::{solve_deformation, solve_state_and_adjoint, DeformationData};
    use unfitted_hdg::shapeopt::{
        chi_and_update_multiplier, deformation_neumann, evaluate_shape_gradient,
    };
    let shape = &run.shape;
    let mesh = ComputationalMesh::extract(&bg, shape).unwrap();
    let tm = TransferMap::build(&mesh, shape, hdg_cfg.edge_nodes()).unwrap();
    let (state, adjoint) = solve_state_and_adjoint(&mesh, &tm, &data, &hdg_cfg).unwrap();
    let grad = evaluate_shape_gradient(&mesh, &tm, shape, &data, &state, &adjoint);
    let xi = run.iterations.last().unwrap().xi;
    let (chi, _) = chi_and_update_multiplier(&grad, &tm, shape.area(), Some(xi), &cfg);
    let neumann_vals = deformation_neumann(&tm, shape, &grad, xi);
    let neumann = |e: u32, q: usize| neumann_vals[tm.slot_of(e)][q];
    let dirichlet = |_: Point2| Vector2::zeros();
    let source = |_: Point2| Vector2::zeros();
    let v = solve_deformation(
        &mesh,
        &tm,
        &hdg_cfg,
        &DeformationData { neumann: &neumann, dirichlet: &dirichlet, source: &source },
    )
    .unwrap();
    println!("chi {chi:+.4e} xi {xi:+.4e}");
    let mut rows: Vec<(f64, f64, f64, f64)> = Vec::new();
    for (slot, et) in tm.edges.iter().enumerate() {
        let ke = mesh.edges[et.edge as usize].side_a.elem as usize;
        let mid = et.gamma.len() / 2;
        let Some(gn) = et.gamma.get(mid) else { continue };
        if !gn.movable {
            continue;
        }
        let gtil = grad.at_gamma[slot][mid] + xi;
        let vel = v.velocity_at(&mesh, ke, gn.point);
        rows.push((
            gn.point.y.atan2(gn.point.x),
            gn.point.coords.norm(),
            gtil,
            vel.dot(&gn.normal),
        ));
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    for r in rows.iter().step_by(4) {
        println!(
            "theta {:+.3} r {:.4} gtilde {:+.4e} v.n {:+.4e}",
            r.0, r.1, r.2, r.3
        );
    }

    // Classify line-search trial outcomes along the final velocity field.
    use unfitted_hdg::shapeopt::{deform_shape, evaluate_delta_j, evaluate_j, max_velocity};
    use unfitted_hdg::transfer::build_extension_patches;
    let patches = build_extension_patches(&tm, &mesh, shape, 2 * hdg_cfg.k + 4).unwrap();
    let j = evaluate_j(&mesh, &patches, &state, &data);
    let j_aug = j + xi * (shape.area() - cfg.target_area);
    let delta_j = evaluate_delta_j(&mesh, &tm, &grad, xi, &v);
    let cap = bg.h() / max_velocity(&mesh, &v);
    println!("j_aug {j_aug:.9e} delta_j {delta_j:+.3e} cap {cap:.3e}");
    let mut tau = cap;
    for _ in 0..24 {
        let outcome = match deform_shape(shape, &mesh, &v, tau) {
            Err(e) => format!("deform failed: {e}"),
            Ok(cand) => match ComputationalMesh::extract(&bg, &cand) {
                Err(e) => format!("extract failed: {e}"),
                Ok(cm) => match TransferMap::build(&cm, &cand, hdg_cfg.edge_nodes()) {
                    Err(e) => format!("transfer failed: {e}"),
                    Ok(ctm) => {
                        match build_extension_patches(&ctm, &cm, &cand, 2 * hdg_cfg.k + 4) {
                            Err(e) => format!("patches failed: {e}"),
                            Ok(cp) => {
                                match unfitted_hdg::hdg::solve_state(&cm, &ctm, &data, &hdg_cfg)
                                {
                                    Err(e) => format!("solve failed: {e}"),
                                    Ok(cs) => {
                                        let cj = evaluate_j(&cm, &cp, &cs, &data);
                                        let ja = cj + xi * (cand.area() - cfg.target_area);
                                        let thr = j_aug + cfg.armijo_c1 * tau * delta_j;
                                        format!(
                                            "j {ja:.9e} change {:+.3e} {}",
                                            ja - j_aug,
                                            if ja <= thr { "PASS" } else { "fail" }
                                        )
                                    }
                                }
                            }
                        }
                    }
                },
            },
        };
        println!("tau {tau:9.3e}: {outcome}");
        tau *= 0.5;
    }
}

#[test]
#[ignore]
fn probe_gradient_noise() {
    use unfitted_hdg::hdg::solve_state_and_adjoint;

    let data = support::recovery_data();
    let rstar = support::recovery_optimal_radius();
    let hdg_cfg = HdgConfig::new(1, 1.0);
    for n in [48usize, 88] {
        let shape = support::movable_annulus(0.05, rstar);
        let bg =
            BackgroundMesh::square(Point2::new(-1.0, -1.0), Point2::new(1.0, 1.0), n).unwrap();
        let mesh = ComputationalMesh::extract(&bg, &shape).unwrap();
        let tm = TransferMap::build(&mesh, &shape, hdg_cfg.edge_nodes()).unwrap();
        let (state, adjoint) = solve_state_and_adjoint(&mesh, &tm, &data, &hdg_cfg).unwrap();
        let density = |ke: usize, x: Point2, nrm: Vector2| -> f64 {
            let p_flux = state.flux_at(&mesh, ke, x);
            let r_flux = adjoint.flux_at(&mesh, ke, x);
            let yt = (data.y_target)(x);
            r_flux.dot(&nrm) * p_flux.dot(&nrm) + 0.5 * yt * yt
        };
        let mut stats = [(f64::MAX, f64::MIN, 0.0, 0.0); 2];
        for et in &tm.edges {
            let ka = mesh.edges[et.edge as usize].side_a.elem as usize;
            for gn in &et.gamma {
                if !gn.movable {
                    continue;
                }
                let kn = mesh.nearest_element(gn.point);
                for (s, ke) in [(0, ka), (1, kn)] {
                    let g = density(ke, gn.point, gn.normal);
                    let st = &mut stats[s];
                    st.0 = st.0.min(g);
                    st.1 = st.1.max(g);
                    st.2 += gn.ds * g;
                    st.3 += gn.ds;
                }
            }
        }
        for (label, st) in ["side_a ", "nearest"].iter().zip(&stats) {
            println!(
                "n {n:3} {label} G_h mean {:+.6e} spread {:.3e}",
                st.2 / st.3,
                st.1 - st.0
            );
        }
    }
}

#[test]
#[ignore]
fn probe_error_split() {
    use unfitted_hdg::hdg::{compute_error_norms, solve_state};
    use unfitted_hdg::transfer::build_extension_patches;
    use unfitted_hdg::TransferMap;

    for k in [1usize, 2] {
        for n in [16usize, 32, 64, 128] {
            let shape = support::movable_annulus(0.05, 0.2);
            let (lo, hi) = support::annulus_box();
            let bg = BackgroundMesh::square(lo, hi, n).unwrap();
            let mesh = ComputationalMesh::extract(&bg, &shape).unwrap();
            let cfg = HdgConfig::new(k, 1.0);
            let tm = TransferMap::build(&mesh, &shape, cfg.edge_nodes()).unwrap();
            let patches =
                build_extension_patches(&tm, &mesh, &shape, cfg.volume_degree + 2).unwrap();
            let data = support::sinsin_data();
            let sol = solve_state(&mesh, &tm, &data, &cfg).unwrap();
            let full = compute_error_norms(
                &mesh,
                &patches,
                &sol,
                &support::sinsin,
                &|p| -support::sinsin_grad(p),
                &cfg,
            );
            let interior = compute_error_norms(
                &mesh,
                &[],
                &sol,
                &support::sinsin,
                &|p| -support::sinsin_grad(p),
                &cfg,
            );
            let strip_p = (full.primal.powi(2) - interior.primal.powi(2)).max(0.0).sqrt();
            let strip_q = (full.flux.powi(2) - interior.flux.powi(2)).max(0.0).sqrt();
            println!(
                "k={k} n={n} r_max={:.2} primal: interior {:.3e} strip {:.3e} | flux: interior {:.3e} strip {:.3e}",
                tm.r_max,
                interior.primal,
                strip_p,
                interior.flux,
                strip_q
            );
        }
    }
}

#[test]
#[ignore]
fn probe_convergence() {
    for k in [1usize, 2] {
        let mut hs = Vec::new();
        let mut table: Vec<[f64; 12]> = Vec::new();
        for n in [32usize, 64, 128, 256] {
            let e = support::annulus_mms_errors(n, k);
            hs.push(e.h);
            table.push([
                e.state.primal_mesh,
                e.state.flux_mesh,
                e.state.trace,
                e.adjoint.primal_mesh,
                e.adjoint.flux_mesh,
                e.adjoint.trace,
                e.deformation.primal_mesh,
                e.deformation.flux_mesh,
                e.deformation.trace,
                e.state.primal,
                e.state.flux,
                e.deformation.primal,
            ]);
            println!(
                "k={k} n={n} elems={} state=({:.3e},{:.3e},{:.3e}) adj=({:.3e},{:.3e},{:.3e}) defo=({:.3e},{:.3e},{:.3e})",
                e.n_elements,
                e.state.primal_mesh,
                e.state.flux_mesh,
                e.state.trace,
                e.adjoint.primal_mesh,
                e.adjoint.flux_mesh,
                e.adjoint.trace,
                e.deformation.primal_mesh,
                e.deformation.flux_mesh,
                e.deformation.trace
            );
        }
        for (name, col) in [
            ("state primal", 0usize),
            ("state flux", 1),
            ("state trace", 2),
            ("adjoint primal", 3),
            ("adjoint flux", 4),
            ("adjoint trace", 5),
            ("defo primal", 6),
            ("defo flux", 7),
            ("defo trace", 8),
            ("state primal full", 9),
            ("state flux full", 10),
            ("defo primal full", 11),
        ] {
            let errs: Vec<f64> = table.iter().map(|r| r[col]).collect();
            let all = support::fit_slope(&hs, &errs);
            let f3 = support::fit_slope(&hs[1..], &errs[1..]);
            println!("k={k} slope {name}: all4 {all:.3} finest3 {f3:.3}");
        }
    }
}
