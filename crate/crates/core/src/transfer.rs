//! Coupling between the polygonal mesh boundary and the curved domain
//! boundary.
//!
//! Every boundary-edge quadrature node x (and every boundary vertex) gets a
//! transfer path: a segment to a point x̄ on the curved boundary, found by
//! casting a ray along the edge normal (or the vertex normal bisector), then
//! by closest-point projection, then by a fan of tilted rays. Paths must not
//! cross the interior of the mesh, and the feet x̄ must advance monotonically
//! along the curved boundary as the mesh boundary is walked; non-monotone
//! feet are remapped by closest-point projection and the build fails if that
//! does not repair the order.
//!
//! Between consecutive vertex paths, each boundary edge owns an extension
//! patch: the region bounded by the edge, the two vertex paths, and the
//! boundary section between their feet. Patches carry signed quadrature
//! (triangle fans plus exactly-mapped circular sectors), so their areas sum
//! to the exact area between mesh and domain boundary, and a trace rule along
//! the mapped boundary section for curved-boundary line integrals.

use std::collections::BTreeMap;

use crate::mesh::ComputationalMesh;
use crate::quadrature::{IntervalRule, TriangleRule};
use crate::shape::{BoundaryLoc, DomainShape, SectionChunk};
use crate::{Error, Point2, Result, Vector2};

/// Transfer path from a point x on the mesh boundary to x̄ on the curved
/// boundary. `t` points from x toward x̄ (the direction in which boundary
/// data is integrated); for a zero-length path it is the edge normal.
#[derive(Debug, Clone)]
pub struct PathNode {
    pub x: Point2,
    pub xbar: Point2,
    pub t: Vector2,
    pub l: f64,
    pub foot: BoundaryLoc,
}

/// Quadrature node on the mapped boundary section of one edge.
#[derive(Debug, Clone)]
pub struct GammaNode {
    pub point: Point2,
    /// Unit outward normal of the curved boundary at `point`.
    pub normal: Vector2,
    /// Arclength weight.
    pub ds: f64,
    pub movable: bool,
}

/// Transfer data of one boundary edge.
#[derive(Debug, Clone)]
pub struct EdgeTransfer {
    /// Index into `mesh.edges`.
    pub edge: u32,
    /// One path per edge quadrature node, ordered along the edge from its
    /// lower-id vertex to its higher-id vertex (trace-basis orientation).
    pub nodes: Vec<PathNode>,
    /// Longest boundary gap over this edge, measured along the edge normal.
    pub h_perp_ext: f64,
    /// Local proximity ratio H_e^perp / h_e^perp.
    pub r_e: f64,
    /// Quadrature along the mapped boundary section (walk order).
    pub gamma: Vec<GammaNode>,
    /// Mapped-section arclength landing on movable boundary pieces.
    pub movable_len: f64,
    /// Mapped-section arclength landing on fixed boundary pieces.
    pub fixed_len: f64,
}

impl EdgeTransfer {
    /// Majority classification of the mapped section: true when most of it
    /// lies on fixed (Dirichlet) boundary pieces.
    pub fn is_dirichlet(&self) -> bool {
        self.fixed_len >= self.movable_len
    }
}

/// Extension patch of one boundary edge with a signed quadrature rule.
#[derive(Debug, Clone)]
pub struct ExtensionPatch {
    /// Index into `mesh.edges`.
    pub edge: u32,
    /// Element adjacent to the edge (extrapolation source).
    pub elem: u32,
    pub points: Vec<Point2>,
    /// Signed weights; their sum is the patch area.
    pub weights: Vec<f64>,
    pub area: f64,
}

/// Transfer paths and proximity diagnostics for every boundary edge.
#[derive(Debug, Clone)]
pub struct TransferMap {
    pub q_per_edge: usize,
    /// One entry per `mesh.boundary_edges` slot, same order.
    pub edges: Vec<EdgeTransfer>,
    /// Vertex paths keyed by background vertex id; adjacent edges share them,
    /// so the extension patches tile without gaps.
    pub vertex_paths: BTreeMap<u32, PathNode>,
    /// Global proximity parameter: max over edges of r_e.
    pub r_max: f64,
    pub max_h_perp: f64,
    slot_of_edge: BTreeMap<u32, usize>,
}

/// Admissibility diagnostics; informational only, never aborts a solve.
#[derive(Debug, Clone)]
pub struct AdmissibilityReport {
    /// Quasi-uniformity ratio min/max of element diameters.
    pub quasi_uniformity: f64,
    /// Shape regularity: min over elements of inscribed-circle diameter over
    /// element diameter.
    pub shape_regularity: f64,
    pub r_proximity: f64,
    /// Threshold 1 / (4 tau max(1, 1 + 1/a_min)) on the boundary gap.
    pub h_perp_bound: f64,
    pub h_perp_max: f64,
    pub edges_failing_h: usize,
    pub h_pass: bool,
    pub c_ext: f64,
    pub c_inv: f64,
    /// Threshold 2^(-1/3) (c_ext c_inv)^(-2/3) on the proximity parameter.
    pub r_bound: f64,
    pub r_pass: bool,
}

const FITTED_TOL_FACTOR: f64 = 1e-13;

/// Reference to one stored transfer path (vertex or edge-node).
#[derive(Debug, Clone, Copy)]
enum FootRef {
    Vertex(u32),
    Node { slot: usize, node: usize },
}

struct PathFinder<'a> {
    mesh: &'a ComputationalMesh,
    shape: &'a DomainShape,
    h: f64,
    ray_cap: f64,
}

impl PathFinder<'_> {
    /// Builds a valid transfer path for `x`, preferring a ray along `dir`.
    fn find(&self, x: Point2, dir: Vector2) -> Option<PathNode> {
        // A start on the curved boundary itself needs no path.
        let (cp, loc) = self.shape.closest_point(x);
        let d = (cp - x).norm();
        if d <= FITTED_TOL_FACTOR * self.h {
            return Some(PathNode { x, xbar: x, t: dir, l: 0.0, foot: loc });
        }
        // A ray nearly tangent to the boundary can travel far past the nearest
        // point of the curve and overlap neighbouring transfer regions, so the
        // ray candidate is only accepted within a small multiple of the
        // closest-point distance.
        let budget = (3.0 * d).min(self.ray_cap);
        if let Some(hit) = self.shape.ray_hit(x, dir, budget) {
            if let Some(node) = self.validate(x, dir, hit) {
                return Some(node);
            }
        }
        if let Some(node) = self.validate(x, dir, (d, loc)) {
            return Some(node);
        }
        let step = 80.0_f64.to_radians() / 16.0;
        for i in 1..=16 {
            for sign in [1.0, -1.0] {
                let ang = sign * i as f64 * step;
                let (s, c) = ang.sin_cos();
                let rotated = Vector2::new(c * dir.x - s * dir.y, s * dir.x + c * dir.y);
                if let Some(hit) = self.shape.ray_hit(x, rotated, self.ray_cap) {
                    if let Some(node) = self.validate(x, dir, hit) {
                        return Some(node);
                    }
                }
            }
        }
        None
    }

    fn validate(&self, x: Point2, n_e: Vector2, hit: (f64, BoundaryLoc)) -> Option<PathNode> {
        let xbar = self.shape.point_at(hit.1);
        let l = (xbar - x).norm();
        if l <= FITTED_TOL_FACTOR * self.h {
            return Some(PathNode { x, xbar: x, t: n_e, l: 0.0, foot: hit.1 });
        }
        let t = (xbar - x) / l;
        self.check_clear(x, t, l)
            .then_some(PathNode { x, xbar, t, l, foot: hit.1 })
    }

    /// The open path must stay out of the mesh interior.
    fn check_clear(&self, x: Point2, t: Vector2, l: f64) -> bool {
        for j in 1..=16 {
            let p = x + t * (l * j as f64 / 17.0);
            if self.mesh.strictly_in_interior(p, 1e-9) {
                return false;
            }
        }
        true
    }
}

impl TransferMap {
    /// Builds transfer paths for all boundary edges with `q_per_edge` Gauss
    /// nodes per edge, plus one shared path per boundary vertex.
    pub fn build(
        mesh: &ComputationalMesh,
        shape: &DomainShape,
        q_per_edge: usize,
    ) -> Result<TransferMap> {
        if q_per_edge == 0 {
            return Err(Error::InvalidInput("need at least one quadrature node per edge".into()));
        }
        let h = mesh.background.h();
        let finder = PathFinder { mesh, shape, h, ray_cap: 10.0 * h };
        let rule = IntervalRule::gauss(q_per_edge);

        // Vertex paths along the bisector of the two adjacent edge normals.
        let mut vertex_paths: BTreeMap<u32, PathNode> = BTreeMap::new();
        for lp in &mesh.boundary_loops {
            for (i, ob) in lp.iter().enumerate() {
                let prev = &lp[(i + lp.len() - 1) % lp.len()];
                let n_prev = edge_normal(mesh, prev.edge);
                let n_cur = edge_normal(mesh, ob.edge);
                let mut dir = n_prev + n_cur;
                if dir.norm() < 1e-9 {
                    dir = n_cur;
                }
                let dir = dir.normalize();
                let x = mesh.background.vertex(ob.from_vid);
                let node = finder.find(x, dir).ok_or_else(|| {
                    Error::Transfer(format!(
                        "no valid transfer path from boundary vertex {} at ({:.6}, {:.6})",
                        ob.from_vid, x.x, x.y
                    ))
                })?;
                vertex_paths.insert(ob.from_vid, node);
            }
        }

        // Edge quadrature-node paths along the edge normal.
        let mut edges = Vec::with_capacity(mesh.boundary_edges.len());
        let mut slot_of_edge = BTreeMap::new();
        for &ei in &mesh.boundary_edges {
            let e = &mesh.edges[ei as usize];
            let n_e = edge_normal(mesh, ei);
            let mut nodes = Vec::with_capacity(q_per_edge);
            for &tq in &rule.nodes {
                let x = e.point_at(tq);
                let node = finder.find(x, n_e).ok_or_else(|| {
                    Error::Transfer(format!(
                        "no valid transfer path from edge {} node ({:.6}, {:.6})",
                        ei, x.x, x.y
                    ))
                })?;
                nodes.push(node);
            }
            slot_of_edge.insert(ei, edges.len());
            edges.push(EdgeTransfer {
                edge: ei,
                nodes,
                h_perp_ext: 0.0,
                r_e: 0.0,
                gamma: Vec::new(),
                movable_len: 0.0,
                fixed_len: 0.0,
            });
        }

        let mut tm = TransferMap {
            q_per_edge,
            edges,
            vertex_paths,
            r_max: 0.0,
            max_h_perp: 0.0,
            slot_of_edge,
        };
        tm.enforce_monotone_feet(mesh, shape, &finder)?;
        tm.measure_heights(mesh, shape, &finder);
        tm.build_gamma_rules(mesh, shape)?;
        Ok(tm)
    }

    pub fn edge_transfer(&self, edge: u32) -> &EdgeTransfer {
        &self.edges[self.slot_of_edge[&edge]]
    }

    /// Slot of a boundary edge in [`TransferMap::edges`].
    pub fn slot_of(&self, edge: u32) -> usize {
        self.slot_of_edge[&edge]
    }

    fn foot_of(&self, fr: FootRef) -> BoundaryLoc {
        match fr {
            FootRef::Vertex(v) => self.vertex_paths[&v].foot,
            FootRef::Node { slot, node } => self.edges[slot].nodes[node].foot,
        }
    }

    /// Rebuilds one path by closest-point projection onto the given curved
    /// loop, keeping the non-crossing requirement.
    fn remap_foot(
        &mut self,
        fr: FootRef,
        target_loop: usize,
        shape: &DomainShape,
        finder: &PathFinder,
        edge: u32,
    ) -> Result<()> {
        let (x, fallback_dir) = match fr {
            FootRef::Vertex(v) => {
                let p = &self.vertex_paths[&v];
                (p.x, p.t)
            }
            FootRef::Node { slot, node } => {
                let p = &self.edges[slot].nodes[node];
                (p.x, p.t)
            }
        };
        let (xbar, foot) = shape.closest_point_on_loop(x, target_loop);
        let l = (xbar - x).norm();
        let node = if l <= FITTED_TOL_FACTOR * finder.h {
            PathNode { x, xbar: x, t: fallback_dir, l: 0.0, foot }
        } else {
            let t = (xbar - x) / l;
            if !finder.check_clear(x, t, l) {
                return Err(Error::Transfer(format!(
                    "remapped transfer path of edge {edge} crosses the mesh interior"
                )));
            }
            PathNode { x, xbar, t, l, foot }
        };
        match fr {
            FootRef::Vertex(v) => {
                self.vertex_paths.insert(v, node);
            }
            FootRef::Node { slot, node: j } => {
                self.edges[slot].nodes[j] = node;
            }
        }
        Ok(())
    }

    /// Moves one foot onto a nearby target location, keeping the path start.
    fn align_foot(&mut self, fr: FootRef, target: BoundaryLoc, shape: &DomainShape, finder: &PathFinder) {
        let old = match fr {
            FootRef::Vertex(v) => self.vertex_paths[&v].clone(),
            FootRef::Node { slot, node } => self.edges[slot].nodes[node].clone(),
        };
        let xbar = shape.point_at(target);
        let l = (xbar - old.x).norm();
        let node = if l <= FITTED_TOL_FACTOR * finder.h {
            PathNode { x: old.x, xbar: old.x, t: old.t, l: 0.0, foot: target }
        } else {
            PathNode { x: old.x, xbar, t: (xbar - old.x) / l, l, foot: target }
        };
        match fr {
            FootRef::Vertex(v) => {
                self.vertex_paths.insert(v, node);
            }
            FootRef::Node { slot, node: j } => {
                self.edges[slot].nodes[j] = node;
            }
        }
    }

    /// Walks every boundary loop, checks that the feet advance monotonically
    /// along one curved-boundary loop, and remaps offenders by closest-point
    /// projection.
    fn enforce_monotone_feet(
        &mut self,
        mesh: &ComputationalMesh,
        shape: &DomainShape,
        finder: &PathFinder,
    ) -> Result<()> {
        for lp in &mesh.boundary_loops {
            // Foot references over the loop: each vertex foot, then the edge
            // node feet in walk order.
            let mut feet: Vec<(FootRef, u32)> = Vec::new();
            for ob in lp {
                feet.push((FootRef::Vertex(ob.from_vid), ob.edge));
                let slot = self.slot_of_edge[&ob.edge];
                let e = &mesh.edges[ob.edge as usize];
                let forward = e.va == ob.from_vid;
                let n = self.edges[slot].nodes.len();
                for j in 0..n {
                    let node = if forward { j } else { n - 1 - j };
                    feet.push((FootRef::Node { slot, node }, ob.edge));
                }
            }

            // Majority curved loop, then remap strays onto it.
            let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
            for (fr, _) in &feet {
                *counts.entry(self.foot_of(*fr).loop_idx).or_default() += 1;
            }
            let majority = *counts.iter().max_by_key(|(_, c)| **c).unwrap().0;
            for (fr, edge) in &feet {
                if self.foot_of(*fr).loop_idx != majority {
                    self.remap_foot(*fr, majority, shape, finder, *edge)?;
                }
            }

            // Only the vertex feet bound the per-edge boundary sections, so
            // the ordering requirement applies to them alone; the edge node
            // feet are free samples of the curved boundary.
            let vertex_feet: Vec<(FootRef, u32)> = feet
                .iter()
                .filter(|(fr, _)| matches!(fr, FootRef::Vertex(_)))
                .copied()
                .collect();

            // Monotone advance: no jump may run backward by more than jitter.
            let total = shape.loop_length(majority);
            let jitter = 1e-7 * total;
            let mut retried = false;
            let mut i = 0;
            while i < vertex_feet.len() {
                let cur = self.foot_of(vertex_feet[i].0);
                let next_idx = (i + 1) % vertex_feet.len();
                let (next_fr, next_edge) = vertex_feet[next_idx];
                let next = self.foot_of(next_fr);
                let gap =
                    (shape.loop_position(next) - shape.loop_position(cur)).rem_euclid(total);
                if gap > 0.5 * total {
                    if total - gap > jitter {
                        if !retried {
                            retried = true;
                            self.remap_foot(next_fr, majority, shape, finder, next_edge)?;
                            continue;
                        }
                        if std::env::var("HDG_DEBUG_FEET").is_ok() {
                            for (j, (fr, edge)) in feet.iter().enumerate() {
                                let f = self.foot_of(*fr);
                                let p = match fr {
                                    FootRef::Vertex(v) => self.vertex_paths[v].clone(),
                                    FootRef::Node { slot, node } => {
                                        self.edges[*slot].nodes[*node].clone()
                                    }
                                };
                                eprintln!(
                                    "foot {j}: edge {edge} pos {:.6} loop {} ({:?}) x=({:.4},{:.4}) xbar=({:.4},{:.4}) t=({:.3},{:.3})",
                                    shape.loop_position(f),
                                    f.loop_idx,
                                    fr,
                                    p.x.x,
                                    p.x.y,
                                    p.xbar.x,
                                    p.xbar.y,
                                    p.t.x,
                                    p.t.y
                                );
                            }
                        }
                        return Err(Error::Transfer(format!(
                            "transfer feet of edge {next_edge} leave the monotone order along the boundary"
                        )));
                    }
                    // Backward by no more than jitter: align the foot with its
                    // predecessor so the section between them stays empty
                    // instead of wrapping the whole loop.
                    self.align_foot(next_fr, cur, shape, finder);
                }
                retried = false;
                i += 1;
            }

            // The vertex feet must wind exactly once around the curved loop.
            let mut winding = 0.0;
            for i in 0..vertex_feet.len() {
                let cur = self.foot_of(vertex_feet[i].0);
                let next = self.foot_of(vertex_feet[(i + 1) % vertex_feet.len()].0);
                let gap =
                    (shape.loop_position(next) - shape.loop_position(cur)).rem_euclid(total);
                winding += if gap > 0.5 * total { gap - total } else { gap };
            }
            if (winding - total).abs() > 1e-3 * total {
                return Err(Error::Transfer(format!(
                    "transfer feet wind {:.3} times around the boundary loop (expected once)",
                    winding / total
                )));
            }
        }
        Ok(())
    }

    /// Measures the boundary gap over each edge along its normal and derives
    /// the proximity ratios.
    fn measure_heights(
        &mut self,
        mesh: &ComputationalMesh,
        shape: &DomainShape,
        finder: &PathFinder,
    ) {
        let mut r_max = 0.0_f64;
        let mut h_max = 0.0_f64;
        for et in &mut self.edges {
            let e = &mesh.edges[et.edge as usize];
            let n_e = edge_normal(mesh, et.edge);
            let mut h_perp = et.nodes.iter().map(|n| n.l).fold(0.0_f64, f64::max);
            for vid in [e.va, e.vb] {
                if let Some(vp) = self.vertex_paths.get(&vid) {
                    h_perp = h_perp.max(vp.l);
                }
            }
            for j in 0..=9 {
                let x = e.point_at(j as f64 / 9.0);
                if let Some((s, _)) = shape.ray_hit(x, n_e, finder.ray_cap) {
                    h_perp = h_perp.max(s);
                }
            }
            let side = e.side_a;
            let h_elem = mesh.elements[side.elem as usize].height_over_edge(side.local as usize);
            et.h_perp_ext = h_perp;
            et.r_e = h_perp / h_elem;
            r_max = r_max.max(et.r_e);
            h_max = h_max.max(h_perp);
        }
        self.r_max = r_max;
        self.max_h_perp = h_max;
    }

    /// Builds the quadrature along each edge's mapped boundary section.
    fn build_gamma_rules(&mut self, mesh: &ComputationalMesh, shape: &DomainShape) -> Result<()> {
        let n_gauss = (self.q_per_edge + 2).max(4);
        let rule = IntervalRule::gauss(n_gauss);
        for lp in &mesh.boundary_loops {
            for ob in lp {
                let a = self
                    .vertex_paths
                    .get(&ob.from_vid)
                    .ok_or_else(|| Error::Transfer(format!("missing vertex path {}", ob.from_vid)))?
                    .foot;
                let b = self
                    .vertex_paths
                    .get(&ob.to_vid)
                    .ok_or_else(|| Error::Transfer(format!("missing vertex path {}", ob.to_vid)))?
                    .foot;
                let chunks = shape.section(a, b);
                let slot = self.slot_of_edge[&ob.edge];
                let et = &mut self.edges[slot];
                et.gamma.clear();
                et.movable_len = 0.0;
                et.fixed_len = 0.0;
                for chunk in &chunks {
                    let len = chunk.length();
                    if chunk.movable() {
                        et.movable_len += len;
                    } else {
                        et.fixed_len += len;
                    }
                    for (u, w) in rule.nodes.iter().zip(rule.weights.iter()) {
                        let (p, n) = chunk.point_and_normal(*u);
                        et.gamma.push(GammaNode {
                            point: p,
                            normal: n,
                            ds: w * len,
                            movable: chunk.movable(),
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

fn edge_normal(mesh: &ComputationalMesh, edge: u32) -> Vector2 {
    let e = &mesh.edges[edge as usize];
    mesh.elements[e.side_a.elem as usize].outward_normal(e.side_a.local as usize)
}

/// Builds one extension patch per boundary edge: a signed fan from the edge
/// midpoint over the patch boundary (vertex path, mapped boundary section,
/// reverse vertex path), with circular sectors mapped exactly.
pub fn build_extension_patches(
    tm: &TransferMap,
    mesh: &ComputationalMesh,
    shape: &DomainShape,
    degree: usize,
) -> Result<Vec<ExtensionPatch>> {
    let h = mesh.background.h();
    let tri_rule = TriangleRule::with_degree(degree);
    let u_rule = IntervalRule::with_degree(degree + 1);
    let v_rule = IntervalRule::gauss(((degree + 2) / 2 + 1).max(6));
    let mut patches = Vec::with_capacity(mesh.boundary_edges.len());
    for lp in &mesh.boundary_loops {
        for ob in lp {
            let e = &mesh.edges[ob.edge as usize];
            let pa = &tm.vertex_paths[&ob.from_vid];
            let pb = &tm.vertex_paths[&ob.to_vid];
            let m = e.midpoint();
            let mut points = Vec::new();
            let mut weights = Vec::new();
            add_signed_triangle(&tri_rule, m, pa.x, pa.xbar, &mut points, &mut weights);
            for chunk in shape.section(pa.foot, pb.foot) {
                match chunk {
                    SectionChunk::Segment { a, b, .. } => {
                        add_signed_triangle(&tri_rule, m, a, b, &mut points, &mut weights);
                    }
                    SectionChunk::Arc { center, radius, th0, th1, .. } => {
                        add_curved_sector(
                            &u_rule, &v_rule, m, center, radius, th0, th1, &mut points,
                            &mut weights,
                        );
                    }
                }
            }
            add_signed_triangle(&tri_rule, m, pb.xbar, pb.x, &mut points, &mut weights);
            let area: f64 = weights.iter().sum();
            if area.abs() < 1e-14 * h * h {
                points.clear();
                weights.clear();
            }
            patches.push(ExtensionPatch {
                edge: ob.edge,
                elem: e.side_a.elem,
                points,
                weights,
                area,
            });
        }
    }
    Ok(patches)
}

fn add_signed_triangle(
    rule: &TriangleRule,
    m: Point2,
    p: Point2,
    q: Point2,
    points: &mut Vec<Point2>,
    weights: &mut Vec<f64>,
) {
    let jac = (p - m).perp(&(q - m));
    if jac.abs() < 1e-300 {
        return;
    }
    for (pt, w) in rule.points.iter().zip(rule.weights.iter()) {
        points.push(m + (p - m) * pt.0 + (q - m) * pt.1);
        weights.push(w * jac);
    }
}

/// Quadrature for the region swept by segments from `m` to the arc, with the
/// exact curved map X(u, v) = m + u (gamma(v) - m).
#[allow(clippy::too_many_arguments)]
fn add_curved_sector(
    u_rule: &IntervalRule,
    v_rule: &IntervalRule,
    m: Point2,
    center: Point2,
    radius: f64,
    th0: f64,
    th1: f64,
    points: &mut Vec<Point2>,
    weights: &mut Vec<f64>,
) {
    let sweep = th1 - th0;
    if sweep == 0.0 {
        return;
    }
    let n_sub = ((sweep.abs() / 0.2).ceil() as usize).clamp(1, 32);
    for s in 0..n_sub {
        let p0 = th0 + sweep * s as f64 / n_sub as f64;
        let p1 = th0 + sweep * (s + 1) as f64 / n_sub as f64;
        let span = p1 - p0;
        for (v, wv) in v_rule.nodes.iter().zip(v_rule.weights.iter()) {
            let th = p0 + v * span;
            let e = Vector2::new(th.cos(), th.sin());
            let g = center + e * radius;
            let radial = radius * (radius + (center - m).dot(&e));
            for (u, wu) in u_rule.nodes.iter().zip(u_rule.weights.iter()) {
                points.push(m + (g - m) * *u);
                weights.push(wu * wv * span * u * radial);
            }
        }
    }
}

/// Evaluates the boundary-gap and proximity admissibility conditions.
pub fn check_admissibility(
    mesh: &ComputationalMesh,
    tm: &TransferMap,
    k: usize,
    tau: f64,
    a_min: f64,
) -> AdmissibilityReport {
    let h_bound = 1.0 / (4.0 * tau * (1.0 + 1.0 / a_min).max(1.0));
    let mut failing = 0usize;
    for et in &tm.edges {
        if et.h_perp_ext > h_bound {
            failing += 1;
        }
    }
    let mut diam_min = f64::INFINITY;
    let mut diam_max = 0.0_f64;
    let mut rho = f64::INFINITY;
    for el in &mesh.elements {
        let l0 = (el.verts[1] - el.verts[0]).norm();
        let l1 = (el.verts[2] - el.verts[1]).norm();
        let l2 = (el.verts[0] - el.verts[2]).norm();
        let diam = l0.max(l1).max(l2);
        let inscribed = 4.0 * el.area / (l0 + l1 + l2);
        diam_min = diam_min.min(diam);
        diam_max = diam_max.max(diam);
        rho = rho.min(inscribed / diam);
    }
    let beta = 1.0 / rho;
    let c_ext = ((k + 1) * (k + 1)) as f64 * (3.0 * beta + 2.0).powi(k as i32);
    let c_inv = (k * k) as f64;
    let r_bound = if c_inv == 0.0 {
        f64::INFINITY
    } else {
        0.5_f64.powf(1.0 / 3.0) * (c_ext * c_inv).powf(-2.0 / 3.0)
    };
    AdmissibilityReport {
        quasi_uniformity: diam_min / diam_max,
        shape_regularity: rho,
        r_proximity: tm.r_max,
        h_perp_bound: h_bound,
        h_perp_max: tm.max_h_perp,
        edges_failing_h: failing,
        h_pass: failing == 0,
        c_ext,
        c_inv,
        r_bound,
        r_pass: tm.r_max < r_bound,
    }
}
