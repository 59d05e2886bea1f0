//! Background triangulation and extracted computational mesh.
//!
//! The background mesh is a fixed uniform grid of axis-aligned rectangles,
//! each split along its main diagonal into two right triangles. The
//! computational mesh keeps exactly those triangles whose three vertices and
//! centroid lie strictly inside the given domain (with a small clearance
//! tolerance proportional to the mesh size), then builds the skeleton of
//! element edges and walks the boundary into closed oriented loops. The
//! element set never conforms to the curved boundary; the gap is handled by
//! the transfer map.

use std::collections::BTreeMap;

use crate::shape::DomainShape;
use crate::{Error, Point2, Result, Vector2};

/// Uniform right-triangle grid over a rectangle.
#[derive(Debug, Clone)]
pub struct BackgroundMesh {
    pub lo: Point2,
    pub hi: Point2,
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
}

impl BackgroundMesh {
    pub fn new(lo: Point2, hi: Point2, nx: usize, ny: usize) -> Result<Self> {
        if !(hi.x > lo.x && hi.y > lo.y) || nx == 0 || ny == 0 {
            return Err(Error::InvalidInput("background mesh needs a positive extent".into()));
        }
        let dx = (hi.x - lo.x) / nx as f64;
        let dy = (hi.y - lo.y) / ny as f64;
        Ok(BackgroundMesh { lo, hi, nx, ny, dx, dy })
    }

    /// Square grid with `n` cells per side.
    pub fn square(lo: Point2, hi: Point2, n: usize) -> Result<Self> {
        BackgroundMesh::new(lo, hi, n, n)
    }

    /// Finest uniform grid whose mesh size does not exceed `h_target`.
    pub fn with_target_h(lo: Point2, hi: Point2, h_target: f64) -> Result<Self> {
        let ex = hi.x - lo.x;
        let ey = hi.y - lo.y;
        if h_target <= 0.0 || h_target > (ex * ex + ey * ey).sqrt() {
            return Err(Error::InvalidInput(format!(
                "mesh size target {h_target} must be positive and no larger than the box diagonal"
            )));
        }
        let s = h_target / std::f64::consts::SQRT_2;
        let nx = (ex / s).ceil() as usize;
        let ny = (ey / s).ceil() as usize;
        BackgroundMesh::new(lo, hi, nx.max(1), ny.max(1))
    }

    /// Mesh size: the diagonal of a grid cell, which is the longest edge of
    /// every triangle. All triangles are congruent, so this is also the
    /// smallest element diameter.
    pub fn h(&self) -> f64 {
        (self.dx * self.dx + self.dy * self.dy).sqrt()
    }

    pub fn n_vertices(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    pub fn n_triangles(&self) -> usize {
        2 * self.nx * self.ny
    }

    pub fn vertex_id(&self, ix: usize, iy: usize) -> u32 {
        (iy * (self.nx + 1) + ix) as u32
    }

    pub fn vertex(&self, id: u32) -> Point2 {
        let ix = id as usize % (self.nx + 1);
        let iy = id as usize / (self.nx + 1);
        Point2::new(self.lo.x + ix as f64 * self.dx, self.lo.y + iy as f64 * self.dy)
    }

    /// Vertex ids of triangle `tri`, counterclockwise. Each cell splits along
    /// the diagonal from its lower-left to its upper-right corner.
    pub fn triangle_vertex_ids(&self, tri: usize) -> [u32; 3] {
        let cell = tri / 2;
        let ix = cell % self.nx;
        let iy = cell / self.nx;
        let v00 = self.vertex_id(ix, iy);
        let v10 = self.vertex_id(ix + 1, iy);
        let v01 = self.vertex_id(ix, iy + 1);
        let v11 = self.vertex_id(ix + 1, iy + 1);
        if tri % 2 == 0 {
            [v00, v10, v11]
        } else {
            [v00, v11, v01]
        }
    }

    /// Triangle containing `p`, if `p` lies within the grid rectangle.
    pub fn triangle_at(&self, p: Point2) -> Option<usize> {
        let fx = (p.x - self.lo.x) / self.dx;
        let fy = (p.y - self.lo.y) / self.dy;
        if !(0.0..=self.nx as f64).contains(&fx) || !(0.0..=self.ny as f64).contains(&fy) {
            return None;
        }
        let ix = (fx.floor() as usize).min(self.nx - 1);
        let iy = (fy.floor() as usize).min(self.ny - 1);
        let u = fx - ix as f64;
        let v = fy - iy as f64;
        let which = if u >= v { 0 } else { 1 };
        Some((iy * self.nx + ix) * 2 + which)
    }
}

/// Triangle kept in the computational mesh.
#[derive(Debug, Clone)]
pub struct Element {
    /// Counterclockwise vertex coordinates.
    pub verts: [Point2; 3],
    /// Background vertex ids matching `verts`.
    pub vids: [u32; 3],
    /// Background triangle index.
    pub bg_tri: u32,
    pub area: f64,
}

impl Element {
    /// Endpoints of local edge `l` (from vertex `l` to vertex `l + 1`).
    pub fn edge_points(&self, l: usize) -> (Point2, Point2) {
        (self.verts[l], self.verts[(l + 1) % 3])
    }

    pub fn edge_vids(&self, l: usize) -> (u32, u32) {
        (self.vids[l], self.vids[(l + 1) % 3])
    }

    /// Unit outward normal of local edge `l`.
    pub fn outward_normal(&self, l: usize) -> Vector2 {
        let (a, b) = self.edge_points(l);
        let t = (b - a).normalize();
        Vector2::new(t.y, -t.x)
    }

    /// Perpendicular height over local edge `l`: twice the area divided by
    /// the edge length.
    pub fn height_over_edge(&self, l: usize) -> f64 {
        let (a, b) = self.edge_points(l);
        2.0 * self.area / (b - a).norm()
    }

    pub fn centroid(&self) -> Point2 {
        let s = self.verts[0].coords + self.verts[1].coords + self.verts[2].coords;
        Point2::from(s / 3.0)
    }

    /// Barycentric membership with relative tolerance `rel` (positive `rel`
    /// shrinks the triangle, so edges and vertices count as outside).
    pub fn contains(&self, p: Point2, rel: f64) -> bool {
        let [a, b, c] = self.verts;
        let den = (b - a).perp(&(c - a));
        let l0 = (b - p).perp(&(c - p)) / den;
        let l1 = (c - p).perp(&(a - p)) / den;
        let l2 = 1.0 - l0 - l1;
        l0 > rel && l1 > rel && l2 > rel
    }
}

/// Side of a skeleton edge: owning element and local edge index.
#[derive(Debug, Clone, Copy)]
pub struct EdgeSide {
    pub elem: u32,
    pub local: u8,
}

/// Skeleton edge shared by one (boundary) or two (interior) elements.
#[derive(Debug, Clone)]
pub struct Edge {
    /// Lower and higher background vertex ids; the edge tangent used by the
    /// trace basis runs from `a` (lower id) to `b`.
    pub va: u32,
    pub vb: u32,
    pub a: Point2,
    pub b: Point2,
    pub length: f64,
    pub side_a: EdgeSide,
    pub side_b: Option<EdgeSide>,
}

impl Edge {
    pub fn is_boundary(&self) -> bool {
        self.side_b.is_none()
    }

    pub fn midpoint(&self) -> Point2 {
        Point2::from((self.a.coords + self.b.coords) * 0.5)
    }

    /// Trace-basis parameter of point `p` on the edge in `[0, 1]`.
    pub fn param_of(&self, p: Point2) -> f64 {
        let t = self.b - self.a;
        ((p - self.a).dot(&t) / t.norm_squared()).clamp(0.0, 1.0)
    }

    pub fn point_at(&self, t: f64) -> Point2 {
        self.a + (self.b - self.a) * t
    }
}

/// Boundary edge as traversed along its loop, interior on the left.
#[derive(Debug, Clone, Copy)]
pub struct OrientedBoundaryEdge {
    pub edge: u32,
    pub from_vid: u32,
    pub to_vid: u32,
}

/// Triangles of the background mesh that lie inside the domain, with their
/// edge skeleton and oriented boundary loops.
#[derive(Debug, Clone)]
pub struct ComputationalMesh {
    pub background: BackgroundMesh,
    pub elements: Vec<Element>,
    pub edges: Vec<Edge>,
    pub interior_edges: Vec<u32>,
    pub boundary_edges: Vec<u32>,
    /// Boundary loops as sequences of oriented edges, each loop closed.
    pub boundary_loops: Vec<Vec<OrientedBoundaryEdge>>,
    elem_of_tri: Vec<u32>,
}

const NO_ELEM: u32 = u32::MAX;

impl ComputationalMesh {
    /// Classifies background triangles against `shape` (three vertices and
    /// the centroid in the domain closure, tolerance `1e-12 h`) and assembles
    /// the skeleton. Fails when no triangle qualifies, when the kept
    /// triangles are not edge-connected, or when the boundary pinches at a
    /// vertex.
    pub fn extract(background: &BackgroundMesh, shape: &DomainShape) -> Result<Self> {
        let tol = 1e-12 * background.h();
        let mut elements = Vec::new();
        let mut elem_of_tri = vec![NO_ELEM; background.n_triangles()];
        for tri in 0..background.n_triangles() {
            let vids = background.triangle_vertex_ids(tri);
            let verts = [
                background.vertex(vids[0]),
                background.vertex(vids[1]),
                background.vertex(vids[2]),
            ];
            let centroid =
                Point2::from((verts[0].coords + verts[1].coords + verts[2].coords) / 3.0);
            let keep = verts.iter().all(|v| shape.in_closure(*v, tol))
                && shape.in_closure(centroid, tol);
            if keep {
                let area = 0.5 * (verts[1] - verts[0]).perp(&(verts[2] - verts[0]));
                elem_of_tri[tri] = elements.len() as u32;
                elements.push(Element { verts, vids, bg_tri: tri as u32, area });
            }
        }
        if elements.is_empty() {
            return Err(Error::Extraction(
                "no background triangle lies inside the domain; refine the grid or enlarge the domain"
                    .into(),
            ));
        }

        let mut edge_map: BTreeMap<(u32, u32), Vec<EdgeSide>> = BTreeMap::new();
        for (ei, elem) in elements.iter().enumerate() {
            for l in 0..3 {
                let (va, vb) = elem.edge_vids(l);
                let key = (va.min(vb), va.max(vb));
                edge_map
                    .entry(key)
                    .or_default()
                    .push(EdgeSide { elem: ei as u32, local: l as u8 });
            }
        }
        let mut edges = Vec::with_capacity(edge_map.len());
        let mut interior_edges = Vec::new();
        let mut boundary_edges = Vec::new();
        for ((va, vb), sides) in edge_map {
            let a = background.vertex(va);
            let b = background.vertex(vb);
            let idx = edges.len() as u32;
            match sides.len() {
                1 => boundary_edges.push(idx),
                2 => interior_edges.push(idx),
                n => {
                    return Err(Error::Extraction(format!(
                        "edge ({va}, {vb}) is shared by {n} elements"
                    )))
                }
            }
            edges.push(Edge {
                va,
                vb,
                a,
                b,
                length: (b - a).norm(),
                side_a: sides[0],
                side_b: sides.get(1).copied(),
            });
        }

        let mesh = ComputationalMesh {
            background: background.clone(),
            elements,
            edges,
            interior_edges,
            boundary_edges,
            boundary_loops: Vec::new(),
            elem_of_tri,
        };
        mesh.check_connected()?;
        let boundary_loops = mesh.walk_boundary_loops()?;
        Ok(ComputationalMesh { boundary_loops, ..mesh })
    }

    fn check_connected(&self) -> Result<()> {
        let n = self.elements.len();
        let mut adj = vec![Vec::new(); n];
        for &ei in &self.interior_edges {
            let e = &self.edges[ei as usize];
            let (x, y) = (e.side_a.elem as usize, e.side_b.unwrap().elem as usize);
            adj[x].push(y);
            adj[y].push(x);
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1usize;
        while let Some(x) = stack.pop() {
            for &y in &adj[x] {
                if !seen[y] {
                    seen[y] = true;
                    count += 1;
                    stack.push(y);
                }
            }
        }
        if count != n {
            return Err(Error::Extraction(format!(
                "extracted mesh splits into disconnected parts ({count} of {n} elements reachable)"
            )));
        }
        Ok(())
    }

    fn walk_boundary_loops(&self) -> Result<Vec<Vec<OrientedBoundaryEdge>>> {
        // Orient each boundary edge the way its owning element traverses it,
        // so the mesh interior stays on the left.
        let mut outgoing: BTreeMap<u32, u32> = BTreeMap::new();
        let mut oriented: BTreeMap<u32, OrientedBoundaryEdge> = BTreeMap::new();
        for &ei in &self.boundary_edges {
            let e = &self.edges[ei as usize];
            let elem = &self.elements[e.side_a.elem as usize];
            let (from_vid, to_vid) = elem.edge_vids(e.side_a.local as usize);
            if outgoing.insert(from_vid, ei).is_some() {
                return Err(Error::Extraction(format!(
                    "mesh boundary pinches at vertex {from_vid}"
                )));
            }
            oriented.insert(ei, OrientedBoundaryEdge { edge: ei, from_vid, to_vid });
        }
        let mut visited: BTreeMap<u32, bool> =
            self.boundary_edges.iter().map(|e| (*e, false)).collect();
        let mut loops = Vec::new();
        for &start in &self.boundary_edges {
            if visited[&start] {
                continue;
            }
            let mut lp = Vec::new();
            let mut cur = start;
            loop {
                visited.insert(cur, true);
                let ob = oriented[&cur];
                lp.push(ob);
                let next = *outgoing.get(&ob.to_vid).ok_or_else(|| {
                    Error::Extraction(format!("open boundary chain at vertex {}", ob.to_vid))
                })?;
                if next == start {
                    break;
                }
                if visited[&next] {
                    return Err(Error::Extraction(
                        "boundary walk revisited an edge before closing its loop".into(),
                    ));
                }
                cur = next;
            }
            loops.push(lp);
        }
        Ok(loops)
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    /// Total area of the kept triangles.
    pub fn area(&self) -> f64 {
        self.elements.iter().map(|e| e.area).sum()
    }

    /// Element whose closed triangle contains `p`, via the background grid.
    pub fn element_at(&self, p: Point2) -> Option<usize> {
        let tri = self.background.triangle_at(p)?;
        let ei = self.elem_of_tri[tri];
        if ei != NO_ELEM {
            return Some(ei as usize);
        }
        // Points on a cell diagonal or grid line may be attributed to the
        // neighboring triangle; accept any adjacent triangle that contains p.
        for cand in self.nearby_triangles(tri) {
            let ej = self.elem_of_tri[cand];
            if ej != NO_ELEM && self.elements[ej as usize].contains(p, -1e-12) {
                return Some(ej as usize);
            }
        }
        None
    }

    /// True when `p` lies in the open interior of the element union: inside
    /// some kept triangle with barycentric clearance `rel`.
    pub fn strictly_in_interior(&self, p: Point2, rel: f64) -> bool {
        let Some(tri) = self.background.triangle_at(p) else { return false };
        let mut candidates = vec![tri];
        candidates.extend(self.nearby_triangles(tri));
        for cand in candidates {
            let ei = self.elem_of_tri[cand];
            if ei != NO_ELEM && self.elements[ei as usize].contains(p, rel) {
                return true;
            }
        }
        false
    }

    fn nearby_triangles(&self, tri: usize) -> Vec<usize> {
        let bg = &self.background;
        let cell = tri / 2;
        let ix = (cell % bg.nx) as isize;
        let iy = (cell / bg.nx) as isize;
        let mut out = Vec::with_capacity(18);
        for jy in iy - 1..=iy + 1 {
            for jx in ix - 1..=ix + 1 {
                if jx < 0 || jy < 0 || jx >= bg.nx as isize || jy >= bg.ny as isize {
                    continue;
                }
                let c = (jy as usize * bg.nx + jx as usize) * 2;
                out.push(c);
                out.push(c + 1);
            }
        }
        out
    }

    /// Element containing `p`, or the element with the closest centroid when
    /// `p` lies outside the mesh. Used to pick the extrapolation source for
    /// points between the mesh boundary and the domain boundary.
    pub fn nearest_element(&self, p: Point2) -> usize {
        if let Some(e) = self.element_at(p) {
            return e;
        }
        let bg = &self.background;
        let fx = ((p.x - bg.lo.x) / bg.dx).floor();
        let fy = ((p.y - bg.lo.y) / bg.dy).floor();
        let cx = (fx.max(0.0) as usize).min(bg.nx - 1) as isize;
        let cy = (fy.max(0.0) as usize).min(bg.ny - 1) as isize;
        let max_ring = bg.nx.max(bg.ny) as isize;
        let mut best: Option<(f64, usize)> = None;
        for ring in 0..=max_ring {
            for jy in cy - ring..=cy + ring {
                for jx in cx - ring..=cx + ring {
                    if (jy - cy).abs().max((jx - cx).abs()) != ring {
                        continue;
                    }
                    if jx < 0 || jy < 0 || jx >= bg.nx as isize || jy >= bg.ny as isize {
                        continue;
                    }
                    let c = (jy as usize * bg.nx + jx as usize) * 2;
                    for tri in [c, c + 1] {
                        let ei = self.elem_of_tri[tri];
                        if ei == NO_ELEM {
                            continue;
                        }
                        let d = (self.elements[ei as usize].centroid() - p).norm();
                        if best.map_or(true, |(bd, _)| d < bd) {
                            best = Some((d, ei as usize));
                        }
                    }
                }
            }
            // One extra ring after the first hit keeps diagonal neighbors fair.
            if let Some((bd, _)) = best {
                if bd <= (ring as f64 - 1.0).max(0.0) * bg.dx.min(bg.dy) {
                    break;
                }
            }
        }
        best.expect("computational mesh has at least one element").1
    }

    /// Elements whose centroid lies within `radius` of `p`, with their
    /// centroid distances.
    pub fn elements_within(&self, p: Point2, radius: f64) -> Vec<(usize, f64)> {
        let bg = &self.background;
        let cx = (((p.x - bg.lo.x) / bg.dx).floor().max(0.0) as usize).min(bg.nx - 1) as isize;
        let cy = (((p.y - bg.lo.y) / bg.dy).floor().max(0.0) as usize).min(bg.ny - 1) as isize;
        let ring = (radius / bg.dx.min(bg.dy)).ceil() as isize + 1;
        let mut out = Vec::new();
        for jy in (cy - ring).max(0)..=(cy + ring).min(bg.ny as isize - 1) {
            for jx in (cx - ring).max(0)..=(cx + ring).min(bg.nx as isize - 1) {
                let c = (jy as usize * bg.nx + jx as usize) * 2;
                for tri in [c, c + 1] {
                    let ei = self.elem_of_tri[tri];
                    if ei == NO_ELEM {
                        continue;
                    }
                    let d = (self.elements[ei as usize].centroid() - p).norm();
                    if d <= radius {
                        out.push((ei as usize, d));
                    }
                }
            }
        }
        out
    }
}
