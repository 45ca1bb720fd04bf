use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::maps::IteratedMap;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{fit_line, principal_angle};

/// A triangulated 2-disk kept as a tensor grid in parameter space
/// [-1,1]^2: `us` × `vs` nodes, their images after `iterate` applications of
/// the map (row-major, index j·|us| + i), and the triangles of the grid.
#[derive(Clone, Debug)]
pub struct DiskMesh {
    pub origin: Vec<f64>,
    /// Columns are the half-extent vectors of the initial embedding.
    pub axes: DMatrix<f64>,
    pub us: Vec<f64>,
    pub vs: Vec<f64>,
    pub vertices: Vec<Vec<f64>>,
    pub triangles: Vec<[u32; 3]>,
    pub iterate: usize,
    /// Worst angle between a triangle plane and the cone axis F at
    /// construction.
    pub tangent_check: f64,
    pub aperture: f64,
}

fn tri_area(a: &[f64], b: &[f64], c: &[f64]) -> f64 {
    // Gram determinant: works in any ambient dimension.
    let u: Vec<f64> = b.iter().zip(a).map(|(p, q)| p - q).collect();
    let v: Vec<f64> = c.iter().zip(a).map(|(p, q)| p - q).collect();
    let uu: f64 = u.iter().map(|x| x * x).sum();
    let vv: f64 = v.iter().map(|x| x * x).sum();
    let uv: f64 = u.iter().zip(&v).map(|(x, y)| x * y).sum();
    0.5 * (uu * vv - uv * uv).max(0.0).sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

fn aspect(a: &[f64], b: &[f64], c: &[f64]) -> f64 {
    let l = dist(a, b).max(dist(b, c)).max(dist(c, a));
    let area = tri_area(a, b, c);
    if area > 0.0 {
        l * l / (2.0 * area)
    } else {
        f64::INFINITY
    }
}

fn uniform(cells: usize) -> Vec<f64> {
    (0..=cells).map(|i| -1.0 + 2.0 * i as f64 / cells as f64).collect()
}

fn bisect(nodes: &[f64], split: &[bool]) -> Vec<f64> {
    let mut out = Vec::with_capacity(nodes.len() + split.len());
    for (i, &x) in nodes.iter().enumerate() {
        out.push(x);
        if i < split.len() && split[i] {
            out.push(0.5 * (x + nodes[i + 1]));
        }
    }
    out
}

impl DiskMesh {
    /// Flat disk origin + s·a + t·b, (s,t) ∈ [-1,1]^2, on a cells[0]×cells[1]
    /// grid. `f_axis` (n×2) is the cone axis the disk should be tangent to;
    /// `aperture` its cone size.
    pub fn tangent_disk(
        origin: &[f64],
        half_extents: [&[f64]; 2],
        cells: [usize; 2],
        f_axis: &DMatrix<f64>,
        aperture: f64,
    ) -> Result<Self> {
        let d = origin.len();
        check_dim(d, half_extents[0].len())?;
        check_dim(d, half_extents[1].len())?;
        check_dim(d, f_axis.nrows())?;
        if cells[0] == 0 || cells[1] == 0 || f_axis.ncols() != 2 || !(aperture > 0.0) {
            return Err(Error::Input(
                "disk needs nonzero cell counts, a 2-dimensional F axis and aperture > 0".into(),
            ));
        }
        let axes = DMatrix::from_columns(&[
            DVector::from_column_slice(half_extents[0]),
            DVector::from_column_slice(half_extents[1]),
        ]);
        if axes.clone().svd(false, false).singular_values.min() <= 0.0 {
            return Err(Error::Input("disk axes are degenerate".into()));
        }
        let mut mesh = Self {
            origin: origin.to_vec(),
            axes,
            us: uniform(cells[0]),
            vs: uniform(cells[1]),
            vertices: Vec::new(),
            triangles: Vec::new(),
            iterate: 0,
            tangent_check: 0.0,
            aperture,
        };
        let mut verts = Vec::with_capacity(mesh.us.len() * mesh.vs.len());
        for &v in &mesh.vs {
            for &u in &mesh.us {
                verts.push(mesh.embed(&[u, v]));
            }
        }
        mesh.vertices = verts;
        mesh.rebuild_triangles();
        mesh.tangent_check = mesh
            .triangles
            .iter()
            .map(|t| mesh.triangle_plane_angle(t, f_axis))
            .fold(0.0, f64::max);
        Ok(mesh)
    }

    fn embed(&self, p: &[f64; 2]) -> Vec<f64> {
        (0..self.origin.len())
            .map(|i| self.origin[i] + p[0] * self.axes[(i, 0)] + p[1] * self.axes[(i, 1)])
            .collect()
    }

    #[inline]
    fn id(&self, i: usize, j: usize) -> usize {
        j * self.us.len() + i
    }

    /// Each grid cell is cut along its shorter image diagonal, then edges
    /// are flipped towards a Delaunay triangulation in the image metric.
    /// Triangles are counter-clockwise in parameter space and a flip is only
    /// made across a quadrilateral that is convex there, so the result is
    /// always a triangulation of the parameter square.
    fn rebuild_triangles(&mut self) {
        let (nu, nv) = (self.us.len(), self.vs.len());
        let mut tris = Vec::with_capacity(2 * (nu - 1) * (nv - 1));
        for j in 0..nv - 1 {
            for i in 0..nu - 1 {
                let (a, b, c, d) = (
                    self.id(i, j) as u32,
                    self.id(i + 1, j) as u32,
                    self.id(i + 1, j + 1) as u32,
                    self.id(i, j + 1) as u32,
                );
                let v = |k: u32| &self.vertices[k as usize];
                if dist(v(a), v(c)) <= dist(v(b), v(d)) {
                    tris.push([a, b, c]);
                    tris.push([a, c, d]);
                } else {
                    tris.push([a, b, d]);
                    tris.push([b, c, d]);
                }
            }
        }
        self.triangles = tris;
        self.flip_to_delaunay();
    }

    fn param(&self, k: u32) -> [f64; 2] {
        let nu = self.us.len();
        let k = k as usize;
        [self.us[k % nu], self.vs[k / nu]]
    }

    /// Angle at `c` in the image triangle (a, b, c).
    fn angle_at(&self, a: u32, b: u32, c: u32) -> f64 {
        let (pa, pb, pc) = (
            &self.vertices[a as usize],
            &self.vertices[b as usize],
            &self.vertices[c as usize],
        );
        let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
        for i in 0..pa.len() {
            let (x, y) = (pa[i] - pc[i], pb[i] - pc[i]);
            dot += x * y;
            na += x * x;
            nb += y * y;
        }
        (dot / (na * nb).sqrt().max(f64::MIN_POSITIVE)).clamp(-1.0, 1.0).acos()
    }

    fn flip_to_delaunay(&mut self) {
        const NONE: usize = usize::MAX;
        let key = |a: u32, b: u32| if a < b { (a, b) } else { (b, a) };
        let mut edges: HashMap<(u32, u32), [usize; 2]> = HashMap::with_capacity(3 * self.triangles.len());
        for (ti, t) in self.triangles.iter().enumerate() {
            for e in 0..3 {
                let slot = edges.entry(key(t[e], t[(e + 1) % 3])).or_insert([NONE, NONE]);
                if slot[0] == NONE {
                    slot[0] = ti;
                } else {
                    slot[1] = ti;
                }
            }
        }
        let mut stack: Vec<(u32, u32)> = edges.keys().copied().collect();
        stack.sort_unstable();
        let cross = |o: [f64; 2], p: [f64; 2], q: [f64; 2]| {
            (p[0] - o[0]) * (q[1] - o[1]) - (p[1] - o[1]) * (q[0] - o[0])
        };
        let mut budget = 50 * self.triangles.len() + 100;
        while let Some(k) = stack.pop() {
            if budget == 0 {
                break;
            }
            let Some(&[t1, t2]) = edges.get(&k) else { continue };
            if t2 == NONE {
                continue;
            }
            // Orient so that t1 = (a, b, c) and t2 = (b, a, d).
            let tri1 = self.triangles[t1];
            let e1 = (0..3)
                .find(|&e| key(tri1[e], tri1[(e + 1) % 3]) == k)
                .expect("edge in triangle");
            let (a, b, c) = (tri1[e1], tri1[(e1 + 1) % 3], tri1[(e1 + 2) % 3]);
            let tri2 = self.triangles[t2];
            let d = *tri2.iter().find(|&&v| v != a && v != b).expect("opposite vertex");
            if self.angle_at(a, b, c) + self.angle_at(a, b, d) <= std::f64::consts::PI + 1e-12 {
                continue;
            }
            let (pa, pb, pc, pd) = (self.param(a), self.param(b), self.param(c), self.param(d));
            // c–d must cross a–b inside the quadrilateral.
            if !(cross(pc, pd, pa) * cross(pc, pd, pb) < 0.0 && cross(pa, pb, pc) * cross(pa, pb, pd) < 0.0) {
                continue;
            }
            budget -= 1;
            self.triangles[t1] = [c, a, d];
            self.triangles[t2] = [c, d, b];
            edges.remove(&k);
            edges.insert(key(c, d), [t1, t2]);
            for (x, y, from, to) in [(a, d, t2, t1), (b, c, t1, t2)] {
                if let Some(slot) = edges.get_mut(&key(x, y)) {
                    for s in slot.iter_mut() {
                        if *s == from {
                            *s = to;
                        }
                    }
                }
            }
            stack.extend([key(a, d), key(d, b), key(b, c), key(c, a)]);
        }
    }

    fn triangle_plane_angle(&self, t: &[u32; 3], f_axis: &DMatrix<f64>) -> f64 {
        let a = &self.vertices[t[0] as usize];
        let b = &self.vertices[t[1] as usize];
        let c = &self.vertices[t[2] as usize];
        let u = DVector::from_iterator(a.len(), b.iter().zip(a).map(|(p, q)| p - q));
        let v = DVector::from_iterator(a.len(), c.iter().zip(a).map(|(p, q)| p - q));
        principal_angle(&DMatrix::from_columns(&[u, v]), f_axis)
    }

    /// Tangent to the cone: every triangle within atan(aperture) of F.
    pub fn is_tangent(&self) -> bool {
        self.tangent_check <= self.aperture.atan()
    }

    pub fn area(&self) -> f64 {
        self.triangles.iter().map(|t| self.triangle_area(t)).sum()
    }

    fn triangle_area(&self, t: &[u32; 3]) -> f64 {
        tri_area(
            &self.vertices[t[0] as usize],
            &self.vertices[t[1] as usize],
            &self.vertices[t[2] as usize],
        )
    }

    /// Largest aspect ratio L^2 / (2A) over triangles.
    pub fn worst_aspect(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                aspect(
                    &self.vertices[t[0] as usize],
                    &self.vertices[t[1] as usize],
                    &self.vertices[t[2] as usize],
                )
            })
            .fold(0.0, f64::max)
    }

    /// Image of a parameter point under the current iterate.
    fn image_of<M: IteratedMap + ?Sized>(&self, map: &M, p: &[f64; 2]) -> Result<Vec<f64>> {
        let x = self.embed(p);
        let d = x.len();
        let mut out = vec![0.0; (self.iterate + 1) * d];
        map.orbit(&x, self.iterate + 1, &mut out)
            .map_err(|k| Error::Divergence {
                last_valid_time: k as f64,
            })?;
        Ok(out[self.iterate * d..].to_vec())
    }

    /// Apply the map to every vertex.
    pub fn advance<M: IteratedMap + ?Sized>(&mut self, map: &M) -> Result<()> {
        let imgs: Result<Vec<Vec<f64>>> = self.vertices.par_iter().map(|v| map.apply(v)).collect();
        self.vertices = imgs?;
        self.iterate += 1;
        self.rebuild_triangles();
        Ok(())
    }

    /// Bisect whole grid lines until no grid edge image exceeds
    /// `2·target_edge`, then while any triangle whose longest edge exceeds
    /// `target_edge / 16` has aspect ratio above `split_aspect`. A bad
    /// triangle has the grid intervals it spans split along the direction of
    /// its longest edge, for at most `aspect_passes` passes. Returns false if
    /// the vertex cap stopped refinement.
    pub fn refine<M: IteratedMap + ?Sized>(
        &mut self,
        map: &M,
        target_edge: f64,
        split_aspect: f64,
        aspect_passes: usize,
        max_vertices: usize,
    ) -> Result<bool> {
        let min_edge = target_edge / 16.0;
        let mut passes = 0;
        loop {
            let (nu, nv) = (self.us.len(), self.vs.len());
            let mut split_u = vec![false; nu - 1];
            let mut split_v = vec![false; nv - 1];
            for j in 0..nv {
                for i in 0..nu {
                    let p = &self.vertices[self.id(i, j)];
                    if i + 1 < nu && dist(p, &self.vertices[self.id(i + 1, j)]) > 2.0 * target_edge {
                        split_u[i] = true;
                    }
                    if j + 1 < nv && dist(p, &self.vertices[self.id(i, j + 1)]) > 2.0 * target_edge {
                        split_v[j] = true;
                    }
                }
            }
            let by_length = split_u.iter().chain(&split_v).any(|s| *s);
            let triangles: &[[u32; 3]] = if by_length || passes >= aspect_passes {
                &[]
            } else {
                passes += 1;
                &self.triangles
            };
            for t in triangles {
                let pts = [
                    &self.vertices[t[0] as usize],
                    &self.vertices[t[1] as usize],
                    &self.vertices[t[2] as usize],
                ];
                if aspect(pts[0], pts[1], pts[2]) <= split_aspect {
                    continue;
                }
                let (mut longest, mut e) = (0.0, 0);
                for k in 0..3 {
                    let l = dist(pts[k], pts[(k + 1) % 3]);
                    if l > longest {
                        longest = l;
                        e = k;
                    }
                }
                if longest <= min_edge {
                    continue;
                }
                let ij = |k: u32| ((k as usize) % nu, (k as usize) / nu);
                let (p, q) = (ij(t[e]), ij(t[(e + 1) % 3]));
                let (di, dj) = (p.0.abs_diff(q.0), p.1.abs_diff(q.1));
                let along_u = if dj == 0 {
                    true
                } else if di == 0 {
                    false
                } else {
                    let (i, j) = (p.0.min(nu - 2), p.1.min(nv - 2));
                    let su = dist(&self.vertices[self.id(i, j)], &self.vertices[self.id(i + 1, j)]);
                    let sv = dist(&self.vertices[self.id(i, j)], &self.vertices[self.id(i, j + 1)]);
                    su * di as f64 >= sv * dj as f64
                };
                let is = t.iter().map(|&k| ij(k).0);
                let js = t.iter().map(|&k| ij(k).1);
                if along_u {
                    let (lo, hi) = (is.clone().min().unwrap(), is.max().unwrap());
                    split_u[lo..hi].iter_mut().for_each(|s| *s = true);
                } else {
                    let (lo, hi) = (js.clone().min().unwrap(), js.max().unwrap());
                    split_v[lo..hi].iter_mut().for_each(|s| *s = true);
                }
            }
            let add_u = split_u.iter().filter(|s| **s).count();
            let add_v = split_v.iter().filter(|s| **s).count();
            if add_u + add_v == 0 {
                return Ok(true);
            }
            if (nu + add_u) * (nv + add_v) > max_vertices {
                return Ok(false);
            }
            let us = bisect(&self.us, &split_u);
            let vs = bisect(&self.vs, &split_v);
            // Map new node positions back to old indices where they exist.
            let old_index = |nodes: &[f64], split: &[bool]| -> Vec<Option<usize>> {
                let mut out = Vec::new();
                for i in 0..nodes.len() {
                    out.push(Some(i));
                    if i < split.len() && split[i] {
                        out.push(None);
                    }
                }
                out
            };
            let iu = old_index(&self.us, &split_u);
            let iv = old_index(&self.vs, &split_v);
            let missing: Vec<(usize, usize)> = (0..vs.len())
                .flat_map(|j| (0..us.len()).map(move |i| (i, j)))
                .filter(|&(i, j)| iu[i].is_none() || iv[j].is_none())
                .collect();
            let imgs: Result<Vec<Vec<f64>>> = missing
                .par_iter()
                .map(|&(i, j)| self.image_of(map, &[us[i], vs[j]]))
                .collect();
            let mut imgs = imgs?.into_iter();
            let mut verts = Vec::with_capacity(us.len() * vs.len());
            for j in 0..vs.len() {
                for i in 0..us.len() {
                    match (iu[i], iv[j]) {
                        (Some(oi), Some(oj)) => {
                            verts.push(std::mem::take(&mut self.vertices[oj * nu + oi]))
                        }
                        _ => verts.push(imgs.next().expect("one image per new node")),
                    }
                }
            }
            self.us = us;
            self.vs = vs;
            self.vertices = verts;
            self.rebuild_triangles();
        }
    }

    /// Max area of a connected piece of the disk inside a ball of radius
    /// `eps`, over balls centred at up to `centers` evenly chosen vertices.
    pub fn max_ball_piece(&self, eps: f64, centers: usize) -> f64 {
        let centroid = |t: &[u32; 3]| -> Vec<f64> {
            let d = self.origin.len();
            (0..d)
                .map(|i| t.iter().map(|&v| self.vertices[v as usize][i]).sum::<f64>() / 3.0)
                .collect()
        };
        let cents: Vec<Vec<f64>> = self.triangles.iter().map(centroid).collect();
        let cell = eps;
        let key = |x: &[f64]| -> Vec<i64> { x.iter().map(|v| (v / cell).floor() as i64).collect() };
        let mut grid: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
        for (ti, c) in cents.iter().enumerate() {
            grid.entry(key(c)).or_default().push(ti);
        }
        let stride = (self.vertices.len() / centers.max(1)).max(1);
        let center_ids: Vec<usize> = (0..self.vertices.len()).step_by(stride).collect();
        center_ids
            .par_iter()
            .map(|&cv| {
                let c = &self.vertices[cv];
                let base = key(c);
                let mut inside: Vec<usize> = Vec::new();
                let d = base.len();
                let mut offs = vec![-1i64; d];
                loop {
                    let k: Vec<i64> = base.iter().zip(&offs).map(|(b, o)| b + o).collect();
                    if let Some(ts) = grid.get(&k) {
                        inside.extend(ts.iter().copied().filter(|&t| dist(&cents[t], c) <= eps));
                    }
                    let mut a = 0;
                    while a < d {
                        offs[a] += 1;
                        if offs[a] <= 1 {
                            break;
                        }
                        offs[a] = -1;
                        a += 1;
                    }
                    if a == d {
                        break;
                    }
                }
                // Connected component through shared vertices, seeded by
                // the triangles incident to the center vertex.
                let mut by_vertex: HashMap<u32, Vec<usize>> = HashMap::new();
                for &t in &inside {
                    for &v in &self.triangles[t] {
                        by_vertex.entry(v).or_default().push(t);
                    }
                }
                let mut seen: HashSet<usize> = HashSet::new();
                let mut queue: VecDeque<usize> = by_vertex
                    .get(&(cv as u32))
                    .map(|v| v.iter().copied().collect())
                    .unwrap_or_default();
                let mut area = 0.0;
                while let Some(t) = queue.pop_front() {
                    if !seen.insert(t) {
                        continue;
                    }
                    area += self.triangle_area(&self.triangles[t]);
                    for v in &self.triangles[t] {
                        for &u in &by_vertex[v] {
                            if !seen.contains(&u) {
                                queue.push_back(u);
                            }
                        }
                    }
                }
                area
            })
            .reduce(|| 0.0, f64::max)
    }

    /// OFF-style text: header, counts, vertex lines, triangle lines.
    pub fn to_off(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "OFF");
        let _ = writeln!(s, "# dim {}", self.origin.len());
        let _ = writeln!(s, "{} {} 0", self.vertices.len(), self.triangles.len());
        for v in &self.vertices {
            let line: Vec<String> = v.iter().map(|x| format!("{x:.12e}")).collect();
            let _ = writeln!(s, "{}", line.join(" "));
        }
        for t in &self.triangles {
            let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
        }
        s
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiskConfig {
    pub target_edge: f64,
    /// Triangles above this aspect ratio are bisected.
    pub split_aspect: f64,
    /// Aspect-driven refinement passes allowed per iterate.
    pub aspect_passes: usize,
    /// Aspect ratio treated as quality collapse.
    pub max_aspect: f64,
    pub max_vertices: usize,
    pub ball_eps: f64,
    pub ball_centers: usize,
    /// First n included in the volume fit.
    pub fit_from: usize,
}

impl Default for DiskConfig {
    fn default() -> Self {
        Self {
            target_edge: 0.1,
            split_aspect: 8.0,
            aspect_passes: 3,
            max_aspect: 20.0,
            max_vertices: 1_000_000,
            ball_eps: 0.5,
            ball_centers: 64,
            fit_from: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VolumeExpansion {
    /// Disk area after n = 0, 1, ... iterates.
    pub volumes: Vec<f64>,
    /// Fitted slope of log volume against n.
    pub v_f: f64,
    pub fit_range: (usize, usize),
    /// Largest ball-clipped piece per n.
    pub max_piece: Vec<f64>,
    /// Slope of log max_piece against n, over iterates where the disk is
    /// larger than a ball.
    pub piece_slope: Option<f64>,
    pub worst_aspect: Vec<f64>,
    pub vertex_counts: Vec<usize>,
    /// The vertex cap stopped refinement; later iterates were not computed.
    pub saturated: bool,
    /// Mesh quality collapsed at this iterate; later iterates were not
    /// computed.
    pub collapsed_at: Option<usize>,
    pub last_n: usize,
}

/// Iterate the disk, refine, and fit the exponential growth rate of its
/// area. Iteration stops early at the vertex cap or when mesh quality
/// collapses; the fit then uses the iterates before the stop. A collapse
/// that leaves fewer than two fitted iterates is an error.
pub fn disk_volume_expansion<M: IteratedMap + ?Sized>(
    map: &M,
    mesh: &mut DiskMesh,
    n_steps: usize,
    config: &DiskConfig,
) -> Result<VolumeExpansion> {
    if !mesh.is_tangent() {
        return Err(Error::Input(format!(
            "disk is not tangent to the F cone: angle {} > atan({})",
            mesh.tangent_check, mesh.aperture
        )));
    }
    check_dim(map.dim(), mesh.origin.len())?;
    let mut volumes = vec![mesh.area()];
    let mut max_piece = vec![mesh.max_ball_piece(config.ball_eps, config.ball_centers)];
    let mut worst_aspect = vec![mesh.worst_aspect()];
    let mut vertex_counts = vec![mesh.vertices.len()];
    let mut saturated = false;
    let mut collapsed_at = None;
    for step in 1..=n_steps {
        mesh.advance(map)?;
        let complete = mesh.refine(
            map,
            config.target_edge,
            config.split_aspect,
            config.aspect_passes,
            config.max_vertices,
        )?;
        if !complete {
            saturated = true;
            // The unrefined iterate is too coarse to measure; discard it.
            break;
        }
        let aspect = mesh.worst_aspect();
        if !(aspect < config.max_aspect) {
            if step <= config.fit_from + 1 {
                return Err(Error::Refinement {
                    last_valid_step: step - 1,
                    reason: format!("aspect ratio {aspect:.1} at iterate {step}"),
                });
            }
            collapsed_at = Some(step);
            break;
        }
        volumes.push(mesh.area());
        max_piece.push(mesh.max_ball_piece(config.ball_eps, config.ball_centers));
        worst_aspect.push(aspect);
        vertex_counts.push(mesh.vertices.len());
    }
    let last_n = volumes.len() - 1;
    let from = config.fit_from.min(last_n.saturating_sub(1));
    let ns: Vec<f64> = (from..=last_n).map(|n| n as f64).collect();
    let logs: Vec<f64> = volumes[from..].iter().map(|v| v.ln()).collect();
    let v_f = if ns.len() >= 2 { fit_line(&ns, &logs).0 } else { 0.0 };
    let big = std::f64::consts::PI * config.ball_eps * config.ball_eps * 10.0;
    let piece_pts: Vec<(f64, f64)> = volumes
        .iter()
        .zip(&max_piece)
        .enumerate()
        .filter(|(_, (v, p))| **v > big && **p > 0.0)
        .map(|(n, (_, p))| (n as f64, p.ln()))
        .collect();
    let piece_slope = (piece_pts.len() >= 3).then(|| {
        let (x, y): (Vec<f64>, Vec<f64>) = piece_pts.into_iter().unzip();
        fit_line(&x, &y).0
    });
    Ok(VolumeExpansion {
        volumes,
        v_f,
        fit_range: (from, last_n),
        max_piece,
        piece_slope,
        worst_aspect,
        vertex_counts,
        saturated,
        collapsed_at,
        last_n,
    })
}
