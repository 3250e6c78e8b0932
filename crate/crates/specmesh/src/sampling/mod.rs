//! Mesh hierarchy construction: greedy quadric-error edge collapse, binary
//! selection matrices for down-sampling, and barycentric matrices for
//! up-sampling between adjacent levels.

pub mod manifest;
pub mod quadric;

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{build_laplacian, rescale_laplacian, Mesh, SparseMatrix};
use quadric::{closest_point_barycentric, Quadric};

/// One recorded edge collapse: `removed` merged into `kept` with the
/// cost-minimizing position used for ranking.
#[derive(Clone, Debug, PartialEq)]
pub struct Contraction {
    pub kept: u32,
    pub removed: u32,
    pub cost: f64,
    pub position: [f64; 3],
}

/// Down/up transform pair between two adjacent hierarchy levels.
#[derive(Clone, Debug)]
pub struct SamplingPair {
    /// m x n binary selection matrix, one 1 per row.
    pub q_down: SparseMatrix,
    /// n x m row-stochastic barycentric matrix.
    pub q_up: SparseMatrix,
    pub coarse_mesh: Mesh,
}

/// Ordered decimation levels (finest first) with per-level transforms and
/// rescaled Laplacians.
#[derive(Clone, Debug)]
pub struct MeshHierarchy {
    pub levels: Vec<Mesh>,
    pub pairs: Vec<SamplingPair>,
    pub laplacians: Vec<SparseMatrix>,
    pub lambda_max: Vec<f64>,
}

impl MeshHierarchy {
    pub fn level_counts(&self) -> Vec<usize> {
        self.levels.iter().map(Mesh::vertex_count).collect()
    }
}

#[derive(Clone, Debug)]
struct Candidate {
    cost: f64,
    a: u32,
    b: u32,
    version: u64,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cost == other.cost && self.a == other.a && self.b == other.b
    }
}
impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed for a min-heap; cost ties break on the smaller index pair
        // so the collapse order is deterministic.
        other
            .cost
            .partial_cmp(&self.cost)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.a.cmp(&self.a))
            .then_with(|| other.b.cmp(&self.b))
    }
}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Greedy quadric edge collapse until exactly `target` vertices remain.
///
/// The surviving vertex of each collapse keeps the smaller original index
/// and its original coordinates, so the returned selection matrix maps
/// coarse vertices onto a subset of the input vertices exactly.
pub fn decimate(mesh: &Mesh, target: usize) -> Result<(Mesh, SparseMatrix, Vec<Contraction>)> {
    let n = mesh.vertex_count();
    if mesh.faces.is_empty() {
        return Err(Error::InvalidMesh(
            "cannot decimate a mesh with no faces".into(),
        ));
    }
    if target < 4 || target > n {
        return Err(Error::InvalidArgument(format!(
            "decimation target must be in [4, {n}], got {target}"
        )));
    }

    let mut state = CollapseState::new(mesh);
    let mut log = Vec::with_capacity(n - target);
    let mut allow_any = false;
    while state.alive_count > target {
        match state.pop_best(allow_any) {
            Some(c) => {
                let position = state.placement(c.a, c.b);
                state.collapse(&c);
                log.push(Contraction {
                    kept: c.a,
                    removed: c.b,
                    cost: c.cost,
                    position,
                });
            }
            None if !allow_any => {
                // Link-condition pass exhausted; retry accepting any live edge.
                allow_any = true;
                state.reseed_heap();
            }
            None => {
                return Err(Error::InvalidMesh(format!(
                    "decimation stalled at {} vertices (target {target})",
                    state.alive_count
                )));
            }
        }
    }

    let (coarse, q_down) = state.finish(mesh)?;
    Ok((coarse, q_down, log))
}

struct CollapseState {
    positions: Vec<[f64; 3]>,
    faces: Vec<[u32; 3]>,
    face_alive: Vec<bool>,
    vertex_alive: Vec<bool>,
    vertex_faces: Vec<Vec<u32>>,
    quadrics: Vec<Quadric>,
    versions: Vec<u64>,
    heap: BinaryHeap<Candidate>,
    alive_count: usize,
}

impl CollapseState {
    fn new(mesh: &Mesh) -> Self {
        let n = mesh.vertex_count();
        let mut quadrics = vec![Quadric::zero(); n];
        let mut vertex_faces = vec![Vec::new(); n];
        for (fi, f) in mesh.faces.iter().enumerate() {
            let q = Quadric::from_triangle(
                mesh.vertices[f[0] as usize],
                mesh.vertices[f[1] as usize],
                mesh.vertices[f[2] as usize],
            );
            for &v in f {
                quadrics[v as usize] = quadrics[v as usize].add(&q);
                vertex_faces[v as usize].push(fi as u32);
            }
        }
        let mut state = CollapseState {
            positions: mesh.vertices.clone(),
            faces: mesh.faces.clone(),
            face_alive: vec![true; mesh.faces.len()],
            vertex_alive: vec![true; n],
            vertex_faces,
            quadrics,
            versions: vec![0; n],
            heap: BinaryHeap::new(),
            alive_count: n,
        };
        state.reseed_heap();
        state
    }

    fn reseed_heap(&mut self) {
        self.heap.clear();
        let mut seen = HashSet::new();
        for (fi, f) in self.faces.iter().enumerate() {
            if !self.face_alive[fi] {
                continue;
            }
            for &(u, v) in &[(f[0], f[1]), (f[1], f[2]), (f[0], f[2])] {
                let (a, b) = ordered(u, v);
                if seen.insert((a, b)) {
                    let c = self.candidate(a, b);
                    self.heap.push(c);
                }
            }
        }
    }

    fn candidate(&self, a: u32, b: u32) -> Candidate {
        let q = self.quadrics[a as usize].add(&self.quadrics[b as usize]);
        let target = q.minimizer().unwrap_or_else(|| {
            midpoint(self.positions[a as usize], self.positions[b as usize])
        });
        Candidate {
            cost: q.evaluate(target),
            a,
            b,
            version: self.versions[a as usize] + self.versions[b as usize],
        }
    }

    fn placement(&self, a: u32, b: u32) -> [f64; 3] {
        let q = self.quadrics[a as usize].add(&self.quadrics[b as usize]);
        q.minimizer()
            .unwrap_or_else(|| midpoint(self.positions[a as usize], self.positions[b as usize]))
    }

    fn pop_best(&mut self, allow_any: bool) -> Option<Candidate> {
        while let Some(c) = self.heap.pop() {
            let (a, b) = (c.a as usize, c.b as usize);
            if !self.vertex_alive[a] || !self.vertex_alive[b] {
                continue;
            }
            if c.version != self.versions[a] + self.versions[b] {
                continue;
            }
            if !self.edge_alive(c.a, c.b) {
                continue;
            }
            if !allow_any && !self.link_condition(c.a, c.b) {
                continue;
            }
            return Some(c);
        }
        None
    }

    fn edge_alive(&self, a: u32, b: u32) -> bool {
        self.vertex_faces[a as usize].iter().any(|&fi| {
            self.face_alive[fi as usize] && self.faces[fi as usize].contains(&b)
        })
    }

    /// Shared neighbors of (a, b) must all be opposite vertices of the faces
    /// on the edge; anything else would fold the surface onto itself.
    fn link_condition(&self, a: u32, b: u32) -> bool {
        let na = self.neighbors(a);
        let nb = self.neighbors(b);
        let common: Vec<u32> = na.intersection(&nb).copied().collect();
        let mut opposite = HashSet::new();
        for &fi in &self.vertex_faces[a as usize] {
            if !self.face_alive[fi as usize] {
                continue;
            }
            let f = self.faces[fi as usize];
            if f.contains(&b) {
                for &v in &f {
                    if v != a && v != b {
                        opposite.insert(v);
                    }
                }
            }
        }
        common.len() == opposite.len() && common.iter().all(|v| opposite.contains(v))
    }

    fn neighbors(&self, v: u32) -> HashSet<u32> {
        let mut out = HashSet::new();
        for &fi in &self.vertex_faces[v as usize] {
            if !self.face_alive[fi as usize] {
                continue;
            }
            for &u in &self.faces[fi as usize] {
                if u != v {
                    out.insert(u);
                }
            }
        }
        out
    }

    fn collapse(&mut self, c: &Candidate) {
        let keep = c.a as usize;
        let drop = c.b as usize;
        self.quadrics[keep] = self.quadrics[keep].add(&self.quadrics[drop]);
        self.vertex_alive[drop] = false;
        self.alive_count -= 1;
        self.versions[keep] += 1;
        self.versions[drop] += 1;

        // Rewrite faces of the dropped vertex; kill the ones that degenerate.
        let moved: Vec<u32> = self.vertex_faces[drop].clone();
        for &fi in &moved {
            let fiu = fi as usize;
            if !self.face_alive[fiu] {
                continue;
            }
            let f = &mut self.faces[fiu];
            for slot in f.iter_mut() {
                if *slot == c.b {
                    *slot = c.a;
                }
            }
            let f = self.faces[fiu];
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                self.face_alive[fiu] = false;
            } else {
                self.vertex_faces[keep].push(fi);
            }
        }
        self.vertex_faces[drop].clear();

        // Refresh candidates around the survivor.
        for v in self.neighbors(c.a) {
            let (a, b) = ordered(c.a, v);
            let cand = self.candidate(a, b);
            self.heap.push(cand);
        }
    }

    fn finish(self, original: &Mesh) -> Result<(Mesh, SparseMatrix)> {
        let survivors: Vec<u32> = (0..original.vertex_count() as u32)
            .filter(|&v| self.vertex_alive[v as usize])
            .collect();
        let mut remap = HashMap::with_capacity(survivors.len());
        for (coarse_idx, &orig) in survivors.iter().enumerate() {
            remap.insert(orig, coarse_idx as u32);
        }
        let vertices: Vec<[f64; 3]> = survivors
            .iter()
            .map(|&v| original.vertices[v as usize])
            .collect();
        let mut faces = Vec::new();
        let mut seen = HashSet::new();
        for (fi, f) in self.faces.iter().enumerate() {
            if !self.face_alive[fi] {
                continue;
            }
            let mapped = [remap[&f[0]], remap[&f[1]], remap[&f[2]]];
            let mut key = mapped;
            key.sort_unstable();
            if seen.insert(key) {
                faces.push(mapped);
            }
        }
        let coarse = Mesh::new(vertices, faces)?;
        let entries: Vec<(u32, u32, f64)> = survivors
            .iter()
            .enumerate()
            .map(|(row, &orig)| (row as u32, orig, 1.0))
            .collect();
        let q_down =
            SparseMatrix::from_triplets(survivors.len(), original.vertex_count(), entries)?;
        Ok((coarse, q_down))
    }
}

fn ordered(a: u32, b: u32) -> (u32, u32) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

fn midpoint(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        0.5 * (a[0] + b[0]),
        0.5 * (a[1] + b[1]),
        0.5 * (a[2] + b[2]),
    ]
}

/// Row-stochastic up-sampling matrix mapping coarse vertex features back to
/// the fine level. Kept vertices get one-hot rows; each discarded vertex is
/// projected onto its nearest coarse triangle and weighted barycentrically.
pub fn build_upsample(fine: &Mesh, coarse: &Mesh, q_down: &SparseMatrix) -> Result<SparseMatrix> {
    let n = fine.vertex_count();
    let m = coarse.vertex_count();
    if q_down.rows() != m || q_down.cols() != n {
        return Err(Error::ShapeMismatch(format!(
            "selection matrix is {}x{}, expected {m}x{n}",
            q_down.rows(),
            q_down.cols()
        )));
    }
    if coarse.faces.is_empty() {
        return Err(Error::InvalidMesh(
            "up-sampling needs a coarse mesh with faces".into(),
        ));
    }
    // fine index -> coarse index for kept vertices.
    let mut kept: Vec<Option<u32>> = vec![None; n];
    for &(row, col, v) in q_down.entries() {
        if v != 1.0 {
            return Err(Error::InvalidSparse(
                "selection matrix entries must be 1".into(),
            ));
        }
        kept[col as usize] = Some(row);
    }

    // Per-face bounding boxes for conservative pruning of the projection
    // search; pruning uses a strict bound so equal-distance ties still fall
    // to the lowest face index.
    let boxes: Vec<([f64; 3], [f64; 3])> = coarse
        .faces
        .iter()
        .map(|f| {
            let mut lo = [f64::INFINITY; 3];
            let mut hi = [f64::NEG_INFINITY; 3];
            for &v in f {
                let p = coarse.vertices[v as usize];
                for k in 0..3 {
                    lo[k] = lo[k].min(p[k]);
                    hi[k] = hi[k].max(p[k]);
                }
            }
            (lo, hi)
        })
        .collect();

    let rows: Vec<Vec<(u32, f64)>> = (0..n)
        .into_par_iter()
        .map(|vi| {
            if let Some(row) = kept[vi] {
                return vec![(row, 1.0)];
            }
            let p = fine.vertices[vi];
            let mut best_d2 = f64::INFINITY;
            let mut best: Option<(usize, [f64; 3])> = None;
            for (fi, f) in coarse.faces.iter().enumerate() {
                let (lo, hi) = boxes[fi];
                if box_distance_sq(p, lo, hi) > best_d2 {
                    continue;
                }
                let (bary, d2) = closest_point_barycentric(
                    p,
                    coarse.vertices[f[0] as usize],
                    coarse.vertices[f[1] as usize],
                    coarse.vertices[f[2] as usize],
                );
                if d2 < best_d2 {
                    best_d2 = d2;
                    best = Some((fi, bary));
                }
            }
            let (fi, bary) = best.expect("coarse mesh has at least one face");
            let f = coarse.faces[fi];
            let mut weights: Vec<(u32, f64)> = Vec::with_capacity(3);
            for (w, &v) in bary.iter().zip(&f) {
                if *w > 0.0 {
                    // Merge repeats defensively; coarse faces have distinct
                    // vertices so this is a plain push in practice.
                    if let Some(slot) = weights.iter_mut().find(|(c, _)| *c == v) {
                        slot.1 += w;
                    } else {
                        weights.push((v, *w));
                    }
                }
            }
            if weights.is_empty() {
                weights.push((f[0], 1.0));
            }
            weights
        })
        .collect();

    let mut entries = Vec::with_capacity(n * 3);
    for (vi, row) in rows.iter().enumerate() {
        for &(c, w) in row {
            entries.push((vi as u32, c, w));
        }
    }
    SparseMatrix::from_triplets(n, m, entries)
}

fn box_distance_sq(p: [f64; 3], lo: [f64; 3], hi: [f64; 3]) -> f64 {
    let mut d2 = 0.0;
    for k in 0..3 {
        let d = if p[k] < lo[k] {
            lo[k] - p[k]
        } else if p[k] > hi[k] {
            p[k] - hi[k]
        } else {
            0.0
        };
        d2 += d * d;
    }
    d2
}

/// Chain decimation and up-sampling over a strictly decreasing vertex-count
/// schedule, caching the rescaled Laplacian of every level.
pub fn build_hierarchy(mesh: &Mesh, schedule: &[usize]) -> Result<MeshHierarchy> {
    if schedule.is_empty() {
        return Err(Error::InvalidArgument("empty hierarchy schedule".into()));
    }
    if schedule[0] != mesh.vertex_count() {
        return Err(Error::InvalidArgument(format!(
            "schedule starts at {} but mesh has {} vertices",
            schedule[0],
            mesh.vertex_count()
        )));
    }
    for w in schedule.windows(2) {
        if w[1] >= w[0] {
            return Err(Error::InvalidArgument(format!(
                "schedule must be strictly decreasing, got {} -> {}",
                w[0], w[1]
            )));
        }
    }

    let mut levels = vec![mesh.clone()];
    let mut pairs = Vec::new();
    for &target in &schedule[1..] {
        let fine = levels.last().unwrap();
        let (coarse, q_down, _log) = decimate(fine, target)?;
        let q_up = build_upsample(fine, &coarse, &q_down)?;
        pairs.push(SamplingPair {
            q_down,
            q_up,
            coarse_mesh: coarse.clone(),
        });
        levels.push(coarse);
    }
    let mut laplacians = Vec::with_capacity(levels.len());
    let mut lambda_max = Vec::with_capacity(levels.len());
    for level in &levels {
        let lap = build_laplacian(&level.adjacency)?;
        laplacians.push(rescale_laplacian(&lap)?);
        lambda_max.push(lap.lambda_max);
    }
    Ok(MeshHierarchy {
        levels,
        pairs,
        laplacians,
        lambda_max,
    })
}
