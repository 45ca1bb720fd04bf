use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::maps::{IteratedMap, Metric};
use crate::error::{check_dim, Error, Result};
use crate::linalg::fit_line;

/// B_n(center, eps) = {y : d(f^j center, f^j y) <= eps, 0 <= j < n}.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DynamicalBallSpec {
    pub center: Vec<f64>,
    pub n: usize,
    pub eps: f64,
}

impl DynamicalBallSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || !(self.eps > 0.0) {
            return Err(Error::Input(format!(
                "dynamical ball needs n >= 1 and eps > 0, got n={}, eps={}",
                self.n, self.eps
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Membership {
    pub member: bool,
    /// Iteration failed; the point is reported as a non-member.
    pub diverged: bool,
}

pub fn ball_membership<M: IteratedMap + ?Sized>(
    map: &M,
    spec: &DynamicalBallSpec,
    y: &[f64],
) -> Result<Membership> {
    spec.validate()?;
    let d = map.dim();
    check_dim(d, spec.center.len())?;
    check_dim(d, y.len())?;
    let mut a = vec![0.0; spec.n * d];
    let mut b = vec![0.0; spec.n * d];
    if map.orbit(&spec.center, spec.n, &mut a).is_err() || map.orbit(y, spec.n, &mut b).is_err() {
        return Ok(Membership {
            member: false,
            diverged: true,
        });
    }
    let metric = map.metric();
    let e2 = spec.eps * spec.eps;
    let member = a
        .chunks_exact(d)
        .zip(b.chunks_exact(d))
        .all(|(p, q)| metric.dist2(p, q) <= e2);
    Ok(Membership {
        member,
        diverged: false,
    })
}

/// Orbits x, f(x), ..., f^{n-1}(x) of every point of a finite set K.
#[derive(Clone, Debug)]
pub struct Trajectories {
    pub dim: usize,
    pub n: usize,
    pub metric: Metric,
    data: Vec<f64>,
    /// Iterates successfully computed per point (n unless it diverged).
    pub valid: Vec<usize>,
}

impl Trajectories {
    pub fn compute<M: IteratedMap + ?Sized>(map: &M, k: &[Vec<f64>], n: usize) -> Result<Self> {
        let d = map.dim();
        if k.is_empty() {
            return Err(Error::Input("sample set K is empty".into()));
        }
        if n == 0 {
            return Err(Error::Input("need n >= 1".into()));
        }
        for x in k {
            check_dim(d, x.len())?;
        }
        let mut data = vec![0.0; k.len() * n * d];
        let valid: Vec<usize> = data
            .par_chunks_mut(n * d)
            .zip(k.par_iter())
            .map(|(out, x)| match map.orbit(x, n, out) {
                Ok(()) => n,
                Err(w) => w,
            })
            .collect();
        Ok(Self {
            dim: d,
            n,
            metric: map.metric(),
            data,
            valid,
        })
    }

    /// Wrap precomputed orbits: `data` holds n iterates of dim values per
    /// point, all valid.
    pub(crate) fn from_orbits(dim: usize, n: usize, metric: Metric, data: Vec<f64>) -> Self {
        let count = data.len() / (n * dim).max(1);
        Self {
            dim,
            n,
            metric,
            data,
            valid: vec![n; count],
        }
    }

    pub fn len(&self) -> usize {
        self.valid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valid.is_empty()
    }

    #[inline]
    pub fn iterate(&self, i: usize, j: usize) -> &[f64] {
        let s = (i * self.n + j) * self.dim;
        &self.data[s..s + self.dim]
    }

    /// Points whose first `n` iterates all exist.
    pub fn usable(&self, n: usize) -> usize {
        self.valid.iter().filter(|&&v| v >= n).count()
    }

    /// Among times 0, (n-1)/2 and n-1, the one whose point cloud has the
    /// largest bounding box.
    fn most_spread_time(&self, members: &[usize], n: usize) -> usize {
        let mut cands = vec![0, (n - 1) / 2, n - 1];
        cands.dedup();
        let spread = |j: usize| -> f64 {
            if let Metric::Torus(_) = self.metric {
                return 0.0;
            }
            let mut lo = vec![f64::INFINITY; self.dim];
            let mut hi = vec![f64::NEG_INFINITY; self.dim];
            for &i in members {
                for (a, &v) in self.iterate(i, j).iter().enumerate() {
                    lo[a] = lo[a].min(v);
                    hi[a] = hi[a].max(v);
                }
            }
            lo.iter().zip(&hi).map(|(l, h)| (h - l).max(0.0)).sum()
        };
        let mut best = (f64::NEG_INFINITY, 0);
        for j in cands {
            let s = spread(j);
            if s > best.0 {
                best = (s, j);
            }
        }
        best.1
    }

    #[inline]
    fn close(&self, a: usize, b: usize, n: usize, eps2: f64) -> bool {
        (0..n).all(|j| self.metric.dist2(self.iterate(a, j), self.iterate(b, j)) <= eps2)
    }
}

const HASH_AXES: usize = 4;
type CellKey = [i64; HASH_AXES];

/// Uniform grid with cells of side eps/√dim on the coordinates at one
/// iterate. Any iterate is a valid filter since d_n <= eps requires
/// closeness at every time.
struct SpatialHash {
    axes: usize,
    cell: Vec<f64>,
    /// Cells per axis on a torus.
    wrap: Option<Vec<i64>>,
    reach: Vec<i64>,
    buckets: HashMap<CellKey, Vec<u32>>,
}

impl SpatialHash {
    fn new(traj: &Trajectories, members: &[usize], eps: f64, time: usize) -> Self {
        let axes = traj.dim.min(HASH_AXES);
        let requested = eps / (traj.dim as f64).sqrt();
        let (cell, wrap): (Vec<f64>, Option<Vec<i64>>) = match traj.metric {
            Metric::Euclidean => (vec![requested; axes], None),
            Metric::Torus(p) => {
                let m = ((p / requested).floor() as i64).max(1);
                (vec![p / m as f64; axes], Some(vec![m; axes]))
            }
        };
        let reach = cell.iter().map(|c| (eps / c).ceil() as i64).collect();
        let mut h = Self {
            axes,
            cell,
            wrap,
            reach,
            buckets: HashMap::new(),
        };
        for &i in members {
            let key = h.key(traj.iterate(i, time));
            h.buckets.entry(key).or_default().push(i as u32);
        }
        h
    }

    fn key(&self, x: &[f64]) -> CellKey {
        let mut k = [0i64; HASH_AXES];
        for a in 0..self.axes {
            let c = match (&self.wrap, x[a]) {
                (Some(m), v) => {
                    let period = self.cell[a] * m[a] as f64;
                    ((v.rem_euclid(period) / self.cell[a]).floor() as i64).rem_euclid(m[a])
                }
                (None, v) => (v / self.cell[a]).floor() as i64,
            };
            k[a] = c;
        }
        k
    }

    fn neighbour_keys(&self, x: &[f64]) -> Vec<CellKey> {
        let base = self.key(x);
        let mut ranges: Vec<Vec<i64>> = Vec::with_capacity(self.axes);
        for a in 0..self.axes {
            let r = self.reach[a];
            let mut v: Vec<i64> = match &self.wrap {
                Some(m) if 2 * r + 1 >= m[a] => (0..m[a]).collect(),
                Some(m) => (-r..=r).map(|o| (base[a] + o).rem_euclid(m[a])).collect(),
                None => (-r..=r).map(|o| base[a] + o).collect(),
            };
            v.sort_unstable();
            v.dedup();
            ranges.push(v);
        }
        let mut keys = vec![[0i64; HASH_AXES]];
        for (a, r) in ranges.iter().enumerate() {
            let mut next = Vec::with_capacity(keys.len() * r.len());
            for k in &keys {
                for &c in r {
                    let mut kk = *k;
                    kk[a] = c;
                    next.push(kk);
                }
            }
            keys = next;
        }
        keys
    }
}

/// Greedy cover of K by dynamical balls B_n(c, eps), scanning K in `order`.
/// The centers are pairwise more than eps apart in d_n, so the count is
/// simultaneously an (n,eps)-spanning set size and a maximal
/// (n,eps)-separated set size. Points without n valid iterates are skipped.
pub fn greedy_cover(traj: &Trajectories, n: usize, eps: f64, order: &[usize]) -> usize {
    let n = n.min(traj.n);
    let members: Vec<usize> = order.iter().copied().filter(|&i| traj.valid[i] >= n).collect();
    if members.is_empty() {
        return 0;
    }
    let time = traj.most_spread_time(&members, n);
    let hash = SpatialHash::new(traj, &members, eps, time);
    let eps2 = eps * eps;
    let mut covered = vec![false; traj.len()];
    let mut centers = 0;
    for &c in &members {
        if covered[c] {
            continue;
        }
        covered[c] = true;
        centers += 1;
        for key in hash.neighbour_keys(traj.iterate(c, time)) {
            if let Some(bucket) = hash.buckets.get(&key) {
                for &q in bucket {
                    let q = q as usize;
                    if !covered[q] && traj.close(c, q, n, eps2) {
                        covered[q] = true;
                    }
                }
            }
        }
    }
    centers
}

/// O(|K|^2 n) reference implementation of [`greedy_cover`].
pub fn greedy_cover_brute_force(traj: &Trajectories, n: usize, eps: f64, order: &[usize]) -> usize {
    let n = n.min(traj.n);
    let eps2 = eps * eps;
    let members: Vec<usize> = order.iter().copied().filter(|&i| traj.valid[i] >= n).collect();
    let mut covered = vec![false; traj.len()];
    let mut centers = 0;
    for &c in &members {
        if covered[c] {
            continue;
        }
        covered[c] = true;
        centers += 1;
        for &q in &members {
            if !covered[q] && traj.close(c, q, n, eps2) {
                covered[q] = true;
            }
        }
    }
    centers
}

/// `count` evenly spaced points on the segment of the given length
/// centred at `center` along `direction`.
pub fn arc_sample(center: &[f64], direction: &[f64], length: f64, count: usize) -> Vec<Vec<f64>> {
    let nrm = direction.iter().map(|a| a * a).sum::<f64>().sqrt();
    (0..count)
        .map(|i| {
            let s = if count > 1 {
                length * (i as f64 / (count - 1) as f64 - 0.5)
            } else {
                0.0
            };
            center
                .iter()
                .zip(direction)
                .map(|(c, d)| c + s * d / nrm)
                .collect()
        })
        .collect()
}

/// Seeded permutation of 0..len.
pub fn seeded_order(len: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpanningCount {
    pub n: usize,
    pub eps: f64,
    /// Greedy (n,eps)-spanning set size.
    pub upper: usize,
    /// Maximal (n,2eps)-separated set size, a lower bound for r_n(K, eps).
    pub lower: usize,
    /// Length actually reached (smaller than n when the budget ran out).
    pub achieved_n: usize,
    /// Points dropped because their orbit left the divergence guard.
    pub diverged: usize,
}

/// r_n(K, eps) bracketed by a greedy cover and a separated set. `budget`
/// caps |K|·n; exceeding it yields a partial result at the largest n that
/// fits.
pub fn spanning_count<M: IteratedMap + ?Sized>(
    map: &M,
    k: &[Vec<f64>],
    n: usize,
    eps: f64,
    order_seed: u64,
    budget: Option<usize>,
) -> Result<SpanningCount> {
    if !(eps > 0.0) {
        return Err(Error::Input(format!("eps must be positive, got {eps}")));
    }
    let achieved_n = match budget {
        Some(b) => n.min(b / k.len().max(1)),
        None => n,
    };
    if achieved_n == 0 {
        return Err(Error::Budget { achieved: 0 });
    }
    let traj = Trajectories::compute(map, k, achieved_n)?;
    let order = seeded_order(k.len(), order_seed);
    Ok(SpanningCount {
        n,
        eps,
        upper: greedy_cover(&traj, achieved_n, eps, &order),
        lower: greedy_cover(&traj, achieved_n, 2.0 * eps, &order),
        achieved_n,
        diverged: traj.len() - traj.usable(achieved_n),
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EntropyConfig {
    pub order_seed: u64,
    /// Counts above this fraction of |K| are treated as saturated by the
    /// finite sample and excluded from fits.
    pub saturation_fraction: f64,
    /// The n sweep for an eps ends once the cover reaches this fraction of
    /// |K|.
    pub stop_fraction: f64,
    /// Max |residual| (natural-log units) inside a linear regime.
    pub linearity_tolerance: f64,
    /// Allowed increase of the slope with eps before flagging.
    pub monotonicity_tolerance: f64,
    pub budget: Option<usize>,
}

impl Default for EntropyConfig {
    fn default() -> Self {
        Self {
            order_seed: 0,
            saturation_fraction: 0.1,
            stop_fraction: 0.5,
            linearity_tolerance: 0.15,
            monotonicity_tolerance: 0.05,
            budget: None,
        }
    }
}

/// One CSV row: (n, eps, upper, lower).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CountRow {
    pub n: usize,
    pub eps: f64,
    pub upper: usize,
    pub lower: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    /// Inclusive range of n used.
    pub n_range: (usize, usize),
    pub linear: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpsCurve {
    pub eps: f64,
    pub upper: Option<SlopeFit>,
    pub lower: Option<SlopeFit>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EntropyEstimate {
    pub rows: Vec<CountRow>,
    pub curves: Vec<EpsCurve>,
    /// Max over eps of the separated-set slopes.
    pub h_lower: f64,
    /// Max over eps of the spanning slopes.
    pub h_upper: f64,
    pub monotone: bool,
    pub flags: Vec<String>,
    pub sample_size: usize,
    pub achieved_n: usize,
}

/// Longest window of consecutive points (at least 3, or all when fewer)
/// whose least-squares line has every residual within `tolerance`; ties go
/// to the later window.
pub fn fit_linear_regime(ns: &[usize], logs: &[f64], tolerance: f64) -> Option<SlopeFit> {
    let m = ns.len();
    if m < 2 {
        return None;
    }
    let x: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
    let min_len = m.min(3);
    for len in (min_len..=m).rev() {
        for start in (0..=m - len).rev() {
            let (xs, ys) = (&x[start..start + len], &logs[start..start + len]);
            let (s, c) = fit_line(xs, ys);
            let worst = xs
                .iter()
                .zip(ys)
                .map(|(a, b)| (b - (s * a + c)).abs())
                .fold(0.0, f64::max);
            if worst <= tolerance {
                return Some(SlopeFit {
                    slope: s,
                    n_range: (ns[start], ns[start + len - 1]),
                    linear: true,
                });
            }
        }
    }
    let (s, _) = fit_line(&x, logs);
    Some(SlopeFit {
        slope: s,
        n_range: (ns[0], ns[m - 1]),
        linear: false,
    })
}

/// Per-eps slopes of log r_n against n and brackets for h_top.
pub fn entropy_estimate<M: IteratedMap + ?Sized>(
    map: &M,
    k: &[Vec<f64>],
    eps_grid: &[f64],
    n_grid: &[usize],
    config: &EntropyConfig,
) -> Result<EntropyEstimate> {
    if eps_grid.len() < 3 || n_grid.len() < 3 {
        return Err(Error::Input("need at least 3 values on each grid".into()));
    }
    if eps_grid.iter().any(|e| !(*e > 0.0)) || n_grid.iter().any(|&n| n == 0) {
        return Err(Error::Input("grid values must be positive".into()));
    }
    let mut ns: Vec<usize> = n_grid.to_vec();
    ns.sort_unstable();
    ns.dedup();
    let mut flags = Vec::new();
    let mut n_max = *ns.last().expect("non-empty");
    if let Some(b) = config.budget {
        let fit = b / k.len().max(1);
        if fit < n_max {
            flags.push(format!("budget reached: n truncated to {fit}"));
            n_max = fit;
            ns.retain(|&n| n <= fit);
            if ns.is_empty() {
                return Err(Error::Budget { achieved: 0 });
            }
        }
    }
    let traj = Trajectories::compute(map, k, n_max)?;
    let dropped = traj.len() - traj.usable(n_max);
    if dropped > 0 {
        flags.push(format!("{dropped} points diverged and were dropped"));
    }
    let order = seeded_order(k.len(), config.order_seed);
    let mut eps: Vec<f64> = eps_grid.to_vec();
    eps.sort_by(|a, b| b.total_cmp(a));
    // Sweep n upward per eps and stop once the cover is mostly singletons;
    // beyond that point the finite sample, not the dynamics, sets the count.
    let stop = (config.stop_fraction * traj.usable(n_max) as f64).ceil() as usize;
    let per_eps: Vec<Vec<CountRow>> = eps
        .par_iter()
        .map(|&e| {
            let mut out = Vec::new();
            for &n in &ns {
                let upper = greedy_cover(&traj, n, e, &order);
                let lower = greedy_cover(&traj, n, 2.0 * e, &order);
                out.push(CountRow { n, eps: e, upper, lower });
                if upper >= stop {
                    break;
                }
            }
            out
        })
        .collect();
    for (e, r) in eps.iter().zip(&per_eps) {
        if r.len() < ns.len() {
            flags.push(format!("eps={e}: sample saturated at n={}", r.last().map(|r| r.n).unwrap_or(0)));
        }
    }
    let rows: Vec<CountRow> = per_eps.into_iter().flatten().collect();
    let cap = config.saturation_fraction * traj.usable(n_max) as f64;
    let fit = |sel: &dyn Fn(&CountRow) -> usize, e: f64| -> Option<SlopeFit> {
        let pts: Vec<(usize, f64)> = rows
            .iter()
            .filter(|r| r.eps == e)
            .map(|r| (r.n, sel(r)))
            .filter(|&(_, c)| c >= 1 && (c as f64) <= cap)
            .map(|(n, c)| (n, (c as f64).ln()))
            .collect();
        let (xs, ys): (Vec<usize>, Vec<f64>) = pts.into_iter().unzip();
        fit_linear_regime(&xs, &ys, config.linearity_tolerance)
    };
    let curves: Vec<EpsCurve> = eps
        .iter()
        .map(|&e| EpsCurve {
            eps: e,
            upper: fit(&|r: &CountRow| r.upper, e),
            lower: fit(&|r: &CountRow| r.lower, e),
        })
        .collect();
    for c in &curves {
        if c.upper.as_ref().map(|f| !f.linear).unwrap_or(true) {
            flags.push(format!("eps={}: no clean linear regime", c.eps));
        }
    }
    // Slopes should not decrease as eps shrinks (curves run large to small).
    let mut monotone = true;
    for w in curves.windows(2) {
        if let (Some(a), Some(b)) = (&w[0].upper, &w[1].upper) {
            if b.slope < a.slope - config.monotonicity_tolerance {
                monotone = false;
            }
        }
    }
    if !monotone {
        flags.push("slope not monotone in eps: insufficient sampling".into());
    }
    let best = |sel: fn(&EpsCurve) -> Option<&SlopeFit>| {
        curves
            .iter()
            .filter_map(|c| sel(c).map(|f| f.slope))
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let h_lower = best(|c| c.lower.as_ref()).max(0.0);
    let h_upper = best(|c| c.upper.as_ref()).max(0.0);
    Ok(EntropyEstimate {
        rows,
        curves,
        h_lower,
        h_upper,
        monotone,
        flags,
        sample_size: traj.usable(n_max),
        achieved_n: n_max,
    })
}

#[cfg(test)]
mod tests {
    use super::super::maps::{CircleRotation, DoublingMap, TimeOneMap};
    use super::*;
    use crate::flow::FlowSystem;

    #[test]
    fn single_point() {
        let c = spanning_count(&DoublingMap, &[vec![0.3]], 5, 0.1, 0, None).unwrap();
        assert_eq!((c.upper, c.lower), (1, 1));
    }

    #[test]
    fn hash_matches_brute_force_on_lorenz_cloud() {
        let map = TimeOneMap::new(FlowSystem::classic_lorenz(), 1e-8);
        let k: Vec<Vec<f64>> = (0..400)
            .map(|i| {
                let t = i as f64 * 0.01;
                vec![1.0 + t.sin(), 2.0 + (3.0 * t).cos(), 20.0 + t]
            })
            .collect();
        let traj = Trajectories::compute(&map, &k, 4).unwrap();
        let order = seeded_order(k.len(), 7);
        for &eps in &[0.3, 1.0, 3.0] {
            for n in 1..=4 {
                assert_eq!(
                    greedy_cover(&traj, n, eps, &order),
                    greedy_cover_brute_force(&traj, n, eps, &order)
                );
            }
        }
    }

    #[test]
    fn rotation_counts_do_not_grow() {
        let k: Vec<Vec<f64>> = (0..500).map(|i| vec![i as f64 / 500.0]).collect();
        let map = CircleRotation { alpha: 0.5f64.sqrt() };
        let first = spanning_count(&map, &k, 1, 0.05, 3, None).unwrap();
        let later = spanning_count(&map, &k, 20, 0.05, 3, None).unwrap();
        assert_eq!(first.upper, later.upper);
    }

    #[test]
    fn linear_regime_prefers_long_clean_windows() {
        let ns: Vec<usize> = (1..=8).collect();
        let mut logs: Vec<f64> = ns.iter().map(|&n| 0.7 * n as f64).collect();
        logs[0] += 1.0;
        let f = fit_linear_regime(&ns, &logs, 0.01).unwrap();
        assert!((f.slope - 0.7).abs() < 1e-12);
        assert_eq!(f.n_range, (2, 8));
    }

    #[test]
    fn contracting_ball_is_the_plain_ball() {
        let map = TimeOneMap::new(FlowSystem::linear_diagonal(&[-2.0, -2.0]).unwrap(), 1e-10);
        let spec = DynamicalBallSpec {
            center: vec![0.0, 0.0],
            n: 6,
            eps: 0.5,
        };
        assert!(ball_membership(&map, &spec, &[0.3, 0.39]).unwrap().member);
        assert!(!ball_membership(&map, &spec, &[0.3, 0.41]).unwrap().member);
    }
}
