//! Geospatial kernel: great-circle distance, geometric route graphs,
//! single-source shortest paths, speed estimation, and Voronoi tessellation.
//!
//! Route graphs connect each node to its `k` nearest neighbors and are
//! augmented with minimum-spanning-tree edges whenever k-NN alone leaves the
//! graph disconnected, so Dijkstra always has a path to work with. Voronoi
//! cells are computed in an equirectangular projection about the bounding-box
//! center; at city scale the projection error is negligible.

use chrono::NaiveDateTime;

use crate::error::{Error, Result};

/// Mean Earth radius used for all great-circle math.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// A latitude/longitude pair in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Self {
        GeoPoint { lat, lon }
    }

    pub fn key(&self) -> LocKey {
        LocKey::from_point(*self)
    }

    pub fn in_range(&self) -> bool {
        (-90.0..=90.0).contains(&self.lat) && (-180.0..=180.0).contains(&self.lon)
    }
}

impl std::fmt::Display for GeoPoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{},{}", self.lat, self.lon)
    }
}

/// Tower location quantized to microdegrees.
///
/// Coordinates in CDR files carry at most six decimals, so quantizing gives
/// an exact, hashable, totally ordered identity for a tower that is robust
/// to float noise from parsing and arithmetic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LocKey(pub i64, pub i64);

impl LocKey {
    pub fn from_point(p: GeoPoint) -> Self {
        LocKey((p.lat * 1e6).round() as i64, (p.lon * 1e6).round() as i64)
    }

    pub fn point(&self) -> GeoPoint {
        GeoPoint::new(self.0 as f64 / 1e6, self.1 as f64 / 1e6)
    }
}

impl std::fmt::Display for LocKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let p = self.point();
        write!(f, "{}:{}", p.lat, p.lon)
    }
}

/// Great-circle distance in kilometers via the haversine formula.
pub fn haversine_km(a: GeoPoint, b: GeoPoint) -> f64 {
    let phi1 = a.lat.to_radians();
    let phi2 = b.lat.to_radians();
    let dphi = (b.lat - a.lat).to_radians();
    let dlam = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlam / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Travel speed between two timestamped positions, in km/h.
///
/// Returns `None` when the elapsed time is zero or negative; such samples
/// are excluded from averages rather than poisoning them.
pub fn speed_kmh(r1: (NaiveDateTime, GeoPoint), r2: (NaiveDateTime, GeoPoint)) -> Option<f64> {
    let dt_secs = (r2.0 - r1.0).num_seconds();
    if dt_secs <= 0 {
        return None;
    }
    let hours = dt_secs as f64 / 3600.0;
    Some(haversine_km(r1.1, r2.1) / hours)
}

/// Geographic bounding box in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub min_lat: f64,
    pub min_lon: f64,
    pub max_lat: f64,
    pub max_lon: f64,
}

impl BoundingBox {
    pub fn new(min_lat: f64, min_lon: f64, max_lat: f64, max_lon: f64) -> Result<Self> {
        if !(min_lat < max_lat && min_lon < max_lon) {
            return Err(Error::config("bounding box must have positive extent"));
        }
        let b = BoundingBox { min_lat, min_lon, max_lat, max_lon };
        if !GeoPoint::new(min_lat, min_lon).in_range() || !GeoPoint::new(max_lat, max_lon).in_range()
        {
            return Err(Error::config("bounding box corners out of range"));
        }
        Ok(b)
    }

    pub fn center(&self) -> GeoPoint {
        GeoPoint::new(
            (self.min_lat + self.max_lat) / 2.0,
            (self.min_lon + self.max_lon) / 2.0,
        )
    }

    pub fn contains(&self, p: GeoPoint) -> bool {
        p.lat >= self.min_lat && p.lat <= self.max_lat && p.lon >= self.min_lon && p.lon <= self.max_lon
    }
}

/// Weighted undirected graph over call locations, with designated home
/// (source) and workplace (target) nodes.
#[derive(Debug, Clone)]
pub struct RouteGraph {
    pub nodes: Vec<GeoPoint>,
    /// Adjacency list; `adj[i]` holds `(neighbor, km)` pairs.
    pub adj: Vec<Vec<(usize, f64)>>,
    pub source: usize,
    pub target: usize,
}

/// Shortest route through a [`RouteGraph`].
#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub nodes: Vec<GeoPoint>,
    pub total_km: f64,
}

/// Builds the k-nearest-neighbor geometric graph over the given locations,
/// with `home` and `work` added as nodes if absent, then augments it with
/// minimum-spanning-tree edges until connected.
pub fn build_route_graph(
    locs: &[GeoPoint],
    home: GeoPoint,
    work: GeoPoint,
    k: usize,
) -> Result<RouteGraph> {
    if k == 0 {
        return Err(Error::config("route graph needs k >= 1"));
    }
    let mut keys: Vec<LocKey> = locs.iter().map(GeoPoint::key).collect();
    keys.push(home.key());
    keys.push(work.key());
    keys.sort();
    keys.dedup();
    let nodes: Vec<GeoPoint> = keys.iter().map(LocKey::point).collect();
    let n = nodes.len();
    if n < 2 {
        return Err(Error::data("route graph needs at least 2 distinct locations"));
    }
    let source = keys.binary_search(&home.key()).expect("home inserted above");
    let target = keys.binary_search(&work.key()).expect("work inserted above");
    if source == target {
        return Err(Error::data("home and workplace resolve to the same location"));
    }

    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let connect = |adj: &mut Vec<Vec<(usize, f64)>>, i: usize, j: usize, d: f64| {
        if !adj[i].iter().any(|&(v, _)| v == j) {
            adj[i].push((j, d));
            adj[j].push((i, d));
        }
    };
    for i in 0..n {
        let mut by_dist: Vec<(usize, f64)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (j, haversine_km(nodes[i], nodes[j])))
            .collect();
        by_dist.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        for &(j, d) in by_dist.iter().take(k) {
            connect(&mut adj, i, j, d);
        }
    }

    // k-NN can leave islands; stitch them together along MST edges.
    let mut dsu = Dsu::new(n);
    for (i, nbrs) in adj.iter().enumerate() {
        for &(j, _) in nbrs {
            dsu.union(i, j);
        }
    }
    if (1..n).any(|i| dsu.find(i) != dsu.find(0)) {
        for (i, j) in mst_edges(&nodes) {
            if dsu.find(i) != dsu.find(j) {
                connect(&mut adj, i, j, haversine_km(nodes[i], nodes[j]));
                dsu.union(i, j);
            }
        }
    }

    for nbrs in &mut adj {
        nbrs.sort_by_key(|n| n.0);
    }
    Ok(RouteGraph { nodes, adj, source, target })
}

/// Dijkstra from source to target; ties between equal-cost frontier entries
/// resolve toward the smallest node index, so output is deterministic.
pub fn shortest_route(g: &RouteGraph) -> Result<Route> {
    let n = g.nodes.len();
    let mut dist = vec![f64::INFINITY; n];
    let mut pred = vec![usize::MAX; n];
    let mut heap = std::collections::BinaryHeap::new();
    dist[g.source] = 0.0;
    heap.push(std::cmp::Reverse(HeapEntry { dist: 0.0, node: g.source }));

    while let Some(std::cmp::Reverse(HeapEntry { dist: d, node: u })) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        if u == g.target {
            break;
        }
        for &(v, w) in &g.adj[u] {
            let nd = d + w;
            if nd < dist[v] {
                dist[v] = nd;
                pred[v] = u;
                heap.push(std::cmp::Reverse(HeapEntry { dist: nd, node: v }));
            }
        }
    }

    if dist[g.target].is_infinite() {
        return Err(Error::data("no route: graph is disconnected"));
    }
    let mut order = vec![g.target];
    let mut cur = g.target;
    while cur != g.source {
        cur = pred[cur];
        order.push(cur);
    }
    order.reverse();
    Ok(Route {
        nodes: order.iter().map(|&i| g.nodes[i]).collect(),
        total_km: dist[g.target],
    })
}

#[derive(PartialEq)]
struct HeapEntry {
    dist: f64,
    node: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.node.cmp(&other.node))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Prim's MST over the complete haversine graph; fine for route-sized inputs.
fn mst_edges(nodes: &[GeoPoint]) -> Vec<(usize, usize)> {
    let n = nodes.len();
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    let mut from = vec![usize::MAX; n];
    let mut edges = Vec::with_capacity(n.saturating_sub(1));
    best[0] = 0.0;
    for _ in 0..n {
        let mut u = usize::MAX;
        for i in 0..n {
            if !in_tree[i] && (u == usize::MAX || best[i] < best[u]) {
                u = i;
            }
        }
        in_tree[u] = true;
        if from[u] != usize::MAX {
            edges.push((from[u], u));
        }
        for v in 0..n {
            if !in_tree[v] {
                let d = haversine_km(nodes[u], nodes[v]);
                if d < best[v] {
                    best[v] = d;
                    from[v] = u;
                }
            }
        }
    }
    edges
}

struct Dsu {
    parent: Vec<usize>,
}

impl Dsu {
    fn new(n: usize) -> Self {
        Dsu { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra] = rb;
        }
    }
}

/// Voronoi tessellation of a bounding box around a set of sites.
#[derive(Debug, Clone)]
pub struct VoronoiDiagram {
    pub sites: Vec<GeoPoint>,
    /// One polygon ring (lat/lon vertices, not closed) per site.
    pub cells: Vec<Vec<GeoPoint>>,
    pub bbox: BoundingBox,
    proj: Projection,
}

/// Equirectangular projection about a reference point, in kilometers.
#[derive(Debug, Clone, Copy)]
struct Projection {
    lat0: f64,
    lon0: f64,
    kx: f64,
    ky: f64,
}

impl Projection {
    fn about(center: GeoPoint) -> Self {
        let ky = EARTH_RADIUS_KM * std::f64::consts::PI / 180.0;
        Projection {
            lat0: center.lat,
            lon0: center.lon,
            kx: ky * center.lat.to_radians().cos(),
            ky,
        }
    }

    fn to_xy(self, p: GeoPoint) -> (f64, f64) {
        ((p.lon - self.lon0) * self.kx, (p.lat - self.lat0) * self.ky)
    }

    fn to_geo(self, xy: (f64, f64)) -> GeoPoint {
        GeoPoint::new(self.lat0 + xy.1 / self.ky, self.lon0 + xy.0 / self.kx)
    }
}

/// Computes the Voronoi diagram of `sites` clipped to `bbox` by successive
/// half-plane clipping in the planar projection. Duplicate sites (after
/// microdegree quantization) are rejected.
pub fn voronoi(sites: &[GeoPoint], bbox: BoundingBox) -> Result<VoronoiDiagram> {
    if sites.is_empty() {
        return Err(Error::data("voronoi needs at least one site"));
    }
    let mut seen = std::collections::BTreeSet::new();
    for s in sites {
        if !seen.insert(s.key()) {
            return Err(Error::data(format!("duplicate voronoi site at {s}")));
        }
    }

    let proj = Projection::about(bbox.center());
    let pts: Vec<(f64, f64)> = sites.iter().map(|&s| proj.to_xy(s)).collect();
    let (x0, y0) = proj.to_xy(GeoPoint::new(bbox.min_lat, bbox.min_lon));
    let (x1, y1) = proj.to_xy(GeoPoint::new(bbox.max_lat, bbox.max_lon));
    let box_ring = vec![(x0, y0), (x1, y0), (x1, y1), (x0, y1)];

    let mut cells = Vec::with_capacity(sites.len());
    for (i, &si) in pts.iter().enumerate() {
        let mut ring = box_ring.clone();
        for (j, &sj) in pts.iter().enumerate() {
            if i == j || ring.is_empty() {
                continue;
            }
            // Keep the side of the perpendicular bisector containing site i:
            // (sj - si) . p <= (sj - si) . (si + sj) / 2
            let a = (sj.0 - si.0, sj.1 - si.1);
            let b = a.0 * (si.0 + sj.0) / 2.0 + a.1 * (si.1 + sj.1) / 2.0;
            ring = clip_halfplane(&ring, a, b);
        }
        cells.push(ring.into_iter().map(|xy| proj.to_geo(xy)).collect());
    }

    Ok(VoronoiDiagram { sites: sites.to_vec(), cells, bbox, proj })
}

impl VoronoiDiagram {
    /// Index of the site nearest to `p` in the diagram's planar metric.
    pub fn nearest_site(&self, p: GeoPoint) -> usize {
        let q = self.proj.to_xy(p);
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, &s) in self.sites.iter().enumerate() {
            let c = self.proj.to_xy(s);
            let d = (c.0 - q.0).powi(2) + (c.1 - q.1).powi(2);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    /// Whether `p` lies inside (or within `eps_km` of the boundary of) the
    /// cell of site `i`.
    pub fn cell_contains(&self, i: usize, p: GeoPoint, eps_km: f64) -> bool {
        let ring: Vec<(f64, f64)> = self.cells[i].iter().map(|&v| self.proj.to_xy(v)).collect();
        if ring.len() < 3 {
            return false;
        }
        let q = self.proj.to_xy(p);
        // Convex ring: inside iff on the inner side of every edge.
        let n = ring.len();
        let mut sign = 0.0f64;
        for k in 0..n {
            let a = ring[k];
            let b = ring[(k + 1) % n];
            let cross = (b.0 - a.0) * (q.1 - a.1) - (b.1 - a.1) * (q.0 - a.0);
            let len = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
            let dist = if len > 0.0 { cross / len } else { 0.0 };
            if dist.abs() <= eps_km {
                continue;
            }
            if sign == 0.0 {
                sign = dist.signum();
            } else if dist.signum() != sign {
                return false;
            }
        }
        true
    }

    /// Cell area in square kilometers (planar shoelace).
    pub fn cell_area_km2(&self, i: usize) -> f64 {
        let ring: Vec<(f64, f64)> = self.cells[i].iter().map(|&v| self.proj.to_xy(v)).collect();
        shoelace(&ring).abs()
    }

    /// Bounding-box area in square kilometers in the same projection.
    pub fn bbox_area_km2(&self) -> f64 {
        let (x0, y0) = self.proj.to_xy(GeoPoint::new(self.bbox.min_lat, self.bbox.min_lon));
        let (x1, y1) = self.proj.to_xy(GeoPoint::new(self.bbox.max_lat, self.bbox.max_lon));
        ((x1 - x0) * (y1 - y0)).abs()
    }
}

fn shoelace(ring: &[(f64, f64)]) -> f64 {
    let n = ring.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let a = ring[i];
        let b = ring[(i + 1) % n];
        acc += a.0 * b.1 - b.0 * a.1;
    }
    acc / 2.0
}

/// Sutherland–Hodgman clip of a convex ring against `a . p <= b`.
fn clip_halfplane(ring: &[(f64, f64)], a: (f64, f64), b: f64) -> Vec<(f64, f64)> {
    let inside = |p: (f64, f64)| a.0 * p.0 + a.1 * p.1 <= b;
    let mut out = Vec::with_capacity(ring.len() + 1);
    let n = ring.len();
    for i in 0..n {
        let cur = ring[i];
        let nxt = ring[(i + 1) % n];
        let cur_in = inside(cur);
        let nxt_in = inside(nxt);
        if cur_in {
            out.push(cur);
        }
        if cur_in != nxt_in {
            let da = a.0 * (nxt.0 - cur.0) + a.1 * (nxt.1 - cur.1);
            if da.abs() > 0.0 {
                let t = (b - a.0 * cur.0 - a.1 * cur.1) / da;
                out.push((cur.0 + t * (nxt.0 - cur.0), cur.1 + t * (nxt.1 - cur.1)));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use proptest::prelude::*;

    fn dhaka_bbox() -> BoundingBox {
        BoundingBox::new(23.70, 90.33, 23.85, 90.48).unwrap()
    }

    #[test]
    fn haversine_zero_for_equal_points() {
        let p = GeoPoint::new(23.7, 90.4);
        assert_eq!(haversine_km(p, p), 0.0);
    }

    #[test]
    fn haversine_matches_published_user_distances() {
        // Home/workplace distances for users AAH86JAA9 and AAH86JAAA.
        let d1 = haversine_km(GeoPoint::new(23.846, 90.421), GeoPoint::new(23.793, 90.402));
        assert!((d1 - 6.20).abs() <= 0.03, "got {d1}");
        let d2 = haversine_km(GeoPoint::new(23.710, 90.404), GeoPoint::new(23.812, 90.255));
        assert!((d2 - 18.93).abs() <= 0.03, "got {d2}");
        let d3 = haversine_km(GeoPoint::new(23.789, 90.408), GeoPoint::new(23.787, 90.415));
        assert!((d3 - 0.72).abs() <= 0.05, "got {d3}");
    }

    #[test]
    fn haversine_symmetric() {
        let a = GeoPoint::new(23.7, 90.4);
        let b = GeoPoint::new(24.0, 90.2);
        assert_eq!(haversine_km(a, b), haversine_km(b, a));
    }

    proptest! {
        #[test]
        fn haversine_triangle_inequality(
            lat_a in 23.0..25.0f64, lon_a in 90.0..91.0f64,
            lat_b in 23.0..25.0f64, lon_b in 90.0..91.0f64,
            lat_c in 23.0..25.0f64, lon_c in 90.0..91.0f64,
        ) {
            let a = GeoPoint::new(lat_a, lon_a);
            let b = GeoPoint::new(lat_b, lon_b);
            let c = GeoPoint::new(lat_c, lon_c);
            prop_assert!(haversine_km(a, c) <= haversine_km(a, b) + haversine_km(b, c) + 1e-9);
        }
    }

    #[test]
    fn two_node_graph_is_single_edge() {
        let home = GeoPoint::new(23.70, 90.40);
        let work = GeoPoint::new(23.72, 90.42);
        let g = build_route_graph(&[], home, work, 4).unwrap();
        assert_eq!(g.nodes.len(), 2);
        let r = shortest_route(&g).unwrap();
        assert_eq!(r.nodes.len(), 2);
        assert!((r.total_km - haversine_km(home, work)).abs() < 1e-9);
    }

    #[test]
    fn collinear_nodes_stay_connected() {
        let pts: Vec<GeoPoint> = (0..5).map(|i| GeoPoint::new(23.70 + 0.01 * i as f64, 90.40)).collect();
        let g = build_route_graph(&pts, pts[0], pts[4], 2).unwrap();
        let r = shortest_route(&g).unwrap();
        assert_eq!(r.nodes.first(), Some(&pts[0]));
        assert_eq!(r.nodes.last(), Some(&pts[4]));
    }

    #[test]
    fn knn_graph_connected_for_any_k() {
        let mut rng_state = 0x9e3779b97f4a7c15u64;
        let mut next = || {
            rng_state ^= rng_state << 13;
            rng_state ^= rng_state >> 7;
            rng_state ^= rng_state << 17;
            (rng_state >> 11) as f64 / (1u64 << 53) as f64
        };
        let pts: Vec<GeoPoint> = (0..20)
            .map(|_| GeoPoint::new(23.70 + 0.15 * next(), 90.33 + 0.15 * next()))
            .collect();
        for k in 1..=4 {
            let g = build_route_graph(&pts[2..], pts[0], pts[1], k).unwrap();
            let r = shortest_route(&g).expect("connected for any k >= 1");
            assert!(r.total_km >= haversine_km(pts[0], pts[1]) - 1e-9);
        }
    }

    /// Every simple path from source to target, by depth-first enumeration.
    /// Independent check used by the Dijkstra acceptance criterion.
    pub(crate) fn brute_force_min_path(g: &RouteGraph) -> f64 {
        fn dfs(
            g: &RouteGraph,
            u: usize,
            seen: &mut Vec<bool>,
            cost: f64,
            best: &mut f64,
        ) {
            if u == g.target {
                if cost < *best {
                    *best = cost;
                }
                return;
            }
            for &(v, w) in &g.adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    dfs(g, v, seen, cost + w, best);
                    seen[v] = false;
                }
            }
        }
        let mut seen = vec![false; g.nodes.len()];
        seen[g.source] = true;
        let mut best = f64::INFINITY;
        dfs(g, g.source, &mut seen, 0.0, &mut best);
        best
    }

    #[test]
    fn dijkstra_agrees_with_path_enumeration_on_small_graphs() {
        let mut state = 1u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for trial in 0..50 {
            let n = 3 + (trial % 6);
            let pts: Vec<GeoPoint> = (0..n)
                .map(|_| GeoPoint::new(23.70 + 0.15 * next(), 90.33 + 0.15 * next()))
                .collect();
            let g = build_route_graph(&pts[2..], pts[0], pts[1], 2).unwrap();
            let r = shortest_route(&g).unwrap();
            let best = brute_force_min_path(&g);
            assert!((r.total_km - best).abs() < 1e-9, "trial {trial}: {} vs {best}", r.total_km);
        }
    }

    #[test]
    fn published_trajectory_orders_towers_toward_workplace() {
        // The 13-location trajectory: home, eleven intermediate towers, workplace.
        let home = GeoPoint::new(23.878599, 90.390602);
        let work = GeoPoint::new(24.025, 90.244202);
        let mid = [
            (23.843901, 90.279404),
            (23.848301, 90.274696),
            (23.864401, 90.3992),
            (23.875799, 90.289398),
            (23.8792, 90.400597),
            (23.883101, 90.331703),
            (23.8908, 90.387497),
            (23.937799, 90.2714),
            (23.9606, 90.271103),
            (23.9781, 90.267502),
            (23.9928, 90.256699),
        ];
        let pts: Vec<GeoPoint> = mid.iter().map(|&(a, b)| GeoPoint::new(a, b)).collect();
        let g = build_route_graph(&pts, home, work, 4).unwrap();
        let r = shortest_route(&g).unwrap();
        assert!(r.nodes.len() <= 13, "route visits a subset of the towers");
        for w in r.nodes.windows(2) {
            assert!(
                haversine_km(w[1], work) < haversine_km(w[0], work),
                "route must move monotonically toward the workplace"
            );
        }
        assert!(r.total_km >= haversine_km(home, work) - 1e-9);
    }

    #[test]
    fn speed_zero_for_same_point() {
        let t0 = NaiveDate::from_ymd_opt(2012, 6, 20).unwrap().and_hms_opt(8, 0, 0).unwrap();
        let t1 = t0 + chrono::Duration::hours(1);
        let p = GeoPoint::new(23.7, 90.4);
        assert_eq!(speed_kmh((t0, p), (t1, p)), Some(0.0));
    }

    #[test]
    fn speed_from_published_distance() {
        let t0 = NaiveDate::from_ymd_opt(2012, 6, 20).unwrap().and_hms_opt(8, 0, 0).unwrap();
        let t1 = t0 + chrono::Duration::minutes(30);
        let a = GeoPoint::new(23.846, 90.421);
        let b = GeoPoint::new(23.793, 90.402);
        let v = speed_kmh((t0, a), (t1, b)).unwrap();
        assert!((v - 12.4).abs() < 0.1, "got {v}");
    }

    #[test]
    fn speed_undefined_for_zero_elapsed() {
        let t0 = NaiveDate::from_ymd_opt(2012, 6, 20).unwrap().and_hms_opt(8, 0, 0).unwrap();
        let a = GeoPoint::new(23.7, 90.4);
        let b = GeoPoint::new(23.8, 90.3);
        assert_eq!(speed_kmh((t0, a), (t0, b)), None);
    }

    #[test]
    fn single_site_owns_whole_box() {
        let bbox = dhaka_bbox();
        let v = voronoi(&[GeoPoint::new(23.77, 90.40)], bbox).unwrap();
        assert_eq!(v.cells.len(), 1);
        assert!((v.cell_area_km2(0) - v.bbox_area_km2()).abs() / v.bbox_area_km2() < 1e-9);
    }

    #[test]
    fn two_sites_split_along_bisector() {
        let bbox = dhaka_bbox();
        // Mirror images about the box's vertical center line (lon 90.405).
        let a = GeoPoint::new(23.77, 90.375);
        let b = GeoPoint::new(23.77, 90.435);
        let v = voronoi(&[a, b], bbox).unwrap();
        let total: f64 = (0..2).map(|i| v.cell_area_km2(i)).sum();
        assert!((total - v.bbox_area_km2()).abs() / v.bbox_area_km2() < 1e-9);
        // Sites are mirror images about the vertical bisector; halves are equal.
        assert!((v.cell_area_km2(0) - v.cell_area_km2(1)).abs() / v.bbox_area_km2() < 1e-9);
        assert!(v.cell_contains(0, a, 1e-9));
        assert!(v.cell_contains(1, b, 1e-9));
    }

    #[test]
    fn duplicate_sites_rejected() {
        let bbox = dhaka_bbox();
        let p = GeoPoint::new(23.77, 90.40);
        assert!(voronoi(&[p, p], bbox).is_err());
    }

    #[test]
    fn collinear_sites_form_slabs() {
        let bbox = dhaka_bbox();
        let sites: Vec<GeoPoint> = (0..4).map(|i| GeoPoint::new(23.72 + 0.03 * i as f64, 90.40)).collect();
        let v = voronoi(&sites, bbox).unwrap();
        let total: f64 = (0..4).map(|i| v.cell_area_km2(i)).sum();
        assert!((total - v.bbox_area_km2()).abs() / v.bbox_area_km2() < 1e-8);
        for (i, &s) in sites.iter().enumerate() {
            assert!(v.cell_contains(i, s, 1e-9));
        }
    }

    #[test]
    fn nearest_site_property_spot_check() {
        let bbox = dhaka_bbox();
        let mut state = 7u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let mut sites = Vec::new();
        let mut seen = std::collections::BTreeSet::new();
        while sites.len() < 40 {
            let p = GeoPoint::new(23.70 + 0.15 * next(), 90.33 + 0.15 * next());
            if seen.insert(p.key()) {
                sites.push(p);
            }
        }
        let v = voronoi(&sites, bbox).unwrap();
        for _ in 0..2000 {
            let q = GeoPoint::new(23.70 + 0.15 * next(), 90.33 + 0.15 * next());
            let ns = v.nearest_site(q);
            assert!(v.cell_contains(ns, q, 1e-7), "point {q} not in nearest cell {ns}");
        }
    }
}
