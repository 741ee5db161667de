//! Road-network graph: ingestion, shortest paths, soft-weighted chain
//! Dijkstra, and hop distances.
//!
//! The graph is segment-level: nodes are directed road segments, adjacency
//! lists name the successor segments. Path cost accrues on *entering* a
//! segment, so the source segment's own length never counts and a
//! single-segment path costs zero.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap, VecDeque};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{self, CellId, GeoPoint, HexConfig};

/// The 20 recognized road class labels (OSM highway tags).
pub const ROAD_CLASSES: [&str; 20] = [
    "motorway",
    "trunk",
    "primary",
    "secondary",
    "tertiary",
    "unclassified",
    "residential",
    "motorway_link",
    "trunk_link",
    "primary_link",
    "secondary_link",
    "tertiary_link",
    "living_street",
    "service",
    "pedestrian",
    "track",
    "busway",
    "footway",
    "cycleway",
    "path",
];

#[derive(Debug, Error)]
pub enum RoadnetError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("duplicate rid {0}")]
    DuplicateRid(u64),
    #[error("dangling adjacency targets: {0:?}")]
    DanglingRids(Vec<u64>),
    #[error("unknown rid {0}")]
    UnknownRid(u64),
    #[error("segment {rid}: length {length_m} m deviates more than 5% from geometry ({geom_m} m)")]
    LengthMismatch { rid: u64, length_m: f64, geom_m: f64 },
    #[error("unknown road class {0:?}")]
    UnknownClass(String),
    #[error("empty waypoint list")]
    EmptyWaypoints,
    #[error(transparent)]
    Geo(#[from] geo::GeoError),
}

/// A directed road segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadSegment {
    pub rid: u64,
    pub start: GeoPoint,
    pub end: GeoPoint,
    pub name: Option<String>,
    pub length_m: f64,
    pub road_class: String,
    pub bearing: f64,
}

impl RoadSegment {
    pub fn midpoint(&self) -> GeoPoint {
        GeoPoint {
            lat: (self.start.lat + self.end.lat) / 2.0,
            lon: geo::normalize_lon(
                self.start.lon + geo::normalize_lon(self.end.lon - self.start.lon) / 2.0,
            ),
        }
    }
}

/// Wire record for the road-network JSONL file.
#[derive(Debug, Serialize, Deserialize)]
struct SegmentRecord {
    rid: u64,
    start_lat: f64,
    start_lon: f64,
    end_lat: f64,
    end_lon: f64,
    name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    length_m: Option<f64>,
    road_class: String,
    successors: Vec<u64>,
}

/// Immutable directed road graph.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RoadGraph {
    segments: BTreeMap<u64, RoadSegment>,
    adjacency: BTreeMap<u64, Vec<u64>>,
    reverse: BTreeMap<u64, Vec<u64>>,
}

impl RoadGraph {
    /// Build and validate a graph from segments plus adjacency lists.
    pub fn build(
        segments: Vec<(RoadSegment, Vec<u64>)>,
    ) -> Result<Self, RoadnetError> {
        let mut seg_map = BTreeMap::new();
        let mut adjacency = BTreeMap::new();
        for (seg, succ) in segments {
            if !ROAD_CLASSES.contains(&seg.road_class.as_str()) {
                return Err(RoadnetError::UnknownClass(seg.road_class));
            }
            if seg_map.insert(seg.rid, seg.clone()).is_some() {
                return Err(RoadnetError::DuplicateRid(seg.rid));
            }
            let mut succ = succ;
            succ.sort_unstable();
            succ.dedup();
            adjacency.insert(seg.rid, succ);
        }
        let mut dangling = BTreeSet::new();
        for succ in adjacency.values() {
            for t in succ {
                if !seg_map.contains_key(t) {
                    dangling.insert(*t);
                }
            }
        }
        if !dangling.is_empty() {
            return Err(RoadnetError::DanglingRids(dangling.into_iter().collect()));
        }
        let mut reverse: BTreeMap<u64, Vec<u64>> = seg_map.keys().map(|&k| (k, vec![])).collect();
        for (&src, succ) in &adjacency {
            for &t in succ {
                reverse.get_mut(&t).unwrap().push(src);
            }
        }
        Ok(RoadGraph {
            segments: seg_map,
            adjacency,
            reverse,
        })
    }

    pub fn segment(&self, rid: u64) -> Result<&RoadSegment, RoadnetError> {
        self.segments.get(&rid).ok_or(RoadnetError::UnknownRid(rid))
    }

    pub fn contains(&self, rid: u64) -> bool {
        self.segments.contains_key(&rid)
    }

    pub fn successors(&self, rid: u64) -> &[u64] {
        self.adjacency.get(&rid).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn rids(&self) -> impl Iterator<Item = u64> + '_ {
        self.segments.keys().copied()
    }

    pub fn segments(&self) -> impl Iterator<Item = &RoadSegment> {
        self.segments.values()
    }

    /// Total length of a rid path in meters.
    pub fn path_length_m(&self, rids: &[u64]) -> Result<f64, RoadnetError> {
        rids.iter().try_fold(0.0, |acc, &r| Ok(acc + self.segment(r)?.length_m))
    }
}

/// Multiplicative edge-weight biases for soft-constrained routing. The
/// effective per-segment multiplier is
/// `class_bias * (mu_prefer if cell in prefer) * (mu_avoid if cell in avoid)`,
/// applied to the segment length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftWeights {
    pub hex: HexConfig,
    pub prefer_cells: BTreeSet<CellId>,
    pub mu_prefer: f64,
    pub avoid_cells: BTreeSet<CellId>,
    pub mu_avoid: f64,
    pub class_bias: BTreeMap<String, f64>,
}

impl Default for SoftWeights {
    fn default() -> Self {
        SoftWeights {
            hex: HexConfig::default(),
            prefer_cells: BTreeSet::new(),
            mu_prefer: 0.7,
            avoid_cells: BTreeSet::new(),
            mu_avoid: 1.5,
            class_bias: BTreeMap::new(),
        }
    }
}

impl SoftWeights {
    pub fn with_hex(hex: HexConfig) -> Self {
        SoftWeights {
            hex,
            ..Default::default()
        }
    }

    fn is_neutral_cells(&self) -> bool {
        self.prefer_cells.is_empty() && self.avoid_cells.is_empty()
    }

    /// Effective multiplier for one segment. Cell lookup is skipped when no
    /// cell sets are configured, so neutral weights never touch the
    /// projection.
    pub fn multiplier(&self, seg: &RoadSegment) -> f64 {
        let mut mu = *self.class_bias.get(&seg.road_class).unwrap_or(&1.0);
        if !self.is_neutral_cells() {
            if let Ok(cell) = geo::cell_of(seg.midpoint(), &self.hex) {
                if self.prefer_cells.contains(&cell) {
                    mu *= self.mu_prefer;
                }
                if self.avoid_cells.contains(&cell) {
                    mu *= self.mu_avoid;
                }
            }
        }
        mu
    }
}

/// Outcome of a single-pair search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RouteResult {
    Path { rids: Vec<u64>, cost: f64 },
    Unreachable,
}

impl RouteResult {
    pub fn path(&self) -> Option<&[u64]> {
        match self {
            RouteResult::Path { rids, .. } => Some(rids),
            RouteResult::Unreachable => None,
        }
    }

    pub fn cost(&self) -> Option<f64> {
        match self {
            RouteResult::Path { cost, .. } => Some(*cost),
            RouteResult::Unreachable => None,
        }
    }
}

#[derive(PartialEq)]
struct HeapEntry {
    cost: f64,
    rid: u64,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap over (cost, rid): reverse the natural order.
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.rid.cmp(&self.rid))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Soft-weighted shortest path from `src` to `dst`. Cost accrues on
/// entering each segment after the source; ties resolve toward smaller
/// rids via the heap order.
pub fn dijkstra(
    g: &RoadGraph,
    src: u64,
    dst: u64,
    w: &SoftWeights,
) -> Result<RouteResult, RoadnetError> {
    if !g.contains(src) {
        return Err(RoadnetError::UnknownRid(src));
    }
    if !g.contains(dst) {
        return Err(RoadnetError::UnknownRid(dst));
    }
    if src == dst {
        return Ok(RouteResult::Path { rids: vec![src], cost: 0.0 });
    }

    let mut dist: HashMap<u64, f64> = HashMap::new();
    let mut prev: HashMap<u64, u64> = HashMap::new();
    let mut mu_cache: HashMap<u64, f64> = HashMap::new();
    let mut heap = BinaryHeap::new();
    dist.insert(src, 0.0);
    heap.push(HeapEntry { cost: 0.0, rid: src });

    while let Some(HeapEntry { cost, rid }) = heap.pop() {
        if rid == dst {
            let mut path = vec![dst];
            let mut cur = dst;
            while let Some(&p) = prev.get(&cur) {
                path.push(p);
                cur = p;
            }
            path.reverse();
            return Ok(RouteResult::Path { rids: path, cost });
        }
        if cost > *dist.get(&rid).unwrap_or(&f64::INFINITY) {
            continue;
        }
        for &next in g.successors(rid) {
            let mu = *mu_cache.entry(next).or_insert_with(|| {
                w.multiplier(g.segment(next).expect("validated adjacency"))
            });
            let step = g.segment(next)?.length_m * mu;
            let cand = cost + step;
            if cand < *dist.get(&next).unwrap_or(&f64::INFINITY) {
                dist.insert(next, cand);
                prev.insert(next, rid);
                heap.push(HeapEntry { cost: cand, rid: next });
            }
        }
    }
    Ok(RouteResult::Unreachable)
}

/// A chained route through ordered waypoints, with any waypoints dropped
/// because a leg was unreachable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainRoute {
    pub rids: Vec<u64>,
    pub cost: f64,
    pub dropped_waypoints: Vec<u64>,
}

/// Sequential shortest-path search through ordered waypoints. Duplicate
/// junction rids between legs are collapsed; an unreachable intermediate
/// waypoint is dropped and the leg re-planned from the last reached
/// segment, never failing the whole route.
pub fn chain_dijkstra(
    g: &RoadGraph,
    waypoints: &[u64],
    w: &SoftWeights,
) -> Result<ChainRoute, RoadnetError> {
    if waypoints.is_empty() {
        return Err(RoadnetError::EmptyWaypoints);
    }
    for &wp in waypoints {
        if !g.contains(wp) {
            return Err(RoadnetError::UnknownRid(wp));
        }
    }
    let mut rids = vec![waypoints[0]];
    let mut cost = 0.0;
    let mut dropped = Vec::new();
    let mut current = waypoints[0];
    for &wp in &waypoints[1..] {
        if wp == current {
            continue;
        }
        match dijkstra(g, current, wp, w)? {
            RouteResult::Path { rids: leg, cost: leg_cost } => {
                rids.extend_from_slice(&leg[1..]);
                cost += leg_cost;
                current = wp;
            }
            RouteResult::Unreachable => dropped.push(wp),
        }
    }
    Ok(ChainRoute { rids, cost, dropped_waypoints: dropped })
}

/// Hop count between two segments, capped at `max_k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HopDistance {
    Hops(u32),
    Beyond,
}

impl HopDistance {
    pub fn within(&self, k: u32) -> bool {
        matches!(self, HopDistance::Hops(h) if *h <= k)
    }
}

/// Breadth-first hop count on the undirected view of adjacency, capped at
/// `max_k`.
pub fn hop_distance(
    g: &RoadGraph,
    a: u64,
    b: u64,
    max_k: u32,
) -> Result<HopDistance, RoadnetError> {
    if !g.contains(a) {
        return Err(RoadnetError::UnknownRid(a));
    }
    if !g.contains(b) {
        return Err(RoadnetError::UnknownRid(b));
    }
    if a == b {
        return Ok(HopDistance::Hops(0));
    }
    let mut seen: BTreeSet<u64> = BTreeSet::new();
    let mut queue = VecDeque::new();
    seen.insert(a);
    queue.push_back((a, 0u32));
    while let Some((rid, hops)) = queue.pop_front() {
        if hops == max_k {
            continue;
        }
        let fwd = g.adjacency.get(&rid).map(Vec::as_slice).unwrap_or(&[]);
        let back = g.reverse.get(&rid).map(Vec::as_slice).unwrap_or(&[]);
        for &next in fwd.iter().chain(back.iter()) {
            if next == b {
                return Ok(HopDistance::Hops(hops + 1));
            }
            if seen.insert(next) {
                queue.push_back((next, hops + 1));
            }
        }
    }
    Ok(HopDistance::Beyond)
}

/// Load a road network from a JSONL file, one segment object per line.
pub fn load_roadnet(path: &Path) -> Result<RoadGraph, RoadnetError> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if i == 0 && crate::jsonl::parse_header(&line).is_some() {
            continue;
        }
        let rec: SegmentRecord = serde_json::from_str(&line).map_err(|e| RoadnetError::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        let start = GeoPoint::new(rec.start_lat, rec.start_lon).map_err(|e| RoadnetError::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        let end = GeoPoint::new(rec.end_lat, rec.end_lon).map_err(|e| RoadnetError::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        let bearing = geo::bearing_deg(start, end).map_err(|e| RoadnetError::Parse {
            line: i + 1,
            msg: format!("segment {}: {e}", rec.rid),
        })?;
        let geom_m = geo::haversine_km(start, end)? * 1000.0;
        let length_m = match rec.length_m {
            Some(l) if l > 0.0 && l.is_finite() => l,
            Some(l) => {
                return Err(RoadnetError::Parse {
                    line: i + 1,
                    msg: format!("segment {}: invalid length_m {l}", rec.rid),
                })
            }
            None => geom_m,
        };
        // A supplied polyline length may exceed the endpoint chord but can
        // never undercut it by more than the 5% tolerance.
        if length_m < geom_m * 0.95 {
            return Err(RoadnetError::LengthMismatch {
                rid: rec.rid,
                length_m,
                geom_m,
            });
        }
        rows.push((
            RoadSegment {
                rid: rec.rid,
                start,
                end,
                name: rec.name,
                length_m,
                road_class: rec.road_class,
                bearing,
            },
            rec.successors,
        ));
    }
    RoadGraph::build(rows)
}

/// Persist a road network as JSONL, inverse of [`load_roadnet`].
pub fn save_roadnet(g: &RoadGraph, path: &Path) -> Result<(), RoadnetError> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(crate::jsonl::header_line("trajprism.roadnet").as_bytes())?;
    file.write_all(b"\n")?;
    for seg in g.segments.values() {
        let rec = SegmentRecord {
            rid: seg.rid,
            start_lat: seg.start.lat,
            start_lon: seg.start.lon,
            end_lat: seg.end.lat,
            end_lon: seg.end.lon,
            name: seg.name.clone(),
            length_m: Some(seg.length_m),
            road_class: seg.road_class.clone(),
            successors: g.adjacency[&seg.rid].clone(),
        };
        serde_json::to_writer(&mut file, &rec).map_err(|e| RoadnetError::Parse {
            line: 0,
            msg: e.to_string(),
        })?;
        file.write_all(b"\n")?;
    }
    file.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// A straight west-to-east chain of `n` unit-ish segments at the given
    /// latitude row, rids starting at `base`.
    fn chain_segments(n: u64, base: u64) -> Vec<(RoadSegment, Vec<u64>)> {
        (0..n)
            .map(|i| {
                let rid = base + i;
                let start = GeoPoint::new(0.0, 0.001 * i as f64).unwrap();
                let end = GeoPoint::new(0.0, 0.001 * (i + 1) as f64).unwrap();
                let seg = RoadSegment {
                    rid,
                    start,
                    end,
                    name: Some(format!("Road {rid}")),
                    length_m: geo::haversine_km(start, end).unwrap() * 1000.0,
                    road_class: "residential".into(),
                    bearing: 90.0,
                };
                let succ = if i + 1 < n { vec![rid + 1] } else { vec![] };
                (seg, succ)
            })
            .collect()
    }

    fn line_graph(n: u64) -> RoadGraph {
        RoadGraph::build(chain_segments(n, 1)).unwrap()
    }

    /// Grid graph: nodes are abstract segments placed on a k x k lattice,
    /// bidirectional adjacency, seeded random lengths.
    fn grid_graph(k: u32, rng: &mut ChaCha8Rng) -> RoadGraph {
        let idx = |r: u32, c: u32| (r * k + c + 1) as u64;
        let mut rows = Vec::new();
        for r in 0..k {
            for c in 0..k {
                let rid = idx(r, c);
                let length_m = rng.gen_range(10.0..500.0);
                let dlon = (length_m / (crate::geo::EARTH_RADIUS_KM * 1000.0)).to_degrees();
                let start = GeoPoint::new(0.001 * r as f64, 0.01 * c as f64).unwrap();
                let end = GeoPoint::new(0.001 * r as f64, 0.01 * c as f64 + dlon).unwrap();
                let mut succ = Vec::new();
                if r > 0 {
                    succ.push(idx(r - 1, c));
                }
                if r + 1 < k {
                    succ.push(idx(r + 1, c));
                }
                if c > 0 {
                    succ.push(idx(r, c - 1));
                }
                if c + 1 < k {
                    succ.push(idx(r, c + 1));
                }
                let seg = RoadSegment {
                    rid,
                    start,
                    end,
                    name: None,
                    length_m,
                    road_class: "residential".into(),
                    bearing: geo::bearing_deg(start, end).unwrap(),
                };
                rows.push((seg, succ));
            }
        }
        RoadGraph::build(rows).unwrap()
    }

    /// Exhaustive minimum over all simple paths, same entering-cost rule.
    fn brute_force_cost(g: &RoadGraph, src: u64, dst: u64, w: &SoftWeights) -> Option<f64> {
        fn rec(
            g: &RoadGraph,
            cur: u64,
            dst: u64,
            w: &SoftWeights,
            visited: &mut BTreeSet<u64>,
            cost: f64,
            best: &mut Option<f64>,
        ) {
            if cur == dst {
                *best = Some(best.map_or(cost, |b: f64| b.min(cost)));
                return;
            }
            if let Some(b) = best {
                if cost >= *b {
                    return;
                }
            }
            for &next in g.successors(cur) {
                if visited.insert(next) {
                    let step = g.segment(next).unwrap().length_m * w.multiplier(g.segment(next).unwrap());
                    rec(g, next, dst, w, visited, cost + step, best);
                    visited.remove(&next);
                }
            }
        }
        let mut best = None;
        let mut visited = BTreeSet::from([src]);
        rec(g, src, dst, w, &mut visited, 0.0, &mut best);
        best
    }

    #[test]
    fn dijkstra_src_equals_dst() {
        let g = line_graph(3);
        let r = dijkstra(&g, 2, 2, &SoftWeights::default()).unwrap();
        assert_eq!(r, RouteResult::Path { rids: vec![2], cost: 0.0 });
    }

    #[test]
    fn dijkstra_line_graph() {
        let g = line_graph(3);
        let r = dijkstra(&g, 1, 3, &SoftWeights::default()).unwrap();
        assert_eq!(r.path().unwrap(), &[1, 2, 3]);
        // No way back on a directed chain.
        let r = dijkstra(&g, 3, 1, &SoftWeights::default()).unwrap();
        assert_eq!(r, RouteResult::Unreachable);
    }

    #[test]
    fn dijkstra_unknown_rid_errors() {
        let g = line_graph(2);
        assert!(matches!(
            dijkstra(&g, 1, 99, &SoftWeights::default()),
            Err(RoadnetError::UnknownRid(99))
        ));
    }

    #[test]
    fn dijkstra_matches_exhaustive_on_grids() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let w = SoftWeights::default();
        for trial in 0..30 {
            let g = grid_graph(5, &mut rng);
            let src = rng.gen_range(1..=25) as u64;
            let dst = rng.gen_range(1..=25) as u64;
            let got = dijkstra(&g, src, dst, &w).unwrap();
            let want = brute_force_cost(&g, src, dst, &w);
            match (got, want) {
                (RouteResult::Path { cost, .. }, Some(w)) => {
                    assert!((cost - w).abs() < 1e-9, "trial {trial}: {cost} vs {w}")
                }
                (RouteResult::Unreachable, None) => {}
                (got, want) => panic!("trial {trial}: {got:?} vs {want:?}"),
            }
        }
    }

    #[test]
    fn path_invariant_under_length_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = grid_graph(4, &mut rng);
        let w = SoftWeights::default();
        let base = dijkstra(&g, 1, 16, &w).unwrap();

        let scaled_rows: Vec<_> = g
            .segments()
            .map(|s| {
                let mut s = s.clone();
                s.length_m *= 7.5;
                let succ = g.successors(s.rid).to_vec();
                (s, succ)
            })
            .collect();
        let scaled = RoadGraph::build(scaled_rows).unwrap();
        let scaled_route = dijkstra(&scaled, 1, 16, &w).unwrap();
        assert_eq!(base.path(), scaled_route.path());
    }

    #[test]
    fn soft_weights_steer_routes() {
        // Two parallel rows; avoiding the short row's cell pushes the route
        // through the long way only if the multiplier outweighs the detour.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g = grid_graph(3, &mut rng);
        let mut w = SoftWeights::default();
        let mid = g.segment(5).unwrap();
        let cell = geo::cell_of(mid.midpoint(), &w.hex).unwrap();
        w.avoid_cells.insert(cell);
        w.mu_avoid = 1.0;
        let neutral = dijkstra(&g, 1, 9, &SoftWeights::default()).unwrap();
        let soft = dijkstra(&g, 1, 9, &w).unwrap();
        // mu_avoid = 1.0 is a no-op multiplier.
        assert_eq!(neutral.path(), soft.path());

        // Raising the avoid multiplier never lowers the cost of the
        // originally returned path when re-evaluated.
        let eval = |path: &[u64], w: &SoftWeights| -> f64 {
            path[1..]
                .iter()
                .map(|&r| {
                    let s = g.segment(r).unwrap();
                    s.length_m * w.multiplier(s)
                })
                .sum()
        };
        let p = neutral.path().unwrap();
        w.mu_avoid = 1.5;
        let c1 = eval(p, &w);
        w.mu_avoid = 3.0;
        let c2 = eval(p, &w);
        assert!(c2 >= c1);
    }

    #[test]
    fn chain_single_waypoint() {
        let g = line_graph(3);
        let r = chain_dijkstra(&g, &[2], &SoftWeights::default()).unwrap();
        assert_eq!(r.rids, vec![2]);
        assert_eq!(r.cost, 0.0);
        assert!(r.dropped_waypoints.is_empty());
    }

    #[test]
    fn chain_two_waypoints_reduces_to_dijkstra() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let g = grid_graph(4, &mut rng);
        let w = SoftWeights::default();
        let chain = chain_dijkstra(&g, &[3, 14], &w).unwrap();
        let single = dijkstra(&g, 3, 14, &w).unwrap();
        assert_eq!(chain.rids.as_slice(), single.path().unwrap());
        assert!((chain.cost - single.cost().unwrap()).abs() < 1e-12);
    }

    #[test]
    fn chain_cost_is_sum_of_leg_optima() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..10 {
            let g = grid_graph(4, &mut rng);
            let w = SoftWeights::default();
            let wps = [1u64, 11, 6];
            let chain = chain_dijkstra(&g, &wps, &w).unwrap();
            let mut want = 0.0;
            for leg in wps.windows(2) {
                want += brute_force_cost(&g, leg[0], leg[1], &w).unwrap();
            }
            assert!((chain.cost - want).abs() < 1e-9);
            // All waypoints visited in order.
            let mut pos = 0;
            for wp in wps {
                let found = chain.rids[pos..].iter().position(|&r| r == wp).unwrap();
                pos += found;
            }
        }
    }

    #[test]
    fn chain_drops_unreachable_waypoint() {
        // Directed chain 1 -> 2 -> 3 plus isolated 9.
        let mut rows = chain_segments(3, 1);
        let iso_start = GeoPoint::new(0.01, 0.0).unwrap();
        let iso_end = GeoPoint::new(0.01, 0.001).unwrap();
        rows.push((
            RoadSegment {
                rid: 9,
                start: iso_start,
                end: iso_end,
                name: None,
                length_m: 111.0,
                road_class: "service".into(),
                bearing: 90.0,
            },
            vec![],
        ));
        let g = RoadGraph::build(rows).unwrap();
        let r = chain_dijkstra(&g, &[1, 9, 3], &SoftWeights::default()).unwrap();
        assert_eq!(r.rids, vec![1, 2, 3]);
        assert_eq!(r.dropped_waypoints, vec![9]);
    }

    #[test]
    fn hop_distance_basics() {
        let g = line_graph(4);
        assert_eq!(hop_distance(&g, 2, 2, 5).unwrap(), HopDistance::Hops(0));
        assert_eq!(hop_distance(&g, 1, 2, 5).unwrap(), HopDistance::Hops(1));
        // Undirected view: reachable against edge direction too.
        assert_eq!(hop_distance(&g, 4, 1, 5).unwrap(), HopDistance::Hops(3));
        assert_eq!(hop_distance(&g, 1, 4, 2).unwrap(), HopDistance::Beyond);
    }

    /// All-pairs unweighted distances on the undirected view.
    fn floyd_warshall(g: &RoadGraph) -> BTreeMap<(u64, u64), u32> {
        let ids: Vec<u64> = g.rids().collect();
        let inf = u32::MAX / 4;
        let mut d: BTreeMap<(u64, u64), u32> =
            ids.iter().flat_map(|&a| ids.iter().map(move |&b| ((a, b), inf))).collect();
        for &a in &ids {
            d.insert((a, a), 0);
            for &b in g.successors(a) {
                d.insert((a, b), 1);
                d.insert((b, a), 1);
            }
        }
        for &k in &ids {
            for &i in &ids {
                for &j in &ids {
                    let alt = d[&(i, k)].saturating_add(d[&(k, j)]);
                    if alt < d[&(i, j)] {
                        d.insert((i, j), alt);
                    }
                }
            }
        }
        d
    }

    #[test]
    fn hop_distance_matches_all_pairs_and_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let g = grid_graph(4, &mut rng);
        let fw = floyd_warshall(&g);
        let ids: Vec<u64> = g.rids().collect();
        for &a in &ids {
            for &b in &ids {
                let want = fw[&(a, b)];
                let got = hop_distance(&g, a, b, 40).unwrap();
                match got {
                    HopDistance::Hops(h) => assert_eq!(h, want, "{a}->{b}"),
                    HopDistance::Beyond => assert!(want > 40),
                }
                assert_eq!(got, hop_distance(&g, b, a, 40).unwrap());
            }
        }
    }

    #[test]
    fn load_rejects_dangling_and_reports_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.jsonl");
        std::fs::write(
            &path,
            concat!(
                r#"{"rid":1,"start_lat":0.0,"start_lon":0.0,"end_lat":0.0,"end_lon":0.001,"name":"A","road_class":"residential","successors":[2]}"#,
                "\n",
                r#"{"rid":2,"start_lat":0.0,"start_lon":0.001,"end_lat":0.0,"end_lon":0.002,"name":null,"road_class":"residential","successors":[99]}"#,
                "\n"
            ),
        )
        .unwrap();
        match load_roadnet(&path) {
            Err(RoadnetError::DanglingRids(rids)) => assert_eq!(rids, vec![99]),
            other => panic!("expected dangling error, got {other:?}"),
        }

        std::fs::write(&path, "{not json}\n").unwrap();
        match load_roadnet(&path) {
            Err(RoadnetError::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn load_simple_chain() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.jsonl");
        std::fs::write(
            &path,
            concat!(
                r#"{"rid":1,"start_lat":0.0,"start_lon":0.0,"end_lat":0.0,"end_lon":0.001,"name":"A","road_class":"residential","successors":[2]}"#,
                "\n",
                r#"{"rid":2,"start_lat":0.0,"start_lon":0.001,"end_lat":0.0,"end_lon":0.002,"name":null,"road_class":"residential","successors":[]}"#,
                "\n"
            ),
        )
        .unwrap();
        let g = load_roadnet(&path).unwrap();
        assert_eq!(g.successors(1), &[2]);
        assert_eq!(g.successors(2), &[] as &[u64]);
    }

    #[test]
    fn save_load_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let g = grid_graph(4, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.jsonl");
        save_roadnet(&g, &path).unwrap();
        let loaded = load_roadnet(&path).unwrap();
        assert_eq!(g, loaded);
    }
}
