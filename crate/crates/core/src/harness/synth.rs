//! Synthetic mini-city generator: a named grid road network, a seeded cell
//! gazetteer, random-walk trajectories with plausible timestamps, and
//! template-generated annotations. Desk-scale stand-in for a real city
//! export; everything is a pure function of the seed.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CityBundle, CityConfig, HarnessError};
use crate::annotate::{
    build_prompt, default_assignment, generate, qc_punctuation, qc_terminology, AnnotationRecord,
    TemplateGenerator, TerminologyMap,
};
use crate::geo::{self, CellId, CellIndex, CellMeta, GeoPoint, HexConfig};
use crate::intent::{sample_persona_style, sample_profile, StylePools};
use crate::roadnet::{RoadGraph, RoadSegment};
use crate::traj::{compress, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub grid_n: usize,
    pub seed: u64,
    pub n_traj: usize,
    pub origin: GeoPoint,
    pub spacing_m: f64,
    pub edge_m: f64,
    pub traj_len_min: usize,
    pub traj_len_max: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            grid_n: 5,
            seed: 0,
            n_traj: 100,
            origin: GeoPoint { lat: 41.15, lon: -8.62 },
            spacing_m: 220.0,
            edge_m: 174.0,
            traj_len_min: 12,
            traj_len_max: 40,
        }
    }
}

const STREET_NAMES: [&str; 25] = [
    "Alder", "Birch", "Cedar", "Dunes", "Elm", "Fern", "Granite", "Harbor", "Iris", "Juniper",
    "Kestrel", "Larch", "Maple", "Nettle", "Oak", "Pine", "Quartz", "Rowan", "Spruce", "Tulip",
    "Umber", "Violet", "Willow", "Yarrow", "Zephyr",
];

const POI_ADJECTIVES: [&str; 10] = [
    "Blue", "Old", "Golden", "Little", "Grand", "Quiet", "Green", "Silver", "Corner", "Twin",
];
const POI_NOUNS: [&str; 10] = [
    "Heron Cafe", "Mill Bakery", "Anchor Inn", "Garden Market", "Bridge Tavern", "Stone Library",
    "Harbor Museum", "Oak Pharmacy", "Lantern Bistro", "Well Grocery",
];

const DISTRICTS: [&str; 5] = [
    "North Quarter", "Harbor District", "Old Town", "Garden District", "Mill End",
];

const GNN_TAGS: [&str; 4] = ["URBAN/INLAND", "WATERFRONT", "GREEN/PARK", "COASTAL/BEACH"];
const NATURAL: [&str; 6] = ["park", "tree", "garden", "water", "rock", "meadow"];
const COMMERCIAL: [&str; 5] = ["dining", "shopping", "services", "entertainment", "groceries"];
const FACILITIES: [&str; 6] = [
    "coffee shop", "art gallery", "supermarket", "restaurant", "bar", "clinic",
];

fn street_name(idx: usize, suffix: &str) -> String {
    if idx < STREET_NAMES.len() {
        format!("{} {}", STREET_NAMES[idx], suffix)
    } else {
        format!(
            "{} {} {}",
            STREET_NAMES[idx % STREET_NAMES.len()],
            idx / STREET_NAMES.len() + 1,
            suffix
        )
    }
}

/// Generate the road network: an n x n intersection grid with two directed
/// segments per edge, horizontal rows named as streets and vertical columns
/// as avenues. Successors exclude the direct reverse segment.
pub fn synth_roadnet(cfg: &SynthConfig) -> RoadGraph {
    let n = cfg.grid_n;
    let r_m = geo::EARTH_RADIUS_KM * 1000.0;
    let dlat = (cfg.spacing_m / r_m).to_degrees();
    let dlon = (cfg.spacing_m / (r_m * cfg.origin.lat.to_radians().cos())).to_degrees();
    let point = |row: usize, col: usize| GeoPoint {
        lat: cfg.origin.lat + row as f64 * dlat,
        lon: cfg.origin.lon + col as f64 * dlon,
    };
    let class_for = |row: usize, col: usize, horizontal: bool| -> &'static str {
        if horizontal && row == n / 2 {
            "primary"
        } else if !horizontal && col == n / 2 {
            "secondary"
        } else if (row + col).is_multiple_of(2) {
            "residential"
        } else {
            "tertiary"
        }
    };

    // Two directed rids per undirected edge, paired consecutively.
    struct Edge {
        rid: u64,
        from: (usize, usize),
        to: (usize, usize),
        name: String,
        class: &'static str,
    }
    let mut edges = Vec::new();
    let mut rid = 0u64;
    for row in 0..n {
        for col in 0..n.saturating_sub(1) {
            let name = street_name(row, "Street");
            let class = class_for(row, col, true);
            rid += 1;
            edges.push(Edge { rid, from: (row, col), to: (row, col + 1), name: name.clone(), class });
            rid += 1;
            edges.push(Edge { rid, from: (row, col + 1), to: (row, col), name, class });
        }
    }
    for col in 0..n {
        for row in 0..n.saturating_sub(1) {
            let name = street_name(col, "Avenue");
            let class = class_for(row, col, false);
            rid += 1;
            edges.push(Edge { rid, from: (row, col), to: (row + 1, col), name: name.clone(), class });
            rid += 1;
            edges.push(Edge { rid, from: (row + 1, col), to: (row, col), name, class });
        }
    }

    // Successors: segments leaving this segment's end intersection, minus
    // the exact reverse.
    let mut by_start: BTreeMap<(usize, usize), Vec<u64>> = BTreeMap::new();
    for e in &edges {
        by_start.entry(e.from).or_default().push(e.rid);
    }
    let rows = edges
        .iter()
        .map(|e| {
            let start = point(e.from.0, e.from.1);
            let end = point(e.to.0, e.to.1);
            let succ: Vec<u64> = by_start
                .get(&e.to)
                .map(|rids| {
                    rids.iter()
                        .copied()
                        .filter(|&s| {
                            let other = &edges[(s - 1) as usize];
                            other.to != e.from
                        })
                        .collect()
                })
                .unwrap_or_default();
            (
                RoadSegment {
                    rid: e.rid,
                    start,
                    end,
                    name: Some(e.name.clone()),
                    length_m: geo::haversine_km(start, end).unwrap() * 1000.0,
                    road_class: e.class.to_string(),
                    bearing: geo::bearing_deg(start, end).unwrap(),
                },
                succ,
            )
        })
        .collect();
    RoadGraph::build(rows).expect("synthetic grid is valid")
}

fn district_for(cfg: &SynthConfig, p: GeoPoint) -> &'static str {
    let r_m = geo::EARTH_RADIUS_KM * 1000.0;
    let extent = cfg.spacing_m * (cfg.grid_n - 1) as f64;
    let y = (p.lat - cfg.origin.lat).to_radians() * r_m / extent.max(1.0);
    let x = (p.lon - cfg.origin.lon).to_radians() * r_m * cfg.origin.lat.to_radians().cos()
        / extent.max(1.0);
    if (0.3..=0.7).contains(&x) && (0.3..=0.7).contains(&y) {
        DISTRICTS[2] // center
    } else if x < 0.5 && y >= 0.5 {
        DISTRICTS[0]
    } else if x >= 0.5 && y >= 0.5 {
        DISTRICTS[3]
    } else if x < 0.5 {
        DISTRICTS[1]
    } else {
        DISTRICTS[4]
    }
}

/// Build cell metadata for every cell the road network touches.
pub fn synth_cells(cfg: &SynthConfig, g: &RoadGraph, hex: &HexConfig) -> CellIndex {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xCE11);
    let mut roads_by_cell: BTreeMap<CellId, Vec<String>> = BTreeMap::new();
    for seg in g.segments() {
        let cell = crate::traj::dominant_cell(seg, hex).expect("grid within projection");
        if let Some(name) = &seg.name {
            let names = roads_by_cell.entry(cell).or_default();
            if !names.contains(name) {
                names.push(name.clone());
            }
        } else {
            roads_by_cell.entry(cell).or_default();
        }
    }
    let mut cells = CellIndex::new();
    let mut poi_cursor = 0usize;
    for (cell, road_names) in roads_by_cell {
        let n_pois = rng.gen_range(0..=2);
        let mut poi_names = Vec::new();
        for _ in 0..n_pois {
            let adj = POI_ADJECTIVES[poi_cursor % POI_ADJECTIVES.len()];
            let noun = POI_NOUNS[(poi_cursor / POI_ADJECTIVES.len()) % POI_NOUNS.len()];
            poi_names.push(format!("{adj} {noun}"));
            poi_cursor += 1;
        }
        let district = district_for(cfg, geo::cell_center(cell, hex));
        let tag = GNN_TAGS[rng.gen_range(0..GNN_TAGS.len())];
        let natural: Vec<&str> = (0..rng.gen_range(1..=3))
            .map(|_| NATURAL[rng.gen_range(0..NATURAL.len())])
            .collect();
        let commercial = COMMERCIAL[rng.gen_range(0..COMMERCIAL.len())];
        let facility = FACILITIES[rng.gen_range(0..FACILITIES.len())];
        let poi_part = if poi_names.is_empty() {
            String::new()
        } else {
            format!(" | POIs: {}", poi_names.join(", "))
        };
        let description = format!(
            "GNN: {tag} | Natural: {} | Commercial: {commercial} | Facilities: {facility} | District: {district}{poi_part}",
            natural.join(", "),
        );
        cells.insert(CellMeta::new(
            cell,
            description,
            poi_names,
            road_names,
            district.to_string(),
        ));
    }
    cells
}

/// Random-walk trajectories over the directed grid with plausible
/// timestamps.
pub fn synth_trajectories(cfg: &SynthConfig, g: &RoadGraph) -> Vec<Trajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7247);
    let rids: Vec<u64> = g.rids().collect();
    let mut out = Vec::with_capacity(cfg.n_traj);
    for i in 0..cfg.n_traj {
        let id = (i + 1) as u64;
        let len = rng.gen_range(cfg.traj_len_min..=cfg.traj_len_max);
        let mut cur = rids[rng.gen_range(0..rids.len())];
        let mut rid_list = vec![cur];
        while rid_list.len() < len {
            let succ = g.successors(cur);
            if succ.is_empty() {
                break;
            }
            cur = succ[rng.gen_range(0..succ.len())];
            rid_list.push(cur);
        }
        // Timestamps: seeded 2014 start, per-trip speed 20-50 km/h.
        let start = 1_388_534_400i64 + rng.gen_range(0..365 * 24 * 3600) as i64;
        let speed_ms = rng.gen_range(20.0..50.0) / 3.6;
        let mut time_list = Vec::with_capacity(rid_list.len());
        let mut t = start as f64;
        for &r in &rid_list {
            time_list.push(t.round() as i64);
            t += g.segment(r).unwrap().length_m / speed_ms;
        }
        out.push(Trajectory::new(id, rid_list, time_list).expect("synthetic walk is valid"));
    }
    out
}

/// Annotate every trajectory with the default template generator and run
/// the two sanitizer QC stages.
pub fn synth_annotations(
    cfg: &SynthConfig,
    g: &RoadGraph,
    cells: &CellIndex,
    hex: &HexConfig,
    trajectories: &[Trajectory],
) -> Result<Vec<AnnotationRecord>, HarnessError> {
    let pools = StylePools::default();
    let generator = TemplateGenerator;
    let terms = TerminologyMap::default();
    let mut out = Vec::with_capacity(trajectories.len());
    for t in trajectories {
        let ps = compress(t, g, cells, hex)?;
        let profile = sample_profile(cfg.seed, t.mm_id);
        let style = sample_persona_style(&pools, cfg.seed, t.mm_id)?;
        let assignment = default_assignment(cfg.seed, t.mm_id);
        let prompt = build_prompt(&ps, &profile, &style, &assignment)?;
        let rec = generate(&generator, &prompt, t.mm_id)?;
        out.push(qc_punctuation(&qc_terminology(&rec, &terms)));
    }
    Ok(out)
}

/// Generate a complete city bundle under `dir`.
pub fn synth_city(cfg: &SynthConfig, dir: &Path) -> Result<CityBundle, HarnessError> {
    assert!(cfg.grid_n >= 3, "grid must be at least 3x3");
    let hex = HexConfig::new(cfg.origin, cfg.edge_m)?;
    let bundle = CityBundle {
        dir: dir.to_path_buf(),
        config: CityConfig {
            name: format!("synth-{}x{}", cfg.grid_n, cfg.grid_n),
            hex,
            seed: cfg.seed,
        },
    };
    std::fs::create_dir_all(dir)?;
    let g = synth_roadnet(cfg);
    let cells = synth_cells(cfg, &g, &hex);
    let trajectories = synth_trajectories(cfg, &g);
    let annotations = synth_annotations(cfg, &g, &cells, &hex, &trajectories)?;

    crate::roadnet::save_roadnet(&g, &bundle.roadnet_path())?;
    cells.save(&bundle.cells_path())?;
    crate::traj::save_trajectories(&trajectories, &bundle.trajectories_path())?;
    super::write_jsonl(&bundle.annotations_path(), "trajprism.annotations", &annotations)?;
    bundle.save_config()?;
    Ok(bundle)
}
