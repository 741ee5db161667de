//! Geodesic primitives and the axial hexagonal cell index.
//!
//! Every other module keys spatial identity on [`CellId`]: road segments map
//! to the cell of their midpoint, phases carry one cell each, and the
//! gazetteer hangs off [`CellMeta`]. The grid is a pointy-top axial hex
//! lattice laid over a local equirectangular projection about a per-city
//! origin, which preserves the only properties the pipeline needs from a
//! production hex index: partition, six-neighborhood, and determinism.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean Earth radius in kilometers, shared by every geodesic computation.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

/// Maximum distance from the projection origin for which cell assignment
/// is considered valid.
pub const PROJECTION_LIMIT_KM: f64 = 200.0;

#[derive(Debug, Error)]
pub enum GeoError {
    #[error("invalid coordinate: lat={lat} lon={lon}")]
    InvalidCoordinate { lat: f64, lon: f64 },
    #[error("degenerate bearing: points coincide")]
    DegenerateBearing,
    #[error("point {dist_km:.1} km from origin exceeds projection domain ({PROJECTION_LIMIT_KM} km)")]
    ProjectionDomain { dist_km: f64 },
    #[error("invalid hex edge length: {0}")]
    InvalidEdge(f64),
    #[error("cell metadata io: {0}")]
    Io(#[from] std::io::Error),
    #[error("cell metadata parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// A WGS84-style point: latitude/longitude in degrees, lon normalized into
/// [-180, 180).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeoError> {
        if !lat.is_finite() || !lon.is_finite() || !(-90.0..=90.0).contains(&lat) {
            return Err(GeoError::InvalidCoordinate { lat, lon });
        }
        Ok(GeoPoint {
            lat,
            lon: normalize_lon(lon),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.lat.is_finite() && self.lon.is_finite()
    }
}

/// Normalize a longitude into [-180, 180).
pub fn normalize_lon(lon: f64) -> f64 {
    let l = (lon + 180.0).rem_euclid(360.0) - 180.0;
    // rem_euclid can land exactly on 180.0 through rounding
    if l >= 180.0 {
        -180.0
    } else {
        l
    }
}

/// Great-circle distance in kilometers (haversine, atan2 form).
pub fn haversine_km(a: GeoPoint, b: GeoPoint) -> Result<f64, GeoError> {
    if !a.is_finite() {
        return Err(GeoError::InvalidCoordinate { lat: a.lat, lon: a.lon });
    }
    if !b.is_finite() {
        return Err(GeoError::InvalidCoordinate { lat: b.lat, lon: b.lon });
    }
    if a == b {
        return Ok(0.0);
    }
    let (lat1, lon1) = (a.lat.to_radians(), a.lon.to_radians());
    let (lat2, lon2) = (b.lat.to_radians(), b.lon.to_radians());
    let dlat = lat2 - lat1;
    let dlon = lon2 - lon1;
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    let central = 2.0 * h.sqrt().atan2((1.0 - h).sqrt());
    Ok(EARTH_RADIUS_KM * central)
}

/// Initial great-circle bearing from `a` to `b`, degrees in [0, 360).
pub fn bearing_deg(a: GeoPoint, b: GeoPoint) -> Result<f64, GeoError> {
    if !a.is_finite() {
        return Err(GeoError::InvalidCoordinate { lat: a.lat, lon: a.lon });
    }
    if !b.is_finite() {
        return Err(GeoError::InvalidCoordinate { lat: b.lat, lon: b.lon });
    }
    if a == b {
        return Err(GeoError::DegenerateBearing);
    }
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlon = (b.lon - a.lon).to_radians();
    let y = dlon.sin() * lat2.cos();
    let x = lat1.cos() * lat2.sin() - lat1.sin() * lat2.cos() * dlon.cos();
    Ok(y.atan2(x).to_degrees().rem_euclid(360.0))
}

/// Eight-way compass sector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Compass8 {
    N,
    NE,
    E,
    SE,
    S,
    SW,
    W,
    NW,
}

impl Compass8 {
    pub const ALL: [Compass8; 8] = [
        Compass8::N,
        Compass8::NE,
        Compass8::E,
        Compass8::SE,
        Compass8::S,
        Compass8::SW,
        Compass8::W,
        Compass8::NW,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Compass8::N => "N",
            Compass8::NE => "NE",
            Compass8::E => "E",
            Compass8::SE => "SE",
            Compass8::S => "S",
            Compass8::SW => "SW",
            Compass8::W => "W",
            Compass8::NW => "NW",
        }
    }

    /// Center bearing of this sector in degrees.
    pub fn center_deg(&self) -> f64 {
        (Compass8::ALL.iter().position(|c| c == self).unwrap() as f64) * 45.0
    }

    pub fn opposite(&self) -> Compass8 {
        let i = Compass8::ALL.iter().position(|c| c == self).unwrap();
        Compass8::ALL[(i + 4) % 8]
    }
}

impl fmt::Display for Compass8 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Discretize a bearing into the eight compass directions. Sectors are 45
/// degrees wide and centered on each compass point; a sector boundary is
/// assigned to the sector it opens, so N covers [337.5, 360) ∪ [0, 22.5).
pub fn compass8(bearing: f64) -> Compass8 {
    let b = bearing.rem_euclid(360.0);
    let idx = (((b + 22.5) / 45.0).floor() as usize) % 8;
    Compass8::ALL[idx]
}

/// Axial hex cell coordinate. Total order is lexicographic on (q, r) so
/// iteration over cell sets is deterministic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellId {
    pub q: i32,
    pub r: i32,
}

impl CellId {
    pub fn new(q: i32, r: i32) -> Self {
        CellId { q, r }
    }
}

impl fmt::Display for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.q, self.r)
    }
}

/// Axial neighbor offsets in fixed order: E, NE, NW, W, SW, SE.
const NEIGHBOR_OFFSETS: [(i32, i32); 6] = [(1, 0), (1, -1), (0, -1), (-1, 0), (-1, 1), (0, 1)];

/// The six axial neighbors of a cell, in fixed order (E, NE, NW, W, SW, SE).
pub fn cell_neighbors(c: CellId) -> [CellId; 6] {
    let mut out = [c; 6];
    for (i, (dq, dr)) in NEIGHBOR_OFFSETS.iter().enumerate() {
        out[i] = CellId::new(c.q + dq, c.r + dr);
    }
    out
}

/// Hex grid configuration: projection origin plus the cell edge length in
/// meters. The default edge of 174 m approximates resolution-9 cell scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HexConfig {
    pub origin: GeoPoint,
    pub edge_m: f64,
}

impl HexConfig {
    pub fn new(origin: GeoPoint, edge_m: f64) -> Result<Self, GeoError> {
        if !edge_m.is_finite() || edge_m <= 0.0 {
            return Err(GeoError::InvalidEdge(edge_m));
        }
        Ok(HexConfig { origin, edge_m })
    }
}

impl Default for HexConfig {
    fn default() -> Self {
        HexConfig {
            origin: GeoPoint { lat: 0.0, lon: 0.0 },
            edge_m: 174.0,
        }
    }
}

/// Project a point into local east/south meters about the config origin.
/// The second coordinate grows southward so axial r increases away from
/// north, matching the neighbor table above.
fn to_local_xy(p: GeoPoint, cfg: &HexConfig) -> Result<(f64, f64), GeoError> {
    let d = haversine_km(p, cfg.origin)?;
    if d > PROJECTION_LIMIT_KM {
        return Err(GeoError::ProjectionDomain { dist_km: d });
    }
    let r_m = EARTH_RADIUS_KM * 1000.0;
    let dlon = normalize_lon(p.lon - cfg.origin.lon).to_radians();
    let x = r_m * dlon * cfg.origin.lat.to_radians().cos();
    let y = -r_m * (p.lat - cfg.origin.lat).to_radians();
    Ok((x, y))
}

/// Center of a cell in local east/south meters.
fn cell_center_xy(c: CellId, cfg: &HexConfig) -> (f64, f64) {
    let sqrt3 = 3.0_f64.sqrt();
    let x = cfg.edge_m * sqrt3 * (c.q as f64 + c.r as f64 / 2.0);
    let y = cfg.edge_m * 1.5 * c.r as f64;
    (x, y)
}

/// Geographic center point of a cell.
pub fn cell_center(c: CellId, cfg: &HexConfig) -> GeoPoint {
    let (x, y) = cell_center_xy(c, cfg);
    let r_m = EARTH_RADIUS_KM * 1000.0;
    let lat = cfg.origin.lat - (y / r_m).to_degrees();
    let lon = cfg.origin.lon + (x / (r_m * cfg.origin.lat.to_radians().cos())).to_degrees();
    GeoPoint {
        lat,
        lon: normalize_lon(lon),
    }
}

/// Map a point to its hex cell: the nearest cell center under the local
/// projection, ties broken by smaller (q, r).
pub fn cell_of(p: GeoPoint, cfg: &HexConfig) -> Result<CellId, GeoError> {
    let (x, y) = to_local_xy(p, cfg)?;
    let sqrt3 = 3.0_f64.sqrt();
    let qf = (sqrt3 / 3.0 * x - y / 3.0) / cfg.edge_m;
    let rf = (2.0 / 3.0 * y) / cfg.edge_m;
    let rounded = cube_round(qf, rf);

    // Cube rounding lands in the containing hex; refine over its
    // neighborhood so exact-boundary ties resolve by (distance, q, r).
    let mut best = rounded;
    let mut best_d2 = dist2_to_center(x, y, rounded, cfg);
    for n in cell_neighbors(rounded) {
        let d2 = dist2_to_center(x, y, n, cfg);
        if d2 < best_d2 || (d2 == best_d2 && (n.q, n.r) < (best.q, best.r)) {
            best = n;
            best_d2 = d2;
        }
    }
    Ok(best)
}

fn dist2_to_center(x: f64, y: f64, c: CellId, cfg: &HexConfig) -> f64 {
    let (cx, cy) = cell_center_xy(c, cfg);
    (x - cx).powi(2) + (y - cy).powi(2)
}

fn cube_round(qf: f64, rf: f64) -> CellId {
    let sf = -qf - rf;
    let mut q = qf.round();
    let mut r = rf.round();
    let s = sf.round();
    let dq = (q - qf).abs();
    let dr = (r - rf).abs();
    let ds = (s - sf).abs();
    if dq > dr && dq > ds {
        q = -r - s;
    } else if dr > ds {
        r = -q - s;
    }
    CellId::new(q as i32, r as i32)
}

/// Canonical name normalization shared by grounding, QC, and POI recall:
/// lowercase, diacritics stripped, whitespace collapsed.
pub fn normalize_name(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match fold_char(ch) {
            Some(folded) => out.push_str(folded),
            None => out.extend(ch.to_lowercase()),
        }
    }
    out.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Strip diacritics from the Latin-1 Supplement / Latin Extended-A ranges.
/// Characters outside these ranges pass through unchanged.
fn fold_char(c: char) -> Option<&'static str> {
    match c {
        'À' | 'Á' | 'Â' | 'Ã' | 'Ä' | 'Å' | 'à' | 'á' | 'â' | 'ã' | 'ä' | 'å' | 'ā' | 'ă'
        | 'ą' | 'Ā' | 'Ă' | 'Ą' => Some("a"),
        'Ç' | 'ç' | 'ć' | 'č' | 'Ć' | 'Č' => Some("c"),
        'È' | 'É' | 'Ê' | 'Ë' | 'è' | 'é' | 'ê' | 'ë' | 'ē' | 'ĕ' | 'ė' | 'ę' | 'ě' | 'Ē'
        | 'Ę' | 'Ě' => Some("e"),
        'Ì' | 'Í' | 'Î' | 'Ï' | 'ì' | 'í' | 'î' | 'ï' | 'ī' | 'į' | 'ı' | 'Ī' | 'Į' => Some("i"),
        'Ñ' | 'ñ' | 'ń' | 'ň' | 'Ń' | 'Ň' => Some("n"),
        'Ò' | 'Ó' | 'Ô' | 'Õ' | 'Ö' | 'Ø' | 'ò' | 'ó' | 'ô' | 'õ' | 'ö' | 'ø' | 'ō' | 'ő'
        | 'Ō' | 'Ő' => Some("o"),
        'Ù' | 'Ú' | 'Û' | 'Ü' | 'ù' | 'ú' | 'û' | 'ü' | 'ū' | 'ů' | 'ű' | 'Ū' | 'Ů' | 'Ű' => Some("u"),
        'Ý' | 'ý' | 'ÿ' => Some("y"),
        'ß' => Some("ss"),
        'ś' | 'š' | 'Ś' | 'Š' => Some("s"),
        'ź' | 'ż' | 'ž' | 'Ź' | 'Ż' | 'Ž' => Some("z"),
        'Æ' | 'æ' => Some("ae"),
        'Œ' | 'œ' => Some("oe"),
        'Đ' | 'đ' => Some("d"),
        'Ł' | 'ł' => Some("l"),
        'Ť' | 'ť' => Some("t"),
        'Ř' | 'ř' => Some("r"),
        'Ğ' | 'ğ' => Some("g"),
        '\u{2019}' | '\u{2018}' => Some("'"),
        _ => None,
    }
}

/// Per-cell semantic metadata: area description, gazetteer names, district,
/// and the six axial neighbors. Names are stored normalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMeta {
    pub cell: CellId,
    pub description: String,
    pub poi_names: BTreeSet<String>,
    pub road_names: BTreeSet<String>,
    pub district: String,
    pub neighbors: [CellId; 6],
}

impl CellMeta {
    pub fn new(
        cell: CellId,
        description: String,
        poi_names: impl IntoIterator<Item = String>,
        road_names: impl IntoIterator<Item = String>,
        district: String,
    ) -> Self {
        CellMeta {
            cell,
            description,
            poi_names: poi_names.into_iter().map(|s| normalize_name(&s)).collect(),
            road_names: road_names.into_iter().map(|s| normalize_name(&s)).collect(),
            district,
            neighbors: cell_neighbors(cell),
        }
    }
}

/// Wire record for the cell metadata JSONL file.
#[derive(Debug, Serialize, Deserialize)]
struct CellMetaRecord {
    cell_q: i32,
    cell_r: i32,
    description: String,
    poi_names: Vec<String>,
    road_names: Vec<String>,
    district: String,
}

/// The city-level cell index: cell id → metadata, plus the global gazetteer
/// used for grounding and POI recall.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CellIndex {
    cells: BTreeMap<CellId, CellMeta>,
}

impl CellIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, meta: CellMeta) {
        self.cells.insert(meta.cell, meta);
    }

    pub fn get(&self, cell: &CellId) -> Option<&CellMeta> {
        self.cells.get(cell)
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&CellId, &CellMeta)> {
        self.cells.iter()
    }

    /// All normalized POI, road, and district names across the city.
    pub fn gazetteer(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for meta in self.cells.values() {
            out.extend(meta.poi_names.iter().cloned());
            out.extend(meta.road_names.iter().cloned());
            if !meta.district.is_empty() {
                out.insert(normalize_name(&meta.district));
            }
        }
        out
    }

    /// Normalized vocabulary attached to one cell.
    pub fn cell_vocabulary(&self, cell: &CellId) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        if let Some(meta) = self.cells.get(cell) {
            out.extend(meta.poi_names.iter().cloned());
            out.extend(meta.road_names.iter().cloned());
            if !meta.district.is_empty() {
                out.insert(normalize_name(&meta.district));
            }
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self, GeoError> {
        let file = std::fs::File::open(path)?;
        let reader = std::io::BufReader::new(file);
        let mut index = CellIndex::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
        if i == 0 && crate::jsonl::parse_header(&line).is_some() {
            continue;
        }
            let rec: CellMetaRecord =
                serde_json::from_str(&line).map_err(|e| GeoError::Parse {
                    line: i + 1,
                    msg: e.to_string(),
                })?;
            index.insert(CellMeta::new(
                CellId::new(rec.cell_q, rec.cell_r),
                rec.description,
                rec.poi_names,
                rec.road_names,
                rec.district,
            ));
        }
        Ok(index)
    }

    pub fn save(&self, path: &Path) -> Result<(), GeoError> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(crate::jsonl::header_line("trajprism.cells").as_bytes())?;
    file.write_all(b"\n")?;
        for meta in self.cells.values() {
            let rec = CellMetaRecord {
                cell_q: meta.cell.q,
                cell_r: meta.cell.r,
                description: meta.description.clone(),
                poi_names: meta.poi_names.iter().cloned().collect(),
                road_names: meta.road_names.iter().cloned().collect(),
                district: meta.district.clone(),
            };
            serde_json::to_writer(&mut file, &rec).map_err(|e| GeoError::Parse {
                line: 0,
                msg: e.to_string(),
            })?;
            file.write_all(b"\n")?;
        }
        file.flush()?;
        Ok(())
    }
}
