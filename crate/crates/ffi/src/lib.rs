//! C ABI for the trajectory toolkit: stateless geodesic, hex-grid,
//! trajectory-similarity, and text-metric kernels, plus an opaque road
//! graph handle with shortest-path search. Every fallible call returns a
//! [`TpStatus`] and writes results through out pointers; all pointers must
//! be valid for the documented lengths.
//!
//! The header is generated into `include/trajprism.h` by the build script.

use std::ffi::{c_char, CStr};
use std::path::Path;
use std::ptr;

use trajprism::geo::{self, GeoPoint};
use trajprism::metrics::{self, text};
use trajprism::roadnet::{self, RoadGraph, RouteResult, SoftWeights};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TpStatus {
    Ok = 0,
    InvalidArgument = 1,
    ParseError = 2,
    Unreachable = 3,
    BufferTooSmall = 4,
    IoError = 5,
}

/// Opaque road-network handle. Create with [`tp_roadgraph_load`], release
/// with [`tp_roadgraph_free`].
pub struct TpRoadGraph {
    inner: RoadGraph,
}

const VERSION: &CStr = unsafe {
    CStr::from_bytes_with_nul_unchecked(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes())
};

/// Library version as a static NUL-terminated string. Never freed by the
/// caller.
#[no_mangle]
pub extern "C" fn tp_version() -> *const c_char {
    VERSION.as_ptr()
}

fn point(lat: f64, lon: f64) -> Option<GeoPoint> {
    GeoPoint::new(lat, lon).ok()
}

unsafe fn write_out(out: *mut f64, value: f64) -> TpStatus {
    if out.is_null() {
        return TpStatus::InvalidArgument;
    }
    *out = value;
    TpStatus::Ok
}

/// Great-circle distance between two points, kilometers.
///
/// # Safety
/// `out_km` must point to writable memory for one f64.
#[no_mangle]
pub unsafe extern "C" fn tp_haversine_km(
    lat1: f64,
    lon1: f64,
    lat2: f64,
    lon2: f64,
    out_km: *mut f64,
) -> TpStatus {
    let (Some(a), Some(b)) = (point(lat1, lon1), point(lat2, lon2)) else {
        return TpStatus::InvalidArgument;
    };
    match geo::haversine_km(a, b) {
        Ok(km) => write_out(out_km, km),
        Err(_) => TpStatus::InvalidArgument,
    }
}

/// Initial great-circle bearing from the first point to the second,
/// degrees in [0, 360).
///
/// # Safety
/// `out_deg` must point to writable memory for one f64.
#[no_mangle]
pub unsafe extern "C" fn tp_bearing_deg(
    lat1: f64,
    lon1: f64,
    lat2: f64,
    lon2: f64,
    out_deg: *mut f64,
) -> TpStatus {
    let (Some(a), Some(b)) = (point(lat1, lon1), point(lat2, lon2)) else {
        return TpStatus::InvalidArgument;
    };
    match geo::bearing_deg(a, b) {
        Ok(deg) => write_out(out_deg, deg),
        Err(_) => TpStatus::InvalidArgument,
    }
}

/// Eight-way compass sector of a bearing: 0=N, 1=NE, ... 7=NW.
#[no_mangle]
pub extern "C" fn tp_compass8(bearing_deg: f64) -> u8 {
    geo::Compass8::ALL
        .iter()
        .position(|c| *c == geo::compass8(bearing_deg))
        .unwrap_or(0) as u8
}

/// Static name of a compass sector index ("N" ... "NW"); NULL when the
/// index is out of range. Never freed by the caller.
#[no_mangle]
pub extern "C" fn tp_compass8_name(sector: u8) -> *const c_char {
    const NAMES: [&CStr; 8] = [c"N", c"NE", c"E", c"SE", c"S", c"SW", c"W", c"NW"];
    match NAMES.get(sector as usize) {
        Some(name) => name.as_ptr(),
        None => ptr::null(),
    }
}

/// Axial hex cell of a point on the grid defined by (origin, edge_m).
///
/// # Safety
/// `out_q` and `out_r` must each point to writable memory for one i32.
#[no_mangle]
pub unsafe extern "C" fn tp_cell_of(
    lat: f64,
    lon: f64,
    origin_lat: f64,
    origin_lon: f64,
    edge_m: f64,
    out_q: *mut i32,
    out_r: *mut i32,
) -> TpStatus {
    if out_q.is_null() || out_r.is_null() {
        return TpStatus::InvalidArgument;
    }
    let (Some(p), Some(origin)) = (point(lat, lon), point(origin_lat, origin_lon)) else {
        return TpStatus::InvalidArgument;
    };
    let Ok(cfg) = geo::HexConfig::new(origin, edge_m) else {
        return TpStatus::InvalidArgument;
    };
    match geo::cell_of(p, &cfg) {
        Ok(cell) => {
            *out_q = cell.q;
            *out_r = cell.r;
            TpStatus::Ok
        }
        Err(_) => TpStatus::InvalidArgument,
    }
}

/// The six axial neighbors of cell (q, r), written as q0,r0,q1,r1,... in
/// fixed order (E, NE, NW, W, SW, SE).
///
/// # Safety
/// `out_qr` must point to writable memory for 12 i32 values.
#[no_mangle]
pub unsafe extern "C" fn tp_cell_neighbors(q: i32, r: i32, out_qr: *mut i32) -> TpStatus {
    if out_qr.is_null() {
        return TpStatus::InvalidArgument;
    }
    for (i, n) in geo::cell_neighbors(geo::CellId::new(q, r)).iter().enumerate() {
        *out_qr.add(2 * i) = n.q;
        *out_qr.add(2 * i + 1) = n.r;
    }
    TpStatus::Ok
}

unsafe fn collect_points(lats: *const f64, lons: *const f64, len: usize) -> Option<Vec<GeoPoint>> {
    if lats.is_null() || lons.is_null() || len == 0 {
        return None;
    }
    let lats = std::slice::from_raw_parts(lats, len);
    let lons = std::slice::from_raw_parts(lons, len);
    lats.iter()
        .zip(lons)
        .map(|(&lat, &lon)| GeoPoint::new(lat, lon).ok())
        .collect()
}

/// Dynamic time warping distance between two coordinate sequences,
/// kilometers.
///
/// # Safety
/// Latitude/longitude arrays must hold `a_len` / `b_len` values; `out_km`
/// must point to writable memory for one f64.
#[no_mangle]
pub unsafe extern "C" fn tp_dtw_km(
    a_lats: *const f64,
    a_lons: *const f64,
    a_len: usize,
    b_lats: *const f64,
    b_lons: *const f64,
    b_len: usize,
    out_km: *mut f64,
) -> TpStatus {
    let (Some(a), Some(b)) = (
        collect_points(a_lats, a_lons, a_len),
        collect_points(b_lats, b_lons, b_len),
    ) else {
        return TpStatus::InvalidArgument;
    };
    match metrics::dtw_km(&a, &b) {
        Ok(km) => write_out(out_km, km),
        Err(_) => TpStatus::InvalidArgument,
    }
}

/// Symmetric Hausdorff distance between two coordinate sets, kilometers.
///
/// # Safety
/// Same contracts as [`tp_dtw_km`].
#[no_mangle]
pub unsafe extern "C" fn tp_hausdorff_km(
    a_lats: *const f64,
    a_lons: *const f64,
    a_len: usize,
    b_lats: *const f64,
    b_lons: *const f64,
    b_len: usize,
    out_km: *mut f64,
) -> TpStatus {
    let (Some(a), Some(b)) = (
        collect_points(a_lats, a_lons, a_len),
        collect_points(b_lats, b_lons, b_len),
    ) else {
        return TpStatus::InvalidArgument;
    };
    match metrics::hausdorff_km(&a, &b) {
        Ok(km) => write_out(out_km, km),
        Err(_) => TpStatus::InvalidArgument,
    }
}

/// Edit distance on real sequences under a spatial threshold, normalized
/// to [0, 1].
///
/// # Safety
/// Same contracts as [`tp_dtw_km`].
#[no_mangle]
pub unsafe extern "C" fn tp_edr(
    a_lats: *const f64,
    a_lons: *const f64,
    a_len: usize,
    b_lats: *const f64,
    b_lons: *const f64,
    b_len: usize,
    eps_km: f64,
    out: *mut f64,
) -> TpStatus {
    let (Some(a), Some(b)) = (
        collect_points(a_lats, a_lons, a_len),
        collect_points(b_lats, b_lons, b_len),
    ) else {
        return TpStatus::InvalidArgument;
    };
    match metrics::edr(&a, &b, eps_km) {
        Ok(v) => write_out(out, v),
        Err(_) => TpStatus::InvalidArgument,
    }
}

unsafe fn cstr<'a>(s: *const c_char) -> Option<&'a str> {
    if s.is_null() {
        return None;
    }
    CStr::from_ptr(s).to_str().ok()
}

/// ROUGE-L F score between two UTF-8 texts.
///
/// # Safety
/// `pred` and `reference` must be NUL-terminated UTF-8; `out` must point
/// to writable memory for one f64.
#[no_mangle]
pub unsafe extern "C" fn tp_rouge_l(
    pred: *const c_char,
    reference: *const c_char,
    out: *mut f64,
) -> TpStatus {
    let (Some(p), Some(r)) = (cstr(pred), cstr(reference)) else {
        return TpStatus::InvalidArgument;
    };
    write_out(out, text::rouge_l(p, r))
}

/// METEOR score (exact + stem unigram matching) between two UTF-8 texts.
///
/// # Safety
/// Same contracts as [`tp_rouge_l`].
#[no_mangle]
pub unsafe extern "C" fn tp_meteor(
    pred: *const c_char,
    reference: *const c_char,
    out: *mut f64,
) -> TpStatus {
    let (Some(p), Some(r)) = (cstr(pred), cstr(reference)) else {
        return TpStatus::InvalidArgument;
    };
    write_out(out, text::meteor(p, r))
}

/// Load a road network from a JSONL file into an opaque handle.
///
/// # Safety
/// `path` must be NUL-terminated UTF-8; `out` must point to writable
/// memory for one pointer. On success the caller owns the handle and must
/// release it with [`tp_roadgraph_free`].
#[no_mangle]
pub unsafe extern "C" fn tp_roadgraph_load(
    path: *const c_char,
    out: *mut *mut TpRoadGraph,
) -> TpStatus {
    if out.is_null() {
        return TpStatus::InvalidArgument;
    }
    let Some(path) = cstr(path) else {
        return TpStatus::InvalidArgument;
    };
    match roadnet::load_roadnet(Path::new(path)) {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(TpRoadGraph { inner }));
            TpStatus::Ok
        }
        Err(roadnet::RoadnetError::Io(_)) => TpStatus::IoError,
        Err(_) => TpStatus::ParseError,
    }
}

/// Release a road-graph handle. NULL is a no-op.
///
/// # Safety
/// `g` must be a pointer previously returned by [`tp_roadgraph_load`] and
/// not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tp_roadgraph_free(g: *mut TpRoadGraph) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// Number of segments in the graph; 0 for NULL.
///
/// # Safety
/// `g` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn tp_roadgraph_len(g: *const TpRoadGraph) -> usize {
    g.as_ref().map(|g| g.inner.len()).unwrap_or(0)
}

/// Shortest path between two segments with neutral weights. Writes up to
/// `cap` rids into `out_rids` and the full path length into `out_len`;
/// returns BufferTooSmall when the path exceeds `cap` (with `out_len` set
/// so the caller can retry), Unreachable when no path exists.
///
/// # Safety
/// `g` must be a live handle; `out_rids` must hold `cap` u64 slots;
/// `out_len` must point to writable memory for one usize.
#[no_mangle]
pub unsafe extern "C" fn tp_dijkstra(
    g: *const TpRoadGraph,
    src: u64,
    dst: u64,
    out_rids: *mut u64,
    cap: usize,
    out_len: *mut usize,
) -> TpStatus {
    let Some(graph) = g.as_ref() else {
        return TpStatus::InvalidArgument;
    };
    if out_len.is_null() || (out_rids.is_null() && cap > 0) {
        return TpStatus::InvalidArgument;
    }
    match roadnet::dijkstra(&graph.inner, src, dst, &SoftWeights::default()) {
        Ok(RouteResult::Path { rids, .. }) => {
            *out_len = rids.len();
            if rids.len() > cap {
                return TpStatus::BufferTooSmall;
            }
            for (i, rid) in rids.iter().enumerate() {
                *out_rids.add(i) = *rid;
            }
            TpStatus::Ok
        }
        Ok(RouteResult::Unreachable) => TpStatus::Unreachable,
        Err(_) => TpStatus::InvalidArgument,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CString;

    #[test]
    fn version_is_static() {
        let v = unsafe { CStr::from_ptr(tp_version()) };
        assert!(!v.to_str().unwrap().is_empty());
    }

    #[test]
    fn geodesic_kernels() {
        let mut km = 0.0f64;
        let st = unsafe { tp_haversine_km(0.0, 0.0, 0.0, 180.0, &mut km) };
        assert_eq!(st, TpStatus::Ok);
        assert!((km - std::f64::consts::PI * geo::EARTH_RADIUS_KM).abs() < 1e-9);
        let st = unsafe { tp_haversine_km(f64::NAN, 0.0, 0.0, 0.0, &mut km) };
        assert_eq!(st, TpStatus::InvalidArgument);

        let mut deg = 0.0f64;
        let st = unsafe { tp_bearing_deg(0.0, 0.0, 0.0, 1.0, &mut deg) };
        assert_eq!(st, TpStatus::Ok);
        assert!((deg - 90.0).abs() < 1e-9);

        assert_eq!(tp_compass8(200.0), 4);
        let name = unsafe { CStr::from_ptr(tp_compass8_name(4)) };
        assert_eq!(name.to_str().unwrap(), "S");
        assert!(tp_compass8_name(8).is_null());
    }

    #[test]
    fn hex_kernels() {
        let mut q = 0i32;
        let mut r = 0i32;
        let st = unsafe { tp_cell_of(0.0, 0.0, 0.0, 0.0, 174.0, &mut q, &mut r) };
        assert_eq!(st, TpStatus::Ok);
        assert_eq!((q, r), (0, 0));

        let mut qr = [0i32; 12];
        let st = unsafe { tp_cell_neighbors(0, 0, qr.as_mut_ptr()) };
        assert_eq!(st, TpStatus::Ok);
        assert_eq!(&qr[..4], &[1, 0, 1, -1]);
    }

    #[test]
    fn similarity_kernels() {
        let a_lat = [0.0f64, 0.0];
        let a_lon = [0.0f64, 0.01];
        let mut out = -1.0f64;
        let st = unsafe {
            tp_dtw_km(a_lat.as_ptr(), a_lon.as_ptr(), 2, a_lat.as_ptr(), a_lon.as_ptr(), 2, &mut out)
        };
        assert_eq!(st, TpStatus::Ok);
        assert_eq!(out, 0.0);

        let st = unsafe {
            tp_hausdorff_km(a_lat.as_ptr(), a_lon.as_ptr(), 2, a_lat.as_ptr(), a_lon.as_ptr(), 2, &mut out)
        };
        assert_eq!(st, TpStatus::Ok);
        assert_eq!(out, 0.0);

        let st = unsafe {
            tp_edr(a_lat.as_ptr(), a_lon.as_ptr(), 2, a_lat.as_ptr(), a_lon.as_ptr(), 2, 0.1, &mut out)
        };
        assert_eq!(st, TpStatus::Ok);
        assert_eq!(out, 0.0);
        // Invalid eps propagates as InvalidArgument.
        let st = unsafe {
            tp_edr(a_lat.as_ptr(), a_lon.as_ptr(), 2, a_lat.as_ptr(), a_lon.as_ptr(), 2, -1.0, &mut out)
        };
        assert_eq!(st, TpStatus::InvalidArgument);
    }

    #[test]
    fn text_kernels() {
        let pred = CString::new("the cat sat").unwrap();
        let reference = CString::new("the cat").unwrap();
        let mut out = 0.0f64;
        let st = unsafe { tp_rouge_l(pred.as_ptr(), reference.as_ptr(), &mut out) };
        assert_eq!(st, TpStatus::Ok);
        assert!((out - 0.8).abs() < 1e-12);

        let st = unsafe { tp_meteor(pred.as_ptr(), pred.as_ptr(), &mut out) };
        assert_eq!(st, TpStatus::Ok);
        assert_eq!(out, 1.0);

        let st = unsafe { tp_rouge_l(std::ptr::null(), reference.as_ptr(), &mut out) };
        assert_eq!(st, TpStatus::InvalidArgument);
    }

    #[test]
    fn roadgraph_handle_round_trip() {
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
        let cpath = CString::new(path.to_str().unwrap()).unwrap();
        let mut handle: *mut TpRoadGraph = std::ptr::null_mut();
        let st = unsafe { tp_roadgraph_load(cpath.as_ptr(), &mut handle) };
        assert_eq!(st, TpStatus::Ok);
        assert_eq!(unsafe { tp_roadgraph_len(handle) }, 2);

        let mut rids = [0u64; 8];
        let mut len = 0usize;
        let st = unsafe { tp_dijkstra(handle, 1, 2, rids.as_mut_ptr(), rids.len(), &mut len) };
        assert_eq!(st, TpStatus::Ok);
        assert_eq!(&rids[..len], &[1, 2]);

        // Too-small buffer reports the needed length.
        let mut tiny = [0u64; 1];
        let st = unsafe { tp_dijkstra(handle, 1, 2, tiny.as_mut_ptr(), 1, &mut len) };
        assert_eq!(st, TpStatus::BufferTooSmall);
        assert_eq!(len, 2);

        // Unreachable against edge direction.
        let st = unsafe { tp_dijkstra(handle, 2, 1, rids.as_mut_ptr(), rids.len(), &mut len) };
        assert_eq!(st, TpStatus::Unreachable);

        unsafe { tp_roadgraph_free(handle) };

        let missing = CString::new("/nonexistent/net.jsonl").unwrap();
        let st = unsafe { tp_roadgraph_load(missing.as_ptr(), &mut handle) };
        assert_eq!(st, TpStatus::IoError);
    }
}
