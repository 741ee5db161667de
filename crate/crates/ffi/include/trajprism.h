/* C ABI for the trajprism toolkit. Generated by cbindgen; do not edit. */

#ifndef TRAJPRISM_H
#define TRAJPRISM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every fallible function.
typedef enum TpStatus {
  TpStatus_Ok = 0,
  TpStatus_InvalidArgument = 1,
  TpStatus_ParseError = 2,
  TpStatus_Unreachable = 3,
  TpStatus_BufferTooSmall = 4,
  TpStatus_IoError = 5,
} TpStatus;

// Opaque road-network handle. Create with [`tp_roadgraph_load`], release
// with [`tp_roadgraph_free`].
typedef struct TpRoadGraph TpRoadGraph;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string. Never freed by the
// caller.
const char *tp_version(void);

// Great-circle distance between two points, kilometers.
//
// # Safety
// `out_km` must point to writable memory for one f64.
enum TpStatus tp_haversine_km(double lat1, double lon1, double lat2, double lon2, double *out_km);

// Initial great-circle bearing from the first point to the second,
// degrees in [0, 360).
//
// # Safety
// `out_deg` must point to writable memory for one f64.
enum TpStatus tp_bearing_deg(double lat1, double lon1, double lat2, double lon2, double *out_deg);

// Eight-way compass sector of a bearing: 0=N, 1=NE, ... 7=NW.
uint8_t tp_compass8(double bearing_deg);

// Static name of a compass sector index ("N" ... "NW"); NULL when the
// index is out of range. Never freed by the caller.
const char *tp_compass8_name(uint8_t sector);

// Axial hex cell of a point on the grid defined by (origin, edge_m).
//
// # Safety
// `out_q` and `out_r` must each point to writable memory for one i32.
enum TpStatus tp_cell_of(double lat,
                         double lon,
                         double origin_lat,
                         double origin_lon,
                         double edge_m,
                         int32_t *out_q,
                         int32_t *out_r);

// The six axial neighbors of cell (q, r), written as q0,r0,q1,r1,... in
// fixed order (E, NE, NW, W, SW, SE).
//
// # Safety
// `out_qr` must point to writable memory for 12 i32 values.
enum TpStatus tp_cell_neighbors(int32_t q, int32_t r, int32_t *out_qr);

// Dynamic time warping distance between two coordinate sequences,
// kilometers.
//
// # Safety
// Latitude/longitude arrays must hold `a_len` / `b_len` values; `out_km`
// must point to writable memory for one f64.
enum TpStatus tp_dtw_km(const double *a_lats,
                        const double *a_lons,
                        uintptr_t a_len,
                        const double *b_lats,
                        const double *b_lons,
                        uintptr_t b_len,
                        double *out_km);

// Symmetric Hausdorff distance between two coordinate sets, kilometers.
//
// # Safety
// Same contracts as [`tp_dtw_km`].
enum TpStatus tp_hausdorff_km(const double *a_lats,
                              const double *a_lons,
                              uintptr_t a_len,
                              const double *b_lats,
                              const double *b_lons,
                              uintptr_t b_len,
                              double *out_km);

// Edit distance on real sequences under a spatial threshold, normalized
// to [0, 1].
//
// # Safety
// Same contracts as [`tp_dtw_km`].
enum TpStatus tp_edr(const double *a_lats,
                     const double *a_lons,
                     uintptr_t a_len,
                     const double *b_lats,
                     const double *b_lons,
                     uintptr_t b_len,
                     double eps_km,
                     double *out);

// ROUGE-L F score between two UTF-8 texts.
//
// # Safety
// `pred` and `reference` must be NUL-terminated UTF-8; `out` must point
// to writable memory for one f64.
enum TpStatus tp_rouge_l(const char *pred, const char *reference, double *out);

// METEOR score (exact + stem unigram matching) between two UTF-8 texts.
//
// # Safety
// Same contracts as [`tp_rouge_l`].
enum TpStatus tp_meteor(const char *pred, const char *reference, double *out);

// Load a road network from a JSONL file into an opaque handle.
//
// # Safety
// `path` must be NUL-terminated UTF-8; `out` must point to writable
// memory for one pointer. On success the caller owns the handle and must
// release it with [`tp_roadgraph_free`].
enum TpStatus tp_roadgraph_load(const char *path, struct TpRoadGraph **out);

// Release a road-graph handle. NULL is a no-op.
//
// # Safety
// `g` must be a pointer previously returned by [`tp_roadgraph_load`] and
// not yet freed.
void tp_roadgraph_free(struct TpRoadGraph *g);

// Number of segments in the graph; 0 for NULL.
//
// # Safety
// `g` must be a live handle or NULL.
uintptr_t tp_roadgraph_len(const struct TpRoadGraph *g);

// Shortest path between two segments with neutral weights. Writes up to
// `cap` rids into `out_rids` and the full path length into `out_len`;
// returns BufferTooSmall when the path exceeds `cap` (with `out_len` set
// so the caller can retry), Unreachable when no path exists.
//
// # Safety
// `g` must be a live handle; `out_rids` must hold `cap` u64 slots;
// `out_len` must point to writable memory for one usize.
enum TpStatus tp_dijkstra(const struct TpRoadGraph *g,
                          uint64_t src,
                          uint64_t dst,
                          uint64_t *out_rids,
                          uintptr_t cap,
                          uintptr_t *out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TRAJPRISM_H */
