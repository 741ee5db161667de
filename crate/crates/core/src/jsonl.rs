//! Versioned JSONL headers. Every persisted line-oriented file opens with
//! a `{"schema": "...", "version": N}` record; loaders accept files with or
//! without one so externally produced data keeps working.

use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub schema: String,
    pub version: u32,
}

/// Render the header line for a schema name.
pub fn header_line(schema: &str) -> String {
    serde_json::to_string(&Header {
        schema: schema.to_string(),
        version: SCHEMA_VERSION,
    })
    .expect("header serializes")
}

/// Recognize a header line. Returns the schema name when the line is a
/// header record, None when it is an ordinary data record.
pub fn parse_header(line: &str) -> Option<Header> {
    serde_json::from_str::<Header>(line.trim()).ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_round_trip_and_rejection() {
        let line = header_line("trajprism.roadnet");
        let parsed = parse_header(&line).unwrap();
        assert_eq!(parsed.schema, "trajprism.roadnet");
        assert_eq!(parsed.version, SCHEMA_VERSION);
        assert!(parse_header(r#"{"rid":1,"successors":[]}"#).is_none());
        assert!(parse_header("not json").is_none());
    }
}
