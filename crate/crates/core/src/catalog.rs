//! Catalogue ingestion, filtering and persistence.
//!
//! The models consume a minimal catalogue: an origin timestamp, a magnitude
//! floor `m0`, an observation horizon `T` (days), a geographic selection box,
//! and the retained events as `(t, mag)` pairs with `t` in fractional days
//! from the first retained event.
//!
//! Sources:
//! * CSV exports in the FDSN event format (`time, latitude, longitude, mag`
//!   columns located by header name, extra columns ignored);
//! * the USGS FDSN web service (paginated download);
//! * a JSON snapshot produced by [`Catalog::save_json`], which embeds a
//!   SHA-256 content hash so downstream results can pin the exact data they
//!   were computed from.
//!
//! Simultaneous timestamps (whole-second resolution is common) are separated
//! by a 1e-7-day cascade so inter-event times are strictly positive, which
//! the likelihood and residual transforms require.

use std::fmt::Write as _;
use std::fs;
use std::io::Read;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::{Event, MAG_CEILING};

/// Minimum spacing enforced between consecutive event times, in days.
pub const TIE_SPACING: f64 = 1e-7;

/// Errors from catalogue construction and I/O.
#[derive(Debug, thiserror::Error)]
pub enum CatalogError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(String),
    #[error("missing required column '{0}'")]
    MissingColumn(String),
    #[error("row {row}: {message}")]
    BadRow { row: usize, message: String },
    #[error("no events remain after filtering")]
    Empty,
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("content hash mismatch: file says {stored}, recomputed {actual}")]
    HashMismatch { stored: String, actual: String },
    #[error("network error: {0}")]
    Network(String),
    #[error("service reported {expected} events but returned {got}")]
    PaginationInconsistency { expected: usize, got: usize },
}

/// Geographic selection box, degrees; bounds inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub min_lon: f64,
    pub max_lon: f64,
    pub min_lat: f64,
    pub max_lat: f64,
}

impl Region {
    pub fn contains(&self, lon: f64, lat: f64) -> bool {
        lon >= self.min_lon && lon <= self.max_lon && lat >= self.min_lat && lat <= self.max_lat
    }
}

/// Filter applied while reading raw rows.
#[derive(Debug, Clone)]
pub struct CatalogFilter {
    /// Magnitude floor; rows below it (or above the ceiling 10) are dropped.
    pub m0: f64,
    /// Optional selection box.
    pub region: Option<Region>,
    /// Optional closed time window.
    pub start: Option<DateTime<Utc>>,
    pub end: Option<DateTime<Utc>>,
}

/// A filtered catalogue ready for fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    /// UTC timestamp of the first retained event (RFC 3339).
    pub origin_utc: String,
    /// Magnitude floor used in filtering.
    pub m0: f64,
    /// Observation horizon in days from the origin (defaults to the last
    /// event's time).
    pub horizon_t: f64,
    /// Selection box the events were filtered with, if any.
    pub region: Option<Region>,
    /// Events in ascending time, `t` in days from `origin_utc`.
    pub events: Vec<Event>,
}

/// On-disk wrapper: catalogue plus its content hash.
#[derive(Serialize, Deserialize)]
struct CatalogFile {
    sha256: String,
    catalog: Catalog,
}

impl Catalog {
    /// Parse a CSV export (FDSN column names, extra columns ignored), apply
    /// the filter, and convert to fractional-day offsets.
    pub fn from_csv<R: Read>(reader: R, filter: &CatalogFilter) -> Result<Self, CatalogError> {
        let picked = parse_csv_rows(reader, filter)?;
        Self::from_timestamped(picked, filter)
    }

    /// Assemble a catalogue from already-parsed `(timestamp, magnitude)`
    /// pairs (sorted here; ties separated by [`TIE_SPACING`]).
    pub fn from_timestamped(
        mut picked: Vec<(DateTime<Utc>, f64)>,
        filter: &CatalogFilter,
    ) -> Result<Self, CatalogError> {
        if picked.is_empty() {
            return Err(CatalogError::Empty);
        }
        picked.sort_by_key(|(when, _)| *when);
        let origin = picked[0].0;
        let mut events = Vec::with_capacity(picked.len());
        let mut prev = f64::NEG_INFINITY;
        for (when, mag) in picked {
            let micros = (when - origin).num_microseconds().unwrap_or_else(|| {
                // > ~292k years; unreachable for earthquake catalogues
                (when - origin).num_milliseconds().saturating_mul(1000)
            });
            let mut t = micros as f64 / 86_400_000_000.0;
            if t <= prev {
                t = prev + TIE_SPACING;
            }
            prev = t;
            events.push(Event { t, mag });
        }
        let horizon_t = events.last().expect("non-empty").t;
        Ok(Catalog {
            origin_utc: origin.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            m0: filter.m0,
            horizon_t,
            region: filter.region,
            events,
        })
    }

    /// Number of events.
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// SHA-256 of the canonical JSON serialisation; pins the exact data
    /// behind downstream results.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("catalog serialises");
        let digest = Sha256::digest(json.as_bytes());
        let mut hex = String::with_capacity(64);
        for b in digest {
            let _ = write!(hex, "{b:02x}");
        }
        hex
    }

    /// Write the catalogue with its content hash.
    pub fn save_json(&self, path: &Path) -> Result<(), CatalogError> {
        let file = CatalogFile { sha256: self.content_hash(), catalog: self.clone() };
        let text = serde_json::to_string_pretty(&file)?;
        fs::write(path, text)?;
        Ok(())
    }

    /// Load a catalogue, verifying the embedded content hash.
    pub fn load_json(path: &Path) -> Result<Self, CatalogError> {
        let (catalog, stored) = Self::load_json_unchecked(path)?;
        let actual = catalog.content_hash();
        if stored != actual {
            return Err(CatalogError::HashMismatch { stored, actual });
        }
        Ok(catalog)
    }

    /// Load without failing on a hash mismatch; returns the stored hash so
    /// callers can warn.
    pub fn load_json_unchecked(path: &Path) -> Result<(Self, String), CatalogError> {
        let text = fs::read_to_string(path)?;
        let file: CatalogFile = serde_json::from_str(&text)?;
        Ok((file.catalog, file.sha256))
    }
}

/// Query for the USGS FDSN event service.
#[derive(Debug, Clone)]
pub struct UsgsQuery {
    /// ISO dates or datetimes understood by the service.
    pub start: String,
    pub end: String,
    pub m0: f64,
    pub region: Region,
}

impl UsgsQuery {
    fn params(&self) -> String {
        format!(
            "starttime={}&endtime={}&minmagnitude={}&minlongitude={}&maxlongitude={}\
             &minlatitude={}&maxlatitude={}",
            self.start,
            self.end,
            self.m0,
            self.region.min_lon,
            self.region.max_lon,
            self.region.min_lat,
            self.region.max_lat
        )
    }

    /// URL of the count endpoint for this query.
    pub fn count_url(&self, base: &str) -> String {
        format!("{base}/count?{}", self.params())
    }

    /// URL of one CSV page (`offset` is 1-based per the FDSN spec).
    pub fn page_url(&self, base: &str, offset: usize, limit: usize) -> String {
        format!(
            "{base}/query?format=csv&orderby=time-asc&offset={offset}&limit={limit}&{}",
            self.params()
        )
    }
}

/// Default FDSN base URL.
pub const USGS_BASE: &str = "https://earthquake.usgs.gov/fdsnws/event/1";

/// Page size for paginated downloads (the service caps at 20000).
const PAGE_LIMIT: usize = 20_000;

/// Download a catalogue from the USGS FDSN service, paginating as needed and
/// cross-checking the advertised event count.
pub fn fetch_usgs(query: &UsgsQuery) -> Result<Catalog, CatalogError> {
    fetch_usgs_from(query, USGS_BASE)
}

/// As [`fetch_usgs`] with an explicit base URL (tests point this at a local
/// server).
pub fn fetch_usgs_from(query: &UsgsQuery, base: &str) -> Result<Catalog, CatalogError> {
    let client = reqwest::blocking::Client::builder()
        .timeout(std::time::Duration::from_secs(300))
        .build()
        .map_err(|e| CatalogError::Network(e.to_string()))?;
    let get = |url: &str| -> Result<String, CatalogError> {
        let resp = client
            .get(url)
            .send()
            .map_err(|e| CatalogError::Network(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(CatalogError::Network(format!(
                "{url} returned {}",
                resp.status()
            )));
        }
        resp.text().map_err(|e| CatalogError::Network(e.to_string()))
    };

    let expected: usize = get(&query.count_url(base))?
        .trim()
        .parse()
        .map_err(|e| CatalogError::Network(format!("bad count response: {e}")))?;

    let filter = CatalogFilter {
        m0: query.m0,
        region: Some(query.region),
        start: None,
        end: None,
    };
    let mut rows: Vec<(DateTime<Utc>, f64)> = Vec::with_capacity(expected);
    let mut offset = 1usize;
    let mut fetched = 0usize;
    loop {
        let page = get(&query.page_url(base, offset, PAGE_LIMIT))?;
        let page_rows = parse_csv_rows(page.as_bytes(), &filter)?;
        let got = page_rows.len();
        rows.extend(page_rows);
        fetched += got;
        if got < PAGE_LIMIT {
            break;
        }
        offset += PAGE_LIMIT;
    }
    // The filter can only drop rows the service already excluded (same
    // bounds), so counts should match exactly; a mismatch means the feed
    // changed under us mid-download.
    if fetched != expected {
        return Err(CatalogError::PaginationInconsistency { expected, got: fetched });
    }
    Catalog::from_timestamped(rows, &filter)
}

/// Parse CSV text into filtered `(timestamp, magnitude)` rows.
fn parse_csv_rows<R: Read>(
    reader: R,
    filter: &CatalogFilter,
) -> Result<Vec<(DateTime<Utc>, f64)>, CatalogError> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| CatalogError::Csv(e.to_string()))?
        .clone();
    let col = |names: &[&str]| -> Option<usize> {
        headers
            .iter()
            .position(|h| names.iter().any(|n| h.eq_ignore_ascii_case(n)))
    };
    let time_col = col(&["time"]).ok_or_else(|| CatalogError::MissingColumn("time".into()))?;
    let lat_col =
        col(&["latitude", "lat"]).ok_or_else(|| CatalogError::MissingColumn("latitude".into()))?;
    let lon_col = col(&["longitude", "lon"])
        .ok_or_else(|| CatalogError::MissingColumn("longitude".into()))?;
    let mag_col =
        col(&["mag", "magnitude"]).ok_or_else(|| CatalogError::MissingColumn("mag".into()))?;

    let mut out = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let row = idx + 2;
        let record = record.map_err(|e| CatalogError::Csv(e.to_string()))?;
        let field = |c: usize| record.get(c).unwrap_or("");
        if [time_col, lat_col, lon_col, mag_col]
            .iter()
            .any(|&c| field(c).is_empty())
        {
            continue;
        }
        let when = DateTime::parse_from_rfc3339(field(time_col))
            .map_err(|e| CatalogError::BadRow {
                row,
                message: format!("bad time '{}': {e}", field(time_col)),
            })?
            .with_timezone(&Utc);
        let parse_num = |c: usize, what: &str| -> Result<f64, CatalogError> {
            field(c).parse::<f64>().map_err(|_| CatalogError::BadRow {
                row,
                message: format!("bad {what} '{}'", field(c)),
            })
        };
        let lat = parse_num(lat_col, "latitude")?;
        let lon = parse_num(lon_col, "longitude")?;
        let mag = parse_num(mag_col, "magnitude")?;
        if mag < filter.m0 || mag > MAG_CEILING {
            continue;
        }
        if let Some(r) = &filter.region {
            if !r.contains(lon, lat) {
                continue;
            }
        }
        if filter.start.is_some_and(|s| when < s) || filter.end.is_some_and(|e| when > e) {
            continue;
        }
        out.push((when, mag));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const CSV: &str = "\
time,latitude,longitude,depth,mag,magType
1998-01-13T08:30:36.000Z,17.0,-101.0,33.0,4.5,mb
1998-01-13T08:30:36.000Z,17.1,-101.2,20.0,4.1,mb
1998-02-01T00:00:00.000Z,16.5,-100.0,10.0,6.2,mw
1998-02-02T12:00:00.000Z,30.0,-100.0,10.0,5.0,mb
1998-02-03T00:00:00.000Z,16.0,-100.5,10.0,3.9,mb
1998-02-04T06:00:00.000Z,,  -100.0,10.0,5.5,mb
1998-02-05T06:00:00.000Z,16.2,-100.1,5.0,4.4,mb
";

    fn filter() -> CatalogFilter {
        CatalogFilter {
            m0: 4.0,
            region: Some(Region {
                min_lon: -106.0,
                max_lon: -95.0,
                min_lat: 15.0,
                max_lat: 21.0,
            }),
            start: None,
            end: None,
        }
    }

    #[test]
    fn csv_parsing_filters_and_converts() {
        let cat = Catalog::from_csv(CSV.as_bytes(), &filter()).unwrap();
        // Row 4 is outside the region, row 5 below m0, row 6 has a blank
        // latitude: 4 events remain.
        assert_eq!(cat.len(), 4);
        assert_eq!(cat.origin_utc, "1998-01-13T08:30:36Z");
        assert_eq!(cat.m0, 4.0);
        // Tied first two rows get cascade-separated.
        assert_eq!(cat.events[0].t, 0.0);
        assert_eq!(cat.events[1].t, TIE_SPACING);
        // Third event: 18 days 15.5 hours later.
        let want = 18.0 + (24.0 - 8.5) / 24.0 - 36.0 / 86_400.0;
        assert!((cat.events[2].t - want).abs() < 1e-9, "{} vs {want}", cat.events[2].t);
        assert_eq!(cat.horizon_t, cat.events.last().unwrap().t);
        // Events are in ascending time with strictly positive gaps.
        assert!(cat.events.windows(2).all(|w| w[1].t > w[0].t));
    }

    #[test]
    fn csv_respects_time_window() {
        let mut f = filter();
        f.end = Some("1998-02-01T00:00:00Z".parse().unwrap());
        let cat = Catalog::from_csv(CSV.as_bytes(), &f).unwrap();
        assert_eq!(cat.len(), 3);
    }

    #[test]
    fn missing_column_is_reported() {
        let bad = "time,latitude,depth\n1998-01-13T08:30:36Z,17.0,33.0\n";
        match Catalog::from_csv(bad.as_bytes(), &filter()) {
            Err(CatalogError::MissingColumn(c)) => assert_eq!(c, "longitude"),
            other => panic!("expected MissingColumn, got {other:?}"),
        }
    }

    #[test]
    fn bad_time_is_reported_with_row() {
        let bad = "time,latitude,longitude,mag\nnot-a-time,17.0,-100.0,5.0\n";
        match Catalog::from_csv(bad.as_bytes(), &filter()) {
            Err(CatalogError::BadRow { row, .. }) => assert_eq!(row, 2),
            other => panic!("expected BadRow, got {other:?}"),
        }
    }

    #[test]
    fn empty_after_filter_is_an_error() {
        let mut f = filter();
        f.m0 = 9.5;
        assert!(matches!(
            Catalog::from_csv(CSV.as_bytes(), &f),
            Err(CatalogError::Empty)
        ));
    }

    #[test]
    fn json_round_trip_verifies_hash() {
        let cat = Catalog::from_csv(CSV.as_bytes(), &filter()).unwrap();
        let dir = std::env::temp_dir().join("mdfhp-catalog-test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("cat.json");
        cat.save_json(&path).unwrap();
        let loaded = Catalog::load_json(&path).unwrap();
        assert_eq!(loaded, cat);

        // Tamper with the payload: the hash check must fail.
        let text = fs::read_to_string(&path).unwrap().replace("6.2", "6.3");
        fs::write(&path, text).unwrap();
        assert!(matches!(
            Catalog::load_json(&path),
            Err(CatalogError::HashMismatch { .. })
        ));
        let (tampered, stored) = Catalog::load_json_unchecked(&path).unwrap();
        assert_ne!(tampered.content_hash(), stored);
        fs::remove_file(&path).ok();
    }

    #[test]
    fn usgs_urls_are_well_formed() {
        let q = UsgsQuery {
            start: "1998-01-13".into(),
            end: "2014-06-20".into(),
            m0: 4.0,
            region: Region { min_lon: -106.0, max_lon: -95.0, min_lat: 15.0, max_lat: 21.0 },
        };
        let count = q.count_url(USGS_BASE);
        assert!(count.starts_with("https://earthquake.usgs.gov/fdsnws/event/1/count?"));
        assert!(count.contains("minmagnitude=4"));
        let page = q.page_url(USGS_BASE, 20_001, 20_000);
        assert!(page.contains("format=csv"));
        assert!(page.contains("offset=20001"));
        assert!(page.contains("orderby=time-asc"));
    }
}
