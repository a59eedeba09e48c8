//! Street-imagery client: HTTP fetching with a local byte cache, a tiered
//! cost ledger, and a fixture mode that works fully offline.
//!
//! Every request is keyed by its rounded parameters; repeated requests are
//! byte-identical cache hits and cost nothing. The fixture directory mirrors
//! the cache layout, so recorded surveys replay without any network.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use thiserror::Error;

use crate::plan::BatchRow;
use crate::GeoPoint;
use crate::Heading;

#[derive(Debug, Error)]
pub enum ImageryError {
    #[error("no API key configured for network mode")]
    MissingApiKey,
    #[error("request invalid: {0}")]
    InvalidRequest(String),
    #[error("fixture has no image for key {0}")]
    FixtureMiss(String),
    #[error("http: {0}")]
    Http(TransportError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Error)]
#[error("{message}{}", retry_after_s.map(|s| format!(" (retry after {s}s)")).unwrap_or_default())]
pub struct TransportError {
    pub message: String,
    pub status: Option<u16>,
    pub retry_after_s: Option<u64>,
}

/// One image request. The provider caps size at 640x640.
#[derive(Debug, Clone)]
pub struct ImageRequest {
    pub point: GeoPoint,
    pub heading: Heading,
    pub fov_deg: f64,
    pub pitch_deg: f64,
    pub width: u32,
    pub height: u32,
}

pub const MAX_IMAGE_DIM: u32 = 640;

impl ImageRequest {
    pub fn from_batch_row(row: &BatchRow, width: u32, height: u32) -> Self {
        Self {
            point: row.point,
            heading: row.heading,
            fov_deg: row.fov_deg,
            pitch_deg: row.pitch_deg,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<(), ImageryError> {
        if self.width == 0 || self.height == 0 || self.width > MAX_IMAGE_DIM || self.height > MAX_IMAGE_DIM
        {
            return Err(ImageryError::InvalidRequest(format!(
                "size {}x{} outside 1..={MAX_IMAGE_DIM}",
                self.width, self.height
            )));
        }
        if !self.point.is_valid() {
            return Err(ImageryError::InvalidRequest(format!(
                "point {:?} out of range",
                self.point
            )));
        }
        Ok(())
    }

    /// Injective over (lat to 7 dp, lon to 7 dp, heading to 1 dp, fov,
    /// pitch, size); doubles as the cache file name. The heading's north
    /// seam is folded so 359.97 and 0.02 degrees share a key.
    pub fn cache_key(&self) -> String {
        format!(
            "{:+.7}_{:+.7}_h{:.1}_f{:.0}_p{:+.0}_{}x{}",
            self.point.lat,
            self.point.lon,
            self.heading.canonical_1dp(),
            self.fov_deg,
            self.pitch_deg,
            self.width,
            self.height
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Cache,
    Network,
    Fixture,
}

#[derive(Debug)]
pub struct FetchResult {
    pub bytes: Vec<u8>,
    pub provenance: Provenance,
}

/// Per-1000-image price tiers; `up_to` is a cumulative request count, and the
/// last tier's rate extends beyond its bound.
#[derive(Debug, Clone)]
pub struct PriceTier {
    pub up_to: u64,
    pub usd_per_1000: f64,
}

#[derive(Debug, Clone)]
pub struct CostLedger {
    pub requests_sent: u64,
    pub requests_cached: u64,
    pub requests_fixture: u64,
    pub tiers: Vec<PriceTier>,
}

impl Default for CostLedger {
    fn default() -> Self {
        Self {
            requests_sent: 0,
            requests_cached: 0,
            requests_fixture: 0,
            tiers: vec![
                PriceTier {
                    up_to: 100_000,
                    usd_per_1000: 7.00,
                },
                PriceTier {
                    up_to: 500_000,
                    usd_per_1000: 5.60,
                },
            ],
        }
    }
}

impl CostLedger {
    pub fn estimated_cost_usd(&self) -> f64 {
        self.cost_for(self.requests_sent)
    }

    /// Cost of `n` paid requests under the tier table.
    pub fn cost_for(&self, n: u64) -> f64 {
        let mut remaining = n;
        let mut cost = 0.0;
        let mut prev_bound = 0u64;
        for (i, tier) in self.tiers.iter().enumerate() {
            let capacity = if i + 1 == self.tiers.len() {
                remaining
            } else {
                (tier.up_to - prev_bound).min(remaining)
            };
            cost += capacity as f64 * tier.usd_per_1000 / 1000.0;
            remaining -= capacity;
            prev_bound = tier.up_to;
            if remaining == 0 {
                break;
            }
        }
        cost
    }
}

/// Abstracts the transport so offline and test paths provably never open a
/// connection.
pub trait Transport: Send + Sync {
    fn get(&self, url: &str) -> Result<Vec<u8>, TransportError>;
}

/// Blocking HTTP transport for network mode.
pub struct HttpTransport {
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new() -> Result<Self, ImageryError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(30))
            .build()
            .map_err(|e| {
                ImageryError::Http(TransportError {
                    message: e.to_string(),
                    status: None,
                    retry_after_s: None,
                })
            })?;
        Ok(Self { client })
    }
}

impl Transport for HttpTransport {
    fn get(&self, url: &str) -> Result<Vec<u8>, TransportError> {
        let response = self.client.get(url).send().map_err(|e| TransportError {
            message: e.to_string(),
            status: None,
            retry_after_s: None,
        })?;
        let status = response.status();
        if !status.is_success() {
            let retry_after_s = response
                .headers()
                .get("retry-after")
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.parse().ok());
            return Err(TransportError {
                message: format!("request failed with status {status}"),
                status: Some(status.as_u16()),
                retry_after_s,
            });
        }
        response
            .bytes()
            .map(|b| b.to_vec())
            .map_err(|e| TransportError {
                message: e.to_string(),
                status: Some(status.as_u16()),
                retry_after_s: None,
            })
    }
}

/// API key holder that never renders the secret.
#[derive(Clone)]
pub struct ApiKey(String);

impl ApiKey {
    pub fn new(key: impl Into<String>) -> Self {
        Self(key.into())
    }

    /// Reads the key from a file (the `apikey.txt` convention). With no
    /// explicit path, `LANESURVEY_API_KEY_FILE` names the file, or
    /// `LANESURVEY_API_KEY` carries the key itself.
    pub fn load(path: Option<&Path>) -> Result<Self, ImageryError> {
        let from_file = |path: &Path| -> Result<Self, ImageryError> {
            let text = fs::read_to_string(path)?;
            let key = text.trim();
            if key.is_empty() {
                return Err(ImageryError::MissingApiKey);
            }
            Ok(Self(key.to_string()))
        };
        if let Some(path) = path {
            return from_file(path);
        }
        if let Ok(path) = std::env::var("LANESURVEY_API_KEY_FILE") {
            return from_file(Path::new(&path));
        }
        match std::env::var("LANESURVEY_API_KEY") {
            Ok(key) if !key.trim().is_empty() => Ok(Self(key.trim().to_string())),
            _ => Err(ImageryError::MissingApiKey),
        }
    }

    fn expose(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for ApiKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ApiKey(****)")
    }
}

enum Mode {
    Network {
        endpoint: String,
        key: ApiKey,
        transport: Box<dyn Transport>,
    },
    Offline {
        fixture_dir: PathBuf,
    },
}

pub struct ImageryClient {
    mode: Mode,
    cache_dir: PathBuf,
    ledger: Mutex<CostLedger>,
    pub concurrency: usize,
}

#[derive(Debug, Default)]
pub struct BatchReport {
    pub fetched_network: usize,
    pub fetched_fixture: usize,
    pub cached: usize,
    pub misses: Vec<(String, String)>,
    pub row_diagnostics: Vec<String>,
}

#[derive(Debug)]
pub struct DryRunReport {
    pub rows: usize,
    pub unique_requests: usize,
    pub already_cached: usize,
    pub planned_requests: usize,
    pub estimated_cost_usd: f64,
}

impl ImageryClient {
    pub fn offline(fixture_dir: impl Into<PathBuf>, cache_dir: impl Into<PathBuf>) -> Self {
        Self {
            mode: Mode::Offline {
                fixture_dir: fixture_dir.into(),
            },
            cache_dir: cache_dir.into(),
            ledger: Mutex::new(CostLedger::default()),
            concurrency: 4,
        }
    }

    pub fn network(
        endpoint: impl Into<String>,
        key: ApiKey,
        cache_dir: impl Into<PathBuf>,
    ) -> Result<Self, ImageryError> {
        Ok(Self::with_transport(
            endpoint,
            key,
            cache_dir,
            Box::new(HttpTransport::new()?),
        ))
    }

    /// Network-mode client with an injected transport; the test seam.
    pub fn with_transport(
        endpoint: impl Into<String>,
        key: ApiKey,
        cache_dir: impl Into<PathBuf>,
        transport: Box<dyn Transport>,
    ) -> Self {
        Self {
            mode: Mode::Network {
                endpoint: endpoint.into(),
                key,
                transport,
            },
            cache_dir: cache_dir.into(),
            ledger: Mutex::new(CostLedger::default()),
            concurrency: 4,
        }
    }

    pub fn ledger(&self) -> CostLedger {
        self.ledger.lock().unwrap().clone()
    }

    pub fn cache_path(&self, req: &ImageRequest) -> PathBuf {
        self.cache_dir.join(format!("{}.jpg", req.cache_key()))
    }

    fn request_url(endpoint: &str, key: &ApiKey, req: &ImageRequest) -> String {
        format!(
            "{endpoint}?location={:.7},{:.7}&heading={:.1}&fov={:.0}&pitch={:.0}&size={}x{}&key={}",
            req.point.lat,
            req.point.lon,
            req.heading.canonical_1dp(),
            req.fov_deg,
            req.pitch_deg,
            req.width,
            req.height,
            key.expose()
        )
    }

    /// Fetches one image: cache first, then fixture or network. Results are
    /// byte-identical on repeat calls.
    pub fn fetch(&self, req: &ImageRequest) -> Result<FetchResult, ImageryError> {
        req.validate()?;
        let cache_path = self.cache_path(req);
        if cache_path.exists() {
            let bytes = fs::read(&cache_path)?;
            self.ledger.lock().unwrap().requests_cached += 1;
            return Ok(FetchResult {
                bytes,
                provenance: Provenance::Cache,
            });
        }
        match &self.mode {
            Mode::Offline { fixture_dir } => {
                let fixture = fixture_dir.join(format!("{}.jpg", req.cache_key()));
                if !fixture.exists() {
                    return Err(ImageryError::FixtureMiss(req.cache_key()));
                }
                let bytes = fs::read(&fixture)?;
                self.store(&cache_path, &bytes)?;
                self.ledger.lock().unwrap().requests_fixture += 1;
                Ok(FetchResult {
                    bytes,
                    provenance: Provenance::Fixture,
                })
            }
            Mode::Network {
                endpoint,
                key,
                transport,
            } => {
                let url = Self::request_url(endpoint, key, req);
                let bytes = transport.get(&url).map_err(ImageryError::Http)?;
                self.store(&cache_path, &bytes)?;
                self.ledger.lock().unwrap().requests_sent += 1;
                Ok(FetchResult {
                    bytes,
                    provenance: Provenance::Network,
                })
            }
        }
    }

    fn store(&self, path: &Path, bytes: &[u8]) -> Result<(), ImageryError> {
        fs::create_dir_all(&self.cache_dir)?;
        // Write-then-rename keeps concurrent writers per key safe.
        let tmp = path.with_extension("part");
        fs::write(&tmp, bytes)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    /// Counts and prices a batch without fetching anything.
    pub fn dry_run(&self, rows: &[BatchRow], width: u32, height: u32) -> DryRunReport {
        let mut unique: HashSet<String> = HashSet::new();
        let mut cached = 0usize;
        for row in rows {
            let req = ImageRequest::from_batch_row(row, width, height);
            if unique.insert(req.cache_key()) && self.cache_path(&req).exists() {
                cached += 1;
            }
        }
        let planned = unique.len() - cached;
        let ledger = self.ledger.lock().unwrap();
        DryRunReport {
            rows: rows.len(),
            unique_requests: unique.len(),
            already_cached: cached,
            planned_requests: planned,
            estimated_cost_usd: ledger.cost_for(planned as u64),
        }
    }

    /// Resolves every batch row to an image or an explicit miss entry.
    /// Duplicate keys are fetched once; a bounded pool of worker threads
    /// shares the remainder.
    pub fn fetch_batch(&self, rows: &[BatchRow], width: u32, height: u32) -> BatchReport {
        let mut report = BatchReport::default();
        let mut seen: HashSet<String> = HashSet::new();
        let mut work: Vec<ImageRequest> = Vec::new();
        for row in rows {
            let req = ImageRequest::from_batch_row(row, width, height);
            if seen.insert(req.cache_key()) {
                work.push(req);
            }
        }

        let workers = self.concurrency.max(1).min(work.len().max(1));
        let next = std::sync::atomic::AtomicUsize::new(0);
        let results: Mutex<Vec<(String, Result<Provenance, String>)>> = Mutex::new(Vec::new());
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                    if i >= work.len() {
                        break;
                    }
                    let req = &work[i];
                    let outcome = self
                        .fetch(req)
                        .map(|r| r.provenance)
                        .map_err(|e| e.to_string());
                    results.lock().unwrap().push((req.cache_key(), outcome));
                });
            }
        });

        for (key, outcome) in results.into_inner().unwrap() {
            match outcome {
                Ok(Provenance::Cache) => report.cached += 1,
                Ok(Provenance::Network) => report.fetched_network += 1,
                Ok(Provenance::Fixture) => report.fetched_fixture += 1,
                Err(message) => report.misses.push((key, message)),
            }
        }
        report
    }
}
