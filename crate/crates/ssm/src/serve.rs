//! Read-only inspection service over an immutable memory snapshot.
//!
//! * `GET /ssm` — canonical SSM text
//! * `GET /tracks/{id}` — one node with its notes and incident edges
//! * `GET /navlog` — the navigation log
//! * `GET /metrics` — the stored metrics report, or memory counts when the
//!   directory has none

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use ssm_core::canonical::Canon;
use ssm_core::{Ssm, TrackId};

use crate::{Error, Result};

/// Every response body, rendered once up front.
#[derive(Debug, Clone)]
pub struct Snapshot {
    ssm: String,
    tracks: BTreeMap<u32, String>,
    navlog: String,
    metrics: String,
}

fn counts(ssm: &Ssm) -> Result<String> {
    Ok(Canon::object()
        .field("scene_id", Canon::str(&ssm.episode().scene_id))
        .field("tracks", Canon::Int(ssm.graph().len() as i64))
        .field("edges", Canon::Int(ssm.graph().edges().len() as i64))
        .field("notes", Canon::Int(ssm.scratchpad().note_count() as i64))
        .field("frame_memory", Canon::Int(ssm.frame_memory().len() as i64))
        .field("navigation_log", Canon::Int(ssm.nav_log().len() as i64))
        .build()
        .to_text()?)
}

impl Snapshot {
    /// `metrics` is served verbatim when given.
    pub fn new(ssm: &Ssm, metrics: Option<String>) -> Result<Self> {
        let mut tracks = BTreeMap::new();
        for id in ssm.graph().track_ids() {
            if let Some(t) = ssm.track_json(id)? {
                tracks.insert(id.0, t);
            }
        }
        Ok(Snapshot {
            ssm: ssm.to_json()?,
            tracks,
            navlog: ssm.nav_log_json()?,
            metrics: match metrics {
                Some(m) => m,
                None => counts(ssm)?,
            },
        })
    }

    /// Status and JSON body for one request.
    pub fn route(&self, method: &str, url: &str) -> (u16, String) {
        let err = |code: u16, msg: &str| (code, Canon::object().field("error", Canon::str(msg)).build().to_text().unwrap_or_default());
        if method != "GET" {
            return err(405, "only GET is supported");
        }
        let path = url.split('?').next().unwrap_or("");
        match path.trim_end_matches('/') {
            "/ssm" => (200, self.ssm.clone()),
            "/navlog" => (200, self.navlog.clone()),
            "/metrics" => (200, self.metrics.clone()),
            p => match p.strip_prefix("/tracks/") {
                Some(id) => match id.parse::<u32>() {
                    Ok(id) => match self.tracks.get(&id) {
                        Some(body) => (200, body.clone()),
                        None => err(404, &format!("no track {}", TrackId(id))),
                    },
                    Err(_) => err(400, "track id must be a non-negative integer"),
                },
                None => err(404, "unknown endpoint"),
            },
        }
    }
}

pub struct Server {
    http: Arc<tiny_http::Server>,
    workers: std::sync::atomic::AtomicUsize,
    pub addr: SocketAddr,
}

impl Server {
    pub fn bind(addr: &str) -> Result<Server> {
        let http = tiny_http::Server::http(addr).map_err(|e| Error::format(addr, e.to_string()))?;
        let addr = http
            .server_addr()
            .to_ip()
            .ok_or_else(|| Error::format(addr, "not an IP listener"))?;
        Ok(Server {
            http: Arc::new(http),
            workers: Default::default(),
            addr,
        })
    }

    /// Serves on `workers` threads until [`Server::shutdown`].
    pub fn spawn(&self, snapshot: Arc<Snapshot>, workers: usize) -> Vec<JoinHandle<()>> {
        let workers = workers.max(1);
        self.workers.fetch_add(workers, std::sync::atomic::Ordering::SeqCst);
        (0..workers)
            .map(|_| {
                let http = Arc::clone(&self.http);
                let snap = Arc::clone(&snapshot);
                std::thread::spawn(move || {
                    for req in http.incoming_requests() {
                        let (code, body) = snap.route(req.method().as_str(), req.url());
                        let header = tiny_http::Header::from_bytes("Content-Type", "application/json").expect("static header");
                        let resp = tiny_http::Response::from_string(body).with_status_code(code).with_header(header);
                        if let Err(e) = req.respond(resp) {
                            log::warn!("response failed: {e}");
                        }
                    }
                })
            })
            .collect()
    }

    /// Wakes every worker so its loop ends.
    pub fn shutdown(&self) {
        for _ in 0..self.workers.swap(0, std::sync::atomic::Ordering::SeqCst) {
            self.http.unblock();
        }
    }
}
