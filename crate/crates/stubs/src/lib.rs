//! Stub inpainting and detector services speaking the `/inpaint` and
//! `/detect` wire contracts, for tests and dry runs without any model.

use std::io::Cursor;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use image::{DynamicImage, Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::net::TcpListener;
use tokio::sync::oneshot;

#[derive(Debug, Clone, Deserialize)]
pub struct InpaintRequest {
    pub image: String,
    pub mask: String,
    pub prompt: String,
    pub sampler_name: String,
    pub steps: u32,
    pub denoising_strength: f64,
    pub inpainting_fill: bool,
    pub padding_mask_crop: u32,
    pub batch_size: u32,
    pub seed: u64,
}

#[derive(Debug, Clone, Deserialize)]
pub struct DetectRequest {
    pub image: String,
    pub prompt: String,
    pub score_floor: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Detection {
    pub bbox: [f64; 4],
    pub score: f64,
}

#[derive(Debug, Clone)]
pub enum InpaintMode {
    /// Returns the input image unchanged.
    Identity,
    /// Paints every mask pixel with one color.
    SolidFill([u8; 3]),
    /// Always answers with this status code.
    Status(u16),
    /// Answers the first `n` requests with `status`, then fills like
    /// `SolidFill`.
    FailFirst { n: usize, status: u16, color: [u8; 3] },
}

#[derive(Debug, Clone)]
pub enum DetectMode {
    /// Same detections for every request.
    Fixed(Vec<Detection>),
    Empty,
    /// A body that does not follow the response schema.
    Malformed,
    Status(u16),
    /// Finds the bounding box of pixels of exactly `target` color and reports
    /// it with a box offset and score derived from `seed` and the prompt, so
    /// stubs with different seeds behave like different models.
    Content { target: [u8; 3], seed: u64 },
}

struct Shared<M> {
    mode: M,
    hits: Arc<AtomicUsize>,
}

/// A running stub; dropping it stops the server.
pub struct StubServer {
    pub addr: SocketAddr,
    hits: Arc<AtomicUsize>,
    shutdown: Option<oneshot::Sender<()>>,
}

impl StubServer {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Requests received on the main endpoint so far.
    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }
}

fn decode_image(data: &str) -> Result<DynamicImage, String> {
    let payload = match data.find(";base64,") {
        Some(i) => &data[i + 8..],
        None => data,
    };
    let bytes = STANDARD.decode(payload).map_err(|e| e.to_string())?;
    image::load_from_memory(&bytes).map_err(|e| e.to_string())
}

fn encode_png(img: &RgbImage) -> String {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)
        .expect("encoding to memory");
    STANDARD.encode(buf.into_inner())
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

fn fill_mask(req: &InpaintRequest, color: Option<[u8; 3]>) -> Response {
    let image = match decode_image(&req.image) {
        Ok(i) => i.to_rgb8(),
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("image: {e}")),
    };
    let mask = match decode_image(&req.mask) {
        Ok(m) => m.to_luma8(),
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("mask: {e}")),
    };
    if image.dimensions() != mask.dimensions() {
        return error(StatusCode::BAD_REQUEST, "image and mask sizes differ");
    }
    let mut out = image;
    if let Some(c) = color {
        for (x, y, m) in mask.enumerate_pixels() {
            if m[0] > 127 {
                out.put_pixel(x, y, Rgb(c));
            }
        }
    }
    let encoded = encode_png(&out);
    let n = req.batch_size.max(1) as usize;
    Json(json!({
        "images": vec![encoded; n],
        "info": format!("stub seed={} prompt={}", req.seed, req.prompt),
    }))
    .into_response()
}

async fn inpaint(State(s): State<Arc<Shared<InpaintMode>>>, body: axum::body::Bytes) -> Response {
    let n = s.hits.fetch_add(1, Ordering::SeqCst);
    let req: InpaintRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.to_string()),
    };
    match &s.mode {
        InpaintMode::Identity => fill_mask(&req, None),
        InpaintMode::SolidFill(c) => fill_mask(&req, Some(*c)),
        InpaintMode::Status(code) => error(status(*code), "stub failure"),
        InpaintMode::FailFirst { n: fails, status: code, color } => {
            if n < *fails {
                error(status(*code), "stub failure")
            } else {
                fill_mask(&req, Some(*color))
            }
        }
    }
}

fn status(code: u16) -> StatusCode {
    StatusCode::from_u16(code).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR)
}

/// FNV-1a, enough to derive stable per-prompt jitter.
fn fnv(seed: u64, text: &str) -> u64 {
    let mut h = 0xcbf29ce484222325u64 ^ seed.wrapping_mul(0x100000001b3);
    for b in text.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Detection the content stub reports for a color region, or `None` when
/// the color is absent.
pub fn content_detection(img: &RgbImage, target: [u8; 3], seed: u64, prompt: &str) -> Option<Detection> {
    let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
    for (x, y, p) in img.enumerate_pixels() {
        if p.0 == target {
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x + 1);
            y1 = y1.max(y + 1);
        }
    }
    if x0 == u32::MAX {
        return None;
    }
    let h = fnv(seed, prompt);
    let (w, hgt) = ((x1 - x0) as f64, (y1 - y0) as f64);
    // box shifted by up to 30% of its size, score in [0.05, 0.95]
    let dx = ((h & 0xff) as f64 / 255.0 - 0.5) * 0.6 * w;
    let dy = (((h >> 8) & 0xff) as f64 / 255.0 - 0.5) * 0.6 * hgt;
    let score = 0.05 + 0.9 * (((h >> 16) & 0xffff) as f64 / 65535.0);
    let (iw, ih) = (img.width() as f64, img.height() as f64);
    let bx0 = (x0 as f64 + dx).clamp(0.0, iw - 1.0);
    let by0 = (y0 as f64 + dy).clamp(0.0, ih - 1.0);
    let bx1 = (x1 as f64 + dx).clamp(bx0 + 1.0, iw);
    let by1 = (y1 as f64 + dy).clamp(by0 + 1.0, ih);
    Some(Detection {
        bbox: [bx0.round(), by0.round(), bx1.round(), by1.round()],
        score: (score * 1e4).round() / 1e4,
    })
}

async fn detect(State(s): State<Arc<Shared<DetectMode>>>, body: axum::body::Bytes) -> Response {
    s.hits.fetch_add(1, Ordering::SeqCst);
    let req: DetectRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.to_string()),
    };
    let detections: Vec<Detection> = match &s.mode {
        DetectMode::Fixed(d) => d.clone(),
        DetectMode::Empty => Vec::new(),
        DetectMode::Malformed => return Json(json!({ "detections": "not a list" })).into_response(),
        DetectMode::Status(code) => return error(status(*code), "stub failure"),
        DetectMode::Content { target, seed } => {
            let img = match decode_image(&req.image) {
                Ok(i) => i.to_rgb8(),
                Err(e) => return error(StatusCode::BAD_REQUEST, format!("image: {e}")),
            };
            content_detection(&img, *target, *seed, &req.prompt).into_iter().collect()
        }
    };
    let kept: Vec<Detection> = detections
        .into_iter()
        .filter(|d| d.score >= req.score_floor)
        .collect();
    Json(json!({ "detections": kept })).into_response()
}

async fn healthz() -> &'static str {
    "ok"
}

async fn serve(app: Router, addr: SocketAddr, hits: Arc<AtomicUsize>) -> std::io::Result<StubServer> {
    let listener = TcpListener::bind(addr).await?;
    let addr = listener.local_addr()?;
    let (tx, rx) = oneshot::channel::<()>();
    tokio::spawn(async move {
        let _ = axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await;
    });
    Ok(StubServer {
        addr,
        hits,
        shutdown: Some(tx),
    })
}

fn loopback() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 0))
}

fn shared<M>(mode: M) -> Arc<Shared<M>> {
    Arc::new(Shared {
        mode,
        hits: Arc::new(AtomicUsize::new(0)),
    })
}

pub fn inpaint_router(mode: InpaintMode) -> (Router, Arc<AtomicUsize>) {
    let state = shared(mode);
    let hits = state.hits.clone();
    let router = Router::new()
        .route("/inpaint", post(inpaint))
        .route("/healthz", get(healthz))
        .with_state(state);
    (router, hits)
}

pub fn detect_router(mode: DetectMode) -> (Router, Arc<AtomicUsize>) {
    let state = shared(mode);
    let hits = state.hits.clone();
    let router = Router::new()
        .route("/detect", post(detect))
        .route("/healthz", get(healthz))
        .with_state(state);
    (router, hits)
}

/// Starts an inpainting stub on an ephemeral loopback port. Must be called
/// inside a tokio runtime.
pub async fn spawn_inpaint(mode: InpaintMode) -> std::io::Result<StubServer> {
    let (router, hits) = inpaint_router(mode);
    serve(router, loopback(), hits).await
}

pub async fn spawn_detect(mode: DetectMode) -> std::io::Result<StubServer> {
    let (router, hits) = detect_router(mode);
    serve(router, loopback(), hits).await
}

pub async fn spawn_inpaint_at(mode: InpaintMode, addr: SocketAddr) -> std::io::Result<StubServer> {
    let (router, hits) = inpaint_router(mode);
    serve(router, addr, hits).await
}

pub async fn spawn_detect_at(mode: DetectMode, addr: SocketAddr) -> std::io::Result<StubServer> {
    let (router, hits) = detect_router(mode);
    serve(router, addr, hits).await
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn content_detection_is_deterministic_per_seed() {
        let mut img = RgbImage::from_pixel(64, 48, Rgb([10, 10, 10]));
        for x in 20..30 {
            for y in 10..22 {
                img.put_pixel(x, y, Rgb([255, 0, 255]));
            }
        }
        let a = content_detection(&img, [255, 0, 255], 1, "object").unwrap();
        assert_eq!(Some(a), content_detection(&img, [255, 0, 255], 1, "object"));
        assert!((0.05..=0.95).contains(&a.score));
        assert!(a.bbox[0] < a.bbox[2] && a.bbox[1] < a.bbox[3]);
        assert!(content_detection(&img, [0, 0, 1], 1, "object").is_none());
    }
}
