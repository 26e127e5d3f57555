//! Minimal HTTP server answering `/denoise` and `/health`.

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::extract::{DefaultBodyLimit, State};
use axum::http::{header, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use tokio::sync::oneshot;
use vivid_core::diffusion::LatentFrames;
use vivid_core::geometry::RelativePose;
use vivid_core::guidance::{FrameCondition, Prompt, VideoDenoiser, ViewDenoiser};

use crate::protocol::{DenoiseKind, DenoiseRequest, DenoiseResponse};

const WORKERS: usize = 2;
const MAX_REQUEST_BYTES: usize = 256 * 1024 * 1024;

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("cannot bind port {port}: {message}")]
    Bind { port: u16, message: String },
}

/// Computes `eps` for a validated request.
pub type Handler = dyn Fn(&DenoiseRequest) -> Result<Vec<f64>, String> + Send + Sync;

/// Running server; stops when dropped.
pub struct DenoiseServer {
    addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl DenoiseServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn port(&self) -> u16 {
        self.addr.port()
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn shutdown(mut self) {
        self.stop_server();
    }

    fn stop_server(&mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for DenoiseServer {
    fn drop(&mut self) {
        self.stop_server();
    }
}

/// Serves `handler` on `127.0.0.1:port` (`0` picks a free port). Requests
/// are answered on a background runtime; the handler runs on its blocking
/// pool, so slow models do not stall other connections.
pub fn serve(port: u16, handler: impl Fn(&DenoiseRequest) -> Result<Vec<f64>, String> + Send + Sync + 'static) -> Result<DenoiseServer, ServeError> {
    let bind_err = |e: std::io::Error| ServeError::Bind { port, message: e.to_string() };
    let listener = std::net::TcpListener::bind(("127.0.0.1", port)).map_err(bind_err)?;
    let addr = listener.local_addr().map_err(bind_err)?;
    listener.set_nonblocking(true).map_err(bind_err)?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(WORKERS)
        .enable_io()
        .build()
        .map_err(bind_err)?;
    let listener = {
        let _guard = runtime.enter();
        tokio::net::TcpListener::from_std(listener).map_err(bind_err)?
    };
    let handler: Arc<Handler> = Arc::new(handler);
    let app = Router::new()
        .route("/health", get(|| async { json_ok("{\"status\":\"ok\"}".into()) }))
        .route("/denoise", post(denoise))
        .fallback(|uri: Uri| async move { (StatusCode::NOT_FOUND, format!("no route for {}", uri.path())) })
        .layer(DefaultBodyLimit::max(MAX_REQUEST_BYTES))
        .with_state(handler);
    let (stop, stopped) = oneshot::channel::<()>();
    let thread = std::thread::spawn(move || {
        runtime.block_on(async move {
            // serving only ends on shutdown or a listener failure; either way
            // there is no caller left to report to
            let _ = axum::serve(listener, app)
                .with_graceful_shutdown(async move {
                    let _ = stopped.await;
                })
                .await;
        });
    });
    Ok(DenoiseServer { addr, stop: Some(stop), thread: Some(thread) })
}

/// Test double: `eps = frames`.
pub fn serve_echo(port: u16) -> Result<DenoiseServer, ServeError> {
    serve(port, |req| Ok(req.frames.clone()))
}

/// Serves in-process denoisers over the wire protocol.
pub fn serve_local(port: u16, view: Arc<dyn ViewDenoiser>, video: Arc<dyn VideoDenoiser>) -> Result<DenoiseServer, ServeError> {
    serve(port, local_handler(view, video))
}

/// Dispatches view requests frame by frame and video requests jointly.
pub fn local_handler(
    view: Arc<dyn ViewDenoiser>,
    video: Arc<dyn VideoDenoiser>,
) -> impl Fn(&DenoiseRequest) -> Result<Vec<f64>, String> + Send + Sync + 'static {
    move |req| {
        let level = req.level();
        let [f, c, h, w] = req.shape;
        match req.kind {
            DenoiseKind::View => {
                let n = c * h * w;
                let mut out = Vec::with_capacity(req.frames.len());
                for k in 0..f {
                    let cond = req.conditioning.as_ref().map(|cd| FrameCondition {
                        input_image: &cd.input_image,
                        image_shape: cd.input_shape,
                        relative_pose: RelativePose::from_array(cd.relative_poses[k]),
                    });
                    let eps = view.eps(&req.frames[k * n..(k + 1) * n], [c, h, w], level, cond.as_ref()).map_err(|e| e.to_string())?;
                    out.extend(eps);
                }
                Ok(out)
            }
            DenoiseKind::Video => {
                let z = LatentFrames::new(req.shape, req.frames.clone()).map_err(|e| e.to_string())?;
                let prompt = Prompt { text: req.prompt.clone() };
                Ok(video.eps(&z, level, &prompt).map_err(|e| e.to_string())?.into_vec())
            }
        }
    }
}

fn json_ok(body: String) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], body).into_response()
}

async fn denoise(State(handler): State<Arc<Handler>>, body: String) -> Response {
    match tokio::task::spawn_blocking(move || answer(&body, handler.as_ref())).await {
        Ok(Ok(body)) => json_ok(body),
        Ok(Err((status, msg))) => (status, msg).into_response(),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, format!("handler failed: {e}")).into_response(),
    }
}

fn answer(body: &str, handler: &Handler) -> Result<String, (StatusCode, String)> {
    let parsed: DenoiseRequest =
        serde_json::from_str(body).map_err(|e| (StatusCode::BAD_REQUEST, format!("malformed request: {e}")))?;
    parsed.validate().map_err(|e| (StatusCode::BAD_REQUEST, e))?;
    let eps = handler(&parsed).map_err(|e| (StatusCode::INTERNAL_SERVER_ERROR, e))?;
    serde_json::to_string(&DenoiseResponse { eps, shape: parsed.shape })
        .map_err(|e| (StatusCode::INTERNAL_SERVER_ERROR, format!("cannot encode response: {e}")))
}
