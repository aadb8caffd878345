//! Loopback HTTP front end for [`SimService`].

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use restmarl_core::engine::HttpRequest;
use restmarl_core::openapi::HttpMethod;

use super::{SimConfig, SimService};

/// A running server; stops when dropped.
pub struct SimServer {
    server: Arc<tiny_http::Server>,
    addr: SocketAddr,
    worker: Option<JoinHandle<()>>,
}

impl SimServer {
    /// Binds `addr` (port 0 picks a free port). Every response is held back
    /// by `delay` before it is written.
    pub fn start(addr: &str, config: SimConfig, delay: Duration) -> std::io::Result<Self> {
        let server = tiny_http::Server::http(addr).map_err(std::io::Error::other)?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| std::io::Error::other("not an IP listener"))?;
        let server = Arc::new(server);
        let worker = {
            let server = Arc::clone(&server);
            std::thread::spawn(move || serve(&server, config, delay))
        };
        Ok(SimServer {
            server,
            addr,
            worker: Some(worker),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Serves until the process ends.
    pub fn wait(mut self) {
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

impl Drop for SimServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

fn serve(server: &tiny_http::Server, config: SimConfig, delay: Duration) {
    let mut service = SimService::new(config);
    for mut raw in server.incoming_requests() {
        let response = match convert(&mut raw) {
            Some(request) => service.handle(&request),
            None => {
                let _ = raw.respond(tiny_http::Response::empty(405));
                continue;
            }
        };
        if !delay.is_zero() {
            std::thread::sleep(delay);
        }
        let mut out =
            tiny_http::Response::from_string(response.body).with_status_code(response.status);
        for (k, v) in &response.headers {
            if let Ok(h) = tiny_http::Header::from_bytes(k.as_bytes(), v.as_bytes()) {
                out.add_header(h);
            }
        }
        if let Err(e) = raw.respond(out) {
            tracing::debug!(error = %e, "client went away");
        }
    }
}

fn convert(raw: &mut tiny_http::Request) -> Option<HttpRequest> {
    let method = HttpMethod::from_path_item_key(raw.method().as_str())?;
    let url = raw.url().to_string();
    let (path, query) = url.split_once('?').unwrap_or((&url, ""));
    let query = url::form_urlencoded::parse(query.as_bytes())
        .into_owned()
        .collect();
    let headers = raw
        .headers()
        .iter()
        .map(|h| (h.field.as_str().to_string(), h.value.as_str().to_string()))
        .collect();
    let mut body = String::new();
    let _ = raw.as_reader().read_to_string(&mut body);
    Some(HttpRequest {
        method,
        path: path.to_string(),
        query,
        headers,
        body: (!body.is_empty()).then_some(body),
    })
}
