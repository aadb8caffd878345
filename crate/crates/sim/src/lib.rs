//! A deterministic shop service (register, users, carts, orders) with two
//! seeded server faults, reachable in-process or over loopback HTTP.

mod server;

use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use percent_encoding::percent_decode_str;
use regex::Regex;
use serde_json::{json, Map, Value};

use restmarl_core::engine::{
    HttpRequest, HttpResponse, Transport, TransportConfig, TransportError, TransportRegistry,
};
use restmarl_core::openapi::HttpMethod;

pub use server::SimServer;

/// The OpenAPI document describing this service.
pub const OPENAPI: &str = include_str!("../openapi.yaml");
/// URL scheme served by the in-process transport.
pub const SIM_SCHEME: &str = "sim";
pub const FIRST_USER_ID: i64 = 10001;
pub const FILTER_FAULT_VALUE: &str = "node:relation";
pub const FILTER_FAULT_MESSAGE: &str = "filter mishandled";
pub const QUANTITY_FAULT_MESSAGE: &str = "quantity underflow";
pub const FILTER_VALUES: [&str; 4] = ["node", "way", "relation", FILTER_FAULT_VALUE];

const EMAIL_PATTERN: &str = r"^[\w-]+(\.[\w-]+)*@([\w-]+\.)+[a-zA-Z]+$";
const NAME_PATTERN: &str = r"^[\pL '-]+$";
const PASSWORD_PATTERN: &str = r"^[a-zA-Z0-9]+$";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimConfig {
    /// `filter=node:relation` on orders answers 500.
    pub filter_fault: bool,
    /// A negative cart quantity answers 500.
    pub quantity_fault: bool,
    /// Latency reported for every in-process exchange.
    pub latency: Duration,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            filter_fault: true,
            quantity_fault: true,
            latency: Duration::from_millis(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct User {
    email: String,
    name: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Cart {
    user_id: i64,
    quantity: i64,
}

/// Route table entry: which methods a path shape declares.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Route {
    Register,
    User,
    Carts,
    Orders,
}

impl Route {
    fn method(self) -> HttpMethod {
        match self {
            Route::Register | Route::Carts => HttpMethod::Post,
            Route::User | Route::Orders => HttpMethod::Get,
        }
    }
}

/// Service state. Responses depend only on the request sequence.
#[derive(Debug, Clone)]
pub struct SimService {
    config: SimConfig,
    users: BTreeMap<i64, User>,
    emails: BTreeSet<String>,
    carts: BTreeMap<i64, Cart>,
    next_user: i64,
    next_cart: i64,
    email_re: Regex,
    name_re: Regex,
    password_re: Regex,
}

fn reply(status: u16, body: Value) -> (u16, Value) {
    (status, body)
}

fn error(status: u16, message: &str) -> (u16, Value) {
    reply(status, json!({"status": status, "message": message}))
}

impl SimService {
    pub fn new(config: SimConfig) -> Self {
        SimService {
            config,
            users: BTreeMap::new(),
            emails: BTreeSet::new(),
            carts: BTreeMap::new(),
            next_user: FIRST_USER_ID,
            next_cart: 1,
            email_re: Regex::new(EMAIL_PATTERN).expect("valid pattern"),
            name_re: Regex::new(NAME_PATTERN).expect("valid pattern"),
            password_re: Regex::new(PASSWORD_PATTERN).expect("valid pattern"),
        }
    }

    pub fn config(&self) -> SimConfig {
        self.config
    }

    pub fn handle(&mut self, request: &HttpRequest) -> HttpResponse {
        let (status, body) = self.route(request);
        HttpResponse {
            status,
            headers: vec![("content-type".into(), "application/json".into())],
            body: body.to_string(),
            latency: self.config.latency,
        }
    }

    fn route(&mut self, request: &HttpRequest) -> (u16, Value) {
        let segments: Vec<String> = request
            .path
            .trim_start_matches('/')
            .split('/')
            .map(|s| percent_decode_str(s).decode_utf8_lossy().into_owned())
            .collect();
        let (route, arg) = match segments.as_slice() {
            [a] if a == "register" => (Route::Register, None),
            [a] if a == "carts" => (Route::Carts, None),
            [a, id] if a == "users" && !id.is_empty() => (Route::User, Some(id.as_str())),
            [a, id] if a == "orders" && !id.is_empty() => (Route::Orders, Some(id.as_str())),
            _ => return error(404, "no such resource"),
        };
        if request.method != route.method() {
            return error(405, "method not allowed");
        }
        match route {
            Route::Register => match json_body(request) {
                Ok(b) => self.register(&b),
                Err(e) => e,
            },
            Route::Carts => match json_body(request) {
                Ok(b) => self.create_cart(&b),
                Err(e) => e,
            },
            Route::User => self.get_user(arg.unwrap_or_default()),
            Route::Orders => {
                let filter = request
                    .query
                    .iter()
                    .find(|(k, _)| k == "filter")
                    .map(|(_, v)| v.as_str());
                self.get_orders(arg.unwrap_or_default(), filter)
            }
        }
    }

    fn register(&mut self, body: &Map<String, Value>) -> (u16, Value) {
        let text = |name: &str| body.get(name).and_then(Value::as_str);
        let (Some(email), Some(name), Some(password)) =
            (text("email"), text("name"), text("password"))
        else {
            return error(400, "email, name and password are required strings");
        };
        if email.chars().count() > 50 || !self.email_re.is_match(email) {
            return error(400, "invalid email");
        }
        if name.chars().count() > 50 || !self.name_re.is_match(name) {
            return error(400, "invalid name");
        }
        let len = password.chars().count();
        if !(6..=50).contains(&len) || !self.password_re.is_match(password) {
            return error(400, "invalid password");
        }
        if body.get("links").is_some_and(|l| !l.is_array()) {
            return error(400, "links must be an array");
        }
        if !self.emails.insert(email.to_string()) {
            return error(409, "email already registered");
        }
        let id = self.next_user;
        self.next_user += 1;
        self.users.insert(
            id,
            User {
                email: email.to_string(),
                name: name.to_string(),
            },
        );
        // `token` is not part of the documented response.
        reply(
            201,
            json!({"id": id, "email": email, "name": name, "token": format!("tk{id:08x}")}),
        )
    }

    fn get_user(&self, raw_id: &str) -> (u16, Value) {
        let Ok(id) = raw_id.parse::<i64>() else {
            return error(400, "id must be an integer");
        };
        match self.users.get(&id) {
            Some(u) => reply(200, json!({"id": id, "email": u.email, "name": u.name})),
            None => error(404, "unknown user"),
        }
    }

    fn create_cart(&mut self, body: &Map<String, Value>) -> (u16, Value) {
        let Some(user_id) = body.get("user_id").and_then(Value::as_i64) else {
            return error(400, "user_id must be an integer");
        };
        let quantity = match body.get("quantity") {
            None | Some(Value::Null) => 1,
            Some(q) => match q.as_i64() {
                Some(q) => q,
                None => return error(400, "quantity must be an integer"),
            },
        };
        if !self.users.contains_key(&user_id) {
            return error(400, "unknown user");
        }
        if quantity < 0 && self.config.quantity_fault {
            return error(500, QUANTITY_FAULT_MESSAGE);
        }
        if !(1..=100).contains(&quantity) {
            return error(400, "quantity out of range");
        }
        let cart_id = self.next_cart;
        self.next_cart += 1;
        self.carts.insert(cart_id, Cart { user_id, quantity });
        reply(201, json!({"cart_id": cart_id, "quantity": quantity}))
    }

    fn get_orders(&self, raw_id: &str, filter: Option<&str>) -> (u16, Value) {
        let Ok(user_id) = raw_id.parse::<i64>() else {
            return error(400, "user_id must be an integer");
        };
        match filter {
            Some(FILTER_FAULT_VALUE) if self.config.filter_fault => {
                return error(500, FILTER_FAULT_MESSAGE);
            }
            Some(f) if !FILTER_VALUES.contains(&f) => return error(400, "unknown filter"),
            _ => {}
        }
        if !self.users.contains_key(&user_id) {
            return error(404, "unknown user");
        }
        let items: Vec<Value> = self
            .carts
            .iter()
            .filter(|(_, c)| c.user_id == user_id)
            .map(|(id, c)| json!({"cart_id": id, "quantity": c.quantity}))
            .collect();
        if items.is_empty() {
            return error(404, "no orders");
        }
        let total: i64 = self
            .carts
            .values()
            .filter(|c| c.user_id == user_id)
            .map(|c| c.quantity)
            .sum();
        reply(
            200,
            json!({"user_id": user_id, "items": items, "total": total}),
        )
    }
}

/// Parses a JSON object body, enforcing a JSON content type.
fn json_body(request: &HttpRequest) -> Result<Map<String, Value>, (u16, Value)> {
    let json_type = request.header("content-type").is_some_and(|t| {
        t.trim()
            .to_ascii_lowercase()
            .starts_with("application/json")
    });
    if !json_type {
        return Err(error(415, "expected application/json"));
    }
    match request.body.as_deref().map(serde_json::from_str::<Value>) {
        Some(Ok(Value::Object(map))) => Ok(map),
        _ => Err(error(400, "body must be a JSON object")),
    }
}

/// In-process transport; each instance owns a fresh service.
pub struct SimTransport {
    service: SimService,
}

impl SimTransport {
    pub fn new(config: SimConfig) -> Self {
        SimTransport {
            service: SimService::new(config),
        }
    }
}

impl Transport for SimTransport {
    fn send(&mut self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        Ok(self.service.handle(request))
    }
}

/// Adds the `sim` scheme, backed by a fresh [`SimTransport`] per session.
pub fn register_sim_transport(registry: &mut TransportRegistry, config: SimConfig) {
    registry.register(
        SIM_SCHEME,
        Box::new(move |_: &TransportConfig| {
            Ok(Box::new(SimTransport::new(config)) as Box<dyn Transport>)
        }),
    );
}
