//! Paginated client for public aggregated-trade history endpoints.
//!
//! The client walks a time range by repeated GETs keyed on a start-time
//! cursor, deduplicates overlapping pages by trade id, and stores every raw
//! page in an append-only disk cache so re-runs are offline-reproducible.
//! Query-parameter and response-field names are remapped through
//! [`FieldMap`], so any exchange with this endpoint shape can be targeted.
//! Requests are strictly sequential: at most one is in flight, with a
//! configurable minimum delay between them.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{Trade, TradeIoError, TradeStream, TradeStreamMeta};

/// Environment variable that overrides [`FetchConfig::endpoint`].
pub const ENDPOINT_ENV: &str = "FLOWCAST_API_BASE";

/// Names of the request parameters and response fields.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FieldMap {
    pub param_instrument: String,
    pub param_start: String,
    pub param_limit: String,
    pub resp_trade_id: String,
    pub resp_timestamp: String,
    pub resp_price: String,
    pub resp_amount: String,
    pub resp_is_buyer_maker: String,
}

impl Default for FieldMap {
    fn default() -> Self {
        Self {
            param_instrument: "instrument".into(),
            param_start: "start_ms".into(),
            param_limit: "limit".into(),
            resp_trade_id: "trade_id".into(),
            resp_timestamp: "timestamp".into(),
            resp_price: "price".into(),
            resp_amount: "amount".into(),
            resp_is_buyer_maker: "is_buyer_maker".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FetchConfig {
    /// Full URL of the history endpoint, e.g. `http://host:port/trades`.
    /// [`ENDPOINT_ENV`] overrides this when set.
    pub endpoint: String,
    pub instrument: String,
    /// Half-open request range [start_ms, end_ms).
    pub start_ms: i64,
    pub end_ms: i64,
    /// Rows requested per page. Must exceed the widest same-millisecond
    /// burst in the range, or the fetch reports a coverage gap.
    pub page_limit: u32,
    /// Minimum spacing between consecutive HTTP requests.
    pub min_delay_ms: u64,
    /// Retry budget for rate-limited requests; backoff doubles each retry.
    pub max_retries: u32,
    pub backoff_ms: u64,
    /// Raw-page cache directory; pages already present are not re-fetched.
    pub cache_dir: Option<PathBuf>,
    pub fields: FieldMap,
}

impl Default for FetchConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            instrument: String::new(),
            start_ms: 0,
            end_ms: 0,
            page_limit: 1000,
            min_delay_ms: 250,
            max_retries: 5,
            backoff_ms: 200,
            cache_dir: None,
            fields: FieldMap::default(),
        }
    }
}

fn json_i64(v: &serde_json::Value, what: &str) -> Result<i64, TradeIoError> {
    let parsed = match v {
        serde_json::Value::Number(n) => n.as_i64(),
        serde_json::Value::String(s) => s.parse::<i64>().ok(),
        _ => None,
    };
    parsed.ok_or_else(|| TradeIoError::Transport(format!("cannot read integer {what} from {v}")))
}

fn json_f64(v: &serde_json::Value, what: &str) -> Result<f64, TradeIoError> {
    let parsed = match v {
        serde_json::Value::Number(n) => n.as_f64(),
        serde_json::Value::String(s) => s.parse::<f64>().ok(),
        _ => None,
    };
    parsed.ok_or_else(|| TradeIoError::Transport(format!("cannot read number {what} from {v}")))
}

fn json_bool(v: &serde_json::Value, what: &str) -> Result<bool, TradeIoError> {
    let parsed = match v {
        serde_json::Value::Bool(b) => Some(*b),
        serde_json::Value::String(s) => match s.to_ascii_lowercase().as_str() {
            "true" => Some(true),
            "false" => Some(false),
            _ => None,
        },
        _ => None,
    };
    parsed.ok_or_else(|| TradeIoError::Transport(format!("cannot read boolean {what} from {v}")))
}

/// Decodes one JSON page into trades. Numeric fields may arrive as JSON
/// numbers or as decimal strings; exchanges use both.
pub(crate) fn parse_page(body: &[u8], fields: &FieldMap) -> Result<Vec<Trade>, TradeIoError> {
    let value: serde_json::Value = serde_json::from_slice(body)
        .map_err(|e| TradeIoError::Transport(format!("page is not valid JSON: {e}")))?;
    let rows = value
        .as_array()
        .ok_or_else(|| TradeIoError::Transport("page is not a JSON array".into()))?;

    let mut trades = Vec::with_capacity(rows.len());
    for row in rows {
        let get = |name: &str| -> Result<&serde_json::Value, TradeIoError> {
            row.get(name)
                .ok_or_else(|| TradeIoError::Transport(format!("page row missing field '{name}'")))
        };
        let trade = Trade {
            trade_id: json_i64(get(&fields.resp_trade_id)?, "trade id")? as u64,
            timestamp: json_i64(get(&fields.resp_timestamp)?, "timestamp")?,
            price: json_f64(get(&fields.resp_price)?, "price")?,
            amount: json_f64(get(&fields.resp_amount)?, "amount")?,
            is_buyer_maker: json_bool(get(&fields.resp_is_buyer_maker)?, "maker flag")?,
        };
        trade.validate().map_err(TradeIoError::Transport)?;
        trades.push(trade);
    }
    Ok(trades)
}

fn cache_path(config: &FetchConfig, cursor: i64) -> Option<PathBuf> {
    let dir = config.cache_dir.as_ref()?;
    let instrument: String = config
        .instrument
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect();
    // The page body depends on the requested limit, so the limit is part of
    // the key; a cached 500-row page must not satisfy a 1000-row request.
    Some(dir.join(format!("{instrument}-{cursor}-{}.json", config.page_limit)))
}

struct PageClient {
    http: reqwest::blocking::Client,
    endpoint: String,
    last_request: Option<Instant>,
}

impl PageClient {
    fn new(config: &FetchConfig) -> Result<Self, TradeIoError> {
        let endpoint = std::env::var(ENDPOINT_ENV).unwrap_or_else(|_| config.endpoint.clone());
        if endpoint.is_empty() {
            return Err(TradeIoError::Transport(format!(
                "no endpoint configured and {ENDPOINT_ENV} is unset"
            )));
        }
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(30))
            .build()
            .map_err(|e| TradeIoError::Transport(e.to_string()))?;
        Ok(Self { http, endpoint, last_request: None })
    }

    /// One page body, respecting the minimum request spacing and retrying
    /// rate-limited responses with doubling backoff.
    fn get_page(&mut self, config: &FetchConfig, cursor: i64) -> Result<Vec<u8>, TradeIoError> {
        if let Some(path) = cache_path(config, cursor) {
            if let Ok(body) = std::fs::read(&path) {
                return Ok(body);
            }
        }

        let mut attempt = 0u32;
        loop {
            if let Some(last) = self.last_request {
                let spacing = Duration::from_millis(config.min_delay_ms);
                let elapsed = last.elapsed();
                if elapsed < spacing {
                    std::thread::sleep(spacing - elapsed);
                }
            }
            self.last_request = Some(Instant::now());

            let response = self
                .http
                .get(&self.endpoint)
                .query(&[
                    (config.fields.param_instrument.as_str(), config.instrument.clone()),
                    (config.fields.param_start.as_str(), cursor.to_string()),
                    (config.fields.param_limit.as_str(), config.page_limit.to_string()),
                ])
                .send()
                .map_err(|e| TradeIoError::Transport(e.to_string()))?;

            let status = response.status().as_u16();
            if status == 429 {
                if attempt >= config.max_retries {
                    return Err(TradeIoError::RateLimited { retries: attempt });
                }
                std::thread::sleep(Duration::from_millis(config.backoff_ms << attempt));
                attempt += 1;
                continue;
            }
            if status != 200 {
                return Err(TradeIoError::HttpError(status));
            }

            let body = response
                .bytes()
                .map_err(|e| TradeIoError::Transport(e.to_string()))?
                .to_vec();
            if let Some(path) = cache_path(config, cursor) {
                if let Some(parent) = path.parent() {
                    std::fs::create_dir_all(parent)?;
                }
                std::fs::write(&path, &body)?;
            }
            return Ok(body);
        }
    }
}

/// Fetches every trade with start_ms <= timestamp < end_ms, deduplicated by
/// trade id, paginating on a start-time cursor until the range is covered.
pub fn fetch_trades(config: &FetchConfig) -> Result<TradeStream, TradeIoError> {
    if config.end_ms < config.start_ms {
        return Err(TradeIoError::InvalidConfig(format!(
            "end_ms {} precedes start_ms {}",
            config.end_ms, config.start_ms
        )));
    }
    if config.page_limit == 0 {
        return Err(TradeIoError::InvalidConfig("page_limit must be >= 1".into()));
    }

    let mut trades: Vec<Trade> = Vec::new();
    let mut client = PageClient::new(config)?;
    let mut cursor = config.start_ms;

    while cursor < config.end_ms {
        let body = client.get_page(config, cursor)?;
        let page = parse_page(&body, &config.fields)?;

        let page_len = page.len();
        let before_len = trades.len();
        let last_seen = trades.last().map(|t| t.trade_id);
        let mut max_ts = None;
        for t in page {
            max_ts = Some(max_ts.map_or(t.timestamp, |m: i64| m.max(t.timestamp)));
            if last_seen.is_some_and(|id| t.trade_id <= id) {
                continue; // overlap with the previous page
            }
            if let Some(prev) = trades.last() {
                // Tie-break equal timestamps by trade id: ids must rise.
                if t.timestamp < prev.timestamp || t.trade_id <= prev.trade_id {
                    return Err(TradeIoError::Transport(format!(
                        "server returned out-of-order trade {} at cursor {cursor}",
                        t.trade_id
                    )));
                }
            }
            if (config.start_ms..config.end_ms).contains(&t.timestamp) {
                trades.push(t);
            }
        }

        if page_len < config.page_limit as usize {
            break; // server has no more rows at or after the cursor
        }
        // A full page may cut a same-millisecond run in half, so the next
        // request re-reads the page's final timestamp and the id dedup
        // drops the replayed rows. The result is therefore independent of
        // the page size as long as the page holds a full millisecond.
        let next = max_ts.expect("full page has a max timestamp");
        if next < cursor || (next == cursor && trades.len() == before_len) {
            // A full page pinned at one timestamp with nothing new means a
            // same-millisecond burst at least as wide as the page; paging
            // by start time cannot cover the range.
            return Err(TradeIoError::GapDetected { cursor_ms: cursor });
        }
        cursor = next;
    }

    let meta = TradeStreamMeta::describe(&config.instrument, &trades);
    Ok(TradeStream { trades, meta })
}
