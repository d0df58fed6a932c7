//! Pulls a time range of aggregated trades from a live history endpoint and
//! prints a summary. Needs FLOWCAST_API_BASE (or an endpoint argument);
//! without one it explains itself and exits.

use flowcast::bars::{resample, BarConfig};
use flowcast::trade::fetch::{fetch_trades, FetchConfig, ENDPOINT_ENV};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let endpoint = std::env::args()
        .nth(1)
        .or_else(|| std::env::var(ENDPOINT_ENV).ok())
        .unwrap_or_default();
    if endpoint.is_empty() {
        println!("no endpoint configured; set {ENDPOINT_ENV} or pass a URL, e.g.");
        println!("  cargo run --example fetch_trades -- http://host:port/trades");
        println!("the endpoint must serve JSON pages keyed by start time; see FieldMap");
        println!("to remap parameter and field names for a particular exchange.");
        return Ok(());
    }

    let now_ms = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)?
        .as_millis() as i64;
    let cfg = FetchConfig {
        endpoint,
        instrument: std::env::var("FLOWCAST_INSTRUMENT").unwrap_or_else(|_| "BTCUSDT".into()),
        start_ms: now_ms - 60_000,
        end_ms: now_ms,
        page_limit: 1000,
        cache_dir: Some(std::env::temp_dir().join("flowcast-pages")),
        ..FetchConfig::default()
    };
    let stream = fetch_trades(&cfg)?;
    println!(
        "{} trades for {} in the last minute (ids {:?}..{:?})",
        stream.trades.len(),
        cfg.instrument,
        stream.trades.first().map(|t| t.trade_id),
        stream.trades.last().map(|t| t.trade_id),
    );

    let bars = resample(&stream.trades, &BarConfig::new(1000, vec![1])?)?;
    println!("{} one-second bars; raw pages cached under {:?}", bars.len(), cfg.cache_dir);
    Ok(())
}
