//! Trade-by-trade records: the atomic input of the whole pipeline.
//!
//! A [`Trade`] is one executed transaction. Streams of trades come from
//! three sources with identical semantics: delimited text ([`read_trades`]),
//! a paginated exchange history endpoint ([`fetch::fetch_trades`]), or a
//! seeded generator ([`synth::synth_trades`]).

pub mod fetch;
pub mod synth;

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One executed transaction.
///
/// `is_buyer_maker = true` means the buyer's order rested on the book, so the
/// trade was an active sell; `false` means an active buy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trade {
    pub trade_id: u64,
    /// Milliseconds since the Unix epoch.
    pub timestamp: i64,
    /// Quote-asset units per base-asset unit; always positive.
    pub price: f64,
    /// Base-asset units; always positive.
    pub amount: f64,
    pub is_buyer_maker: bool,
}

impl Trade {
    /// Checks the per-record invariants, returning the violated one.
    pub fn validate(&self) -> Result<(), String> {
        if !(self.price > 0.0) || !self.price.is_finite() {
            return Err(format!("price must be positive and finite, got {}", self.price));
        }
        if !(self.amount > 0.0) || !self.amount.is_finite() {
            return Err(format!("amount must be positive and finite, got {}", self.amount));
        }
        if self.timestamp <= 0 {
            return Err(format!("timestamp must be positive, got {}", self.timestamp));
        }
        Ok(())
    }
}

/// Summary of one trade stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TradeStreamMeta {
    pub instrument: String,
    pub first_timestamp: i64,
    pub last_timestamp: i64,
    pub count: u64,
}

impl TradeStreamMeta {
    pub fn describe(instrument: &str, trades: &[Trade]) -> Self {
        Self {
            instrument: instrument.to_string(),
            first_timestamp: trades.first().map_or(0, |t| t.timestamp),
            last_timestamp: trades.last().map_or(0, |t| t.timestamp),
            count: trades.len() as u64,
        }
    }
}

/// An ordered trade sequence plus its summary.
#[derive(Debug, Clone, PartialEq)]
pub struct TradeStream {
    pub trades: Vec<Trade>,
    pub meta: TradeStreamMeta,
}

#[derive(Debug, Error)]
pub enum TradeIoError {
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("timestamp decreases at line {line}")]
    NonMonotonicTimestamp { line: u64 },
    #[error("empty source: no header row")]
    EmptySource,
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("http status {0}")]
    HttpError(u16),
    #[error("rate limited: retries exhausted after {retries} attempts")]
    RateLimited { retries: u32 },
    #[error("pagination gap: cannot cover range at cursor {cursor_ms}")]
    GapDetected { cursor_ms: i64 },
    #[error("transport: {0}")]
    Transport(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Column-name mapping for delimited trade files.
///
/// Defaults follow the canonical header
/// `TradeID,Timestamp,Price,Amount,IsBuyerMaker`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CsvSchema {
    pub trade_id: String,
    pub timestamp: String,
    pub price: String,
    pub amount: String,
    pub is_buyer_maker: String,
    /// Instrument name recorded into the stream meta; not a file column.
    #[serde(default)]
    pub instrument: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            trade_id: "TradeID".into(),
            timestamp: "Timestamp".into(),
            price: "Price".into(),
            amount: "Amount".into(),
            is_buyer_maker: "IsBuyerMaker".into(),
            instrument: String::new(),
        }
    }
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Result<usize, TradeIoError> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| TradeIoError::MalformedRow {
            line: 1,
            reason: format!("missing column '{name}' in header"),
        })
}

fn parse_bool(raw: &str, line: u64) -> Result<bool, TradeIoError> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(TradeIoError::MalformedRow {
            line,
            reason: format!("boolean column expects True/False, got '{other}'"),
        }),
    }
}

/// Reads an ordered trade sequence from delimited text with a header row.
///
/// Malformed rows are rejected with their line number, never skipped.
/// Timestamps must be non-decreasing and trade ids strictly increasing.
pub fn read_trades<R: Read>(source: R, schema: &CsvSchema) -> Result<TradeStream, TradeIoError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(source);

    let headers = reader
        .headers()
        .map_err(|e| TradeIoError::MalformedRow { line: 1, reason: e.to_string() })?
        .clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(TradeIoError::EmptySource);
    }

    let idx_id = column_index(&headers, &schema.trade_id)?;
    let idx_ts = column_index(&headers, &schema.timestamp)?;
    let idx_price = column_index(&headers, &schema.price)?;
    let idx_amount = column_index(&headers, &schema.amount)?;
    let idx_maker = column_index(&headers, &schema.is_buyer_maker)?;

    let mut trades = Vec::new();
    let mut prev: Option<Trade> = None;

    for (row_no, record) in reader.records().enumerate() {
        let line = row_no as u64 + 2; // header is line 1
        let record = record.map_err(|e| TradeIoError::MalformedRow { line, reason: e.to_string() })?;

        let field = |idx: usize| -> Result<&str, TradeIoError> {
            record.get(idx).ok_or_else(|| TradeIoError::MalformedRow {
                line,
                reason: format!("row has {} fields, expected at least {}", record.len(), idx + 1),
            })
        };
        let parse_num = |raw: &str, what: &str| -> Result<f64, TradeIoError> {
            raw.trim().parse::<f64>().map_err(|_| TradeIoError::MalformedRow {
                line,
                reason: format!("cannot parse {what} from '{raw}'"),
            })
        };

        let trade = Trade {
            trade_id: field(idx_id)?.trim().parse::<u64>().map_err(|_| {
                TradeIoError::MalformedRow {
                    line,
                    reason: format!("cannot parse trade id from '{}'", &record[idx_id]),
                }
            })?,
            timestamp: field(idx_ts)?.trim().parse::<i64>().map_err(|_| {
                TradeIoError::MalformedRow {
                    line,
                    reason: format!("cannot parse timestamp from '{}'", &record[idx_ts]),
                }
            })?,
            price: parse_num(field(idx_price)?, "price")?,
            amount: parse_num(field(idx_amount)?, "amount")?,
            is_buyer_maker: parse_bool(field(idx_maker)?, line)?,
        };

        trade
            .validate()
            .map_err(|reason| TradeIoError::MalformedRow { line, reason })?;

        if let Some(p) = prev {
            if trade.timestamp < p.timestamp {
                return Err(TradeIoError::NonMonotonicTimestamp { line });
            }
            if trade.trade_id <= p.trade_id {
                return Err(TradeIoError::MalformedRow {
                    line,
                    reason: format!(
                        "trade id {} not strictly increasing after {}",
                        trade.trade_id, p.trade_id
                    ),
                });
            }
        }
        prev = Some(trade);
        trades.push(trade);
    }

    let meta = TradeStreamMeta::describe(&schema.instrument, &trades);
    Ok(TradeStream { trades, meta })
}

/// Writes trades as delimited text with the schema's column names, in the
/// canonical column order. Floats use the shortest representation that
/// round-trips, so `read_trades` recovers the exact values.
pub fn write_trades<W: Write>(
    sink: W,
    trades: &[Trade],
    schema: &CsvSchema,
) -> Result<(), TradeIoError> {
    let mut writer = csv::Writer::from_writer(sink);
    writer
        .write_record([
            schema.trade_id.as_str(),
            schema.timestamp.as_str(),
            schema.price.as_str(),
            schema.amount.as_str(),
            schema.is_buyer_maker.as_str(),
        ])
        .map_err(io_err)?;
    for t in trades {
        writer
            .write_record([
                t.trade_id.to_string(),
                t.timestamp.to_string(),
                t.price.to_string(),
                t.amount.to_string(),
                if t.is_buyer_maker { "True".into() } else { "False".into() },
            ])
            .map_err(io_err)?;
    }
    writer.flush()?;
    Ok(())
}

fn io_err(e: csv::Error) -> TradeIoError {
    TradeIoError::Transport(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    const TABLE_CSV: &str = "\
TradeID,Timestamp,Price,Amount,IsBuyerMaker
203767769,1578200400437,7457.18,0.042720,False
203767770,1578200400614,7457.14,0.017739,True
203767771,1578200401809,7457.17,0.107827,False
203767772,1578200401811,7457.16,0.061911,True
203767773,1578200402497,7457.22,0.008068,False
";

    #[test]
    fn reads_canonical_rows() {
        let stream = read_trades(TABLE_CSV.as_bytes(), &CsvSchema::default()).unwrap();
        assert_eq!(stream.trades.len(), 5);
        let first = stream.trades[0];
        assert_eq!(first.trade_id, 203767769);
        assert_eq!(first.timestamp, 1578200400437);
        assert_eq!(first.price, 7457.18);
        assert_eq!(first.amount, 0.042720);
        assert!(!first.is_buyer_maker);
        assert!(stream.trades[1].is_buyer_maker);
        assert_eq!(stream.meta.count, 5);
        assert_eq!(stream.meta.first_timestamp, 1578200400437);
        assert_eq!(stream.meta.last_timestamp, 1578200402497);
    }

    #[test]
    fn empty_file_with_header_is_empty_sequence() {
        let stream =
            read_trades("TradeID,Timestamp,Price,Amount,IsBuyerMaker\n".as_bytes(), &CsvSchema::default())
                .unwrap();
        assert!(stream.trades.is_empty());
        assert_eq!(stream.meta.count, 0);
    }

    #[test]
    fn empty_source_is_an_error() {
        let err = read_trades("".as_bytes(), &CsvSchema::default()).unwrap_err();
        assert!(matches!(err, TradeIoError::EmptySource));
    }

    #[test]
    fn decreasing_timestamp_is_rejected_at_its_line() {
        let csv = "TradeID,Timestamp,Price,Amount,IsBuyerMaker\n1,5,1.0,1.0,True\n2,3,1.0,1.0,True\n";
        let err = read_trades(csv.as_bytes(), &CsvSchema::default()).unwrap_err();
        match err {
            TradeIoError::NonMonotonicTimestamp { line } => assert_eq!(line, 3),
            other => panic!("expected NonMonotonicTimestamp, got {other}"),
        }
    }

    #[test]
    fn equal_timestamps_are_allowed_with_increasing_ids() {
        let csv = "TradeID,Timestamp,Price,Amount,IsBuyerMaker\n1,5,1.0,1.0,True\n2,5,1.0,1.0,False\n";
        let stream = read_trades(csv.as_bytes(), &CsvSchema::default()).unwrap();
        assert_eq!(stream.trades.len(), 2);
    }

    #[test]
    fn non_increasing_id_is_malformed() {
        let csv = "TradeID,Timestamp,Price,Amount,IsBuyerMaker\n7,5,1.0,1.0,True\n7,6,1.0,1.0,True\n";
        let err = read_trades(csv.as_bytes(), &CsvSchema::default()).unwrap_err();
        assert!(matches!(err, TradeIoError::MalformedRow { line: 3, .. }));
    }

    #[test]
    fn bad_price_and_bad_bool_are_malformed() {
        let bad_price = "TradeID,Timestamp,Price,Amount,IsBuyerMaker\n1,5,-1.0,1.0,True\n";
        assert!(matches!(
            read_trades(bad_price.as_bytes(), &CsvSchema::default()).unwrap_err(),
            TradeIoError::MalformedRow { line: 2, .. }
        ));
        let bad_bool = "TradeID,Timestamp,Price,Amount,IsBuyerMaker\n1,5,1.0,1.0,yes\n";
        assert!(matches!(
            read_trades(bad_bool.as_bytes(), &CsvSchema::default()).unwrap_err(),
            TradeIoError::MalformedRow { line: 2, .. }
        ));
    }

    #[test]
    fn custom_schema_maps_columns() {
        let csv = "id,ts,px,qty,m\n10,100,2.5,0.5,TRUE\n";
        let schema = CsvSchema {
            trade_id: "id".into(),
            timestamp: "ts".into(),
            price: "px".into(),
            amount: "qty".into(),
            is_buyer_maker: "m".into(),
            instrument: "TEST".into(),
        };
        let stream = read_trades(csv.as_bytes(), &schema).unwrap();
        assert_eq!(stream.trades[0].price, 2.5);
        assert!(stream.trades[0].is_buyer_maker);
        assert_eq!(stream.meta.instrument, "TEST");
    }

    #[test]
    fn missing_column_names_the_column() {
        let csv = "TradeID,Timestamp,Price,Amount\n";
        let err = read_trades(csv.as_bytes(), &CsvSchema::default()).unwrap_err();
        match err {
            TradeIoError::MalformedRow { line: 1, reason } => {
                assert!(reason.contains("IsBuyerMaker"))
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn write_then_read_is_identity() {
        let stream = read_trades(TABLE_CSV.as_bytes(), &CsvSchema::default()).unwrap();
        let mut buf = Vec::new();
        write_trades(&mut buf, &stream.trades, &CsvSchema::default()).unwrap();
        let back = read_trades(buf.as_slice(), &CsvSchema::default()).unwrap();
        assert_eq!(back.trades, stream.trades);
    }
}
