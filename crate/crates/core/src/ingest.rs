//! Event-log ingestion: parsing, per-user grouping and interval extraction.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Read};
use std::str::FromStr;

use chrono::DateTime;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}, field {field}: {message}")]
    Malformed {
        line: u64,
        field: String,
        message: String,
    },
    #[error("unknown input format {0:?} (expected csv or jsonl)")]
    UnknownFormat(String),
    #[error("min_actions must be at least 2, got {0}")]
    InvalidMinActions(usize),
    #[error("no usable users: none has at least {min_actions} events")]
    NoUsableUsers { min_actions: usize },
    #[error("invalid interval {0}: intervals must be finite and non-negative")]
    InvalidInterval(f64),
    #[error("reading event log: {0}")]
    Io(#[from] std::io::Error),
}

/// Input encodings accepted by [`parse_event_log`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogFormat {
    Csv,
    Jsonl,
}

impl FromStr for LogFormat {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(LogFormat::Csv),
            "jsonl" | "ndjson" => Ok(LogFormat::Jsonl),
            other => Err(IngestError::UnknownFormat(other.to_string())),
        }
    }
}

impl fmt::Display for LogFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LogFormat::Csv => f.write_str("csv"),
            LogFormat::Jsonl => f.write_str("jsonl"),
        }
    }
}

/// One observed action. `action` holds the escaped label (see
/// [`escape_action`]) so it can be used directly as a token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub user_id: String,
    pub action: String,
    pub timestamp: f64,
}

impl EventRecord {
    /// Build a record from a raw (unescaped) action label.
    pub fn new(user_id: impl Into<String>, raw_action: &str, timestamp: f64) -> Self {
        EventRecord {
            user_id: user_id.into(),
            action: escape_action(raw_action),
            timestamp,
        }
    }
}

/// A single user's events in chronological order.
#[derive(Debug, Clone, PartialEq)]
pub struct UserStream {
    pub user_id: String,
    pub events: Vec<EventRecord>,
}

impl UserStream {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// Non-negative, finite inter-action intervals in seconds.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IntervalSample(Vec<f64>);

impl IntervalSample {
    pub fn new(values: Vec<f64>) -> Result<Self, IngestError> {
        if let Some(&bad) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(IngestError::InvalidInterval(bad));
        }
        Ok(IntervalSample(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn extend(&mut self, other: IntervalSample) {
        self.0.extend(other.0);
    }
}

/// Escape an action label so it never contains a bare `|`, whitespace, or
/// the shape of a bin token (`T<digits>`).
///
/// `\` becomes `\\`, `|` becomes `\|`, space/tab/newline/CR become `\s`,
/// `\t`, `\n`, `\r`, and a label that looks like a bin token gets a leading
/// `\`. [`unescape_action`] inverts this exactly.
pub fn escape_action(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len() + 2);
    if is_bin_shaped(raw) {
        out.push('\\');
    }
    for ch in raw.chars() {
        match ch {
            '\\' => out.push_str("\\\\"),
            '|' => out.push_str("\\|"),
            ' ' => out.push_str("\\s"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c if c.is_whitespace() => out.push_str(&format!("\\u{{{:x}}}", c as u32)),
            c => out.push(c),
        }
    }
    out
}

pub fn unescape_action(escaped: &str) -> String {
    let mut out = String::with_capacity(escaped.len());
    let mut chars = escaped.chars();
    while let Some(ch) = chars.next() {
        if ch != '\\' {
            out.push(ch);
            continue;
        }
        match chars.next() {
            Some('s') => out.push(' '),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some('u') => match unicode_escape(&mut chars) {
                Some(c) => out.push(c),
                None => out.push('u'),
            },
            Some(c) => out.push(c),
            None => out.push('\\'),
        }
    }
    out
}

fn unicode_escape(chars: &mut std::str::Chars) -> Option<char> {
    let rest = chars.as_str();
    let body = rest.strip_prefix('{')?;
    let end = body.find('}')?;
    let c = char::from_u32(u32::from_str_radix(&body[..end], 16).ok()?)?;
    *chars = body[end + 1..].chars();
    Some(c)
}

pub(crate) fn is_bin_shaped(s: &str) -> bool {
    s.len() > 1 && s.starts_with('T') && s[1..].bytes().all(|b| b.is_ascii_digit())
}

/// Parse epoch seconds (integer or float) or an RFC3339 timestamp.
pub fn parse_timestamp(text: &str) -> Result<f64, String> {
    let text = text.trim();
    if text.is_empty() {
        return Err("empty timestamp".into());
    }
    let value = match text.parse::<f64>() {
        Ok(v) => v,
        Err(_) => {
            let dt = DateTime::parse_from_rfc3339(text)
                .map_err(|e| format!("not epoch seconds or RFC3339 ({e}): {text:?}"))?;
            dt.timestamp() as f64 + f64::from(dt.timestamp_subsec_nanos()) * 1e-9
        }
    };
    if !value.is_finite() {
        return Err(format!("non-finite timestamp {text:?}"));
    }
    if value < 0.0 {
        return Err(format!("negative timestamp {text:?}"));
    }
    Ok(value)
}

fn malformed(line: u64, field: &str, message: impl Into<String>) -> IngestError {
    IngestError::Malformed {
        line,
        field: field.to_string(),
        message: message.into(),
    }
}

fn checked_action(line: u64, raw: &str) -> Result<String, IngestError> {
    if raw.is_empty() {
        return Err(malformed(line, "action", "empty action label"));
    }
    Ok(escape_action(raw))
}

/// Parse a whole event log. Records come back in input order.
pub fn parse_event_log<R: Read>(source: R, format: LogFormat) -> Result<Vec<EventRecord>, IngestError> {
    match format {
        LogFormat::Csv => parse_csv(source),
        LogFormat::Jsonl => parse_jsonl(source),
    }
}

fn parse_csv<R: Read>(source: R) -> Result<Vec<EventRecord>, IngestError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(source);
    let headers = reader
        .headers()
        .map_err(|e| malformed(1, "header", e.to_string()))?
        .clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| malformed(1, name, "missing column in header"))
    };
    let (user_col, action_col, ts_col) = (column("user_id")?, column("action")?, column("timestamp")?);

    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            malformed(line, "row", e.to_string())
        })?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let field = |col: usize, name: &str| {
            row.get(col)
                .ok_or_else(|| malformed(line, name, "missing value"))
        };
        let user_id = field(user_col, "user_id")?;
        if user_id.is_empty() {
            return Err(malformed(line, "user_id", "empty user id"));
        }
        let action = checked_action(line, field(action_col, "action")?)?;
        let timestamp =
            parse_timestamp(field(ts_col, "timestamp")?).map_err(|m| malformed(line, "timestamp", m))?;
        records.push(EventRecord {
            user_id: user_id.to_string(),
            action,
            timestamp,
        });
    }
    Ok(records)
}

fn json_text(value: &serde_json::Value) -> Option<String> {
    match value {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn parse_jsonl<R: Read>(source: R) -> Result<Vec<EventRecord>, IngestError> {
    let mut records = Vec::new();
    for (idx, line) in BufReader::new(source).lines().enumerate() {
        let lineno = idx as u64 + 1;
        let line = line.map_err(|e| malformed(lineno, "line", e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| malformed(lineno, "line", e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| malformed(lineno, "line", "expected a JSON object"))?;
        let get = |key: &str| {
            obj.get(key)
                .ok_or_else(|| malformed(lineno, key, "missing key"))
        };
        let user_id = json_text(get("user_id")?)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| malformed(lineno, "user_id", "expected a nonempty string"))?;
        let action_raw = get("action")?
            .as_str()
            .ok_or_else(|| malformed(lineno, "action", "expected a string"))?;
        let action = checked_action(lineno, action_raw)?;
        let timestamp = match get("timestamp")? {
            serde_json::Value::Number(n) => {
                let v = n
                    .as_f64()
                    .ok_or_else(|| malformed(lineno, "timestamp", "unrepresentable number"))?;
                parse_timestamp(&v.to_string())
            }
            serde_json::Value::String(s) => parse_timestamp(s),
            _ => Err("expected a number or string".to_string()),
        }
        .map_err(|m| malformed(lineno, "timestamp", m))?;
        records.push(EventRecord {
            user_id,
            action,
            timestamp,
        });
    }
    Ok(records)
}

/// Group records by user, sort each user chronologically (stable, so equal
/// timestamps keep input order) and drop users with fewer than
/// `min_actions` events. Output is ordered by user id.
pub fn build_user_streams(records: &[EventRecord], min_actions: usize) -> Result<Vec<UserStream>, IngestError> {
    if min_actions < 2 {
        return Err(IngestError::InvalidMinActions(min_actions));
    }
    let mut by_user: BTreeMap<&str, Vec<EventRecord>> = BTreeMap::new();
    for record in records {
        by_user
            .entry(record.user_id.as_str())
            .or_default()
            .push(record.clone());
    }
    let streams: Vec<UserStream> = by_user
        .into_iter()
        .filter(|(_, events)| events.len() >= min_actions)
        .map(|(user, mut events)| {
            events.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
            UserStream {
                user_id: user.to_string(),
                events,
            }
        })
        .collect();
    if streams.is_empty() {
        return Err(IngestError::NoUsableUsers { min_actions });
    }
    Ok(streams)
}

/// Adjacent timestamp differences within one stream (J events, J-1 values).
pub fn compute_intervals(stream: &UserStream) -> IntervalSample {
    let values = stream
        .events
        .windows(2)
        .map(|w| (w[1].timestamp - w[0].timestamp).max(0.0))
        .collect();
    IntervalSample(values)
}

/// Intervals from every stream, concatenated in stream order.
pub fn pooled_intervals(streams: &[UserStream]) -> IntervalSample {
    let mut all = IntervalSample::default();
    for stream in streams {
        all.extend(compute_intervals(stream));
    }
    all
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(user: &str, action: &str, t: f64) -> EventRecord {
        EventRecord::new(user, action, t)
    }

    #[test]
    fn csv_row_maps_fields() {
        let log = "user_id,action,timestamp\nu1,appA,1655000000\n";
        let records = parse_event_log(log.as_bytes(), LogFormat::Csv).unwrap();
        assert_eq!(records, vec![rec("u1", "appA", 1_655_000_000.0)]);
    }

    #[test]
    fn csv_bad_timestamp_names_line_and_field() {
        let log = "user_id,action,timestamp\nu1,appA,notatime\n";
        match parse_event_log(log.as_bytes(), LogFormat::Csv) {
            Err(IngestError::Malformed { line, field, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(field, "timestamp");
            }
            other => panic!("expected malformed error, got {other:?}"),
        }
    }

    #[test]
    fn csv_quoting_and_column_order() {
        let log = "timestamp,user_id,action\n1.5,u1,\"Pause Video, again\"\n";
        let records = parse_event_log(log.as_bytes(), LogFormat::Csv).unwrap();
        assert_eq!(unescape_action(&records[0].action), "Pause Video, again");
        assert_eq!(records[0].timestamp, 1.5);
    }

    #[test]
    fn csv_missing_column_is_an_error() {
        let log = "user_id,timestamp\nu1,3\n";
        assert!(matches!(
            parse_event_log(log.as_bytes(), LogFormat::Csv),
            Err(IngestError::Malformed { line: 1, .. })
        ));
    }

    #[test]
    fn jsonl_rfc3339() {
        let log = r#"{"user_id":"u1","action":"appA","timestamp":"2016-06-01T00:00:00Z"}"#;
        let records = parse_event_log(log.as_bytes(), LogFormat::Jsonl).unwrap();
        assert_eq!(records[0].timestamp, 1_464_739_200.0);

        let log = r#"{"user_id":"u1","action":"a","timestamp":"2016-06-01T09:30:00.250+09:00"}"#;
        let records = parse_event_log(log.as_bytes(), LogFormat::Jsonl).unwrap();
        assert!((records[0].timestamp - 1_464_741_000.25).abs() < 1e-6);
    }

    #[test]
    fn jsonl_numeric_timestamp_and_errors() {
        let log = "{\"user_id\":\"u1\",\"action\":\"a\",\"timestamp\":12.25}\n\n{\"user_id\":\"u1\",\"action\":\"\",\"timestamp\":1}\n";
        match parse_event_log(log.as_bytes(), LogFormat::Jsonl) {
            Err(IngestError::Malformed { line, field, .. }) => {
                assert_eq!((line, field.as_str()), (3, "action"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let first = log.lines().next().unwrap();
        let ok = parse_event_log(first.as_bytes(), LogFormat::Jsonl).unwrap();
        assert_eq!(ok[0].timestamp, 12.25);
    }

    #[test]
    fn unknown_format() {
        assert!(matches!("xml".parse::<LogFormat>(), Err(IngestError::UnknownFormat(_))));
        assert_eq!("JSONL".parse::<LogFormat>().unwrap(), LogFormat::Jsonl);
    }

    #[test]
    fn negative_and_nan_timestamps_rejected() {
        assert!(parse_timestamp("-1").is_err());
        assert!(parse_timestamp("NaN").is_err());
        assert!(parse_timestamp("inf").is_err());
    }

    #[test]
    fn min_actions_filter() {
        let mut records = Vec::new();
        for (user, n) in [("a", 12), ("b", 9), ("c", 10)] {
            for i in 0..n {
                records.push(rec(user, "x", i as f64));
            }
        }
        let streams = build_user_streams(&records, 10).unwrap();
        let lens: Vec<_> = streams.iter().map(|s| (s.user_id.as_str(), s.len())).collect();
        assert_eq!(lens, vec![("a", 12), ("c", 10)]);
    }

    #[test]
    fn sorting_is_stable() {
        let records = vec![
            rec("u", "p", 5.0),
            rec("u", "q", 1.0),
            rec("u", "r", 3.0),
            rec("u", "s", 3.0),
        ];
        let streams = build_user_streams(&records, 2).unwrap();
        let order: Vec<_> = streams[0].events.iter().map(|e| e.action.as_str()).collect();
        assert_eq!(order, vec!["q", "r", "s", "p"]);
    }

    #[test]
    fn no_usable_users() {
        let records = vec![rec("u", "p", 5.0)];
        assert!(matches!(
            build_user_streams(&records, 2),
            Err(IngestError::NoUsableUsers { min_actions: 2 })
        ));
        assert!(matches!(build_user_streams(&records, 1), Err(IngestError::InvalidMinActions(1))));
    }

    #[test]
    fn intervals_are_adjacent_differences() {
        let records: Vec<_> = [0.0, 5.0, 5.0, 65.0].iter().map(|&t| rec("u", "a", t)).collect();
        let streams = build_user_streams(&records, 2).unwrap();
        assert_eq!(compute_intervals(&streams[0]).values(), &[5.0, 0.0, 60.0]);

        let records = vec![rec("u", "a", 10.0), rec("u", "b", 10.0)];
        let streams = build_user_streams(&records, 2).unwrap();
        assert_eq!(compute_intervals(&streams[0]).values(), &[0.0]);
    }

    #[test]
    fn intervals_never_cross_users() {
        let records = vec![
            rec("a", "x", 0.0),
            rec("b", "x", 100.0),
            rec("a", "x", 1.0),
            rec("b", "x", 101.0),
        ];
        let streams = build_user_streams(&records, 2).unwrap();
        assert_eq!(pooled_intervals(&streams).values(), &[1.0, 1.0]);
    }

    #[test]
    fn escaping_examples() {
        assert_eq!(escape_action("a|b"), "a\\|b");
        assert_eq!(escape_action("Pause Video"), "Pause\\sVideo");
        assert_eq!(escape_action("T1"), "\\T1");
        assert_eq!(escape_action("Tea"), "Tea");
        assert_eq!(unescape_action("\\T1"), "T1");
        assert_eq!(escape_action("a\u{2002}b"), "a\\u{2002}b");
        assert_eq!(unescape_action("a\\u{2002}b"), "a\u{2002}b");
        assert_eq!(unescape_action("\\u{zz}"), "u{zz}");
    }

    #[test]
    fn interval_sample_validation() {
        assert!(IntervalSample::new(vec![1.0, 0.0]).is_ok());
        assert!(IntervalSample::new(vec![-1.0]).is_err());
        assert!(IntervalSample::new(vec![f64::NAN]).is_err());
    }
}
