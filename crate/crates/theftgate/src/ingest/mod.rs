//! Probe/label file parsing, label alignment, frame assembly, and the
//! null-ratio column filter.
//!
//! File schemas (UTF-8 CSV, comma-separated, empty field = null):
//! - `gsf.csv`    — `user,t_ms,<globalName>...`
//! - `laf.csv`    — `user,t_ms,app,<localName>...`
//! - `labels.csv` — `user,start_ms,end_ms,action,target`
//!
//! Malformed data rows are skipped and counted in an [`IngestLedger`];
//! missing or misnamed header columns are hard errors. Telemetry in the
//! wild is dirty, and the ledger keeps the skips auditable.

pub mod frame;

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use thiserror::Error;

use crate::telemetry::{
    self, AppRow, AppSnapshotBlock, GlobalSnapshot, PivotSchema, PivotedLocal, PivotedRow,
    TelemetryError, Timestamp,
};
pub use frame::{FeatureFrame, FrameError, Labels};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{file}: missing or misnamed header column {column} (expected {expected:?})")]
    BadHeader {
        file: String,
        column: usize,
        expected: String,
    },
    #[error("schema: {0}")]
    Schema(#[from] TelemetryError),
    #[error("frame: {0}")]
    Frame(#[from] FrameError),
    #[error("null threshold {0} outside [0, 1]")]
    BadThreshold(f64),
    #[error("null filter dropped every column (threshold {0})")]
    EmptyFrame(f64),
}

/// The six theft-target categories a malicious action can aim at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TheftTarget {
    AudioRecord,
    BrowserInfo,
    Contacts,
    Gps,
    Photos,
    Url,
}

impl TheftTarget {
    pub const ALL: [TheftTarget; 6] = [
        TheftTarget::AudioRecord,
        TheftTarget::BrowserInfo,
        TheftTarget::Contacts,
        TheftTarget::Gps,
        TheftTarget::Photos,
        TheftTarget::Url,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TheftTarget::AudioRecord => "AudioRecord",
            TheftTarget::BrowserInfo => "BrowserInfo",
            TheftTarget::Contacts => "Contacts",
            TheftTarget::Gps => "GPS",
            TheftTarget::Photos => "Photos",
            TheftTarget::Url => "URL",
        }
    }

    pub fn parse(s: &str) -> Option<TheftTarget> {
        TheftTarget::ALL.iter().copied().find(|t| t.as_str() == s)
    }

    /// Stable class index, 0..6, in `ALL` order.
    pub fn index(self) -> usize {
        TheftTarget::ALL.iter().position(|t| *t == self).unwrap()
    }

    pub fn from_index(i: usize) -> Option<TheftTarget> {
        TheftTarget::ALL.get(i).copied()
    }
}

impl fmt::Display for TheftTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Row label. A target class exists if and only if the row is malicious.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RowLabel {
    Benign,
    Malicious(TheftTarget),
}

impl RowLabel {
    pub fn is_malicious(self) -> bool {
        matches!(self, RowLabel::Malicious(_))
    }

    pub fn target(self) -> Option<TheftTarget> {
        match self {
            RowLabel::Benign => None,
            RowLabel::Malicious(t) => Some(t),
        }
    }
}

/// One Moriarty session: a time interval during which the agent performed a
/// benign or malicious action on one user's device.
#[derive(Debug, Clone, PartialEq)]
pub struct MoriartyLabel {
    pub user: String,
    pub session_start: Timestamp,
    pub session_end: Timestamp,
    pub label: RowLabel,
}

/// Skip-and-count record of everything a reader tolerated.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct IngestLedger {
    pub malformed_rows: usize,
    pub warnings: Vec<String>,
}

const MAX_WARNINGS: usize = 32;

impl IngestLedger {
    fn skip(&mut self, msg: String) {
        self.malformed_rows += 1;
        self.warn(msg);
    }

    fn warn(&mut self, msg: String) {
        if self.warnings.len() < MAX_WARNINGS {
            self.warnings.push(msg);
        }
    }

    pub fn merge(&mut self, other: IngestLedger) {
        self.malformed_rows += other.malformed_rows;
        for w in other.warnings {
            self.warn(w);
        }
    }
}

pub struct GsfFile {
    pub global_names: Vec<String>,
    pub snapshots: Vec<GlobalSnapshot>,
    pub ledger: IngestLedger,
}

pub struct LafFile {
    pub local_names: Vec<String>,
    pub blocks: Vec<AppSnapshotBlock>,
    pub apps_seen: BTreeSet<String>,
    pub ledger: IngestLedger,
}

pub struct LabelFile {
    pub labels: Vec<MoriartyLabel>,
    pub ledger: IngestLedger,
}

fn check_header(
    file: &str,
    header: &csv::StringRecord,
    fixed: &[&str],
) -> Result<(), IngestError> {
    for (i, want) in fixed.iter().enumerate() {
        if header.get(i) != Some(*want) {
            return Err(IngestError::BadHeader {
                file: file.to_string(),
                column: i,
                expected: (*want).to_string(),
            });
        }
    }
    if header.len() <= fixed.len() && file != "labels.csv" {
        return Err(IngestError::BadHeader {
            file: file.to_string(),
            column: fixed.len(),
            expected: "at least one feature column".to_string(),
        });
    }
    Ok(())
}

fn parse_values<'a, I: Iterator<Item = &'a str>>(fields: I) -> Result<Vec<Option<f64>>, String> {
    let mut out = Vec::new();
    for field in fields {
        if field.is_empty() {
            out.push(None);
        } else {
            match field.parse::<f64>() {
                Ok(v) => out.push(Some(v)),
                Err(_) => return Err(format!("unparsable numeric {field:?}")),
            }
        }
    }
    Ok(out)
}

/// Reads a global-system-feature file. Feature names come from the header.
pub fn read_gsf(path: &Path) -> Result<GsfFile, IngestError> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header = rdr.headers()?.clone();
    check_header("gsf.csv", &header, &["user", "t_ms"])?;
    let global_names: Vec<String> = header.iter().skip(2).map(|s| s.to_string()).collect();
    let mut snapshots = Vec::new();
    let mut ledger = IngestLedger::default();
    let mut last_t: HashMap<String, i64> = HashMap::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != global_names.len() + 2 {
            ledger.skip(format!("gsf row {line}: wrong field count"));
            continue;
        }
        let user = record[0].to_string();
        let t = match record[1].parse::<i64>() {
            Ok(v) if v >= 0 => v,
            _ => {
                ledger.skip(format!("gsf row {line}: bad t_ms {:?}", &record[1]));
                continue;
            }
        };
        let values = match parse_values(record.iter().skip(2)) {
            Ok(v) => v,
            Err(msg) => {
                ledger.skip(format!("gsf row {line}: {msg}"));
                continue;
            }
        };
        if let Some(&prev) = last_t.get(&user) {
            if t < prev {
                ledger.warn(format!("gsf row {line}: timestamp regressed for user {user}"));
            }
        }
        last_t.insert(user.clone(), t);
        snapshots.push(GlobalSnapshot {
            user,
            t: Timestamp(t),
            values,
        });
    }
    Ok(GsfFile {
        global_names,
        snapshots,
        ledger,
    })
}

/// Reads a local-app-feature file, grouping consecutive rows that share
/// (user, t_ms) into one snapshot block.
pub fn read_laf(path: &Path) -> Result<LafFile, IngestError> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header = rdr.headers()?.clone();
    check_header("laf.csv", &header, &["user", "t_ms", "app"])?;
    let local_names: Vec<String> = header.iter().skip(3).map(|s| s.to_string()).collect();
    let mut blocks: Vec<AppSnapshotBlock> = Vec::new();
    let mut apps_seen = BTreeSet::new();
    let mut ledger = IngestLedger::default();
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != local_names.len() + 3 {
            ledger.skip(format!("laf row {line}: wrong field count"));
            continue;
        }
        let user = record[0].to_string();
        let t = match record[1].parse::<i64>() {
            Ok(v) if v >= 0 => v,
            _ => {
                ledger.skip(format!("laf row {line}: bad t_ms {:?}", &record[1]));
                continue;
            }
        };
        let app = record[2].to_string();
        if app.is_empty() {
            ledger.skip(format!("laf row {line}: empty app name"));
            continue;
        }
        let values = match parse_values(record.iter().skip(3)) {
            Ok(v) => v,
            Err(msg) => {
                ledger.skip(format!("laf row {line}: {msg}"));
                continue;
            }
        };
        apps_seen.insert(app.clone());
        let same_block = blocks
            .last()
            .map(|b| b.user == user && b.t.millis() == t)
            .unwrap_or(false);
        if same_block {
            let block = blocks.last_mut().unwrap();
            if block.rows.iter().any(|r| r.app == app) {
                ledger.skip(format!("laf row {line}: duplicate app {app} in block"));
                continue;
            }
            block.rows.push(AppRow { app, values });
        } else {
            blocks.push(AppSnapshotBlock {
                user,
                t: Timestamp(t),
                rows: vec![AppRow { app, values }],
            });
        }
    }
    Ok(LafFile {
        local_names,
        blocks,
        apps_seen,
        ledger,
    })
}

/// Reads a Moriarty session-label file.
pub fn read_labels(path: &Path) -> Result<LabelFile, IngestError> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header = rdr.headers()?.clone();
    check_header(
        "labels.csv",
        &header,
        &["user", "start_ms", "end_ms", "action", "target"],
    )?;
    let mut labels = Vec::new();
    let mut ledger = IngestLedger::default();
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != 5 {
            ledger.skip(format!("label row {line}: wrong field count"));
            continue;
        }
        let user = record[0].to_string();
        let (start, end) = match (record[1].parse::<i64>(), record[2].parse::<i64>()) {
            (Ok(s), Ok(e)) if s >= 0 && s <= e => (s, e),
            _ => {
                ledger.skip(format!("label row {line}: bad session interval"));
                continue;
            }
        };
        let label = match &record[3] {
            "benign" => {
                if !record[4].is_empty() {
                    ledger.skip(format!("label row {line}: benign session with a target"));
                    continue;
                }
                RowLabel::Benign
            }
            "malicious" => match TheftTarget::parse(&record[4]) {
                Some(t) => RowLabel::Malicious(t),
                None => {
                    ledger.skip(format!("label row {line}: bad target {:?}", &record[4]));
                    continue;
                }
            },
            other => {
                ledger.skip(format!("label row {line}: bad action {other:?}"));
                continue;
            }
        };
        labels.push(MoriartyLabel {
            user,
            session_start: Timestamp(start),
            session_end: Timestamp(end),
            label,
        });
    }
    Ok(LabelFile { labels, ledger })
}

/// Labels each pivoted row against the Moriarty sessions of its user.
///
/// A row at time `t` is malicious with target `c` when `t` falls inside
/// `[session_start - slack, session_end + slack]` (inclusive) of a malicious
/// session; overlapping malicious sessions resolve to the one whose start is
/// nearest to `t`. Everything else — rows inside benign sessions and rows
/// outside all sessions alike — is benign.
pub fn join_labels(
    rows: &[PivotedRow],
    schema: &PivotSchema,
    labels: &[MoriartyLabel],
    slack_ms: i64,
) -> Result<FeatureFrame, FrameError> {
    let mut by_user: HashMap<&str, Vec<&MoriartyLabel>> = HashMap::new();
    for l in labels {
        if l.label.is_malicious() {
            by_user.entry(l.user.as_str()).or_default().push(l);
        }
    }
    for sessions in by_user.values_mut() {
        sessions.sort_by_key(|l| l.session_start.millis());
    }
    let mut frame = FeatureFrame::new(schema.column_names().to_vec())?;
    for row in rows {
        let t = row.t.millis();
        let mut best: Option<(i64, &MoriartyLabel)> = None;
        if let Some(sessions) = by_user.get(row.user.as_str()) {
            for s in sessions.iter() {
                if s.session_start.millis() - slack_ms > t {
                    break;
                }
                if t <= s.session_end.millis() + slack_ms {
                    let dist = (t - s.session_start.millis()).abs();
                    let closer = match best {
                        None => true,
                        Some((d, _)) => dist < d,
                    };
                    if closer {
                        best = Some((dist, s));
                    }
                }
            }
        }
        let label = match best {
            Some((_, s)) => s.label,
            None => RowLabel::Benign,
        };
        frame.push_row(row.user.clone(), row.t, Some(label), &row.values)?;
    }
    Ok(frame)
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DroppedColumn {
    pub name: String,
    pub null_fraction: f64,
}

/// Drops every column whose null fraction is strictly greater than
/// `max_null_fraction`. Row count is unchanged.
pub fn null_filter(
    frame: &FeatureFrame,
    max_null_fraction: f64,
) -> Result<(FeatureFrame, Vec<DroppedColumn>), IngestError> {
    if !(0.0..=1.0).contains(&max_null_fraction) {
        return Err(IngestError::BadThreshold(max_null_fraction));
    }
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for (i, name) in frame.columns().iter().enumerate() {
        let fraction = frame.null_fraction(i);
        if fraction > max_null_fraction {
            dropped.push(DroppedColumn {
                name: name.clone(),
                null_fraction: fraction,
            });
        } else {
            kept.push(name.clone());
        }
    }
    if kept.is_empty() {
        return Err(IngestError::EmptyFrame(max_null_fraction));
    }
    Ok((frame.select_columns(&kept)?, dropped))
}

/// Everything the full ingest path produces.
pub struct IngestOutcome {
    pub frame: FeatureFrame,
    pub schema: PivotSchema,
    pub dropped: Vec<DroppedColumn>,
    pub ledger: IngestLedger,
}

/// Assembles a labeled frame from in-memory records: builds the schema
/// (app universe = all apps seen, sorted), pivots each block, merges with
/// the matching global snapshot, and joins labels.
pub fn assemble(
    global_names: Vec<String>,
    local_names: Vec<String>,
    snapshots: &[GlobalSnapshot],
    blocks: Vec<AppSnapshotBlock>,
    labels: &[MoriartyLabel],
    slack_ms: i64,
) -> Result<(FeatureFrame, PivotSchema, IngestLedger), IngestError> {
    let mut ledger = IngestLedger::default();
    let universe: BTreeSet<String> = blocks
        .iter()
        .flat_map(|b| b.rows.iter().map(|r| r.app.clone()))
        .collect();
    let schema = telemetry::build_schema(
        global_names,
        local_names,
        universe.into_iter().collect(),
    )?;
    // Index blocks by (user, t); non-adjacent duplicates merge app-wise.
    let mut by_key: HashMap<(String, i64), AppSnapshotBlock> = HashMap::new();
    for block in blocks {
        let key = (block.user.clone(), block.t.millis());
        match by_key.get_mut(&key) {
            None => {
                by_key.insert(key, block);
            }
            Some(existing) => {
                for row in block.rows {
                    if existing.rows.iter().any(|r| r.app == row.app) {
                        ledger.skip(format!(
                            "duplicate app {} at ({}, {})",
                            row.app, existing.user, existing.t.millis()
                        ));
                    } else {
                        existing.rows.push(row);
                    }
                }
            }
        }
    }
    let mut matched = 0usize;
    let mut rows = Vec::with_capacity(snapshots.len());
    for snap in snapshots {
        let key = (snap.user.clone(), snap.t.millis());
        let local = match by_key.get(&key) {
            Some(block) => {
                matched += 1;
                telemetry::pivot(block, &schema)?
            }
            None => PivotedLocal::absent(snap.user.clone(), snap.t, &schema),
        };
        rows.push(telemetry::merge(snap, &local, &schema)?);
    }
    if matched < by_key.len() {
        ledger.warn(format!(
            "{} app block(s) had no matching global snapshot",
            by_key.len() - matched
        ));
    }
    let frame = join_labels(&rows, &schema, labels, slack_ms)?;
    Ok((frame, schema, ledger))
}

/// Full file-based ingest: read the three CSVs, assemble, null-filter.
pub fn ingest_files(
    gsf_path: &Path,
    laf_path: &Path,
    labels_path: &Path,
    slack_ms: i64,
    null_threshold: f64,
) -> Result<IngestOutcome, IngestError> {
    let gsf = read_gsf(gsf_path)?;
    let laf = read_laf(laf_path)?;
    let label_file = read_labels(labels_path)?;
    let mut ledger = gsf.ledger;
    ledger.merge(laf.ledger);
    ledger.merge(label_file.ledger);
    let (frame, schema, assemble_ledger) = assemble(
        gsf.global_names,
        laf.local_names,
        &gsf.snapshots,
        laf.blocks,
        &label_file.labels,
        slack_ms,
    )?;
    ledger.merge(assemble_ledger);
    let (frame, dropped) = null_filter(&frame, null_threshold)?;
    Ok(IngestOutcome {
        frame,
        schema,
        dropped,
        ledger,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;
    use tempfile::tempdir;

    fn write_file(dir: &Path, name: &str, contents: &str) -> std::path::PathBuf {
        let path = dir.join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        path
    }

    #[test]
    fn gsf_trailing_empty_field_is_null() {
        let dir = tempdir().unwrap();
        let path = write_file(
            dir.path(),
            "gsf.csv",
            "user,t_ms,mem,cpu\nu1,1451606400000,512.0,\n",
        );
        let gsf = read_gsf(&path).unwrap();
        assert_eq!(gsf.snapshots.len(), 1);
        assert_eq!(gsf.snapshots[0].values, vec![Some(512.0), None]);
        assert_eq!(gsf.ledger.malformed_rows, 0);
    }

    #[test]
    fn gsf_missing_header_is_hard_error_and_bad_rows_are_counted() {
        let dir = tempdir().unwrap();
        let bad_header = write_file(dir.path(), "bad.csv", "usr,t_ms,mem\nu1,0,1\n");
        assert!(matches!(
            read_gsf(&bad_header),
            Err(IngestError::BadHeader { .. })
        ));
        let bad_rows = write_file(
            dir.path(),
            "gsf.csv",
            "user,t_ms,mem\nu1,0,1.0\nu1,5000,oops\nu1,notatime,2.0\n",
        );
        let gsf = read_gsf(&bad_rows).unwrap();
        assert_eq!(gsf.snapshots.len(), 1);
        assert_eq!(gsf.ledger.malformed_rows, 2);
    }

    #[test]
    fn laf_groups_consecutive_rows_into_blocks() {
        let dir = tempdir().unwrap();
        let path = write_file(
            dir.path(),
            "laf.csv",
            "user,t_ms,app,rss\nu1,0,A,1.0\nu1,0,B,2.0\nu1,5000,A,3.0\n",
        );
        let laf = read_laf(&path).unwrap();
        assert_eq!(laf.blocks.len(), 2);
        assert_eq!(laf.blocks[0].rows.len(), 2);
        assert_eq!(laf.blocks[1].rows.len(), 1);
        assert_eq!(
            laf.apps_seen.iter().cloned().collect::<Vec<_>>(),
            vec!["A".to_string(), "B".to_string()]
        );
    }

    #[test]
    fn label_rows_parse_and_enforce_target_rules() {
        let dir = tempdir().unwrap();
        let path = write_file(
            dir.path(),
            "labels.csv",
            "user,start_ms,end_ms,action,target\n\
             u1,1000,6000,malicious,Photos\n\
             u1,9000,9500,benign,\n\
             u1,10000,10500,malicious,NotAClass\n\
             u1,11000,10000,malicious,GPS\n",
        );
        let file = read_labels(&path).unwrap();
        assert_eq!(file.labels.len(), 2);
        assert_eq!(
            file.labels[0],
            MoriartyLabel {
                user: "u1".into(),
                session_start: Timestamp(1000),
                session_end: Timestamp(6000),
                label: RowLabel::Malicious(TheftTarget::Photos),
            }
        );
        assert_eq!(file.labels[1].label, RowLabel::Benign);
        assert_eq!(file.ledger.malformed_rows, 2);
    }

    fn one_col_schema() -> PivotSchema {
        telemetry::build_schema(vec!["g0".into()], vec!["l0".into()], vec!["A".into()]).unwrap()
    }

    fn row_at(user: &str, t: i64) -> PivotedRow {
        PivotedRow {
            user: user.into(),
            t: Timestamp(t),
            values: vec![Some(1.0), Some(2.0)],
        }
    }

    fn malicious(user: &str, start: i64, end: i64, target: TheftTarget) -> MoriartyLabel {
        MoriartyLabel {
            user: user.into(),
            session_start: Timestamp(start),
            session_end: Timestamp(end),
            label: RowLabel::Malicious(target),
        }
    }

    #[test]
    fn join_labels_containment_and_inclusive_slack_boundary() {
        let schema = one_col_schema();
        let labels = vec![malicious("u1", 1000, 6000, TheftTarget::Photos)];
        let rows = vec![
            row_at("u1", 3000),   // inside
            row_at("u1", 11000),  // == end + slack, inclusive
            row_at("u1", 11001),  // just past
            row_at("u2", 3000),   // other user
        ];
        let frame = join_labels(&rows, &schema, &labels, 5000).unwrap();
        assert_eq!(
            frame.label(0),
            Some(RowLabel::Malicious(TheftTarget::Photos))
        );
        assert_eq!(
            frame.label(1),
            Some(RowLabel::Malicious(TheftTarget::Photos))
        );
        assert_eq!(frame.label(2), Some(RowLabel::Benign));
        assert_eq!(frame.label(3), Some(RowLabel::Benign));
    }

    #[test]
    fn join_labels_overlap_resolves_to_nearest_start() {
        let schema = one_col_schema();
        let labels = vec![
            malicious("u1", 0, 20000, TheftTarget::Gps),
            malicious("u1", 9000, 12000, TheftTarget::Url),
        ];
        let rows = vec![row_at("u1", 10000), row_at("u1", 2000)];
        let frame = join_labels(&rows, &schema, &labels, 0).unwrap();
        // t=10000: |10000-9000| < |10000-0| → Url session wins.
        assert_eq!(frame.label(0), Some(RowLabel::Malicious(TheftTarget::Url)));
        assert_eq!(frame.label(1), Some(RowLabel::Malicious(TheftTarget::Gps)));
    }

    #[test]
    fn join_labels_benign_sessions_collapse_to_benign() {
        let schema = one_col_schema();
        let labels = vec![MoriartyLabel {
            user: "u1".into(),
            session_start: Timestamp(0),
            session_end: Timestamp(10000),
            label: RowLabel::Benign,
        }];
        let frame = join_labels(&[row_at("u1", 5000)], &schema, &labels, 5000).unwrap();
        assert_eq!(frame.label(0), Some(RowLabel::Benign));
    }

    fn frame_with_null_column(nulls_in_col0: usize, rows: usize) -> FeatureFrame {
        let mut f = FeatureFrame::new(vec!["a".into(), "b".into()]).unwrap();
        for r in 0..rows {
            let a = if r < nulls_in_col0 { None } else { Some(1.0) };
            f.push_row(
                "u1".into(),
                Timestamp(r as i64 * 5000),
                Some(RowLabel::Benign),
                &[a, Some(2.0)],
            )
            .unwrap();
        }
        f
    }

    #[test]
    fn null_filter_uses_strict_inequality() {
        // 8/10 nulls at threshold 0.70 → dropped.
        let f = frame_with_null_column(8, 10);
        let (kept, dropped) = null_filter(&f, 0.70).unwrap();
        assert_eq!(kept.columns(), ["b"]);
        assert_eq!(dropped.len(), 1);
        assert_eq!(dropped[0].name, "a");
        assert!((dropped[0].null_fraction - 0.8).abs() < 1e-12);
        // Exactly 7/10 nulls at threshold 0.70 → retained.
        let f = frame_with_null_column(7, 10);
        let (kept, dropped) = null_filter(&f, 0.70).unwrap();
        assert_eq!(kept.columns(), ["a", "b"]);
        assert!(dropped.is_empty());
    }

    #[test]
    fn null_filter_is_idempotent_and_preserves_rows() {
        let f = frame_with_null_column(8, 10);
        let (once, _) = null_filter(&f, 0.70).unwrap();
        let (twice, dropped) = null_filter(&once, 0.70).unwrap();
        assert_eq!(once, twice);
        assert!(dropped.is_empty());
        assert_eq!(once.n_rows(), f.n_rows());
    }

    #[test]
    fn null_filter_erroring_paths() {
        let f = frame_with_null_column(10, 10);
        let all_null = f.select_columns(&["a".to_string()]).unwrap();
        assert!(matches!(
            null_filter(&all_null, 0.5),
            Err(IngestError::EmptyFrame(_))
        ));
        assert!(matches!(
            null_filter(&f, 1.5),
            Err(IngestError::BadThreshold(_))
        ));
    }

    #[test]
    fn assemble_aligns_blocks_and_null_fills_missing_ones() {
        let snapshots = vec![
            GlobalSnapshot {
                user: "u1".into(),
                t: Timestamp(0),
                values: vec![Some(10.0)],
            },
            GlobalSnapshot {
                user: "u1".into(),
                t: Timestamp(5000),
                values: vec![Some(20.0)],
            },
        ];
        let blocks = vec![AppSnapshotBlock {
            user: "u1".into(),
            t: Timestamp(0),
            rows: vec![AppRow {
                app: "A".into(),
                values: vec![Some(1.0)],
            }],
        }];
        let (frame, schema, ledger) = assemble(
            vec!["g0".into()],
            vec!["l0".into()],
            &snapshots,
            blocks,
            &[],
            5000,
        )
        .unwrap();
        assert_eq!(schema.column_names(), ["g0", "l0_A"]);
        assert_eq!(frame.n_rows(), 2);
        assert_eq!(frame.get(0, 1), Some(1.0));
        assert_eq!(frame.get(1, 1), None);
        assert_eq!(ledger.malformed_rows, 0);
    }
}
