//! Probe-data domain types and the pivot-merge transform.
//!
//! A T4-style pull probe samples two things at each timestamp: device-wide
//! global system features (one vector of `g` values) and per-application
//! local features (one vector of `n` values for each of the `m` apps running
//! at that instant). Joining those relationally would duplicate the global
//! vector once per app, costing `m * (g + n)` cells per timestamp. Pivoting
//! the app block into a single wide row first gives `g + m * n` cells: one
//! column per (local feature, app) pair, nulls where an app was not running.

use std::collections::HashMap;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TelemetryError {
    #[error("duplicate name in schema: {0}")]
    DuplicateName(String),
    #[error("empty name list: {0}")]
    EmptyNames(&'static str),
    #[error("app not in schema universe: {0}")]
    UnknownApp(String),
    #[error("app appears twice in one snapshot block: {0}")]
    DuplicateApp(String),
    #[error("value vector for {context} has length {got}, schema expects {want}")]
    LengthMismatch {
        context: String,
        got: usize,
        want: usize,
    },
    #[error("cannot merge: {0}")]
    Misaligned(String),
}

/// Milliseconds since the Unix epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(pub i64);

impl Timestamp {
    pub fn millis(self) -> i64 {
        self.0
    }
}

/// One sample of the `g` global system features for a user.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalSnapshot {
    pub user: String,
    pub t: Timestamp,
    pub values: Vec<Option<f64>>,
}

/// One app's local feature vector inside a snapshot block.
#[derive(Debug, Clone, PartialEq)]
pub struct AppRow {
    pub app: String,
    pub values: Vec<Option<f64>>,
}

/// All per-app rows observed for one (user, timestamp).
#[derive(Debug, Clone, PartialEq)]
pub struct AppSnapshotBlock {
    pub user: String,
    pub t: Timestamp,
    pub rows: Vec<AppRow>,
}

/// Column layout of the pivoted wide row: the `g` global names first, then
/// for each app in universe order the `n` local names suffixed `"{feature}_{app}"`.
#[derive(Debug, Clone)]
pub struct PivotSchema {
    global_names: Vec<String>,
    local_names: Vec<String>,
    app_universe: Vec<String>,
    app_index: HashMap<String, usize>,
    pivoted_names: Vec<String>,
}

impl PivotSchema {
    pub fn g(&self) -> usize {
        self.global_names.len()
    }

    pub fn n(&self) -> usize {
        self.local_names.len()
    }

    pub fn m(&self) -> usize {
        self.app_universe.len()
    }

    /// Total width of a pivoted row: `g + m * n`.
    pub fn pivoted_width(&self) -> usize {
        self.g() + self.m() * self.n()
    }

    /// Width of the local (pivoted app) part alone: `m * n`.
    pub fn local_width(&self) -> usize {
        self.m() * self.n()
    }

    pub fn global_names(&self) -> &[String] {
        &self.global_names
    }

    pub fn local_names(&self) -> &[String] {
        &self.local_names
    }

    pub fn app_universe(&self) -> &[String] {
        &self.app_universe
    }

    /// All `g + m * n` column names in pivoted order.
    pub fn column_names(&self) -> &[String] {
        &self.pivoted_names
    }

    pub fn app_position(&self, app: &str) -> Option<usize> {
        self.app_index.get(app).copied()
    }

    /// Offset of (app i, local feature j) inside the local part.
    fn local_offset(&self, app_pos: usize, feature: usize) -> usize {
        app_pos * self.n() + feature
    }
}

/// Builds the wide-row schema. Column order is `globalNames` then, for each
/// app in `app_universe` order, every local name suffixed with that app.
pub fn build_schema(
    global_names: Vec<String>,
    local_names: Vec<String>,
    app_universe: Vec<String>,
) -> Result<PivotSchema, TelemetryError> {
    if global_names.is_empty() {
        return Err(TelemetryError::EmptyNames("global feature names"));
    }
    if local_names.is_empty() {
        return Err(TelemetryError::EmptyNames("local feature names"));
    }
    let mut seen = HashMap::new();
    let mut check = |name: &str| -> Result<(), TelemetryError> {
        if seen.insert(name.to_string(), ()).is_some() {
            return Err(TelemetryError::DuplicateName(name.to_string()));
        }
        Ok(())
    };
    let mut pivoted_names = Vec::with_capacity(global_names.len());
    for name in &global_names {
        check(name)?;
        pivoted_names.push(name.clone());
    }
    let mut app_index = HashMap::new();
    for (i, app) in app_universe.iter().enumerate() {
        if app_index.insert(app.clone(), i).is_some() {
            return Err(TelemetryError::DuplicateName(app.clone()));
        }
    }
    // Local names must be unique among themselves; the pivoted "{f}_{app}"
    // names must also not collide with any global name.
    let mut local_seen = HashMap::new();
    for name in &local_names {
        if local_seen.insert(name.clone(), ()).is_some() {
            return Err(TelemetryError::DuplicateName(name.clone()));
        }
    }
    for app in &app_universe {
        for name in &local_names {
            let col = format!("{name}_{app}");
            check(&col)?;
            pivoted_names.push(col);
        }
    }
    Ok(PivotSchema {
        global_names,
        local_names,
        app_universe,
        app_index,
        pivoted_names,
    })
}

/// The pivoted local part of a row, still tagged with its origin so that
/// [`merge`] can verify alignment with the global snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct PivotedLocal {
    pub user: String,
    pub t: Timestamp,
    pub values: Vec<Option<f64>>,
}

impl PivotedLocal {
    /// All-null local part for a timestamp with no app block at all.
    pub fn absent(user: String, t: Timestamp, schema: &PivotSchema) -> Self {
        PivotedLocal {
            user,
            t,
            values: vec![None; schema.local_width()],
        }
    }
}

/// Full wide row: `g` global cells then `m * n` local cells, app-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PivotedRow {
    pub user: String,
    pub t: Timestamp,
    pub values: Vec<Option<f64>>,
}

/// Pivots one app snapshot block into the `m * n` local part. Apps absent
/// from the block produce all-null cells; the result does not depend on the
/// order of rows within the block.
pub fn pivot(block: &AppSnapshotBlock, schema: &PivotSchema) -> Result<PivotedLocal, TelemetryError> {
    let mut values = vec![None; schema.local_width()];
    let mut filled = vec![false; schema.m()];
    for row in &block.rows {
        let pos = schema
            .app_position(&row.app)
            .ok_or_else(|| TelemetryError::UnknownApp(row.app.clone()))?;
        if filled[pos] {
            return Err(TelemetryError::DuplicateApp(row.app.clone()));
        }
        filled[pos] = true;
        if row.values.len() != schema.n() {
            return Err(TelemetryError::LengthMismatch {
                context: format!("app {}", row.app),
                got: row.values.len(),
                want: schema.n(),
            });
        }
        for (j, v) in row.values.iter().enumerate() {
            values[schema.local_offset(pos, j)] = *v;
        }
    }
    Ok(PivotedLocal {
        user: block.user.clone(),
        t: block.t,
        values,
    })
}

/// Concatenates a global snapshot with its pivoted local part. Both sides
/// must come from the same user and timestamp.
pub fn merge(
    gsf: &GlobalSnapshot,
    local: &PivotedLocal,
    schema: &PivotSchema,
) -> Result<PivotedRow, TelemetryError> {
    if gsf.user != local.user || gsf.t != local.t {
        return Err(TelemetryError::Misaligned(format!(
            "global ({}, {}) vs local ({}, {})",
            gsf.user,
            gsf.t.millis(),
            local.user,
            local.t.millis()
        )));
    }
    if gsf.values.len() != schema.g() {
        return Err(TelemetryError::LengthMismatch {
            context: "global snapshot".to_string(),
            got: gsf.values.len(),
            want: schema.g(),
        });
    }
    if local.values.len() != schema.local_width() {
        return Err(TelemetryError::LengthMismatch {
            context: "pivoted local part".to_string(),
            got: local.values.len(),
            want: schema.local_width(),
        });
    }
    let mut values = Vec::with_capacity(schema.pivoted_width());
    values.extend_from_slice(&gsf.values);
    values.extend_from_slice(&local.values);
    Ok(PivotedRow {
        user: gsf.user.clone(),
        t: gsf.t,
        values,
    })
}

/// Cells per timestamp with the pivot transform: `g + m * n`.
pub fn size_pivoted(g: u64, n: u64, m: u64) -> u64 {
    g + m * n
}

/// Cells per timestamp for the naive relational join: `m * (g + n)`.
pub fn size_naive(g: u64, n: u64, m: u64) -> u64 {
    m * (g + n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema_2x1() -> PivotSchema {
        build_schema(
            vec!["mem".into(), "cpu".into()],
            vec!["rss".into()],
            vec!["A".into(), "B".into()],
        )
        .unwrap()
    }

    #[test]
    fn schema_column_order_and_width() {
        let s = schema_2x1();
        assert_eq!(s.column_names(), ["mem", "cpu", "rss_A", "rss_B"]);
        assert_eq!(s.pivoted_width(), 4);
    }

    #[test]
    fn paper_scale_width() {
        let g: Vec<String> = (0..128).map(|i| format!("g{i}")).collect();
        let n: Vec<String> = (0..56).map(|i| format!("l{i}")).collect();
        let m: Vec<String> = (0..55).map(|i| format!("app{i}")).collect();
        let s = build_schema(g, n, m).unwrap();
        assert_eq!(s.pivoted_width(), 3208);
    }

    #[test]
    fn empty_app_universe_is_degenerate_but_legal() {
        let s = build_schema(vec!["mem".into()], vec!["rss".into()], vec![]).unwrap();
        assert_eq!(s.pivoted_width(), 1);
        assert_eq!(s.local_width(), 0);
    }

    #[test]
    fn duplicate_names_are_rejected_with_the_offender() {
        let err = build_schema(
            vec!["mem".into(), "mem".into()],
            vec!["rss".into()],
            vec![],
        )
        .unwrap_err();
        assert_eq!(err, TelemetryError::DuplicateName("mem".into()));
        // A global name colliding with a pivoted "{f}_{app}" name is also a duplicate.
        let err = build_schema(
            vec!["rss_A".into()],
            vec!["rss".into()],
            vec!["A".into()],
        )
        .unwrap_err();
        assert_eq!(err, TelemetryError::DuplicateName("rss_A".into()));
    }

    fn block(user: &str, t: i64, rows: Vec<(&str, Vec<Option<f64>>)>) -> AppSnapshotBlock {
        AppSnapshotBlock {
            user: user.into(),
            t: Timestamp(t),
            rows: rows
                .into_iter()
                .map(|(app, values)| AppRow {
                    app: app.into(),
                    values,
                })
                .collect(),
        }
    }

    #[test]
    fn pivot_places_cells_by_schema_index() {
        let s = build_schema(
            vec!["mem".into()],
            vec!["rss".into(), "utime".into()],
            vec!["A".into(), "B".into()],
        )
        .unwrap();
        let b = block(
            "u1",
            0,
            vec![
                ("A", vec![Some(1.0), Some(2.0)]),
                ("B", vec![Some(3.0), Some(4.0)]),
            ],
        );
        let local = pivot(&b, &s).unwrap();
        assert_eq!(local.values, vec![Some(1.0), Some(2.0), Some(3.0), Some(4.0)]);
    }

    #[test]
    fn pivot_nulls_absent_apps() {
        let s = build_schema(
            vec!["mem".into()],
            vec!["rss".into(), "utime".into()],
            vec!["A".into(), "B".into()],
        )
        .unwrap();
        let b = block("u1", 0, vec![("B", vec![Some(3.0), Some(4.0)])]);
        let local = pivot(&b, &s).unwrap();
        assert_eq!(local.values, vec![None, None, Some(3.0), Some(4.0)]);
    }

    #[test]
    fn pivot_rejects_unknown_and_duplicate_apps() {
        let s = schema_2x1();
        let b = block("u1", 0, vec![("C", vec![Some(1.0)])]);
        assert_eq!(pivot(&b, &s).unwrap_err(), TelemetryError::UnknownApp("C".into()));
        let b = block(
            "u1",
            0,
            vec![("A", vec![Some(1.0)]), ("A", vec![Some(2.0)])],
        );
        assert_eq!(pivot(&b, &s).unwrap_err(), TelemetryError::DuplicateApp("A".into()));
    }

    #[test]
    fn merge_concatenates_global_then_local() {
        let s = build_schema(
            vec!["mem".into(), "cpu".into()],
            vec!["rss".into(), "utime".into()],
            vec!["A".into(), "B".into()],
        )
        .unwrap();
        let gsf = GlobalSnapshot {
            user: "u1".into(),
            t: Timestamp(5),
            values: vec![Some(10.0), Some(20.0)],
        };
        let local = PivotedLocal {
            user: "u1".into(),
            t: Timestamp(5),
            values: vec![Some(1.0), Some(2.0), Some(3.0), Some(4.0)],
        };
        let row = merge(&gsf, &local, &s).unwrap();
        assert_eq!(
            row.values,
            vec![Some(10.0), Some(20.0), Some(1.0), Some(2.0), Some(3.0), Some(4.0)]
        );
        assert_eq!(row.values.len(), s.pivoted_width());
    }

    #[test]
    fn merge_rejects_misaligned_sides() {
        let s = schema_2x1();
        let gsf = GlobalSnapshot {
            user: "u1".into(),
            t: Timestamp(5),
            values: vec![Some(10.0), Some(20.0)],
        };
        let local = PivotedLocal::absent("u2".into(), Timestamp(5), &s);
        assert!(matches!(
            merge(&gsf, &local, &s),
            Err(TelemetryError::Misaligned(_))
        ));
    }

    #[test]
    fn merge_with_absent_block_gives_null_suffix() {
        let s = schema_2x1();
        let gsf = GlobalSnapshot {
            user: "u1".into(),
            t: Timestamp(5),
            values: vec![Some(10.0), Some(20.0)],
        };
        let local = PivotedLocal::absent("u1".into(), Timestamp(5), &s);
        let row = merge(&gsf, &local, &s).unwrap();
        assert_eq!(row.values[..2], [Some(10.0), Some(20.0)]);
        assert!(row.values[2..].iter().all(|v| v.is_none()));
    }

    #[test]
    fn size_accounting_matches_paper_figures() {
        assert_eq!(size_pivoted(128, 56, 55), 3208);
        assert_eq!(size_naive(128, 56, 55), 10120);
        let ratio = size_naive(128, 56, 55) as f64 / size_pivoted(128, 56, 55) as f64;
        assert!((ratio - 3.2).abs() < 0.05);
        assert_eq!(size_pivoted(1, 1, 100), 101);
        assert_eq!(size_naive(1, 1, 100), 200);
        // Single app: pivot degenerates to a plain join.
        assert_eq!(size_pivoted(7, 3, 1), size_naive(7, 3, 1));
    }
}
