//! Deterministic generator of SherLock-like labeled telemetry.
//!
//! Emits exactly the ingest CSV schemas (or an assembled in-memory frame)
//! with controllable scale, class imbalance, null density, and
//! benign/malicious separation. Probes tick every 5 seconds per user.
//! Malicious Moriarty sessions span a few consecutive probes; the generator
//! perturbs the feature rows that label alignment will mark malicious under
//! the configured slack, so labels and signal coincide.
//!
//! Informative features are class-conditional Gaussians: a malicious row's
//! active features are mean-shifted by `(1 - overlap) * separation_sigma`
//! pooled standard deviations (`overlap` 1 means identical distributions).
//! A detection core is shifted for every malicious row; each target class
//! additionally perturbs its own distinct feature subset, which is what
//! makes the second stage learnable.

use std::collections::BTreeSet;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{
    self, FeatureFrame, IngestError, MoriartyLabel, RowLabel, TheftTarget,
};
use crate::seed::rng_for;
use crate::telemetry::{
    AppRow, AppSnapshotBlock, GlobalSnapshot, PivotSchema, Timestamp,
};

/// T4-style probe period.
pub const PROBE_PERIOD_MS: i64 = 5000;

/// 2016-01-01T00:00:00Z, the quarter the emulated collection mimics.
const STREAM_START_MS: i64 = 1_451_606_400_000;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("infeasible config: {0}")]
    Infeasible(String),
    #[error("ingest: {0}")]
    Ingest(#[from] IngestError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub users: usize,
    pub rows_per_user: usize,
    /// Global feature count.
    pub g: usize,
    /// Local (per-app) feature count.
    pub n: usize,
    /// Apps in the universe (all run at every probe).
    pub app_count: usize,
    /// Benign:malicious row ratio (90 means 1 malicious per 90 benign).
    pub imbalance_ratio: f64,
    pub null_fraction: f64,
    /// 1.0 = identical class distributions (no signal); 0.0 = full
    /// separation.
    pub overlap: f64,
    /// Informative feature count (detection core + per-class subsets).
    pub informative: usize,
    /// Mean separation, in pooled standard deviations, at overlap 0.
    pub separation_sigma: f64,
    /// Mixture over the six theft-target classes; must sum to 1.
    pub target_mix: [f64; 6],
    /// Label slack the downstream ingest will use; the generator perturbs
    /// exactly the rows that will be labeled malicious under it.
    pub label_slack_ms: i64,
    /// Probes spanned by a malicious session before slack widening.
    pub session_probes: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            users: 3,
            rows_per_user: 5000,
            g: 16,
            n: 8,
            app_count: 6,
            imbalance_ratio: 90.0,
            null_fraction: 0.2,
            overlap: 0.2,
            informative: 24,
            separation_sigma: 3.0,
            target_mix: [1.0 / 6.0; 6],
            label_slack_ms: PROBE_PERIOD_MS,
            session_probes: 3,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |msg: String| Err(SynthError::Invalid(msg));
        if self.users == 0 || self.rows_per_user == 0 {
            return bad("users and rows_per_user must be positive".into());
        }
        if self.g == 0 || self.n == 0 || self.app_count == 0 {
            return bad("g, n and app_count must be positive".into());
        }
        if self.imbalance_ratio <= 0.0 {
            return bad("imbalance_ratio must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.null_fraction) {
            return bad("null_fraction must lie in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.overlap) {
            return bad("overlap must lie in [0, 1]".into());
        }
        if self.separation_sigma < 0.0 {
            return bad("separation_sigma must be non-negative".into());
        }
        if self.session_probes == 0 {
            return bad("session_probes must be positive".into());
        }
        if self.label_slack_ms < 0 {
            return bad("label_slack_ms must be non-negative".into());
        }
        let width = self.g + self.app_count * self.n;
        if self.informative > width {
            return Err(SynthError::Infeasible(format!(
                "informative feature count {} exceeds pivoted width {width}",
                self.informative
            )));
        }
        if self.informative < 7 {
            return bad("informative must be at least 7 (core + one per class)".into());
        }
        let mix_sum: f64 = self.target_mix.iter().sum();
        if self.target_mix.iter().any(|&w| w < 0.0) || (mix_sum - 1.0).abs() > 1e-9 {
            return bad("target_mix must be non-negative and sum to 1".into());
        }
        Ok(())
    }

    fn slack_probes(&self) -> usize {
        (self.label_slack_ms / PROBE_PERIOD_MS) as usize
    }
}

/// Ground truth the generator worked from, for oracles and audits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorTruth {
    pub informative_columns: Vec<String>,
    pub detection_core: Vec<String>,
    /// Per theft-target class (in `TheftTarget::ALL` order), the features
    /// only that class perturbs.
    pub class_columns: Vec<Vec<String>>,
    /// Realized mean shift in pooled-σ units: `(1-overlap)*separation_sigma`.
    pub mean_shift_sigma: f64,
    pub malicious_rows: usize,
    pub total_rows: usize,
}

pub struct SynthOutput {
    pub global_names: Vec<String>,
    pub local_names: Vec<String>,
    pub snapshots: Vec<GlobalSnapshot>,
    pub blocks: Vec<AppSnapshotBlock>,
    pub labels: Vec<MoriartyLabel>,
    pub truth: GeneratorTruth,
}

const GLOBAL_POOL: &[&str] = &[
    "cpu_user",
    "cpu_system",
    "memfree",
    "memused",
    "traffic_totalrxbytes",
    "traffic_totaltxbytes",
    "traffic_totalrxpackets",
    "traffic_totaltxpackets",
    "totalmemory_used_size",
    "totalmemory_freesize",
    "io_interrupts",
    "ctx_switches",
    "wifi_rssi",
    "wifi_linkspeed",
    "battery_level",
    "battery_temp",
    "procs_running",
    "procs_blocked",
    "pgfault",
    "pgmajfault",
    "swapfree",
    "swapused",
    "uptime",
    "loadavg_one",
];

const LOCAL_POOL: &[&str] = &[
    "rss",
    "vsize",
    "utime",
    "stime",
    "num_threads",
    "dalvikprivatedirty",
    "dalvikpss",
    "otherpss",
    "otherprivatedirty",
    "importance",
    "lru",
    "cutime",
];

const APP_POOL: &[&str] = &[
    "Moriarty",
    "SherLock",
    "Chrome",
    "WhatsApp",
    "Hangouts",
    "Gmail",
    "Maps",
    "YouTube",
    "Facebook",
    "Spotify",
    "Camera",
    "Calendar",
];

fn names_from_pool(pool: &[&str], count: usize, fallback: &str) -> Vec<String> {
    (0..count)
        .map(|i| {
            pool.get(i)
                .map(|s| s.to_string())
                .unwrap_or_else(|| format!("{fallback}{i:03}"))
        })
        .collect()
}

/// Box–Muller standard normal; consumes exactly two uniforms.
fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen();
    let u2: f64 = rng.gen();
    (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// One user's session plan: for each session, the index of its first probe,
/// its probe count, and its target class.
struct SessionPlan {
    sessions: Vec<(usize, usize, TheftTarget)>,
    /// Per-row class for the rows that label joining will mark malicious.
    row_class: Vec<Option<TheftTarget>>,
}

fn plan_sessions(
    config: &SynthConfig,
    quota: usize,
    rng: &mut ChaCha8Rng,
) -> Result<SessionPlan, SynthError> {
    let rows = config.rows_per_user;
    let slack = config.slack_probes();
    let window_base = config.session_probes + 2 * slack;
    // Session count and per-session probe lengths that meet the quota.
    let count = ((quota as f64 / window_base as f64).round() as usize).max(1);
    let probes_total = quota.saturating_sub(count * 2 * slack).max(count);
    let base = probes_total / count;
    let extra = probes_total % count;
    let lengths: Vec<usize> = (0..count)
        .map(|i| base + usize::from(i < extra))
        .collect();
    let longest_window = lengths.iter().max().unwrap() + 2 * slack;
    let segment = rows / count;
    if segment < longest_window + 2 {
        return Err(SynthError::Infeasible(format!(
            "rows_per_user {rows} cannot hold {count} malicious session(s) of window {longest_window}"
        )));
    }
    let mut sessions = Vec::with_capacity(count);
    let mut row_class = vec![None; rows];
    let mix_cdf: Vec<f64> = config
        .target_mix
        .iter()
        .scan(0.0, |acc, w| {
            *acc += w;
            Some(*acc)
        })
        .collect();
    for (i, &probes) in lengths.iter().enumerate() {
        let window = probes + 2 * slack;
        let jitter_room = segment - window - 1;
        let jitter = if jitter_room > 0 {
            rng.gen_range(0..jitter_room)
        } else {
            0
        };
        let window_start = i * segment + jitter;
        let first_probe = window_start + slack;
        let draw: f64 = rng.gen();
        let class_idx = mix_cdf.iter().position(|&c| draw <= c).unwrap_or(5);
        let target = TheftTarget::ALL[class_idx];
        for k in window_start..window_start + window {
            row_class[k] = Some(target);
        }
        sessions.push((first_probe, probes, target));
    }
    Ok(SessionPlan {
        sessions,
        row_class,
    })
}

/// Which informative columns each row class activates.
struct SignalMap {
    /// Per pivoted column: None = noise, Some(None) = detection core,
    /// Some(Some(c)) = only class c shifts it.
    roles: Vec<Option<Option<usize>>>,
    shift: f64,
    mu: Vec<f64>,
    sigma: Vec<f64>,
}

impl SignalMap {
    fn build(config: &SynthConfig, schema: &PivotSchema) -> SignalMap {
        let width = schema.pivoted_width();
        let mut style_rng = rng_for(config.seed, 1);
        let mu: Vec<f64> = (0..width).map(|_| style_rng.gen_range(10.0..500.0)).collect();
        let sigma: Vec<f64> = (0..width).map(|_| style_rng.gen_range(1.0..50.0)).collect();
        let mut pick_rng = rng_for(config.seed, 2);
        let mut chosen =
            rand::seq::index::sample(&mut pick_rng, width, config.informative).into_vec();
        chosen.sort_unstable();
        let core_len = config.informative.div_ceil(2).max(1);
        let mut roles = vec![None; width];
        for (i, &col) in chosen.iter().enumerate() {
            if i < core_len {
                roles[col] = Some(None);
            } else {
                roles[col] = Some(Some((i - core_len) % 6));
            }
        }
        SignalMap {
            roles,
            shift: (1.0 - config.overlap) * config.separation_sigma,
            mu,
            sigma,
        }
    }

    fn cell(&self, col: usize, class: Option<TheftTarget>, rng: &mut ChaCha8Rng) -> f64 {
        let z = normal(rng);
        let shifted = match (self.roles[col], class) {
            (Some(None), Some(_)) => true,
            (Some(Some(c)), Some(target)) => c == target.index(),
            _ => false,
        };
        let offset = if shifted { self.shift } else { 0.0 };
        self.mu[col] + self.sigma[col] * (z + offset)
    }
}

struct UserStream {
    snapshots: Vec<GlobalSnapshot>,
    blocks: Vec<AppSnapshotBlock>,
    labels: Vec<MoriartyLabel>,
    malicious_rows: usize,
}

fn generate_user(
    config: &SynthConfig,
    schema: &PivotSchema,
    signal: &SignalMap,
    user_idx: usize,
    quota: usize,
) -> Result<UserStream, SynthError> {
    let user = format!("u{user_idx:02}");
    let mut rng = rng_for(config.seed, 1000 + user_idx as u64);
    let plan = plan_sessions(config, quota, &mut rng)?;
    let g = schema.g();
    let n = schema.n();
    let t_at = |k: usize| Timestamp(STREAM_START_MS + k as i64 * PROBE_PERIOD_MS);
    let mut snapshots = Vec::with_capacity(config.rows_per_user);
    let mut blocks = Vec::with_capacity(config.rows_per_user);
    for k in 0..config.rows_per_user {
        let class = plan.row_class[k];
        let t = t_at(k);
        let mut global = Vec::with_capacity(g);
        for col in 0..g {
            let v = signal.cell(col, class, &mut rng);
            let null = rng.gen::<f64>() < config.null_fraction;
            global.push(if null { None } else { Some(v) });
        }
        snapshots.push(GlobalSnapshot {
            user: user.clone(),
            t,
            values: global,
        });
        let mut rows = Vec::with_capacity(schema.m());
        for (a, app) in schema.app_universe().iter().enumerate() {
            let mut values = Vec::with_capacity(n);
            for j in 0..n {
                let col = g + a * n + j;
                let v = signal.cell(col, class, &mut rng);
                let null = rng.gen::<f64>() < config.null_fraction;
                values.push(if null { None } else { Some(v) });
            }
            rows.push(AppRow {
                app: app.clone(),
                values,
            });
        }
        blocks.push(AppSnapshotBlock {
            user: user.clone(),
            t,
            rows,
        });
    }
    let mut labels = Vec::new();
    for &(first_probe, probes, target) in &plan.sessions {
        labels.push(MoriartyLabel {
            user: user.clone(),
            session_start: t_at(first_probe),
            session_end: t_at(first_probe + probes - 1),
            label: RowLabel::Malicious(target),
        });
        // A benign Moriarty session just before the window start; benign
        // sessions never affect row labels but exercise the parse path.
        if first_probe > config.slack_probes() + 1 {
            let b = first_probe - config.slack_probes() - 1;
            labels.push(MoriartyLabel {
                user: user.clone(),
                session_start: t_at(b),
                session_end: t_at(b),
                label: RowLabel::Benign,
            });
        }
    }
    labels.sort_by_key(|l| l.session_start.millis());
    Ok(UserStream {
        snapshots,
        blocks,
        labels,
        malicious_rows: plan.row_class.iter().filter(|c| c.is_some()).count(),
    })
}

/// Generates the full corpus: probe streams, Moriarty sessions, and the
/// ground truth. Byte-identical for a fixed config (users are generated in
/// parallel from derived seeds and concatenated in user order).
pub fn generate(config: &SynthConfig) -> Result<SynthOutput, SynthError> {
    config.validate()?;
    let global_names = names_from_pool(GLOBAL_POOL, config.g, "gsf_");
    let local_names = names_from_pool(LOCAL_POOL, config.n, "laf_");
    // Ingest rebuilds the universe as the sorted set of apps seen, so the
    // generator works in sorted order too and the schemas agree.
    let apps: BTreeSet<String> = names_from_pool(APP_POOL, config.app_count, "App")
        .into_iter()
        .collect();
    let schema = crate::telemetry::build_schema(
        global_names.clone(),
        local_names.clone(),
        apps.into_iter().collect(),
    )
    .map_err(|e| SynthError::Invalid(e.to_string()))?;
    let signal = SignalMap::build(config, &schema);
    let total_rows = config.users * config.rows_per_user;
    let target_total = (total_rows as f64 / (1.0 + config.imbalance_ratio)).round() as usize;
    let base_quota = target_total / config.users;
    let rem = target_total % config.users;
    let streams: Vec<Result<UserStream, SynthError>> = (0..config.users)
        .into_par_iter()
        .map(|u| {
            let quota = base_quota + usize::from(u < rem);
            generate_user(config, &schema, &signal, u, quota)
        })
        .collect();
    let mut snapshots = Vec::with_capacity(total_rows);
    let mut blocks = Vec::with_capacity(total_rows);
    let mut labels = Vec::new();
    let mut malicious_rows = 0;
    for stream in streams {
        let stream = stream?;
        snapshots.extend(stream.snapshots);
        blocks.extend(stream.blocks);
        labels.extend(stream.labels);
        malicious_rows += stream.malicious_rows;
    }
    let columns = schema.column_names();
    let name_of = |col: &usize| columns[*col].clone();
    let mut informative_columns = Vec::new();
    let mut detection_core = Vec::new();
    let mut class_columns = vec![Vec::new(); 6];
    for (col, role) in signal.roles.iter().enumerate() {
        match role {
            None => {}
            Some(None) => {
                informative_columns.push(name_of(&col));
                detection_core.push(name_of(&col));
            }
            Some(Some(c)) => {
                informative_columns.push(name_of(&col));
                class_columns[*c].push(name_of(&col));
            }
        }
    }
    Ok(SynthOutput {
        global_names,
        local_names,
        snapshots,
        blocks,
        labels,
        truth: GeneratorTruth {
            informative_columns,
            detection_core,
            class_columns,
            mean_shift_sigma: signal.shift,
            malicious_rows,
            total_rows,
        },
    })
}

/// Generates and assembles the labeled frame in one step (the in-memory
/// equivalent of `synth` followed by `ingest` without the null filter).
pub fn generate_frame(
    config: &SynthConfig,
) -> Result<(FeatureFrame, GeneratorTruth), SynthError> {
    let out = generate(config)?;
    let (frame, _, ledger) = ingest::assemble(
        out.global_names,
        out.local_names,
        &out.snapshots,
        out.blocks,
        &out.labels,
        config.label_slack_ms,
    )?;
    debug_assert_eq!(ledger.malformed_rows, 0);
    Ok((frame, out.truth))
}

fn fmt_cell(v: &Option<f64>) -> String {
    match v {
        Some(x) => format!("{x}"),
        None => String::new(),
    }
}

/// Writes `gsf.csv`, `laf.csv` and `labels.csv` into `dir`.
pub fn write_csvs(out: &SynthOutput, dir: &Path) -> Result<(), SynthError> {
    std::fs::create_dir_all(dir)?;
    let mut gsf = csv::Writer::from_path(dir.join("gsf.csv"))?;
    let mut header = vec!["user".to_string(), "t_ms".to_string()];
    header.extend(out.global_names.iter().cloned());
    gsf.write_record(&header)?;
    for snap in &out.snapshots {
        let mut record = vec![snap.user.clone(), snap.t.millis().to_string()];
        record.extend(snap.values.iter().map(fmt_cell));
        gsf.write_record(&record)?;
    }
    gsf.flush()?;

    let mut laf = csv::Writer::from_path(dir.join("laf.csv"))?;
    let mut header = vec![
        "user".to_string(),
        "t_ms".to_string(),
        "app".to_string(),
    ];
    header.extend(out.local_names.iter().cloned());
    laf.write_record(&header)?;
    for block in &out.blocks {
        for row in &block.rows {
            let mut record = vec![
                block.user.clone(),
                block.t.millis().to_string(),
                row.app.clone(),
            ];
            record.extend(row.values.iter().map(fmt_cell));
            laf.write_record(&record)?;
        }
    }
    laf.flush()?;

    let mut lab = csv::Writer::from_path(dir.join("labels.csv"))?;
    lab.write_record(["user", "start_ms", "end_ms", "action", "target"])?;
    for l in &out.labels {
        let (action, target) = match l.label {
            RowLabel::Benign => ("benign", String::new()),
            RowLabel::Malicious(t) => ("malicious", t.as_str().to_string()),
        };
        lab.write_record([
            l.user.as_str(),
            &l.session_start.millis().to_string(),
            &l.session_end.millis().to_string(),
            action,
            &target,
        ])?;
    }
    lab.flush()?;
    Ok(())
}
