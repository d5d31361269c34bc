use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use vbtrack::config::Config;
use vbtrack::coords::homography_from_points;
use vbtrack::io::{self as vio, fmt as ffmt};
use vbtrack::metrics::{self, TrackTable};
use vbtrack::sim::{self, ScenarioConfig, PRESETS};
use vbtrack::tracker::{FrameResult, Tracker};

use crate::manifest::RunManifest;
use crate::plot::{line_plot, Series};
use crate::{ClusterDebugArgs, EvaluateArgs, PlotArgs, SimulateArgs, TrackArgs};

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<vbtrack::Error> for CliError {
    fn from(e: vbtrack::Error) -> Self {
        Self {
            code: if e.is_usage() { 2 } else { 1 },
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self {
            code: 1,
            message: e.to_string(),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self {
            code: 1,
            message: e.to_string(),
        }
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

fn usage(message: impl Into<String>) -> CliError {
    CliError {
        code: 2,
        message: message.into(),
    }
}

/// Reading an input can only fail because of what the user passed in.
fn input<T>(path: &Path, r: vbtrack::Result<T>) -> CliResult<T> {
    r.map_err(|e| match e {
        vbtrack::Error::Io(io) => usage(format!("{}: {io}", path.display())),
        other => other.into(),
    })
}

fn load_config(path: Option<&PathBuf>) -> CliResult<Config> {
    match path {
        Some(p) => input(p, Config::load(p)),
        None => Ok(Config::default()),
    }
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

/// Output directory plus the names written into it.
struct OutDir {
    dir: PathBuf,
    written: Vec<String>,
}

impl OutDir {
    fn create(dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> CliResult {
        fs::write(self.dir.join(name), bytes)?;
        self.written.push(name.to_string());
        Ok(())
    }

    fn csv<F>(&mut self, name: &str, f: F) -> CliResult
    where
        F: FnOnce(&mut Vec<u8>) -> CliResult,
    {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(name, buf)
    }

    fn finish(self, command: &str, config: Option<&PathBuf>, inputs: Vec<String>, seed: Option<u64>, start: Instant) -> CliResult {
        RunManifest {
            command: command.to_string(),
            config: config.map(|p| display(p)),
            inputs,
            outputs: self.written,
            seed,
            wall_time_s: start.elapsed().as_secs_f64(),
            checksums: BTreeMap::new(),
        }
        .write(&self.dir)?;
        Ok(())
    }
}

fn serialize_rows<T: Serialize>(buf: &mut Vec<u8>, rows: impl IntoIterator<Item = T>) -> CliResult {
    let mut w = csv::Writer::from_writer(buf);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn simulate(a: &SimulateArgs) -> CliResult {
    let start = Instant::now();
    let (mut scenario, inputs) = match (&a.preset, &a.config) {
        (Some(name), _) => {
            let s = sim::preset(name)
                .ok_or_else(|| usage(format!("unknown preset `{name}`; available presets: {}", PRESETS.join(", "))))?;
            (s, Vec::new())
        }
        (None, Some(path)) => (input(path, ScenarioConfig::load(path))?, vec![display(path)]),
        (None, None) => return Err(usage("either --preset or --config is required")),
    };
    if let Some(seed) = a.seed {
        scenario.scenario.seed = seed;
    }
    let rendered = sim::generate(&scenario)?;

    let mut tracker_cfg = Config::default();
    tracker_cfg.red_region = scenario.red_region;
    tracker_cfg.tracker.frame_width = scenario.scenario.width;
    tracker_cfg.tracker.frame_height = scenario.scenario.height;

    let mut out = OutDir::create(&a.out)?;
    out.csv("measurements.csv", |b| Ok(vio::write_measurements(b, &rendered.frames)?))?;
    out.csv("ground_truth.csv", |b| Ok(vio::write_ground_truth(b, &rendered.ground_truth)?))?;
    out.csv("calibration.csv", |b| Ok(vio::write_calibration(b, &scenario.calibration_pairs())?))?;
    out.write("scenario.toml", scenario.to_toml_string())?;
    out.write("tracker.toml", tracker_cfg.to_toml_string())?;
    println!(
        "{}: {} frames, {} actors, seed {}",
        scenario.scenario.name,
        rendered.frames.len(),
        scenario.actors.len(),
        scenario.scenario.seed
    );
    out.finish("simulate", a.config.as_ref(), inputs, Some(scenario.scenario.seed), start)
}

#[derive(Serialize, Deserialize)]
struct FrameRow {
    frame: u64,
    measurements: usize,
    clustered: usize,
    downsampled: bool,
    vb_iterations: usize,
    lower_bound: String,
    clusters: usize,
    targets: usize,
    hypotheses: usize,
    p_birth: String,
    p_death: String,
    count_change: i32,
    degraded: bool,
}

impl FrameRow {
    fn new(r: &FrameResult) -> Self {
        let d = &r.diagnostics;
        Self {
            frame: r.frame_index,
            measurements: d.measurements,
            clustered: d.clustered_measurements,
            downsampled: d.downsampled,
            vb_iterations: d.vb_iterations,
            lower_bound: ffmt(d.lower_bound),
            clusters: r.clusters.len(),
            targets: r.target_count(),
            hypotheses: d.hypotheses,
            p_birth: ffmt(d.p_birth),
            p_death: ffmt(d.p_death),
            count_change: d.count_change,
            degraded: d.degraded,
        }
    }
}

/// Loads inputs and runs the tracker over every frame.
fn run_tracker(
    measurements: &Path,
    calibration: &Path,
    config: Option<&PathBuf>,
    seed: u64,
) -> CliResult<Vec<FrameResult>> {
    let cfg = load_config(config)?;
    let pairs = input(calibration, vio::read_calibration(calibration))?;
    let h = homography_from_points(&pairs)?;
    let frames = input(measurements, vio::read_measurements(measurements))?;
    let mut tracker = Tracker::new(cfg, h, seed)?;
    Ok(frames.iter().map(|f| tracker.step(f)).collect())
}

fn write_clusters(buf: &mut Vec<u8>, results: &[FrameResult]) -> CliResult {
    let mut w = csv::Writer::from_writer(buf);
    w.write_record(["frame", "cluster_id", "x", "y"])?;
    for r in results {
        for &(c, x, y) in &r.cluster_pixels {
            w.write_record([r.frame_index.to_string(), c.to_string(), x.to_string(), y.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn track(a: &TrackArgs) -> CliResult {
    let start = Instant::now();
    let results = run_tracker(&a.measurements, &a.calibration, a.config.as_ref(), a.seed)?;

    let mut out = OutDir::create(&a.out)?;
    out.csv("tracks.csv", |b| Ok(vio::write_tracks(b, &results)?))?;
    out.csv("frames.csv", |b| serialize_rows(b, results.iter().map(FrameRow::new)))?;
    out.csv("timing.csv", |b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["frame", "wall_time_s"])?;
        for r in &results {
            w.write_record([r.frame_index.to_string(), ffmt(r.diagnostics.wall_time_s)])?;
        }
        w.flush()?;
        Ok(())
    })?;
    if a.dump_clusters {
        out.csv("clusters.csv", |b| write_clusters(b, &results))?;
    }
    if a.dump_assoc {
        out.csv("assoc.csv", |b| {
            let mut w = csv::Writer::from_writer(b);
            w.write_record(["frame", "target", "cluster", "assoc_prob"])?;
            for r in &results {
                for (i, id) in r.association_ids.iter().enumerate() {
                    for (q, c) in r.clusters.iter().enumerate() {
                        let p = r.association.assoc.get(i).and_then(|row| row.get(q)).copied().unwrap_or(0.0);
                        w.write_record([r.frame_index.to_string(), id.to_string(), c.id.to_string(), ffmt(p)])?;
                    }
                    let u = r.association.undetected.get(i).copied().unwrap_or(1.0);
                    w.write_record([r.frame_index.to_string(), id.to_string(), "-1".into(), ffmt(u)])?;
                }
            }
            w.flush()?;
            Ok(())
        })?;
    }

    let ids: std::collections::BTreeSet<u64> = results.iter().flat_map(|r| r.estimates.iter().map(|e| e.id)).collect();
    let degraded = results.iter().filter(|r| r.diagnostics.degraded).count();
    println!(
        "{} frames, {} track ids, {} degraded frames, final target count {}",
        results.len(),
        ids.len(),
        degraded,
        results.last().map_or(0, FrameResult::target_count)
    );
    let inputs = vec![display(&a.measurements), display(&a.calibration)];
    out.finish("track", a.config.as_ref(), inputs, Some(a.seed), start)
}

pub fn cluster_debug(a: &ClusterDebugArgs) -> CliResult {
    let start = Instant::now();
    let results = run_tracker(&a.measurements, &a.calibration, a.config.as_ref(), a.seed)?;
    let mut out = OutDir::create(&a.out)?;
    out.csv("clusters.csv", |b| write_clusters(b, &results))?;
    out.csv("cluster_means.csv", |b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["frame", "cluster_id", "mean_x", "mean_y", "pixels"])?;
        for r in &results {
            for c in &r.clusters {
                w.write_record([
                    r.frame_index.to_string(),
                    c.id.to_string(),
                    ffmt(c.mean.0),
                    ffmt(c.mean.1),
                    c.pixel_count.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    })?;
    let total: usize = results.iter().map(|r| r.clusters.len()).sum();
    println!("{} frames, {} clusters", results.len(), total);
    let inputs = vec![display(&a.measurements), display(&a.calibration)];
    out.finish("cluster-debug", a.config.as_ref(), inputs, Some(a.seed), start)
}

#[derive(Serialize, Deserialize)]
struct MetricsRow {
    frame: u64,
    loc: String,
    card: String,
    misses: usize,
    fp: usize,
    mismatches: usize,
    motp_cum: Option<String>,
}

fn frame_span(t: &TrackTable) -> Option<(u64, u64)> {
    Some((*t.keys().next()?, *t.keys().next_back()?))
}

pub fn evaluate(a: &EvaluateArgs) -> CliResult {
    let start = Instant::now();
    let params = load_config(a.config.as_ref())?.metrics;
    params.validate()?;
    let est = input(&a.tracks, vio::read_tracks(&a.tracks))?;
    let gt = input(&a.ground_truth, vio::read_ground_truth(&a.ground_truth))?;
    let Some((g0, g1)) = frame_span(&gt) else {
        return Err(vbtrack::Error::NoGroundTruth.into());
    };
    if let Some((e0, e1)) = frame_span(&est) {
        if e1 < g0 || g1 < e0 {
            return Err(vbtrack::Error::NoOverlap.into());
        }
    }

    let mot = metrics::clear_mot(&gt, &est, params.threshold)?;
    let osp = metrics::ospamt(&gt, &est, &params)?;
    let cum = metrics::motp_cumulative(&mot.frames);
    let rows: Vec<MetricsRow> = mot
        .frames
        .iter()
        .zip(&osp)
        .zip(&cum)
        .map(|((m, o), c)| {
            debug_assert_eq!(m.frame, o.frame);
            MetricsRow {
                frame: m.frame,
                loc: ffmt(o.loc),
                card: ffmt(o.card),
                misses: m.misses,
                fp: m.false_positives,
                mismatches: m.mismatches,
                motp_cum: c.map(ffmt),
            }
        })
        .collect();

    let n = osp.len() as f64;
    let mean_loc = osp.iter().map(|o| o.loc).sum::<f64>() / n;
    let mean_card = osp.iter().map(|o| o.card).sum::<f64>() / n;
    let total_mme: usize = mot.frames.iter().map(|f| f.mismatches).sum();
    let mut summary = String::new();
    summary += &format!("frames: {}\n", mot.frames.len());
    summary += &format!("miss_rate: {}\n", ffmt(mot.miss_rate));
    summary += &format!("mismatch_rate: {}\n", ffmt(mot.mismatch_rate));
    summary += &format!("false_positive_rate: {}\n", ffmt(mot.false_positive_rate));
    summary += &format!("mismatches: {total_mme}\n");
    summary += &format!("motp_cm: {}\n", mot.motp_cm.map_or("n/a".to_string(), ffmt));
    summary += &format!("ospamt_variant_loc_mean_cm: {}\n", ffmt(mean_loc));
    summary += &format!("ospamt_variant_card_mean_cm: {}\n", ffmt(mean_card));
    summary += &format!(
        "params: threshold_m={} c_cm={} delta_cm={} p={}\n",
        params.threshold, params.c, params.delta, params.p
    );
    print!("{summary}");

    let mut out = OutDir::create(&a.out)?;
    out.csv("metrics.csv", |b| serialize_rows(b, rows))?;
    out.write("summary.txt", summary)?;
    let inputs = vec![display(&a.tracks), display(&a.ground_truth)];
    out.finish("evaluate", a.config.as_ref(), inputs, None, start)
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let mut rdr = csv::Reader::from_reader(file);
    rdr.deserialize()
        .map(|r| {
            r.map_err(|e| {
                let row = e.position().map_or(0, |p| p.line());
                usage(format!("{}: row {row}: {e}", path.display()))
            })
        })
        .collect()
}

fn parse_num(path: &Path, frame: u64, v: &str) -> CliResult<f64> {
    v.parse()
        .map_err(|_| usage(format!("{}: frame {frame}: `{v}` is not a number", path.display())))
}

fn warn_empty(path: &Path, empty: bool) {
    if empty {
        eprintln!("warning: {} has no rows; plotting empty axes", path.display());
    }
}

pub fn plot(a: &PlotArgs) -> CliResult {
    let start = Instant::now();
    if a.frames.is_none() && a.ground_truth.is_none() && a.metrics.is_none() {
        return Err(usage("nothing to plot: pass --frames, --ground-truth or --metrics"));
    }
    let mut out = OutDir::create(&a.out)?;
    let mut inputs = Vec::new();

    if a.frames.is_some() || a.ground_truth.is_some() {
        let mut series = Vec::new();
        let mut span = None;
        if let Some(p) = &a.frames {
            let rows: Vec<FrameRow> = read_rows(p)?;
            warn_empty(p, rows.is_empty());
            span = rows.first().zip(rows.last()).map(|(f, l)| (f.frame, l.frame));
            series.push(Series::new("targets", rows.iter().map(|r| (r.frame as f64, r.targets as f64)).collect()));
            series.push(Series::new("clusters", rows.iter().map(|r| (r.frame as f64, r.clusters as f64)).collect()));
            inputs.push(display(p));
        }
        if let Some(p) = &a.ground_truth {
            let gt = input(p, vio::read_ground_truth(p))?;
            warn_empty(p, gt.is_empty());
            let (k0, k1) = span.or_else(|| frame_span(&gt)).unwrap_or((0, 0));
            let points = if gt.is_empty() && span.is_none() {
                Vec::new()
            } else {
                (k0..=k1).map(|k| (k as f64, gt.get(&k).map_or(0, Vec::len) as f64)).collect()
            };
            series.push(Series::new("truth", points));
            inputs.push(display(p));
        }
        out.write("count.svg", line_plot("Number of targets", "frame", "count", &series))?;
    }

    if let Some(p) = &a.metrics {
        let rows: Vec<MetricsRow> = read_rows(p)?;
        warn_empty(p, rows.is_empty());
        let mut motp = Vec::new();
        let mut loc = Vec::new();
        let mut card = Vec::new();
        for r in &rows {
            let k = r.frame as f64;
            if let Some(v) = &r.motp_cum {
                motp.push((k, parse_num(p, r.frame, v)?));
            }
            loc.push((k, parse_num(p, r.frame, &r.loc)?));
            card.push((k, parse_num(p, r.frame, &r.card)?));
        }
        out.write("motp.svg", line_plot("Cumulative MOTP", "frame", "MOTP (cm)", &[Series::new("MOTP", motp)]))?;
        out.write(
            "ospamt.svg",
            line_plot(
                "OSPAMT variant",
                "frame",
                "distance (cm)",
                &[Series::new("localization", loc), Series::new("cardinality", card)],
            ),
        )?;
        inputs.push(display(p));
    }
    println!("wrote {}", out.written.join(", "));
    out.finish("plot", None, inputs, None, start)
}
