//! Operator command line for running bicycle-lane surveys end to end.

mod config;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use config::SurveyConfig;
use lanesurvey::compare::{compare, restrict_to_surveyed, surveyed_chains};
use lanesurvey::dashcam::{geotag_frames, parse_nmea, read_metadata, write_metadata, FrameManifest};
use lanesurvey::detector::{
    apply_mask, apply_threshold, partition_outputs, read_detection_log, run_detector,
    support_filter, write_detection_log, DetectionRecord, DEFAULT_MIN_CONFIDENCE,
};
use lanesurvey::imagery::{ApiKey, CostLedger, ImageRequest, ImageryClient};
use lanesurvey::matching::SpatialIndex;
use lanesurvey::osm::{parse_extract, RoadNetwork};
use lanesurvey::plan::{plan_samples, read_batch_lenient, write_batch};
use lanesurvey::routes::{collect_evidence, infer_routes};
use lanesurvey::shoulder::{aggregate, classify, shoulder_layer, write_summary, ShoulderCall};
use lanesurvey::vision::{analyze_frame, DistortionModel, GrayImage, LaneObservation};
use lanesurvey::{GeoPoint, RouteLayer};

#[derive(Parser)]
#[command(
    name = "lanesurvey",
    version,
    about = "Maps on-road bicycle lanes and paved shoulders from street-scene imagery",
    long_about = "Runs a survey pipeline: plan sample points around intersections of an \
OpenStreetMap extract, fetch street imagery, run an external detector over the images, infer \
lane routes from consecutive-intersection detections, and compare them to the cycleway tags \
already in the map data. Dash-cam footage follows the same path via NMEA geotagging, and a \
classical vision pass maps paved shoulders.\n\nAll commands read one TOML config (see --config) \
and write into its output directory. Commands are idempotent: identical inputs produce \
identical outputs."
)]
struct Cli {
    /// Survey configuration file (TOML).
    #[arg(short, long, global = true, default_value = "survey.toml")]
    config: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum DetectSource {
    /// Images fetched for the sample-point batch; detections inherit the
    /// sample's way and intersection node.
    Batch,
    /// Geotagged dash-cam frames; detections are map-matched later.
    Dashcam,
}

#[derive(Subcommand)]
enum Command {
    /// Parse the OSM extracts and report network statistics.
    ///
    /// Writes network_report.json and diagnostics.txt. Input is OSM XML as
    /// produced by `osmium extract`: an exact-boundary extract, plus an
    /// optional bounding-box extract grown by 200 m that completes
    /// intersections at the survey margin.
    ParseOsm,
    /// Compute intersection nodes and write intersections.csv
    /// (node_id,lat,lon).
    FindIntersections,
    /// Generate sample points near every intersection and write batch.csv.
    ///
    /// Batch format: point_id,lat,lon,heading_deg,fov_deg,pitch_deg,way_id,
    /// node_id,offset_m with one row per capture heading (four per point).
    PlanSamples {
        /// Print the point count and cost estimate without writing anything.
        #[arg(long)]
        dry_run: bool,
    },
    /// Fetch every batch image into the local cache.
    ///
    /// Offline mode replays the fixture directory; network mode performs
    /// HTTP GETs priced by the tiered ledger. Repeat runs hit the cache.
    FetchImages {
        /// Print planned request count and cost estimate without fetching.
        #[arg(long)]
        dry_run: bool,
    },
    /// Run the external detector adapter and filter its detections.
    ///
    /// The adapter is invoked as: <program> [args] <manifest> <output>
    /// <label_map>; its output holds one CSV row per detection:
    /// image_ref,class_label,confidence,x_min,y_min,x_max,y_max (normalized).
    /// Writes hits/ and miss/ image folders, detection_log.csv and
    /// detection_log_filtered.csv.
    Detect {
        #[arg(long, value_enum, default_value = "batch")]
        source: DetectSource,
    },
    /// Pair NMEA tracks with frame manifests and write metadata.csv
    /// (image,lat,lon,heading_deg,timestamp).
    ///
    /// The footage directory holds one <name>.nmea and one <name>.csv frame
    /// manifest (frame_index,relative_path) per footage file.
    GeotagDashcam,
    /// Infer lane routes from the filtered detection log and write
    /// detected.geojson.
    InferRoutes,
    /// Walk detected routes against cycleway tags; write the four layer
    /// files (detected/osm/both/diff .geojson) plus comparison.txt and
    /// comparison.json with lengths in metres.
    Compare {
        /// Count cycleway tags only on chains the camera traversed
        /// (requires metadata.csv).
        #[arg(long)]
        restrict_to_surveyed: bool,
    },
    /// Per-frame lane vision over dash-cam frames, then per-segment shoulder
    /// classification. Writes frame_observations.csv,
    /// metadata_with_summary.csv and shoulder.geojson.
    ///
    /// Lens correction uses the `[vision] calibration` file: `key = value`
    /// lines with fx, fy, cx, cy required and k1, k2, k3, p1, p2, out_cx,
    /// out_cy optional.
    ShoulderScan {
        /// Also write per-frame overlay images with the detected boundaries.
        #[arg(long)]
        overlays: bool,
    },
    /// Summarize every artifact present in the output directory into
    /// survey_report.txt / survey_report.json.
    Report,
}

/// Marker for configuration problems (exit code 2).
#[derive(Debug)]
struct ConfigMarker;

impl std::fmt::Display for ConfigMarker {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("configuration error")
    }
}

/// Missing upstream artifact (exit code 3).
#[derive(Debug)]
struct MissingArtifact(String);

impl std::fmt::Display for MissingArtifact {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for MissingArtifact {}

fn require_artifact(path: &Path, what: &str, produced_by: &str) -> Result<()> {
    if !path.exists() {
        return Err(anyhow!(MissingArtifact(format!(
            "{what} {} not found; run `lanesurvey {produced_by}` first",
            path.display()
        ))));
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err:#}");
        let code = if err.downcast_ref::<MissingArtifact>().is_some() {
            3
        } else if err.chain().any(|c| c.to_string() == "configuration error") {
            2
        } else {
            1
        };
        std::process::exit(code);
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = SurveyConfig::load(&cli.config).context(ConfigMarker)?;
    fs::create_dir_all(&cfg.survey.output_dir)?;
    match cli.command {
        Command::ParseOsm => cmd_parse_osm(&cfg),
        Command::FindIntersections => cmd_find_intersections(&cfg),
        Command::PlanSamples { dry_run } => cmd_plan_samples(&cfg, dry_run),
        Command::FetchImages { dry_run } => cmd_fetch_images(&cfg, dry_run),
        Command::Detect { source } => cmd_detect(&cfg, source),
        Command::GeotagDashcam => cmd_geotag_dashcam(&cfg),
        Command::InferRoutes => cmd_infer_routes(&cfg),
        Command::Compare {
            restrict_to_surveyed,
        } => cmd_compare(&cfg, restrict_to_surveyed),
        Command::ShoulderScan { overlays } => cmd_shoulder_scan(&cfg, overlays),
        Command::Report => cmd_report(&cfg),
    }
}

fn load_network(path: &Path) -> Result<(RoadNetwork, usize)> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    let outcome = parse_extract(&bytes).map_err(|e| anyhow!("{}: {e}", path.display()))?;
    Ok((outcome.network, outcome.diagnostics.len()))
}

fn load_networks(cfg: &SurveyConfig) -> Result<(RoadNetwork, Option<RoadNetwork>)> {
    let (network, diags) = load_network(&cfg.survey.extract)?;
    if diags > 0 {
        eprintln!("note: {diags} diagnostics while parsing the survey extract (see parse-osm)");
    }
    let margin = match &cfg.survey.margin_extract {
        Some(path) => Some(load_network(path)?.0),
        None => None,
    };
    Ok((network, margin))
}

fn cmd_parse_osm(cfg: &SurveyConfig) -> Result<()> {
    let bytes = fs::read(&cfg.survey.extract)?;
    let outcome =
        parse_extract(&bytes).map_err(|e| anyhow!("{}: {e}", cfg.survey.extract.display()))?;
    let network = &outcome.network;
    let roads = network.ways().values().filter(|w| w.is_road).count();
    let cycleways = network
        .ways()
        .values()
        .filter(|w| w.is_road && w.has_cycleway)
        .count();
    let report = serde_json::json!({
        "survey": cfg.survey.name,
        "nodes": network.nodes().len(),
        "ways": network.ways().len(),
        "road_ways": roads,
        "cycleway_ways": cycleways,
        "intersections": network.intersections().len(),
        "chains": network.chains().len(),
        "cycleway_length_m": network.cycleway_layer().length_m(),
        "diagnostics": outcome.diagnostics.len(),
    });
    fs::write(
        cfg.survey.output_dir.join("network_report.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    let mut diag_text = String::new();
    for d in &outcome.diagnostics {
        let _ = writeln!(diag_text, "{d}");
    }
    fs::write(cfg.survey.output_dir.join("diagnostics.txt"), diag_text)?;
    if let Some(margin) = &cfg.survey.margin_extract {
        let (m, _) = load_network(margin)?;
        println!(
            "margin extract: {} nodes, {} ways, {} intersections",
            m.nodes().len(),
            m.ways().len(),
            m.intersections().len()
        );
    }
    println!(
        "{}: {} nodes, {} ways ({} roads, {} cycleway-tagged), {} intersections, {} chains, {} diagnostics",
        cfg.survey.name,
        network.nodes().len(),
        network.ways().len(),
        roads,
        cycleways,
        network.intersections().len(),
        network.chains().len(),
        outcome.diagnostics.len()
    );
    Ok(())
}

fn cmd_find_intersections(cfg: &SurveyConfig) -> Result<()> {
    let (network, _) = load_networks(cfg)?;
    let path = cfg.survey.output_dir.join("intersections.csv");
    let mut out = String::from("node_id,lat,lon\n");
    for node in network.intersections() {
        let p = network.point(*node).unwrap();
        let _ = writeln!(out, "{node},{:.7},{:.7}", p.lat, p.lon);
    }
    fs::write(&path, out)?;
    println!(
        "{} intersections -> {}",
        network.intersections().len(),
        path.display()
    );
    Ok(())
}

fn cmd_plan_samples(cfg: &SurveyConfig, dry_run: bool) -> Result<()> {
    let (network, margin) = load_networks(cfg)?;
    let plan = plan_samples(&network, margin.as_ref(), &cfg.plan.to_config())?;
    let images = plan.len() * 4;
    let ledger = CostLedger::default();
    let cost = ledger.cost_for(images as u64);
    if dry_run {
        println!(
            "dry run: {} sample points, {images} images, estimated cost ${cost:.2} USD (nothing written)",
            plan.len()
        );
        return Ok(());
    }
    let path = cfg.survey.output_dir.join("batch.csv");
    let rows = write_batch(&plan, &path)?;
    println!(
        "{} sample points, {rows} batch rows -> {} (estimated cost ${cost:.2} USD if uncached)",
        plan.len(),
        path.display()
    );
    Ok(())
}

fn imagery_client(cfg: &SurveyConfig) -> Result<ImageryClient> {
    let cache = cfg.cache_dir();
    let mut client = match cfg.imagery.mode.as_str() {
        "offline" => {
            let fixtures = cfg.imagery.fixture_dir.clone().ok_or_else(|| {
                anyhow!("offline imagery mode needs [imagery] fixture_dir").context(ConfigMarker)
            })?;
            ImageryClient::offline(fixtures, cache)
        }
        "network" => {
            if cfg.imagery.endpoint.is_empty() {
                return Err(anyhow!("network imagery mode needs [imagery] endpoint")
                    .context(ConfigMarker));
            }
            let key = ApiKey::load(cfg.imagery.api_key_path.as_deref())
                .context("network imagery mode needs an API key (file or LANESURVEY_API_KEY)")
                .context(ConfigMarker)?;
            ImageryClient::network(&cfg.imagery.endpoint, key, cache)?
        }
        other => bail!("unknown imagery mode {other:?}"),
    };
    client.concurrency = cfg.imagery.concurrency;
    Ok(client)
}

fn cmd_fetch_images(cfg: &SurveyConfig, dry_run: bool) -> Result<()> {
    let batch_path = cfg.survey.output_dir.join("batch.csv");
    require_artifact(&batch_path, "batch file", "plan-samples")?;
    let (rows, row_diags) = read_batch_lenient(&batch_path)?;
    for d in &row_diags {
        eprintln!("batch diagnostic: {d}");
    }
    let client = imagery_client(cfg)?;
    let (w, h) = (cfg.imagery.image_width, cfg.imagery.image_height);
    if dry_run {
        let report = client.dry_run(&rows, w, h);
        println!(
            "dry run: {} rows, {} unique requests, {} cached, {} to fetch, estimated cost ${:.3} USD",
            report.rows,
            report.unique_requests,
            report.already_cached,
            report.planned_requests,
            report.estimated_cost_usd
        );
        return Ok(());
    }
    let report = client.fetch_batch(&rows, w, h);
    let ledger = client.ledger();
    let summary = serde_json::json!({
        "rows": rows.len(),
        "fetched_network": report.fetched_network,
        "fetched_fixture": report.fetched_fixture,
        "cached": report.cached,
        "misses": report
            .misses
            .iter()
            .map(|(k, e)| serde_json::json!({"key": k, "error": e}))
            .collect::<Vec<_>>(),
        "malformed_rows": row_diags,
        "requests_sent": ledger.requests_sent,
        "estimated_cost_usd": ledger.estimated_cost_usd(),
    });
    fs::write(
        cfg.survey.output_dir.join("fetch_report.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    println!(
        "fetched {} (network) + {} (fixture), {} cached, {} misses, cost ${:.3} USD",
        report.fetched_network,
        report.fetched_fixture,
        report.cached,
        report.misses.len(),
        ledger.estimated_cost_usd()
    );
    for (key, err) in report.misses.iter().take(5) {
        eprintln!("miss: {key}: {err}");
    }
    Ok(())
}

struct DetectItem {
    path: PathBuf,
    point: GeoPoint,
    way_id: Option<i64>,
    node_id: Option<i64>,
}

fn cmd_detect(cfg: &SurveyConfig, source: DetectSource) -> Result<()> {
    let adapter = cfg.detector.adapter_command().context(ConfigMarker)?;
    let label_map = cfg
        .detector
        .label_map
        .clone()
        .ok_or_else(|| anyhow!("[detector] label_map is required").context(ConfigMarker))?;
    if !label_map.exists() {
        return Err(anyhow!("label map {} missing", label_map.display()).context(ConfigMarker));
    }
    let out_dir = &cfg.survey.output_dir;

    let mut items: BTreeMap<String, DetectItem> = BTreeMap::new();
    let mut missing_images = 0usize;
    match source {
        DetectSource::Batch => {
            let batch_path = out_dir.join("batch.csv");
            require_artifact(&batch_path, "batch file", "plan-samples")?;
            let (rows, _) = read_batch_lenient(&batch_path)?;
            let client = imagery_client(cfg)?;
            for row in &rows {
                let req = ImageRequest::from_batch_row(
                    row,
                    cfg.imagery.image_width,
                    cfg.imagery.image_height,
                );
                let path = client.cache_path(&req);
                if !path.exists() {
                    missing_images += 1;
                    continue;
                }
                items
                    .entry(path.to_string_lossy().into_owned())
                    .or_insert(DetectItem {
                        path,
                        point: row.point,
                        way_id: Some(row.way_id),
                        node_id: Some(row.node_id),
                    });
            }
            if items.is_empty() {
                return Err(anyhow!(MissingArtifact(
                    "no fetched images found in the cache; run `lanesurvey fetch-images` first"
                        .into()
                )));
            }
        }
        DetectSource::Dashcam => {
            let metadata = out_dir.join("metadata.csv");
            require_artifact(&metadata, "dash-cam metadata", "geotag-dashcam")?;
            let frames_dir = cfg
                .dashcam
                .frames_dir
                .clone()
                .ok_or_else(|| anyhow!("[dashcam] frames_dir is required").context(ConfigMarker))?;
            for frame in read_metadata(&metadata)? {
                let path = frames_dir.join(&frame.image_path);
                if !path.exists() {
                    missing_images += 1;
                    continue;
                }
                items
                    .entry(path.to_string_lossy().into_owned())
                    .or_insert(DetectItem {
                        path,
                        point: frame.point,
                        way_id: None,
                        node_id: None,
                    });
            }
        }
    }
    if missing_images > 0 {
        eprintln!("note: {missing_images} listed images are not on disk and were skipped");
    }

    let manifest_path = out_dir.join("detect_manifest.txt");
    let mut manifest = String::new();
    for key in items.keys() {
        let _ = writeln!(manifest, "{key}");
    }
    fs::write(&manifest_path, manifest)?;

    let detections = run_detector(&manifest_path, &adapter, &label_map)?;
    let min_conf = cfg.detector.min_confidence.unwrap_or(DEFAULT_MIN_CONFIDENCE);
    let mut kept = apply_threshold(detections, min_conf);
    if let Some(mask) = cfg
        .detector
        .mask(source == DetectSource::Dashcam)
        .context(ConfigMarker)?
    {
        kept = apply_mask(kept, &mask);
    }

    let records: Vec<DetectionRecord> = kept
        .into_iter()
        .filter_map(|d| {
            items.get(&d.image_ref).map(|item| DetectionRecord {
                point: item.point,
                way_id: item.way_id,
                node_id: item.node_id,
                detection: d,
            })
        })
        .collect();

    let images: Vec<(String, PathBuf)> = items
        .iter()
        .map(|(k, item)| (k.clone(), item.path.clone()))
        .collect();
    let summary = partition_outputs(
        &records,
        &images,
        &out_dir.join("hits"),
        &out_dir.join("miss"),
        &out_dir.join("detection_log.csv"),
    )?;

    // Spatial support only makes sense for continuously captured frames.
    let filtered = if source == DetectSource::Dashcam {
        support_filter(records, &cfg.support.to_config())
    } else {
        records
    };
    write_detection_log(&filtered, &out_dir.join("detection_log_filtered.csv"))?;

    println!(
        "{} hit images, {} miss images, {} detection rows ({} after support filter)",
        summary.hits,
        summary.misses,
        summary.log_rows,
        filtered.len()
    );
    Ok(())
}

fn cmd_geotag_dashcam(cfg: &SurveyConfig) -> Result<()> {
    let footage_dir = cfg
        .dashcam
        .footage_dir
        .clone()
        .ok_or_else(|| anyhow!("[dashcam] footage_dir is required").context(ConfigMarker))?;
    let mut nmea_files: Vec<PathBuf> = fs::read_dir(&footage_dir)
        .with_context(|| format!("cannot read {}", footage_dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .map(|x| x.eq_ignore_ascii_case("nmea"))
                .unwrap_or(false)
        })
        .collect();
    nmea_files.sort();
    if nmea_files.is_empty() {
        bail!("no .nmea files under {}", footage_dir.display());
    }
    let mut all_frames = Vec::new();
    let mut diag_count = 0usize;
    for nmea_path in &nmea_files {
        let stem = nmea_path
            .file_stem()
            .unwrap()
            .to_string_lossy()
            .into_owned();
        let manifest_path = footage_dir.join(format!("{stem}.csv"));
        if !manifest_path.exists() {
            bail!(
                "footage {stem} has no frame manifest {}; extract frames first",
                manifest_path.display()
            );
        }
        let track = parse_nmea(&fs::read_to_string(nmea_path)?)
            .with_context(|| format!("NMEA track {}", nmea_path.display()))?;
        diag_count += track.diagnostics.len();
        let manifest = FrameManifest::read(&manifest_path, &stem, cfg.dashcam.fps_source)?;
        let (frames, diags) = geotag_frames(&manifest, &track.fixes)?;
        diag_count += diags.len();
        all_frames.extend(frames);
    }
    let path = cfg.survey.output_dir.join("metadata.csv");
    write_metadata(&all_frames, &path)?;
    println!(
        "{} footage files, {} geotagged frames ({diag_count} diagnostics) -> {}",
        nmea_files.len(),
        all_frames.len(),
        path.display()
    );
    Ok(())
}

fn detection_records(cfg: &SurveyConfig) -> Result<Vec<DetectionRecord>> {
    let filtered = cfg.survey.output_dir.join("detection_log_filtered.csv");
    let plain = cfg.survey.output_dir.join("detection_log.csv");
    let path = if filtered.exists() {
        filtered
    } else {
        require_artifact(&plain, "detection log", "detect")?;
        plain
    };
    Ok(read_detection_log(&path)?)
}

fn cmd_infer_routes(cfg: &SurveyConfig) -> Result<()> {
    let records = detection_records(cfg)?;
    let (network, _) = load_networks(cfg)?;
    let index = SpatialIndex::build(&network)?;
    let evidence = collect_evidence(&records, &network, &index);
    let layer = infer_routes(&evidence, &network, &cfg.inference());
    let path = cfg.survey.output_dir.join("detected.geojson");
    layer.write_geojson(&path)?;
    println!(
        "{} detections -> {} route polylines, {:.0} m -> {}",
        records.len(),
        layer.lines.len(),
        layer.length_m(),
        path.display()
    );
    Ok(())
}

fn cmd_compare(cfg: &SurveyConfig, restrict: bool) -> Result<()> {
    let records = detection_records(cfg)?;
    let (network, _) = load_networks(cfg)?;
    let index = SpatialIndex::build(&network)?;
    let evidence = collect_evidence(&records, &network, &index);
    let report = if restrict {
        let metadata = cfg.survey.output_dir.join("metadata.csv");
        require_artifact(&metadata, "dash-cam metadata", "geotag-dashcam")?;
        let points: Vec<GeoPoint> = read_metadata(&metadata)?.iter().map(|f| f.point).collect();
        let surveyed = surveyed_chains(&points, &index);
        restrict_to_surveyed(&evidence, &network, &cfg.inference(), &surveyed)
    } else {
        compare(&evidence, &network, &cfg.inference())
    };
    report.write_outputs(&cfg.survey.output_dir)?;
    if let Some(overlay) = &cfg.overlay.geojson {
        let layer = RouteLayer::read_geojson(overlay, "overlay")?;
        layer.write_geojson(&cfg.survey.output_dir.join("overlay.geojson"))?;
        println!(
            "overlay: {} features, {:.0} m (visual reference only)",
            layer.lines.len(),
            layer.length_m()
        );
    }
    print!("{}", report.text_table());
    Ok(())
}

fn cmd_shoulder_scan(cfg: &SurveyConfig, overlays: bool) -> Result<()> {
    let metadata_path = cfg.survey.output_dir.join("metadata.csv");
    require_artifact(&metadata_path, "dash-cam metadata", "geotag-dashcam")?;
    let frames_dir = cfg
        .dashcam
        .frames_dir
        .clone()
        .ok_or_else(|| anyhow!("[dashcam] frames_dir is required").context(ConfigMarker))?;
    let vision_cfg = cfg.vision.to_config();
    let model = match &cfg.vision.calibration {
        Some(path) => Some(DistortionModel::from_key_value_file(path)?),
        None => None,
    };
    let frames = read_metadata(&metadata_path)?;
    let (network, _) = load_networks(cfg)?;
    let index = SpatialIndex::build(&network)?;

    let overlay_dir = cfg.survey.output_dir.join("shoulder_overlays");
    if overlays {
        fs::create_dir_all(&overlay_dir)?;
    }
    let mut observations: Vec<(GeoPoint, LaneObservation)> = Vec::new();
    let mut unreadable = 0usize;
    for frame in &frames {
        let path = frames_dir.join(&frame.image_path);
        let img = match GrayImage::read(&path) {
            Ok(img) => img,
            Err(_) => {
                unreadable += 1;
                continue;
            }
        };
        let obs = analyze_frame(&frame.image_path, &img, model.as_ref(), &vision_cfg);
        if overlays {
            let mut canvas = img.clone();
            let h = canvas.height();
            for line in [&obs.left_own, &obs.right_own, &obs.shoulder_left]
                .into_iter()
                .flatten()
            {
                if let Some(x_of_y) = line.to_x_of_y() {
                    canvas.draw_line_x_of_y(
                        x_of_y.slope,
                        x_of_y.intercept,
                        h * 45 / 100,
                        h.saturating_sub(1),
                        1,
                        255,
                    );
                }
            }
            let name = frame.image_path.replace(['/', '\\'], "_");
            let _ = canvas.save(&overlay_dir.join(format!("{name}.png")));
        }
        observations.push((frame.point, obs));
    }
    if unreadable > 0 {
        eprintln!("note: {unreadable} frames could not be read and were skipped");
    }

    write_frame_observations(
        &observations,
        &cfg.survey.output_dir.join("frame_observations.csv"),
    )?;

    let shoulder_cfg = cfg.shoulder.to_config();
    let agg = aggregate(&observations, &index, &shoulder_cfg);
    for d in &agg.diagnostics {
        eprintln!("segment diagnostic: {d}");
    }
    write_summary(
        &observations,
        &agg,
        &shoulder_cfg,
        &cfg.survey.output_dir.join("metadata_with_summary.csv"),
    )?;
    let (layer, layer_diags) = shoulder_layer(&agg.stats, &index, &shoulder_cfg);
    for d in &layer_diags {
        eprintln!("layer diagnostic: {d}");
    }
    layer.write_geojson(&cfg.survey.output_dir.join("shoulder.geojson"))?;

    let mut positive = 0;
    let mut negative = 0;
    let mut insufficient = 0;
    for s in &agg.stats {
        match classify(s, &shoulder_cfg) {
            ShoulderCall::Shoulder => positive += 1,
            ShoulderCall::NoShoulder => negative += 1,
            ShoulderCall::InsufficientData => insufficient += 1,
        }
    }
    println!(
        "{} frames over {} segments: {positive} with shoulder ({:.0} m mapped), {negative} without, {insufficient} insufficient",
        observations.len(),
        agg.stats.len(),
        layer.length_m()
    );
    Ok(())
}

fn write_frame_observations(
    observations: &[(GeoPoint, LaneObservation)],
    path: &Path,
) -> Result<()> {
    let mut out = fs::File::create(path)?;
    writeln!(
        out,
        "image,lat,lon,left_slope,left_intercept,right_slope,right_intercept,shoulder_slope,shoulder_intercept,width_px,intersect_x,intersect_y"
    )?;
    let fmt_line = |l: &Option<lanesurvey::vision::Line2D>| -> (String, String) {
        match l.as_ref().and_then(|l| l.to_x_of_y()) {
            Some(x) => (format!("{:.4}", x.slope), format!("{:.2}", x.intercept)),
            None => (String::new(), String::new()),
        }
    };
    for (point, obs) in observations {
        let (ls, li) = fmt_line(&obs.left_own);
        let (rs, ri) = fmt_line(&obs.right_own);
        let (ss, si) = fmt_line(&obs.shoulder_left);
        writeln!(
            out,
            "{},{:.7},{:.7},{ls},{li},{rs},{ri},{ss},{si},{},{},{}",
            obs.frame,
            point.lat,
            point.lon,
            obs.width_at_upper_row_px
                .map(|w| format!("{w:.2}"))
                .unwrap_or_default(),
            obs.boundary_intersection
                .map(|(x, _)| format!("{x:.2}"))
                .unwrap_or_default(),
            obs.boundary_intersection
                .map(|(_, y)| format!("{y:.2}"))
                .unwrap_or_default(),
        )?;
    }
    Ok(())
}

fn cmd_report(cfg: &SurveyConfig) -> Result<()> {
    let out_dir = &cfg.survey.output_dir;
    let mut text = format!("survey report: {}\n", cfg.survey.name);
    let mut report = serde_json::Map::new();
    report.insert("survey".into(), serde_json::json!(cfg.survey.name));

    if let Ok((rows, _)) = read_batch_lenient(&out_dir.join("batch.csv")) {
        let ledger = CostLedger::default();
        let _ = writeln!(
            text,
            "plan: {} batch rows ({} points), full-fetch cost ${:.2} USD",
            rows.len(),
            rows.len() / 4,
            ledger.cost_for(rows.len() as u64)
        );
        report.insert("batch_rows".into(), serde_json::json!(rows.len()));
    }
    if let Ok(fetch) = fs::read_to_string(out_dir.join("fetch_report.json")) {
        if let Ok(v) = serde_json::from_str::<serde_json::Value>(&fetch) {
            let _ = writeln!(
                text,
                "fetch: {} network, {} fixture, {} cached, cost ${:.3} USD",
                v["fetched_network"],
                v["fetched_fixture"],
                v["cached"],
                v["estimated_cost_usd"].as_f64().unwrap_or(0.0)
            );
            report.insert("fetch".into(), v);
        }
    }
    if let Ok(records) = read_detection_log(&out_dir.join("detection_log.csv")) {
        let _ = writeln!(text, "detections: {} rows", records.len());
        report.insert("detections".into(), serde_json::json!(records.len()));
    }
    if let Ok(records) = read_detection_log(&out_dir.join("detection_log_filtered.csv")) {
        let _ = writeln!(
            text,
            "detections after support filter: {} rows",
            records.len()
        );
        report.insert("detections_filtered".into(), serde_json::json!(records.len()));
    }
    if let Ok(cmp) = fs::read_to_string(out_dir.join("comparison.json")) {
        if let Ok(v) = serde_json::from_str::<serde_json::Value>(&cmp) {
            let r = &v["rounded"];
            let _ = writeln!(
                text,
                "comparison: detected {} m, osm {} m, both {} m, detected-only {} m, osm-only {} m",
                r["detected_m"], r["osm_m"], r["both_m"], r["detected_only_m"], r["osm_only_m"]
            );
            report.insert("comparison".into(), v);
        }
    }
    if out_dir.join("shoulder.geojson").exists() {
        if let Ok(layer) = RouteLayer::read_geojson(&out_dir.join("shoulder.geojson"), "shoulder") {
            let _ = writeln!(
                text,
                "shoulders: {} segments, {:.0} m",
                layer.lines.len(),
                layer.length_m()
            );
            report.insert("shoulder_m".into(), serde_json::json!(layer.length_m()));
        }
    }
    if out_dir.join("overlay.geojson").exists() {
        let _ = writeln!(text, "overlay layer present (visual reference only)");
    }

    fs::write(out_dir.join("survey_report.txt"), &text)?;
    fs::write(
        out_dir.join("survey_report.json"),
        serde_json::to_string_pretty(&serde_json::Value::Object(report))?,
    )?;
    print!("{text}");
    Ok(())
}
