//! Instance sampling, dataset splits, and the dataset/target file formats.
//!
//! Instances live in the robot's local frame: goals are sampled uniformly
//! over the map square with uniform heading, and obstacle placements that
//! would swallow the start pose (the origin) are rejected and redrawn — a
//! plan that simply stops must always be available. Files are line-delimited
//! JSON with a header line carrying the format version and the generating
//! configuration.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cbf::{Obstacle, ProblemInstance};
use crate::files::{read_to_string, write_atomic};
use crate::rng::{stream, STREAM_DATASET, STREAM_SPLIT};
use crate::vehicle::{PlannerConfig, State};
use crate::{Error, Result};

/// Sampling parameters for datasets and task suites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    /// Half side length of the square map \[m\] (default 3, i.e. a 6×6 map).
    pub half_extent: f64,
    /// Obstacles per instance (default 3).
    pub n_obstacles: usize,
    /// Smallest obstacle radius \[m\] (default 0).
    pub radius_min: f64,
    /// Largest obstacle radius \[m\] (default 0.5).
    pub radius_max: f64,
    /// Train/test/validation proportions (default 18:1:1).
    pub split_ratio: [u32; 3],
    /// Placement attempts per obstacle before giving up (default 1000).
    pub max_attempts: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            half_extent: 3.0,
            n_obstacles: 3,
            radius_min: 0.0,
            radius_max: 0.5,
            split_ratio: [18, 1, 1],
            max_attempts: 1000,
        }
    }
}

impl DatasetConfig {
    /// Checks internal consistency; call once on externally supplied configs.
    pub fn validate(&self) -> Result<()> {
        if !(self.half_extent > 0.0) {
            return Err(Error::Config("half_extent must be positive".into()));
        }
        if !(0.0 <= self.radius_min && self.radius_min <= self.radius_max) {
            return Err(Error::Config("need 0 ≤ radius_min ≤ radius_max".into()));
        }
        if self.split_ratio.iter().all(|&w| w == 0) {
            return Err(Error::Config("split ratio must have a nonzero part".into()));
        }
        if self.max_attempts == 0 {
            return Err(Error::Config("max_attempts must be at least 1".into()));
        }
        Ok(())
    }
}

/// Samples one obstacle that keeps `clear_points` strictly safe.
pub(crate) fn sample_obstacle(
    rng: &mut impl Rng,
    clear_points: &[[f64; 2]],
    dataset: &DatasetConfig,
    cfg: &PlannerConfig,
) -> Result<Obstacle> {
    for _ in 0..dataset.max_attempts {
        let x = rng.gen_range(-dataset.half_extent..=dataset.half_extent);
        let y = rng.gen_range(-dataset.half_extent..=dataset.half_extent);
        let radius = rng.gen_range(dataset.radius_min..=dataset.radius_max);
        let inflated = radius + cfg.robot_radius + cfg.safety_margin;
        let safe = clear_points.iter().all(|p| {
            let (dx, dy) = (p[0] - x, p[1] - y);
            dx * dx + dy * dy > inflated * inflated
        });
        if safe {
            return Ok(Obstacle { x, y, radius });
        }
    }
    Err(Error::ObstaclePlacement { attempts: dataset.max_attempts })
}

/// Samples a pose with uniform position over the map and uniform heading in
/// (−π, π].
pub(crate) fn sample_pose(rng: &mut impl Rng, dataset: &DatasetConfig) -> State {
    let x = rng.gen_range(-dataset.half_extent..=dataset.half_extent);
    let y = rng.gen_range(-dataset.half_extent..=dataset.half_extent);
    // Negating the half-open draw over [−π, π) lands headings in (−π, π].
    let yaw = -rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
    State { x, y, yaw }
}

/// Samples `n` planning instances with the start pose guaranteed safe.
///
/// Instance `i` depends only on `(seed, i)`, so regenerating any subset
/// reproduces the same instances.
pub fn generate(
    n: usize,
    seed: u64,
    dataset: &DatasetConfig,
    cfg: &PlannerConfig,
) -> Result<Vec<ProblemInstance>> {
    dataset.validate()?;
    cfg.validate()?;
    let mut instances = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = stream(seed, STREAM_DATASET, &[i as u64]);
        let goal = sample_pose(&mut rng, dataset);
        let mut obstacles = Vec::with_capacity(dataset.n_obstacles);
        for _ in 0..dataset.n_obstacles {
            obstacles.push(sample_obstacle(&mut rng, &[[0.0, 0.0]], dataset, cfg)?);
        }
        instances.push(ProblemInstance { goal, obstacles });
    }
    Ok(instances)
}

/// Splits `0..n` into train/test/validation index lists.
///
/// Sizes follow the ratio by largest remainder; membership comes from a
/// seeded shuffle and each list is returned in ascending order.
pub fn split(n: usize, ratio: [u32; 3], seed: u64) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let total_weight: u64 = ratio.iter().map(|&w| u64::from(w)).sum();
    assert!(total_weight > 0, "split ratio must have a nonzero part");
    // Largest-remainder apportionment of n into three parts.
    let mut counts = [0usize; 3];
    let mut remainders: Vec<(usize, u64)> = Vec::with_capacity(3);
    let mut assigned = 0usize;
    for (i, &w) in ratio.iter().enumerate() {
        let exact_num = n as u64 * u64::from(w);
        counts[i] = (exact_num / total_weight) as usize;
        assigned += counts[i];
        remainders.push((i, exact_num % total_weight));
    }
    remainders.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    for &(i, _) in remainders.iter().take(n - assigned) {
        counts[i] += 1;
    }

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = stream(seed, STREAM_SPLIT, &[]);
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let mut train: Vec<usize> = order[..counts[0]].to_vec();
    let mut test: Vec<usize> = order[counts[0]..counts[0] + counts[1]].to_vec();
    let mut val: Vec<usize> = order[counts[0] + counts[1]..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    val.sort_unstable();
    (train, test, val)
}

const DATASET_FORMAT: &str = "somtp-dataset";
const DATASET_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    format: String,
    version: u32,
    count: usize,
    seed: u64,
    dataset_config: DatasetConfig,
    planner_config: PlannerConfig,
}

#[derive(Serialize, Deserialize)]
struct InstanceRecord {
    goal: [f64; 3],
    obstacles: Vec<[f64; 3]>,
}

/// A dataset file: the instances plus the configuration that produced them.
#[derive(Debug, Clone)]
pub struct DatasetFile {
    /// Seed the instances were sampled with.
    pub seed: u64,
    /// Sampling configuration.
    pub dataset_config: DatasetConfig,
    /// Planner configuration active at generation time.
    pub planner_config: PlannerConfig,
    /// The instances, in generation order (line order in the file).
    pub instances: Vec<ProblemInstance>,
}

/// Serializes a dataset to line-delimited JSON with a header line.
pub fn save_dataset(path: &Path, file: &DatasetFile) -> Result<()> {
    let header = DatasetHeader {
        format: DATASET_FORMAT.to_string(),
        version: DATASET_VERSION,
        count: file.instances.len(),
        seed: file.seed,
        dataset_config: file.dataset_config.clone(),
        planner_config: file.planner_config.clone(),
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for instance in &file.instances {
        let record = InstanceRecord {
            goal: instance.goal.as_array(),
            obstacles: instance.obstacles.iter().map(|o| [o.x, o.y, o.radius]).collect(),
        };
        out.push_str(&serde_json::to_string(&record).expect("record serializes"));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// Reads a dataset file, validating format, version, and instance count.
pub fn load_dataset(path: &Path) -> Result<DatasetFile> {
    let text = read_to_string(path)?;
    let display = path.display().to_string();
    let mut lines = text.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| Error::format(&display, "empty file"))?;
    let header: DatasetHeader = serde_json::from_str(header_line)
        .map_err(|e| Error::format(&display, format!("bad header: {e}")))?;
    if header.format != DATASET_FORMAT {
        return Err(Error::format(&display, format!("not a dataset file (format {})", header.format)));
    }
    if header.version != DATASET_VERSION {
        return Err(Error::format(
            &display,
            format!("unsupported version {} (expected {DATASET_VERSION})", header.version),
        ));
    }
    let mut instances = Vec::with_capacity(header.count);
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let record: InstanceRecord = serde_json::from_str(line)
            .map_err(|e| Error::format(&display, format!("line {}: {e}", lineno + 2)))?;
        instances.push(ProblemInstance {
            goal: State::from_array(record.goal),
            obstacles: record
                .obstacles
                .into_iter()
                .map(|o| Obstacle { x: o[0], y: o[1], radius: o[2] })
                .collect(),
        });
    }
    if instances.len() != header.count {
        return Err(Error::format(
            &display,
            format!("truncated: header states {} instances, found {}", header.count, instances.len()),
        ));
    }
    Ok(DatasetFile {
        seed: header.seed,
        dataset_config: header.dataset_config,
        planner_config: header.planner_config,
        instances,
    })
}

const TARGETS_VERSION: u32 = 1;

/// One reference solution row in a targets file.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetRow {
    /// Line index of the instance in its dataset file.
    pub id: usize,
    /// Whether the solver converged on this instance.
    pub converged: bool,
    /// Objective value of the reference plan.
    pub objective: f64,
    /// Worst constraint violation of the reference plan.
    pub max_violation: f64,
    /// Flattened reference plan `[v_0, steer_0, …]`.
    pub u: Vec<f64>,
}

/// Writes reference solutions as comma-separated rows with `#` header lines.
pub fn save_targets(path: &Path, rows: &[TargetRow], cfg: &PlannerConfig) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!("# somtp-targets v{TARGETS_VERSION}\n"));
    out.push_str(&format!(
        "# planner_config: {}\n",
        serde_json::to_string(cfg).expect("config serializes")
    ));
    out.push_str("# columns: id,converged,objective,max_violation,u...\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{}",
            row.id,
            u8::from(row.converged),
            row.objective,
            row.max_violation
        ));
        for v in &row.u {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// Reads a targets file written by [`save_targets`].
pub fn load_targets(path: &Path) -> Result<Vec<TargetRow>> {
    let text = read_to_string(path)?;
    let display = path.display().to_string();
    let mut lines = text.lines();
    let magic = lines
        .next()
        .ok_or_else(|| Error::format(&display, "empty file"))?;
    let expected = format!("# somtp-targets v{TARGETS_VERSION}");
    if magic != expected {
        return Err(Error::format(&display, format!("bad header line {magic:?}")));
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.starts_with('#') || line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let parse_err = |what: &str| Error::format(&display, format!("line {}: bad {what}", lineno + 2));
        let id: usize = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| parse_err("id"))?;
        let converged = match fields.next() {
            Some("0") => false,
            Some("1") => true,
            _ => return Err(parse_err("converged flag")),
        };
        let objective: f64 = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| parse_err("objective"))?;
        let max_violation: f64 = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| parse_err("max_violation"))?;
        let mut u = Vec::new();
        for f in fields {
            u.push(f.parse().map_err(|_| parse_err("control value"))?);
        }
        if u.is_empty() || u.len() % 2 != 0 {
            return Err(parse_err("control vector length"));
        }
        rows.push(TargetRow { id, converged, objective, max_violation, u });
    }
    Ok(rows)
}
