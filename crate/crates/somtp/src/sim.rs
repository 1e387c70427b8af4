//! Closed-loop simulation: replan in the robot's frame at every step, apply
//! the first control, and score whole task suites.
//!
//! Tasks live in world coordinates. Before each planning call the goal and
//! obstacles are re-expressed in the robot's local frame (robot at the
//! origin, facing +x), which is the frame every planner in this crate works
//! in; the returned controls are body-frame quantities and apply unchanged.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cbf::{Obstacle, ProblemInstance};
use crate::dataset::{sample_obstacle, sample_pose, DatasetConfig};
use crate::files::{read_to_string, write_atomic};
use crate::policy::{encode_instance, PolicyNetwork};
use crate::rng::{stream, STREAM_TASKS};
use crate::slpg::{apply_correction, CorrectionMode, Dc3Config, SlpgConfig};
use crate::solver::{solve_with_warm_start, SolverConfig};
use crate::vehicle::{step, Control, ControlSequence, PlannerConfig, State};
use crate::{Error, Result};

/// Goal disc radius a task counts as reached within \[m\]. Chosen slightly
/// above the robot's minimum turning radius (wheelbase / tan(max steer)
/// ≈ 0.73 m): a smaller disc cannot always be entered from an unfavourable
/// approach heading without a loop-around that exceeds the planning horizon.
pub const DEFAULT_TARGET_RADIUS: f64 = 0.75;
/// Step budget per episode.
pub const DEFAULT_MAX_STEPS: usize = 200;
/// Smallest start→goal distance a sampled task may have \[m\]. Shorter
/// tasks degenerate into parking problems below the robot's turning
/// radius, which the tracking objective is not built to solve.
pub const TASK_MIN_GOAL_DISTANCE: f64 = 2.0;
/// Largest start→goal distance a sampled task may have \[m\], keeping
/// goals inside the range the open-loop problem family covers.
pub const TASK_MAX_GOAL_DISTANCE: f64 = 4.0;

/// Wraps an angle to (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut a = a % TAU;
    if a <= -PI {
        a += TAU;
    } else if a > PI {
        a -= TAU;
    }
    a
}

/// Re-expresses a world-frame goal and obstacles in the robot's local frame.
pub fn to_local_frame(robot: &State, goal: &State, obstacles: &[Obstacle]) -> ProblemInstance {
    let (sin, cos) = robot.yaw.sin_cos();
    let rotate = |x: f64, y: f64| {
        let (dx, dy) = (x - robot.x, y - robot.y);
        (cos * dx + sin * dy, -sin * dx + cos * dy)
    };
    let (gx, gy) = rotate(goal.x, goal.y);
    ProblemInstance {
        goal: State { x: gx, y: gy, yaw: wrap_angle(goal.yaw - robot.yaw) },
        obstacles: obstacles
            .iter()
            .map(|o| {
                let (x, y) = rotate(o.x, o.y);
                Obstacle { x, y, radius: o.radius }
            })
            .collect(),
    }
}

/// A receding-horizon planner, called with instances in the robot's frame.
pub trait Planner {
    /// Plans a control sequence for an instance (robot at the origin).
    fn plan(&mut self, instance: &ProblemInstance) -> Result<ControlSequence>;

    /// Clears episode-local state; called once at the start of each episode.
    fn reset(&mut self) {}
}

/// One closed-loop navigation task in world coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    /// Initial robot pose.
    pub start: State,
    /// Goal pose (heading is informational; success is positional).
    pub goal: State,
    /// Static obstacles.
    pub obstacles: Vec<Obstacle>,
    /// Goal disc radius counting as arrival \[m\].
    pub target_radius: f64,
    /// Step budget before the episode counts as failed.
    pub max_steps: usize,
}

/// Trace and outcome of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    /// Visited world poses; the first entry is the start pose.
    pub states: Vec<State>,
    /// Controls applied, one per transition.
    pub controls: Vec<Control>,
    /// Whether the goal disc was reached within the step budget.
    pub success: bool,
    /// Distance from the final position to the goal position \[m\].
    pub final_distance: f64,
}

/// Runs one closed-loop episode: plan, apply the first control, repeat.
pub fn run_task(planner: &mut dyn Planner, task: &Task, cfg: &PlannerConfig) -> Result<EpisodeResult> {
    planner.reset();
    let distance_to_goal = |s: &State| (s.x - task.goal.x).hypot(s.y - task.goal.y);
    let mut states = vec![task.start];
    let mut controls = Vec::new();
    let mut success = false;
    for _ in 0..task.max_steps {
        let current = *states.last().expect("nonempty trace");
        if distance_to_goal(&current) <= task.target_radius {
            success = true;
            break;
        }
        let local = to_local_frame(&current, &task.goal, &task.obstacles);
        let plan = planner.plan(&local)?;
        let first = *plan
            .controls
            .first()
            .ok_or_else(|| Error::Domain("planner returned an empty plan".into()))?;
        states.push(step(&current, &first, cfg));
        controls.push(first);
    }
    let final_state = states.last().expect("nonempty trace");
    let final_distance = distance_to_goal(final_state);
    if !success {
        success = final_distance <= task.target_radius;
    }
    Ok(EpisodeResult { states, controls, success, final_distance })
}

/// Aggregate outcome of a task suite.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Score {
    /// Number of episodes scored.
    pub episodes: usize,
    /// Share of successful episodes, in percent.
    pub success_percent: f64,
    /// Mean distance from final position to goal \[m\].
    pub mean_final_distance: f64,
}

/// Scores a set of episode results.
pub fn score(results: &[EpisodeResult]) -> Score {
    if results.is_empty() {
        return Score { episodes: 0, success_percent: 0.0, mean_final_distance: 0.0 };
    }
    let n = results.len() as f64;
    let successes = results.iter().filter(|r| r.success).count() as f64;
    let distance_sum: f64 = results.iter().map(|r| r.final_distance).sum();
    Score {
        episodes: results.len(),
        success_percent: 100.0 * successes / n,
        mean_final_distance: distance_sum / n,
    }
}

/// Planner wrapping the reference solver, warm-started with the shifted
/// previous plan within an episode.
pub struct SolverPlanner {
    cfg: PlannerConfig,
    solver: SolverConfig,
    warm: Option<ControlSequence>,
}

impl SolverPlanner {
    /// Solver-backed planner with no warm start yet.
    pub fn new(cfg: PlannerConfig, solver: SolverConfig) -> Self {
        SolverPlanner { cfg, solver, warm: None }
    }
}

impl Planner for SolverPlanner {
    fn plan(&mut self, instance: &ProblemInstance) -> Result<ControlSequence> {
        let result = solve_with_warm_start(instance, self.warm.as_ref(), &self.cfg, &self.solver);
        // Shift for the next call: drop the control about to be executed,
        // repeat the last one.
        let mut shifted = result.plan.clone();
        if shifted.controls.len() > 1 {
            shifted.controls.remove(0);
            let last = *shifted.controls.last().expect("nonempty plan");
            shifted.controls.push(last);
        }
        self.warm = Some(shifted);
        Ok(result.plan)
    }

    fn reset(&mut self) {
        self.warm = None;
    }
}

/// Planner that runs the policy network and then a safety correction.
pub struct NetworkPlanner {
    net: PolicyNetwork,
    cfg: PlannerConfig,
    /// Correction applied to the raw network plan (default SLPG).
    pub correction: CorrectionMode,
    /// SLPG settings for the correction (default full inference settings).
    pub slpg: SlpgConfig,
    /// DC3 settings when that correction is selected.
    pub dc3: Dc3Config,
}

impl NetworkPlanner {
    /// Network planner with the SLPG correction at inference settings.
    pub fn new(net: PolicyNetwork, cfg: PlannerConfig) -> Self {
        NetworkPlanner {
            net,
            cfg,
            correction: CorrectionMode::Slpg,
            slpg: SlpgConfig::default(),
            dc3: Dc3Config::default(),
        }
    }
}

impl Planner for NetworkPlanner {
    fn plan(&mut self, instance: &ProblemInstance) -> Result<ControlSequence> {
        let raw = self.net.forward(&encode_instance(instance), &self.cfg)?;
        Ok(apply_correction(
            &raw,
            &instance.obstacles,
            &self.cfg,
            self.correction,
            &self.slpg,
            &self.dc3,
        ))
    }
}

/// Samples `n` world-frame tasks; obstacles keep both the start and the goal
/// strictly safe. Task `i` depends only on `(seed, i)`.
///
/// The goal heading is set to the start→goal bearing: a goal heading that
/// fights the approach direction stalls receding-horizon planners just
/// outside the goal disc, which would measure the task design rather than
/// the planner. Arbitrary headings remain expressible through [`Task`].
pub fn sample_tasks(
    n: usize,
    seed: u64,
    dataset: &DatasetConfig,
    cfg: &PlannerConfig,
) -> Result<Vec<Task>> {
    dataset.validate()?;
    cfg.validate()?;
    let mut tasks = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = stream(seed, STREAM_TASKS, &[i as u64]);
        let start = sample_pose(&mut rng, dataset);
        let mut goal = sample_pose(&mut rng, dataset);
        let mut attempts = 0;
        while !goal_distance_ok(&start, &goal) && attempts < 100 {
            goal = sample_pose(&mut rng, dataset);
            attempts += 1;
        }
        goal.yaw = wrap_angle((goal.y - start.y).atan2(goal.x - start.x));
        let clear = [[start.x, start.y], [goal.x, goal.y]];
        let mut obstacles = Vec::with_capacity(dataset.n_obstacles);
        for _ in 0..dataset.n_obstacles {
            obstacles.push(sample_obstacle(&mut rng, &clear, dataset, cfg)?);
        }
        tasks.push(Task {
            start,
            goal,
            obstacles,
            target_radius: DEFAULT_TARGET_RADIUS,
            max_steps: DEFAULT_MAX_STEPS,
        });
    }
    Ok(tasks)
}

/// Whether a start→goal pair lies in the accepted distance band. On maps
/// too small for the band, rejection sampling gives up after a bounded
/// number of attempts and keeps the last draw.
fn goal_distance_ok(start: &State, goal: &State) -> bool {
    let d = (goal.x - start.x).hypot(goal.y - start.y);
    (TASK_MIN_GOAL_DISTANCE..=TASK_MAX_GOAL_DISTANCE).contains(&d)
}

const TASKS_FORMAT: &str = "somtp-tasks";
const TASKS_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TasksHeader {
    format: String,
    version: u32,
    count: usize,
    seed: u64,
    dataset_config: DatasetConfig,
    planner_config: PlannerConfig,
}

#[derive(Serialize, Deserialize)]
struct TaskRecord {
    start: [f64; 3],
    goal: [f64; 3],
    obstacles: Vec<[f64; 3]>,
    target_radius: f64,
    max_steps: usize,
}

/// A task-suite file: the tasks plus the configuration that produced them.
#[derive(Debug, Clone)]
pub struct TaskFile {
    /// Seed the tasks were sampled with.
    pub seed: u64,
    /// Sampling configuration.
    pub dataset_config: DatasetConfig,
    /// Planner configuration active at generation time.
    pub planner_config: PlannerConfig,
    /// The tasks, in generation order (line order in the file).
    pub tasks: Vec<Task>,
}

/// Serializes a task suite to line-delimited JSON with a header line.
pub fn save_tasks(path: &Path, file: &TaskFile) -> Result<()> {
    let header = TasksHeader {
        format: TASKS_FORMAT.to_string(),
        version: TASKS_VERSION,
        count: file.tasks.len(),
        seed: file.seed,
        dataset_config: file.dataset_config.clone(),
        planner_config: file.planner_config.clone(),
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for task in &file.tasks {
        let record = TaskRecord {
            start: task.start.as_array(),
            goal: task.goal.as_array(),
            obstacles: task.obstacles.iter().map(|o| [o.x, o.y, o.radius]).collect(),
            target_radius: task.target_radius,
            max_steps: task.max_steps,
        };
        out.push_str(&serde_json::to_string(&record).expect("record serializes"));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// Reads a task-suite file, validating format, version, and task count.
pub fn load_tasks(path: &Path) -> Result<TaskFile> {
    let text = read_to_string(path)?;
    let display = path.display().to_string();
    let mut lines = text.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| Error::format(&display, "empty file"))?;
    let header: TasksHeader = serde_json::from_str(header_line)
        .map_err(|e| Error::format(&display, format!("bad header: {e}")))?;
    if header.format != TASKS_FORMAT {
        return Err(Error::format(&display, format!("not a task file (format {})", header.format)));
    }
    if header.version != TASKS_VERSION {
        return Err(Error::format(
            &display,
            format!("unsupported version {} (expected {TASKS_VERSION})", header.version),
        ));
    }
    let mut tasks = Vec::with_capacity(header.count);
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let record: TaskRecord = serde_json::from_str(line)
            .map_err(|e| Error::format(&display, format!("line {}: {e}", lineno + 2)))?;
        tasks.push(Task {
            start: State::from_array(record.start),
            goal: State::from_array(record.goal),
            obstacles: record
                .obstacles
                .into_iter()
                .map(|o| Obstacle { x: o[0], y: o[1], radius: o[2] })
                .collect(),
            target_radius: record.target_radius,
            max_steps: record.max_steps,
        });
    }
    if tasks.len() != header.count {
        return Err(Error::format(
            &display,
            format!("truncated: header states {} tasks, found {}", header.count, tasks.len()),
        ));
    }
    Ok(TaskFile {
        seed: header.seed,
        dataset_config: header.dataset_config,
        planner_config: header.planner_config,
        tasks,
    })
}
