//! Two-dimensional reach and push tasks rendered to small RGB frames.
//!
//! The workspace is the unit square. An effector moves by a clipped velocity
//! command; objects are coloured disks or squares. Reach tasks reward
//! proximity of the effector to the target object; push tasks reward moving
//! the target block onto a goal marker. Success is judged at the last step.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{argument, Error, Result};
use crate::image::Frame;

pub const ACTION_DIM: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    ReachSpecific,
    ReachDistinct,
    PushSpecific,
    PushDistinct,
}

impl Task {
    pub const ALL: [Task; 4] = [
        Task::ReachSpecific,
        Task::ReachDistinct,
        Task::PushSpecific,
        Task::PushDistinct,
    ];

    pub fn is_push(self) -> bool {
        matches!(self, Task::PushSpecific | Task::PushDistinct)
    }

    pub fn is_specific(self) -> bool {
        matches!(self, Task::ReachSpecific | Task::PushSpecific)
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::ReachSpecific => "reach-specific",
            Task::ReachDistinct => "reach-distinct",
            Task::PushSpecific => "push-specific",
            Task::PushDistinct => "push-distinct",
        }
    }

    /// Upper bound on objects in a scene, which sizes the slot count.
    pub fn max_objects(self, max_distractors: usize) -> usize {
        if self.is_specific() {
            1 + max_distractors
        } else {
            5
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| argument(format!("unknown task {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub task: Task,
    pub image_size: usize,
    pub episode_length: usize,
    /// temperature of the distance-to-goal term
    pub t1: f64,
    /// temperature of the effector-to-block term
    pub t2: f64,
    pub success_distance: f64,
    pub max_distractors: usize,
    pub step_size: f64,
    pub object_radius: f64,
    pub effector_radius: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            task: Task::ReachSpecific,
            image_size: 64,
            episode_length: 50,
            t1: 20.0,
            t2: 10.0,
            success_distance: 0.05,
            max_distractors: 4,
            step_size: 0.05,
            object_radius: 0.06,
            effector_radius: 0.04,
        }
    }
}

impl EnvConfig {
    pub fn for_task(task: Task) -> Self {
        Self {
            task,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.t1 > 0.0 && self.t2 > 0.0) {
            return bad("reward temperatures must be positive");
        }
        if !(self.success_distance > 0.0) {
            return bad("success distance must be positive");
        }
        if self.image_size < 32 {
            return bad("image_size must be at least 32");
        }
        if self.episode_length == 0 {
            return bad("episode_length must be positive");
        }
        if self.max_distractors > PALETTE.len() - 1 {
            return bad("more distractors than palette colours");
        }
        if !(self.step_size > 0.0 && self.object_radius > 0.0 && self.effector_radius > 0.0) {
            return bad("geometry must be positive");
        }
        Ok(())
    }

    pub fn max_objects(&self) -> usize {
        self.task.max_objects(self.max_distractors)
    }
}

pub const RED: usize = 0;

/// Saturated object colours; index 0 is red.
pub const PALETTE: [[u8; 3]; 8] = [
    [230, 25, 25],
    [25, 200, 40],
    [30, 70, 235],
    [240, 220, 20],
    [220, 30, 220],
    [20, 220, 230],
    [245, 140, 10],
    [130, 60, 200],
];

const BACKGROUND: [u8; 3] = [26, 26, 26];
const EFFECTOR: [u8; 3] = [250, 250, 250];
const GOAL: [u8; 3] = [128, 128, 128];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    Disk,
    Square,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Object {
    pub position: [f64; 2],
    pub color: usize,
    pub shape: Shape,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub effector: [f64; 2],
    pub objects: Vec<Object>,
    /// goal marker for push tasks; unused by reach tasks
    pub goal: [f64; 2],
    pub target_index: usize,
    pub step_count: usize,
}

impl EnvState {
    /// Position the task measures success against.
    pub fn target_position(&self, task: Task) -> [f64; 2] {
        if task.is_push() {
            self.goal
        } else {
            self.objects[self.target_index].position
        }
    }
}

/// Clipped 4-component command; only the planar components move the effector.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Action(pub [f64; ACTION_DIM]);

impl Action {
    pub fn new(raw: [f64; ACTION_DIM]) -> Result<Self> {
        if let Some(&bad) = raw.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(bad));
        }
        Ok(Self(raw.map(|v| v.clamp(-1.0, 1.0))))
    }

    pub fn zero() -> Self {
        Self([0.0; ACTION_DIM])
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self(std::array::from_fn(|_| rng.random_range(-1.0..=1.0)))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub frame: Frame,
    pub reward: f64,
    pub done: bool,
    pub success: bool,
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// `exp(-t1 |p_e - p_t|)`.
pub fn reach_reward(effector: [f64; 2], target: [f64; 2], t1: f64) -> f64 {
    (-t1 * distance(effector, target)).exp()
}

/// `0.9 exp(-t1 |p_c - p_t|) + 0.1 exp(-t2 |p_e - p_c|)`.
pub fn push_reward(effector: [f64; 2], block: [f64; 2], goal: [f64; 2], t1: f64, t2: f64) -> f64 {
    0.9 * (-t1 * distance(block, goal)).exp() + 0.1 * (-t2 * distance(effector, block)).exp()
}

#[derive(Clone, Debug)]
pub struct BlockWorld {
    config: EnvConfig,
}

impl BlockWorld {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn reset(&self, seed: u64) -> (EnvState, Frame) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = self.sample_state(&mut rng);
        let frame = self.render(&state);
        (state, frame)
    }

    fn sample_colors(&self, rng: &mut ChaCha8Rng) -> (Vec<usize>, usize) {
        if self.config.task.is_specific() {
            let distractors = rng.random_range(0..=self.config.max_distractors);
            let mut others: Vec<usize> = (1..PALETTE.len()).collect();
            others.shuffle(rng);
            let mut colors = vec![RED];
            colors.extend(&others[..distractors]);
            (colors, 0)
        } else {
            let n = rng.random_range(3..=5);
            let mut palette: Vec<usize> = (0..PALETTE.len()).collect();
            palette.shuffle(rng);
            let unique = palette[0];
            let rest = n - 1;
            // one group, or two groups of two when four objects remain
            let groups = if rest == 4 && rng.random_bool(0.5) { vec![2, 2] } else { vec![rest] };
            let mut colors = vec![unique];
            for (g, &size) in groups.iter().enumerate() {
                colors.extend(std::iter::repeat_n(palette[1 + g], size));
            }
            (colors, 0)
        }
    }

    fn sample_state(&self, rng: &mut ChaCha8Rng) -> EnvState {
        let c = &self.config;
        let (colors, target_slot) = self.sample_colors(rng);
        let margin = c.object_radius + 0.04;
        let uniform = |rng: &mut ChaCha8Rng| -> [f64; 2] {
            [rng.random_range(margin..1.0 - margin), rng.random_range(margin..1.0 - margin)]
        };
        let min_sep = 2.2 * c.object_radius;
        loop {
            let mut positions: Vec<[f64; 2]> = Vec::with_capacity(colors.len());
            let mut ok = true;
            for _ in 0..colors.len() {
                let mut placed = false;
                for _ in 0..200 {
                    let p = uniform(rng);
                    if positions.iter().all(|&q| distance(p, q) >= min_sep) {
                        positions.push(p);
                        placed = true;
                        break;
                    }
                }
                if !placed {
                    ok = false;
                    break;
                }
            }
            if !ok {
                continue;
            }
            let contact = c.object_radius + c.effector_radius;
            let effector = (0..200)
                .map(|_| uniform(rng))
                .find(|&p| !c.task.is_push() || positions.iter().all(|&q| distance(p, q) > contact + 0.02));
            let Some(effector) = effector else { continue };
            let goal = if c.task.is_push() {
                let target = positions[target_slot];
                let found = (0..200)
                    .map(|_| uniform(rng))
                    .find(|&g| distance(g, target) >= 0.2);
                match found {
                    Some(g) => g,
                    None => continue,
                }
            } else {
                [0.5, 0.5]
            };
            // shuffle so the target is not always the first object
            let mut order: Vec<usize> = (0..colors.len()).collect();
            order.shuffle(rng);
            let objects: Vec<Object> = order
                .iter()
                .map(|&i| Object {
                    position: positions[i],
                    color: colors[i],
                    shape: if rng.random_bool(0.5) { Shape::Disk } else { Shape::Square },
                })
                .collect();
            let target_index = order.iter().position(|&i| i == target_slot).unwrap();
            return EnvState {
                effector,
                objects,
                goal,
                target_index,
                step_count: 0,
            };
        }
    }

    pub fn is_done(&self, state: &EnvState) -> bool {
        state.step_count >= self.config.episode_length
    }

    pub fn reward(&self, state: &EnvState) -> f64 {
        let c = &self.config;
        let target = state.objects[state.target_index].position;
        if c.task.is_push() {
            push_reward(state.effector, target, state.goal, c.t1, c.t2)
        } else {
            reach_reward(state.effector, target, c.t1)
        }
    }

    /// Distance the success criterion thresholds.
    pub fn task_distance(&self, state: &EnvState) -> f64 {
        let target = state.objects[state.target_index].position;
        if self.config.task.is_push() {
            distance(target, state.goal)
        } else {
            distance(state.effector, target)
        }
    }

    pub fn step(&self, state: &mut EnvState, action: &Action) -> Result<StepOutcome> {
        if self.is_done(state) {
            return Err(Error::Usage("step called on a finished episode".into()));
        }
        let action = Action::new(action.0)?;
        let c = &self.config;
        for (p, a) in state.effector.iter_mut().zip(&action.0[..2]) {
            *p = (*p + c.step_size * a).clamp(0.0, 1.0);
        }
        if c.task.is_push() {
            self.resolve_contacts(state, action);
        }
        state.step_count += 1;
        let done = self.is_done(state);
        let success = done && self.task_distance(state) < c.success_distance;
        Ok(StepOutcome {
            frame: self.render(state),
            reward: self.reward(state),
            done,
            success,
        })
    }

    /// Moves blocks out of the effector along the contact normal, then lets
    /// each moved block displace blocks it now overlaps.
    fn resolve_contacts(&self, state: &mut EnvState, action: Action) {
        let c = &self.config;
        let r = c.object_radius;
        let fallback = {
            let n = action.0[0].hypot(action.0[1]);
            if n > 0.0 {
                [action.0[0] / n, action.0[1] / n]
            } else {
                [1.0, 0.0]
            }
        };
        let separate = |pusher: [f64; 2], block: &mut [f64; 2], reach: f64| -> bool {
            let d = distance(pusher, *block);
            if d >= reach {
                return false;
            }
            let normal = if d > 1e-12 {
                [(block[0] - pusher[0]) / d, (block[1] - pusher[1]) / d]
            } else {
                fallback
            };
            for k in 0..2 {
                block[k] = (pusher[k] + normal[k] * reach).clamp(r, 1.0 - r);
            }
            true
        };
        let mut moved = Vec::new();
        for (i, obj) in state.objects.iter_mut().enumerate() {
            if separate(state.effector, &mut obj.position, r + c.effector_radius) {
                moved.push(i);
            }
        }
        for &i in &moved {
            let pusher = state.objects[i].position;
            for (j, obj) in state.objects.iter_mut().enumerate() {
                if j != i && !moved.contains(&j) {
                    separate(pusher, &mut obj.position, 2.0 * r);
                }
            }
        }
    }

    pub fn render(&self, state: &EnvState) -> Frame {
        let c = &self.config;
        let s = c.image_size;
        let mut frame = Frame::filled(s, BACKGROUND);
        if c.task.is_push() {
            draw(&mut frame, state.goal, c.effector_radius, Shape::Square, GOAL);
        }
        for obj in &state.objects {
            draw(&mut frame, obj.position, c.object_radius, obj.shape, PALETTE[obj.color]);
        }
        draw(&mut frame, state.effector, c.effector_radius, Shape::Disk, EFFECTOR);
        frame
    }

    /// Runs a whole episode with `policy`, recording frames aligned with rewards.
    pub fn rollout(
        &self,
        seed: u64,
        mut policy: impl FnMut(&Frame, usize) -> Action,
    ) -> Result<Episode> {
        let (mut state, frame) = self.reset(seed);
        let mut episode = Episode::start(frame);
        while !self.is_done(&state) {
            let action = policy(episode.frames.last().unwrap(), state.step_count);
            let out = self.step(&mut state, &action)?;
            episode.push(action, out);
        }
        episode.finish();
        Ok(episode)
    }
}

/// Rasterizes a filled disk or square without anti-aliasing. Row 0 is `y = 0`.
fn draw(frame: &mut Frame, center: [f64; 2], radius: f64, shape: Shape, rgb: [u8; 3]) {
    let s = frame.size();
    let scale = s as f64;
    let lo = |v: f64| (((v - radius) * scale).floor().max(0.0)) as usize;
    let hi = |v: f64| (((v + radius) * scale).ceil().min(scale)) as usize;
    for row in lo(center[1])..hi(center[1]) {
        let y = (row as f64 + 0.5) / scale;
        for col in lo(center[0])..hi(center[0]) {
            let x = (col as f64 + 0.5) / scale;
            let (dx, dy) = (x - center[0], y - center[1]);
            let inside = match shape {
                Shape::Disk => dx * dx + dy * dy <= radius * radius,
                Shape::Square => dx.abs() <= radius && dy.abs() <= radius,
            };
            if inside {
                frame.set_pixel(row, col, rgb);
            }
        }
    }
}

/// One interaction episode. `frames[t]` is observed before `actions[t]` is
/// taken and `rewards[t]` is the reward received on arriving at `frames[t]`
/// (so `rewards[0] = 0`). The final action is a zero pad.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub frames: Vec<Frame>,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
    pub success: bool,
}

impl Episode {
    pub fn start(first: Frame) -> Self {
        Self {
            frames: vec![first],
            actions: Vec::new(),
            rewards: vec![0.0],
            success: false,
        }
    }

    pub fn push(&mut self, action: Action, outcome: StepOutcome) {
        self.actions.push(action);
        self.frames.push(outcome.frame);
        self.rewards.push(outcome.reward);
        self.success |= outcome.success;
    }

    /// Pads the action list to the frame count.
    pub fn finish(&mut self) {
        while self.actions.len() < self.frames.len() {
            self.actions.push(Action::zero());
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub action: [f64; ACTION_DIM],
    pub reward: f64,
    pub done: bool,
    pub success: bool,
}

/// Writes one JSON record per environment step.
pub fn write_step_log(episode: &Episode, out: &mut impl Write) -> Result<()> {
    let last = episode.frames.len() - 1;
    for t in 1..episode.frames.len() {
        let rec = StepRecord {
            step: t,
            action: episode.actions[t - 1].0,
            reward: episode.rewards[t],
            done: t == last,
            success: t == last && episode.success,
        };
        serde_json::to_writer(&mut *out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
