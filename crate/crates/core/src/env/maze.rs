//! Image Hard Maze: a wheeled robot seen from above as an 84x84 image.
//!
//! World coordinates have `y` pointing up; heading 0 faces `+x` and positive
//! rotation is counter-clockwise. Image row 0 is the top of the world. The
//! observation is four stacked frames in height-width-channel order, channel 0
//! being the current frame.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

use super::{EpisodeResult, Environment, Observation, Step};
use crate::incremental::IncrementalForward;
use crate::noise::Seed;
use crate::policy::{Network, ShapeError};

pub const FRAME: usize = 84;
pub const STACK: usize = 4;
pub const OBS_LEN: usize = FRAME * FRAME * STACK;

pub const WALL: f32 = 1.0;
pub const GOAL: f32 = 0.5;
pub const ROBOT: f32 = 0.75;

pub(crate) fn default_max_steps() -> u32 {
    400
}
pub(crate) fn default_v_max() -> f64 {
    3.0
}
pub(crate) fn default_turn_max() -> f64 {
    0.1309
}

const BUILTIN_MAP: &str = include_str!("../../assets/image_hard_maze_v1.maze");

#[derive(Debug, Error)]
pub enum MapError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("map is missing the `{0}` record")]
    Missing(&'static str),
    #[error("invalid map: {0}")]
    Invalid(String),
    #[error("reading map {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    pub a: (f64, f64),
    pub b: (f64, f64),
}

impl Segment {
    /// Euclidean distance from point `p` to the segment.
    pub fn distance_to(&self, p: (f64, f64)) -> f64 {
        let (dx, dy) = (self.b.0 - self.a.0, self.b.1 - self.a.1);
        let len2 = dx * dx + dy * dy;
        let t = if len2 == 0.0 {
            0.0
        } else {
            (((p.0 - self.a.0) * dx + (p.1 - self.a.1) * dy) / len2).clamp(0.0, 1.0)
        };
        let (cx, cy) = (self.a.0 + t * dx, self.a.1 + t * dy);
        ((p.0 - cx) * (p.0 - cx) + (p.1 - cy) * (p.1 - cy)).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Landmark {
    pub name: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RobotPose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MazeMap {
    pub world: (f64, f64),
    pub start: RobotPose,
    pub goal: (f64, f64),
    pub goal_radius: f64,
    pub robot_radius: f64,
    pub walls: Vec<Segment>,
    /// Named points of interest (trap locations); not used by the dynamics.
    pub landmarks: Vec<Landmark>,
}

impl MazeMap {
    /// The bundled map.
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_MAP).expect("bundled map parses")
    }

    pub fn load(path: &Path) -> Result<Self, MapError> {
        let text = std::fs::read_to_string(path).map_err(|source| MapError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Parses the text map format: `#` comments, keyword header records
    /// (`world`, `start`, `goal`, `goal_radius`, `robot_radius`, `trap`) and
    /// one wall per line as four numbers `x1 y1 x2 y2`.
    pub fn parse(text: &str) -> Result<Self, MapError> {
        let mut world = None;
        let mut start = None;
        let mut goal = None;
        let mut goal_radius = None;
        let mut robot_radius = None;
        let mut walls = Vec::new();
        let mut landmarks = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let fields: Vec<&str> = content.split_whitespace().collect();
            let err = |reason: &str| MapError::Parse {
                line,
                reason: reason.to_string(),
            };
            let nums = |items: &[&str]| -> Result<Vec<f64>, MapError> {
                items
                    .iter()
                    .map(|s| {
                        s.parse::<f64>()
                            .ok()
                            .filter(|v| v.is_finite())
                            .ok_or_else(|| err(&format!("bad number `{s}`")))
                    })
                    .collect()
            };
            let expect = |n: usize| {
                if fields.len() == n + 1 {
                    Ok(())
                } else {
                    Err(err(&format!("`{}` takes {n} values", fields[0])))
                }
            };
            match fields[0] {
                "world" => {
                    expect(2)?;
                    let v = nums(&fields[1..])?;
                    world = Some((v[0], v[1]));
                }
                "start" => {
                    expect(3)?;
                    let v = nums(&fields[1..])?;
                    start = Some(RobotPose {
                        x: v[0],
                        y: v[1],
                        heading: v[2],
                    });
                }
                "goal" => {
                    expect(2)?;
                    let v = nums(&fields[1..])?;
                    goal = Some((v[0], v[1]));
                }
                "goal_radius" => {
                    expect(1)?;
                    goal_radius = Some(nums(&fields[1..])?[0]);
                }
                "robot_radius" => {
                    expect(1)?;
                    robot_radius = Some(nums(&fields[1..])?[0]);
                }
                "trap" => {
                    expect(3)?;
                    let v = nums(&fields[2..])?;
                    landmarks.push(Landmark {
                        name: fields[1].to_string(),
                        x: v[0],
                        y: v[1],
                    });
                }
                _ if fields.len() == 4 => {
                    let v = nums(&fields)?;
                    walls.push(Segment {
                        a: (v[0], v[1]),
                        b: (v[2], v[3]),
                    });
                }
                other => return Err(err(&format!("unknown record `{other}`"))),
            }
        }
        Ok(MazeMap {
            world: world.ok_or(MapError::Missing("world"))?,
            start: start.ok_or(MapError::Missing("start"))?,
            goal: goal.ok_or(MapError::Missing("goal"))?,
            goal_radius: goal_radius.ok_or(MapError::Missing("goal_radius"))?,
            robot_radius: robot_radius.ok_or(MapError::Missing("robot_radius"))?,
            walls,
            landmarks,
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "world {} {}", self.world.0, self.world.1);
        let _ = writeln!(
            s,
            "start {} {} {}",
            self.start.x, self.start.y, self.start.heading
        );
        let _ = writeln!(s, "goal {} {}", self.goal.0, self.goal.1);
        let _ = writeln!(s, "goal_radius {}", self.goal_radius);
        let _ = writeln!(s, "robot_radius {}", self.robot_radius);
        for l in &self.landmarks {
            let _ = writeln!(s, "trap {} {} {}", l.name, l.x, l.y);
        }
        for w in &self.walls {
            let _ = writeln!(s, "{} {} {} {}", w.a.0, w.a.1, w.b.0, w.b.1);
        }
        s
    }

    pub fn landmark(&self, name: &str) -> Option<&Landmark> {
        self.landmarks.iter().find(|l| l.name == name)
    }

    /// True when a disc of the robot's radius at `(x, y)` touches a wall or
    /// leaves the world.
    pub fn collides(&self, x: f64, y: f64) -> bool {
        let r = self.robot_radius;
        if x < r || y < r || x > self.world.0 - r || y > self.world.1 - r {
            return true;
        }
        self.walls.iter().any(|w| w.distance_to((x, y)) < r)
    }

    pub fn validate(&self, params: &MazeParams) -> Result<(), MapError> {
        let (w, h) = self.world;
        let inside = |x: f64, y: f64| (0.0..=w).contains(&x) && (0.0..=h).contains(&y);
        if !(w > 0.0 && h > 0.0) {
            return Err(MapError::Invalid("world size must be positive".into()));
        }
        if !(self.robot_radius > 0.0 && self.goal_radius > 0.0) {
            return Err(MapError::Invalid("radii must be positive".into()));
        }
        if !inside(self.start.x, self.start.y) || !inside(self.goal.0, self.goal.1) {
            return Err(MapError::Invalid("start and goal must lie inside the world".into()));
        }
        if self.collides(self.start.x, self.start.y) {
            return Err(MapError::Invalid("robot spawn intersects a wall".into()));
        }
        if params.v_max >= 2.0 * self.robot_radius {
            return Err(MapError::Invalid(format!(
                "v_max {} must stay below the robot diameter {} to rule out tunneling",
                params.v_max,
                2.0 * self.robot_radius
            )));
        }
        Ok(())
    }

    /// Distance from the single-precision position to the goal.
    pub fn goal_distance(&self, pose: &RobotPose) -> f64 {
        let (x, y) = behavior_of(pose);
        let (dx, dy) = (f64::from(x) - self.goal.0, f64::from(y) - self.goal.1);
        (dx * dx + dy * dy).sqrt()
    }
}

fn behavior_of(pose: &RobotPose) -> (f32, f32) {
    (pose.x as f32, pose.y as f32)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MazeParams {
    pub max_steps: u32,
    pub v_max: f64,
    pub turn_max: f64,
}

impl Default for MazeParams {
    fn default() -> Self {
        MazeParams {
            max_steps: default_max_steps(),
            v_max: default_v_max(),
            turn_max: default_turn_max(),
        }
    }
}

/// One step of the robot dynamics. Rotation always applies; a translation that
/// would put the robot disc into a wall is dropped entirely (no sliding).
pub fn maze_step(pose: &RobotPose, action: &[f32], map: &MazeMap, params: &MazeParams) -> RobotPose {
    let speed = f64::from(action[0].clamp(-1.0, 1.0));
    let rotation = f64::from(action[1].clamp(-1.0, 1.0));
    let heading = pose.heading + rotation * params.turn_max;
    let step = speed * params.v_max;
    let (x, y) = (pose.x + step * heading.cos(), pose.y + step * heading.sin());
    if step != 0.0 && !map.collides(x, y) {
        RobotPose { x, y, heading }
    } else {
        RobotPose {
            x: pose.x,
            y: pose.y,
            heading,
        }
    }
}

/// World-to-pixel transform onto the 84x84 frame.
#[derive(Clone, Copy, Debug)]
struct PixelMap {
    sx: f64,
    sy: f64,
    height: f64,
}

impl PixelMap {
    fn new(map: &MazeMap) -> Self {
        PixelMap {
            sx: FRAME as f64 / map.world.0,
            sy: FRAME as f64 / map.world.1,
            height: map.world.1,
        }
    }

    /// Continuous pixel coordinates (column, row).
    fn to_pixel(self, x: f64, y: f64) -> (f64, f64) {
        (x * self.sx, (self.height - y) * self.sy)
    }

    fn cell(v: f64) -> usize {
        (v.floor().max(0.0) as usize).min(FRAME - 1)
    }

    fn center_world(self, col: usize, row: usize) -> (f64, f64) {
        (
            (col as f64 + 0.5) / self.sx,
            self.height - (row as f64 + 0.5) / self.sy,
        )
    }
}

/// Pixels covered by a disc: every pixel whose centre lies within `radius`,
/// plus the pixel containing the centre. Sorted ascending.
fn disc_pixels(pm: PixelMap, cx: f64, cy: f64, radius: f64, out: &mut Vec<usize>) {
    out.clear();
    let (pc, pr) = pm.to_pixel(cx, cy);
    let (rc, rr) = (radius * pm.sx, radius * pm.sy);
    let row_lo = (pr - rr - 1.0).floor().max(0.0) as usize;
    let row_hi = ((pr + rr + 1.0).ceil().max(0.0) as usize).min(FRAME - 1);
    let col_lo = (pc - rc - 1.0).floor().max(0.0) as usize;
    let col_hi = ((pc + rc + 1.0).ceil().max(0.0) as usize).min(FRAME - 1);
    let center = PixelMap::cell(pr) * FRAME + PixelMap::cell(pc);
    let r2 = radius * radius;
    for row in row_lo..=row_hi {
        for col in col_lo..=col_hi {
            let (wx, wy) = pm.center_world(col, row);
            let idx = row * FRAME + col;
            if (wx - cx) * (wx - cx) + (wy - cy) * (wy - cy) <= r2 || idx == center {
                out.push(idx);
            }
        }
    }
}

/// Frame without the robot: background 0, walls, goal disc.
pub fn render_static(map: &MazeMap) -> Vec<f32> {
    let pm = PixelMap::new(map);
    let mut frame = vec![0.0f32; FRAME * FRAME];
    for w in &map.walls {
        let (c0, r0) = pm.to_pixel(w.a.0, w.a.1);
        let (c1, r1) = pm.to_pixel(w.b.0, w.b.1);
        let n = ((c1 - c0).abs().max((r1 - r0).abs()) * 2.0).ceil() as usize + 1;
        for i in 0..=n {
            let t = i as f64 / n as f64;
            let (c, r) = (c0 + t * (c1 - c0), r0 + t * (r1 - r0));
            frame[PixelMap::cell(r) * FRAME + PixelMap::cell(c)] = WALL;
        }
    }
    let mut disc = Vec::new();
    disc_pixels(pm, map.goal.0, map.goal.1, map.goal_radius, &mut disc);
    for &p in &disc {
        frame[p] = GOAL;
    }
    frame
}

pub fn robot_pixels(map: &MazeMap, pose: &RobotPose) -> Vec<usize> {
    let mut out = Vec::new();
    disc_pixels(PixelMap::new(map), pose.x, pose.y, map.robot_radius, &mut out);
    out
}

/// Full 84x84 grayscale rendering of the map with the robot.
pub fn render_frame(map: &MazeMap, pose: &RobotPose) -> Vec<f32> {
    let mut frame = render_static(map);
    for p in robot_pixels(map, pose) {
        frame[p] = ROBOT;
    }
    frame
}

/// Map, dynamics constants and the pre-rendered static frame.
#[derive(Debug)]
pub struct MazeContext {
    pub map: MazeMap,
    pub params: MazeParams,
    static_frame: Vec<f32>,
    pixel_map: PixelMap,
}

impl MazeContext {
    pub fn new(map: MazeMap, params: MazeParams) -> Result<Self, MapError> {
        map.validate(&params)?;
        Ok(MazeContext {
            static_frame: render_static(&map),
            pixel_map: PixelMap::new(&map),
            map,
            params,
        })
    }

    pub fn static_frame(&self) -> &[f32] {
        &self.static_frame
    }

    fn robot_pixels_into(&self, pose: &RobotPose, out: &mut Vec<usize>) {
        disc_pixels(self.pixel_map, pose.x, pose.y, self.map.robot_radius, out);
    }

    fn stacked_static(&self) -> Vec<f32> {
        let mut obs = vec![0.0; OBS_LEN];
        for (p, &v) in self.static_frame.iter().enumerate() {
            obs[p * STACK..(p + 1) * STACK].fill(v);
        }
        obs
    }

    pub fn fitness_of(&self, pose: &RobotPose) -> f64 {
        -self.map.goal_distance(pose)
    }

    pub fn reached_goal(&self, pose: &RobotPose) -> bool {
        self.map.goal_distance(pose) <= self.map.goal_radius
    }
}

/// Step-by-step maze environment that renders full observations.
pub struct MazeEnv {
    ctx: Arc<MazeContext>,
    pose: RobotPose,
    /// Robot pixels for the current frame and the three before it.
    history: [Vec<usize>; STACK],
}

impl MazeEnv {
    pub fn new(ctx: Arc<MazeContext>) -> Self {
        let pose = ctx.map.start;
        MazeEnv {
            ctx,
            pose,
            history: Default::default(),
        }
    }

    pub fn pose(&self) -> RobotPose {
        self.pose
    }

    fn observation(&self) -> Observation {
        let mut obs = self.ctx.stacked_static();
        for (slot, pixels) in self.history.iter().enumerate() {
            for &p in pixels {
                obs[p * STACK + slot] = ROBOT;
            }
        }
        Observation(obs)
    }
}

impl Environment for MazeEnv {
    fn observation_len(&self) -> usize {
        OBS_LEN
    }

    fn action_len(&self) -> usize {
        2
    }

    fn deterministic(&self) -> bool {
        true
    }

    fn max_steps(&self) -> u32 {
        self.ctx.params.max_steps
    }

    fn reset(&mut self, _episode_seed: Seed) -> Observation {
        self.pose = self.ctx.map.start;
        let pixels = robot_pixels(&self.ctx.map, &self.pose);
        self.history = [pixels.clone(), pixels.clone(), pixels.clone(), pixels];
        self.observation()
    }

    fn step(&mut self, action: &[f32]) -> Step {
        self.pose = maze_step(&self.pose, action, &self.ctx.map, &self.ctx.params);
        self.history.rotate_right(1);
        self.history[0] = robot_pixels(&self.ctx.map, &self.pose);
        Step {
            observation: self.observation(),
            done: self.ctx.reached_goal(&self.pose),
        }
    }

    fn fitness(&self) -> f64 {
        self.ctx.fitness_of(&self.pose)
    }

    fn behavior(&self) -> Vec<f32> {
        let (x, y) = behavior_of(&self.pose);
        vec![x, y]
    }
}

/// Maze rollout with the incremental evaluator. Produces exactly the result of
/// [`super::run_episode_with`] on a [`MazeEnv`].
pub fn run_fast(ctx: &MazeContext, net: &Network, theta: &[f32]) -> Result<EpisodeResult, ShapeError> {
    net.check_params(theta)?;
    if net.input().len() != OBS_LEN {
        return Err(ShapeError::Observation {
            expected: OBS_LEN,
            got: net.input().len(),
        });
    }
    if net.output_len() != 2 {
        return Err(ShapeError::Length {
            expected: 2,
            got: net.output_len(),
        });
    }
    let mut pose = ctx.map.start;
    let mut current = Vec::new();
    ctx.robot_pixels_into(&pose, &mut current);
    let mut history: [Vec<usize>; STACK] = std::array::from_fn(|_| current.clone());
    let mut obs = ctx.stacked_static();
    for (slot, pixels) in history.iter().enumerate() {
        for &p in pixels {
            obs[p * STACK + slot] = ROBOT;
        }
    }
    let mut policy = IncrementalForward::new(net, theta, obs)?;
    let mut changed = Vec::new();
    let mut frames = 0u32;
    let max_steps = ctx.params.max_steps;
    while frames < max_steps {
        let out = policy.output();
        let action = [out[0], out[1]];
        pose = maze_step(&pose, &action, &ctx.map, &ctx.params);
        frames += 1;
        if ctx.reached_goal(&pose) || frames == max_steps {
            break;
        }
        ctx.robot_pixels_into(&pose, &mut current);
        if history.iter().all(|h| *h == current) {
            continue;
        }
        let input = policy.input_mut();
        changed.clear();
        for (slot, pixels) in history.iter().enumerate() {
            for &p in pixels {
                input[p * STACK + slot] = ctx.static_frame[p];
                changed.push(p);
            }
        }
        history.rotate_right(1);
        std::mem::swap(&mut history[0], &mut current);
        for (slot, pixels) in history.iter().enumerate() {
            for &p in pixels {
                input[p * STACK + slot] = ROBOT;
                changed.push(p);
            }
        }
        changed.sort_unstable();
        changed.dedup();
        policy.update(&changed);
    }
    let (x, y) = behavior_of(&pose);
    Ok(EpisodeResult {
        fitness: ctx.fitness_of(&pose),
        bc: vec![x, y],
        frames,
    })
}
