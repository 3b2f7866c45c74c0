//! Grid-world warehouse benchmark.
//!
//! Each robot lives on a `W × H` grid with a heading and a carrying flag.
//! Tasks ask a robot to pick up a rack, bring it to the feed cell and put
//! it back. Robots do not interact.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::logic::{parse_co_safe, Formula};
use crate::model::{Mdp, MdpBuilder, ModelError, RewardStructure};
use crate::morap::{build_instance, AgentSpec, InstanceJson, MorapError, MorapInstance, TaskSpec};

pub const DEFAULT_SLIP: f64 = 0.05;
pub const MAX_RETRIES: usize = 10;

#[derive(Debug, thiserror::Error)]
pub enum WarehouseError {
    #[error("invalid warehouse configuration: {0}")]
    InvalidConfig(String),
    #[error("no valid instance after {0} attempts")]
    GenerationFailure(usize),
    #[error(transparent)]
    Morap(#[from] MorapError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WarehouseConfig {
    #[serde(rename = "W")]
    pub width: usize,
    #[serde(rename = "H")]
    pub height: usize,
    pub n: usize,
    #[serde(default = "default_slip")]
    pub slip: f64,
    pub racks: Vec<[usize; 2]>,
    pub feed: [usize; 2],
    #[serde(default)]
    pub seed: u64,
    /// Steps after which an unfinished task fails; `None` picks
    /// [`WarehouseConfig::default_deadline`], `Some(0)` disables it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deadline: Option<usize>,
}

fn default_slip() -> f64 {
    DEFAULT_SLIP
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Heading {
    North,
    East,
    South,
    West,
}

const HEADINGS: [Heading; 4] = [Heading::North, Heading::East, Heading::South, Heading::West];

impl Heading {
    fn index(self) -> usize {
        self as usize
    }

    fn left(self) -> Heading {
        HEADINGS[(self.index() + 3) % 4]
    }

    fn right(self) -> Heading {
        HEADINGS[(self.index() + 1) % 4]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RobotState {
    pub x: usize,
    pub y: usize,
    pub heading: Heading,
    pub carrying: bool,
}

impl WarehouseConfig {
    /// Racks every other cell along the top rows, feed in the corner.
    pub fn new(width: usize, height: usize, n: usize) -> WarehouseConfig {
        let mut racks = Vec::new();
        let mut y = height.saturating_sub(1);
        'rows: loop {
            let mut x = 1;
            while x < width {
                if racks.len() == n {
                    break 'rows;
                }
                racks.push([x, y]);
                x += 2;
            }
            if y < 2 {
                break;
            }
            y -= 2;
        }
        WarehouseConfig {
            width,
            height,
            n,
            slip: DEFAULT_SLIP,
            racks,
            feed: [0, 0],
            seed: 0,
            deadline: None,
        }
    }

    /// Enough steps to fetch, deliver and return a rack with some slack.
    pub fn default_deadline(&self) -> usize {
        4 * (self.width + self.height) + 16
    }

    pub fn effective_deadline(&self) -> Option<usize> {
        match self.deadline {
            None => Some(self.default_deadline()),
            Some(0) => None,
            Some(k) => Some(k),
        }
    }

    pub fn validate(&self) -> Result<(), WarehouseError> {
        let bad = |m: String| Err(WarehouseError::InvalidConfig(m));
        if self.width == 0 || self.height == 0 {
            return bad("grid must be nonempty".into());
        }
        if self.n == 0 {
            return bad("need at least one agent".into());
        }
        if !(0.0..1.0).contains(&self.slip) {
            return bad(format!("slip {} outside [0, 1)", self.slip));
        }
        let inside = |c: &[usize; 2]| c[0] < self.width && c[1] < self.height;
        if !inside(&self.feed) {
            return bad(format!("feed {:?} outside the grid", self.feed));
        }
        if let Some(r) = self.racks.iter().find(|r| !inside(r)) {
            return bad(format!("rack {r:?} outside the grid"));
        }
        if self.racks.len() < self.n {
            return bad(format!("{} agents but only {} racks", self.n, self.racks.len()));
        }
        if self.racks.contains(&self.feed) {
            return bad("feed shares a cell with a rack".into());
        }
        let free = self.width * self.height - self.racks.len() - 1;
        if free < self.n {
            return bad(format!("only {free} free cells for {} robots", self.n));
        }
        Ok(())
    }

    pub fn num_states(&self) -> usize {
        self.width * self.height * 8
    }

    pub fn state_id(&self, s: RobotState) -> usize {
        ((s.y * self.width + s.x) * 4 + s.heading.index()) * 2 + s.carrying as usize
    }

    pub fn robot_state(&self, id: usize) -> RobotState {
        let carrying = id % 2 == 1;
        let heading = HEADINGS[(id / 2) % 4];
        let cell = id / 8;
        RobotState {
            x: cell % self.width,
            y: cell / self.width,
            heading,
            carrying,
        }
    }

    fn rack_at(&self, x: usize, y: usize) -> Option<usize> {
        self.racks.iter().position(|r| *r == [x, y])
    }

    /// Distinct start cells off racks and feed, one per agent.
    pub fn start_cells(&self) -> Vec<[usize; 2]> {
        let mut cells: Vec<[usize; 2]> = (0..self.height)
            .flat_map(|y| (0..self.width).map(move |x| [x, y]))
            .filter(|c| *c != self.feed && !self.racks.contains(c))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        cells.shuffle(&mut rng);
        cells.truncate(self.n);
        cells
    }
}

fn forward(cfg: &WarehouseConfig, s: RobotState) -> RobotState {
    let (x, y) = (s.x as isize, s.y as isize);
    let (nx, ny) = match s.heading {
        Heading::North => (x, y + 1),
        Heading::East => (x + 1, y),
        Heading::South => (x, y - 1),
        Heading::West => (x - 1, y),
    };
    if nx < 0 || ny < 0 || nx >= cfg.width as isize || ny >= cfg.height as isize {
        s
    } else {
        RobotState {
            x: nx as usize,
            y: ny as usize,
            ..s
        }
    }
}

/// Robot MDP of agent `agent`; every action costs 1 (reward −1).
pub fn generate_agent(cfg: &WarehouseConfig, agent: usize) -> Result<(Mdp, RewardStructure), WarehouseError> {
    cfg.validate()?;
    if agent >= cfg.n {
        return Err(WarehouseError::InvalidConfig(format!("agent {agent} out of range")));
    }
    let start = cfg.start_cells()[agent];
    let mut b = MdpBuilder::new();
    for id in 0..cfg.num_states() {
        let s = cfg.robot_state(id);
        let mut labels = Vec::new();
        let rack = cfg.rack_at(s.x, s.y);
        if let Some(k) = rack {
            labels.push(format!("at_rack_{k}"));
        }
        if [s.x, s.y] == cfg.feed {
            labels.push("at_feed".to_string());
        }
        if s.carrying {
            labels.push("carrying".to_string());
        }
        b.add_state(labels);
        b.add_choice(
            "rotateL",
            vec![(
                cfg.state_id(RobotState {
                    heading: s.heading.left(),
                    ..s
                }),
                1.0,
            )],
        );
        b.add_choice(
            "rotateR",
            vec![(
                cfg.state_id(RobotState {
                    heading: s.heading.right(),
                    ..s
                }),
                1.0,
            )],
        );
        let ahead = forward(cfg, s);
        if ahead == s || cfg.slip == 0.0 {
            b.add_choice("forward", vec![(cfg.state_id(ahead), 1.0)]);
        } else {
            b.add_choice("forward", vec![(cfg.state_id(ahead), 1.0 - cfg.slip), (id, cfg.slip)]);
        }
        if rack.is_some() {
            let flipped = cfg.state_id(RobotState {
                carrying: !s.carrying,
                ..s
            });
            b.add_choice(if s.carrying { "unload" } else { "load" }, vec![(flipped, 1.0)]);
        }
    }
    let initial = cfg.state_id(RobotState {
        x: start[0],
        y: start[1],
        heading: Heading::North,
        carrying: false,
    });
    let m = b
        .build(initial)
        .map_err(|e: ModelError| WarehouseError::Morap(e.into()))?;
    let cost = RewardStructure::constant(&m, -1.0);
    Ok((m, cost))
}

/// Fetch rack `k` loaded, bring it to the feed, return and drop it.
pub fn task_text(k: usize) -> String {
    format!("F (at_rack_{k} & carrying & F (at_feed & carrying & F (at_rack_{k} & !carrying)))")
}

pub fn generate_task(cfg: &WarehouseConfig, rack: usize) -> Result<Formula, WarehouseError> {
    if rack >= cfg.racks.len() {
        return Err(WarehouseError::InvalidConfig(format!("rack {rack} out of range")));
    }
    parse_co_safe(&task_text(rack)).map_err(|e| WarehouseError::Morap(e.into()))
}

/// Instance file contents: inline agents, one task per agent over the
/// first `n` racks.
pub fn generate_instance_json(cfg: &WarehouseConfig) -> Result<InstanceJson, WarehouseError> {
    cfg.validate()?;
    let mut agents = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let (m, cost) = generate_agent(cfg, i)?;
        agents.push(AgentSpec::Inline(m.to_json(&cost)));
    }
    Ok(InstanceJson {
        agents,
        tasks: (0..cfg.n).map(|k| TaskSpec::Ltl(task_text(k))).collect(),
        norm: None,
        deadline: cfg.effective_deadline(),
    })
}

/// Build the instance, moving to the next seed when a product is not
/// reward-finite.
pub fn generate_instance(cfg: &WarehouseConfig) -> Result<MorapInstance, WarehouseError> {
    cfg.validate()?;
    let mut attempt = cfg.clone();
    for _ in 0..MAX_RETRIES {
        let json = generate_instance_json(&attempt)?;
        match build_instance(&json, std::path::Path::new(".")) {
            Ok(l) => return Ok(l.instance),
            Err(e) if e.is_validation() => {
                log::debug!("seed {} rejected: {e}", attempt.seed);
                attempt.seed = attempt.seed.wrapping_add(1);
            }
            Err(e) => return Err(e.into()),
        }
    }
    Err(WarehouseError::GenerationFailure(MAX_RETRIES))
}
