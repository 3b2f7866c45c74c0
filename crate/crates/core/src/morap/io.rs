use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::geometry::NormMatrix;
use crate::logic::{insert_pre_sinks, task_automaton, Dfa, DfaJson};
use crate::model::{Mdp, MdpJson};

use super::{Agent, MorapError, MorapInstance, ParetoResult, SynthesisResult};

/// An agent given inline or as a path to an MDP file (relative paths are
/// resolved against the instance file).
#[derive(Clone, Debug, Serialize)]
#[serde(untagged)]
pub enum AgentSpec {
    Path { path: String },
    Inline(MdpJson),
}

// not derived: untagged buffering cannot read the integer-keyed label map
impl<'de> Deserialize<'de> for AgentSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let v = serde_json::Value::deserialize(d)?;
        match v.get("path") {
            Some(serde_json::Value::String(p)) => Ok(AgentSpec::Path { path: p.clone() }),
            Some(_) => Err(D::Error::custom("agent path must be a string")),
            None => serde_json::from_value(v)
                .map(AgentSpec::Inline)
                .map_err(D::Error::custom),
        }
    }
}

/// A co-safe formula or an explicit automaton.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TaskSpec {
    Ltl(String),
    Dfa { dfa: DfaJson },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InstanceJson {
    pub agents: Vec<AgentSpec>,
    pub tasks: Vec<TaskSpec>,
    /// Rows of the norm matrix over the padded objective vector.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm: Option<Vec<Vec<f64>>>,
    /// Step bound after which a task counts as failed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deadline: Option<usize>,
}

pub struct LoadedInstance {
    pub instance: MorapInstance,
    pub norm: Option<NormMatrix>,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> MorapError {
    MorapError::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    }
}

pub fn load_instance(path: &Path) -> Result<LoadedInstance, MorapError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_instance(&text, &base)
}

/// Parse instance JSON; agent paths are resolved against `base`.
pub fn parse_instance(text: &str, base: &Path) -> Result<LoadedInstance, MorapError> {
    let json: InstanceJson = serde_json::from_str(text).map_err(|e| MorapError::Format(e.to_string()))?;
    build_instance(&json, base)
}

pub fn build_instance(json: &InstanceJson, base: &Path) -> Result<LoadedInstance, MorapError> {
    let mut agents = Vec::new();
    for spec in &json.agents {
        let mdp_json = match spec {
            AgentSpec::Inline(m) => m.clone(),
            AgentSpec::Path { path } => {
                let p: PathBuf = base.join(path);
                let text = std::fs::read_to_string(&p).map_err(|e| io_err(&p, e))?;
                serde_json::from_str(&text).map_err(|e| MorapError::Format(format!("{}: {e}", p.display())))?
            }
        };
        let (mdp, cost) = Mdp::from_json(&mdp_json)?;
        agents.push(Agent::new(mdp, cost));
    }
    let mut tasks: Vec<Dfa> = Vec::new();
    for spec in &json.tasks {
        let dfa = match spec {
            TaskSpec::Ltl(text) => task_automaton(text)?,
            TaskSpec::Dfa { dfa } => insert_pre_sinks(Dfa::from_json(dfa)?),
        };
        let dfa = match json.deadline {
            Some(k) => insert_pre_sinks(dfa.with_deadline(k)?),
            None => dfa,
        };
        tasks.push(dfa);
    }
    let instance = MorapInstance::new(agents, tasks)?;
    let norm = match &json.norm {
        Some(rows) => {
            let m = NormMatrix::from_rows(rows)?;
            if m.dim() != instance.dimension() {
                return Err(MorapError::Format(format!(
                    "norm matrix has order {}, objective vectors have {} entries",
                    m.dim(),
                    instance.dimension()
                )));
            }
            Some(m)
        }
        None => None,
    };
    Ok(LoadedInstance { instance, norm })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationJson {
    pub w: Vec<f64>,
    pub r: Vec<f64>,
    pub assignment: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthesisJson {
    pub p: f64,
    pub assignment: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ResultJson {
    pub feasible: bool,
    pub t_up: Vec<f64>,
    pub t_down: Vec<f64>,
    pub iterations: Vec<IterationJson>,
    pub synthesis: Vec<SynthesisJson>,
}

impl ResultJson {
    pub fn new(result: &ParetoResult, synthesis: Option<&SynthesisResult>) -> ResultJson {
        ResultJson {
            feasible: result.feasible,
            t_up: result.t_up.clone(),
            t_down: result.t_down.clone(),
            iterations: result
                .iterations
                .iter()
                .map(|it| IterationJson {
                    w: it.w.clone(),
                    r: it.r.clone(),
                    assignment: it.assignment.0.clone(),
                })
                .collect(),
            synthesis: synthesis
                .map(|s| {
                    s.components
                        .iter()
                        .map(|c| SynthesisJson {
                            p: c.probability,
                            assignment: c.assignment.0.clone(),
                        })
                        .collect()
                })
                .unwrap_or_default(),
        }
    }
}
