//! Trajectory logs: per-step records, a tagged event stream, JSON storage and
//! column export for plotting.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::planner::{classify, limit_surface_coords, Mode, PlannerEvent, EPS_N, EPS_S};
use crate::protocol::ClientMessage;
use crate::stepper::{StepEvent, StepRecord};

/// Arm state after the joint update of a step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotRecord {
    pub step: u64,
    pub theta: Vec<f64>,
    pub nominal: Vec<f64>,
    pub delta: Vec<f64>,
    pub eta: Vec<f64>,
    pub rows: usize,
    pub fallback: bool,
    /// Smallest sphere–obstacle clearance at the end of the step (∞ without obstacles).
    #[serde(with = "finite_or_inf")]
    pub min_clearance: f64,
    pub end_effector: Vec3,
}

pub(crate) mod finite_or_inf {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "data", rename_all = "snake_case")]
pub enum Event {
    Contact(StepEvent),
    Mode { pair: String, from: Option<Mode>, to: Mode },
    Planner(PlannerEvent),
    Control(ClientMessage),
    Avoidance { rows: usize, residual: f64, fallback: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    /// Loop iteration the event belongs to.
    pub tick: u64,
    /// Physics steps completed when the event was recorded.
    pub step: u64,
    pub event: Event,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrajectoryLog {
    pub scene: String,
    pub h: f64,
    pub records: Vec<StepRecord>,
    pub robot: Vec<RobotRecord>,
    pub events: Vec<EventRecord>,
    #[serde(skip)]
    modes: BTreeMap<String, Mode>,
}

/// Equality ignores the mode-tracking cache.
impl PartialEq for TrajectoryLog {
    fn eq(&self, other: &Self) -> bool {
        self.scene == other.scene
            && self.h == other.h
            && self.records == other.records
            && self.robot == other.robot
            && self.events == other.events
    }
}

impl TrajectoryLog {
    pub fn new(scene: impl Into<String>, h: f64) -> Self {
        Self {
            scene: scene.into(),
            h,
            ..Default::default()
        }
    }

    pub fn push_event(&mut self, tick: u64, step: u64, event: Event) {
        self.events.push(EventRecord { tick, step, event });
    }

    /// Appends a step, its contact events and any contact-mode transitions.
    pub fn push_step(&mut self, tick: u64, record: StepRecord, robot: Option<RobotRecord>) {
        let step = record.step + 1;
        for e in &record.events {
            self.events.push(EventRecord {
                tick,
                step,
                event: Event::Contact(e.clone()),
            });
        }
        let mut seen = BTreeMap::new();
        for c in &record.contacts {
            let coords = limit_surface_coords(&c.impulse, &c.friction);
            seen.insert(c.pair.clone(), classify(&coords, c.impulse.n, EPS_N, EPS_S));
        }
        for (pair, prev) in &self.modes {
            if !seen.contains_key(pair) && *prev != Mode::Break {
                seen.insert(pair.clone(), Mode::Break);
            }
        }
        for (pair, mode) in seen {
            let from = self.modes.get(&pair).copied();
            if from != Some(mode) {
                self.events.push(EventRecord {
                    tick,
                    step,
                    event: Event::Mode {
                        pair: pair.clone(),
                        from,
                        to: mode,
                    },
                });
                self.modes.insert(pair, mode);
            }
        }
        self.records.push(record);
        if let Some(r) = robot {
            self.robot.push(r);
        }
    }

    pub fn clear(&mut self) {
        self.records.clear();
        self.robot.clear();
        self.events.clear();
        self.modes.clear();
    }

    /// Timestamps must advance by exactly one step each record.
    pub fn validate(&self) -> Result<()> {
        for w in self.records.windows(2) {
            let dt = w[1].time - w[0].time;
            if w[1].step != w[0].step + 1 || !((dt - self.h).abs() <= 1e-9 * self.h.max(w[1].time)) {
                return Err(Error::InvalidInput(format!("log records {} and {} are not one step apart", w[0].step, w[1].step)));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::InvalidInput(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::LogParse {
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn planner_events(&self) -> impl Iterator<Item = (&EventRecord, &PlannerEvent)> {
        self.events.iter().filter_map(|e| match &e.event {
            Event::Planner(p) => Some((e, p)),
            _ => None,
        })
    }

    pub fn control_events(&self) -> impl Iterator<Item = (u64, &ClientMessage)> {
        self.events.iter().filter_map(|e| match &e.event {
            Event::Control(m) => Some((e.tick, m)),
            _ => None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Column {
    T,
    LamN,
    LamT,
    LamO,
    LamR,
    S,
    RhoT,
    RhoR,
    Mode,
    ToolFx,
    ToolFy,
    ToolFz,
    Ke,
    Pe,
    ComX,
    ComY,
    ComZ,
    EcpX,
    EcpY,
    EcpZ,
}

impl Column {
    pub const ALL: [Column; 20] = [
        Column::T,
        Column::LamN,
        Column::LamT,
        Column::LamO,
        Column::LamR,
        Column::S,
        Column::RhoT,
        Column::RhoR,
        Column::Mode,
        Column::ToolFx,
        Column::ToolFy,
        Column::ToolFz,
        Column::Ke,
        Column::Pe,
        Column::ComX,
        Column::ComY,
        Column::ComZ,
        Column::EcpX,
        Column::EcpY,
        Column::EcpZ,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Column::T => "t",
            Column::LamN => "lam_n",
            Column::LamT => "lam_t",
            Column::LamO => "lam_o",
            Column::LamR => "lam_r",
            Column::S => "s",
            Column::RhoT => "rho_t",
            Column::RhoR => "rho_r",
            Column::Mode => "mode",
            Column::ToolFx => "tool_fx",
            Column::ToolFy => "tool_fy",
            Column::ToolFz => "tool_fz",
            Column::Ke => "ke",
            Column::Pe => "pe",
            Column::ComX => "com_x",
            Column::ComY => "com_y",
            Column::ComZ => "com_z",
            Column::EcpX => "ecp_x",
            Column::EcpY => "ecp_y",
            Column::EcpZ => "ecp_z",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Column::ALL
            .into_iter()
            .find(|c| c.name() == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    /// Comma-separated names; `all` selects every column.
    pub fn parse_list(list: &str) -> Result<Vec<Column>> {
        if list.trim() == "all" {
            return Ok(Column::ALL.to_vec());
        }
        list.split(',').map(|n| Column::parse(n.trim())).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExportSelection {
    pub columns: Vec<Column>,
    /// Body whose CoM is exported.
    pub body: String,
    /// Contact pair for impulse and ECP columns; `ground/<body>` by default.
    pub pair: Option<String>,
}

impl ExportSelection {
    pub fn all(body: impl Into<String>) -> Self {
        Self {
            columns: Column::ALL.to_vec(),
            body: body.into(),
            pair: None,
        }
    }
}

fn num(x: f64) -> String {
    format!("{x}")
}

/// CSV with a header row, one line per step.
pub fn export_csv(log: &TrajectoryLog, sel: &ExportSelection) -> Result<String> {
    let first = log
        .records
        .first()
        .ok_or_else(|| Error::InvalidInput("log has no records".into()))?;
    if sel.columns.is_empty() {
        return Err(Error::InvalidInput("no columns selected".into()));
    }
    let body = first
        .bodies
        .iter()
        .position(|b| b.id == sel.body)
        .ok_or_else(|| Error::InvalidInput(format!("log has no body `{}`", sel.body)))?;
    let pair = sel.pair.clone().unwrap_or_else(|| format!("ground/{}", sel.body));

    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::InvalidInput(e.to_string());
    w.write_record(sel.columns.iter().map(|c| c.name())).map_err(csv_err)?;
    for r in &log.records {
        let contact = r.contacts.iter().find(|c| c.pair == pair);
        let coords = contact.map(|c| limit_surface_coords(&c.impulse, &c.friction));
        let mode = match (contact, &coords) {
            (Some(c), Some(k)) => classify(k, c.impulse.n, EPS_N, EPS_S),
            _ => Mode::Break,
        };
        let force = r.tool.as_ref().map_or(Vec3::zeros(), |t| t.force);
        let com = r.bodies[body].pose.position;
        let row: Vec<String> = sel
            .columns
            .iter()
            .map(|col| match col {
                Column::T => num(r.time),
                Column::LamN => num(contact.map_or(0.0, |c| c.impulse.n)),
                Column::LamT => num(contact.map_or(0.0, |c| c.impulse.t)),
                Column::LamO => num(contact.map_or(0.0, |c| c.impulse.o)),
                Column::LamR => num(contact.map_or(0.0, |c| c.impulse.r)),
                Column::S => num(coords.map_or(0.0, |k| k.s)),
                Column::RhoT => num(coords.map_or(0.0, |k| k.rho_t)),
                Column::RhoR => num(coords.map_or(0.0, |k| k.rho_r)),
                Column::Mode => mode.as_str().to_string(),
                Column::ToolFx => num(force.x),
                Column::ToolFy => num(force.y),
                Column::ToolFz => num(force.z),
                Column::Ke => num(r.kinetic_energy),
                Column::Pe => num(r.potential_energy),
                Column::ComX => num(com.x),
                Column::ComY => num(com.y),
                Column::ComZ => num(com.z),
                Column::EcpX => contact.map_or(String::new(), |c| num(c.ecp.x)),
                Column::EcpY => contact.map_or(String::new(), |c| num(c.ecp.y)),
                Column::EcpZ => contact.map_or(String::new(), |c| num(c.ecp.z)),
            })
            .collect();
        w.write_record(&row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::InvalidInput(e.to_string()))
}
