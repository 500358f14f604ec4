//! Websocket wire format. Every message is a JSON text frame with a `type`
//! tag. Quaternions are `[w, x, y, z]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::planner::{limit_surface_coords, classify, Mode, EPS_N, EPS_S};
use crate::stepper::{ContactRecord, World};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    SetTarget { pos: [f64; 3] },
    SetGoalPose { p: [f64; 2], yaw: f64 },
    Pause,
    Resume,
    Reset,
    SetParams { path: String, value: serde_json::Value },
}

impl ClientMessage {
    pub fn parse(text: &str) -> Result<Self> {
        let msg: ClientMessage = serde_json::from_str(text).map_err(|e| Error::Protocol(e.to_string()))?;
        msg.validate()?;
        Ok(msg)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |xs: &[f64]| xs.iter().all(|x| x.is_finite());
        match self {
            ClientMessage::SetTarget { pos } if !finite(pos) => Err(Error::Protocol("set_target.pos must be finite".into())),
            ClientMessage::SetGoalPose { p, yaw } if !finite(p) || !yaw.is_finite() => {
                Err(Error::Protocol("set_goal_pose fields must be finite".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("client messages always serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BodyFrame {
    pub id: String,
    pub pos: [f64; 3],
    pub quat: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolFrame {
    pub pos: [f64; 3],
    pub force: [f64; 3],
    pub target: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactFrameMsg {
    pub pair: String,
    pub ecp: [f64; 3],
    /// `[n, t, o, r]`, N·s.
    pub lam: [f64; 4],
    pub s: f64,
    pub mode: Mode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotFrame {
    pub theta: Vec<f64>,
    /// `null` on the wire when there are no obstacles.
    #[serde(with = "crate::log::finite_or_inf")]
    pub min_clearance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ServerMessage {
    Frame {
        seq: u64,
        sim_time: f64,
        bodies: Vec<BodyFrame>,
        tool: Option<ToolFrame>,
        contacts: Vec<ContactFrameMsg>,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        robot: Option<RobotFrame>,
    },
    Error {
        message: String,
    },
}

impl ServerMessage {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages always serialize")
    }

    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Protocol(e.to_string()))
    }
}

pub fn contact_frame(c: &ContactRecord) -> ContactFrameMsg {
    let coords = limit_surface_coords(&c.impulse, &c.friction);
    ContactFrameMsg {
        pair: c.pair.clone(),
        ecp: c.ecp.into(),
        lam: [c.impulse.n, c.impulse.t, c.impulse.o, c.impulse.r],
        s: coords.s,
        mode: classify(&coords, c.impulse.n, EPS_N, EPS_S),
    }
}

/// Snapshot of the world after its latest step.
pub fn frame(seq: u64, world: &World, contacts: &[ContactRecord], tool_force: [f64; 3], robot: Option<RobotFrame>) -> ServerMessage {
    let bodies = world
        .bodies
        .iter()
        .map(|b| {
            let q = b.pose.orientation.quaternion();
            BodyFrame {
                id: b.id.clone(),
                pos: b.pose.position.into(),
                quat: [q.w, q.i, q.j, q.k],
            }
        })
        .collect();
    let tool = world.tool.as_ref().map(|t| ToolFrame {
        pos: t.body.pose.position.into(),
        force: tool_force,
        target: t.target.into(),
    });
    ServerMessage::Frame {
        seq,
        sim_time: world.time(),
        bodies,
        tool,
        contacts: contacts.iter().map(contact_frame).collect(),
        robot,
    }
}
