//! Wire protocol, version 1. Every message is a JSON object carrying
//! `"v": 1` and a `"type"` tag; see `protocol.schema.json`.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use sketchfly::control::{ControlEvent, Mode, Notice, Telemetry};
use sketchfly::frame::BoundingBox;
use sketchfly::sketch::{CanvasId, Stroke, StrokePoint};
use sketchfly::tracker::TrackResult;

pub const PROTOCOL_VERSION: u32 = 1;

/// JSON Schema for both directions.
pub const SCHEMA: &str = include_str!("../protocol.schema.json");

/// Canvas size assumed for navigation strokes that omit `canvas_size`.
pub const DEFAULT_NAV_CANVAS: [f64; 2] = [300.0, 300.0];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error("message is not valid JSON: {0}")]
    Json(String),
    #[error("message must be a JSON object")]
    NotObject,
    #[error("missing protocol version `v`")]
    MissingVersion,
    #[error("unsupported protocol version {0}")]
    Version(u64),
    #[error("missing message `type`")]
    MissingType,
    #[error("unknown message type `{0}`")]
    UnknownType(String),
    #[error("invalid `{kind}` message: {reason}")]
    Invalid { kind: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stream {
    Frames,
    Telemetry,
    Events,
}

pub const ALL_STREAMS: [Stream; 3] = [Stream::Frames, Stream::Telemetry, Stream::Events];

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    Takeoff,
    Land,
    Stop,
    Go,
    Stroke {
        canvas: CanvasId,
        /// `[x, y, ts_ms]` in canvas pixels; `ts_ms` may be omitted.
        points: Vec<Vec<f64>>,
        #[serde(default)]
        canvas_size: Option<[f64; 2]>,
    },
    Select {
        bbox: [f64; 4],
    },
    Mode {
        value: Mode,
    },
    Subscribe {
        streams: Vec<Stream>,
    },
    Ping,
}

/// Client message types and the fields each may carry besides `v`, `id` and `type`.
const CLIENT_TYPES: [(&str, &[&str]); 9] = [
    ("takeoff", &[]),
    ("land", &[]),
    ("stop", &[]),
    ("go", &[]),
    ("stroke", &["canvas", "points", "canvas_size"]),
    ("select", &["bbox"]),
    ("mode", &["value"]),
    ("subscribe", &["streams"]),
    ("ping", &[]),
];

impl ClientMessage {
    pub fn kind(&self) -> &'static str {
        match self {
            ClientMessage::Takeoff => "takeoff",
            ClientMessage::Land => "land",
            ClientMessage::Stop => "stop",
            ClientMessage::Go => "go",
            ClientMessage::Stroke { .. } => "stroke",
            ClientMessage::Select { .. } => "select",
            ClientMessage::Mode { .. } => "mode",
            ClientMessage::Subscribe { .. } => "subscribe",
            ClientMessage::Ping => "ping",
        }
    }

    /// The control event this message maps to, if any. `frame` is the
    /// camera resolution, the default canvas for video strokes.
    pub fn to_event(&self, frame: (usize, usize)) -> Result<Option<ControlEvent>, ProtocolError> {
        let invalid = |reason: String| ProtocolError::Invalid { kind: self.kind().into(), reason };
        Ok(Some(match self {
            ClientMessage::Takeoff => ControlEvent::Takeoff,
            ClientMessage::Land => ControlEvent::Land,
            ClientMessage::Stop => ControlEvent::Stop,
            ClientMessage::Go => ControlEvent::Go,
            ClientMessage::Stroke { canvas, points, canvas_size } => {
                let [w, h] = canvas_size.unwrap_or(if *canvas == CanvasId::Video {
                    [frame.0 as f64, frame.1 as f64]
                } else {
                    DEFAULT_NAV_CANVAS
                });
                let mut pts = Vec::with_capacity(points.len());
                for (i, p) in points.iter().enumerate() {
                    if !(2..=3).contains(&p.len()) || p.iter().any(|v| !v.is_finite()) {
                        return Err(invalid(format!("point {i} must be [x, y] or [x, y, ts] with finite values")));
                    }
                    let ts_ms = p.get(2).map_or(i as u64, |t| t.max(0.0) as u64);
                    pts.push(StrokePoint { x: p[0], y: p[1], ts_ms });
                }
                ControlEvent::Stroke(Stroke { canvas: *canvas, points: pts, canvas_w: w, canvas_h: h })
            }
            ClientMessage::Select { bbox } => {
                let b = BoundingBox::new(bbox[0], bbox[1], bbox[2], bbox[3]).map_err(|e| invalid(e.to_string()))?;
                ControlEvent::Select(b)
            }
            ClientMessage::Mode { value } => ControlEvent::SetMode(*value),
            ClientMessage::Subscribe { .. } | ClientMessage::Ping => return Ok(None),
        }))
    }
}

/// A parsed client message with its optional correlation id.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub id: Option<u64>,
    pub message: ClientMessage,
}

/// Best-effort correlation id and type of a message that failed to parse,
/// so the error ack can still reference it.
pub fn peek_id(text: &str) -> (Option<u64>, Option<String>) {
    match serde_json::from_str::<Value>(text) {
        Ok(Value::Object(o)) => (o.get("id").and_then(Value::as_u64), o.get("type").and_then(Value::as_str).map(str::to_string)),
        _ => (None, None),
    }
}

pub fn parse_client(text: &str) -> Result<Envelope, ProtocolError> {
    let value: Value = serde_json::from_str(text).map_err(|e| ProtocolError::Json(e.to_string()))?;
    let Value::Object(mut obj) = value else {
        return Err(ProtocolError::NotObject);
    };
    match obj.remove("v") {
        None => return Err(ProtocolError::MissingVersion),
        Some(v) => match v.as_u64() {
            Some(1) => {}
            Some(n) => return Err(ProtocolError::Version(n)),
            None => return Err(ProtocolError::MissingVersion),
        },
    }
    let id = match obj.remove("id") {
        None | Some(Value::Null) => None,
        Some(v) => Some(v.as_u64().ok_or_else(|| ProtocolError::Invalid { kind: "envelope".into(), reason: "`id` must be a non-negative integer".into() })?),
    };
    let kind = obj.get("type").and_then(Value::as_str).ok_or(ProtocolError::MissingType)?.to_string();
    let Some((_, fields)) = CLIENT_TYPES.iter().find(|(t, _)| *t == kind) else {
        return Err(ProtocolError::UnknownType(kind));
    };
    if let Some(extra) = obj.keys().find(|k| k.as_str() != "type" && !fields.contains(&k.as_str())) {
        return Err(ProtocolError::Invalid { reason: format!("unknown field `{extra}`"), kind });
    }
    let message = serde_json::from_value(Value::Object(obj)).map_err(|e| ProtocolError::Invalid { kind, reason: e.to_string() })?;
    Ok(Envelope { id, message })
}

/// Server-to-client message bodies.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello {
        session: u64,
        frame_width: usize,
        frame_height: usize,
        max_fps: f64,
        telemetry_hz: f64,
        streams: Vec<Stream>,
    },
    Frame(FrameMessage),
    Telemetry(Telemetry),
    Event(Notice),
    Ack {
        #[serde(skip_serializing_if = "Option::is_none")]
        id: Option<u64>,
        /// Type of the acknowledged message, when known.
        #[serde(skip_serializing_if = "Option::is_none")]
        of: Option<String>,
        ok: bool,
        #[serde(skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMessage {
    pub seq: u64,
    pub ts_ms: u64,
    pub width: usize,
    pub height: usize,
    /// Always `"png"`: 8-bit grayscale, base64 encoded.
    pub format: String,
    pub image: String,
    pub mode: Mode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bbox: Option<[f64; 4]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub centroid: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub valid: Option<bool>,
}

impl FrameMessage {
    pub fn overlay(&mut self, track: Option<&TrackResult>) {
        if let Some(t) = track {
            self.bbox = Some(t.bbox.to_array());
            self.centroid = Some([t.centroid.0, t.centroid.1]);
            self.psr = Some(t.psr).filter(|p| p.is_finite());
            self.valid = Some(t.valid);
        }
    }
}

#[derive(Serialize)]
struct Versioned<'a> {
    v: u32,
    #[serde(flatten)]
    body: &'a ServerMessage,
}

pub fn encode(msg: &ServerMessage) -> String {
    serde_json::to_string(&Versioned { v: PROTOCOL_VERSION, body: msg }).expect("server messages serialize")
}

pub fn ack(id: Option<u64>, of: Option<&str>, result: Result<(), String>) -> String {
    let (ok, error) = match result {
        Ok(()) => (true, None),
        Err(e) => (false, Some(e)),
    };
    encode(&ServerMessage::Ack { id, of: of.map(str::to_string), ok, error })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_every_client_type() {
        let cases = [
            r#"{"v":1,"type":"takeoff"}"#,
            r#"{"v":1,"type":"land","id":4}"#,
            r#"{"v":1,"type":"stop"}"#,
            r#"{"v":1,"type":"go"}"#,
            r#"{"v":1,"type":"stroke","canvas":"yaw","points":[[10,10,0],[60,10,40]]}"#,
            r#"{"v":1,"type":"select","bbox":[10,10,90,90]}"#,
            r#"{"v":1,"type":"mode","value":"collecting"}"#,
            r#"{"v":1,"type":"subscribe","streams":["frames","events"]}"#,
            r#"{"v":1,"type":"ping"}"#,
        ];
        for c in cases {
            parse_client(c).unwrap_or_else(|e| panic!("{c}: {e}"));
        }
        assert_eq!(parse_client(cases[1]).unwrap().id, Some(4));
    }

    #[test]
    fn rejects_bad_envelopes() {
        assert_eq!(parse_client(r#"{"type":"stop"}"#), Err(ProtocolError::MissingVersion));
        assert_eq!(parse_client(r#"{"v":2,"type":"stop"}"#), Err(ProtocolError::Version(2)));
        assert_eq!(parse_client(r#"{"v":1}"#), Err(ProtocolError::MissingType));
        assert_eq!(parse_client(r#"{"v":1,"type":"warp"}"#), Err(ProtocolError::UnknownType("warp".into())));
        assert_eq!(parse_client("[1]"), Err(ProtocolError::NotObject));
        assert!(matches!(parse_client("{"), Err(ProtocolError::Json(_))));
        assert!(matches!(parse_client(r#"{"v":1,"type":"select","bbox":[1,2]}"#), Err(ProtocolError::Invalid { .. })));
        assert!(matches!(parse_client(r#"{"v":1,"type":"stop","extra":1}"#), Err(ProtocolError::Invalid { .. })));
        assert!(matches!(parse_client(r#"{"v":1,"type":"mode","value":"warp"}"#), Err(ProtocolError::Invalid { .. })));
    }

    #[test]
    fn stroke_maps_to_event_with_default_canvas() {
        let env = parse_client(r#"{"v":1,"type":"stroke","canvas":"translate","points":[[150,150],[150,50]]}"#).unwrap();
        match env.message.to_event((640, 360)).unwrap() {
            Some(ControlEvent::Stroke(s)) => {
                assert_eq!((s.canvas_w, s.canvas_h), (DEFAULT_NAV_CANVAS[0], DEFAULT_NAV_CANVAS[1]));
                assert_eq!(s.points[1].ts_ms, 1);
            }
            other => panic!("{other:?}"),
        }
        let bad = parse_client(r#"{"v":1,"type":"stroke","canvas":"yaw","points":[[1]]}"#).unwrap();
        assert!(bad.message.to_event((640, 360)).is_err());
        let video = parse_client(r#"{"v":1,"type":"stroke","canvas":"video","points":[[0,0],[9,0],[9,9]]}"#).unwrap();
        match video.message.to_event((640, 360)).unwrap() {
            Some(ControlEvent::Stroke(s)) => assert_eq!((s.canvas_w, s.canvas_h), (640.0, 360.0)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn server_messages_carry_version() {
        let text = ack(Some(3), Some("stop"), Err("nope".into()));
        let v: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["v"], 1);
        assert_eq!(v["type"], "ack");
        assert_eq!(v["ok"], false);
        assert_eq!(v["id"], 3);
        let ev = encode(&ServerMessage::Event(Notice::TrackLost { seq: 9 }));
        let v: Value = serde_json::from_str(&ev).unwrap();
        assert_eq!((v["v"].as_u64(), v["type"].as_str(), v["kind"].as_str()), (Some(1), Some("event"), Some("track_lost")));
    }
}
