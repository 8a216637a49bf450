//! Protocol messages and their binary frames.
//!
//! A frame is a little-endian `u32` payload length followed by the payload:
//!
//! ```text
//! tag: u8 | header_len: u32 | header: JSON | body
//! ```
//!
//! The JSON header carries routing (`run_id`, `round`, `from`, `to`) and
//! every scalar field. The body is a CPTD file for shard and shared-set
//! messages, a CPTT file for target messages, and empty otherwise.

use serde::{Deserialize, Serialize};

use crate::alignment::{SharedSet, SharedTargets};
use crate::dataset::{Shard, TargetSet, SHARED_SET_SHARD_ID};
use crate::error::{Error, Result};
use crate::format;
use crate::uniformity::UniformValueReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Endpoint {
    Platform,
    Participant(u32),
}

/// Reference target space announced with the best prior.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reference {
    pub participant_id: u32,
    pub fingerprint: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Body {
    DistributeShard { shard: Shard },
    ShareSet { shared_set: SharedSet },
    ReportUniform { report: UniformValueReport },
    AnnounceBest {
        participant_id: u32,
        n: usize,
        best_fingerprint: String,
        /// `None` when alignment is disabled.
        reference: Option<Reference>,
    },
    PublishSharedTargets { targets: SharedTargets },
    UploadOptimized { shard_id: u32, targets: TargetSet, uniform_value_of_round: f64 },
    MergeComplete { dataset_digest: String },
}

impl Body {
    pub fn tag(&self) -> u8 {
        match self {
            Body::DistributeShard { .. } => 1,
            Body::ShareSet { .. } => 2,
            Body::ReportUniform { .. } => 3,
            Body::AnnounceBest { .. } => 4,
            Body::PublishSharedTargets { .. } => 5,
            Body::UploadOptimized { .. } => 6,
            Body::MergeComplete { .. } => 7,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Body::DistributeShard { .. } => "DistributeShard",
            Body::ShareSet { .. } => "ShareSet",
            Body::ReportUniform { .. } => "ReportUniform",
            Body::AnnounceBest { .. } => "AnnounceBest",
            Body::PublishSharedTargets { .. } => "PublishSharedTargets",
            Body::UploadOptimized { .. } => "UploadOptimized",
            Body::MergeComplete { .. } => "MergeComplete",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub run_id: String,
    pub round: u32,
    pub from: Endpoint,
    pub to: Endpoint,
    pub body: Body,
}

#[derive(Serialize, Deserialize)]
struct Header {
    run_id: String,
    round: u32,
    from: Endpoint,
    to: Endpoint,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    report: Option<UniformValueReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    participant_id: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    best_fingerprint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reference: Option<Reference>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    shard_id: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    uniform_value_of_round: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dataset_digest: Option<String>,
}

fn missing(field: &str, tag: u8) -> Error {
    Error::Format(format!("frame tag {tag} lacks header field {field}"))
}

/// Encodes `msg` as a length-prefixed frame.
pub fn encode_frame(msg: &Message) -> Result<Vec<u8>> {
    let mut header = Header {
        run_id: msg.run_id.clone(),
        round: msg.round,
        from: msg.from,
        to: msg.to,
        report: None,
        participant_id: None,
        n: None,
        best_fingerprint: None,
        reference: None,
        shard_id: None,
        uniform_value_of_round: None,
        dataset_digest: None,
    };
    let body = match &msg.body {
        Body::DistributeShard { shard } => format::encode_shard(shard)?,
        Body::ShareSet { shared_set } => {
            format::encode_shard(&Shard::new(SHARED_SET_SHARD_ID, shared_set.samples().to_vec()))?
        }
        Body::ReportUniform { report } => {
            header.report = Some(report.clone());
            Vec::new()
        }
        Body::AnnounceBest { participant_id, n, best_fingerprint, reference } => {
            header.participant_id = Some(*participant_id);
            header.n = Some(*n);
            header.best_fingerprint = Some(best_fingerprint.clone());
            header.reference = reference.clone();
            Vec::new()
        }
        Body::PublishSharedTargets { targets } => format::encode_targets(&targets.to_target_set())?,
        Body::UploadOptimized { shard_id, targets, uniform_value_of_round } => {
            header.shard_id = Some(*shard_id);
            header.uniform_value_of_round = Some(*uniform_value_of_round);
            format::encode_targets(targets)?
        }
        Body::MergeComplete { dataset_digest } => {
            header.dataset_digest = Some(dataset_digest.clone());
            Vec::new()
        }
    };
    let header = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
    let payload_len = 1 + 4 + header.len() + body.len();
    let mut out = Vec::with_capacity(4 + payload_len);
    out.extend_from_slice(&(payload_len as u32).to_le_bytes());
    out.push(msg.body.tag());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&body);
    Ok(out)
}

/// Decodes one complete frame.
pub fn decode_frame(frame: &[u8]) -> Result<Message> {
    let (msg, used) = read_frame(frame)?.ok_or_else(|| Error::Format("incomplete frame".into()))?;
    if used != frame.len() {
        return Err(Error::Format(format!("{} bytes after frame", frame.len() - used)));
    }
    Ok(msg)
}

/// Decodes the first frame in `buf`, returning it and the bytes consumed,
/// or `None` if `buf` does not yet hold a whole frame.
pub fn read_frame(buf: &[u8]) -> Result<Option<(Message, usize)>> {
    if buf.len() < 4 {
        return Ok(None);
    }
    let len = u32::from_le_bytes(buf[..4].try_into().unwrap()) as usize;
    if buf.len() < 4 + len {
        return Ok(None);
    }
    let payload = &buf[4..4 + len];
    if payload.len() < 5 {
        return Err(Error::Format("frame payload shorter than its fixed header".into()));
    }
    let tag = payload[0];
    let hlen = u32::from_le_bytes(payload[1..5].try_into().unwrap()) as usize;
    if payload.len() < 5 + hlen {
        return Err(Error::Format("frame header overruns payload".into()));
    }
    let header: Header =
        serde_json::from_slice(&payload[5..5 + hlen]).map_err(|e| Error::Format(e.to_string()))?;
    let body = &payload[5 + hlen..];
    let expect_empty = |b: &[u8]| {
        if b.is_empty() {
            Ok(())
        } else {
            Err(Error::Format(format!("frame tag {tag} carries an unexpected body")))
        }
    };
    let body = match tag {
        1 => Body::DistributeShard { shard: format::decode_shard(body)? },
        2 => {
            let shard = format::decode_shard(body)?;
            if shard.shard_id != SHARED_SET_SHARD_ID {
                return Err(Error::Format("shared set frame has a regular shard id".into()));
            }
            Body::ShareSet { shared_set: SharedSet::new(shard.samples)? }
        }
        3 => {
            expect_empty(body)?;
            Body::ReportUniform { report: header.report.clone().ok_or_else(|| missing("report", tag))? }
        }
        4 => {
            expect_empty(body)?;
            Body::AnnounceBest {
                participant_id: header.participant_id.ok_or_else(|| missing("participant_id", tag))?,
                n: header.n.ok_or_else(|| missing("n", tag))?,
                best_fingerprint: header.best_fingerprint.clone().ok_or_else(|| missing("best_fingerprint", tag))?,
                reference: header.reference.clone(),
            }
        }
        5 => {
            let ts = format::decode_targets(body)?;
            if ts.shard_id != SHARED_SET_SHARD_ID {
                return Err(Error::Format("shared targets frame has a regular shard id".into()));
            }
            Body::PublishSharedTargets { targets: SharedTargets::from_target_set(&ts)? }
        }
        6 => Body::UploadOptimized {
            shard_id: header.shard_id.ok_or_else(|| missing("shard_id", tag))?,
            targets: format::decode_targets(body)?,
            uniform_value_of_round: header
                .uniform_value_of_round
                .ok_or_else(|| missing("uniform_value_of_round", tag))?,
        },
        7 => {
            expect_empty(body)?;
            Body::MergeComplete {
                dataset_digest: header.dataset_digest.clone().ok_or_else(|| missing("dataset_digest", tag))?,
            }
        }
        t => return Err(Error::Format(format!("unknown frame tag {t}"))),
    };
    Ok(Some((
        Message { run_id: header.run_id, round: header.round, from: header.from, to: header.to, body },
        4 + len,
    )))
}

/// Byte-stream framer: feed arbitrary chunks, pull complete messages.
#[derive(Debug, Default)]
pub struct FrameReader {
    buf: Vec<u8>,
}

impl FrameReader {
    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    pub fn next_message(&mut self) -> Result<Option<Message>> {
        match read_frame(&self.buf)? {
            Some((msg, used)) => {
                self.buf.drain(..used);
                Ok(Some(msg))
            }
            None => Ok(None),
        }
    }

    pub fn pending_bytes(&self) -> usize {
        self.buf.len()
    }
}
