use fedembed::codec::{Reader, Writer};
use fedembed::federation::HeadState;
use fedembed::losses::LossBreakdown;
use fedembed::{FormatError, LayerShape, ParamBlock};

use crate::error::protocol;
use crate::frame::{Frame, MessageType};
use crate::Result;

/// Typed payloads of the protocol.
#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    /// Client introduction: input width and local identity count. The
    /// client id travels in the frame header.
    Hello { feature_dim: u32, identities: u32, domain_id: u32 },
    /// Server configuration as `key = value` text.
    Config(String),
    /// Global parameters for the epoch in the frame header, and whether the
    /// recipient's update will be aggregated.
    GlobalParams {
        selected: bool,
        embed: ParamBlock,
        head: Option<HeadState>,
    },
    /// Parameters of a selected client after its local round.
    Update {
        losses: LossBreakdown,
        embed: ParamBlock,
        head: Option<HeadState>,
    },
    /// Sent by unselected clients once their local round has finished.
    EpochDone { losses: LossBreakdown },
    Shutdown,
    Error(String),
}

/// `u32` layer count, then per layer `rows`, `cols`, `bias` as `u32`, then
/// every value as `f64`.
pub fn encode_param_block(w: &mut Writer, block: &ParamBlock) {
    w.u32(block.layers().len() as u32);
    for l in block.layers() {
        w.u32(l.rows as u32).u32(l.cols as u32).u32(l.bias as u32);
    }
    w.f64s(block.values());
}

pub fn decode_param_block(r: &mut Reader<'_>) -> Result<ParamBlock> {
    let n = r.u32()? as usize;
    r.require(n.saturating_mul(12))?;
    let mut layers = Vec::with_capacity(n);
    let mut total = 0usize;
    for _ in 0..n {
        let shape = LayerShape {
            rows: r.u32()? as usize,
            cols: r.u32()? as usize,
            bias: r.u32()? as usize,
        };
        total = shape
            .rows
            .checked_mul(shape.cols)
            .and_then(|w| w.checked_add(shape.bias))
            .and_then(|l| total.checked_add(l))
            .ok_or_else(|| FormatError::MalformedHeader("parameter count overflows".into()))?;
        layers.push(shape);
    }
    r.require(total.saturating_mul(8))?;
    let values = r.f64s(total)?;
    Ok(ParamBlock::from_values(layers, values)?)
}

fn encode_head(w: &mut Writer, head: &Option<HeadState>) {
    match head {
        None => {
            w.u8(0);
        }
        Some(h) => {
            w.u8(1);
            encode_param_block(w, &h.params);
            w.u32(h.running_mean.len() as u32).f64s(&h.running_mean);
            w.u32(h.running_var.len() as u32).f64s(&h.running_var);
        }
    }
}

fn decode_vec(r: &mut Reader<'_>) -> Result<Vec<f64>> {
    let n = r.u32()? as usize;
    r.require(n.saturating_mul(8))?;
    Ok(r.f64s(n)?)
}

fn decode_head(r: &mut Reader<'_>) -> Result<Option<HeadState>> {
    match r.u8()? {
        0 => Ok(None),
        1 => Ok(Some(HeadState {
            params: decode_param_block(r)?,
            running_mean: decode_vec(r)?,
            running_var: decode_vec(r)?,
        })),
        other => Err(protocol(format!("invalid head flag {other}"))),
    }
}

fn encode_losses(w: &mut Writer, l: &LossBreakdown) {
    w.f64(l.classification).f64(l.expert).f64(l.regularisation);
}

fn decode_losses(r: &mut Reader<'_>) -> Result<LossBreakdown> {
    Ok(LossBreakdown {
        classification: r.f64()?,
        expert: r.f64()?,
        regularisation: r.f64()?,
    })
}

fn text(bytes: &[u8]) -> Result<String> {
    String::from_utf8(bytes.to_vec()).map_err(|_| protocol("text payload is not UTF-8"))
}

impl Message {
    pub fn kind(&self) -> MessageType {
        match self {
            Message::Hello { .. } => MessageType::Hello,
            Message::Config(_) => MessageType::Config,
            Message::GlobalParams { .. } => MessageType::GlobalParams,
            Message::Update { .. } => MessageType::Update,
            Message::EpochDone { .. } => MessageType::EpochDone,
            Message::Shutdown => MessageType::Shutdown,
            Message::Error(_) => MessageType::Error,
        }
    }

    pub fn into_frame(&self, epoch: u32, client: u16) -> Frame {
        let mut w = Writer::new();
        match self {
            Message::Hello {
                feature_dim,
                identities,
                domain_id,
            } => {
                w.u32(*feature_dim).u32(*identities).u32(*domain_id);
            }
            Message::Config(s) | Message::Error(s) => {
                w.bytes(s.as_bytes());
            }
            Message::GlobalParams { selected, embed, head } => {
                w.u8(*selected as u8);
                encode_param_block(&mut w, embed);
                encode_head(&mut w, head);
            }
            Message::Update { losses, embed, head } => {
                encode_losses(&mut w, losses);
                encode_param_block(&mut w, embed);
                encode_head(&mut w, head);
            }
            Message::EpochDone { losses } => encode_losses(&mut w, losses),
            Message::Shutdown => {}
        }
        Frame {
            kind: self.kind(),
            epoch,
            client,
            payload: w.into_inner(),
        }
    }

    pub fn from_frame(frame: &Frame) -> Result<Self> {
        let mut r = Reader::new(&frame.payload);
        let msg = match frame.kind {
            MessageType::Hello => Message::Hello {
                feature_dim: r.u32()?,
                identities: r.u32()?,
                domain_id: r.u32()?,
            },
            MessageType::Config => return Ok(Message::Config(text(&frame.payload)?)),
            MessageType::Error => return Ok(Message::Error(text(&frame.payload)?)),
            MessageType::GlobalParams => {
                let selected = match r.u8()? {
                    0 => false,
                    1 => true,
                    other => return Err(protocol(format!("invalid selection flag {other}"))),
                };
                Message::GlobalParams {
                    selected,
                    embed: decode_param_block(&mut r)?,
                    head: decode_head(&mut r)?,
                }
            }
            MessageType::Update => Message::Update {
                losses: decode_losses(&mut r)?,
                embed: decode_param_block(&mut r)?,
                head: decode_head(&mut r)?,
            },
            MessageType::EpochDone => Message::EpochDone {
                losses: decode_losses(&mut r)?,
            },
            MessageType::Shutdown => Message::Shutdown,
        };
        if r.remaining() != 0 {
            return Err(protocol(format!(
                "{} unexpected trailing payload bytes in {:?}",
                r.remaining(),
                frame.kind
            )));
        }
        Ok(msg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block() -> ParamBlock {
        let layers = vec![LayerShape { rows: 2, cols: 3, bias: 2 }, LayerShape { rows: 1, cols: 2, bias: 1 }];
        let values = (0..11).map(|i| i as f64 * 0.37 - 1.0).collect();
        ParamBlock::from_values(layers, values).unwrap()
    }

    fn round_trip(m: Message) {
        let f = m.into_frame(4, 2);
        let back = Frame::decode(&f.encode()).unwrap();
        assert_eq!(back, f);
        assert_eq!(Message::from_frame(&back).unwrap(), m);
    }

    #[test]
    fn all_messages_round_trip() {
        let head = HeadState {
            params: block(),
            running_mean: vec![0.5, -0.0],
            running_var: vec![1.0, f64::MIN_POSITIVE],
        };
        let losses = LossBreakdown {
            classification: 1.5,
            expert: 0.25,
            regularisation: 1e-300,
        };
        round_trip(Message::Hello {
            feature_dim: 32,
            identities: 40,
            domain_id: 9,
        });
        round_trip(Message::Config("clients = 3\n".into()));
        round_trip(Message::GlobalParams {
            selected: true,
            embed: block(),
            head: None,
        });
        round_trip(Message::GlobalParams {
            selected: false,
            embed: block(),
            head: Some(head.clone()),
        });
        round_trip(Message::Update {
            losses,
            embed: block(),
            head: Some(head),
        });
        round_trip(Message::EpochDone { losses });
        round_trip(Message::Shutdown);
        round_trip(Message::Error("boom".into()));
    }

    #[test]
    fn truncated_payload_is_an_error() {
        let mut f = Message::Update {
            losses: LossBreakdown::default(),
            embed: block(),
            head: None,
        }
        .into_frame(0, 0);
        f.payload.truncate(f.payload.len() - 9);
        assert!(Message::from_frame(&f).is_err());
    }
}
