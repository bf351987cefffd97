//! Range-and-bearing messaging: the 10-slot protocol frame, the required
//! robot-count formula and response-order task allocation.
//!
//! Frame layout (one byte per slot):
//!   0-1  exploring time, big-endian split
//!   2-4  reserved, must be zero
//!   5-6  robot id, big-endian split
//!   7    termination flag
//!   8    acknowledgment flag
//!   9    path-formation task request flag

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FRAME_SLOTS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FrameMode {
    Broadcast,
    Unicast(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolFrame {
    pub data: [u8; FRAME_SLOTS],
    pub mode: FrameMode,
}

impl ProtocolFrame {
    pub fn hex(&self) -> String {
        self.data.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FrameFlags {
    pub terminate: bool,
    pub ack: bool,
    pub request: bool,
}

impl FrameFlags {
    pub fn none() -> Self {
        FrameFlags::default()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum CommsError {
    #[error("value {value} for {field} exceeds two-byte range")]
    Encoding { field: &'static str, value: u64 },
    #[error("reserved slot {slot} is nonzero")]
    ReservedSlot { slot: usize },
    #[error("flag slot {slot} holds {value}, expected 0 or 1")]
    BadFlag { slot: usize, value: u8 },
    #[error("visual range must be positive, got {0}")]
    BadVisualRange(f64),
    #[error("negative parameter {field}: {value}")]
    NegativeParam { field: &'static str, value: f64 },
}

/// Pack exploring time, robot id and the three flags into a frame.
/// Two-byte fields are split big-endian: high byte first.
pub fn encode_frame(
    exploring_time_ticks: u32,
    robot_id: u32,
    flags: FrameFlags,
) -> Result<ProtocolFrame, CommsError> {
    if exploring_time_ticks > 0xFFFF {
        return Err(CommsError::Encoding {
            field: "exploring_time_ticks",
            value: exploring_time_ticks as u64,
        });
    }
    if robot_id > 0xFFFF {
        return Err(CommsError::Encoding {
            field: "robot_id",
            value: robot_id as u64,
        });
    }
    let mut data = [0u8; FRAME_SLOTS];
    data[0] = (exploring_time_ticks / 256) as u8;
    data[1] = (exploring_time_ticks % 256) as u8;
    data[5] = (robot_id / 256) as u8;
    data[6] = (robot_id % 256) as u8;
    data[7] = flags.terminate as u8;
    data[8] = flags.ack as u8;
    data[9] = flags.request as u8;
    Ok(ProtocolFrame {
        data,
        mode: FrameMode::Broadcast,
    })
}

/// Exact inverse of [`encode_frame`]. Rejects frames with nonzero reserved
/// slots or out-of-domain flag bytes.
pub fn decode_frame(frame: &ProtocolFrame) -> Result<(u32, u32, FrameFlags), CommsError> {
    for slot in 2..=4 {
        if frame.data[slot] != 0 {
            return Err(CommsError::ReservedSlot { slot });
        }
    }
    for slot in 7..=9 {
        if frame.data[slot] > 1 {
            return Err(CommsError::BadFlag {
                slot,
                value: frame.data[slot],
            });
        }
    }
    let t = frame.data[0] as u32 * 256 + frame.data[1] as u32;
    let id = frame.data[5] as u32 * 256 + frame.data[6] as u32;
    Ok((
        t,
        id,
        FrameFlags {
            terminate: frame.data[7] == 1,
            ack: frame.data[8] == 1,
            request: frame.data[9] == 1,
        },
    ))
}

/// Robots needed for path formation: ceil(s*t/v + delta).
///
/// `s` robot speed (m/s), `t` the founder's exploration time (s), `v` the
/// visual range (m), `delta` a complexity margin. Ceiling keeps the count
/// integral without under-provisioning the chain.
pub fn required_robot_count(s: f64, t: f64, v: f64, delta: f64) -> Result<u32, CommsError> {
    if v <= 0.0 {
        return Err(CommsError::BadVisualRange(v));
    }
    if s <= 0.0 {
        return Err(CommsError::NegativeParam {
            field: "s",
            value: s,
        });
    }
    for (field, value) in [("t", t), ("delta", delta)] {
        if value < 0.0 {
            return Err(CommsError::NegativeParam { field, value });
        }
    }
    Ok((s * t / v + delta).ceil() as u32)
}

/// Outcome of one allocation round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocationResult {
    pub n_required: u32,
    /// First-n responders, in arrival order.
    pub assigned_path: Vec<u32>,
    /// Everyone else, in arrival order.
    pub assigned_rest: Vec<u32>,
    /// How many requested robots never materialized.
    pub shortfall: u32,
}

impl AllocationResult {
    pub fn empty(n_required: u32) -> Self {
        AllocationResult {
            n_required,
            assigned_path: Vec::new(),
            assigned_rest: Vec::new(),
            shortfall: n_required,
        }
    }
}

/// Split responders by response order: the first `n` go to path formation,
/// the rest to resting. `responses` must already be duplicate-free and in
/// arrival order.
pub fn allocate_tasks(responses: &[u32], n: u32) -> AllocationResult {
    let n_usize = n as usize;
    let cut = n_usize.min(responses.len());
    AllocationResult {
        n_required: n,
        assigned_path: responses[..cut].to_vec(),
        assigned_rest: responses[cut..].to_vec(),
        shortfall: (n_usize - cut) as u32,
    }
}

/// A responder in the event-driven round model: arrival tick of its ack
/// plus its id. Ties on the tick are broken by id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AckArrival {
    pub tick: u64,
    pub robot_id: u32,
}

/// Reference model of the broadcast/ack/terminate round: orders acks by
/// (arrival tick, id), dedupes repeats, cuts off at the termination point.
/// The tick engine drives the same protocol incrementally; both funnel
/// through [`allocate_tasks`].
pub fn run_allocation_round(acks: &[AckArrival], n: u32) -> AllocationResult {
    let mut sorted: Vec<AckArrival> = acks.to_vec();
    sorted.sort_by_key(|a| (a.tick, a.robot_id));
    let mut seen = std::collections::HashSet::new();
    let ordered: Vec<u32> = sorted
        .into_iter()
        .filter(|a| seen.insert(a.robot_id))
        .map(|a| a.robot_id)
        .collect();
    allocate_tasks(&ordered, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn encode_example() {
        let f = encode_frame(
            300,
            5,
            FrameFlags {
                request: true,
                ..FrameFlags::none()
            },
        )
        .unwrap();
        assert_eq!(f.data, [1, 44, 0, 0, 0, 0, 5, 0, 0, 1]);
    }

    #[test]
    fn encode_zero() {
        let f = encode_frame(0, 0, FrameFlags::none()).unwrap();
        assert_eq!(f.data, [0; 10]);
    }

    #[test]
    fn encode_boundary() {
        let f = encode_frame(65535, 0, FrameFlags::none()).unwrap();
        assert_eq!(f.data[0], 255);
        assert_eq!(f.data[1], 255);
        assert!(encode_frame(65536, 0, FrameFlags::none()).is_err());
        assert!(encode_frame(0, 65536, FrameFlags::none()).is_err());
    }

    #[test]
    fn decode_zero_frame() {
        let f = ProtocolFrame {
            data: [0; 10],
            mode: FrameMode::Broadcast,
        };
        assert_eq!(decode_frame(&f).unwrap(), (0, 0, FrameFlags::none()));
    }

    #[test]
    fn decode_rejects_reserved() {
        let mut f = ProtocolFrame {
            data: [0; 10],
            mode: FrameMode::Broadcast,
        };
        f.data[3] = 7;
        assert_eq!(
            decode_frame(&f),
            Err(CommsError::ReservedSlot { slot: 3 })
        );
    }

    #[test]
    fn frame_hex() {
        let f = encode_frame(300, 5, FrameFlags::none()).unwrap();
        assert_eq!(f.hex(), "012c0000000005000000");
    }

    #[test]
    fn required_count_examples() {
        assert_eq!(required_robot_count(1.0, 0.0, 1.0, 0.0).unwrap(), 0);
        assert_eq!(required_robot_count(1.0, 7.0, 1.0, 0.0).unwrap(), 7);
        assert_eq!(required_robot_count(0.5, 10.0, 1.0, 2.0).unwrap(), 7);
        assert!(required_robot_count(1.0, 1.0, 0.0, 0.0).is_err());
        assert!(required_robot_count(1.0, -1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn allocate_examples() {
        let r = allocate_tasks(&[3, 7, 1], 2);
        assert_eq!(r.assigned_path, vec![3, 7]);
        assert_eq!(r.assigned_rest, vec![1]);
        assert_eq!(r.shortfall, 0);

        let r = allocate_tasks(&[3, 7, 1], 0);
        assert!(r.assigned_path.is_empty());
        assert_eq!(r.assigned_rest, vec![3, 7, 1]);

        let r = allocate_tasks(&[2, 4], 5);
        assert_eq!(r.assigned_path, vec![2, 4]);
        assert!(r.assigned_rest.is_empty());
        assert_eq!(r.shortfall, 3);
    }

    #[test]
    fn round_orders_by_arrival_then_id() {
        // 10 robots, n=4; two acks share tick 3 and resolve by id
        let acks: Vec<AckArrival> = [
            (1, 9),
            (2, 4),
            (3, 8),
            (3, 2),
            (5, 1),
            (6, 0),
            (7, 3),
            (8, 5),
            (9, 6),
            (10, 7),
        ]
        .iter()
        .map(|&(tick, robot_id)| AckArrival { tick, robot_id })
        .collect();
        let r = run_allocation_round(&acks, 4);
        assert_eq!(r.assigned_path, vec![9, 4, 2, 8]);
        assert_eq!(r.assigned_rest.len(), 6);
        assert_eq!(r.shortfall, 0);
    }

    #[test]
    fn round_with_too_few_responders() {
        let acks = vec![
            AckArrival { tick: 1, robot_id: 2 },
            AckArrival { tick: 2, robot_id: 4 },
        ];
        let r = run_allocation_round(&acks, 5);
        assert_eq!(r.assigned_path, vec![2, 4]);
        assert_eq!(r.shortfall, 3);
    }

    #[test]
    fn round_founder_alone() {
        let r = run_allocation_round(&[], 3);
        assert_eq!(r, AllocationResult::empty(3));
        assert_eq!(r.shortfall, 3);
    }

    #[test]
    fn round_dedupes_repeated_acks() {
        let acks = vec![
            AckArrival { tick: 1, robot_id: 2 },
            AckArrival { tick: 2, robot_id: 2 },
            AckArrival { tick: 3, robot_id: 4 },
        ];
        let r = run_allocation_round(&acks, 2);
        assert_eq!(r.assigned_path, vec![2, 4]);
    }

    proptest! {
        /// decode . encode = identity over the full valid domain.
        #[test]
        fn codec_round_trip(t in 0u32..=65535, id in 0u32..=65535,
                            terminate: bool, ack: bool, request: bool) {
            let flags = FrameFlags { terminate, ack, request };
            let frame = encode_frame(t, id, flags).unwrap();
            prop_assert_eq!(decode_frame(&frame).unwrap(), (t, id, flags));
        }

        /// |assigned_path| = min(n, responders).
        #[test]
        fn allocation_cardinality(ids in proptest::collection::vec(0u32..1000, 0..40), n in 0u32..50) {
            let mut seen = std::collections::HashSet::new();
            let unique: Vec<u32> = ids.into_iter().filter(|i| seen.insert(*i)).collect();
            let r = allocate_tasks(&unique, n);
            prop_assert_eq!(r.assigned_path.len(), (n as usize).min(unique.len()));
            prop_assert_eq!(r.assigned_path.len() + r.assigned_rest.len(), unique.len());
        }

        /// Required count is monotone: non-decreasing in s and t,
        /// non-increasing in v.
        #[test]
        fn required_count_monotone(s in 0.01f64..5.0, t in 0.0f64..500.0,
                                   v in 0.1f64..5.0, ds in 0.0f64..2.0,
                                   dt in 0.0f64..100.0, dv in 0.0f64..2.0) {
            let base = required_robot_count(s, t, v, 1.0).unwrap();
            prop_assert!(required_robot_count(s + ds, t, v, 1.0).unwrap() >= base);
            prop_assert!(required_robot_count(s, t + dt, v, 1.0).unwrap() >= base);
            prop_assert!(required_robot_count(s, t, v + dv, 1.0).unwrap() <= base);
        }
    }
}
