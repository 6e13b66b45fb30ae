//! Rate-controlled replay, in the spirit of `tcpreplay --multiplier`.

use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::model::Packet;

/// Packets buffered between the pacing worker and the sink.
const QUEUE_DEPTH: usize = 1024;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReplayError {
    #[error("packet {index} has a timestamp earlier than its predecessor")]
    UnsortedInput { index: usize },
    #[error("speed factor must be finite and >= 0")]
    InvalidSpeed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplayStats {
    pub packets_sent: u64,
    pub bytes_sent: u64,
    pub elapsed: Duration,
    pub packets_per_s: f64,
}

/// Delivers `packets` to `sink` in order.
///
/// A dedicated worker paces the stream and hands packets over a bounded
/// queue; `sink` runs on the calling thread. With `speed_factor > 0` packet
/// `i` is released no earlier than `(ts_i - ts_0) / speed_factor` after the
/// start; `0` means no pacing.
pub fn replay<F>(packets: &[Packet], speed_factor: f64, mut sink: F) -> Result<ReplayStats, ReplayError>
where
    F: FnMut(Packet),
{
    if !(speed_factor.is_finite() && speed_factor >= 0.0) {
        return Err(ReplayError::InvalidSpeed);
    }
    if let Some(i) = packets.windows(2).position(|w| w[1].ts_us < w[0].ts_us) {
        return Err(ReplayError::UnsortedInput { index: i + 1 });
    }

    let start = Instant::now();
    let (tx, rx) = crossbeam_channel::bounded::<Packet>(QUEUE_DEPTH);
    let mut sent = 0u64;
    let mut bytes = 0u64;
    thread::scope(|s| {
        s.spawn(move || {
            let base = packets.first().map_or(0, |p| p.ts_us);
            for p in packets {
                if speed_factor > 0.0 {
                    let offset = Duration::from_secs_f64((p.ts_us - base) as f64 / 1e6 / speed_factor);
                    let due = start + offset;
                    let now = Instant::now();
                    if due > now {
                        thread::sleep(due - now);
                    }
                }
                if tx.send(p.clone()).is_err() {
                    break;
                }
            }
        });
        for p in rx.iter() {
            sent += 1;
            bytes += u64::from(p.wire_len);
            sink(p);
        }
    });
    let elapsed = start.elapsed();
    let secs = elapsed.as_secs_f64();
    Ok(ReplayStats {
        packets_sent: sent,
        bytes_sent: bytes,
        elapsed,
        packets_per_s: if secs > 0.0 { sent as f64 / secs } else { 0.0 },
    })
}
