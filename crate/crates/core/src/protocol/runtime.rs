//! Message delivery: a serial event loop (FIFO or seeded shuffle) and a
//! threaded runtime with participants spread over worker threads.

use std::collections::VecDeque;
use std::sync::mpsc::{self, RecvTimeoutError};
use std::time::Duration;

use rand::Rng;

use super::coordinator::Coordinator;
use super::message::{encode_frame, Endpoint, FrameReader, Message};
use super::participant::Participant;
use super::Phase;
use crate::config::TransportKind;
use crate::error::{Error, Result};
use crate::seed;

/// Carries a message across the configured transport. Loopback pushes the
/// encoded frame through a byte-stream reader in small chunks.
pub fn transmit(msg: Message, transport: TransportKind) -> Result<Message> {
    match transport {
        TransportKind::InMemory => Ok(msg),
        TransportKind::Loopback => {
            let bytes = encode_frame(&msg)?;
            let mut reader = FrameReader::default();
            for chunk in bytes.chunks(4096) {
                reader.push(chunk);
            }
            let decoded = reader.next_message()?.ok_or_else(|| Error::Format("frame did not complete".into()))?;
            if reader.pending_bytes() != 0 {
                return Err(Error::Format("trailing bytes after frame".into()));
            }
            Ok(decoded)
        }
    }
}

fn stalled(coord: &Coordinator) -> Error {
    let waiting: Vec<String> = coord.pending_ids().iter().map(|id| format!("participant {id}")).collect();
    Error::Timeout { phase: coord.phase(), waiting_on: waiting.join(", ") }
}

fn deliver_to(parts: &mut [Participant], msg: Message) -> Result<Vec<Message>> {
    let Endpoint::Participant(id) = msg.to else { unreachable!("platform messages are handled by the caller") };
    let p = parts.iter_mut().find(|p| p.id() == id).ok_or_else(|| Error::Protocol {
        phase: Phase::Distributing,
        reason: format!("no participant {id}"),
    })?;
    p.handle(msg)
}

/// Single-threaded event loop. With `shuffle_seed`, the next message is
/// drawn uniformly from everything in flight, modelling arbitrary arrival
/// order; otherwise messages are delivered first in, first out.
pub fn drive_serial(
    coord: &mut Coordinator,
    parts: &mut [Participant],
    shuffle_seed: Option<u64>,
    transport: TransportKind,
) -> Result<()> {
    let mut queue: VecDeque<Message> = coord.start()?.into();
    let mut rng = shuffle_seed.map(seed::rng);
    while !queue.is_empty() {
        let idx = rng.as_mut().map_or(0, |r| r.random_range(0..queue.len()));
        let msg = transmit(queue.remove(idx).expect("index in range"), transport)?;
        let out = match msg.to {
            Endpoint::Platform => coord.handle(msg)?,
            Endpoint::Participant(_) => deliver_to(parts, msg)?,
        };
        queue.extend(out);
    }
    if coord.phase() == Phase::Merged {
        Ok(())
    } else {
        Err(stalled(coord))
    }
}

/// Runs participants on `threads` workers while the calling thread serves
/// as the platform. Returns the participants (in id order) once merged.
/// A platform that hears nothing for `timeout` fails with
/// [`Error::Timeout`] naming the missing participants.
pub fn drive_threaded(
    coord: &mut Coordinator,
    parts: Vec<Participant>,
    threads: usize,
    transport: TransportKind,
    timeout: Duration,
) -> Result<Vec<Participant>> {
    let workers = threads.clamp(1, parts.len().max(1));
    let mut groups: Vec<Vec<Participant>> = (0..workers).map(|_| Vec::new()).collect();
    for p in parts {
        groups[p.id() as usize % workers].push(p);
    }

    std::thread::scope(|scope| {
        let (to_platform, inbox) = mpsc::channel::<Result<Message>>();
        let mut senders = Vec::with_capacity(workers);
        let mut handles = Vec::with_capacity(workers);
        for mut group in groups {
            let (tx, rx) = mpsc::channel::<Message>();
            senders.push(tx);
            let back = to_platform.clone();
            handles.push(scope.spawn(move || {
                for msg in rx {
                    match transmit(msg, transport).and_then(|m| deliver_to(&mut group, m)) {
                        Ok(out) => {
                            for m in out {
                                let _ = back.send(Ok(m));
                            }
                        }
                        Err(e) => {
                            let _ = back.send(Err(e));
                        }
                    }
                }
                group
            }));
        }
        drop(to_platform);

        let route = |msgs: Vec<Message>| {
            for m in msgs {
                if let Endpoint::Participant(id) = m.to {
                    let _ = senders[id as usize % workers].send(m);
                }
            }
        };

        let result = (|| {
            route(coord.start()?);
            while coord.phase() != Phase::Merged {
                match inbox.recv_timeout(timeout) {
                    Ok(reply) => {
                        let msg = transmit(reply?, transport)?;
                        route(coord.handle(msg)?);
                    }
                    Err(RecvTimeoutError::Timeout) | Err(RecvTimeoutError::Disconnected) => {
                        return Err(stalled(coord));
                    }
                }
            }
            Ok(())
        })();
        drop(senders);

        let mut parts: Vec<Participant> =
            handles.into_iter().flat_map(|h| h.join().expect("participant worker panicked")).collect();
        parts.sort_by_key(Participant::id);
        result.map(|()| parts)
    })
}
