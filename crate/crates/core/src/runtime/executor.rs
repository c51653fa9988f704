//! Delivery of messages between rank workers: a single-threaded scheduler
//! (round-robin or seeded random order) and a multi-threaded one.

use super::ledger::CommLedger;
use super::message::{Message, Tag};
use super::worker::{Phase, RankWorker};
use super::RuntimeError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{mpsc, Mutex};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Delivery {
    /// Ranks take turns delivering their oldest pending message.
    RoundRobin,
    /// A seeded random pending (receiver, sender) pair is served next;
    /// only the order between one sender and one receiver is preserved.
    Random(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Executor {
    Deterministic(Delivery),
    /// `None` picks `SELINV_THREADS`, falling back to the available cores.
    Threaded(Option<usize>),
}

pub const THREADS_ENV: &str = "SELINV_THREADS";

/// Number of OS threads used for `p` ranks.
pub fn worker_count(p: usize, requested: Option<usize>) -> usize {
    let cap = requested
        .or_else(|| std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse().ok()))
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    cap.clamp(1, p.max(1))
}

const PHASES: [Phase; 2] = [Phase::Normalize, Phase::Invert];

pub(crate) fn run_deterministic(
    workers: &mut [RankWorker],
    delivery: Delivery,
    drop_tag: Option<Tag>,
) -> Result<CommLedger, RuntimeError> {
    let p = workers.len();
    let mut ledger = CommLedger::new(p);
    let mut seq = 0u64;
    let mut rng = match delivery {
        Delivery::Random(s) => Some(ChaCha8Rng::seed_from_u64(s)),
        Delivery::RoundRobin => None,
    };
    for phase in PHASES {
        let mut inbox: Vec<VecDeque<Message>> = vec![VecDeque::new(); p];
        let mut route = |msgs: Vec<Message>, inbox: &mut Vec<VecDeque<Message>>, ledger: &mut CommLedger| {
            for m in msgs {
                if Some(m.tag) == drop_tag {
                    continue;
                }
                ledger.record_send(&m, seq);
                seq += 1;
                inbox[m.dst].push_back(m);
            }
        };
        for w in workers.iter_mut() {
            let out = w.start(phase)?;
            route(out, &mut inbox, &mut ledger);
        }
        loop {
            let mut progressed = false;
            match rng.as_mut() {
                None => {
                    for r in 0..p {
                        if let Some(m) = inbox[r].pop_front() {
                            ledger.record_receive(&m);
                            let out = workers[r].handle(m)?;
                            route(out, &mut inbox, &mut ledger);
                            progressed = true;
                        }
                    }
                }
                Some(rng) => {
                    let busy: Vec<usize> = (0..p).filter(|&r| !inbox[r].is_empty()).collect();
                    if !busy.is_empty() {
                        let r = busy[rng.random_range(0..busy.len())];
                        let mut senders: Vec<usize> = inbox[r].iter().map(|m| m.src).collect();
                        senders.sort_unstable();
                        senders.dedup();
                        let src = senders[rng.random_range(0..senders.len())];
                        let pos = inbox[r].iter().position(|m| m.src == src).expect("sender has a message");
                        let m = inbox[r].remove(pos).expect("position is valid");
                        ledger.record_receive(&m);
                        let out = workers[r].handle(m)?;
                        route(out, &mut inbox, &mut ledger);
                        progressed = true;
                    }
                }
            }
            if !progressed {
                break;
            }
        }
    }
    Ok(ledger)
}

enum Envelope {
    Start(Phase),
    Deliver(Message),
    Stop,
}

fn phase_of(tag: Tag) -> Phase {
    match tag {
        Tag::LPanel | Tag::UPanel => Phase::Normalize,
        _ => Phase::Invert,
    }
}

/// Runs every phase with `threads` OS threads; rank `r` lives on thread
/// `r % threads`. An in-flight counter (one token per thread at phase start
/// plus one per undelivered message) detects quiescence.
pub(crate) fn run_threaded(
    workers: Vec<RankWorker>,
    threads: usize,
    drop_tag: Option<Tag>,
) -> Result<(Vec<RankWorker>, CommLedger), RuntimeError> {
    let p = workers.len();
    let threads = threads.clamp(1, p.max(1));
    let mut groups: Vec<Vec<RankWorker>> = (0..threads).map(|_| Vec::new()).collect();
    for w in workers {
        groups[w.rank() % threads].push(w);
    }
    let in_flight = AtomicUsize::new(0);
    let seq = AtomicU64::new(0);
    let failure: Mutex<Option<RuntimeError>> = Mutex::new(None);
    let (txs, rxs): (Vec<_>, Vec<_>) = (0..threads).map(|_| mpsc::channel::<Envelope>()).unzip();
    let (done_tx, done_rx) = mpsc::channel::<()>();

    let results = std::thread::scope(|scope| {
        let mut handles = Vec::with_capacity(threads);
        for (t, (mut mine, rx)) in groups.into_iter().zip(rxs).enumerate() {
            let txs = txs.clone();
            let done_tx = done_tx.clone();
            let (in_flight, seq, failure) = (&in_flight, &seq, &failure);
            handles.push(scope.spawn(move || {
                let mut ledger = CommLedger::new(p);
                let mut started: Option<Phase> = None;
                let mut deferred: Vec<Message> = Vec::new();
                let fail = |e: RuntimeError| {
                    let mut slot = failure.lock().expect("failure slot");
                    slot.get_or_insert(e);
                };
                let route = |msgs: Vec<Message>, ledger: &mut CommLedger| {
                    for m in msgs {
                        if Some(m.tag) == drop_tag {
                            continue;
                        }
                        ledger.record_send(&m, seq.fetch_add(1, Ordering::SeqCst));
                        in_flight.fetch_add(1, Ordering::SeqCst);
                        txs[m.dst % threads].send(Envelope::Deliver(m)).expect("receiver thread alive");
                    }
                };
                let finish_one = || {
                    if in_flight.fetch_sub(1, Ordering::SeqCst) == 1 {
                        done_tx.send(()).expect("coordinator alive");
                    }
                };
                let deliver = |m: Message, ledger: &mut CommLedger, mine: &mut Vec<RankWorker>| {
                    ledger.record_receive(&m);
                    let w = &mut mine[m.dst / threads];
                    debug_assert_eq!(w.rank(), m.dst);
                    match w.handle(m) {
                        Ok(out) => route(out, ledger),
                        Err(e) => fail(e),
                    }
                };
                while let Ok(env) = rx.recv() {
                    match env {
                        Envelope::Start(phase) => {
                            started = Some(phase);
                            for w in mine.iter_mut() {
                                match w.start(phase) {
                                    Ok(out) => route(out, &mut ledger),
                                    Err(e) => fail(e),
                                }
                            }
                            for m in std::mem::take(&mut deferred) {
                                deliver(m, &mut ledger, &mut mine);
                                finish_one();
                            }
                            finish_one();
                        }
                        Envelope::Deliver(m) => {
                            if started != Some(phase_of(m.tag)) {
                                deferred.push(m);
                                continue;
                            }
                            deliver(m, &mut ledger, &mut mine);
                            finish_one();
                        }
                        Envelope::Stop => break,
                    }
                }
                (t, mine, ledger)
            }));
        }
        drop(done_tx);
        for phase in PHASES {
            in_flight.store(threads, Ordering::SeqCst);
            for tx in &txs {
                tx.send(Envelope::Start(phase)).expect("worker thread alive");
            }
            done_rx.recv().expect("a worker reports quiescence");
        }
        for tx in &txs {
            tx.send(Envelope::Stop).expect("worker thread alive");
        }
        handles.into_iter().map(|h| h.join().expect("worker thread panicked")).collect::<Vec<_>>()
    });

    if let Some(e) = failure.into_inner().expect("failure slot") {
        return Err(e);
    }
    let mut ledger = CommLedger::new(p);
    let mut slots: Vec<Option<RankWorker>> = (0..p).map(|_| None).collect();
    for (_, mine, part) in results {
        ledger.merge(part);
        for w in mine {
            let r = w.rank();
            slots[r] = Some(w);
        }
    }
    Ok((slots.into_iter().map(|w| w.expect("every rank returned")).collect(), ledger))
}
