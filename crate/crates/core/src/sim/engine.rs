//! One replication of the event-driven M/G/1/1 simulation.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::Rng;
use rand_distr::{Distribution, Exp};

use super::{Counters, DeliveryRecord, Policy, SimConfig, StopRule, Transitions};
use crate::analytic::SystemConfig;
use crate::rng::{substream, Stream, StreamKind};

#[derive(Debug, Clone, Copy)]
enum EventKind {
    Arrival(usize),
    Completion(u64),
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // reversed: BinaryHeap is a max-heap and we pop the earliest event
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

#[derive(Debug, Clone, Copy)]
struct InService {
    source: usize,
    generated: f64,
    started: f64,
    token: u64,
    counted: bool,
}

/// Delivery-to-delivery segment of one source's sawtooth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Segment {
    /// Delivery time closing the segment.
    pub end: f64,
    /// System time of the packet delivered at the segment start.
    pub prev_system_time: f64,
    /// Interdeparture time (segment length).
    pub length: f64,
}

impl Segment {
    /// `int delta dt = T_prev Y + Y^2 / 2` over the segment.
    pub fn area(&self) -> f64 {
        self.prev_system_time * self.length + 0.5 * self.length * self.length
    }

    /// `int delta^2 dt` over the segment.
    pub fn area_sq(&self) -> f64 {
        let a = self.prev_system_time;
        let b = a + self.length;
        (b * b * b - a * a * a) / 3.0
    }

    pub fn paoi(&self) -> f64 {
        self.length + self.prev_system_time
    }
}

#[derive(Debug, Clone, Default)]
pub(crate) struct SourceTrace {
    pub segments: Vec<Segment>,
    pub system_times: Vec<f64>,
    pub preempt_gaps: Vec<f64>,
    pub system_time_count: u64,
    pub counters: Counters,
    pub transitions: Transitions,
}

#[derive(Debug, Clone)]
pub(crate) struct Replication {
    pub window_start: f64,
    pub window_end: f64,
    pub sources: Vec<SourceTrace>,
    pub deliveries: Vec<DeliveryRecord>,
}

struct Streams {
    arrivals: Vec<Stream>,
    service: Vec<Stream>,
    preemption: Vec<Stream>,
}

pub(crate) fn run_replication(
    cfg: &SystemConfig,
    policy: Policy,
    sim: &SimConfig,
    replication: u64,
) -> Replication {
    let n = cfg.sources();
    let seed = sim.seed;
    let mut streams = Streams {
        arrivals: (0..n)
            .map(|c| substream(seed, replication, c, StreamKind::Arrivals))
            .collect(),
        service: (0..n)
            .map(|c| substream(seed, replication, c, StreamKind::Service))
            .collect(),
        preemption: (0..n)
            .map(|c| substream(seed, replication, c, StreamKind::Preemption))
            .collect(),
    };
    let inter: Vec<Exp<f64>> = cfg
        .arrival_rates()
        .iter()
        .map(|&r| Exp::new(r).expect("validated rate"))
        .collect();
    let service = *cfg.service();

    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    let mut push = |heap: &mut BinaryHeap<Event>, time: f64, kind: EventKind| {
        heap.push(Event { time, seq, kind });
        seq += 1;
    };
    for c in 0..n {
        let t = inter[c].sample(&mut streams.arrivals[c]);
        push(&mut heap, t, EventKind::Arrival(c));
    }

    let (horizon, target) = match sim.stop {
        StopRule::Horizon(h) => (h, 0),
        StopRule::Deliveries(k) => (f64::INFINITY, k),
    };
    let warmup_deliveries = match sim.stop {
        StopRule::Deliveries(k) => (sim.warmup * k as f64).ceil() as u64,
        StopRule::Horizon(_) => 0,
    };
    let mut window_start = match sim.stop {
        StopRule::Horizon(h) => sim.warmup * h,
        StopRule::Deliveries(_) if warmup_deliveries == 0 => 0.0,
        StopRule::Deliveries(_) => f64::INFINITY,
    };

    let mut traces = vec![SourceTrace::default(); n];
    let mut deliveries = Vec::new();
    let mut last_delivery: Vec<Option<(f64, f64)>> = vec![None; n]; // (time, system time)
    let mut total_delivered = vec![0u64; n];
    let mut window_delivered = vec![0u64; n];
    let mut server: Option<InService> = None;
    let mut next_token = 0u64;
    let mut now = 0.0;

    let start_service = |streams: &mut Streams,
                             heap: &mut BinaryHeap<Event>,
                             push: &mut dyn FnMut(&mut BinaryHeap<Event>, f64, EventKind),
                             next_token: &mut u64,
                             source: usize,
                             t: f64,
                             window_start: f64|
     -> InService {
        let u = service.sample(&mut streams.service[source]);
        let token = *next_token;
        *next_token += 1;
        push(heap, t + u, EventKind::Completion(token));
        InService {
            source,
            generated: t,
            started: t,
            token,
            counted: t >= window_start,
        }
    };

    while let Some(ev) = heap.pop() {
        if ev.time > horizon {
            now = horizon;
            break;
        }
        now = ev.time;
        let in_window = now >= window_start;
        match ev.kind {
            EventKind::Arrival(c) => {
                let next = now + inter[c].sample(&mut streams.arrivals[c]);
                push(&mut heap, next, EventKind::Arrival(c));
                traces[c].counters.arrivals += 1;
                match server {
                    None => {
                        if in_window {
                            traces[c].transitions.race_wins += 1;
                            traces[c].transitions.entered_service += 1;
                        }
                        server = Some(start_service(
                            &mut streams,
                            &mut heap,
                            &mut push,
                            &mut next_token,
                            c,
                            now,
                            window_start,
                        ));
                    }
                    Some(current) => {
                        let preempt = match policy {
                            Policy::Probabilistic { theta } => {
                                current.source == c
                                    && streams.preemption[c].random::<f64>() < theta
                            }
                            Policy::NonPreemptive => false,
                            Policy::SelfPreemptive => current.source == c,
                            Policy::GloballyPreemptive => true,
                        };
                        if preempt {
                            let victim = current.source;
                            traces[victim].counters.preempted += 1;
                            if current.counted {
                                traces[victim].transitions.resolved_preempted += 1;
                                if traces[victim].preempt_gaps.len() < sim.sample_capacity {
                                    traces[victim].preempt_gaps.push(now - current.started);
                                }
                            }
                            if in_window {
                                traces[c].transitions.entered_service += 1;
                            }
                            server = Some(start_service(
                                &mut streams,
                                &mut heap,
                                &mut push,
                                &mut next_token,
                                c,
                                now,
                                window_start,
                            ));
                        } else {
                            traces[c].counters.discarded += 1;
                        }
                    }
                }
            }
            EventKind::Completion(token) => {
                let Some(current) = server.filter(|s| s.token == token) else {
                    continue;
                };
                server = None;
                let c = current.source;
                let trace = &mut traces[c];
                trace.counters.delivered += 1;
                total_delivered[c] += 1;
                if current.counted {
                    trace.transitions.resolved_delivered += 1;
                }
                let system_time = now - current.generated;
                let mut record = DeliveryRecord {
                    source: c,
                    generated: current.generated,
                    delivered: now,
                    system_time,
                    interdeparture: None,
                    paoi: None,
                };
                if in_window {
                    window_delivered[c] += 1;
                    trace.system_time_count += 1;
                    if trace.system_times.len() < sim.sample_capacity {
                        trace.system_times.push(system_time);
                    }
                    if let Some((prev_time, prev_system_time)) = last_delivery[c] {
                        let seg = Segment {
                            end: now,
                            prev_system_time,
                            length: now - prev_time,
                        };
                        record.interdeparture = Some(seg.length);
                        record.paoi = Some(seg.paoi());
                        trace.segments.push(seg);
                    }
                    if sim.record_deliveries {
                        deliveries.push(record);
                    }
                }
                last_delivery[c] = Some((now, system_time));

                if !window_start.is_finite() && total_delivered.iter().all(|&d| d >= warmup_deliveries) {
                    window_start = now;
                }
                if target > 0 && window_delivered.iter().all(|&d| d >= target) {
                    break;
                }
            }
        }
    }

    if let Some(current) = server {
        traces[current.source].counters.in_flight = 1;
    }
    Replication {
        window_start: if window_start.is_finite() { window_start } else { now },
        window_end: now,
        sources: traces,
        deliveries,
    }
}
