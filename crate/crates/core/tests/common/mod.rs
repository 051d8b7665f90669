#![allow(dead_code)]

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};

use flame_core::modelest::LayerTiming;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    CpuEnd,
    Ready,
    GpuEnd,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Event {
    time: f64,
    kind: Kind,
    layer: usize,
}

impl Eq for Event {}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on time, then layer
        other
            .time
            .total_cmp(&self.time)
            .then(other.layer.cmp(&self.layer))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Discrete-event simulation of one CPU stream feeding a single in-order GPU
/// queue. Returns per-layer (gpu_start, gpu_end) and the makespan.
pub fn event_oracle(layers: &[LayerTiming]) -> (Vec<(f64, f64)>, f64) {
    let n = layers.len();
    let mut heap = BinaryHeap::new();
    let mut ready_at = vec![f64::NAN; n];
    let mut ready: BTreeSet<usize> = BTreeSet::new();
    let mut gpu = vec![(f64::NAN, f64::NAN); n];
    let mut next_gpu = 0usize;
    let mut gpu_busy = false;
    let mut gpu_free_at = f64::NEG_INFINITY;

    heap.push(Event {
        time: layers[0].cpu_ms,
        kind: Kind::CpuEnd,
        layer: 0,
    });
    while let Some(ev) = heap.pop() {
        match ev.kind {
            Kind::CpuEnd => {
                if ev.layer + 1 < n {
                    heap.push(Event {
                        time: ev.time + layers[ev.layer + 1].cpu_ms,
                        kind: Kind::CpuEnd,
                        layer: ev.layer + 1,
                    });
                }
                heap.push(Event {
                    time: ev.time + layers[ev.layer].delta_ms,
                    kind: Kind::Ready,
                    layer: ev.layer,
                });
            }
            Kind::Ready => {
                ready_at[ev.layer] = ev.time;
                ready.insert(ev.layer);
            }
            Kind::GpuEnd => {
                gpu_busy = false;
                gpu_free_at = ev.time;
            }
        }
        // dispatch whenever the GPU is idle and the next layer in order is ready
        while !gpu_busy && next_gpu < n && ready.contains(&next_gpu) {
            let start = ready_at[next_gpu].max(gpu_free_at);
            let end = start + layers[next_gpu].gpu_ms;
            gpu[next_gpu] = (start, end);
            ready.remove(&next_gpu);
            gpu_busy = true;
            heap.push(Event {
                time: end,
                kind: Kind::GpuEnd,
                layer: next_gpu,
            });
            next_gpu += 1;
        }
    }
    let total = gpu[n - 1].1;
    (gpu, total)
}
