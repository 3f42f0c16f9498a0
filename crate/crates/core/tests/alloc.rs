//! The steady-state frame loop performs no heap allocation.

mod common;

use std::alloc::{GlobalAlloc, Layout, System};
use std::cell::Cell;

use avtse::engine::{Cue, StreamEngine, VadMode};
use avtse::signal::HOP;

struct Counting;

thread_local! {
    static ACTIVE: Cell<bool> = const { Cell::new(false) };
    static COUNT: Cell<usize> = const { Cell::new(0) };
}

unsafe impl GlobalAlloc for Counting {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        if ACTIVE.with(Cell::get) {
            COUNT.with(|c| c.set(c.get() + 1));
        }
        unsafe { System.alloc(layout) }
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        unsafe { System.dealloc(ptr, layout) }
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        if ACTIVE.with(Cell::get) {
            COUNT.with(|c| c.set(c.get() + 1));
        }
        unsafe { System.realloc(ptr, layout, new_size) }
    }
}

#[global_allocator]
static GLOBAL: Counting = Counting;

#[test]
fn steady_state_frames_do_not_allocate() {
    let model = common::model::<f32>(9);
    let mut rng = common::rng(9);
    let audio: Vec<f32> = common::noise(&mut rng, 200 * HOP, 0.3);
    let lips = common::lips::<f32>(&mut rng, 50);
    for mode in [VadMode::Visual, VadMode::Labels, VadMode::AlwaysActive] {
        let mut engine = StreamEngine::new(model.clone(), mode);
        let mut out = vec![0.0f32; HOP];
        let mut allocations = 0;
        for (t, x) in audio.chunks_exact(HOP).enumerate() {
            let cue = match (mode, t % 4) {
                (VadMode::Visual, 0) => Cue::Lip(lips.frame(t / 4)),
                (VadMode::Labels, 0) => Cue::Label(t % 8 == 0),
                _ => Cue::None,
            };
            let warm = t >= 8;
            COUNT.with(|c| c.set(0));
            ACTIVE.with(|a| a.set(warm));
            engine.process_frame(x, cue, &mut out).unwrap();
            ACTIVE.with(|a| a.set(false));
            allocations += COUNT.with(Cell::get);
        }
        assert_eq!(allocations, 0, "{mode:?}");
    }
}
