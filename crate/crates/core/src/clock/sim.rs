//! Single-threaded discrete-event executor driving futures on virtual time.
//!
//! Runnable tasks are polled in wake order. Time advances only when nothing is
//! runnable, by firing the earliest pending timer. Timer ties are broken by
//! the sleeping actor's id and then by registration sequence.

use std::cell::Cell;
use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, VecDeque};
use std::future::Future;
use std::pin::Pin;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, Weak};
use std::task::{Context, Poll, Wake, Waker};

type BoxFut = Pin<Box<dyn Future<Output = ()> + Send>>;

thread_local! {
    static CURRENT: Cell<usize> = const { Cell::new(0) };
}

struct TaskSlot {
    fut: Option<BoxFut>,
    label: String,
    waker: Arc<TaskWaker>,
    done: bool,
}

struct TaskWaker {
    id: usize,
    queued: AtomicBool,
    shared: Weak<Shared>,
}

impl Wake for TaskWaker {
    fn wake(self: Arc<Self>) {
        self.wake_by_ref();
    }

    fn wake_by_ref(self: &Arc<Self>) {
        if !self.queued.swap(true, Ordering::AcqRel) {
            if let Some(shared) = self.shared.upgrade() {
                shared.ready.lock().unwrap().push_back(self.id);
            }
        }
    }
}

#[derive(Default)]
struct TimerSlot {
    fired: AtomicBool,
    cancelled: AtomicBool,
    waker: Mutex<Option<Waker>>,
}

#[derive(Default)]
struct State {
    now_ns: u64,
    seq: u64,
    timers: BinaryHeap<Reverse<(u64, usize, u64)>>,
    slots: HashMap<u64, Arc<TimerSlot>>,
    tasks: Vec<TaskSlot>,
}

#[derive(Default)]
struct Shared {
    state: Mutex<State>,
    ready: Mutex<VecDeque<usize>>,
}

/// Handle to a virtual-time executor; cheap to clone.
#[derive(Clone)]
pub struct SimHandle {
    shared: Arc<Shared>,
}

/// Returned when the event queue drains while tasks are still blocked.
#[derive(Debug, Clone, PartialEq)]
pub struct Stalled {
    pub at_ns: u64,
    pub blocked: Vec<String>,
}

impl Default for SimHandle {
    fn default() -> Self {
        Self::new()
    }
}

impl SimHandle {
    pub fn new() -> Self {
        Self {
            shared: Arc::new(Shared::default()),
        }
    }

    pub fn now_ns(&self) -> u64 {
        self.shared.state.lock().unwrap().now_ns
    }

    pub fn spawn<F>(&self, label: impl Into<String>, fut: F)
    where
        F: Future<Output = ()> + Send + 'static,
    {
        let mut st = self.shared.state.lock().unwrap();
        let id = st.tasks.len();
        let waker = Arc::new(TaskWaker {
            id,
            queued: AtomicBool::new(true),
            shared: Arc::downgrade(&self.shared),
        });
        st.tasks.push(TaskSlot {
            fut: Some(Box::pin(fut)),
            label: label.into(),
            waker,
            done: false,
        });
        drop(st);
        self.shared.ready.lock().unwrap().push_back(id);
    }

    pub fn sleep_ns(&self, duration_ns: u64) -> SimSleep {
        let deadline = self.now_ns().saturating_add(duration_ns);
        self.sleep_until_ns(deadline)
    }

    pub fn sleep_until_ns(&self, deadline_ns: u64) -> SimSleep {
        SimSleep {
            shared: self.shared.clone(),
            deadline: deadline_ns,
            slot: None,
        }
    }

    fn poll_task(&self, id: usize) {
        let (mut fut, waker) = {
            let mut st = self.shared.state.lock().unwrap();
            let slot = &mut st.tasks[id];
            if slot.done {
                return;
            }
            let Some(fut) = slot.fut.take() else { return };
            slot.waker.queued.store(false, Ordering::Release);
            (fut, slot.waker.clone())
        };
        let waker = Waker::from(waker);
        let mut cx = Context::from_waker(&waker);
        let prev = CURRENT.with(|c| c.replace(id));
        let res = fut.as_mut().poll(&mut cx);
        CURRENT.with(|c| c.set(prev));
        let mut st = self.shared.state.lock().unwrap();
        match res {
            Poll::Ready(()) => st.tasks[id].done = true,
            Poll::Pending => st.tasks[id].fut = Some(fut),
        }
    }

    /// Fires the next live timer. Returns false when none remain.
    fn advance(&self) -> bool {
        loop {
            let slot = {
                let mut st = self.shared.state.lock().unwrap();
                let Some(Reverse((t, _actor, seq))) = st.timers.pop() else {
                    return false;
                };
                let slot = st.slots.remove(&seq).expect("timer slot");
                if slot.cancelled.load(Ordering::Acquire) {
                    continue;
                }
                st.now_ns = st.now_ns.max(t);
                slot
            };
            slot.fired.store(true, Ordering::Release);
            if let Some(w) = slot.waker.lock().unwrap().take() {
                w.wake();
            }
            return true;
        }
    }

    /// Runs `fut` to completion on virtual time.
    pub fn block_on<T, F>(&self, fut: F) -> Result<T, Stalled>
    where
        F: Future<Output = T> + Send + 'static,
        T: Send + 'static,
    {
        let out: Arc<Mutex<Option<T>>> = Arc::new(Mutex::new(None));
        let sink = out.clone();
        self.spawn("main", async move {
            let v = fut.await;
            *sink.lock().unwrap() = Some(v);
        });
        let result = loop {
            loop {
                let next = self.shared.ready.lock().unwrap().pop_front();
                match next {
                    Some(id) => self.poll_task(id),
                    None => break,
                }
            }
            if let Some(v) = out.lock().unwrap().take() {
                break Ok(v);
            }
            if !self.advance() {
                let st = self.shared.state.lock().unwrap();
                let blocked = st
                    .tasks
                    .iter()
                    .filter(|t| !t.done)
                    .map(|t| t.label.clone())
                    .collect();
                break Err(Stalled {
                    at_ns: st.now_ns,
                    blocked,
                });
            }
        };
        // Drop leftover futures outside the lock; their destructors may touch timers.
        let leftovers: Vec<TaskSlot> = std::mem::take(&mut self.shared.state.lock().unwrap().tasks);
        drop(leftovers);
        result
    }
}

pub struct SimSleep {
    shared: Arc<Shared>,
    deadline: u64,
    slot: Option<Arc<TimerSlot>>,
}

impl Future for SimSleep {
    type Output = ();

    fn poll(mut self: Pin<&mut Self>, cx: &mut Context<'_>) -> Poll<()> {
        if let Some(slot) = &self.slot {
            if slot.fired.load(Ordering::Acquire) {
                return Poll::Ready(());
            }
            *slot.waker.lock().unwrap() = Some(cx.waker().clone());
            return Poll::Pending;
        }
        let mut st = self.shared.state.lock().unwrap();
        if st.now_ns >= self.deadline {
            return Poll::Ready(());
        }
        let seq = st.seq;
        st.seq += 1;
        let actor = CURRENT.with(|c| c.get());
        let slot = Arc::new(TimerSlot::default());
        *slot.waker.lock().unwrap() = Some(cx.waker().clone());
        st.timers.push(Reverse((self.deadline, actor, seq)));
        st.slots.insert(seq, slot.clone());
        drop(st);
        self.slot = Some(slot);
        Poll::Pending
    }
}

impl Drop for SimSleep {
    fn drop(&mut self) {
        if let Some(slot) = &self.slot {
            if !slot.fired.load(Ordering::Acquire) {
                slot.cancelled.store(true, Ordering::Release);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wakes_in_time_order() {
        let sim = SimHandle::new();
        let log = Arc::new(Mutex::new(Vec::new()));
        let (s, l) = (sim.clone(), log.clone());
        let out = sim
            .block_on(async move {
                let (done_tx, mut done_rx) = tokio::sync::mpsc::unbounded_channel();
                for ms in [50u64, 30] {
                    let (s2, l2, tx) = (s.clone(), l.clone(), done_tx.clone());
                    s.spawn(format!("sleeper-{ms}"), async move {
                        s2.sleep_ns(ms * 1_000_000).await;
                        l2.lock().unwrap().push((ms, s2.now_ns()));
                        tx.send(()).unwrap();
                    });
                }
                done_rx.recv().await;
                done_rx.recv().await;
                s.now_ns()
            })
            .unwrap();
        assert_eq!(out, 50_000_000);
        assert_eq!(*log.lock().unwrap(), vec![(30, 30_000_000), (50, 50_000_000)]);
    }

    #[test]
    fn blocked_tasks_are_reported() {
        let sim = SimHandle::new();
        let err = sim
            .block_on(async move {
                let (_tx, rx) = tokio::sync::oneshot::channel::<()>();
                let _ = rx.await;
            })
            .unwrap_err();
        assert_eq!(err.blocked, vec!["main".to_string()]);
    }

    #[test]
    fn cancelled_timer_does_not_advance_time() {
        let sim = SimHandle::new();
        let s = sim.clone();
        let err = sim
            .block_on(async move {
                let (_tx, rx) = tokio::sync::oneshot::channel::<()>();
                let (_tx2, rx2) = tokio::sync::oneshot::channel::<()>();
                tokio::select! {
                    _ = s.sleep_ns(5) => {}
                    _ = rx => {}
                }
                // the abandoned sleep below leaves a timer at t=1005 that must never fire
                let (tx3, rx3) = tokio::sync::oneshot::channel::<()>();
                s.spawn("sender", async move {
                    let _ = tx3.send(());
                });
                tokio::select! {
                    biased;
                    _ = s.sleep_ns(1000) => {}
                    _ = rx3 => {}
                }
                let _ = rx2.await;
            })
            .unwrap_err();
        assert_eq!(err.at_ns, 5);
    }
}
