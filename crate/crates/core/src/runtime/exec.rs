//! Single-threaded deterministic executor.
//!
//! Tasks are polled in wake order. When no task is runnable the next fabric
//! event is dispatched, which may wake tasks again. Virtual time therefore
//! only moves when every task is blocked.

use super::world::World;
use crate::time::SimTime;
use futures::future::LocalBoxFuture;
use futures::task::{waker, ArcWake};
use futures::FutureExt;
use std::cell::RefCell;
use std::collections::VecDeque;
use std::future::Future;
use std::pin::Pin;
use std::rc::Rc;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::task::{Context, Poll, Waker};
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("simulation stalled at {0}: no runnable task and no pending event")]
    Deadlock(SimTime),
    #[error("simulation passed its time limit {0}")]
    TimeLimit(SimTime),
}

type ReadyQueue = Arc<Mutex<VecDeque<usize>>>;

struct TaskWaker {
    id: usize,
    queued: AtomicBool,
    ready: ReadyQueue,
}

impl ArcWake for TaskWaker {
    fn wake_by_ref(arc_self: &Arc<Self>) {
        if !arc_self.queued.swap(true, Ordering::AcqRel) {
            arc_self.ready.lock().unwrap().push_back(arc_self.id);
        }
    }
}

struct Task {
    future: Option<LocalBoxFuture<'static, ()>>,
    waker: Arc<TaskWaker>,
}

#[derive(Default)]
struct Executor {
    tasks: RefCell<Vec<Option<Task>>>,
    free: RefCell<Vec<usize>>,
    ready: ReadyQueue,
}

impl Executor {
    fn spawn_boxed(&self, future: LocalBoxFuture<'static, ()>) {
        let id = self.free.borrow_mut().pop().unwrap_or_else(|| {
            let mut t = self.tasks.borrow_mut();
            t.push(None);
            t.len() - 1
        });
        let w = Arc::new(TaskWaker {
            id,
            queued: AtomicBool::new(true),
            ready: self.ready.clone(),
        });
        self.tasks.borrow_mut()[id] = Some(Task {
            future: Some(future),
            waker: w,
        });
        self.ready.lock().unwrap().push_back(id);
    }

    /// Polls runnable tasks until none is left.
    fn run_ready(&self) {
        loop {
            let Some(id) = self.ready.lock().unwrap().pop_front() else {
                break;
            };
            let (mut fut, w) = {
                let mut tasks = self.tasks.borrow_mut();
                let Some(task) = tasks.get_mut(id).and_then(|t| t.as_mut()) else {
                    continue;
                };
                task.waker.queued.store(false, Ordering::Release);
                let Some(f) = task.future.take() else { continue };
                (f, task.waker.clone())
            };
            let wk = waker(w);
            let mut cx = Context::from_waker(&wk);
            match fut.as_mut().poll(&mut cx) {
                Poll::Ready(()) => {
                    self.tasks.borrow_mut()[id] = None;
                    self.free.borrow_mut().push(id);
                }
                Poll::Pending => {
                    if let Some(t) = self.tasks.borrow_mut()[id].as_mut() {
                        t.future = Some(fut);
                    }
                }
            }
        }
    }
}

struct JoinSlot<T> {
    value: Option<T>,
    waker: Option<Waker>,
}

/// Resolves to the spawned task's output.
pub struct JoinHandle<T> {
    slot: Rc<RefCell<JoinSlot<T>>>,
}

impl<T> JoinHandle<T> {
    pub fn try_take(&self) -> Option<T> {
        self.slot.borrow_mut().value.take()
    }
}

impl<T> Future for JoinHandle<T> {
    type Output = T;

    fn poll(self: Pin<&mut Self>, cx: &mut Context<'_>) -> Poll<T> {
        let mut s = self.slot.borrow_mut();
        match s.value.take() {
            Some(v) => Poll::Ready(v),
            None => {
                s.waker = Some(cx.waker().clone());
                Poll::Pending
            }
        }
    }
}

/// Owns the world and the tasks acting in it.
pub struct Sim {
    handle: SimHandle,
    time_limit: Option<SimTime>,
}

/// Cheap clonable access to the world and the executor, for tasks.
#[derive(Clone)]
pub struct SimHandle {
    world: Rc<RefCell<World>>,
    exec: Rc<Executor>,
}

impl Sim {
    pub fn new(world: World) -> Self {
        Sim {
            handle: SimHandle {
                world: Rc::new(RefCell::new(world)),
                exec: Rc::new(Executor::default()),
            },
            time_limit: None,
        }
    }

    pub fn set_time_limit(&mut self, limit: Option<SimTime>) {
        self.time_limit = limit;
    }

    pub fn handle(&self) -> SimHandle {
        self.handle.clone()
    }

    pub fn world(&self) -> std::cell::Ref<'_, World> {
        self.handle.world.borrow()
    }

    pub fn world_mut(&self) -> std::cell::RefMut<'_, World> {
        self.handle.world.borrow_mut()
    }

    /// Runs `main` (and everything it spawns) until `main` completes.
    pub fn run<T: 'static>(&mut self, main: impl Future<Output = T> + 'static) -> Result<T, SimError> {
        let jh = self.handle.spawn(main);
        let exec = self.handle.exec.clone();
        loop {
            exec.run_ready();
            if let Some(v) = jh.try_take() {
                return Ok(v);
            }
            let mut w = self.handle.world.borrow_mut();
            if let (Some(limit), Some(next)) = (self.time_limit, w.net.fabric.peek_time()) {
                if next > limit {
                    return Err(SimError::TimeLimit(limit));
                }
            }
            if !w.step() {
                return Err(SimError::Deadlock(w.now()));
            }
        }
    }
}

impl Drop for Sim {
    fn drop(&mut self) {
        // Tasks hold handles back to the executor; drop them outside the borrow.
        let tasks = std::mem::take(&mut *self.handle.exec.tasks.borrow_mut());
        drop(tasks);
    }
}

impl SimHandle {
    pub fn spawn<T: 'static>(&self, fut: impl Future<Output = T> + 'static) -> JoinHandle<T> {
        let slot = Rc::new(RefCell::new(JoinSlot {
            value: None,
            waker: None,
        }));
        let s2 = slot.clone();
        self.exec.spawn_boxed(
            async move {
                let v = fut.await;
                let w = {
                    let mut s = s2.borrow_mut();
                    s.value = Some(v);
                    s.waker.take()
                };
                if let Some(w) = w {
                    w.wake();
                }
            }
            .boxed_local(),
        );
        JoinHandle { slot }
    }

    pub fn now(&self) -> SimTime {
        self.world.borrow().now()
    }

    /// Runs `f` against the world, then delivers anything it made ready.
    pub fn with<R>(&self, f: impl FnOnce(&mut World) -> R) -> R {
        let mut w = self.world.borrow_mut();
        let r = f(&mut w);
        w.drain();
        r
    }

    pub fn sleep(&self, d: Duration) -> Sleep {
        let until = self.now() + d;
        self.sleep_until(until)
    }

    pub fn sleep_until(&self, until: SimTime) -> Sleep {
        Sleep {
            world: self.world.clone(),
            until,
            slot: None,
        }
    }

    /// Resolves to `Some(output)` or `None` if `d` passes first.
    pub async fn timeout<T>(&self, d: Duration, fut: impl Future<Output = T>) -> Option<T> {
        let sleep = self.sleep(d);
        futures::pin_mut!(fut);
        match futures::future::select(fut, sleep).await {
            futures::future::Either::Left((v, _)) => Some(v),
            futures::future::Either::Right(_) => None,
        }
    }
}

pub struct Sleep {
    world: Rc<RefCell<World>>,
    until: SimTime,
    slot: Option<WakeSlot>,
}

/// Shared cell a timer wakes through; tasks refresh the waker on each poll.
pub type WakeSlot = Rc<RefCell<Option<Waker>>>;

impl Future for Sleep {
    type Output = ();

    fn poll(mut self: Pin<&mut Self>, cx: &mut Context<'_>) -> Poll<()> {
        let mut w = self.world.borrow_mut();
        if w.now() >= self.until {
            return Poll::Ready(());
        }
        match &self.slot {
            Some(slot) => *slot.borrow_mut() = Some(cx.waker().clone()),
            None => {
                let slot: WakeSlot = Rc::new(RefCell::new(Some(cx.waker().clone())));
                w.net.wake_at(self.until, slot.clone());
                drop(w);
                self.slot = Some(slot);
            }
        }
        Poll::Pending
    }
}
