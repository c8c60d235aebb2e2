//! Background training thread.
//!
//! The control loop hands over frozen copies of the dataset; the worker fits
//! a model and publishes it into the shared [`ModelSlot`]. Jobs are processed
//! in submission order, and [`Trainer::wait_for`] lets a caller block until a
//! given job has been published, which makes runs reproducible.

use std::sync::mpsc::{self, Sender};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle};

use super::belief::{ErrorModel, ModelSlot};
use super::dataset::Sample;
use super::{fit_model, LearnerConfig};
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainerProgress {
    /// Jobs finished, successfully or not.
    pub completed: usize,
    pub published: usize,
    pub errors: Vec<String>,
}

struct Job<T: Real> {
    samples: Vec<Sample<T>>,
}

type Shared = Arc<(Mutex<TrainerProgress>, Condvar)>;

pub struct Trainer<T: Real> {
    tx: Option<Sender<Job<T>>>,
    handle: Option<JoinHandle<()>>,
    progress: Shared,
    submitted: usize,
}

impl<T: Real> Trainer<T> {
    pub fn spawn(config: LearnerConfig, slot: Arc<ModelSlot<T>>) -> Result<Self> {
        let (tx, rx) = mpsc::channel::<Job<T>>();
        let progress: Shared = Arc::new((Mutex::new(TrainerProgress::default()), Condvar::new()));
        let worker_progress = Arc::clone(&progress);
        let handle = thread::Builder::new()
            .name("balsa-trainer".into())
            .spawn(move || {
                for job in rx {
                    let outcome = fit_model(&config, &job.samples);
                    let published = match outcome {
                        Ok(ErrorModel::Prior) => Ok(false),
                        Ok(model) => {
                            slot.publish(model);
                            Ok(true)
                        }
                        Err(e) => Err(e),
                    };
                    let (lock, cv) = &*worker_progress;
                    let mut p = lock.lock().unwrap_or_else(|e| e.into_inner());
                    p.completed += 1;
                    match published {
                        Ok(true) => p.published += 1,
                        Ok(false) => {}
                        Err(e) => p.errors.push(e.to_string()),
                    }
                    cv.notify_all();
                }
            })
            .map_err(|e| Error::Trainer(format!("failed to spawn trainer thread: {e}")))?;
        Ok(Self {
            tx: Some(tx),
            handle: Some(handle),
            progress,
            submitted: 0,
        })
    }

    /// Queues a training job and returns its 1-based id.
    pub fn submit(&mut self, samples: Vec<Sample<T>>) -> Result<usize> {
        let tx = self
            .tx
            .as_ref()
            .ok_or_else(|| Error::Trainer("trainer is shut down".into()))?;
        tx.send(Job { samples })
            .map_err(|_| Error::Trainer("trainer thread exited".into()))?;
        self.submitted += 1;
        Ok(self.submitted)
    }

    pub fn submitted(&self) -> usize {
        self.submitted
    }

    /// Blocks until job `id` has finished.
    pub fn wait_for(&self, id: usize) -> Result<()> {
        if id > self.submitted {
            return Err(Error::Trainer(format!("job {id} was never submitted")));
        }
        let (lock, cv) = &*self.progress;
        let mut p = lock.lock().unwrap_or_else(|e| e.into_inner());
        while p.completed < id {
            if self.handle.as_ref().is_none_or(|h| h.is_finished()) && p.completed < id {
                return Err(Error::Trainer("trainer thread exited".into()));
            }
            p = cv
                .wait_timeout(p, std::time::Duration::from_millis(50))
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
        Ok(())
    }

    pub fn progress(&self) -> TrainerProgress {
        self.progress
            .0
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .clone()
    }

    /// Drains queued jobs and joins the worker.
    pub fn shutdown(mut self) -> Result<TrainerProgress> {
        self.join()?;
        Ok(self.progress())
    }

    fn join(&mut self) -> Result<()> {
        drop(self.tx.take());
        if let Some(h) = self.handle.take() {
            h.join()
                .map_err(|_| Error::Trainer("trainer thread panicked".into()))?;
        }
        Ok(())
    }
}

impl<T: Real> Drop for Trainer<T> {
    fn drop(&mut self) {
        let _ = self.join();
    }
}
