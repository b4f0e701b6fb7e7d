use super::generator::{GenerateError, Generator};
use super::learner::{IngestOutcome, Learner};

/// In-process equivalent of a manager with `generators.len()` workers: each
/// generator in turn plays `samples_per_upload` frames with the current
/// model and hands them to the learner, until the training budget or
/// `max_uploads` is reached.
pub fn run_local(
    learner: &mut Learner,
    generators: &mut [Generator],
    samples_per_upload: usize,
    max_uploads: Option<u64>,
    mut on_upload: impl FnMut(&Learner, &IngestOutcome),
) -> Result<(), LocalError> {
    assert!(!generators.is_empty(), "need at least one generator");
    'run: loop {
        for g in generators.iter_mut() {
            if learner.done() || max_uploads.is_some_and(|m| learner.uploads >= m) {
                break 'run;
            }
            let batch = g.generate(&learner.train.online, learner.step(), samples_per_upload)?;
            let outcome = learner.ingest(batch)?;
            on_upload(learner, &outcome);
        }
    }
    learner.finish()?;
    Ok(())
}

#[derive(Debug, thiserror::Error)]
pub enum LocalError {
    #[error(transparent)]
    Generate(#[from] GenerateError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
